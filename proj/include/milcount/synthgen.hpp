#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "annotations.hpp"
#include "bags.hpp"
#include "common.hpp"
#include "image.hpp"
#include "io.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace milcount {

// Oracle-labelled synthetic slides: round cells of moderate intensity, each
// holding a known number of bright, non-touching droplet disks.
struct SynthConfig {
  int n_slides = 80;
  int width = 1024;
  int height = 1024;
  int cells_min = 20;
  int cells_max = 60;
  int droplets_min = 0;
  int droplets_max = 16;
  int droplet_radius = 5;  // 81-pixel disks, one featurizer reference area
  int cell_radius = 44;
  int background = 20;
  int cell_intensity = 80;
  int cell_noise = 8;
  int droplet_intensity = 250;
  int threshold = 200;  // featurizer threshold the intensities must straddle
  std::uint64_t seed = 7;
  bool grid_safe = false;  // keep every cell inside a single patch tile
  int patch = kDefaultPatch;
  int max_retries = 20000;

  void validate() const {
    if (n_slides < 0) throw ValidationError("n_slides must be >= 0");
    if (width < 1 || height < 1) throw ValidationError("image size must be positive");
    if (cells_min < 0 || cells_max < cells_min) throw ValidationError("need 0 <= cells_min <= cells_max");
    if (droplets_min < 0 || droplets_max < droplets_min) throw ValidationError("need 0 <= droplets_min <= droplets_max");
    if (droplet_radius < 1 || cell_radius < droplet_radius + 3)
      throw ValidationError("radii must be positive and cells must be wider than droplets");
    if (!(droplet_intensity > threshold && threshold > cell_intensity + cell_noise && cell_intensity - cell_noise >= 0 &&
          background < threshold && droplet_intensity <= 255))
      throw ValidationError("intensities must satisfy droplet > threshold > cell (+noise) and background < threshold");
    if (grid_safe && patch < 2 * cell_radius + 4)
      throw ValidationError("grid-safe placement needs patch >= 2*cell_radius + 4");
    if (2 * cell_radius + 4 > std::min(width, height)) throw ValidationError("cells do not fit in the image");
  }
};

struct SynthSlide {
  SlideRecord record;
  RasterImage image;
};

namespace detail {

struct Disk {
  double x, y;
};

inline bool far_enough(const std::vector<Disk>& placed, double x, double y, double min_dist) {
  for (const auto& d : placed)
    if ((d.x - x) * (d.x - x) + (d.y - y) * (d.y - y) < min_dist * min_dist) return false;
  return true;
}

inline void paint_disk(RasterImage& img, int cx, int cy, int r, auto&& value) {
  for (int y = cy - r; y <= cy + r; ++y)
    for (int x = cx - r; x <= cx + r; ++x) {
      if (x < 0 || y < 0 || x >= img.width || y >= img.height) continue;
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) img.at(x, y) = value();
    }
}

inline std::string synth_id(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "synth_%04d", i);
  return buf;
}

}  // namespace detail

// One slide from its own derived stream, so slides can be generated in any
// order or in parallel.
inline SynthSlide generate_slide(const SynthConfig& cfg, int index) {
  Rng rng(cfg.seed, "synthgen", {static_cast<std::uint64_t>(index)});
  const int R = cfg.cell_radius, r = cfg.droplet_radius;
  const int n_cells = static_cast<int>(rng.between(cfg.cells_min, cfg.cells_max));

  std::vector<detail::Disk> cells;
  for (int c = 0; c < n_cells; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
      double x, y;
      if (cfg.grid_safe) {
        const int cols = cfg.width / cfg.patch, rows = cfg.height / cfg.patch;
        if (cols < 1 || rows < 1) throw ValidationError("grid-safe placement needs at least one full patch");
        const int tile = static_cast<int>(rng.below(static_cast<std::uint64_t>(cols * rows)));
        const int x0 = (tile % cols) * cfg.patch, y0 = (tile / cols) * cfg.patch;
        x = static_cast<double>(rng.between(x0 + R + 1, x0 + cfg.patch - R - 2));
        y = static_cast<double>(rng.between(y0 + R + 1, y0 + cfg.patch - R - 2));
      } else {
        x = static_cast<double>(rng.between(R + 1, cfg.width - R - 2));
        y = static_cast<double>(rng.between(R + 1, cfg.height - R - 2));
      }
      if (detail::far_enough(cells, x, y, 2.0 * R + 2.0)) {
        cells.push_back({x, y});
        placed = true;
      }
    }
    if (!placed)
      throw ValidationError("could not place cell " + std::to_string(c) + " of slide " + std::to_string(index) +
                            " after " + std::to_string(cfg.max_retries) + " tries; lower the cell count or radius");
  }

  RasterImage img(cfg.width, cfg.height, 1, static_cast<std::uint8_t>(cfg.background));
  std::vector<CellAnnotation> annotations;
  const double inner = static_cast<double>(R - r - 2);
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const int cx = static_cast<int>(cells[c].x), cy = static_cast<int>(cells[c].y);
    detail::paint_disk(img, cx, cy, R, [&] {
      return static_cast<std::uint8_t>(cfg.cell_intensity + rng.between(-cfg.cell_noise, cfg.cell_noise));
    });
    const int n_drops = static_cast<int>(rng.between(cfg.droplets_min, cfg.droplets_max));
    std::vector<detail::Disk> drops;
    for (int d = 0; d < n_drops; ++d) {
      bool placed = false;
      for (int attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
        const double dx = static_cast<double>(rng.between(-static_cast<long long>(inner), static_cast<long long>(inner)));
        const double dy = static_cast<double>(rng.between(-static_cast<long long>(inner), static_cast<long long>(inner)));
        if (dx * dx + dy * dy > inner * inner) continue;
        if (detail::far_enough(drops, cx + dx, cy + dy, 2.0 * r + 3.0)) {
          drops.push_back({cx + dx, cy + dy});
          placed = true;
        }
      }
      if (!placed)
        throw ValidationError("could not place droplet " + std::to_string(d) + " in cell " + std::to_string(c) +
                              " of slide " + std::to_string(index) + "; lower droplets_max or raise cell_radius");
    }
    for (const auto& d : drops)
      detail::paint_disk(img, static_cast<int>(d.x), static_cast<int>(d.y), r,
                         [&] { return static_cast<std::uint8_t>(cfg.droplet_intensity); });

    std::vector<Point> poly;
    for (int v = 0; v < 16; ++v) {
      const double t = 2.0 * M_PI * v / 16.0;
      poly.push_back({std::round(cx + R * std::cos(t)), std::round(cy + R * std::sin(t))});
    }
    annotations.emplace_back(std::move(poly), n_drops);
  }

  const std::string id = detail::synth_id(index);
  return {SlideRecord(id, id + ".pgm", std::move(annotations)), std::move(img)};
}

inline std::vector<SynthSlide> generate(const SynthConfig& cfg, std::size_t threads = 1) {
  cfg.validate();
  std::vector<SynthSlide> slides(static_cast<std::size_t>(cfg.n_slides));
  parallel_for(slides.size(), threads, [&](std::size_t i) { slides[i] = generate_slide(cfg, static_cast<int>(i)); });
  return slides;
}

inline std::string oracle_csv(const std::vector<SynthSlide>& slides) {
  std::string out = "slide_id,class_id,cell_count\n";
  for (const auto& s : slides) {
    std::array<long long, kNumClasses> hist{};
    for (const auto& c : s.record.cells) ++hist[static_cast<std::size_t>(count_to_class(c.droplet_count) - 1)];
    for (std::size_t k = 0; k < kNumClasses; ++k)
      out += s.record.slide_id + "," + std::to_string(k + 1) + "," + std::to_string(hist[k]) + "\n";
  }
  return out;
}

// Writes <out>/<slide_id>.pgm, <out>/annotations.json and <out>/oracle.csv.
inline std::vector<std::filesystem::path> write_synthetic(const std::vector<SynthSlide>& slides,
                                                          const std::filesystem::path& out, std::size_t threads = 1) {
  std::filesystem::create_directories(out);
  parallel_for(slides.size(), threads,
               [&](std::size_t i) { write_image(out / slides[i].record.image_path, slides[i].image); });
  Dataset records;
  std::vector<std::filesystem::path> written;
  for (const auto& s : slides) {
    records.push_back(s.record);
    written.push_back(out / s.record.image_path);
  }
  save_dataset(out / "annotations.json", records);
  io::write_text(out / "oracle.csv", oracle_csv(slides));
  written.push_back(out / "annotations.json");
  written.push_back(out / "oracle.csv");
  return written;
}

}  // namespace milcount
