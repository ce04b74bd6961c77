#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "annotations.hpp"
#include "common.hpp"
#include "image.hpp"
#include "io.hpp"

namespace milcount {

inline constexpr int kDefaultPatch = 512;
inline constexpr int kBlobFeatures = 6;

// ---------------------------------------------------------------------------
// Tiling

struct PatchGrid {
  int cols = 0;
  int rows = 0;
  int count() const { return cols * rows; }
};

inline PatchGrid patch_grid(int width, int height, int patch = kDefaultPatch) {
  if (width < 1 || height < 1 || patch < 1) throw ValidationError("patch grid needs positive sizes");
  return {(width + patch - 1) / patch, (height + patch - 1) / patch};
}

// Pads by edge replication to a multiple of `patch` and cuts row-major tiles.
inline std::vector<RasterImage> tile_patches(const RasterImage& img, int patch = kDefaultPatch) {
  if (img.empty()) throw ValidationError("cannot tile an empty image");
  const PatchGrid grid = patch_grid(img.width, img.height, patch);
  std::vector<RasterImage> out;
  out.reserve(static_cast<std::size_t>(grid.count()));
  for (int r = 0; r < grid.rows; ++r)
    for (int c = 0; c < grid.cols; ++c) {
      RasterImage tile(patch, patch, img.channels);
      for (int y = 0; y < patch; ++y) {
        const int sy = std::min(r * patch + y, img.height - 1);
        for (int x = 0; x < patch; ++x) {
          const int sx = std::min(c * patch + x, img.width - 1);
          for (int ch = 0; ch < img.channels; ++ch) tile.at(x, y, ch) = img.at(sx, sy, ch);
        }
      }
      out.push_back(std::move(tile));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Blob featurizer: a deterministic stand-in for a frozen feature backbone.

struct BlobParams {
  int threshold = 200;
  double ref_area = 80.0;
};

// Areas of the 8-connected components of `mask` (non-zero = foreground).
// Components are reported in raster order of their first pixel.
inline std::vector<long long> component_areas(const std::vector<std::uint8_t>& mask, int width, int height,
                                              std::vector<int>* labels_out = nullptr) {
  std::vector<int> labels(mask.size(), -1);
  std::vector<long long> areas;
  std::vector<int> stack;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x);
      if (!mask[i] || labels[i] >= 0) continue;
      const int id = static_cast<int>(areas.size());
      long long area = 0;
      labels[i] = id;
      stack.push_back(static_cast<int>(i));
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        ++area;
        const int px = p % width, py = p / width;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = px + dx, ny = py + dy;
            if (nx < 0 || ny < 0 || nx >= width || ny >= height) continue;
            const std::size_t j = static_cast<std::size_t>(ny) * static_cast<std::size_t>(width) + static_cast<std::size_t>(nx);
            if (mask[j] && labels[j] < 0) {
              labels[j] = id;
              stack.push_back(static_cast<int>(j));
            }
          }
      }
      areas.push_back(area);
    }
  if (labels_out) *labels_out = std::move(labels);
  return areas;
}

using BlobFeatures = std::array<double, kBlobFeatures>;

// Feature layout:
//   [0] estimated droplet count (sum over kept components of max(1, round(area/ref_area)))
//   [1] kept component count
//   [2] kept foreground area / patch area
//   [3] mean kept-foreground intensity / 255
//   [4] max intensity / 255
//   [5] mean intensity / 255
// Components smaller than a quarter of ref_area are discarded as noise.
inline BlobFeatures blob_featurize(const RasterImage& patch, const BlobParams& params = {}) {
  if (!(params.ref_area >= 1.0)) throw ValidationError("ref_area must be >= 1");
  const RasterImage gray = to_gray(patch);
  const std::size_t n = gray.pixels.size();
  std::vector<std::uint8_t> mask(n);
  int max_v = 0;
  double sum_all = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int v = gray.pixels[i];
    mask[i] = v >= params.threshold ? 1 : 0;
    max_v = std::max(max_v, v);
    sum_all += v;
  }
  std::vector<int> labels;
  const auto areas = component_areas(mask, gray.width, gray.height, &labels);
  const double min_area = 0.25 * params.ref_area;

  double count = 0.0, kept = 0.0, kept_area = 0.0, kept_sum = 0.0;
  std::vector<char> keep(areas.size());
  for (std::size_t c = 0; c < areas.size(); ++c) {
    const double a = static_cast<double>(areas[c]);
    if (a < min_area) continue;
    keep[c] = 1;
    kept += 1.0;
    kept_area += a;
    count += std::max(1.0, std::round(a / params.ref_area));
  }
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] >= 0 && keep[static_cast<std::size_t>(labels[i])]) kept_sum += gray.pixels[i];

  const double npx = static_cast<double>(n);
  return {count,
          kept,
          kept_area / npx,
          kept_area > 0.0 ? kept_sum / kept_area / 255.0 : 0.0,
          max_v / 255.0,
          sum_all / npx / 255.0};
}

// ---------------------------------------------------------------------------
// Bags

struct Bag {
  std::string slide_id;
  Eigen::MatrixXd features;  // one row per patch instance
  CountVector label;

  Eigen::Index instances() const { return features.rows(); }
  Eigen::Index dims() const { return features.cols(); }
};

// Embedding file: "MILF", u32 version=1, u32 N, u32 F, N*F float32 row-major,
// all little-endian.
inline std::string encode_embedding(const Eigen::MatrixXd& rows) {
  io::ByteWriter w;
  w.raw("MILF");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(rows.rows()));
  w.u32(static_cast<std::uint32_t>(rows.cols()));
  for (Eigen::Index i = 0; i < rows.rows(); ++i)
    for (Eigen::Index j = 0; j < rows.cols(); ++j) w.f32(static_cast<float>(rows(i, j)));
  return w.bytes();
}

inline Eigen::MatrixXd decode_embedding(std::string_view data, const std::string& name) {
  io::ByteReader r(data, name);
  if (r.raw(4) != "MILF") throw ParseError("'" + name + "': bad magic, expected MILF");
  const std::uint32_t version = r.u32();
  if (version != 1) throw ParseError("'" + name + "': unsupported MILF version " + std::to_string(version));
  const std::uint32_t n = r.u32(), f = r.u32();
  if (r.remaining() != static_cast<std::size_t>(n) * f * 4)
    throw ParseError("'" + name + "': payload size does not match N=" + std::to_string(n) +
                     " F=" + std::to_string(f));
  Eigen::MatrixXd m(n, f);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < f; ++j) {
      const double v = r.f32();
      if (!std::isfinite(v)) throw ParseError("'" + name + "': non-finite embedding value");
      m(i, j) = v;
    }
  return m;
}

inline Eigen::MatrixXd read_embedding(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("missing embedding file '" + path.string() + "'");
  return decode_embedding(io::read_text(path), path.string());
}

inline void write_embedding(const std::filesystem::path& path, const Eigen::MatrixXd& rows) {
  io::write_bytes(path, encode_embedding(rows));
}

enum class FeatureMode { blob, embedding };

struct FeatureSource {
  FeatureMode mode = FeatureMode::blob;
  std::filesystem::path image_root;
  std::filesystem::path embedding_dir;  // embedding mode: <dir>/<slide_id>.milf
  BlobParams blob;
  int patch = kDefaultPatch;
};

inline Bag assemble_bag(const SlideRecord& slide, const FeatureSource& source) {
  Bag bag{slide.slide_id, {}, slide.label};
  const RasterImage img = read_image(source.image_root / slide.image_path);
  if (source.mode == FeatureMode::embedding) {
    const auto path = source.embedding_dir / (slide.slide_id + ".milf");
    bag.features = read_embedding(path);
    const int expected = patch_grid(img.width, img.height, source.patch).count();
    if (bag.features.rows() != expected)
      throw ShapeError("'" + path.string() + "' has " + std::to_string(bag.features.rows()) +
                       " rows but the image tiles into " + std::to_string(expected) + " patches");
    if (bag.features.rows() < 1) throw ShapeError("'" + path.string() + "' holds an empty bag");
    return bag;
  }
  const auto patches = tile_patches(img, source.patch);
  bag.features.resize(static_cast<Eigen::Index>(patches.size()), kBlobFeatures);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto f = blob_featurize(patches[i], source.blob);
    for (int j = 0; j < kBlobFeatures; ++j) bag.features(static_cast<Eigen::Index>(i), j) = f[static_cast<std::size_t>(j)];
  }
  return bag;
}

// ---------------------------------------------------------------------------
// Baseline inputs

struct BaselineFeatures {
  std::string slide_id;
  Eigen::VectorXd vector;
};

// 14-bin histogram of per-patch count classes, then log1p.
inline Eigen::VectorXd baseline_aggregate(std::span<const double> patch_counts) {
  Eigen::VectorXd h = Eigen::VectorXd::Zero(kNumClasses);
  for (double c : patch_counts) {
    if (!(c >= 0.0)) throw ValidationError("patch counts must be non-negative");
    h[count_to_class(std::llround(c)) - 1] += 1.0;
  }
  for (Eigen::Index k = 0; k < h.size(); ++k) h[k] = std::log1p(h[k]);
  return h;
}

// Concatenated column mean and column max over instance rows (2F values).
inline Eigen::VectorXd pooled_embeddings(const Eigen::MatrixXd& features) {
  if (features.rows() < 1) throw ShapeError("cannot pool an empty bag");
  Eigen::VectorXd out(2 * features.cols());
  out.head(features.cols()) = features.colwise().mean().transpose();
  out.tail(features.cols()) = features.colwise().maxCoeff().transpose();
  return out;
}

enum class BaselineInput { histogram, pooled };

inline BaselineFeatures baseline_features(const Bag& bag, BaselineInput kind) {
  if (kind == BaselineInput::pooled) return {bag.slide_id, pooled_embeddings(bag.features)};
  std::vector<double> counts(static_cast<std::size_t>(bag.instances()));
  for (Eigen::Index i = 0; i < bag.instances(); ++i) counts[static_cast<std::size_t>(i)] = bag.features(i, 0);
  return {bag.slide_id, baseline_aggregate(counts)};
}

// ---------------------------------------------------------------------------
// Bag manifest: a text index over per-slide MILF files.
//
//   # milcount-bags v1 mode=blob features=6 patch=512
//   slide_id,bag_file,label
//   s0001,bags/s0001.milf,3;0;1;...;4

struct ManifestEntry {
  std::string slide_id;
  std::string bag_file;  // relative to the manifest directory
  CountVector label;
};

struct BagManifest {
  FeatureMode mode = FeatureMode::blob;
  int features = kBlobFeatures;
  int patch = kDefaultPatch;
  std::vector<ManifestEntry> entries;
};

inline std::string mode_name(FeatureMode m) { return m == FeatureMode::blob ? "blob" : "embed"; }

inline FeatureMode parse_mode(std::string_view s) {
  if (s == "blob") return FeatureMode::blob;
  if (s == "embed") return FeatureMode::embedding;
  throw ValidationError("unknown feature mode '" + std::string(s) + "' (expected blob or embed)");
}

inline std::string encode_label(const CountVector& label) {
  std::string out;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    if (k) out += ';';
    out += io::fmt(label[k]);
  }
  return out;
}

inline CountVector decode_label(std::string_view s, const std::string& where) {
  const auto parts = io::split(s, ';');
  if (parts.size() != kNumClasses) throw ParseError(where + ": label must have 14 entries");
  CountVector v;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    v[k] = io::parse_double(parts[k], where);
    if (!(v[k] >= 0.0) || !std::isfinite(v[k])) throw ParseError(where + ": label entries must be >= 0");
  }
  return v;
}

inline std::string encode_manifest(const BagManifest& m) {
  std::string out = "# milcount-bags v1 mode=" + mode_name(m.mode) + " features=" + std::to_string(m.features) +
                    " patch=" + std::to_string(m.patch) + "\n";
  out += "slide_id,bag_file,label\n";
  for (const auto& e : m.entries) out += e.slide_id + "," + e.bag_file + "," + encode_label(e.label) + "\n";
  return out;
}

inline BagManifest decode_manifest(std::string_view text, const std::string& name) {
  const auto ls = io::lines(text);
  if (ls.size() < 2 || ls[0].rfind("# milcount-bags v1", 0) != 0)
    throw ParseError("'" + name + "': not a milcount bag manifest");
  BagManifest m;
  for (const auto& tok : io::split(ls[0].substr(19), ' ')) {
    const auto kv = io::split(tok, '=');
    if (kv.size() != 2) continue;
    if (kv[0] == "mode") m.mode = parse_mode(kv[1]);
    else if (kv[0] == "features") m.features = static_cast<int>(io::parse_int(kv[1], "features"));
    else if (kv[0] == "patch") m.patch = static_cast<int>(io::parse_int(kv[1], "patch"));
  }
  for (std::size_t i = 2; i < ls.size(); ++i) {
    if (io::trim(ls[i]).empty()) continue;
    const auto cols = io::split(ls[i], ',');
    const std::string where = "'" + name + "' line " + std::to_string(i + 1);
    if (cols.size() != 3) throw ParseError(where + ": expected slide_id,bag_file,label");
    m.entries.push_back({cols[0], cols[1], decode_label(cols[2], where)});
  }
  return m;
}

inline BagManifest read_manifest(const std::filesystem::path& path) {
  return decode_manifest(io::read_text(path), path.string());
}

inline std::vector<Bag> load_bags(const BagManifest& m, const std::filesystem::path& manifest_dir) {
  std::vector<Bag> bags;
  bags.reserve(m.entries.size());
  for (const auto& e : m.entries) {
    Bag b{e.slide_id, read_embedding(manifest_dir / e.bag_file), e.label};
    if (b.features.rows() < 1) throw ShapeError("bag '" + e.slide_id + "' is empty");
    if (b.features.cols() != m.features)
      throw ShapeError("bag '" + e.slide_id + "' has " + std::to_string(b.features.cols()) +
                       " feature columns, manifest declares " + std::to_string(m.features));
    bags.push_back(std::move(b));
  }
  return bags;
}

}  // namespace milcount
