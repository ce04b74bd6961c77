#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "annotations.hpp"
#include "common.hpp"
#include "image.hpp"
#include "parallel.hpp"

namespace milcount {

enum class AugmentKind { brightness, blur };

struct AugmentSpec {
  AugmentKind kind = AugmentKind::brightness;
  double factor = 1.0;   // brightness only
  int kernel_size = 3;   // blur only
  std::string suffix;

  static AugmentSpec brightness(double factor, std::string suffix) {
    if (!(factor > 0.0)) throw ValidationError("brightness factor must be positive");
    return {AugmentKind::brightness, factor, 3, std::move(suffix)};
  }

  static AugmentSpec blur3() { return {AugmentKind::blur, 1.0, 3, "_blur3"}; }

  // "b12" -> brightness 1.2 with suffix "_b12"; "blur3" -> 3x3 blur.
  static AugmentSpec parse(std::string_view name) {
    if (name == "blur3") return blur3();
    if (name.size() >= 2 && name[0] == 'b' &&
        name.substr(1).find_first_not_of("0123456789") == std::string_view::npos) {
      const double factor = static_cast<double>(io::parse_int(name.substr(1), "brightness spec")) / 10.0;
      return brightness(factor, "_" + std::string(name));
    }
    throw ValidationError("unknown augmentation spec '" + std::string(name) + "' (expected bNN or blur3)");
  }
};

// The three augmentations used to quadruple the annotated dataset.
inline std::vector<AugmentSpec> default_augment_specs() {
  return {AugmentSpec::parse("b12"), AugmentSpec::parse("b08"), AugmentSpec::blur3()};
}

inline RasterImage adjust_brightness(const RasterImage& img, double factor) {
  if (!(factor > 0.0)) throw ValidationError("brightness factor must be positive");
  RasterImage out = img;
  for (auto& p : out.pixels) {
    const double v = std::round(static_cast<double>(p) * factor);
    p = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
  }
  return out;
}

namespace detail {

// Reflect-101 border index (..., 2, 1 | 0, 1, 2, ..., n-1 | n-2, ...).
inline int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

}  // namespace detail

// Separable [1,2,1]/4 blur, horizontal then vertical, reflect-101 borders.
// The 16x-scaled sum is exact in integers, so the single final rounding
// (half away from zero) is exact as well.
inline RasterImage gaussian_blur3(const RasterImage& img) {
  const int w = img.width, h = img.height, ch = img.channels;
  std::vector<int> horiz(img.pixels.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c)
        horiz[img.index(x, y, c)] = img.at(detail::reflect101(x - 1, w), y, c) + 2 * img.at(x, y, c) +
                                    img.at(detail::reflect101(x + 1, w), y, c);
  RasterImage out(w, h, ch);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) {
        const int sum = horiz[img.index(x, detail::reflect101(y - 1, h), c)] + 2 * horiz[img.index(x, y, c)] +
                        horiz[img.index(x, detail::reflect101(y + 1, h), c)];
        out.at(x, y, c) = static_cast<std::uint8_t>(std::min(255, (sum + 8) / 16));
      }
  return out;
}

inline RasterImage apply_augment(const AugmentSpec& spec, const RasterImage& img) {
  switch (spec.kind) {
    case AugmentKind::brightness:
      return adjust_brightness(img, spec.factor);
    case AugmentKind::blur:
      if (spec.kernel_size != 3) throw ValidationError("only kernel size 3 blur is supported");
      return gaussian_blur3(img);
  }
  return img;
}

// "slide.pgm" + "_b12" -> "slide_b12.pgm"
inline std::string suffixed_path(const std::string& path, const std::string& suffix) {
  std::filesystem::path p(path);
  std::filesystem::path out = p.parent_path() / (p.stem().string() + suffix + p.extension().string());
  return out.generic_string();
}

inline const std::vector<std::string>& known_suffixes() {
  static const std::vector<std::string> s = {"_b12", "_b08", "_blur3"};
  return s;
}

// Source slide of an augmented slide id; ids without a known suffix are
// their own source.
inline std::string source_slide_id(const std::string& slide_id) {
  for (const auto& suf : known_suffixes())
    if (slide_id.size() > suf.size() && slide_id.compare(slide_id.size() - suf.size(), suf.size(), suf) == 0)
      return slide_id.substr(0, slide_id.size() - suf.size());
  return slide_id;
}

struct AugmentResult {
  // records[s] holds the copies produced by specs[s], in input slide order.
  std::vector<Dataset> per_spec;
};

// Writes one augmented image per (slide, spec) under out_root and returns
// the suffixed records. Cells are copied verbatim because both augmentations
// preserve geometry and droplet counts.
inline AugmentResult augment_dataset(std::span<const SlideRecord> slides, std::span<const AugmentSpec> specs,
                                     const std::filesystem::path& image_root,
                                     const std::filesystem::path& out_root, std::size_t threads = 1) {
  AugmentResult result;
  result.per_spec.assign(specs.size(), Dataset(slides.size()));
  if (specs.empty()) return result;
  parallel_for(slides.size(), threads, [&](std::size_t i) {
    const auto& src = slides[i];
    const RasterImage img = read_image(image_root / src.image_path);
    for (std::size_t s = 0; s < specs.size(); ++s) {
      SlideRecord rec = src;
      rec.slide_id = src.slide_id + specs[s].suffix;
      rec.image_path = suffixed_path(src.image_path, specs[s].suffix);
      write_image(out_root / rec.image_path, apply_augment(specs[s], img));
      result.per_spec[s][i] = std::move(rec);
    }
  });
  return result;
}

}  // namespace milcount
