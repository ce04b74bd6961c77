#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "io.hpp"

namespace milcount {

// Maps a raw droplet count to its class: 0..12 droplets -> classes 1..13,
// anything above 12 -> class 14.
inline int count_to_class(long long droplet_count) {
  if (droplet_count < 0)
    throw ValidationError("droplet count must be non-negative, got " + std::to_string(droplet_count));
  if (droplet_count > kMaxExactDroplets) return static_cast<int>(kNumClasses);
  return static_cast<int>(droplet_count) + 1;
}

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct CellAnnotation {
  std::vector<Point> polygon;
  long long droplet_count = 0;
  int class_id = 1;

  CellAnnotation() = default;
  CellAnnotation(std::vector<Point> poly, long long droplets)
      : polygon(std::move(poly)), droplet_count(droplets), class_id(count_to_class(droplets)) {
    if (polygon.size() < 3)
      throw ValidationError("polygon has " + std::to_string(polygon.size()) + " points; need >= 3");
  }

  friend bool operator==(const CellAnnotation&, const CellAnnotation&) = default;
};

inline CountVector label_of(std::span<const CellAnnotation> cells) {
  CountVector label;
  for (const auto& c : cells) label[static_cast<std::size_t>(c.class_id - 1)] += 1.0;
  return label;
}

struct SlideRecord {
  std::string slide_id;
  std::string image_path;
  std::vector<CellAnnotation> cells;
  CountVector label;

  SlideRecord() = default;
  SlideRecord(std::string id, std::string image, std::vector<CellAnnotation> c)
      : slide_id(std::move(id)), image_path(std::move(image)), cells(std::move(c)), label(label_of(cells)) {}

  friend bool operator==(const SlideRecord&, const SlideRecord&) = default;
};

using Dataset = std::vector<SlideRecord>;

namespace detail {

inline std::string entry_name(std::size_t index, const nlohmann::ordered_json& entry) {
  std::string name = "entry " + std::to_string(index);
  if (entry.is_object() && entry.contains("slide_id") && entry["slide_id"].is_string())
    name += " (slide_id '" + entry["slide_id"].get<std::string>() + "')";
  return name;
}

inline nlohmann::ordered_json coord_json(double v) {
  // Integral coordinates are written as JSON integers.
  if (std::floor(v) == v && std::fabs(v) < 9.0e15) return static_cast<long long>(v);
  return v;
}

}  // namespace detail

// Parses the canonical annotation schema:
//   [{"slide_id": str, "image": str, "cells": [{"polygon": [[x,y],...], "droplets": int}]}]
inline Dataset parse_dataset(std::string_view json_text, const std::string& source = "<memory>") {
  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(source + ": malformed JSON: " + e.what());
  }
  if (!doc.is_array()) throw ParseError(source + ": top level must be a list of slide entries");

  Dataset out;
  out.reserve(doc.size());
  std::set<std::string> seen;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& e = doc[i];
    const std::string where = source + ": " + detail::entry_name(i, e);
    if (!e.is_object()) throw ParseError(where + ": entry must be an object");
    for (const char* key : {"slide_id", "image", "cells"})
      if (!e.contains(key)) throw ParseError(where + ": missing field '" + key + "'");
    if (!e["slide_id"].is_string()) throw ParseError(where + ": 'slide_id' must be a string");
    if (!e["image"].is_string()) throw ParseError(where + ": 'image' must be a string");
    if (!e["cells"].is_array()) throw ParseError(where + ": 'cells' must be a list");

    std::vector<CellAnnotation> cells;
    cells.reserve(e["cells"].size());
    for (std::size_t j = 0; j < e["cells"].size(); ++j) {
      const auto& c = e["cells"][j];
      const std::string cw = where + ": cells[" + std::to_string(j) + "]";
      if (!c.is_object() || !c.contains("polygon") || !c.contains("droplets"))
        throw ParseError(cw + ": cell needs 'polygon' and 'droplets'");
      if (!c["droplets"].is_number_integer())
        throw ParseError(cw + ": 'droplets' must be an integer");
      const long long droplets = c["droplets"].get<long long>();
      if (droplets < 0) throw ParseError(cw + ": 'droplets' must be non-negative");
      if (!c["polygon"].is_array()) throw ParseError(cw + ": 'polygon' must be a list of [x,y]");
      std::vector<Point> poly;
      for (const auto& p : c["polygon"]) {
        if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
          throw ParseError(cw + ": polygon vertices must be [x,y] number pairs");
        poly.push_back({p[0].get<double>(), p[1].get<double>()});
      }
      if (poly.size() < 3)
        throw ParseError(cw + ": polygon has " + std::to_string(poly.size()) + " points; need >= 3");
      cells.emplace_back(std::move(poly), droplets);
    }
    std::string id = e["slide_id"].get<std::string>();
    if (!seen.insert(id).second) throw ParseError(where + ": duplicate slide_id '" + id + "'");
    out.emplace_back(std::move(id), e["image"].get<std::string>(), std::move(cells));
  }
  return out;
}

inline std::string serialize_dataset(std::span<const SlideRecord> slides) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::array();
  for (const auto& s : slides) {
    nlohmann::ordered_json cells = nlohmann::ordered_json::array();
    for (const auto& c : s.cells) {
      nlohmann::ordered_json poly = nlohmann::ordered_json::array();
      for (const auto& p : c.polygon) poly.push_back({detail::coord_json(p.x), detail::coord_json(p.y)});
      nlohmann::ordered_json cell;
      cell["polygon"] = std::move(poly);
      cell["droplets"] = c.droplet_count;
      cells.push_back(std::move(cell));
    }
    nlohmann::ordered_json entry;
    entry["slide_id"] = s.slide_id;
    entry["image"] = s.image_path;
    entry["cells"] = std::move(cells);
    doc.push_back(std::move(entry));
  }
  return doc.dump(2) + "\n";
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  return parse_dataset(io::read_text(path), path.string());
}

inline void save_dataset(const std::filesystem::path& path, std::span<const SlideRecord> slides) {
  io::write_text(path, serialize_dataset(slides));
}

// Concatenates entry lists in input order. Colliding slide_ids are reported
// together rather than silently overwritten.
inline Dataset merge_annotations(std::span<const Dataset> parts) {
  if (parts.empty()) throw ValidationError("merge needs at least one annotation file");
  std::map<std::string, int> seen;
  std::vector<std::string> collisions;
  Dataset out;
  for (const auto& part : parts)
    for (const auto& s : part) {
      if (++seen[s.slide_id] == 2) collisions.push_back(s.slide_id);
      out.push_back(s);
    }
  if (!collisions.empty()) {
    std::string msg = "duplicate slide_id across files:";
    for (const auto& c : collisions) msg += " '" + c + "'";
    throw ValidationError(msg);
  }
  return out;
}

inline Dataset merge_annotation_files(std::span<const std::filesystem::path> files) {
  std::vector<Dataset> parts;
  parts.reserve(files.size());
  for (const auto& f : files) parts.push_back(load_dataset(f));
  return merge_annotations(parts);
}

struct DatasetStats {
  std::array<long long, kNumClasses> per_class{};
  long long total = 0;
  friend bool operator==(const DatasetStats&, const DatasetStats&) = default;
};

inline DatasetStats dataset_stats(std::span<const SlideRecord> slides) {
  DatasetStats st;
  for (const auto& s : slides)
    for (std::size_t k = 0; k < kNumClasses; ++k) st.per_class[k] += static_cast<long long>(s.label[k]);
  for (long long v : st.per_class) st.total += v;
  return st;
}

inline std::string stats_csv(const DatasetStats& st) {
  std::string out = "class_id,cell_count\n";
  for (std::size_t k = 0; k < kNumClasses; ++k)
    out += std::to_string(k + 1) + "," + std::to_string(st.per_class[k]) + "\n";
  out += "TOTAL," + std::to_string(st.total) + "\n";
  return out;
}

}  // namespace milcount
