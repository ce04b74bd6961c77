#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "augment.hpp"
#include "common.hpp"
#include "io.hpp"
#include "rng.hpp"

namespace milcount {

// ---------------------------------------------------------------------------
// Fold splits

struct FoldSplit {
  int fold = 0;
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

struct LabeledSlide {
  std::string slide_id;
  CountVector label;
};

// Stratified k-fold assignment over source slides. Augmented copies are
// grouped with their source so no source ever straddles two roles.
//
// Sources are bucketed by dominant class; each bucket is shuffled with the
// "split" stream and dealt round-robin, the dealing position carrying over
// from one bucket to the next so fold sizes stay within one of each other.
// Fold i tests on bucket i, validates on bucket (i+1) mod k and trains on
// the remainder.
inline std::vector<FoldSplit> make_splits(std::span<const LabeledSlide> slides, int k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("need at least 2 folds");
  std::vector<std::string> sources;
  std::map<std::string, std::vector<std::string>> members;
  std::map<std::string, CountVector> source_label;
  std::set<std::string> ids;
  for (const auto& s : slides) {
    if (!ids.insert(s.slide_id).second) throw ValidationError("duplicate slide_id '" + s.slide_id + "' in manifest");
    const std::string src = source_slide_id(s.slide_id);
    auto [it, fresh] = members.try_emplace(src);
    if (fresh) {
      sources.push_back(src);
      source_label[src] = s.label;
    }
    if (s.slide_id == src) source_label[src] = s.label;
    it->second.push_back(s.slide_id);
  }
  if (static_cast<int>(sources.size()) < k)
    throw ValidationError("need at least " + std::to_string(k) + " source slides for " + std::to_string(k) +
                          "-fold splits, found " + std::to_string(sources.size()));

  std::vector<std::vector<std::string>> strata(kNumClasses);
  for (const auto& src : sources) strata[source_label[src].argmax()].push_back(src);

  std::map<std::string, int> fold_of;
  std::size_t deal = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    Rng rng(seed, "split", {c});
    rng.shuffle(strata[c]);
    for (const auto& src : strata[c]) fold_of[src] = static_cast<int>(deal++ % static_cast<std::size_t>(k));
  }

  std::vector<FoldSplit> folds(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    auto& f = folds[static_cast<std::size_t>(i)];
    f.fold = i;
    for (const auto& s : slides) {
      const int home = fold_of[source_slide_id(s.slide_id)];
      if (home == i) f.test.push_back(s.slide_id);
      else if (home == (i + 1) % k) f.val.push_back(s.slide_id);
      else f.train.push_back(s.slide_id);
    }
  }
  return folds;
}

inline std::string id_list_csv(std::span<const std::string> ids) {
  std::string out = "slide_id\n";
  for (const auto& id : ids) out += id + "\n";
  return out;
}

inline std::vector<std::string> read_id_list(const std::filesystem::path& path) {
  const auto ls = io::lines(io::read_text(path));
  if (ls.empty() || io::trim(ls[0]) != "slide_id") throw ParseError("'" + path.string() + "': expected header 'slide_id'");
  std::vector<std::string> ids;
  for (std::size_t i = 1; i < ls.size(); ++i) {
    const auto t = io::trim(ls[i]);
    if (!t.empty()) ids.emplace_back(t);
  }
  return ids;
}

inline std::vector<std::filesystem::path> write_splits(const std::filesystem::path& dir, std::span<const FoldSplit> folds) {
  std::vector<std::filesystem::path> written;
  for (const auto& f : folds) {
    const std::string stem = "fold" + std::to_string(f.fold) + "_";
    for (const auto& [role, ids] : {std::pair{"train", &f.train}, std::pair{"val", &f.val}, std::pair{"test", &f.test}}) {
      const auto path = dir / (stem + role + ".csv");
      io::write_text(path, id_list_csv(*ids));
      written.push_back(path);
    }
  }
  return written;
}

inline std::vector<FoldSplit> read_splits(const std::filesystem::path& dir) {
  std::vector<FoldSplit> folds;
  for (int i = 0;; ++i) {
    const std::string stem = "fold" + std::to_string(i) + "_";
    if (!std::filesystem::exists(dir / (stem + "test.csv"))) break;
    FoldSplit f;
    f.fold = i;
    f.train = read_id_list(dir / (stem + "train.csv"));
    f.val = read_id_list(dir / (stem + "val.csv"));
    f.test = read_id_list(dir / (stem + "test.csv"));
    folds.push_back(std::move(f));
  }
  if (folds.empty()) throw IoError("no fold*_test.csv split files in '" + dir.string() + "'");
  return folds;
}

// ---------------------------------------------------------------------------
// Metric rows and summaries

struct MetricsRow {
  long long seed = 0;
  int fold = 0;
  double val_mae = 0.0;
  double test_mae = 0.0;
  std::optional<double> val_mse;
  std::optional<double> test_mse;
};

struct Stat {
  double mean = 0.0;
  std::optional<double> std;  // sample std (n-1); absent for n == 1
};

struct Summary {
  std::string group;
  int n = 0;
  Stat val_mae;
  Stat test_mae;
  std::optional<Stat> val_mse;
  std::optional<Stat> test_mse;
};

inline Stat mean_std(std::span<const double> v) {
  if (v.empty()) throw ValidationError("cannot summarize an empty group");
  // Mean taken as an offset from the first value so identical inputs give
  // that value back exactly and a std of exactly 0.
  Stat s;
  double offset = 0.0;
  for (double x : v) offset += x - v[0];
  s.mean = v[0] + offset / static_cast<double>(v.size());
  if (v.size() >= 2) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

namespace detail {

inline Summary summarize(std::string group, std::span<const MetricsRow> rows) {
  Summary s;
  s.group = std::move(group);
  s.n = static_cast<int>(rows.size());
  std::vector<double> vm, tm, vs, ts;
  bool has_vs = true, has_ts = true;
  for (const auto& r : rows) {
    vm.push_back(r.val_mae);
    tm.push_back(r.test_mae);
    if (r.val_mse) vs.push_back(*r.val_mse); else has_vs = false;
    if (r.test_mse) ts.push_back(*r.test_mse); else has_ts = false;
  }
  s.val_mae = mean_std(vm);
  s.test_mae = mean_std(tm);
  if (has_vs) s.val_mse = mean_std(vs);
  if (has_ts) s.test_mse = mean_std(ts);
  return s;
}

inline std::vector<std::pair<long long, std::vector<MetricsRow>>> by_seed(std::span<const MetricsRow> rows) {
  std::vector<std::pair<long long, std::vector<MetricsRow>>> groups;
  for (const auto& r : rows) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == r.seed; });
    if (it == groups.end()) {
      groups.push_back({r.seed, {}});
      it = std::prev(groups.end());
    }
    it->second.push_back(r);
  }
  return groups;
}

}  // namespace detail

enum class GroupBy { seed, overall };

// How the overall row is formed:
//   primary_seed - rows of the first seed only (an extra reproducibility run
//                  on another seed does not enter the summary);
//   seed_means   - mean (and sample std) of the per-seed means;
//   automatic    - seed_means when every seed covers the same number of
//                  folds, primary_seed otherwise.
enum class OverallRule { automatic, primary_seed, seed_means };

inline std::vector<Summary> aggregate_rows(std::span<const MetricsRow> rows, GroupBy group_by,
                                           OverallRule rule = OverallRule::automatic) {
  if (rows.empty()) throw ValidationError("no metric rows to aggregate");
  const auto groups = detail::by_seed(rows);
  std::vector<Summary> seed_summaries;
  for (const auto& [seed, g] : groups) seed_summaries.push_back(detail::summarize("seed " + std::to_string(seed), g));
  if (group_by == GroupBy::seed) return seed_summaries;

  if (groups.size() == 1) {
    Summary s = seed_summaries.front();
    s.group = "overall";
    return {s};
  }
  if (rule == OverallRule::automatic) {
    const bool even = std::all_of(groups.begin(), groups.end(),
                                  [&](const auto& g) { return g.second.size() == groups.front().second.size(); });
    rule = even ? OverallRule::seed_means : OverallRule::primary_seed;
  }
  if (rule == OverallRule::primary_seed) {
    Summary s = seed_summaries.front();
    s.group = "overall";
    return {s};
  }
  auto of_means = [&](auto pick) -> std::optional<Stat> {
    std::vector<double> v;
    for (const auto& s : seed_summaries) {
      const std::optional<Stat> st = pick(s);
      if (!st) return std::nullopt;
      v.push_back(st->mean);
    }
    return mean_std(v);
  };
  Summary s;
  s.group = "overall";
  s.n = static_cast<int>(seed_summaries.size());
  s.val_mae = *of_means([](const Summary& x) { return std::optional<Stat>(x.val_mae); });
  s.test_mae = *of_means([](const Summary& x) { return std::optional<Stat>(x.test_mae); });
  s.val_mse = of_means([](const Summary& x) { return x.val_mse; });
  s.test_mse = of_means([](const Summary& x) { return x.test_mse; });
  return {s};
}

// ---------------------------------------------------------------------------
// CSV forms

inline std::string opt_fmt(const std::optional<double>& v) { return v ? io::fmt(*v) : std::string(); }

inline std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::string out = "seed,fold,val_mae,test_mae,val_mse,test_mse\n";
  for (const auto& r : rows)
    out += std::to_string(r.seed) + "," + std::to_string(r.fold) + "," + io::fmt(r.val_mae) + "," +
           io::fmt(r.test_mae) + "," + opt_fmt(r.val_mse) + "," + opt_fmt(r.test_mse) + "\n";
  return out;
}

// Accepts any CSV with seed, fold, val_mae and test_mae columns (mse columns
// optional, extra columns ignored).
inline std::vector<MetricsRow> parse_metrics_csv(std::string_view text, const std::string& name) {
  const auto ls = io::lines(text);
  if (ls.empty()) throw ParseError("'" + name + "': empty metrics file");
  const auto header = io::split(ls[0], ',');
  auto col = [&](std::string_view key) -> int {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (io::trim(header[i]) == key) return static_cast<int>(i);
    return -1;
  };
  const int c_seed = col("seed"), c_fold = col("fold"), c_vm = col("val_mae"), c_tm = col("test_mae");
  const int c_vs = col("val_mse"), c_ts = col("test_mse");
  if (c_seed < 0 || c_fold < 0 || c_vm < 0 || c_tm < 0)
    throw ParseError("'" + name + "': header needs seed,fold,val_mae,test_mae");
  std::vector<MetricsRow> rows;
  for (std::size_t i = 1; i < ls.size(); ++i) {
    if (io::trim(ls[i]).empty()) continue;
    const auto c = io::split(ls[i], ',');
    // Summary rows of a report CSV carry "mean±std" in the fold column.
    if (c.size() > 1 && io::trim(c[1]) == "mean\xC2\xB1std") continue;
    const std::string where = name + " line " + std::to_string(i + 1);
    auto cell = [&](int idx) -> std::string { return idx >= 0 && idx < static_cast<int>(c.size()) ? std::string(io::trim(c[static_cast<std::size_t>(idx)])) : std::string(); };
    MetricsRow r;
    r.seed = io::parse_int(cell(c_seed), where);
    r.fold = static_cast<int>(io::parse_int(cell(c_fold), where));
    r.val_mae = io::parse_double(cell(c_vm), where);
    r.test_mae = io::parse_double(cell(c_tm), where);
    if (!cell(c_vs).empty()) r.val_mse = io::parse_double(cell(c_vs), where);
    if (!cell(c_ts).empty()) r.test_mse = io::parse_double(cell(c_ts), where);
    for (double v : {r.val_mae, r.test_mae, r.val_mse.value_or(0.0), r.test_mse.value_or(0.0)})
      if (!(v >= 0.0) || !std::isfinite(v)) throw ParseError(where + ": metrics must be finite and >= 0");
    rows.push_back(r);
  }
  return rows;
}

inline std::string pm(const Stat& s) {
  return io::fmt_fixed(s.mean, 2) + "\xC2\xB1" + (s.std ? io::fmt_fixed(*s.std, 2) : std::string());
}

// Per-(seed, fold) rows followed by one "mean±std" row per seed and the
// overall row, values rounded to two decimals.
inline std::string report_csv(std::span<const MetricsRow> rows, OverallRule rule = OverallRule::automatic) {
  std::string out = metrics_csv(rows);
  std::vector<Summary> all = aggregate_rows(rows, GroupBy::seed);
  for (auto& s : aggregate_rows(rows, GroupBy::overall, rule)) all.push_back(s);
  for (const auto& s : all)
    out += s.group + ",mean\xC2\xB1std," + pm(s.val_mae) + "," + pm(s.test_mae) + "," +
           (s.val_mse ? pm(*s.val_mse) : "") + "," + (s.test_mse ? pm(*s.test_mse) : "") + "\n";
  return out;
}

// Full-precision summaries, one row per group.
inline std::string summary_csv(std::span<const MetricsRow> rows, OverallRule rule = OverallRule::automatic) {
  std::string out =
      "group,n,val_mae_mean,val_mae_std,test_mae_mean,test_mae_std,val_mse_mean,val_mse_std,test_mse_mean,test_mse_std\n";
  std::vector<Summary> all = aggregate_rows(rows, GroupBy::seed);
  for (auto& s : aggregate_rows(rows, GroupBy::overall, rule)) all.push_back(s);
  auto stat = [](const std::optional<Stat>& s) {
    return s ? io::fmt(s->mean) + "," + opt_fmt(s->std) : std::string(",");
  };
  for (const auto& s : all)
    out += s.group + "," + std::to_string(s.n) + "," + stat(s.val_mae) + "," + stat(s.test_mae) + "," +
           stat(s.val_mse) + "," + stat(s.test_mse) + "\n";
  return out;
}

}  // namespace milcount
