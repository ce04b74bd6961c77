#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bags.hpp"
#include "config.hpp"
#include "evalcv.hpp"
#include "metrics.hpp"
#include "model_mil.hpp"
#include "model_mlp.hpp"
#include "parallel.hpp"
#include "training.hpp"

namespace milcount {

enum class ModelKind { mil, mlp };

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "mil") return ModelKind::mil;
  if (s == "mlp") return ModelKind::mlp;
  throw ValidationError("unknown model '" + std::string(s) + "' (expected mil or mlp)");
}

inline std::string model_name(ModelKind m) { return m == ModelKind::mil ? "mil" : "mlp"; }

struct FoldOutcome {
  MetricsRow row;
  std::string checkpoint;  // MILP or MLPP bytes
  std::vector<EpochLog> log;
  int best_epoch = 0;
  int epochs_run = 0;
};

struct ConstantOracleRow {
  int fold = 0;
  ErrorPair val;
  ErrorPair test;
};

namespace detail {

inline std::vector<const Bag*> select(const std::map<std::string, const Bag*>& index,
                                      const std::vector<std::string>& ids, const char* role) {
  std::vector<const Bag*> out;
  for (const auto& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw ValidationError(std::string(role) + " split names unknown slide '" + id + "'");
    out.push_back(it->second);
  }
  return out;
}

inline std::map<std::string, const Bag*> index_bags(const std::vector<Bag>& bags) {
  std::map<std::string, const Bag*> index;
  for (const auto& b : bags) index[b.slide_id] = &b;
  return index;
}

template <typename Input, typename Fn>
Split<Input> make_split(const std::vector<const Bag*>& bags, Fn&& to_input) {
  Split<Input> s;
  for (const Bag* b : bags) {
    s.inputs.push_back(to_input(*b));
    s.labels.push_back(b->label);
  }
  return s;
}

template <typename Model>
ErrorPair evaluate(const typename Model::Params& p, const Split<typename Model::Input>& s) {
  return dataset_metrics(predict_all<Model>(p, s.inputs), s.labels);
}

}  // namespace detail

inline BaselineInput baseline_input_for(const BagManifest& m, const RunSettings& s) {
  if (s.baseline_input_set) return s.baseline_input;
  return m.mode == FeatureMode::blob ? BaselineInput::histogram : BaselineInput::pooled;
}

// Trains one (seed, fold) run and scores the restored best-epoch parameters
// on validation and test.
inline FoldOutcome run_fold(ModelKind model, const std::vector<Bag>& bags, const FoldSplit& split, std::uint64_t seed,
                            const RunSettings& settings, BaselineInput baseline_input) {
  const auto index = detail::index_bags(bags);
  const auto train_bags = detail::select(index, split.train, "train");
  const auto val_bags = detail::select(index, split.val, "val");
  const auto test_bags = detail::select(index, split.test, "test");
  TrainConfig cfg = settings.train;
  cfg.seed = seed;

  FoldOutcome out;
  out.row.seed = static_cast<long long>(seed);
  out.row.fold = split.fold;
  auto finish = [&](const auto& result, ErrorPair v, ErrorPair t, std::string ckpt) {
    out.row.val_mae = v.mae;
    out.row.val_mse = v.mse;
    out.row.test_mae = t.mae;
    out.row.test_mse = t.mse;
    out.checkpoint = std::move(ckpt);
    out.log = result.log;
    out.best_epoch = result.best_epoch;
    out.epochs_run = result.epochs_run;
  };

  if (model == ModelKind::mil) {
    auto to_input = [](const Bag& b) { return b.features; };
    const auto tr = detail::make_split<Eigen::MatrixXd>(train_bags, to_input);
    const auto va = detail::make_split<Eigen::MatrixXd>(val_bags, to_input);
    const auto te = detail::make_split<Eigen::MatrixXd>(test_bags, to_input);
    MilConfig mc = settings.mil;
    mc.features = static_cast<int>(bags.front().dims());
    mc.dropout = cfg.dropout;
    auto result = train_model<MilModel>(MilParams::init(mc, seed), tr, va, cfg);
    finish(result, detail::evaluate<MilModel>(result.params, va), detail::evaluate<MilModel>(result.params, te),
           encode_mil_checkpoint(result.params));
  } else {
    auto to_input = [&](const Bag& b) { return baseline_features(b, baseline_input).vector; };
    const auto tr = detail::make_split<Eigen::VectorXd>(train_bags, to_input);
    const auto va = detail::make_split<Eigen::VectorXd>(val_bags, to_input);
    const auto te = detail::make_split<Eigen::VectorXd>(test_bags, to_input);
    MlpConfig mc;
    mc.dropout = cfg.dropout;
    mc.dims = {static_cast<int>(tr.inputs.front().size())};
    for (int h : settings.mlp_hidden) mc.dims.push_back(h);
    mc.dims.push_back(static_cast<int>(kNumClasses));
    auto result = train_model<MlpModel>(MlpParams::init(mc, seed), tr, va, cfg);
    finish(result, detail::evaluate<MlpModel>(result.params, va), detail::evaluate<MlpModel>(result.params, te),
           encode_mlp_checkpoint(result.params));
  }
  return out;
}

// Errors of predicting the training-split mean count vector for every slide.
inline ConstantOracleRow constant_oracle(const std::vector<Bag>& bags, const FoldSplit& split) {
  const auto index = detail::index_bags(bags);
  const auto train = detail::select(index, split.train, "train");
  if (train.empty()) throw ValidationError("constant oracle needs a non-empty training split");
  CountVector mean;
  for (const Bag* b : train)
    for (std::size_t k = 0; k < kNumClasses; ++k) mean[k] += b->label[k];
  for (auto& v : mean.bins) v /= static_cast<double>(train.size());
  auto score = [&](const std::vector<std::string>& ids, const char* role) {
    ErrorPair sum;
    const auto sel = detail::select(index, ids, role);
    if (sel.empty()) throw ValidationError(std::string("empty ") + role + " split");
    for (const Bag* b : sel)
      for (std::size_t k = 0; k < kNumClasses; ++k) {
        const double d = mean[k] - b->label[k];
        sum.mae += std::fabs(d) / static_cast<double>(kNumClasses);
        sum.mse += d * d / static_cast<double>(kNumClasses);
      }
    return ErrorPair{sum.mae / static_cast<double>(sel.size()), sum.mse / static_cast<double>(sel.size())};
  };
  return {split.fold, score(split.val, "val"), score(split.test, "test")};
}

inline std::string constant_oracle_csv(const std::vector<ConstantOracleRow>& rows) {
  std::string out = "fold,val_mae,test_mae,val_mse,test_mse\n";
  for (const auto& r : rows)
    out += std::to_string(r.fold) + "," + io::fmt(r.val.mae) + "," + io::fmt(r.test.mae) + "," + io::fmt(r.val.mse) +
           "," + io::fmt(r.test.mse) + "\n";
  return out;
}

struct CvResult {
  std::vector<MetricsRow> rows;
  std::vector<ConstantOracleRow> oracle;
  std::vector<std::filesystem::path> outputs;
};

inline std::string run_stem(std::uint64_t seed, int fold) {
  return "seed" + std::to_string(seed) + "_fold" + std::to_string(fold);
}

// Runs every (seed, fold) pair, `threads` at a time. Each run owns its
// optimizer state and random streams, so outputs do not depend on the
// thread count. Writes per-run logs and checkpoints plus metrics.csv,
// const_oracle.csv, report.csv and summary.csv under `out`.
inline CvResult run_cv(ModelKind model, const BagManifest& manifest, const std::vector<Bag>& bags,
                       const std::vector<FoldSplit>& folds, const std::vector<std::uint64_t>& seeds,
                       const RunSettings& settings, std::size_t threads, const std::filesystem::path& out) {
  if (seeds.empty()) throw ValidationError("cv needs at least one seed");
  if (bags.empty()) throw ValidationError("cv needs at least one bag");
  const BaselineInput baseline_input = baseline_input_for(manifest, settings);
  std::vector<FoldOutcome> outcomes(seeds.size() * folds.size());
  parallel_for(outcomes.size(), threads, [&](std::size_t job) {
    outcomes[job] = run_fold(model, bags, folds[job % folds.size()], seeds[job / folds.size()], settings, baseline_input);
  });

  CvResult res;
  std::filesystem::create_directories(out);
  const std::string ext = model == ModelKind::mil ? ".milp" : ".mlpp";
  for (std::size_t job = 0; job < outcomes.size(); ++job) {
    const auto& o = outcomes[job];
    const std::string stem = run_stem(seeds[job / folds.size()], o.row.fold);
    io::write_bytes(out / (stem + ext), o.checkpoint);
    io::write_text(out / (stem + "_log.csv"), epoch_log_csv(o.log));
    res.outputs.push_back(out / (stem + ext));
    res.outputs.push_back(out / (stem + "_log.csv"));
    res.rows.push_back(o.row);
  }
  for (const auto& f : folds) res.oracle.push_back(constant_oracle(bags, f));

  io::write_text(out / "metrics.csv", metrics_csv(res.rows));
  io::write_text(out / "const_oracle.csv", constant_oracle_csv(res.oracle));
  io::write_text(out / "report.csv", report_csv(res.rows));
  io::write_text(out / "summary.csv", summary_csv(res.rows));
  for (const char* f : {"metrics.csv", "const_oracle.csv", "report.csv", "summary.csv"}) res.outputs.push_back(out / f);
  return res;
}

}  // namespace milcount
