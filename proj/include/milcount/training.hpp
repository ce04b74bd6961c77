#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "common.hpp"
#include "metrics.hpp"
#include "model_mil.hpp"
#include "model_mlp.hpp"
#include "params.hpp"
#include "rng.hpp"

namespace milcount {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-5;
  int max_epochs = 120;
  int patience = 5;
  int accum_steps = 8;
  double dropout = 0.25;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double epsilon_freq = 1e-6;
  bool decoupled_weight_decay = false;

  static TrainConfig for_mil() { return {}; }

  static TrainConfig for_mlp() {
    TrainConfig c;
    c.max_epochs = 200;
    return c;
  }

  void validate() const {
    if (!(lr > 0.0) || !(weight_decay >= 0.0) || !(eps > 0.0) || !(epsilon_freq > 0.0))
      throw ValidationError("lr, eps and epsilon_freq must be positive; weight_decay non-negative");
    if (max_epochs < 1 || patience < 1 || accum_steps < 1)
      throw ValidationError("max_epochs, patience and accum_steps must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout must lie in [0, 1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
      throw ValidationError("Adam betas must lie in [0, 1)");
  }
};

// ---------------------------------------------------------------------------
// Loss

struct LossWeights {
  std::array<double, kNumClasses> w{};

  static LossWeights uniform() {
    LossWeights lw;
    lw.w.fill(1.0);
    return lw;
  }
};

// w_k proportional to 1 / (mean training count in bin k + epsilon_freq),
// rescaled to mean 1. Written as 14 / sum_j (f_k / f_j) so that equal
// frequencies give weights of exactly 1.
inline LossWeights compute_class_weights(std::span<const CountVector> train_labels, double epsilon_freq = 1e-6) {
  if (train_labels.empty()) throw ValidationError("class weights need at least one training slide");
  std::array<double, kNumClasses> freq{};
  const double n = static_cast<double>(train_labels.size());
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    double sum = 0.0;
    for (const auto& y : train_labels) sum += y[k];
    freq[k] = sum / n + epsilon_freq;
  }
  LossWeights lw;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    double ratio_sum = 0.0;
    for (std::size_t j = 0; j < kNumClasses; ++j) ratio_sum += freq[k] / freq[j];
    lw.w[k] = static_cast<double>(kNumClasses) / ratio_sum;
  }
  return lw;
}

struct LossResult {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

// (1/14) sum_k w_k (pred_k - log1p(y_k))^2 and its gradient.
inline LossResult weighted_log_mse(const Eigen::VectorXd& pred, const CountVector& y, const LossWeights& w) {
  if (pred.size() != static_cast<Eigen::Index>(kNumClasses)) throw ShapeError("prediction must have 14 bins");
  LossResult r{0.0, Eigen::VectorXd(kNumClasses)};
  constexpr double bins = static_cast<double>(kNumClasses);
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    const double d = pred[i] - std::log1p(y[k]);
    r.loss += w.w[k] * d * d;
    r.grad[i] = 2.0 * w.w[k] * d / bins;
  }
  r.loss /= bins;
  return r;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long long step = 0;
};

template <ParameterSet P>
void adam_step(P& params, const P& grads, AdamState& state, const TrainConfig& cfg) {
  auto pt = params.tensors();
  auto gt = const_cast<P&>(grads).tensors();
  if (pt.size() != gt.size()) throw ShapeError("gradient structure does not match parameters");
  if (state.m.empty()) {
    for (const auto& t : pt) {
      state.m.emplace_back(t.data.size(), 0.0);
      state.v.emplace_back(t.data.size(), 0.0);
    }
  }
  for (std::size_t t = 0; t < pt.size(); ++t) {
    if (gt[t].data.size() != pt[t].data.size() || state.m[t].size() != pt[t].data.size())
      throw ShapeError("gradient for '" + pt[t].name + "' has the wrong size");
    for (std::size_t i = 0; i < gt[t].data.size(); ++i)
      if (!std::isfinite(gt[t].data[i]))
        throw NumericError("non-finite gradient in '" + pt[t].name + "' at index " + std::to_string(i));
  }

  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < pt.size(); ++t) {
    auto& m = state.m[t];
    auto& v = state.v[t];
    auto theta = pt[t].data;
    const auto g_in = gt[t].data;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      double g = g_in[i];
      if (!cfg.decoupled_weight_decay) g += cfg.weight_decay * theta[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      if (cfg.decoupled_weight_decay) theta[i] -= cfg.lr * cfg.weight_decay * theta[i];
      theta[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Early stopping on validation MAE: strict improvement, min_delta 0. Stops
// once `patience` consecutive epochs fail to improve; the best snapshot is
// kept for restoration.

template <typename Snapshot>
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {
    if (patience < 1) throw ValidationError("patience must be >= 1");
  }

  // Returns true when training should stop after this epoch.
  bool observe(int epoch, double val_mae, const Snapshot& current) {
    if (!best_ || val_mae < best_value_) {
      best_value_ = val_mae;
      best_epoch_ = epoch;
      best_ = current;
      since_ = 0;
    } else {
      ++since_;
    }
    return since_ >= patience_;
  }

  int best_epoch() const { return best_epoch_; }
  double best_value() const { return best_value_; }
  int epochs_since_improvement() const { return since_; }
  const Snapshot& best_snapshot() const { return *best_; }

 private:
  int patience_;
  int since_ = 0;
  int best_epoch_ = 0;
  double best_value_ = 0.0;
  std::optional<Snapshot> best_;
};

// ---------------------------------------------------------------------------
// Model adapters used by the generic epoch loop.

struct MilModel {
  using Params = MilParams;
  using Input = Eigen::MatrixXd;

  static Eigen::VectorXd predict(const Params& p, const Input& x) {
    return mil_forward(p, x, Mode::eval, 0.0, nullptr).output;
  }

  static Params loss_grad(const Params& p, const Input& x, const CountVector& y, const LossWeights& w,
                          double dropout, Rng& rng, double& loss) {
    const MilTrace t = mil_forward(p, x, Mode::train, dropout, &rng);
    const LossResult l = weighted_log_mse(t.output, y, w);
    loss = l.loss;
    return mil_backward(p, t, x, l.grad);
  }
};

struct MlpModel {
  using Params = MlpParams;
  using Input = Eigen::VectorXd;

  static Eigen::VectorXd predict(const Params& p, const Input& x) {
    return mlp_forward(p, x, Mode::eval, 0.0, nullptr).output;
  }

  static Params loss_grad(const Params& p, const Input& x, const CountVector& y, const LossWeights& w,
                          double dropout, Rng& rng, double& loss) {
    const MlpTrace t = mlp_forward(p, x, Mode::train, dropout, &rng);
    const LossResult l = weighted_log_mse(t.output, y, w);
    loss = l.loss;
    return mlp_backward(p, t, l.grad);
  }
};

template <typename Input>
struct Split {
  std::vector<Input> inputs;
  std::vector<CountVector> labels;

  std::size_t size() const { return inputs.size(); }
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;
  double val_mse = 0.0;
  double elapsed_s = 0.0;
};

template <typename Params>
struct TrainResult {
  Params params;
  std::vector<EpochLog> log;
  LossWeights weights;
  int best_epoch = 0;
  int epochs_run = 0;
  bool early_stopped = false;
};

template <typename Model>
std::vector<Eigen::VectorXd> predict_all(const typename Model::Params& p,
                                         std::span<const typename Model::Input> inputs) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(inputs.size());
  for (const auto& x : inputs) out.push_back(Model::predict(p, x));
  return out;
}

// Bag batch size 1; gradients of `accum_steps` consecutive bags are averaged
// before each optimizer step (a trailing partial window is averaged over its
// own size). Validation MAE drives early stopping and the best epoch's
// parameters are returned.
template <typename Model>
TrainResult<typename Model::Params> train_model(typename Model::Params params,
                                                const Split<typename Model::Input>& train,
                                                const Split<typename Model::Input>& val, const TrainConfig& cfg) {
  using Params = typename Model::Params;
  cfg.validate();
  if (train.size() == 0 || val.size() == 0) throw ValidationError("training needs non-empty train and validation splits");
  if (train.inputs.size() != train.labels.size() || val.inputs.size() != val.labels.size())
    throw ShapeError("split inputs and labels differ in length");

  TrainResult<Params> result;
  result.weights = compute_class_weights(train.labels, cfg.epsilon_freq);
  AdamState adam;
  EarlyStopping<Params> stopper(cfg.patience);
  Rng dropout_rng(cfg.seed, "dropout");
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<std::size_t> order(train.size());
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(cfg.seed, "shuffle", {static_cast<std::uint64_t>(epoch)});
    shuffle_rng.shuffle(order);

    Params acc = zeros_like(params);
    int in_window = 0;
    double loss_sum = 0.0;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      const std::size_t i = order[pos];
      double loss = 0.0;
      const Params g = Model::loss_grad(params, train.inputs[i], train.labels[i], result.weights, cfg.dropout,
                                        dropout_rng, loss);
      if (!std::isfinite(loss))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", bag " + std::to_string(i));
      loss_sum += loss;
      accumulate(acc, g);
      ++in_window;
      if (in_window == cfg.accum_steps || pos + 1 == order.size()) {
        scale(acc, 1.0 / in_window);
        adam_step(params, acc, adam, cfg);
        acc = zeros_like(params);
        in_window = 0;
      }
    }

    const auto preds = predict_all<Model>(params, val.inputs);
    const ErrorPair vm = dataset_metrics(preds, val.labels);
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back({epoch, loss_sum / static_cast<double>(order.size()), vm.mae, vm.mse, elapsed});
    result.epochs_run = epoch;
    if (stopper.observe(epoch, vm.mae, params)) {
      result.early_stopped = true;
      break;
    }
  }
  result.params = stopper.best_snapshot();
  result.best_epoch = stopper.best_epoch();
  return result;
}

inline std::string epoch_log_csv(std::span<const EpochLog> log) {
  std::string out = "epoch,train_loss,val_mae,val_mse,elapsed_s\n";
  for (const auto& e : log)
    out += std::to_string(e.epoch) + "," + io::fmt(e.train_loss) + "," + io::fmt(e.val_mae) + "," +
           io::fmt(e.val_mse) + "," + io::fmt_fixed(e.elapsed_s, 3) + "\n";
  return out;
}

}  // namespace milcount
