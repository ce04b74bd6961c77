#pragma once

#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bags.hpp"
#include "common.hpp"
#include "io.hpp"
#include "params.hpp"
#include "rng.hpp"

namespace milcount {

struct MilConfig {
  int features = kBlobFeatures;
  int hidden = 512;     // instance projection width
  int attention = 256;  // attention scorer width
  bool gated = false;
  double dropout = 0.25;
};

// Attention MIL head:
//   h_i = relu(proj_weight x_i + proj_bias)
//   s_i = attn_w . tanh(attn_v h_i)                       (plain)
//   s_i = attn_w . (tanh(attn_v h_i) * sigmoid(attn_gate h_i))   (gated)
//   a   = softmax(s),  z = sum_i a_i h_i
//   y   = out_weight dropout(z) + out_bias                (14 log1p counts)
struct MilParams {
  Eigen::MatrixXd proj_weight;  // H x F
  Eigen::VectorXd proj_bias;    // H
  Eigen::MatrixXd attn_v;       // D x H
  Eigen::VectorXd attn_w;       // D
  Eigen::MatrixXd attn_gate;    // D x H, empty unless gated
  Eigen::MatrixXd out_weight;   // 14 x H
  Eigen::VectorXd out_bias;     // 14

  int features() const { return static_cast<int>(proj_weight.cols()); }
  int hidden() const { return static_cast<int>(proj_weight.rows()); }
  int attention() const { return static_cast<int>(attn_v.rows()); }
  bool gated() const { return attn_gate.size() > 0; }

  std::vector<TensorView> tensors() {
    std::vector<TensorView> t = {{"proj_weight", flat(proj_weight)},
                                 {"proj_bias", flat(proj_bias)},
                                 {"attn_v", flat(attn_v)},
                                 {"attn_w", flat(attn_w)}};
    if (gated()) t.push_back({"attn_gate", flat(attn_gate)});
    t.push_back({"out_weight", flat(out_weight)});
    t.push_back({"out_bias", flat(out_bias)});
    return t;
  }

  static MilParams zeros(const MilConfig& cfg) {
    MilParams p;
    p.proj_weight = Eigen::MatrixXd::Zero(cfg.hidden, cfg.features);
    p.proj_bias = Eigen::VectorXd::Zero(cfg.hidden);
    p.attn_v = Eigen::MatrixXd::Zero(cfg.attention, cfg.hidden);
    p.attn_w = Eigen::VectorXd::Zero(cfg.attention);
    if (cfg.gated) p.attn_gate = Eigen::MatrixXd::Zero(cfg.attention, cfg.hidden);
    p.out_weight = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(kNumClasses), cfg.hidden);
    p.out_bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(kNumClasses));
    return p;
  }

  // Weights from the "init" stream, biases zero. attn_w is treated as a
  // D -> 1 layer (fan_in = D).
  static MilParams init(const MilConfig& cfg, std::uint64_t seed) {
    MilParams p = zeros(cfg);
    Rng rng(seed, "init", {0});
    init_uniform(p.proj_weight, rng);
    init_uniform(p.attn_v, rng);
    Eigen::MatrixXd w(1, cfg.attention);
    init_uniform(w, rng);
    p.attn_w = w.row(0).transpose();
    if (cfg.gated) init_uniform(p.attn_gate, rng);
    init_uniform(p.out_weight, rng);
    return p;
  }
};

static_assert(ParameterSet<MilParams>);

struct MilTrace {
  Eigen::MatrixXd hidden;   // N x H, post-relu
  Eigen::MatrixXd tanh_v;   // N x D
  Eigen::MatrixXd gate;     // N x D, gated only
  Eigen::VectorXd logits;   // N, including log-mass offsets
  Eigen::VectorXd weights;  // N, softmax
  Eigen::VectorXd pooled;   // H, before dropout
  Eigen::VectorXd mask;     // H, dropout mask (all ones in eval)
  Eigen::VectorXd output;   // 14
  double input_checksum = 0.0;
  Eigen::Index input_rows = 0;
  Eigen::Index input_cols = 0;
};

namespace detail {
inline Eigen::ArrayXXd sigmoid(const Eigen::ArrayXXd& x) { return 1.0 / (1.0 + (-x).exp()); }
}  // namespace detail

// `mass` optionally gives each instance a multiplicity c_i > 0, so that
// a_i = c_i exp(s_i) / sum_j c_j exp(s_j). An empty span means all ones.
inline MilTrace mil_forward(const MilParams& p, const Eigen::MatrixXd& x, Mode mode, double dropout,
                            Rng* dropout_rng, std::span<const double> mass = {}) {
  if (x.rows() < 1) throw ShapeError("bag must contain at least one instance");
  if (x.cols() != p.features())
    throw ShapeError("bag has " + std::to_string(x.cols()) + " feature columns, model expects " +
                     std::to_string(p.features()));
  if (!mass.empty() && static_cast<Eigen::Index>(mass.size()) != x.rows())
    throw ShapeError("instance mass length does not match bag size");

  MilTrace t;
  t.input_rows = x.rows();
  t.input_cols = x.cols();
  t.input_checksum = x.sum();

  Eigen::MatrixXd pre = x * p.proj_weight.transpose();
  pre.rowwise() += p.proj_bias.transpose();
  t.hidden = pre.cwiseMax(0.0);
  t.tanh_v = (t.hidden * p.attn_v.transpose()).array().tanh().matrix();
  if (p.gated()) {
    t.gate = detail::sigmoid((t.hidden * p.attn_gate.transpose()).array()).matrix();
    t.logits = t.tanh_v.cwiseProduct(t.gate) * p.attn_w;
  } else {
    t.logits = t.tanh_v * p.attn_w;
  }
  if (!mass.empty())
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      if (!(mass[static_cast<std::size_t>(i)] > 0.0)) throw ValidationError("instance mass must be positive");
      t.logits[i] += std::log(mass[static_cast<std::size_t>(i)]);
    }

  const double shift = t.logits.maxCoeff();
  t.weights = (t.logits.array() - shift).exp().matrix();
  t.weights /= t.weights.sum();
  t.pooled = t.hidden.transpose() * t.weights;

  if (mode == Mode::train && dropout > 0.0) {
    if (!dropout_rng) throw ValidationError("train mode needs a dropout stream");
    t.mask = dropout_mask(t.pooled.size(), dropout, *dropout_rng);
  } else {
    t.mask = Eigen::VectorXd::Ones(t.pooled.size());
  }
  t.output = p.out_weight * t.pooled.cwiseProduct(t.mask) + p.out_bias;
  return t;
}

inline MilTrace mil_forward(const MilParams& p, const Bag& bag, Mode mode, double dropout, Rng* dropout_rng) {
  return mil_forward(p, bag.features, mode, dropout, dropout_rng);
}

inline MilParams mil_backward(const MilParams& p, const MilTrace& t, const Eigen::MatrixXd& x,
                              const Eigen::VectorXd& grad_output) {
  if (x.rows() != t.input_rows || x.cols() != t.input_cols || x.sum() != t.input_checksum ||
      t.hidden.cols() != p.hidden())
    throw ValidationError("trace was not produced by this bag and parameter set");
  if (grad_output.size() != static_cast<Eigen::Index>(kNumClasses))
    throw ShapeError("output gradient must have 14 entries");

  MilParams g = zeros_like(p);
  const Eigen::VectorXd dropped = t.pooled.cwiseProduct(t.mask);
  g.out_weight = grad_output * dropped.transpose();
  g.out_bias = grad_output;
  const Eigen::VectorXd d_pooled = (p.out_weight.transpose() * grad_output).cwiseProduct(t.mask);

  // Pooling: z = H^T a.
  Eigen::MatrixXd d_hidden = t.weights * d_pooled.transpose();
  const Eigen::VectorXd d_weights = t.hidden * d_pooled;

  // Softmax Jacobian.
  const double mean_dw = t.weights.dot(d_weights);
  const Eigen::VectorXd d_logits = t.weights.cwiseProduct((d_weights.array() - mean_dw).matrix());

  Eigen::MatrixXd d_tanh;
  if (p.gated()) {
    const Eigen::MatrixXd scored = t.tanh_v.cwiseProduct(t.gate);
    g.attn_w = scored.transpose() * d_logits;
    const Eigen::MatrixXd d_scored = d_logits * p.attn_w.transpose();
    d_tanh = d_scored.cwiseProduct(t.gate);
    const Eigen::MatrixXd d_gate_pre =
        (d_scored.array() * t.tanh_v.array() * t.gate.array() * (1.0 - t.gate.array())).matrix();
    g.attn_gate = d_gate_pre.transpose() * t.hidden;
    d_hidden += d_gate_pre * p.attn_gate;
  } else {
    g.attn_w = t.tanh_v.transpose() * d_logits;
    d_tanh = d_logits * p.attn_w.transpose();
  }
  const Eigen::MatrixXd d_v_pre = (d_tanh.array() * (1.0 - t.tanh_v.array().square())).matrix();
  g.attn_v = d_v_pre.transpose() * t.hidden;
  d_hidden += d_v_pre * p.attn_v;

  const Eigen::MatrixXd d_pre = (d_hidden.array() * (t.hidden.array() > 0.0).cast<double>()).matrix();
  g.proj_weight = d_pre.transpose() * x;
  g.proj_bias = d_pre.colwise().sum().transpose();
  return g;
}

// ---------------------------------------------------------------------------
// Checkpoint: "MILP", u32 version=1, u32 F, u32 H, u32 D, u32 gated, then
// every tensor in field order as float64 little-endian (matrices row-major).
inline std::string encode_mil_checkpoint(const MilParams& p) {
  io::ByteWriter w;
  w.raw("MILP");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(p.features()));
  w.u32(static_cast<std::uint32_t>(p.hidden()));
  w.u32(static_cast<std::uint32_t>(p.attention()));
  w.u32(p.gated() ? 1U : 0U);
  detail::put_tensor(w, p.proj_weight);
  detail::put_tensor(w, p.proj_bias);
  detail::put_tensor(w, p.attn_v);
  detail::put_tensor(w, p.attn_w);
  if (p.gated()) detail::put_tensor(w, p.attn_gate);
  detail::put_tensor(w, p.out_weight);
  detail::put_tensor(w, p.out_bias);
  return w.bytes();
}

inline MilParams decode_mil_checkpoint(std::string_view data, const std::string& name) {
  io::ByteReader r(data, name);
  if (r.raw(4) != "MILP") throw ParseError("'" + name + "': bad magic, expected MILP");
  if (r.u32() != 1) throw ParseError("'" + name + "': unsupported MILP version");
  MilConfig cfg;
  cfg.features = static_cast<int>(r.u32());
  cfg.hidden = static_cast<int>(r.u32());
  cfg.attention = static_cast<int>(r.u32());
  cfg.gated = r.u32() != 0;
  MilParams p = MilParams::zeros(cfg);
  detail::get_tensor(r, p.proj_weight);
  detail::get_vector(r, p.proj_bias);
  detail::get_tensor(r, p.attn_v);
  detail::get_vector(r, p.attn_w);
  if (cfg.gated) detail::get_tensor(r, p.attn_gate);
  detail::get_tensor(r, p.out_weight);
  detail::get_vector(r, p.out_bias);
  if (r.remaining() != 0) throw ParseError("'" + name + "': trailing bytes after parameters");
  return p;
}

}  // namespace milcount
