#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "common.hpp"
#include "io.hpp"
#include "params.hpp"
#include "rng.hpp"

namespace milcount {

struct MlpConfig {
  // Layer widths from input to output; hidden layers use relu + dropout.
  std::vector<int> dims = {static_cast<int>(kNumClasses), 64, 64, static_cast<int>(kNumClasses)};
  double dropout = 0.25;
};

struct MlpLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

struct MlpParams {
  std::vector<MlpLayer> layers;

  std::vector<TensorView> tensors() {
    std::vector<TensorView> t;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      t.push_back({"layer" + std::to_string(l) + ".weight", flat(layers[l].weight)});
      t.push_back({"layer" + std::to_string(l) + ".bias", flat(layers[l].bias)});
    }
    return t;
  }

  int inputs() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols()); }

  std::vector<int> dims() const {
    std::vector<int> d;
    if (layers.empty()) return d;
    d.push_back(inputs());
    for (const auto& l : layers) d.push_back(static_cast<int>(l.weight.rows()));
    return d;
  }

  static MlpParams zeros(const MlpConfig& cfg) {
    if (cfg.dims.size() < 2) throw ValidationError("MLP needs at least input and output widths");
    MlpParams p;
    for (std::size_t l = 0; l + 1 < cfg.dims.size(); ++l)
      p.layers.push_back({Eigen::MatrixXd::Zero(cfg.dims[l + 1], cfg.dims[l]), Eigen::VectorXd::Zero(cfg.dims[l + 1])});
    return p;
  }

  static MlpParams init(const MlpConfig& cfg, std::uint64_t seed) {
    MlpParams p = zeros(cfg);
    Rng rng(seed, "init", {1});
    for (auto& l : p.layers) init_uniform(l.weight, rng);
    return p;
  }
};

static_assert(ParameterSet<MlpParams>);

struct MlpTrace {
  std::vector<Eigen::VectorXd> inputs;  // input to each layer (after relu/dropout)
  std::vector<Eigen::VectorXd> pre;     // hidden pre-activations
  std::vector<Eigen::VectorXd> masks;   // hidden dropout masks
  Eigen::VectorXd output;
};

inline MlpTrace mlp_forward(const MlpParams& p, const Eigen::VectorXd& x, Mode mode, double dropout,
                            Rng* dropout_rng) {
  if (p.layers.empty()) throw ValidationError("MLP has no layers");
  if (x.size() != p.inputs())
    throw ShapeError("MLP expects " + std::to_string(p.inputs()) + " inputs, got " + std::to_string(x.size()));
  MlpTrace t;
  Eigen::VectorXd a = x;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    t.inputs.push_back(a);
    Eigen::VectorXd z = p.layers[l].weight * a + p.layers[l].bias;
    if (l + 1 == p.layers.size()) {
      t.output = std::move(z);
      break;
    }
    Eigen::VectorXd mask;
    if (mode == Mode::train && dropout > 0.0) {
      if (!dropout_rng) throw ValidationError("train mode needs a dropout stream");
      mask = dropout_mask(z.size(), dropout, *dropout_rng);
    } else {
      mask = Eigen::VectorXd::Ones(z.size());
    }
    a = z.cwiseMax(0.0).cwiseProduct(mask);
    t.pre.push_back(std::move(z));
    t.masks.push_back(std::move(mask));
  }
  return t;
}

inline MlpParams mlp_backward(const MlpParams& p, const MlpTrace& t, const Eigen::VectorXd& grad_output) {
  if (t.inputs.size() != p.layers.size() || t.pre.size() + 1 != p.layers.size())
    throw ValidationError("trace does not match the MLP layer structure");
  for (std::size_t l = 0; l < p.layers.size(); ++l)
    if (t.inputs[l].size() != p.layers[l].weight.cols())
      throw ValidationError("trace does not match the MLP layer widths");
  if (grad_output.size() != p.layers.back().weight.rows()) throw ShapeError("output gradient has wrong length");

  MlpParams g = zeros_like(p);
  Eigen::VectorXd delta = grad_output;
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    g.layers[l].weight = delta * t.inputs[l].transpose();
    g.layers[l].bias = delta;
    if (l == 0) break;
    const Eigen::VectorXd up = p.layers[l].weight.transpose() * delta;
    delta = (up.array() * t.masks[l - 1].array() * (t.pre[l - 1].array() > 0.0).cast<double>()).matrix();
  }
  return g;
}

// Checkpoint: "MLPP", u32 version=1, u32 n_dims, u32 dims..., then per layer
// weight (row-major) and bias as float64 little-endian.
inline std::string encode_mlp_checkpoint(const MlpParams& p) {
  io::ByteWriter w;
  w.raw("MLPP");
  w.u32(1);
  const auto dims = p.dims();
  w.u32(static_cast<std::uint32_t>(dims.size()));
  for (int d : dims) w.u32(static_cast<std::uint32_t>(d));
  for (const auto& l : p.layers) {
    detail::put_tensor(w, l.weight);
    detail::put_tensor(w, l.bias);
  }
  return w.bytes();
}

inline MlpParams decode_mlp_checkpoint(std::string_view data, const std::string& name) {
  io::ByteReader r(data, name);
  if (r.raw(4) != "MLPP") throw ParseError("'" + name + "': bad magic, expected MLPP");
  if (r.u32() != 1) throw ParseError("'" + name + "': unsupported MLPP version");
  MlpConfig cfg;
  cfg.dims.assign(r.u32(), 0);
  for (auto& d : cfg.dims) d = static_cast<int>(r.u32());
  MlpParams p = MlpParams::zeros(cfg);
  for (auto& l : p.layers) {
    detail::get_tensor(r, l.weight);
    detail::get_vector(r, l.bias);
  }
  if (r.remaining() != 0) throw ParseError("'" + name + "': trailing bytes after parameters");
  return p;
}

}  // namespace milcount
