#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "common.hpp"
#include "io.hpp"
#include "rng.hpp"

namespace milcount {

// Flat view over one named parameter tensor. Parameter structs expose their
// tensors through `tensors()` in declared field order; the optimizer and the
// gradient utilities work on these views only.
struct TensorView {
  std::string name;
  std::span<double> data;
};

template <typename Derived>
std::span<double> flat(Eigen::PlainObjectBase<Derived>& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

template <typename P>
concept ParameterSet = requires(P& p) {
  { p.tensors() } -> std::same_as<std::vector<TensorView>>;
};

template <ParameterSet P>
P zeros_like(const P& p) {
  P z = p;
  for (auto& t : z.tensors()) std::fill(t.data.begin(), t.data.end(), 0.0);
  return z;
}

// acc += scale * g
template <ParameterSet P>
void accumulate(P& acc, const P& g, double scale = 1.0) {
  auto a = acc.tensors();
  auto b = const_cast<P&>(g).tensors();
  for (std::size_t t = 0; t < a.size(); ++t)
    for (std::size_t i = 0; i < a[t].data.size(); ++i) a[t].data[i] += scale * b[t].data[i];
}

template <ParameterSet P>
void scale(P& p, double s) {
  for (auto& t : p.tensors())
    for (double& v : t.data) v *= s;
}

template <ParameterSet P>
std::size_t parameter_count(const P& p) {
  std::size_t n = 0;
  for (auto& t : const_cast<P&>(p).tensors()) n += t.data.size();
  return n;
}

template <ParameterSet P>
bool bitwise_equal(const P& a, const P& b) {
  auto ta = const_cast<P&>(a).tensors();
  auto tb = const_cast<P&>(b).tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t t = 0; t < ta.size(); ++t)
    if (ta[t].data.size() != tb[t].data.size() ||
        std::memcmp(ta[t].data.data(), tb[t].data.data(), ta[t].data.size() * sizeof(double)) != 0)
      return false;
  return true;
}

// Uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)), filled row by row.
inline void init_uniform(Eigen::MatrixXd& w, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(w.cols()));
  for (Eigen::Index r = 0; r < w.rows(); ++r)
    for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-bound, bound);
}

// Inverted dropout mask: survivors carry 1/(1-p), dropped units 0.
inline Eigen::VectorXd dropout_mask(Eigen::Index n, double p, Rng& rng) {
  Eigen::VectorXd m(n);
  const double keep_scale = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < n; ++i) m[i] = rng.uniform() < p ? 0.0 : keep_scale;
  return m;
}

namespace detail {

inline void put_tensor(io::ByteWriter& w, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) w.f64(m(r, c));
}

inline void get_tensor(io::ByteReader& r, Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      m(i, c) = r.f64();
      if (!std::isfinite(m(i, c))) throw ParseError("'" + r.name() + "': non-finite parameter");
    }
}

inline void get_vector(io::ByteReader& r, Eigen::VectorXd& v) {
  Eigen::MatrixXd m(v.size(), 1);
  get_tensor(r, m);
  v = m.col(0);
}

}  // namespace detail

}  // namespace milcount
