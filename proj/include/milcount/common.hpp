#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace milcount {

// Droplet classes 1..14; bin k holds class k+1.
inline constexpr std::size_t kNumClasses = 14;

// Class 14 collects every cell with more than this many droplets.
inline constexpr long long kMaxExactDroplets = 12;

enum class Mode { train, eval };

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Per-slide droplet-class histogram. Ground-truth entries are integral.
struct CountVector {
  std::array<double, kNumClasses> bins{};

  double& operator[](std::size_t k) { return bins[k]; }
  double operator[](std::size_t k) const { return bins[k]; }

  double total() const {
    double s = 0.0;
    for (double b : bins) s += b;
    return s;
  }

  // Dominant class bin, ties resolved toward the lowest index.
  std::size_t argmax() const {
    std::size_t best = 0;
    for (std::size_t k = 1; k < kNumClasses; ++k)
      if (bins[k] > bins[best]) best = k;
    return best;
  }

  friend bool operator==(const CountVector&, const CountVector&) = default;
};

}  // namespace milcount
