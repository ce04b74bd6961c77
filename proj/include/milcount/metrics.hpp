#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include <Eigen/Dense>

#include "common.hpp"

namespace milcount {

struct ErrorPair {
  double mae = 0.0;
  double mse = 0.0;
};

// Errors in count space: predictions are mapped back with expm1 and clamped
// at zero, then averaged over the 14 bins.
inline ErrorPair slide_metrics(const Eigen::VectorXd& log_pred, const CountVector& truth) {
  if (log_pred.size() != static_cast<Eigen::Index>(kNumClasses)) throw ShapeError("prediction must have 14 bins");
  ErrorPair e;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    const double c = std::max(0.0, std::expm1(log_pred[static_cast<Eigen::Index>(k)]));
    const double d = c - truth[k];
    e.mae += std::fabs(d);
    e.mse += d * d;
  }
  e.mae /= static_cast<double>(kNumClasses);
  e.mse /= static_cast<double>(kNumClasses);
  return e;
}

inline ErrorPair dataset_metrics(std::span<const Eigen::VectorXd> log_preds, std::span<const CountVector> truths) {
  if (log_preds.empty()) throw ValidationError("cannot score an empty split");
  if (log_preds.size() != truths.size()) throw ShapeError("prediction and label counts differ");
  ErrorPair sum;
  for (std::size_t i = 0; i < log_preds.size(); ++i) {
    const auto e = slide_metrics(log_preds[i], truths[i]);
    sum.mae += e.mae;
    sum.mse += e.mse;
  }
  const double n = static_cast<double>(log_preds.size());
  return {sum.mae / n, sum.mse / n};
}

}  // namespace milcount
