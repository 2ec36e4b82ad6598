#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "metaharness/errors.hpp"
#include "metaharness/metrics.hpp"

namespace metaharness {

// Post-hoc probability calibration heads. Both map a raw decision score
// (unbounded margin or log-odds) to a probability in [0, 1].

// Nondecreasing step function: one breakpoint per distinct input score.
struct IsotonicMap {
  std::vector<double> thresholds;  // strictly increasing
  std::vector<double> values;      // nondecreasing, same length
};

// p(s) = 1 / (1 + exp(a*s + b)). Probability increases with s when a < 0.
struct SigmoidParams {
  double a = 0.0;
  double b = 0.0;
};

// Pool-adjacent-violators on (score, label) pairs, identical scores pre-pooled
// so the fit is order-independent. Requires n >= 2.
IsotonicMap fit_isotonic(const VectorRef& scores, const LabelRef& labels);

// Platt scaling against the usual pseudo-targets t+ = (N+ + 1)/(N+ + 2),
// t- = 1/(N- + 2), by damped Newton iteration (grad tol 1e-8, cap 100).
// Requires both classes.
SigmoidParams fit_platt(const VectorRef& scores, const LabelRef& labels);

// Step-interpolated lookup: value of the greatest breakpoint <= score,
// clamped to the first/last fitted value outside the fitted range.
double apply_calibrator(const IsotonicMap& map, double score);
double apply_calibrator(const SigmoidParams& params, double score);

enum class HeadKind { isotonic, sigmoid };

const char* head_kind_to_string(HeadKind k);
HeadKind head_kind_from_string(const std::string& s);

// Tagged union so fitted controllers can carry either head uniformly.
struct CalibrationHead {
  HeadKind kind = HeadKind::isotonic;
  IsotonicMap isotonic;
  SigmoidParams sigmoid;

  double apply(double score) const {
    return kind == HeadKind::isotonic ? apply_calibrator(isotonic, score)
                                      : apply_calibrator(sigmoid, score);
  }
};

CalibrationHead fit_head(HeadKind kind, const VectorRef& scores, const LabelRef& labels);

}  // namespace metaharness
