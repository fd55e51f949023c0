#pragma once

#include <span>
#include <vector>

namespace isocal {

// Right-continuous staircase fitted by isotonic regression: value at x is
// the level of the last breakpoint <= x, clamped to the end levels outside
// the fitted range.
struct StepFunction {
    std::vector<double> breakpoints;  // strictly increasing
    std::vector<double> levels;       // non-decreasing
};

// Weighted least-squares monotone (non-decreasing) regression by pool
// adjacent violators. xs must be sorted ascending; tied xs are pre-pooled
// into one weighted point. Empty weights means unit weights.
StepFunction pava_fit(std::span<const double> xs, std::span<const double> ys,
                      std::span<const double> weights = {});

double pava_predict(const StepFunction& f, double x);

struct PlattParams {
    double slope = 0.0;
    double intercept = 0.0;
};

// Logistic recalibration sigmoid(A*s + B) fitted by full-batch gradient
// descent with backtracking on the smoothed targets t+ = (n+ + 1)/(n+ + 2),
// t- = 1/(n- + 2). Requires both classes present.
PlattParams platt_fit(std::span<const double> scores, std::span<const double> labels);

double platt_predict(const PlattParams& p, double score);

}  // namespace isocal
