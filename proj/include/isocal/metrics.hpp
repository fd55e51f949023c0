#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

namespace isocal {

// Mann-Whitney AUC with half credit for ties, computed exactly via average
// ranks (half-unit arithmetic, so it equals pair enumeration bitwise).
// Requires both classes.
double auc(std::span<const double> scores, std::span<const double> labels);

// BCE(preds) / BCE(best constant predictor). 1.0 means no lift over the
// base rate; requires both classes (the constant predictor is degenerate
// otherwise).
double normalized_entropy(std::span<const double> preds, std::span<const double> labels);

// Expected calibration error over equal-width bins of [0, 1]:
// sum_k (count_k / n) * |mean_pred_k - mean_label_k| over non-empty bins.
double ece(std::span<const double> preds, std::span<const double> labels, int num_bins = 10);

struct GroupRate {
    double observed = 0.0;   // sum of labels
    double expected = 0.0;   // sum of predictions
    long count = 0;
    bool defined = false;    // false when expected sum is zero
    double ratio = 0.0;
};

// Observed/Expected ratio per group id. Groups whose prediction mass is zero
// are flagged undefined rather than erroring.
std::map<std::string, GroupRate> oe_ratio(std::span<const double> preds,
                                          std::span<const double> labels,
                                          std::span<const std::string> group_ids);

struct EvalReport {
    double auc = 0.0;
    double normalized_entropy = 0.0;
    double ece = 0.0;
    std::map<std::string, GroupRate> oe_by_group;
    long sample_count = 0;
};

EvalReport evaluate(std::span<const double> preds, std::span<const double> labels,
                    std::span<const std::string> group_ids = {}, int ece_bins = 10);

}  // namespace isocal
