#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "isocal/dataset.hpp"
#include "isocal/isotonic_layer.hpp"

namespace isocal {

// Mean binary cross entropy. Predictions are clamped to [1e-12, 1 - 1e-12]
// before the logs; when `clamped_count` is non-null it receives the number
// of predictions that needed clamping.
double bce_loss(std::span<const double> preds, std::span<const double> labels,
                long* clamped_count = nullptr);

// Per-example gradients of BCE(sigmoid(z), label) with respect to one unit's
// parameters. d_offsets is filled only when an offset row was supplied.
struct GradientBundle {
    std::vector<double> d_weights;
    std::vector<double> d_offsets;
    double d_bias = 0.0;
    double d_input = 0.0;
    double prediction = 0.0;
};

// Closed-form gradients: the layer is affine in relu(w), so
// dL/dw_j = (y - t) * a_j * [w_j + offset_j > 0], dL/db = y - t, and
// dL/dx = (y - t) * relu(w_i + offset_i) at the active bucket (zero when the
// input was clipped).
GradientBundle backward(double x, double label, const IsotonicParams& params,
                        const IsotonicConfig& cfg, int unit = 0,
                        std::span<const double> offset = {});

// Max relative error between analytic gradients and central finite
// differences (h = 1e-6) over at least `sample_count` random coordinate
// probes. Probes within 10h of a relu kink or bucket/clip boundary are
// skipped, as are probes whose true gradient is too small for the forward
// difference to rise above rounding noise (the quotient is unconditioned
// there; exact zeros are still checked since both sides are exactly zero).
double finite_difference_check(const IsotonicParams& params, const IsotonicConfig& cfg,
                               int sample_count, std::uint64_t seed);

enum class OptimizerKind { sgd, adam };

OptimizerKind optimizer_from_name(const std::string& name);  // "sgd" | "adam"
std::string optimizer_name(OptimizerKind kind);

// Flat first-order optimizer. Moment vectors are sized on the first step;
// later steps must present the same parameter count. The step counter
// advances even for all-zero gradients.
struct OptimizerState {
    OptimizerKind kind = OptimizerKind::adam;
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step_count = 0;
    std::vector<double> m;
    std::vector<double> v;

    void step(std::span<double> params, std::span<const double> grads);
};

struct FitHyperparams {
    int epochs = 40;
    int batch_size = 256;
    double lr = 1e-2;
    OptimizerKind optimizer = OptimizerKind::adam;
    std::uint64_t seed = 1;
    double w_init_factor = 0.1;
};

struct TrainReport {
    std::vector<double> epoch_losses;  // mean training loss per epoch
    double final_loss = 0.0;
    long sample_count = 0;
    long clamped_predictions = 0;
    std::uint64_t seed = 0;
};

struct FitResult {
    IsotonicParams params;
    TrainReport report;
};

// Mini-batch gradient descent on BCE over rows (input logit, binary label).
// Trains unit 0; batch order reshuffles every epoch from the run seed.
FitResult fit(const LabeledDataset& data, const IsotonicConfig& cfg,
              const FitHyperparams& hp);

struct CalibrationResult {
    std::map<std::string, IsotonicParams> per_context;
    std::map<std::string, TrainReport> reports;
    std::vector<std::string> identity_fallbacks;  // declared but unobserved contexts
};

// Post-hoc calibration of a frozen upstream scorer: scores pass through
// logit() and one independent isotonic mapping is trained per context.
// Declared contexts with zero samples fall back to identity parameters and
// are listed in identity_fallbacks.
CalibrationResult calibrate_frozen(std::span<const double> upstream_scores,
                                   std::span<const double> labels,
                                   std::span<const std::string> contexts,
                                   const IsotonicConfig& cfg, const FitHyperparams& hp,
                                   const std::vector<std::string>& declared_contexts = {});

}  // namespace isocal
