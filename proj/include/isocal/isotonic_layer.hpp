#pragma once

#include <span>
#include <vector>

#include "isocal/errors.hpp"

namespace isocal {

// Bucketization geometry shared by every layer instance. The input domain
// [lower_bound, upper_bound] (logit units) is split into fixed-width buckets;
// an input fully activates every bucket below it and partially activates its
// own, so a dot product with non-negative bucket weights is automatically
// monotone non-decreasing in the input.
struct IsotonicConfig {
    double lower_bound = -17.0;
    double upper_bound = 8.0;
    // Library default 0.05; the compact reference configuration uses 0.2.
    double bucket_width = 0.05;
    int units = 1;
    double clip_epsilon = 1e-9;

    // Constant residue offset added to the pre-activation so that unit
    // weights reproduce the identity map in logit space. Always derived,
    // never stored independently.
    double residue() const { return lower_bound - bucket_width; }

    void validate() const;  // throws ConfigError
};

// N = ceil((U - L) / width) + 1. The quotient is snapped to the nearest
// integer when it is within 1e-9 relative, so representation noise in the
// bounds cannot add a phantom bucket.
int num_buckets(const IsotonicConfig& cfg);

// Clamp x into [L + eps, U - eps]. Identity for interior points.
// Throws DataError for non-finite input.
double clip_input(double x, const IsotonicConfig& cfg);

// Bucket index i = floor((x - L + width) / width), clamped to [0, N-1].
// Exact bucket edges belong to the higher bucket; a quotient within 1e-12
// relative of an integer is treated as that edge.
int bucket_index(double x_clipped, const IsotonicConfig& cfg);

// Per-input bucket contributions: full width below the active bucket, the
// fractional remainder at it, zero above. Entries lie in [0, width] and sum
// to x_clipped - residue.
struct ActivationVector {
    std::vector<double> values;
    double source_input = 0.0;
};

ActivationVector activation_vector(double x_clipped, const IsotonicConfig& cfg);

// Sparse view of the activation: active bucket index, fractional fill of
// that bucket, and whether the raw input sat on or beyond a clip edge (where
// the layer is constant and the input gradient vanishes). Equivalent to
// activation_vector without materializing the dense vector.
struct BucketPoint {
    double clipped = 0.0;
    int index = 0;
    double partial = 0.0;  // in [0, width]
    bool saturated = false;
};

BucketPoint locate_bucket(double x, const IsotonicConfig& cfg);

// Learnable state for one layer: one unconstrained weight row per unit plus
// a per-unit bias. Non-negativity is enforced at evaluation time via a ReLU
// view, so gradient steps can never break monotonicity.
struct IsotonicParams {
    int units = 0;
    int buckets = 0;
    std::vector<double> weights;  // units x buckets, row-major
    std::vector<double> bias;     // length units

    static IsotonicParams init(const IsotonicConfig& cfg, double w_init_factor = 0.1);
    // w = 1, b = 0: reproduces z(x) = x on the clipped domain.
    static IsotonicParams identity(const IsotonicConfig& cfg);

    double weight(int unit, int j) const {
        return weights[static_cast<std::size_t>(unit) * buckets + j];
    }
    double& weight(int unit, int j) {
        return weights[static_cast<std::size_t>(unit) * buckets + j];
    }
    std::span<const double> weight_row(int unit) const {
        return {weights.data() + static_cast<std::size_t>(unit) * buckets,
                static_cast<std::size_t>(buckets)};
    }

    void check_shape(const IsotonicConfig& cfg) const;  // throws ConfigError
};

// Pre-sigmoid output z = sum_j a_j * relu(w_j [+ offset_j]) + residue + bias
// over an explicit weight row. Building block for the parameter and
// context-conditioned entry points below.
double pre_activation_over(double x, const IsotonicConfig& cfg,
                           std::span<const double> weight_row,
                           std::span<const double> offset, double bias);

// z for one unit of `params`; `offset`, when non-empty, is added to the
// weight row before the ReLU gate (length must equal num_buckets).
double pre_activation(double x, const IsotonicParams& params, const IsotonicConfig& cfg,
                      int unit = 0, std::span<const double> offset = {});

// y = sigmoid(z). Pure; safe to call concurrently on shared params.
double forward(double x, const IsotonicParams& params, const IsotonicConfig& cfg,
               int unit = 0, std::span<const double> offset = {});

double sigmoid(double z);
double logit(double p);

}  // namespace isocal
