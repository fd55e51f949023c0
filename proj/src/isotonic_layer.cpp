#include "isocal/isotonic_layer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace isocal {

void IsotonicConfig::validate() const {
    if (!std::isfinite(lower_bound) || !std::isfinite(upper_bound) || lower_bound >= upper_bound) {
        throw ConfigError("isotonic config: requires lower_bound < upper_bound, got [" +
                          std::to_string(lower_bound) + ", " + std::to_string(upper_bound) + "]");
    }
    if (!(bucket_width > 0.0) || !std::isfinite(bucket_width)) {
        throw ConfigError("isotonic config: bucket_width must be positive");
    }
    if (!(clip_epsilon > 0.0) || clip_epsilon >= bucket_width) {
        throw ConfigError("isotonic config: clip_epsilon must be in (0, bucket_width)");
    }
    if (units < 1) {
        throw ConfigError("isotonic config: units must be >= 1");
    }
    const double q = (upper_bound - lower_bound) / bucket_width;
    if (!std::isfinite(q) || q > 1e8) {
        throw ConfigError("isotonic config: bucket count overflow");
    }
}

int num_buckets(const IsotonicConfig& cfg) {
    cfg.validate();
    const double q = (cfg.upper_bound - cfg.lower_bound) / cfg.bucket_width;
    const double snap = std::nearbyint(q);
    double iceil;
    if (std::abs(q - snap) <= 1e-9 * std::max(1.0, std::abs(q))) {
        iceil = snap;
    } else {
        iceil = std::ceil(q);
    }
    const int n = static_cast<int>(iceil) + 1;
    if (n < 2) {
        throw ConfigError("isotonic config: needs at least 2 buckets");
    }
    return n;
}

double clip_input(double x, const IsotonicConfig& cfg) {
    if (!std::isfinite(x)) {
        throw DataError("clip_input: non-finite input logit");
    }
    return std::clamp(x, cfg.lower_bound + cfg.clip_epsilon, cfg.upper_bound - cfg.clip_epsilon);
}

namespace {

// Shared index/fraction computation. `span_units` is the raw quotient
// (x - L + width) / width; exact integer quotients belong to the higher
// bucket, and near-integers (1e-12 relative) are snapped onto the edge so a
// half-ulp of division noise cannot move a boundary point down a bucket.
int raw_bucket_index(double accumulated, const IsotonicConfig& cfg, int n) {
    const double q = accumulated / cfg.bucket_width;
    const double snap = std::nearbyint(q);
    double idx;
    if (std::abs(q - snap) <= 1e-12 * std::max(1.0, std::abs(q))) {
        idx = snap;
    } else {
        idx = std::floor(q);
    }
    return static_cast<int>(std::clamp(idx, 0.0, static_cast<double>(n - 1)));
}

}  // namespace

int bucket_index(double x_clipped, const IsotonicConfig& cfg) {
    const int n = num_buckets(cfg);
    const double accumulated = x_clipped - cfg.lower_bound + cfg.bucket_width;
    return raw_bucket_index(accumulated, cfg, n);
}

ActivationVector activation_vector(double x_clipped, const IsotonicConfig& cfg) {
    const int n = num_buckets(cfg);
    const double accumulated = x_clipped - cfg.lower_bound + cfg.bucket_width;
    const int i = raw_bucket_index(accumulated, cfg, n);
    ActivationVector out;
    out.source_input = x_clipped;
    out.values.assign(static_cast<std::size_t>(n), 0.0);
    for (int j = 0; j < i; ++j) {
        out.values[static_cast<std::size_t>(j)] = cfg.bucket_width;
    }
    const double partial = std::clamp(accumulated - i * cfg.bucket_width, 0.0, cfg.bucket_width);
    out.values[static_cast<std::size_t>(i)] = partial;
    return out;
}

BucketPoint locate_bucket(double x, const IsotonicConfig& cfg) {
    const int n = num_buckets(cfg);
    BucketPoint p;
    p.clipped = clip_input(x, cfg);
    p.saturated = x <= cfg.lower_bound + cfg.clip_epsilon || x >= cfg.upper_bound - cfg.clip_epsilon;
    const double accumulated = p.clipped - cfg.lower_bound + cfg.bucket_width;
    p.index = raw_bucket_index(accumulated, cfg, n);
    p.partial = std::clamp(accumulated - p.index * cfg.bucket_width, 0.0, cfg.bucket_width);
    return p;
}

IsotonicParams IsotonicParams::init(const IsotonicConfig& cfg, double w_init_factor) {
    const int n = num_buckets(cfg);
    IsotonicParams p;
    p.units = cfg.units;
    p.buckets = n;
    p.weights.assign(static_cast<std::size_t>(cfg.units) * n, w_init_factor);
    p.bias.assign(static_cast<std::size_t>(cfg.units), 0.0);
    return p;
}

IsotonicParams IsotonicParams::identity(const IsotonicConfig& cfg) {
    return init(cfg, 1.0);
}

void IsotonicParams::check_shape(const IsotonicConfig& cfg) const {
    const int n = num_buckets(cfg);
    if (units != cfg.units || buckets != n ||
        weights.size() != static_cast<std::size_t>(units) * n ||
        bias.size() != static_cast<std::size_t>(units)) {
        throw ConfigError("isotonic params: shape does not match config (expected " +
                          std::to_string(cfg.units) + "x" + std::to_string(n) + ")");
    }
}

double pre_activation_over(double x, const IsotonicConfig& cfg,
                           std::span<const double> weight_row,
                           std::span<const double> offset, double bias) {
    const int n = num_buckets(cfg);
    if (weight_row.size() != static_cast<std::size_t>(n)) {
        throw ConfigError("pre_activation: weight row length " +
                          std::to_string(weight_row.size()) + " != bucket count " +
                          std::to_string(n));
    }
    if (!offset.empty() && offset.size() != static_cast<std::size_t>(n)) {
        throw ConfigError("pre_activation: offset length " + std::to_string(offset.size()) +
                          " != bucket count " + std::to_string(n));
    }
    const double xt = clip_input(x, cfg);
    const double accumulated = xt - cfg.lower_bound + cfg.bucket_width;
    const int i = raw_bucket_index(accumulated, cfg, n);
    const double partial = std::clamp(accumulated - i * cfg.bucket_width, 0.0, cfg.bucket_width);

    // Fixed left-to-right sum keeps evaluation deterministic.
    double acc = 0.0;
    if (offset.empty()) {
        for (int j = 0; j < i; ++j) {
            acc += cfg.bucket_width * std::max(0.0, weight_row[static_cast<std::size_t>(j)]);
        }
        acc += partial * std::max(0.0, weight_row[static_cast<std::size_t>(i)]);
    } else {
        for (int j = 0; j < i; ++j) {
            acc += cfg.bucket_width * std::max(0.0, weight_row[static_cast<std::size_t>(j)] +
                                                        offset[static_cast<std::size_t>(j)]);
        }
        acc += partial * std::max(0.0, weight_row[static_cast<std::size_t>(i)] +
                                           offset[static_cast<std::size_t>(i)]);
    }
    return acc + cfg.residue() + bias;
}

double pre_activation(double x, const IsotonicParams& params, const IsotonicConfig& cfg,
                      int unit, std::span<const double> offset) {
    params.check_shape(cfg);
    if (unit < 0 || unit >= params.units) {
        throw ConfigError("pre_activation: unit index out of range");
    }
    return pre_activation_over(x, cfg, params.weight_row(unit), offset,
                               params.bias[static_cast<std::size_t>(unit)]);
}

double forward(double x, const IsotonicParams& params, const IsotonicConfig& cfg,
               int unit, std::span<const double> offset) {
    return sigmoid(pre_activation(x, params, cfg, unit, offset));
}

double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double logit(double p) {
    if (!(p > 0.0) || !(p < 1.0)) {
        throw DataError("logit: argument must lie in (0, 1)");
    }
    return std::log(p / (1.0 - p));
}

}  // namespace isocal
