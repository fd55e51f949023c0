#include "isocal/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "isocal/errors.hpp"
#include "isocal/rng.hpp"

namespace isocal {

namespace {

constexpr double kBceClamp = 1e-12;

double bce_term(double pred, double label, long* clamped) {
    if (pred < kBceClamp || pred > 1.0 - kBceClamp) {
        pred = std::clamp(pred, kBceClamp, 1.0 - kBceClamp);
        if (clamped) ++*clamped;
    }
    return -(label * std::log(pred) + (1.0 - label) * std::log(1.0 - pred));
}

void require_binary_label(double label) {
    if (label != 0.0 && label != 1.0)
        throw DataError("label must be 0 or 1, got " + std::to_string(label));
}

}  // namespace

double bce_loss(std::span<const double> preds, std::span<const double> labels,
                long* clamped_count) {
    if (preds.empty())
        throw DataError("bce_loss: empty input");
    if (preds.size() != labels.size())
        throw DataError("bce_loss: length mismatch");
    double acc = 0.0;
    for (std::size_t k = 0; k < preds.size(); ++k) {
        require_binary_label(labels[k]);
        acc += bce_term(preds[k], labels[k], clamped_count);
    }
    return acc / static_cast<double>(preds.size());
}

GradientBundle backward(double x, double label, const IsotonicParams& params,
                        const IsotonicConfig& cfg, int unit, std::span<const double> offset) {
    params.check_shape(cfg);
    if (unit < 0 || unit >= params.units)
        throw ConfigError("backward: unit index out of range");
    require_binary_label(label);
    const int n = params.buckets;
    if (!offset.empty() && offset.size() != static_cast<std::size_t>(n))
        throw ConfigError("backward: offset length mismatch");

    const double bias = params.bias[static_cast<std::size_t>(unit)];
    const double z = pre_activation_over(x, cfg, params.weight_row(unit), offset, bias);
    const double y = sigmoid(z);
    const double res = y - label;  // dL/dz for BCE on top of sigmoid
    const BucketPoint at = locate_bucket(x, cfg);

    GradientBundle g;
    g.prediction = y;
    g.d_bias = res;
    g.d_weights.assign(static_cast<std::size_t>(n), 0.0);
    if (!offset.empty()) g.d_offsets.assign(static_cast<std::size_t>(n), 0.0);

    auto effective = [&](int j) {
        double w = params.weight(unit, j);
        if (!offset.empty()) w += offset[static_cast<std::size_t>(j)];
        return w;
    };
    for (int j = 0; j < at.index; ++j) {
        if (effective(j) > 0.0) {
            const double d = res * cfg.bucket_width;
            g.d_weights[static_cast<std::size_t>(j)] = d;
            if (!offset.empty()) g.d_offsets[static_cast<std::size_t>(j)] = d;
        }
    }
    const double w_active = effective(at.index);
    if (w_active > 0.0) {
        const double d = res * at.partial;
        g.d_weights[static_cast<std::size_t>(at.index)] = d;
        if (!offset.empty()) g.d_offsets[static_cast<std::size_t>(at.index)] = d;
        g.d_input = at.saturated ? 0.0 : res * w_active;
    }
    return g;
}

double finite_difference_check(const IsotonicParams& params, const IsotonicConfig& cfg,
                               int sample_count, std::uint64_t seed) {
    if (sample_count < 1)
        throw ConfigError("finite_difference_check: sample_count must be >= 1");
    params.check_shape(cfg);
    const double h = 1e-6;
    const int n = params.buckets;
    IsotonicParams work = params;
    Rng rng(seed);

    auto loss_at = [&](double x, double t) {
        const double y = sigmoid(pre_activation(x, work, cfg, 0));
        long clamped = 0;
        return bce_term(y, t, &clamped);
    };
    // Keep the quotient |analytic - fd| / |fd| conditioned: the forward
    // difference must dominate the rounding noise of the loss evaluation.
    auto well_conditioned = [&](double analytic, double loss) {
        return std::abs(analytic) >= 1e-4 * std::max(1.0, std::abs(loss));
    };

    double max_rel = 0.0;
    int checked = 0;
    const long draw_cap = 200L * sample_count;
    for (long draw = 0; draw < draw_cap && checked < sample_count; ++draw) {
        const double x = rng.uniform(cfg.lower_bound, cfg.upper_bound);
        const double t = rng.bernoulli(0.5) ? 1.0 : 0.0;
        const double base_loss = loss_at(x, t);
        GradientBundle g = backward(x, t, work, cfg, 0);
        const BucketPoint at = locate_bucket(x, cfg);

        struct Probe {
            double* slot;       // parameter to wiggle, null for the input
            double analytic;
            bool near_kink;
        };
        const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        const double clip_margin = std::min(x - (cfg.lower_bound + cfg.clip_epsilon),
                                            (cfg.upper_bound - cfg.clip_epsilon) - x);
        const bool input_near_edge = at.saturated || clip_margin <= 10.0 * h ||
                                     at.partial <= 10.0 * h ||
                                     cfg.bucket_width - at.partial <= 10.0 * h;
        Probe probes[3] = {
            {&work.weight(0, j), g.d_weights[static_cast<std::size_t>(j)],
             std::abs(work.weight(0, j)) <= 10.0 * h},
            {&work.bias[0], g.d_bias, false},
            {nullptr, g.d_input, input_near_edge},
        };
        for (const Probe& probe : probes) {
            if (checked >= sample_count) break;
            if (probe.near_kink) continue;
            if (probe.analytic != 0.0 && !well_conditioned(probe.analytic, base_loss)) continue;
            double plus, minus;
            if (probe.slot) {
                const double saved = *probe.slot;
                *probe.slot = saved + h;
                plus = loss_at(x, t);
                *probe.slot = saved - h;
                minus = loss_at(x, t);
                *probe.slot = saved;
            } else {
                plus = loss_at(x + h, t);
                minus = loss_at(x - h, t);
            }
            const double fd = (plus - minus) / (2.0 * h);
            const double rel = std::abs(probe.analytic - fd) / std::max(1e-12, std::abs(fd));
            max_rel = std::max(max_rel, rel);
            ++checked;
        }
    }
    if (checked < sample_count)
        throw NumericError("finite_difference_check: could not find enough valid probes");
    return max_rel;
}

OptimizerKind optimizer_from_name(const std::string& name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + name + "', expected sgd or adam");
}

std::string optimizer_name(OptimizerKind kind) {
    return kind == OptimizerKind::sgd ? "sgd" : "adam";
}

void OptimizerState::step(std::span<double> params, std::span<const double> grads) {
    if (params.size() != grads.size())
        throw ConfigError("optimizer step: parameter/gradient size mismatch");
    for (std::size_t k = 0; k < grads.size(); ++k) {
        if (!std::isfinite(grads[k]))
            throw NumericError("non-finite gradient at coordinate " + std::to_string(k) +
                               ": " + std::to_string(grads[k]));
    }
    ++step_count;
    if (kind == OptimizerKind::sgd) {
        for (std::size_t k = 0; k < params.size(); ++k) params[k] -= lr * grads[k];
        return;
    }
    if (m.empty()) {
        m.assign(params.size(), 0.0);
        v.assign(params.size(), 0.0);
    }
    if (m.size() != params.size())
        throw ConfigError("optimizer step: parameter count changed mid-run");
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (std::size_t k = 0; k < params.size(); ++k) {
        m[k] = beta1 * m[k] + (1.0 - beta1) * grads[k];
        v[k] = beta2 * v[k] + (1.0 - beta2) * grads[k] * grads[k];
        const double mhat = m[k] / bc1;
        const double vhat = v[k] / bc2;
        params[k] -= lr * mhat / (std::sqrt(vhat) + epsilon);
    }
}

FitResult fit(const LabeledDataset& data, const IsotonicConfig& cfg, const FitHyperparams& hp) {
    if (data.rows.empty())
        throw DataError("fit: empty dataset");
    if (!data.has_input)
        throw DataError("fit: dataset has no input column");
    if (hp.epochs < 0 || hp.batch_size < 1)
        throw ConfigError("fit: epochs must be >= 0 and batch_size >= 1");
    for (const DataRow& row : data.rows) require_binary_label(row.label);

    const int n = num_buckets(cfg);
    FitResult out;
    out.params = IsotonicParams::init(cfg, hp.w_init_factor);
    out.report.seed = hp.seed;
    out.report.sample_count = static_cast<long>(data.rows.size());

    // Flat layout: weights of unit 0 followed by its bias.
    std::vector<double> flat(static_cast<std::size_t>(n) + 1);
    std::copy_n(out.params.weights.begin(), n, flat.begin());
    flat[static_cast<std::size_t>(n)] = out.params.bias[0];

    OptimizerState opt;
    opt.kind = hp.optimizer;
    opt.lr = hp.lr;

    Rng rng(hp.seed);
    std::vector<std::size_t> order(data.rows.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> grad(flat.size());

    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        long epoch_rows = 0;
        for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
            const std::size_t stop = std::min(order.size(), start + hp.batch_size);
            const double inv = 1.0 / static_cast<double>(stop - start);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t k = start; k < stop; ++k) {
                const DataRow& row = data.rows[order[k]];
                const BucketPoint at = locate_bucket(row.input, cfg);
                double z = cfg.residue() + flat[static_cast<std::size_t>(n)];
                for (int j = 0; j < at.index; ++j)
                    z += cfg.bucket_width * std::max(0.0, flat[static_cast<std::size_t>(j)]);
                z += at.partial * std::max(0.0, flat[static_cast<std::size_t>(at.index)]);
                const double y = sigmoid(z);
                epoch_loss += bce_term(y, row.label, &out.report.clamped_predictions);
                const double res = (y - row.label) * inv;
                for (int j = 0; j < at.index; ++j)
                    if (flat[static_cast<std::size_t>(j)] > 0.0)
                        grad[static_cast<std::size_t>(j)] += res * cfg.bucket_width;
                if (flat[static_cast<std::size_t>(at.index)] > 0.0)
                    grad[static_cast<std::size_t>(at.index)] += res * at.partial;
                grad[flat.size() - 1] += res;
            }
            epoch_rows += static_cast<long>(stop - start);
            opt.step(flat, grad);
        }
        out.report.epoch_losses.push_back(epoch_loss / static_cast<double>(epoch_rows));
    }

    std::copy_n(flat.begin(), n, out.params.weights.begin());
    out.params.bias[0] = flat[static_cast<std::size_t>(n)];
    out.report.final_loss =
        out.report.epoch_losses.empty() ? 0.0 : out.report.epoch_losses.back();
    return out;
}

CalibrationResult calibrate_frozen(std::span<const double> upstream_scores,
                                   std::span<const double> labels,
                                   std::span<const std::string> contexts,
                                   const IsotonicConfig& cfg, const FitHyperparams& hp,
                                   const std::vector<std::string>& declared_contexts) {
    if (upstream_scores.empty())
        throw DataError("calibrate_frozen: empty input");
    if (upstream_scores.size() != labels.size() || labels.size() != contexts.size())
        throw DataError("calibrate_frozen: column length mismatch");

    std::map<std::string, LabeledDataset> by_context;
    for (const std::string& c : declared_contexts) by_context[c];
    for (std::size_t k = 0; k < upstream_scores.size(); ++k) {
        LabeledDataset& sub = by_context[contexts[k]];
        sub.has_input = true;
        DataRow row;
        row.input = logit(upstream_scores[k]);  // bucketization happens in logit space
        row.label = labels[k];
        row.context_id = contexts[k];
        sub.rows.push_back(std::move(row));
    }

    CalibrationResult out;
    for (auto& [context, sub] : by_context) {
        if (sub.rows.empty()) {
            out.per_context.emplace(context, IsotonicParams::identity(cfg));
            out.identity_fallbacks.push_back(context);
            continue;
        }
        FitResult fitted = fit(sub, cfg, hp);
        out.per_context.emplace(context, std::move(fitted.params));
        out.reports.emplace(context, std::move(fitted.report));
    }
    return out;
}

}  // namespace isocal
