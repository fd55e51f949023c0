#include "isocal/baselines.hpp"

#include <cmath>
#include <string>

#include "isocal/errors.hpp"
#include "isocal/isotonic_layer.hpp"

namespace isocal {

StepFunction pava_fit(std::span<const double> xs, std::span<const double> ys,
                      std::span<const double> weights) {
    if (xs.empty())
        throw DataError("pava_fit: empty input");
    if (xs.size() != ys.size() || (!weights.empty() && weights.size() != xs.size()))
        throw DataError("pava_fit: length mismatch");
    for (std::size_t k = 1; k < xs.size(); ++k)
        if (xs[k] < xs[k - 1])
            throw DataError("pava_fit: xs must be sorted ascending");
    for (std::size_t k = 0; k < weights.size(); ++k)
        if (!(weights[k] > 0.0))
            throw DataError("pava_fit: weights must be positive");

    // Pre-pool exact ties in x into single weighted points so the staircase
    // has strictly increasing breakpoints.
    std::vector<double> px, py, pw;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const double w = weights.empty() ? 1.0 : weights[k];
        if (!px.empty() && xs[k] == px.back()) {
            const double total = pw.back() + w;
            py.back() = (pw.back() * py.back() + w * ys[k]) / total;
            pw.back() = total;
        } else {
            px.push_back(xs[k]);
            py.push_back(ys[k]);
            pw.push_back(w);
        }
    }

    // Stack of pooled blocks; a new point merges backwards while it violates
    // the non-decreasing constraint against the block below.
    struct Block {
        double mean, weight;
        std::size_t first;
    };
    std::vector<Block> stack;
    for (std::size_t k = 0; k < px.size(); ++k) {
        Block b{py[k], pw[k], k};
        while (!stack.empty() && stack.back().mean >= b.mean) {
            const Block& prev = stack.back();
            const double total = prev.weight + b.weight;
            b.mean = (prev.weight * prev.mean + b.weight * b.mean) / total;
            b.weight = total;
            b.first = prev.first;
            stack.pop_back();
        }
        stack.push_back(b);
    }

    StepFunction f;
    f.breakpoints.reserve(px.size());
    f.levels.reserve(px.size());
    std::size_t block = 0;
    for (std::size_t k = 0; k < px.size(); ++k) {
        if (block + 1 < stack.size() && stack[block + 1].first <= k) ++block;
        f.breakpoints.push_back(px[k]);
        f.levels.push_back(stack[block].mean);
    }
    return f;
}

double pava_predict(const StepFunction& f, double x) {
    if (f.breakpoints.empty())
        throw DataError("pava_predict: unfitted step function");
    if (x < f.breakpoints.front()) return f.levels.front();
    // Last breakpoint <= x.
    std::size_t lo = 0, hi = f.breakpoints.size() - 1;
    while (lo < hi) {
        const std::size_t mid = (lo + hi + 1) / 2;
        if (f.breakpoints[mid] <= x)
            lo = mid;
        else
            hi = mid - 1;
    }
    return f.levels[lo];
}

PlattParams platt_fit(std::span<const double> scores, std::span<const double> labels) {
    if (scores.empty() || scores.size() != labels.size())
        throw DataError("platt_fit: empty input or length mismatch");
    long pos = 0, neg = 0;
    for (double t : labels) {
        if (t == 1.0)
            ++pos;
        else if (t == 0.0)
            ++neg;
        else
            throw DataError("platt_fit: labels must be 0 or 1");
    }
    if (pos == 0 || neg == 0)
        throw DataError("platt_fit: both classes required");
    const double t_pos = (pos + 1.0) / (pos + 2.0);
    const double t_neg = 1.0 / (neg + 2.0);
    const double n = static_cast<double>(scores.size());

    auto loss_and_grad = [&](double a, double b, double* ga, double* gb) {
        double loss = 0.0, da = 0.0, db = 0.0;
        for (std::size_t k = 0; k < scores.size(); ++k) {
            const double t = labels[k] == 1.0 ? t_pos : t_neg;
            const double y = sigmoid(a * scores[k] + b);
            const double yc = std::clamp(y, 1e-12, 1.0 - 1e-12);
            loss += -(t * std::log(yc) + (1.0 - t) * std::log(1.0 - yc));
            const double r = y - t;
            da += r * scores[k];
            db += r;
        }
        if (ga) *ga = da / n;
        if (gb) *gb = db / n;
        return loss / n;
    };

    double a = 0.0, b = 0.0;
    double lr = 1.0;
    double ga = 0.0, gb = 0.0;
    double loss = loss_and_grad(a, b, &ga, &gb);
    for (int iter = 0; iter < 200000; ++iter) {
        const double na = a - lr * ga;
        const double nb = b - lr * gb;
        double nga, ngb;
        const double next = loss_and_grad(na, nb, &nga, &ngb);
        if (next > loss) {
            lr *= 0.5;  // backtrack without accepting the step
            if (lr < 1e-14)
                break;
            continue;
        }
        const double gain = loss - next;
        a = na;
        b = nb;
        ga = nga;
        gb = ngb;
        loss = next;
        lr *= 1.1;  // relax after an accepted step
        if (gain < 1e-10)
            break;
    }
    if (!std::isfinite(a) || !std::isfinite(b))
        throw NumericError("platt_fit: diverged");
    return {a, b};
}

double platt_predict(const PlattParams& p, double score) {
    return sigmoid(p.slope * score + p.intercept);
}

}  // namespace isocal
