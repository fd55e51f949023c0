#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "isocal/baselines.hpp"
#include "isocal/errors.hpp"
#include "isocal/isotonic_layer.hpp"
#include "isocal/rng.hpp"
#include "isocal/training.hpp"

#include <cmath>
#include <cstddef>
#include <vector>

using namespace isocal;

namespace {

// Exhaustive monotone least-squares oracle: the optimum is piecewise
// constant on contiguous blocks with non-decreasing weighted means, so
// minimizing over all 2^(n-1) contiguous partitions that satisfy the
// ordering finds it. Inputs must already have distinct xs.
std::vector<double> brute_force_monotone(const std::vector<double>& ys,
                                         const std::vector<double>& ws) {
    const std::size_t n = ys.size();
    double best_sse = 0.0;
    std::vector<double> best;
    for (unsigned mask = 0; mask < (1u << (n - 1)); ++mask) {
        // Bit k set means a block boundary between k and k+1.
        std::vector<double> fitted(n);
        double sse = 0.0;
        bool feasible = true;
        double prev_mean = -1e300;
        std::size_t start = 0;
        for (std::size_t k = 0; k < n; ++k) {
            const bool boundary = k + 1 == n || (mask >> k) & 1u;
            if (!boundary) continue;
            double mass = 0.0, total = 0.0;
            for (std::size_t j = start; j <= k; ++j) {
                mass += ws[j];
                total += ws[j] * ys[j];
            }
            const double mean = total / mass;
            if (mean < prev_mean) {
                feasible = false;
                break;
            }
            prev_mean = mean;
            for (std::size_t j = start; j <= k; ++j) {
                fitted[j] = mean;
                sse += ws[j] * (ys[j] - mean) * (ys[j] - mean);
            }
            start = k + 1;
        }
        if (!feasible) continue;
        if (best.empty() || sse < best_sse) {
            best_sse = sse;
            best = fitted;
        }
    }
    return best;
}

std::vector<double> fitted_values(const StepFunction& f, const std::vector<double>& xs) {
    std::vector<double> out;
    for (double x : xs) out.push_back(pava_predict(f, x));
    return out;
}

}  // namespace

TEST_CASE("pava leaves monotone targets untouched") {
    const std::vector<double> xs = {0.0, 1.0, 2.0};
    const std::vector<double> ys = {1.0, 2.0, 3.0};
    const StepFunction f = pava_fit(xs, ys);
    CHECK(fitted_values(f, xs) == ys);
}

TEST_CASE("pava pools a single violation to the weighted mean") {
    const std::vector<double> xs = {0.0, 1.0, 2.0};
    const std::vector<double> ys = {1.0, 2.0, 1.5};
    const StepFunction f = pava_fit(xs, ys);
    const std::vector<double> expected = {1.0, 1.75, 1.75};
    CHECK(fitted_values(f, xs) == expected);
}

TEST_CASE("pava on constant targets is constant") {
    const std::vector<double> xs = {0.0, 0.5, 1.0, 2.0};
    const std::vector<double> ys = {0.3, 0.3, 0.3, 0.3};
    const StepFunction f = pava_fit(xs, ys);
    for (double x : {-1.0, 0.25, 3.0}) CHECK(pava_predict(f, x) == 0.3);
}

TEST_CASE("pava matches the exhaustive partition oracle on short inputs") {
    Rng rng(71);
    for (int rep = 0; rep < 400; ++rep) {
        const std::size_t n = 1 + rng.below(8);
        std::vector<double> xs, ys, ws;
        double x = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            x += 0.1 + rng.uniform();
            xs.push_back(x);
            ys.push_back(rng.uniform(-2.0, 2.0));
            ws.push_back(rep % 3 == 0 ? 1.0 : rng.uniform(0.1, 4.0));
        }
        const StepFunction f = pava_fit(xs, ys, ws);
        const std::vector<double> got = fitted_values(f, xs);
        const std::vector<double> want = brute_force_monotone(ys, ws);
        for (std::size_t k = 0; k < n; ++k)
            CHECK(std::abs(got[k] - want[k]) < 1e-10);
    }
}

TEST_CASE("pava output is monotone and preserves the weighted sum") {
    Rng rng(72);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 2 + rng.below(40);
        std::vector<double> xs, ys, ws;
        double x = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            x += 0.01 + rng.uniform();
            xs.push_back(x);
            ys.push_back(rng.uniform(-1.0, 1.0));
            ws.push_back(rng.uniform(0.2, 3.0));
        }
        const StepFunction f = pava_fit(xs, ys, ws);
        double before = 0.0, after = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            before += ws[k] * ys[k];
            after += ws[k] * pava_predict(f, xs[k]);
        }
        CHECK(std::abs(before - after) < 1e-9);
        for (std::size_t k = 1; k < f.levels.size(); ++k) {
            CHECK(f.levels[k] >= f.levels[k - 1]);
            CHECK(f.breakpoints[k] > f.breakpoints[k - 1]);
        }
    }
}

TEST_CASE("pava is idempotent") {
    Rng rng(73);
    std::vector<double> xs, ys;
    double x = 0.0;
    for (int k = 0; k < 60; ++k) {
        x += 0.05 + rng.uniform();
        xs.push_back(x);
        ys.push_back(rng.uniform(0.0, 1.0));
    }
    const StepFunction f = pava_fit(xs, ys);
    const std::vector<double> once = fitted_values(f, xs);
    const StepFunction g = pava_fit(xs, once);
    CHECK(fitted_values(g, xs) == once);
}

TEST_CASE("pava pre-pools tied inputs") {
    const std::vector<double> xs = {1.0, 1.0, 2.0};
    const std::vector<double> ys = {0.0, 1.0, 0.2};
    const StepFunction f = pava_fit(xs, ys);
    // Tied pair pools to mean 0.5 with weight 2; the remaining violation
    // pools everything to 1.2/3.
    REQUIRE(f.breakpoints.size() == 2);
    CHECK(f.breakpoints[0] == 1.0);
    CHECK(f.breakpoints[1] == 2.0);
    CHECK(std::abs(pava_predict(f, 1.0) - 0.4) < 1e-12);
    CHECK(std::abs(pava_predict(f, 2.0) - 0.4) < 1e-12);
}

TEST_CASE("pava predict clamps outside the fitted range") {
    const std::vector<double> xs = {0.0, 1.0, 2.0};
    const std::vector<double> ys = {0.1, 0.5, 0.9};
    const StepFunction f = pava_fit(xs, ys);
    CHECK(pava_predict(f, -5.0) == 0.1);
    CHECK(pava_predict(f, 5.0) == 0.9);
    CHECK(pava_predict(f, 1.5) == 0.5);
    CHECK(pava_predict(f, 1.0) == 0.5);
}

TEST_CASE("pava rejects malformed inputs") {
    const std::vector<double> empty;
    CHECK_THROWS_AS(pava_fit(empty, empty), DataError);
    const std::vector<double> xs = {1.0, 0.5};
    const std::vector<double> ys = {0.0, 1.0};
    CHECK_THROWS_AS(pava_fit(xs, ys), DataError);
    const std::vector<double> xs2 = {0.5, 1.0};
    const std::vector<double> bad_w = {1.0, 0.0};
    CHECK_THROWS_AS(pava_fit(xs2, ys, bad_w), DataError);
    const std::vector<double> short_ys = {0.0};
    CHECK_THROWS_AS(pava_fit(xs2, short_ys), DataError);
}

TEST_CASE("platt recovers identity on well-calibrated logits") {
    Rng rng(74);
    std::vector<double> scores, labels;
    for (int k = 0; k < 20000; ++k) {
        const double s = rng.normal() * 2.0;
        scores.push_back(s);
        labels.push_back(rng.bernoulli(sigmoid(s)) ? 1.0 : 0.0);
    }
    const PlattParams p = platt_fit(scores, labels);
    CHECK(std::abs(p.slope - 1.0) < 0.05);
    CHECK(std::abs(p.intercept) < 0.05);
}

TEST_CASE("platt collapses to the base rate on uninformative scores") {
    Rng rng(75);
    std::vector<double> scores, labels;
    for (int k = 0; k < 20000; ++k) {
        scores.push_back(rng.normal());
        labels.push_back(rng.bernoulli(0.3) ? 1.0 : 0.0);
    }
    const PlattParams p = platt_fit(scores, labels);
    CHECK(std::abs(p.slope) < 0.05);
    for (double s : {-2.0, 0.0, 2.0})
        CHECK(std::abs(platt_predict(p, s) - 0.3) < 0.02);
}

TEST_CASE("platt slope flips sign exactly under score negation") {
    Rng rng(76);
    std::vector<double> scores, neg, labels;
    for (int k = 0; k < 500; ++k) {
        const double s = rng.normal();
        scores.push_back(s);
        neg.push_back(-s);
        labels.push_back(rng.bernoulli(sigmoid(1.5 * s)) ? 1.0 : 0.0);
    }
    const PlattParams a = platt_fit(scores, labels);
    const PlattParams b = platt_fit(neg, labels);
    // Negation is exact in IEEE arithmetic and the fit starts from A=B=0,
    // so every iterate mirrors bitwise, not just approximately.
    CHECK(b.slope == -a.slope);
    CHECK(b.intercept == a.intercept);
}

TEST_CASE("platt requires both classes") {
    const std::vector<double> scores = {0.1, 0.2, 0.3};
    const std::vector<double> ones = {1.0, 1.0, 1.0};
    const std::vector<double> zeros = {0.0, 0.0, 0.0};
    CHECK_THROWS_AS(platt_fit(scores, ones), DataError);
    CHECK_THROWS_AS(platt_fit(scores, zeros), DataError);
    const std::vector<double> mismatch = {1.0};
    CHECK_THROWS_AS(platt_fit(scores, mismatch), DataError);
}

TEST_CASE("trained layer tracks pava loss on shared data") {
    Rng rng(77);
    LabeledDataset data;
    data.has_input = true;
    std::vector<double> xs, ys;
    for (int k = 0; k < 4000; ++k) {
        const double x = rng.uniform_open();
        DataRow row;
        row.input = logit(x);
        row.label = rng.bernoulli(x * x) ? 1.0 : 0.0;
        data.rows.push_back(row);
        xs.push_back(x);
        ys.push_back(row.label);
    }
    IsotonicConfig cfg;
    FitHyperparams hp;
    hp.epochs = 150;
    hp.lr = 3e-3;
    hp.seed = 7;
    const FitResult fitres = fit(data, cfg, hp);

    std::vector<std::size_t> order(xs.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> sx, sy;
    for (std::size_t k : order) {
        sx.push_back(xs[k]);
        sy.push_back(ys[k]);
    }
    const StepFunction staircase = pava_fit(sx, sy);

    std::vector<double> layer_preds, pava_preds, labels;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        layer_preds.push_back(forward(logit(xs[k]), fitres.params, cfg));
        // Clamp the staircase into the open interval bce_loss expects.
        pava_preds.push_back(std::clamp(pava_predict(staircase, xs[k]), 1e-9, 1.0 - 1e-9));
        labels.push_back(ys[k]);
    }
    const double layer_bce = bce_loss(layer_preds, labels);
    const double pava_bce = bce_loss(pava_preds, labels);
    // PAVA fits the staircase directly to these labels, so it keeps a small
    // in-sample edge over the stochastically optimized layer. Observed gap
    // at these hyperparameters is ~0.008; 0.015 leaves headroom.
    CHECK(layer_bce <= pava_bce + 0.015);
}
