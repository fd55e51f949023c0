#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "isocal/rng.hpp"
#include "isocal/training.hpp"

using namespace isocal;

namespace {

IsotonicConfig small_cfg() {
    IsotonicConfig cfg;
    cfg.lower_bound = -4.0;
    cfg.upper_bound = 4.0;
    cfg.bucket_width = 0.25;
    return cfg;
}

// Test-local loss evaluation, deliberately independent of the library's
// gradient code paths.
double plain_loss(double x, double t, const IsotonicParams& p, const IsotonicConfig& cfg) {
    const double y = sigmoid(pre_activation(x, p, cfg, 0));
    return -(t * std::log(y) + (1.0 - t) * std::log(1.0 - y));
}

}  // namespace

TEST_CASE("bce on hand-evaluated points") {
    const std::vector<double> half = {0.5};
    const std::vector<double> one = {1.0};
    CHECK(bce_loss(half, one) == doctest::Approx(0.6931471805599453).epsilon(1e-14));

    const std::vector<double> confident = {1.0 - 1e-12};
    CHECK(bce_loss(confident, one) < 1e-10);

    const std::vector<double> pair = {0.8, 0.2};
    const std::vector<double> labels = {1.0, 0.0};
    CHECK(bce_loss(pair, labels) == doctest::Approx(0.22314355131420976).epsilon(1e-14));
}

TEST_CASE("bce clamps out-of-range predictions and flags them") {
    const std::vector<double> preds = {0.0, 0.5, 1.0};
    const std::vector<double> labels = {0.0, 1.0, 1.0};
    long clamped = 0;
    const double loss = bce_loss(preds, labels, &clamped);
    CHECK(clamped == 2);
    CHECK(std::isfinite(loss));

    CHECK_THROWS_AS(bce_loss({}, {}), DataError);
    const std::vector<double> p1 = {0.5};
    const std::vector<double> bad = {0.7};
    CHECK_THROWS_AS(bce_loss(p1, bad), DataError);
}

TEST_CASE("backward residual vanishes when the prediction saturates to the label") {
    const IsotonicConfig cfg = small_cfg();
    IsotonicParams params = IsotonicParams::init(cfg, 0.1);
    params.bias[0] = 800.0;  // sigmoid rounds to exactly 1.0
    const GradientBundle g = backward(1.0, 1.0, params, cfg);
    CHECK(g.prediction == 1.0);
    CHECK(g.d_bias == 0.0);
    CHECK(g.d_input == 0.0);
    for (double d : g.d_weights) CHECK(d == 0.0);
}

TEST_CASE("dead relu gates block weight gradients but not the bias") {
    const IsotonicConfig cfg = small_cfg();
    IsotonicParams params = IsotonicParams::init(cfg, -0.5);
    const GradientBundle g = backward(0.6, 0.0, params, cfg);
    for (double d : g.d_weights) CHECK(d == 0.0);
    CHECK(g.d_input == 0.0);
    const double y = sigmoid(pre_activation(0.6, params, cfg, 0));
    CHECK(g.d_bias == y - 0.0);

    // The numeric difference across a dead weight is exactly zero too: the
    // loss computation never touches the coordinate.
    IsotonicParams probe = params;
    probe.weight(0, 5) += 1e-6;
    CHECK(plain_loss(0.6, 0.0, probe, cfg) == plain_loss(0.6, 0.0, params, cfg));
}

TEST_CASE("backward matches a test-local central difference") {
    const IsotonicConfig cfg = small_cfg();
    Rng rng(17);
    IsotonicParams params = IsotonicParams::init(cfg, 0.1);
    for (double& w : params.weights) w = 0.2 + 0.5 * rng.uniform();
    params.bias[0] = -0.3;
    const double h = 1e-6;

    for (int trial = 0; trial < 50; ++trial) {
        const double x = rng.uniform(-3.5, 3.5);
        const double t = rng.bernoulli(0.5) ? 1.0 : 0.0;
        const GradientBundle g = backward(x, t, params, cfg);
        const BucketPoint at = locate_bucket(x, cfg);
        if (at.partial <= 10 * h || cfg.bucket_width - at.partial <= 10 * h) continue;

        IsotonicParams probe = params;
        const int j = static_cast<int>(rng.below(static_cast<std::size_t>(params.buckets)));
        probe.weight(0, j) += h;
        const double up = plain_loss(x, t, probe, cfg);
        probe.weight(0, j) -= 2 * h;
        const double dn = plain_loss(x, t, probe, cfg);
        const double fd_w = (up - dn) / (2 * h);
        CHECK(g.d_weights[static_cast<std::size_t>(j)] == doctest::Approx(fd_w).epsilon(1e-5));

        probe = params;
        probe.bias[0] += h;
        const double bu = plain_loss(x, t, probe, cfg);
        probe.bias[0] -= 2 * h;
        const double bd = plain_loss(x, t, probe, cfg);
        CHECK(g.d_bias == doctest::Approx((bu - bd) / (2 * h)).epsilon(1e-5));

        const double xu = plain_loss(x + h, t, params, cfg);
        const double xd = plain_loss(x - h, t, params, cfg);
        CHECK(g.d_input == doctest::Approx((xu - xd) / (2 * h)).epsilon(1e-5));
    }
}

TEST_CASE("offset gradients mirror weight gradients through shared gates") {
    const IsotonicConfig cfg = small_cfg();
    Rng rng(23);
    IsotonicParams params = IsotonicParams::init(cfg, 0.3);
    std::vector<double> offset(static_cast<std::size_t>(params.buckets));
    for (double& o : offset) o = 0.4 * rng.normal();
    const GradientBundle g = backward(1.2, 1.0, params, cfg, 0, offset);
    REQUIRE(g.d_offsets.size() == g.d_weights.size());
    for (std::size_t j = 0; j < g.d_weights.size(); ++j)
        CHECK(g.d_offsets[j] == g.d_weights[j]);
}

TEST_CASE("gradient harness stays under 1e-5 and handles dead layers") {
    const IsotonicConfig cfg = small_cfg();
    const IsotonicParams id = IsotonicParams::identity(cfg);
    CHECK(finite_difference_check(id, cfg, 100, 404) < 1e-5);

    // All-dead weights: weight and input probes agree at exactly zero, the
    // live bias probe keeps the harness busy but still well under the bound.
    IsotonicParams dead = IsotonicParams::init(cfg, -1.0);
    CHECK(finite_difference_check(dead, cfg, 100, 404) < 1e-5);
}

TEST_CASE("optimizer steps") {
    std::vector<double> params = {1.0};
    std::vector<double> grads = {1.0};
    OptimizerState sgd;
    sgd.kind = OptimizerKind::sgd;
    sgd.lr = 0.1;
    sgd.step(params, grads);
    CHECK(params[0] == 0.9);

    OptimizerState adam;
    adam.lr = 0.1;
    std::vector<double> p2 = {1.0, 2.0};
    std::vector<double> zero = {0.0, 0.0};
    adam.step(p2, zero);
    CHECK(adam.step_count == 1);
    CHECK(p2[0] == 1.0);
    CHECK(p2[1] == 2.0);

    std::vector<double> bad = {std::nan("")};
    std::vector<double> one = {1.0};
    CHECK_THROWS_AS(adam.step(one, bad), NumericError);
    CHECK_THROWS_AS(optimizer_from_name("newton"), ConfigError);
}

TEST_CASE("fit drives a single repeated example toward its label") {
    LabeledDataset data;
    data.has_input = true;
    for (int k = 0; k < 64; ++k) {
        DataRow row;
        row.input = 0.0;
        row.label = 1.0;
        data.rows.push_back(row);
    }
    const IsotonicConfig cfg = small_cfg();
    FitHyperparams hp;
    hp.epochs = 300;  // one optimizer step per epoch at this batch size
    hp.batch_size = 64;
    hp.seed = 3;
    const FitResult result = fit(data, cfg, hp);
    // Loss shrinks epoch over epoch for a deterministic single-point task.
    for (std::size_t e = 1; e < result.report.epoch_losses.size(); ++e)
        CHECK(result.report.epoch_losses[e] < result.report.epoch_losses[e - 1]);
    CHECK(forward(0.0, result.params, cfg) > 0.9);
}

TEST_CASE("fit rejects bad input") {
    const IsotonicConfig cfg = small_cfg();
    CHECK_THROWS_AS(fit(LabeledDataset{}, cfg, FitHyperparams{}), DataError);

    LabeledDataset no_input;
    no_input.rows.push_back(DataRow{});
    CHECK_THROWS_AS(fit(no_input, cfg, FitHyperparams{}), DataError);
}

TEST_CASE("fit with zero epochs returns the initialization") {
    LabeledDataset data;
    data.has_input = true;
    DataRow row;
    row.input = 0.5;
    row.label = 1.0;
    data.rows.push_back(row);
    const IsotonicConfig cfg = small_cfg();
    FitHyperparams hp;
    hp.epochs = 0;
    const FitResult result = fit(data, cfg, hp);
    const IsotonicParams fresh = IsotonicParams::init(cfg, hp.w_init_factor);
    CHECK(result.params.weights == fresh.weights);
    CHECK(result.params.bias == fresh.bias);
}

TEST_CASE("fit is deterministic in the seed") {
    Rng rng(11);
    LabeledDataset data;
    data.has_input = true;
    for (int k = 0; k < 400; ++k) {
        DataRow row;
        row.input = rng.uniform(-3.0, 3.0);
        row.label = rng.bernoulli(sigmoid(row.input)) ? 1.0 : 0.0;
        data.rows.push_back(row);
    }
    const IsotonicConfig cfg = small_cfg();
    FitHyperparams hp;
    hp.epochs = 5;
    hp.seed = 77;
    const FitResult a = fit(data, cfg, hp);
    const FitResult b = fit(data, cfg, hp);
    CHECK(a.params.weights == b.params.weights);
    CHECK(a.params.bias == b.params.bias);
    CHECK(a.report.epoch_losses == b.report.epoch_losses);
}

TEST_CASE("training cannot break monotonicity") {
    Rng rng(19);
    LabeledDataset data;
    data.has_input = true;
    for (int k = 0; k < 600; ++k) {
        DataRow row;
        row.input = rng.uniform(-3.5, 3.5);
        // Deliberately non-monotone labelsize: the fitted curve must stay
        // monotone anyway because monotonicity is structural.
        row.label = rng.bernoulli(row.input > 1.0 ? 0.2 : 0.7) ? 1.0 : 0.0;
        data.rows.push_back(row);
    }
    const IsotonicConfig cfg = small_cfg();
    FitHyperparams hp;
    hp.epochs = 12;
    hp.seed = 5;
    const FitResult result = fit(data, cfg, hp);
    for (int trial = 0; trial < 400; ++trial) {
        double x1 = rng.uniform(-5.0, 5.0);
        double x2 = rng.uniform(-5.0, 5.0);
        if (x1 > x2) std::swap(x1, x2);
        CHECK(forward(x1, result.params, cfg) <= forward(x2, result.params, cfg));
    }
}

TEST_CASE("one bucket weight couples every input above it") {
    const IsotonicConfig cfg = small_cfg();
    IsotonicParams params = IsotonicParams::init(cfg, 0.4);
    const int bump = 12;
    IsotonicParams poked = params;
    poked.weight(0, bump) += 0.5;
    Rng rng(41);
    for (int trial = 0; trial < 200; ++trial) {
        const double x = rng.uniform(-4.0, 4.0);
        const int idx = locate_bucket(x, cfg).index;
        const double before = pre_activation(x, params, cfg, 0);
        const double after = pre_activation(x, poked, cfg, 0);
        if (idx > bump)
            CHECK(after > before);
        else if (idx < bump)
            CHECK(after == before);
    }
}

TEST_CASE("frozen-scorer calibration compensates opposite logit shifts") {
    Rng rng(29);
    std::vector<double> scores, labels;
    std::vector<std::string> contexts;
    const long per_context = 20000;
    for (long k = 0; k < per_context; ++k) {
        const double x = rng.normal() * 1.2;
        // Context "over" reports logits one too high, "under" one too low.
        scores.push_back(sigmoid(x + 1.0));
        labels.push_back(rng.bernoulli(sigmoid(x)) ? 1.0 : 0.0);
        contexts.push_back("over");
        const double x2 = rng.normal() * 1.2;
        scores.push_back(sigmoid(x2 - 1.0));
        labels.push_back(rng.bernoulli(sigmoid(x2)) ? 1.0 : 0.0);
        contexts.push_back("under");
    }
    IsotonicConfig cfg;
    FitHyperparams hp;
    // Constant-rate Adam never anneals, so the final iterate orbits the
    // optimum at a radius proportional to lr. A small rate keeps the
    // mean-prediction wobble well under the tolerance below.
    hp.epochs = 80;
    hp.lr = 1e-3;
    hp.seed = 13;
    const CalibrationResult result = calibrate_frozen(scores, labels, contexts, cfg, hp);
    REQUIRE(result.per_context.size() == 2);

    for (const auto& [context, params] : result.per_context) {
        double mean_pred = 0.0, mean_label = 0.0;
        long count = 0;
        for (std::size_t k = 0; k < scores.size(); ++k) {
            if (contexts[k] != context) continue;
            mean_pred += forward(logit(scores[k]), params, cfg);
            mean_label += labels[k];
            ++count;
        }
        mean_pred /= static_cast<double>(count);
        mean_label /= static_cast<double>(count);
        // 3% relative agreement at this desk scale; the acceptance run uses
        // more data and a tighter bound.
        CHECK(std::abs(mean_pred - mean_label) / mean_label < 0.03);
    }
    // The two mappings must differ materially to compensate opposite shifts.
    const IsotonicParams& over = result.per_context.at("over");
    const IsotonicParams& under = result.per_context.at("under");
    const double probe = logit(0.6);
    CHECK(forward(probe, over, cfg) < forward(probe, under, cfg));
}

TEST_CASE("declared but unobserved contexts fall back to identity") {
    std::vector<double> scores = {0.4, 0.7};
    std::vector<double> labels = {0.0, 1.0};
    std::vector<std::string> contexts = {"seen", "seen"};
    IsotonicConfig cfg;
    FitHyperparams hp;
    hp.epochs = 1;
    const CalibrationResult result =
        calibrate_frozen(scores, labels, contexts, cfg, hp, {"seen", "ghost"});
    REQUIRE(result.per_context.count("ghost") == 1);
    CHECK(result.identity_fallbacks == std::vector<std::string>{"ghost"});
    const IsotonicParams& ghost = result.per_context.at("ghost");
    const IsotonicParams identity = IsotonicParams::identity(cfg);
    CHECK(ghost.weights == identity.weights);
    CHECK(ghost.bias == identity.bias);
}
