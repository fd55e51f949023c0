#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "isocal/errors.hpp"
#include "isocal/isotonic_layer.hpp"
#include "isocal/metrics.hpp"
#include "isocal/rng.hpp"

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

using namespace isocal;

namespace {

// All-pairs Mann-Whitney oracle. Increments are exact multiples of 0.5 and
// stay tiny at oracle sizes, so the quotient matches the rank-based
// implementation bitwise.
double auc_pairs(const std::vector<double>& scores, const std::vector<double>& labels) {
    double wins = 0.0;
    long pos = 0, neg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1.0) continue;
        ++pos;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0.0) continue;
            if (scores[i] > scores[j])
                wins += 1.0;
            else if (scores[i] == scores[j])
                wins += 0.5;
        }
    }
    for (double t : labels)
        if (t == 0.0) ++neg;
    return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

// Plain BCE oracle. Binary labels make each term exactly -log(p) or
// -log(1-p), so index-order accumulation reproduces the library bitwise as
// long as no prediction hits the clamp.
double bce_oracle(const std::vector<double>& preds, const std::vector<double>& labels) {
    double acc = 0.0;
    for (std::size_t k = 0; k < preds.size(); ++k)
        acc += labels[k] == 1.0 ? -std::log(preds[k]) : -std::log(1.0 - preds[k]);
    return acc / static_cast<double>(preds.size());
}

double ne_oracle(const std::vector<double>& preds, const std::vector<double>& labels) {
    double positives = 0.0;
    for (double t : labels) positives += t;
    const double base = positives / static_cast<double>(labels.size());
    const std::vector<double> constant(labels.size(), base);
    return bce_oracle(preds, labels) / bce_oracle(constant, labels);
}

// Bin-by-bin recomputation, ascending bins and ascending indices inside each
// bin to keep the accumulation order comparable.
double ece_oracle(const std::vector<double>& preds, const std::vector<double>& labels,
                  int bins) {
    double total = 0.0;
    for (int bin = 0; bin < bins; ++bin) {
        double pred_sum = 0.0, label_sum = 0.0, count = 0.0;
        for (std::size_t k = 0; k < preds.size(); ++k) {
            int b = static_cast<int>(preds[k] * bins);
            if (b >= bins) b = bins - 1;
            if (b != bin) continue;
            pred_sum += preds[k];
            label_sum += labels[k];
            count += 1.0;
        }
        if (count == 0.0) continue;
        total += (count / static_cast<double>(preds.size())) *
                 std::abs(pred_sum / count - label_sum / count);
    }
    return total;
}

}  // namespace

TEST_CASE("auc pinned cases") {
    CHECK(auc(std::vector<double>{0.1, 0.9}, std::vector<double>{0.0, 1.0}) == 1.0);
    CHECK(auc(std::vector<double>{0.9, 0.1}, std::vector<double>{0.0, 1.0}) == 0.0);
    CHECK(auc(std::vector<double>{0.4, 0.4, 0.4}, std::vector<double>{0.0, 1.0, 0.0}) == 0.5);
    // Pairs: 0.5>0.3 wins, 0.5 vs 0.5 half credit, 0.7 beats both.
    CHECK(auc(std::vector<double>{0.3, 0.5, 0.5, 0.7},
              std::vector<double>{0.0, 1.0, 0.0, 1.0}) == 0.875);
}

TEST_CASE("auc rejects degenerate inputs") {
    const std::vector<double> scores = {0.1, 0.2};
    CHECK_THROWS_AS(auc(scores, std::vector<double>{1.0, 1.0}), DataError);
    CHECK_THROWS_AS(auc(scores, std::vector<double>{0.0, 0.0}), DataError);
    CHECK_THROWS_AS(auc(scores, std::vector<double>{0.5, 1.0}), DataError);
    CHECK_THROWS_AS(auc(std::vector<double>{}, std::vector<double>{}), DataError);
    CHECK_THROWS_AS(auc(scores, std::vector<double>{1.0}), DataError);
}

TEST_CASE("normalized entropy pinned and definitional cases") {
    const std::vector<double> preds = {0.8, 0.2};
    const std::vector<double> labels = {1.0, 0.0};
    CHECK(std::abs(normalized_entropy(preds, labels) - 0.3219280948873623) < 1e-14);

    // Predicting the base rate exactly reproduces the denominator bitwise.
    const std::vector<double> labels2 = {1.0, 0.0, 0.0, 1.0, 1.0};
    const std::vector<double> base(5, 3.0 / 5.0);
    CHECK(normalized_entropy(base, labels2) == 1.0);

    const std::vector<double> confident = {1.0 - 1e-9, 1e-9};
    CHECK(normalized_entropy(confident, labels) < 1e-6);

    CHECK_THROWS_AS(normalized_entropy(preds, std::vector<double>{1.0, 1.0}), DataError);
    CHECK_THROWS_AS(normalized_entropy(preds, std::vector<double>{0.3, 0.7}), DataError);
}

TEST_CASE("ece pinned cases") {
    CHECK(ece(std::vector<double>{1.0, 0.0, 1.0}, std::vector<double>{1.0, 0.0, 1.0}, 10) == 0.0);
    const double one_bin = ece(std::vector<double>{0.7, 0.7}, std::vector<double>{1.0, 1.0}, 1);
    CHECK(std::abs(one_bin - 0.3) < 1e-15);
    // pred == 1.0 joins the top bin instead of indexing out of range.
    CHECK(ece(std::vector<double>{1.0}, std::vector<double>{1.0}, 10) == 0.0);
    CHECK_THROWS_AS(ece(std::vector<double>{0.5}, std::vector<double>{1.0}, 0), ConfigError);
    CHECK_THROWS_AS(ece(std::vector<double>{1.2}, std::vector<double>{1.0}, 10), DataError);
    CHECK_THROWS_AS(ece(std::vector<double>{-0.1}, std::vector<double>{0.0}, 10), DataError);
}

TEST_CASE("oe ratio pinned cases") {
    const std::vector<double> preds = {0.25, 0.25, 0.5, 0.0};
    const std::vector<double> labels = {1.0, 0.0, 1.0, 1.0};
    const std::vector<std::string> groups = {"a", "a", "b", "c"};
    const auto table = oe_ratio(preds, labels, groups);
    REQUIRE(table.size() == 3);
    CHECK(table.at("a").ratio == 2.0);  // 1 observed vs 0.5 expected
    CHECK(table.at("a").count == 2);
    CHECK(table.at("b").ratio == 2.0);
    CHECK(table.at("c").defined == false);
    CHECK(table.at("a").defined == true);
}

TEST_CASE("metrics match brute-force oracles on short inputs") {
    Rng rng(81);
    for (int rep = 0; rep < 1000; ++rep) {
        const std::size_t n = 2 + rng.below(11);
        std::vector<double> preds, labels;
        std::vector<std::string> groups;
        long pos = 0;
        for (std::size_t k = 0; k < n; ++k) {
            preds.push_back(rng.uniform(0.01, 0.99));
            const bool hit = rng.bernoulli(0.5);
            labels.push_back(hit ? 1.0 : 0.0);
            pos += hit;
            groups.push_back(std::string(1, static_cast<char>('a' + rng.below(3))));
        }
        // Force both classes so auc and ne are defined.
        labels[0] = 1.0;
        labels[n - 1] = 0.0;

        CHECK(auc(preds, labels) == auc_pairs(preds, labels));
        CHECK(normalized_entropy(preds, labels) == ne_oracle(preds, labels));
        const int bins = 1 + static_cast<int>(rng.below(12));
        CHECK(ece(preds, labels, bins) == ece_oracle(preds, labels, bins));

        const auto table = oe_ratio(preds, labels, groups);
        for (const auto& [id, rate] : table) {
            double obs = 0.0, exp = 0.0;
            long count = 0;
            for (std::size_t k = 0; k < n; ++k) {
                if (groups[k] != id) continue;
                obs += labels[k];
                exp += preds[k];
                ++count;
            }
            CHECK(rate.count == count);
            CHECK(rate.observed == obs);
            CHECK(rate.expected == exp);
            if (rate.defined) CHECK(rate.ratio == obs / exp);
        }
    }
}

TEST_CASE("auc is invariant under strictly increasing transforms") {
    Rng rng(82);
    IsotonicConfig cfg;
    IsotonicParams params = IsotonicParams::init(cfg, 0.0);
    for (int j = 0; j < params.buckets; ++j)
        params.weights[static_cast<std::size_t>(j)] = rng.uniform(0.05, 2.0);
    params.bias[0] = rng.uniform(-1.0, 1.0);

    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t n = 4 + rng.below(40);
        std::vector<double> scores, labels;
        for (std::size_t k = 0; k < n; ++k) {
            scores.push_back(rng.uniform(-5.0, 5.0));
            labels.push_back(rng.bernoulli(0.5) ? 1.0 : 0.0);
        }
        labels[0] = 1.0;
        labels[n - 1] = 0.0;
        const double reference = auc(scores, labels);

        std::vector<double> affine, squashed, layered;
        for (double s : scores) {
            affine.push_back(3.0 * s + 1.0);
            squashed.push_back(std::tanh(s));
            // Strictly positive weights keep the layer strictly increasing
            // away from the clip range.
            layered.push_back(forward(s, params, cfg));
        }
        CHECK(auc(affine, labels) == reference);
        CHECK(auc(squashed, labels) == reference);
        CHECK(auc(layered, labels) == reference);
    }
}

TEST_CASE("evaluate bundles all metrics") {
    const std::vector<double> preds = {0.2, 0.8, 0.6, 0.4};
    const std::vector<double> labels = {0.0, 1.0, 1.0, 0.0};
    const std::vector<std::string> groups = {"x", "x", "y", "y"};
    const EvalReport with_groups = evaluate(preds, labels, groups);
    CHECK(with_groups.auc == 1.0);
    CHECK(with_groups.sample_count == 4);
    CHECK(with_groups.oe_by_group.size() == 2);
    CHECK(with_groups.ece == ece(preds, labels, 10));

    const EvalReport no_groups = evaluate(preds, labels);
    CHECK(no_groups.oe_by_group.empty());
    CHECK(no_groups.auc == 1.0);
    CHECK(no_groups.normalized_entropy == normalized_entropy(preds, labels));
}
