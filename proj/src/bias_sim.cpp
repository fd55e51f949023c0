#include "isocal/bias_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "isocal/errors.hpp"
#include "isocal/isotonic_layer.hpp"
#include "isocal/rng.hpp"

namespace isocal {

void PositionBiasScenario::validate() const {
    if (position_count < 1)
        throw ConfigError("scenario: position_count must be >= 1");
    if (feature_dim < 1)
        throw ConfigError("scenario: feature_dim must be >= 1");
    if (sample_count < 1)
        throw ConfigError("scenario: sample_count must be >= 1");
    if (tasks.empty())
        throw ConfigError("scenario: at least one task required");
    for (const TaskSpec& task : tasks) {
        if (task.name.empty())
            throw ConfigError("scenario: task name must be non-empty");
        if (static_cast<int>(task.propensities.size()) != position_count)
            throw ConfigError("scenario: task '" + task.name + "' needs one propensity per position");
        for (std::size_t p = 0; p < task.propensities.size(); ++p) {
            const double v = task.propensities[p];
            if (!(v > 0.0) || v > 1.0)
                throw ConfigError("scenario: propensities must lie in (0, 1]");
            if (p > 0 && v > task.propensities[p - 1])
                throw ConfigError("scenario: propensities must be non-increasing in position");
        }
    }
}

std::vector<double> log_rank_propensities(int k) {
    if (k < 1)
        throw ConfigError("log_rank_propensities: k must be >= 1");
    std::vector<double> out(k);
    for (int p = 1; p <= k; ++p) out[p - 1] = 1.0 / std::log2(static_cast<double>(p) + 1.0);
    return out;
}

PositionBiasScenario PositionBiasScenario::defaults(long n, std::uint64_t seed) {
    PositionBiasScenario sc;
    sc.sample_count = n;
    sc.seed = seed;
    TaskSpec click{"click", log_rank_propensities(sc.position_count), 101};
    TaskSpec dwell{"long_dwell", log_rank_propensities(sc.position_count), 202};
    for (double& v : dwell.propensities) v = std::sqrt(v);
    sc.tasks = {click, dwell};
    return sc;
}

std::vector<double> relevance_theta(int feature_dim, std::uint64_t relevance_seed) {
    Rng rng(derive_seed(relevance_seed, 0x7468657461));  // independent of the data stream
    std::vector<double> theta(feature_dim);
    for (double& v : theta) v = rng.normal();
    return theta;
}

double relevance_score(std::span<const double> phi, std::span<const double> theta) {
    if (phi.size() != theta.size())
        throw ConfigError("relevance_score: dimension mismatch");
    double dot = 0.0;
    for (std::size_t k = 0; k < phi.size(); ++k) dot += theta[k] * phi[k];
    return sigmoid(dot);
}

namespace {

LabeledDataset gen_scalar_task(long n, std::uint64_t seed, double (*target)(double)) {
    if (n < 1)
        throw ConfigError("generator: n must be >= 1");
    LabeledDataset data;
    data.has_input = true;
    data.has_latent_truth = true;
    data.rows.reserve(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        const double x = rng.uniform_open();  // open so logit stays finite
        const double truth = target(x);
        DataRow row;
        row.input = logit(x);
        row.label = rng.bernoulli(truth) ? 1.0 : 0.0;
        row.latent_truth = truth;
        data.rows.push_back(std::move(row));
    }
    return data;
}

double quadratic_target(double x) { return x * x; }

}  // namespace

double piecewise_target(double x) {
    return x <= 0.95 ? x * x : (1.9 - x) * (1.9 - x);
}

LabeledDataset gen_quadratic(long n, std::uint64_t seed) {
    return gen_scalar_task(n, seed, quadratic_target);
}

LabeledDataset gen_piecewise(long n, std::uint64_t seed) {
    return gen_scalar_task(n, seed, piecewise_target);
}

double biased_rate(double relevance, double propensity, BiasModel bias) {
    if (bias == BiasModel::multiplicative) return relevance * propensity;
    // Shift in logit space; propensity 1 keeps the rate unchanged.
    return sigmoid(logit(relevance) + std::log(propensity));
}

LabeledDataset gen_position_logs(const PositionBiasScenario& scenario) {
    scenario.validate();
    const int k = scenario.position_count;
    const int d = scenario.feature_dim;

    std::vector<std::vector<double>> thetas;
    thetas.reserve(scenario.tasks.size());
    for (const TaskSpec& task : scenario.tasks)
        thetas.push_back(relevance_theta(d, task.relevance_seed));

    LabeledDataset data;
    data.feature_dim = d;
    data.has_latent_truth = true;
    data.rows.reserve(static_cast<std::size_t>(scenario.sample_count) * scenario.tasks.size());

    const long sessions = (scenario.sample_count + k - 1) / k;
    long emitted_items = 0;
    for (long s = 0; s < sessions && emitted_items < scenario.sample_count; ++s) {
        Rng rng(derive_seed(scenario.seed, static_cast<std::uint64_t>(s)));
        std::vector<std::vector<double>> phi(k, std::vector<double>(d));
        for (auto& row : phi)
            for (double& v : row) v = rng.normal();

        // slot[j] = index of the item shown at position j+1.
        std::vector<int> slot(k);
        std::iota(slot.begin(), slot.end(), 0);
        if (scenario.exposure == ExposurePolicy::uniform) {
            rng.shuffle(slot);
        } else {
            std::vector<double> anchor(k);
            for (int item = 0; item < k; ++item)
                anchor[item] = relevance_score(phi[item], thetas[0]);
            std::stable_sort(slot.begin(), slot.end(),
                             [&](int a, int b) { return anchor[a] > anchor[b]; });
        }

        for (int j = 0; j < k && emitted_items < scenario.sample_count; ++j, ++emitted_items) {
            const int item = slot[j];
            for (std::size_t t = 0; t < scenario.tasks.size(); ++t) {
                const TaskSpec& task = scenario.tasks[t];
                const double r = relevance_score(phi[item], thetas[t]);
                const double rate = biased_rate(r, task.propensities[j], scenario.bias);
                DataRow row;
                row.features = phi[item];
                row.context_id = std::to_string(j + 1);
                row.task_id = task.name;
                row.label = rng.bernoulli(rate) ? 1.0 : 0.0;
                row.latent_truth = r;
                data.rows.push_back(std::move(row));
            }
        }
    }
    return data;
}

}  // namespace isocal
