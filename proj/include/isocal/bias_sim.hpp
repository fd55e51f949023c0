#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "isocal/dataset.hpp"

namespace isocal {

// One engagement signal in the click-log simulator. Latent relevance for the
// task is r = sigmoid(theta . phi) where theta is a fixed hidden vector drawn
// from relevance_seed; the same seed reproduces the same relevance map across
// independently sampled datasets (train/holdout pairs).
struct TaskSpec {
    std::string name;
    std::vector<double> propensities;  // index p-1 = examination factor at position p
    std::uint64_t relevance_seed = 0;
};

enum class ExposurePolicy { uniform, oracle_sorted };
enum class BiasModel { multiplicative, additive_logit };

struct PositionBiasScenario {
    int position_count = 5;
    int feature_dim = 4;
    ExposurePolicy exposure = ExposurePolicy::uniform;
    BiasModel bias = BiasModel::multiplicative;
    std::vector<TaskSpec> tasks;
    long sample_count = 0;  // items; emitted rows = items x tasks
    std::uint64_t seed = 0;

    void validate() const;

    // Two tasks, click and long_dwell: click propensities 1/log2(p+1), dwell
    // propensities their square root (a milder falloff), distinct hidden
    // relevance maps.
    static PositionBiasScenario defaults(long n, std::uint64_t seed);
};

// Examination probability 1/log2(p+1) for positions 1..k (top position 1.0).
std::vector<double> log_rank_propensities(int k);

// Hidden relevance parameters for a task; deterministic in the seed.
std::vector<double> relevance_theta(int feature_dim, std::uint64_t relevance_seed);
double relevance_score(std::span<const double> phi, std::span<const double> theta);

// x uniform on (0,1), input = logit(x), label ~ Bernoulli(x^2), truth = x^2.
LabeledDataset gen_quadratic(long n, std::uint64_t seed);

// Same sampling with the non-monotone target x^2 below 0.95, (1.9 - x)^2
// above (continuous at the join).
LabeledDataset gen_piecewise(long n, std::uint64_t seed);
double piecewise_target(double x);

// Position-bias click logs: items arrive in sessions of position_count,
// positions assigned by the exposure policy (oracle_sorted ranks a session
// by the first task's relevance), labels drawn per task from the biased
// rate. context_id = position as text, latent_truth = unbiased relevance.
LabeledDataset gen_position_logs(const PositionBiasScenario& scenario);

double biased_rate(double relevance, double propensity, BiasModel bias);

}  // namespace isocal
