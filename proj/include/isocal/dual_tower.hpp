#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "isocal/context.hpp"
#include "isocal/dataset.hpp"
#include "isocal/isotonic_layer.hpp"
#include "isocal/training.hpp"

namespace isocal {

// Fully-connected relevance network: dims = {input, hidden..., task_count},
// tanh on hidden layers, linear task logits at the top. The tower never sees
// position or platform fields, so its scores cannot depend on them.
struct RelevanceTower {
    std::vector<int> dims;
    std::vector<std::vector<double>> weights;  // per layer, out x in row-major
    std::vector<std::vector<double>> biases;   // per layer

    int input_dim() const { return dims.front(); }
    int task_count() const { return dims.back(); }
    int layer_count() const { return static_cast<int>(weights.size()); }

    // Gaussian init scaled by 1/sqrt(fan_in), zero biases.
    static RelevanceTower init(const std::vector<int>& dims, std::uint64_t seed,
                               double init_scale = 1.0);
    void check_shape() const;
};

// All task logits for one feature vector.
std::vector<double> tower_forward(std::span<const double> features, const RelevanceTower& tower);
double tower_forward(std::span<const double> features, const RelevanceTower& tower, int task);

struct IsoHead {
    IsotonicParams params;   // single unit
    EmbeddingTable table;    // context rows over positions/platforms
};

struct DualTowerConfig {
    std::vector<int> hidden = {16, 16};
    double init_scale = 1.0;
    IsotonicConfig iso;      // bucket_width 0.2 default here, set in ctor below
    std::vector<std::string> tasks;     // resolved from data when empty
    std::vector<std::string> contexts;  // resolved from data when empty
    std::vector<double> alpha;          // per task, default 1.0
    std::vector<double> beta;           // per task, default 0.75
    bool context_bias = true;

    DualTowerConfig() { iso.bucket_width = 0.2; }
};

struct DualTowerModel {
    RelevanceTower tower;
    std::vector<std::string> task_names;
    std::vector<IsoHead> heads;  // one per task
    std::vector<double> alpha;
    std::vector<double> beta;
    IsotonicConfig iso_cfg;

    int task_index(const std::string& name) const;  // -1 when unknown
    void check_shape() const;
};

// Heads start as the identity curve with zero embeddings, so the isotonic
// path initially reproduces sigmoid(r) and the two heads are coupled.
DualTowerModel init_dual_tower(const DualTowerConfig& cfg, int input_dim, std::uint64_t seed);

// Serving path: sigmoid of the task logit. Position-blind by construction.
double inference_head(std::span<const double> features, const DualTowerModel& model, int task);

// Calibrated path: the task's context-conditioned isotonic curve applied to
// the task logit.
double isotonic_head(std::span<const double> features, const std::string& context,
                     const DualTowerModel& model, int task);

// Isotonic head at the reference context (logged context stripped).
double neutralized_head(std::span<const double> features, const DualTowerModel& model, int task);

// Documented alias of inference_head: the low-latency serving score.
double infer_relevance(std::span<const double> features, const DualTowerModel& model, int task);

// Weighted joint objective over a batch:
// sum_s alpha_s * BCE(inference, task s rows) + beta_s * BCE(isotonic, ...).
// Rows whose task_id is not in the model are masked; a fully masked batch is
// an error.
double joint_loss(std::span<const DataRow> batch, const DualTowerModel& model);

struct DualHyperparams {
    int epochs = 6;
    int batch_size = 256;
    double lr = 1e-2;
    OptimizerKind optimizer = OptimizerKind::adam;
    std::uint64_t seed = 1;
};

struct DualTrainResult {
    DualTowerModel model;
    TrainReport report;
};

// Joint mini-batch descent over tower, head weights/biases, and embedding
// rows (the reference row stays frozen at zero). Gradient reaches the tower
// logit from both heads; the isotonic path contributes its piecewise input
// slope. Non-finite loss aborts.
DualTrainResult train_dual_tower(const LabeledDataset& data, const DualTowerConfig& cfg,
                                 const DualHyperparams& hp);

// Central-difference verification of the full joint-loss gradient over at
// least sample_count random trainable coordinates; same skip rules as the
// single-layer harness plus a bucket-edge margin for tower coordinates
// (perturbing the tower moves the isotonic input).
double dual_tower_fd_check(const DualTowerModel& model, std::span<const DataRow> batch,
                           int sample_count, std::uint64_t seed);

}  // namespace isocal
