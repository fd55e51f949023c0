#include "isocal/dual_tower.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

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

}  // namespace

RelevanceTower RelevanceTower::init(const std::vector<int>& dims, std::uint64_t seed,
                                    double init_scale) {
    if (dims.size() < 2)
        throw ConfigError("tower: needs at least input and output dims");
    for (int d : dims)
        if (d < 1)
            throw ConfigError("tower: every layer width must be >= 1");
    RelevanceTower t;
    t.dims = dims;
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const int fan_in = dims[l];
        const int fan_out = dims[l + 1];
        std::vector<double> w(static_cast<std::size_t>(fan_out) * fan_in);
        const double scale = init_scale / std::sqrt(static_cast<double>(fan_in));
        for (double& v : w) v = scale * rng.normal();
        t.weights.push_back(std::move(w));
        t.biases.emplace_back(static_cast<std::size_t>(fan_out), 0.0);
    }
    return t;
}

void RelevanceTower::check_shape() const {
    if (dims.size() < 2 || weights.size() != dims.size() - 1 || biases.size() != weights.size())
        throw ConfigError("tower: inconsistent layer bookkeeping");
    for (std::size_t l = 0; l < weights.size(); ++l) {
        if (weights[l].size() != static_cast<std::size_t>(dims[l]) * dims[l + 1] ||
            biases[l].size() != static_cast<std::size_t>(dims[l + 1]))
            throw ConfigError("tower: layer " + std::to_string(l) + " shape mismatch");
    }
}

namespace {

// Activations kept for backprop: post[l] is the tanh output of hidden layer
// l; logits is the linear top layer.
struct TowerTrace {
    std::vector<std::vector<double>> post;
    std::vector<double> logits;
};

void tower_trace(std::span<const double> features, const RelevanceTower& t, TowerTrace& out) {
    if (features.size() != static_cast<std::size_t>(t.input_dim()))
        throw DataError("tower: feature dimension " + std::to_string(features.size()) +
                        " != input dim " + std::to_string(t.input_dim()));
    const int layers = t.layer_count();
    out.post.resize(static_cast<std::size_t>(layers) - 1);
    std::span<const double> cur = features;
    for (int l = 0; l < layers; ++l) {
        const int fan_in = t.dims[l];
        const int fan_out = t.dims[l + 1];
        const bool top = l == layers - 1;
        std::vector<double>& dst = top ? out.logits : out.post[l];
        dst.resize(static_cast<std::size_t>(fan_out));
        const double* w = t.weights[l].data();
        for (int o = 0; o < fan_out; ++o) {
            double acc = t.biases[l][static_cast<std::size_t>(o)];
            const double* row = w + static_cast<std::size_t>(o) * fan_in;
            for (int i = 0; i < fan_in; ++i) acc += row[i] * cur[static_cast<std::size_t>(i)];
            dst[static_cast<std::size_t>(o)] = top ? acc : std::tanh(acc);
        }
        cur = dst;
    }
}

}  // namespace

std::vector<double> tower_forward(std::span<const double> features, const RelevanceTower& tower) {
    tower.check_shape();
    TowerTrace trace;
    tower_trace(features, tower, trace);
    return trace.logits;
}

double tower_forward(std::span<const double> features, const RelevanceTower& tower, int task) {
    if (task < 0 || task >= tower.task_count())
        throw ConfigError("tower: task index out of range");
    return tower_forward(features, tower)[static_cast<std::size_t>(task)];
}

int DualTowerModel::task_index(const std::string& name) const {
    for (std::size_t s = 0; s < task_names.size(); ++s)
        if (task_names[s] == name) return static_cast<int>(s);
    return -1;
}

void DualTowerModel::check_shape() const {
    tower.check_shape();
    const std::size_t tasks = task_names.size();
    if (tasks == 0 || heads.size() != tasks || alpha.size() != tasks || beta.size() != tasks)
        throw ConfigError("dual tower: per-task containers disagree");
    if (tower.task_count() != static_cast<int>(tasks))
        throw ConfigError("dual tower: tower output width != task count");
    for (std::size_t s = 0; s < tasks; ++s) {
        if (alpha[s] < 0.0 || beta[s] < 0.0 || (alpha[s] == 0.0 && beta[s] == 0.0))
            throw ConfigError("dual tower: task '" + task_names[s] +
                              "' needs alpha, beta >= 0 and not both zero");
        heads[s].params.check_shape(iso_cfg);
        heads[s].table.check_shape(iso_cfg);
        if (heads[s].params.units != 1)
            throw ConfigError("dual tower: heads are single-unit");
    }
}

DualTowerModel init_dual_tower(const DualTowerConfig& cfg, int input_dim, std::uint64_t seed) {
    if (cfg.tasks.empty())
        throw ConfigError("dual tower: task list must be resolved before init");
    DualTowerModel m;
    m.task_names = cfg.tasks;
    m.iso_cfg = cfg.iso;
    m.iso_cfg.units = 1;
    m.iso_cfg.validate();

    std::vector<int> dims;
    dims.push_back(input_dim);
    for (int h : cfg.hidden) dims.push_back(h);
    dims.push_back(static_cast<int>(cfg.tasks.size()));
    m.tower = RelevanceTower::init(dims, derive_seed(seed, 1), cfg.init_scale);

    m.alpha = cfg.alpha.empty() ? std::vector<double>(cfg.tasks.size(), 1.0) : cfg.alpha;
    m.beta = cfg.beta.empty() ? std::vector<double>(cfg.tasks.size(), 0.75) : cfg.beta;

    for (std::size_t s = 0; s < cfg.tasks.size(); ++s) {
        IsoHead head;
        head.params = IsotonicParams::identity(m.iso_cfg);
        head.table = EmbeddingTable::zeros(m.iso_cfg, cfg.contexts, cfg.context_bias);
        m.heads.push_back(std::move(head));
    }
    m.check_shape();
    return m;
}

double inference_head(std::span<const double> features, const DualTowerModel& model, int task) {
    if (task < 0 || task >= static_cast<int>(model.task_names.size()))
        throw ConfigError("inference_head: task index out of range");
    return sigmoid(tower_forward(features, model.tower)[static_cast<std::size_t>(task)]);
}

double isotonic_head(std::span<const double> features, const std::string& context,
                     const DualTowerModel& model, int task) {
    if (task < 0 || task >= static_cast<int>(model.task_names.size()))
        throw ConfigError("isotonic_head: task index out of range");
    const double r = tower_forward(features, model.tower)[static_cast<std::size_t>(task)];
    const IsoHead& head = model.heads[static_cast<std::size_t>(task)];
    return conditioned_forward(r, head.params, model.iso_cfg, context, head.table);
}

double neutralized_head(std::span<const double> features, const DualTowerModel& model, int task) {
    const IsoHead& head = model.heads[static_cast<std::size_t>(task)];
    return isotonic_head(features, head.table.reference_context, model, task);
}

double infer_relevance(std::span<const double> features, const DualTowerModel& model, int task) {
    return inference_head(features, model, task);
}

namespace {

// Every trainable slot in one fixed order; pack/unpack/frozen-mask/zeroing
// all reuse this single traversal so they can never drift apart.
enum class CoordKind { tower_weight, tower_bias, head_weight, head_bias, embedding, context_bias };

struct CoordRef {
    CoordKind kind = CoordKind::tower_weight;
    int task = -1;
    int row = -1;
    int bucket = -1;
    bool frozen = false;
};

template <typename Fn>
void visit_params(DualTowerModel& m, Fn&& fn) {
    for (std::size_t l = 0; l < m.tower.weights.size(); ++l) {
        for (double& v : m.tower.weights[l]) fn(v, CoordRef{CoordKind::tower_weight});
        for (double& v : m.tower.biases[l]) fn(v, CoordRef{CoordKind::tower_bias});
    }
    for (std::size_t s = 0; s < m.heads.size(); ++s) {
        IsoHead& head = m.heads[s];
        const int task = static_cast<int>(s);
        const int ref_row = head.table.row_index(head.table.reference_context);
        const int buckets = head.params.buckets;
        for (int j = 0; j < buckets; ++j)
            fn(head.params.weights[static_cast<std::size_t>(j)],
               CoordRef{CoordKind::head_weight, task, -1, j});
        fn(head.params.bias[0], CoordRef{CoordKind::head_bias, task});
        for (std::size_t rho = 0; rho < head.table.rows.size(); ++rho) {
            const bool frozen = static_cast<int>(rho) == ref_row;
            for (int j = 0; j < buckets; ++j)
                fn(head.table.rows[rho][static_cast<std::size_t>(j)],
                   CoordRef{CoordKind::embedding, task, static_cast<int>(rho), j, frozen});
        }
        for (std::size_t rho = 0; rho < head.table.context_bias.size(); ++rho) {
            const bool frozen =
                static_cast<int>(rho) == ref_row || !head.table.use_context_bias;
            fn(head.table.context_bias[rho],
               CoordRef{CoordKind::context_bias, task, static_cast<int>(rho), -1, frozen});
        }
    }
}

std::vector<double> pack_params(DualTowerModel& m) {
    std::vector<double> flat;
    visit_params(m, [&](double& v, const CoordRef&) { flat.push_back(v); });
    return flat;
}

void unpack_params(std::span<const double> flat, DualTowerModel& m) {
    std::size_t k = 0;
    visit_params(m, [&](double& v, const CoordRef&) { v = flat[k++]; });
    if (k != flat.size())
        throw ConfigError("dual tower: flat parameter size mismatch");
}

std::vector<CoordRef> coord_refs(DualTowerModel& m) {
    std::vector<CoordRef> refs;
    visit_params(m, [&](double&, const CoordRef& ref) { refs.push_back(ref); });
    return refs;
}

void zero_params(DualTowerModel& m) {
    visit_params(m, [&](double& v, const CoordRef&) { v = 0.0; });
}

// Joint loss over rows, with gradients accumulated into a parameter-shaped
// model when `grads` is non-null. Fixed iteration order keeps training
// deterministic.
double joint_eval(const DualTowerModel& model, std::span<const DataRow* const> rows,
                  DualTowerModel* grads, long* clamped) {
    const std::size_t tasks = model.task_names.size();
    std::vector<long> count(tasks, 0);
    for (const DataRow* row : rows) {
        const int s = model.task_index(row->task_id);
        if (s < 0) continue;
        if (row->label != 0.0 && row->label != 1.0)
            throw DataError("joint loss: labels must be 0 or 1");
        ++count[static_cast<std::size_t>(s)];
    }
    if (std::accumulate(count.begin(), count.end(), 0L) == 0)
        throw DataError("joint loss: every row in the batch is masked");

    std::vector<double> inf_sum(tasks, 0.0), iso_sum(tasks, 0.0);
    TowerTrace trace;
    std::vector<double> d_hidden, d_pre;
    const IsotonicConfig& cfg = model.iso_cfg;

    for (const DataRow* row : rows) {
        const int s = model.task_index(row->task_id);
        if (s < 0) continue;
        const std::size_t su = static_cast<std::size_t>(s);
        tower_trace(row->features, model.tower, trace);
        const double r = trace.logits[su];
        const double t = row->label;

        const double y_inf = sigmoid(r);
        inf_sum[su] += bce_term(y_inf, t, clamped);

        const IsoHead& head = model.heads[su];
        const LookupResult hit = lookup(row->context_id, head.table);
        const double z = pre_activation_over(r, cfg, head.params.weight_row(0), hit.offsets,
                                             head.params.bias[0] + hit.bias);
        const double y_iso = sigmoid(z);
        iso_sum[su] += bce_term(y_iso, t, clamped);

        if (!grads) continue;
        const double inv = 1.0 / static_cast<double>(count[su]);
        const double res_inf = model.alpha[su] * (y_inf - t) * inv;
        const double res_iso = model.beta[su] * (y_iso - t) * inv;

        // Isotonic head parameters. The reference row stays frozen.
        IsoHead& gh = grads->heads[su];
        const BucketPoint at = locate_bucket(r, cfg);
        const bool train_row =
            !hit.out_of_vocabulary &&
            hit.row != head.table.row_index(head.table.reference_context);
        const std::span<const double> w = head.params.weight_row(0);
        for (int j = 0; j <= at.index; ++j) {
            const std::size_t ju = static_cast<std::size_t>(j);
            if (w[ju] + hit.offsets[ju] <= 0.0) continue;
            const double a = j < at.index ? cfg.bucket_width : at.partial;
            const double g = res_iso * a;
            gh.params.weights[ju] += g;
            if (train_row) gh.table.rows[static_cast<std::size_t>(hit.row)][ju] += g;
        }
        gh.params.bias[0] += res_iso;
        if (head.table.use_context_bias && train_row)
            gh.table.context_bias[static_cast<std::size_t>(hit.row)] += res_iso;

        // Gradient into the task logit from both heads.
        double d_r = res_inf;
        const double w_active = w[static_cast<std::size_t>(at.index)] +
                                hit.offsets[static_cast<std::size_t>(at.index)];
        if (w_active > 0.0 && !at.saturated) d_r += res_iso * w_active;

        // Backprop through the tower; only task s's output row is touched.
        const int layers = model.tower.layer_count();
        const int top = layers - 1;
        {
            const std::span<const double> prev =
                top == 0 ? std::span<const double>(row->features)
                         : std::span<const double>(trace.post[static_cast<std::size_t>(top) - 1]);
            const int fan_in = model.tower.dims[static_cast<std::size_t>(top)];
            double* gw = grads->tower.weights[static_cast<std::size_t>(top)].data() +
                         su * static_cast<std::size_t>(fan_in);
            for (int i = 0; i < fan_in; ++i) gw[i] += d_r * prev[static_cast<std::size_t>(i)];
            grads->tower.biases[static_cast<std::size_t>(top)][su] += d_r;
            d_hidden.assign(static_cast<std::size_t>(fan_in), 0.0);
            const double* wrow = model.tower.weights[static_cast<std::size_t>(top)].data() +
                                 su * static_cast<std::size_t>(fan_in);
            for (int i = 0; i < fan_in; ++i) d_hidden[static_cast<std::size_t>(i)] = d_r * wrow[i];
        }
        for (int l = top - 1; l >= 0; --l) {
            const std::size_t lu = static_cast<std::size_t>(l);
            const int fan_out = model.tower.dims[lu + 1];
            const int fan_in = model.tower.dims[lu];
            const std::vector<double>& act = trace.post[lu];
            d_pre.resize(static_cast<std::size_t>(fan_out));
            for (int o = 0; o < fan_out; ++o) {
                const double a = act[static_cast<std::size_t>(o)];
                d_pre[static_cast<std::size_t>(o)] =
                    d_hidden[static_cast<std::size_t>(o)] * (1.0 - a * a);
            }
            std::span<const double> prev =
                l == 0 ? std::span<const double>(row->features)
                       : std::span<const double>(trace.post[lu - 1]);
            for (int o = 0; o < fan_out; ++o) {
                const double dp = d_pre[static_cast<std::size_t>(o)];
                double* gw = grads->tower.weights[lu].data() +
                             static_cast<std::size_t>(o) * fan_in;
                for (int i = 0; i < fan_in; ++i) gw[i] += dp * prev[static_cast<std::size_t>(i)];
                grads->tower.biases[lu][static_cast<std::size_t>(o)] += dp;
            }
            d_hidden.assign(static_cast<std::size_t>(fan_in), 0.0);
            const double* wl = model.tower.weights[lu].data();
            for (int o = 0; o < fan_out; ++o) {
                const double dp = d_pre[static_cast<std::size_t>(o)];
                const double* wrow = wl + static_cast<std::size_t>(o) * fan_in;
                for (int i = 0; i < fan_in; ++i) d_hidden[static_cast<std::size_t>(i)] += dp * wrow[i];
            }
        }
    }

    double loss = 0.0;
    for (std::size_t s = 0; s < tasks; ++s) {
        if (count[s] == 0) continue;
        const double inv = 1.0 / static_cast<double>(count[s]);
        loss += model.alpha[s] * inf_sum[s] * inv + model.beta[s] * iso_sum[s] * inv;
    }
    return loss;
}

}  // namespace

double joint_loss(std::span<const DataRow> batch, const DualTowerModel& model) {
    model.check_shape();
    std::vector<const DataRow*> rows;
    rows.reserve(batch.size());
    for (const DataRow& row : batch) rows.push_back(&row);
    return joint_eval(model, rows, nullptr, nullptr);
}

DualTrainResult train_dual_tower(const LabeledDataset& data, const DualTowerConfig& cfg,
                                 const DualHyperparams& hp) {
    if (data.rows.empty())
        throw DataError("train_dual_tower: empty dataset");
    if (data.feature_dim < 1)
        throw DataError("train_dual_tower: dataset has no feature columns");
    if (hp.epochs < 0 || hp.batch_size < 1)
        throw ConfigError("train_dual_tower: epochs must be >= 0 and batch_size >= 1");

    DualTowerConfig resolved = cfg;
    if (resolved.tasks.empty()) {
        std::set<std::string> names;
        for (const DataRow& row : data.rows)
            if (!row.task_id.empty()) names.insert(row.task_id);
        resolved.tasks.assign(names.begin(), names.end());
        if (resolved.tasks.empty())
            throw DataError("train_dual_tower: no task ids in dataset");
    }
    if (resolved.contexts.empty()) {
        std::set<std::string> ids;
        for (const DataRow& row : data.rows)
            if (!row.context_id.empty()) ids.insert(row.context_id);
        resolved.contexts.assign(ids.begin(), ids.end());
    }

    DualTrainResult out;
    out.model = init_dual_tower(resolved, data.feature_dim, hp.seed);
    out.report.seed = hp.seed;
    out.report.sample_count = static_cast<long>(data.rows.size());

    std::vector<double> flat = pack_params(out.model);
    DualTowerModel grads = out.model;
    zero_params(grads);

    OptimizerState opt;
    opt.kind = hp.optimizer;
    opt.lr = hp.lr;

    Rng rng(derive_seed(hp.seed, 2));
    std::vector<std::size_t> order(data.rows.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<const DataRow*> batch;
    batch.reserve(static_cast<std::size_t>(hp.batch_size));

    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        long batches = 0;
        for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
            const std::size_t stop = std::min(order.size(), start + hp.batch_size);
            batch.clear();
            for (std::size_t k = start; k < stop; ++k) batch.push_back(&data.rows[order[k]]);
            zero_params(grads);
            const double loss =
                joint_eval(out.model, batch, &grads, &out.report.clamped_predictions);
            if (!std::isfinite(loss))
                throw NumericError("train_dual_tower: non-finite loss at epoch " +
                                   std::to_string(epoch));
            epoch_loss += loss;
            ++batches;
            const std::vector<double> flat_g = pack_params(grads);
            opt.step(flat, flat_g);
            unpack_params(flat, out.model);
        }
        out.report.epoch_losses.push_back(epoch_loss / static_cast<double>(batches));
    }
    out.report.final_loss =
        out.report.epoch_losses.empty() ? 0.0 : out.report.epoch_losses.back();
    return out;
}

double dual_tower_fd_check(const DualTowerModel& model, std::span<const DataRow> batch,
                           int sample_count, std::uint64_t seed) {
    if (sample_count < 1)
        throw ConfigError("dual_tower_fd_check: sample_count must be >= 1");
    model.check_shape();
    const double h = 1e-6;
    const double edge_margin = 1e-4;

    std::vector<const DataRow*> rows;
    for (const DataRow& row : batch) rows.push_back(&row);

    DualTowerModel work = model;
    DualTowerModel grads = model;
    zero_params(grads);
    const double base_loss = joint_eval(work, rows, &grads, nullptr);
    std::vector<double> flat = pack_params(work);
    const std::vector<double> analytic = pack_params(grads);
    const std::vector<CoordRef> refs = coord_refs(work);

    // Tower coordinates shift every task logit, so demand a safety margin
    // from bucket and clip edges for all rows up front.
    bool tower_safe = true;
    for (const DataRow* row : rows) {
        const int s = work.task_index(row->task_id);
        if (s < 0) continue;
        const double r = tower_forward(row->features, work.tower)[static_cast<std::size_t>(s)];
        const BucketPoint at = locate_bucket(r, work.iso_cfg);
        const double clip_margin =
            std::min(r - (work.iso_cfg.lower_bound + work.iso_cfg.clip_epsilon),
                     (work.iso_cfg.upper_bound - work.iso_cfg.clip_epsilon) - r);
        if (at.saturated || clip_margin <= edge_margin || at.partial <= edge_margin ||
            work.iso_cfg.bucket_width - at.partial <= edge_margin) {
            tower_safe = false;
            break;
        }
    }

    auto gate_near_kink = [&](int task, int bucket, int only_row) {
        const IsoHead& head = work.heads[static_cast<std::size_t>(task)];
        const double w = head.params.weights[static_cast<std::size_t>(bucket)];
        for (std::size_t rho = 0; rho < head.table.rows.size(); ++rho) {
            if (only_row >= 0 && static_cast<std::size_t>(only_row) != rho) continue;
            if (std::abs(w + head.table.rows[rho][static_cast<std::size_t>(bucket)]) <= 10.0 * h)
                return true;
        }
        return false;
    };

    Rng rng(seed);
    double max_rel = 0.0;
    int checked = 0;
    const long draw_cap = 500L * sample_count;
    for (long draw = 0; draw < draw_cap && checked < sample_count; ++draw) {
        const std::size_t c = static_cast<std::size_t>(rng.below(flat.size()));
        const CoordRef& ref = refs[c];
        if (ref.frozen) continue;
        if ((ref.kind == CoordKind::tower_weight || ref.kind == CoordKind::tower_bias) &&
            !tower_safe)
            continue;
        if (ref.kind == CoordKind::head_weight && gate_near_kink(ref.task, ref.bucket, -1))
            continue;
        if (ref.kind == CoordKind::embedding && gate_near_kink(ref.task, ref.bucket, ref.row))
            continue;
        if (analytic[c] != 0.0 &&
            std::abs(analytic[c]) < 1e-4 * std::max(1.0, std::abs(base_loss)))
            continue;

        const double saved = flat[c];
        flat[c] = saved + h;
        unpack_params(flat, work);
        const double plus = joint_eval(work, rows, nullptr, nullptr);
        flat[c] = saved - h;
        unpack_params(flat, work);
        const double minus = joint_eval(work, rows, nullptr, nullptr);
        flat[c] = saved;
        unpack_params(flat, work);

        const double fd = (plus - minus) / (2.0 * h);
        const double rel = std::abs(analytic[c] - fd) / std::max(1e-12, std::abs(fd));
        max_rel = std::max(max_rel, rel);
        ++checked;
    }
    if (checked < sample_count)
        throw NumericError("dual_tower_fd_check: could not find enough valid probes");
    return max_rel;
}

}  // namespace isocal
