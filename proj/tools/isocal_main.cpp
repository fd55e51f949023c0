// Command-line front end: dataset generation, training, calibration,
// evaluation, curve export, and scoring over the CSV/JSON formats described
// in the README. Exit codes: 0 success, 2 usage or configuration error,
// 3 data error, 4 numerical failure.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "isocal/baselines.hpp"
#include "isocal/bias_sim.hpp"
#include "isocal/context.hpp"
#include "isocal/dataset.hpp"
#include "isocal/dual_tower.hpp"
#include "isocal/errors.hpp"
#include "isocal/isotonic_layer.hpp"
#include "isocal/metrics.hpp"
#include "isocal/model_io.hpp"
#include "isocal/training.hpp"

namespace {

using Json = nlohmann::json;  // std::map-backed object: stable sorted keys
using namespace isocal;

void write_json_file(const std::string& path, const Json& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot open for writing: " + path);
    out << body.dump(2) << '\n';
    if (!out)
        throw DataError("write failed: " + path);
}

Json read_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError("cannot open config file: " + path);
    Json j;
    try {
        in >> j;
    } catch (const Json::exception& e) {
        throw ConfigError("config file " + path + ": " + e.what());
    }
    if (!j.is_object())
        throw ConfigError("config file " + path + ": top level must be an object");
    return j;
}

// Values from a --config file override the parsed flags. Every key must be
// consumed so typos fail loudly instead of silently keeping a default.
class ConfigPatch {
  public:
    explicit ConfigPatch(const std::string& path) {
        if (!path.empty()) body_ = read_json_file(path);
    }

    template <typename T>
    void take(const char* key, T& out) {
        const auto it = body_.find(key);
        if (it == body_.end()) return;
        try {
            out = it->get<T>();
        } catch (const Json::exception& e) {
            throw ConfigError(std::string("config key '") + key + "': " + e.what());
        }
        consumed_.insert(key);
    }

    void finish(const std::string& command) const {
        for (const auto& [key, value] : body_.items()) {
            (void)value;
            if (consumed_.count(key) == 0)
                throw ConfigError("config: unknown key '" + key + "' for command " + command);
        }
    }

  private:
    Json body_ = Json::object();
    std::set<std::string> consumed_;
};

std::vector<std::string> split_csv_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream stream(text);
    std::string item;
    while (std::getline(stream, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

// Shared layer-geometry flags.
struct LayerFlags {
    double lower = -17.0;
    double upper = 8.0;
    double bucket_width = 0.05;
    double clip_epsilon = 1e-9;

    void attach(CLI::App* cmd) {
        cmd->add_option("--lower", lower, "Lower bucketization bound");
        cmd->add_option("--upper", upper, "Upper bucketization bound");
        cmd->add_option("--bucket-width", bucket_width, "Bucket width");
        cmd->add_option("--clip-epsilon", clip_epsilon, "Input clip margin");
    }
    void patch(ConfigPatch& p) {
        p.take("lower", lower);
        p.take("upper", upper);
        p.take("bucket_width", bucket_width);
        p.take("clip_epsilon", clip_epsilon);
    }
    IsotonicConfig config() const {
        IsotonicConfig cfg;
        cfg.lower_bound = lower;
        cfg.upper_bound = upper;
        cfg.bucket_width = bucket_width;
        cfg.clip_epsilon = clip_epsilon;
        cfg.validate();
        return cfg;
    }
    Json to_json() const {
        return Json{{"lower", lower},
                    {"upper", upper},
                    {"bucket_width", bucket_width},
                    {"clip_epsilon", clip_epsilon}};
    }
};

struct HyperFlags {
    int epochs = 40;
    int batch_size = 256;
    double lr = 1e-2;
    std::string optimizer = "adam";
    std::uint64_t seed = 1;
    double w_init = 0.1;

    void attach(CLI::App* cmd) {
        cmd->add_option("--epochs", epochs, "Training epochs");
        cmd->add_option("--batch-size", batch_size, "Mini-batch size");
        cmd->add_option("--lr", lr, "Learning rate");
        cmd->add_option("--optimizer", optimizer, "Optimizer: adam | sgd");
        cmd->add_option("--seed", seed, "Run seed");
        cmd->add_option("--w-init", w_init, "Initial bucket weight");
    }
    void patch(ConfigPatch& p) {
        p.take("epochs", epochs);
        p.take("batch_size", batch_size);
        p.take("lr", lr);
        p.take("optimizer", optimizer);
        p.take("seed", seed);
        p.take("w_init", w_init);
    }
    FitHyperparams to_fit() const {
        FitHyperparams hp;
        hp.epochs = epochs;
        hp.batch_size = batch_size;
        hp.lr = lr;
        hp.optimizer = optimizer_from_name(optimizer);
        hp.seed = seed;
        hp.w_init_factor = w_init;
        return hp;
    }
    Json to_json() const {
        return Json{{"epochs", epochs},      {"batch_size", batch_size}, {"lr", lr},
                    {"optimizer", optimizer}, {"seed", seed},            {"w_init", w_init}};
    }
};

double base_rate_bce(const std::vector<double>& labels) {
    double positives = 0.0;
    for (double t : labels) positives += t;
    const double base = positives / static_cast<double>(labels.size());
    if (base == 0.0 || base == 1.0) return 0.0;  // degenerate, caller omits NE
    const std::vector<double> constant(labels.size(), base);
    return bce_loss(constant, labels);
}

Json report_json(const TrainReport& report) {
    return Json{{"epoch_losses", report.epoch_losses},
                {"final_loss", report.final_loss},
                {"sample_count", report.sample_count},
                {"clamped_predictions", report.clamped_predictions},
                {"seed", report.seed}};
}

Json metrics_json(const EvalReport& report) {
    Json oe = Json::object();
    for (const auto& [group, rate] : report.oe_by_group) {
        oe[group] = Json{{"observed", rate.observed},
                         {"expected", rate.expected},
                         {"count", rate.count},
                         {"defined", rate.defined},
                         {"ratio", rate.ratio}};
    }
    return Json{{"auc", report.auc},
                {"normalized_entropy", report.normalized_entropy},
                {"ece", report.ece},
                {"oe_by_group", oe},
                {"sample_count", report.sample_count}};
}

// Agreement block against the simulator's hidden rate: ranking quality via a
// median split plus direct calibration distances (the truth is a probability,
// not a coin flip, so BCE-based metrics do not apply).
Json truth_json(const std::vector<double>& preds, const std::vector<double>& truth,
                const std::vector<std::string>& groups, int ece_bins) {
    Json block = Json::object();
    std::vector<double> sorted = truth;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[sorted.size() / 2];
    std::vector<double> split;
    long above = 0;
    for (double v : truth) {
        split.push_back(v > median ? 1.0 : 0.0);
        above += v > median;
    }
    if (above > 0 && above < static_cast<long>(truth.size()))
        block["auc_median_split"] = auc(preds, split);

    double mae = 0.0;
    for (std::size_t k = 0; k < preds.size(); ++k) mae += std::abs(preds[k] - truth[k]);
    block["mean_absolute_error"] = mae / static_cast<double>(preds.size());
    block["ece"] = ece(preds, truth, ece_bins);
    if (!groups.empty()) {
        Json oe = Json::object();
        for (const auto& [group, rate] : oe_ratio(preds, truth, groups))
            oe[group] = Json{{"ratio", rate.ratio}, {"defined", rate.defined},
                             {"count", rate.count}};
        block["oe_by_group"] = oe;
    }
    return block;
}

void write_curve_csv(const std::string& path, const std::vector<std::string>& header,
                     const std::vector<std::vector<double>>& columns) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot open for writing: " + path);
    for (std::size_t c = 0; c < header.size(); ++c)
        out << (c == 0 ? "" : ",") << header[c];
    out << '\n';
    for (std::size_t row = 0; row < columns.front().size(); ++row) {
        for (std::size_t c = 0; c < columns.size(); ++c)
            out << (c == 0 ? "" : ",") << format_double(columns[c][row]);
        out << '\n';
    }
    if (!out)
        throw DataError("write failed: " + path);
}

// ---------------------------------------------------------------- gen ----

struct GenArgs {
    std::string kind;
    long n = 1000;
    std::uint64_t seed = 1;
    std::string out;
    std::string report;
    std::string config_path;
    int positions = 5;
    int feature_dim = 4;
    std::string exposure = "uniform";
    std::string bias = "multiplicative";
};

int run_gen(GenArgs args) {
    ConfigPatch patch(args.config_path);
    patch.take("kind", args.kind);
    patch.take("n", args.n);
    patch.take("seed", args.seed);
    patch.take("out", args.out);
    patch.take("report", args.report);
    patch.take("positions", args.positions);
    patch.take("feature_dim", args.feature_dim);
    patch.take("exposure", args.exposure);
    patch.take("bias", args.bias);
    patch.finish("gen");

    Json config{{"kind", args.kind}, {"n", args.n}, {"seed", args.seed}};
    LabeledDataset data;
    if (args.kind == "quadratic") {
        data = gen_quadratic(args.n, args.seed);
    } else if (args.kind == "piecewise") {
        data = gen_piecewise(args.n, args.seed);
    } else if (args.kind == "position") {
        PositionBiasScenario sc = PositionBiasScenario::defaults(args.n, args.seed);
        sc.position_count = args.positions;
        sc.feature_dim = args.feature_dim;
        if (args.exposure == "uniform")
            sc.exposure = ExposurePolicy::uniform;
        else if (args.exposure == "oracle_sorted")
            sc.exposure = ExposurePolicy::oracle_sorted;
        else
            throw ConfigError("gen: unknown exposure '" + args.exposure + "'");
        if (args.bias == "multiplicative")
            sc.bias = BiasModel::multiplicative;
        else if (args.bias == "additive_logit")
            sc.bias = BiasModel::additive_logit;
        else
            throw ConfigError("gen: unknown bias model '" + args.bias + "'");
        sc.tasks[0].propensities = log_rank_propensities(args.positions);
        sc.tasks[1].propensities = log_rank_propensities(args.positions);
        for (double& v : sc.tasks[1].propensities) v = std::sqrt(v);
        data = gen_position_logs(sc);
        config["positions"] = args.positions;
        config["feature_dim"] = args.feature_dim;
        config["exposure"] = args.exposure;
        config["bias"] = args.bias;
    } else {
        throw ConfigError("gen: unknown kind '" + args.kind + "'");
    }
    write_csv(data, args.out);
    if (!args.report.empty()) {
        write_json_file(args.report, Json{{"command", "gen"},
                                          {"config", config},
                                          {"rows", static_cast<long>(data.rows.size())},
                                          {"out", args.out}});
    }
    return 0;
}

// ---------------------------------------------------------------- fit ----

struct FitArgs {
    std::string data;
    std::string kind = "isotonic";
    std::string out;
    std::string report;
    std::string config_path;
    LayerFlags layer;
    HyperFlags hyper;
};

int run_fit(FitArgs args) {
    ConfigPatch patch(args.config_path);
    patch.take("data", args.data);
    patch.take("kind", args.kind);
    patch.take("out", args.out);
    patch.take("report", args.report);
    args.layer.patch(patch);
    args.hyper.patch(patch);
    patch.finish("fit");

    const LabeledDataset data = read_csv(args.data);
    if (!data.has_input)
        throw DataError("fit: dataset has no input column");
    data.validate();

    std::vector<double> labels;
    labels.reserve(data.rows.size());
    for (const DataRow& row : data.rows) labels.push_back(row.label);
    const double base_bce = base_rate_bce(labels);

    Json report{{"command", "fit"},
                {"kind", args.kind},
                {"data", args.data},
                {"out", args.out},
                {"hyperparams", args.hyper.to_json()}};

    ModelMeta meta;
    meta.seed = args.hyper.seed;
    meta.sample_count = static_cast<long>(data.rows.size());

    if (args.kind == "isotonic") {
        const IsotonicConfig cfg = args.layer.config();
        const FitResult result = fit(data, cfg, args.hyper.to_fit());
        meta.epochs = args.hyper.epochs;
        meta.final_loss = result.report.final_loss;
        save_isotonic(args.out, cfg, result.params, meta);
        report["layer"] = args.layer.to_json();
        report["train"] = report_json(result.report);
        if (base_bce > 0.0)
            report["train_normalized_entropy"] = result.report.final_loss / base_bce;
    } else if (args.kind == "pava") {
        // Scale-free in x: the staircase lives in the input column's space.
        std::vector<std::size_t> order(data.rows.size());
        for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return data.rows[a].input < data.rows[b].input;
        });
        std::vector<double> xs, ys;
        for (std::size_t k : order) {
            xs.push_back(data.rows[k].input);
            ys.push_back(data.rows[k].label);
        }
        const StepFunction staircase = pava_fit(xs, ys);
        std::vector<double> preds;
        for (std::size_t k = 0; k < data.rows.size(); ++k)
            preds.push_back(pava_predict(staircase, data.rows[k].input));
        meta.final_loss = bce_loss(preds, labels);
        save_pava(args.out, staircase, meta);
        report["train"] = Json{{"final_loss", meta.final_loss},
                               {"segments", static_cast<long>(staircase.levels.size())}};
        if (base_bce > 0.0) report["train_normalized_entropy"] = meta.final_loss / base_bce;
    } else if (args.kind == "platt") {
        std::vector<double> scores;
        for (const DataRow& row : data.rows) scores.push_back(row.input);
        const PlattParams platt = platt_fit(scores, labels);
        std::vector<double> preds;
        for (double s : scores) preds.push_back(platt_predict(platt, s));
        meta.final_loss = bce_loss(preds, labels);
        save_platt(args.out, platt, meta);
        report["train"] = Json{{"final_loss", meta.final_loss},
                               {"slope", platt.slope},
                               {"intercept", platt.intercept}};
        if (base_bce > 0.0) report["train_normalized_entropy"] = meta.final_loss / base_bce;
    } else {
        throw ConfigError("fit: unknown kind '" + args.kind + "'");
    }
    if (!args.report.empty()) write_json_file(args.report, report);
    return 0;
}

// ---------------------------------------------------------- calibrate ----

struct CalibrateArgs {
    std::string data;
    std::string out;
    std::string report;
    std::string contexts;
    std::string config_path;
    LayerFlags layer;
    HyperFlags hyper;
};

int run_calibrate(CalibrateArgs args) {
    ConfigPatch patch(args.config_path);
    patch.take("data", args.data);
    patch.take("out", args.out);
    patch.take("report", args.report);
    patch.take("contexts", args.contexts);
    args.layer.patch(patch);
    args.hyper.patch(patch);
    patch.finish("calibrate");

    const LabeledDataset data = read_csv(args.data);
    if (!data.has_input)
        throw DataError("calibrate: dataset has no input column (upstream scores)");
    data.validate();

    std::vector<double> scores, labels;
    std::vector<std::string> contexts;
    for (const DataRow& row : data.rows) {
        if (row.context_id.empty())
            throw DataError("calibrate: every row needs a context_id");
        scores.push_back(row.input);
        labels.push_back(row.label);
        contexts.push_back(row.context_id);
    }

    const IsotonicConfig cfg = args.layer.config();
    const FitHyperparams hp = args.hyper.to_fit();
    const CalibrationResult result =
        calibrate_frozen(scores, labels, contexts, cfg, hp, split_csv_list(args.contexts));

    ModelMeta meta;
    meta.seed = hp.seed;
    meta.epochs = hp.epochs;
    meta.sample_count = static_cast<long>(data.rows.size());
    double weighted_loss = 0.0;
    long trained_rows = 0;
    Json per_context = Json::object();
    for (const auto& [context, train] : result.reports) {
        per_context[context] = report_json(train);
        weighted_loss += train.final_loss * static_cast<double>(train.sample_count);
        trained_rows += train.sample_count;
    }
    meta.final_loss = trained_rows > 0 ? weighted_loss / static_cast<double>(trained_rows) : 0.0;
    save_calibration(args.out, cfg, result, meta);

    if (!args.report.empty()) {
        write_json_file(args.report,
                        Json{{"command", "calibrate"},
                             {"data", args.data},
                             {"out", args.out},
                             {"layer", args.layer.to_json()},
                             {"hyperparams", args.hyper.to_json()},
                             {"per_context", per_context},
                             {"identity_fallbacks", result.identity_fallbacks},
                             {"final_loss", meta.final_loss}});
    }
    return 0;
}

// --------------------------------------------------------- train-dual ----

struct TrainDualArgs {
    std::string data;
    std::string out;
    std::string report;
    std::string config_path;
    std::vector<int> hidden = {16, 16};
    double init_scale = 1.0;
    double alpha = 1.0;
    double beta = 0.75;
    bool alpha_set = false;
    bool beta_set = false;
    std::string tasks;
    std::string contexts;
    bool no_context_bias = false;
    LayerFlags layer;
    HyperFlags hyper;
};

int run_train_dual(TrainDualArgs args) {
    ConfigPatch patch(args.config_path);
    patch.take("data", args.data);
    patch.take("out", args.out);
    patch.take("report", args.report);
    patch.take("hidden", args.hidden);
    patch.take("init_scale", args.init_scale);
    patch.take("tasks", args.tasks);
    patch.take("contexts", args.contexts);
    patch.take("no_context_bias", args.no_context_bias);
    args.layer.patch(patch);
    args.hyper.patch(patch);
    // Scalar weights broadcast over tasks; per-task arrays come via config.
    std::vector<double> alpha_vec, beta_vec;
    {
        double a = args.alpha, b = args.beta;
        patch.take("alpha", a);
        patch.take("beta", b);
        if (a != args.alpha || args.alpha_set) {
            args.alpha = a;
            args.alpha_set = true;
        }
        if (b != args.beta || args.beta_set) {
            args.beta = b;
            args.beta_set = true;
        }
        patch.take("alpha_per_task", alpha_vec);
        patch.take("beta_per_task", beta_vec);
    }
    patch.finish("train-dual");

    const LabeledDataset data = read_csv(args.data);
    data.validate();

    DualTowerConfig cfg;
    cfg.hidden = args.hidden;
    cfg.init_scale = args.init_scale;
    cfg.iso = args.layer.config();
    cfg.tasks = split_csv_list(args.tasks);
    cfg.contexts = split_csv_list(args.contexts);
    cfg.context_bias = !args.no_context_bias;

    // Resolve the task list early when weights must be broadcast.
    std::vector<std::string> tasks = cfg.tasks;
    if (tasks.empty()) {
        std::set<std::string> names;
        for (const DataRow& row : data.rows)
            if (!row.task_id.empty()) names.insert(row.task_id);
        tasks.assign(names.begin(), names.end());
    }
    if (!alpha_vec.empty())
        cfg.alpha = alpha_vec;
    else if (args.alpha_set)
        cfg.alpha.assign(tasks.size(), args.alpha);
    if (!beta_vec.empty())
        cfg.beta = beta_vec;
    else if (args.beta_set)
        cfg.beta.assign(tasks.size(), args.beta);

    const DualHyperparams hp = [&] {
        DualHyperparams h;
        h.epochs = args.hyper.epochs;
        h.batch_size = args.hyper.batch_size;
        h.lr = args.hyper.lr;
        h.optimizer = optimizer_from_name(args.hyper.optimizer);
        h.seed = args.hyper.seed;
        return h;
    }();

    const DualTrainResult result = train_dual_tower(data, cfg, hp);

    ModelMeta meta;
    meta.seed = hp.seed;
    meta.epochs = hp.epochs;
    meta.final_loss = result.report.final_loss;
    meta.sample_count = result.report.sample_count;
    save_dual_tower(args.out, result.model, meta);

    if (!args.report.empty()) {
        write_json_file(args.report,
                        Json{{"command", "train-dual"},
                             {"data", args.data},
                             {"out", args.out},
                             {"hidden", args.hidden},
                             {"init_scale", args.init_scale},
                             {"alpha", result.model.alpha},
                             {"beta", result.model.beta},
                             {"context_bias", cfg.context_bias},
                             {"layer", args.layer.to_json()},
                             {"hyperparams", args.hyper.to_json()},
                             {"tasks", result.model.task_names},
                             {"train", report_json(result.report)}});
    }
    return 0;
}

// --------------------------------------------------------------- eval ----

struct EvalArgs {
    std::string model;
    std::string data;
    std::string out;
    int ece_bins = 10;
    std::string config_path;
};

// Scalar-model predictions. Input conventions per kind: isotonic and platt
// consume logits, pava and calibration consume probabilities.
std::vector<double> scalar_predictions(const LoadedModel& model, const LabeledDataset& data) {
    std::vector<double> preds;
    preds.reserve(data.rows.size());
    for (const DataRow& row : data.rows) {
        if (model.kind == "isotonic") {
            preds.push_back(forward(row.input, model.iso_params, model.iso_cfg));
        } else if (model.kind == "pava") {
            preds.push_back(pava_predict(model.pava, row.input));
        } else if (model.kind == "platt") {
            preds.push_back(platt_predict(model.platt, row.input));
        } else {  // calibration
            const auto it = model.calibration.find(row.context_id);
            if (it == model.calibration.end())
                throw DataError("eval: context '" + row.context_id +
                                "' not present in calibration model");
            preds.push_back(forward(logit(row.input), it->second, model.iso_cfg));
        }
    }
    return preds;
}

int run_eval(EvalArgs args) {
    ConfigPatch patch(args.config_path);
    patch.take("model", args.model);
    patch.take("data", args.data);
    patch.take("out", args.out);
    patch.take("ece_bins", args.ece_bins);
    patch.finish("eval");

    const LoadedModel model = load_model(args.model);
    const LabeledDataset data = read_csv(args.data);
    data.validate();
    if (data.rows.empty())
        throw DataError("eval: empty dataset");

    Json report{{"command", "eval"},
                {"model", args.model},
                {"model_kind", model.kind},
                {"data", args.data},
                {"ece_bins", args.ece_bins}};

    if (model.kind == "dual_tower") {
        if (data.feature_dim < 1)
            throw DataError("eval: dual-tower model needs feature columns");
        if (data.feature_dim != model.dual.tower.input_dim())
            throw DataError("eval: dataset feature_dim does not match the tower input");
        Json tasks = Json::object();
        long masked = 0;
        bool any = false;
        for (std::size_t s = 0; s < model.dual.task_names.size(); ++s) {
            const std::string& task = model.dual.task_names[s];
            std::vector<double> inf_preds, iso_preds, labels, truth;
            std::vector<std::string> groups;
            for (const DataRow& row : data.rows) {
                if (row.task_id != task) continue;
                inf_preds.push_back(inference_head(row.features, model.dual, static_cast<int>(s)));
                iso_preds.push_back(isotonic_head(row.features, row.context_id, model.dual,
                                                  static_cast<int>(s)));
                labels.push_back(row.label);
                if (data.has_latent_truth) truth.push_back(row.latent_truth);
                groups.push_back(row.context_id);
            }
            if (labels.empty()) continue;
            any = true;
            Json block;
            block["inference"] = metrics_json(evaluate(inf_preds, labels, groups, args.ece_bins));
            block["isotonic"] = metrics_json(evaluate(iso_preds, labels, groups, args.ece_bins));
            if (data.has_latent_truth) {
                block["inference_vs_truth"] = truth_json(inf_preds, truth, groups, args.ece_bins);
                block["isotonic_vs_truth"] = truth_json(iso_preds, truth, groups, args.ece_bins);
            }
            tasks[task] = std::move(block);
        }
        for (const DataRow& row : data.rows)
            masked += model.dual.task_index(row.task_id) < 0;
        if (!any)
            throw DataError("eval: no dataset row matches any model task");
        report["tasks"] = std::move(tasks);
        report["masked_rows"] = masked;
    } else {
        if (!data.has_input)
            throw DataError("eval: dataset has no input column");
        const std::vector<double> preds = scalar_predictions(model, data);
        std::vector<double> labels, truth;
        std::vector<std::string> groups;
        bool any_context = false;
        for (const DataRow& row : data.rows) {
            labels.push_back(row.label);
            if (data.has_latent_truth) truth.push_back(row.latent_truth);
            any_context = any_context || !row.context_id.empty();
            groups.push_back(row.context_id);
        }
        if (!any_context) groups.clear();
        report["metrics"] = metrics_json(evaluate(preds, labels, groups, args.ece_bins));
        if (data.has_latent_truth)
            report["vs_truth"] = truth_json(preds, truth, groups, args.ece_bins);
    }
    write_json_file(args.out, report);
    return 0;
}

// ------------------------------------------------------- export-curve ----

struct ExportArgs {
    std::string model;
    std::string out;
    double lower = -5.0;
    double upper = 5.0;
    int points = 201;
    std::string context;
    std::string task;
    std::string config_path;
};

int run_export_curve(ExportArgs args) {
    ConfigPatch patch(args.config_path);
    patch.take("model", args.model);
    patch.take("out", args.out);
    patch.take("lower", args.lower);
    patch.take("upper", args.upper);
    patch.take("points", args.points);
    patch.take("context", args.context);
    patch.take("task", args.task);
    patch.finish("export-curve");

    if (args.points < 2)
        throw ConfigError("export-curve: points must be >= 2");
    if (!(args.lower < args.upper))
        throw ConfigError("export-curve: lower must be below upper");

    const LoadedModel model = load_model(args.model);
    std::vector<double> grid(static_cast<std::size_t>(args.points));
    for (int k = 0; k < args.points; ++k)
        grid[static_cast<std::size_t>(k)] =
            args.lower + (args.upper - args.lower) * k / (args.points - 1);

    std::vector<std::string> header = {"x"};
    std::vector<std::vector<double>> columns = {grid};

    auto add_context_columns = [&](const IsotonicParams& params, const IsotonicConfig& cfg,
                                   const EmbeddingTable& table) {
        std::vector<std::string> wanted;
        if (!args.context.empty()) {
            if (table.vocabulary.count(args.context) == 0)
                throw ConfigError("export-curve: unknown context '" + args.context + "'");
            wanted.push_back(args.context);
        } else {
            for (const auto& [context, row] : table.vocabulary) {
                (void)row;
                wanted.push_back(context);
            }
        }
        for (const std::string& context : wanted) {
            header.push_back(wanted.size() == 1 ? "y" : context);
            std::vector<double> ys;
            for (double x : grid)
                ys.push_back(conditioned_forward(x, params, cfg, context, table));
            columns.push_back(std::move(ys));
        }
    };

    if (model.kind == "isotonic") {
        if (!args.context.empty())
            throw ConfigError("export-curve: plain isotonic models have no contexts");
        for (int u = 0; u < model.iso_params.units; ++u) {
            header.push_back(model.iso_params.units == 1 ? "y" : "unit_" + std::to_string(u));
            std::vector<double> ys;
            for (double x : grid) ys.push_back(forward(x, model.iso_params, model.iso_cfg, u));
            columns.push_back(std::move(ys));
        }
    } else if (model.kind == "pava") {
        header.push_back("y");
        std::vector<double> ys;
        for (double x : grid) ys.push_back(pava_predict(model.pava, x));
        columns.push_back(std::move(ys));
    } else if (model.kind == "platt") {
        header.push_back("y");
        std::vector<double> ys;
        for (double x : grid) ys.push_back(platt_predict(model.platt, x));
        columns.push_back(std::move(ys));
    } else if (model.kind == "calibration") {
        std::vector<std::string> wanted;
        if (!args.context.empty()) {
            if (model.calibration.count(args.context) == 0)
                throw ConfigError("export-curve: unknown context '" + args.context + "'");
            wanted.push_back(args.context);
        } else {
            for (const auto& [context, params] : model.calibration) {
                (void)params;
                wanted.push_back(context);
            }
        }
        for (const std::string& context : wanted) {
            header.push_back(wanted.size() == 1 ? "y" : context);
            std::vector<double> ys;
            for (double x : grid)
                ys.push_back(forward(x, model.calibration.at(context), model.iso_cfg));
            columns.push_back(std::move(ys));
        }
    } else {  // dual_tower
        int task = 0;
        if (!args.task.empty()) {
            task = model.dual.task_index(args.task);
            if (task < 0)
                throw ConfigError("export-curve: unknown task '" + args.task + "'");
        }
        const IsoHead& head = model.dual.heads[static_cast<std::size_t>(task)];
        add_context_columns(head.params, model.dual.iso_cfg, head.table);
    }

    write_curve_csv(args.out, header, columns);
    return 0;
}

// -------------------------------------------------------------- score ----

struct ScoreArgs {
    std::string model;
    std::string data;
    std::string out;
    std::string config_path;
};

int run_score(ScoreArgs args) {
    ConfigPatch patch(args.config_path);
    patch.take("model", args.model);
    patch.take("data", args.data);
    patch.take("out", args.out);
    patch.finish("score");

    const LoadedModel model = load_model(args.model);
    const LabeledDataset data = read_csv(args.data);
    data.validate();

    std::ofstream out(args.out, std::ios::binary);
    if (!out)
        throw DataError("cannot open for writing: " + args.out);
    if (model.kind == "dual_tower") {
        if (data.feature_dim != model.dual.tower.input_dim())
            throw DataError("score: dataset feature_dim does not match the tower input");
        out << "task_id,context_id,inference,isotonic\n";
        for (const DataRow& row : data.rows) {
            const int task = model.dual.task_index(row.task_id);
            if (task < 0)
                throw DataError("score: row task '" + row.task_id + "' unknown to the model");
            out << row.task_id << ',' << row.context_id << ','
                << format_double(inference_head(row.features, model.dual, task)) << ','
                << format_double(isotonic_head(row.features, row.context_id, model.dual, task))
                << '\n';
        }
    } else {
        if (!data.has_input)
            throw DataError("score: dataset has no input column");
        out << "prediction\n";
        for (double pred : scalar_predictions(model, data)) out << format_double(pred) << '\n';
    }
    if (!out)
        throw DataError("write failed: " + args.out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bucketized monotonic calibration toolkit"};
    app.require_subcommand(1);

    GenArgs gen_args;
    CLI::App* gen = app.add_subcommand("gen", "Generate a synthetic dataset CSV");
    gen->add_option("--kind", gen_args.kind, "quadratic | piecewise | position")->required();
    gen->add_option("--n", gen_args.n, "Sample count (items for position logs)");
    gen->add_option("--seed", gen_args.seed, "Generator seed");
    gen->add_option("--out", gen_args.out, "Output CSV path")->required();
    gen->add_option("--report", gen_args.report, "Optional run-report JSON path");
    gen->add_option("--positions", gen_args.positions, "Positions per session");
    gen->add_option("--feature-dim", gen_args.feature_dim, "Feature dimension");
    gen->add_option("--exposure", gen_args.exposure, "uniform | oracle_sorted");
    gen->add_option("--bias", gen_args.bias, "multiplicative | additive_logit");
    gen->add_option("--config", gen_args.config_path, "JSON config overriding flags");

    FitArgs fit_args;
    CLI::App* fit_cmd = app.add_subcommand("fit", "Train a calibration model");
    fit_cmd->add_option("--data", fit_args.data, "Training CSV")->required();
    fit_cmd->add_option("--kind", fit_args.kind, "isotonic | pava | platt");
    fit_cmd->add_option("--out", fit_args.out, "Model JSON path")->required();
    fit_cmd->add_option("--report", fit_args.report, "Optional run-report JSON path");
    fit_args.layer.attach(fit_cmd);
    fit_args.hyper.attach(fit_cmd);
    fit_cmd->add_option("--config", fit_args.config_path, "JSON config overriding flags");

    CalibrateArgs cal_args;
    CLI::App* cal = app.add_subcommand("calibrate",
                                       "Per-context post-hoc calibration of a frozen scorer");
    cal->add_option("--data", cal_args.data, "Scores CSV (input = probability)")->required();
    cal->add_option("--out", cal_args.out, "Model JSON path")->required();
    cal->add_option("--report", cal_args.report, "Optional run-report JSON path");
    cal->add_option("--contexts", cal_args.contexts, "Comma-separated declared contexts");
    cal_args.layer.attach(cal);
    cal_args.hyper.attach(cal);
    cal->add_option("--config", cal_args.config_path, "JSON config overriding flags");

    TrainDualArgs dual_args;
    CLI::App* dual = app.add_subcommand("train-dual", "Train the dual-head debiasing model");
    dual->add_option("--data", dual_args.data, "Training CSV with feature columns")->required();
    dual->add_option("--out", dual_args.out, "Model JSON path")->required();
    dual->add_option("--report", dual_args.report, "Optional run-report JSON path");
    dual->add_option("--hidden", dual_args.hidden, "Hidden layer widths");
    dual->add_option("--init-scale", dual_args.init_scale, "Tower init scale");
    dual->add_option("--alpha", dual_args.alpha, "Inference-head loss weight (broadcast)");
    dual->add_option("--beta", dual_args.beta, "Isotonic-head loss weight (broadcast)");
    dual->add_option("--tasks", dual_args.tasks, "Comma-separated task names");
    dual->add_option("--contexts", dual_args.contexts, "Comma-separated context ids");
    dual->add_flag("--no-context-bias", dual_args.no_context_bias,
                   "Disable the per-context bias term");
    dual_args.layer.bucket_width = 0.2;  // coarser default for the head
    dual_args.hyper.epochs = 6;
    dual_args.layer.attach(dual);
    dual_args.hyper.attach(dual);
    dual->add_option("--config", dual_args.config_path, "JSON config overriding flags");

    EvalArgs eval_args;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a model on a dataset");
    eval_cmd->add_option("--model", eval_args.model, "Model JSON path")->required();
    eval_cmd->add_option("--data", eval_args.data, "Evaluation CSV")->required();
    eval_cmd->add_option("--out", eval_args.out, "Report JSON path")->required();
    eval_cmd->add_option("--ece-bins", eval_args.ece_bins, "Calibration histogram bins");
    eval_cmd->add_option("--config", eval_args.config_path, "JSON config overriding flags");

    ExportArgs export_args;
    CLI::App* exp = app.add_subcommand("export-curve", "Sample a calibration curve to CSV");
    exp->add_option("--model", export_args.model, "Model JSON path")->required();
    exp->add_option("--out", export_args.out, "Curve CSV path")->required();
    exp->add_option("--lower", export_args.lower, "Grid lower bound");
    exp->add_option("--upper", export_args.upper, "Grid upper bound");
    exp->add_option("--points", export_args.points, "Grid point count");
    exp->add_option("--context", export_args.context, "Restrict to one context");
    exp->add_option("--task", export_args.task, "Dual-tower task name");
    exp->add_option("--config", export_args.config_path, "JSON config overriding flags");

    ScoreArgs score_args;
    CLI::App* score = app.add_subcommand("score", "Write model predictions for a dataset");
    score->add_option("--model", score_args.model, "Model JSON path")->required();
    score->add_option("--data", score_args.data, "Input CSV")->required();
    score->add_option("--out", score_args.out, "Predictions CSV path")->required();
    score->add_option("--config", score_args.config_path, "JSON config overriding flags");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << '\n';
        return 2;
    }

    try {
        if (gen->parsed()) return run_gen(gen_args);
        if (fit_cmd->parsed()) return run_fit(fit_args);
        if (cal->parsed()) return run_calibrate(cal_args);
        if (dual->parsed()) {
            dual_args.alpha_set = dual->count("--alpha") > 0;
            dual_args.beta_set = dual->count("--beta") > 0;
            return run_train_dual(dual_args);
        }
        if (eval_cmd->parsed()) return run_eval(eval_args);
        if (exp->parsed()) return run_export_curve(export_args);
        if (score->parsed()) return run_score(score_args);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 4;
    }
    return 0;
}
