#include "isocal/model_io.hpp"

#include <fstream>

#include <json.hpp>

#include "isocal/errors.hpp"

namespace isocal {

namespace {

using Json = nlohmann::json;  // std::map-backed object keeps key order stable

Json config_to_json(const IsotonicConfig& cfg) {
    return Json{{"lower_bound", cfg.lower_bound},
                {"upper_bound", cfg.upper_bound},
                {"bucket_width", cfg.bucket_width},
                {"units", cfg.units},
                {"clip_epsilon", cfg.clip_epsilon}};
}

IsotonicConfig config_from_json(const Json& j) {
    IsotonicConfig cfg;
    cfg.lower_bound = j.at("lower_bound").get<double>();
    cfg.upper_bound = j.at("upper_bound").get<double>();
    cfg.bucket_width = j.at("bucket_width").get<double>();
    cfg.units = j.at("units").get<int>();
    cfg.clip_epsilon = j.at("clip_epsilon").get<double>();
    cfg.validate();
    return cfg;
}

Json params_to_json(const IsotonicParams& p) {
    return Json{{"units", p.units},
                {"buckets", p.buckets},
                {"weights", p.weights},
                {"bias", p.bias}};
}

IsotonicParams params_from_json(const Json& j) {
    IsotonicParams p;
    p.units = j.at("units").get<int>();
    p.buckets = j.at("buckets").get<int>();
    p.weights = j.at("weights").get<std::vector<double>>();
    p.bias = j.at("bias").get<std::vector<double>>();
    if (p.units < 1 || p.buckets < 2 ||
        p.weights.size() != static_cast<std::size_t>(p.units) * p.buckets ||
        p.bias.size() != static_cast<std::size_t>(p.units))
        throw DataError("model file: inconsistent isotonic parameter shapes");
    return p;
}

Json table_to_json(const EmbeddingTable& t) {
    Json vocab = Json::object();
    for (const auto& [id, row] : t.vocabulary) vocab[id] = row;
    // Zero rows are dropped; load rebuilds them from the vocabulary.
    Json rows = Json::object();
    for (const auto& [id, row] : t.vocabulary) {
        const std::vector<double>& values = t.rows[static_cast<std::size_t>(row)];
        bool nonzero = false;
        for (double v : values)
            if (v != 0.0) nonzero = true;
        if (nonzero) rows[id] = values;
    }
    return Json{{"buckets", t.buckets},
                {"mode", t.mode == CombineMode::additive ? "additive" : "replace"},
                {"use_context_bias", t.use_context_bias},
                {"reference_context", t.reference_context},
                {"vocabulary", vocab},
                {"rows", rows},
                {"context_bias", t.context_bias}};
}

EmbeddingTable table_from_json(const Json& j) {
    EmbeddingTable t;
    t.buckets = j.at("buckets").get<int>();
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "additive")
        t.mode = CombineMode::additive;
    else if (mode == "replace")
        t.mode = CombineMode::replace;
    else
        throw DataError("model file: unknown embedding mode '" + mode + "'");
    t.use_context_bias = j.at("use_context_bias").get<bool>();
    t.reference_context = j.at("reference_context").get<std::string>();
    for (const auto& [id, row] : j.at("vocabulary").items())
        t.vocabulary[id] = row.get<int>();
    t.rows.assign(t.vocabulary.size(), std::vector<double>(t.buckets, 0.0));
    for (const auto& [id, values] : j.at("rows").items()) {
        auto it = t.vocabulary.find(id);
        if (it == t.vocabulary.end())
            throw DataError("model file: embedding row for unknown context '" + id + "'");
        t.rows[static_cast<std::size_t>(it->second)] = values.get<std::vector<double>>();
    }
    t.context_bias = j.at("context_bias").get<std::vector<double>>();
    return t;
}

Json tower_to_json(const RelevanceTower& t) {
    return Json{{"dims", t.dims},
                {"hidden_activation", "tanh"},
                {"weights", t.weights},
                {"biases", t.biases}};
}

RelevanceTower tower_from_json(const Json& j) {
    RelevanceTower t;
    t.dims = j.at("dims").get<std::vector<int>>();
    if (j.at("hidden_activation").get<std::string>() != "tanh")
        throw DataError("model file: unsupported hidden activation");
    t.weights = j.at("weights").get<std::vector<std::vector<double>>>();
    t.biases = j.at("biases").get<std::vector<std::vector<double>>>();
    t.check_shape();
    return t;
}

Json meta_to_json(const ModelMeta& m) {
    return Json{{"seed", m.seed},
                {"epochs", m.epochs},
                {"final_loss", m.final_loss},
                {"sample_count", m.sample_count}};
}

ModelMeta meta_from_json(const Json& j) {
    ModelMeta m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.epochs = j.at("epochs").get<int>();
    m.final_loss = j.at("final_loss").get<double>();
    m.sample_count = j.at("sample_count").get<long>();
    return m;
}

void write_envelope(const std::string& path, const std::string& kind, Json body,
                    const ModelMeta& meta) {
    body["format_version"] = kModelFormatVersion;
    body["kind"] = kind;
    body["metadata"] = meta_to_json(meta);
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot open for writing: " + path);
    out << body.dump(2) << '\n';
    if (!out)
        throw DataError("write failed: " + path);
}

Json read_envelope(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open for reading: " + path);
    Json j;
    try {
        in >> j;
    } catch (const Json::exception& e) {
        throw DataError("model file " + path + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("format_version") || !j.contains("kind"))
        throw DataError("model file " + path + ": missing envelope fields");
    if (j.at("format_version").get<int>() != kModelFormatVersion)
        throw DataError("model file " + path + ": unsupported format version");
    return j;
}

}  // namespace

void save_isotonic(const std::string& path, const IsotonicConfig& cfg,
                   const IsotonicParams& params, const ModelMeta& meta) {
    params.check_shape(cfg);
    write_envelope(path, "isotonic",
                   Json{{"config", config_to_json(cfg)}, {"params", params_to_json(params)}},
                   meta);
}

void save_pava(const std::string& path, const StepFunction& f, const ModelMeta& meta) {
    write_envelope(path, "pava",
                   Json{{"breakpoints", f.breakpoints}, {"levels", f.levels}}, meta);
}

void save_platt(const std::string& path, const PlattParams& p, const ModelMeta& meta) {
    write_envelope(path, "platt", Json{{"slope", p.slope}, {"intercept", p.intercept}}, meta);
}

void save_calibration(const std::string& path, const IsotonicConfig& cfg,
                      const CalibrationResult& result, const ModelMeta& meta) {
    Json contexts = Json::object();
    for (const auto& [context, params] : result.per_context)
        contexts[context] = params_to_json(params);
    write_envelope(path, "calibration",
                   Json{{"config", config_to_json(cfg)},
                        {"contexts", contexts},
                        {"identity_fallbacks", result.identity_fallbacks}},
                   meta);
}

void save_dual_tower(const std::string& path, const DualTowerModel& model,
                     const ModelMeta& meta) {
    model.check_shape();
    Json heads = Json::array();
    for (const IsoHead& head : model.heads)
        heads.push_back(Json{{"params", params_to_json(head.params)},
                             {"table", table_to_json(head.table)}});
    write_envelope(path, "dual_tower",
                   Json{{"config", config_to_json(model.iso_cfg)},
                        {"tower", tower_to_json(model.tower)},
                        {"task_names", model.task_names},
                        {"alpha", model.alpha},
                        {"beta", model.beta},
                        {"heads", heads}},
                   meta);
}

LoadedModel load_model(const std::string& path) {
    const Json j = read_envelope(path);
    LoadedModel m;
    try {
        m.kind = j.at("kind").get<std::string>();
        m.meta = meta_from_json(j.at("metadata"));
        if (m.kind == "isotonic") {
            m.iso_cfg = config_from_json(j.at("config"));
            m.iso_params = params_from_json(j.at("params"));
            m.iso_params.check_shape(m.iso_cfg);
        } else if (m.kind == "pava") {
            m.pava.breakpoints = j.at("breakpoints").get<std::vector<double>>();
            m.pava.levels = j.at("levels").get<std::vector<double>>();
            if (m.pava.breakpoints.size() != m.pava.levels.size())
                throw DataError("model file: step function arrays disagree");
        } else if (m.kind == "platt") {
            m.platt.slope = j.at("slope").get<double>();
            m.platt.intercept = j.at("intercept").get<double>();
        } else if (m.kind == "calibration") {
            m.iso_cfg = config_from_json(j.at("config"));
            for (const auto& [context, params] : j.at("contexts").items()) {
                IsotonicParams p = params_from_json(params);
                p.check_shape(m.iso_cfg);
                m.calibration.emplace(context, std::move(p));
            }
            m.calibration_fallbacks =
                j.at("identity_fallbacks").get<std::vector<std::string>>();
        } else if (m.kind == "dual_tower") {
            m.dual.iso_cfg = config_from_json(j.at("config"));
            m.dual.tower = tower_from_json(j.at("tower"));
            m.dual.task_names = j.at("task_names").get<std::vector<std::string>>();
            m.dual.alpha = j.at("alpha").get<std::vector<double>>();
            m.dual.beta = j.at("beta").get<std::vector<double>>();
            for (const Json& head : j.at("heads")) {
                IsoHead h;
                h.params = params_from_json(head.at("params"));
                h.table = table_from_json(head.at("table"));
                m.dual.heads.push_back(std::move(h));
            }
            m.dual.check_shape();
        } else {
            throw DataError("model file: unknown kind '" + m.kind + "'");
        }
    } catch (const Json::exception& e) {
        throw DataError("model file " + path + ": " + e.what());
    } catch (const ConfigError& e) {
        // Shape/validation failures on stored parameters mean the file is
        // corrupt, not that the caller misconfigured anything.
        throw DataError("model file " + path + ": " + e.what());
    }
    return m;
}

void save_model(const std::string& path, const LoadedModel& model) {
    if (model.kind == "isotonic") {
        save_isotonic(path, model.iso_cfg, model.iso_params, model.meta);
    } else if (model.kind == "pava") {
        save_pava(path, model.pava, model.meta);
    } else if (model.kind == "platt") {
        save_platt(path, model.platt, model.meta);
    } else if (model.kind == "calibration") {
        CalibrationResult result;
        result.per_context = model.calibration;
        result.identity_fallbacks = model.calibration_fallbacks;
        save_calibration(path, model.iso_cfg, result, model.meta);
    } else if (model.kind == "dual_tower") {
        save_dual_tower(path, model.dual, model.meta);
    } else {
        throw ConfigError("save_model: unknown kind '" + model.kind + "'");
    }
}

}  // namespace isocal
