#include "isocal/context.hpp"

#include "isocal/errors.hpp"

namespace isocal {

EmbeddingTable EmbeddingTable::zeros(const IsotonicConfig& cfg,
                                     const std::vector<std::string>& contexts,
                                     bool with_context_bias, std::string reference) {
    EmbeddingTable table;
    table.buckets = num_buckets(cfg);
    table.use_context_bias = with_context_bias;
    table.reference_context = std::move(reference);

    auto add = [&table](const std::string& id) {
        if (table.vocabulary.contains(id)) return;
        int row = static_cast<int>(table.rows.size());
        table.vocabulary.emplace(id, row);
        table.rows.emplace_back(table.buckets, 0.0);
        table.context_bias.push_back(0.0);
    };
    add(table.reference_context);
    for (const auto& c : contexts) add(c);
    return table;
}

int EmbeddingTable::row_index(const std::string& context) const {
    auto it = vocabulary.find(context);
    return it == vocabulary.end() ? -1 : it->second;
}

void EmbeddingTable::check_shape(const IsotonicConfig& cfg) const {
    if (buckets != num_buckets(cfg))
        throw ConfigError("embedding table bucket count does not match config");
    if (vocabulary.size() != rows.size())
        throw ConfigError("embedding table vocabulary and rows disagree");
    if (context_bias.size() != rows.size())
        throw ConfigError("embedding table context_bias length mismatch");
    for (const auto& row : rows)
        if (static_cast<int>(row.size()) != buckets)
            throw ConfigError("embedding row length does not match bucket count");
    if (!vocabulary.contains(reference_context))
        throw ConfigError("reference context missing from vocabulary");
    for (const auto& [id, row] : vocabulary)
        if (row < 0 || row >= static_cast<int>(rows.size()))
            throw ConfigError("vocabulary row index out of range");
}

LookupResult lookup(const std::string& c, const EmbeddingTable& table) {
    LookupResult result;
    result.row = table.row_index(c);
    if (result.row < 0) {
        result.row = table.row_index(table.reference_context);
        if (result.row < 0)
            throw ConfigError("reference context missing from vocabulary");
        result.out_of_vocabulary = true;
    }
    result.offsets = std::span<const double>(table.rows[result.row]);
    result.bias = table.use_context_bias ? table.context_bias[result.row] : 0.0;
    return result;
}

double conditioned_pre_activation(double x, const IsotonicParams& params,
                                  const IsotonicConfig& cfg, const std::string& c,
                                  const EmbeddingTable& table, int unit) {
    params.check_shape(cfg);
    table.check_shape(cfg);
    if (unit < 0 || unit >= params.units)
        throw ConfigError("unit index out of range");
    LookupResult hit = lookup(c, table);
    const double bias = params.bias[static_cast<std::size_t>(unit)] + hit.bias;
    if (table.mode == CombineMode::replace) {
        // Effective weights are relu(E(c)) alone; feeding the row as the
        // weight vector avoids forming w + (E - w) in floating point.
        return pre_activation_over(x, cfg, hit.offsets, {}, bias);
    }
    return pre_activation_over(x, cfg, params.weight_row(unit), hit.offsets, bias);
}

double conditioned_forward(double x, const IsotonicParams& params, const IsotonicConfig& cfg,
                           const std::string& c, const EmbeddingTable& table, int unit) {
    return sigmoid(conditioned_pre_activation(x, params, cfg, c, table, unit));
}

double neutralized_forward(double x, const IsotonicParams& params, const IsotonicConfig& cfg,
                           const EmbeddingTable& table, int unit) {
    return conditioned_forward(x, params, cfg, table.reference_context, table, unit);
}

}  // namespace isocal
