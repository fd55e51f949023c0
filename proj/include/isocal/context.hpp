#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "isocal/isotonic_layer.hpp"

namespace isocal {

// How a context row combines with the base weight row before the ReLU gate.
// `additive` (relu(w + E(c))) is the default: a zero row reproduces the
// shared base curve exactly, so a freshly initialized table is neutral.
// `replace` (relu(E(c))) swaps the row in wholesale.
enum class CombineMode { additive, replace };

inline constexpr const char* kDefaultReferenceContext = "__reference__";

// Per-context additive weight offsets. Each known context owns one row of
// length num_buckets; the reference context keeps a frozen all-zero row so
// neutralized evaluation coincides with the base curve.
struct EmbeddingTable {
    int buckets = 0;
    CombineMode mode = CombineMode::additive;
    bool use_context_bias = false;
    std::string reference_context = kDefaultReferenceContext;
    std::map<std::string, int> vocabulary;    // context id -> row index
    std::vector<std::vector<double>> rows;    // one per vocabulary entry
    std::vector<double> context_bias;         // per row, when enabled

    // Zero-initialized table over `contexts` plus the reference context.
    static EmbeddingTable zeros(const IsotonicConfig& cfg,
                                const std::vector<std::string>& contexts,
                                bool with_context_bias = false,
                                std::string reference = kDefaultReferenceContext);

    int row_index(const std::string& context) const;  // -1 when unknown
    void check_shape(const IsotonicConfig& cfg) const;
};

struct LookupResult {
    std::span<const double> offsets;
    double bias = 0.0;
    int row = -1;
    bool out_of_vocabulary = false;
};

// Row for context `c`; unknown ids fall back to the reference row with the
// out_of_vocabulary flag set (a flagged fallback, not a failure).
LookupResult lookup(const std::string& c, const EmbeddingTable& table);

double conditioned_pre_activation(double x, const IsotonicParams& params,
                                  const IsotonicConfig& cfg, const std::string& c,
                                  const EmbeddingTable& table, int unit = 0);

// forward() with effective weights relu(w + E(c)) (or relu(E(c)) in replace
// mode) and bias b + b(c). Monotone in x for every context.
double conditioned_forward(double x, const IsotonicParams& params, const IsotonicConfig& cfg,
                           const std::string& c, const EmbeddingTable& table, int unit = 0);

// conditioned_forward at the reference context: counterfactual scoring with
// the logged context stripped out.
double neutralized_forward(double x, const IsotonicParams& params, const IsotonicConfig& cfg,
                           const EmbeddingTable& table, int unit = 0);

}  // namespace isocal
