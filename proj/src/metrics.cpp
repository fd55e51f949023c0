#include "isocal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "isocal/errors.hpp"
#include "isocal/training.hpp"

namespace isocal {

double auc(std::span<const double> scores, std::span<const double> labels) {
    if (scores.empty() || scores.size() != labels.size())
        throw DataError("auc: empty input or length mismatch");
    long pos = 0, neg = 0;
    for (double t : labels) {
        if (t == 1.0)
            ++pos;
        else if (t == 0.0)
            ++neg;
        else
            throw DataError("auc: labels must be 0 or 1");
    }
    if (pos == 0 || neg == 0)
        throw DataError("auc: both classes required");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Average rank over each tie run; ranks are half-integers, so the sum is
    // exact and matches all-pairs enumeration bitwise.
    double pos_rank_sum = 0.0;
    std::size_t k = 0;
    while (k < order.size()) {
        std::size_t run = k + 1;
        while (run < order.size() && scores[order[run]] == scores[order[k]]) ++run;
        const double avg_rank = (static_cast<double>(k + 1) + static_cast<double>(run)) / 2.0;
        for (std::size_t idx = k; idx < run; ++idx)
            if (labels[order[idx]] == 1.0) pos_rank_sum += avg_rank;
        k = run;
    }
    const double p = static_cast<double>(pos);
    const double u = pos_rank_sum - p * (p + 1.0) / 2.0;
    return u / (p * static_cast<double>(neg));
}

double normalized_entropy(std::span<const double> preds, std::span<const double> labels) {
    if (preds.empty() || preds.size() != labels.size())
        throw DataError("normalized_entropy: empty input or length mismatch");
    double positives = 0.0;
    for (double t : labels) {
        if (t != 0.0 && t != 1.0)
            throw DataError("normalized_entropy: labels must be 0 or 1");
        positives += t;
    }
    const double n = static_cast<double>(labels.size());
    const double base = positives / n;
    if (base == 0.0 || base == 1.0)
        throw DataError("normalized_entropy: degenerate base rate");
    const std::vector<double> constant(labels.size(), base);
    return bce_loss(preds, labels) / bce_loss(constant, labels);
}

double ece(std::span<const double> preds, std::span<const double> labels, int num_bins) {
    if (preds.empty() || preds.size() != labels.size())
        throw DataError("ece: empty input or length mismatch");
    if (num_bins < 1)
        throw ConfigError("ece: num_bins must be >= 1");
    std::vector<double> pred_sum(num_bins, 0.0), label_sum(num_bins, 0.0);
    std::vector<long> count(num_bins, 0);
    for (std::size_t k = 0; k < preds.size(); ++k) {
        if (!(preds[k] >= 0.0) || !(preds[k] <= 1.0))
            throw DataError("ece: prediction outside [0, 1]");
        int bin = static_cast<int>(preds[k] * num_bins);
        if (bin >= num_bins) bin = num_bins - 1;  // pred == 1.0 joins the top bin
        pred_sum[bin] += preds[k];
        label_sum[bin] += labels[k];
        ++count[bin];
    }
    const double n = static_cast<double>(preds.size());
    double total = 0.0;
    for (int bin = 0; bin < num_bins; ++bin) {
        if (count[bin] == 0) continue;
        const double c = static_cast<double>(count[bin]);
        total += (c / n) * std::abs(pred_sum[bin] / c - label_sum[bin] / c);
    }
    return total;
}

std::map<std::string, GroupRate> oe_ratio(std::span<const double> preds,
                                          std::span<const double> labels,
                                          std::span<const std::string> group_ids) {
    if (preds.empty() || preds.size() != labels.size() || labels.size() != group_ids.size())
        throw DataError("oe_ratio: empty input or length mismatch");
    std::map<std::string, GroupRate> out;
    for (std::size_t k = 0; k < preds.size(); ++k) {
        GroupRate& g = out[group_ids[k]];
        g.observed += labels[k];
        g.expected += preds[k];
        ++g.count;
    }
    for (auto& [id, g] : out) {
        g.defined = g.expected != 0.0;
        g.ratio = g.defined ? g.observed / g.expected : 0.0;
    }
    return out;
}

EvalReport evaluate(std::span<const double> preds, std::span<const double> labels,
                    std::span<const std::string> group_ids, int ece_bins) {
    EvalReport report;
    report.sample_count = static_cast<long>(preds.size());
    report.auc = auc(preds, labels);
    report.normalized_entropy = normalized_entropy(preds, labels);
    report.ece = ece(preds, labels, ece_bins);
    if (!group_ids.empty()) report.oe_by_group = oe_ratio(preds, labels, group_ids);
    return report;
}

}  // namespace isocal
