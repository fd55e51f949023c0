#pragma once

#include <string>
#include <vector>

namespace isocal {

// One labeled example. `input` is a scalar score (logit or probability,
// caller's convention); `features` feed the relevance tower instead.
// Optional columns are flagged at the dataset level since presence must be
// consistent across rows.
struct DataRow {
    double input = 0.0;
    std::vector<double> features;
    std::string context_id;  // empty means absent
    std::string task_id;     // empty means absent
    double label = 0.0;
    double latent_truth = 0.0;
};

struct LabeledDataset {
    int feature_dim = 0;
    bool has_input = false;
    bool has_latent_truth = false;
    std::vector<DataRow> rows;

    void validate() const;  // shape consistency, binary labels
};

// Frozen CSV schema: input,feat_0..feat_{d-1},context_id,task_id,label,
// latent_truth. Empty cells for absent optionals, LF line endings, shortest
// round-trip decimals. Byte-identical output for identical datasets.
std::string csv_header(int feature_dim);
void write_csv(const LabeledDataset& data, const std::string& path);
LabeledDataset read_csv(const std::string& path);

// Shortest decimal string that parses back to exactly the same double.
std::string format_double(double value);
double parse_double(const std::string& text);  // DataError on junk

}  // namespace isocal
