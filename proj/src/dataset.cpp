#include "isocal/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <system_error>

#include "isocal/errors.hpp"

namespace isocal {

std::string format_double(double value) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc())
        throw NumericError("failed to format double");
    return std::string(buf, ptr);
}

double parse_double(const std::string& text) {
    double value = 0.0;
    const char* first = text.data();
    const char* last = first + text.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last)
        throw DataError("not a number: '" + text + "'");
    return value;
}

void LabeledDataset::validate() const {
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const DataRow& row = rows[i];
        if (static_cast<int>(row.features.size()) != feature_dim)
            throw DataError("row " + std::to_string(i) + ": feature count " +
                            std::to_string(row.features.size()) + " != declared dim " +
                            std::to_string(feature_dim));
        if (!std::isfinite(row.label))
            throw DataError("row " + std::to_string(i) + ": non-finite label");
    }
}

std::string csv_header(int feature_dim) {
    std::string header = "input";
    for (int j = 0; j < feature_dim; ++j) header += ",feat_" + std::to_string(j);
    header += ",context_id,task_id,label,latent_truth";
    return header;
}

void write_csv(const LabeledDataset& data, const std::string& path) {
    data.validate();
    std::ofstream out(path, std::ios::binary);  // binary keeps LF on every platform
    if (!out)
        throw DataError("cannot open for writing: " + path);
    out << csv_header(data.feature_dim) << '\n';
    for (const DataRow& row : data.rows) {
        if (data.has_input) out << format_double(row.input);
        for (double f : row.features) out << ',' << format_double(f);
        out << ',' << row.context_id << ',' << row.task_id << ','
            << format_double(row.label) << ',';
        if (data.has_latent_truth) out << format_double(row.latent_truth);
        out << '\n';
    }
    if (!out)
        throw DataError("write failed: " + path);
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream stream(line);
    while (std::getline(stream, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

}  // namespace

LabeledDataset read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open for reading: " + path);
    std::string line;
    if (!std::getline(in, line))
        throw DataError("empty file: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();

    auto header = split_line(line);
    if (header.size() < 5 || header.front() != "input")
        throw DataError("bad csv header, expected schema starting with 'input': " + line);
    int feature_dim = static_cast<int>(header.size()) - 5;
    std::string expected = csv_header(feature_dim);
    if (line != expected)
        throw DataError("csv header mismatch: got '" + line + "', expected '" + expected + "'");

    LabeledDataset data;
    data.feature_dim = feature_dim;
    bool saw_input = false, saw_no_input = false;
    bool saw_truth = false, saw_no_truth = false;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_line(line);
        if (cells.size() != header.size())
            throw DataError("line " + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " cells, got " +
                            std::to_string(cells.size()));
        DataRow row;
        if (cells[0].empty()) {
            saw_no_input = true;
        } else {
            saw_input = true;
            row.input = parse_double(cells[0]);
        }
        row.features.reserve(feature_dim);
        for (int j = 0; j < feature_dim; ++j) row.features.push_back(parse_double(cells[1 + j]));
        row.context_id = cells[1 + feature_dim];
        row.task_id = cells[2 + feature_dim];
        row.label = parse_double(cells[3 + feature_dim]);
        const std::string& truth = cells[4 + feature_dim];
        if (truth.empty()) {
            saw_no_truth = true;
        } else {
            saw_truth = true;
            row.latent_truth = parse_double(truth);
        }
        data.rows.push_back(std::move(row));
    }
    if (saw_input && saw_no_input)
        throw DataError("input column must be filled on every row or on none");
    if (saw_truth && saw_no_truth)
        throw DataError("latent_truth column must be filled on every row or on none");
    data.has_input = saw_input;
    data.has_latent_truth = saw_truth;
    data.validate();
    return data;
}

}  // namespace isocal
