#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mfcov/data.hpp"
#include "mfcov/fit.hpp"

namespace mfcov::io {

/// Long-format CSV with header `subject,response,time,value`.
/// With `labels`, unknown response labels are rejected; without, labels are
/// taken in order of first appearance. Errors carry the 1-based line number.
SparseFunctionalDataset read_csv(std::istream& in,
                                 const std::optional<std::vector<std::string>>& labels = {});
SparseFunctionalDataset read_csv(const std::filesystem::path& path,
                                 const std::optional<std::vector<std::string>>& labels = {});
void write_csv(std::ostream& out, const SparseFunctionalDataset& data);
void write_csv(const std::filesystem::path& path, const SparseFunctionalDataset& data);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

/// Little-endian float64 bytes of the column-major data, base64 encoded.
std::string encode_doubles(const double* data, std::size_t n);
std::vector<double> decode_doubles(const std::string& text);

/// Everything needed to reproduce fitted curves and predictions.
/// Smoothing surfaces and warnings are not part of the model file.
struct ModelFile {
    std::vector<std::string> labels;
    int mean_n_interior = 0;
    double pve = 0.99;
    FittedModel fit;
};

ModelFile make_model_file(const SparseFunctionalDataset& data, const FitOptions& options,
                          FittedModel fitted);

std::string serialize_model(const ModelFile& model);
ModelFile parse_model(const std::string& text);
void save_model(const std::filesystem::path& path, const ModelFile& model);
ModelFile load_model(const std::filesystem::path& path);

/// JSON report: selected smoothing parameters with their full iGCV
/// surfaces, mean CV curves, spectrum and warnings.
std::string fit_report(const ModelFile& model);

/// `component,response,time,value` for the first `components` eigenfunctions.
void write_eigenfunctions(std::ostream& out, const ModelFile& model, int components, int points);
/// `response1,response2,s,t,covariance,correlation` on a points x points grid.
void write_surfaces(std::ostream& out, const ModelFile& model, int points);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

} // namespace mfcov::io
