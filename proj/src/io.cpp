#include "mfcov/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>
#include <openssl/evp.h>

namespace mfcov::io {

using nlohmann::json;

namespace {

std::runtime_error line_error(std::size_t line, const std::string& what) {
    return std::runtime_error("line " + std::to_string(line) + ": " + what);
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        out.push_back(line.substr(start, pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

bool parse_double(const std::string& s, double& v) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (first != last && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    return ec == std::errc() && ptr == last;
}

json matrix_json(const Eigen::MatrixXd& m) {
    return json{{"rows", m.rows()}, {"cols", m.cols()},
                {"data", encode_doubles(m.data(), static_cast<std::size_t>(m.size()))}};
}

Eigen::MatrixXd matrix_from(const json& j) {
    const Eigen::Index rows = j.at("rows").get<Eigen::Index>();
    const Eigen::Index cols = j.at("cols").get<Eigen::Index>();
    if (rows < 0 || cols < 0) throw std::runtime_error("model: negative matrix dimension");
    const std::vector<double> data = decode_doubles(j.at("data").get<std::string>());
    if (static_cast<Eigen::Index>(data.size()) != rows * cols)
        throw std::runtime_error("model: matrix data does not match its dimensions");
    return Eigen::Map<const Eigen::MatrixXd>(data.data(), rows, cols);
}

Eigen::VectorXd vector_from(const json& j) {
    const Eigen::MatrixXd m = matrix_from(j);
    if (m.cols() != 1 && m.size() != 0) throw std::runtime_error("model: expected a column vector");
    return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

} // namespace

SparseFunctionalDataset read_csv(std::istream& in,
                                 const std::optional<std::vector<std::string>>& labels) {
    struct Row {
        std::string subject, response;
        double time, value;
        std::size_t line;
    };
    std::string line;
    std::size_t line_no = 0;
    bool header = false;
    std::vector<Row> rows;
    std::vector<std::string> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        std::vector<std::string> f = split(line);
        for (auto& x : f) x = trim(x);
        if (!header) {
            if (f != std::vector<std::string>{"subject", "response", "time", "value"})
                throw line_error(line_no, "expected header subject,response,time,value");
            header = true;
            continue;
        }
        if (f.size() != 4)
            throw line_error(line_no, "expected 4 fields, found " + std::to_string(f.size()));
        if (f[0].empty()) throw line_error(line_no, "empty subject");
        if (f[1].empty()) throw line_error(line_no, "empty response");
        Row r{f[0], f[1], 0.0, 0.0, line_no};
        if (!parse_double(f[2], r.time) || !std::isfinite(r.time))
            throw line_error(line_no, "time is not a finite number: '" + f[2] + "'");
        if (!parse_double(f[3], r.value) || !std::isfinite(r.value))
            throw line_error(line_no, "value is not a finite number: '" + f[3] + "'");
        if (labels) {
            if (std::find(labels->begin(), labels->end(), r.response) == labels->end())
                throw line_error(line_no, "unknown response label '" + r.response + "'");
        } else if (std::find(seen.begin(), seen.end(), r.response) == seen.end()) {
            seen.push_back(r.response);
        }
        rows.push_back(std::move(r));
    }
    if (!header) throw std::runtime_error("line 1: missing header subject,response,time,value");
    SparseFunctionalDataset data(labels ? *labels : seen);
    for (const Row& r : rows) data.add(r.subject, r.response, r.time, r.value);
    return data;
}

SparseFunctionalDataset read_csv(const std::filesystem::path& path,
                                 const std::optional<std::vector<std::string>>& labels) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return read_csv(in, labels);
}

void write_csv(std::ostream& out, const SparseFunctionalDataset& data) {
    out << "subject,response,time,value\n";
    for (const SubjectRecord& s : data.subjects())
        for (int k = 0; k < data.n_responses(); ++k)
            for (std::size_t j = 0; j < s.count(k); ++j)
                out << s.id << ',' << data.response_labels()[k] << ',' << format_double(s.times[k][j])
                    << ',' << format_double(s.values[k][j]) << '\n';
}

void write_csv(const std::filesystem::path& path, const SparseFunctionalDataset& data) {
    std::ostringstream os;
    write_csv(os, data);
    write_text(path, os.str());
}

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) throw std::runtime_error("format_double failed");
    return std::string(buf, ptr);
}

std::string encode_doubles(const double* data, std::size_t n) {
    std::vector<unsigned char> bytes(n * 8);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t u = std::bit_cast<std::uint64_t>(data[i]);
        for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<unsigned char>(u >> (8 * b));
    }
    std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
    const int len = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                    static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(len));
    return out;
}

std::vector<double> decode_doubles(const std::string& text) {
    if (text.size() % 4 != 0) throw std::runtime_error("base64: length not a multiple of 4");
    std::vector<unsigned char> bytes(text.size() / 4 * 3 + 1);
    const int len = EVP_DecodeBlock(bytes.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                    static_cast<int>(text.size()));
    if (len < 0) throw std::runtime_error("base64: invalid input");
    std::size_t n = static_cast<std::size_t>(len);
    // EVP_DecodeBlock counts padding bytes as data.
    if (!text.empty() && text.back() == '=') --n;
    if (text.size() > 1 && text[text.size() - 2] == '=') --n;
    if (n % 8 != 0) throw std::runtime_error("base64: payload is not a whole number of float64");
    std::vector<double> out(n / 8);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint64_t u = 0;
        for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
        out[i] = std::bit_cast<double>(u);
    }
    return out;
}

ModelFile make_model_file(const SparseFunctionalDataset& data, const FitOptions& options,
                          FittedModel fitted) {
    ModelFile m;
    m.labels = data.response_labels();
    m.mean_n_interior = options.mean_n_interior;
    m.pve = options.pve;
    m.fit = std::move(fitted);
    return m;
}

std::string serialize_model(const ModelFile& model) {
    const FittedModel& f = model.fit;
    const SplineWorkspace& ws = *f.raw.ws;
    json j;
    j["format"] = "mfcov-model";
    j["version"] = 1;
    j["domain"] = {ws.domain().lower, ws.domain().upper};
    j["order"] = ws.order();
    j["n_interior"] = ws.n_interior();
    j["mean_n_interior"] = model.mean_n_interior;
    j["pve_threshold"] = model.pve;
    j["labels"] = model.labels;
    json means = json::array();
    for (const MeanFit& mf : f.raw.means)
        means.push_back({{"alpha", matrix_json(mf.alpha)},
                         {"tau", mf.tau},
                         {"penalty_scale", mf.penalty_scale}});
    j["means"] = means;
    j["sigma2"] = matrix_json(f.raw.sigma2);
    j["theta_raw"] = matrix_json(f.raw.stacked());
    j["theta"] = matrix_json(f.refined.stacked());
    json blocks = json::array();
    for (const BlockSummary& b : f.blocks)
        blocks.push_back({{"k", b.k}, {"kp", b.kp}, {"rho", b.rho}, {"w", b.w},
                          {"lambda1", b.lambda1}, {"lambda2", b.lambda2}});
    j["blocks"] = blocks;
    j["eigen"] = {{"values", matrix_json(f.eigen.values)},
                  {"vectors", matrix_json(f.eigen.vectors)},
                  {"pve", matrix_json(f.eigen.pve)},
                  {"npc", f.eigen.npc}};
    return j.dump(2) + "\n";
}

ModelFile parse_model(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("model: ") + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != "mfcov-model")
            throw std::runtime_error("model: unrecognized format tag");
        if (j.at("version").get<int>() != 1) throw std::runtime_error("model: unsupported version");
        ModelFile m;
        m.labels = j.at("labels").get<std::vector<std::string>>();
        m.mean_n_interior = j.at("mean_n_interior").get<int>();
        m.pve = j.at("pve_threshold").get<double>();
        const Interval domain{j.at("domain").at(0).get<double>(), j.at("domain").at(1).get<double>()};
        const int order = j.at("order").get<int>();
        const int n_interior = j.at("n_interior").get<int>();
        auto ws = std::make_shared<const SplineWorkspace>(domain, n_interior, order);
        auto mean_ws = m.mean_n_interior == n_interior
                           ? ws
                           : std::make_shared<const SplineWorkspace>(domain, m.mean_n_interior, order);
        const int p = static_cast<int>(m.labels.size());

        std::vector<MeanFit> means;
        for (const json& mj : j.at("means")) {
            MeanFit mf;
            mf.ws = mean_ws;
            mf.alpha = vector_from(mj.at("alpha"));
            mf.tau = mj.at("tau").get<double>();
            mf.penalty_scale = mj.at("penalty_scale").get<double>();
            if (mf.alpha.size() != mean_ws->dim()) throw std::runtime_error("model: mean size mismatch");
            means.push_back(std::move(mf));
        }
        if (static_cast<int>(means.size()) != p) throw std::runtime_error("model: mean count mismatch");

        FittedModel& f = m.fit;
        f.raw = CovarianceModel(ws, p);
        f.refined = CovarianceModel(ws, p);
        f.raw.means = f.refined.means = means;
        const Eigen::VectorXd sigma2 = vector_from(j.at("sigma2"));
        if (sigma2.size() != p) throw std::runtime_error("model: sigma2 size mismatch");
        f.raw.sigma2 = f.refined.sigma2 = sigma2;
        const Eigen::Index pc = static_cast<Eigen::Index>(p) * ws->dim();
        const Eigen::MatrixXd raw = matrix_from(j.at("theta_raw"));
        const Eigen::MatrixXd refined = matrix_from(j.at("theta"));
        if (raw.rows() != pc || raw.cols() != pc || refined.rows() != pc || refined.cols() != pc)
            throw std::runtime_error("model: coefficient matrix size mismatch");
        f.raw.set_stacked(raw);
        f.refined.set_stacked(refined);
        for (const json& bj : j.at("blocks"))
            f.blocks.push_back({bj.at("k").get<int>(), bj.at("kp").get<int>(),
                                bj.at("rho").get<double>(), bj.at("w").get<double>(),
                                bj.at("lambda1").get<double>(), bj.at("lambda2").get<double>(), {}});
        const json& ej = j.at("eigen");
        f.eigen.values = vector_from(ej.at("values"));
        f.eigen.vectors = matrix_from(ej.at("vectors"));
        f.eigen.pve = vector_from(ej.at("pve"));
        f.eigen.npc = ej.at("npc").get<int>();
        if (f.eigen.vectors.rows() != pc || f.eigen.vectors.cols() != f.eigen.values.size())
            throw std::runtime_error("model: eigenvector size mismatch");
        if (f.eigen.npc < 0 || f.eigen.npc > f.eigen.values.size())
            throw std::runtime_error("model: npc out of range");
        return m;
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("model: ") + e.what());
    }
}

void save_model(const std::filesystem::path& path, const ModelFile& model) {
    write_text(path, serialize_model(model));
}

ModelFile load_model(const std::filesystem::path& path) { return parse_model(read_text(path)); }

std::string fit_report(const ModelFile& model) {
    const FittedModel& f = model.fit;
    json j;
    j["labels"] = model.labels;
    json means = json::array();
    for (std::size_t k = 0; k < f.raw.means.size(); ++k) {
        const MeanFit& mf = f.raw.means[k];
        json curve = json::array();
        for (const auto& [tau, err] : mf.cv_curve) curve.push_back({{"tau", tau}, {"cv", err}});
        means.push_back({{"response", model.labels[k]}, {"tau", mf.tau}, {"cv_curve", curve}});
    }
    j["means"] = means;
    json sigma2 = json::array();
    for (Eigen::Index k = 0; k < f.raw.sigma2.size(); ++k) sigma2.push_back(f.raw.sigma2(k));
    j["sigma2"] = sigma2;
    json blocks = json::array();
    for (const BlockSummary& b : f.blocks) {
        json surface = json::array();
        for (const GridPoint& g : b.surface)
            surface.push_back({{"rho", g.rho}, {"w", g.w}, {"score", g.score}});
        blocks.push_back({{"response1", model.labels[b.k]}, {"response2", model.labels[b.kp]},
                          {"rho", b.rho}, {"w", b.w}, {"lambda1", b.lambda1},
                          {"lambda2", b.lambda2}, {"igcv_surface", surface}});
    }
    j["blocks"] = blocks;
    json values = json::array(), pve = json::array();
    for (Eigen::Index l = 0; l < f.eigen.values.size(); ++l) {
        values.push_back(f.eigen.values(l));
        pve.push_back(f.eigen.pve(l));
    }
    j["eigenvalues"] = values;
    j["pve"] = pve;
    j["npc"] = f.eigen.npc;
    j["warnings"] = f.warnings;
    return j.dump(2) + "\n";
}

void write_eigenfunctions(std::ostream& out, const ModelFile& model, int components, int points) {
    const SplineWorkspace& ws = *model.fit.refined.ws;
    const Interval d = ws.domain();
    out << "component,response,time,value\n";
    const int n = std::min<int>(components, static_cast<int>(model.fit.eigen.size()));
    for (int l = 0; l < n; ++l)
        for (std::size_t k = 0; k < model.labels.size(); ++k) {
            const Eigen::VectorXd coef =
                eigenfunction_coefficients(ws, model.fit.eigen, l, static_cast<int>(k));
            for (int a = 0; a < points; ++a) {
                const double t = points == 1 ? d.lower : d.lower + d.length() * a / (points - 1);
                out << l + 1 << ',' << model.labels[k] << ',' << format_double(t) << ','
                    << format_double(ws.eval(t).dot(coef)) << '\n';
            }
        }
}

void write_surfaces(std::ostream& out, const ModelFile& model, int points) {
    const CovarianceModel& cm = model.fit.refined;
    const Interval d = cm.ws->domain();
    std::vector<double> grid(static_cast<std::size_t>(points));
    for (int a = 0; a < points; ++a)
        grid[a] = points == 1 ? d.lower : d.lower + d.length() * a / (points - 1);
    out << "response1,response2,s,t,covariance,correlation\n";
    for (int k = 0; k < cm.p; ++k)
        for (int kp = k; kp < cm.p; ++kp)
            for (double s : grid)
                for (double t : grid)
                    out << model.labels[k] << ',' << model.labels[kp] << ',' << format_double(s) << ','
                        << format_double(t) << ',' << format_double(eval_covariance(cm, k, kp, s, t))
                        << ',' << format_double(eval_correlation(cm, k, kp, s, t)) << '\n';
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

} // namespace mfcov::io
