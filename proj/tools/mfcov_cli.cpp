// mfcov command-line front end: fit, predict, simulate, evaluate.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mfcov/fit.hpp"
#include "mfcov/io.hpp"
#include "mfcov/parallel.hpp"
#include "mfcov/predict.hpp"
#include "mfcov/simulation.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using mfcov::io::format_double;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flags shared by fit and evaluate. Precedence: defaults < --config < explicit flags.
struct FitFlags {
    int order = 4;
    int n_interior = 9;
    int mean_n_interior = 9;
    double pve = 0.99;
    int threads = 1;
    double domain_lower = 0.0;
    double domain_upper = 1.0;
    std::vector<double> rho_grid, w_grid, tau_grid;
    std::string config;
};

struct SimFlags {
    std::vector<int> n{100};
    std::vector<double> rho{0.9};
    double snr = 2.0;
    int m_min = 3;
    int m_max = 7;
    std::uint64_t seed = 1;
    int n_test = 200;
    int replicates = 1;
};

void add_fit_flags(CLI::App* cmd, FitFlags& f) {
    cmd->add_option("--order", f.order, "B-spline order (4 = cubic)");
    cmd->add_option("--n-interior", f.n_interior, "interior knots of the covariance basis");
    cmd->add_option("--mean-n-interior", f.mean_n_interior, "interior knots of the mean basis");
    cmd->add_option("--pve", f.pve, "proportion of variance explained for truncation");
    cmd->add_option("--threads", f.threads, "worker threads");
    cmd->add_option("--domain-lower", f.domain_lower, "lower end of the time domain");
    cmd->add_option("--domain-upper", f.domain_upper, "upper end of the time domain");
    cmd->add_option("--rho-grid", f.rho_grid, "smoothing magnitudes")->delimiter(',');
    cmd->add_option("--w-grid", f.w_grid, "smoothing weights in (0,1)")->delimiter(',');
    cmd->add_option("--tau-grid", f.tau_grid, "mean smoothing grid")->delimiter(',');
    cmd->add_option("--config", f.config, "JSON file with any of the flag values");
}

void add_sim_flags(CLI::App* cmd, SimFlags& s) {
    cmd->add_option("--n", s.n, "subjects per replicate (comma list for evaluate)")->delimiter(',');
    cmd->add_option("--rho", s.rho, "cross-correlation parameter (comma list for evaluate)")
        ->delimiter(',');
    cmd->add_option("--snr", s.snr, "signal-to-noise ratio");
    cmd->add_option("--m-min", s.m_min, "fewest observations per response");
    cmd->add_option("--m-max", s.m_max, "most observations per response");
    cmd->add_option("--seed", s.seed, "RNG seed");
    cmd->add_option("--n-test", s.n_test, "test subjects per replicate");
    cmd->add_option("--replicates", s.replicates, "number of replicates");
}

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    try {
        json j = json::parse(mfcov::io::read_text(path));
        if (!j.is_object()) throw UsageError("config must be a JSON object");
        return j;
    } catch (const json::exception& e) {
        throw UsageError("config " + path + ": " + e.what());
    }
}

// Assigns cfg[key] to `target` unless the flag was given on the command line.
template <class T>
void merge(const CLI::App* cmd, const json& cfg, const char* key, const char* flag, T& target) {
    if (cmd->count(flag) > 0 || !cfg.contains(key)) return;
    try {
        target = cfg.at(key).get<T>();
    } catch (const json::exception& e) {
        throw UsageError(std::string("config key '") + key + "': " + e.what());
    }
}

void merge_fit(const CLI::App* cmd, const json& cfg, FitFlags& f) {
    merge(cmd, cfg, "order", "--order", f.order);
    merge(cmd, cfg, "n_interior", "--n-interior", f.n_interior);
    merge(cmd, cfg, "mean_n_interior", "--mean-n-interior", f.mean_n_interior);
    merge(cmd, cfg, "pve", "--pve", f.pve);
    merge(cmd, cfg, "threads", "--threads", f.threads);
    merge(cmd, cfg, "domain_lower", "--domain-lower", f.domain_lower);
    merge(cmd, cfg, "domain_upper", "--domain-upper", f.domain_upper);
    merge(cmd, cfg, "rho_grid", "--rho-grid", f.rho_grid);
    merge(cmd, cfg, "w_grid", "--w-grid", f.w_grid);
    merge(cmd, cfg, "tau_grid", "--tau-grid", f.tau_grid);
}

void merge_sim(const CLI::App* cmd, const json& cfg, SimFlags& s) {
    if (cmd->count("--n") == 0 && cfg.contains("n") && cfg.at("n").is_number())
        s.n = {cfg.at("n").get<int>()};
    else
        merge(cmd, cfg, "n", "--n", s.n);
    if (cmd->count("--rho") == 0 && cfg.contains("rho") && cfg.at("rho").is_number())
        s.rho = {cfg.at("rho").get<double>()};
    else
        merge(cmd, cfg, "rho", "--rho", s.rho);
    merge(cmd, cfg, "snr", "--snr", s.snr);
    merge(cmd, cfg, "m_min", "--m-min", s.m_min);
    merge(cmd, cfg, "m_max", "--m-max", s.m_max);
    merge(cmd, cfg, "seed", "--seed", s.seed);
    merge(cmd, cfg, "n_test", "--n-test", s.n_test);
    merge(cmd, cfg, "replicates", "--replicates", s.replicates);
}

mfcov::FitOptions fit_options(const CLI::App* cmd, const FitFlags& f, bool fixed_domain) {
    mfcov::FitOptions o;
    o.order = f.order;
    o.n_interior = f.n_interior;
    o.mean_n_interior = f.mean_n_interior;
    o.pve = f.pve;
    o.threads = f.threads;
    if (!f.rho_grid.empty()) o.grid.rho = f.rho_grid;
    if (!f.w_grid.empty()) o.grid.w = f.w_grid;
    if (!f.tau_grid.empty()) o.tau_grid = f.tau_grid;
    if (!(o.pve > 0.0 && o.pve <= 1.0)) throw UsageError("pve must lie in (0, 1]");
    if (o.threads < 1) throw UsageError("threads must be positive");
    const bool lower = cmd->count("--domain-lower") > 0 || fixed_domain;
    const bool upper = cmd->count("--domain-upper") > 0 || fixed_domain;
    if (lower != upper) throw UsageError("give both --domain-lower and --domain-upper");
    if (lower) o.domain = mfcov::Interval{f.domain_lower, f.domain_upper};
    return o;
}

// ---- fit --------------------------------------------------------------------

int cmd_fit(const CLI::App* cmd, FitFlags f, const std::string& data_path, const fs::path& out) {
    const json cfg = load_config(f.config);
    merge_fit(cmd, cfg, f);
    const bool cfg_domain = cfg.contains("domain_lower") && cfg.contains("domain_upper");
    const mfcov::FitOptions options = fit_options(cmd, f, cfg_domain);
    const mfcov::SparseFunctionalDataset data = mfcov::io::read_csv(fs::path(data_path));
    mfcov::FittedModel fitted = mfcov::fit(data, options);
    for (const auto& w : fitted.warnings) std::cerr << json{{"warning", w}}.dump() << '\n';
    const mfcov::io::ModelFile model = mfcov::io::make_model_file(data, options, std::move(fitted));

    fs::create_directories(out);
    mfcov::io::save_model(out / "model.json", model);
    mfcov::io::write_text(out / "report.json", mfcov::io::fit_report(model));
    std::ostringstream eig, surf;
    mfcov::io::write_eigenfunctions(eig, model, std::max(model.fit.eigen.npc, 1), 101);
    mfcov::io::write_surfaces(surf, model, 41);
    mfcov::io::write_text(out / "eigenfunctions.csv", eig.str());
    mfcov::io::write_text(out / "surfaces.csv", surf.str());
    std::cout << json{{"model", (out / "model.json").string()},
                      {"eigenvalues", model.fit.eigen.size()},
                      {"npc", model.fit.eigen.npc}}
                     .dump()
              << '\n';
    return 0;
}

// ---- predict ----------------------------------------------------------------

std::map<std::string, std::vector<double>> read_times(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::map<std::string, std::vector<double>> out;
    std::string line;
    std::size_t line_no = 0;
    bool header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!header) {
            if (line != "subject,time")
                throw std::runtime_error("line " + std::to_string(line_no) + ": expected header subject,time");
            header = true;
            continue;
        }
        const auto comma = line.find(',');
        if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
            throw std::runtime_error("line " + std::to_string(line_no) + ": expected 2 fields");
        std::size_t used = 0;
        double t = 0.0;
        const std::string field = line.substr(comma + 1);
        try {
            t = std::stod(field, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != field.size() || !std::isfinite(t))
            throw std::runtime_error("line " + std::to_string(line_no) + ": time is not a finite number");
        out[line.substr(0, comma)].push_back(t);
    }
    if (!header) throw std::runtime_error("line 1: missing header subject,time");
    return out;
}

int cmd_predict(const std::string& model_path, const std::string& query_path,
                const std::string& times_path, int grid, const std::string& out_path,
                const std::string& scores_path, int n_scores) {
    const mfcov::io::ModelFile model = mfcov::io::load_model(model_path);
    const mfcov::SparseFunctionalDataset query =
        mfcov::io::read_csv(fs::path(query_path), model.labels);
    const mfcov::Interval domain = model.fit.refined.ws->domain();
    const int p = static_cast<int>(model.labels.size());
    if (n_scores > model.fit.eigen.size()) throw UsageError("--n-scores exceeds the spectrum size");

    // Subjects in query order, then any extra subjects named only in the times file.
    std::vector<std::string> ids;
    std::map<std::string, int> index;
    for (int i = 0; i < query.n_subjects(); ++i) {
        ids.push_back(query.subject(i).id);
        index[query.subject(i).id] = i;
    }
    std::map<std::string, std::vector<double>> times;
    if (!times_path.empty()) {
        times = read_times(times_path);
        for (const auto& [id, ts] : times)
            if (!index.count(id)) ids.push_back(id);
    }
    if (grid < 0) throw UsageError("--grid must be nonnegative");

    std::ostringstream pred, sc;
    pred << "subject,response,time,xhat,var,lower95,upper95,status\n";
    sc << "subject,component,score\n";
    mfcov::PredictOptions opt;
    opt.n_scores = n_scores;
    for (const std::string& id : ids) {
        std::vector<double> requested;
        if (!times_path.empty()) {
            const auto it = times.find(id);
            if (it != times.end()) requested = it->second;
        } else {
            for (int a = 0; a < grid; ++a)
                requested.push_back(grid == 1 ? domain.lower
                                              : domain.lower + domain.length() * a / (grid - 1));
        }
        std::vector<double> valid;
        for (double t : requested)
            if (domain.contains(t)) valid.push_back(t);

        mfcov::SubjectRecord rec;
        const auto found = index.find(id);
        if (found != index.end()) {
            rec = query.subject(found->second);
        } else {
            rec.id = id;
            rec.times.assign(p, {});
            rec.values.assign(p, {});
        }

        std::optional<mfcov::PredictionResult> res;
        std::string subject_error;
        try {
            res = mfcov::predict_subject(model.fit.refined, model.fit.eigen, rec, valid, opt);
        } catch (const std::exception& e) {
            subject_error = e.what();
        }
        for (int k = 0; k < p; ++k) {
            std::size_t v = 0;
            for (double t : requested) {
                pred << id << ',' << model.labels[k] << ',' << format_double(t) << ',';
                if (!domain.contains(t)) {
                    pred << ",,,,error: time outside fitted domain\n";
                    continue;
                }
                if (!res) {
                    pred << ",,,,error: " << subject_error << '\n';
                    ++v;
                    continue;
                }
                const Eigen::Index col = static_cast<Eigen::Index>(v);
                const Eigen::Index m = static_cast<Eigen::Index>(valid.size());
                pred << format_double(res->xhat(k, col)) << ','
                     << format_double(res->cov(k * m + col, k * m + col)) << ','
                     << format_double(res->lower(k, col)) << ',' << format_double(res->upper(k, col))
                     << ",ok\n";
                ++v;
            }
        }
        if (res)
            for (Eigen::Index l = 0; l < res->scores.size(); ++l)
                sc << id << ',' << l + 1 << ',' << format_double(res->scores(l)) << '\n';
    }
    mfcov::io::write_text(out_path, pred.str());
    if (!scores_path.empty()) mfcov::io::write_text(scores_path, sc.str());
    return 0;
}

// ---- simulate / evaluate ------------------------------------------------------

mfcov::sim::SimDesign make_design(const SimFlags& s, int n, double rho) {
    mfcov::sim::SimDesign d;
    d.n = n;
    d.rho = rho;
    d.snr = s.snr;
    d.m_min = s.m_min;
    d.m_max = s.m_max;
    d.seed = s.seed;
    d.n_test = s.n_test;
    try {
        d.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return d;
}

std::string tag(int n, double rho, int rep) {
    std::ostringstream os;
    os << "n" << n << "_rho" << format_double(rho) << "_rep" << rep;
    return os.str();
}

int cmd_simulate(const CLI::App* cmd, SimFlags s, const std::string& config, const fs::path& out) {
    merge_sim(cmd, load_config(config), s);
    if (s.replicates < 1) throw UsageError("replicates must be positive");
    fs::create_directories(out);
    for (double rho : s.rho) {
        const mfcov::sim::TrueModel truth(rho);
        for (int n : s.n) {
            const mfcov::sim::SimDesign d = make_design(s, n, rho);
            for (int r = 0; r < s.replicates; ++r) {
                const mfcov::sim::SimulatedData sim = mfcov::sim::generate(d, truth, r);
                const std::string t = tag(n, rho, r);
                mfcov::io::write_csv(out / (t + "_train.csv"), sim.train);
                mfcov::io::write_csv(out / (t + "_test.csv"), sim.test);
                std::ostringstream curves;
                curves << "subject,response,time,value\n";
                for (std::size_t i = 0; i < sim.test_curves.size(); ++i)
                    for (int k = 0; k < 3; ++k)
                        for (std::size_t a = 0; a < sim.curve_grid.size(); ++a)
                            curves << sim.test.subject(static_cast<int>(i)).id << ','
                                   << sim.test.response_labels()[k] << ','
                                   << format_double(sim.curve_grid[a]) << ','
                                   << format_double(sim.test_curves[i](k, static_cast<Eigen::Index>(a)))
                                   << '\n';
                mfcov::io::write_text(out / (t + "_test_curves.csv"), curves.str());
            }
        }
    }
    std::cout << json{{"out", out.string()}, {"replicates", s.replicates}}.dump() << '\n';
    return 0;
}

double quantile(std::vector<double> v, double q) {
    if (v.empty()) return std::nan("");
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

int cmd_evaluate(const CLI::App* cmd, FitFlags f, SimFlags s, int components, const fs::path& out) {
    const json cfg = load_config(f.config);
    merge_fit(cmd, cfg, f);
    merge_sim(cmd, cfg, s);
    merge(cmd, cfg, "components", "--components", components);
    if (s.replicates < 1) throw UsageError("replicates must be positive");
    if (components < 1) throw UsageError("components must be positive");
    f.domain_lower = 0.0;
    f.domain_upper = 1.0;
    mfcov::FitOptions options = fit_options(cmd, f, true);
    const int threads = options.threads;
    options.threads = 1;

    std::vector<std::string> names = {"rise"};
    for (int l = 1; l <= components; ++l) names.push_back("ise" + std::to_string(l));
    for (int l = 1; l <= components; ++l) names.push_back("ratio" + std::to_string(l));
    for (const char* x : {"mise", "mise_no_cross", "flow_full", "flow_zeroed", "cross_corr_median",
                          "min_eig_ratio", "cs_excess"})
        names.emplace_back(x);

    std::ostringstream csv;
    csv << "n,rho,replicate,status,npc";
    for (const auto& nm : names) csv << ',' << nm;
    csv << ",error\n";
    json conditions = json::array();
    int failures = 0;

    for (double rho : s.rho) {
        const mfcov::sim::TrueModel truth(rho);
        const mfcov::sim::TrueEigensystem true_eig = mfcov::sim::true_eigensystem(truth);
        for (int n : s.n) {
            const mfcov::sim::SimDesign d = make_design(s, n, rho);
            std::vector<mfcov::sim::ReplicateMetrics> reps(static_cast<std::size_t>(s.replicates));
            mfcov::parallel_for(reps.size(), threads, [&](std::size_t r) {
                reps[r] = mfcov::sim::run_replicate(d, static_cast<int>(r), options, truth, true_eig,
                                                    components);
            });
            std::map<std::string, std::vector<double>> columns;
            json rows = json::array();
            for (const auto& m : reps) {
                std::vector<double> vals = {m.rise};
                for (int l = 0; l < components; ++l)
                    vals.push_back(l < static_cast<int>(m.ise.size()) ? m.ise[l] : std::nan(""));
                for (int l = 0; l < components; ++l)
                    vals.push_back(l < static_cast<int>(m.ratio.size()) ? m.ratio[l] : std::nan(""));
                for (double v : {m.mise, m.mise_no_cross, m.flow_full, m.flow_zeroed,
                                 m.cross_corr_median, m.min_eig_ratio, m.cs_excess})
                    vals.push_back(v);
                csv << n << ',' << format_double(rho) << ',' << m.replicate << ','
                    << (m.ok ? "ok" : "failed") << ',' << m.npc;
                json row = {{"replicate", m.replicate}, {"status", m.ok ? "ok" : "failed"}};
                if (!m.ok) {
                    ++failures;
                    for (std::size_t c = 0; c < names.size(); ++c) csv << ',';
                    std::string err = m.error;
                    std::replace(err.begin(), err.end(), ',', ';');
                    std::replace(err.begin(), err.end(), '\n', ' ');
                    csv << ',' << err << '\n';
                    row["error"] = m.error;
                    rows.push_back(row);
                    continue;
                }
                row["npc"] = m.npc;
                for (std::size_t c = 0; c < names.size(); ++c) {
                    csv << ',' << (std::isfinite(vals[c]) ? format_double(vals[c]) : "");
                    row[names[c]] = number(vals[c]);
                    if (std::isfinite(vals[c])) columns[names[c]].push_back(vals[c]);
                }
                csv << ",\n";
                rows.push_back(row);
            }
            json summary = json::object();
            for (const auto& nm : names) {
                const auto& v = columns[nm];
                summary[nm] = {{"q1", number(quantile(v, 0.25))},
                               {"median", number(quantile(v, 0.5))},
                               {"q3", number(quantile(v, 0.75))},
                               {"count", v.size()}};
            }
            conditions.push_back({{"n", n},
                                  {"rho", rho},
                                  {"snr", s.snr},
                                  {"replicates", rows},
                                  {"summary", summary}});
        }
    }
    fs::create_directories(out);
    mfcov::io::write_text(out / "metrics.csv", csv.str());
    json doc = {{"seed", s.seed},
                {"order", options.order},
                {"n_interior", options.n_interior},
                {"conditions", conditions}};
    mfcov::io::write_text(out / "metrics.json", doc.dump(2) + "\n");
    std::cout << json{{"out", out.string()}, {"failures", failures}}.dump() << '\n';
    return 0;
}

void report_error(const std::string& command, const std::string& kind, const std::string& what) {
    std::cerr << json{{"error", what}, {"kind", kind}, {"command", command}}.dump() << '\n';
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Covariance smoothing and multivariate FPCA for sparse functional data"};
    app.require_subcommand(1);

    FitFlags fit_flags;
    std::string data_path, fit_out;
    auto* fit = app.add_subcommand("fit", "fit means, covariance blocks and the spectrum");
    fit->add_option("--data", data_path, "long-format CSV")->required();
    fit->add_option("--out", fit_out, "output directory")->required();
    add_fit_flags(fit, fit_flags);

    std::string model_path, query_path, times_path, pred_out, scores_out;
    int grid = 101, n_scores = -1;
    auto* pred = app.add_subcommand("predict", "conditional-expectation prediction");
    pred->add_option("--model", model_path, "model.json from fit")->required();
    pred->add_option("--query", query_path, "observations of the subjects to predict")->required();
    auto* times_opt = pred->add_option("--times", times_path, "CSV subject,time of prediction times");
    pred->add_option("--grid", grid, "uniform grid size over the domain")->excludes(times_opt);
    pred->add_option("--out", pred_out, "predictions CSV")->required();
    pred->add_option("--scores", scores_out, "scores CSV");
    pred->add_option("--n-scores", n_scores, "number of scores (default: PVE count)");

    SimFlags sim_flags;
    std::string sim_config, sim_out;
    auto* simulate = app.add_subcommand("simulate", "write replicate datasets");
    add_sim_flags(simulate, sim_flags);
    simulate->add_option("--config", sim_config, "JSON file with any of the flag values");
    simulate->add_option("--out", sim_out, "output directory")->required();

    FitFlags eval_fit;
    SimFlags eval_sim;
    std::string eval_out;
    int components = 2;
    auto* evaluate = app.add_subcommand("evaluate", "simulate, fit and score replicates");
    add_fit_flags(evaluate, eval_fit);
    add_sim_flags(evaluate, eval_sim);
    evaluate->add_option("--components", components, "eigen components scored by ISE and ratio");
    evaluate->add_option("--out", eval_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        report_error(app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name(),
                     "usage", e.what());
        return 2;
    }

    const std::string name = app.get_subcommands().front()->get_name();
    try {
        if (*fit) return cmd_fit(fit, fit_flags, data_path, fit_out);
        if (*pred)
            return cmd_predict(model_path, query_path, times_path, grid, pred_out, scores_out, n_scores);
        if (*simulate) return cmd_simulate(simulate, sim_flags, sim_config, sim_out);
        if (*evaluate) return cmd_evaluate(evaluate, eval_fit, eval_sim, components, eval_out);
    } catch (const UsageError& e) {
        report_error(name, "usage", e.what());
        return 2;
    } catch (const std::exception& e) {
        report_error(name, "runtime", e.what());
        return 1;
    }
    return 0;
}
