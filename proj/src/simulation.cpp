#include "mfcov/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "mfcov/predict.hpp"
#include "mfcov/random.hpp"

namespace mfcov::sim {

namespace {

constexpr double kPi = std::numbers::pi;

const Eigen::Vector3d& lambda_diag(int k) {
    static const Eigen::Vector3d l[3] = {{3.0, 1.5, 0.75}, {3.5, 1.75, 0.5}, {2.5, 2.0, 1.0}};
    return l[k];
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

std::string subject_name(char prefix, int i) {
    std::string s(1, prefix);
    s += std::to_string(i + 1);
    return s;
}

} // namespace

TrueModel::TrueModel(double rho) : rho_(rho) {
    if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("TrueModel: rho outside [0,1]");
    coef_ = Eigen::MatrixXd::Zero(9, 9);
    for (int k = 0; k < 3; ++k)
        for (int kp = 0; kp < 3; ++kp) {
            const Eigen::Vector3d d =
                k == kp ? lambda_diag(k)
                        : Eigen::Vector3d(rho * lambda_diag(k).cwiseSqrt().cwiseProduct(
                                                    lambda_diag(kp).cwiseSqrt()));
            coef_.block<3, 3>(3 * k, 3 * kp) = d.asDiagonal();
        }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(coef_);
    kl_values_ = es.eigenvalues().reverse().cwiseMax(0.0);
    kl_vectors_ = es.eigenvectors().rowwise().reverse();
}

double TrueModel::mean(int k, double t) const {
    switch (k) {
    case 0: return 5.0 * std::sin(2.0 * kPi * t);
    case 1: return 5.0 * std::cos(2.0 * kPi * t);
    case 2: return 5.0 * (t - 1.0) * (t - 1.0);
    default: throw std::out_of_range("TrueModel::mean: response index");
    }
}

Eigen::Vector3d TrueModel::basis(int k, double t) const {
    const double r2 = std::numbers::sqrt2;
    switch (k) {
    case 0:
        return r2 * Eigen::Vector3d(std::sin(2 * kPi * t), std::cos(4 * kPi * t), std::sin(4 * kPi * t));
    case 1:
        return r2 * Eigen::Vector3d(std::cos(kPi * t), std::cos(2 * kPi * t), std::cos(3 * kPi * t));
    case 2:
        return r2 * Eigen::Vector3d(std::sin(kPi * t), std::sin(2 * kPi * t), std::sin(3 * kPi * t));
    default: throw std::out_of_range("TrueModel::basis: response index");
    }
}

double TrueModel::covariance(int k, int kp, double s, double t) const {
    return basis(k, s).dot(coef_.block<3, 3>(3 * k, 3 * kp) * basis(kp, t));
}

double TrueModel::noise_variance(double snr) const {
    if (!(snr > 0.0)) throw std::invalid_argument("noise_variance: snr must be positive");
    return total_variance() / (kResponses * snr);
}

std::vector<double> metric_grid(int points) {
    if (points < 2) throw std::invalid_argument("metric_grid: need at least two points");
    std::vector<double> g(points);
    for (int i = 0; i < points; ++i) g[i] = static_cast<double>(i) / (points - 1);
    return g;
}

std::vector<double> trapezoid_weights(std::span<const double> grid) {
    const std::size_t n = grid.size();
    std::vector<double> w(n, 0.0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const double h = 0.5 * (grid[i + 1] - grid[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    return w;
}

Eigen::MatrixXd discretized_covariance(const TrueModel& truth, std::span<const double> grid) {
    const Eigen::Index g = static_cast<Eigen::Index>(grid.size());
    Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(3 * g, 9);
    for (int k = 0; k < 3; ++k)
        for (Eigen::Index a = 0; a < g; ++a)
            phi.block(k * g + a, 3 * k, 1, 3) = truth.basis(k, grid[a]).transpose();
    return phi * truth.coefficients() * phi.transpose();
}

TrueEigensystem true_eigensystem(const TrueModel& truth, int grid_points) {
    TrueEigensystem out;
    out.grid = metric_grid(grid_points);
    out.weights = trapezoid_weights(out.grid);
    const Eigen::Index g = grid_points;
    Eigen::VectorXd sw(3 * g);
    for (int k = 0; k < 3; ++k)
        for (Eigen::Index a = 0; a < g; ++a) sw(k * g + a) = std::sqrt(out.weights[a]);

    const Eigen::MatrixXd k_mat = discretized_covariance(truth, out.grid);
    const Eigen::MatrixXd sym = sw.asDiagonal() * k_mat * sw.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (sym + sym.transpose()));
    const Eigen::VectorXd vals = es.eigenvalues().reverse();
    const Eigen::MatrixXd vecs = es.eigenvectors().rowwise().reverse();
    const double top = vals(0);
    Eigen::Index keep = 0;
    while (keep < vals.size() && vals(keep) > 1e-9 * top) ++keep;
    out.values = vals.head(keep);
    out.functions = sw.cwiseInverse().asDiagonal() * vecs.leftCols(keep);

    // Phi-coordinates of each discrete eigenfunction, used for Nystrom extension.
    out.phi_coef.resize(9, keep);
    for (Eigen::Index l = 0; l < keep; ++l) {
        Eigen::VectorXd beta = Eigen::VectorXd::Zero(9);
        for (int k = 0; k < 3; ++k)
            for (Eigen::Index a = 0; a < g; ++a)
                beta.segment<3>(3 * k) +=
                    out.weights[a] * out.functions(k * g + a, l) * truth.basis(k, out.grid[a]);
        out.phi_coef.col(l) = truth.coefficients() * beta / out.values(l);
    }
    return out;
}

double TrueEigensystem::eval(const TrueModel& truth, int l, int k, double t) const {
    return truth.basis(k, t).dot(phi_coef.col(l).segment<3>(3 * k));
}

Eigen::MatrixXd TrueEigensystem::on_grid(const TrueModel& truth, int l,
                                         std::span<const double> g) const {
    Eigen::MatrixXd out(3, static_cast<Eigen::Index>(g.size()));
    for (int k = 0; k < 3; ++k)
        for (std::size_t a = 0; a < g.size(); ++a) out(k, a) = eval(truth, l, k, g[a]);
    return out;
}

void SimDesign::validate() const {
    if (n < 2) throw std::invalid_argument("SimDesign: n must be at least 2");
    if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("SimDesign: rho outside [0,1]");
    if (!(snr > 0.0)) throw std::invalid_argument("SimDesign: snr must be positive");
    if (m_min < 0 || m_max < m_min) throw std::invalid_argument("SimDesign: bad m range");
    if (n_test < 0) throw std::invalid_argument("SimDesign: n_test negative");
}

namespace {

// One subject: scores, then per response m, times and noisy values.
Eigen::VectorXd draw_subject(RandomStream& rng, const TrueModel& truth, const SimDesign& design,
                             double sigma, const std::string& id, SparseFunctionalDataset& data) {
    const Eigen::VectorXd& d = truth.kl_values();
    Eigen::VectorXd xi(9);
    for (int l = 0; l < 9; ++l) xi(l) = std::sqrt(d(l)) * rng.normal();
    const Eigen::VectorXd z = truth.kl_vectors() * xi;
    for (int k = 0; k < 3; ++k) {
        const int m = rng.uniform_int(design.m_min, design.m_max);
        for (int j = 0; j < m; ++j) {
            const double t = rng.uniform();
            const double x = truth.mean(k, t) + truth.basis(k, t).dot(z.segment<3>(3 * k));
            data.add(id, k, t, x + sigma * rng.normal());
        }
    }
    return xi;
}

} // namespace

SimulatedData generate(const SimDesign& design, const TrueModel& truth, int replicate,
                       std::span<const double> curve_grid) {
    design.validate();
    if (std::abs(truth.rho() - design.rho) > 0.0)
        throw std::invalid_argument("generate: truth and design disagree on rho");
    if (replicate < 0) throw std::invalid_argument("generate: negative replicate");
    SimulatedData out;
    out.curve_grid = curve_grid.empty() ? metric_grid()
                                        : std::vector<double>(curve_grid.begin(), curve_grid.end());
    const double sigma = std::sqrt(truth.noise_variance(design.snr));

    RandomStream train_rng(design.seed, 2 * static_cast<std::uint64_t>(replicate));
    out.train_scores.resize(design.n, 9);
    for (int i = 0; i < design.n; ++i)
        out.train_scores.row(i) =
            draw_subject(train_rng, truth, design, sigma, subject_name('s', i), out.train).transpose();

    RandomStream test_rng(design.seed, 2 * static_cast<std::uint64_t>(replicate) + 1);
    const Eigen::Index g = static_cast<Eigen::Index>(out.curve_grid.size());
    for (int i = 0; i < design.n_test; ++i) {
        const std::string id = subject_name('t', i);
        const int before = out.test.n_subjects();
        const Eigen::VectorXd xi = draw_subject(test_rng, truth, design, sigma, id, out.test);
        if (out.test.n_subjects() == before) continue; // drew no observations
        const Eigen::VectorXd z = truth.kl_vectors() * xi;
        Eigen::MatrixXd curve(3, g);
        for (int k = 0; k < 3; ++k)
            for (Eigen::Index a = 0; a < g; ++a) {
                const double t = out.curve_grid[a];
                curve(k, a) = truth.mean(k, t) + truth.basis(k, t).dot(z.segment<3>(3 * k));
            }
        out.test_curves.push_back(std::move(curve));
    }
    return out;
}

double rise(const CovarianceModel& estimate, const TrueModel& truth, std::span<const double> grid) {
    if (estimate.p != 3) throw std::invalid_argument("rise: estimate must have three responses");
    const std::vector<double> w = trapezoid_weights(grid);
    const Eigen::Map<const Eigen::VectorXd> wv(w.data(), static_cast<Eigen::Index>(w.size()));
    const Eigen::MatrixXd b = estimate.ws->design(grid);
    const Eigen::MatrixXd c_true = discretized_covariance(truth, grid);
    const Eigen::Index g = static_cast<Eigen::Index>(grid.size());
    double num = 0.0, den = 0.0;
    for (int k = 0; k < 3; ++k)
        for (int kp = 0; kp < 3; ++kp) {
            const Eigen::MatrixXd c_hat = b * estimate.block(k, kp) * b.transpose();
            const auto c = c_true.block(k * g, kp * g, g, g);
            num += wv.dot((c - c_hat).cwiseAbs2() * wv);
            den += wv.dot(c.cwiseAbs2() * wv);
        }
    return num / den;
}

double ise(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& estimate,
           std::span<const double> weights) {
    if (truth.rows() != estimate.rows() || truth.cols() != estimate.cols() ||
        truth.cols() != static_cast<Eigen::Index>(weights.size()))
        throw std::invalid_argument("ise: dimension mismatch");
    const Eigen::Map<const Eigen::VectorXd> w(weights.data(), truth.cols());
    const double minus = ((truth - estimate).cwiseAbs2() * w).sum();
    const double plus = ((truth + estimate).cwiseAbs2() * w).sum();
    return std::min(minus, plus);
}

double mise(std::span<const Eigen::MatrixXd> truth, std::span<const Eigen::MatrixXd> predicted,
            std::span<const double> weights) {
    if (truth.size() != predicted.size() || truth.empty())
        throw std::invalid_argument("mise: need matching, nonempty curve sets");
    const Eigen::Map<const Eigen::VectorXd> w(weights.data(), static_cast<Eigen::Index>(weights.size()));
    double total = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i].cols() != w.size() || predicted[i].rows() != truth[i].rows() ||
            predicted[i].cols() != w.size())
            throw std::invalid_argument("mise: dimension mismatch");
        total += ((truth[i] - predicted[i]).cwiseAbs2() * w).sum();
    }
    return total / (static_cast<double>(truth.size()) * truth[0].rows());
}

std::vector<double> ape(const SparseFunctionalDataset& observed,
                        std::span<const SubjectRecord> predicted) {
    const int p = observed.n_responses();
    if (static_cast<int>(predicted.size()) != observed.n_subjects())
        throw std::invalid_argument("ape: subject count mismatch");
    std::vector<double> out(p, 0.0);
    for (int k = 0; k < p; ++k) {
        int used = 0;
        for (int i = 0; i < observed.n_subjects(); ++i) {
            const SubjectRecord& obs = observed.subject(i);
            const std::size_t m = obs.count(k);
            if (m == 0) continue;
            if (predicted[i].values.size() != obs.values.size() || predicted[i].count(k) != m)
                throw std::invalid_argument("ape: prediction layout mismatch");
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                const double e = obs.values[k][j] - predicted[i].values[k][j];
                s += e * e;
            }
            out[k] += s / static_cast<double>(m);
            ++used;
        }
        out[k] = used > 0 ? out[k] / used : std::nan("");
    }
    return out;
}

ReplicateMetrics run_replicate(const SimDesign& design, int replicate, FitOptions options,
                               const TrueModel& truth, const TrueEigensystem& true_eig,
                               int n_components) {
    ReplicateMetrics r;
    r.n = design.n;
    r.rho = design.rho;
    r.replicate = replicate;
    try {
        const std::vector<double> grid = metric_grid();
        const std::vector<double> w = trapezoid_weights(grid);
        const SimulatedData sim = generate(design, truth, replicate, grid);
        options.domain = Interval{0.0, 1.0};
        const FittedModel fm = fit(sim.train, options);
        const CovarianceModel& model = fm.refined;
        const SplineWorkspace& ws = *model.ws;
        r.npc = fm.eigen.npc;

        r.rise = rise(model, truth, grid);

        const Eigen::MatrixXd b = ws.design(grid);
        const int n_comp = std::min<int>(n_components, static_cast<int>(std::min(
                                                           fm.eigen.size(), true_eig.values.size())));
        for (int l = 0; l < n_comp; ++l) {
            Eigen::MatrixXd est(3, b.rows());
            for (int k = 0; k < 3; ++k)
                est.row(k) = (b * eigenfunction_coefficients(ws, fm.eigen, l, k)).transpose();
            r.ise.push_back(ise(true_eig.on_grid(truth, l, grid), est, w));
            r.ratio.push_back(fm.eigen.values(l) / true_eig.values(l));
        }

        const CovarianceModel no_cross = zero_cross_blocks(model);
        PredictOptions popt;
        popt.n_scores = 0;
        popt.covariance = false;
        std::vector<Eigen::MatrixXd> full, zeroed;
        for (const SubjectRecord& rec : sim.test.subjects()) {
            full.push_back(predict_subject(model, fm.eigen, rec, grid, popt).xhat);
            zeroed.push_back(predict_subject(no_cross, fm.eigen, rec, grid, popt).xhat);
        }
        if (!sim.test_curves.empty()) {
            r.mise = mise(sim.test_curves, full, w);
            r.mise_no_cross = mise(sim.test_curves, zeroed, w);
        }

        const Eigen::Map<const Eigen::VectorXd> wv(w.data(), static_cast<Eigen::Index>(w.size()));
        int flow_used = 0;
        for (std::size_t i = 0; i < sim.test.subjects().size(); ++i) {
            SubjectRecord rec = sim.test.subjects()[i];
            rec.times[0].clear();
            rec.values[0].clear();
            if (rec.total() == 0) continue;
            const auto truth_row = sim.test_curves[i].row(0);
            const Eigen::RowVectorXd a = predict_subject(model, fm.eigen, rec, grid, popt).xhat.row(0);
            const Eigen::RowVectorXd z = predict_subject(no_cross, fm.eigen, rec, grid, popt).xhat.row(0);
            r.flow_full += (truth_row - a).cwiseAbs2().dot(wv.transpose());
            r.flow_zeroed += (truth_row - z).cwiseAbs2().dot(wv.transpose());
            ++flow_used;
        }
        if (flow_used > 0) {
            r.flow_full /= flow_used;
            r.flow_zeroed /= flow_used;
        }

        const Eigen::MatrixXd whitened = whitened_matrix(model);
        const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(
                                       whitened, Eigen::EigenvaluesOnly)
                                       .eigenvalues();
        r.min_eig_ratio = ev.maxCoeff() > 0.0 ? ev.minCoeff() / ev.maxCoeff() : 0.0;

        const std::vector<double> coarse = metric_grid(21);
        std::vector<double> corr;
        double excess = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < 3; ++k)
            for (int kp = k + 1; kp < 3; ++kp)
                for (double s : coarse)
                    for (double t : coarse) {
                        corr.push_back(std::abs(eval_correlation(model, k, kp, s, t)));
                        const double bound = std::sqrt(std::max(0.0, eval_covariance(model, k, k, s, s)) *
                                                       std::max(0.0, eval_covariance(model, kp, kp, t, t)));
                        excess = std::max(excess, std::abs(eval_covariance(model, k, kp, s, t)) - bound);
                    }
        r.cross_corr_median = median(corr);
        r.cs_excess = excess;
        r.ok = true;
    } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
    }
    return r;
}

} // namespace mfcov::sim
