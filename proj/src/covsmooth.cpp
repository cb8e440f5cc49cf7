#include "mfcov/covsmooth.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace mfcov {

namespace {

constexpr double kSingularRcond = 1e-14;
constexpr double kRidge = 1e-10;

Eigen::VectorXd ldlt_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& rhs,
                           const char* what) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > kSingularRcond))
        throw std::runtime_error(std::string(what) + ": normal equations are singular");
    return ldlt.solve(rhs);
}

// Penalized least squares by QR of [X; R] with R^T R the penalty; the normal
// equations only guard against singularity.
Eigen::VectorXd qr_solve(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::MatrixXd& root,
                         const Eigen::MatrixXd& normal, const char* what) {
    ldlt_solve(normal, x.transpose() * y, what);
    Eigen::MatrixXd aug(x.rows() + root.rows(), x.cols());
    aug << x, root;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(aug.rows());
    rhs.head(y.size()) = y;
    return aug.householderQr().solve(rhs);
}

// I ⊗ D and D ⊗ I, the square roots of the column and row penalties.
Eigen::MatrixXd column_root(const SplineWorkspace& ws) {
    const int c = ws.dim();
    const Eigen::MatrixXd& d = ws.diff();
    Eigen::MatrixXd r = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(c) * d.rows(), c * c);
    for (int a = 0; a < c; ++a) r.block(a * d.rows(), a * c, d.rows(), c) = d;
    return r;
}

Eigen::MatrixXd row_root(const SplineWorkspace& ws) {
    const int c = ws.dim();
    const Eigen::MatrixXd& d = ws.diff();
    Eigen::MatrixXd r = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(c) * d.rows(), c * c);
    for (Eigen::Index a = 0; a < d.rows(); ++a)
        for (int b = 0; b < c; ++b)
            if (d(a, b) != 0.0) r.block(a * c, b * c, c, c).diagonal().setConstant(d(a, b));
    return r;
}

} // namespace

AuxBlock build_aux(const SparseFunctionalDataset& data, std::span<const MeanFit> means,
                   const SplineWorkspace& ws, int k, int kp) {
    if (k > kp) throw std::invalid_argument("build_aux: expects k <= kp");
    if (kp >= static_cast<int>(means.size()))
        throw std::invalid_argument("build_aux: mean fits missing");
    const int c = ws.dim();
    const int order = ws.order();

    Eigen::Index n_rows = 0;
    for (const auto& s : data.subjects())
        n_rows += static_cast<Eigen::Index>(s.count(k) * s.count(kp));
    if (n_rows == 0) throw std::invalid_argument("build_aux: no subject has data for this pair");

    AuxBlock block;
    block.k = k;
    block.kp = kp;
    block.response.resize(n_rows);
    block.design = Eigen::MatrixXd::Zero(n_rows, static_cast<Eigen::Index>(c) * c);
    if (k == kp) block.diagonal = Eigen::VectorXd::Zero(n_rows);
    block.response_variance = data.sample_variance(k);

    std::vector<double> vals_k, vals_kp;
    std::vector<int> first_k, first_kp;
    Eigen::Index row = 0;
    for (const auto& s : data.subjects()) {
        const auto mk = s.count(k), mkp = s.count(kp);
        if (mk == 0 || mkp == 0) continue;
        // Residuals and nonzero basis values for both responses.
        auto prepare = [&](int resp, std::vector<double>& vals, std::vector<int>& first,
                           std::vector<double>& resid) {
            const auto m = s.count(resp);
            vals.assign(m * order, 0.0);
            first.assign(m, 0);
            resid.resize(m);
            for (std::size_t j = 0; j < m; ++j) {
                const double t = s.times[resp][j];
                first[j] = ws.eval_nonzero(t, std::span<double>(vals.data() + j * order, order));
                resid[j] = s.values[resp][j] - means[resp](t);
            }
        };
        std::vector<double> rk, rkp;
        prepare(k, vals_k, first_k, rk);
        prepare(kp, vals_kp, first_kp, rkp);

        const Slice slice{row, static_cast<Eigen::Index>(mk * mkp)};
        for (std::size_t j2 = 0; j2 < mkp; ++j2) {
            for (std::size_t j1 = 0; j1 < mk; ++j1, ++row) {
                block.response(row) = rk[j1] * rkp[j2];
                if (k == kp && j1 == j2) block.diagonal(row) = 1.0;
                for (int b = 0; b < order; ++b) {
                    const int g2 = first_kp[j2] + b;
                    const double v2 = vals_kp[j2 * order + b];
                    for (int a = 0; a < order; ++a) {
                        const int g1 = first_k[j1] + a;
                        block.design(row, g1 + g2 * c) = vals_k[j1 * order + a] * v2;
                    }
                }
            }
        }
        block.subjects.push_back(slice);
    }
    return block;
}

SmoothingGrid SmoothingGrid::defaults() {
    SmoothingGrid grid;
    for (int i = 0; i < 20; ++i) grid.rho.push_back(std::pow(10.0, -4.0 + 12.0 * i / 19.0));
    grid.w = {0.1, 0.3, 0.5, 0.7, 0.9};
    return grid;
}

IgcvEvaluator::IgcvEvaluator(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                             std::span<const Slice> subjects, const Eigen::MatrixXd& penalty1,
                             const Eigen::MatrixXd& penalty2)
    : subjects_(subjects.begin(), subjects.end()) {
    const Eigen::Index q = design.cols();
    if (design.rows() != response.size())
        throw std::invalid_argument("IgcvEvaluator: design/response size mismatch");
    if (penalty1.rows() != q || penalty2.rows() != q)
        throw std::invalid_argument("IgcvEvaluator: penalty dimension mismatch");

    response_norm2_ = response.squaredNorm();
    Eigen::MatrixXd gn = design.transpose() * design;
    const double ridge = kRidge * gn.trace() / static_cast<double>(q);
    gn.diagonal().array() += ridge > 0.0 ? ridge : kRidge;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gn);
    const Eigen::VectorXd inv_sqrt = es.eigenvalues().cwiseMax(ridge).cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd gn_inv_sqrt =
        es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose();

    whitened_design_ = design * gn_inv_sqrt;
    f_ = whitened_design_.transpose() * response;
    fi_.resize(q, static_cast<Eigen::Index>(subjects_.size()));
    for (std::size_t i = 0; i < subjects_.size(); ++i) {
        const Slice& s = subjects_[i];
        fi_.col(static_cast<Eigen::Index>(i)) =
            whitened_design_.middleRows(s.start, s.size).transpose() *
            response.segment(s.start, s.size);
    }
    p1_ = gn_inv_sqrt * penalty1 * gn_inv_sqrt;
    p2_ = gn_inv_sqrt * penalty2 * gn_inv_sqrt;
}

void IgcvEvaluator::set_weight(double w) {
    if (!(w >= 0.0 && w <= 1.0)) throw std::invalid_argument("IgcvEvaluator: w outside [0,1]");
    w_ = w;
    Eigen::MatrixXd pw = w * p1_ + (1.0 - w) * p2_;
    pw = 0.5 * (pw + pw.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(pw);
    const Eigen::MatrixXd& u = es.eigenvectors();
    s_ = es.eigenvalues().cwiseMax(0.0);
    ft_ = u.transpose() * f_;
    const Eigen::MatrixXd fti = u.transpose() * fi_;
    g_ = ft_.cwiseProduct(ft_) - fti.cwiseProduct(fti).rowwise().sum();

    m_ = whitened_design_ * u;
    // F = sum_i diag(f~_i) M_i^T M_i diag(f~).
    Eigen::MatrixXd scaled = m_;
    for (std::size_t i = 0; i < subjects_.size(); ++i) {
        const Slice& s = subjects_[i];
        scaled.middleRows(s.start, s.size) *= fti.col(static_cast<Eigen::Index>(i)).asDiagonal();
    }
    big_f_ = (scaled.transpose() * m_) * ft_.asDiagonal();
}

double IgcvEvaluator::evaluate(double rho) const {
    if (w_ < 0.0) throw std::logic_error("IgcvEvaluator: set_weight() not called");
    const Eigen::VectorXd d = (1.0 + rho * s_.array()).inverse().matrix();
    const Eigen::VectorXd v = ft_.cwiseProduct(d);
    const double term1 = v.squaredNorm();
    const double term2 = -2.0 * d.dot(g_);
    const double term3 = -4.0 * d.dot(big_f_ * d);
    const Eigen::VectorXd mv = m_ * v;
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(v.size());
    for (const Slice& s : subjects_) {
        const Eigen::VectorXd li_v = m_.middleRows(s.start, s.size).transpose() * mv.segment(s.start, s.size);
        acc += li_v.cwiseProduct(li_v);
    }
    const double term4 = 2.0 * d.dot(acc);
    return response_norm2_ + term1 + term2 + term3 + term4;
}

SmoothingSelection select_smoothing(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                                    std::span<const Slice> subjects,
                                    const Eigen::MatrixXd& penalty1,
                                    const Eigen::MatrixXd& penalty2, std::span<const double> rho,
                                    std::span<const double> w) {
    if (rho.empty() || w.empty()) throw std::invalid_argument("select_smoothing: empty grid");
    IgcvEvaluator evaluator(design, response, subjects, penalty1, penalty2);
    SmoothingSelection out;
    double best = std::numeric_limits<double>::infinity();
    bool found = false;
    for (double wv : w) {
        evaluator.set_weight(wv);
        for (double r : rho) {
            if (!(r >= 0.0)) throw std::invalid_argument("select_smoothing: negative rho");
            const double score = evaluator.evaluate(r);
            if (!std::isfinite(score)) {
                std::ostringstream msg;
                msg << "non-finite iGCV at rho=" << r << ", w=" << wv << "; skipped";
                out.warnings.push_back(msg.str());
                continue;
            }
            out.surface.push_back({r, wv, score});
            const double tol = 1e-12 * std::abs(best);
            const bool better = score < best - tol;
            const bool tie = !better && score <= best + tol &&
                             (r > out.rho || (r == out.rho && wv > out.w));
            if (!found || better || tie) {
                best = found ? std::min(best, score) : score;
                out.rho = r;
                out.w = wv;
                found = true;
            }
        }
    }
    if (!found) throw std::runtime_error("select_smoothing: iGCV non-finite on the whole grid");
    return out;
}

Eigen::MatrixXd auto_design(const AuxBlock& block, const SplineWorkspace& ws) {
    if (!block.is_auto()) throw std::invalid_argument("auto_design: not an auto block");
    const Eigen::MatrixXd& gc = ws.duplication();
    Eigen::MatrixXd x(block.rows(), gc.cols() + 1);
    x.leftCols(gc.cols()) = block.design * gc;
    x.col(gc.cols()) = block.diagonal;
    return x;
}

Eigen::MatrixXd auto_penalty(const SplineWorkspace& ws) {
    const Eigen::MatrixXd& gc = ws.duplication();
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(gc.cols() + 1, gc.cols() + 1);
    q.topLeftCorner(gc.cols(), gc.cols()) = gc.transpose() * ws.column_penalty() * gc;
    return q;
}

SmoothingSelection select_smoothing(const AuxBlock& block, const SplineWorkspace& ws,
                                    const SmoothingGrid& grid) {
    if (block.is_auto()) {
        const Eigen::MatrixXd x = auto_design(block, ws);
        const Eigen::MatrixXd q = auto_penalty(ws);
        const double half[] = {0.5};
        return select_smoothing(x, block.response, block.subjects, q, q, grid.rho, half);
    }
    return select_smoothing(block.design, block.response, block.subjects, ws.column_penalty(),
                            ws.row_penalty(), grid.rho, grid.w);
}

Eigen::MatrixXd solve_cross(const AuxBlock& block, const SplineWorkspace& ws, double lambda1,
                            double lambda2) {
    if (!(lambda1 >= 0.0 && lambda2 >= 0.0)) throw std::invalid_argument("solve_cross: negative lambda");
    const Eigen::MatrixXd a = block.design.transpose() * block.design +
                              lambda1 * ws.column_penalty() + lambda2 * ws.row_penalty();
    const Eigen::MatrixXd r1 = column_root(ws), r2 = row_root(ws);
    Eigen::MatrixXd root(r1.rows() + r2.rows(), r1.cols());
    root << std::sqrt(lambda1) * r1, std::sqrt(lambda2) * r2;
    const Eigen::VectorXd theta = qr_solve(block.design, block.response, root, a, "solve_cross");
    return unvec(theta, ws.dim());
}

AutoSolution solve_auto(const AuxBlock& block, const SplineWorkspace& ws, double lambda) {
    if (!(lambda >= 0.0)) throw std::invalid_argument("solve_auto: negative lambda");
    const Eigen::MatrixXd x = auto_design(block, ws);
    const Eigen::MatrixXd a = x.transpose() * x + lambda * auto_penalty(ws);
    Eigen::MatrixXd root = Eigen::MatrixXd::Zero(column_root(ws).rows(), x.cols());
    root.leftCols(x.cols() - 1) = std::sqrt(lambda) * column_root(ws) * ws.duplication();
    const Eigen::VectorXd beta = qr_solve(x, block.response, root, a, "solve_auto");
    const Eigen::Index half = beta.size() - 1;
    AutoSolution sol;
    sol.theta = unvec(ws.duplication() * beta.head(half), ws.dim());
    sol.sigma2 = beta(half);
    return sol;
}

BlockFit fit_cross(const AuxBlock& block, const SplineWorkspace& ws, const SmoothingGrid& grid) {
    if (block.is_auto()) throw std::invalid_argument("fit_cross: expects k < kp");
    BlockFit fit;
    fit.selection = select_smoothing(block, ws, grid);
    fit.warnings = fit.selection.warnings;
    fit.lambda1 = fit.selection.rho * fit.selection.w;
    fit.lambda2 = fit.selection.rho * (1.0 - fit.selection.w);
    fit.theta = solve_cross(block, ws, fit.lambda1, fit.lambda2);
    return fit;
}

BlockFit fit_auto(const AuxBlock& block, const SplineWorkspace& ws, const SmoothingGrid& grid) {
    if (!block.is_auto()) throw std::invalid_argument("fit_auto: expects k == kp");
    BlockFit fit;
    fit.selection = select_smoothing(block, ws, grid);
    fit.warnings = fit.selection.warnings;
    // Under symmetry the two penalties coincide: lambda_k = rho.
    fit.lambda1 = fit.lambda2 = fit.selection.rho;
    AutoSolution sol = solve_auto(block, ws, fit.selection.rho);
    fit.theta = 0.5 * (sol.theta + sol.theta.transpose());
    fit.sigma2 = sol.sigma2;
    if (!(sol.sigma2 > 0.0)) {
        fit.sigma2 = 1e-8 * block.response_variance;
        std::ostringstream msg;
        msg << "response " << block.k << ": error variance estimate " << sol.sigma2
            << " clipped to " << fit.sigma2;
        fit.warnings.push_back(msg.str());
    }
    return fit;
}

} // namespace mfcov
