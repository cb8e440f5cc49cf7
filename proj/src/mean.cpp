#include "mfcov/mean.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mfcov {

namespace {

constexpr double kSingularRcond = 1e-13;

Eigen::LDLT<Eigen::MatrixXd> factor(const Eigen::MatrixXd& a) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > kSingularRcond))
        throw std::runtime_error("penalized mean system is singular");
    return ldlt;
}

} // namespace

std::vector<double> default_tau_grid() {
    std::vector<double> grid(31);
    for (int i = 0; i < 31; ++i) grid[i] = std::pow(10.0, -6.0 + 12.0 * i / 30.0);
    return grid;
}

double loso_error(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                  std::span<const Slice> subjects, const Eigen::MatrixXd& penalty, double lambda) {
    const Eigen::MatrixXd a = design.transpose() * design + lambda * penalty;
    const auto ldlt = factor(a);
    const Eigen::VectorXd coef = ldlt.solve(design.transpose() * y);
    const Eigen::VectorXd resid = y - design * coef;
    double total = 0.0;
    for (const Slice& s : subjects) {
        if (s.size == 0) continue;
        const auto bi = design.middleRows(s.start, s.size);
        const Eigen::MatrixXd hii = bi * ldlt.solve(bi.transpose());
        const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(s.size, s.size);
        const Eigen::VectorXd ei = (eye - hii).partialPivLu().solve(resid.segment(s.start, s.size));
        total += ei.squaredNorm();
    }
    return total;
}

MeanFit fit_mean(const SparseFunctionalDataset& data, int k,
                 std::shared_ptr<const SplineWorkspace> ws, std::span<const double> tau_grid) {
    if (tau_grid.empty()) throw std::invalid_argument("fit_mean: empty tau grid");
    const std::size_t n_obs = data.count(k);
    if (n_obs == 0) throw std::invalid_argument("fit_mean: response has no observations");

    std::vector<double> times, values;
    std::vector<Slice> slices;
    times.reserve(n_obs);
    values.reserve(n_obs);
    for (const auto& s : data.subjects()) {
        const Slice slice{static_cast<Eigen::Index>(times.size()),
                          static_cast<Eigen::Index>(s.count(k))};
        times.insert(times.end(), s.times[k].begin(), s.times[k].end());
        values.insert(values.end(), s.values[k].begin(), s.values[k].end());
        if (slice.size > 0) slices.push_back(slice);
    }
    const Eigen::MatrixXd b = ws->design(times);
    const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(values.data(), values.size());
    const Eigen::MatrixXd dtd = ws->diff().transpose() * ws->diff();

    MeanFit fit;
    fit.ws = ws;
    fit.penalty_scale = (b.transpose() * b).diagonal().mean();
    // Scores within this band of the minimum count as ties.
    const double floor = 1e-14 * y.squaredNorm();
    double best = std::numeric_limits<double>::infinity();
    for (double tau : tau_grid) {
        if (!(tau >= 0.0)) throw std::invalid_argument("fit_mean: negative tau");
        const double score = loso_error(b, y, slices, dtd, tau * fit.penalty_scale);
        fit.cv_curve.emplace_back(tau, score);
        const double band = 1e-12 * best + floor;
        const bool better = score < best - band;
        const bool tie = !better && score <= best + band && tau > fit.tau;
        if (better || tie) {
            best = std::min(best, score);
            fit.tau = tau;
        }
    }
    const Eigen::MatrixXd a = b.transpose() * b + fit.tau * fit.penalty_scale * dtd;
    factor(a);
    // QR of [B; sqrt(lambda) D] avoids squaring the condition number.
    const Eigen::MatrixXd& d = ws->diff();
    Eigen::MatrixXd aug(b.rows() + d.rows(), b.cols());
    aug << b, std::sqrt(fit.tau * fit.penalty_scale) * d;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(aug.rows());
    rhs.head(y.size()) = y;
    fit.alpha = aug.householderQr().solve(rhs);
    return fit;
}

} // namespace mfcov
