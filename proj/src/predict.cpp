#include "mfcov/predict.hpp"

#include <cmath>
#include <stdexcept>

#include <boost/math/distributions/normal.hpp>

namespace mfcov {

double band_multiplier(double level) {
    if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("band level outside (0,1)");
    if (level == 0.95) return 1.96;
    return boost::math::quantile(boost::math::normal(), 0.5 + 0.5 * level);
}

PredictionResult predict_subject(const CovarianceModel& model, const EigenSystem& eig,
                                 const SubjectRecord& obs, std::span<const double> times,
                                 const PredictOptions& options) {
    const SplineWorkspace& ws = *model.ws;
    const int p = model.p;
    const int c = ws.dim();
    const Eigen::Index pc = static_cast<Eigen::Index>(p) * c;
    const Eigen::Index m = static_cast<Eigen::Index>(times.size());
    if (static_cast<int>(obs.times.size()) != p)
        throw std::invalid_argument("predict_subject: response count mismatch");

    // Observed design B_o = blockdiag(b_i^{(k),o}) and centred responses.
    const Eigen::Index n_obs = static_cast<Eigen::Index>(obs.total());
    Eigen::MatrixXd bo = Eigen::MatrixXd::Zero(n_obs, pc);
    Eigen::VectorXd resid(n_obs);
    Eigen::VectorXd noise(n_obs);
    Eigen::Index row = 0;
    for (int k = 0; k < p; ++k) {
        for (std::size_t j = 0; j < obs.count(k); ++j, ++row) {
            const double t = obs.times[k][j];
            bo.block(row, static_cast<Eigen::Index>(k) * c, 1, c) = ws.eval(t).transpose();
            resid(row) = obs.values[k][j] - model.means[k](t);
            noise(row) = model.sigma2(k);
        }
    }

    // B_n = I_p ⊗ b_n.
    const Eigen::MatrixXd bn_single = ws.design(times);
    Eigen::MatrixXd mu_n(p, m);
    for (int k = 0; k < p; ++k)
        for (Eigen::Index j = 0; j < m; ++j) mu_n(k, j) = model.means[k](times[j]);

    const Eigen::MatrixXd theta = model.stacked();
    // Theta B_o^T (pc x n_obs).
    const Eigen::MatrixXd theta_bo = theta * bo.transpose();
    Eigen::MatrixXd v = bo * theta_bo;
    v.diagonal() += noise;
    v = 0.5 * (v + v.transpose()).eval();

    PredictionResult out;
    out.times.assign(times.begin(), times.end());
    Eigen::LDLT<Eigen::MatrixXd> ldlt;
    if (n_obs > 0) {
        ldlt.compute(v);
        if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-14)) {
            out.jitter = 1e-10 * v.trace() / static_cast<double>(n_obs);
            if (!(out.jitter > 0.0)) out.jitter = 1e-10;
            v.diagonal().array() += out.jitter;
            ldlt.compute(v);
        }
    }
    // Theta B_o^T V^{-1} (y - mu_o): the predicted coefficient of x - mu.
    const Eigen::VectorXd coef =
        n_obs > 0 ? Eigen::VectorXd(theta_bo * ldlt.solve(resid)) : Eigen::VectorXd::Zero(pc);

    out.xhat.resize(p, m);
    for (int k = 0; k < p; ++k)
        out.xhat.row(k) = (bn_single * coef.segment(static_cast<Eigen::Index>(k) * c, c)).transpose() +
                          mu_n.row(k);

    const int n_scores = options.n_scores < 0 ? eig.npc : options.n_scores;
    if (n_scores > eig.size()) throw std::invalid_argument("predict_subject: too many scores");
    out.scores.resize(n_scores);
    if (n_scores > 0) {
        Eigen::VectorXd whitened(pc);
        for (int k = 0; k < p; ++k)
            whitened.segment(static_cast<Eigen::Index>(k) * c, c) =
                ws.gram_sqrt() * coef.segment(static_cast<Eigen::Index>(k) * c, c);
        out.scores = eig.vectors.leftCols(n_scores).transpose() * whitened;
    }

    if (!options.covariance) return out;

    Eigen::MatrixXd bn = Eigen::MatrixXd::Zero(p * m, pc);
    for (int k = 0; k < p; ++k)
        bn.block(static_cast<Eigen::Index>(k) * m, static_cast<Eigen::Index>(k) * c, m, c) = bn_single;
    const Eigen::MatrixXd bn_theta = bn * theta;
    out.cov = bn_theta * bn.transpose();
    if (n_obs > 0) {
        const Eigen::MatrixXd k_no = bn * theta_bo; // Cov(x, y)
        out.cov.noalias() -= k_no * ldlt.solve(k_no.transpose());
    }
    out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();

    const double z = band_multiplier(options.level);
    out.lower.resize(p, m);
    out.upper.resize(p, m);
    for (int k = 0; k < p; ++k)
        for (Eigen::Index j = 0; j < m; ++j) {
            const double var = out.cov(k * m + j, k * m + j);
            const double half = z * std::sqrt(std::max(var, 0.0));
            out.lower(k, j) = out.xhat(k, j) - half;
            out.upper(k, j) = out.xhat(k, j) + half;
        }
    return out;
}

} // namespace mfcov
