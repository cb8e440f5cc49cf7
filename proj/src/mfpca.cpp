#include "mfcov/mfpca.hpp"

#include <cmath>
#include <stdexcept>

namespace mfcov {

CovarianceModel::CovarianceModel(std::shared_ptr<const SplineWorkspace> workspace, int n_responses)
    : ws(std::move(workspace)), p(n_responses) {
    const int c = ws->dim();
    blocks.assign(static_cast<std::size_t>(p * p), Eigen::MatrixXd::Zero(c, c));
    sigma2 = Eigen::VectorXd::Zero(p);
}

void CovarianceModel::set_block(int k, int kp, const Eigen::MatrixXd& theta) {
    blocks[k * p + kp] = theta;
    blocks[kp * p + k] = theta.transpose();
}

Eigen::MatrixXd CovarianceModel::stacked() const {
    const int c = ws->dim();
    Eigen::MatrixXd out(p * c, p * c);
    for (int k = 0; k < p; ++k)
        for (int kp = 0; kp < p; ++kp) out.block(k * c, kp * c, c, c) = block(k, kp);
    return out;
}

void CovarianceModel::set_stacked(const Eigen::MatrixXd& theta) {
    const int c = ws->dim();
    if (theta.rows() != p * c || theta.cols() != p * c)
        throw std::invalid_argument("set_stacked: dimension mismatch");
    for (int k = 0; k < p; ++k)
        for (int kp = 0; kp < p; ++kp) blocks[k * p + kp] = theta.block(k * c, kp * c, c, c);
}

Eigen::MatrixXd whitened_matrix(const CovarianceModel& model) {
    const int c = model.ws->dim();
    const Eigen::MatrixXd& gs = model.ws->gram_sqrt();
    Eigen::MatrixXd m(model.p * c, model.p * c);
    for (int k = 0; k < model.p; ++k)
        for (int kp = 0; kp < model.p; ++kp)
            m.block(k * c, kp * c, c, c) = gs * model.block(k, kp) * gs;
    return 0.5 * (m + m.transpose());
}

EigenSystem eigendecompose(const CovarianceModel& model, double pve) {
    const Eigen::MatrixXd m = whitened_matrix(model);
    if (!m.allFinite()) throw std::invalid_argument("eigendecompose: non-finite coefficients");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success) throw std::runtime_error("eigendecompose: solver failed");

    const Eigen::Index n = m.rows();
    EigenSystem eig;
    eig.values = es.eigenvalues().reverse();
    eig.vectors = es.eigenvectors().rowwise().reverse();
    for (Eigen::Index l = 0; l < n; ++l) {
        Eigen::Index idx;
        eig.vectors.col(l).cwiseAbs().maxCoeff(&idx);
        if (eig.vectors(idx, l) < 0.0) eig.vectors.col(l) *= -1.0;
    }

    const double top = eig.values(0);
    const double floor = kEigenNoiseFloor * std::max(top, 0.0);
    double total = 0.0;
    for (Eigen::Index l = 0; l < n; ++l)
        if (eig.values(l) > floor) total += eig.values(l);
    eig.pve = Eigen::VectorXd::Zero(n);
    double running = 0.0;
    for (Eigen::Index l = 0; l < n; ++l) {
        if (eig.values(l) > floor) running += eig.values(l);
        eig.pve(l) = total > 0.0 ? std::min(running / total, 1.0) : 0.0;
    }
    eig.npc = total > 0.0 ? select_npc(eig, pve) : 0;
    return eig;
}

CovarianceModel refine(const CovarianceModel& model, const EigenSystem& eig) {
    const Eigen::Index n = eig.values.size();
    Eigen::MatrixXd kept = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index l = 0; l < n; ++l) {
        if (!(eig.values(l) > 0.0)) continue;
        kept.noalias() += eig.values(l) * eig.vectors.col(l) * eig.vectors.col(l).transpose();
    }
    CovarianceModel out = model;
    const int c = model.ws->dim();
    const Eigen::MatrixXd& gi = model.ws->gram_inv_sqrt();
    for (int k = 0; k < model.p; ++k)
        for (int kp = 0; kp < model.p; ++kp)
            out.blocks[k * model.p + kp] = gi * kept.block(k * c, kp * c, c, c) * gi;
    // Exact transpose symmetry between mirrored blocks.
    for (int k = 0; k < model.p; ++k) {
        Eigen::MatrixXd& diag = out.blocks[k * model.p + k];
        diag = 0.5 * (diag + diag.transpose()).eval();
        for (int kp = k + 1; kp < model.p; ++kp)
            out.blocks[kp * model.p + k] = out.blocks[k * model.p + kp].transpose();
    }
    return out;
}

int select_npc(const EigenSystem& eig, double pve) {
    if (!(pve > 0.0 && pve <= 1.0)) throw std::invalid_argument("select_npc: pve outside (0,1]");
    if (eig.size() == 0 || !(eig.values(0) > 0.0))
        throw std::invalid_argument("select_npc: no positive eigenvalue");
    for (Eigen::Index l = 0; l < eig.pve.size(); ++l)
        if (eig.pve(l) >= pve - 1e-12) return static_cast<int>(l + 1);
    return static_cast<int>(eig.pve.size());
}

Eigen::VectorXd eigenfunction_coefficients(const SplineWorkspace& ws, const EigenSystem& eig,
                                           int l, int k) {
    if (l < 0 || l >= eig.size()) throw std::out_of_range("eigenfunction index out of range");
    const int c = ws.dim();
    if (static_cast<Eigen::Index>(k + 1) * c > eig.vectors.rows())
        throw std::out_of_range("response index out of range");
    return ws.gram_inv_sqrt() * eig.vectors.col(l).segment(static_cast<Eigen::Index>(k) * c, c);
}

double eval_eigenfunction(const SplineWorkspace& ws, const EigenSystem& eig, int l, int k,
                          double t) {
    return ws.eval(t).dot(eigenfunction_coefficients(ws, eig, l, k));
}

double eval_covariance(const CovarianceModel& model, int k, int kp, double s, double t) {
    return model.ws->eval(s).dot(model.block(k, kp) * model.ws->eval(t));
}

double eval_correlation(const CovarianceModel& model, int k, int kp, double s, double t) {
    const double vs = eval_covariance(model, k, k, s, s);
    const double vt = eval_covariance(model, kp, kp, t, t);
    if (!(vs > 0.0) || !(vt > 0.0)) return 0.0;
    return eval_covariance(model, k, kp, s, t) / std::sqrt(vs * vt);
}

CovarianceModel zero_cross_blocks(const CovarianceModel& model) {
    CovarianceModel out = model;
    for (int k = 0; k < model.p; ++k)
        for (int kp = 0; kp < model.p; ++kp)
            if (k != kp) out.blocks[k * model.p + kp].setZero();
    return out;
}

} // namespace mfcov
