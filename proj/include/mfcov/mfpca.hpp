#pragma once

#include <memory>
#include <vector>

#include "mfcov/mean.hpp"
#include "mfcov/splines.hpp"

namespace mfcov {

/// p x p grid of c x c tensor-product coefficient blocks, with
/// C_kk'(s,t) = b(s)^T Theta_kk' b(t) and Theta_k'k = Theta_kk'^T.
struct CovarianceModel {
    std::shared_ptr<const SplineWorkspace> ws;
    int p = 0;
    std::vector<Eigen::MatrixXd> blocks; // row-major over (k, k')
    Eigen::VectorXd sigma2;
    std::vector<MeanFit> means;

    CovarianceModel() = default;
    CovarianceModel(std::shared_ptr<const SplineWorkspace> workspace, int n_responses);

    const Eigen::MatrixXd& block(int k, int kp) const { return blocks[k * p + kp]; }
    /// Sets Theta_kk' and its mirror Theta_k'k = Theta_kk'^T.
    void set_block(int k, int kp, const Eigen::MatrixXd& theta);

    /// The stacked pc x pc matrix [Theta_kk'].
    Eigen::MatrixXd stacked() const;
    void set_stacked(const Eigen::MatrixXd& theta);
};

/// Spectrum of the whitened matrix [G^{1/2} Theta_kk' G^{1/2}], sorted descending.
struct EigenSystem {
    Eigen::VectorXd values;
    Eigen::MatrixXd vectors; // column l = u_l, blocks of c rows per response
    Eigen::VectorXd pve;     // cumulative share of the positive part
    int npc = 0;             // components retained at the requested PVE

    Eigen::Index size() const { return values.size(); }
};

/// Eigenvalues below this fraction of the largest count as zero in PVE sums.
inline constexpr double kEigenNoiseFloor = 1e-12;

/// [G^{1/2} Theta_kk' G^{1/2}] symmetrized as (M + M^T) / 2.
Eigen::MatrixXd whitened_matrix(const CovarianceModel& model);

/// Full symmetric eigendecomposition; signs fixed so the largest-magnitude
/// entry of each eigenvector is positive. npc is set at `pve` when any
/// eigenvalue is positive, else 0.
EigenSystem eigendecompose(const CovarianceModel& model, double pve = 0.99);

/// Drops nonpositive eigenvalues: Theta~_kk' = G^{-1/2} (sum d u^k u^k'^T) G^{-1/2}.
CovarianceModel refine(const CovarianceModel& model, const EigenSystem& eig);

/// Smallest L whose cumulative positive-eigenvalue share reaches `pve`.
int select_npc(const EigenSystem& eig, double pve);

/// Coefficients G^{-1/2} u_l^{(k)} so that Psi_l^{(k)}(t) = b(t)^T coef.
Eigen::VectorXd eigenfunction_coefficients(const SplineWorkspace& ws, const EigenSystem& eig,
                                           int l, int k);
double eval_eigenfunction(const SplineWorkspace& ws, const EigenSystem& eig, int l, int k,
                          double t);

double eval_covariance(const CovarianceModel& model, int k, int kp, double s, double t);
/// C_kk'(s,t) / sqrt(C_kk(s,s) C_k'k'(t,t)); 0 when either variance vanishes.
double eval_correlation(const CovarianceModel& model, int k, int kp, double s, double t);

/// Copy with every off-diagonal block set to zero.
CovarianceModel zero_cross_blocks(const CovarianceModel& model);

} // namespace mfcov
