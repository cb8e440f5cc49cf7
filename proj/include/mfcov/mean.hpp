#pragma once

#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "mfcov/data.hpp"

namespace mfcov {

/// P-spline estimate of one response's mean function.
struct MeanFit {
    std::shared_ptr<const SplineWorkspace> ws;
    Eigen::VectorXd alpha;
    /// Selected dimensionless smoothing parameter.
    double tau = 0.0;
    /// mean(diag(B^T B)); the penalty actually applied is tau * penalty_scale * D^T D.
    double penalty_scale = 1.0;
    /// (tau, leave-one-subject-out error) for every grid value examined.
    std::vector<std::pair<double, double>> cv_curve;

    double operator()(double t) const { return ws->eval(t).dot(alpha); }
};

/// 31 log-spaced values on [1e-6, 1e6].
std::vector<double> default_tau_grid();

/// Leave-one-subject-out squared prediction error of the linear smoother
/// y_hat = B (B^T B + lambda P)^{-1} B^T y, via the (I - H_ii)^{-1} short-cut.
/// Sum over points. Throws std::runtime_error when the system is singular.
double loso_error(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                  std::span<const Slice> subjects, const Eigen::MatrixXd& penalty, double lambda);

/// Fits response k, choosing tau on `tau_grid` by leave-one-subject-out CV.
/// Ties go to the larger tau.
MeanFit fit_mean(const SparseFunctionalDataset& data, int k,
                 std::shared_ptr<const SplineWorkspace> ws, std::span<const double> tau_grid);

} // namespace mfcov
