#pragma once

#include <span>
#include <vector>

#include "mfcov/data.hpp"
#include "mfcov/mfpca.hpp"

namespace mfcov {

struct PredictOptions {
    /// Number of scores; negative means eig.npc.
    int n_scores = -1;
    /// Skip the pm x pm conditional covariance (and bands) when false.
    bool covariance = true;
    /// Pointwise band level; 0.95 uses 1.96.
    double level = 0.95;
};

/// Conditional-expectation prediction for one subject on a common grid.
/// Rows of `xhat`, `lower`, `upper` are responses; columns follow `times`.
/// `cov` is ordered response-major (all times of response 1 first).
struct PredictionResult {
    std::vector<double> times;
    Eigen::MatrixXd xhat;
    Eigen::MatrixXd cov;
    Eigen::MatrixXd lower;
    Eigen::MatrixXd upper;
    Eigen::VectorXd scores;
    /// Diagonal jitter added to V_i when it was numerically singular.
    double jitter = 0.0;
};

/// Normal quantile for a two-sided band; exactly 1.96 at level 0.95.
double band_multiplier(double level);

/// Gaussian conditioning of the subject's curves on its observations under
/// the (refined) model. Parameter uncertainty in Theta, mu and sigma^2 is ignored.
PredictionResult predict_subject(const CovarianceModel& model, const EigenSystem& eig,
                                 const SubjectRecord& obs, std::span<const double> times,
                                 const PredictOptions& options = {});

} // namespace mfcov
