#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mfcov/data.hpp"
#include "mfcov/fit.hpp"
#include "mfcov/mfpca.hpp"

namespace mfcov::sim {

inline constexpr int kResponses = 3;

/// Three-response benchmark process on [0,1]:
///   mu(t) = (5 sin 2πt, 5 cos 2πt, 5 (t-1)^2),
///   C_kk(s,t) = Phi_k(s)^T Lambda_kk Phi_k(t),
///   C_kk'(s,t) = rho Phi_k(s)^T Lambda_kk^{1/2} Lambda_k'k'^{1/2} Phi_k'(t).
/// Each Phi_k holds three functions orthonormal on [0,1], so the operator
/// acts on a 9-dimensional space with coefficient covariance `coefficients()`.
class TrueModel {
public:
    explicit TrueModel(double rho);

    double rho() const { return rho_; }
    double mean(int k, double t) const;
    Eigen::Vector3d basis(int k, double t) const;
    double covariance(int k, int kp, double s, double t) const;
    /// 9 x 9 covariance of the Phi-coordinates.
    const Eigen::MatrixXd& coefficients() const { return coef_; }
    /// Sum of the operator's eigenvalues (trace of `coefficients()`).
    double total_variance() const { return coef_.trace(); }
    /// sigma^2 with SNR = sum(d) / (p sigma^2).
    double noise_variance(double snr) const;

    /// Karhunen-Loeve pieces used for generation: eigenvalues (clipped at 0,
    /// descending) and eigenvectors of `coefficients()`.
    const Eigen::VectorXd& kl_values() const { return kl_values_; }
    const Eigen::MatrixXd& kl_vectors() const { return kl_vectors_; }

private:
    double rho_;
    Eigen::MatrixXd coef_;
    Eigen::VectorXd kl_values_;
    Eigen::MatrixXd kl_vectors_;
};

/// Uniform grid on [0,1] used for all metric quadrature (101 points).
std::vector<double> metric_grid(int points = 101);
std::vector<double> trapezoid_weights(std::span<const double> grid);

/// Stacked matrix [C_kk'(t_a, t_b)] (3G x 3G, response-major).
Eigen::MatrixXd discretized_covariance(const TrueModel& truth, std::span<const double> grid);

/// Eigen-decomposition of the true operator by trapezoid discretization.
struct TrueEigensystem {
    Eigen::VectorXd values;     // numerically nonzero eigenvalues, descending
    std::vector<double> grid;
    std::vector<double> weights;
    Eigen::MatrixXd functions;  // (3G) x L eigenfunction values on `grid`
    Eigen::MatrixXd phi_coef;   // 9 x L, Psi_l^{(k)}(t) = Phi_k(t)^T phi_coef.col(l).segment(3k, 3)

    /// Nystrom extension Psi_l^{(k)}(t) = d_l^{-1} sum_k' int C_kk'(t,u) Psi_l^{(k')}(u) du.
    double eval(const TrueModel& truth, int l, int k, double t) const;
    /// p x G matrix of Psi_l on an arbitrary grid.
    Eigen::MatrixXd on_grid(const TrueModel& truth, int l, std::span<const double> grid) const;
};

TrueEigensystem true_eigensystem(const TrueModel& truth, int grid_points = 501);

struct SimDesign {
    int n = 100;
    double rho = 0.9;
    double snr = 2.0;
    int m_min = 3;
    int m_max = 7;
    std::uint64_t seed = 1;
    int n_test = 200;

    void validate() const;
};

struct SimulatedData {
    SparseFunctionalDataset train{{"y1", "y2", "y3"}};
    SparseFunctionalDataset test{{"y1", "y2", "y3"}};
    Eigen::MatrixXd train_scores;            // n x 9
    std::vector<Eigen::MatrixXd> test_curves; // p x G true curves, aligned with test.subjects()
    std::vector<double> curve_grid;
};

/// Draws the training and test sets of one replicate. All randomness comes
/// from (design.seed, replicate).
SimulatedData generate(const SimDesign& design, const TrueModel& truth, int replicate = 0,
                       std::span<const double> curve_grid = {});

// ---- metrics --------------------------------------------------------------

/// Relative integrated squared error of the covariance over [0,1]^2.
double rise(const CovarianceModel& estimate, const TrueModel& truth, std::span<const double> grid);
/// min over sign of sum_k int (Psi - Psi_hat)^2; values are p x G on a grid with `weights`.
double ise(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& estimate,
           std::span<const double> weights);
/// (1/(N p)) sum_i sum_k int (x - x_hat)^2.
double mise(std::span<const Eigen::MatrixXd> truth, std::span<const Eigen::MatrixXd> predicted,
            std::span<const double> weights);
/// APE_k = mean over subjects with data of mean_j (y - y_hat)^2.
std::vector<double> ape(const SparseFunctionalDataset& observed,
                        std::span<const SubjectRecord> predicted);

struct ReplicateMetrics {
    int n = 0;
    double rho = 0.0;
    int replicate = 0;
    bool ok = false;
    std::string error;
    double rise = 0.0;
    std::vector<double> ise;         // top components
    std::vector<double> ratio;       // d_hat / d
    double mise = 0.0;
    double mise_no_cross = 0.0;      // same predictor with cross blocks zeroed
    // Response 1 predicted with its own observations removed, full vs cross-zeroed model.
    double flow_full = 0.0;
    double flow_zeroed = 0.0;
    double cross_corr_median = 0.0;  // median |corr_kk'(s,t)| over k<k' on a grid
    double min_eig_ratio = 0.0;      // min eigenvalue of refined whitened matrix / d_1
    double cs_excess = 0.0;          // max |C_kk'| - sqrt(C_kk C_k'k') on a grid
    int npc = 0;
};

/// Generate, fit, and score one replicate. Failures are captured in `error`.
ReplicateMetrics run_replicate(const SimDesign& design, int replicate, FitOptions options,
                               const TrueModel& truth, const TrueEigensystem& true_eig,
                               int n_components = 2);

} // namespace mfcov::sim
