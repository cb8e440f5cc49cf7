#pragma once

#include <span>
#include <string>
#include <vector>

#include "mfcov/data.hpp"
#include "mfcov/mean.hpp"

namespace mfcov {

/// Auxiliary covariance responses for one response pair (k <= kp).
///
/// Within subject i the rows run over pairs (j1, j2) with j1 (response k)
/// varying fastest, i.e. the subject's responses are vec(r_k r_kp^T). The
/// matching design row is (b(t_j2^{kp}) ⊗ b(t_j1^{k}))^T, so that
/// design * vec(Theta) evaluates b(s)^T Theta b(t).
struct AuxBlock {
    int k = 0;
    int kp = 0;
    Eigen::VectorXd response;   // stacked residual products, length N
    Eigen::MatrixXd design;     // N x c^2
    Eigen::VectorXd diagonal;   // auto blocks: 1 where j1 == j2; empty otherwise
    std::vector<Slice> subjects; // one per subject with rows
    /// Sample variance of the raw values of response k.
    double response_variance = 0.0;

    bool is_auto() const { return k == kp; }
    Eigen::Index rows() const { return response.size(); }
};

AuxBlock build_aux(const SparseFunctionalDataset& data, std::span<const MeanFit> means,
                   const SplineWorkspace& ws, int k, int kp);

/// Search grid for (rho, w) with lambda1 = rho w, lambda2 = rho (1 - w).
struct SmoothingGrid {
    std::vector<double> rho;
    std::vector<double> w;

    /// 20 log-spaced rho on [1e-4, 1e8]; w in {0.1, 0.3, 0.5, 0.7, 0.9}.
    static SmoothingGrid defaults();
};

struct GridPoint {
    double rho = 0.0;
    double w = 0.0;
    double score = 0.0;
};

struct SmoothingSelection {
    double rho = 0.0;
    double w = 0.0;
    std::vector<GridPoint> surface;
    std::vector<std::string> warnings;
};

/// Fast iGCV evaluation for the penalized least squares problem
///   min ||y - X beta||^2 + rho w beta^T P1 beta + rho (1 - w) beta^T P2 beta
/// with leave-one-subject-out structure given by `subjects`.
///
/// The constructor performs the one-off whitening by G_n = X^T X (plus a
/// relative ridge of 1e-10 tr(G_n)/q), set_weight() the per-w
/// eigendecomposition, and evaluate() the per-rho closed form
///   iGCV = ||y||^2 + I + II + III + IV
/// which only touches d~, f~, g, F and the L~_i. Each L~_i is held as
/// M_i^T M_i with M_i = X~_i U (rank <= rows of subject i).
class IgcvEvaluator {
public:
    IgcvEvaluator(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                  std::span<const Slice> subjects, const Eigen::MatrixXd& penalty1,
                  const Eigen::MatrixXd& penalty2);

    void set_weight(double w);
    double evaluate(double rho) const;

    double weight() const { return w_; }

private:
    std::vector<Slice> subjects_;
    double response_norm2_ = 0.0;
    Eigen::MatrixXd whitened_design_; // X G_n^{-1/2}
    Eigen::VectorXd f_;
    Eigen::MatrixXd fi_;              // column i = f_i
    Eigen::MatrixXd p1_;              // G_n^{-1/2} P1 G_n^{-1/2}
    Eigen::MatrixXd p2_;

    double w_ = -1.0;
    Eigen::VectorXd s_;
    Eigen::VectorXd ft_;              // U^T f
    Eigen::VectorXd g_;
    Eigen::MatrixXd big_f_;           // F = sum_i (f~_i f~^T) ⊙ L~_i
    Eigen::MatrixXd m_;               // rows of M_i stacked
};

/// Grid search of iGCV; ties go to larger rho, then larger w.
SmoothingSelection select_smoothing(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                                    std::span<const Slice> subjects,
                                    const Eigen::MatrixXd& penalty1,
                                    const Eigen::MatrixXd& penalty2, std::span<const double> rho,
                                    std::span<const double> w);

/// Block-level selection: cross blocks search the full grid, auto blocks
/// search rho at w = 0.5 on the symmetric parameterization.
SmoothingSelection select_smoothing(const AuxBlock& block, const SplineWorkspace& ws,
                                    const SmoothingGrid& grid);

struct BlockFit {
    Eigen::MatrixXd theta;    // c x c
    double sigma2 = 0.0;      // auto blocks only
    /// Cross blocks: (rho w, rho (1 - w)). Auto blocks: both hold lambda_k = rho.
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    SmoothingSelection selection;
    std::vector<std::string> warnings;
};

/// theta = (B^T B + lambda1 P1 + lambda2 P2)^{-1} B^T C, reshaped column-major.
Eigen::MatrixXd solve_cross(const AuxBlock& block, const SplineWorkspace& ws, double lambda1,
                            double lambda2);

/// Design [B Gc, Z] of the symmetric auto-covariance problem.
Eigen::MatrixXd auto_design(const AuxBlock& block, const SplineWorkspace& ws);
/// Q = blockdiag{Gc^T (I ⊗ D^T D) Gc, 0}.
Eigen::MatrixXd auto_penalty(const SplineWorkspace& ws);

struct AutoSolution {
    Eigen::MatrixXd theta;
    double sigma2 = 0.0;
};

/// beta = (X^T X + lambda Q)^{-1} X^T C with beta = (eta, sigma2), unclipped.
AutoSolution solve_auto(const AuxBlock& block, const SplineWorkspace& ws, double lambda);

BlockFit fit_cross(const AuxBlock& block, const SplineWorkspace& ws, const SmoothingGrid& grid);
/// Negative sigma2 is clipped to 1e-8 times the response's sample variance.
BlockFit fit_auto(const AuxBlock& block, const SplineWorkspace& ws, const SmoothingGrid& grid);

} // namespace mfcov
