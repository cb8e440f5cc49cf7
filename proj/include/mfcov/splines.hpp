#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace mfcov {

/// Closed time interval [lower, upper].
struct Interval {
    double lower = 0.0;
    double upper = 1.0;

    double length() const { return upper - lower; }
    bool contains(double t) const;
};

/// Gauss-Legendre rule on [-1, 1].
struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

QuadratureRule gauss_legendre(int n_nodes);

/// Second-order differencing matrix, (c-2) x c.
Eigen::MatrixXd diff_matrix(int c);

/// Duplication matrix Gc (c^2 x c(c+1)/2) with vec(M) = Gc * half_vec(M) for symmetric M.
/// Columns follow the lower triangle stacked column by column.
Eigen::MatrixXd duplication_matrix(int c);
Eigen::VectorXd half_vec(const Eigen::MatrixXd& m);

/// Column-major vec / unvec.
Eigen::VectorXd vec(const Eigen::MatrixXd& m);
Eigen::MatrixXd unvec(const Eigen::VectorXd& v, int rows);

/// Clamped B-spline basis on an interval with equally spaced interior knots,
/// together with the penalty and Gram matrices used by every smoother.
///
/// Knots live on the unit interval; times are mapped affinely onto it before
/// evaluation. The Gram matrix integrates over the original domain, so
/// eigenvalues and eigenfunctions derived from it are in the caller's units.
/// Immutable once built.
class SplineWorkspace {
public:
    SplineWorkspace(Interval domain, int n_interior, int order = 4);

    const Interval& domain() const { return domain_; }
    int order() const { return order_; }
    int n_interior() const { return n_interior_; }
    /// Basis dimension c = n_interior + order.
    int dim() const { return dim_; }
    const std::vector<double>& knots() const { return knots_; }

    /// b(t); throws std::out_of_range outside the domain.
    Eigen::VectorXd eval(double t) const;

    /// Writes the `order` possibly-nonzero values at t into `values` and
    /// returns the index of the first of them.
    int eval_nonzero(double t, std::span<double> values) const;

    /// Rows b(t_j)^T, one per time.
    Eigen::MatrixXd design(std::span<const double> times) const;

    const Eigen::MatrixXd& diff() const { return diff_; }
    /// P1 = I_c ⊗ D^T D, so theta^T P1 theta = ||D Theta||_F^2.
    const Eigen::MatrixXd& column_penalty() const { return p1_; }
    /// P2 = D^T D ⊗ I_c, so theta^T P2 theta = ||D Theta^T||_F^2.
    const Eigen::MatrixXd& row_penalty() const { return p2_; }
    /// G = integral of b(t) b(t)^T over the domain.
    const Eigen::MatrixXd& gram() const { return gram_; }
    const Eigen::MatrixXd& gram_sqrt() const { return gram_sqrt_; }
    const Eigen::MatrixXd& gram_inv_sqrt() const { return gram_inv_sqrt_; }
    const Eigen::MatrixXd& duplication() const { return dup_; }

private:
    double to_unit(double t) const;

    Interval domain_;
    int n_interior_;
    int order_;
    int dim_;
    std::vector<double> knots_;
    Eigen::MatrixXd diff_;
    Eigen::MatrixXd p1_;
    Eigen::MatrixXd p2_;
    Eigen::MatrixXd gram_;
    Eigen::MatrixXd gram_sqrt_;
    Eigen::MatrixXd gram_inv_sqrt_;
    Eigen::MatrixXd dup_;
};

} // namespace mfcov
