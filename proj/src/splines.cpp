#include "mfcov/splines.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <unsupported/Eigen/KroneckerProduct>

namespace mfcov {

namespace {

// Times within this fraction of the domain length outside [a,b] are clamped.
constexpr double kDomainSlack = 1e-10;

} // namespace

bool Interval::contains(double t) const {
    const double slack = kDomainSlack * (upper - lower);
    return t >= lower - slack && t <= upper + slack;
}

QuadratureRule gauss_legendre(int n_nodes) {
    if (n_nodes < 1) throw std::invalid_argument("gauss_legendre: need at least one node");
    QuadratureRule rule;
    rule.nodes.resize(n_nodes);
    rule.weights.resize(n_nodes);
    const int half = (n_nodes + 1) / 2;
    for (int i = 0; i < half; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n_nodes + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            // Legendre recurrence for P_n(x) and P_{n-1}(x).
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n_nodes; ++k) {
                const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = pk;
            }
            dp = n_nodes * (x * p1 - p0) / (x * x - 1.0);
            const double step = p1 / dp;
            x -= step;
            if (std::abs(step) < 1e-16) break;
        }
        // Recompute derivative at the converged node.
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n_nodes; ++k) {
            const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = pk;
        }
        dp = n_nodes * (x * p1 - p0) / (x * x - 1.0);
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.nodes[i] = -x;
        rule.nodes[n_nodes - 1 - i] = x;
        rule.weights[i] = w;
        rule.weights[n_nodes - 1 - i] = w;
    }
    if (n_nodes % 2 == 1) rule.nodes[n_nodes / 2] = 0.0;
    return rule;
}

Eigen::MatrixXd diff_matrix(int c) {
    if (c < 3) throw std::invalid_argument("diff_matrix: need c >= 3");
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(c - 2, c);
    for (int i = 0; i < c - 2; ++i) {
        d(i, i) = 1.0;
        d(i, i + 1) = -2.0;
        d(i, i + 2) = 1.0;
    }
    return d;
}

Eigen::MatrixXd duplication_matrix(int c) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(c * c, c * (c + 1) / 2);
    int col = 0;
    for (int j = 0; j < c; ++j) {
        for (int i = j; i < c; ++i, ++col) {
            g(i + j * c, col) = 1.0;
            g(j + i * c, col) = 1.0;
        }
    }
    return g;
}

Eigen::VectorXd half_vec(const Eigen::MatrixXd& m) {
    const int c = static_cast<int>(m.rows());
    Eigen::VectorXd h(c * (c + 1) / 2);
    int idx = 0;
    for (int j = 0; j < c; ++j)
        for (int i = j; i < c; ++i) h(idx++) = m(i, j);
    return h;
}

Eigen::VectorXd vec(const Eigen::MatrixXd& m) {
    return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

Eigen::MatrixXd unvec(const Eigen::VectorXd& v, int rows) {
    return Eigen::Map<const Eigen::MatrixXd>(v.data(), rows, v.size() / rows);
}

SplineWorkspace::SplineWorkspace(Interval domain, int n_interior, int order)
    : domain_(domain), n_interior_(n_interior), order_(order), dim_(n_interior + order) {
    if (!(domain.lower < domain.upper) || !std::isfinite(domain.lower) ||
        !std::isfinite(domain.upper))
        throw std::invalid_argument("SplineWorkspace: degenerate domain");
    if (n_interior < 0 || order < 1 || order > 16)
        throw std::invalid_argument("SplineWorkspace: invalid knot count or order");
    if (dim_ < 3) throw std::invalid_argument("SplineWorkspace: basis dimension must be >= 3");

    knots_.reserve(dim_ + order_);
    for (int i = 0; i < order_; ++i) knots_.push_back(0.0);
    for (int i = 1; i <= n_interior_; ++i)
        knots_.push_back(static_cast<double>(i) / (n_interior_ + 1));
    for (int i = 0; i < order_; ++i) knots_.push_back(1.0);

    diff_ = diff_matrix(dim_);
    const Eigen::MatrixXd dtd = diff_.transpose() * diff_;
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(dim_, dim_);
    p1_ = Eigen::kroneckerProduct(eye, dtd);
    p2_ = Eigen::kroneckerProduct(dtd, eye);
    dup_ = duplication_matrix(dim_);

    // Per-interval Gauss-Legendre, exact for products of two degree-(order-1) pieces.
    const int degree = order_ - 1;
    const int n_nodes = (2 * degree + 2) / 2 + 1; // ceil((2 degree + 1) / 2) + 1
    const QuadratureRule rule = gauss_legendre(n_nodes);
    gram_ = Eigen::MatrixXd::Zero(dim_, dim_);
    std::vector<double> vals(order_);
    const double h = 1.0 / (n_interior_ + 1);
    for (int interval = 0; interval <= n_interior_; ++interval) {
        const double left = interval * h;
        for (int q = 0; q < n_nodes; ++q) {
            const double u = left + 0.5 * h * (rule.nodes[q] + 1.0);
            const double w = 0.5 * h * rule.weights[q] * domain_.length();
            const int first = eval_nonzero(domain_.lower + u * domain_.length(), vals);
            for (int a = 0; a < order_; ++a)
                for (int b = 0; b < order_; ++b) gram_(first + a, first + b) += w * vals[a] * vals[b];
        }
    }
    gram_ = 0.5 * (gram_ + gram_.transpose()).eval();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram_);
    Eigen::VectorXd ev = es.eigenvalues();
    const double floor = 1e-12 * ev.maxCoeff();
    if (ev.minCoeff() <= floor)
        throw std::runtime_error("SplineWorkspace: Gram matrix is numerically singular");
    gram_sqrt_ = es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
    gram_inv_sqrt_ =
        es.eigenvectors() * ev.cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

double SplineWorkspace::to_unit(double t) const {
    if (!std::isfinite(t) || !domain_.contains(t)) {
        std::ostringstream msg;
        msg << "time " << t << " outside domain [" << domain_.lower << ", " << domain_.upper << "]";
        throw std::out_of_range(msg.str());
    }
    return std::clamp((t - domain_.lower) / domain_.length(), 0.0, 1.0);
}

int SplineWorkspace::eval_nonzero(double t, std::span<double> values) const {
    const double u = to_unit(t);
    const int degree = order_ - 1;
    const int n_spans = n_interior_ + 1;
    const int span = degree + std::min(static_cast<int>(u * n_spans), n_spans - 1);

    // de Boor's triangular scheme (non-recursive Cox-de Boor).
    double left[16], right[16];
    values[0] = 1.0;
    for (int j = 1; j <= degree; ++j) {
        left[j] = u - knots_[span + 1 - j];
        right[j] = knots_[span + j] - u;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double tmp = values[r] / (right[r + 1] + left[j - r]);
            values[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        values[j] = saved;
    }
    return span - degree;
}

Eigen::VectorXd SplineWorkspace::eval(double t) const {
    Eigen::VectorXd b = Eigen::VectorXd::Zero(dim_);
    double vals[16];
    const int first = eval_nonzero(t, std::span<double>(vals, order_));
    for (int a = 0; a < order_; ++a) b(first + a) = vals[a];
    return b;
}

Eigen::MatrixXd SplineWorkspace::design(std::span<const double> times) const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(times.size()), dim_);
    double vals[16];
    for (std::size_t j = 0; j < times.size(); ++j) {
        const int first = eval_nonzero(times[j], std::span<double>(vals, order_));
        for (int a = 0; a < order_; ++a) out(static_cast<Eigen::Index>(j), first + a) = vals[a];
    }
    return out;
}

} // namespace mfcov
