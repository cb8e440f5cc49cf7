#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "mfcov/random.hpp"
#include "mfcov/simulation.hpp"

using namespace mfcov;

TEST(Philox, KnownAnswerVectors) {
    using A4 = std::array<std::uint32_t, 4>;
    using A2 = std::array<std::uint32_t, 2>;
    EXPECT_EQ(philox4x32(A4{0, 0, 0, 0}, A2{0, 0}), (A4{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
    EXPECT_EQ(philox4x32(A4{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, A2{0xffffffff, 0xffffffff}),
              (A4{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
    EXPECT_EQ(philox4x32(A4{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, A2{0xa4093822, 0x299f31d0}),
              (A4{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(Philox, StreamMomentsAndRanges) {
    RandomStream rs(42, 3);
    const int n = 200000;
    double su = 0.0, sz = 0.0, sz2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double u = rs.uniform();
        ASSERT_GT(u, 0.0);
        ASSERT_LT(u, 1.0);
        su += u;
        const double z = rs.normal();
        sz += z;
        sz2 += z * z;
        const int k = rs.uniform_int(3, 7);
        ASSERT_GE(k, 3);
        ASSERT_LE(k, 7);
    }
    EXPECT_NEAR(su / n, 0.5, 5.0 * std::sqrt(1.0 / 12.0 / n));
    EXPECT_NEAR(sz / n, 0.0, 5.0 / std::sqrt(n));
    EXPECT_NEAR(sz2 / n, 1.0, 5.0 * std::sqrt(2.0 / n));

    RandomStream a(1, 0), b(1, 0), c(1, 1), d(2, 0);
    const auto va = a.next_u64();
    EXPECT_EQ(va, b.next_u64());
    EXPECT_NE(va, c.next_u64());
    EXPECT_NE(va, d.next_u64());
}

TEST(Simulation, SameSeedGivesIdenticalData) {
    const sim::TrueModel truth(0.9);
    sim::SimDesign design;
    design.n = 30;
    design.n_test = 10;
    const auto a = sim::generate(design, truth, 4);
    const auto b = sim::generate(design, truth, 4);
    const auto c = sim::generate(design, truth, 5);
    ASSERT_EQ(a.train.n_subjects(), 30);
    for (int i = 0; i < 30; ++i)
        for (int k = 0; k < 3; ++k) {
            EXPECT_EQ(a.train.subject(i).times[k], b.train.subject(i).times[k]);
            EXPECT_EQ(a.train.subject(i).values[k], b.train.subject(i).values[k]);
            EXPECT_GE(a.train.subject(i).count(k), 3u);
            EXPECT_LE(a.train.subject(i).count(k), 7u);
            for (double t : a.train.subject(i).times[k]) {
                EXPECT_GE(t, 0.0);
                EXPECT_LE(t, 1.0);
            }
        }
    EXPECT_EQ(a.train_scores, b.train_scores);
    EXPECT_NE(a.train.subject(0).values[0], c.train.subject(0).values[0]);
    ASSERT_EQ(a.test_curves.size(), static_cast<std::size_t>(a.test.n_subjects()));
    for (std::size_t i = 0; i < a.test_curves.size(); ++i) EXPECT_EQ(a.test_curves[i], b.test_curves[i]);
}

TEST(Simulation, RejectsInvalidDesigns) {
    sim::SimDesign d;
    d.rho = 1.5;
    EXPECT_THROW(d.validate(), std::invalid_argument);
    d.rho = 0.5;
    d.snr = 0.0;
    EXPECT_THROW(d.validate(), std::invalid_argument);
    d.snr = 2.0;
    d.m_min = 5;
    d.m_max = 4;
    EXPECT_THROW(d.validate(), std::invalid_argument);
    EXPECT_THROW(sim::generate(sim::SimDesign{}, sim::TrueModel(0.5)), std::invalid_argument);
}

TEST(Simulation, UncorrelatedAtZeroRho) {
    const sim::TrueModel truth(0.0);
    for (int a = 0; a <= 10; ++a)
        for (int b = 0; b <= 10; ++b)
            for (int k = 0; k < 3; ++k)
                for (int kp = 0; kp < 3; ++kp)
                    if (k != kp) EXPECT_EQ(truth.covariance(k, kp, a / 10.0, b / 10.0), 0.0);
}

TEST(Simulation, CrossCorrelationBoundedByRho) {
    const sim::TrueModel truth(0.5);
    double worst = 0.0;
    for (int a = 0; a < 50; ++a)
        for (int b = 0; b < 50; ++b) {
            const double s = a / 49.0, t = b / 49.0;
            for (int k = 0; k < 3; ++k)
                for (int kp = k + 1; kp < 3; ++kp) {
                    const double denom = truth.covariance(k, k, s, s) * truth.covariance(kp, kp, t, t);
                    if (denom > 0.0) worst = std::max(worst, std::abs(truth.covariance(k, kp, s, t)) / std::sqrt(denom));
                }
        }
    EXPECT_LE(worst, 0.5 + 1e-8);
}

TEST(Simulation, DiscretizedCovarianceIsPositiveSemidefinite) {
    const auto grid = sim::metric_grid(30);
    for (double rho : {0.0, 0.5, 0.9, 1.0}) {
        const Eigen::MatrixXd k = sim::discretized_covariance(sim::TrueModel(rho), grid);
        ASSERT_EQ(k.rows(), 90);
        EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(k).eigenvalues().minCoeff(), -1e-8) << rho;
    }
}

TEST(Simulation, TrueEigenvaluesAtZeroRhoAreTheLambdaDiagonals) {
    const sim::TrueEigensystem te = sim::true_eigensystem(sim::TrueModel(0.0));
    ASSERT_EQ(te.values.size(), 9);
    const double expected[9] = {3.5, 3, 2.5, 2, 1.75, 1.5, 1, 0.75, 0.5};
    for (int l = 0; l < 9; ++l) EXPECT_NEAR(te.values(l), expected[l], 1e-3);
}

TEST(Simulation, TopTwoShare) {
    for (auto [rho, share] : {std::pair{0.9, 0.80}, std::pair{0.5, 0.60}}) {
        const sim::TrueModel truth(rho);
        const sim::TrueEigensystem te = sim::true_eigensystem(truth);
        ASSERT_EQ(te.values.size(), 9);
        EXPECT_NEAR(te.values.sum(), truth.total_variance(), 1e-3);
        EXPECT_NEAR((te.values(0) + te.values(1)) / te.values.sum(), share, 0.05) << rho;
    }
    EXPECT_NEAR(sim::TrueModel(0.9).noise_variance(2.0), 16.5 / 6.0, 1e-12);
}

TEST(Simulation, TrueEigenfunctionsAreOrthonormal) {
    const sim::TrueModel truth(0.9);
    const sim::TrueEigensystem te = sim::true_eigensystem(truth);
    const auto grid = sim::metric_grid(1001);
    const auto w = sim::trapezoid_weights(grid);
    for (int l = 0; l < 3; ++l)
        for (int lp = 0; lp < 3; ++lp) {
            const Eigen::MatrixXd a = te.on_grid(truth, l, grid), b = te.on_grid(truth, lp, grid);
            double ip = 0.0;
            for (int k = 0; k < 3; ++k)
                for (std::size_t g = 0; g < grid.size(); ++g) ip += w[g] * a(k, g) * b(k, g);
            EXPECT_NEAR(ip, l == lp ? 1.0 : 0.0, 1e-5);
        }
    // The Nystrom extension reproduces the discrete eigenvectors on their own grid.
    const int g = static_cast<int>(te.grid.size());
    for (int idx : {0, 137, 250, 500})
        for (int k = 0; k < 3; ++k)
            EXPECT_NEAR(te.eval(truth, 0, k, te.grid[idx]), te.functions(k * g + idx, 0), 1e-6);
}

TEST(Metrics, EdgeCases) {
    const sim::TrueModel truth(0.9);
    const sim::TrueEigensystem te = sim::true_eigensystem(truth);
    const auto grid = sim::metric_grid();
    const auto w = sim::trapezoid_weights(grid);
    const Eigen::MatrixXd psi0 = te.on_grid(truth, 0, grid), psi1 = te.on_grid(truth, 1, grid);
    EXPECT_EQ(sim::ise(psi0, psi0, w), 0.0);
    EXPECT_EQ(sim::ise(psi0, -psi0, w), 0.0);
    EXPECT_NEAR(sim::ise(psi0, psi1, w), 2.0, 1e-3);

    std::vector<Eigen::MatrixXd> curves{psi0, psi1};
    EXPECT_EQ(sim::mise(curves, curves, w), 0.0);
    std::vector<Eigen::MatrixXd> shifted{psi0.array() + 1.0, psi1.array() + 1.0};
    EXPECT_NEAR(sim::mise(curves, shifted, w), 1.0, 1e-12);

    // A zero estimate has RISE exactly 1.
    auto ws = std::make_shared<const SplineWorkspace>(Interval{0.0, 1.0}, 9, 4);
    EXPECT_NEAR(sim::rise(CovarianceModel(ws, 3), truth, grid), 1.0, 1e-12);

    SparseFunctionalDataset obs({"a", "b"});
    obs.add("s1", 0, 0.1, 1.0);
    obs.add("s1", 0, 0.2, 3.0);
    obs.add("s2", 0, 0.3, 2.0);
    obs.add("s2", 1, 0.4, 5.0);
    std::vector<SubjectRecord> pred = obs.subjects();
    pred[0].values[0] = {0.0, 0.0};
    pred[1].values[0] = {2.0};
    pred[1].values[1] = {3.0};
    const auto a = sim::ape(obs, pred);
    EXPECT_NEAR(a[0], 0.5 * (0.5 * (1.0 + 9.0) + 0.0), 1e-14);
    EXPECT_NEAR(a[1], 4.0, 1e-14);
}

TEST(Simulation, EmpiricalCovarianceConvergesToTruth) {
    const sim::TrueModel truth(0.9);
    sim::SimDesign design;
    design.n = 10;
    design.n_test = 12000;
    const std::vector<double> pts{0.3, 0.7};
    const auto data = sim::generate(design, truth, 0, pts);
    const int n = static_cast<int>(data.test_curves.size());
    ASSERT_GT(n, 11000);
    for (auto [k, a, kp, b] : {std::tuple{0, 0, 1, 1}, std::tuple{0, 0, 0, 1}, std::tuple{2, 1, 1, 0}}) {
        std::vector<double> prod(n);
        for (int i = 0; i < n; ++i)
            prod[i] = (data.test_curves[i](k, a) - truth.mean(k, pts[a])) *
                      (data.test_curves[i](kp, b) - truth.mean(kp, pts[b]));
        double m = 0.0, v = 0.0;
        for (double x : prod) m += x;
        m /= n;
        for (double x : prod) v += (x - m) * (x - m);
        const double se = std::sqrt(v / (n - 1) / n);
        EXPECT_LT(std::abs(m - truth.covariance(k, kp, pts[a], pts[b])), 4.5 * se);
    }
}

TEST(Simulation, ScoreCovarianceConvergesToSpectrum) {
    const sim::TrueModel truth(0.5);
    sim::SimDesign design;
    design.rho = 0.5;
    design.n = 8000;
    design.n_test = 0;
    design.m_min = 1;
    design.m_max = 1;
    const auto data = sim::generate(design, truth, 0);
    const Eigen::MatrixXd& xi = data.train_scores;
    const int n = static_cast<int>(xi.rows());
    const Eigen::MatrixXd cov = xi.transpose() * xi / n;
    const Eigen::VectorXd& d = truth.kl_values();
    for (int l = 0; l < 9; ++l)
        for (int lp = 0; lp < 9; ++lp) {
            const double se = l == lp ? d(l) * std::sqrt(2.0 / n) : std::sqrt(d(l) * d(lp) / n);
            EXPECT_LT(std::abs(cov(l, lp) - (l == lp ? d(l) : 0.0)), 4.5 * se) << l << "," << lp;
        }
}
