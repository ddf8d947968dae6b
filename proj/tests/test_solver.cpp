#include "qrlab/solver.hpp"

#include <gtest/gtest.h>

using namespace qrlab;

namespace {

Dataset intercept_only(std::vector<double> y) {
    Vector Y = Eigen::Map<Vector>(y.data(), static_cast<Index>(y.size()));
    return Dataset::make(Matrix::Ones(Y.size(), 1), Y, true);
}

Dataset random_instance(Index n, Index p, std::uint64_t seed) {
    Stream s(seed);
    Matrix X(n, p);
    Vector Y(n);
    for (Index i = 0; i < n; ++i) {
        X(i, 0) = 1.0;
        for (Index j = 1; j < p; ++j) X(i, j) = 4.0 * s.uniform() - 2.0;
        Y(i) = X.row(i).sum() + norm_quantile(s.uniform());
    }
    return Dataset::make(X, Y, true);
}

double relative_gap(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST(FitRq, MedianOfThree) {
    const auto d = intercept_only({1, 2, 5});
    const auto f = fit_rq(d, 0.5);
    EXPECT_DOUBLE_EQ(f.beta_hat(0), 2.0);
    EXPECT_EQ(f.basis, std::vector<Index>{1});
}

TEST(FitRq, LowerQuartileOfThreeMatchesEnumeration) {
    const auto d = intercept_only({1, 2, 5});
    const auto f = fit_rq(d, 0.25);
    // objectives of the three candidate bases
    const double o1 = check_loss(1, .25) + check_loss(4, .25);
    const double o2 = check_loss(-1, .25) + check_loss(3, .25);
    const double o5 = check_loss(-4, .25) + check_loss(-3, .25);
    ASSERT_LT(o1, o2);
    ASSERT_LT(o1, o5);
    EXPECT_DOUBLE_EQ(f.beta_hat(0), 1.0);
    EXPECT_EQ(f.basis, std::vector<Index>{0});
    EXPECT_NEAR(f.objective, o1, 1e-12);
}

TEST(FitRq, MatchesBruteForceOnRandomInstances) {
    for (std::uint64_t k = 0; k < 60; ++k) {
        const Index n = 8 + static_cast<Index>(k % 23);
        const Index p = 1 + static_cast<Index>(k % 3);
        const double tau = 0.1 + 0.1 * static_cast<double>(k % 9);
        const auto d = random_instance(n, p, 1000 + k);
        const auto f = fit_rq(d, tau);
        const auto b = brute_force_rq(d, tau);
        EXPECT_LE(relative_gap(f.objective, b.objective), 1e-9) << "instance " << k;
        EXPECT_TRUE(check_gradient_condition(d, f).ok) << "instance " << k;
        long zeros = 0;
        for (Index i = 0; i < n; ++i) zeros += std::abs(f.residuals(i)) <= residual_tolerance(d.Y()) ? 1 : 0;
        EXPECT_EQ(zeros, p);
    }
}

TEST(FitRq, N30P3MatchesAllBasicSolutions) {
    const auto d = random_instance(30, 3, 77);
    for (double tau : {0.2, 0.5, 0.8}) {
        const auto f = fit_rq(d, tau);
        EXPECT_LE(relative_gap(f.objective, brute_force_rq(d, tau).objective), 1e-9);
    }
}

TEST(FitRq, N12P2BetaMatches) {
    const auto d = random_instance(12, 2, 5);
    const auto f = fit_rq(d, 0.3);
    const auto b = brute_force_rq(d, 0.3);
    EXPECT_LE((f.beta_hat - b.beta_hat).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_EQ(f.basis, b.basis);
}

TEST(FitRq, BruteForceMedianIndex) {
    const auto d = intercept_only({3.0, -1.0, 7.0, 0.5, 2.0});
    const auto b = brute_force_rq(d, 0.5);
    EXPECT_EQ(b.basis, std::vector<Index>{4});
}

TEST(FitRq, ObjectiveNeverIncreasesAcrossPivots) {
    for (std::uint64_t k = 0; k < 20; ++k) {
        const auto d = random_instance(40, 3, 300 + k);
        std::vector<double> trace;
        SolverOptions o;
        o.objective_trace = &trace;
        (void)fit_rq(d, 0.35, o);
        ASSERT_FALSE(trace.empty());
        for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_LE(trace[i], trace[i - 1] + 1e-12);
    }
}

TEST(FitRq, TranslationEquivariance) {
    const auto d = random_instance(50, 3, 9);
    Vector c(3);
    c << 0.7, -1.3, 2.1;
    const auto shifted = d.with_responses(d.Y() + d.X() * c);
    for (double tau : {0.25, 0.5, 0.9}) {
        const auto f0 = fit_rq(d, tau), f1 = fit_rq(shifted, tau);
        EXPECT_LE((f1.beta_hat - f0.beta_hat - c).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(FitRq, WarmStartChangesOnlyPivots) {
    const auto d = random_instance(60, 2, 11);
    const auto a = fit_rq(d, 0.4);
    const auto b = fit_rq(d, 0.45, a.basis);
    const auto c = fit_rq(d, 0.45);
    EXPECT_NEAR(b.objective, c.objective, 1e-10);
}

TEST(FitRq, RejectsTauOutsideUnitInterval) {
    const auto d = intercept_only({1, 2, 5});
    EXPECT_THROW(fit_rq(d, 0.0), InvalidArgument);
    EXPECT_THROW(fit_rq(d, 1.2), InvalidArgument);
}

TEST(FitRq, DegenerateTiesStillOptimal) {
    // Repeated responses create extra zero residuals.
    const auto d = intercept_only({1, 1, 1, 2, 2, 3});
    for (double tau : {0.2, 0.5, 0.7}) {
        const auto f = fit_rq(d, tau);
        EXPECT_LE(relative_gap(f.objective, brute_force_rq(d, tau).objective), 1e-12);
    }
}

TEST(BruteForce, BudgetExceeded) {
    const auto d = random_instance(200, 3, 1);
    EXPECT_THROW(brute_force_rq(d, 0.5, 1000), Error);
}

TEST(GradientCondition, PerturbedFitFails) {
    const auto d = random_instance(40, 2, 21);
    auto f = fit_rq(d, 0.5);
    ASSERT_TRUE(check_gradient_condition(d, f).ok);
    f.beta_hat(0) += 0.5;
    f.residuals = d.Y() - d.X() * f.beta_hat;
    const auto g = check_gradient_condition(d, f);
    EXPECT_FALSE(g.ok);
    EXPECT_LT(g.margin.minCoeff(), 0.0);
}

TEST(GradientCondition, ExactFitEmptySum) {
    Matrix X(2, 2);
    X << 1, 0.2, 1, 0.9;
    Vector Y(2);
    Y << 1.0, 3.0;
    // n = p is not a valid Dataset (n > p), so the basis is checked directly.
    QuantileFit f;
    f.tau = 0.3;
    f.basis = {0, 1};
    f.beta_hat = X.fullPivLu().solve(Y);
    f.residuals = Vector::Zero(2);
    const auto g = detail::gradient_condition(X, Y, f);
    EXPECT_TRUE(g.ok);
    EXPECT_DOUBLE_EQ(g.S.cwiseAbs().maxCoeff(), 0.0);
}

// Pins the orientation of the membership test: solving X_h' u = S_n holds at
// every optimum, while the transposed candidate X_h u = S_n fails on some.
TEST(GradientCondition, OrientationPinnedByOptimality) {
    int transposed_failures = 0;
    for (std::uint64_t k = 0; k < 40; ++k) {
        const auto d = random_instance(25, 3, 500 + k);
        const double tau = 0.2 + 0.015 * static_cast<double>(k);
        const auto f = fit_rq(d, tau);
        const auto g = check_gradient_condition(d, f);
        EXPECT_TRUE(g.ok);
        const Matrix Xh = rows_of(d.X(), f.basis);
        const Vector u = Xh.fullPivLu().solve(g.S);
        bool inside = true;
        for (Index j = 0; j < u.size(); ++j) inside = inside && u(j) >= tau - 1.0 - 1e-9 && u(j) <= tau + 1e-9;
        transposed_failures += inside ? 0 : 1;
    }
    EXPECT_GT(transposed_failures, 0);
}

TEST(Process, SingletonMatchesFit) {
    const auto d = random_instance(30, 2, 3);
    const auto proc = fit_process(d, {0.4});
    const auto f = fit_rq(d, 0.4);
    EXPECT_EQ(proc.fits[0].beta_hat, f.beta_hat);
    EXPECT_EQ(proc.fits[0].basis, f.basis);
}

TEST(Process, WarmStartSameBetaFewerPivots) {
    const auto d = random_instance(200, 3, 4);
    std::vector<double> grid;
    for (int k = 1; k <= 9; ++k) grid.push_back(0.1 * k);
    const auto warm = fit_process(d, grid, nullptr, true);
    const auto cold = fit_process(d, grid, nullptr, false);
    long pw = 0, pc = 0;
    for (std::size_t j = 0; j < grid.size(); ++j) {
        EXPECT_LE((warm.fits[j].beta_hat - cold.fits[j].beta_hat).cwiseAbs().maxCoeff(), 1e-9);
        pw += warm.fits[j].pivot_count;
        pc += cold.fits[j].pivot_count;
    }
    EXPECT_LT(pw, pc);
}

TEST(Process, CenteredValues) {
    const auto d = random_instance(30, 2, 3);
    Vector ref(2);
    ref << 1.0, 1.0;
    const auto proc = fit_process(d, {0.3, 0.6}, [&](double) { return ref; });
    EXPECT_TRUE(proc.centered);
    const Vector expect = std::sqrt(30.0) * (proc.fits[1].beta_hat - ref);
    EXPECT_LE((proc.b_values.row(1).transpose() - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Process, RejectsUnsortedGrid) { EXPECT_THROW(fit_process(random_instance(20, 1, 1), {0.5, 0.3}), InvalidArgument); }

TEST(Interpolate, EndpointsAndMidpoint) {
    const auto d = random_instance(50, 2, 8);
    const auto proc = fit_process(d, {0.2, 0.4, 0.6});
    EXPECT_EQ(interpolate_beta(proc, 0.4), proc.fits[1].beta_hat);
    const Vector mid = 0.5 * (proc.fits[1].beta_hat + proc.fits[2].beta_hat);
    EXPECT_LE((interpolate_beta(proc, 0.5) - mid).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_THROW(interpolate_beta(proc, 0.7), InvalidArgument);
}

TEST(Interpolate, MeshRefinementShrinksDistance) {
    const auto d = random_instance(400, 2, 12);
    std::vector<double> fine;
    for (int k = 4; k <= 60; ++k) fine.push_back(k / 64.0);
    const auto pf = fit_process(d, fine);
    double prev = 1e300;
    for (int step : {16, 8, 4}) {
        std::vector<double> coarse;
        for (int k = 16; k <= 48; k += step) coarse.push_back(k / 64.0);
        const auto pc = fit_process(d, coarse);
        double sup = 0.0;
        for (int k = 16; k <= 48; ++k)
            sup = std::max(sup, (interpolate_beta(pc, k / 64.0) - interpolate_beta(pf, k / 64.0)).cwiseAbs().maxCoeff());
        EXPECT_LT(sup, prev);
        prev = sup;
    }
}
