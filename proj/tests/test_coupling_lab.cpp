#include "qrlab/coupling_lab.hpp"

#include <gtest/gtest.h>

using namespace qrlab;

namespace {

DGPSpec intercept_uniform() {
    return DGPSpec::location_scale(Vector::Zero(1), Vector::Ones(1), ErrorDist::uniform());
}

GridCovariance intercept_gcov(const std::vector<double>& grid) {
    return grid_covariance(CovarianceModel::oracle(Dataset::make(Matrix::Ones(5, 1), Vector::Zero(5), true),
                                                   intercept_uniform()),
                           grid);
}

GridCovariance scaled(GridCovariance g, double k) {
    g.cov *= k;
    return g;
}

}  // namespace

TEST(DyadicGrid, Examples) {
    EXPECT_EQ(dyadic_grid(0.1, 2, 1000, 0.9).points, (std::vector<double>{0.25, 0.5, 0.75}));
    EXPECT_EQ(dyadic_grid(0.3, 1, 1000, 0.9).points, (std::vector<double>{0.5}));
    EXPECT_EQ(dyadic_grid(0.1, 3, 2000, 0.9).points.size(), 7u);
    EXPECT_THROW(dyadic_grid(0.1, 8, 100, 0.9), InvalidArgument);
    EXPECT_THROW(dyadic_grid(0.5, 2, 1000, 0.9), InvalidArgument);
}

TEST(DyadicGrid, ProcessingOrder) {
    const auto g = dyadic_grid(0.1, 3, 2000, 0.9).points;  // 1/8 .. 7/8
    const auto order = dyadic_order(g);
    EXPECT_EQ(order, (std::vector<Index>{3, 1, 5, 0, 2, 4, 6}));
}

TEST(ProcessDraws, SingleReplicationReproducible) {
    const auto grid = dyadic_grid(0.2, 2, 200, 0.9);
    const auto a = empirical_process_draws(intercept_uniform(), 200, grid, 1, 42);
    const auto b = empirical_process_draws(intercept_uniform(), 200, grid, 1, 42);
    ASSERT_EQ(a.M(), 1);
    EXPECT_EQ(a.draws, b.draws);
}

TEST(ProcessDraws, ThreadCountInvariant) {
    const auto grid = dyadic_grid(0.2, 2, 300, 0.9);
    const auto a = empirical_process_draws(intercept_uniform(), 300, grid, 40, 5, 1);
    const auto b = empirical_process_draws(intercept_uniform(), 300, grid, 40, 5, 3);
    EXPECT_EQ(a.draws, b.draws);
}

TEST(ProcessDraws, MedianMeanNearZero) {
    const auto grid = dyadic_grid(0.3, 1, 401, 0.9);
    const auto d = empirical_process_draws(intercept_uniform(), 401, grid, 2000, 9);
    const double mean = d.draws.col(0).mean();
    const double sd = std::sqrt((d.draws.col(0).array() - mean).square().sum() / (d.M() - 1));
    EXPECT_LE(std::abs(mean), 3.0 * sd / std::sqrt(static_cast<double>(d.M())));
}

TEST(Companion, SampleCovarianceMatches) {
    const auto g = intercept_gcov({0.25, 0.5, 0.75});
    const long M = 100000;
    const Matrix Z = gaussian_companion_draws(g, M, 3);
    const Matrix C = (Z.transpose() * Z) / static_cast<double>(M);
    for (Index i = 0; i < 3; ++i)
        for (Index j = 0; j < 3; ++j) {
            const double se = std::sqrt((g.cov(i, i) * g.cov(j, j) + g.cov(i, j) * g.cov(i, j)) / M);
            EXPECT_LE(std::abs(C(i, j) - g.cov(i, j)), 3.0 * se) << i << "," << j;
        }
}

TEST(Companion, DiagonalIndependentAndDeterministic) {
    GridCovariance g;
    g.grid = {0.3, 0.7};
    g.p = 1;
    g.cov = Matrix::Identity(2, 2);
    g.cov(1, 1) = 4.0;
    const Matrix Z = gaussian_companion_draws(g, 20000, 8);
    const double r = (Z.col(0).array() * Z.col(1).array()).mean() / 2.0;
    EXPECT_LE(std::abs(r), 4.0 / std::sqrt(20000.0));
    EXPECT_EQ(Z, gaussian_companion_draws(g, 20000, 8));
}

TEST(MarginalKs, NullConsistent) {
    const auto g = intercept_gcov({0.25, 0.5, 0.75});
    const long M = 4000;
    const auto ks = marginal_ks(gaussian_companion_draws(g, M, 12), g);
    for (double d : ks) {
        EXPECT_GE(d, 0.0);
        EXPECT_LE(d, 1.0);
    }
    const double m = median(ks) * std::sqrt(static_cast<double>(M));
    // central range of the Kolmogorov distribution (its 1% and 99% points)
    EXPECT_GT(m, 0.44);
    EXPECT_LT(m, 1.63);
}

TEST(MarginalKs, ConstantColumnRejected) {
    const auto g = intercept_gcov({0.5});
    EXPECT_THROW(marginal_ks(Matrix::Constant(300, 1, 0.2), g), ComputationError);
    EXPECT_THROW(marginal_ks(Matrix::Constant(100, 1, 0.2), g), InvalidArgument);
}

TEST(Coupling, SinglePointIsMarginalQuantileTransform) {
    const auto g = intercept_gcov({0.5});
    const Matrix B = gaussian_companion_draws(scaled(g, 1.3), 2500, 4);
    CouplingOptions o;
    o.energy_sample = 0;
    const auto rep = dyadic_quantile_coupling(B, g, o);
    // oracle: Z_r = sigma Phi^-1((rank_r - 1/2) / M)
    std::vector<std::pair<double, Index>> sorted;
    for (Index r = 0; r < B.rows(); ++r) sorted.push_back({B(r, 0), r});
    std::sort(sorted.begin(), sorted.end());
    const double sd = std::sqrt(g.cov(0, 0));
    for (std::size_t k = 0; k < sorted.size(); ++k) {
        const Index r = sorted[k].second;
        const double z = sd * norm_quantile((k + 0.5) / B.rows());
        EXPECT_NEAR(rep.companion(r, 0), z, 1e-12);
        EXPECT_NEAR(rep.sup_errors[static_cast<std::size_t>(r)], std::abs(B(r, 0) - z), 1e-12);
    }
}

TEST(Coupling, SelfTestBeatsMiscovariancedCompanion) {
    const auto g = intercept_gcov(dyadic_grid(0.2, 2, 1000, 0.9).points);
    const Matrix B = gaussian_companion_draws(g, 3000, 21);
    CouplingOptions o;
    o.k_neighbors = 100;
    o.energy_sample = 300;
    const auto good = dyadic_quantile_coupling(B, g, o);
    const auto bad = dyadic_quantile_coupling(B, scaled(g, 1.5), o);
    EXPECT_LT(good.mean_sup_error(), bad.mean_sup_error());
    for (double e : good.sup_errors) EXPECT_GE(e, 0.0);
    // the constructed companion keeps the Gaussian marginals
    const auto ks = marginal_ks(good.companion, g);
    for (double d : ks) EXPECT_LT(d * std::sqrt(3000.0), 1.63);
}

TEST(Coupling, SupErrorIsMaxOverNodes) {
    const auto g = intercept_gcov({0.25, 0.5, 0.75});
    const Matrix B = gaussian_companion_draws(g, 500, 2);
    CouplingOptions o;
    o.k_neighbors = 50;
    o.energy_sample = 0;
    const auto rep = dyadic_quantile_coupling(B, g, o);
    for (Index r = 0; r < B.rows(); ++r)
        EXPECT_EQ(rep.sup_errors[static_cast<std::size_t>(r)], (B.row(r) - rep.companion.row(r)).cwiseAbs().maxCoeff());
}

TEST(Coupling, TooManyNeighbours) {
    const auto g = intercept_gcov({0.5});
    CouplingOptions o;
    o.k_neighbors = 200;
    EXPECT_THROW(dyadic_quantile_coupling(gaussian_companion_draws(g, 100, 1), g, o), InvalidArgument);
}

TEST(Coupling, IncrementVarianceBoundedAcrossGrid) {
    // sqrt(n a_n) scaled increments: Var(B(t+a) - B(t)) / a stays O(1).
    const auto grid = dyadic_grid(0.125, 3, 2000, 0.9).points;
    const auto g = intercept_gcov(grid);
    const double a = 1.0 / 8.0;
    for (Index j = 0; j + 1 < g.m(); ++j) {
        const double v = (g.cov(j, j) + g.cov(j + 1, j + 1) - 2 * g.cov(j, j + 1)) / a;
        EXPECT_GT(v, 0.1);
        EXPECT_LT(v, 10.0);
    }
}

TEST(EnergyDistance, NearZeroForSameLawAndPositiveForShift) {
    const auto g = intercept_gcov({0.5});
    const Matrix A = gaussian_companion_draws(g, 400, 1);
    EXPECT_LT(std::abs(energy_distance(A, gaussian_companion_draws(g, 400, 2))), 0.05);
    const Matrix S = A.array() + 1.0;
    EXPECT_GT(energy_distance(A, S), 0.5);
}

TEST(RateFit, ExactPowerLaw) {
    std::vector<double> n{100, 200, 400, 800}, e;
    for (double v : n) e.push_back(3.0 / std::sqrt(v));
    const auto f = fit_rate(n, e);
    EXPECT_NEAR(f.exponent, -0.5, 1e-12);
    EXPECT_NEAR(f.r_squared, 1.0, 1e-12);
}

TEST(RateFit, NoisyTwoThirds) {
    std::vector<double> n{100, 200, 400, 800, 1600, 3200}, e;
    Stream s(3);
    for (double v : n) e.push_back(2.0 * std::pow(v, -2.0 / 3.0) * (1.0 + 1e-3 * (s.uniform() - 0.5)));
    const auto f = fit_rate(n, e);
    EXPECT_LE(std::abs(f.exponent + 2.0 / 3.0), std::max(f.stderr_, 1e-4));
}

TEST(RateFit, Refusals) {
    EXPECT_THROW(fit_rate({1, 2}, {1, 2}), InvalidArgument);
    EXPECT_THROW(fit_rate({1, 2, 3}, {1, 0, 2}), InvalidArgument);
}
