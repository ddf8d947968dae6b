#include "qrlab/density_lab.hpp"

#include <boost/math/distributions/binomial.hpp>
#include <gtest/gtest.h>

using namespace qrlab;

namespace {

DGPSpec intercept_dgp(ErrorDist e, double b0 = 0.0, double g = 1.0) {
    Vector b(1), gm(1);
    b << b0;
    gm << g;
    return DGPSpec::location_scale(b, gm, e);
}

Dataset ones(long n) { return Dataset::make(Matrix::Ones(n, 1), Vector::Zero(n), true); }

// Density of sqrt(n)(Y_(k) - beta(tau)) at delta, k = floor(n tau) + 1,
// from the classical order-statistic density.
double order_statistic_density(const DGPSpec& dgp, long n, double tau, double delta) {
    const long k = static_cast<long>(std::floor(n * tau)) + 1;
    const double y = true_beta(dgp, tau)(0) + delta / std::sqrt(static_cast<double>(n));
    const double e = (y - dgp.b0(0)) / dgp.gamma(0);
    const double F = dgp.error.cdf(e), f = dgp.error.pdf(e) / dgp.gamma(0);
    const double logc = std::lgamma(n + 1.0) - std::lgamma(static_cast<double>(k)) - std::lgamma(static_cast<double>(n - k) + 1.0);
    if (f == 0.0) return 0.0;
    return std::exp(logc + (k - 1) * std::log(F) + (n - k) * std::log1p(-F)) * f / std::sqrt(static_cast<double>(n));
}

}  // namespace

TEST(FiniteSampleDensity, MedianOfThreeUniformAtZero) {
    const auto dgp = intercept_dgp(ErrorDist::uniform());
    const ErrorModel err(ones(3), dgp);
    const double v = finite_sample_density(ones(3), err, 0.5, Vector::Zero(1)).value;
    EXPECT_NEAR(v, 6.0 * 0.25 / std::sqrt(3.0), 1e-14);
    EXPECT_NEAR(v, 0.8660, 5e-5);
}

TEST(FiniteSampleDensity, MatchesOrderStatisticOracle) {
    for (auto e : {ErrorDist::uniform(), ErrorDist::exponential(), ErrorDist::normal()}) {
        const auto dgp = intercept_dgp(e, 0.4, 1.7);
        for (long n : {3L, 5L, 7L, 9L, 11L}) {
            const ErrorModel err(ones(n), dgp);
            for (double tau : {0.3, 0.5}) {
                for (int k = -3; k <= 3; ++k) {
                    const double delta = 0.3 * k;
                    const double want = order_statistic_density(dgp, n, tau, delta);
                    const double got = finite_sample_density(ones(n), err, tau, Vector::Constant(1, delta)).value;
                    if (want == 0.0) EXPECT_EQ(got, 0.0);
                    else EXPECT_LE(std::abs(got / want - 1.0), 1e-10) << e.name() << " n=" << n << " tau=" << tau;
                }
            }
        }
    }
}

TEST(FiniteSampleDensity, IntegratesToOneRegression) {
    // p = 2, n = 8, normal errors: trapezoid rule on a wide grid.
    Vector b0(2), g(2);
    b0 << 1.0, -0.5;
    g << 1.0, 0.5;
    const auto dgp = DGPSpec::location_scale(b0, g, ErrorDist::normal());
    const Matrix X = simulate_design(2, 8, 3);
    const Dataset d = Dataset::make(X, Vector::Zero(8), true);
    const ErrorModel err(d, dgp);
    const Matrix Sig = sigma(CovarianceModel::oracle(d, dgp), 0.4);
    const Matrix L = Sig.llt().matrixL();
    // integrate in standardized coordinates delta = L z
    const int m = 81;
    const double R = 8.0, step = 2.0 * R / (m - 1);
    double total = 0.0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            Vector z(2);
            z << -R + i * step, -R + j * step;
            total += finite_sample_density(d, err, 0.4, L * z).value;
        }
    total *= step * step * L.determinant();
    EXPECT_NEAR(total, 1.0, 1e-3);
}

TEST(FiniteSampleDensity, BudgetExceeded) {
    const auto dgp = intercept_dgp(ErrorDist::normal());
    DensityOptions o;
    o.max_free_rows = 10;
    EXPECT_THROW(finite_sample_density(ones(15), ErrorModel(ones(15), dgp), 0.5, Vector::Zero(1), o), ComputationError);
}

TEST(FiniteSampleDensity, ThreadCountDoesNotChangeValue) {
    Vector b0(2), g(2);
    b0 << 0.0, 1.0;
    g << 1.0, 0.0;
    const auto dgp = DGPSpec::location_scale(b0, g, ErrorDist::exponential());
    const Dataset d = Dataset::make(simulate_design(2, 10, 5), Vector::Zero(10), true);
    DensityOptions o1, o4;
    o4.threads = 4;
    Vector delta(2);
    delta << 0.3, -0.2;
    const ErrorModel err(d, dgp);
    EXPECT_EQ(finite_sample_density(d, err, 0.3, delta, o1).value, finite_sample_density(d, err, 0.3, delta, o4).value);
}

TEST(NormalDensity, KnownValues) {
    Matrix S(1, 1);
    S << M_PI / 2.0;
    EXPECT_NEAR(normal_density_approx(S, Vector::Zero(1)), 1.0 / M_PI, 1e-15);
    EXPECT_NEAR(normal_density_approx(S, Vector::Zero(1)), 0.3183, 5e-5);
    Matrix S2(2, 2);
    S2 << 2.0, 0.3, 0.3, 0.5;
    Vector d(2);
    d << 0.7, -0.4;
    EXPECT_DOUBLE_EQ(normal_density_approx(S2, d), normal_density_approx(S2, -d));
    const double diff = std::log(normal_density_approx(S2, d)) - std::log(normal_density_approx(S2, Vector::Zero(2)));
    EXPECT_NEAR(diff, -0.5 * d.dot(S2.inverse() * d), 1e-13);
}

TEST(NormalDensity, IntercepOnlyNormalSigma) {
    const auto dgp = intercept_dgp(ErrorDist::normal());
    const auto model = CovarianceModel::oracle(ones(10), dgp);
    EXPECT_NEAR(normal_density_approx(model, 0.5, Vector::Zero(1)), 1.0 / M_PI, 1e-12);
}

TEST(DensityProfile, ZeroWidthWindowIsSinglePoint) {
    DeltaGridSpec s;
    s.width = 0.0;
    const auto prof = density_ratio_profile(intercept_dgp(ErrorDist::uniform()), {7}, 0.5, s);
    ASSERT_EQ(prof.size(), 1u);
    EXPECT_EQ(prof[0].deltas.size(), 1u);
    EXPECT_EQ(prof[0].ratio_minus_1.size(), 1u);
}

TEST(DensityProfile, UniformMedianDecreases) {
    const auto prof = density_ratio_profile(intercept_dgp(ErrorDist::uniform()), {5, 9, 13, 17, 21}, 0.5, DeltaGridSpec{});
    for (std::size_t i = 1; i < prof.size(); ++i)
        EXPECT_LT(prof[i].sup_abs_ratio_error(), prof[i - 1].sup_abs_ratio_error());
    for (const auto& p : prof)
        for (double f : p.f_exact) EXPECT_GE(f, 0.0);
}

TEST(DensityProfile, CsvColumns) {
    DeltaGridSpec s;
    s.points = 3;
    const auto prof = density_ratio_profile(intercept_dgp(ErrorDist::uniform()), {5}, 0.5, s);
    std::ostringstream os;
    write_profiles_csv(os, prof);
    const std::string text = os.str();
    EXPECT_EQ(text.substr(0, text.find('\n')), "n,tau,delta0,f_exact,f_normal,ratio_minus_1");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
}

TEST(Lattice, ExactBinomialInterval) {
    const auto r = binomial_interval_ratio(100, 0.5, 45, 55, 0);
    boost::math::binomial_distribution<double> B(100, 0.5);
    const double oracle = boost::math::cdf(B, 55.0) - boost::math::cdf(B, 44.0);
    EXPECT_NEAR(r.exact, oracle, 1e-13);
    EXPECT_NEAR(r.exact, 0.728747, 5e-7);
    EXPECT_NEAR(r.rel_err, r.exact / r.normal - 1.0, 1e-15);
    EXPECT_FALSE(r.degenerate);
}

TEST(Lattice, ForwardBackwardAgree) {
    for (long n : {64L, 1000L, 16384L}) {
        for (double p : {0.3, 0.5}) {
            const long w = static_cast<long>(std::floor(std::sqrt(n * std::log(n)) / 2.0));
            const long lo = static_cast<long>(n * p) - 5, hi = lo + 10;
            const auto f = binomial_interval_ratio(n, p, lo, hi, w, SummationOrder::forward);
            const auto b = binomial_interval_ratio(n, p, lo, hi, w, SummationOrder::backward);
            EXPECT_LE(std::abs(f.exact / b.exact - 1.0), 1e-12);
        }
    }
}

TEST(Lattice, OutsideSupportIsDegenerate) {
    const auto r = binomial_interval_ratio(20, 0.5, 0, 3, 50);
    EXPECT_TRUE(r.degenerate);
    EXPECT_EQ(r.exact, 0.0);
}

TEST(Lattice, EmptyIntervalRejected) { EXPECT_THROW(binomial_interval_ratio(20, 0.5, 5, 3, 0), InvalidArgument); }
