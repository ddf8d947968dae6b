#pragma once

// Difference-quotient sparsity estimation, the Hall-Sheather type
// bandwidth, sandwich standard errors and confidence intervals for a'beta(tau).

#include "qrlab/common.hpp"
#include "qrlab/distributions.hpp"
#include "qrlab/solver.hpp"

#include <optional>

namespace qrlab {

/// Upper-alpha standard normal quantile; intervals +/- z_alpha have nominal
/// coverage 1 - 2 alpha.
inline double z_alpha(double alpha) {
    require(alpha > 0.0 && alpha < 0.5, "z_alpha", "alpha must lie in (0, 0.5), got " + std::to_string(alpha));
    return norm_quantile(1.0 - alpha);
}

/// One-sample Hall-Sheather constant
/// (1.5 z^2 phi(q)^4 / (2 q^2 + 1)^2)^(1/3), q = Phi^-1(tau).
inline double default_hs_constant(double tau, double alpha) {
    const double z = z_alpha(alpha);
    const double q = norm_quantile(tau);
    const double f = norm_pdf(q);
    return std::cbrt(1.5 * z * z * std::pow(f, 4) / std::pow(2.0 * q * q + 1.0, 2));
}

/// h = c sqrt(log n) n^(-1/3), truncated so that tau +/- order*h stays in
/// [0.01, 0.99].
inline double hs_bandwidth(long n, double tau, double c, int order = 1) {
    const char* stage = "hs_bandwidth";
    require(n >= 2, stage, "n must be at least 2");
    require(c > 0.0, stage, "bandwidth constant c must be positive, got " + std::to_string(c));
    require(tau > 0.0 && tau < 1.0, stage, "tau must lie in (0,1)");
    require(order == 1 || order == 2, stage, "order must be 1 or 2");
    const double nn = static_cast<double>(n);
    double h = c * std::sqrt(std::log(nn)) * std::pow(nn, -1.0 / 3.0);
    const double room = std::min(tau - 0.01, 0.99 - tau) / order;
    h = std::min(h, room);
    if (!(h >= 1e-4))
        throw InvalidArgument(stage, "bandwidth truncated below 1e-4 (tau=" + std::to_string(tau) +
                                         " too extreme for n=" + std::to_string(n) + ")");
    return h;
}

struct SparsityEstimate {
    double tau = 0.5;
    double bandwidth = 0.0;
    Vector delta_hat;
    int order = 1;
    long clamp_count = 0;
    bool approximate = false;  // from an interpolated process rather than refits
};

inline Vector diff_quotient(const BetaFunction& beta, double tau, double h) {
    return (beta(tau + h) - beta(tau - h)) / (2.0 * h);
}

inline SparsityEstimate sparsity_diffquot(const BetaFunction& beta, double tau, double h) {
    const char* stage = "sparsity_diffquot";
    require(h > 0.0 && tau - h > 0.0 && tau + h < 1.0, stage, "need tau +/- h inside (0,1)");
    SparsityEstimate s;
    s.tau = tau;
    s.bandwidth = h;
    s.order = 1;
    s.delta_hat = diff_quotient(beta, tau, h);
    return s;
}

/// [(4/3) Delta(h) - (1/6) Delta(2h)] / (2h), accurate to O(h^4).
inline SparsityEstimate sparsity_higher_order(const BetaFunction& beta, double tau, double h) {
    const char* stage = "sparsity_higher_order";
    require(h > 0.0 && tau - 2.0 * h > 0.0 && tau + 2.0 * h < 1.0, stage, "need tau +/- 2h inside (0,1)");
    const Vector d1 = beta(tau + h) - beta(tau - h);
    const Vector d2 = beta(tau + 2.0 * h) - beta(tau - 2.0 * h);
    SparsityEstimate s;
    s.tau = tau;
    s.bandwidth = h;
    s.order = 2;
    s.delta_hat = ((4.0 / 3.0) * d1 - (1.0 / 6.0) * d2) / (2.0 * h);
    return s;
}

/// Regression-quantile beta(tau) by refitting, warm-started from `warm`.
inline BetaFunction refit_beta(const Dataset& data, std::vector<Index> warm = {}) {
    return [&data, warm](double t) {
        SolverOptions o;
        if (!warm.empty()) o.warm_basis = warm;
        return fit_rq(data, t, o).beta_hat;
    };
}

inline SparsityEstimate sparsity_diffquot(const Dataset& data, double tau, double h,
                                          const std::vector<Index>& warm = {}) {
    return sparsity_diffquot(refit_beta(data, warm), tau, h);
}

inline SparsityEstimate sparsity_higher_order(const Dataset& data, double tau, double h,
                                              const std::vector<Index>& warm = {}) {
    return sparsity_higher_order(refit_beta(data, warm), tau, h);
}

/// Fast path through the interpolated process; labelled approximate.
inline SparsityEstimate sparsity_diffquot(const ProcessFit& proc, double tau, double h, int order = 1) {
    const BetaFunction f = [&proc](double t) { return interpolate_beta(proc, t); };
    SparsityEstimate s = order == 2 ? sparsity_higher_order(f, tau, h) : sparsity_diffquot(f, tau, h);
    s.approximate = true;
    return s;
}

struct SandwichResult {
    double se = 0.0;
    long clamp_count = 0;
    double floor = 0.0;
    Matrix G_plugin;  // (1/n) X' diag(1/d_i) X
};

/// Row sparsities d_i = max(x_i' delta, floor), floor = 1e-6 median |x' delta|.
inline Vector clamped_row_sparsity(const Matrix& X, const Vector& delta, long& clamp_count, double& floor) {
    const Vector xd = X * delta;
    std::vector<double> absd(static_cast<std::size_t>(xd.size()));
    for (Index i = 0; i < xd.size(); ++i) absd[static_cast<std::size_t>(i)] = std::abs(xd(i));
    floor = 1e-6 * median(absd);
    if (!(floor > 0.0)) throw ComputationError("sandwich_se", "sparsity x'delta is zero on at least half the rows");
    Vector d = xd;
    clamp_count = 0;
    for (Index i = 0; i < d.size(); ++i) {
        if (d(i) < floor) {
            d(i) = floor;
            ++clamp_count;
        }
    }
    return d;
}

/// s_a^2 = tau(1-tau) a'(X'DX)^-1 (X'X) (X'DX)^-1 a with D = diag(1/(x_i'delta)),
/// i.e. the row densities implied by the sparsity.
inline SandwichResult sandwich_se(const Dataset& data, double tau, const Vector& delta, const Vector& a) {
    const char* stage = "sandwich_se";
    require(a.size() == data.p(), stage, "contrast a must have length p");
    require(a.cwiseAbs().maxCoeff() > 0.0, stage, "contrast a must be nonzero");
    require(delta.size() == data.p(), stage, "sparsity must have length p");
    const Matrix& X = data.X();
    SandwichResult out;
    const Vector d = clamped_row_sparsity(X, delta, out.clamp_count, out.floor);
    const Vector dens = d.cwiseInverse();
    const Matrix XDX = X.transpose() * dens.asDiagonal() * X;
    Eigen::FullPivLU<Matrix> lu(XDX);
    if (!lu.isInvertible() || lu.rcond() < 1e-14)
        throw ComputationError(stage, "X'DX is singular after clamping");
    const Vector w = lu.solve(a);
    const Vector Xw = X * w;
    const double s2 = tau * (1.0 - tau) * Xw.squaredNorm();
    out.se = std::sqrt(std::max(0.0, s2));
    out.G_plugin = XDX / static_cast<double>(data.n());
    return out;
}

inline SandwichResult sandwich_se(const Dataset& data, double tau, const SparsityEstimate& s, const Vector& a) {
    return sandwich_se(data, tau, s.delta_hat, a);
}

struct CIResult {
    double tau = 0.5;
    Vector a;
    double point = 0.0;
    double se = 0.0;
    double lo = 0.0, hi = 0.0;
    double alpha = 0.05;
    double z_alpha = 0.0;
    double bandwidth_used = 0.0;
    int order = 1;
    long clamp_count = 0;
    Vector delta_hat;
    bool oracle_sparsity = false;
    double nominal_coverage() const { return 1.0 - 2.0 * alpha; }
};

struct CIOptions {
    int order = 1;
    std::optional<double> c;                 // bandwidth constant; default Hall-Sheather
    std::optional<double> fixed_bandwidth;   // overrides the bandwidth rule
    std::optional<Vector> oracle_sparsity;   // skips estimation entirely
};

/// Full pipeline: fit, bandwidth, sparsity, sandwich, interval.
inline CIResult confidence_interval(const Dataset& data, double tau, const Vector& a, double alpha,
                                    const CIOptions& opt = {}) {
    require(tau > 0.0 && tau < 1.0, "confidence_interval", "tau must lie in (0,1)");
    require(a.size() == data.p(), "confidence_interval", "contrast a must have length p");
    require(a.cwiseAbs().maxCoeff() > 0.0, "confidence_interval", "contrast a must be nonzero");
    CIResult ci;
    ci.tau = tau;
    ci.a = a;
    ci.alpha = alpha;
    ci.z_alpha = z_alpha(alpha);
    ci.order = opt.order;

    QuantileFit fit;
    try {
        fit = fit_rq(data, tau);
    } catch (const Error& e) {
        throw ComputationError("fit", e.what());
    }
    ci.point = a.dot(fit.beta_hat);

    if (opt.oracle_sparsity) {
        ci.delta_hat = *opt.oracle_sparsity;
        ci.oracle_sparsity = true;
    } else {
        double h = 0.0;
        if (opt.fixed_bandwidth) {
            h = *opt.fixed_bandwidth;
        } else {
            const double c = opt.c ? *opt.c : default_hs_constant(tau, alpha);
            h = hs_bandwidth(static_cast<long>(data.n()), tau, c, opt.order);
        }
        ci.bandwidth_used = h;
        try {
            const SparsityEstimate s = opt.order == 2 ? sparsity_higher_order(data, tau, h, fit.basis)
                                                      : sparsity_diffquot(data, tau, h, fit.basis);
            ci.delta_hat = s.delta_hat;
        } catch (const Error& e) {
            throw ComputationError("sparsity", e.what());
        }
    }
    SandwichResult sw;
    try {
        sw = sandwich_se(data, tau, ci.delta_hat, a);
    } catch (const Error& e) {
        throw ComputationError("sandwich", e.what());
    }
    ci.se = sw.se;
    ci.clamp_count = sw.clamp_count;
    ci.lo = ci.point - ci.z_alpha * ci.se;
    ci.hi = ci.point + ci.z_alpha * ci.se;
    return ci;
}

}  // namespace qrlab
