#pragma once

// Exact finite-sample density of a regression quantile for small n, its
// normal approximation, ratio profiles, and the binomial lattice lab.

#include "qrlab/asymptotics.hpp"
#include "qrlab/common.hpp"
#include "qrlab/design_data.hpp"

#include <ostream>

namespace qrlab {

/// Conditional laws of Y_i given x_i under a location-scale process:
/// F_i(y) = F_e((y - x_i'b0) / x_i'gamma).
class ErrorModel {
public:
    ErrorModel(const Dataset& data, DGPSpec dgp) : dgp_(std::move(dgp)) {
        loc_ = data.X() * dgp_.b0;
        scale_ = data.X() * dgp_.gamma;
        for (Index i = 0; i < scale_.size(); ++i)
            require(scale_(i) > 0.0, "error_model", "x'gamma <= 0 at row " + std::to_string(i + 1));
    }

    double cdf(Index i, double y) const { return dgp_.error.cdf(std::get<0>(z(i, y))); }
    double sf(Index i, double y) const { return dgp_.error.sf(std::get<0>(z(i, y))); }
    double pdf(Index i, double y) const {
        const auto [e, s] = z(i, y);
        return dgp_.error.pdf(e) / s;
    }
    Vector beta(double tau) const { return true_beta(dgp_, tau); }
    const DGPSpec& dgp() const noexcept { return dgp_; }

private:
    std::pair<double, double> z(Index i, double y) const {
        return {(y - loc_(i)) / scale_(i), scale_(i)};
    }
    DGPSpec dgp_;
    Vector loc_, scale_;
};

struct DensityValue {
    double value = 0.0;
    long boundary_ties = 0;     // visited indicator patterns on the rectangle boundary
    long subsets_used = 0;
    long subsets_singular = 0;
};

struct DensityOptions {
    int max_free_rows = 22;  // n - p budget for the 2^(n-p) enumeration
    unsigned threads = 1;
};

namespace detail {

// Depth-first enumeration of indicator patterns for the rows outside one
// basis. u = X_h^-T S_n is carried incrementally; subtrees whose reachable
// box lies entirely inside or outside the open rectangle are resolved
// without visiting their leaves.
struct PatternWalker {
    Index p = 0;
    int rows = 0;
    double tau = 0.5;
    double tol = 0.0;
    const double* z = nullptr;        // rows x p, row-major: X_h^-T x_i
    const double* F = nullptr;        // P(indicator = 1)
    const double* S = nullptr;        // P(indicator = 0)
    const double* suffix_lo = nullptr;  // (rows + 1) x p
    const double* suffix_hi = nullptr;
    long ties = 0;

    double walk(int k, std::vector<double>& u, double prob) {
        if (prob == 0.0) return 0.0;
        bool all_in = true;
        for (Index c = 0; c < p; ++c) {
            const double lo = u[static_cast<std::size_t>(c)] + suffix_lo[k * p + c];
            const double hi = u[static_cast<std::size_t>(c)] + suffix_hi[k * p + c];
            if (hi <= tau - 1.0 + tol || lo >= tau - tol) {
                if (k == rows) {
                    const double v = u[static_cast<std::size_t>(c)];
                    if (std::abs(v - (tau - 1.0)) <= tol || std::abs(v - tau) <= tol) ++ties;
                }
                return 0.0;
            }
            if (!(lo > tau - 1.0 + tol && hi < tau - tol)) all_in = false;
        }
        if (all_in) return prob;
        // k < rows here: a leaf has lo == hi and is either inside or outside.
        const double* zk = z + k * p;
        double total = walk(k + 1, u, prob * S[k]);
        for (Index c = 0; c < p; ++c) u[static_cast<std::size_t>(c)] += zk[c];
        total += walk(k + 1, u, prob * F[k]);
        for (Index c = 0; c < p; ++c) u[static_cast<std::size_t>(c)] -= zk[c];
        return total;
    }
};

}  // namespace detail

/// Exact density of sqrt(n)(beta_hat(tau) - beta(tau)) at delta:
/// n^(-p/2) sum_h |det X_h| P{S_n in A_h} prod_{i in h} f_i(x_i'b),
/// b = beta(tau) + delta / sqrt(n), with the membership event
/// X_h^-T S_n in (tau-1, tau)^p evaluated by full enumeration.
inline DensityValue finite_sample_density(const Dataset& data, const ErrorModel& err, double tau,
                                          const Vector& delta, const DensityOptions& opt = {}) {
    const char* stage = "finite_sample_density";
    require(tau > 0.0 && tau < 1.0, stage, "tau must lie in (0,1)");
    const Index n = data.n(), p = data.p();
    require(delta.size() == p, stage, "delta must have length p");
    if (n - p > opt.max_free_rows)
        throw ComputationError(stage, "n - p = " + std::to_string(n - p) + " exceeds the enumeration budget " +
                                          std::to_string(opt.max_free_rows));
    if (choose_capped(static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(p), 1000000) > 1000000)
        throw ComputationError(stage, "too many p-subsets to enumerate");
    const Matrix& X = data.X();
    const double root_n = std::sqrt(static_cast<double>(n));
    const Vector b = err.beta(tau) + delta / root_n;
    const Vector fitted = X * b;
    Vector Fv(n), Sv(n), fv(n);
    for (Index i = 0; i < n; ++i) {
        Fv(i) = err.cdf(i, fitted(i));
        Sv(i) = err.sf(i, fitted(i));
        fv(i) = err.pdf(i, fitted(i));
    }

    std::vector<std::vector<Index>> subsets;
    {
        std::vector<Index> idx(static_cast<std::size_t>(p));
        std::iota(idx.begin(), idx.end(), Index{0});
        do subsets.push_back(idx);
        while (next_combination(idx, n));
    }
    std::vector<double> contrib(subsets.size(), 0.0);
    std::vector<long> ties(subsets.size(), 0);
    std::vector<char> singular(subsets.size(), 0);

    parallel_for(subsets.size(), opt.threads, [&](std::size_t s) {
        const auto& h = subsets[s];
        if (!subset_nonsingular(X, h)) {
            singular[s] = 1;
            return;
        }
        const Matrix Xh = rows_of(X, h);
        Eigen::PartialPivLU<Matrix> lu(Xh);
        const double det = std::abs(lu.determinant());
        double fprod = 1.0;
        for (Index i : h) fprod *= fv(i);
        if (fprod == 0.0) return;

        std::vector<char> member(static_cast<std::size_t>(n), 0);
        for (Index i : h) member[static_cast<std::size_t>(i)] = 1;
        std::vector<Index> rest;
        for (Index i = 0; i < n; ++i)
            if (!member[static_cast<std::size_t>(i)]) rest.push_back(i);
        const int rows = static_cast<int>(rest.size());
        // z_i = X_h^-T x_i, i.e. solve X_h' z = x_i.
        Matrix Xr(p, rows);
        for (int k = 0; k < rows; ++k) Xr.col(k) = X.row(rest[static_cast<std::size_t>(k)]).transpose();
        const Matrix Z = Xh.transpose().partialPivLu().solve(Xr);
        // Visit large |z| rows first so the box bounds tighten early.
        std::vector<int> order(static_cast<std::size_t>(rows));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int c) { return Z.col(a).norm() > Z.col(c).norm(); });
        std::vector<double> zrow(static_cast<std::size_t>(rows * p)), F(static_cast<std::size_t>(rows)),
            S(static_cast<std::size_t>(rows));
        std::vector<double> u(static_cast<std::size_t>(p), 0.0);
        double zscale = 0.0;
        for (int k = 0; k < rows; ++k) {
            const int src = order[static_cast<std::size_t>(k)];
            const Index row = rest[static_cast<std::size_t>(src)];
            for (Index c = 0; c < p; ++c) {
                zrow[static_cast<std::size_t>(k * p + c)] = Z(c, src);
                u[static_cast<std::size_t>(c)] -= tau * Z(c, src);
                zscale += std::abs(Z(c, src));
            }
            F[static_cast<std::size_t>(k)] = Fv(row);
            S[static_cast<std::size_t>(k)] = Sv(row);
        }
        std::vector<double> lo(static_cast<std::size_t>((rows + 1) * p), 0.0), hi(lo.size(), 0.0);
        for (int k = rows - 1; k >= 0; --k) {
            for (Index c = 0; c < p; ++c) {
                const double v = zrow[static_cast<std::size_t>(k * p + c)];
                lo[static_cast<std::size_t>(k * p + c)] = lo[static_cast<std::size_t>((k + 1) * p + c)] + std::min(0.0, v);
                hi[static_cast<std::size_t>(k * p + c)] = hi[static_cast<std::size_t>((k + 1) * p + c)] + std::max(0.0, v);
            }
        }
        detail::PatternWalker w;
        w.p = p;
        w.rows = rows;
        w.tau = tau;
        w.tol = 1e-12 * (1.0 + zscale);
        w.z = zrow.data();
        w.F = F.data();
        w.S = S.data();
        w.suffix_lo = lo.data();
        w.suffix_hi = hi.data();
        const double prob = w.walk(0, u, 1.0);
        contrib[s] = det * prob * fprod;
        ties[s] = w.ties;
    });

    DensityValue out;
    out.value = std::pow(static_cast<double>(n), -0.5 * static_cast<double>(p)) * pairwise_sum(contrib);
    for (std::size_t s = 0; s < subsets.size(); ++s) {
        out.boundary_ties += ties[s];
        if (singular[s]) ++out.subsets_singular;
        else ++out.subsets_used;
    }
    return out;
}

/// N(0, Sigma(tau)) density at delta.
inline double normal_density_approx(const Matrix& Sigma, const Vector& delta) {
    const char* stage = "normal_density_approx";
    require(Sigma.rows() == delta.size(), stage, "dimension mismatch");
    Eigen::LLT<Matrix> llt(Sigma);
    if (llt.info() != Eigen::Success) throw ComputationError(stage, "Sigma is not positive definite");
    const Vector w = llt.matrixL().solve(delta);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double k = static_cast<double>(delta.size());
    return std::exp(-0.5 * w.squaredNorm() - 0.5 * logdet - 0.5 * k * std::log(2.0 * M_PI));
}

inline double normal_density_approx(const CovarianceModel& model, double tau, const Vector& delta) {
    return normal_density_approx(sigma(model, tau), delta);
}

// ---------------------------------------------------------------------------
// Ratio profiles

/// delta window: standardized points z on a cartesian grid of `points`
/// per axis over [-R, R]^p, R = width * sqrt(log n), kept when |z| <= R and
/// mapped to delta = L z with L L' = Sigma(tau).
struct DeltaGridSpec {
    double width = 0.5;
    int points = 21;
};

struct DensityProfile {
    long n = 0;
    double tau = 0.5;
    std::vector<Vector> deltas;
    std::vector<double> f_exact, f_normal, ratio_minus_1;
    long boundary_ties = 0;

    double sup_abs_ratio_error() const {
        double s = 0.0;
        for (double r : ratio_minus_1) s = std::max(s, std::abs(r));
        return s;
    }
};

inline std::vector<Vector> delta_window(const Matrix& Sigma, long n, const DeltaGridSpec& spec) {
    const Index p = Sigma.rows();
    const double R = spec.width * std::sqrt(std::log(static_cast<double>(n)));
    const Matrix L = Sigma.llt().matrixL();
    std::vector<Vector> out;
    if (R == 0.0 || spec.points <= 1) {
        out.push_back(Vector::Zero(p));
        return out;
    }
    const int m = spec.points;
    std::vector<int> idx(static_cast<std::size_t>(p), 0);
    for (;;) {
        Vector z(p);
        for (Index c = 0; c < p; ++c) z(c) = -R + 2.0 * R * idx[static_cast<std::size_t>(c)] / (m - 1);
        if (z.norm() <= R * (1.0 + 1e-12)) out.push_back(L * z);
        Index c = 0;
        while (c < p && ++idx[static_cast<std::size_t>(c)] == m) idx[static_cast<std::size_t>(c++)] = 0;
        if (c == p) break;
    }
    return out;
}

/// Design for the profile at size n: intercept-only when p = 1, otherwise
/// rows (1, U[0,1]^(p-1)) drawn from `design_seed`.
inline Dataset profile_design(const DGPSpec& dgp, long n, std::uint64_t design_seed) {
    const Matrix X = dgp.p() == 1 ? Matrix(Matrix::Ones(n, 1)) : simulate_design(dgp.p(), n, design_seed);
    return Dataset::make(X, Vector::Zero(n), true);
}

inline DensityProfile density_profile(const Dataset& data, const DGPSpec& dgp, double tau,
                                      const DeltaGridSpec& spec, const DensityOptions& opt = {}) {
    const ErrorModel err(data, dgp);
    const CovarianceModel model = CovarianceModel::oracle(data, dgp);
    const Matrix Sig = sigma(model, tau);
    DensityProfile prof;
    prof.n = static_cast<long>(data.n());
    prof.tau = tau;
    prof.deltas = delta_window(Sig, prof.n, spec);
    for (const Vector& d : prof.deltas) {
        const DensityValue v = finite_sample_density(data, err, tau, d, opt);
        const double fn = normal_density_approx(Sig, d);
        prof.f_exact.push_back(v.value);
        prof.f_normal.push_back(fn);
        prof.ratio_minus_1.push_back(v.value / fn - 1.0);
        prof.boundary_ties += v.boundary_ties;
    }
    return prof;
}

inline std::vector<DensityProfile> density_ratio_profile(const DGPSpec& dgp, const std::vector<long>& n_list,
                                                         double tau, const DeltaGridSpec& spec,
                                                         std::uint64_t design_seed = 1,
                                                         const DensityOptions& opt = {}) {
    std::vector<DensityProfile> out;
    for (long n : n_list) {
        require(n > dgp.p(), "density_ratio_profile", "need n > p");
        out.push_back(density_profile(profile_design(dgp, n, design_seed), dgp, tau, spec, opt));
    }
    return out;
}

inline void write_profiles_csv(std::ostream& os, const std::vector<DensityProfile>& profiles) {
    const Index p = profiles.empty() || profiles[0].deltas.empty() ? 1 : profiles[0].deltas[0].size();
    os << "n,tau";
    for (Index c = 0; c < p; ++c) os << ",delta" << c;
    os << ",f_exact,f_normal,ratio_minus_1\n";
    os.precision(17);
    for (const auto& pr : profiles) {
        for (std::size_t k = 0; k < pr.deltas.size(); ++k) {
            os << pr.n << "," << pr.tau;
            for (Index c = 0; c < pr.deltas[k].size(); ++c) os << "," << pr.deltas[k](c);
            os << "," << pr.f_exact[k] << "," << pr.f_normal[k] << "," << pr.ratio_minus_1[k] << "\n";
        }
    }
}

// ---------------------------------------------------------------------------
// Binomial lattice lab

struct LatticeRatio {
    double exact = 0.0;
    double normal = 0.0;
    double rel_err = 0.0;
    bool degenerate = false;  // J + w misses the support
};

enum class SummationOrder { forward, backward };

inline double log_binomial_pmf(long n, long k, double prob) {
    return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
           std::lgamma(static_cast<double>(n - k) + 1.0) + static_cast<double>(k) * std::log(prob) +
           static_cast<double>(n - k) * std::log1p(-prob);
}

/// P{Z in [a - 1/2, b + 1/2]} for Z ~ N(mu, sd^2), using the upper tail
/// when the interval sits above the mean.
inline double normal_interval_probability(double a, double b, double mu, double sd) {
    const double za = (a - 0.5 - mu) / sd, zb = (b + 0.5 - mu) / sd;
    if (za > 0.0) return norm_sf(za) - norm_sf(zb);
    return norm_cdf(zb) - norm_cdf(za);
}

/// Exact P{W in J + w}, W ~ binomial(n, prob), against the continuity-
/// corrected normal probability of the same interval.
inline LatticeRatio binomial_interval_ratio(long n, double prob, long j_lo, long j_hi, long w,
                                            SummationOrder order = SummationOrder::forward) {
    const char* stage = "binomial_interval_ratio";
    require(n >= 1, stage, "n must be positive");
    require(prob > 0.0 && prob < 1.0, stage, "prob must lie in (0,1)");
    require(j_lo <= j_hi, stage, "empty interval J");
    LatticeRatio out;
    const double mu = static_cast<double>(n) * prob;
    const double sd = std::sqrt(mu * (1.0 - prob));
    out.normal = normal_interval_probability(static_cast<double>(j_lo + w), static_cast<double>(j_hi + w), mu, sd);
    const long a = std::max(0L, j_lo + w), b = std::min(n, j_hi + w);
    if (a > b) {
        out.degenerate = true;
        out.exact = 0.0;
        out.rel_err = out.normal > 0.0 ? -1.0 : 0.0;
        return out;
    }
    std::vector<double> logs;
    logs.reserve(static_cast<std::size_t>(b - a + 1));
    for (long k = a; k <= b; ++k) logs.push_back(log_binomial_pmf(n, k, prob));
    const double mx = *std::max_element(logs.begin(), logs.end());
    double s = 0.0;
    if (order == SummationOrder::forward) {
        for (double l : logs) s += std::exp(l - mx);
    } else {
        for (auto it = logs.rbegin(); it != logs.rend(); ++it) s += std::exp(*it - mx);
    }
    out.exact = std::exp(mx) * s;
    if (!(out.normal > 0.0)) throw ComputationError(stage, "normal probability underflowed");
    out.rel_err = out.exact / out.normal - 1.0;
    return out;
}

/// Largest |rel_err| over all intervals J = [s, s + length] that contain
/// n prob, at shift w.
inline double binomial_worst_interval_error(long n, double prob, long length, long w) {
    const double mu = static_cast<double>(n) * prob;
    const long s_lo = static_cast<long>(std::ceil(mu)) - length;
    const long s_hi = static_cast<long>(std::floor(mu));
    double worst = 0.0;
    for (long s = s_lo; s <= s_hi; ++s)
        worst = std::max(worst, std::abs(binomial_interval_ratio(n, prob, s, s + length, w).rel_err));
    return worst;
}

}  // namespace qrlab
