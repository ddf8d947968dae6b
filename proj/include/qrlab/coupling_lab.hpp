#pragma once

// Dyadic grids, Monte Carlo draws of the standardized process B_n, Gaussian
// companions with the same grid covariance, and a data-driven version of
// the dyadic quantile-transform coupling.

#include "qrlab/asymptotics.hpp"
#include "qrlab/common.hpp"
#include "qrlab/design_data.hpp"
#include "qrlab/rate_fit.hpp"
#include "qrlab/solver.hpp"

#include <optional>

namespace qrlab {

struct DyadicGrid {
    double epsilon = 0.1;
    int level = 1;
    double b_exponent = 0.9;
    long n = 0;
    std::vector<double> points;
};

/// All k / 2^level inside [epsilon, 1 - epsilon]; requires 2^level < n^b.
inline DyadicGrid dyadic_grid(double epsilon, int level, long n, double b) {
    const char* stage = "dyadic_grid";
    require(epsilon > 0.0 && epsilon < 0.5, stage, "epsilon must lie in (0, 0.5)");
    require(level >= 1 && level <= 30, stage, "level must lie in [1, 30]");
    require(b > 0.0 && b < 1.0, stage, "b must lie in (0, 1)");
    const double denom = std::ldexp(1.0, level);
    const double mesh_bound = std::pow(static_cast<double>(n), b);
    if (!(denom < mesh_bound))
        throw InvalidArgument(stage, "mesh too fine: 2^" + std::to_string(level) + " = " + std::to_string(denom) +
                                         " is not below n^b = " + std::to_string(mesh_bound));
    DyadicGrid g{epsilon, level, b, n, {}};
    for (long k = 1; k < static_cast<long>(denom); ++k) {
        const double t = static_cast<double>(k) / denom;
        if (t >= epsilon - 1e-15 && t <= 1.0 - epsilon + 1e-15) g.points.push_back(t);
    }
    if (g.points.empty()) throw InvalidArgument(stage, "grid is empty for this epsilon and level");
    return g;
}

/// Row r holds B_n(tau_j) coordinate c at column j * p + c.
struct ProcessDraws {
    std::vector<double> grid;
    Index p = 0;
    Matrix draws;
    long n = 0;
    long M_requested = 0;
    long failures = 0;
    std::uint64_t seed = 0;

    Index M() const { return draws.rows(); }
};

/// M replications of the response vector over a fixed design; each is fit
/// along the grid (warm-started) and centered at the true beta(tau).
inline ProcessDraws empirical_process_draws(const DGPSpec& dgp, const Matrix& design, const std::vector<double>& grid,
                                            long M, std::uint64_t seed, unsigned threads = 1) {
    const char* stage = "empirical_process_draws";
    require(M >= 1, stage, "M must be positive");
    validate_grid(grid, stage);
    const Index p = design.cols();
    const Index m = static_cast<Index>(grid.size());
    const Dataset base = Dataset::make(design, Vector::Zero(design.rows()), true);
    std::vector<Vector> beta_true;
    for (double t : grid) beta_true.push_back(true_beta(dgp, t));
    const BetaFunction ref = [&](double t) {
        const auto it = std::lower_bound(grid.begin(), grid.end(), t);
        return beta_true[static_cast<std::size_t>(it - grid.begin())];
    };
    Matrix all(M, m * p);
    std::vector<char> ok(static_cast<std::size_t>(M), 0);
    parallel_for(static_cast<std::size_t>(M), threads, [&](std::size_t r) {
        try {
            const Dataset d = base.with_responses(simulate_responses(dgp, design, derive_seed(seed, 0x42444157ULL, r)));
            const ProcessFit proc = fit_process(d, grid, ref);
            for (Index j = 0; j < m; ++j)
                all.row(static_cast<Index>(r)).segment(j * p, p) = proc.b_values.row(j);
            ok[r] = 1;
        } catch (const Error&) {
            ok[r] = 0;
        }
    });
    ProcessDraws out;
    out.grid = grid;
    out.p = p;
    out.n = static_cast<long>(design.rows());
    out.M_requested = M;
    out.seed = seed;
    const long good = static_cast<long>(std::count(ok.begin(), ok.end(), 1));
    out.failures = M - good;
    out.draws.resize(good, m * p);
    Index row = 0;
    for (Index r = 0; r < M; ++r)
        if (ok[static_cast<std::size_t>(r)]) out.draws.row(row++) = all.row(r);
    return out;
}

inline ProcessDraws empirical_process_draws(const DGPSpec& dgp, long n, const DyadicGrid& grid, long M,
                                            std::uint64_t seed, unsigned threads = 1) {
    require(grid.n == 0 || grid.n == n, "empirical_process_draws", "grid was built for a different n");
    return empirical_process_draws(dgp, simulate_design(dgp.p(), n, seed), grid.points, M, seed, threads);
}

/// Symmetric square root of a PSD covariance (eigenvalues below the PSD
/// tolerance in magnitude are set to zero; more negative ones are an error).
inline Matrix symmetric_sqrt(const Matrix& cov, Index m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (cov + cov.transpose()));
    if (es.info() != Eigen::Success) throw ComputationError("symmetric_sqrt", "eigendecomposition failed");
    Vector ev = es.eigenvalues();
    const double tol = psd_tolerance(cov, m);
    for (Index i = 0; i < ev.size(); ++i) {
        if (ev(i) < -tol)
            throw ComputationError("gaussian_companion_draws", "covariance is not PSD (eigenvalue " +
                                                                   std::to_string(ev(i)) + ")");
        ev(i) = std::sqrt(std::max(0.0, ev(i)));
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline Matrix gaussian_companion_draws(const GridCovariance& gcov, long M, std::uint64_t seed) {
    require(M >= 1, "gaussian_companion_draws", "M must be positive");
    const Matrix root = symmetric_sqrt(gcov.cov, gcov.m());
    const Index dim = gcov.cov.rows();
    Matrix out(M, dim);
    Vector xi(dim);
    for (long r = 0; r < M; ++r) {
        Stream s(derive_seed(seed, 0x47415553ULL, static_cast<std::uint64_t>(r)));
        for (Index k = 0; k < dim; ++k) xi(k) = norm_quantile(s.uniform());
        out.row(r) = (root * xi).transpose();
    }
    return out;
}

/// Kolmogorov-Smirnov distance between a sample and N(0, var).
inline double ks_normal(std::vector<double> x, double var) {
    const char* stage = "marginal_ks";
    require(!x.empty(), stage, "empty sample");
    if (!(var > 0.0)) throw ComputationError(stage, "reference marginal has zero variance");
    std::sort(x.begin(), x.end());
    if (x.front() == x.back()) throw ComputationError(stage, "degenerate (constant) draws column");
    const double sd = std::sqrt(var);
    const double m = static_cast<double>(x.size());
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double F = norm_cdf(x[i] / sd);
        d = std::max({d, static_cast<double>(i + 1) / m - F, F - static_cast<double>(i) / m});
    }
    return d;
}

/// KS distance of each column of `draws` against N(0, gcov diagonal entry).
inline std::vector<double> marginal_ks(const Matrix& draws, const GridCovariance& gcov) {
    const char* stage = "marginal_ks";
    require(draws.cols() == gcov.cov.rows(), stage, "draws and covariance dimensions differ");
    require(draws.rows() >= 200, stage, "need M >= 200 replications");
    std::vector<double> out;
    for (Index c = 0; c < draws.cols(); ++c) {
        std::vector<double> col(draws.col(c).data(), draws.col(c).data() + draws.rows());
        out.push_back(ks_normal(std::move(col), gcov.cov(c, c)));
    }
    return out;
}

inline std::vector<double> marginal_ks(const ProcessDraws& draws, const GridCovariance& gcov) {
    return marginal_ks(draws.draws, gcov);
}

/// Energy distance between the empirical laws of the rows of A and B.
inline double energy_distance(const Matrix& A, const Matrix& B) {
    require(A.cols() == B.cols() && A.rows() > 1 && B.rows() > 1, "energy_distance", "bad sample shapes");
    auto mean_dist = [](const Matrix& P, const Matrix& Q, bool same) {
        double s = 0.0;
        long cnt = 0;
        for (Index i = 0; i < P.rows(); ++i)
            for (Index j = same ? i + 1 : 0; j < Q.rows(); ++j) {
                s += (P.row(i) - Q.row(j)).norm();
                ++cnt;
            }
        return s / static_cast<double>(cnt);
    };
    return 2.0 * mean_dist(A, B, false) - mean_dist(A, A, true) - mean_dist(B, B, true);
}

struct CouplingOptions {
    long k_neighbors = 200;
    std::uint64_t seed = 1;       // for the independent companion used by the energy distance
    long energy_sample = 1000;    // rows used by the O(M^2) energy distance
    unsigned threads = 1;
};

struct CouplingReport {
    long n = 0;
    long M = 0;
    std::vector<double> grid;
    Index p = 0;
    std::vector<double> ks;           // per column: B marginals vs the Gaussian marginal
    std::vector<double> sup_errors;   // per replication: max over grid nodes of |B - Z|
    double energy = 0.0;              // B rows vs independent companion rows
    Matrix companion;                 // the constructed Z rows
    std::vector<Index> order;         // processing order of columns

    double mean_sup_error() const {
        return std::accumulate(sup_errors.begin(), sup_errors.end(), 0.0) / static_cast<double>(sup_errors.size());
    }
    double median_sup_error() const { return median(sup_errors); }
};

/// Dyadic level of k / 2^L: L minus the number of trailing zero bits of k.
inline int dyadic_level(double tau, int max_level = 30) {
    for (int l = 0; l <= max_level; ++l) {
        const double scaled = std::ldexp(tau, l);
        if (scaled == std::floor(scaled)) return l;
    }
    return max_level + 1;
}

/// Processing order of grid points: coarse levels first, left to right.
inline std::vector<Index> dyadic_order(const std::vector<double>& grid) {
    std::vector<Index> idx(grid.size());
    std::iota(idx.begin(), idx.end(), Index{0});
    std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) {
        const int la = dyadic_level(grid[static_cast<std::size_t>(a)]);
        const int lb = dyadic_level(grid[static_cast<std::size_t>(b)]);
        return la != lb ? la < lb : a < b;
    });
    return idx;
}

namespace detail {

// Empirical conditional cdf value of column `target` for every replication:
// its mid-rank among the k replications nearest in the (standardized)
// conditioning columns. With no conditioning columns the rank is taken over
// all replications.
inline std::vector<double> conditional_ranks(const Matrix& draws, Index target, const std::vector<Index>& cond,
                                             long k, unsigned threads) {
    const Index M = draws.rows();
    std::vector<double> u(static_cast<std::size_t>(M));
    const Vector y = draws.col(target);
    if (cond.empty()) {
        std::vector<std::pair<double, Index>> sorted(static_cast<std::size_t>(M));
        for (Index r = 0; r < M; ++r) sorted[static_cast<std::size_t>(r)] = {y(r), r};
        std::sort(sorted.begin(), sorted.end());
        for (Index i = 0; i < M;) {
            Index j = i;
            while (j + 1 < M && sorted[static_cast<std::size_t>(j + 1)].first == sorted[static_cast<std::size_t>(i)].first) ++j;
            const double mid = 0.5 * static_cast<double>(i + j) + 0.5;
            for (Index t = i; t <= j; ++t) u[static_cast<std::size_t>(sorted[static_cast<std::size_t>(t)].second)] = mid / static_cast<double>(M);
            i = j + 1;
        }
        return u;
    }
    const Index d = static_cast<Index>(cond.size());
    std::vector<double> Z(static_cast<std::size_t>(M * d));
    for (Index c = 0; c < d; ++c) {
        const Vector col = draws.col(cond[static_cast<std::size_t>(c)]);
        const double mean = col.mean();
        const double sd = std::sqrt((col.array() - mean).square().sum() / static_cast<double>(M - 1));
        if (!(sd > 0.0)) throw ComputationError("dyadic_quantile_coupling", "conditioning column has zero spread");
        for (Index r = 0; r < M; ++r) Z[static_cast<std::size_t>(r * d + c)] = (col(r) - mean) / sd;
    }
    parallel_for(static_cast<std::size_t>(M), threads, [&](std::size_t r) {
        std::vector<std::pair<double, Index>> dist(static_cast<std::size_t>(M));
        const double* zr = &Z[r * static_cast<std::size_t>(d)];
        for (Index s = 0; s < M; ++s) {
            const double* zs = &Z[static_cast<std::size_t>(s * d)];
            double acc = 0.0;
            for (Index c = 0; c < d; ++c) {
                const double t = zr[c] - zs[c];
                acc += t * t;
            }
            dist[static_cast<std::size_t>(s)] = {acc, s};
        }
        std::nth_element(dist.begin(), dist.begin() + (k - 1), dist.end());
        double below = 0.0;
        const double yr = y(static_cast<Index>(r));
        for (long t = 0; t < k; ++t) {
            const double ys = y(dist[static_cast<std::size_t>(t)].second);
            if (ys < yr) below += 1.0;
            else if (ys == yr) below += 0.5;  // includes the replication itself
        }
        u[r] = below / static_cast<double>(k);
    });
    return u;
}

}  // namespace detail

/// Builds a Gaussian companion Z for every replication of B by walking the
/// grid in dyadic order (coarsest point first, then each finer level) and
/// one coordinate at a time in design-column order. Each B coordinate is
/// ranked among its k nearest replications in the conditioning variables
/// (the coarser-level neighbours of the point and the earlier coordinates
/// of the same point); the rank is mapped through the exact Gaussian
/// conditional quantile given the companion values already built.
inline CouplingReport dyadic_quantile_coupling(const Matrix& draws, const GridCovariance& gcov,
                                               const CouplingOptions& opt = {}) {
    const char* stage = "dyadic_quantile_coupling";
    const Index M = draws.rows();
    const Index p = gcov.p, m = gcov.m();
    require(draws.cols() == m * p, stage, "draws and covariance dimensions differ");
    require(opt.k_neighbors >= 2, stage, "k_neighbors must be at least 2");
    if (opt.k_neighbors > M)
        throw InvalidArgument(stage, "k_neighbors = " + std::to_string(opt.k_neighbors) +
                                         " exceeds the number of replications M = " + std::to_string(M));

    // Column processing order.
    const std::vector<Index> point_order = dyadic_order(gcov.grid);
    std::vector<Index> order;
    for (Index j : point_order)
        for (Index c = 0; c < p; ++c) order.push_back(j * p + c);
    std::vector<char> done_point(static_cast<std::size_t>(m), 0);

    const Index dim = m * p;
    Matrix perm_cov(dim, dim);
    for (Index a = 0; a < dim; ++a)
        for (Index b = 0; b < dim; ++b) perm_cov(a, b) = gcov.cov(order[static_cast<std::size_t>(a)], order[static_cast<std::size_t>(b)]);
    Eigen::LLT<Matrix> llt(perm_cov);
    if (llt.info() != Eigen::Success)
        throw ComputationError(stage, "grid covariance is not positive definite; conditioning is degenerate");
    const Matrix L = llt.matrixL();

    Matrix xi(M, dim);  // standard normal scores in processing order
    Index pos = 0;
    for (Index j : point_order) {
        // Nearest already-processed grid points on each side (coarser levels).
        std::vector<Index> neighbours;
        for (Index q = j - 1; q >= 0; --q)
            if (done_point[static_cast<std::size_t>(q)]) {
                neighbours.push_back(q);
                break;
            }
        for (Index q = j + 1; q < m; ++q)
            if (done_point[static_cast<std::size_t>(q)]) {
                neighbours.push_back(q);
                break;
            }
        for (Index c = 0; c < p; ++c) {
            std::vector<Index> cond;
            for (Index q : neighbours)
                for (Index cc = 0; cc < p; ++cc) cond.push_back(q * p + cc);
            for (Index cc = 0; cc < c; ++cc) cond.push_back(j * p + cc);
            const std::vector<double> u = detail::conditional_ranks(draws, j * p + c, cond, opt.k_neighbors, opt.threads);
            for (Index r = 0; r < M; ++r) xi(r, pos) = norm_quantile(u[static_cast<std::size_t>(r)]);
            ++pos;
        }
        done_point[static_cast<std::size_t>(j)] = 1;
    }

    CouplingReport rep;
    rep.M = static_cast<long>(M);
    rep.grid = gcov.grid;
    rep.p = p;
    rep.order = order;
    rep.companion.resize(M, dim);
    rep.sup_errors.resize(static_cast<std::size_t>(M));
    for (Index r = 0; r < M; ++r) {
        const Vector zp = L * xi.row(r).transpose();
        double sup = 0.0;
        for (Index a = 0; a < dim; ++a) {
            const Index col = order[static_cast<std::size_t>(a)];
            rep.companion(r, col) = zp(a);
            sup = std::max(sup, std::abs(draws(r, col) - zp(a)));
        }
        rep.sup_errors[static_cast<std::size_t>(r)] = sup;
    }
    if (M >= 200) rep.ks = marginal_ks(draws, gcov);
    const long es = std::min<long>(opt.energy_sample, static_cast<long>(M));
    if (es >= 2) {
        const Matrix ref = gaussian_companion_draws(gcov, es, derive_seed(opt.seed, 0x454e45ULL));
        rep.energy = energy_distance(draws.topRows(es), ref);
    }
    return rep;
}

inline CouplingReport dyadic_quantile_coupling(const ProcessDraws& draws, const GridCovariance& gcov,
                                               const CouplingOptions& opt = {}) {
    CouplingReport rep = dyadic_quantile_coupling(draws.draws, gcov, opt);
    rep.n = draws.n;
    return rep;
}

struct GridSpec {
    double epsilon = 0.2;
    int level = 2;
    double b = 0.9;
};

struct CouplingRateRow {
    long n = 0;
    double median_sup_error = 0.0;
    double mean_sup_error = 0.0;
    double median_ks = 0.0;
    double energy = 0.0;
    long failures = 0;
};

struct CouplingRateResult {
    std::vector<CouplingRateRow> rows;
    std::optional<RateFit> rate;
};

inline CouplingRateResult coupling_rate_study(const DGPSpec& dgp, const std::vector<long>& n_list,
                                              const GridSpec& grid_spec, long M, std::uint64_t seed,
                                              const CouplingOptions& opt = {}) {
    CouplingRateResult res;
    std::vector<double> ns, errs;
    for (long n : n_list) {
        const DyadicGrid grid = dyadic_grid(grid_spec.epsilon, grid_spec.level, n, grid_spec.b);
        const std::uint64_t s = derive_seed(seed, 0x43504c52ULL, static_cast<std::uint64_t>(n));
        const Matrix X = simulate_design(dgp.p(), n, s);
        const ProcessDraws draws = empirical_process_draws(dgp, X, grid.points, M, s, opt.threads);
        const Dataset design = Dataset::make(X, Vector::Zero(n), true);
        const GridCovariance gcov = grid_covariance(CovarianceModel::oracle(design, dgp), grid.points);
        CouplingOptions o = opt;
        o.seed = s;
        const CouplingReport rep = dyadic_quantile_coupling(draws, gcov, o);
        CouplingRateRow row;
        row.n = n;
        row.median_sup_error = rep.median_sup_error();
        row.mean_sup_error = rep.mean_sup_error();
        row.median_ks = median(rep.ks);
        row.energy = rep.energy;
        row.failures = draws.failures;
        res.rows.push_back(row);
        ns.push_back(static_cast<double>(n));
        errs.push_back(row.median_sup_error);
    }
    if (ns.size() >= 3) res.rate = fit_rate(ns, errs);
    return res;
}

}  // namespace qrlab
