#pragma once

// Regression quantiles by an exterior-point simplex on the check-loss LP.
//
// The iterate is always a vertex: a set h of p observations with zero
// residuals and beta = X_h^-1 Y_h. Each pivot releases one basis row along
// the edge direction X_h^-1 e_j (either sign) and moves to the minimum of
// the piecewise-linear objective on that edge, which is a weighted-median
// step over the residual breakpoints (the Barrodale-Roberts line search).

#include "qrlab/common.hpp"
#include "qrlab/design_data.hpp"

#include <deque>
#include <optional>
#include <sstream>

namespace qrlab {

inline double check_loss(double u, double tau) { return u * (tau - (u < 0.0 ? 1.0 : 0.0)); }

inline double check_objective(const Vector& residuals, double tau) {
    double s = 0.0;
    for (Index i = 0; i < residuals.size(); ++i) s += check_loss(residuals(i), tau);
    return s;
}

/// Zero-residual tolerance, relative to the response scale.
inline double residual_tolerance(const Vector& Y) { return 1e-9 * (1.0 + Y.cwiseAbs().maxCoeff()); }

struct QuantileFit {
    double tau = 0.5;
    Vector beta_hat;
    std::vector<Index> basis;  // sorted row indices
    Vector residuals;
    double objective = 0.0;
    long pivot_count = 0;
    bool degenerate = false;  // extra zero residuals or a non-unique optimum
};

struct PivotRecord {
    Index entering = -1;
    Index leaving = -1;
    double objective = 0.0;
};

struct SolverOptions {
    std::optional<std::vector<Index>> warm_basis;
    long bland_after = -1;   // pivots before switching to Bland's rule; -1 means 10 n
    long max_pivots = -1;    // cycling guard; -1 means 50 n + 1000
    std::vector<double>* objective_trace = nullptr;  // optional per-pivot objective log
};

namespace detail {

inline std::optional<std::vector<Index>> initial_basis(const Matrix& X) {
    // Greedy row selection by Gram-Schmidt on the rows, in index order.
    const Index n = X.rows(), p = X.cols();
    std::vector<Index> basis;
    Matrix Q(p, p);
    Index k = 0;
    for (Index i = 0; i < n && k < p; ++i) {
        Vector v = X.row(i).transpose();
        const double norm0 = v.norm();
        if (norm0 == 0.0) continue;
        for (Index j = 0; j < k; ++j) v -= Q.col(j).dot(v) * Q.col(j);
        const double nv = v.norm();
        if (nv > 1e-8 * norm0) {
            Q.col(k++) = v / nv;
            basis.push_back(i);
        }
    }
    if (k < p) return std::nullopt;
    return basis;
}

inline bool basis_usable(const Matrix& X, const std::vector<Index>& b) {
    const Index n = X.rows(), p = X.cols();
    if (static_cast<Index>(b.size()) != p) return false;
    std::vector<Index> s = b;
    std::sort(s.begin(), s.end());
    if (std::adjacent_find(s.begin(), s.end()) != s.end()) return false;
    if (s.front() < 0 || s.back() >= n) return false;
    return subset_nonsingular(X, s);
}

inline std::string format_trace(const std::deque<PivotRecord>& trace) {
    std::ostringstream os;
    os.precision(12);
    for (const auto& r : trace) os << " [in " << r.entering << ", out " << r.leaving << ", obj " << r.objective << "]";
    return os.str();
}

}  // namespace detail

inline QuantileFit fit_rq(const Dataset& data, double tau, const SolverOptions& opts = {}) {
    const char* stage = "fit_rq";
    require(tau > 0.0 && tau < 1.0, stage, "tau must lie in (0,1), got " + std::to_string(tau));
    const Matrix& X = data.X();
    const Vector& Y = data.Y();
    const Index n = data.n(), p = data.p();
    const double tol_res = residual_tolerance(Y);
    const long bland_after = opts.bland_after >= 0 ? opts.bland_after : 10 * static_cast<long>(n);
    const long max_pivots = opts.max_pivots >= 0 ? opts.max_pivots : 50 * static_cast<long>(n) + 1000;

    std::vector<Index> basis;
    if (opts.warm_basis && detail::basis_usable(X, *opts.warm_basis)) {
        basis = *opts.warm_basis;
    } else {
        auto b = detail::initial_basis(X);
        if (!b) throw ComputationError(stage, "design has no nonsingular p-subset");
        basis = *b;
    }

    std::vector<char> in_basis(static_cast<std::size_t>(n), 0);
    for (Index b : basis) in_basis[static_cast<std::size_t>(b)] = 1;

    std::deque<PivotRecord> trace;
    long pivots = 0;
    Vector beta(p), r(n);
    Matrix C(n, p);  // C = X X_h^-1; column j is x_i' d_j for the edge direction d_j
    std::vector<std::pair<double, Index>> breaks;
    breaks.reserve(static_cast<std::size_t>(n));
    double prev_obj = std::numeric_limits<double>::infinity();
    bool degenerate = false;

    // Edge scan at the current vertex. Fills C = X X_h^-1 (column j holds
    // x_i' d_j for the edge direction d_j) and returns the steepest (or
    // Bland) improving edge.
    struct EdgeChoice {
        Index j = -1;
        int sign = 0;
        double slope = 0.0;
        bool degenerate = false;
        bool flat = false;
    };
    auto scan_edges = [&](const std::vector<Index>& b, const std::vector<char>& member, const Vector& res,
                          Matrix& Cout, bool bland) -> std::optional<EdgeChoice> {
        const Matrix Xh = rows_of(X, b);
        Eigen::PartialPivLU<Matrix> lu(Xh);
        if (!(std::abs(lu.determinant()) > 0.0)) return std::nullopt;
        Cout.noalias() = X * lu.inverse();
        EdgeChoice best;
        Index bland_row = std::numeric_limits<Index>::max();
        for (Index j = 0; j < p; ++j) {
            double g = 0.0, scale = 0.0, kink_plus = 0.0, kink_minus = 0.0;
            for (Index i = 0; i < n; ++i) {
                const double c = Cout(i, j);
                scale += std::abs(c);
                if (member[static_cast<std::size_t>(i)]) continue;
                if (std::abs(res(i)) <= tol_res) {
                    best.degenerate = true;
                    // residual moves as -t c along +d_j and +t c along -d_j
                    kink_plus += check_loss(-c, tau);
                    kink_minus += check_loss(c, tau);
                } else {
                    g += c * (tau - (res(i) < 0.0 ? 1.0 : 0.0));
                }
            }
            const double tol_d = 1e-12 * (1.0 + scale);
            const double d_plus = (1.0 - tau) - g + kink_plus;
            const double d_minus = tau + g + kink_minus;
            for (int sign : {+1, -1}) {
                const double d = sign > 0 ? d_plus : d_minus;
                if (std::abs(d) <= tol_d) best.flat = true;
                if (d >= -tol_d) continue;
                const Index row = b[static_cast<std::size_t>(j)];
                if (bland) {
                    if (row < bland_row) {
                        bland_row = row;
                        best.j = j;
                        best.sign = sign;
                        best.slope = d;
                    }
                } else if (d < best.slope) {
                    best.j = j;
                    best.sign = sign;
                    best.slope = d;
                }
            }
        }
        return best;
    };

    for (;;) {
        const Matrix Xh = rows_of(X, basis);
        Eigen::PartialPivLU<Matrix> lu(Xh);
        if (!(std::abs(lu.determinant()) > 0.0)) throw ComputationError(stage, "singular basis encountered");
        Vector yh(p);
        for (Index j = 0; j < p; ++j) yh(j) = Y(basis[static_cast<std::size_t>(j)]);
        beta = lu.solve(yh);
        r = Y - X * beta;
        for (Index b : basis) r(b) = 0.0;
        const double obj = check_objective(r, tau);
        if (opts.objective_trace) opts.objective_trace->push_back(obj);
        if (obj > prev_obj + 1e-9 * (1.0 + std::abs(prev_obj)))
            throw ComputationError(stage, "objective increased during pivoting;" + detail::format_trace(trace));
        prev_obj = obj;

        const bool use_bland = pivots >= bland_after;
        auto choice = scan_edges(basis, in_basis, r, C, use_bland);
        if (!choice) throw ComputationError(stage, "singular basis encountered");
        degenerate = choice->degenerate;

        // At a degenerate vertex the p basis edges do not span every descent
        // ray; try the other bases that represent the same vertex.
        if (choice->j < 0 && choice->degenerate) {
            std::vector<Index> zeros;
            for (Index i = 0; i < n; ++i)
                if (!in_basis[static_cast<std::size_t>(i)] && std::abs(r(i)) <= tol_res) zeros.push_back(i);
            Matrix Calt(n, p);
            bool switched = false;
            for (Index z : zeros) {
                for (Index j = 0; j < p && !switched; ++j) {
                    std::vector<Index> alt = basis;
                    std::vector<char> member = in_basis;
                    member[static_cast<std::size_t>(alt[static_cast<std::size_t>(j)])] = 0;
                    member[static_cast<std::size_t>(z)] = 1;
                    alt[static_cast<std::size_t>(j)] = z;
                    Vector ralt = r;
                    ralt(z) = 0.0;
                    auto c2 = scan_edges(alt, member, ralt, Calt, use_bland);
                    if (c2 && c2->j >= 0) {
                        basis = alt;
                        in_basis = member;
                        r = ralt;
                        C = Calt;
                        choice = c2;
                        switched = true;
                    }
                }
                if (switched) break;
            }
        }

        if (choice->j < 0) {
            QuantileFit fit;
            fit.tau = tau;
            fit.beta_hat = beta;
            fit.basis = basis;
            std::sort(fit.basis.begin(), fit.basis.end());
            fit.residuals = Y - X * beta;
            fit.objective = check_objective(fit.residuals, tau);
            fit.pivot_count = pivots;
            fit.degenerate = degenerate || choice->flat;
            return fit;
        }
        const Index best_j = choice->j;
        const int best_sign = choice->sign;
        const double best_val = choice->slope;

        if (pivots >= max_pivots)
            throw ComputationError(stage, "cycling guard exceeded after " + std::to_string(pivots) +
                                              " pivots; last pivots:" + detail::format_trace(trace));

        // Line search along sign * d_j: residual i moves as r_i - t c_i.
        breaks.clear();
        for (Index i = 0; i < n; ++i) {
            if (in_basis[static_cast<std::size_t>(i)] || std::abs(r(i)) <= tol_res) continue;
            const double c = best_sign * C(i, best_j);
            if (c == 0.0) continue;
            const double t = r(i) / c;
            if (t > 0.0) breaks.emplace_back(t, i);
        }
        std::sort(breaks.begin(), breaks.end());
        double slope = best_val;
        Index entering = -1;
        for (const auto& [t, i] : breaks) {
            slope += std::abs(C(i, best_j));
            if (slope >= 0.0) {
                entering = i;
                break;
            }
        }
        if (entering < 0) throw ComputationError(stage, "unbounded edge (design rank deficient?)");
        // Degenerate zero-length steps may also enter rows with zero residual;
        // those were excluded above, so every pivot moves strictly.

        const Index leaving = basis[static_cast<std::size_t>(best_j)];
        in_basis[static_cast<std::size_t>(leaving)] = 0;
        in_basis[static_cast<std::size_t>(entering)] = 1;
        basis[static_cast<std::size_t>(best_j)] = entering;
        ++pivots;
        trace.push_back({entering, leaving, obj});
        if (trace.size() > 20) trace.pop_front();
    }
}

inline QuantileFit fit_rq(const Dataset& data, double tau, const std::vector<Index>& warm_basis) {
    SolverOptions o;
    o.warm_basis = warm_basis;
    return fit_rq(data, tau, o);
}

/// Exhaustive search over all nonsingular p-subsets.
inline QuantileFit brute_force_rq(const Dataset& data, double tau, std::uint64_t budget = 1000000) {
    const char* stage = "brute_force_rq";
    require(tau > 0.0 && tau < 1.0, stage, "tau must lie in (0,1)");
    const Index n = data.n(), p = data.p();
    if (choose_capped(static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(p), budget) > budget)
        throw ComputationError(stage, "C(n,p) exceeds the enumeration budget of " + std::to_string(budget));
    const Matrix& X = data.X();
    const Vector& Y = data.Y();
    std::vector<Index> idx(static_cast<std::size_t>(p));
    std::iota(idx.begin(), idx.end(), Index{0});
    QuantileFit best;
    best.tau = tau;
    best.objective = std::numeric_limits<double>::infinity();
    Vector yh(p);
    do {
        if (!subset_nonsingular(X, idx)) continue;
        const Matrix Xh = rows_of(X, idx);
        for (Index j = 0; j < p; ++j) yh(j) = Y(idx[static_cast<std::size_t>(j)]);
        const Vector b = Xh.partialPivLu().solve(yh);
        const Vector res = Y - X * b;
        const double obj = check_objective(res, tau);
        if (obj < best.objective - 1e-12 * (1.0 + std::abs(obj))) {
            best.objective = obj;
            best.beta_hat = b;
            best.basis = idx;
            best.residuals = res;
        }
    } while (next_combination(idx, n));
    if (best.basis.empty()) throw ComputationError(stage, "no nonsingular p-subset");
    const double tol = residual_tolerance(Y);
    best.degenerate = (best.residuals.array().abs() <= tol).count() > p;
    return best;
}

struct GradientCheck {
    bool ok = false;
    Vector u;       // X_h^-T S_n
    Vector margin;  // signed distance inside [tau-1, tau] per coordinate (negative = outside)
    Vector S;
};

/// Optimality test at a vertex: u = X_h^-T S_n must lie in [tau-1, tau]^p,
/// S_n = sum over i outside h of x_i (1{Y_i <= x_i'beta} - tau).
namespace detail {

inline GradientCheck gradient_condition(const Matrix& X, const Vector& Y, const QuantileFit& fit) {
    const char* stage = "check_gradient_condition";
    const Index n = X.rows(), p = X.cols();
    require(static_cast<Index>(fit.basis.size()) == p, stage, "basis must have p rows");
    const double tau = fit.tau;
    std::vector<char> in_basis(static_cast<std::size_t>(n), 0);
    for (Index b : fit.basis) in_basis[static_cast<std::size_t>(b)] = 1;
    const Vector r = Y - X * fit.beta_hat;
    Vector S = Vector::Zero(p);
    for (Index i = 0; i < n; ++i) {
        if (in_basis[static_cast<std::size_t>(i)]) continue;
        S += X.row(i).transpose() * ((r(i) <= 0.0 ? 1.0 : 0.0) - tau);
    }
    const Matrix Xh = rows_of(X, fit.basis);
    Eigen::FullPivLU<Matrix> lu(Xh.transpose());
    if (!lu.isInvertible()) throw ComputationError(stage, "singular basis");
    GradientCheck g;
    g.S = S;
    g.u = lu.solve(S);
    g.margin.resize(p);
    const double slack = 1e-9 * (1.0 + S.cwiseAbs().sum());
    g.ok = true;
    for (Index j = 0; j < p; ++j) {
        g.margin(j) = std::min(g.u(j) - (tau - 1.0), tau - g.u(j));
        if (g.margin(j) < -slack) g.ok = false;
    }
    return g;
}

}  // namespace detail

inline GradientCheck check_gradient_condition(const Dataset& data, const QuantileFit& fit) {
    return detail::gradient_condition(data.X(), data.Y(), fit);
}

// ---------------------------------------------------------------------------
// Process over a tau grid

struct ProcessFit {
    std::vector<double> grid;
    std::vector<QuantileFit> fits;
    Matrix b_values;  // m x p: sqrt(n)(beta_hat - beta_ref) or raw beta_hat
    bool centered = false;
};

using BetaFunction = std::function<Vector(double)>;

inline void validate_grid(const std::vector<double>& grid, const char* stage) {
    require(!grid.empty(), stage, "grid is empty");
    for (std::size_t j = 0; j < grid.size(); ++j) {
        require(grid[j] > 0.0 && grid[j] < 1.0, stage, "grid point outside (0,1)");
        if (j) require(grid[j] > grid[j - 1], stage, "grid must be strictly increasing");
    }
}

inline ProcessFit fit_process(const Dataset& data, const std::vector<double>& grid,
                              const BetaFunction& beta_ref = nullptr, bool warm_start = true) {
    const char* stage = "fit_process";
    validate_grid(grid, stage);
    ProcessFit proc;
    proc.grid = grid;
    proc.centered = static_cast<bool>(beta_ref);
    proc.b_values.resize(static_cast<Index>(grid.size()), data.p());
    const double root_n = std::sqrt(static_cast<double>(data.n()));
    for (std::size_t j = 0; j < grid.size(); ++j) {
        SolverOptions o;
        if (warm_start && j > 0) o.warm_basis = proc.fits.back().basis;
        try {
            proc.fits.push_back(fit_rq(data, grid[j], o));
        } catch (const Error& e) {
            throw ComputationError(stage, "at tau=" + std::to_string(grid[j]) + ": " + e.what());
        }
        const Vector& b = proc.fits.back().beta_hat;
        const Vector row = beta_ref ? Vector(root_n * (b - beta_ref(grid[j]))) : b;
        proc.b_values.row(static_cast<Index>(j)) = row.transpose();
    }
    return proc;
}

/// Coordinatewise linear interpolation of beta_hat between grid points.
inline Vector interpolate_beta(const ProcessFit& proc, double tau) {
    const char* stage = "interpolate_beta";
    require(!proc.grid.empty(), stage, "empty process");
    require(tau >= proc.grid.front() && tau <= proc.grid.back(), stage,
            "tau=" + std::to_string(tau) + " outside the grid range");
    const auto it = std::lower_bound(proc.grid.begin(), proc.grid.end(), tau);
    const std::size_t hi = static_cast<std::size_t>(it - proc.grid.begin());
    if (proc.grid[hi] == tau) return proc.fits[hi].beta_hat;
    const std::size_t lo = hi - 1;
    const double w = (tau - proc.grid[lo]) / (proc.grid[hi] - proc.grid[lo]);
    return (1.0 - w) * proc.fits[lo].beta_hat + w * proc.fits[hi].beta_hat;
}

}  // namespace qrlab
