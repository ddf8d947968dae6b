#pragma once

// Fixed-design datasets, location-scale data-generating processes and
// design diagnostics.

#include "qrlab/common.hpp"
#include "qrlab/config.hpp"
#include "qrlab/distributions.hpp"

#include <fstream>
#include <optional>
#include <sstream>

namespace qrlab {

/// Design matrix X (n x p, row i = x_i') and responses Y. Immutable once
/// built through `make`, which enforces n > p and full column rank.
class Dataset {
public:
    static Dataset make(Matrix X, Vector Y, bool intercept) {
        const char* stage = "dataset";
        require(X.rows() == Y.size(), stage, "X has " + std::to_string(X.rows()) + " rows but Y has " +
                                                 std::to_string(Y.size()) + " entries");
        require(X.cols() >= 1, stage, "design needs at least one column");
        require(X.rows() > X.cols(), stage,
                "need n > p (n=" + std::to_string(X.rows()) + ", p=" + std::to_string(X.cols()) + ")");
        if (intercept) {
            for (Index i = 0; i < X.rows(); ++i)
                require(X(i, 0) == 1.0, stage,
                        "intercept column 0 is not 1 at row " + std::to_string(i + 1));
        }
        Eigen::ColPivHouseholderQR<Matrix> qr(X);
        qr.setThreshold(1e-10);
        if (qr.rank() < X.cols()) {
            const Index bad = qr.colsPermutation().indices()(qr.rank());
            throw InvalidArgument(stage, "design is rank deficient (rank " + std::to_string(qr.rank()) +
                                             " < p=" + std::to_string(X.cols()) + "); column " +
                                             std::to_string(bad) + " is linearly dependent");
        }
        Dataset d;
        d.X_ = std::move(X);
        d.Y_ = std::move(Y);
        d.intercept_ = intercept;
        return d;
    }

    /// Same design, new responses; skips the rank check already done for X.
    Dataset with_responses(Vector Y) const {
        require(Y.size() == Y_.size(), "dataset", "response length mismatch");
        Dataset d = *this;
        d.Y_ = std::move(Y);
        return d;
    }

    const Matrix& X() const noexcept { return X_; }
    const Vector& Y() const noexcept { return Y_; }
    bool intercept() const noexcept { return intercept_; }
    Index n() const noexcept { return X_.rows(); }
    Index p() const noexcept { return X_.cols(); }

private:
    Dataset() = default;
    Matrix X_;
    Vector Y_;
    bool intercept_ = false;
};

/// Location-scale generating process: Y = x'b0 + (x'gamma) e, with design
/// rows (1, U[0,1]^(p-1)).
struct DGPSpec {
    Vector b0;
    Vector gamma;
    ErrorDist error = ErrorDist::normal();

    Index p() const { return b0.size(); }

    void validate() const {
        require(b0.size() >= 1, "dgp", "p must be at least 1");
        require(gamma.size() == b0.size(), "dgp", "b0 and gamma must have the same length");
        // x'gamma > 0 on the design support {1} x [0,1]^(p-1): the minimum is
        // attained at a vertex, i.e. gamma_0 + sum of negative gamma_j.
        double lo = gamma(0);
        for (Index j = 1; j < gamma.size(); ++j) lo += std::min(0.0, gamma(j));
        require(lo > 0.0, "dgp", "x'gamma must be positive on the design support (min = " +
                                     std::to_string(lo) + ")");
    }

    static DGPSpec location_scale(Vector b0, Vector gamma, ErrorDist e) {
        DGPSpec s{std::move(b0), std::move(gamma), e};
        s.validate();
        return s;
    }

    static DGPSpec from_config(const KeyValueConfig& cfg) {
        std::vector<double> b = parse_double_list(cfg.get("b0"), "b0");
        std::vector<double> g = parse_double_list(cfg.get("gamma"), "gamma");
        const double df = cfg.has("df") ? parse_double(cfg.get("df"), "df") : 0.0;
        DGPSpec s;
        s.b0 = Eigen::Map<Vector>(b.data(), static_cast<Index>(b.size()));
        s.gamma = Eigen::Map<Vector>(g.data(), static_cast<Index>(g.size()));
        s.error = ErrorDist::parse(cfg.get_or("error_dist", "normal"), df);
        if (cfg.has("p"))
            require(parse_int(cfg.get("p"), "p") == s.p(), "dgp", "p does not match length of b0");
        s.validate();
        return s;
    }

    void to_config(KeyValueConfig& cfg) const {
        cfg.set("p", std::to_string(p()));
        cfg.set("b0", format_double_list(std::vector<double>(b0.data(), b0.data() + b0.size())));
        cfg.set("gamma", format_double_list(std::vector<double>(gamma.data(), gamma.data() + gamma.size())));
        cfg.set("error_dist", error.name());
        if (error.kind == ErrorKind::student_t) cfg.set("df", std::to_string(error.df));
    }
};

inline const std::set<std::string>& dgp_config_keys() {
    static const std::set<std::string> keys{"p", "b0", "gamma", "error_dist", "df"};
    return keys;
}

/// beta(tau) = b0 + gamma F^-1(tau).
inline Vector true_beta(const DGPSpec& dgp, double tau) {
    require(tau > 0.0 && tau < 1.0, "true_beta", "tau must lie in (0,1), got " + std::to_string(tau));
    return dgp.b0 + dgp.gamma * dgp.error.quantile(tau);
}

/// beta'(tau) = gamma / f(F^-1(tau)).
inline Vector true_beta_derivative(const DGPSpec& dgp, double tau) {
    require(tau > 0.0 && tau < 1.0, "true_beta", "tau must lie in (0,1)");
    return dgp.gamma * dgp.error.sparsity(tau);
}

/// Design rows (1, U[0,1]^(p-1)) from a stream derived from `seed`.
inline Matrix simulate_design(Index p, Index n, std::uint64_t seed) {
    Stream s(derive_seed(seed, 0x44455349474eULL));
    Matrix X(n, p);
    for (Index i = 0; i < n; ++i) {
        X(i, 0) = 1.0;
        for (Index j = 1; j < p; ++j) X(i, j) = s.uniform();
    }
    return X;
}

inline Vector simulate_responses(const DGPSpec& dgp, const Matrix& X, std::uint64_t seed) {
    Stream s(derive_seed(seed, 0x524553504fULL));
    Vector Y(X.rows());
    for (Index i = 0; i < X.rows(); ++i) {
        const double loc = X.row(i).dot(dgp.b0);
        const double scale = X.row(i).dot(dgp.gamma);
        if (!(scale > 0.0))
            throw InvalidArgument("simulate_dataset", "x'gamma <= 0 at row " + std::to_string(i + 1));
        Y(i) = loc + scale * dgp.error.quantile(s.uniform());
    }
    return Y;
}

inline Dataset simulate_dataset(const DGPSpec& dgp, Index n, std::uint64_t seed) {
    dgp.validate();
    require(n > dgp.p(), "simulate_dataset", "need n > p");
    Matrix X = simulate_design(dgp.p(), n, seed);
    Vector Y = simulate_responses(dgp, X, seed);
    return Dataset::make(std::move(X), std::move(Y), true);
}

/// Reads comma-separated text with a header row.
inline Dataset load_dataset(std::istream& in, const std::string& y_column,
                            const std::vector<std::string>& x_columns, bool add_intercept,
                            const std::string& source = "input") {
    const char* stage = "load_dataset";
    std::string line;
    if (!std::getline(in, line)) throw InvalidArgument(stage, source + ": empty file");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    const std::vector<std::string> header = split(line, ',');
    auto column_of = [&](const std::string& name) -> std::size_t {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw InvalidArgument(stage, source + ": missing column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t ycol = column_of(y_column);
    std::vector<std::size_t> xcols;
    for (const auto& c : x_columns) xcols.push_back(column_of(c));

    std::vector<double> ys;
    std::vector<std::vector<double>> xs;
    std::size_t row = 1;  // data rows counted from 1 (header excluded)
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const std::vector<std::string> cells = split(line, ',');
        if (cells.size() != header.size())
            throw InvalidArgument(stage, source + ": row " + std::to_string(row) + " has " +
                                             std::to_string(cells.size()) + " fields, header has " +
                                             std::to_string(header.size()));
        auto cell = [&](std::size_t col) {
            try {
                return parse_double(cells[col], "cell");
            } catch (const InvalidArgument&) {
                throw InvalidArgument(stage, source + ": non-numeric cell at row " + std::to_string(row) +
                                                 ", column '" + header[col] + "': '" + cells[col] + "'");
            }
        };
        ys.push_back(cell(ycol));
        std::vector<double> xr;
        for (auto c : xcols) xr.push_back(cell(c));
        xs.push_back(std::move(xr));
        ++row;
    }
    const Index n = static_cast<Index>(ys.size());
    const Index p = static_cast<Index>(xcols.size()) + (add_intercept ? 1 : 0);
    require(p >= 1, stage, "no design columns (give x columns or add an intercept)");
    if (n <= p)
        throw InvalidArgument(stage, source + ": need n > p (n=" + std::to_string(n) + ", p=" + std::to_string(p) + ")");
    Matrix X(n, p);
    Vector Y(n);
    for (Index i = 0; i < n; ++i) {
        Y(i) = ys[static_cast<std::size_t>(i)];
        Index j = 0;
        if (add_intercept) X(i, j++) = 1.0;
        for (double v : xs[static_cast<std::size_t>(i)]) X(i, j++) = v;
    }
    return Dataset::make(std::move(X), std::move(Y), add_intercept);
}

inline Dataset load_dataset(const std::string& path, const std::string& y_column,
                            const std::vector<std::string>& x_columns, bool add_intercept) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("load_dataset", "cannot open '" + path + "'");
    return load_dataset(in, y_column, x_columns, add_intercept, path);
}

struct DesignReport {
    double max_row_norm = 0.0;
    double eig_min_H = 0.0;
    double eig_max_H = 0.0;
    bool general_position_ok = true;
    std::uint64_t sampled_subsets_checked = 0;
    bool exhaustive = false;
};

/// A p-subset is treated as singular when |det| is below 1e-12 times the
/// product of its row norms (Hadamard's bound).
inline bool subset_nonsingular(const Matrix& X, const std::vector<Index>& rows) {
    const Matrix Xh = rows_of(X, rows);
    double bound = 1.0;
    for (Index r = 0; r < Xh.rows(); ++r) bound *= Xh.row(r).norm();
    if (bound == 0.0) return false;
    return std::abs(Xh.partialPivLu().determinant()) > 1e-12 * bound;
}

inline DesignReport design_diagnostics(const Dataset& data, std::uint64_t subset_samples,
                                       std::uint64_t seed) {
    const Matrix& X = data.X();
    const Index n = data.n(), p = data.p();
    DesignReport rep;
    rep.max_row_norm = X.rowwise().norm().maxCoeff();
    const Matrix H = X.transpose() * X / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Matrix> es(H, Eigen::EigenvaluesOnly);
    rep.eig_min_H = es.eigenvalues().minCoeff();
    rep.eig_max_H = es.eigenvalues().maxCoeff();

    constexpr std::uint64_t exhaustive_cap = 100000;
    const std::uint64_t total = choose_capped(static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(p), exhaustive_cap);
    if (total <= exhaustive_cap) {
        rep.exhaustive = true;
        std::vector<Index> idx(static_cast<std::size_t>(p));
        std::iota(idx.begin(), idx.end(), Index{0});
        do {
            ++rep.sampled_subsets_checked;
            if (!subset_nonsingular(X, idx)) {
                rep.general_position_ok = false;
            }
        } while (next_combination(idx, n));
    } else {
        Stream s(derive_seed(seed, 0x47454e504f53ULL));
        std::vector<Index> all(static_cast<std::size_t>(n));
        for (std::uint64_t t = 0; t < subset_samples; ++t) {
            std::iota(all.begin(), all.end(), Index{0});
            // partial Fisher-Yates for a uniform p-subset
            for (Index j = 0; j < p; ++j) {
                const Index k = j + static_cast<Index>(s.below(static_cast<std::uint64_t>(n - j)));
                std::swap(all[static_cast<std::size_t>(j)], all[static_cast<std::size_t>(k)]);
            }
            std::vector<Index> idx(all.begin(), all.begin() + p);
            std::sort(idx.begin(), idx.end());
            ++rep.sampled_subsets_checked;
            if (!subset_nonsingular(X, idx)) rep.general_position_ok = false;
        }
    }
    return rep;
}

}  // namespace qrlab
