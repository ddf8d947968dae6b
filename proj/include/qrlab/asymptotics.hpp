#pragma once

// Asymptotic covariance of the regression quantile process under a fixed
// design: H_n, G_n(tau), the sandwich Sigma_n(tau), joint covariance blocks
// over a tau grid and Gaussian conditional increment moments.

#include "qrlab/common.hpp"
#include "qrlab/design_data.hpp"

#include <map>
#include <memory>

namespace qrlab {

inline Matrix compute_Hn(const Dataset& data) {
    return data.X().transpose() * data.X() / static_cast<double>(data.n());
}

/// (1/n) sum f_i x_i x_i'.
inline Matrix compute_Gn(const Dataset& data, const Vector& densities) {
    const char* stage = "compute_Gn";
    require(densities.size() == data.n(), stage, "need one density value per row");
    for (Index i = 0; i < densities.size(); ++i)
        if (!(densities(i) > 0.0))
            throw InvalidArgument(stage, "non-positive density at row " + std::to_string(i + 1));
    const Matrix& X = data.X();
    return X.transpose() * densities.asDiagonal() * X / static_cast<double>(data.n());
}

/// Oracle row densities f_i(x_i'beta(tau)) = f_e(F_e^-1(tau)) / (x_i'gamma).
inline Vector oracle_densities(const Dataset& data, const DGPSpec& dgp, double tau) {
    const double fe = dgp.error.pdf(dgp.error.quantile(tau));
    Vector f(data.n());
    for (Index i = 0; i < data.n(); ++i) {
        const double scale = data.X().row(i).dot(dgp.gamma);
        require(scale > 0.0, "oracle_densities", "x'gamma <= 0 at row " + std::to_string(i + 1));
        f(i) = fe / scale;
    }
    return f;
}

enum class CovarianceMode { oracle, plugin };

/// H_n together with tau -> G_n(tau). Oracle models evaluate G at any tau;
/// plug-in models only at the tau values they were estimated for.
class CovarianceModel {
public:
    static CovarianceModel oracle(const Dataset& data, const DGPSpec& dgp) {
        CovarianceModel m;
        m.mode_ = CovarianceMode::oracle;
        m.H_ = compute_Hn(data);
        auto shared = std::make_shared<const std::pair<Dataset, DGPSpec>>(data, dgp);
        m.G_ = [shared](double tau) {
            return compute_Gn(shared->first, oracle_densities(shared->first, shared->second, tau));
        };
        return m;
    }

    /// Plug-in model from G matrices estimated at specific tau values.
    static CovarianceModel plugin(const Dataset& data, std::map<double, Matrix> G_at) {
        CovarianceModel m;
        m.mode_ = CovarianceMode::plugin;
        m.H_ = compute_Hn(data);
        auto table = std::make_shared<const std::map<double, Matrix>>(std::move(G_at));
        m.G_ = [table](double tau) -> Matrix {
            for (const auto& [t, G] : *table)
                if (std::abs(t - tau) <= 1e-12) return G;
            throw InvalidArgument("covariance_model", "plug-in model has no estimate at tau=" + std::to_string(tau));
        };
        return m;
    }

    /// Direct construction from H and a G function.
    static CovarianceModel from_functions(Matrix H, std::function<Matrix(double)> G,
                                          CovarianceMode mode = CovarianceMode::oracle) {
        CovarianceModel m;
        m.mode_ = mode;
        m.H_ = std::move(H);
        m.G_ = std::move(G);
        return m;
    }

    CovarianceMode mode() const noexcept { return mode_; }
    const Matrix& H() const noexcept { return H_; }
    Matrix G(double tau) const { return G_(tau); }
    Index p() const noexcept { return H_.rows(); }

private:
    CovarianceMode mode_ = CovarianceMode::oracle;
    Matrix H_;
    std::function<Matrix(double)> G_;
};

namespace detail {

inline Matrix checked_inverse(const Matrix& G, const char* stage, double tau) {
    Eigen::FullPivLU<Matrix> lu(G);
    if (!lu.isInvertible() || lu.rcond() < 1e-14)
        throw ComputationError(stage, "singular G at tau=" + std::to_string(tau));
    return lu.inverse();
}

}  // namespace detail

/// tau(1-tau) G^-1 H G^-1.
inline Matrix sigma(const CovarianceModel& model, double tau) {
    require(tau > 0.0 && tau < 1.0, "sigma", "tau must lie in (0,1)");
    const Matrix Gi = detail::checked_inverse(model.G(tau), "sigma", tau);
    Matrix S = tau * (1.0 - tau) * Gi * model.H() * Gi.transpose();
    return 0.5 * (S + S.transpose());
}

struct GridCovariance {
    std::vector<double> grid;
    Index p = 0;
    Matrix cov;  // (m p) x (m p); block (i, j) = Cov(B(tau_i), B(tau_j))

    Index m() const { return static_cast<Index>(grid.size()); }
    Matrix block(Index i, Index j) const { return cov.block(i * p, j * p, p, p); }
};

inline double psd_tolerance(const Matrix& cov, Index m) {
    return 1e-8 * cov.trace() / static_cast<double>(std::max<Index>(m, 1));
}

/// Blocks tau_i (1 - tau_j) G(tau_i)^-1 H G(tau_j)^-1 for i <= j, mirrored.
inline GridCovariance grid_covariance(const CovarianceModel& model, const std::vector<double>& grid) {
    const char* stage = "grid_covariance";
    require(!grid.empty(), stage, "grid is empty");
    for (std::size_t j = 0; j < grid.size(); ++j) {
        require(grid[j] > 0.0 && grid[j] < 1.0, stage, "grid point outside (0,1)");
        if (j) require(grid[j] > grid[j - 1], stage, "grid must be strictly increasing");
    }
    const Index p = model.p();
    const Index m = static_cast<Index>(grid.size());
    std::vector<Matrix> Gi;
    Gi.reserve(grid.size());
    for (double t : grid) Gi.push_back(detail::checked_inverse(model.G(t), stage, t));
    GridCovariance out;
    out.grid = grid;
    out.p = p;
    out.cov.resize(m * p, m * p);
    for (Index i = 0; i < m; ++i) {
        for (Index j = i; j < m; ++j) {
            const double ti = grid[static_cast<std::size_t>(i)], tj = grid[static_cast<std::size_t>(j)];
            const Matrix blk = ti * (1.0 - tj) * Gi[static_cast<std::size_t>(i)] * model.H() *
                               Gi[static_cast<std::size_t>(j)].transpose();
            out.cov.block(i * p, j * p, p, p) = blk;
            out.cov.block(j * p, i * p, p, p) = blk.transpose();
        }
    }
    out.cov = 0.5 * (out.cov + out.cov.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(out.cov, Eigen::EigenvaluesOnly);
    const double min_eig = es.eigenvalues().minCoeff();
    if (min_eig < -psd_tolerance(out.cov, m))
        throw ComputationError(stage, "joint covariance is not PSD (min eigenvalue " + std::to_string(min_eig) + ")");
    return out;
}

/// Moments of an increment given B(tau1) = s. `increment` is
/// scale * (B(tau2) - B(tau1)); the conditional mean is coef * s.
struct ConditionalMoments {
    double tau1 = 0.0, tau2 = 0.0;
    double scale = 1.0;
    Matrix mean_coef;  // p x p
    Matrix cov;        // p x p
    Vector mean(const Vector& s) const { return mean_coef * s; }
};

enum class IncrementScaling {
    root_n,        // B(tau2) - B(tau1)
    gap_weighted,  // sqrt(tau2 - tau1) (B(tau2) - B(tau1))
};

inline ConditionalMoments conditional_increment_moments(const CovarianceModel& model, double tau1, double tau2,
                                                        IncrementScaling scaling = IncrementScaling::root_n) {
    const char* stage = "conditional_increment_moments";
    require(tau1 < tau2, stage, "need tau1 < tau2");
    const GridCovariance gc = grid_covariance(model, {tau1, tau2});
    const Matrix C11 = gc.block(0, 0), C12 = gc.block(0, 1), C22 = gc.block(1, 1);
    Eigen::LDLT<Matrix> ldlt(C11);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 1e-14 * C11.trace())
        throw ComputationError(stage, "Var(B(tau1)) is singular");
    const double k = scaling == IncrementScaling::root_n ? 1.0 : std::sqrt(tau2 - tau1);
    // D = k (B2 - B1): Cov(D, B1) = k (C21 - C11), Var(D) = k^2 (C22 - C12 - C21 + C11)
    const Matrix CDB = k * (C12.transpose() - C11);
    const Matrix VD = k * k * (C22 - C12 - C12.transpose() + C11);
    ConditionalMoments out;
    out.tau1 = tau1;
    out.tau2 = tau2;
    out.scale = k;
    out.mean_coef = ldlt.solve(CDB.transpose()).transpose();
    Matrix cc = VD - CDB * ldlt.solve(CDB.transpose());
    out.cov = 0.5 * (cc + cc.transpose());
    return out;
}

}  // namespace qrlab
