#pragma once

// Structured (JSON) representations of fits, intervals and diagnostics.
// Matrices are written row-major as lists of rows.

#include "qrlab/asymptotics.hpp"
#include "qrlab/coupling_lab.hpp"
#include "qrlab/density_lab.hpp"
#include "qrlab/design_data.hpp"
#include "qrlab/inference.hpp"
#include "qrlab/solver.hpp"

#include <json.hpp>

namespace qrlab {

using Json = nlohmann::json;

inline Json to_json(const Vector& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

inline Json to_json(const Matrix& m) {
    Json rows = Json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        std::vector<double> r(static_cast<std::size_t>(m.cols()));
        for (Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(i, j);
        rows.push_back(r);
    }
    return rows;
}

inline Vector vector_from_json(const Json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

inline Matrix matrix_from_json(const Json& j) {
    const Index r = static_cast<Index>(j.size());
    const Index c = r ? static_cast<Index>(j[0].size()) : 0;
    Matrix m(r, c);
    for (Index i = 0; i < r; ++i) {
        const auto row = j[static_cast<std::size_t>(i)].get<std::vector<double>>();
        if (static_cast<Index>(row.size()) != c) throw InvalidArgument("load_report", "ragged matrix");
        for (Index k = 0; k < c; ++k) m(i, k) = row[static_cast<std::size_t>(k)];
    }
    return m;
}

inline Json to_json(const QuantileFit& f) {
    std::vector<long long> basis(f.basis.begin(), f.basis.end());
    return Json{{"tau", f.tau},
                {"beta_hat", to_json(f.beta_hat)},
                {"basis", basis},
                {"objective", f.objective},
                {"pivot_count", f.pivot_count},
                {"degenerate", f.degenerate}};
}

inline Json to_json(const ProcessFit& p) {
    Json fits = Json::array();
    for (const auto& f : p.fits) fits.push_back(to_json(f));
    return Json{{"grid", p.grid}, {"b_values", to_json(p.b_values)}, {"centered", p.centered}, {"fits", fits}};
}

inline Json to_json(const CIResult& c) {
    return Json{{"tau", c.tau},
                {"a", to_json(c.a)},
                {"point", c.point},
                {"se", c.se},
                {"lo", c.lo},
                {"hi", c.hi},
                {"alpha", c.alpha},
                {"z_alpha", c.z_alpha},
                {"nominal_coverage", c.nominal_coverage()},
                {"bandwidth_used", c.bandwidth_used},
                {"order", c.order},
                {"clamp_count", c.clamp_count},
                {"delta_hat", to_json(c.delta_hat)},
                {"oracle_sparsity", c.oracle_sparsity}};
}

inline Json to_json(const DesignReport& d) {
    return Json{{"max_row_norm", d.max_row_norm},
                {"eig_min_H", d.eig_min_H},
                {"eig_max_H", d.eig_max_H},
                {"general_position_ok", d.general_position_ok},
                {"sampled_subsets_checked", d.sampled_subsets_checked},
                {"exhaustive", d.exhaustive}};
}

inline Json to_json(const GridCovariance& g) {
    return Json{{"grid", g.grid}, {"p", g.p}, {"cov", to_json(g.cov)}};
}

inline Json to_json(const DensityProfile& d) {
    Json deltas = Json::array();
    for (const auto& v : d.deltas) deltas.push_back(to_json(v));
    return Json{{"n", d.n},
                {"tau", d.tau},
                {"deltas", deltas},
                {"f_exact", d.f_exact},
                {"f_normal", d.f_normal},
                {"ratio_minus_1", d.ratio_minus_1},
                {"sup_abs_ratio_error", d.sup_abs_ratio_error()},
                {"boundary_ties", d.boundary_ties}};
}

inline Json to_json(const CouplingReport& c) {
    return Json{{"n", c.n},
                {"M", c.M},
                {"grid", c.grid},
                {"p", c.p},
                {"ks", c.ks},
                {"sup_errors", c.sup_errors},
                {"mean_sup_error", c.mean_sup_error()},
                {"median_sup_error", c.median_sup_error()},
                {"energy_distance", c.energy}};
}

/// Delimited export of a coupling report: one line per replication.
inline void write_coupling_csv(std::ostream& os, const CouplingReport& c) {
    os.precision(17);
    os << "replication,sup_error\n";
    for (std::size_t r = 0; r < c.sup_errors.size(); ++r) os << r << "," << c.sup_errors[r] << "\n";
}

/// Throws naming the first non-finite number found (NaN-guard policy).
inline void reject_non_finite(const Json& j, const std::string& path = "") {
    if (j.is_number_float()) {
        if (!std::isfinite(j.get<double>()))
            throw InvalidArgument("persist_report", "non-finite value in field '" + (path.empty() ? "<root>" : path) + "'");
    } else if (j.is_object()) {
        for (auto it = j.begin(); it != j.end(); ++it)
            reject_non_finite(it.value(), path.empty() ? it.key() : path + "." + it.key());
    } else if (j.is_array()) {
        for (std::size_t i = 0; i < j.size(); ++i) reject_non_finite(j[i], path + "[" + std::to_string(i) + "]");
    }
}

}  // namespace qrlab
