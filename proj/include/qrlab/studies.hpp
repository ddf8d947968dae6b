#pragma once

// Monte Carlo studies (coverage, density rate, lattice rate, coupling rate)
// and versioned report persistence.

#include "qrlab/config.hpp"
#include "qrlab/coupling_lab.hpp"
#include "qrlab/density_lab.hpp"
#include "qrlab/inference.hpp"
#include "qrlab/rate_fit.hpp"
#include "qrlab/report_io.hpp"

#include <fstream>
#include <optional>

namespace qrlab {

inline constexpr int kReportSchemaVersion = 1;

enum class StudyKind { coverage, density_rate, lattice_rate, coupling_rate };
enum class BandwidthRule { hs, fixed, oracle };

inline std::string to_string(StudyKind k) {
    switch (k) {
        case StudyKind::coverage: return "coverage";
        case StudyKind::density_rate: return "density_rate";
        case StudyKind::lattice_rate: return "lattice_rate";
        case StudyKind::coupling_rate: return "coupling_rate";
    }
    return "?";
}

inline std::string to_string(BandwidthRule r) {
    switch (r) {
        case BandwidthRule::hs: return "hs";
        case BandwidthRule::fixed: return "fixed";
        case BandwidthRule::oracle: return "oracle";
    }
    return "?";
}

struct StudySpec {
    StudyKind kind = StudyKind::coverage;
    DGPSpec dgp;
    std::vector<long> n_list;
    long M = 1000;
    double tau = 0.5;
    double alpha = 0.05;
    std::vector<double> a;  // contrast; empty means e_1
    BandwidthRule bandwidth = BandwidthRule::hs;
    std::optional<double> c;  // hs constant; default Hall-Sheather
    double h = 0.0;           // fixed bandwidth
    int order = 1;
    std::uint64_t seed = 1;
    unsigned threads = 1;     // never affects results

    // density_rate
    DeltaGridSpec delta_grid;
    std::uint64_t design_seed = 1;
    // lattice_rate
    double lattice_p = 0.5;
    double interval_scale = 1.0;  // |J| = floor(interval_scale sqrt(n))
    // coupling_rate
    GridSpec grid;
    long k_neighbors = 200;

    Vector contrast() const {
        Vector v = Vector::Zero(dgp.p());
        if (a.empty()) {
            v(0) = 1.0;
            return v;
        }
        require(static_cast<Index>(a.size()) == dgp.p(), "study_spec", "contrast a must have length p");
        for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Index>(i)) = a[i];
        return v;
    }

    void validate() const {
        const char* stage = "study_spec";
        require(!n_list.empty(), stage, "n_list is empty");
        for (std::size_t i = 1; i < n_list.size(); ++i)
            require(n_list[i] > n_list[i - 1], stage, "n_list must be strictly increasing");
        if (kind == StudyKind::coverage)
            require(M >= 100, stage, "M must be at least 100 for coverage studies, got " + std::to_string(M));
        require(M >= 1, stage, "M must be positive");
        require(tau > 0.0 && tau < 1.0, stage, "tau must lie in (0,1)");
        require(alpha > 0.0 && alpha < 0.5, stage, "alpha must lie in (0,0.5)");
        require(order == 1 || order == 2, stage, "order must be 1 or 2");
        if (kind != StudyKind::lattice_rate) {
            dgp.validate();
            (void)contrast();
        }
        if (bandwidth == BandwidthRule::fixed) require(h > 0.0, stage, "fixed bandwidth h must be positive");
        if (c) require(*c > 0.0, stage, "bandwidth constant c must be positive");
        require(lattice_p > 0.0 && lattice_p < 1.0, stage, "lattice_p must lie in (0,1)");
    }
};

inline const std::set<std::string>& study_config_keys() {
    static const std::set<std::string> keys = [] {
        std::set<std::string> k{"kind",        "n_list",      "M",         "tau",       "alpha",        "a",
                                "bandwidth",   "c",           "h",         "order",     "seed",         "threads",
                                "width",       "points",      "design_seed", "lattice_p", "interval_scale",
                                "epsilon",     "level",       "b",         "k_neighbors"};
        for (const auto& d : dgp_config_keys()) k.insert(d);
        return k;
    }();
    return keys;
}

inline StudySpec study_spec_from_config(const KeyValueConfig& cfg) {
    cfg.check_keys(study_config_keys());
    StudySpec s;
    const std::string kind = cfg.get("kind");
    if (kind == "coverage") s.kind = StudyKind::coverage;
    else if (kind == "density_rate") s.kind = StudyKind::density_rate;
    else if (kind == "lattice_rate") s.kind = StudyKind::lattice_rate;
    else if (kind == "coupling_rate") s.kind = StudyKind::coupling_rate;
    else throw InvalidArgument("study_spec", "unknown kind '" + kind + "'");
    if (s.kind != StudyKind::lattice_rate || cfg.has("b0")) s.dgp = DGPSpec::from_config(cfg);
    for (double v : parse_double_list(cfg.get("n_list"), "n_list")) {
        if (v != std::floor(v) || v < 1.0) throw InvalidArgument("study_spec", "n_list entries must be positive integers");
        s.n_list.push_back(static_cast<long>(v));
    }
    if (cfg.has("M")) s.M = static_cast<long>(parse_int(cfg.get("M"), "M"));
    if (cfg.has("tau")) s.tau = parse_double(cfg.get("tau"), "tau");
    if (cfg.has("alpha")) s.alpha = parse_double(cfg.get("alpha"), "alpha");
    if (cfg.has("a")) s.a = parse_double_list(cfg.get("a"), "a");
    if (cfg.has("bandwidth")) {
        const std::string b = cfg.get("bandwidth");
        if (b == "hs") s.bandwidth = BandwidthRule::hs;
        else if (b == "fixed") s.bandwidth = BandwidthRule::fixed;
        else if (b == "oracle") s.bandwidth = BandwidthRule::oracle;
        else throw InvalidArgument("study_spec", "bandwidth must be hs, fixed or oracle, got '" + b + "'");
    }
    if (cfg.has("c")) s.c = parse_double(cfg.get("c"), "c");
    if (cfg.has("h")) s.h = parse_double(cfg.get("h"), "h");
    if (cfg.has("order")) s.order = static_cast<int>(parse_int(cfg.get("order"), "order"));
    if (cfg.has("seed")) s.seed = static_cast<std::uint64_t>(parse_int(cfg.get("seed"), "seed"));
    if (cfg.has("threads")) s.threads = static_cast<unsigned>(parse_int(cfg.get("threads"), "threads"));
    if (cfg.has("width")) s.delta_grid.width = parse_double(cfg.get("width"), "width");
    if (cfg.has("points")) s.delta_grid.points = static_cast<int>(parse_int(cfg.get("points"), "points"));
    if (cfg.has("design_seed")) s.design_seed = static_cast<std::uint64_t>(parse_int(cfg.get("design_seed"), "design_seed"));
    if (cfg.has("lattice_p")) s.lattice_p = parse_double(cfg.get("lattice_p"), "lattice_p");
    if (cfg.has("interval_scale")) s.interval_scale = parse_double(cfg.get("interval_scale"), "interval_scale");
    if (cfg.has("epsilon")) s.grid.epsilon = parse_double(cfg.get("epsilon"), "epsilon");
    if (cfg.has("level")) s.grid.level = static_cast<int>(parse_int(cfg.get("level"), "level"));
    if (cfg.has("b")) s.grid.b = parse_double(cfg.get("b"), "b");
    if (cfg.has("k_neighbors")) s.k_neighbors = static_cast<long>(parse_int(cfg.get("k_neighbors"), "k_neighbors"));
    s.validate();
    return s;
}

// ---------------------------------------------------------------------------
// Reports

struct CoverageRow {
    long n = 0;
    long replications = 0;  // successful
    long failures = 0;
    long covered = 0;
    double coverage = 0.0;
    double mc_se = 0.0;
    double mean_width = 0.0;
    double clamp_rate = 0.0;
    bool operator==(const CoverageRow&) const = default;
};

struct CoverageReport {
    double tau = 0.5;
    double alpha = 0.05;
    double nominal = 0.9;
    std::string bandwidth;
    int order = 1;
    std::uint64_t seed = 0;
    std::vector<CoverageRow> rows;
    bool operator==(const CoverageReport&) const = default;
};

struct DensityRateRow {
    long n = 0;
    double sup_ratio_error = 0.0;
    long points = 0;
    long boundary_ties = 0;
    bool operator==(const DensityRateRow&) const = default;
};

struct RateSummary {
    double exponent = 0.0;
    double stderr_ = 0.0;
    double r_squared = 0.0;
    std::vector<double> n_used;
    bool operator==(const RateSummary&) const = default;
};

inline RateSummary summarize(const RateFit& f) { return {f.exponent, f.stderr_, f.r_squared, f.n_used}; }

struct DensityRateReport {
    double tau = 0.5;
    double width = 0.0;
    std::vector<DensityRateRow> rows;
    std::optional<RateSummary> rate;
    bool operator==(const DensityRateReport&) const = default;
};

struct LatticeRateRow {
    long n = 0;
    long w = 0;
    long interval_length = 0;
    double abs_rel_err = 0.0;
    bool operator==(const LatticeRateRow&) const = default;
};

struct LatticeRateReport {
    double prob = 0.5;
    std::vector<LatticeRateRow> rows;
    std::optional<RateSummary> rate;
    bool operator==(const LatticeRateReport&) const = default;
};

struct CouplingStudyRow {
    long n = 0;
    double median_sup_error = 0.0;
    double mean_sup_error = 0.0;
    double median_ks = 0.0;
    double energy = 0.0;
    long failures = 0;
    bool operator==(const CouplingStudyRow&) const = default;
};

struct CouplingStudyReport {
    double epsilon = 0.0;
    int level = 0;
    long M = 0;
    long k_neighbors = 0;
    std::vector<CouplingStudyRow> rows;
    std::optional<RateSummary> rate;
    bool operator==(const CouplingStudyReport&) const = default;
};

// ---------------------------------------------------------------------------
// Runners

/// Coverage of the interval a'beta_hat(tau) +/- z_alpha s_a for the true
/// a'beta(tau). The design is drawn once per n; responses are redrawn in
/// every replication.
inline CoverageReport run_coverage_study(const StudySpec& spec) {
    const char* stage = "run_coverage_study";
    require(spec.kind == StudyKind::coverage, stage, "spec.kind must be coverage");
    spec.validate();
    const Vector a = spec.contrast();
    const double truth = a.dot(true_beta(spec.dgp, spec.tau));
    CIOptions opt;
    opt.order = spec.order;
    opt.c = spec.c;
    if (spec.bandwidth == BandwidthRule::fixed) opt.fixed_bandwidth = spec.h;
    if (spec.bandwidth == BandwidthRule::oracle) opt.oracle_sparsity = true_beta_derivative(spec.dgp, spec.tau);

    CoverageReport rep;
    rep.tau = spec.tau;
    rep.alpha = spec.alpha;
    rep.nominal = 1.0 - 2.0 * spec.alpha;
    rep.bandwidth = to_string(spec.bandwidth);
    rep.order = spec.order;
    rep.seed = spec.seed;

    struct Outcome {
        bool ok = false;
        bool covered = false;
        double width = 0.0;
        bool clamped = false;
    };
    for (long n : spec.n_list) {
        require(n > spec.dgp.p(), stage, "need n > p");
        const std::uint64_t n_seed = derive_seed(spec.seed, 0x434f56ULL, static_cast<std::uint64_t>(n));
        const Matrix X = simulate_design(spec.dgp.p(), n, n_seed);
        const Dataset design = Dataset::make(X, Vector::Zero(n), true);
        std::vector<Outcome> out(static_cast<std::size_t>(spec.M));
        parallel_for(out.size(), spec.threads, [&](std::size_t r) {
            try {
                const Dataset d = design.with_responses(simulate_responses(spec.dgp, X, derive_seed(n_seed, 0x524550ULL, r)));
                const CIResult ci = confidence_interval(d, spec.tau, a, spec.alpha, opt);
                out[r] = {true, ci.lo <= truth && truth <= ci.hi, ci.hi - ci.lo, ci.clamp_count > 0};
            } catch (const Error&) {
                out[r] = {};
            }
        });
        CoverageRow row;
        row.n = n;
        double width = 0.0;
        long clamped = 0;
        for (const auto& o : out) {
            if (!o.ok) {
                ++row.failures;
                continue;
            }
            ++row.replications;
            row.covered += o.covered ? 1 : 0;
            width += o.width;
            clamped += o.clamped ? 1 : 0;
        }
        if (static_cast<double>(row.failures) > 0.01 * static_cast<double>(spec.M))
            throw ComputationError(stage, "failure budget exceeded at n=" + std::to_string(n) + ": " +
                                              std::to_string(row.failures) + " of " + std::to_string(spec.M) +
                                              " replications failed");
        const double m = static_cast<double>(row.replications);
        row.coverage = static_cast<double>(row.covered) / m;
        row.mc_se = std::sqrt(row.coverage * (1.0 - row.coverage) / m);
        row.mean_width = width / m;
        row.clamp_rate = static_cast<double>(clamped) / m;
        rep.rows.push_back(row);
    }
    return rep;
}

inline DensityRateReport run_density_rate_study(const StudySpec& spec) {
    require(spec.kind == StudyKind::density_rate, "run_density_rate_study", "spec.kind must be density_rate");
    spec.validate();
    DensityOptions opt;
    opt.threads = spec.threads;
    const auto profiles = density_ratio_profile(spec.dgp, spec.n_list, spec.tau, spec.delta_grid, spec.design_seed, opt);
    DensityRateReport rep;
    rep.tau = spec.tau;
    rep.width = spec.delta_grid.width;
    std::vector<double> ns, errs;
    for (const auto& pr : profiles) {
        rep.rows.push_back({pr.n, pr.sup_abs_ratio_error(), static_cast<long>(pr.deltas.size()), pr.boundary_ties});
        ns.push_back(static_cast<double>(pr.n));
        errs.push_back(pr.sup_abs_ratio_error());
    }
    if (ns.size() >= 3) rep.rate = summarize(fit_rate(ns, errs));
    return rep;
}

/// Shift schedule w(n) = floor(sqrt(n log n) / 2).
inline long lattice_shift(long n) {
    return static_cast<long>(std::floor(std::sqrt(static_cast<double>(n) * std::log(static_cast<double>(n))) / 2.0));
}

/// For each n: the largest |rel_err| over intervals J of length
/// floor(scale sqrt(n)) containing n p, shifted by w(n).
inline LatticeRateReport run_lattice_rate_study(const StudySpec& spec) {
    require(spec.kind == StudyKind::lattice_rate, "run_lattice_rate_study", "spec.kind must be lattice_rate");
    spec.validate();
    LatticeRateReport rep;
    rep.prob = spec.lattice_p;
    std::vector<double> ns, errs;
    for (long n : spec.n_list) {
        const long w = lattice_shift(n);
        const long len = std::max(1L, static_cast<long>(std::floor(spec.interval_scale * std::sqrt(static_cast<double>(n)))));
        const double e = binomial_worst_interval_error(n, spec.lattice_p, len, w);
        rep.rows.push_back({n, w, len, e});
        ns.push_back(static_cast<double>(n));
        errs.push_back(e);
    }
    if (ns.size() >= 3) rep.rate = summarize(fit_rate(ns, errs));
    return rep;
}

inline CouplingStudyReport run_coupling_rate_study(const StudySpec& spec) {
    require(spec.kind == StudyKind::coupling_rate, "run_coupling_rate_study", "spec.kind must be coupling_rate");
    spec.validate();
    CouplingOptions opt;
    opt.k_neighbors = spec.k_neighbors;
    opt.threads = spec.threads;
    const CouplingRateResult res = coupling_rate_study(spec.dgp, spec.n_list, spec.grid, spec.M, spec.seed, opt);
    CouplingStudyReport rep;
    rep.epsilon = spec.grid.epsilon;
    rep.level = spec.grid.level;
    rep.M = spec.M;
    rep.k_neighbors = spec.k_neighbors;
    for (const auto& r : res.rows)
        rep.rows.push_back({r.n, r.median_sup_error, r.mean_sup_error, r.median_ks, r.energy, r.failures});
    if (res.rate) rep.rate = summarize(*res.rate);
    return rep;
}

// ---------------------------------------------------------------------------
// JSON conversions

inline Json rate_to_json(const std::optional<RateSummary>& r) {
    if (!r) return nullptr;
    return Json{{"exponent", r->exponent}, {"stderr", r->stderr_}, {"r_squared", r->r_squared}, {"n_used", r->n_used}};
}

inline std::optional<RateSummary> rate_from_json(const Json& j) {
    if (j.is_null()) return std::nullopt;
    return RateSummary{j.at("exponent").get<double>(), j.at("stderr").get<double>(), j.at("r_squared").get<double>(),
                       j.at("n_used").get<std::vector<double>>()};
}

inline Json to_json(const CoverageReport& r) {
    Json rows = Json::array();
    for (const auto& x : r.rows)
        rows.push_back({{"n", x.n},
                        {"replications", x.replications},
                        {"failures", x.failures},
                        {"covered", x.covered},
                        {"coverage", x.coverage},
                        {"mc_se", x.mc_se},
                        {"mean_width", x.mean_width},
                        {"clamp_rate", x.clamp_rate}});
    return Json{{"tau", r.tau},     {"alpha", r.alpha}, {"nominal", r.nominal}, {"bandwidth", r.bandwidth},
                {"order", r.order}, {"seed", r.seed},   {"rows", rows}};
}

inline void from_json_into(const Json& j, CoverageReport& r) {
    r.tau = j.at("tau");
    r.alpha = j.at("alpha");
    r.nominal = j.at("nominal");
    r.bandwidth = j.at("bandwidth");
    r.order = j.at("order");
    r.seed = j.at("seed");
    r.rows.clear();
    for (const auto& x : j.at("rows"))
        r.rows.push_back({x.at("n"), x.at("replications"), x.at("failures"), x.at("covered"), x.at("coverage"),
                          x.at("mc_se"), x.at("mean_width"), x.at("clamp_rate")});
}

inline Json to_json(const DensityRateReport& r) {
    Json rows = Json::array();
    for (const auto& x : r.rows)
        rows.push_back({{"n", x.n}, {"sup_ratio_error", x.sup_ratio_error}, {"points", x.points}, {"boundary_ties", x.boundary_ties}});
    return Json{{"tau", r.tau}, {"width", r.width}, {"rows", rows}, {"rate", rate_to_json(r.rate)}};
}

inline void from_json_into(const Json& j, DensityRateReport& r) {
    r.tau = j.at("tau");
    r.width = j.at("width");
    r.rows.clear();
    for (const auto& x : j.at("rows"))
        r.rows.push_back({x.at("n"), x.at("sup_ratio_error"), x.at("points"), x.at("boundary_ties")});
    r.rate = rate_from_json(j.at("rate"));
}

inline Json to_json(const LatticeRateReport& r) {
    Json rows = Json::array();
    for (const auto& x : r.rows)
        rows.push_back({{"n", x.n}, {"w", x.w}, {"interval_length", x.interval_length}, {"abs_rel_err", x.abs_rel_err}});
    return Json{{"prob", r.prob}, {"rows", rows}, {"rate", rate_to_json(r.rate)}};
}

inline void from_json_into(const Json& j, LatticeRateReport& r) {
    r.prob = j.at("prob");
    r.rows.clear();
    for (const auto& x : j.at("rows")) r.rows.push_back({x.at("n"), x.at("w"), x.at("interval_length"), x.at("abs_rel_err")});
    r.rate = rate_from_json(j.at("rate"));
}

inline Json to_json(const CouplingStudyReport& r) {
    Json rows = Json::array();
    for (const auto& x : r.rows)
        rows.push_back({{"n", x.n},
                        {"median_sup_error", x.median_sup_error},
                        {"mean_sup_error", x.mean_sup_error},
                        {"median_ks", x.median_ks},
                        {"energy_distance", x.energy},
                        {"failures", x.failures}});
    return Json{{"epsilon", r.epsilon}, {"level", r.level}, {"M", r.M}, {"k_neighbors", r.k_neighbors},
                {"rows", rows},         {"rate", rate_to_json(r.rate)}};
}

inline void from_json_into(const Json& j, CouplingStudyReport& r) {
    r.epsilon = j.at("epsilon");
    r.level = j.at("level");
    r.M = j.at("M");
    r.k_neighbors = j.at("k_neighbors");
    r.rows.clear();
    for (const auto& x : j.at("rows"))
        r.rows.push_back({x.at("n"), x.at("median_sup_error"), x.at("mean_sup_error"), x.at("median_ks"),
                          x.at("energy_distance"), x.at("failures")});
    r.rate = rate_from_json(j.at("rate"));
}

template <class R> constexpr const char* report_kind();
template <> constexpr const char* report_kind<CoverageReport>() { return "coverage"; }
template <> constexpr const char* report_kind<DensityRateReport>() { return "density_rate"; }
template <> constexpr const char* report_kind<LatticeRateReport>() { return "lattice_rate"; }
template <> constexpr const char* report_kind<CouplingStudyReport>() { return "coupling_rate"; }

/// Versioned envelope around a report; rejects non-finite numbers.
template <class R>
std::string serialize_report(const R& report) {
    Json body = to_json(report);
    reject_non_finite(body);
    Json doc{{"schema_version", kReportSchemaVersion}, {"kind", report_kind<R>()}, {"report", body}};
    return doc.dump(2) + "\n";
}

template <class R>
R deserialize_report(const std::string& text) {
    const char* stage = "load_report";
    Json doc;
    try {
        doc = Json::parse(text);
    } catch (const std::exception& e) {
        throw InvalidArgument(stage, std::string("malformed report: ") + e.what());
    }
    if (!doc.contains("schema_version") || !doc["schema_version"].is_number_integer())
        throw InvalidArgument(stage, "report has no schema_version");
    const int v = doc["schema_version"].get<int>();
    if (v != kReportSchemaVersion)
        throw InvalidArgument(stage, "schema version mismatch: file has " + std::to_string(v) + ", expected " +
                                         std::to_string(kReportSchemaVersion));
    if (doc.value("kind", std::string()) != report_kind<R>())
        throw InvalidArgument(stage, "report kind is '" + doc.value("kind", std::string()) + "', expected '" +
                                         report_kind<R>() + "'");
    R r;
    try {
        from_json_into(doc.at("report"), r);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(stage, std::string("bad report field: ") + e.what());
    }
    return r;
}

template <class R>
void persist_report(const R& report, const std::string& path) {
    const std::string text = serialize_report(report);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidArgument("persist_report", "cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw ComputationError("persist_report", "write to '" + path + "' failed");
}

template <class R>
R load_report(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidArgument("load_report", "cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return deserialize_report<R>(ss.str());
}

/// Flat delimited table of a coverage report.
inline void write_coverage_csv(std::ostream& os, const CoverageReport& r) {
    os.precision(17);
    os << "n,replications,failures,coverage,mc_se,mean_width,clamp_rate,nominal\n";
    for (const auto& x : r.rows)
        os << x.n << "," << x.replications << "," << x.failures << "," << x.coverage << "," << x.mc_se << ","
           << x.mean_width << "," << x.clamp_rate << "," << r.nominal << "\n";
}

}  // namespace qrlab
