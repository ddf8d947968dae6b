// qrlab: command-line front end. Data goes to stdout or --out, diagnostics
// to stderr. Exit codes: 0 success, 1 usage error, 2 computation error.

#include "qrlab/qrlab.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <random>

using namespace qrlab;

namespace {

struct Common {
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
    bool pretty = false;
    std::string out;
};

struct DataArgs {
    std::string path;
    std::string y;
    std::vector<std::string> x;
    bool no_intercept = false;
};

struct ModelArgs {
    std::string config;
    double tau = 0.5;
    double alpha = 0.05;
    int order = 1;
    std::optional<double> c;
    std::optional<double> h;
    std::vector<double> a;
    std::vector<double> grid;
    long n = 0;
    long M = 1000;
    double epsilon = 0.2;
    int level = 2;
    double b = 0.9;
    long k = 200;
    double width = 0.5;
    int points = 21;
    std::uint64_t design_seed = 1;
    double prob = 0.5;
    long j_lo = 0, j_hi = 0, w = 0;
    std::uint64_t subsets = 10000;
    std::string csv;
};

CLI::Validator open_interval(double lo, double hi) {
    return CLI::Validator(
        [lo, hi](std::string& s) -> std::string {
            double v = 0.0;
            try {
                std::size_t pos = 0;
                v = std::stod(s, &pos);
                if (pos != s.size()) throw std::invalid_argument(s);
            } catch (const std::exception&) {
                return "'" + s + "' is not a number";
            }
            if (!(v > lo && v < hi))
                return s + " is outside the valid range (" + CLI::detail::to_string(lo) + ", " +
                       CLI::detail::to_string(hi) + ")";
            return {};
        },
        "in (" + CLI::detail::to_string(lo) + ", " + CLI::detail::to_string(hi) + ")");
}

std::uint64_t resolve_seed(const Common& c) {
    if (c.seed) return *c.seed;
    const std::uint64_t s = (static_cast<std::uint64_t>(std::random_device{}()) << 32) ^ std::random_device{}();
    std::cerr << "seed: " << s << "\n";
    return s;
}

void pretty_print(std::ostream& os, const Json& j, const std::string& indent = "") {
    if (!j.is_object()) {
        os << indent << j.dump() << "\n";
        return;
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.value().is_object()) {
            os << indent << it.key() << ":\n";
            pretty_print(os, it.value(), indent + "  ");
        } else if (it.value().is_array() && !it.value().empty() && it.value()[0].is_object()) {
            os << indent << it.key() << ":\n";
            for (const auto& e : it.value()) {
                pretty_print(os, e, indent + "  ");
                os << indent << "  --\n";
            }
        } else {
            os << indent << it.key() << ": " << it.value().dump() << "\n";
        }
    }
}

void write_text(const std::string& text, const std::string& path) {
    if (path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InvalidArgument("--out", "cannot open '" + path + "' for writing");
    f << text;
}

void emit(const Json& j, const Common& c) {
    reject_non_finite(j);
    std::ostringstream os;
    if (c.pretty) pretty_print(os, j);
    else os << j.dump() << "\n";
    write_text(os.str(), c.out);
}

Dataset load(const DataArgs& d) {
    if (d.path.empty()) throw InvalidArgument("--data", "a data file is required");
    if (d.y.empty()) throw InvalidArgument("--y", "the response column is required");
    return load_dataset(d.path, d.y, d.x, !d.no_intercept);
}

Vector contrast(const std::vector<double>& a, Index p) {
    if (a.empty()) return Vector::Unit(p, 0);
    if (static_cast<Index>(a.size()) != p)
        throw InvalidArgument("--a", "contrast has " + std::to_string(a.size()) + " entries, expected p = " +
                                         std::to_string(p));
    return Eigen::Map<const Vector>(a.data(), p);
}

DGPSpec load_dgp(const std::string& path) {
    if (path.empty()) throw InvalidArgument("--config", "a DGP config file is required");
    const KeyValueConfig cfg = KeyValueConfig::load(path);
    cfg.check_keys(dgp_config_keys());
    return DGPSpec::from_config(cfg);
}

int run_study(const std::string& config, const Common& c, const std::string& csv) {
    if (config.empty()) throw InvalidArgument("--config", "a study config file is required");
    KeyValueConfig cfg = KeyValueConfig::load(config);
    if (c.seed) cfg.set("seed", std::to_string(*c.seed));
    else if (!cfg.has("seed")) cfg.set("seed", std::to_string(resolve_seed(c)));
    StudySpec spec = study_spec_from_config(cfg);
    spec.threads = c.threads;
    std::string text;
    switch (spec.kind) {
    case StudyKind::coverage: {
        const auto rep = run_coverage_study(spec);
        text = serialize_report(rep);
        if (!csv.empty()) {
            std::ofstream f(csv);
            if (!f) throw InvalidArgument("--csv", "cannot open '" + csv + "' for writing");
            write_coverage_csv(f, rep);
        }
        if (c.pretty)
            for (const auto& r : rep.rows)
                std::cerr << "n=" << r.n << " coverage=" << r.coverage << " +- " << r.mc_se << " (nominal "
                          << rep.nominal << ")\n";
        break;
    }
    case StudyKind::density_rate: text = serialize_report(run_density_rate_study(spec)); break;
    case StudyKind::lattice_rate: text = serialize_report(run_lattice_rate_study(spec)); break;
    case StudyKind::coupling_rate: text = serialize_report(run_coupling_rate_study(spec)); break;
    }
    write_text(text, c.out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quantile-regression inference lab"};
    app.require_subcommand(1);
    Common com;
    DataArgs data;
    ModelArgs m;

    auto add_common = [&](CLI::App* s) {
        s->add_option("--seed", com.seed, "random seed (printed to stderr when omitted)");
        s->add_option("--threads", com.threads, "worker threads")->check(CLI::Range(1u, 1024u));
        s->add_flag("--pretty", com.pretty, "human-readable output");
        s->add_option("--out", com.out, "output path (default stdout)");
    };
    auto add_data = [&](CLI::App* s) {
        s->add_option("--data", data.path, "comma-separated input with header")->check(CLI::ExistingFile);
        s->add_option("--y", data.y, "response column");
        s->add_option("--x", data.x, "covariate columns")->delimiter(',');
        s->add_flag("--no-intercept", data.no_intercept, "do not prepend an intercept column");
    };
    auto add_tau = [&](CLI::App* s) { s->add_option("--tau", m.tau, "quantile level")->check(open_interval(0, 1)); };

    auto* fit = app.add_subcommand("fit", "fit one regression quantile");
    add_common(fit);
    add_data(fit);
    add_tau(fit);

    auto* process = app.add_subcommand("process", "fit the quantile process on a grid");
    add_common(process);
    add_data(process);
    process->add_option("--grid", m.grid, "increasing tau values in (0,1)")->delimiter(',')->required();

    auto* ci = app.add_subcommand("ci", "confidence interval for a'beta(tau)");
    add_common(ci);
    add_data(ci);
    add_tau(ci);
    ci->add_option("--alpha", m.alpha, "tail probability; nominal coverage 1 - 2 alpha")->check(open_interval(0, 0.5));
    ci->add_option("--order", m.order, "difference order")->check(CLI::IsMember({1, 2}));
    ci->add_option("--c", m.c, "bandwidth constant (default Hall-Sheather)")->check(CLI::PositiveNumber);
    ci->add_option("--bandwidth", m.h, "fixed bandwidth, overrides --c")->check(CLI::PositiveNumber);
    ci->add_option("--a", m.a, "contrast (default e_1)")->delimiter(',');

    auto* density = app.add_subcommand("density", "exact vs normal density profile");
    add_common(density);
    add_tau(density);
    density->add_option("--config", m.config, "DGP config (b0, gamma, error_dist, df)")->check(CLI::ExistingFile);
    density->add_option("--n", m.n, "sample size")->required()->check(CLI::Range(2L, 64L));
    density->add_option("--width", m.width, "window half-width in sqrt(log n) units")->check(CLI::NonNegativeNumber);
    density->add_option("--points", m.points, "grid points per axis")->check(CLI::Range(1, 201));
    density->add_option("--design-seed", m.design_seed, "design seed for p > 1");
    density->add_option("--csv", m.csv, "also write a delimited table");

    auto* lattice = app.add_subcommand("lattice", "binomial interval probability vs normal");
    add_common(lattice);
    lattice->add_option("--n", m.n, "binomial size")->required()->check(CLI::PositiveNumber);
    lattice->add_option("--p", m.prob, "success probability")->check(open_interval(0, 1));
    lattice->add_option("--lo", m.j_lo, "interval start")->required();
    lattice->add_option("--hi", m.j_hi, "interval end")->required();
    lattice->add_option("--w", m.w, "shift");

    auto* coupling = app.add_subcommand("coupling", "dyadic quantile coupling diagnostics");
    add_common(coupling);
    coupling->add_option("--config", m.config, "DGP config")->check(CLI::ExistingFile);
    coupling->add_option("--n", m.n, "sample size")->required()->check(CLI::Range(2L, 10000000L));
    coupling->add_option("--M", m.M, "replications")->check(CLI::Range(200L, 100000000L));
    coupling->add_option("--epsilon", m.epsilon, "grid trimming")->check(open_interval(0, 0.5));
    coupling->add_option("--level", m.level, "dyadic level")->check(CLI::Range(1, 30));
    coupling->add_option("--b", m.b, "mesh exponent")->check(open_interval(0, 1));
    coupling->add_option("--k", m.k, "nearest neighbours")->check(CLI::PositiveNumber);
    coupling->add_option("--csv", m.csv, "per-replication sup errors");

    auto* study = app.add_subcommand("study", "run a Monte Carlo study from a config file");
    add_common(study);
    study->add_option("--config", m.config, "study config")->required()->check(CLI::ExistingFile);
    study->add_option("--csv", m.csv, "flat table (coverage studies)");

    auto* diagnose = app.add_subcommand("diagnose", "design diagnostics");
    add_common(diagnose);
    add_data(diagnose);
    diagnose->add_option("--subsets", m.subsets, "p-subsets sampled for the general-position check");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (fit->parsed()) {
            emit(to_json(fit_rq(load(data), m.tau)), com);
        } else if (process->parsed()) {
            emit(to_json(fit_process(load(data), m.grid)), com);
        } else if (ci->parsed()) {
            const Dataset d = load(data);
            CIOptions o;
            o.order = m.order;
            o.c = m.c;
            o.fixed_bandwidth = m.h;
            emit(to_json(confidence_interval(d, m.tau, contrast(m.a, d.p()), m.alpha, o)), com);
        } else if (density->parsed()) {
            const DGPSpec dgp = load_dgp(m.config);
            DensityOptions o;
            o.threads = com.threads;
            const auto prof = density_profile(profile_design(dgp, m.n, m.design_seed), dgp, m.tau,
                                              DeltaGridSpec{m.width, m.points}, o);
            if (!m.csv.empty()) {
                std::ofstream f(m.csv);
                if (!f) throw InvalidArgument("--csv", "cannot open '" + m.csv + "' for writing");
                write_profiles_csv(f, {prof});
            }
            emit(to_json(prof), com);
        } else if (lattice->parsed()) {
            const auto r = binomial_interval_ratio(m.n, m.prob, m.j_lo, m.j_hi, m.w);
            emit(Json{{"n", m.n}, {"p", m.prob}, {"lo", m.j_lo}, {"hi", m.j_hi}, {"w", m.w}, {"exact", r.exact},
                      {"normal", r.normal}, {"rel_err", r.rel_err}, {"degenerate", r.degenerate}},
                 com);
        } else if (coupling->parsed()) {
            const DGPSpec dgp = load_dgp(m.config);
            const std::uint64_t seed = resolve_seed(com);
            const DyadicGrid grid = dyadic_grid(m.epsilon, m.level, m.n, m.b);
            const Matrix X = simulate_design(dgp.p(), m.n, seed);
            const auto draws = empirical_process_draws(dgp, X, grid.points, m.M, seed, com.threads);
            const auto gcov =
                grid_covariance(CovarianceModel::oracle(Dataset::make(X, Vector::Zero(m.n), true), dgp), grid.points);
            CouplingOptions o;
            o.k_neighbors = m.k;
            o.seed = seed;
            o.threads = com.threads;
            const auto rep = dyadic_quantile_coupling(draws, gcov, o);
            if (draws.failures > 0) std::cerr << "coupling: " << draws.failures << " replications failed\n";
            if (!m.csv.empty()) {
                std::ofstream f(m.csv);
                if (!f) throw InvalidArgument("--csv", "cannot open '" + m.csv + "' for writing");
                write_coupling_csv(f, rep);
            }
            emit(to_json(rep), com);
        } else if (study->parsed()) {
            return run_study(m.config, com, m.csv);
        } else if (diagnose->parsed()) {
            emit(to_json(design_diagnostics(load(data), m.subsets, resolve_seed(com))), com);
        }
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ComputationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
