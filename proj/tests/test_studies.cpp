#include "qrlab/studies.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

using namespace qrlab;

namespace {

StudySpec coverage_spec() {
    StudySpec s;
    s.kind = StudyKind::coverage;
    Vector b(2), g(2);
    b << 1.0, 1.0;
    g << 1.0, 0.5;
    s.dgp = DGPSpec::location_scale(b, g, ErrorDist::normal());
    s.n_list = {100, 200};
    s.M = 200;
    s.tau = 0.5;
    s.alpha = 0.05;
    s.seed = 11;
    return s;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("qrlab_test_" + name)).string();
}

std::string what_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(StudySpec, FromConfig) {
    std::istringstream in(
        "kind = coverage\nb0 = 1,1\ngamma = 1,0.5\nerror_dist = normal\nn_list = 100,200\nM = 150\n"
        "tau = 0.4\nalpha = 0.1\nbandwidth = oracle\norder = 2\nseed = 9\n");
    const auto s = study_spec_from_config(KeyValueConfig::parse(in));
    EXPECT_EQ(s.kind, StudyKind::coverage);
    EXPECT_EQ(s.n_list, (std::vector<long>{100, 200}));
    EXPECT_EQ(s.M, 150);
    EXPECT_EQ(s.bandwidth, BandwidthRule::oracle);
    EXPECT_EQ(s.order, 2);
    EXPECT_EQ(s.seed, 9u);
}

TEST(StudySpec, Validation) {
    auto s = coverage_spec();
    s.n_list = {200, 100};
    EXPECT_THROW(s.validate(), InvalidArgument);
    s = coverage_spec();
    s.M = 50;
    EXPECT_THROW(s.validate(), InvalidArgument);
    std::istringstream in("kind = coverage\nbogus = 1\n");
    EXPECT_NE(what_of([&] { study_spec_from_config(KeyValueConfig::parse(in)); }).find("bogus"), std::string::npos);
}

TEST(Coverage, ReportInvariants) {
    const auto rep = run_coverage_study(coverage_spec());
    ASSERT_EQ(rep.rows.size(), 2u);
    EXPECT_DOUBLE_EQ(rep.nominal, 0.9);
    for (const auto& r : rep.rows) {
        EXPECT_GE(r.coverage, 0.0);
        EXPECT_LE(r.coverage, 1.0);
        EXPECT_DOUBLE_EQ(r.mc_se, std::sqrt(r.coverage * (1 - r.coverage) / r.replications));
        EXPECT_EQ(r.replications + r.failures, 200);
        EXPECT_GT(r.mean_width, 0.0);
    }
}

TEST(Coverage, DeterministicAcrossThreads) {
    auto s = coverage_spec();
    const auto a = run_coverage_study(s);
    s.threads = 3;
    const auto b = run_coverage_study(s);
    EXPECT_EQ(serialize_report(a), serialize_report(b));
}

TEST(Coverage, OracleModeHalfNominal) {
    // alpha = 0.25: nominal 0.5, oracle sparsity, n = 500
    auto s = coverage_spec();
    s.alpha = 0.25;
    s.bandwidth = BandwidthRule::oracle;
    s.n_list = {500};
    s.M = 3000;
    const auto rep = run_coverage_study(s);
    EXPECT_DOUBLE_EQ(rep.nominal, 0.5);
    EXPECT_LE(std::abs(rep.rows[0].coverage - 0.5), 3.0 * rep.rows[0].mc_se);
}

TEST(Coverage, WrongKindRejected) {
    auto s = coverage_spec();
    s.kind = StudyKind::lattice_rate;
    EXPECT_THROW(run_coverage_study(s), InvalidArgument);
}

TEST(Persist, CoverageRoundTrip) {
    const auto rep = run_coverage_study(coverage_spec());
    const std::string path = temp_path("coverage.json");
    persist_report(rep, path);
    EXPECT_EQ(load_report<CoverageReport>(path), rep);
    std::remove(path.c_str());
}

TEST(Persist, RateReportsRoundTrip) {
    StudySpec s;
    s.kind = StudyKind::lattice_rate;
    s.n_list = {64, 128, 256, 512};
    const auto lat = run_lattice_rate_study(s);
    ASSERT_TRUE(lat.rate.has_value());
    EXPECT_EQ(deserialize_report<LatticeRateReport>(serialize_report(lat)), lat);

    StudySpec d;
    d.kind = StudyKind::density_rate;
    d.dgp = DGPSpec::location_scale(Vector::Zero(1), Vector::Ones(1), ErrorDist::uniform());
    d.n_list = {5};
    d.delta_grid.points = 5;
    const auto den = run_density_rate_study(d);
    EXPECT_FALSE(den.rate.has_value());  // singleton n_list
    EXPECT_EQ(deserialize_report<DensityRateReport>(serialize_report(den)), den);
}

TEST(Persist, VersionMismatchNamesBothVersions) {
    const auto rep = run_coverage_study(coverage_spec());
    std::string text = serialize_report(rep);
    const auto pos = text.find("\"schema_version\": 1");
    ASSERT_NE(pos, std::string::npos);
    text.replace(pos, 19, "\"schema_version\": 7");
    const std::string msg = what_of([&] { deserialize_report<CoverageReport>(text); });
    EXPECT_NE(msg.find("7"), std::string::npos) << msg;
    EXPECT_NE(msg.find("expected 1"), std::string::npos) << msg;
}

TEST(Persist, NanRejectedWithFieldName) {
    auto rep = run_coverage_study(coverage_spec());
    rep.rows[1].mean_width = std::nan("");
    const std::string msg = what_of([&] { serialize_report(rep); });
    EXPECT_NE(msg.find("rows[1].mean_width"), std::string::npos) << msg;
}

TEST(Persist, KindMismatch) {
    StudySpec s;
    s.kind = StudyKind::lattice_rate;
    s.n_list = {64, 128, 256};
    const std::string text = serialize_report(run_lattice_rate_study(s));
    EXPECT_THROW(deserialize_report<CoverageReport>(text), InvalidArgument);
}

TEST(Lattice, TwoPointsNoRate) {
    StudySpec s;
    s.kind = StudyKind::lattice_rate;
    s.n_list = {64, 128};
    EXPECT_FALSE(run_lattice_rate_study(s).rate.has_value());
    EXPECT_EQ(lattice_shift(100), static_cast<long>(std::floor(std::sqrt(100 * std::log(100.0)) / 2)));
}

TEST(CouplingStudy, SingletonSummaryOnly) {
    StudySpec s;
    s.kind = StudyKind::coupling_rate;
    s.dgp = DGPSpec::location_scale(Vector::Zero(1), Vector::Ones(1), ErrorDist::uniform());
    s.n_list = {200};
    s.M = 300;
    s.k_neighbors = 50;
    s.grid = GridSpec{0.2, 2, 0.9};
    const auto rep = run_coupling_rate_study(s);
    ASSERT_EQ(rep.rows.size(), 1u);
    EXPECT_FALSE(rep.rate.has_value());
    EXPECT_GT(rep.rows[0].median_sup_error, 0.0);
    EXPECT_EQ(deserialize_report<CouplingStudyReport>(serialize_report(rep)), rep);
}
