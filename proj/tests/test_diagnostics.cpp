#include <doctest.h>

#include <cmath>
#include <sstream>

#include "support.hpp"
#include "tmnre/diagnostics.hpp"
#include "tmnre/errors.hpp"
#include "tmnre/oracle.hpp"

using namespace tmnre;

namespace {

Matrix normals(Eigen::Index n, Eigen::Index d, double shift, Rng& rng) {
    Matrix m(n, d);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng) + shift;
    return m;
}

std::vector<double> normal_draws(std::size_t n, double mu, double sd, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = mu + sd * standard_normal(rng);
    return v;
}

FunctionRatioModel gaussian_head(std::size_t d, double mu, double s) {
    return FunctionRatioModel(MarginalIndex({d}), [=](auto, auto p) { return -0.5 * std::pow((p[0] - mu) / s, 2); });
}

}  // namespace

TEST_CASE("c2st cannot separate identical distributions") {
    Rng rng(1);
    const Matrix p = normals(1000, 2, 0.0, rng);
    const Matrix q = normals(1000, 2, 0.0, rng);
    const double acc = c2st(p, q, rng);
    CHECK(std::abs(acc - 0.5) < 0.05);
}

TEST_CASE("c2st separates disjoint distributions") {
    Rng rng(2);
    const Matrix p = normals(500, 1, 0.0, rng);
    const Matrix q = normals(500, 1, 12.0, rng);
    CHECK(c2st(p, q, rng) > 0.99);
}

TEST_CASE("c2st detects a moderate shift") {
    Rng rng(3);
    const Matrix p = normals(1000, 1, 0.0, rng);
    const Matrix q = normals(1000, 1, 1.0, rng);
    // Bayes accuracy for N(0,1) vs N(1,1) is Phi(1/2).
    CHECK(c2st(p, q, rng) == doctest::Approx(testing::normal_cdf(0.5)).epsilon(0.05));
}

TEST_CASE("c2st preconditions and determinism") {
    Rng rng(4);
    CHECK_THROWS_WITH_AS(c2st(normals(49, 1, 0, rng), normals(200, 1, 0, rng), rng), "insufficient samples for c2st", PreconditionError);
    CHECK_THROWS_AS(c2st(normals(100, 1, 0, rng), normals(100, 2, 0, rng), rng), PreconditionError);
    Matrix bad = normals(100, 1, 0, rng);
    bad(3, 0) = NAN;
    CHECK_THROWS_AS(c2st(bad, normals(100, 1, 0, rng), rng), PreconditionError);
    C2stOptions one;
    one.folds = 1;
    CHECK_THROWS_AS(c2st(normals(100, 1, 0, rng), normals(100, 1, 0, rng), rng, one), PreconditionError);
    const Matrix p = normals(200, 2, 0.0, rng);
    const Matrix q = normals(200, 2, 0.5, rng);
    Rng a(5), b(5);
    CHECK(c2st(p, q, a) == c2st(p, q, b));
}

TEST_CASE("c2st_ddm averages the available marginals") {
    Rng rng(6);
    const Matrix ref = normals(300, 3, 0.0, rng);
    std::map<MarginalIndex, Matrix> approx;
    approx[MarginalIndex({0})] = normals(300, 1, 0.0, rng);
    approx[MarginalIndex({1})] = normals(300, 1, 10.0, rng);
    approx[MarginalIndex({0, 2})] = normals(300, 2, 0.0, rng);
    C2stOptions fast;
    fast.max_epochs = 50;
    const auto r1 = c2st_ddm(ref, approx, 1, rng, fast);
    REQUIRE(r1.entries.size() == 2);
    CHECK(r1.missing == std::vector<MarginalIndex>{MarginalIndex({2})});
    CHECK_FALSE(r1.complete());
    CHECK(r1.mean == doctest::Approx(0.5 * (r1.entries[0].accuracy + r1.entries[1].accuracy)));
    CHECK(r1.entries[1].accuracy > 0.99);
    const auto r2 = c2st_ddm(ref, approx, 2, rng, fast);
    CHECK(r2.entries.size() == 1);
    CHECK(r2.missing.size() == 2);
    CHECK(r2.to_json().at("d") == 2);
    CHECK_THROWS_AS(c2st_ddm(ref, approx, 3, rng, fast), PreconditionError);
    CHECK_THROWS_AS(c2st_ddm(ref, approx, 0, rng, fast), PreconditionError);
}

TEST_CASE("kl of histograms") {
    Rng rng(7);
    const auto p = normal_draws(200000, 0.0, 1.0, rng);
    CHECK(kl_histogram(p, p) == 0.0);
    const auto q = normal_draws(200000, 1.0, 1.0, rng);
    // KL(N(0,1) || N(1,1)) = 1/2.
    CHECK(kl_histogram(p, q) == doctest::Approx(0.5).epsilon(0.05));
    const auto r = normal_draws(200000, 0.0, 1.0, rng);
    CHECK(kl_histogram(p, r) < 0.01);
    const std::vector<double> same{2.0, 2.0, 2.0};
    CHECK(kl_histogram(same, same) == 0.0);
    CHECK_THROWS_AS(kl_histogram({}, p), PreconditionError);
    KlOptions bad;
    bad.bins = 0;
    CHECK_THROWS_AS(kl_histogram(p, q, bad), PreconditionError);
}

TEST_CASE("kl is non-negative") {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const auto p = normal_draws(50 + trial * 10, uniform01(rng), 0.5 + uniform01(rng), rng);
        const auto q = normal_draws(80, uniform01(rng), 0.5 + uniform01(rng), rng);
        KlOptions o;
        o.bins = 5 + static_cast<std::size_t>(trial);
        REQUIRE(kl_histogram(p, q, o) >= 0.0);
    }
}

TEST_CASE("coverage of calibrated heads matches the nominal levels") {
    const GaussianDiagSimulator sim(2, 0.1);
    const auto prior = sim.default_prior();
    const TruncationRegion region({{0.0, 1.0}, {0.1, 0.8}});
    const auto h0 = analytic_ratio_head(sim, prior, region, 0);
    const auto h1 = analytic_ratio_head(sim, prior, region, 1);
    const std::vector<const LogRatioModel*> heads{&h0, &h1};
    const auto levels = default_levels();
    CHECK(levels.size() == 9);
    CHECK(levels.front() == doctest::Approx(0.1));
    CHECK(levels.back() == doctest::Approx(0.9));
    Rng rng(9);
    CoverageOptions opts;
    opts.workers = 2;
    const auto curves = coverage_test(heads, sim, prior, region, 2000, levels, rng, opts);
    REQUIRE(curves.size() == 2);
    for (const auto& c : curves) {
        CHECK(c.draws == 2000);
        for (std::size_t i = 0; i < levels.size(); ++i) {
            const double se = std::sqrt(levels[i] * (1.0 - levels[i]) / 2000.0);
            CHECK(c.stderr_[i] == doctest::Approx(se).epsilon(0.2));
            CHECK(std::abs(c.empirical[i] - levels[i]) < 4.0 * se + 0.01);
        }
    }
    std::ostringstream csv;
    curves[0].write_csv(csv);
    CHECK(csv.str().find("level") != std::string::npos);

    Rng a(10), b(10);
    opts.workers = 1;
    const auto x = coverage_test(heads, sim, prior, region, 200, levels, a, opts);
    opts.workers = 3;
    const auto y = coverage_test(heads, sim, prior, region, 200, levels, b, opts);
    CHECK(x[0].empirical == y[0].empirical);
}

TEST_CASE("overconfident heads undercover") {
    const GaussianDiagSimulator sim(1, 0.1);
    const auto prior = sim.default_prior();
    // Twice too narrow.
    const FunctionRatioModel narrow(MarginalIndex({0}), [](auto x, auto p) { return -0.5 * std::pow((p[0] - x[0]) / 0.05, 2); });
    const std::vector<const LogRatioModel*> heads{&narrow};
    Rng rng(11);
    const std::vector<double> levels{0.68};
    const auto curves = coverage_test(heads, sim, prior, prior.support(), 1000, levels, rng);
    CHECK(curves[0].empirical[0] < 0.5);
}

TEST_CASE("coverage preconditions") {
    const GaussianDiagSimulator sim(1, 0.1);
    const auto prior = sim.default_prior();
    const auto h = gaussian_head(0, 0.5, 0.1);
    const std::vector<const LogRatioModel*> heads{&h};
    Rng rng(12);
    const auto levels = default_levels();
    CHECK_THROWS_AS(coverage_test(heads, sim, prior, prior.support(), 99, levels, rng), PreconditionError);
    CHECK_THROWS_AS(coverage_test(heads, sim, prior, prior.support(), 100, {}, rng), PreconditionError);
    const FunctionRatioModel two(MarginalIndex({0, 1}), [](auto, auto) { return 0.0; });
    const std::vector<const LogRatioModel*> bad{&two};
    CHECK_THROWS_AS(coverage_test(bad, sim, prior, prior.support(), 100, levels, rng), PreconditionError);
}

TEST_CASE("boundary check flags mass piled on a truncation edge") {
    const auto prior = FactorizablePrior::unit_cube(1);
    const auto inside = grid_posterior(gaussian_head(0, 0.5, 0.05), {}, prior, TruncationRegion({{0.2, 0.8}}), 1000);
    CHECK(boundary_check(inside).passed);

    const auto cut = grid_posterior(gaussian_head(0, 0.5, 0.05), {}, prior, TruncationRegion({{0.2, 0.52}}), 1000);
    const auto report = boundary_check(cut, 0.95);
    CHECK_FALSE(report.passed);
    CHECK(report.offending_dims == std::vector<std::size_t>{0});
    CHECK(report.to_json().at("passed") == false);

    // Touching the prior support is legitimate.
    const auto edge = grid_posterior(gaussian_head(0, 0.0, 0.05), {}, prior, TruncationRegion({{0.0, 0.5}}), 1000);
    CHECK_FALSE(boundary_check(edge).passed);
    CHECK(boundary_check(edge, 0.95, &prior.support()).passed);

    CHECK(boundary_check(inside, 1.0).passed == false);
    CHECK_THROWS_AS(boundary_check(inside, 0.0), PreconditionError);
    CHECK_THROWS_AS(boundary_check(inside, 1.5), PreconditionError);
}

TEST_CASE("boundary check in two dimensions names the offending dimension") {
    const auto prior = FactorizablePrior::unit_cube(2);
    const FunctionRatioModel head(MarginalIndex({0, 1}), [](auto, auto p) {
        return -0.5 * (std::pow((p[0] - 0.5) / 0.05, 2) + std::pow((p[1] - 0.5) / 0.05, 2));
    });
    const auto ok = grid_posterior(head, {}, prior, TruncationRegion({{0.2, 0.8}, {0.2, 0.8}}), 100);
    CHECK(boundary_check(ok).passed);
    const auto cut = grid_posterior(head, {}, prior, TruncationRegion({{0.2, 0.8}, {0.45, 0.8}}), 100);
    const auto r = boundary_check(cut);
    CHECK_FALSE(r.passed);
    CHECK(r.offending_dims == std::vector<std::size_t>{1});
}
