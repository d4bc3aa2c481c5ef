#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "tmnre/errors.hpp"
#include "tmnre/ratio.hpp"
#include "tmnre/simulator.hpp"

using namespace tmnre;

namespace {

TrainConfig quick() {
    TrainConfig cfg;
    cfg.max_epochs = 4;
    cfg.hidden = 16;
    cfg.blocks = 1;
    return cfg;
}

SampleStore gaussian_store(std::size_t dims, std::size_t n, std::uint64_t seed) {
    const GaussianDiagSimulator sim(dims, 0.1);
    const auto prior = sim.default_prior();
    Rng rng(seed);
    SampleStore store(dims, dims);
    const Matrix theta = sample_truncated(prior, prior.support(), n, rng);
    store.append(1, theta, simulate_batch(sim, theta, rng));
    return store;
}

}  // namespace

TEST_CASE("marginal index normalizes and labels") {
    const MarginalIndex idx({2, 0});
    CHECK(idx.dims() == std::vector<std::size_t>{0, 2});
    CHECK(idx.label() == "0_2");
    CHECK(MarginalIndex({4}).label() == "4");
    CHECK_THROWS_AS(MarginalIndex({1, 1}), PreconditionError);
    CHECK_THROWS_AS(MarginalIndex(std::vector<std::size_t>{}), PreconditionError);
    const Matrix t = (Matrix(2, 3) << 1, 2, 3, 4, 5, 6).finished();
    CHECK(idx.select(t) == (Matrix(2, 2) << 1, 3, 4, 6).finished());
    CHECK_THROWS_AS(MarginalIndex({5}).select(t), PreconditionError);
}

TEST_CASE("marginal sets list 1-d heads then lexicographic pairs") {
    const auto one = marginal_set(3, MarginalSet::one_d);
    CHECK(one.size() == 3);
    const auto two = marginal_set(4, MarginalSet::two_d);
    REQUIRE(two.size() == 6);
    CHECK(two.front().label() == "0_1");
    CHECK(two[2].label() == "0_3");
    CHECK(two.back().label() == "2_3");
    const auto both = marginal_set(3, MarginalSet::both);
    REQUIRE(both.size() == 6);
    CHECK(both[2].label() == "2");
    CHECK(both[3].label() == "0_1");
    CHECK(marginal_set(10, MarginalSet::both).size() == 55);
    CHECK_THROWS_AS(marginal_set(1, MarginalSet::two_d), PreconditionError);
    CHECK(parse_marginal_set("1d+2d") == MarginalSet::both);
    CHECK(to_string(MarginalSet::two_d) == "2d");
    CHECK_THROWS_AS(parse_marginal_set("3d"), PreconditionError);
}

TEST_CASE("function ratio model evaluates row by row") {
    const FunctionRatioModel m(MarginalIndex({0, 1}), [](auto x, auto p) { return x[0] * p[0] + p[1]; });
    const Vector r = m.log_ratio(std::vector<double>{2.0}, (Matrix(2, 2) << 1, 1, 3, -1).finished());
    CHECK(r == testing::vec({3.0, 5.0}));
    CHECK_FALSE(m.domain().has_value());
    CHECK_THROWS_AS(m.log_ratio(std::vector<double>{2.0}, Matrix::Zero(1, 3)), PreconditionError);
}

TEST_CASE("train_mnre trains one independent head per index") {
    const auto store = gaussian_store(3, 600, 1);
    const auto region = FactorizablePrior::unit_cube(3).support();
    const auto indices = marginal_set(3, MarginalSet::both);
    const auto result = train_mnre(store, region, indices, quick(), 7, 1);
    REQUIRE(result.heads.size() == 6);
    CHECK(result.all_ok());
    CHECK(result.estimators().size() == 6);
    const auto rows = store.indices_in(region);
    for (std::size_t k = 0; k < 6; ++k) {
        CHECK(result.heads[k].index == indices[k]);
        CHECK(result.heads[k].rows == 600);
        CHECK(result.heads[k].data_hash == hash_indices(rows));
        CHECK(result.heads[k].estimator->round() == 1);
    }
    REQUIRE(result.find(MarginalIndex({0, 2})) != nullptr);
    CHECK(result.find(MarginalIndex({0, 2}))->index().label() == "0_2");
    CHECK(result.find(MarginalIndex({1, 4})) == nullptr);
}

TEST_CASE("train_mnre results do not depend on the worker count") {
    const auto store = gaussian_store(2, 400, 2);
    const auto region = FactorizablePrior::unit_cube(2).support();
    const auto indices = marginal_set(2, MarginalSet::both);
    const auto a = train_mnre(store, region, indices, quick(), 11, 3, 1);
    const auto b = train_mnre(store, region, indices, quick(), 11, 3, 3);
    for (std::size_t k = 0; k < indices.size(); ++k) {
        CHECK(a.heads[k].estimator->model().net.parameters() == b.heads[k].estimator->model().net.parameters());
    }
    // A head's result is unchanged when other heads are added or removed.
    const std::vector<MarginalIndex> first{indices[0]};
    const auto alone = train_mnre(store, region, first, quick(), 11, 3, 1);
    CHECK(alone.heads[0].estimator->model().net.parameters() == a.heads[0].estimator->model().net.parameters());
}

TEST_CASE("train_mnre only uses rows inside the region") {
    const auto store = gaussian_store(2, 800, 3);
    const TruncationRegion region({{0.0, 0.5}, {0.0, 1.0}});
    const auto rows = store.indices_in(region);
    const auto result = train_mnre(store, region, marginal_set(2, MarginalSet::one_d), quick(), 5, 1);
    CHECK(result.heads[0].rows == rows.size());
    CHECK(result.heads[0].rows < 800);
    CHECK(result.heads[0].data_hash == hash_indices(rows));
    CHECK(result.heads[0].estimator->region() == region);
}

TEST_CASE("train_mnre preconditions") {
    const auto store = gaussian_store(2, 30, 4);
    const auto unit = FactorizablePrior::unit_cube(2).support();
    const auto idx = marginal_set(2, MarginalSet::one_d);
    CHECK_THROWS_AS(train_mnre(store, unit, {}, quick(), 1, 1), PreconditionError);
    CHECK_THROWS_AS(train_mnre(store, FactorizablePrior::unit_cube(3).support(), idx, quick(), 1, 1), PreconditionError);
    const std::vector<MarginalIndex> bad{MarginalIndex({2})};
    CHECK_THROWS_AS(train_mnre(store, unit, bad, quick(), 1, 1), PreconditionError);
    CHECK_THROWS_AS(train_mnre(store, TruncationRegion({{0.0, 0.1}, {0.0, 0.1}}), idx, quick(), 1, 1), PreconditionError);
    CHECK_THROWS_AS(train_mnre(SampleStore(2, 2), unit, idx, quick(), 1, 1), PreconditionError);
}

TEST_CASE("a failing head is reported without affecting the others") {
    Rng rng(5);
    const Eigen::Index n = 200;
    Matrix theta(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        theta(i, 0) = uniform01(rng);
        theta(i, 1) = (i % 2 == 0 ? 1.5 : -1.5) * 1e308;
    }
    SampleStore store(2, 1);
    store.append(1, theta, theta.col(0) + 0.1 * Matrix::Random(n, 1));
    const TruncationRegion region({{0.0, 1.0}, {-1.7e308, 1.7e308}});
    const auto result = train_mnre(store, region, marginal_set(2, MarginalSet::one_d), quick(), 3, 1);
    CHECK(result.heads[0].ok());
    CHECK_FALSE(result.heads[1].ok());
    CHECK_FALSE(result.heads[1].error.empty());
    CHECK_FALSE(result.all_ok());
    CHECK(result.estimators().size() == 1);
}

TEST_CASE("ratio heads round-trip through the binary format") {
    const auto store = gaussian_store(2, 300, 6);
    const TruncationRegion region({{0.0, 0.9}, {0.1, 1.0}});
    const auto result = train_mnre(store, region, marginal_set(2, MarginalSet::two_d), quick(), 9, 2);
    const auto& est = *result.heads[0].estimator;
    const auto dir = testing::scratch_dir("ratio_io");
    const auto base = estimator_base(dir, 2, 0);
    CHECK(base == dir / "round_2" / "head_0");
    est.save(base);
    CHECK(std::filesystem::exists(dir / "round_2" / "head_0.bin"));
    CHECK(std::filesystem::exists(dir / "round_2" / "head_0.json"));
    const auto back = MarginalRatioEstimator::load(base);
    CHECK(back.index() == est.index());
    CHECK(back.region() == est.region());
    CHECK(back.round() == 2);
    Rng rng(7);
    const Matrix params = Matrix::Random(50, 2).cwiseAbs();
    const std::vector<double> x{0.3, 0.6};
    CHECK(back.log_ratio(x, params) == est.log_ratio(x, params));
    CHECK_THROWS_AS(MarginalRatioEstimator::load(dir / "missing"), RuntimeFailure);
}

TEST_CASE("evaluation outside the training region is flagged") {
    const auto store = gaussian_store(1, 200, 8);
    const TruncationRegion region({{0.2, 0.8}});
    const auto result = train_mnre(store, region, marginal_set(1, MarginalSet::one_d), quick(), 1, 1);
    const auto& est = *result.heads[0].estimator;
    CHECK_FALSE(est.evaluate(std::vector<double>{0.5}, std::vector<double>{0.5}).out_of_domain);
    const auto outside = est.evaluate(std::vector<double>{0.5}, std::vector<double>{0.9});
    CHECK(outside.out_of_domain);
    CHECK(std::isfinite(outside.log_ratio));
    REQUIRE(est.domain().has_value());
    CHECK(*est.domain() == region);
    CHECK_THROWS_AS(est.log_ratio(std::vector<double>{0.5, 0.5}, Matrix::Zero(1, 1)), PreconditionError);
}

TEST_CASE("hash_indices is order and length sensitive") {
    const std::vector<std::size_t> a{1, 2, 3};
    const std::vector<std::size_t> b{1, 3, 2};
    const std::vector<std::size_t> c{1, 2};
    CHECK(hash_indices(a) == hash_indices(a));
    CHECK(hash_indices(a) != hash_indices(b));
    CHECK(hash_indices(a) != hash_indices(c));
}
