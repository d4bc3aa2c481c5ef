#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmnre/neural.hpp"
#include "tmnre/prior.hpp"
#include "tmnre/random.hpp"
#include "tmnre/store.hpp"

namespace tmnre {

/// Sorted, duplicate-free tuple of parameter dimensions.
class MarginalIndex {
public:
    MarginalIndex() = default;
    explicit MarginalIndex(std::vector<std::size_t> dims);

    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t size() const { return dims_.size(); }
    std::size_t operator[](std::size_t i) const { return dims_[i]; }
    /// "0", "0_2", ...
    std::string label() const;

    /// Columns dims() of `thetas`, in ascending dimension order.
    Matrix select(const Matrix& thetas) const;

    friend bool operator==(const MarginalIndex&, const MarginalIndex&) = default;
    friend auto operator<=>(const MarginalIndex&, const MarginalIndex&) = default;

private:
    std::vector<std::size_t> dims_;
};

enum class MarginalSet { one_d, two_d, both };

MarginalSet parse_marginal_set(const std::string& which);  // "1d" | "2d" | "1d+2d"
std::string to_string(MarginalSet which);

/// 1-d indices first, then 2-d pairs in lexicographic order.
std::vector<MarginalIndex> marginal_set(std::size_t dims, MarginalSet which);

/// Anything that yields log r(x | vartheta) for one marginal index.
class LogRatioModel {
public:
    virtual ~LogRatioModel() = default;

    virtual const MarginalIndex& index() const = 0;
    /// log r for a fixed x and each row of `params` (columns follow index().dims()).
    virtual Vector log_ratio(std::span<const double> x, const Matrix& params) const = 0;
    /// Box over index().dims() where the model is trusted, if restricted.
    virtual std::optional<TruncationRegion> domain() const { return std::nullopt; }
};

/// Closed-form head for tests and oracles.
class FunctionRatioModel final : public LogRatioModel {
public:
    using Fn = std::function<double(std::span<const double> x, std::span<const double> params)>;

    FunctionRatioModel(MarginalIndex index, Fn fn);

    const MarginalIndex& index() const override { return index_; }
    Vector log_ratio(std::span<const double> x, const Matrix& params) const override;

private:
    MarginalIndex index_;
    Fn fn_;
};

struct RatioValue {
    double log_ratio = 0.0;
    bool out_of_domain = false;
};

class MarginalRatioEstimator final : public LogRatioModel {
public:
    MarginalRatioEstimator() = default;
    MarginalRatioEstimator(MarginalIndex index, TrainedClassifier model, TruncationRegion region, std::size_t round);

    const MarginalIndex& index() const override { return index_; }
    Vector log_ratio(std::span<const double> x, const Matrix& params) const override;
    std::optional<TruncationRegion> domain() const override { return region_.select(index_.dims()); }

    /// Single evaluation; values outside the training region are returned
    /// with the flag set.
    RatioValue evaluate(std::span<const double> x, std::span<const double> params) const;

    /// Full-dimensional region the head was trained on.
    const TruncationRegion& region() const { return region_; }
    std::size_t round() const { return round_; }
    const TrainedClassifier& model() const { return model_; }

    /// `<base>.bin` (parameters then batchnorm buffers, float64 LE) and
    /// `<base>.json` (index, region, round, layout, standardizers).
    void save(const std::filesystem::path& base) const;
    static MarginalRatioEstimator load(const std::filesystem::path& base);

private:
    MarginalIndex index_;
    TrainedClassifier model_;
    TruncationRegion region_;
    std::size_t round_ = 0;
};

enum class HeadStatus { ok, failed };

struct HeadResult {
    MarginalIndex index;
    HeadStatus status = HeadStatus::failed;
    std::string error;
    std::optional<MarginalRatioEstimator> estimator;
    /// Hash of the store row indices handed to this head.
    std::uint64_t data_hash = 0;
    std::size_t rows = 0;

    bool ok() const { return status == HeadStatus::ok; }
};

struct MnreResult {
    std::vector<HeadResult> heads;

    bool all_ok() const;
    /// Trained heads in index order (failed heads skipped).
    std::vector<const MarginalRatioEstimator*> estimators() const;
    const MarginalRatioEstimator* find(const MarginalIndex& index) const;
};

std::uint64_t hash_indices(std::span<const std::size_t> indices);

/// Trains one independent head per index on the store records inside
/// `region`. Head k draws from make_rng(seed, {round, k}), so results do
/// not depend on `workers`. A failing head is reported, not rethrown.
MnreResult train_mnre(const SampleStore& store, const TruncationRegion& region, std::span<const MarginalIndex> indices,
                      const TrainConfig& config, std::uint64_t seed, std::size_t round, std::size_t workers = 1);

/// Paths used for round m, head k under an estimators/ directory.
std::filesystem::path estimator_base(const std::filesystem::path& dir, std::size_t round, std::size_t head);

}  // namespace tmnre
