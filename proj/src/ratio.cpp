#include "tmnre/ratio.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "tmnre/errors.hpp"
#include "tmnre/parallel.hpp"
#include "tmnre/serialize.hpp"

namespace tmnre {
namespace {

Eigen::Map<const Eigen::RowVectorXd> as_row(std::span<const double> v) {
    return {v.data(), static_cast<Eigen::Index>(v.size())};
}

}  // namespace

MarginalIndex::MarginalIndex(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    if (dims_.empty()) throw PreconditionError("marginal index needs at least one dimension");
    std::sort(dims_.begin(), dims_.end());
    if (std::adjacent_find(dims_.begin(), dims_.end()) != dims_.end()) {
        throw PreconditionError("marginal index has duplicate dimensions");
    }
}

std::string MarginalIndex::label() const {
    std::string out;
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        if (i > 0) out += '_';
        out += std::to_string(dims_[i]);
    }
    return out;
}

Matrix MarginalIndex::select(const Matrix& thetas) const {
    Matrix out(thetas.rows(), static_cast<Eigen::Index>(dims_.size()));
    for (std::size_t j = 0; j < dims_.size(); ++j) {
        if (static_cast<Eigen::Index>(dims_[j]) >= thetas.cols()) throw PreconditionError("marginal index exceeds theta width");
        out.col(static_cast<Eigen::Index>(j)) = thetas.col(static_cast<Eigen::Index>(dims_[j]));
    }
    return out;
}

MarginalSet parse_marginal_set(const std::string& which) {
    if (which == "1d") return MarginalSet::one_d;
    if (which == "2d") return MarginalSet::two_d;
    if (which == "1d+2d") return MarginalSet::both;
    throw PreconditionError("marginal set must be \"1d\", \"2d\" or \"1d+2d\", got \"" + which + "\"");
}

std::string to_string(MarginalSet which) {
    switch (which) {
        case MarginalSet::one_d: return "1d";
        case MarginalSet::two_d: return "2d";
        case MarginalSet::both: return "1d+2d";
    }
    return "";
}

std::vector<MarginalIndex> marginal_set(std::size_t dims, MarginalSet which) {
    if (dims == 0) throw PreconditionError("marginal_set requires D >= 1");
    if (which == MarginalSet::two_d && dims < 2) throw PreconditionError("2-d marginals require D >= 2");
    std::vector<MarginalIndex> out;
    if (which != MarginalSet::two_d) {
        for (std::size_t d = 0; d < dims; ++d) out.emplace_back(std::vector<std::size_t>{d});
    }
    if (which != MarginalSet::one_d) {
        for (std::size_t i = 0; i < dims; ++i) {
            for (std::size_t j = i + 1; j < dims; ++j) out.emplace_back(std::vector<std::size_t>{i, j});
        }
    }
    return out;
}

FunctionRatioModel::FunctionRatioModel(MarginalIndex index, Fn fn) : index_(std::move(index)), fn_(std::move(fn)) {}

Vector FunctionRatioModel::log_ratio(std::span<const double> x, const Matrix& params) const {
    if (static_cast<std::size_t>(params.cols()) != index_.size()) throw PreconditionError("parameter width does not match the index");
    Vector out(params.rows());
    std::vector<double> row(index_.size());
    for (Eigen::Index i = 0; i < params.rows(); ++i) {
        for (Eigen::Index j = 0; j < params.cols(); ++j) row[static_cast<std::size_t>(j)] = params(i, j);
        out[i] = fn_(x, row);
    }
    return out;
}

MarginalRatioEstimator::MarginalRatioEstimator(MarginalIndex index, TrainedClassifier model, TruncationRegion region,
                                               std::size_t round)
    : index_(std::move(index)), model_(std::move(model)), region_(std::move(region)), round_(round) {}

Vector MarginalRatioEstimator::log_ratio(std::span<const double> x, const Matrix& params) const {
    if (static_cast<std::size_t>(params.cols()) != index_.size()) throw PreconditionError("parameter width does not match the index");
    if (x.size() != model_.x_standardizer.features()) throw PreconditionError("x width does not match the estimator");
    const Matrix xs = as_row(x).replicate(params.rows(), 1);
    return model_.log_ratio(xs, params);
}

RatioValue MarginalRatioEstimator::evaluate(std::span<const double> x, std::span<const double> params) const {
    const Matrix p = as_row(params);
    RatioValue out;
    out.log_ratio = log_ratio(x, p)[0];
    out.out_of_domain = !region_.select(index_.dims()).contains(params);
    return out;
}

void MarginalRatioEstimator::save(const std::filesystem::path& base) const {
    const auto& net = model_.net;
    std::ostringstream bin;
    write_f64_le(bin, net.parameters().data(), static_cast<std::size_t>(net.parameters().size()));
    write_f64_le(bin, net.buffers().data(), static_cast<std::size_t>(net.buffers().size()));
    auto bin_path = base;
    bin_path += ".bin";
    write_file_atomic(bin_path, bin.str());

    const auto& trace = model_.trace;
    nlohmann::json meta = {{"format", "tmnre-ratio-head"},
                           {"version", 1},
                           {"index", index_.dims()},
                           {"round", round_},
                           {"region", to_json(region_)},
                           {"network", net.layout_json()},
                           {"x_standardizer", model_.x_standardizer.to_json()},
                           {"theta_standardizer", model_.theta_standardizer.to_json()},
                           {"training",
                            {{"epochs", trace.epochs.size()},
                             {"best_epoch", trace.best_epoch},
                             {"best_val_loss", trace.best_val_loss},
                             {"early_stopped", trace.early_stopped}}}};
    auto json_path = base;
    json_path += ".json";
    write_file_atomic(json_path, meta.dump(2) + "\n");
}

MarginalRatioEstimator MarginalRatioEstimator::load(const std::filesystem::path& base) {
    auto json_path = base;
    json_path += ".json";
    std::ifstream meta_in(json_path);
    if (!meta_in) throw RuntimeFailure("cannot open " + json_path.string());
    const auto meta = nlohmann::json::parse(meta_in);
    if (meta.value("format", "") != "tmnre-ratio-head") throw RuntimeFailure("not a ratio head: " + json_path.string());
    const auto& n = meta.at("network");
    TrainedClassifier model;
    model.net = ClassifierNet({n.at("inputs").get<std::size_t>(), n.at("hidden").get<std::size_t>(), n.at("blocks").get<std::size_t>()});
    if (model.net.parameters().size() != n.at("parameter_count").get<Eigen::Index>()) {
        throw RuntimeFailure("ratio head parameter count mismatch in " + json_path.string());
    }
    auto bin_path = base;
    bin_path += ".bin";
    std::ifstream in(bin_path, std::ios::binary);
    if (!in) throw RuntimeFailure("cannot open " + bin_path.string());
    read_f64_le(in, model.net.parameters().data(), static_cast<std::size_t>(model.net.parameters().size()));
    read_f64_le(in, model.net.buffers().data(), static_cast<std::size_t>(model.net.buffers().size()));
    model.x_standardizer = Standardizer::from_json(meta.at("x_standardizer"));
    model.theta_standardizer = Standardizer::from_json(meta.at("theta_standardizer"));
    const auto& t = meta.at("training");
    model.trace.best_epoch = t.value("best_epoch", std::size_t{0});
    model.trace.best_val_loss = t.value("best_val_loss", 0.0);
    model.trace.early_stopped = t.value("early_stopped", false);
    return MarginalRatioEstimator(MarginalIndex(meta.at("index").get<std::vector<std::size_t>>()), std::move(model),
                                  region_from_json(meta.at("region")), meta.at("round").get<std::size_t>());
}

bool MnreResult::all_ok() const {
    return std::all_of(heads.begin(), heads.end(), [](const HeadResult& h) { return h.ok(); });
}

std::vector<const MarginalRatioEstimator*> MnreResult::estimators() const {
    std::vector<const MarginalRatioEstimator*> out;
    for (const auto& h : heads) {
        if (h.ok()) out.push_back(&*h.estimator);
    }
    return out;
}

const MarginalRatioEstimator* MnreResult::find(const MarginalIndex& index) const {
    for (const auto& h : heads) {
        if (h.ok() && h.index == index) return &*h.estimator;
    }
    return nullptr;
}

std::uint64_t hash_indices(std::span<const std::size_t> indices) {
    std::uint64_t h = 0x9e3779b97f4a7c15ULL ^ indices.size();
    for (auto i : indices) h = mix64(h ^ mix64(i));
    return h;
}

MnreResult train_mnre(const SampleStore& store, const TruncationRegion& region, std::span<const MarginalIndex> indices,
                      const TrainConfig& config, std::uint64_t seed, std::size_t round, std::size_t workers) {
    if (region.dims() != store.param_dim()) throw PreconditionError("region dimension does not match the store");
    if (indices.empty()) throw PreconditionError("train_mnre needs at least one marginal index");
    for (const auto& idx : indices) {
        if (idx.dims().back() >= store.param_dim()) throw PreconditionError("marginal index " + idx.label() + " out of range");
    }
    const auto rows = store.indices_in(region);
    if (rows.empty()) throw PreconditionError("no stored samples inside the region");
    if (rows.size() < minimum_training_rows(config)) {
        throw PreconditionError("only " + std::to_string(rows.size()) + " stored samples inside the region; need " +
                                std::to_string(minimum_training_rows(config)));
    }
    const Matrix x = store.xs(rows);
    const Matrix thetas = store.thetas(rows);
    const std::uint64_t data_hash = hash_indices(rows);

    MnreResult result;
    result.heads.resize(indices.size());
    parallel_for(indices.size(), workers, [&](std::size_t k) {
        auto& head = result.heads[k];
        head.index = indices[k];
        head.data_hash = data_hash;
        head.rows = rows.size();
        Rng rng = make_rng(seed, {round, k});
        try {
            auto trained = train_classifier(x, indices[k].select(thetas), config, rng);
            head.estimator.emplace(indices[k], std::move(trained), region, round);
            head.status = HeadStatus::ok;
        } catch (const std::exception& e) {
            head.status = HeadStatus::failed;
            head.error = e.what();
        }
    });
    return result;
}

std::filesystem::path estimator_base(const std::filesystem::path& dir, std::size_t round, std::size_t head) {
    return dir / ("round_" + std::to_string(round)) / ("head_" + std::to_string(head));
}

}  // namespace tmnre
