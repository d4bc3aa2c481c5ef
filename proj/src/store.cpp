#include "tmnre/store.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tmnre/errors.hpp"

namespace tmnre {
namespace {

std::uint64_t to_le(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        std::uint64_t out = 0;
        for (int i = 0; i < 8; ++i) out |= ((v >> (8 * i)) & 0xFFU) << (8 * (7 - i));
        return out;
    }
}

}  // namespace

void write_f64_le(std::ostream& out, const double* values, std::size_t count) {
    std::vector<std::uint64_t> words(count);
    for (std::size_t i = 0; i < count; ++i) words[i] = to_le(std::bit_cast<std::uint64_t>(values[i]));
    out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(count * sizeof(std::uint64_t)));
}

void read_f64_le(std::istream& in, double* values, std::size_t count) {
    std::vector<std::uint64_t> words(count);
    in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(count * sizeof(std::uint64_t)));
    if (static_cast<std::size_t>(in.gcount()) != count * sizeof(std::uint64_t)) throw RuntimeFailure("binary file is truncated");
    for (std::size_t i = 0; i < count; ++i) values[i] = std::bit_cast<double>(to_le(words[i]));
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw RuntimeFailure("cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw RuntimeFailure("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    auto p = path;
    p += ".json";
    return p;
}

SampleStore::SampleStore(std::size_t param_dim, std::size_t data_dim) : param_dim_(param_dim), data_dim_(data_dim) {
    if (param_dim == 0 || data_dim == 0) throw PreconditionError("store dimensions must be positive");
}

void SampleStore::append(std::size_t round, const Matrix& thetas, const Matrix& xs) {
    if (static_cast<std::size_t>(thetas.cols()) != param_dim_ || static_cast<std::size_t>(xs.cols()) != data_dim_) {
        throw PreconditionError("store append: column counts do not match the store");
    }
    if (thetas.rows() != xs.rows()) throw PreconditionError("store append: theta and x row counts differ");
    for (Eigen::Index i = 0; i < thetas.rows(); ++i) {
        rounds_.push_back(round);
        for (Eigen::Index j = 0; j < thetas.cols(); ++j) thetas_.push_back(thetas(i, j));
        for (Eigen::Index j = 0; j < xs.cols(); ++j) xs_.push_back(xs(i, j));
    }
}

Vector SampleStore::theta(std::size_t i) const {
    return Eigen::Map<const Vector>(thetas_.data() + i * param_dim_, static_cast<Eigen::Index>(param_dim_));
}

Vector SampleStore::x(std::size_t i) const {
    return Eigen::Map<const Vector>(xs_.data() + i * data_dim_, static_cast<Eigen::Index>(data_dim_));
}

std::vector<std::size_t> SampleStore::indices_in(const TruncationRegion& region) const {
    if (region.dims() != param_dim_) throw PreconditionError("region dimension does not match the store");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i) {
        if (region.contains({thetas_.data() + i * param_dim_, param_dim_})) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> SampleStore::indices_of_round(std::size_t round) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i) {
        if (rounds_[i] == round) out.push_back(i);
    }
    return out;
}

Matrix SampleStore::thetas(const std::vector<std::size_t>& indices) const {
    Matrix out(static_cast<Eigen::Index>(indices.size()), static_cast<Eigen::Index>(param_dim_));
    for (std::size_t r = 0; r < indices.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = theta(indices[r]).transpose();
    return out;
}

Matrix SampleStore::xs(const std::vector<std::size_t>& indices) const {
    Matrix out(static_cast<Eigen::Index>(indices.size()), static_cast<Eigen::Index>(data_dim_));
    for (std::size_t r = 0; r < indices.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = x(indices[r]).transpose();
    return out;
}

std::map<std::size_t, std::size_t> SampleStore::counts_by_round() const {
    std::map<std::size_t, std::size_t> out;
    for (auto r : rounds_) ++out[r];
    return out;
}

void SampleStore::truncate_rounds(std::size_t round) {
    std::size_t keep = 0;
    for (std::size_t i = 0; i < size(); ++i) {
        if (rounds_[i] >= round) continue;
        rounds_[keep] = rounds_[i];
        std::copy_n(thetas_.begin() + static_cast<std::ptrdiff_t>(i * param_dim_), param_dim_,
                    thetas_.begin() + static_cast<std::ptrdiff_t>(keep * param_dim_));
        std::copy_n(xs_.begin() + static_cast<std::ptrdiff_t>(i * data_dim_), data_dim_,
                    xs_.begin() + static_cast<std::ptrdiff_t>(keep * data_dim_));
        ++keep;
    }
    rounds_.resize(keep);
    thetas_.resize(keep * param_dim_);
    xs_.resize(keep * data_dim_);
}

nlohmann::json SampleStore::schema() const {
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& [r, c] : counts_by_round()) counts[std::to_string(r)] = c;
    nlohmann::json fields = nlohmann::json::array({"round"});
    for (std::size_t d = 0; d < param_dim_; ++d) fields.push_back("theta_" + std::to_string(d));
    for (std::size_t d = 0; d < data_dim_; ++d) fields.push_back("x_" + std::to_string(d));
    return {{"format", "tmnre-sample-store"},
            {"version", 1},
            {"dtype", "float64"},
            {"endianness", "little"},
            {"param_dim", param_dim_},
            {"data_dim", data_dim_},
            {"record_fields", fields},
            {"record_count", size()},
            {"counts_by_round", counts}};
}

void SampleStore::save(const std::filesystem::path& path) const {
    const std::size_t width = 1 + param_dim_ + data_dim_;
    std::vector<double> flat;
    flat.reserve(size() * width);
    for (std::size_t i = 0; i < size(); ++i) {
        flat.push_back(static_cast<double>(rounds_[i]));
        flat.insert(flat.end(), thetas_.begin() + static_cast<std::ptrdiff_t>(i * param_dim_),
                    thetas_.begin() + static_cast<std::ptrdiff_t>((i + 1) * param_dim_));
        flat.insert(flat.end(), xs_.begin() + static_cast<std::ptrdiff_t>(i * data_dim_),
                    xs_.begin() + static_cast<std::ptrdiff_t>((i + 1) * data_dim_));
    }
    std::ostringstream bin;
    write_f64_le(bin, flat.data(), flat.size());
    write_file_atomic(path, bin.str());
    write_file_atomic(sidecar_path(path), schema().dump(2) + "\n");
}

SampleStore SampleStore::load(const std::filesystem::path& path) {
    std::ifstream meta_in(sidecar_path(path));
    if (!meta_in) throw RuntimeFailure("missing store sidecar " + sidecar_path(path).string());
    const auto meta = nlohmann::json::parse(meta_in);
    if (meta.value("format", "") != "tmnre-sample-store") throw RuntimeFailure("not a sample store: " + path.string());
    SampleStore store(meta.at("param_dim").get<std::size_t>(), meta.at("data_dim").get<std::size_t>());
    const auto count = meta.at("record_count").get<std::size_t>();
    const std::size_t width = 1 + store.param_dim_ + store.data_dim_;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeFailure("cannot open store " + path.string());
    std::vector<double> flat(count * width);
    read_f64_le(in, flat.data(), flat.size());
    store.rounds_.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double* rec = flat.data() + i * width;
        store.rounds_.push_back(static_cast<std::size_t>(rec[0]));
        store.thetas_.insert(store.thetas_.end(), rec + 1, rec + 1 + store.param_dim_);
        store.xs_.insert(store.xs_.end(), rec + 1 + store.param_dim_, rec + width);
    }
    return store;
}

}  // namespace tmnre
