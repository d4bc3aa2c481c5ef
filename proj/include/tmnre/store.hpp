#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include <json.hpp>

#include "tmnre/prior.hpp"
#include "tmnre/random.hpp"

namespace tmnre {

/// Append-only set of (round, theta, x) records.
///
/// On disk: `<path>` holds little-endian float64 records laid out as
/// [round, theta_0..theta_{D-1}, x_0..x_{n-1}]; `<path>.json` is the schema
/// sidecar (dimensions, record count, counts per round).
class SampleStore {
public:
    SampleStore() = default;
    SampleStore(std::size_t param_dim, std::size_t data_dim);

    std::size_t param_dim() const { return param_dim_; }
    std::size_t data_dim() const { return data_dim_; }
    std::size_t size() const { return rounds_.size(); }
    bool empty() const { return rounds_.empty(); }

    void append(std::size_t round, const Matrix& thetas, const Matrix& xs);

    std::size_t round_of(std::size_t i) const { return rounds_[i]; }
    Vector theta(std::size_t i) const;
    Vector x(std::size_t i) const;

    /// Record indices (ascending) whose theta lies in `region`.
    std::vector<std::size_t> indices_in(const TruncationRegion& region) const;
    std::vector<std::size_t> indices_of_round(std::size_t round) const;
    Matrix thetas(const std::vector<std::size_t>& indices) const;
    Matrix xs(const std::vector<std::size_t>& indices) const;
    std::map<std::size_t, std::size_t> counts_by_round() const;

    /// Drops every record from rounds >= `round`.
    void truncate_rounds(std::size_t round);

    nlohmann::json schema() const;
    /// Writes `path` and `path.json` via temporary files and rename.
    void save(const std::filesystem::path& path) const;
    static SampleStore load(const std::filesystem::path& path);

    friend bool operator==(const SampleStore&, const SampleStore&) = default;

private:
    std::size_t param_dim_ = 0;
    std::size_t data_dim_ = 0;
    std::vector<std::size_t> rounds_;
    std::vector<double> thetas_;  // row-major
    std::vector<double> xs_;      // row-major
};

std::filesystem::path sidecar_path(const std::filesystem::path& path);

/// Little-endian float64 helpers shared by the binary formats.
void write_f64_le(std::ostream& out, const double* values, std::size_t count);
void read_f64_le(std::istream& in, double* values, std::size_t count);

/// Writes `contents` to `path` through a sibling temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace tmnre
