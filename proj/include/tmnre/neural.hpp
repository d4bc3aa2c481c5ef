#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmnre/random.hpp"

namespace tmnre {

/// Per-feature mean/variance, accumulated with Welford updates.
class Standardizer {
public:
    Standardizer() = default;
    explicit Standardizer(std::size_t features);

    static Standardizer fit(const Matrix& data);

    void update(const Matrix& data);
    Matrix transform(const Matrix& data) const;
    Matrix inverse_transform(const Matrix& data) const;

    std::size_t features() const { return static_cast<std::size_t>(mean_.size()); }
    std::size_t count() const { return count_; }
    const Vector& mean() const { return mean_; }
    Vector variance() const;
    /// sqrt(variance), or 1 for constant features.
    Vector scale() const;

    nlohmann::json to_json() const;
    static Standardizer from_json(const nlohmann::json& j);

private:
    Vector mean_;
    Vector m2_;
    std::size_t count_ = 0;
};

struct NetShape {
    std::size_t inputs = 1;
    std::size_t hidden = 64;
    std::size_t blocks = 2;

    friend bool operator==(const NetShape&, const NetShape&) = default;
};

/// Named slice of the flat parameter vector.
struct ParamBlock {
    std::string name;
    Eigen::Index offset = 0;
    Eigen::Index rows = 0;
    Eigen::Index cols = 1;

    Eigen::Index size() const { return rows * cols; }
};

enum class BatchNormMode {
    train,  // batch statistics, running averages updated
    eval,   // frozen running averages
};

/// linear -> residual blocks -> linear scalar head. Each residual block is
/// h + L_b(relu(BN_b(L_a(relu(BN_a(h)))))). The scalar output is the log
/// ratio estimate itself; no sigmoid is applied on the evaluation path.
class ClassifierNet {
public:
    ClassifierNet() = default;
    /// All parameters zero, running variances one.
    explicit ClassifierNet(NetShape shape);
    ClassifierNet(NetShape shape, Rng& rng);

    const NetShape& shape() const { return shape_; }

    Vector& parameters() { return params_; }
    const Vector& parameters() const { return params_; }
    /// Batchnorm running means and variances (not trained by gradient).
    Vector& buffers() { return buffers_; }
    const Vector& buffers() const { return buffers_; }
    const std::vector<ParamBlock>& layout() const { return layout_; }
    /// Name of the layer owning flat parameter `index`.
    const std::string& layer_of(Eigen::Index index) const;

    /// Network output for each input row, batchnorm in eval mode.
    Vector logits(const Matrix& inputs) const;

    /// Mean binary cross-entropy of logits against `labels` (0/1). Fills
    /// `gradient` (same size as parameters()) when non-null. In train mode
    /// the batchnorm running statistics are updated.
    double loss_and_gradient(const Matrix& inputs, const Vector& labels, BatchNormMode mode, Vector* gradient);

    /// Sets the output layer to zero so the network is uninformative.
    void zero_head();

    nlohmann::json layout_json() const;

private:
    struct Cache;

    void build_layout();
    Vector forward(const Matrix& inputs, BatchNormMode mode, Cache* cache, Vector* running) const;

    NetShape shape_;
    Vector params_;
    Vector buffers_;
    std::vector<ParamBlock> layout_;
};

/// -[y log s(f) + (1-y) log(1 - s(f))] in the overflow-free form
/// max(f, 0) - f y + log(1 + exp(-|f|)).
double bce_logit_loss(double logit, double label);

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    Vector m;
    Vector v;
    std::size_t step = 0;
};

/// One bias-corrected Adam update in place. Throws RuntimeFailure naming
/// the layer (from `layout`, when given) if the gradient is not finite.
void adam_step(Vector& params, const Vector& gradient, AdamState& state, double learning_rate,
               std::span<const ParamBlock> layout = {}, const AdamOptions& options = {});

struct TrainConfig {
    double learning_rate = 0.01;
    std::size_t batch_size = 128;
    std::size_t max_epochs = 300;
    std::size_t early_stop_patience = 20;
    double plateau_factor = 0.1;
    std::size_t plateau_patience = 5;
    double validation_fraction = 0.10;
    double weight_decay = 0.0;
    std::size_t hidden = 64;
    std::size_t blocks = 2;

    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double learning_rate = 0.0;
};

struct TrainTrace {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
    bool early_stopped = false;

    void write_csv(std::ostream& out) const;
};

struct TrainedClassifier {
    ClassifierNet net;
    Standardizer x_standardizer;
    Standardizer theta_standardizer;
    TrainTrace trace;

    /// log r = f(standardized x, standardized theta) for every row pair.
    Vector log_ratio(const Matrix& x, const Matrix& theta) const;
};

/// Fits a ratio classifier on jointly drawn rows (x_i, theta_i). Marginal
/// pairs are produced by pairing each x in a mini-batch with theta from a
/// second, independently shuffled mini-batch of the same data. Keeps the
/// weights of the best validation epoch.
TrainedClassifier train_classifier(const Matrix& x, const Matrix& theta, const TrainConfig& config, Rng& rng);

/// Minimum number of rows train_classifier accepts for `config`.
std::size_t minimum_training_rows(const TrainConfig& config);

struct GradientCheckReport {
    std::size_t checked = 0;
    double max_relative_error = 0.0;
    std::vector<std::string> failures;  // "layer[index]: ad=..., fd=..., rel=..."

    bool passed() const { return checked > 0 && failures.empty(); }
};

/// Compares analytic gradients with central differences (step 1e-4) on
/// `samples` randomly chosen weights, batchnorm in eval mode.
GradientCheckReport finite_difference_check(ClassifierNet net, const Matrix& inputs, const Vector& labels,
                                            double tolerance, Rng& rng, std::size_t samples = 100);

}  // namespace tmnre
