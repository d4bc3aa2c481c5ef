#include "tmnre/neural.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "tmnre/errors.hpp"

namespace tmnre {
namespace {

constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.1;

using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;
using VectorMap = Eigen::Map<Vector>;
using ConstVectorMap = Eigen::Map<const Vector>;

ConstMatrixMap view(const Vector& flat, const ParamBlock& b) { return {flat.data() + b.offset, b.rows, b.cols}; }
MatrixMap view(Vector& flat, const ParamBlock& b) { return {flat.data() + b.offset, b.rows, b.cols}; }
ConstVectorMap view_vec(const Vector& flat, const ParamBlock& b) { return {flat.data() + b.offset, b.size()}; }
VectorMap view_vec(Vector& flat, const ParamBlock& b) { return {flat.data() + b.offset, b.size()}; }

// z = x W^T + 1 b^T
Matrix affine(const Matrix& x, const ConstMatrixMap& w, const ConstVectorMap& b) {
    Matrix z = x * w.transpose();
    z.rowwise() += b.transpose();
    return z;
}

double sigmoid(double f) {
    if (f >= 0.0) return 1.0 / (1.0 + std::exp(-f));
    const double e = std::exp(f);
    return e / (1.0 + e);
}

struct BatchNormOut {
    Matrix y;
    Matrix xhat;
    Vector invstd;
};

BatchNormOut batch_norm(const Matrix& x, const ConstVectorMap& gamma, const ConstVectorMap& beta, BatchNormMode mode,
                        VectorMap running_mean, VectorMap running_var, bool update_running) {
    BatchNormOut out;
    Vector mean;
    Vector var;
    if (mode == BatchNormMode::train) {
        const auto n = static_cast<double>(x.rows());
        mean = x.colwise().mean().transpose();
        var = (x.rowwise() - mean.transpose()).array().square().colwise().sum().transpose() / n;
        if (update_running) {
            running_mean = (1.0 - kBatchNormMomentum) * running_mean + kBatchNormMomentum * mean;
            const double unbias = x.rows() > 1 ? n / (n - 1.0) : 1.0;
            running_var = (1.0 - kBatchNormMomentum) * running_var + kBatchNormMomentum * unbias * var;
        }
    } else {
        mean = running_mean;
        var = running_var;
    }
    out.invstd = (var.array() + kBatchNormEps).rsqrt().matrix();
    out.xhat = ((x.rowwise() - mean.transpose()).array().rowwise() * out.invstd.transpose().array()).matrix();
    out.y = (out.xhat.array().rowwise() * gamma.transpose().array()).matrix();
    out.y.rowwise() += beta.transpose();
    return out;
}

// Returns dL/dx and accumulates dgamma/dbeta.
Matrix batch_norm_backward(const Matrix& dy, const Matrix& xhat, const Vector& invstd, const ConstVectorMap& gamma,
                           BatchNormMode mode, VectorMap dgamma, VectorMap dbeta) {
    dgamma = (dy.array() * xhat.array()).colwise().sum().transpose();
    dbeta = dy.colwise().sum().transpose();
    const Eigen::ArrayXXd dxhat = dy.array().rowwise() * gamma.transpose().array();
    if (mode == BatchNormMode::eval) return (dxhat.rowwise() * invstd.transpose().array()).matrix();
    const auto n = static_cast<double>(dy.rows());
    const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum().matrix();
    const Eigen::RowVectorXd sum_dxhat_xhat = (dxhat * xhat.array()).colwise().sum().matrix();
    Eigen::ArrayXXd dx = n * dxhat;
    dx.rowwise() -= sum_dxhat.array();
    dx -= xhat.array().rowwise() * sum_dxhat_xhat.array();
    dx.rowwise() *= (invstd.array() / n).transpose();
    return dx.matrix();
}

std::vector<std::size_t> shuffled(std::span<const std::size_t> items, Rng& rng) {
    std::vector<std::size_t> out(items.begin(), items.end());
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

void check_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) throw PreconditionError(std::string(what) + " contains non-finite values");
}

}  // namespace

Standardizer::Standardizer(std::size_t features)
    : mean_(Vector::Zero(static_cast<Eigen::Index>(features))), m2_(Vector::Zero(static_cast<Eigen::Index>(features))) {}

Standardizer Standardizer::fit(const Matrix& data) {
    Standardizer s(static_cast<std::size_t>(data.cols()));
    s.update(data);
    return s;
}

void Standardizer::update(const Matrix& data) {
    if (mean_.size() == 0 && count_ == 0) *this = Standardizer(static_cast<std::size_t>(data.cols()));
    if (data.cols() != mean_.size()) throw PreconditionError("standardizer feature count mismatch");
    if (data.rows() == 0) return;
    const auto nb = static_cast<double>(data.rows());
    const Vector batch_mean = data.colwise().mean().transpose();
    const Vector batch_m2 = (data.rowwise() - batch_mean.transpose()).array().square().colwise().sum().transpose();
    const auto na = static_cast<double>(count_);
    const double total = na + nb;
    const Vector delta = batch_mean - mean_;
    mean_ += delta * (nb / total);
    m2_ += batch_m2 + delta.cwiseProduct(delta) * (na * nb / total);
    count_ += static_cast<std::size_t>(data.rows());
}

Vector Standardizer::variance() const {
    if (count_ == 0) return Vector::Ones(mean_.size());
    return m2_ / static_cast<double>(count_);
}

Vector Standardizer::scale() const {
    Vector s = variance().cwiseSqrt();
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (!(s[i] > 1e-12)) s[i] = 1.0;
    }
    return s;
}

Matrix Standardizer::transform(const Matrix& data) const {
    if (data.cols() != mean_.size()) throw PreconditionError("standardizer feature count mismatch");
    const Vector inv = scale().cwiseInverse();
    return ((data.rowwise() - mean_.transpose()).array().rowwise() * inv.transpose().array()).matrix();
}

Matrix Standardizer::inverse_transform(const Matrix& data) const {
    if (data.cols() != mean_.size()) throw PreconditionError("standardizer feature count mismatch");
    Matrix out = (data.array().rowwise() * scale().transpose().array()).matrix();
    out.rowwise() += mean_.transpose();
    return out;
}

nlohmann::json Standardizer::to_json() const {
    return {{"count", count_},
            {"mean", std::vector<double>(mean_.data(), mean_.data() + mean_.size())},
            {"m2", std::vector<double>(m2_.data(), m2_.data() + m2_.size())}};
}

Standardizer Standardizer::from_json(const nlohmann::json& j) {
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto m2 = j.at("m2").get<std::vector<double>>();
    if (mean.size() != m2.size()) throw PreconditionError("standardizer mean/m2 size mismatch");
    Standardizer s(mean.size());
    s.mean_ = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    s.m2_ = Eigen::Map<const Vector>(m2.data(), static_cast<Eigen::Index>(m2.size()));
    s.count_ = j.at("count").get<std::size_t>();
    return s;
}

struct ClassifierNet::Cache {
    struct Block {
        Matrix h_in;
        Matrix xhat_a;
        Vector invstd_a;
        Matrix r1;
        Matrix xhat_b;
        Vector invstd_b;
        Matrix r2;
    };
    std::vector<Block> blocks;
    Matrix h_out;
};

ClassifierNet::ClassifierNet(NetShape shape) : shape_(shape) {
    if (shape_.inputs == 0 || shape_.hidden == 0) throw PreconditionError("network needs inputs >= 1 and hidden >= 1");
    build_layout();
    const auto h = static_cast<Eigen::Index>(shape_.hidden);
    for (std::size_t k = 0; k < 2 * shape_.blocks; ++k) {
        buffers_.segment(static_cast<Eigen::Index>(k) * 2 * h + h, h).setOnes();
    }
}

ClassifierNet::ClassifierNet(NetShape shape, Rng& rng) : ClassifierNet(shape) {
    // Linear layers: U(-1/sqrt(fan_in), 1/sqrt(fan_in)); batchnorm gamma 1, beta 0.
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (const auto& b : layout_) {
        auto p = view_vec(params_, b);
        if (b.name.ends_with(".gamma")) {
            p.setOnes();
        } else if (b.name.ends_with(".beta")) {
            p.setZero();
        } else {
            const std::string layer = b.name.substr(0, b.name.rfind('.'));
            const auto& w = *std::find_if(layout_.begin(), layout_.end(),
                                          [&](const ParamBlock& x) { return x.name == layer + ".weight"; });
            const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols));
            for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = bound * unit(rng);
        }
    }
}

void ClassifierNet::build_layout() {
    layout_.clear();
    const auto h = static_cast<Eigen::Index>(shape_.hidden);
    const auto in = static_cast<Eigen::Index>(shape_.inputs);
    Eigen::Index offset = 0;
    auto add = [&](std::string name, Eigen::Index rows, Eigen::Index cols) {
        layout_.push_back({std::move(name), offset, rows, cols});
        offset += rows * cols;
    };
    add("input.weight", h, in);
    add("input.bias", h, 1);
    for (std::size_t k = 0; k < shape_.blocks; ++k) {
        const std::string p = "block" + std::to_string(k) + ".";
        for (const char* half : {"a", "b"}) {
            add(p + "bn_" + half + ".gamma", h, 1);
            add(p + "bn_" + half + ".beta", h, 1);
            add(p + "linear_" + half + ".weight", h, h);
            add(p + "linear_" + half + ".bias", h, 1);
        }
    }
    add("output.weight", 1, h);
    add("output.bias", 1, 1);
    params_ = Vector::Zero(offset);
    buffers_ = Vector::Zero(static_cast<Eigen::Index>(4 * shape_.blocks) * h);
}

const std::string& ClassifierNet::layer_of(Eigen::Index index) const {
    for (const auto& b : layout_) {
        if (index >= b.offset && index < b.offset + b.size()) return b.name;
    }
    throw PreconditionError("parameter index out of range");
}

Vector ClassifierNet::forward(const Matrix& inputs, BatchNormMode mode, Cache* cache, Vector* running) const {
    if (static_cast<std::size_t>(inputs.cols()) != shape_.inputs) throw PreconditionError("network input width mismatch");
    if (inputs.rows() == 0) return Vector();
    const auto h = static_cast<Eigen::Index>(shape_.hidden);
    // Eval mode reads the buffers; train mode may write them through `running`.
    Vector scratch;
    Vector& buf = running != nullptr ? *running : (scratch = buffers_);
    std::size_t li = 0;
    auto next = [&]() -> const ParamBlock& { return layout_[li++]; };

    const auto& w_in = next();
    const auto& b_in = next();
    Matrix hid = affine(inputs, view(params_, w_in), view_vec(params_, b_in));
    if (cache != nullptr) cache->blocks.assign(shape_.blocks, {});
    for (std::size_t k = 0; k < shape_.blocks; ++k) {
        const Eigen::Index base = static_cast<Eigen::Index>(k) * 4 * h;
        const auto& ga = next();
        const auto& ba = next();
        const auto& wa = next();
        const auto& bia = next();
        const auto& gb = next();
        const auto& bb = next();
        const auto& wb = next();
        const auto& bib = next();
        auto bn1 = batch_norm(hid, view_vec(params_, ga), view_vec(params_, ba), mode, VectorMap(buf.data() + base, h),
                              VectorMap(buf.data() + base + h, h), running != nullptr);
        Matrix r1 = bn1.y.cwiseMax(0.0);
        Matrix z1 = affine(r1, view(params_, wa), view_vec(params_, bia));
        auto bn2 = batch_norm(z1, view_vec(params_, gb), view_vec(params_, bb), mode, VectorMap(buf.data() + base + 2 * h, h),
                              VectorMap(buf.data() + base + 3 * h, h), running != nullptr);
        Matrix r2 = bn2.y.cwiseMax(0.0);
        Matrix z2 = affine(r2, view(params_, wb), view_vec(params_, bib));
        if (cache != nullptr) {
            auto& c = cache->blocks[k];
            c.h_in = hid;
            c.xhat_a = std::move(bn1.xhat);
            c.invstd_a = std::move(bn1.invstd);
            c.r1 = std::move(r1);
            c.xhat_b = std::move(bn2.xhat);
            c.invstd_b = std::move(bn2.invstd);
            c.r2 = std::move(r2);
        }
        hid += z2;
    }
    const auto& w_out = next();
    const auto& b_out = next();
    Vector f = hid * view(params_, w_out).transpose();
    f.array() += params_[b_out.offset];
    if (cache != nullptr) cache->h_out = std::move(hid);
    return f;
}

Vector ClassifierNet::logits(const Matrix& inputs) const { return forward(inputs, BatchNormMode::eval, nullptr, nullptr); }

double ClassifierNet::loss_and_gradient(const Matrix& inputs, const Vector& labels, BatchNormMode mode, Vector* gradient) {
    if (labels.size() != inputs.rows()) throw PreconditionError("labels and inputs differ in length");
    const Vector& p = params_;
    if (inputs.rows() == 0) throw PreconditionError("empty batch");
    Cache cache;
    const Vector f = forward(inputs, mode, gradient != nullptr ? &cache : nullptr,
                             mode == BatchNormMode::train ? &buffers_ : nullptr);
    const auto n = static_cast<double>(inputs.rows());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < f.size(); ++i) loss += bce_logit_loss(f[i], labels[i]);
    loss /= n;
    if (gradient == nullptr) return loss;

    gradient->setZero(params_.size());
    Vector& g = *gradient;
    Vector dout(f.size());
    for (Eigen::Index i = 0; i < f.size(); ++i) dout[i] = (sigmoid(f[i]) - labels[i]) / n;

    std::size_t li = layout_.size();
    auto prev = [&]() -> const ParamBlock& { return layout_[--li]; };
    const auto& b_out = prev();
    const auto& w_out = prev();
    g[b_out.offset] = dout.sum();
    view(g, w_out) = dout.transpose() * cache.h_out;
    Matrix dh = dout * view(p, w_out);

    for (std::size_t k = shape_.blocks; k-- > 0;) {
        const auto& c = cache.blocks[k];
        const auto& bib = prev();
        const auto& wb = prev();
        const auto& bb = prev();
        const auto& gb = prev();
        const auto& bia = prev();
        const auto& wa = prev();
        const auto& ba = prev();
        const auto& ga = prev();

        view(g, wb) = dh.transpose() * c.r2;
        view_vec(g, bib) = dh.colwise().sum().transpose();
        Matrix da2 = ((dh * view(p, wb)).array() * (c.r2.array() > 0.0).cast<double>()).matrix();
        Matrix dz1 = batch_norm_backward(da2, c.xhat_b, c.invstd_b, view_vec(p, gb), mode, view_vec(g, gb),
                                         view_vec(g, bb));
        view(g, wa) = dz1.transpose() * c.r1;
        view_vec(g, bia) = dz1.colwise().sum().transpose();
        Matrix da1 = ((dz1 * view(p, wa)).array() * (c.r1.array() > 0.0).cast<double>()).matrix();
        dh += batch_norm_backward(da1, c.xhat_a, c.invstd_a, view_vec(p, ga), mode, view_vec(g, ga), view_vec(g, ba));
    }
    const auto& b_in = prev();
    const auto& w_in = prev();
    view(g, w_in) = dh.transpose() * inputs;
    view_vec(g, b_in) = dh.colwise().sum().transpose();
    return loss;
}

void ClassifierNet::zero_head() {
    for (const auto& b : layout_) {
        if (b.name.starts_with("output.")) view_vec(params_, b).setZero();
    }
}

nlohmann::json ClassifierNet::layout_json() const {
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : layout_) blocks.push_back({{"name", b.name}, {"offset", b.offset}, {"rows", b.rows}, {"cols", b.cols}});
    return {{"inputs", shape_.inputs},
            {"hidden", shape_.hidden},
            {"blocks", shape_.blocks},
            {"parameter_count", params_.size()},
            {"buffer_count", buffers_.size()},
            {"layout", blocks}};
}

double bce_logit_loss(double logit, double label) {
    return std::max(logit, 0.0) - logit * label + std::log1p(std::exp(-std::abs(logit)));
}

void adam_step(Vector& params, const Vector& gradient, AdamState& state, double learning_rate,
               std::span<const ParamBlock> layout, const AdamOptions& options) {
    if (gradient.size() != params.size()) throw PreconditionError("gradient and parameters differ in size");
    for (Eigen::Index i = 0; i < gradient.size(); ++i) {
        if (std::isfinite(gradient[i])) continue;
        std::string where = "parameter " + std::to_string(i);
        for (const auto& b : layout) {
            if (i >= b.offset && i < b.offset + b.size()) where = "layer " + b.name + " (parameter " + std::to_string(i) + ")";
        }
        throw RuntimeFailure("non-finite gradient in " + where);
    }
    if (state.m.size() != params.size()) {
        state.m = Vector::Zero(params.size());
        state.v = Vector::Zero(params.size());
        state.step = 0;
    }
    ++state.step;
    const auto t = static_cast<double>(state.step);
    state.m = options.beta1 * state.m + (1.0 - options.beta1) * gradient;
    state.v = options.beta2 * state.v + (1.0 - options.beta2) * gradient.cwiseProduct(gradient);
    const double c1 = 1.0 - std::pow(options.beta1, t);
    const double c2 = 1.0 - std::pow(options.beta2, t);
    params.array() -= learning_rate * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + options.epsilon);
}

nlohmann::json TrainConfig::to_json() const {
    return {{"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"max_epochs", max_epochs},
            {"early_stop_patience", early_stop_patience},
            {"plateau_factor", plateau_factor},
            {"plateau_patience", plateau_patience},
            {"validation_fraction", validation_fraction},
            {"weight_decay", weight_decay},
            {"hidden", hidden},
            {"blocks", blocks}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.plateau_factor = j.value("plateau_factor", c.plateau_factor);
    c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.hidden = j.value("hidden", c.hidden);
    c.blocks = j.value("blocks", c.blocks);
    return c;
}

void TrainTrace::write_csv(std::ostream& out) const {
    out << "epoch,train_loss,val_loss,learning_rate\n";
    out.precision(17);
    for (const auto& e : epochs) out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.learning_rate << '\n';
}

Vector TrainedClassifier::log_ratio(const Matrix& x, const Matrix& theta) const {
    if (x.rows() != theta.rows()) throw PreconditionError("x and theta differ in row count");
    Matrix inputs(x.rows(), x.cols() + theta.cols());
    inputs << x_standardizer.transform(x), theta_standardizer.transform(theta);
    return net.logits(inputs);
}

std::size_t minimum_training_rows(const TrainConfig& config) {
    return std::max<std::size_t>(4, static_cast<std::size_t>(std::ceil(2.0 / config.validation_fraction)));
}

TrainedClassifier train_classifier(const Matrix& x, const Matrix& theta, const TrainConfig& config, Rng& rng) {
    if (!(config.learning_rate > 0.0) || config.batch_size == 0 || config.max_epochs == 0) {
        throw PreconditionError("training needs learning_rate > 0, batch_size >= 1 and max_epochs >= 1");
    }
    if (!(config.validation_fraction > 0.0 && config.validation_fraction < 1.0)) {
        throw PreconditionError("validation_fraction must lie in (0, 1)");
    }
    if (!(config.plateau_factor > 0.0 && config.plateau_factor <= 1.0)) throw PreconditionError("plateau_factor must lie in (0, 1]");
    if (x.rows() != theta.rows()) throw PreconditionError("x and theta differ in row count");
    const auto n = static_cast<std::size_t>(x.rows());
    if (n < minimum_training_rows(config)) {
        throw PreconditionError("training needs at least " + std::to_string(minimum_training_rows(config)) + " rows, got " +
                                std::to_string(n));
    }
    check_finite(x, "x");
    check_finite(theta, "theta");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(config.validation_fraction * static_cast<double>(n))));
    const std::span<const std::size_t> train_idx(order.data(), n - n_val);
    const std::span<const std::size_t> val_idx(order.data() + (n - n_val), n_val);

    auto rows_of = [](const Matrix& m, std::span<const std::size_t> idx) {
        Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
        return out;
    };

    TrainedClassifier result;
    result.x_standardizer = Standardizer::fit(rows_of(x, train_idx));
    result.theta_standardizer = Standardizer::fit(rows_of(theta, train_idx));
    const Matrix xs = result.x_standardizer.transform(x);
    const Matrix ts = result.theta_standardizer.transform(theta);
    const Eigen::Index dx = xs.cols();
    const Eigen::Index width = xs.cols() + ts.cols();

    result.net = ClassifierNet({static_cast<std::size_t>(width), config.hidden, config.blocks}, rng);
    ClassifierNet& net = result.net;

    // Joint rows then marginal rows (x_a, theta_b).
    auto assemble = [&](std::span<const std::size_t> a, std::span<const std::size_t> b, Matrix& inputs, Vector& labels) {
        const auto m = static_cast<Eigen::Index>(a.size());
        inputs.resize(2 * m, width);
        labels.resize(2 * m);
        for (Eigen::Index i = 0; i < m; ++i) {
            const auto ia = static_cast<Eigen::Index>(a[static_cast<std::size_t>(i)]);
            const auto ib = static_cast<Eigen::Index>(b[static_cast<std::size_t>(i)]);
            inputs.block(i, 0, 1, dx) = xs.row(ia);
            inputs.block(i, dx, 1, ts.cols()) = ts.row(ia);
            inputs.block(m + i, 0, 1, dx) = xs.row(ia);
            inputs.block(m + i, dx, 1, ts.cols()) = ts.row(ib);
        }
        labels.head(m).setOnes();
        labels.tail(m).setZero();
    };

    Matrix val_inputs;
    Vector val_labels;
    const auto val_partner = shuffled(val_idx, rng);
    assemble(val_idx, val_partner, val_inputs, val_labels);

    AdamState adam;
    double lr = config.learning_rate;
    double best = std::numeric_limits<double>::infinity();
    double plateau_best = best;
    std::size_t since_best = 0;
    std::size_t plateau_bad = 0;
    Vector best_params = net.parameters();
    Vector best_buffers = net.buffers();
    Matrix inputs;
    Vector labels;
    Vector grad;

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const auto perm_a = shuffled(train_idx, rng);
        const auto perm_b = shuffled(train_idx, rng);
        double train_total = 0.0;
        for (std::size_t start = 0; start < perm_a.size(); start += config.batch_size) {
            const std::size_t len = std::min(config.batch_size, perm_a.size() - start);
            assemble({perm_a.data() + start, len}, {perm_b.data() + start, len}, inputs, labels);
            const double loss = net.loss_and_gradient(inputs, labels, BatchNormMode::train, &grad);
            if (config.weight_decay > 0.0) grad += config.weight_decay * net.parameters();
            adam_step(net.parameters(), grad, adam, lr, net.layout());
            train_total += loss * static_cast<double>(len);
        }
        const double train_loss = train_total / static_cast<double>(perm_a.size());
        const double val_loss = net.loss_and_gradient(val_inputs, val_labels, BatchNormMode::eval, nullptr);
        result.trace.epochs.push_back({epoch, train_loss, val_loss, lr});
        if (!std::isfinite(val_loss)) {
            throw RuntimeFailure("validation loss is not finite at epoch " + std::to_string(epoch));
        }
        if (val_loss < best) {
            best = val_loss;
            best_params = net.parameters();
            best_buffers = net.buffers();
            result.trace.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= config.early_stop_patience) {
            result.trace.early_stopped = true;
            break;
        }
        if (val_loss < plateau_best) {
            plateau_best = val_loss;
            plateau_bad = 0;
        } else if (++plateau_bad > config.plateau_patience) {
            lr *= config.plateau_factor;
            plateau_bad = 0;
        }
    }
    net.parameters() = best_params;
    net.buffers() = best_buffers;
    result.trace.best_val_loss = best;
    return result;
}

GradientCheckReport finite_difference_check(ClassifierNet net, const Matrix& inputs, const Vector& labels, double tolerance,
                                            Rng& rng, std::size_t samples) {
    constexpr double kStep = 1e-4;
    GradientCheckReport report;
    Vector grad;
    net.loss_and_gradient(inputs, labels, BatchNormMode::eval, &grad);
    const auto total = static_cast<std::size_t>(net.parameters().size());
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(samples, total));
    for (std::size_t i : idx) {
        const auto k = static_cast<Eigen::Index>(i);
        const double saved = net.parameters()[k];
        net.parameters()[k] = saved + kStep;
        const double up = net.loss_and_gradient(inputs, labels, BatchNormMode::eval, nullptr);
        net.parameters()[k] = saved - kStep;
        const double down = net.loss_and_gradient(inputs, labels, BatchNormMode::eval, nullptr);
        net.parameters()[k] = saved;
        const double fd = (up - down) / (2.0 * kStep);
        const double ad = grad[k];
        const double rel = std::abs(ad - fd) / (std::abs(ad) + std::abs(fd) + 1e-8);
        report.max_relative_error = std::max(report.max_relative_error, rel);
        ++report.checked;
        if (!(rel < tolerance)) {
            std::ostringstream msg;
            msg << net.layer_of(k) << '[' << i << "]: ad=" << ad << ", fd=" << fd << ", rel=" << rel;
            report.failures.push_back(msg.str());
        }
    }
    return report;
}

}  // namespace tmnre
