#include "tmnre/config.hpp"

#include <fstream>
#include <set>
#include <type_traits>

#include "tmnre/serialize.hpp"

namespace tmnre {
namespace {

std::string join_errors(const std::vector<std::string>& errors) {
    std::string out = "invalid config:";
    for (const auto& e : errors) out += "\n  " + e;
    return out;
}

struct Context {
    std::vector<std::string> errors;
    std::vector<std::string> defaults;
};

template <class T>
bool type_matches(const nlohmann::json& v) {
    if constexpr (std::is_same_v<T, bool>) {
        return v.is_boolean();
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
        return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    } else if constexpr (std::is_floating_point_v<T>) {
        return v.is_number();
    } else if constexpr (std::is_same_v<T, std::string>) {
        return v.is_string();
    } else {
        return true;
    }
}

class Section {
public:
    Section(const nlohmann::json* j, std::string prefix, Context& ctx) : j_(j), prefix_(std::move(prefix)), ctx_(ctx) {
        if (j_ != nullptr && !j_->is_object()) {
            ctx_.errors.push_back(name("") + " must be a table");
            j_ = nullptr;
        }
    }

    bool has(const std::string& key) const { return j_ != nullptr && j_->contains(key); }

    template <class T>
    T get(const std::string& key, T fallback) {
        used_.insert(key);
        if (!has(key)) {
            ctx_.defaults.push_back(name(key) + " = " + nlohmann::json(fallback).dump());
            return fallback;
        }
        const auto& v = j_->at(key);
        try {
            if (!type_matches<T>(v)) throw std::invalid_argument("type");
            return v.get<T>();
        } catch (const std::exception&) {
            ctx_.errors.push_back(name(key) + ": unexpected value " + v.dump());
            return fallback;
        }
    }

    template <class T>
    std::optional<T> optional(const std::string& key) {
        used_.insert(key);
        if (!has(key)) return std::nullopt;
        try {
            return j_->at(key).get<T>();
        } catch (const std::exception&) {
            ctx_.errors.push_back(name(key) + ": unexpected value " + j_->at(key).dump());
            return std::nullopt;
        }
    }

    const nlohmann::json* raw(const std::string& key) {
        used_.insert(key);
        return has(key) ? &j_->at(key) : nullptr;
    }

    Section child(const std::string& key) { return {raw(key), name(key), ctx_}; }

    std::string name(const std::string& key) const {
        if (prefix_.empty()) return key.empty() ? "config" : key;
        return key.empty() ? prefix_ : prefix_ + "." + key;
    }

    void error(const std::string& key, const std::string& message) { ctx_.errors.push_back(name(key) + " " + message); }

    void finish() {
        if (j_ == nullptr) return;
        for (const auto& [key, value] : j_->items()) {
            if (!used_.contains(key)) ctx_.errors.push_back(name(key) + ": unknown key");
        }
    }

private:
    const nlohmann::json* j_;
    std::string prefix_;
    Context& ctx_;
    std::set<std::string> used_;
};

TmnreConfig read_tmnre(Section s) {
    TmnreConfig c;
    c.epsilon = s.get("epsilon", c.epsilon);
    c.beta = s.get("beta", c.beta);
    c.max_rounds = s.get("max_rounds", c.max_rounds);
    c.budget = s.get("budget", c.budget);
    c.round_fraction = s.get("round_fraction", c.round_fraction);
    c.schedule = s.get("schedule", c.schedule);
    c.increment = s.get("increment", c.increment);
    c.grid = s.get("grid", c.grid);
    const auto which = s.get("final_marginals", to_string(c.final_marginals));
    try {
        c.final_marginals = parse_marginal_set(which);
    } catch (const std::exception& e) {
        s.error("final_marginals", e.what());
    }
    c.final_phase = s.get("final_phase", c.final_phase);
    c.train_all_each_round = s.get("train_all_each_round", c.train_all_each_round);
    s.finish();
    return c;
}

TrainConfig read_train(Section s) {
    TrainConfig c;
    c.learning_rate = s.get("learning_rate", c.learning_rate);
    c.batch_size = s.get("batch_size", c.batch_size);
    c.max_epochs = s.get("max_epochs", c.max_epochs);
    c.early_stop_patience = s.get("early_stop_patience", c.early_stop_patience);
    c.plateau_factor = s.get("plateau_factor", c.plateau_factor);
    c.plateau_patience = s.get("plateau_patience", c.plateau_patience);
    c.validation_fraction = s.get("validation_fraction", c.validation_fraction);
    c.weight_decay = s.get("weight_decay", c.weight_decay);
    c.hidden = s.get("hidden", c.hidden);
    c.blocks = s.get("blocks", c.blocks);
    s.finish();
    return c;
}

C2stOptions read_c2st(Section s) {
    C2stOptions c;
    c.folds = s.get("folds", c.folds);
    c.hidden_factor = s.get("hidden_factor", c.hidden_factor);
    c.learning_rate = s.get("learning_rate", c.learning_rate);
    c.batch_size = s.get("batch_size", c.batch_size);
    c.max_epochs = s.get("max_epochs", c.max_epochs);
    c.patience = s.get("patience", c.patience);
    c.tolerance = s.get("tolerance", c.tolerance);
    c.max_samples = s.get("max_samples", c.max_samples);
    s.finish();
    return c;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> errors) : PreconditionError(join_errors(errors)), errors_(std::move(errors)) {}

std::vector<std::string> validate(const TrainConfig& t) {
    std::vector<std::string> errors;
    if (!(t.learning_rate > 0.0)) errors.push_back("train.learning_rate must be > 0");
    if (t.batch_size == 0) errors.push_back("train.batch_size must be >= 1");
    if (t.max_epochs == 0) errors.push_back("train.max_epochs must be >= 1");
    if (!(t.plateau_factor > 0.0 && t.plateau_factor <= 1.0)) errors.push_back("train.plateau_factor must lie in (0, 1]");
    if (!(t.validation_fraction > 0.0 && t.validation_fraction < 1.0)) {
        errors.push_back("train.validation_fraction must lie in (0, 1)");
    }
    if (t.weight_decay < 0.0) errors.push_back("train.weight_decay must be >= 0");
    if (t.hidden == 0) errors.push_back("train.hidden must be >= 1");
    return errors;
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["simulator"] = {{"name", simulator}, {"params", simulator_params}};
    j["prior"] = prior ? *prior : nlohmann::json();
    nlohmann::json obs = nlohmann::json::object();
    if (x_o) obs["x_o"] = *x_o;
    if (theta_o) obs["theta_o"] = *theta_o;
    j["observation"] = obs;
    j["algorithm"] = algorithm;
    j["tmnre"] = tmnre.to_json();
    j["train"] = train.to_json();
    j["seed"] = seed;
    j["workers"] = workers;
    j["output"] = output.string();
    j["export"] = {{"bins", exports.bins}, {"samples", exports.samples}};
    auto c2st = diagnose.c2st.to_json();
    c2st.erase("classifier");
    j["diagnose"] = {{"coverage_draws", diagnose.coverage_draws},   {"coverage_grid", diagnose.coverage_grid},
                     {"reference_samples", diagnose.reference_samples}, {"approx_samples", diagnose.approx_samples},
                     {"boundary_level", diagnose.boundary_level}, {"kl_bins", diagnose.kl_bins},
                     {"c2st", c2st}};
    j["sweep"] = {{"epsilons", sweep.epsilons}, {"repetitions", sweep.repetitions}};
    return j;
}

ParsedConfig parse_config(const nlohmann::json& j) {
    Context ctx;
    ParsedConfig out;
    RunConfig& c = out.config;
    Section root(&j, "", ctx);

    Section sim = root.child("simulator");
    c.simulator = sim.get("name", c.simulator);
    if (const auto* p = sim.raw("params")) {
        if (p->is_object()) {
            c.simulator_params = *p;
        } else {
            sim.error("params", "must be a table");
        }
    }
    sim.finish();

    if (const auto* p = root.raw("prior"); p != nullptr && !p->is_null()) c.prior = *p;

    Section obs = root.child("observation");
    c.x_o = obs.optional<std::vector<double>>("x_o");
    c.theta_o = obs.optional<std::vector<double>>("theta_o");
    obs.finish();

    c.algorithm = root.get("algorithm", c.algorithm);
    if (c.algorithm != "tmnre" && c.algorithm != "mnre") root.error("algorithm", "must be \"tmnre\" or \"mnre\"");
    c.tmnre = read_tmnre(root.child("tmnre"));
    c.train = read_train(root.child("train"));
    c.seed = root.get("seed", c.seed);
    c.workers = root.get("workers", c.workers);
    c.output = root.get("output", c.output.string());

    Section ex = root.child("export");
    c.exports.bins = ex.get("bins", c.exports.bins);
    c.exports.samples = ex.get("samples", c.exports.samples);
    ex.finish();

    Section dg = root.child("diagnose");
    c.diagnose.coverage_draws = dg.get("coverage_draws", c.diagnose.coverage_draws);
    c.diagnose.coverage_grid = dg.get("coverage_grid", c.diagnose.coverage_grid);
    c.diagnose.reference_samples = dg.get("reference_samples", c.diagnose.reference_samples);
    c.diagnose.approx_samples = dg.get("approx_samples", c.diagnose.approx_samples);
    c.diagnose.boundary_level = dg.get("boundary_level", c.diagnose.boundary_level);
    c.diagnose.kl_bins = dg.get("kl_bins", c.diagnose.kl_bins);
    c.diagnose.c2st = read_c2st(dg.child("c2st"));
    dg.finish();

    Section sw = root.child("sweep");
    c.sweep.epsilons = sw.get("epsilons", c.sweep.epsilons);
    c.sweep.repetitions = sw.get("repetitions", c.sweep.repetitions);
    sw.finish();
    root.finish();

    auto& errors = ctx.errors;
    if (c.algorithm == "tmnre") {
        for (auto& e : c.tmnre.validate()) errors.push_back(std::move(e));
    } else if (c.tmnre.budget == 0) {
        errors.push_back("tmnre.budget must be > 0");
    }
    for (auto& e : validate(c.train)) errors.push_back(std::move(e));
    if (c.workers == 0) errors.push_back("workers must be >= 1");
    if (c.exports.bins == 0) errors.push_back("export.bins must be >= 1");
    if (c.diagnose.coverage_draws == 0) errors.push_back("diagnose.coverage_draws must be >= 1");
    if (c.diagnose.coverage_grid < 2) errors.push_back("diagnose.coverage_grid must be >= 2");
    if (!(c.diagnose.boundary_level > 0.0 && c.diagnose.boundary_level <= 1.0)) {
        errors.push_back("diagnose.boundary_level must lie in (0, 1]");
    }
    if (c.diagnose.c2st.folds < 2) errors.push_back("diagnose.c2st.folds must be >= 2");
    for (double e : c.sweep.epsilons) {
        if (!(e > 0.0 && e < 1.0)) errors.push_back("sweep.epsilons entries must satisfy 0 < epsilon < 1");
    }
    if (c.sweep.repetitions == 0) errors.push_back("sweep.repetitions must be >= 1");

    if (errors.empty()) {
        try {
            const auto sim_ptr = make_simulator(c.simulator, c.simulator_params);
            const std::size_t dims = sim_ptr->param_dim();
            if (c.prior) {
                const auto prior = prior_from_json(*c.prior);
                if (prior.dims() != dims) errors.push_back("prior must have " + std::to_string(dims) + " components");
            }
            if (c.x_o && c.x_o->size() != sim_ptr->data_dim()) {
                errors.push_back("observation.x_o must have " + std::to_string(sim_ptr->data_dim()) + " entries");
            }
            if (c.theta_o && c.theta_o->size() != dims) {
                errors.push_back("observation.theta_o must have " + std::to_string(dims) + " entries");
            }
        } catch (const std::exception& e) {
            errors.push_back(std::string("simulator/prior: ") + e.what());
        }
    }
    if (!errors.empty()) throw ConfigError(errors);
    out.defaults = std::move(ctx.defaults);
    return out;
}

ParsedConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"cannot read config file " + path.string()});
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError({std::string("config is not valid JSON: ") + e.what()});
    }
    return parse_config(j);
}

Problem resolve_problem(const RunConfig& config) {
    Problem p;
    p.simulator = make_simulator(config.simulator, config.simulator_params);
    p.prior = config.prior ? prior_from_json(*config.prior) : p.simulator->default_prior();
    if (config.theta_o) {
        p.theta_o = Eigen::Map<const Vector>(config.theta_o->data(), static_cast<Eigen::Index>(config.theta_o->size()));
    } else if (!config.x_o) {
        const auto t = p.simulator->default_theta_o();
        p.theta_o = Eigen::Map<const Vector>(t.data(), static_cast<Eigen::Index>(t.size()));
    }
    if (config.x_o) {
        p.x_o = Eigen::Map<const Vector>(config.x_o->data(), static_cast<Eigen::Index>(config.x_o->size()));
    } else {
        p.x_o = p.simulator->noiseless({p.theta_o->data(), static_cast<std::size_t>(p.theta_o->size())});
    }
    return p;
}

}  // namespace tmnre
