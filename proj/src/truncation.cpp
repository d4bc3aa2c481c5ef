#include "tmnre/truncation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "tmnre/errors.hpp"
#include "tmnre/serialize.hpp"

namespace tmnre {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Stream roots: heads use derive_seed(seed, {1}) with paths {round, head};
// round data uses derive_seed(seed, {2}) with paths {round, purpose}.
std::uint64_t head_seed(std::uint64_t seed) { return derive_seed(seed, {1}); }
Rng round_rng(std::uint64_t seed, std::size_t round, std::uint64_t purpose) {
    return make_rng(derive_seed(seed, {2}), {round, purpose});
}

std::vector<HeadSummary> summarize(const MnreResult& heads) {
    std::vector<HeadSummary> out;
    for (const auto& h : heads.heads) {
        HeadSummary s;
        s.label = h.index.label();
        s.ok = h.ok();
        s.error = h.error;
        s.data_hash = h.data_hash;
        if (h.estimator) {
            const auto& trace = h.estimator->model().trace;
            s.epochs = trace.epochs.size();
            s.best_epoch = trace.best_epoch;
            s.best_val_loss = trace.best_val_loss;
        }
        out.push_back(std::move(s));
    }
    return out;
}

nlohmann::json heads_json(const std::vector<HeadSummary>& heads) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& h : heads) {
        out.push_back({{"marginal", h.label},
                       {"status", h.ok ? "ok" : "failed"},
                       {"error", h.error},
                       {"epochs", h.epochs},
                       {"best_epoch", h.best_epoch},
                       {"best_val_loss", h.best_val_loss},
                       {"data_hash", h.data_hash}});
    }
    return out;
}

std::vector<HeadSummary> heads_from_json(const nlohmann::json& j) {
    std::vector<HeadSummary> out;
    for (const auto& h : j) {
        HeadSummary s;
        s.label = h.at("marginal").get<std::string>();
        s.ok = h.at("status").get<std::string>() == "ok";
        s.error = h.value("error", "");
        s.epochs = h.value("epochs", std::size_t{0});
        s.best_epoch = h.value("best_epoch", std::size_t{0});
        s.best_val_loss = h.value("best_val_loss", 0.0);
        s.data_hash = h.value("data_hash", std::uint64_t{0});
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<MarginalIndex> round_indices(const TmnreConfig& config, std::size_t dims) {
    auto out = marginal_set(dims, MarginalSet::one_d);
    if (config.train_all_each_round) {
        std::set<MarginalIndex> all(out.begin(), out.end());
        for (auto& idx : marginal_set(dims, config.final_marginals)) all.insert(idx);
        out.assign(all.begin(), all.end());
        std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.size() < b.size(); });
    }
    return out;
}

void check_inputs(const Simulator& sim, const FactorizablePrior& prior, std::span<const double> x_o) {
    if (prior.dims() != sim.param_dim()) throw PreconditionError("prior dimension does not match the simulator");
    if (x_o.size() != sim.data_dim()) throw PreconditionError("x_o dimension does not match the simulator");
    for (double v : x_o) {
        if (!std::isfinite(v)) throw PreconditionError("x_o contains non-finite values");
    }
}

std::size_t simulate_into(SampleStore& store, const Simulator& sim, const FactorizablePrior& prior,
                          const TruncationRegion& region, std::size_t n, std::uint64_t seed, std::size_t round,
                          std::size_t workers) {
    if (n == 0) return 0;
    Rng theta_rng = round_rng(seed, round, 1);
    Rng sim_rng = round_rng(seed, round, 2);
    const Matrix thetas = sample_truncated(prior, region, n, theta_rng);
    const Matrix xs = simulate_batch(sim, thetas, sim_rng, workers);
    store.append(round, thetas, xs);
    return n;
}

}  // namespace

std::size_t TmnreConfig::round_target(std::size_t round, std::size_t retained) const {
    if (increment > 0) return retained + increment;
    if (!schedule.empty()) return schedule[std::min(round, schedule.size()) - 1];
    return static_cast<std::size_t>(std::llround(round_fraction * static_cast<double>(budget)));
}

std::vector<std::string> TmnreConfig::validate() const {
    std::vector<std::string> errors;
    if (!(epsilon > 0.0 && epsilon < 1.0)) errors.push_back("tmnre.epsilon must satisfy 0 < epsilon < 1");
    if (!(beta >= 0.0 && beta <= 1.0)) errors.push_back("tmnre.beta must satisfy 0 <= beta <= 1");
    if (max_rounds < 1) errors.push_back("tmnre.max_rounds must be >= 1");
    if (budget == 0 && schedule.empty() && increment == 0) {
        errors.push_back("tmnre.budget must be > 0 unless a schedule or increment is given");
    }
    if (increment > 0 && !schedule.empty()) errors.push_back("tmnre.schedule and tmnre.increment are exclusive");
    if (!(round_fraction > 0.0 && round_fraction <= 1.0)) errors.push_back("tmnre.round_fraction must lie in (0, 1]");
    if (grid < 2) errors.push_back("tmnre.grid must be >= 2");
    for (auto n : schedule) {
        if (n == 0) errors.push_back("tmnre.schedule entries must be positive");
    }
    return errors;
}

nlohmann::json TmnreConfig::to_json() const {
    return {{"epsilon", epsilon},
            {"beta", beta},
            {"max_rounds", max_rounds},
            {"budget", budget},
            {"round_fraction", round_fraction},
            {"schedule", schedule},
            {"increment", increment},
            {"grid", grid},
            {"final_marginals", to_string(final_marginals)},
            {"final_phase", final_phase},
            {"train_all_each_round", train_all_each_round}};
}

TmnreConfig TmnreConfig::from_json(const nlohmann::json& j) {
    TmnreConfig c;
    c.epsilon = j.value("epsilon", c.epsilon);
    c.beta = j.value("beta", c.beta);
    c.max_rounds = j.value("max_rounds", c.max_rounds);
    c.budget = j.value("budget", c.budget);
    c.round_fraction = j.value("round_fraction", c.round_fraction);
    c.schedule = j.value("schedule", c.schedule);
    c.increment = j.value("increment", c.increment);
    c.grid = j.value("grid", c.grid);
    c.final_marginals = parse_marginal_set(j.value("final_marginals", to_string(c.final_marginals)));
    c.final_phase = j.value("final_phase", c.final_phase);
    c.train_all_each_round = j.value("train_all_each_round", c.train_all_each_round);
    return c;
}

ShrinkResult shrink_region(std::span<const LogRatioModel* const> heads, const FactorizablePrior& prior,
                           const TruncationRegion& region, std::span<const double> x_o, double epsilon, std::size_t grid) {
    if (heads.size() != region.dims() || prior.dims() != region.dims()) {
        throw PreconditionError("shrink_region needs one 1-d head per dimension");
    }
    if (grid < 2) throw PreconditionError("grid needs at least two points");
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw PreconditionError("epsilon must lie in [0, 1]");
    const double log_eps = std::log(epsilon);
    std::vector<Interval> intervals = region.intervals();
    ShrinkResult out;
    for (std::size_t d = 0; d < heads.size(); ++d) {
        const LogRatioModel* head = heads[d];
        if (head == nullptr) {
            out.degenerate_dims.push_back(d);
            continue;
        }
        if (head->index() != MarginalIndex({d})) throw PreconditionError("head " + std::to_string(d) + " has the wrong index");
        const Interval old = region[d];
        const Vector axis = Vector::LinSpaced(static_cast<Eigen::Index>(grid), old.lo, old.hi);
        const Vector log_r = head->log_ratio(x_o, axis);
        const auto& comp = prior.component(d);
        Vector log_w(axis.size());
        double peak = kNegInf;
        for (Eigen::Index i = 0; i < axis.size(); ++i) {
            log_w[i] = std::isnan(log_r[i]) ? kNegInf : log_r[i] + comp.log_pdf(axis[i]);
            peak = std::max(peak, log_w[i]);
        }
        if (!std::isfinite(peak)) {
            out.degenerate_dims.push_back(d);
            continue;
        }
        Eigen::Index first = -1;
        Eigen::Index last = -1;
        for (Eigen::Index i = 0; i < axis.size(); ++i) {
            if (log_w[i] - peak > log_eps) {
                if (first < 0) first = i;
                last = i;
            }
        }
        if (first < 0) {  // only when epsilon == 1
            out.degenerate_dims.push_back(d);
            continue;
        }
        const double cell = old.width() / static_cast<double>(grid - 1);
        intervals[d] = {std::max(old.lo, axis[first] - cell), std::min(old.hi, axis[last] + cell)};
    }
    out.region = TruncationRegion(std::move(intervals));
    return out;
}

nlohmann::json RoundRecord::to_json() const {
    return {{"round", round},
            {"region_in", tmnre::to_json(region_in)},
            {"region_out", tmnre::to_json(region_out)},
            {"alpha", alpha},
            {"prior_mass", prior_mass},
            {"target", target},
            {"retained", retained},
            {"requested", requested},
            {"simulated", simulated},
            {"training_rows", training_rows},
            {"cumulative_simulations", cumulative_simulations},
            {"degenerate_dims", degenerate_dims},
            {"heads", heads_json(heads)}};
}

RoundRecord RoundRecord::from_json(const nlohmann::json& j) {
    RoundRecord r;
    r.round = j.at("round").get<std::size_t>();
    r.region_in = region_from_json(j.at("region_in"));
    r.region_out = region_from_json(j.at("region_out"));
    r.alpha = j.at("alpha").get<double>();
    r.prior_mass = j.value("prior_mass", 1.0);
    r.target = j.value("target", std::size_t{0});
    r.retained = j.value("retained", std::size_t{0});
    r.requested = j.value("requested", std::size_t{0});
    r.simulated = j.value("simulated", std::size_t{0});
    r.training_rows = j.value("training_rows", std::size_t{0});
    r.cumulative_simulations = j.at("cumulative_simulations").get<std::size_t>();
    r.degenerate_dims = j.value("degenerate_dims", std::vector<std::size_t>{});
    if (j.contains("heads")) r.heads = heads_from_json(j.at("heads"));
    return r;
}

std::string to_string(RunStatus status) {
    switch (status) {
        case RunStatus::converged: return "converged";
        case RunStatus::max_rounds: return "max-rounds";
        case RunStatus::budget_exhausted: return "budget-exhausted";
        case RunStatus::single_round: return "single-round";
    }
    return "";
}

RunStatus parse_run_status(const std::string& s) {
    for (auto st : {RunStatus::converged, RunStatus::max_rounds, RunStatus::budget_exhausted, RunStatus::single_round}) {
        if (to_string(st) == s) return st;
    }
    throw PreconditionError("unknown run status '" + s + "'");
}

nlohmann::json FinalPhase::to_json() const {
    return {{"round", round},
            {"region", tmnre::to_json(region)},
            {"simulated", simulated},
            {"training_rows", training_rows},
            {"heads", heads_json(heads)}};
}

nlohmann::json TmnreResult::history_json() const {
    nlohmann::json rounds_json = nlohmann::json::array();
    for (const auto& r : rounds) rounds_json.push_back(r.to_json());
    return {{"status", to_string(status)},
            {"rounds", rounds_json},
            {"final_phase", final_phase ? final_phase->to_json() : nlohmann::json(nullptr)},
            {"final_region", to_json(final_region)},
            {"total_simulations", total_simulations},
            {"records_by_round", store.schema().at("counts_by_round")}};
}

TmnreResult run_tmnre(const Simulator& sim, const FactorizablePrior& prior, std::span<const double> x_o,
                      const TmnreConfig& config, const TrainConfig& train, std::uint64_t seed, std::size_t workers,
                      const TmnreCallbacks& callbacks, const ResumeState* resume) {
    if (const auto errors = config.validate(); !errors.empty()) throw PreconditionError(errors.front());
    check_inputs(sim, prior, x_o);
    const std::size_t dims = prior.dims();

    TmnreResult result;
    result.store = resume != nullptr ? resume->store : SampleStore(dims, sim.data_dim());
    TruncationRegion region = prior.support();
    std::size_t spent = 0;
    bool finished = false;
    if (resume != nullptr && !resume->rounds.empty()) {
        result.rounds = resume->rounds;
        for (std::size_t i = 0; i < result.rounds.size(); ++i) {
            if (result.rounds[i].round != i + 1) throw PreconditionError("resume rounds are not numbered 1..m");
        }
        const auto& last = result.rounds.back();
        region = last.region_out;
        spent = last.cumulative_simulations;
        result.store.truncate_rounds(result.rounds.size() + 1);
        if (last.alpha > config.beta) {
            result.status = RunStatus::converged;
            finished = true;
        } else if (last.round >= config.max_rounds) {
            result.status = RunStatus::max_rounds;
            finished = true;
        } else if (config.budget > 0 && spent >= config.budget) {
            result.status = RunStatus::budget_exhausted;
            finished = true;
        }
        result.round_heads.resize(result.rounds.size());
    }

    const auto indices = round_indices(config, dims);
    for (std::size_t m = result.rounds.size() + 1; !finished; ++m) {
        RoundRecord rec;
        rec.round = m;
        rec.region_in = region;
        rec.retained = result.store.indices_in(region).size();
        rec.target = config.round_target(m, rec.retained);
        rec.requested = rec.target > rec.retained ? rec.target - rec.retained : 0;
        Rng count_rng = round_rng(seed, m, 0);
        std::size_t n_new = poisson_count(rec.requested, count_rng);
        if (config.budget > 0) n_new = std::min(n_new, config.budget - std::min(spent, config.budget));
        if (rec.retained + n_new == 0) throw RuntimeFailure("round " + std::to_string(m) + " has no training data");
        rec.simulated = simulate_into(result.store, sim, prior, region, n_new, seed, m, workers);
        spent += rec.simulated;
        rec.cumulative_simulations = spent;
        rec.training_rows = rec.retained + rec.simulated;

        MnreResult heads = train_mnre(result.store, region, indices, train, head_seed(seed), m, workers);
        std::vector<const LogRatioModel*> one_d(dims, nullptr);
        for (std::size_t d = 0; d < dims; ++d) one_d[d] = heads.find(MarginalIndex({d}));
        auto shrunk = shrink_region(one_d, prior, region, x_o, config.epsilon, config.grid);
        if (!region.contains(shrunk.region)) throw std::logic_error("nesting violated in round " + std::to_string(m));
        rec.region_out = shrunk.region;
        rec.degenerate_dims = shrunk.degenerate_dims;
        rec.alpha = mass_ratio(prior, rec.region_out, region);
        rec.prior_mass = prior.mass(rec.region_out);
        rec.heads = summarize(heads);
        region = rec.region_out;

        result.rounds.push_back(rec);
        if (callbacks.on_round) callbacks.on_round(rec, result.store, heads);
        result.round_heads.push_back(std::move(heads));

        if (rec.alpha > config.beta) {
            result.status = RunStatus::converged;
            finished = true;
        } else if (m >= config.max_rounds) {
            result.status = RunStatus::max_rounds;
            finished = true;
        } else if (config.budget > 0 && spent >= config.budget) {
            result.status = RunStatus::budget_exhausted;
            finished = true;
        }
    }
    result.final_region = region;

    if (config.final_phase) {
        FinalPhase fin;
        fin.round = result.rounds.size() + 1;
        fin.region = region;
        result.store.truncate_rounds(fin.round);
        const std::size_t remaining = config.budget > spent ? config.budget - spent : 0;
        Rng count_rng = round_rng(seed, fin.round, 0);
        fin.simulated = simulate_into(result.store, sim, prior, region, poisson_count(remaining, count_rng), seed, fin.round,
                                      workers);
        spent += fin.simulated;
        fin.training_rows = result.store.indices_in(region).size();
        result.final_heads = train_mnre(result.store, region, marginal_set(dims, config.final_marginals), train,
                                        head_seed(seed), fin.round, workers);
        fin.heads = summarize(result.final_heads);
        if (callbacks.on_final) callbacks.on_final(fin, result.store, result.final_heads);
        result.final_phase = std::move(fin);
    } else {
        if (result.round_heads.empty() || result.round_heads.back().heads.empty()) {
            // Resumed past the last round: retrain its heads on the same data and streams.
            const auto& last = result.rounds.back();
            result.round_heads.back() =
                train_mnre(result.store, last.region_in, indices, train, head_seed(seed), last.round, workers);
        }
        result.final_heads = result.round_heads.back();
    }
    result.total_simulations = spent;
    return result;
}

TmnreResult run_mnre(const Simulator& sim, const FactorizablePrior& prior, std::span<const double> x_o, std::size_t budget,
                     MarginalSet marginals, const TrainConfig& train, std::uint64_t seed, std::size_t workers,
                     const TmnreCallbacks& callbacks) {
    if (budget == 0) throw PreconditionError("mnre needs a budget > 0");
    check_inputs(sim, prior, x_o);
    TmnreResult result;
    result.status = RunStatus::single_round;
    result.store = SampleStore(prior.dims(), sim.data_dim());
    RoundRecord rec;
    rec.round = 1;
    rec.region_in = prior.support();
    rec.region_out = prior.support();
    rec.target = budget;
    rec.requested = budget;
    Rng count_rng = round_rng(seed, 1, 0);
    rec.simulated = simulate_into(result.store, sim, prior, rec.region_in, poisson_count(budget, count_rng), seed, 1, workers);
    rec.cumulative_simulations = rec.simulated;
    rec.training_rows = rec.simulated;
    result.final_heads =
        train_mnre(result.store, rec.region_in, marginal_set(prior.dims(), marginals), train, head_seed(seed), 1, workers);
    rec.heads = summarize(result.final_heads);
    result.rounds.push_back(rec);
    result.final_region = prior.support();
    result.total_simulations = rec.simulated;
    if (callbacks.on_round) callbacks.on_round(rec, result.store, result.final_heads);
    result.round_heads.push_back(result.final_heads);
    return result;
}

double removed_mass_bound(const std::function<double(double)>& density, const Interval& support, double epsilon,
                          std::size_t scan_points) {
    if (!(support.lo < support.hi)) throw PreconditionError("support must satisfy lo < hi");
    if (!(epsilon >= 0.0 && epsilon < 1.0)) throw PreconditionError("epsilon must lie in [0, 1)");
    if (epsilon == 0.0) return 0.0;
    scan_points = std::max<std::size_t>(scan_points, 3);
    const double h = support.width() / static_cast<double>(scan_points - 1);
    std::vector<double> xs(scan_points);
    std::vector<double> ps(scan_points);
    double peak = 0.0;
    for (std::size_t i = 0; i < scan_points; ++i) {
        xs[i] = i + 1 == scan_points ? support.hi : support.lo + h * static_cast<double>(i);
        ps[i] = density(xs[i]);
        peak = std::max(peak, ps[i]);
    }
    if (!(peak > 0.0)) throw PreconditionError("density is zero on the scan");
    const double level = epsilon * peak;
    auto below = [&](double v) { return density(v) < level; };
    auto crossing = [&](double a, double b) {
        const bool below_a = below(a);
        for (int it = 0; it < 200 && b - a > 1e-15 * std::max(1.0, std::abs(a)); ++it) {
            const double mid = 0.5 * (a + b);
            (below(mid) == below_a ? a : b) = mid;
        }
        return 0.5 * (a + b);
    };
    auto integrate = [&](double a, double b) {
        if (!(b > a)) return 0.0;
        return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(density, a, b, 15, 1e-12);
    };

    double removed = 0.0;
    double total = 0.0;
    double start = support.lo;
    bool in_set = ps[0] < level;
    for (std::size_t i = 1; i < scan_points; ++i) {
        const bool now = ps[i] < level;
        if (now == in_set) continue;
        const double edge = crossing(xs[i - 1], xs[i]);
        const double piece = integrate(start, edge);
        total += piece;
        if (in_set) removed += piece;
        start = edge;
        in_set = now;
    }
    const double piece = integrate(start, support.hi);
    total += piece;
    if (in_set) removed += piece;
    return removed / total;
}

}  // namespace tmnre
