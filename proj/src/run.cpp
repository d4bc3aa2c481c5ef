#include "tmnre/run.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include <unistd.h>

#include "tmnre/diagnostics.hpp"
#include "tmnre/errors.hpp"
#include "tmnre/posterior.hpp"
#include "tmnre/serialize.hpp"
#include "tmnre/store.hpp"

namespace tmnre {
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kExportStream = 3;
constexpr std::uint64_t kReferenceStream = 4;
constexpr std::uint64_t kApproxStream = 5;
constexpr std::uint64_t kCoverageStream = 6;
constexpr std::uint64_t kC2stStream = 7;

std::string head_file(std::size_t round, std::size_t k) {
    return "estimators/round_" + std::to_string(round) + "/head_" + std::to_string(k);
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    write_file_atomic(path, text);
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw RuntimeFailure("cannot read " + path.string());
    return nlohmann::json::parse(in);
}

nlohmann::json save_heads(const fs::path& root, std::size_t round, const MnreResult& heads) {
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t k = 0; k < heads.heads.size(); ++k) {
        const auto& h = heads.heads[k];
        nlohmann::json entry = {{"label", h.index.label()}, {"index", h.index.dims()}, {"ok", h.ok()}};
        if (h.ok()) {
            const auto base = root / head_file(round, k);
            fs::create_directories(base.parent_path());
            h.estimator->save(base);
            std::ostringstream trace;
            h.estimator->model().trace.write_csv(trace);
            write_text(root / (head_file(round, k) + "_trace.csv"), trace.str());
            entry["file"] = head_file(round, k);
        } else {
            entry["error"] = h.error;
        }
        out.push_back(entry);
    }
    return out;
}

nlohmann::json history(const std::string& algorithm, const std::string& state, const std::vector<RoundRecord>& rounds,
                       const SampleStore& store) {
    nlohmann::json rounds_json = nlohmann::json::array();
    for (const auto& r : rounds) rounds_json.push_back(r.to_json());
    return {{"format", "tmnre-rounds"},
            {"version", 1},
            {"algorithm", algorithm},
            {"state", state},
            {"rounds", rounds_json},
            {"records_by_round", store.schema().at("counts_by_round")}};
}

bool is_unit_cube(const FactorizablePrior& prior) {
    for (std::size_t d = 0; d < prior.dims(); ++d) {
        const auto& c = prior.component(d);
        if (c.kind() != PriorComponent::Kind::uniform || c.param(0) != 0.0 || c.param(1) != 1.0) return false;
    }
    return true;
}

std::span<const double> as_span(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

std::map<MarginalIndex, Matrix> approx_samples(const std::vector<const LogRatioModel*>& heads, const Vector& x_o,
                                               const FactorizablePrior& prior, const TruncationRegion& region, std::size_t n,
                                               std::uint64_t base, nlohmann::json* errors) {
    std::map<MarginalIndex, Matrix> out;
    for (std::size_t k = 0; k < heads.size(); ++k) {
        Rng rng = make_rng(base, {k});
        try {
            out[heads[k]->index()] = rejection_sample(*heads[k], as_span(x_o), prior, region, n, rng).samples;
        } catch (const std::exception& e) {
            if (errors != nullptr) (*errors)[heads[k]->index().label()] = e.what();
        }
    }
    return out;
}

struct Scores {
    std::optional<C2stReport> one_d;
    std::optional<C2stReport> two_d;
};

Scores score(const ReferencePosterior& reference, const std::map<MarginalIndex, Matrix>& approx, std::size_t dims,
             std::uint64_t base, const C2stOptions& options) {
    Scores s;
    bool has_two_d = false;
    for (const auto& [index, m] : approx) has_two_d |= index.size() == 2;
    Rng rng1 = make_rng(base, {1});
    try {
        s.one_d = c2st_ddm(reference.samples, approx, 1, rng1, options);
    } catch (const PreconditionError&) {
    }
    if (has_two_d && dims >= 2) {
        Rng rng2 = make_rng(base, {2});
        s.two_d = c2st_ddm(reference.samples, approx, 2, rng2, options);
    }
    return s;
}

std::vector<const LogRatioModel*> models(const std::vector<MarginalRatioEstimator>& estimators) {
    std::vector<const LogRatioModel*> out;
    for (const auto& e : estimators) out.push_back(&e);
    return out;
}

}  // namespace

int exit_code_for(RunStatus status) { return status == RunStatus::max_rounds ? exit_not_converged : exit_success; }

RunLock::RunLock(const fs::path& dir) : path_(dir / "run.lock") {
    fs::create_directories(dir);
    for (int attempt = 0; attempt < 2; ++attempt) {
        if (std::FILE* f = std::fopen(path_.c_str(), "wx")) {
            std::fprintf(f, "%ld\n", static_cast<long>(::getpid()));
            std::fclose(f);
            return;
        }
        long pid = 0;
        if (std::ifstream in(path_); in >> pid && pid > 0 && fs::exists("/proc/" + std::to_string(pid))) break;
        std::error_code ec;
        fs::remove(path_, ec);
    }
    throw RuntimeFailure("run directory " + dir.string() + " is locked by another process");
}

RunLock::~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

RunOutcome cmd_run(const RunConfig& config, std::ostream& log) {
    const RunPaths paths{config.output};
    RunLock lock(paths.root);
    const auto problem = resolve_problem(config);
    const auto config_json = config.to_json();

    RunOutcome outcome;
    std::optional<ResumeState> resume;
    if (fs::exists(paths.config())) {
        auto stored = read_json(paths.config());
        auto current = config_json;
        // Results do not depend on the worker count.
        stored.erase("workers");
        current.erase("workers");
        if (stored != current) {
            throw RuntimeFailure("output directory " + paths.root.string() + " holds a run with a different config");
        }
        if (config.algorithm == "tmnre" && fs::exists(paths.rounds()) && fs::exists(sidecar_path(paths.store()))) {
            const auto h = read_json(paths.rounds());
            ResumeState state{SampleStore::load(paths.store()), {}};
            for (const auto& r : h.at("rounds")) state.rounds.push_back(RoundRecord::from_json(r));
            if (!state.rounds.empty()) {
                outcome.resumed = true;
                outcome.reused_rounds = state.rounds.size();
                log << "resuming from " << state.rounds.size() << " completed round(s)\n";
                resume = std::move(state);
            }
        }
    }
    write_json(paths.config(), config_json);
    fs::create_directories(paths.store().parent_path());

    std::vector<RoundRecord> done = resume ? resume->rounds : std::vector<RoundRecord>{};
    nlohmann::json final_heads;
    std::size_t final_round = 0;
    TmnreCallbacks callbacks;
    callbacks.on_round = [&](const RoundRecord& rec, const SampleStore& store, const MnreResult& heads) {
        store.save(paths.store());
        final_heads = save_heads(paths.root, rec.round, heads);
        final_round = rec.round;
        done.push_back(rec);
        write_json(paths.rounds(), history(config.algorithm, "running", done, store));
        log << "round " << rec.round << ": simulated " << rec.simulated << ", trained on " << rec.training_rows
            << " rows, alpha " << rec.alpha << ", region " << to_json(rec.region_out).dump() << '\n';
    };
    callbacks.on_final = [&](const FinalPhase& fin, const SampleStore& store, const MnreResult& heads) {
        store.save(paths.store());
        final_heads = save_heads(paths.root, fin.round, heads);
        final_round = fin.round;
        log << "final phase: simulated " << fin.simulated << ", trained on " << fin.training_rows << " rows\n";
    };

    const auto x_o = as_span(problem.x_o);
    if (config.algorithm == "mnre") {
        outcome.result = run_mnre(*problem.simulator, problem.prior, x_o, config.tmnre.budget, config.tmnre.final_marginals,
                                  config.train, config.seed, config.workers, callbacks);
    } else {
        outcome.result = run_tmnre(*problem.simulator, problem.prior, x_o, config.tmnre, config.train, config.seed,
                                   config.workers, callbacks, resume ? &*resume : nullptr);
    }
    const auto& result = outcome.result;
    if (final_round == 0) {
        final_round = result.rounds.back().round;
        final_heads = save_heads(paths.root, final_round, result.final_heads);
    }
    result.store.save(paths.store());

    auto h = result.history_json();
    h["format"] = "tmnre-rounds";
    h["version"] = 1;
    h["algorithm"] = config.algorithm;
    h["state"] = "complete";
    h["final_round"] = final_round;
    h["final_heads"] = final_heads;
    write_json(paths.rounds(), h);
    log << "status: " << to_string(result.status) << ", total simulations " << result.total_simulations << '\n';

    cmd_export(paths.root, log);
    outcome.exit_code = exit_code_for(result.status);
    return outcome;
}

LoadedRun load_run(const fs::path& dir) {
    const RunPaths paths{dir};
    LoadedRun run;
    run.config = parse_config(read_json(paths.config())).config;
    run.history = read_json(paths.rounds());
    if (run.history.value("state", "") != "complete") throw RuntimeFailure("run in " + dir.string() + " is not complete");
    run.final_region = region_from_json(run.history.at("final_region"));
    for (const auto& h : run.history.at("final_heads")) {
        if (h.value("ok", false)) {
            run.estimators.push_back(MarginalRatioEstimator::load(dir / h.at("file").get<std::string>()));
        } else {
            run.failed_heads.push_back(h.at("label").get<std::string>());
        }
    }
    return run;
}

nlohmann::json cmd_export(const fs::path& dir, std::ostream& log) {
    const RunPaths paths{dir};
    const auto run = load_run(dir);
    const auto problem = resolve_problem(run.config);
    const auto& region = run.final_region;
    const auto base = derive_seed(run.config.seed, {kExportStream});

    nlohmann::json summary = {{"region", to_json(region)}, {"failed_heads", run.failed_heads}};
    nlohmann::json files = nlohmann::json::array();
    nlohmann::json errors = nlohmann::json::object();
    std::ostringstream region_csv;
    region_csv.precision(17);
    region_csv << "dim,lo,hi\n";
    for (std::size_t d = 0; d < region.dims(); ++d) region_csv << d << ',' << region[d].lo << ',' << region[d].hi << '\n';
    write_text(paths.exports() / "region.csv", region_csv.str());

    for (std::size_t k = 0; k < run.estimators.size(); ++k) {
        const auto& est = run.estimators[k];
        const auto label = est.index().label();
        Rng rng = make_rng(base, {k});
        try {
            const auto samples = rejection_sample(est, as_span(problem.x_o), problem.prior, region, run.config.exports.samples, rng);
            std::ostringstream s_csv;
            samples.write_csv(s_csv);
            write_text(paths.exports() / ("samples_" + label + ".csv"), s_csv.str());
            auto meta = samples.metadata();
            meta["rounds"] = run.history.at("rounds").size();
            meta["region"] = to_json(region.select(est.index().dims()));
            write_json(paths.exports() / ("samples_" + label + ".json"), meta);
            std::ostringstream h_csv;
            sample_histogram(est.index(), samples.samples, region, run.config.exports.bins).write_csv(h_csv);
            write_text(paths.exports() / ("hist_" + label + ".csv"), h_csv.str());
            files.push_back(label);
        } catch (const std::exception& e) {
            errors[label] = e.what();
            log << "export of marginal " << label << " failed: " << e.what() << '\n';
        }
    }
    summary["marginals"] = files;
    summary["errors"] = errors;
    write_json(paths.exports() / "summary.json", summary);
    log << "exported " << files.size() << " marginal(s) to " << paths.exports().string() << '\n';
    return summary;
}

std::optional<ReferencePosterior> make_reference(const Problem& problem, std::size_t n, Rng& rng, std::size_t workers) {
    const auto& sim = *problem.simulator;
    const auto x_o = as_span(problem.x_o);
    if (const auto* g = dynamic_cast<const GaussianDiagSimulator*>(&sim)) {
        try {
            return analytic_reference(*g, x_o, problem.prior, n, rng);
        } catch (const PreconditionError&) {
        }
    }
    if (const auto* e = dynamic_cast<const EggboxSimulator*>(&sim); e != nullptr && is_unit_cube(problem.prior)) {
        return eggbox_reference(*e, x_o, n, rng);
    }
    if (dynamic_cast<const RotatedEggboxSimulator*>(&sim) != nullptr || !sim.has_likelihood()) return std::nullopt;
    LikelihoodRejectionOptions options;
    options.workers = workers;
    return likelihood_rejection(sim, problem.prior, x_o, n, rng, options);
}

nlohmann::json cmd_diagnose(const fs::path& dir, const DiagnoseOptions& options, std::ostream& log) {
    const RunPaths paths{dir};
    RunLock lock(dir);
    const auto run = load_run(dir);
    const auto problem = resolve_problem(run.config);
    const auto& cfg = run.config.diagnose;
    const auto& region = run.final_region;
    const auto heads = models(run.estimators);
    const auto seed = run.config.seed;
    nlohmann::json report = {{"simulator", run.config.simulator}, {"region", to_json(region)}};
    fs::create_directories(paths.diagnostics());

    std::optional<ReferencePosterior> reference;
    if (options.reference_csv) {
        reference = ReferencePosterior::load_csv(*options.reference_csv);
    } else {
        Rng rng = make_rng(derive_seed(seed, {kReferenceStream}), {0});
        reference = make_reference(problem, cfg.reference_samples, rng, options.workers);
    }
    if (reference) {
        reference->save_csv(paths.diagnostics() / "reference.csv");
        nlohmann::json sample_errors = nlohmann::json::object();
        const auto approx = approx_samples(heads, problem.x_o, problem.prior, region, cfg.approx_samples,
                                           derive_seed(seed, {kApproxStream}), &sample_errors);
        const auto scores = score(*reference, approx, problem.prior.dims(), derive_seed(seed, {kC2stStream}), cfg.c2st);
        nlohmann::json c2st = {{"classifier", cfg.c2st.to_json()}, {"sampling_errors", sample_errors}};
        if (scores.one_d) c2st["d1"] = scores.one_d->to_json();
        if (scores.two_d) c2st["d2"] = scores.two_d->to_json();
        write_json(paths.diagnostics() / "c2st.json", c2st);
        report["c2st"] = c2st;

        std::ostringstream kl_csv;
        kl_csv.precision(17);
        kl_csv << "dim,kl\n";
        nlohmann::json kl = nlohmann::json::object();
        for (std::size_t d = 0; d < problem.prior.dims(); ++d) {
            const auto it = approx.find(MarginalIndex({d}));
            if (it == approx.end()) continue;
            const Vector ref = reference->samples.col(static_cast<Eigen::Index>(d));
            const Vector est = it->second.col(0);
            const double v = kl_histogram(as_span(ref), as_span(est), {cfg.kl_bins, 1.0});
            kl_csv << d << ',' << v << '\n';
            kl[std::to_string(d)] = v;
        }
        write_text(paths.diagnostics() / "kl.csv", kl_csv.str());
        report["kl"] = kl;
        log << "c2st-ddm 1d: " << (scores.one_d ? std::to_string(scores.one_d->mean) : "n/a")
            << ", 2d: " << (scores.two_d ? std::to_string(scores.two_d->mean) : "n/a") << '\n';
    } else {
        report["notice"] = "no oracle for simulator '" + run.config.simulator + "': only coverage and boundary checks";
        log << report["notice"].get<std::string>() << '\n';
    }

    std::vector<const LogRatioModel*> one_d;
    for (const auto* h : heads) {
        if (h->index().size() == 1) one_d.push_back(h);
    }
    nlohmann::json coverage = nlohmann::json::array();
    if (!one_d.empty()) {
        Rng rng = make_rng(derive_seed(seed, {kCoverageStream}), {0});
        const auto levels = default_levels();
        const auto curves = coverage_test(one_d, *problem.simulator, problem.prior, region, cfg.coverage_draws, levels, rng,
                                          {cfg.coverage_grid, options.workers});
        for (const auto& c : curves) {
            std::ostringstream csv;
            c.write_csv(csv);
            write_text(paths.diagnostics() / ("coverage_" + c.index.label() + ".csv"), csv.str());
            coverage.push_back(c.to_json());
        }
    }
    report["coverage"] = coverage;

    nlohmann::json boundary = nlohmann::json::array();
    const auto support = problem.prior.support();
    bool boundary_ok = true;
    for (const auto* h : heads) {
        const std::size_t grid = h->index().size() == 1 ? 1000 : 100;
        auto entry = nlohmann::json{{"marginal", h->index().label()}};
        try {
            const auto post = grid_posterior(*h, as_span(problem.x_o), problem.prior, region, grid);
            const auto b = boundary_check(post, cfg.boundary_level, &support);
            entry.update(b.to_json());
            boundary_ok &= b.passed;
        } catch (const std::exception& e) {
            entry["error"] = e.what();
            boundary_ok = false;
        }
        boundary.push_back(entry);
    }
    write_json(paths.diagnostics() / "boundary.json", boundary);
    report["boundary"] = boundary;
    report["boundary_passed"] = boundary_ok;
    if (!boundary_ok) log << "boundary check failed: high-density region touches the truncation boundary\n";
    write_json(paths.diagnostics() / "report.json", report);
    return report;
}

std::vector<SweepRow> cmd_sweep_epsilon(const RunConfig& config, const std::vector<double>& epsilons, std::ostream& log) {
    if (epsilons.empty()) throw ConfigError({"sweep needs at least one epsilon"});
    std::vector<std::string> errors;
    for (double e : epsilons) {
        if (!(e > 0.0 && e < 1.0)) errors.push_back("sweep epsilon " + std::to_string(e) + " is outside (0, 1)");
    }
    if (!errors.empty()) throw ConfigError(errors);
    const auto problem = resolve_problem(config);
    Rng ref_rng = make_rng(derive_seed(config.seed, {kReferenceStream}), {0});
    const auto reference = make_reference(problem, config.diagnose.reference_samples, ref_rng, config.workers);
    if (!reference) throw PreconditionError("no oracle for simulator '" + config.simulator + "'");

    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < epsilons.size(); ++i) {
        for (std::size_t rep = 0; rep < config.sweep.repetitions; ++rep) {
            SweepRow row;
            row.epsilon = epsilons[i];
            row.repetition = rep;
            try {
                TmnreConfig tc = config.tmnre;
                tc.epsilon = epsilons[i];
                const auto seed = derive_seed(config.seed, {rep});
                const auto result =
                    run_tmnre(*problem.simulator, problem.prior, as_span(problem.x_o), tc, config.train, seed, config.workers);
                std::vector<const LogRatioModel*> heads;
                for (const auto* e : result.final_heads.estimators()) heads.push_back(e);
                const auto approx = approx_samples(heads, problem.x_o, problem.prior, result.final_region,
                                                   config.diagnose.approx_samples, derive_seed(seed, {kApproxStream}), nullptr);
                const auto scores =
                    score(*reference, approx, problem.prior.dims(), derive_seed(seed, {kC2stStream}), config.diagnose.c2st);
                std::size_t parts = 0;
                if (scores.one_d) {
                    row.c2st_1d = scores.one_d->mean;
                    row.c2st_ddm += row.c2st_1d;
                    ++parts;
                }
                if (scores.two_d) {
                    row.c2st_2d = scores.two_d->mean;
                    row.c2st_ddm += row.c2st_2d;
                    ++parts;
                }
                if (parts == 0) throw RuntimeFailure("no marginal could be scored");
                row.c2st_ddm /= static_cast<double>(parts);
                row.status = to_string(result.status);
                row.total_simulations = result.total_simulations;
                row.c2st_ddm_per_simulation = row.c2st_ddm / static_cast<double>(result.total_simulations);
            } catch (const std::exception& e) {
                row.status = "failed";
                row.error = e.what();
            }
            log << "epsilon " << row.epsilon << " rep " << rep << ": " << row.status << ", c2st-ddm " << row.c2st_ddm
                << ", simulations " << row.total_simulations << '\n';
            rows.push_back(row);
        }
    }

    std::ostringstream csv;
    csv.precision(17);
    csv << "epsilon,repetition,status,c2st_ddm,c2st_ddm_1d,c2st_ddm_2d,total_simulations,c2st_ddm_per_simulation,error\n";
    for (const auto& r : rows) {
        std::string err = r.error;
        for (auto& ch : err) {
            if (ch == ',' || ch == '\n') ch = ' ';
        }
        csv << r.epsilon << ',' << r.repetition << ',' << r.status << ',' << r.c2st_ddm << ',' << r.c2st_1d << ',' << r.c2st_2d
            << ',' << r.total_simulations << ',' << r.c2st_ddm_per_simulation << ',' << err << '\n';
    }
    write_text(config.output / "sweep.csv", csv.str());
    return rows;
}

}  // namespace tmnre
