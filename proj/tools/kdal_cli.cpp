// kdal: command-line driver for the acquisition loop, the verification
// API, split export, evaluation and the synthetic simulation.

#include <CLI11.hpp>
#include <httplib.h>

#include <atomic>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

#include "kdal/bindings.hpp"
#include "kdal/config.hpp"
#include "kdal/metrics.hpp"
#include "kdal/orchestrator.hpp"
#include "kdal/sim.hpp"
#include "kdal/verify.hpp"

namespace fs = std::filesystem;
using namespace kdal;

namespace {

struct Globals {
    std::string config;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string strategy;
    bool mock = false;
};

Config resolve_config(const Globals& g) {
    nlohmann::json j = g.config.empty() ? nlohmann::json::object() : read_config_json(g.config);
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    if (g.seed_set) j["seed"] = g.seed;
    if (!g.strategy.empty()) j["loop"]["strategy"] = g.strategy;
    if (g.mock) j["providers"]["mock"] = true;
    return config_from_json(j);
}

void emit(const nlohmann::json& j) { std::cout << j.dump() << std::endl; }

nlohmann::json state_json(const LoopState& st) {
    return {{"iteration", st.iteration},
            {"budget_remaining", st.budget_remaining},
            {"learner_revision", st.learner_revision},
            {"strategy", std::string(to_string(st.strategy))},
            {"bootstrapped", st.bootstrapped}};
}

// Runs the verification API on a background thread for the lifetime of the
// object.
class ApiServer {
public:
    ApiServer(VerifyApi& api, const Config::Verification& v) {
        mount_verify_api(server_, api, v.static_dir);
        port_ = v.port == 0 ? server_.bind_to_any_port(v.host) : v.port;
        if (port_ < 0 || (v.port != 0 && !server_.bind_to_port(v.host, v.port))) {
            throw ConfigError("cannot listen on " + v.host + ":" + std::to_string(v.port));
        }
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        log_info("verification API on http://" + v.host + ":" + std::to_string(port_));
    }

    ~ApiServer() {
        server_.stop();
        thread_.join();
    }

    ApiServer(const ApiServer&) = delete;
    ApiServer& operator=(const ApiServer&) = delete;

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
};

// A snapshot, the providers and an orchestrator over them.
class Session {
public:
    explicit Session(Config cfg, OrchestratorOptions opts, std::optional<Verifier> verifier = std::nullopt)
        : cfg_(std::move(cfg)), bindings_(cfg_) {
        const fs::path snap = opts.snapshot_path;
        pool_ = fs::exists(snap) ? std::make_unique<PoolStore>(parse_snapshot(read_file(snap)))
                                 : std::make_unique<PoolStore>();
        orch_ = std::make_unique<Orchestrator>(*pool_, bindings_.providers(), std::move(opts),
                                               verifier ? std::move(*verifier) : verifier_from_config(cfg_));
        bindings_.restore_mock_state(*pool_, *orch_);
    }

    explicit Session(const Config& cfg) : Session(cfg, options_from_config(cfg)) {}

    const Config& config() const { return cfg_; }
    PoolStore& pool() { return *pool_; }
    Orchestrator& orch() { return *orch_; }
    ProviderBindings& bindings() { return bindings_; }

    void require_pool() const {
        if (pool_->size() == 0) throw StateError("the pool is empty; run ingest first");
    }

    // The API is only needed while a human gate can block the loop.
    std::unique_ptr<ApiServer> maybe_serve() {
        if (cfg_.verification.mode != "human") return nullptr;
        api_ = std::make_unique<VerifyApi>(orch_->queue(), *pool_);
        api_->set_token(resolve_token({"", cfg_.verification.token_env}));
        return std::make_unique<ApiServer>(*api_, cfg_.verification);
    }

    MetricsReport evaluate(const std::string& revision) {
        return evaluate_held_out(*pool_, bindings_.providers().learner, bindings_.providers().scorer, cfg_.attribute,
                                 revision, orch_->options().scoring);
    }

    // Writes the per-iteration report next to the other outputs.
    Orchestrator::Evaluator evaluator() {
        return [this](const std::string& revision, std::int64_t iteration) {
            auto r = evaluate(revision);
            const auto dir = fs::path(cfg_.output.dir) / "metrics";
            fs::create_directories(dir);
            const auto stem = "iteration-" + std::to_string(iteration);
            const auto body = report_json(r).dump(2) + "\n";
            write_file_atomic(dir / (stem + ".json"), body);
            write_file_atomic(dir / (stem + ".csv"), group_csv(r));
            write_file_atomic(dir / "latest.json", body);
            if (api_) api_->set_metrics(report_json(r));
            log_info("iteration " + std::to_string(iteration) + " evaluated on the test set");
            return r;
        };
    }

    // The full pipeline from an ingested pool; every step resumes.
    LoopState run_all() {
        require_pool();
        bindings_.health_check();
        orch_->prepare_clusters();
        orch_->bootstrap(static_cast<std::size_t>(cfg_.loop.bootstrap));
        return orch_->run_loop(evaluator());
    }

private:
    Config cfg_;
    ProviderBindings bindings_;
    std::unique_ptr<PoolStore> pool_;
    std::unique_ptr<Orchestrator> orch_;
    std::unique_ptr<VerifyApi> api_;
};

std::string labeled_split(const PoolStore& pool) {
    std::string out;
    for (const auto& p : pool.pairs()) out += PoolStore::pair_line(p).dump() + "\n";
    return out;
}

std::vector<Strategy> parse_strategy_list(const std::string& csv) {
    std::vector<Strategy> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            out.push_back(parse_strategy(item));
        } catch (const InvalidInput& e) {
            throw ConfigError(e.what());
        }
    }
    if (out.empty()) throw ConfigError("--strategies lists no strategy");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Clustering-based active learning with teacher-distilled targets"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--config", g.config, "JSON config file");
    auto* seed_opt = app.add_option("--seed", g.seed, "Root seed");
    app.add_option("--strategy", g.strategy, "Selection strategy")
        ->check(CLI::IsMember({"random", "topn", "cluster"}));
    app.add_flag("--mock-providers", g.mock, "Use the in-process mock providers");

    auto* ingest = app.add_subcommand("ingest", "Load a JSONL pool and carve the fixed test set");
    std::string input;
    bool synthetic = false;
    ingest->add_option("--input", input, "JSONL file with {id?, text, subgroup?} per line");
    ingest->add_flag("--synthetic", synthetic, "Generate the mock world's pool (mock providers only)");

    auto* cluster = app.add_subcommand("cluster", "Embed the pool and fit the clusters");

    auto* bootstrap = app.add_subcommand("bootstrap", "Distill, verify and train on random instances");
    std::int64_t bootstrap_n = -1;
    bootstrap->add_option("--n", bootstrap_n, "Bootstrap size (default from config)");

    auto* iterate = app.add_subcommand("iterate", "Run acquisition iterations");
    std::int64_t count = 1;
    iterate->add_option("--count", count, "Iterations to run")->check(CLI::PositiveNumber);

    auto* run = app.add_subcommand("run", "Cluster, bootstrap and loop until the budget is spent");

    auto* serve = app.add_subcommand("serve", "Serve the verification API and annotation UI");
    std::string host;
    int port = -1;
    serve->add_option("--host", host, "Listen address");
    serve->add_option("--port", port, "Listen port, 0 for any")->check(CLI::Range(0, 65535));

    auto* splits = app.add_subcommand("export-splits", "Build the Standard, TopN-AL and Cluster-AL splits");
    std::string splits_out;
    splits->add_option("--out", splits_out, "Output directory (default <output.dir>/splits)");

    auto* evaluate = app.add_subcommand("evaluate", "Evaluate a learner revision on the test set");
    std::string revision, eval_out, eval_csv;
    evaluate->add_option("--revision", revision, "Learner revision (default current)");
    evaluate->add_option("--out", eval_out, "Write the report here instead of stdout");
    evaluate->add_option("--csv", eval_csv, "Per-group CSV: group,errors,total,ratio");

    auto* simulate = app.add_subcommand("simulate", "Compare strategies on the synthetic world");
    std::string spec_file, strategies, sim_out;
    std::size_t seeds = 0;
    simulate->add_option("--spec", spec_file, "Experiment JSON (default: skewed 10-group world)");
    simulate->add_option("--strategies", strategies, "Comma-separated strategies");
    simulate->add_option("--seeds", seeds, "Seeds per strategy")->check(CLI::PositiveNumber);
    simulate->add_option("--out", sim_out, "Output directory (default out/sim)");

    auto* replay = app.add_subcommand("replay", "Re-run the loop answering every provider call from a log");
    std::string replay_log, replay_from, replay_out, replay_expect;
    replay->add_option("--log", replay_log, "Recorded provider log")->required();
    replay->add_option("--from", replay_from, "Snapshot the recorded run started from")->required();
    replay->add_option("--out", replay_out, "Final snapshot (default <output.dir>/replay.json)");
    replay->add_option("--expect", replay_expect, "Snapshot whose labeled split must match byte for byte");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : exit_code(ErrorKind::config);
    }
    g.seed_set = seed_opt->count() > 0;

    try {
        if (simulate->parsed()) {
            ExperimentConfig ec;
            if (!spec_file.empty()) ec = experiment_from_json(read_config_json(spec_file));
            if (g.seed_set) ec.spec.seed = g.seed;
            if (!strategies.empty()) ec.strategies = parse_strategy_list(strategies);
            if (seeds > 0) ec.seeds = seeds;
            const fs::path out = sim_out.empty() ? fs::path("out") / "sim" : fs::path(sim_out);
            const auto rep = simulate_to(ec, out);
            auto summary = experiment_json(rep);
            emit({{"out", out.string()}, {"runs", rep.runs.size()}, {"summary", summary["summary"]}});
            return 0;
        }

        auto cfg = resolve_config(g);

        if (ingest->parsed()) {
            Session s(cfg);
            std::size_t added = 0;
            if (synthetic) {
                if (!cfg.providers.mock) throw ConfigError("--synthetic needs mock providers");
                const auto items = gen_pool(cfg.providers.mock_spec);
                add_to_pool(s.pool(), items);
                added = items.size();
            } else {
                const auto path = input.empty() ? cfg.pool.input : input;
                if (path.empty()) throw ConfigError("no input file: pass --input or set pool.input");
                added = s.pool().ingest(fs::path(path));
            }
            const auto held = s.orch().carve_test_set(static_cast<std::size_t>(cfg.pool.test_size));
            s.orch().persist();
            emit({{"ingested", added}, {"pool", s.pool().size()}, {"test_set", held.size()}});
            return 0;
        }

        if (cluster->parsed()) {
            Session s(cfg);
            s.require_pool();
            s.bindings().health_check();
            const bool fitted = s.orch().prepare_clusters();
            std::map<std::string, std::size_t> sizes;
            for (const auto& inst : s.pool().instances()) {
                if (inst.cluster_id) ++sizes[std::to_string(*inst.cluster_id)];
            }
            emit({{"fitted", fitted}, {"cluster_sizes", sizes}});
            return 0;
        }

        if (bootstrap->parsed()) {
            Session s(cfg);
            s.require_pool();
            s.bindings().health_check();
            auto server = s.maybe_serve();
            const auto n = bootstrap_n >= 0 ? bootstrap_n : cfg.loop.bootstrap;
            const auto st = s.orch().bootstrap(static_cast<std::size_t>(n));
            emit(state_json(st));
            return 0;
        }

        if (iterate->parsed()) {
            Session s(cfg);
            s.bindings().health_check();
            auto server = s.maybe_serve();
            auto eval = s.evaluator();
            LoopState st = s.pool().loop_state();
            for (std::int64_t i = 0; i < count; ++i) {
                st = s.orch().run_iteration();
                eval(st.learner_revision, st.iteration);
            }
            emit(state_json(st));
            return 0;
        }

        if (run->parsed()) {
            Session s(cfg);
            auto server = s.maybe_serve();
            const auto st = s.run_all();
            emit(state_json(st));
            return 0;
        }

        if (serve->parsed()) {
            if (!host.empty()) cfg.verification.host = host;
            if (port >= 0) cfg.verification.port = port;
            auto opts = options_from_config(cfg);
            opts.persist_decisions = true;
            Session s(cfg, std::move(opts));
            VerifyApi api(s.orch().queue(), s.pool());
            api.set_token(resolve_token({"", cfg.verification.token_env}));
            const auto latest = fs::path(cfg.output.dir) / "metrics" / "latest.json";
            if (fs::exists(latest)) api.set_metrics(nlohmann::json::parse(read_file(latest)));
            ApiServer server(api, cfg.verification);
            static std::atomic<bool> stop{false};
            std::signal(SIGINT, [](int) { stop = true; });
            std::signal(SIGTERM, [](int) { stop = true; });
            while (!stop) std::this_thread::sleep_for(std::chrono::milliseconds(200));
            return 0;
        }

        if (splits->parsed()) {
            Session s(cfg);
            s.require_pool();
            s.bindings().health_check();
            s.orch().prepare_clusters();
            s.orch().bootstrap(static_cast<std::size_t>(cfg.loop.bootstrap));
            const fs::path out = splits_out.empty() ? fs::path(cfg.output.dir) / "splits" : fs::path(splits_out);
            const auto summary = build_splits(s.pool().serialize(), s.bindings().providers(), s.orch().options(),
                                              verifier_from_config(cfg), out);
            emit({{"out", out.string()},
                  {"counts", summary.counts},
                  {"bootstrap", summary.bootstrap_ids.size()},
                  {"test", summary.test_count}});
            return 0;
        }

        if (evaluate->parsed()) {
            Session s(cfg);
            s.bindings().health_check();
            const auto rev = revision.empty() ? s.pool().loop_state().learner_revision : revision;
            if (rev.empty()) throw StateError("no learner revision yet; bootstrap first or pass --revision");
            const auto r = s.evaluate(rev);
            auto j = report_json(r);
            j["revision"] = rev;
            if (eval_out.empty()) {
                emit(j);
            } else {
                write_file_atomic(eval_out, j.dump(2) + "\n");
            }
            if (!eval_csv.empty()) write_file_atomic(eval_csv, group_csv(r));
            return 0;
        }

        if (replay->parsed()) {
            cfg.providers.replay = replay_log;
            cfg.providers.record.clear();
            cfg.providers.mock = false;
            const fs::path out = replay_out.empty() ? fs::path(cfg.output.dir) / "replay.json" : fs::path(replay_out);
            fs::create_directories(out.parent_path().empty() ? fs::path(".") : out.parent_path());
            fs::copy_file(replay_from, out, fs::copy_options::overwrite_existing);
            auto opts = options_from_config(cfg);
            opts.snapshot_path = out;
            Session s(cfg, std::move(opts), auto_verifier());
            const auto st = s.run_all();
            nlohmann::json result = state_json(st);
            result["labeled"] = s.pool().pair_count();
            if (!replay_expect.empty()) {
                PoolStore expected(parse_snapshot(read_file(replay_expect)));
                const bool same = labeled_split(expected) == labeled_split(s.pool());
                result["matches"] = same;
                emit(result);
                if (!same) throw StateError("replayed labeled split differs from " + replay_expect);
                return 0;
            }
            emit(result);
            return 0;
        }
    } catch (const Error& e) {
        log_error(e.what());
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        log_error(e.what());
        return 1;
    }
    return 0;
}
