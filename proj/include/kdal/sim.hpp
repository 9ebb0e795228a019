#pragma once

// Offline experiment: for every seed, one synthetic skewed pool and one
// shared bootstrap, then a full loop per strategy with mock providers and
// auto-approval. Each final learner is judged on a balanced synthetic test
// set, and a second "transfer" learner is fine-tuned once on each run's
// exported split.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kdal/metrics.hpp"
#include "kdal/mock_world.hpp"
#include "kdal/orchestrator.hpp"
#include "kdal/pool_store.hpp"

namespace kdal {

// The four mock providers over one shared world.
struct MockSuite {
    explicit MockSuite(const SyntheticPoolSpec& spec, const Template& tmpl = Template::counter_narration())
        : world(spec), learner(world, spec.learner), teacher(tmpl), scorer(world), embedder(world) {}

    Providers providers() { return {learner, teacher, scorer, embedder}; }

    MockWorld world;
    MockLearner learner;
    MockTeacher teacher;
    MockScorer scorer;
    MockEmbedder embedder;
};

struct ExperimentConfig {
    SyntheticPoolSpec spec = SyntheticPoolSpec::skewed_default();
    std::vector<Strategy> strategies{Strategy::random, Strategy::topn, Strategy::cluster};
    std::size_t seeds = 20;
    std::int64_t budget = 100;
    std::int64_t batch_size = 20;
    std::int64_t clusters = 10;
    std::int64_t bootstrap = 100;
};

struct RunResult {
    Strategy strategy = Strategy::random;
    std::uint64_t seed = 0;
    std::int64_t iterations = 0;
    std::int64_t labeled = 0;
    double error_ratio_variance = 0.0;
    double cs_score = 0.0;
    std::map<std::string, double> per_group_error;
    std::map<std::string, std::int64_t> group_labeled;  // |L| per group, bootstrap included
    std::int64_t min_group_labeled = 0;
    double transfer_error_ratio_variance = 0.0;
};

struct ExperimentReport {
    ExperimentConfig config;
    std::vector<RunResult> runs;  // seed-major, strategies in config order

    std::vector<const RunResult*> of(Strategy s) const {
        std::vector<const RunResult*> out;
        for (const auto& r : runs) {
            if (r.strategy == s) out.push_back(&r);
        }
        return out;
    }
};

inline OrchestratorOptions sim_options(const ExperimentConfig& cfg, std::uint64_t seed) {
    OrchestratorOptions o;
    o.seed = seed;
    o.budget = cfg.budget;
    o.batch_size = cfg.batch_size;
    o.clusters = cfg.clusters;
    o.scoring.concurrency = 1;
    o.scoring.retry = RetryPolicy::immediate();
    o.distill.concurrency = 1;
    o.distill.retry = RetryPolicy::immediate();
    o.distill.record_latency = false;
    o.distill.model = "mock-teacher";
    o.retry = RetryPolicy::immediate();
    o.logical_clock = true;
    return o;
}

inline RunResult evaluate_run(MockSuite& m, const PoolStore& run, Strategy strategy, std::uint64_t seed,
                              const std::vector<SyntheticItem>& test, const OrchestratorOptions& o) {
    RunResult r;
    r.strategy = strategy;
    r.seed = seed;
    const auto st = run.loop_state();
    r.iterations = st.iteration;
    const auto pairs = run.pairs();
    r.labeled = static_cast<std::int64_t>(pairs.size());
    const auto report = evaluate_judgments(judge_stratified(m.world, test, st.learner_revision));
    r.error_ratio_variance = report.error_ratio_variance;
    r.cs_score = report.cs_score->value;
    r.per_group_error = report.per_group_error;
    for (const auto& g : m.world.spec().groups) r.group_labeled[g.name] = 0;
    for (const auto& p : pairs) ++r.group_labeled[m.world.group_of(p.input_text)];
    r.min_group_labeled = std::numeric_limits<std::int64_t>::max();
    for (const auto& [_, n] : r.group_labeled) r.min_group_labeled = std::min(r.min_group_labeled, n);

    MockLearner transfer(m.world, m.world.spec().transfer_learner, "t");
    FinetuneRequest req{o.base_revision, {}, o.epochs, o.learning_rate};
    for (const auto& p : pairs) req.examples.push_back({p.input_text, p.target_text});
    const auto rev = transfer.finetune(req);
    r.transfer_error_ratio_variance = evaluate_judgments(judge_stratified(m.world, test, rev)).error_ratio_variance;
    return r;
}

// Seeds are spec.seed, spec.seed + 1, ... . With out_dir set, each run's
// final snapshot is written to out_dir/runs.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg,
                                       const std::optional<std::filesystem::path>& out_dir = std::nullopt) {
    cfg.spec.validate();
    if (cfg.seeds < 1) throw ConfigError("at least one seed is required");
    if (cfg.strategies.empty()) throw ConfigError("at least one strategy is required");
    ExperimentReport report;
    report.config = cfg;
    for (std::size_t i = 0; i < cfg.seeds; ++i) {
        auto spec = cfg.spec;
        spec.seed = cfg.spec.seed + i;
        MockSuite m(spec);
        const auto opts = sim_options(cfg, spec.seed);
        const auto verifier = spec.rejection_rate > 0.0 ? sim_verifier(spec.rejection_rate, spec.seed) : auto_verifier();

        PoolStore base;
        add_to_pool(base, gen_pool(spec));
        m.world.register_pool(base);
        {
            Orchestrator orch(base, m.providers(), opts, verifier);
            orch.prepare_clusters();
            orch.bootstrap(static_cast<std::size_t>(cfg.bootstrap));
        }
        const auto snapshot = base.serialize();
        const auto test = gen_test_set(spec);
        m.world.register_items(test);

        for (const auto strategy : cfg.strategies) {
            PoolStore run(parse_snapshot(snapshot));
            auto run_opts = opts;
            run_opts.strategy = strategy;
            Orchestrator orch(run, m.providers(), run_opts, verifier);
            orch.run_loop();
            report.runs.push_back(evaluate_run(m, run, strategy, spec.seed, test, run_opts));
            if (out_dir) {
                run.save(*out_dir / "runs" /
                         (std::string(to_string(strategy)) + "-" + std::to_string(spec.seed) + ".json"));
            }
        }
    }
    return report;
}

struct StrategySummary {
    double mean_error_ratio_variance = 0.0;
    double mean_cs_score = 0.0;
    double mean_transfer_error_ratio_variance = 0.0;
    double mean_min_group_labeled = 0.0;
    std::int64_t lowest_min_group_labeled = 0;
    std::size_t runs = 0;
};

inline StrategySummary summarize(const ExperimentReport& rep, Strategy s) {
    StrategySummary out;
    const auto runs = rep.of(s);
    if (runs.empty()) return out;
    out.lowest_min_group_labeled = std::numeric_limits<std::int64_t>::max();
    for (const auto* r : runs) {
        out.mean_error_ratio_variance += r->error_ratio_variance;
        out.mean_cs_score += r->cs_score;
        out.mean_transfer_error_ratio_variance += r->transfer_error_ratio_variance;
        out.mean_min_group_labeled += static_cast<double>(r->min_group_labeled);
        out.lowest_min_group_labeled = std::min(out.lowest_min_group_labeled, r->min_group_labeled);
    }
    const auto n = static_cast<double>(runs.size());
    out.mean_error_ratio_variance /= n;
    out.mean_cs_score /= n;
    out.mean_transfer_error_ratio_variance /= n;
    out.mean_min_group_labeled /= n;
    out.runs = runs.size();
    return out;
}

// Fraction of seeds where strategy a's variance is strictly below b's.
inline double fraction_below(const ExperimentReport& rep, Strategy a, Strategy b) {
    const auto ra = rep.of(a);
    const auto rb = rep.of(b);
    if (ra.empty() || ra.size() != rb.size()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) hits += ra[i]->error_ratio_variance < rb[i]->error_ratio_variance;
    return static_cast<double>(hits) / static_cast<double>(ra.size());
}

// Fraction of a strategy's seeds whose smallest group has fewer than
// `threshold` labeled instances.
inline double fraction_min_group_below(const ExperimentReport& rep, Strategy s, std::int64_t threshold) {
    const auto runs = rep.of(s);
    if (runs.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto* r : runs) hits += r->min_group_labeled < threshold;
    return static_cast<double>(hits) / static_cast<double>(runs.size());
}

inline nlohmann::ordered_json experiment_json(const ExperimentReport& rep) {
    nlohmann::ordered_json j;
    nlohmann::ordered_json cfg;
    cfg["spec"] = nlohmann::json(rep.config.spec);
    std::vector<std::string> names;
    for (auto s : rep.config.strategies) names.emplace_back(to_string(s));
    cfg["strategies"] = names;
    cfg["seeds"] = rep.config.seeds;
    cfg["budget"] = rep.config.budget;
    cfg["batch_size"] = rep.config.batch_size;
    cfg["clusters"] = rep.config.clusters;
    cfg["bootstrap"] = rep.config.bootstrap;
    j["config"] = cfg;

    nlohmann::ordered_json summary;
    for (auto s : rep.config.strategies) {
        const auto m = summarize(rep, s);
        nlohmann::ordered_json e;
        e["runs"] = m.runs;
        e["mean_error_ratio_variance"] = m.mean_error_ratio_variance;
        e["mean_cs_score"] = m.mean_cs_score;
        e["mean_transfer_error_ratio_variance"] = m.mean_transfer_error_ratio_variance;
        e["mean_min_group_labeled"] = m.mean_min_group_labeled;
        e["lowest_min_group_labeled"] = m.lowest_min_group_labeled;
        summary[std::string(to_string(s))] = e;
    }
    j["summary"] = summary;

    nlohmann::ordered_json cmp;
    for (auto a : rep.config.strategies) {
        for (auto b : rep.config.strategies) {
            if (a == b) continue;
            cmp[std::string(to_string(a)) + "_below_" + std::string(to_string(b))] = fraction_below(rep, a, b);
        }
    }
    j["fraction_of_seeds_with_lower_variance"] = cmp;

    nlohmann::ordered_json runs = nlohmann::ordered_json::array();
    for (const auto& r : rep.runs) {
        nlohmann::ordered_json e;
        e["strategy"] = to_string(r.strategy);
        e["seed"] = r.seed;
        e["iterations"] = r.iterations;
        e["labeled"] = r.labeled;
        e["error_ratio_variance"] = r.error_ratio_variance;
        e["cs_score"] = r.cs_score;
        e["min_group_labeled"] = r.min_group_labeled;
        e["transfer_error_ratio_variance"] = r.transfer_error_ratio_variance;
        e["group_labeled"] = r.group_labeled;
        e["per_group_error"] = r.per_group_error;
        runs.push_back(e);
    }
    j["runs"] = runs;
    return j;
}

inline std::string per_seed_csv(const ExperimentReport& rep) {
    std::ostringstream out;
    out << "strategy,seed,iterations,labeled,error_ratio_variance,cs_score,min_group_labeled,"
           "transfer_error_ratio_variance\n";
    for (const auto& r : rep.runs) {
        out << to_string(r.strategy) << ',' << r.seed << ',' << r.iterations << ',' << r.labeled << ','
            << nlohmann::json(r.error_ratio_variance).dump() << ',' << nlohmann::json(r.cs_score).dump() << ','
            << r.min_group_labeled << ',' << nlohmann::json(r.transfer_error_ratio_variance).dump() << '\n';
    }
    return out.str();
}

// Writes report.json and per_seed.csv (plus per-run snapshots) into out_dir.
inline ExperimentReport simulate_to(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir / "runs");
    auto rep = run_experiment(cfg, out_dir);
    write_file_atomic(out_dir / "report.json", experiment_json(rep).dump(2) + "\n");
    write_file_atomic(out_dir / "per_seed.csv", per_seed_csv(rep));
    return rep;
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    try {
        c.spec = j.contains("spec") ? spec_from_json(j["spec"]) : SyntheticPoolSpec::skewed_default();
        if (j.contains("strategies")) {
            c.strategies.clear();
            for (const auto& s : j["strategies"]) c.strategies.push_back(parse_strategy(s.get<std::string>()));
        }
        c.seeds = j.value("seeds", c.seeds);
        c.budget = j.value("budget", c.budget);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.clusters = j.value("clusters", c.clusters);
        c.bootstrap = j.value("bootstrap", c.bootstrap);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad experiment file: ") + e.what());
    } catch (const InvalidInput& e) {
        throw ConfigError(e.what());
    }
    if (c.budget < 0 || c.batch_size < 1 || c.clusters < 1 || c.bootstrap < 0) {
        throw ConfigError("budget, batch_size, clusters and bootstrap must be non-negative (batch and clusters >= 1)");
    }
    return c;
}

}  // namespace kdal
