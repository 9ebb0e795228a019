// One PASS/FAIL line per acceptance criterion. All runs use mock providers
// and automatic approval. Exit status is non-zero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "../test_util.hpp"
#include "kdal/bindings.hpp"
#include "kdal/embed_cluster.hpp"
#include "kdal/metrics.hpp"
#include "kdal/orchestrator.hpp"
#include "kdal/scoring.hpp"
#include "kdal/sim.hpp"

namespace fs = std::filesystem;
using namespace kdal;

namespace {

// ---- pinned tolerances and limits -------------------------------------------

constexpr double kOracleTol = 1e-9;
constexpr double kLiteralTol = 5e-7;  // six-decimal literals
constexpr double kKMeansSlack = 0.05;
constexpr double kPairFreqTol = 0.01;
constexpr double kSeedFraction = 0.80;
constexpr std::int64_t kMinGroupLabeled = 100 / 10;
constexpr double kMetricSeconds = 1.0;
constexpr double kSelectionSeconds = 5.0;
constexpr double kKMeansSeconds = 10.0;
constexpr double kSimulationSeconds = 60.0;

// Collects failed checks for one criterion.
class Checks {
public:
    void expect(bool ok, const std::string& what) {
        ++total_;
        if (!ok && failures_.size() < 5) failures_.push_back(what);
        if (!ok) ++failed_;
    }
    void near(double got, double want, double tol, const std::string& what) {
        std::ostringstream s;
        s << what << ": got " << got << ", want " << want << " +/- " << tol;
        expect(std::abs(got - want) <= tol, s.str());
    }
    bool ok() const { return failed_ == 0; }
    std::string summary() const {
        std::ostringstream s;
        s << total_ - failed_ << "/" << total_ << " checks";
        for (const auto& f : failures_) s << "; " << f;
        return s.str();
    }
    void note(const std::string& n) { notes_ += "; " + n; }
    const std::string& notes() const { return notes_; }

private:
    int total_ = 0;
    int failed_ = 0;
    std::vector<std::string> failures_;
    std::string notes_;
};

int failures = 0;

void criterion(const std::string& name, double limit_seconds, const std::function<void(Checks&)>& body) {
    Checks c;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        body(c);
    } catch (const std::exception& e) {
        c.expect(false, std::string("threw: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (limit_seconds > 0) {
        std::ostringstream s;
        s << "runtime " << secs << " s over the " << limit_seconds << " s limit";
        c.expect(secs < limit_seconds, s.str());
    }
    const bool pass = c.ok();
    if (!pass) ++failures;
    std::printf("%s  %-22s %s%s (%.2f s)\n", pass ? "PASS" : "FAIL", name.c_str(), c.summary().c_str(),
                c.notes().c_str(), secs);
    std::fflush(stdout);
}

std::vector<Judgment> judgments_with_ratios(const std::vector<std::pair<int, int>>& errors_of_total) {
    std::vector<Judgment> out;
    int id = 0;
    for (std::size_t g = 0; g < errors_of_total.size(); ++g) {
        const auto [errors, total] = errors_of_total[g];
        for (int i = 0; i < total; ++i) out.push_back({std::to_string(id++), "g" + std::to_string(g), i >= errors});
    }
    return out;
}

std::vector<bool> flags(int hits, int total) {
    std::vector<bool> out(static_cast<std::size_t>(total), false);
    for (int i = 0; i < hits; ++i) out[static_cast<std::size_t>(i)] = true;
    return out;
}

AttributeScore scored(const std::string& id, double informativeness) {
    AttributeScore s;
    s.instance_id = id;
    s.informativeness = informativeness;
    s.p_adhere = 1.0 - informativeness;
    return s;
}

// ---- criteria -----------------------------------------------------------------

void metric_oracles(Checks& c) {
    const std::vector<double> uniform4{0.25, 0.25, 0.25, 0.25};
    c.near(entropy(uniform4), std::log(4.0), kOracleTol, "entropy uniform/4");
    c.near(entropy(std::vector<double>{0.0, 1.0, 0.0}), 0.0, kOracleTol, "entropy one-hot");
    const double h = -(0.5 * std::log(0.5) + 0.5 * std::log(0.25));
    c.near(entropy(std::vector<double>{0.5, 0.25, 0.25}), h, kOracleTol, "entropy (.5,.25,.25)");
    c.near(h, 1.039721, kLiteralTol, "entropy literal");

    auto sm = softmax(std::vector<double>{0.0, 0.0});
    c.near(sm[0], 0.5, kOracleTol, "softmax (0,0)[0]");
    c.near(sm[1], 0.5, kOracleTol, "softmax (0,0)[1]");
    const double e2 = std::exp(2.0);
    sm = softmax(std::vector<double>{2.0, 0.0});
    c.near(sm[0], e2 / (e2 + 1.0), kOracleTol, "softmax (2,0)[0]");
    c.near(sm[1], 1.0 / (e2 + 1.0), kOracleTol, "softmax (2,0)[1]");
    c.near(sm[0], 0.880797, kLiteralTol, "softmax literal");
    const auto shifted = softmax(std::vector<double>{1e3 + 2.0, 1e3});
    c.near(shifted[0], sm[0], 1e-12, "softmax shift invariance");

    RegulatedAttribute attr;
    attr.adhere_index = 0;
    c.near(make_attribute_score("x", "y", {0.0, 0.0}, attr).informativeness, 0.5, kOracleTol, "informativeness (0,0)");
    c.near(make_attribute_score("x", "y", {2.0, 0.0}, attr).informativeness, 1.0 / (e2 + 1.0), kOracleTol,
           "informativeness (2,0)");
    c.near(1.0 / (e2 + 1.0), 0.119203, kLiteralTol, "informativeness literal");

    c.near(error_ratio_variance(judgments_with_ratios({{1, 5}, {2, 5}})).variance, 0.01, kOracleTol,
           "variance {0.2,0.4}");
    c.near(error_ratio_variance(judgments_with_ratios({{0, 2}, {1, 2}, {2, 2}})).variance, 1.0 / 6.0, kOracleTol,
           "variance {0,0.5,1}");
    c.near(error_ratio_variance(judgments_with_ratios({{0, 3}, {0, 4}})).variance, 0.0, kOracleTol,
           "variance error-free");

    c.near(mtld_text("a b a a b a"), 3.0, kOracleTol, "mtld trace");
    std::vector<std::string> distinct;
    for (int i = 0; i < 50; ++i) distinct.push_back("w" + std::to_string(i));
    c.near(mtld(distinct), 50.0, kOracleTol, "mtld 50 distinct");
    c.near(mtld_text("hello"), 1.0, kOracleTol, "mtld single token");

    const auto safe = safe_score(flags(379, 400));
    c.near(safe.value, 94.75, kOracleTol, "safe 379/400 full precision");
    c.near(safe.reported, 94.8, kOracleTol, "safe 379/400 reported");
    c.near(safe_score(flags(400, 400)).reported, 100.0, kOracleTol, "safe all");
    c.near(safe_score(flags(0, 400)).reported, 0.0, kOracleTol, "safe none");
    std::vector<Judgment> cs;
    for (int i = 0; i < 400; ++i) cs.push_back({std::to_string(i), "g", i < 303});
    c.near(cs_score(cs).reported, 75.8, kOracleTol, "cs 303/400 reported");
}

void selection_oracles(Checks& c) {
    Rng rng(20240601);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t m = 1 + rng.below(12);
        const std::size_t n = rng.below(m + 1);
        std::vector<AttributeScore> scores;
        std::vector<std::pair<std::string, double>> plain;
        for (std::size_t i = 0; i < m; ++i) {
            // coarse values force ties
            const double v = static_cast<double>(rng.below(6)) / 5.0;
            const auto id = "i" + std::to_string(rng.below(1000)) + "-" + std::to_string(i);
            scores.push_back(scored(id, v));
            plain.emplace_back(id, v);
        }
        auto chosen = select_topn(scores, n).chosen;
        std::sort(chosen.begin(), chosen.end());
        c.expect(chosen == oracle::best_subset(plain, n), "topn vs exhaustive, trial " + std::to_string(trial));

        std::map<std::string, std::size_t> one;
        for (const auto& s : scores) one[s.instance_id] = 0;
        if (n >= 1) {
            c.expect(select_cluster(scores, one, 1, n).chosen == select_topn(scores, n).chosen,
                     "k=1 reduction, trial " + std::to_string(trial));
        }
    }

    // k=2, n=4: A {0.9, 0.8, 0.1}, B {0.7, 0.2}; q=2 each
    const std::vector<AttributeScore> fixture{scored("a1", 0.9), scored("a2", 0.8), scored("a3", 0.1),
                                              scored("b1", 0.7), scored("b2", 0.2)};
    const std::map<std::string, std::size_t> ab{{"a1", 0}, {"a2", 0}, {"a3", 0}, {"b1", 1}, {"b2", 1}};
    c.expect(select_cluster(fixture, ab, 2, 4).chosen == std::vector<std::string>{"a1", "a2", "b1", "b2"},
             "quota hand trace");

    // k=3, n=6, cluster 2 empty: q=2 gives A2 B2; B is exhausted, so both
    // leftover slots go to A
    std::vector<AttributeScore> uneven;
    std::map<std::string, std::size_t> abc;
    for (int i = 0; i < 5; ++i) {
        uneven.push_back(scored("a" + std::to_string(i), 0.1 * (i + 1)));
        abc["a" + std::to_string(i)] = 0;
    }
    uneven.push_back(scored("b0", 0.05));
    uneven.push_back(scored("b1", 0.04));
    abc["b0"] = 1;
    abc["b1"] = 1;
    const auto red = select_cluster(uneven, abc, 3, 6);
    c.expect(red.chosen == std::vector<std::string>{"a4", "a3", "a2", "a1", "b0", "b1"}, "redistribution hand trace");
    c.expect(red.per_cluster_quota && red.per_cluster_quota->at(0) == 4 && red.per_cluster_quota->at(1) == 2 &&
                 red.per_cluster_quota->at(2) == 0,
             "redistribution quotas 4/2/0");

    // remainder rule: k=3, n=4, sizes 2/5/3 -> q=1, the extra slot goes to
    // the cluster with the most remaining candidates (cluster 1)
    std::vector<AttributeScore> rem;
    std::map<std::string, std::size_t> rem_map;
    const int sizes[] = {2, 5, 3};
    for (int k = 0; k < 3; ++k) {
        for (int i = 0; i < sizes[k]; ++i) {
            const auto id = "c" + std::to_string(k) + "-" + std::to_string(i);
            rem.push_back(scored(id, 0.5));
            rem_map[id] = static_cast<std::size_t>(k);
        }
    }
    const auto rq = select_cluster(rem, rem_map, 3, 4);
    c.expect(rq.per_cluster_quota->at(0) == 1 && rq.per_cluster_quota->at(1) == 2 && rq.per_cluster_quota->at(2) == 1,
             "remainder to the largest cluster");

    // uniform pairs: 10 ids, n=2, 10,000 seeds
    std::vector<std::string> ten;
    for (int i = 0; i < 10; ++i) ten.push_back("p" + std::to_string(i));
    std::map<std::pair<std::string, std::string>, int> freq;
    constexpr int kSeeds = 10000;
    for (int s = 0; s < kSeeds; ++s) {
        auto ch = select_random(ten, 2, static_cast<std::uint64_t>(s)).chosen;
        std::sort(ch.begin(), ch.end());
        ++freq[{ch[0], ch[1]}];
    }
    c.expect(freq.size() == 45, "all 45 pairs drawn");
    double worst = 0.0;
    for (const auto& [_, f] : freq) worst = std::max(worst, std::abs(f / double(kSeeds) - 1.0 / 45.0));
    c.expect(worst <= kPairFreqTol, "pair frequency within 0.01 of 1/45");

    // logit shift leaves every strategy's choice unchanged
    RegulatedAttribute attr;
    std::vector<AttributeScore> base, moved;
    for (int i = 0; i < 30; ++i) {
        const double a = rng.uniform(-3, 3), b = rng.uniform(-3, 3);
        base.push_back(make_attribute_score("s" + std::to_string(i), "", {a, b}, attr));
        moved.push_back(make_attribute_score("s" + std::to_string(i), "", {a + 7.5, b + 7.5}, attr));
    }
    c.expect(select_topn(base, 7).chosen == select_topn(moved, 7).chosen, "topn shift invariance");
}

void kmeans_oracles(Checks& c) {
    Rng rng(77);
    for (int seed = 0; seed < 50; ++seed) {
        const std::size_t n = 2 + rng.below(7);
        std::vector<Vector> pts;
        for (std::size_t i = 0; i < n; ++i) pts.push_back({rng.uniform(-5, 5), rng.uniform(-5, 5)});
        for (std::size_t k = 1; k <= std::min<std::size_t>(3, n); ++k) {
            const auto tag = "seed " + std::to_string(seed) + " k " + std::to_string(k);
            const auto m = kmeans_fit(pts, k, static_cast<std::uint64_t>(seed));
            const double opt = oracle::optimal_inertia(pts, k);
            c.expect(m.inertia <= opt * (1.0 + kKMeansSlack) + 1e-12, "near-optimal " + tag);
            for (std::size_t i = 1; i < m.inertia_history.size(); ++i) {
                c.expect(m.inertia_history[i] <= m.inertia_history[i - 1] * (1.0 + 1e-12), "monotone " + tag);
            }
            const auto again = kmeans_fit(pts, k, static_cast<std::uint64_t>(seed));
            c.expect(cluster_model_json(m).dump() == cluster_model_json(again).dump(), "byte-exact refit " + tag);
        }
    }
    const std::vector<Vector> blobs{{0, 0}, {0, 1}, {10, 10}, {10, 11}};
    const auto m = kmeans_fit(blobs, 2, 1);
    c.near(m.inertia, 1.0, kOracleTol, "two blobs inertia");
    c.expect(oracle::partition_of(m.labels) == std::set<std::set<std::size_t>>{{0, 1}, {2, 3}}, "two blobs partition");
}

double mean_of(const std::vector<const RunResult*>& runs, double RunResult::*field) {
    double s = 0.0;
    for (const auto* r : runs) s += r->*field;
    return s / static_cast<double>(runs.size());
}

struct SimOutcome {
    ExperimentReport report;
    fs::path dir;
};

void simulation_ordering(Checks& c, const SimOutcome& sim) {
    const auto& rep = sim.report;
    const auto random = rep.of(Strategy::random);
    const auto topn = rep.of(Strategy::topn);
    const auto cluster = rep.of(Strategy::cluster);
    c.expect(random.size() == 20 && topn.size() == 20 && cluster.size() == 20, "20 seeds per strategy");
    for (const auto& r : rep.runs) c.expect(r.iterations == 5, "5 iterations per run");
    const double mr = mean_of(random, &RunResult::error_ratio_variance);
    const double mt = mean_of(topn, &RunResult::error_ratio_variance);
    const double mc = mean_of(cluster, &RunResult::error_ratio_variance);
    std::ostringstream s;
    s << "mean variance cluster " << mc << " topn " << mt << " random " << mr;
    c.expect(mc < mt, "cluster below topn: " + s.str());
    c.expect(mt < mr, "topn below random: " + s.str());
    const double below = fraction_below(rep, Strategy::cluster, Strategy::random);
    c.expect(below >= kSeedFraction, "cluster < random in " + std::to_string(below) + " of seeds");
    for (const auto* r : cluster) {
        c.expect(r->min_group_labeled >= kMinGroupLabeled,
                 "cluster min group " + std::to_string(r->min_group_labeled) + " at seed " + std::to_string(r->seed));
    }
    const double starved = fraction_min_group_below(rep, Strategy::random, kMinGroupLabeled);
    c.expect(starved >= kSeedFraction, "random min group < 10 in " + std::to_string(starved) + " of seeds");
    std::ostringstream n;
    n << s.str() << "; cluster<random " << below << "; random starved " << starved;
    c.note(n.str());
}

// Re-exports each run's split to JSONL and fine-tunes a fresh transfer
// learner on the file contents.
double transfer_variance_from_export(const ExperimentConfig& cfg, const fs::path& snapshot, const fs::path& split,
                                     std::uint64_t seed, Provenance prov) {
    PoolStore run(parse_snapshot(read_file(snapshot)));
    run.export_split({Provenance::bootstrap, prov}, split);
    auto spec = cfg.spec;
    spec.seed = seed;
    MockWorld world(spec);
    world.register_pool(run);
    const auto test = gen_test_set(spec);
    world.register_items(test);
    MockLearner transfer(world, spec.transfer_learner, "x");
    FinetuneRequest req;
    req.base_revision = "base";
    std::ifstream in(split);
    std::string line;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        req.examples.push_back({j.at("input").get<std::string>(), j.at("target").get<std::string>()});
    }
    return evaluate_judgments(judge_stratified(world, test, transfer.finetune(req))).error_ratio_variance;
}

void transfer_analog(Checks& c, const SimOutcome& sim) {
    const auto& rep = sim.report;
    double sum_cluster = 0.0, sum_random = 0.0;
    std::size_t n = 0;
    for (const auto* r : rep.of(Strategy::cluster)) {
        const auto seed = r->seed;
        const auto tag = std::to_string(seed);
        const double vc = transfer_variance_from_export(rep.config, sim.dir / "runs" / ("cluster-" + tag + ".json"),
                                                        sim.dir / ("cluster-" + tag + ".jsonl"), seed,
                                                        Provenance::cluster);
        const double vr = transfer_variance_from_export(rep.config, sim.dir / "runs" / ("random-" + tag + ".json"),
                                                        sim.dir / ("random-" + tag + ".jsonl"), seed,
                                                        Provenance::random);
        c.near(vc, r->transfer_error_ratio_variance, 1e-12, "exported split reproduces the run, seed " + tag);
        sum_cluster += vc;
        sum_random += vr;
        ++n;
    }
    c.expect(n == 20, "20 seeds");
    std::ostringstream s;
    s << "mean transfer variance cluster " << sum_cluster / n << " random " << sum_random / n;
    c.expect(sum_cluster < sum_random, s.str());
    c.note(s.str());
}

nlohmann::json reference_config(const fs::path& dir, const std::string& providers_mode) {
    nlohmann::json providers{{"mock_spec", {{"total", 4000}, {"seed", 11}}}};
    if (providers_mode == "record") {
        providers["mock"] = true;
        providers["record"] = (dir / "calls.jsonl").string();
    } else {
        providers["replay"] = (dir / "calls.jsonl").string();
    }
    return {{"seed", 11},
            {"logical_clock", true},
            {"pool", {{"snapshot", (dir / (providers_mode + ".json")).string()}, {"test_size", 400}}},
            {"loop", {{"strategy", "cluster"}, {"budget", 100}, {"batch_size", 20}, {"clusters", 10}, {"bootstrap", 100}}},
            {"providers", providers}};
}

struct Kill {};

// ingest -> test set -> clusters -> bootstrap -> loop, resuming wherever the
// snapshot left off
void pipeline(PoolStore& pool, const Config& cfg, const std::function<void(const std::string&)>& hook) {
    ProviderBindings b(cfg);
    Orchestrator orch(pool, b.providers(), options_from_config(cfg));
    b.restore_mock_state(pool, orch);
    orch.on_checkpoint(hook);
    orch.carve_test_set(static_cast<std::size_t>(cfg.pool.test_size));
    orch.prepare_clusters();
    orch.bootstrap(static_cast<std::size_t>(cfg.loop.bootstrap));
    orch.run_loop();
}

void loop_accounting(Checks& c) {
    testing::TempDir dir;
    const auto rec = config_from_json(reference_config(dir.path(), "record"));
    PoolStore pool;
    add_to_pool(pool, gen_pool(rec.providers.mock_spec));
    int checkpoints = 0;
    pipeline(pool, rec, [&](const std::string& label) {
        ++checkpoints;
        PoolStore disk(parse_snapshot(read_file(rec.pool.snapshot)));
        for (const auto& p : check_budget_ledger(disk)) c.expect(false, "ledger at " + label + ": " + p);
        for (const auto& p : disk.check_invariants()) c.expect(false, "invariant at " + label + ": " + p);
    });
    const auto st = pool.loop_state();
    c.expect(st.iteration == 5, "5 iterations, got " + std::to_string(st.iteration));
    c.expect(st.budget_remaining == 0, "budget spent");
    c.expect(pool.pair_count() == 200, "|L| = 100 + 100, got " + std::to_string(pool.pair_count()));
    const auto reference = pool.serialize();

    const auto rep = config_from_json(reference_config(dir.path(), "replay"));
    int resumed = 0;
    for (int kill_at = 1; kill_at <= checkpoints; ++kill_at) {
        fs::remove(rep.pool.snapshot);
        {
            PoolStore fresh;
            add_to_pool(fresh, gen_pool(rec.providers.mock_spec));
            int seen = 0;
            try {
                pipeline(fresh, rep, [&](const std::string&) {
                    if (++seen == kill_at) throw Kill{};
                });
            } catch (const Kill&) {
            }
        }
        PoolStore resumed_pool = PoolStore::load(rep.pool.snapshot);
        pipeline(resumed_pool, rep, {});
        c.expect(resumed_pool.serialize() == reference, "resume after checkpoint " + std::to_string(kill_at));
        ++resumed;
    }
    c.note(std::to_string(checkpoints) + " checkpoints, " + std::to_string(resumed) + " kill/resume runs");
}

std::vector<nlohmann::json> read_lines(const fs::path& p) {
    std::vector<nlohmann::json> out;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) out.push_back(nlohmann::json::parse(line));
    return out;
}

void split_construction(Checks& c) {
    testing::TempDir dir;
    auto spec = SyntheticPoolSpec::skewed_default();
    spec.total = 4000;
    spec.seed = 5;
    MockSuite m(spec);
    ExperimentConfig ec;
    auto opts = sim_options(ec, spec.seed);
    PoolStore base;
    add_to_pool(base, gen_pool(spec));
    m.world.register_pool(base);
    {
        Orchestrator orch(base, m.providers(), opts);
        orch.carve_test_set(400);
        orch.prepare_clusters();
        orch.bootstrap(100);
    }
    build_splits(base.serialize(), m.providers(), opts, auto_verifier(), dir.path());

    const auto test = read_lines(dir / "test.jsonl");
    std::set<std::string> test_ids;
    for (const auto& j : test) test_ids.insert(j.at("id").get<std::string>());
    c.expect(test.size() == 400 && test_ids.size() == 400, "400 distinct test pairs");
    std::size_t total = test.size();
    std::optional<std::set<std::string>> boot;
    for (const auto* file : {"standard.jsonl", "topn_al.jsonl", "cluster_al.jsonl"}) {
        const auto lines = read_lines(dir / file);
        total += lines.size();
        c.expect(lines.size() == 200, std::string(file) + " has " + std::to_string(lines.size()) + " pairs");
        std::set<std::string> b;
        for (const auto& j : lines) {
            const auto id = j.at("id").get<std::string>();
            c.expect(!test_ids.contains(id), std::string(file) + " contains test id " + id);
            if (j.at("provenance") == "bootstrap") b.insert(id);
        }
        c.expect(b.size() == 100, std::string(file) + " bootstrap size");
        if (!boot) boot = b;
        c.expect(b == *boot, std::string(file) + " bootstrap ids differ");
    }
    c.expect(total == 1000, "3x200 + 400 = " + std::to_string(total));
}

void determinism(Checks& c) {
    testing::TempDir a, b;
    const ExperimentConfig cfg;
    simulate_to(cfg, a.path());
    simulate_to(cfg, b.path());
    const auto ra = read_file(a / "report.json");
    c.expect(!ra.empty(), "report written");
    c.expect(ra == read_file(b / "report.json"), "report.json byte-identical");
}

}  // namespace

int main() {
    set_log_sink([](LogLevel level, std::string_view msg) {
        if (level == LogLevel::error) std::cerr << msg << '\n';
    });

    criterion("metric-oracles", kMetricSeconds, metric_oracles);
    criterion("selection-oracles", kSelectionSeconds, selection_oracles);
    criterion("kmeans", kKMeansSeconds, kmeans_oracles);

    testing::TempDir sim_dir;
    SimOutcome sim;
    sim.dir = sim_dir.path();
    criterion("simulation-ordering", kSimulationSeconds, [&](Checks& c) {
        sim.report = run_experiment(ExperimentConfig{}, sim.dir);
        simulation_ordering(c, sim);
    });
    criterion("transfer-analog", 0, [&](Checks& c) { transfer_analog(c, sim); });
    criterion("loop-accounting", 0, loop_accounting);
    criterion("split-construction", 0, split_construction);
    criterion("determinism", 0, determinism);

    std::printf("%s: %d criteria failed\n", failures == 0 ? "ACCEPTED" : "REJECTED", failures);
    return failures == 0 ? 0 : 1;
}
