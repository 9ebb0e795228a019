#pragma once

// The acquisition loop: bootstrap, then per iteration score, select,
// distill, verify, retrain and spend the batch from the budget. Every phase
// ends in a checkpoint, so a run killed anywhere resumes from the last
// persisted snapshot without redoing finished work.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kdal/distill.hpp"
#include "kdal/embed_cluster.hpp"
#include "kdal/error.hpp"
#include "kdal/log.hpp"
#include "kdal/loop_state.hpp"
#include "kdal/metrics.hpp"
#include "kdal/parallel.hpp"
#include "kdal/pool_store.hpp"
#include "kdal/providers.hpp"
#include "kdal/random.hpp"
#include "kdal/scoring.hpp"
#include "kdal/verify.hpp"

namespace kdal {

struct Providers {
    LearnerProvider& learner;
    TeacherProvider& teacher;
    ScorerProvider& scorer;
    EmbeddingProvider& embedder;
};

// Decides every pending item of an iteration before returning.
using Verifier = std::function<void(VerifyQueue&, std::int64_t iteration)>;

inline Verifier auto_verifier() {
    return [](VerifyQueue& q, std::int64_t it) { q.auto_approve(it); };
}

// Waits for external (human) decisions.
inline Verifier waiting_verifier(std::chrono::milliseconds timeout, std::chrono::milliseconds poll) {
    return [timeout, poll](VerifyQueue& q, std::int64_t it) {
        log_info("waiting for verification of iteration " + std::to_string(it));
        if (!q.wait_decided(it, timeout, poll)) {
            throw StateError("verification of iteration " + std::to_string(it) + " timed out");
        }
    };
}

// Simulated annotator rejecting a seeded fraction of candidates.
inline Verifier sim_verifier(double rejection_rate, std::uint64_t seed) {
    return [rejection_rate, seed](VerifyQueue& q, std::int64_t it) {
        for (const auto& v : q.pending(it)) {
            const bool reject = unit_from_bits(mix64(derive_seed(seed, v.item_id))) < rejection_rate;
            q.decide(v.item_id, reject ? Decision::reject : Decision::approve, std::nullopt, "sim");
        }
    };
}

struct OrchestratorOptions {
    std::uint64_t seed = 0;
    Strategy strategy = Strategy::cluster;
    std::int64_t budget = 100;
    std::int64_t batch_size = 20;
    std::int64_t clusters = 10;
    KMeansOptions kmeans;
    RegulatedAttribute attribute;
    Template tmpl = Template::counter_narration();
    ScoringOptions scoring;
    DistillOptions distill;
    std::string base_revision = "base";
    std::int64_t epochs = 10;
    double learning_rate = 3e-5;
    std::size_t embed_batch = 64;
    RetryPolicy retry;
    // Replacement rounds after distillation failures within one iteration.
    std::size_t backfill_rounds = 3;
    bool logical_clock = false;
    // Empty: nothing is written to disk.
    std::filesystem::path snapshot_path;
    // Persist after every verification decision, not only at checkpoints.
    bool persist_decisions = false;
};

class Orchestrator {
public:
    Orchestrator(PoolStore& pool, Providers providers, OrchestratorOptions opts, Verifier verifier = auto_verifier())
        : pool_(pool), p_(providers), opts_(std::move(opts)), verifier_(std::move(verifier)), queue_(pool) {
        if (opts_.logical_clock) pool_.use_logical_clock();
        if (opts_.persist_decisions) queue_.on_change([this] { persist(); });
    }

    Orchestrator(const Orchestrator&) = delete;
    Orchestrator& operator=(const Orchestrator&) = delete;

    VerifyQueue& queue() { return queue_; }
    PoolStore& pool() { return pool_; }
    const OrchestratorOptions& options() const { return opts_; }

    // Called with a label after each persisted checkpoint.
    void on_checkpoint(std::function<void(const std::string&)> fn) { on_checkpoint_ = std::move(fn); }

    // Carves a seeded random test set out of the eligible pool. Idempotent:
    // an existing held-out set is kept.
    std::vector<std::string> carve_test_set(std::size_t n) {
        auto held = pool_.held_out();
        if (!held.empty() || n == 0) {
            if (!held.empty() && held.size() != n) {
                log_warning("keeping existing test set of " + std::to_string(held.size()) + " instances");
            }
            return {held.begin(), held.end()};
        }
        auto eligible = pool_.eligible_ids();
        if (n > eligible.size()) {
            throw InvalidInput("test set of " + std::to_string(n) + " exceeds the " + std::to_string(eligible.size()) +
                               " unlabeled instances");
        }
        auto chosen = select_random(std::move(eligible), n, derive_seed(opts_.seed, "test-set")).chosen;
        std::sort(chosen.begin(), chosen.end());
        pool_.set_held_out(chosen);
        checkpoint("test-set");
        return chosen;
    }

    // Embeds what is missing and clusters once. Returns whether a new model
    // was fitted.
    bool prepare_clusters() {
        embed_pool(pool_, p_.embedder, opts_.embed_batch, opts_.retry);
        const auto insts = pool_.instances();
        const bool done = std::all_of(insts.begin(), insts.end(), [](const Instance& x) { return x.cluster_id.has_value(); });
        if (done) return false;
        cluster_pool(pool_, static_cast<std::size_t>(opts_.clusters), derive_seed(opts_.seed, "kmeans"), opts_.kmeans);
        checkpoint("clustered");
        return true;
    }

    // Distills, verifies and trains on n random instances. Resumable: ids
    // are fixed when first chosen, and released failures are selected again.
    LoopState bootstrap(std::size_t n) {
        auto st = pool_.loop_state();
        if (st.bootstrapped) return st;
        if (st.phase == Phase::idle && st.bootstrap_ids.empty()) {
            apply_loop_config(st);
            auto eligible = pool_.eligible_ids();
            if (n > eligible.size()) {
                throw InvalidInput("bootstrap of " + std::to_string(n) + " exceeds the " +
                                   std::to_string(eligible.size()) + " eligible instances");
            }
            if (n == 0) {
                st.bootstrapped = true;
                st.bootstrap_n = 0;
                st.learner_revision = opts_.base_revision;
                pool_.set_loop_state(st);
                checkpoint("bootstrap");
                return st;
            }
            auto chosen = select_random(std::move(eligible), n, derive_seed(opts_.seed, "bootstrap")).chosen;
            std::sort(chosen.begin(), chosen.end());
            pool_.transaction([&](PoolStore& p) {
                for (const auto& id : chosen) p.transition(id, InstanceState::selected);
                st.bootstrap_ids = chosen;
                st.current_selection = chosen;
                st.phase = Phase::selected;
                p.set_loop_state(st);
            });
            checkpoint("selected");
        }
        run_phases(0, Provenance::bootstrap);
        return pool_.loop_state();
    }

    // One acquisition iteration, resuming from the recorded phase.
    LoopState run_iteration() {
        auto st = pool_.loop_state();
        if (!st.bootstrapped) throw StateError("bootstrap must finish before iterating");
        sync_loop_config(st);
        const auto it = st.iteration + 1;
        if (st.phase == Phase::idle) {
            if (st.budget_remaining < st.batch_size) {
                throw StateError("budget " + std::to_string(st.budget_remaining) + " is below the batch size");
            }
            select(st, it);
        }
        run_phases(it, provenance_for(st.strategy));
        return pool_.loop_state();
    }

    using Evaluator = std::function<MetricsReport(const std::string& revision, std::int64_t iteration)>;

    // Iterates while a full batch fits in the budget.
    LoopState run_loop(const Evaluator& evaluate = {}) {
        auto st = pool_.loop_state();
        if (!st.bootstrapped) throw StateError("bootstrap must finish before the loop");
        sync_loop_config(st);
        while (st.budget_remaining >= st.batch_size) {
            st = run_iteration();
            if (evaluate) {
                reports_.push_back(evaluate(st.learner_revision, st.iteration));
                if (on_report_) on_report_(reports_.back(), st.iteration);
            }
        }
        return st;
    }

    void on_report(std::function<void(const MetricsReport&, std::int64_t)> fn) { on_report_ = std::move(fn); }
    const std::vector<MetricsReport>& reports() const { return reports_; }

    // Every labeled pair, ascending instance id.
    std::vector<TrainingExample> training_examples() const {
        std::vector<TrainingExample> out;
        for (const auto& p : pool_.pairs()) out.push_back({p.input_text, p.target_text});
        return out;
    }

    FinetuneRequest finetune_request() const {
        return {opts_.base_revision, training_examples(), opts_.epochs, opts_.learning_rate};
    }

    void persist() {
        if (!opts_.snapshot_path.empty()) pool_.save(opts_.snapshot_path);
    }

private:
    void checkpoint(const std::string& label) {
        persist();
        if (on_checkpoint_) on_checkpoint_(label);
    }

    void apply_loop_config(LoopState& st) const {
        st.budget_initial = opts_.budget;
        st.budget_remaining = opts_.budget;
        st.batch_size = opts_.batch_size;
        st.clusters = opts_.clusters;
        st.strategy = opts_.strategy;
        st.rng_seed = opts_.seed;
    }

    // Loop settings follow the options until the first iteration starts;
    // afterwards the snapshot wins.
    void sync_loop_config(LoopState& st) {
        if (st.iteration == 0 && st.phase == Phase::idle) {
            auto fresh = st;
            apply_loop_config(fresh);
            if (!(fresh == st)) {
                st = fresh;
                pool_.set_loop_state(st);
            }
            return;
        }
        if (st.strategy != opts_.strategy || st.batch_size != opts_.batch_size || st.budget_initial != opts_.budget) {
            log_warning("resuming with the loop settings stored in the snapshot");
        }
    }

    std::vector<AttributeScore> score_eligible(const std::vector<std::string>& ids, const std::string& revision,
                                               std::int64_t it) {
        return score_instances(pool_, ids, p_.learner, p_.scorer, opts_.attribute, opts_.scoring, &cache_, revision, it)
            .scores;
    }

    void select(LoopState st, std::int64_t it) {
        const auto n = static_cast<std::size_t>(st.batch_size);
        const auto eligible = pool_.eligible_ids();
        std::vector<std::string> chosen;
        std::map<std::string, double> info;
        if (st.strategy == Strategy::random) {
            if (eligible.size() < n) throw StateError("insufficient eligible instances for a batch");
            chosen = select_random(eligible, n, derive_seed(st.rng_seed, "select-" + std::to_string(it))).chosen;
        } else {
            const auto scores = score_eligible(eligible, st.learner_revision, it);
            if (scores.size() < n) throw StateError("insufficient scored instances for a batch");
            if (st.strategy == Strategy::topn) {
                chosen = select_topn(scores, n).chosen;
            } else {
                const auto assignments = stored_assignments(pool_);
                for (const auto& s : scores) {
                    if (!assignments.contains(s.instance_id)) {
                        throw StateError("instance " + s.instance_id + " has no cluster; run clustering first");
                    }
                }
                chosen = select_cluster(scores, assignments, static_cast<std::size_t>(st.clusters), n).chosen;
            }
            std::map<std::string, double> all;
            for (const auto& s : scores) all[s.instance_id] = s.informativeness;
            for (const auto& id : chosen) info[id] = all.at(id);
        }
        pool_.transaction([&](PoolStore& p) {
            for (const auto& id : chosen) p.transition(id, InstanceState::selected);
            auto cur = p.loop_state();
            cur.current_selection = chosen;
            cur.selection_scores = std::move(info);
            cur.phase = Phase::selected;
            p.set_loop_state(cur);
        });
        checkpoint("selected");
    }

    void run_phases(std::int64_t it, Provenance prov) {
        for (;;) {
            switch (pool_.loop_state().phase) {
                case Phase::idle: return;
                case Phase::selected: distill_phase(it, prov); break;
                case Phase::distilled: enqueue_phase(prov); break;
                case Phase::verifying: verify_phase(it); break;
                case Phase::verified: retrain_phase(prov); return;
            }
        }
    }

    std::vector<std::string> in_state(const std::vector<std::string>& ids, InstanceState s) const {
        std::vector<std::string> out;
        for (const auto& id : ids) {
            if (pool_.instance(id).state == s) out.push_back(id);
        }
        return out;
    }

    void distill_phase(std::int64_t it, Provenance prov) {
        auto st = pool_.loop_state();
        const bool boot = prov == Provenance::bootstrap;
        if (boot) {
            // retry bootstrap instances released by an earlier failure
            for (const auto& id : in_state(st.current_selection, InstanceState::unlabeled)) {
                pool_.transition(id, InstanceState::selected);
            }
        }
        auto d = opts_.distill;
        d.iteration = it;
        distill_batch(pool_, in_state(st.current_selection, InstanceState::selected), opts_.tmpl, p_.teacher, d);
        const auto target = boot ? st.current_selection.size() : static_cast<std::size_t>(st.batch_size);
        auto kept = in_state(st.current_selection, InstanceState::distilled);
        if (!boot) {
            for (std::size_t round = 0; kept.size() < target && round < opts_.backfill_rounds; ++round) {
                const auto fresh = backfill(st, it, target - kept.size(), round);
                if (fresh.empty()) break;
                distill_batch(pool_, fresh, opts_.tmpl, p_.teacher, d);
                for (const auto& id : in_state(fresh, InstanceState::distilled)) kept.push_back(id);
            }
            st = pool_.loop_state();
            st.current_selection = kept;
            pool_.set_loop_state(st);
        }
        if (kept.size() < target) {
            persist();
            throw ProviderError("only " + std::to_string(kept.size()) + " of " + std::to_string(target) +
                                " candidates distilled in iteration " + std::to_string(it) + "; rerun to resume");
        }
        st = pool_.loop_state();
        st.phase = Phase::distilled;
        pool_.set_loop_state(st);
        checkpoint("distilled");
    }

    // Replaces instances whose distillation failed, following the strategy:
    // random draws, next most informative, or the best of the failed
    // instance's own cluster. Returns ids already moved to selected.
    std::vector<std::string> backfill(const LoopState& st, std::int64_t it, std::size_t need, std::size_t round) {
        std::set<std::string> failed;
        std::vector<std::string> failed_order;
        for (const auto& f : pool_.failures()) {
            if (f.iteration == it && f.kind == FailureKind::distillation_failure && failed.insert(f.instance_id).second) {
                failed_order.push_back(f.instance_id);
            }
        }
        std::vector<std::string> candidates;
        for (const auto& id : pool_.eligible_ids()) {
            if (!failed.contains(id)) candidates.push_back(id);
        }
        need = std::min(need, candidates.size());
        if (need == 0) return {};
        std::vector<std::string> chosen;
        std::map<std::string, double> info;
        if (st.strategy == Strategy::random) {
            chosen = select_random(candidates, need,
                                   derive_seed(st.rng_seed, "backfill-" + std::to_string(it) + "-" + std::to_string(round)))
                         .chosen;
        } else {
            auto scores = score_eligible(candidates, st.learner_revision, it);
            std::sort(scores.begin(), scores.end(), detail::more_informative);
            std::set<std::string> taken;
            auto take = [&](const AttributeScore& s) {
                taken.insert(s.instance_id);
                chosen.push_back(s.instance_id);
                info[s.instance_id] = s.informativeness;
            };
            if (st.strategy == Strategy::cluster) {
                // one replacement per failed instance not yet replaced, from its cluster
                for (const auto& id : failed_order) {
                    if (chosen.size() == need) break;
                    const auto c = pool_.instance(id).cluster_id;
                    for (const auto& s : scores) {
                        if (!taken.contains(s.instance_id) && pool_.instance(s.instance_id).cluster_id == c) {
                            take(s);
                            break;
                        }
                    }
                }
            }
            for (const auto& s : scores) {
                if (chosen.size() == need) break;
                if (!taken.contains(s.instance_id)) take(s);
            }
        }
        pool_.transaction([&](PoolStore& p) {
            for (const auto& id : chosen) p.transition(id, InstanceState::selected);
            auto cur = p.loop_state();
            for (auto& [id, v] : info) cur.selection_scores[id] = v;
            p.set_loop_state(cur);
        });
        return chosen;
    }

    void enqueue_phase(Provenance prov) {
        auto st = pool_.loop_state();
        std::vector<DistillationCandidate> cands;
        std::map<std::string, CandidateContext> ctx;
        for (const auto& id : in_state(st.current_selection, InstanceState::distilled)) {
            auto c = pool_.candidate(id);
            if (!c) throw StateError("distilled instance " + id + " has no candidate");
            cands.push_back(std::move(*c));
            if (auto s = st.selection_scores.find(id); s != st.selection_scores.end()) ctx[id].informativeness = s->second;
        }
        queue_.enqueue(cands, prov, ctx);
        st = pool_.loop_state();
        st.phase = Phase::verifying;
        pool_.set_loop_state(st);
        checkpoint("verifying");
    }

    void verify_phase(std::int64_t it) {
        verifier_(queue_, it);
        const auto left = queue_.counts(it).pending;
        if (left > 0) throw StateError(std::to_string(left) + " items of iteration " + std::to_string(it) + " still pending");
        auto st = pool_.loop_state();
        st.phase = Phase::verified;
        pool_.set_loop_state(st);
        checkpoint("verified");
    }

    // Retrains from the base checkpoint on all of L. A failed job leaves
    // the phase at verified so the retrain alone can be retried.
    void retrain_phase(Provenance prov) {
        const auto req = finetune_request();
        const auto revision =
            req.examples.empty() ? opts_.base_revision : with_retry(opts_.retry, [&] { return p_.learner.finetune(req); });
        auto st = pool_.loop_state();
        st.learner_revision = revision;
        st.phase = Phase::idle;
        st.current_selection.clear();
        st.selection_scores.clear();
        if (prov == Provenance::bootstrap) {
            st.bootstrapped = true;
            std::int64_t n = 0;
            for (const auto& p : pool_.pairs()) n += p.provenance == Provenance::bootstrap;
            st.bootstrap_n = n;
        } else {
            st.budget_remaining -= st.batch_size;
            st.iteration += 1;
        }
        pool_.set_loop_state(st);
        checkpoint(prov == Provenance::bootstrap ? "bootstrap" : "iteration");
    }

    PoolStore& pool_;
    Providers p_;
    OrchestratorOptions opts_;
    Verifier verifier_;
    VerifyQueue queue_;
    ScoreCache cache_;
    std::function<void(const std::string&)> on_checkpoint_;
    std::function<void(const MetricsReport&, std::int64_t)> on_report_;
    std::vector<MetricsReport> reports_;
};

// ---- budget ledger ----------------------------------------------------------

// Violations of the accounting invariants: |L| equals the bootstrap pairs
// plus the approved and edited active-iteration items, and the budget
// spent equals batch_size times the completed iterations.
inline std::vector<std::string> check_budget_ledger(const PoolStore& pool) {
    std::vector<std::string> problems;
    const auto st = pool.loop_state();
    const auto snap = pool.snapshot();
    std::int64_t accepted = 0;
    for (const auto& v : snap.verification) {
        if (v.provenance != Provenance::bootstrap &&
            (v.status == ItemStatus::approved || v.status == ItemStatus::edited)) {
            ++accepted;
        }
    }
    const auto labeled = static_cast<std::int64_t>(snap.pairs.size());
    if (st.bootstrapped && st.bootstrap_n + accepted != labeled) {
        problems.push_back("bootstrap_n " + std::to_string(st.bootstrap_n) + " + accepted " + std::to_string(accepted) +
                           " != |L| " + std::to_string(labeled));
    }
    if (st.budget_initial - st.budget_remaining != st.batch_size * st.iteration) {
        problems.push_back("budget spent " + std::to_string(st.budget_initial - st.budget_remaining) +
                           " != batch_size x iterations " + std::to_string(st.batch_size * st.iteration));
    }
    return problems;
}

// ---- evaluation -------------------------------------------------------------

// Scores the learner's outputs on the held-out set with the scorer acting
// as the attribute classifier: an output is safe when p_adhere >= 0.5.
// Fills safe_score, per-group error and MTLD; CS-Score needs human judges
// and stays empty.
inline MetricsReport evaluate_held_out(const PoolStore& pool, LearnerProvider& learner, ScorerProvider& scorer,
                                       const RegulatedAttribute& attr, const std::string& revision,
                                       const ScoringOptions& opts = {}) {
    const auto held = pool.held_out();
    if (held.empty()) throw StateError("no held-out test set to evaluate on");
    const std::vector<std::string> ids(held.begin(), held.end());
    std::vector<std::string> outputs(ids.size());
    std::vector<bool> safe(ids.size());
    std::vector<std::string> groups(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto inst = pool.instance(ids[i]);
        groups[i] = inst.subgroup.value_or("default");
    }
    parallel_for(ids.size(), opts.concurrency, [&](std::size_t i) {
        const auto inst = pool.instance(ids[i]);
        outputs[i] = with_retry(opts.retry, [&] {
            return learner.generate({inst.source_text, opts.max_tokens, opts.temperature, revision});
        });
        const auto logits = with_retry(opts.retry, [&] { return scorer.score(inst.source_text, outputs[i]); });
        safe[i] = make_attribute_score(ids[i], outputs[i], logits, attr).p_adhere >= 0.5;
    });
    std::vector<Judgment> judgments;
    std::vector<std::string> tokens;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        judgments.push_back({ids[i], groups[i], safe[i]});
        for (auto& t : tokenize(outputs[i])) tokens.push_back(std::move(t));
    }
    auto r = evaluate_judgments(judgments);
    r.cs_score.reset();
    r.safe_score = safe_score(safe);
    if (!tokens.empty()) r.mtld = mtld(tokens);
    return r;
}

// ---- splits -----------------------------------------------------------------

// Teacher targets for the held-out instances, ascending id. These are not
// verified and never enter L.
inline std::vector<LabeledPair> distill_test_targets(const PoolStore& pool, TeacherProvider& teacher,
                                                     const Template& tmpl, const DistillOptions& opts) {
    const auto held = pool.held_out();
    const std::vector<std::string> ids(held.begin(), held.end());
    std::vector<LabeledPair> out(ids.size());
    parallel_for(ids.size(), opts.concurrency, [&](std::size_t i) {
        const auto inst = pool.instance(ids[i]);
        const auto prompt = tmpl.render(inst.source_text);
        auto r = with_retry(opts.retry, [&] {
            auto resp = teacher.chat(distill_request(prompt, opts));
            if (resp.content.empty()) throw ProviderError("teacher returned an empty completion");
            return resp;
        });
        out[i].instance_id = ids[i];
        out[i].input_text = inst.source_text;
        out[i].target_text = std::move(r.content);
    });
    return out;
}

struct SplitFile {
    Strategy strategy;
    std::string file;
};

inline const std::vector<SplitFile>& split_files() {
    static const std::vector<SplitFile> files{
        {Strategy::random, "standard.jsonl"}, {Strategy::topn, "topn_al.jsonl"}, {Strategy::cluster, "cluster_al.jsonl"}};
    return files;
}

struct SplitSummary {
    std::map<std::string, std::size_t> counts;  // file name -> lines
    std::vector<std::string> bootstrap_ids;
    std::size_t test_count = 0;
};

// Runs the loop once per strategy from one bootstrapped base snapshot and
// exports each run's bootstrap plus acquired pairs, then the fixed test
// set. Overlap between the test set and any training split is an error.
inline SplitSummary build_splits(const std::string& base_snapshot, Providers providers, OrchestratorOptions opts,
                                 const Verifier& verifier, const std::filesystem::path& out_dir) {
    SplitSummary summary;
    std::filesystem::create_directories(out_dir);
    for (const auto& [strategy, file] : split_files()) {
        PoolStore run(parse_snapshot(base_snapshot));
        const auto base_state = run.loop_state();
        if (!base_state.bootstrapped || base_state.iteration != 0 || base_state.phase != Phase::idle) {
            throw StateError("split base must be freshly bootstrapped");
        }
        auto run_opts = opts;
        run_opts.strategy = strategy;
        if (!opts.snapshot_path.empty()) {
            run_opts.snapshot_path = opts.snapshot_path.parent_path() / (std::string(to_string(strategy)) + ".json");
        }
        Orchestrator orch(run, providers, run_opts, verifier);
        const auto st = orch.run_loop();
        if (summary.bootstrap_ids.empty()) {
            summary.bootstrap_ids = st.bootstrap_ids;
        } else if (summary.bootstrap_ids != st.bootstrap_ids) {
            throw StateError("bootstrap ids differ between splits");
        }
        const auto held = run.held_out();
        for (const auto& p : run.pairs()) {
            if (held.contains(p.instance_id)) throw StateError("test instance " + p.instance_id + " in a training split");
        }
        summary.counts[file] = run.export_split({Provenance::bootstrap, provenance_for(strategy)}, out_dir / file);
    }
    PoolStore base(parse_snapshot(base_snapshot));
    std::string lines;
    for (const auto& p : distill_test_targets(base, providers.teacher, opts.tmpl, opts.distill)) {
        auto j = PoolStore::pair_line(p);
        j["provenance"] = "test";
        lines += j.dump() + "\n";
        ++summary.test_count;
    }
    write_file_atomic(out_dir / "test.jsonl", lines);
    summary.counts["test.jsonl"] = summary.test_count;
    return summary;
}

}  // namespace kdal
