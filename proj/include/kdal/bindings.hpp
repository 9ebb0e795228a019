#pragma once

// Resolves the four providers from a Config: HTTP endpoints, in-process
// mocks behind the same JSON contract, or answers from a replay log. Any
// of these can additionally be recorded to a replay log.

#include <chrono>
#include <memory>
#include <string>

#include "kdal/config.hpp"
#include "kdal/log.hpp"
#include "kdal/mock_world.hpp"
#include "kdal/orchestrator.hpp"
#include "kdal/providers.hpp"

namespace kdal {

class ProviderBindings {
public:
    explicit ProviderBindings(const Config& cfg) {
        if (!cfg.providers.replay.empty()) {
            base_ = std::make_unique<ReplayTransport>(cfg.providers.replay);
        } else if (cfg.providers.mock) {
            world_ = std::make_unique<MockWorld>(cfg.providers.mock_spec);
            mock_learner_ = std::make_unique<MockLearner>(*world_, cfg.providers.mock_spec.learner);
            mock_teacher_ = std::make_unique<MockTeacher>(cfg.make_template());
            mock_scorer_ = std::make_unique<MockScorer>(*world_);
            mock_embedder_ = std::make_unique<MockEmbedder>(*world_);
            base_ = std::make_unique<LocalTransport>(mock_learner_.get(), mock_teacher_.get(), mock_scorer_.get(),
                                                     mock_embedder_.get());
        } else {
            std::map<std::string, HttpEndpoint> routes{
                {wire::generate, {cfg.learner.generate.url, resolve_token(cfg.learner.generate)}},
                {wire::finetune, {cfg.learner.finetune.url, resolve_token(cfg.learner.finetune)}},
                {wire::chat, {cfg.teacher.endpoint.url, resolve_token(cfg.teacher.endpoint)}},
                {wire::score, {cfg.scorer.url, resolve_token(cfg.scorer)}},
                {wire::embed, {cfg.embedder.endpoint.url, resolve_token(cfg.embedder.endpoint)}}};
            base_ = std::make_unique<HttpTransport>(std::move(routes), std::chrono::seconds{cfg.providers.timeout_sec});
        }
        Transport* t = base_.get();
        if (!cfg.providers.record.empty()) {
            recording_ = std::make_unique<RecordingTransport>(*base_, std::make_shared<ReplayLogWriter>(cfg.providers.record));
            t = recording_.get();
        }
        learner_ = std::make_unique<JsonLearner>(*t);
        teacher_ = std::make_unique<JsonTeacher>(*t);
        scorer_ = std::make_unique<JsonScorer>(*t);
        embedder_ = std::make_unique<JsonEmbedder>(*t);
    }

    Providers providers() { return {*learner_, *teacher_, *scorer_, *embedder_}; }

    // Fails with ProviderError when any endpoint is unreachable.
    void health_check() {
        learner_->health_check();
        teacher_->health_check();
        scorer_->health_check();
        embedder_->health_check();
    }

    // Non-null only with mock providers.
    MockWorld* world() { return world_.get(); }

    // Mock learner revisions live in memory. A new process re-derives the
    // current one by replaying the finetune that produced it, which also
    // checks that the snapshot and the mock agree.
    void restore_mock_state(const PoolStore& pool, const Orchestrator& orch) {
        if (!world_) return;
        world_->register_pool(pool);
        const auto st = pool.loop_state();
        if (st.learner_revision == orch.options().base_revision || world_->has_revision(st.learner_revision)) return;
        // pairs past the last retrain are not in the current revision
        FinetuneRequest req = orch.finetune_request();
        req.examples.clear();
        for (const auto& p : pool.pairs()) {
            if (p.iteration <= st.iteration) req.examples.push_back({p.input_text, p.target_text});
        }
        const auto rev = mock_learner_->finetune(req);
        if (rev != st.learner_revision) {
            throw StateError("mock learner cannot reproduce revision " + st.learner_revision);
        }
    }

private:
    std::unique_ptr<MockWorld> world_;
    std::unique_ptr<MockLearner> mock_learner_;
    std::unique_ptr<MockTeacher> mock_teacher_;
    std::unique_ptr<MockScorer> mock_scorer_;
    std::unique_ptr<MockEmbedder> mock_embedder_;
    std::unique_ptr<Transport> base_;
    std::unique_ptr<RecordingTransport> recording_;
    std::unique_ptr<JsonLearner> learner_;
    std::unique_ptr<JsonTeacher> teacher_;
    std::unique_ptr<JsonScorer> scorer_;
    std::unique_ptr<JsonEmbedder> embedder_;
};

inline OrchestratorOptions options_from_config(const Config& cfg) {
    OrchestratorOptions o;
    o.seed = cfg.seed;
    o.strategy = cfg.loop.strategy;
    o.budget = cfg.loop.budget;
    o.batch_size = cfg.loop.batch_size;
    o.clusters = cfg.loop.clusters;
    o.kmeans = cfg.kmeans;
    o.attribute = cfg.attribute;
    o.tmpl = cfg.make_template();
    o.retry.attempts = static_cast<int>(cfg.providers.retry_attempts);
    o.scoring.max_tokens = cfg.learner.max_tokens;
    o.scoring.temperature = cfg.learner.temperature;
    o.scoring.concurrency = cfg.providers.concurrency;
    o.scoring.rate_limit_per_sec = cfg.providers.rate_limit_per_sec;
    o.scoring.retry = o.retry;
    o.distill.temperature = cfg.teacher.temperature;
    o.distill.model = cfg.teacher.model;
    o.distill.concurrency = cfg.providers.concurrency;
    o.distill.rate_limit_per_sec = cfg.providers.rate_limit_per_sec;
    o.distill.retry = o.retry;
    o.distill.record_latency = !cfg.logical_clock;
    o.base_revision = cfg.learner.base_revision;
    o.epochs = cfg.learner.epochs;
    o.learning_rate = cfg.learner.learning_rate;
    o.embed_batch = cfg.embedder.batch_size;
    o.logical_clock = cfg.logical_clock;
    o.snapshot_path = cfg.pool.snapshot;
    o.persist_decisions = cfg.verification.mode == "human";
    return o;
}

inline Verifier verifier_from_config(const Config& cfg) {
    if (cfg.verification.mode == "human") {
        return waiting_verifier(std::chrono::seconds{cfg.verification.timeout_sec},
                                std::chrono::milliseconds{cfg.verification.poll_ms});
    }
    return auto_verifier();
}

}  // namespace kdal
