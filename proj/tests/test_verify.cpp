#include "kdal/verify.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "kdal/random.hpp"

using namespace kdal;

namespace {

// Moves the instances to distilled with a candidate "C(<text>)" and returns
// the candidates.
std::vector<DistillationCandidate> distilled(PoolStore& pool, const std::vector<std::string>& ids,
                                             std::int64_t iteration) {
    auto ls = pool.loop_state();
    ls.iteration = iteration;
    pool.set_loop_state(ls);
    std::vector<DistillationCandidate> out;
    for (const auto& id : ids) {
        if (!pool.contains(id)) pool.add_instance({id, "text " + id, {}, {}, {}, {}});
        pool.transition(id, InstanceState::selected);
        pool.transition(id, InstanceState::distilled);
        DistillationCandidate c;
        c.instance_id = id;
        c.iteration = iteration;
        c.candidate_text = "C(text " + id + ")";
        pool.put_candidate(c);
        out.push_back(c);
    }
    return out;
}

std::vector<std::string> ids_of(int n, const std::string& prefix = "i") {
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
    return out;
}

}  // namespace

TEST(VerifyQueue, EnqueueIsIdempotent) {
    PoolStore pool;
    pool.use_logical_clock();
    VerifyQueue q(pool);
    auto cands = distilled(pool, ids_of(10), 1);
    EXPECT_EQ(q.enqueue(cands, Provenance::cluster), 10u);
    EXPECT_EQ(q.pending().size(), 10u);
    EXPECT_EQ(q.enqueue(cands, Provenance::cluster), 0u);
    EXPECT_EQ(q.items().size(), 10u);
    for (const auto& id : ids_of(10)) EXPECT_EQ(pool.instance(id).state, InstanceState::pending_verification);
}

TEST(VerifyQueue, ApproveEditReject) {
    PoolStore pool;
    pool.use_logical_clock();
    VerifyQueue q(pool);
    q.enqueue(distilled(pool, {"a", "b", "c"}, 2), Provenance::topn);
    EXPECT_EQ(q.pending().size(), 3u);

    auto a = q.decide("a#2", Decision::approve, std::nullopt, "ann");
    EXPECT_EQ(a.status, ItemStatus::approved);
    EXPECT_EQ(a.final_text, a.candidate_text);
    EXPECT_EQ(q.pending().size(), 2u);

    auto b = q.decide("b#2", Decision::edit, std::string("better text"), "ann");
    EXPECT_EQ(b.status, ItemStatus::edited);

    auto c = q.decide("c#2", Decision::reject, std::nullopt, "ann", std::string("off topic"));
    EXPECT_EQ(c.status, ItemStatus::rejected);
    EXPECT_EQ(c.note, "off topic");

    const auto pairs = pool.pairs();
    ASSERT_EQ(pairs.size(), 2u);
    EXPECT_EQ(pairs[0].target_text, "C(text a)");
    EXPECT_EQ(pairs[0].decision, PairDecision::approved);
    EXPECT_EQ(pairs[0].provenance, Provenance::topn);
    EXPECT_EQ(pairs[0].iteration, 2);
    EXPECT_EQ(pairs[1].target_text, "better text");
    EXPECT_EQ(pairs[1].decision, PairDecision::edited);
    EXPECT_EQ(pool.instance("c").state, InstanceState::unlabeled);
    EXPECT_EQ(pool.loop_state().rejected_total, 1);
    EXPECT_FALSE(pool.candidate("a").has_value());
    EXPECT_FALSE(pool.candidate("c").has_value());
    pool.check_invariants();
}

TEST(VerifyQueue, DecisionErrors) {
    PoolStore pool;
    VerifyQueue q(pool);
    q.enqueue(distilled(pool, {"a"}, 1), Provenance::random);
    EXPECT_THROW(q.decide("a#1", Decision::edit, std::nullopt, "x"), InvalidInput);
    EXPECT_THROW(q.decide("a#1", Decision::edit, std::string("C(text a)"), "x"), InvalidInput);
    EXPECT_THROW(q.decide("zz#1", Decision::approve, std::nullopt, "x"), VerifyQueue::NotFound);
    q.decide("a#1", Decision::approve, std::nullopt, "x");
    EXPECT_THROW(q.decide("a#1", Decision::reject, std::nullopt, "x"), StateError);
    // the decided item is unchanged by the failed attempt
    EXPECT_EQ(q.item("a#1")->status, ItemStatus::approved);
}

TEST(VerifyQueue, SameInstanceAcrossIterations) {
    PoolStore pool;
    pool.use_logical_clock();
    VerifyQueue q(pool);
    q.enqueue(distilled(pool, {"a", "b"}, 1), Provenance::cluster);
    q.decide("a#1", Decision::reject, std::nullopt, "x");
    q.enqueue(distilled(pool, {"a"}, 2), Provenance::cluster);
    EXPECT_EQ(q.items().size(), 3u);
    EXPECT_EQ(q.pending(2).size(), 1u);
    EXPECT_EQ(q.pending(2)[0].item_id, "a#2");
    EXPECT_EQ(q.pending(1).size(), 1u);
    EXPECT_EQ(q.pending().front().item_id, "b#1");
}

TEST(VerifyQueue, ConservationPerIteration) {
    PoolStore pool;
    pool.use_logical_clock();
    VerifyQueue q(pool);
    Rng rng(4);
    for (std::int64_t it = 1; it <= 4; ++it) {
        auto ids = ids_of(12, "it" + std::to_string(it) + "_");
        q.enqueue(distilled(pool, ids, it), Provenance::random);
        for (const auto& id : ids) {
            switch (rng.below(4)) {
                case 0: q.decide(item_id_for(id, it), Decision::approve, std::nullopt, "x"); break;
                case 1: q.decide(item_id_for(id, it), Decision::edit, std::string("e"), "x"); break;
                case 2: q.decide(item_id_for(id, it), Decision::reject, std::nullopt, "x"); break;
                default: break;
            }
        }
        const auto c = q.counts(it);
        EXPECT_EQ(c.total(), 12);
    }
    const auto all = q.counts();
    EXPECT_EQ(all.total(), 48);
    EXPECT_EQ(static_cast<std::int64_t>(pool.pair_count()), all.approved + all.edited);
    // every non-bootstrap pair traces to exactly one approved or edited item
    for (const auto& p : pool.pairs()) {
        int matches = 0;
        for (const auto& v : q.items()) {
            if (v.instance_id == p.instance_id && v.iteration == p.iteration &&
                (v.status == ItemStatus::approved || v.status == ItemStatus::edited)) {
                ++matches;
                EXPECT_EQ(*v.final_text, p.target_text);
            }
        }
        EXPECT_EQ(matches, 1);
    }
}

TEST(VerifyQueue, AutoApproveMatchesManualApproval) {
    PoolStore manual_pool, auto_pool;
    manual_pool.use_logical_clock();
    auto_pool.use_logical_clock();
    VerifyQueue manual(manual_pool), automatic(auto_pool);
    manual.enqueue(distilled(manual_pool, ids_of(7), 1), Provenance::cluster);
    automatic.enqueue(distilled(auto_pool, ids_of(7), 1), Provenance::cluster);
    for (const auto& v : manual.pending()) manual.decide(v.item_id, Decision::approve, std::nullopt, "auto");
    EXPECT_EQ(automatic.auto_approve(), 7u);
    EXPECT_EQ(manual_pool.serialize(), auto_pool.serialize());
}

TEST(VerifyQueue, ConcurrentDecisionsHaveOneWinner) {
    PoolStore pool;
    VerifyQueue q(pool);
    q.enqueue(distilled(pool, ids_of(30), 1), Provenance::random);
    std::atomic<int> wins{0}, conflicts{0};
    std::vector<std::jthread> threads;
    for (int t = 0; t < 4; ++t) {
        threads.emplace_back([&, t] {
            for (const auto& id : ids_of(30)) {
                try {
                    q.decide(item_id_for(id, 1), t % 2 ? Decision::approve : Decision::reject, std::nullopt,
                             "t" + std::to_string(t));
                    ++wins;
                } catch (const StateError&) {
                    ++conflicts;
                }
            }
        });
    }
    threads.clear();
    EXPECT_EQ(wins, 30);
    EXPECT_EQ(conflicts, 90);
    pool.check_invariants();
}

TEST(VerifyQueue, WaitDecidedUnblocksOnLastDecision) {
    PoolStore pool;
    VerifyQueue q(pool);
    q.enqueue(distilled(pool, ids_of(3), 1), Provenance::random);
    EXPECT_FALSE(q.wait_decided(1, std::chrono::milliseconds{20}, std::chrono::milliseconds{5}));
    std::jthread annotator([&] {
        std::this_thread::sleep_for(std::chrono::milliseconds{20});
        q.auto_approve(1);
    });
    EXPECT_TRUE(q.wait_decided(1, std::chrono::seconds{10}, std::chrono::milliseconds{5}));
    EXPECT_EQ(q.counts(1).approved, 3);
}

TEST(VerifyQueue, OnChangeFiresPerMutation) {
    PoolStore pool;
    VerifyQueue q(pool);
    int changes = 0;
    q.on_change([&] { ++changes; });
    auto c = distilled(pool, ids_of(2), 1);
    q.enqueue(c, Provenance::random);
    q.enqueue(c, Provenance::random);
    q.auto_approve();
    EXPECT_EQ(changes, 3);
}

TEST(VerifyApiHandler, ListFilterAndPaging) {
    PoolStore pool;
    pool.use_logical_clock();
    VerifyQueue q(pool);
    VerifyApi api(q, pool);
    q.enqueue(distilled(pool, ids_of(5), 1), Provenance::cluster, {{"i0", {0.75}}});
    q.enqueue(distilled(pool, ids_of(3, "j"), 2), Provenance::cluster);
    q.decide("i1#1", Decision::approve, std::nullopt, "x");

    auto r = api.handle("GET", "/api/items", {{"status", "pending"}, {"iteration", "1"}}, "");
    EXPECT_EQ(r.status, 200);
    EXPECT_EQ(r.body["total"], 4);
    EXPECT_EQ(r.body["items"][0]["id"], "i0");
    EXPECT_EQ(r.body["items"][0]["informativeness"], 0.75);
    EXPECT_EQ(r.body["items"][0]["source_text"], "text i0");
    EXPECT_EQ(r.body["items"][0]["candidate_text"], "C(text i0)");

    r = api.handle("GET", "/api/items", {{"offset", "2"}, {"limit", "3"}}, "");
    EXPECT_EQ(r.body["total"], 8);
    EXPECT_EQ(r.body["items"].size(), 3u);
    EXPECT_EQ(r.body["items"][0]["item_id"], "i2#1");

    EXPECT_EQ(api.handle("GET", "/api/items", {{"status", "maybe"}}, "").status, 400);
    EXPECT_EQ(api.handle("GET", "/api/items", {{"iteration", "-1"}}, "").status, 400);
    EXPECT_EQ(api.handle("GET", "/api/items", {{"iteration", "x"}}, "").status, 400);
}

TEST(VerifyApiHandler, DecisionsAndErrors) {
    PoolStore pool;
    VerifyQueue q(pool);
    VerifyApi api(q, pool);
    q.enqueue(distilled(pool, {"a", "b", "c"}, 1), Provenance::random);

    auto r = api.handle("POST", "/api/items/a#1/decision", {}, R"({"decision":"approve","annotator":"ann"})");
    EXPECT_EQ(r.status, 200);
    EXPECT_EQ(r.body["status"], "approved");
    EXPECT_EQ(r.body["annotator"], "ann");

    r = api.handle("POST", "/api/items/a#1/decision", {}, R"({"decision":"reject"})");
    EXPECT_EQ(r.status, 409);
    EXPECT_TRUE(r.body["error"].is_string());

    EXPECT_EQ(api.handle("POST", "/api/items/b#1/decision", {}, R"({"decision":"edit"})").status, 400);
    EXPECT_EQ(api.handle("POST", "/api/items/b#1/decision", {}, R"({"decision":"maybe"})").status, 400);
    EXPECT_EQ(api.handle("POST", "/api/items/b#1/decision", {}, "not json").status, 400);
    EXPECT_EQ(api.handle("POST", "/api/items/b#1/decision", {}, "[1]").status, 400);
    EXPECT_EQ(api.handle("POST", "/api/items/zz#1/decision", {}, R"({"decision":"approve"})").status, 404);
    EXPECT_EQ(api.handle("GET", "/api/items/b#1/decision", {}, "").status, 405);
    EXPECT_EQ(api.handle("GET", "/api/nothing", {}, "").status, 404);

    r = api.handle("POST", "/api/items/b#1/decision", {},
                   R"({"decision":"edit","final_text":"kinder","annotator":"ann"})");
    EXPECT_EQ(r.status, 200);
    EXPECT_EQ(r.body["final_text"], "kinder");
    r = api.handle("POST", "/api/items/c#1/decision", {}, R"({"decision":"reject","reason":"aggressive"})");
    EXPECT_EQ(r.body["note"], "aggressive");
    EXPECT_EQ(pool.instance("c").state, InstanceState::unlabeled);
}

TEST(VerifyApiHandler, ProgressMetricsAndAuth) {
    PoolStore pool;
    VerifyQueue q(pool);
    VerifyApi api(q, pool);
    auto ls = pool.loop_state();
    ls.budget_initial = 100;
    ls.budget_remaining = 60;
    pool.set_loop_state(ls);
    q.enqueue(distilled(pool, ids_of(4), 2), Provenance::random);
    q.decide("i0#2", Decision::approve, std::nullopt, "x");

    auto r = api.handle("GET", "/api/progress", {}, "");
    EXPECT_EQ(r.body["iteration"], 2);
    EXPECT_EQ(r.body["budget_remaining"], 60);
    EXPECT_EQ(r.body["counts"]["pending"], 3);
    EXPECT_EQ(r.body["counts"]["approved"], 1);

    EXPECT_EQ(api.handle("GET", "/api/metrics", {}, "").status, 404);
    api.set_metrics({{"error_ratio_variance", 0.01}});
    r = api.handle("GET", "/api/metrics", {}, "");
    EXPECT_EQ(r.status, 200);
    EXPECT_EQ(r.body["error_ratio_variance"], 0.01);

    api.set_token("s3cret");
    EXPECT_EQ(api.handle("GET", "/api/progress", {}, "").status, 401);
    EXPECT_EQ(api.handle("GET", "/api/progress", {}, "", "Bearer s3cret").status, 200);
}

TEST(VerifyHttp, ServesOverRealSocket) {
    PoolStore pool;
    VerifyQueue q(pool);
    VerifyApi api(q, pool);
    q.enqueue(distilled(pool, {"a", "b"}, 1), Provenance::cluster);

    httplib::Server server;
    mount_verify_api(server, api);
    const int port = server.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port, 0);
    std::jthread worker([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    httplib::Client client("127.0.0.1", port);
    auto res = client.Get("/api/items?status=pending");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_EQ(nlohmann::json::parse(res->body)["total"], 2);

    // '#' must be percent-encoded in the path
    res = client.Post("/api/items/a%231/decision", R"({"decision":"approve","annotator":"web"})", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_EQ(nlohmann::json::parse(res->body)["status"], "approved");

    res = client.Post("/api/items/a%231/decision", R"({"decision":"approve"})", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 409);
    EXPECT_EQ(res->get_header_value("Content-Type"), "application/json");

    res = client.Get("/api/progress");
    ASSERT_TRUE(res);
    EXPECT_EQ(nlohmann::json::parse(res->body)["counts"]["approved"], 1);
    server.stop();
}
