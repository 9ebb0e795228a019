#pragma once

// Verification queue for distilled candidates and the JSON API served to
// annotators. Queue items live in the pool snapshot, so a restart loses no
// decisions.

#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "kdal/error.hpp"
#include "kdal/pool_store.hpp"

namespace kdal {

enum class Decision { approve, edit, reject };

inline Decision parse_decision(std::string_view s) {
    if (s == "approve") return Decision::approve;
    if (s == "edit") return Decision::edit;
    if (s == "reject") return Decision::reject;
    throw InvalidInput("unknown decision: " + std::string(s));
}

struct StatusCounts {
    std::int64_t pending = 0;
    std::int64_t approved = 0;
    std::int64_t edited = 0;
    std::int64_t rejected = 0;

    std::int64_t total() const { return pending + approved + edited + rejected; }
    bool operator==(const StatusCounts&) const = default;
};

inline nlohmann::json counts_json(const StatusCounts& c) {
    return {{"pending", c.pending}, {"approved", c.approved}, {"edited", c.edited}, {"rejected", c.rejected}};
}

// Extra item metadata shown to annotators.
struct CandidateContext {
    std::optional<double> informativeness;
};

class VerifyQueue {
public:
    explicit VerifyQueue(PoolStore& pool) : pool_(pool) {}

    // Called after every state change, outside the pool lock; used to
    // persist the snapshot.
    void on_change(std::function<void()> fn) { on_change_ = std::move(fn); }

    // One pending item per candidate. Re-enqueueing the same instance and
    // iteration is a no-op.
    std::size_t enqueue(const std::vector<DistillationCandidate>& candidates, Provenance provenance,
                        const std::map<std::string, CandidateContext>& context = {}) {
        std::size_t added = 0;
        pool_.transaction([&](PoolStore& p) {
            auto& items = p.verification_items();
            for (const auto& c : candidates) {
                const auto item_id = item_id_for(c.instance_id, c.iteration);
                const bool exists = std::any_of(items.begin(), items.end(),
                                                [&](const VerificationItem& v) { return v.item_id == item_id; });
                if (exists) continue;
                const auto inst = p.instance(c.instance_id);
                p.transition(c.instance_id, InstanceState::pending_verification);
                VerificationItem v;
                v.item_id = item_id;
                v.instance_id = c.instance_id;
                v.source_text = inst.source_text;
                v.candidate_text = c.candidate_text;
                v.iteration = c.iteration;
                v.provenance = provenance;
                v.enqueued_at = p.now();
                v.cluster_id = inst.cluster_id;
                if (auto it = context.find(c.instance_id); it != context.end()) {
                    v.informativeness = it->second.informativeness;
                }
                items.push_back(std::move(v));
                ++added;
            }
        });
        if (added) changed();
        return added;
    }

    // Compare-and-set on the pending status: exactly one decision wins.
    VerificationItem decide(const std::string& item_id, Decision decision, std::optional<std::string> final_text,
                            const std::string& annotator, std::optional<std::string> note = std::nullopt) {
        auto result = pool_.transaction([&](PoolStore& p) {
            auto& items = p.verification_items();
            auto it = std::find_if(items.begin(), items.end(),
                                   [&](const VerificationItem& v) { return v.item_id == item_id; });
            if (it == items.end()) throw NotFound("no verification item " + item_id);
            if (it->status != ItemStatus::pending) {
                throw StateError("item " + item_id + " is already " + std::string(to_string(it->status)));
            }
            if (decision == Decision::edit) {
                if (!final_text || final_text->empty()) throw InvalidInput("edit requires final_text");
                if (*final_text == it->candidate_text) throw InvalidInput("edited text must differ from the candidate");
            }
            VerificationItem v = *it;
            v.annotator = annotator;
            v.decided_at = p.now();
            v.note = std::move(note);
            if (decision == Decision::reject) {
                v.status = ItemStatus::rejected;
                p.transition(v.instance_id, InstanceState::rejected);
                p.transition(v.instance_id, InstanceState::unlabeled);
                auto ls = p.loop_state();
                ++ls.rejected_total;
                p.set_loop_state(ls);
            } else {
                v.status = decision == Decision::approve ? ItemStatus::approved : ItemStatus::edited;
                v.final_text = decision == Decision::approve ? v.candidate_text : *final_text;
                p.transition(v.instance_id, InstanceState::labeled);
                LabeledPair pair;
                pair.instance_id = v.instance_id;
                pair.input_text = v.source_text;
                pair.target_text = *v.final_text;
                pair.provenance = v.provenance;
                pair.iteration = v.iteration;
                pair.decision = decision == Decision::approve ? PairDecision::approved : PairDecision::edited;
                pair.editor_note = v.note;
                p.add_pair(std::move(pair));
            }
            p.drop_candidate(v.instance_id);
            *it = v;
            return v;
        });
        changed();
        return result;
    }

    // Pending items, oldest first.
    std::vector<VerificationItem> pending(std::optional<std::int64_t> iteration = std::nullopt) const {
        return items(ItemStatus::pending, iteration);
    }

    std::vector<VerificationItem> items(std::optional<ItemStatus> status = std::nullopt,
                                        std::optional<std::int64_t> iteration = std::nullopt) const {
        return pool_.transaction([&](PoolStore& p) {
            std::vector<VerificationItem> out;
            for (const auto& v : p.verification_items()) {
                if (status && v.status != *status) continue;
                if (iteration && v.iteration != *iteration) continue;
                out.push_back(v);
            }
            std::stable_sort(out.begin(), out.end(),
                             [](const auto& a, const auto& b) { return a.enqueued_at < b.enqueued_at; });
            return out;
        });
    }

    std::optional<VerificationItem> item(const std::string& item_id) const {
        return pool_.transaction([&](PoolStore& p) -> std::optional<VerificationItem> {
            for (const auto& v : p.verification_items()) {
                if (v.item_id == item_id) return v;
            }
            return std::nullopt;
        });
    }

    StatusCounts counts(std::optional<std::int64_t> iteration = std::nullopt) const {
        StatusCounts c;
        for (const auto& v : items(std::nullopt, iteration)) {
            switch (v.status) {
                case ItemStatus::pending: ++c.pending; break;
                case ItemStatus::approved: ++c.approved; break;
                case ItemStatus::edited: ++c.edited; break;
                case ItemStatus::rejected: ++c.rejected; break;
            }
        }
        return c;
    }

    // Stand-in for a human who approves everything, in queue order.
    std::size_t auto_approve(std::optional<std::int64_t> iteration = std::nullopt,
                             const std::string& annotator = "auto") {
        std::size_t n = 0;
        for (const auto& v : pending(iteration)) {
            decide(v.item_id, Decision::approve, std::nullopt, annotator);
            ++n;
        }
        return n;
    }

    // Blocks until the iteration has no pending items. Returns false on
    // timeout.
    bool wait_decided(std::int64_t iteration, std::chrono::milliseconds timeout,
                      std::chrono::milliseconds poll = std::chrono::milliseconds{200}) {
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        std::unique_lock lock(wait_mutex_);
        while (counts(iteration).pending > 0) {
            if (std::chrono::steady_clock::now() >= deadline) return false;
            cv_.wait_for(lock, poll);
        }
        return true;
    }

    class NotFound : public InvalidInput {
    public:
        using InvalidInput::InvalidInput;
    };

private:
    void changed() {
        if (on_change_) on_change_();
        cv_.notify_all();
    }

    PoolStore& pool_;
    std::function<void()> on_change_;
    std::mutex wait_mutex_;
    std::condition_variable cv_;
};

// ---- HTTP API ---------------------------------------------------------------

struct ApiResponse {
    int status = 200;
    nlohmann::json body;
};

struct ProgressInfo {
    std::int64_t iteration = 0;
    std::int64_t budget_remaining = 0;
};

// Transport-independent request handler; the httplib binding below only
// forwards to it.
class VerifyApi {
public:
    VerifyApi(VerifyQueue& queue, PoolStore& pool) : queue_(queue), pool_(pool) {}

    void set_token(std::string token) { token_ = std::move(token); }

    void set_metrics(nlohmann::json report) {
        std::lock_guard lock(mutex_);
        metrics_ = std::move(report);
    }

    ApiResponse handle(const std::string& method, const std::string& path,
                       const std::multimap<std::string, std::string>& query, const std::string& body,
                       const std::string& authorization = {}) {
        try {
            if (!token_.empty() && authorization != "Bearer " + token_) return error(401, "unauthorized");
            static const std::regex decision_path("^/api/items/(.+)/decision$");
            std::smatch m;
            if (path == "/api/items") {
                if (method != "GET") return error(405, "method not allowed");
                return list_items(query);
            }
            if (std::regex_match(path, m, decision_path)) {
                if (method != "POST") return error(405, "method not allowed");
                return post_decision(m[1].str(), body);
            }
            if (path == "/api/progress") {
                if (method != "GET") return error(405, "method not allowed");
                return progress();
            }
            if (path == "/api/metrics") {
                if (method != "GET") return error(405, "method not allowed");
                std::lock_guard lock(mutex_);
                if (metrics_.is_null()) return error(404, "no metrics report yet");
                return {200, metrics_};
            }
            return error(404, "no route for " + path);
        } catch (const VerifyQueue::NotFound& e) {
            return error(404, e.what());
        } catch (const StateError& e) {
            return error(409, e.what());
        } catch (const InvalidInput& e) {
            return error(400, e.what());
        } catch (const nlohmann::json::exception& e) {
            return error(400, std::string("bad request body: ") + e.what());
        }
    }

private:
    static ApiResponse error(int status, const std::string& message) { return {status, {{"error", message}}}; }

    static std::optional<std::string> param(const std::multimap<std::string, std::string>& q, const std::string& key) {
        auto it = q.find(key);
        if (it == q.end() || it->second.empty()) return std::nullopt;
        return it->second;
    }

    static std::int64_t int_param(const std::string& key, const std::string& value) {
        try {
            std::size_t used = 0;
            const auto v = std::stoll(value, &used);
            if (used != value.size() || v < 0) throw std::invalid_argument(key);
            return v;
        } catch (const std::logic_error&) {
            throw InvalidInput(key + " must be a non-negative integer");
        }
    }

    ApiResponse list_items(const std::multimap<std::string, std::string>& q) {
        std::optional<ItemStatus> status;
        std::optional<std::int64_t> iteration;
        if (auto s = param(q, "status")) status = parse_item_status(*s);
        if (auto s = param(q, "iteration")) iteration = int_param("iteration", *s);
        std::int64_t offset = 0;
        std::int64_t limit = 100;
        if (auto s = param(q, "offset")) offset = int_param("offset", *s);
        if (auto s = param(q, "limit")) limit = std::min<std::int64_t>(int_param("limit", *s), 1000);
        const auto all = queue_.items(status, iteration);
        nlohmann::json items = nlohmann::json::array();
        const auto total = static_cast<std::int64_t>(all.size());
        for (auto i = offset; i < std::min(total, offset + limit); ++i) items.push_back(all[static_cast<std::size_t>(i)]);
        return {200, {{"items", items}, {"total", total}, {"offset", offset}, {"limit", limit}}};
    }

    ApiResponse post_decision(const std::string& item_id, const std::string& body) {
        const auto j = nlohmann::json::parse(body);
        if (!j.is_object()) throw InvalidInput("decision body must be an object");
        const auto decision = parse_decision(j.at("decision").get<std::string>());
        std::optional<std::string> final_text;
        if (j.contains("final_text") && !j["final_text"].is_null()) final_text = j["final_text"].get<std::string>();
        std::optional<std::string> note;
        if (j.contains("reason") && !j["reason"].is_null()) note = j["reason"].get<std::string>();
        const auto annotator = j.value("annotator", std::string("anonymous"));
        return {200, queue_.decide(item_id, decision, final_text, annotator, note)};
    }

    ApiResponse progress() {
        const auto ls = pool_.loop_state();
        return {200,
                {{"iteration", ls.iteration},
                 {"budget_remaining", ls.budget_remaining},
                 {"phase", to_string(ls.phase)},
                 {"counts", counts_json(queue_.counts())},
                 {"iteration_counts", counts_json(queue_.counts(ls.iteration))}}};
    }

    VerifyQueue& queue_;
    PoolStore& pool_;
    std::string token_;
    std::mutex mutex_;
    nlohmann::json metrics_;
};

// Routes every /api request to the handler; static_dir, when set, serves
// the annotation UI bundle.
inline void mount_verify_api(httplib::Server& server, VerifyApi& api, const std::string& static_dir = {}) {
    auto forward = [&api](const httplib::Request& req, httplib::Response& res) {
        std::multimap<std::string, std::string> query(req.params.begin(), req.params.end());
        const auto r = api.handle(req.method, req.path, query, req.body, req.get_header_value("Authorization"));
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    server.Get(R"(/api/.*)", forward);
    server.Post(R"(/api/.*)", forward);
    if (!static_dir.empty()) server.set_mount_point("/", static_dir);
}

}  // namespace kdal
