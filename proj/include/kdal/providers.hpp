#pragma once

// External model providers: learner G (generate + finetune), teacher S
// (chat), auxiliary scorer R (logits) and embedder. Each has a typed
// interface, a JSON wire contract, and transports that carry the JSON
// over HTTP, into an in-process implementation, or through a
// record/replay log.

#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "kdal/error.hpp"
#include "kdal/log.hpp"
#include "kdal/pool_store.hpp"

namespace kdal {

// ---- typed contracts --------------------------------------------------------

struct GenerationRequest {
    std::string input;
    std::int64_t max_tokens = 128;
    double temperature = 0.0;
    std::string revision;  // model revision to decode with; empty means the service default
};

struct TrainingExample {
    std::string input;
    std::string target;
};

struct FinetuneRequest {
    std::string base_revision;
    std::vector<TrainingExample> examples;
    std::int64_t epochs = 10;
    double learning_rate = 3e-5;
};

struct ChatMessage {
    std::string role;  // "system" or "user"
    std::string content;
};

struct ChatRequest {
    std::vector<ChatMessage> messages;
    double temperature = 0.7;
    std::string model;
};

struct ChatResponse {
    std::string content;
    std::string model;
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
};

class LearnerProvider {
public:
    virtual ~LearnerProvider() = default;
    virtual std::string generate(const GenerationRequest& request) = 0;
    // Trains from the base checkpoint and returns the new model revision.
    virtual std::string finetune(const FinetuneRequest& request) = 0;
    virtual void health_check() {}
};

class TeacherProvider {
public:
    virtual ~TeacherProvider() = default;
    virtual ChatResponse chat(const ChatRequest& request) = 0;
    virtual void health_check() {}
};

class ScorerProvider {
public:
    virtual ~ScorerProvider() = default;
    virtual std::vector<double> score(const std::string& input, const std::string& output) = 0;
    virtual void health_check() {}
};

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::vector<Vector> embed(const std::vector<std::string>& texts) = 0;
    virtual void health_check() {}
};

// ---- retry ------------------------------------------------------------------

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds initial_delay{200};
    double backoff = 2.0;
    std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
        std::this_thread::sleep_for(d);
    };

    static RetryPolicy immediate(int attempts = 3) {
        RetryPolicy p;
        p.attempts = attempts;
        p.initial_delay = std::chrono::milliseconds{0};
        p.sleep = [](std::chrono::milliseconds) {};
        return p;
    }
};

// Retries provider failures with exponential backoff; the last failure
// propagates. Other exceptions propagate immediately.
template <typename Fn>
auto with_retry(const RetryPolicy& policy, Fn&& fn) -> decltype(fn()) {
    auto delay = policy.initial_delay;
    for (int attempt = 1;; ++attempt) {
        try {
            return fn();
        } catch (const ProviderError&) {
            if (attempt >= policy.attempts) throw;
        }
        if (delay.count() > 0) policy.sleep(delay);
        delay = std::chrono::milliseconds(static_cast<std::int64_t>(static_cast<double>(delay.count()) * policy.backoff));
    }
}

// ---- JSON wire format -------------------------------------------------------

namespace wire {

inline constexpr const char* embed = "embed";
inline constexpr const char* score = "score";
inline constexpr const char* generate = "generate";
inline constexpr const char* finetune = "finetune";
inline constexpr const char* chat = "chat";

inline nlohmann::json embed_request(const std::vector<std::string>& texts) { return {{"texts", texts}}; }

inline std::vector<Vector> embed_response(const nlohmann::json& j) {
    if (!j.contains("vectors") || !j["vectors"].is_array()) throw ProviderError("embedder response lacks \"vectors\"");
    return j["vectors"].get<std::vector<Vector>>();
}

inline nlohmann::json score_request(const std::string& input, const std::string& output) {
    return {{"input", input}, {"output", output}};
}

inline std::vector<double> score_response(const nlohmann::json& j) {
    if (!j.contains("logits") || !j["logits"].is_array()) throw ProviderError("scorer response lacks \"logits\"");
    return j["logits"].get<std::vector<double>>();
}

inline nlohmann::json generate_request(const GenerationRequest& r) {
    nlohmann::json j{{"input", r.input}, {"max_tokens", r.max_tokens}, {"temperature", r.temperature}};
    if (!r.revision.empty()) j["revision"] = r.revision;
    return j;
}

inline std::string generate_response(const nlohmann::json& j) {
    if (!j.contains("output") || !j["output"].is_string()) throw ProviderError("learner response lacks \"output\"");
    return j["output"].get<std::string>();
}

inline nlohmann::json finetune_request(const FinetuneRequest& r) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& ex : r.examples) pairs.push_back({{"input", ex.input}, {"target", ex.target}});
    return {{"base", r.base_revision},
            {"pairs", std::move(pairs)},
            {"epochs", r.epochs},
            {"learning_rate", r.learning_rate}};
}

inline std::string finetune_response(const nlohmann::json& j) {
    if (!j.contains("revision") || !j["revision"].is_string()) throw ProviderError("finetune response lacks \"revision\"");
    return j["revision"].get<std::string>();
}

inline nlohmann::json chat_request(const ChatRequest& r) {
    nlohmann::json messages = nlohmann::json::array();
    for (const auto& m : r.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
    nlohmann::json j{{"messages", std::move(messages)}, {"temperature", r.temperature}};
    if (!r.model.empty()) j["model"] = r.model;
    return j;
}

// Accepts the flat {"content"} form and the OpenAI chat-completions form.
inline ChatResponse chat_response(const nlohmann::json& j) {
    ChatResponse out;
    if (j.contains("choices")) {
        const auto& choices = j["choices"];
        if (!choices.is_array() || choices.empty() || !choices[0].contains("message") ||
            !choices[0]["message"].contains("content") || !choices[0]["message"]["content"].is_string()) {
            throw ProviderError("teacher response lacks choices[0].message.content");
        }
        out.content = choices[0]["message"]["content"].get<std::string>();
        out.model = j.value("model", std::string{});
        if (j.contains("usage") && j["usage"].is_object()) {
            out.prompt_tokens = j["usage"].value("prompt_tokens", std::int64_t{0});
            out.completion_tokens = j["usage"].value("completion_tokens", std::int64_t{0});
        }
        return out;
    }
    if (!j.contains("content") || !j["content"].is_string()) throw ProviderError("teacher response lacks \"content\"");
    out.content = j["content"].get<std::string>();
    out.model = j.value("model", std::string{});
    out.prompt_tokens = j.value("prompt_tokens", std::int64_t{0});
    out.completion_tokens = j.value("completion_tokens", std::int64_t{0});
    return out;
}

}  // namespace wire

// ---- transports -------------------------------------------------------------

class Transport {
public:
    virtual ~Transport() = default;
    virtual nlohmann::json post(const std::string& route, const nlohmann::json& body) = 0;
    virtual void health_check(const std::string& /*route*/) {}
};

struct HttpEndpoint {
    std::string url;  // e.g. "http://localhost:8081/v1/generate"
    std::string token;
};

// Posts JSON to per-route URLs with an optional bearer token.
class HttpTransport final : public Transport {
public:
    explicit HttpTransport(std::map<std::string, HttpEndpoint> routes,
                           std::chrono::milliseconds timeout = std::chrono::seconds{60})
        : routes_(std::move(routes)), timeout_(timeout) {}

    nlohmann::json post(const std::string& route, const nlohmann::json& body) override {
        const auto& ep = endpoint(route);
        const auto [origin, path] = split_url(ep.url);
        httplib::Client client(origin);
        configure(client, ep);
        auto res = client.Post(path, body.dump(), "application/json");
        if (!res) throw ProviderError(route + ": request to " + ep.url + " failed: " + httplib::to_string(res.error()));
        if (res->status < 200 || res->status >= 300) {
            throw ProviderError(route + ": " + ep.url + " returned HTTP " + std::to_string(res->status));
        }
        try {
            return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception&) {
            throw ProviderError(route + ": non-JSON response from " + ep.url);
        }
    }

    // GET <origin>/health must answer 2xx.
    void health_check(const std::string& route) override {
        const auto& ep = endpoint(route);
        const auto [origin, path] = split_url(ep.url);
        httplib::Client client(origin);
        configure(client, ep);
        auto res = client.Get("/health");
        if (!res || res->status < 200 || res->status >= 300) {
            throw ProviderError(route + ": health check failed for " + origin);
        }
    }

    static std::pair<std::string, std::string> split_url(const std::string& url) {
        const auto scheme = url.find("://");
        const auto start = scheme == std::string::npos ? 0 : scheme + 3;
        const auto slash = url.find('/', start);
        if (slash == std::string::npos) return {url, "/"};
        return {url.substr(0, slash), url.substr(slash)};
    }

private:
    const HttpEndpoint& endpoint(const std::string& route) const {
        auto it = routes_.find(route);
        if (it == routes_.end()) throw ConfigError("no endpoint configured for route " + route);
        return it->second;
    }

    void configure(httplib::Client& client, const HttpEndpoint& ep) const {
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_).count();
        client.set_connection_timeout(secs, 0);
        client.set_read_timeout(secs, 0);
        client.set_write_timeout(secs, 0);
        if (!ep.token.empty()) client.set_bearer_token_auth(ep.token);
    }

    std::map<std::string, HttpEndpoint> routes_;
    std::chrono::milliseconds timeout_;
};

// Serves the wire contract from typed in-process providers. Used for mock
// runs that still need every call to cross the JSON boundary.
class LocalTransport final : public Transport {
public:
    LocalTransport(LearnerProvider* learner, TeacherProvider* teacher, ScorerProvider* scorer,
                   EmbeddingProvider* embedder)
        : learner_(learner), teacher_(teacher), scorer_(scorer), embedder_(embedder) {}

    nlohmann::json post(const std::string& route, const nlohmann::json& body) override {
        try {
            if (route == wire::embed && embedder_) {
                return {{"vectors", embedder_->embed(body.at("texts").get<std::vector<std::string>>())}};
            }
            if (route == wire::score && scorer_) {
                return {{"logits", scorer_->score(body.at("input").get<std::string>(),
                                                  body.at("output").get<std::string>())}};
            }
            if (route == wire::generate && learner_) {
                GenerationRequest r{body.at("input").get<std::string>(), body.at("max_tokens").get<std::int64_t>(),
                                    body.at("temperature").get<double>(), body.value("revision", std::string())};
                return {{"output", learner_->generate(r)}};
            }
            if (route == wire::finetune && learner_) {
                FinetuneRequest r;
                r.base_revision = body.at("base").get<std::string>();
                for (const auto& p : body.at("pairs")) {
                    r.examples.push_back({p.at("input").get<std::string>(), p.at("target").get<std::string>()});
                }
                r.epochs = body.at("epochs").get<std::int64_t>();
                r.learning_rate = body.at("learning_rate").get<double>();
                return {{"revision", learner_->finetune(r)}};
            }
            if (route == wire::chat && teacher_) {
                ChatRequest r;
                for (const auto& m : body.at("messages")) {
                    r.messages.push_back({m.at("role").get<std::string>(), m.at("content").get<std::string>()});
                }
                r.temperature = body.at("temperature").get<double>();
                r.model = body.value("model", std::string{});
                const auto resp = teacher_->chat(r);
                return {{"content", resp.content},
                        {"model", resp.model},
                        {"prompt_tokens", resp.prompt_tokens},
                        {"completion_tokens", resp.completion_tokens}};
            }
        } catch (const nlohmann::json::exception& e) {
            throw ProviderError(route + ": malformed request: " + e.what());
        }
        throw ConfigError("no local provider for route " + route);
    }

private:
    LearnerProvider* learner_;
    TeacherProvider* teacher_;
    ScorerProvider* scorer_;
    EmbeddingProvider* embedder_;
};

// Appends one {"request","response","timestamp"} JSON line per call.
class ReplayLogWriter {
public:
    explicit ReplayLogWriter(const std::filesystem::path& path) {
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        out_.open(path, std::ios::app | std::ios::binary);
        if (!out_) throw ConfigError("cannot open replay log " + path.string());
    }

    void append(const std::string& route, const nlohmann::json& body, const nlohmann::json& response) {
        const auto ts = std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::system_clock::now().time_since_epoch())
                            .count();
        nlohmann::json line{{"request", {{"route", route}, {"body", body}}}, {"response", response}, {"timestamp", ts}};
        std::lock_guard lock(mutex_);
        out_ << line.dump() << '\n';
        out_.flush();
    }

private:
    std::ofstream out_;
    std::mutex mutex_;
};

class RecordingTransport final : public Transport {
public:
    RecordingTransport(Transport& inner, std::shared_ptr<ReplayLogWriter> log) : inner_(inner), log_(std::move(log)) {}

    nlohmann::json post(const std::string& route, const nlohmann::json& body) override {
        auto response = inner_.post(route, body);
        log_->append(route, body, response);
        return response;
    }

    void health_check(const std::string& route) override { inner_.health_check(route); }

private:
    Transport& inner_;
    std::shared_ptr<ReplayLogWriter> log_;
};

// Answers requests from a recorded log, matched on (route, body). Repeated
// identical requests are served in recorded order, and the last response
// is reused once exhausted, since providers are deterministic per request.
class ReplayTransport final : public Transport {
public:
    explicit ReplayTransport(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigError("cannot open replay log " + path.string());
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            try {
                auto j = nlohmann::json::parse(line);
                const auto& req = j.at("request");
                entries_[key(req.at("route").get<std::string>(), req.at("body"))].responses.push_back(j.at("response"));
            } catch (const nlohmann::json::exception&) {
                throw ConfigError("malformed replay log line " + std::to_string(line_no));
            }
        }
    }

    nlohmann::json post(const std::string& route, const nlohmann::json& body) override {
        std::lock_guard lock(mutex_);
        auto it = entries_.find(key(route, body));
        if (it == entries_.end()) throw ProviderError(route + ": no recorded response for request");
        auto& entry = it->second;
        const auto idx = std::min(entry.next, entry.responses.size() - 1);
        ++entry.next;
        return entry.responses[idx];
    }

    std::size_t size() const { return entries_.size(); }

private:
    struct Entry {
        std::vector<nlohmann::json> responses;
        std::size_t next = 0;
    };

    static std::string key(const std::string& route, const nlohmann::json& body) { return route + "\n" + body.dump(); }

    std::map<std::string, Entry> entries_;
    std::mutex mutex_;
};

// ---- JSON clients -----------------------------------------------------------

class JsonLearner final : public LearnerProvider {
public:
    explicit JsonLearner(Transport& t) : t_(t) {}
    std::string generate(const GenerationRequest& r) override {
        return wire::generate_response(t_.post(wire::generate, wire::generate_request(r)));
    }
    std::string finetune(const FinetuneRequest& r) override {
        return wire::finetune_response(t_.post(wire::finetune, wire::finetune_request(r)));
    }
    void health_check() override { t_.health_check(wire::generate); }

private:
    Transport& t_;
};

class JsonTeacher final : public TeacherProvider {
public:
    explicit JsonTeacher(Transport& t) : t_(t) {}
    ChatResponse chat(const ChatRequest& r) override { return wire::chat_response(t_.post(wire::chat, wire::chat_request(r))); }
    void health_check() override { t_.health_check(wire::chat); }

private:
    Transport& t_;
};

class JsonScorer final : public ScorerProvider {
public:
    explicit JsonScorer(Transport& t) : t_(t) {}
    std::vector<double> score(const std::string& input, const std::string& output) override {
        return wire::score_response(t_.post(wire::score, wire::score_request(input, output)));
    }
    void health_check() override { t_.health_check(wire::score); }

private:
    Transport& t_;
};

class JsonEmbedder final : public EmbeddingProvider {
public:
    explicit JsonEmbedder(Transport& t) : t_(t) {}
    std::vector<Vector> embed(const std::vector<std::string>& texts) override {
        return wire::embed_response(t_.post(wire::embed, wire::embed_request(texts)));
    }
    void health_check() override { t_.health_check(wire::embed); }

private:
    Transport& t_;
};

}  // namespace kdal
