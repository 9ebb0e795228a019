#pragma once

// Run configuration: one JSON document holding every seed, quota, endpoint
// and decoding parameter. Parsed and validated once at startup; unknown
// keys are rejected so typos fail loudly.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "kdal/distill.hpp"
#include "kdal/embed_cluster.hpp"
#include "kdal/error.hpp"
#include "kdal/loop_state.hpp"
#include "kdal/mock_world.hpp"
#include "kdal/pool_store.hpp"
#include "kdal/scoring.hpp"

namespace kdal {

struct EndpointConfig {
    std::string url;
    std::string token_env;  // name of the environment variable holding the bearer token
};

struct Config {
    std::uint64_t seed = 0;
    // Persisted counter instead of wall-clock timestamps.
    bool logical_clock = false;

    struct Pool {
        std::string input;
        std::string snapshot = "state/pool.json";
        std::int64_t test_size = 400;
    } pool;

    struct Loop {
        Strategy strategy = Strategy::cluster;
        std::int64_t budget = 100;
        std::int64_t batch_size = 20;
        std::int64_t clusters = 10;
        std::int64_t bootstrap = 100;
    } loop;

    KMeansOptions kmeans;
    RegulatedAttribute attribute;
    nlohmann::json template_spec = {{"builtin", "counter_narration"}};

    struct Learner {
        EndpointConfig generate;
        EndpointConfig finetune;
        std::int64_t max_tokens = 128;
        double temperature = 0.0;
        std::string base_revision = "base";
        std::int64_t epochs = 10;
        double learning_rate = 3e-5;
    } learner;

    struct Teacher {
        EndpointConfig endpoint;
        std::string model = "gpt-4";
        double temperature = 0.7;
    } teacher;

    EndpointConfig scorer;

    struct Embedder {
        EndpointConfig endpoint;
        std::size_t batch_size = 64;
    } embedder;

    struct Providers {
        bool mock = false;
        std::int64_t timeout_sec = 60;
        std::size_t concurrency = 4;
        double rate_limit_per_sec = 0.0;
        std::size_t retry_attempts = 3;
        std::string record;  // replay log to append every provider call to
        std::string replay;  // replay log to answer every provider call from
        SyntheticPoolSpec mock_spec = SyntheticPoolSpec::skewed_default();
    } providers;

    struct Verification {
        std::string mode = "auto";  // auto | human
        std::int64_t timeout_sec = 86400;
        std::int64_t poll_ms = 500;
        std::string host = "127.0.0.1";
        int port = 8080;
        std::string token_env;
        std::string static_dir;
    } verification;

    struct Output {
        std::string dir = "out";
    } output;

    Template make_template() const { return Template::from_json(template_spec); }

    void validate() const;
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& where, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [key, _] : j.items()) {
        if (!allowed.contains(key)) throw ConfigError("unknown key " + where + "." + key);
    }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

inline EndpointConfig endpoint_from(const nlohmann::json& j, const std::string& where) {
    check_keys(j, where, {"url", "token_env"});
    EndpointConfig e;
    read(j, "url", e.url);
    read(j, "token_env", e.token_env);
    return e;
}

}  // namespace detail

inline Config config_from_json(const nlohmann::json& j) {
    using detail::check_keys;
    using detail::read;
    Config c;
    try {
        check_keys(j, "config",
                   {"seed", "logical_clock", "pool", "loop", "kmeans", "attribute", "template", "learner", "teacher",
                    "scorer", "embedder", "providers", "verification", "output"});
        read(j, "seed", c.seed);
        read(j, "logical_clock", c.logical_clock);
        if (j.contains("pool")) {
            const auto& p = j["pool"];
            check_keys(p, "pool", {"input", "snapshot", "test_size"});
            read(p, "input", c.pool.input);
            read(p, "snapshot", c.pool.snapshot);
            read(p, "test_size", c.pool.test_size);
        }
        if (j.contains("loop")) {
            const auto& l = j["loop"];
            check_keys(l, "loop", {"strategy", "budget", "batch_size", "clusters", "bootstrap"});
            if (l.contains("strategy")) c.loop.strategy = parse_strategy(l["strategy"].get<std::string>());
            read(l, "budget", c.loop.budget);
            read(l, "batch_size", c.loop.batch_size);
            read(l, "clusters", c.loop.clusters);
            read(l, "bootstrap", c.loop.bootstrap);
        }
        if (j.contains("kmeans")) {
            const auto& k = j["kmeans"];
            check_keys(k, "kmeans", {"max_iter", "tol", "n_init"});
            read(k, "max_iter", c.kmeans.max_iter);
            read(k, "tol", c.kmeans.tol);
            read(k, "n_init", c.kmeans.n_init);
        }
        if (j.contains("attribute")) {
            const auto& a = j["attribute"];
            check_keys(a, "attribute", {"name", "adhere_index", "description"});
            read(a, "name", c.attribute.name);
            read(a, "adhere_index", c.attribute.adhere_index);
            read(a, "description", c.attribute.description);
        }
        if (j.contains("template")) c.template_spec = j["template"];
        if (j.contains("learner")) {
            const auto& l = j["learner"];
            check_keys(l, "learner",
                       {"generate", "finetune", "max_tokens", "temperature", "base_revision", "epochs",
                        "learning_rate"});
            if (l.contains("generate")) c.learner.generate = detail::endpoint_from(l["generate"], "learner.generate");
            if (l.contains("finetune")) c.learner.finetune = detail::endpoint_from(l["finetune"], "learner.finetune");
            read(l, "max_tokens", c.learner.max_tokens);
            read(l, "temperature", c.learner.temperature);
            read(l, "base_revision", c.learner.base_revision);
            read(l, "epochs", c.learner.epochs);
            read(l, "learning_rate", c.learner.learning_rate);
        }
        if (j.contains("teacher")) {
            const auto& t = j["teacher"];
            check_keys(t, "teacher", {"url", "token_env", "model", "temperature"});
            read(t, "url", c.teacher.endpoint.url);
            read(t, "token_env", c.teacher.endpoint.token_env);
            read(t, "model", c.teacher.model);
            read(t, "temperature", c.teacher.temperature);
        }
        if (j.contains("scorer")) c.scorer = detail::endpoint_from(j["scorer"], "scorer");
        if (j.contains("embedder")) {
            const auto& e = j["embedder"];
            check_keys(e, "embedder", {"url", "token_env", "batch_size"});
            read(e, "url", c.embedder.endpoint.url);
            read(e, "token_env", c.embedder.endpoint.token_env);
            read(e, "batch_size", c.embedder.batch_size);
        }
        if (j.contains("providers")) {
            const auto& p = j["providers"];
            check_keys(p, "providers",
                       {"mock", "timeout_sec", "concurrency", "rate_limit_per_sec", "retry_attempts", "record",
                        "replay", "mock_spec"});
            read(p, "mock", c.providers.mock);
            read(p, "timeout_sec", c.providers.timeout_sec);
            read(p, "concurrency", c.providers.concurrency);
            read(p, "rate_limit_per_sec", c.providers.rate_limit_per_sec);
            read(p, "retry_attempts", c.providers.retry_attempts);
            read(p, "record", c.providers.record);
            read(p, "replay", c.providers.replay);
            if (p.contains("mock_spec")) c.providers.mock_spec = spec_from_json(p["mock_spec"]);
        }
        if (j.contains("verification")) {
            const auto& v = j["verification"];
            check_keys(v, "verification",
                       {"mode", "timeout_sec", "poll_ms", "host", "port", "token_env", "static_dir"});
            read(v, "mode", c.verification.mode);
            read(v, "timeout_sec", c.verification.timeout_sec);
            read(v, "poll_ms", c.verification.poll_ms);
            read(v, "host", c.verification.host);
            read(v, "port", c.verification.port);
            read(v, "token_env", c.verification.token_env);
            read(v, "static_dir", c.verification.static_dir);
        }
        if (j.contains("output")) {
            const auto& o = j["output"];
            check_keys(o, "output", {"dir"});
            read(o, "dir", c.output.dir);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    } catch (const InvalidInput& e) {
        throw ConfigError(e.what());
    }
    c.validate();
    return c;
}

inline void Config::validate() const {
    if (pool.test_size < 0) throw ConfigError("pool.test_size must be non-negative");
    if (loop.budget < 0) throw ConfigError("loop.budget must be non-negative");
    if (loop.batch_size < 1) throw ConfigError("loop.batch_size must be at least 1");
    if (loop.clusters < 1) throw ConfigError("loop.clusters must be at least 1");
    if (loop.bootstrap < 0) throw ConfigError("loop.bootstrap must be non-negative");
    if (kmeans.n_init < 1 || kmeans.max_iter < 1 || !(kmeans.tol >= 0.0)) throw ConfigError("bad kmeans options");
    if (learner.epochs < 1 || learner.max_tokens < 1) throw ConfigError("learner.epochs and max_tokens must be positive");
    if (teacher.temperature < 0.0 || learner.temperature < 0.0) throw ConfigError("temperatures must be non-negative");
    if (embedder.batch_size < 1) throw ConfigError("embedder.batch_size must be at least 1");
    if (providers.concurrency < 1) throw ConfigError("providers.concurrency must be at least 1");
    if (providers.retry_attempts < 1) throw ConfigError("providers.retry_attempts must be at least 1");
    if (providers.timeout_sec < 1) throw ConfigError("providers.timeout_sec must be positive");
    if (providers.rate_limit_per_sec < 0.0) throw ConfigError("providers.rate_limit_per_sec must be non-negative");
    if (!providers.record.empty() && !providers.replay.empty()) {
        throw ConfigError("providers.record and providers.replay are mutually exclusive");
    }
    if (verification.mode != "auto" && verification.mode != "human") {
        throw ConfigError("verification.mode must be auto or human");
    }
    if (verification.timeout_sec < 1 || verification.poll_ms < 1) throw ConfigError("bad verification timing");
    if (verification.port < 0 || verification.port > 65535) throw ConfigError("verification.port out of range");
    make_template();
    if (!providers.mock && providers.replay.empty()) {
        const std::pair<const char*, const EndpointConfig*> required[] = {{"learner.generate", &learner.generate},
                                                                          {"learner.finetune", &learner.finetune},
                                                                          {"teacher", &teacher.endpoint},
                                                                          {"scorer", &scorer},
                                                                          {"embedder", &embedder.endpoint}};
        for (const auto& [name, ep] : required) {
            if (ep->url.empty()) throw ConfigError(std::string(name) + " url is required unless providers.mock is set");
        }
    }
}

inline nlohmann::json read_config_json(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
}

inline Config load_config(const std::filesystem::path& path) { return config_from_json(read_config_json(path)); }

// Reads the bearer token named by an endpoint; a named but unset variable is
// a configuration error.
inline std::string resolve_token(const EndpointConfig& ep) {
    if (ep.token_env.empty()) return {};
    const char* v = std::getenv(ep.token_env.c_str());
    if (!v) throw ConfigError("environment variable " + ep.token_env + " is not set");
    return v;
}

}  // namespace kdal
