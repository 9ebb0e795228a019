#pragma once

// Data model for the unlabeled pool U, the labeled set L, and every
// lifecycle transition between them. Other modules read and mutate pool
// state only through PoolStore.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kdal/error.hpp"
#include "kdal/log.hpp"
#include "kdal/loop_state.hpp"

namespace kdal {

using Vector = std::vector<double>;

enum class InstanceState { unlabeled, selected, distilled, pending_verification, labeled, rejected };
enum class Provenance { bootstrap, random, topn, cluster };
enum class PairDecision { approved, edited };
enum class ItemStatus { pending, approved, edited, rejected };
enum class FailureKind { scoring_failure, distillation_failure };

namespace detail {
inline constexpr std::array<std::string_view, 6> state_names{
    "unlabeled", "selected", "distilled", "pending_verification", "labeled", "rejected"};
inline constexpr std::array<std::string_view, 4> provenance_names{"bootstrap", "random", "topn", "cluster"};
inline constexpr std::array<std::string_view, 2> pair_decision_names{"approved", "edited"};
inline constexpr std::array<std::string_view, 4> item_status_names{"pending", "approved", "edited", "rejected"};
inline constexpr std::array<std::string_view, 2> failure_names{"scoring_failure", "distillation_failure"};
}  // namespace detail

inline std::string_view to_string(InstanceState s) { return detail::enum_name(s, detail::state_names); }
inline std::string_view to_string(Provenance p) { return detail::enum_name(p, detail::provenance_names); }
inline std::string_view to_string(PairDecision d) { return detail::enum_name(d, detail::pair_decision_names); }
inline std::string_view to_string(ItemStatus s) { return detail::enum_name(s, detail::item_status_names); }
inline std::string_view to_string(FailureKind k) { return detail::enum_name(k, detail::failure_names); }

inline InstanceState parse_instance_state(std::string_view s) {
    return detail::enum_parse<InstanceState>(s, detail::state_names, "instance state");
}
inline Provenance parse_provenance(std::string_view s) {
    return detail::enum_parse<Provenance>(s, detail::provenance_names, "provenance");
}
inline PairDecision parse_pair_decision(std::string_view s) {
    return detail::enum_parse<PairDecision>(s, detail::pair_decision_names, "decision");
}
inline ItemStatus parse_item_status(std::string_view s) {
    return detail::enum_parse<ItemStatus>(s, detail::item_status_names, "item status");
}
inline FailureKind parse_failure_kind(std::string_view s) {
    return detail::enum_parse<FailureKind>(s, detail::failure_names, "failure kind");
}

inline Provenance provenance_for(Strategy s) {
    switch (s) {
        case Strategy::random: return Provenance::random;
        case Strategy::topn: return Provenance::topn;
        case Strategy::cluster: return Provenance::cluster;
    }
    return Provenance::random;
}

// Forward lifecycle plus the two release edges: rejected -> unlabeled makes a
// rejected instance eligible again, selected -> unlabeled releases an
// instance whose distillation failed.
inline bool transition_allowed(InstanceState from, InstanceState to) {
    using S = InstanceState;
    switch (from) {
        case S::unlabeled: return to == S::selected;
        case S::selected: return to == S::distilled || to == S::unlabeled;
        case S::distilled: return to == S::pending_verification;
        case S::pending_verification: return to == S::labeled || to == S::rejected;
        case S::labeled: return false;
        case S::rejected: return to == S::unlabeled;
    }
    return false;
}

struct Instance {
    std::string id;
    std::string source_text;
    std::optional<std::string> subgroup;
    std::optional<Vector> embedding;
    std::optional<std::int64_t> cluster_id;
    InstanceState state = InstanceState::unlabeled;

    bool operator==(const Instance&) const = default;
};

struct LabeledPair {
    std::string instance_id;
    std::string input_text;
    std::string target_text;
    Provenance provenance = Provenance::bootstrap;
    std::int64_t iteration = 0;
    PairDecision decision = PairDecision::approved;
    std::optional<std::string> editor_note;

    bool operator==(const LabeledPair&) const = default;
};

struct DistillationCandidate {
    std::string instance_id;
    std::int64_t iteration = 0;
    std::string prompt;
    std::string candidate_text;
    std::string model;
    double latency_ms = 0.0;
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
    std::int64_t created_at = 0;

    bool operator==(const DistillationCandidate&) const = default;
};

struct VerificationItem {
    std::string item_id;  // "<instance id>#<iteration>"
    std::string instance_id;
    std::string source_text;
    std::string candidate_text;
    ItemStatus status = ItemStatus::pending;
    std::optional<std::string> final_text;
    std::string annotator;
    std::optional<std::int64_t> decided_at;
    std::int64_t iteration = 0;
    Provenance provenance = Provenance::bootstrap;
    std::int64_t enqueued_at = 0;
    std::optional<std::string> note;
    std::optional<std::int64_t> cluster_id;
    std::optional<double> informativeness;

    bool operator==(const VerificationItem&) const = default;
};

struct AuditEntry {
    std::int64_t seq = 0;
    std::string instance_id;
    InstanceState from = InstanceState::unlabeled;
    InstanceState to = InstanceState::unlabeled;
    std::int64_t iteration = 0;
    std::int64_t timestamp = 0;

    bool operator==(const AuditEntry&) const = default;
};

struct FailureRecord {
    std::string instance_id;
    std::int64_t iteration = 0;
    FailureKind kind = FailureKind::scoring_failure;
    std::string message;

    bool operator==(const FailureRecord&) const = default;
};

inline std::string item_id_for(std::string_view instance_id, std::int64_t iteration) {
    return std::string(instance_id) + "#" + std::to_string(iteration);
}

// ---- JSON mapping -----------------------------------------------------------

inline void to_json(nlohmann::json& j, const Instance& x) {
    j = nlohmann::json{{"id", x.id}, {"text", x.source_text}, {"state", to_string(x.state)}};
    j["subgroup"] = x.subgroup ? nlohmann::json(*x.subgroup) : nlohmann::json(nullptr);
    j["embedding"] = x.embedding ? nlohmann::json(*x.embedding) : nlohmann::json(nullptr);
    j["cluster_id"] = x.cluster_id ? nlohmann::json(*x.cluster_id) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, Instance& x) {
    j.at("id").get_to(x.id);
    j.at("text").get_to(x.source_text);
    x.state = parse_instance_state(j.at("state").get<std::string>());
    x.subgroup = j.at("subgroup").is_null() ? std::nullopt : std::optional(j["subgroup"].get<std::string>());
    x.embedding = j.at("embedding").is_null() ? std::nullopt : std::optional(j["embedding"].get<Vector>());
    x.cluster_id =
        j.at("cluster_id").is_null() ? std::nullopt : std::optional(j["cluster_id"].get<std::int64_t>());
}

inline void to_json(nlohmann::json& j, const LabeledPair& p) {
    j = nlohmann::json{{"id", p.instance_id},          {"input", p.input_text},
                       {"target", p.target_text},      {"provenance", to_string(p.provenance)},
                       {"iteration", p.iteration},     {"decision", to_string(p.decision)}};
    j["editor_note"] = p.editor_note ? nlohmann::json(*p.editor_note) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, LabeledPair& p) {
    j.at("id").get_to(p.instance_id);
    j.at("input").get_to(p.input_text);
    j.at("target").get_to(p.target_text);
    p.provenance = parse_provenance(j.at("provenance").get<std::string>());
    j.at("iteration").get_to(p.iteration);
    p.decision = parse_pair_decision(j.at("decision").get<std::string>());
    p.editor_note =
        j.at("editor_note").is_null() ? std::nullopt : std::optional(j["editor_note"].get<std::string>());
}

inline void to_json(nlohmann::json& j, const DistillationCandidate& c) {
    j = nlohmann::json{{"id", c.instance_id},
                       {"iteration", c.iteration},
                       {"prompt", c.prompt},
                       {"candidate", c.candidate_text},
                       {"model", c.model},
                       {"latency_ms", c.latency_ms},
                       {"prompt_tokens", c.prompt_tokens},
                       {"completion_tokens", c.completion_tokens},
                       {"created_at", c.created_at}};
}

inline void from_json(const nlohmann::json& j, DistillationCandidate& c) {
    j.at("id").get_to(c.instance_id);
    j.at("iteration").get_to(c.iteration);
    j.at("prompt").get_to(c.prompt);
    j.at("candidate").get_to(c.candidate_text);
    j.at("model").get_to(c.model);
    j.at("latency_ms").get_to(c.latency_ms);
    j.at("prompt_tokens").get_to(c.prompt_tokens);
    j.at("completion_tokens").get_to(c.completion_tokens);
    j.at("created_at").get_to(c.created_at);
}

namespace detail {
template <typename T>
nlohmann::json opt_json(const std::optional<T>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}
template <typename T>
std::optional<T> opt_from(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<T>();
}
}  // namespace detail

inline void to_json(nlohmann::json& j, const VerificationItem& v) {
    j = nlohmann::json{{"item_id", v.item_id},
                       {"id", v.instance_id},
                       {"source_text", v.source_text},
                       {"candidate_text", v.candidate_text},
                       {"status", to_string(v.status)},
                       {"final_text", detail::opt_json(v.final_text)},
                       {"annotator", v.annotator},
                       {"decided_at", detail::opt_json(v.decided_at)},
                       {"iteration", v.iteration},
                       {"provenance", to_string(v.provenance)},
                       {"enqueued_at", v.enqueued_at},
                       {"note", detail::opt_json(v.note)},
                       {"cluster_id", detail::opt_json(v.cluster_id)},
                       {"informativeness", detail::opt_json(v.informativeness)}};
}

inline void from_json(const nlohmann::json& j, VerificationItem& v) {
    j.at("item_id").get_to(v.item_id);
    j.at("id").get_to(v.instance_id);
    j.at("source_text").get_to(v.source_text);
    j.at("candidate_text").get_to(v.candidate_text);
    v.status = parse_item_status(j.at("status").get<std::string>());
    v.final_text = detail::opt_from<std::string>(j, "final_text");
    j.at("annotator").get_to(v.annotator);
    v.decided_at = detail::opt_from<std::int64_t>(j, "decided_at");
    j.at("iteration").get_to(v.iteration);
    v.provenance = parse_provenance(j.at("provenance").get<std::string>());
    j.at("enqueued_at").get_to(v.enqueued_at);
    v.note = detail::opt_from<std::string>(j, "note");
    v.cluster_id = detail::opt_from<std::int64_t>(j, "cluster_id");
    v.informativeness = detail::opt_from<double>(j, "informativeness");
}

inline void to_json(nlohmann::json& j, const AuditEntry& a) {
    j = nlohmann::json{{"seq", a.seq},
                       {"id", a.instance_id},
                       {"from", to_string(a.from)},
                       {"to", to_string(a.to)},
                       {"iteration", a.iteration},
                       {"timestamp", a.timestamp}};
}

inline void from_json(const nlohmann::json& j, AuditEntry& a) {
    j.at("seq").get_to(a.seq);
    j.at("id").get_to(a.instance_id);
    a.from = parse_instance_state(j.at("from").get<std::string>());
    a.to = parse_instance_state(j.at("to").get<std::string>());
    j.at("iteration").get_to(a.iteration);
    j.at("timestamp").get_to(a.timestamp);
}

inline void to_json(nlohmann::json& j, const FailureRecord& f) {
    j = nlohmann::json{
        {"id", f.instance_id}, {"iteration", f.iteration}, {"kind", to_string(f.kind)}, {"message", f.message}};
}

inline void from_json(const nlohmann::json& j, FailureRecord& f) {
    j.at("id").get_to(f.instance_id);
    j.at("iteration").get_to(f.iteration);
    f.kind = parse_failure_kind(j.at("kind").get<std::string>());
    j.at("message").get_to(f.message);
}

// ---- snapshot ---------------------------------------------------------------

inline constexpr std::int64_t kSchemaVersion = 1;

// Complete, value-semantic state of a pool. Maps keep everything ordered by
// id so serialization is canonical.
struct PoolSnapshot {
    std::int64_t schema_version = kSchemaVersion;
    std::map<std::string, Instance> instances;
    std::map<std::string, LabeledPair> pairs;
    LoopState loop_state;
    std::vector<AuditEntry> audit;
    std::map<std::string, DistillationCandidate> candidates;
    std::vector<VerificationItem> verification;
    std::vector<FailureRecord> failures;
    std::set<std::string> held_out;
    std::int64_t logical_time = 0;

    bool operator==(const PoolSnapshot&) const = default;
};

inline nlohmann::json snapshot_to_json(const PoolSnapshot& s) {
    nlohmann::json instances = nlohmann::json::array();
    for (const auto& [_, x] : s.instances) instances.push_back(x);
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& [_, p] : s.pairs) pairs.push_back(p);
    nlohmann::json candidates = nlohmann::json::array();
    for (const auto& [_, c] : s.candidates) candidates.push_back(c);
    return nlohmann::json{{"schema_version", s.schema_version},
                          {"instances", std::move(instances)},
                          {"pairs", std::move(pairs)},
                          {"loop_state", s.loop_state},
                          {"audit", s.audit},
                          {"candidates", std::move(candidates)},
                          {"verification", s.verification},
                          {"failures", s.failures},
                          {"held_out", s.held_out},
                          {"logical_time", s.logical_time}};
}

inline PoolSnapshot snapshot_from_json(const nlohmann::json& j) {
    if (!j.contains("schema_version")) throw StateError("snapshot is missing schema_version");
    PoolSnapshot s;
    j.at("schema_version").get_to(s.schema_version);
    if (s.schema_version != kSchemaVersion) {
        throw StateError("unsupported snapshot schema_version " + std::to_string(s.schema_version));
    }
    for (const auto& x : j.at("instances")) {
        auto inst = x.get<Instance>();
        s.instances.emplace(inst.id, std::move(inst));
    }
    for (const auto& x : j.at("pairs")) {
        auto pair = x.get<LabeledPair>();
        s.pairs.emplace(pair.instance_id, std::move(pair));
    }
    j.at("loop_state").get_to(s.loop_state);
    j.at("audit").get_to(s.audit);
    for (const auto& x : j.at("candidates")) {
        auto c = x.get<DistillationCandidate>();
        s.candidates.emplace(c.instance_id, std::move(c));
    }
    j.at("verification").get_to(s.verification);
    j.at("failures").get_to(s.failures);
    j.at("held_out").get_to(s.held_out);
    j.at("logical_time").get_to(s.logical_time);
    return s;
}

inline std::string serialize_snapshot(const PoolSnapshot& s) { return snapshot_to_json(s).dump() + "\n"; }

inline PoolSnapshot parse_snapshot(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw StateError(std::string("corrupt snapshot: ") + e.what());
    }
    try {
        return snapshot_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw StateError(std::string("invalid snapshot: ") + e.what());
    } catch (const InvalidInput& e) {
        throw StateError(std::string("invalid snapshot: ") + e.what());
    }
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Writes through a temporary file and renames, so a crash never leaves a
// truncated file behind.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw StateError("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw StateError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

// ---- store ------------------------------------------------------------------

// Single-writer owner of a PoolSnapshot. Every public member locks the
// store; transaction() holds the lock across a compound update.
class PoolStore {
public:
    using ClockFn = std::function<std::int64_t()>;

    PoolStore() = default;
    explicit PoolStore(PoolSnapshot snapshot) : s_(std::move(snapshot)) {}

    PoolStore(const PoolStore&) = delete;
    PoolStore& operator=(const PoolStore&) = delete;

    static PoolStore load(const std::filesystem::path& path) { return PoolStore(parse_snapshot(read_file(path))); }

    // Timestamps become a persisted counter, making snapshots reproducible.
    void use_logical_clock() {
        std::lock_guard lock(mutex_);
        logical_ = true;
    }

    template <typename Fn>
    decltype(auto) transaction(Fn&& fn) {
        std::lock_guard lock(mutex_);
        return fn(*this);
    }

    std::int64_t now() {
        std::lock_guard lock(mutex_);
        if (logical_) return ++s_.logical_time;
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::system_clock::now().time_since_epoch())
            .count();
    }

    // ---- ingestion

    std::size_t ingest(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw InvalidInput("cannot open pool file " + path.string());
        return ingest(in);
    }

    // One JSON object per line: {"id"?, "text", "subgroup"?}. Either every
    // line is ingested or none is.
    std::size_t ingest(std::istream& in) {
        std::lock_guard lock(mutex_);
        std::vector<Instance> staged;
        std::set<std::string> seen;
        std::string line;
        std::size_t index = 0;
        for (; std::getline(in, line); ++index) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.find_first_not_of(" \t") == std::string::npos) continue;
            const std::size_t line_no = index + 1;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception&) {
                throw InvalidInput("malformed JSON at line " + std::to_string(line_no));
            }
            if (!j.is_object()) throw InvalidInput("line " + std::to_string(line_no) + " is not a JSON object");
            if (!j.contains("text") || !j["text"].is_string() || j["text"].get<std::string>().empty()) {
                throw InvalidInput("missing or empty \"text\" at line " + std::to_string(line_no));
            }
            Instance inst;
            inst.source_text = j["text"].get<std::string>();
            if (j.contains("id") && !j["id"].is_null()) {
                if (!j["id"].is_string()) throw InvalidInput("non-string \"id\" at line " + std::to_string(line_no));
                inst.id = j["id"].get<std::string>();
            } else {
                inst.id = zero_padded(index);
            }
            if (j.contains("subgroup") && !j["subgroup"].is_null()) {
                if (!j["subgroup"].is_string()) {
                    throw InvalidInput("non-string \"subgroup\" at line " + std::to_string(line_no));
                }
                inst.subgroup = j["subgroup"].get<std::string>();
            }
            if (s_.instances.contains(inst.id) || !seen.insert(inst.id).second) {
                throw InvalidInput("duplicate id " + inst.id + " at line " + std::to_string(line_no));
            }
            staged.push_back(std::move(inst));
        }
        for (auto& inst : staged) s_.instances.emplace(inst.id, std::move(inst));
        return staged.size();
    }

    void add_instance(Instance inst) {
        std::lock_guard lock(mutex_);
        if (inst.id.empty()) throw InvalidInput("instance id must be non-empty");
        if (inst.source_text.empty()) throw InvalidInput("instance " + inst.id + " has empty text");
        if (inst.state != InstanceState::unlabeled) throw InvalidInput("new instances start unlabeled");
        if (inst.embedding) check_unit(*inst.embedding, inst.id);
        if (inst.cluster_id && !inst.embedding) throw InvalidInput("cluster id without embedding on " + inst.id);
        if (!s_.instances.emplace(inst.id, inst).second) throw InvalidInput("duplicate id " + inst.id);
    }

    // ---- lookup

    std::size_t size() const {
        std::lock_guard lock(mutex_);
        return s_.instances.size();
    }

    Instance instance(const std::string& id) const {
        std::lock_guard lock(mutex_);
        return find(id);
    }

    bool contains(const std::string& id) const {
        std::lock_guard lock(mutex_);
        return s_.instances.contains(id);
    }

    std::vector<Instance> instances() const {
        std::lock_guard lock(mutex_);
        std::vector<Instance> out;
        out.reserve(s_.instances.size());
        for (const auto& [_, x] : s_.instances) out.push_back(x);
        return out;
    }

    std::vector<std::string> ids_in_state(InstanceState state) const {
        std::lock_guard lock(mutex_);
        std::vector<std::string> out;
        for (const auto& [id, x] : s_.instances) {
            if (x.state == state) out.push_back(id);
        }
        return out;
    }

    // Unlabeled instances outside the held-out test set, ascending id.
    std::vector<std::string> eligible_ids() const {
        std::lock_guard lock(mutex_);
        std::vector<std::string> out;
        for (const auto& [id, x] : s_.instances) {
            if (x.state == InstanceState::unlabeled && !s_.held_out.contains(id)) out.push_back(id);
        }
        return out;
    }

    std::map<InstanceState, std::size_t> counts() const {
        std::lock_guard lock(mutex_);
        std::map<InstanceState, std::size_t> out;
        for (std::size_t i = 0; i < detail::state_names.size(); ++i) out[static_cast<InstanceState>(i)] = 0;
        for (const auto& [_, x] : s_.instances) ++out[x.state];
        return out;
    }

    // ---- mutation

    Instance transition(const std::string& id, InstanceState to) {
        std::lock_guard lock(mutex_);
        Instance& inst = find_mut(id);
        if (!transition_allowed(inst.state, to)) {
            throw StateError("illegal transition for " + id + ": " + std::string(to_string(inst.state)) + " -> " +
                             std::string(to_string(to)));
        }
        AuditEntry entry{static_cast<std::int64_t>(s_.audit.size()) + 1, id, inst.state, to,
                         s_.loop_state.iteration, now()};
        inst.state = to;
        s_.audit.push_back(std::move(entry));
        return inst;
    }

    void set_embedding(const std::string& id, Vector v) {
        std::lock_guard lock(mutex_);
        check_unit(v, id);
        find_mut(id).embedding = std::move(v);
    }

    void set_cluster(const std::string& id, std::int64_t cluster) {
        std::lock_guard lock(mutex_);
        Instance& inst = find_mut(id);
        if (!inst.embedding) throw StateError("cannot assign a cluster to " + id + " without an embedding");
        if (cluster < 0) throw InvalidInput("cluster id must be non-negative");
        inst.cluster_id = cluster;
    }

    void add_pair(LabeledPair pair) {
        std::lock_guard lock(mutex_);
        const Instance& inst = find(pair.instance_id);
        if (inst.state != InstanceState::labeled) {
            throw StateError("pair for " + pair.instance_id + " requires state labeled, found " +
                             std::string(to_string(inst.state)));
        }
        if (pair.target_text.empty()) throw InvalidInput("empty target for " + pair.instance_id);
        if (!s_.pairs.emplace(pair.instance_id, pair).second) {
            throw StateError("instance " + pair.instance_id + " already has a labeled pair");
        }
    }

    std::vector<LabeledPair> pairs() const {
        std::lock_guard lock(mutex_);
        std::vector<LabeledPair> out;
        for (const auto& [_, p] : s_.pairs) out.push_back(p);
        return out;
    }

    std::size_t pair_count() const {
        std::lock_guard lock(mutex_);
        return s_.pairs.size();
    }

    void put_candidate(DistillationCandidate c) {
        std::lock_guard lock(mutex_);
        if (c.candidate_text.empty()) throw InvalidInput("empty candidate for " + c.instance_id);
        find(c.instance_id);
        if (!s_.candidates.emplace(c.instance_id, c).second) {
            throw StateError("instance " + c.instance_id + " already holds a live candidate");
        }
    }

    std::optional<DistillationCandidate> candidate(const std::string& id) const {
        std::lock_guard lock(mutex_);
        auto it = s_.candidates.find(id);
        if (it == s_.candidates.end()) return std::nullopt;
        return it->second;
    }

    void drop_candidate(const std::string& id) {
        std::lock_guard lock(mutex_);
        s_.candidates.erase(id);
    }

    // Raw access for the verification queue; call inside transaction().
    std::vector<VerificationItem>& verification_items() { return s_.verification; }
    const std::vector<VerificationItem>& verification_items() const { return s_.verification; }

    void record_failure(FailureRecord f) {
        std::lock_guard lock(mutex_);
        s_.failures.push_back(std::move(f));
    }

    std::vector<FailureRecord> failures() const {
        std::lock_guard lock(mutex_);
        return s_.failures;
    }

    void set_held_out(const std::vector<std::string>& ids) {
        std::lock_guard lock(mutex_);
        for (const auto& id : ids) find(id);
        s_.held_out = {ids.begin(), ids.end()};
    }

    std::set<std::string> held_out() const {
        std::lock_guard lock(mutex_);
        return s_.held_out;
    }

    LoopState loop_state() const {
        std::lock_guard lock(mutex_);
        return s_.loop_state;
    }

    void set_loop_state(LoopState state) {
        std::lock_guard lock(mutex_);
        s_.loop_state = std::move(state);
    }

    std::vector<AuditEntry> audit() const {
        std::lock_guard lock(mutex_);
        return s_.audit;
    }

    // ---- export & persistence

    // Writes {"id","input","target","provenance","iteration"} lines sorted by
    // instance id. An empty filter matches every provenance.
    std::size_t export_split(const std::set<Provenance>& filter, const std::filesystem::path& path) const {
        std::lock_guard lock(mutex_);
        std::string out;
        std::size_t count = 0;
        for (const auto& [id, p] : s_.pairs) {
            if (!filter.empty() && !filter.contains(p.provenance)) continue;
            out += pair_line(p).dump();
            out += '\n';
            ++count;
        }
        if (count == 0) log_warning("export_split: no labeled pairs match; wrote empty " + path.string());
        write_file_atomic(path, out);
        return count;
    }

    static nlohmann::ordered_json pair_line(const LabeledPair& p) {
        nlohmann::ordered_json j;
        j["id"] = p.instance_id;
        j["input"] = p.input_text;
        j["target"] = p.target_text;
        j["provenance"] = to_string(p.provenance);
        j["iteration"] = p.iteration;
        return j;
    }

    PoolSnapshot snapshot() const {
        std::lock_guard lock(mutex_);
        return s_;
    }

    std::string serialize() const {
        std::lock_guard lock(mutex_);
        return serialize_snapshot(s_);
    }

    void save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

    // Structural invariants; returns one message per violation.
    std::vector<std::string> check_invariants() const {
        std::lock_guard lock(mutex_);
        std::vector<std::string> problems;
        std::map<std::string, std::vector<const AuditEntry*>> chains;
        for (const auto& a : s_.audit) chains[a.instance_id].push_back(&a);
        for (const auto& [id, x] : s_.instances) {
            if (x.source_text.empty()) problems.push_back(id + ": empty text");
            if (x.cluster_id && !x.embedding) problems.push_back(id + ": cluster without embedding");
            if (x.embedding && std::abs(norm(*x.embedding) - 1.0) > 1e-6) problems.push_back(id + ": non-unit embedding");
            const bool has_pair = s_.pairs.contains(id);
            if (x.state == InstanceState::labeled) {
                if (!has_pair) problems.push_back(id + ": labeled without pair");
                const auto& chain = chains[id];
                static constexpr std::array expected{InstanceState::unlabeled, InstanceState::selected,
                                                     InstanceState::distilled, InstanceState::pending_verification};
                if (chain.size() < expected.size()) {
                    problems.push_back(id + ": incomplete audit chain");
                } else {
                    const std::size_t off = chain.size() - expected.size();
                    for (std::size_t k = 0; k < expected.size(); ++k) {
                        const auto next = k + 1 < expected.size() ? expected[k + 1] : InstanceState::labeled;
                        if (chain[off + k]->from != expected[k] || chain[off + k]->to != next) {
                            problems.push_back(id + ": audit chain out of order");
                            break;
                        }
                    }
                }
            } else if (has_pair) {
                problems.push_back(id + ": pair on non-labeled instance");
            }
            auto it = chains.find(id);
            if (it != chains.end() && !it->second.empty() && it->second.back()->to != x.state) {
                problems.push_back(id + ": audit log disagrees with state");
            }
        }
        return problems;
    }

private:
    static std::string zero_padded(std::size_t index) {
        std::string digits = std::to_string(index);
        if (digits.size() < 6) digits.insert(0, 6 - digits.size(), '0');
        return digits;
    }

    static double norm(const Vector& v) {
        double sum = 0.0;
        for (double x : v) sum += x * x;
        return std::sqrt(sum);
    }

    static void check_unit(const Vector& v, const std::string& id) {
        if (v.empty()) throw InvalidInput("empty embedding for " + id);
        if (std::abs(norm(v) - 1.0) > 1e-6) throw InvalidInput("embedding for " + id + " is not unit-norm");
    }

    const Instance& find(const std::string& id) const {
        auto it = s_.instances.find(id);
        if (it == s_.instances.end()) throw StateError("unknown instance " + id);
        return it->second;
    }

    Instance& find_mut(const std::string& id) {
        auto it = s_.instances.find(id);
        if (it == s_.instances.end()) throw StateError("unknown instance " + id);
        return it->second;
    }

    PoolSnapshot s_;
    bool logical_ = false;
    mutable std::recursive_mutex mutex_;
};

}  // namespace kdal
