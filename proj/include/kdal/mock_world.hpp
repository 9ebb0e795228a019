#pragma once

// Deterministic stand-ins for the four providers plus synthetic skewed
// pools. Every mock answer is a pure function of its request and the
// registered pool, so runs reproduce bit for bit and can be recorded.
//
// Learner model: each group g has a true error rate
//     e_g = clamp(max(floor, base_error - gain_per_label * n_g), 0, 1)
// where n_g counts the training pairs from g. The scorer sees
// e_g * (1 - difficulty_g): difficulty is the share of a group's errors the
// auxiliary scorer fails to notice.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kdal/distill.hpp"
#include "kdal/error.hpp"
#include "kdal/metrics.hpp"
#include "kdal/pool_store.hpp"
#include "kdal/providers.hpp"
#include "kdal/random.hpp"

namespace kdal {

struct GroupSpec {
    std::string name;
    double proportion = 0.0;
    double difficulty = 0.0;

    bool operator==(const GroupSpec&) const = default;
};

struct LearnerModel {
    double base_error = 0.4;
    double gain_per_label = 0.02;
    double floor = 0.1;

    double error(std::int64_t labeled) const {
        return std::clamp(std::max(floor, base_error - gain_per_label * static_cast<double>(labeled)), 0.0, 1.0);
    }
    double p_adhere(std::int64_t labeled) const { return 1.0 - error(labeled); }

    bool operator==(const LearnerModel&) const = default;
};

struct SyntheticPoolSpec {
    std::vector<GroupSpec> groups;
    std::int64_t total = 2000;
    std::uint64_t seed = 0;
    LearnerModel learner;
    LearnerModel transfer_learner{0.5, 0.015, 0.05};
    std::int64_t test_per_group = 40;
    double scorer_noise = 0.02;
    std::size_t embed_dim = 16;
    double embed_noise = 0.05;
    double rejection_rate = 0.0;

    bool operator==(const SyntheticPoolSpec&) const = default;

    // Ten groups skewed down to 1%, the three rarest partly invisible to
    // the scorer.
    static SyntheticPoolSpec skewed_default() {
        SyntheticPoolSpec s;
        const double props[] = {0.30, 0.20, 0.15, 0.10, 0.08, 0.06, 0.05, 0.03, 0.02, 0.01};
        for (int g = 0; g < 10; ++g) s.groups.push_back({"g" + std::to_string(g), props[g], g >= 7 ? 0.5 : 0.0});
        return s;
    }

    void validate() const {
        if (groups.empty()) throw ConfigError("spec needs at least one group");
        double sum = 0.0;
        std::set<std::string> names;
        for (const auto& g : groups) {
            if (g.name.empty() || g.name == "default") throw ConfigError("group names must be non-empty and not \"default\"");
            if (!names.insert(g.name).second) throw ConfigError("duplicate group " + g.name);
            if (!(g.proportion > 0.0 && g.proportion <= 1.0)) throw ConfigError("proportion of " + g.name + " must lie in (0,1]");
            if (!(g.difficulty >= 0.0 && g.difficulty <= 1.0)) throw ConfigError("difficulty of " + g.name + " must lie in [0,1]");
            sum += g.proportion;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("group proportions must sum to 1");
        if (total < 10 * static_cast<std::int64_t>(groups.size())) throw ConfigError("total must be at least 10 per group");
        if (test_per_group < 1) throw ConfigError("test_per_group must be positive");
        if (!(scorer_noise >= 0.0 && scorer_noise <= 0.02)) throw ConfigError("scorer_noise must lie in [0, 0.02]");
        if (embed_dim < 1) throw ConfigError("embed_dim must be positive");
        if (!(embed_noise >= 0.0 && embed_noise < 1.0)) throw ConfigError("embed_noise must lie in [0,1)");
        if (!(rejection_rate >= 0.0 && rejection_rate < 1.0)) throw ConfigError("rejection_rate must lie in [0,1)");
        for (const auto* m : {&learner, &transfer_learner}) {
            if (!(m->floor >= 0.0 && m->floor <= 1.0 && m->base_error >= 0.0 && m->gain_per_label >= 0.0)) {
                throw ConfigError("learner constants out of range");
            }
        }
    }
};

inline void to_json(nlohmann::json& j, const LearnerModel& m) {
    j = {{"base_error", m.base_error}, {"gain_per_label", m.gain_per_label}, {"floor", m.floor}};
}

inline void from_json(const nlohmann::json& j, LearnerModel& m) {
    m.base_error = j.value("base_error", m.base_error);
    m.gain_per_label = j.value("gain_per_label", m.gain_per_label);
    m.floor = j.value("floor", m.floor);
}

inline void to_json(nlohmann::json& j, const SyntheticPoolSpec& s) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : s.groups) {
        groups.push_back({{"name", g.name}, {"proportion", g.proportion}, {"difficulty", g.difficulty}});
    }
    j = {{"groups", groups},
         {"total", s.total},
         {"seed", s.seed},
         {"learner", s.learner},
         {"transfer_learner", s.transfer_learner},
         {"test_per_group", s.test_per_group},
         {"scorer_noise", s.scorer_noise},
         {"embed_dim", s.embed_dim},
         {"embed_noise", s.embed_noise},
         {"rejection_rate", s.rejection_rate}};
}

inline SyntheticPoolSpec spec_from_json(const nlohmann::json& j) {
    SyntheticPoolSpec s;
    try {
        // absent groups mean the default skewed world
        if (!j.contains("groups")) s.groups = SyntheticPoolSpec::skewed_default().groups;
        for (const auto& g : j.value("groups", nlohmann::json::array())) {
            s.groups.push_back({g.at("name").get<std::string>(), g.at("proportion").get<double>(),
                                g.value("difficulty", 0.0)});
        }
        s.total = j.value("total", s.total);
        s.seed = j.value("seed", s.seed);
        if (j.contains("learner")) s.learner = j["learner"].get<LearnerModel>();
        if (j.contains("transfer_learner")) s.transfer_learner = j["transfer_learner"].get<LearnerModel>();
        s.test_per_group = j.value("test_per_group", s.test_per_group);
        s.scorer_noise = j.value("scorer_noise", s.scorer_noise);
        s.embed_dim = j.value("embed_dim", s.embed_dim);
        s.embed_noise = j.value("embed_noise", s.embed_noise);
        s.rejection_rate = j.value("rejection_rate", s.rejection_rate);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad simulation spec: ") + e.what());
    }
    s.validate();
    return s;
}

// Largest-remainder apportionment: floor shares first, then one extra unit
// to the largest fractional remainders (lowest index on ties).
inline std::vector<std::int64_t> apportion(const std::vector<double>& proportions, std::int64_t total) {
    std::vector<std::int64_t> out(proportions.size());
    std::vector<std::pair<double, std::size_t>> rem;
    std::int64_t used = 0;
    for (std::size_t i = 0; i < proportions.size(); ++i) {
        const double exact = proportions[i] * static_cast<double>(total);
        out[i] = static_cast<std::int64_t>(std::floor(exact + 1e-9));
        used += out[i];
        rem.emplace_back(exact - static_cast<double>(out[i]), i);
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; used < total && r < rem.size(); ++r, ++used) ++out[rem[r].second];
    return out;
}

struct SyntheticItem {
    std::string id;
    std::string text;
    std::string group;
};

namespace detail {
inline std::string hex8(std::uint64_t v) {
    std::ostringstream o;
    o << std::hex << std::setw(8) << std::setfill('0') << (v & 0xffffffffULL);
    return o.str();
}

inline std::string pad6(std::int64_t i) {
    std::ostringstream o;
    o << std::setw(6) << std::setfill('0') << i;
    return o.str();
}
}  // namespace detail

// Training pool: group labels shuffled by the spec seed.
inline std::vector<SyntheticItem> gen_pool(const SyntheticPoolSpec& spec) {
    spec.validate();
    std::vector<double> props;
    for (const auto& g : spec.groups) props.push_back(g.proportion);
    const auto counts = apportion(props, spec.total);
    std::vector<std::size_t> label;
    for (std::size_t g = 0; g < counts.size(); ++g) label.insert(label.end(), static_cast<std::size_t>(counts[g]), g);
    Rng rng(derive_seed(spec.seed, "pool-groups"));
    rng.shuffle(label);
    std::vector<SyntheticItem> out;
    for (std::size_t i = 0; i < label.size(); ++i) {
        const auto& g = spec.groups[label[i]].name;
        const auto id = detail::pad6(static_cast<std::int64_t>(i));
        out.push_back({id, "remark " + id + " about " + g + " #" + detail::hex8(mix64(derive_seed(spec.seed, id))), g});
    }
    return out;
}

// Held-out evaluation set, balanced across groups.
inline std::vector<SyntheticItem> gen_test_set(const SyntheticPoolSpec& spec) {
    spec.validate();
    std::vector<SyntheticItem> out;
    for (const auto& g : spec.groups) {
        for (std::int64_t j = 0; j < spec.test_per_group; ++j) {
            const auto id = "t-" + g.name + "-" + detail::pad6(j);
            out.push_back({id, "probe " + id + " about " + g.name, g.name});
        }
    }
    return out;
}

inline void add_to_pool(PoolStore& pool, const std::vector<SyntheticItem>& items) {
    for (const auto& it : items) pool.add_instance({it.id, it.text, it.group, {}, {}, {}});
}

// Shared state behind the mock providers: which group each text belongs
// to and which per-group label counts each learner revision was trained on.
class MockWorld {
public:
    explicit MockWorld(SyntheticPoolSpec spec) : spec_(std::move(spec)) {
        for (std::size_t g = 0; g < spec_.groups.size(); ++g) index_[spec_.groups[g].name] = g;
        revisions_["base"] = {spec_.learner, {}};
    }

    const SyntheticPoolSpec& spec() const { return spec_; }

    void register_text(const std::string& text, const std::string& group) {
        std::lock_guard lock(mutex_);
        ensure_group(group);
        text_group_[text] = group;
    }

    void register_items(const std::vector<SyntheticItem>& items) {
        for (const auto& it : items) register_text(it.text, it.group);
    }

    // Instances without a subgroup land in "default".
    void register_pool(const PoolStore& pool) {
        for (const auto& inst : pool.instances()) register_text(inst.source_text, inst.subgroup.value_or("default"));
    }

    std::string group_of(const std::string& text) const {
        std::lock_guard lock(mutex_);
        auto it = text_group_.find(text);
        return it == text_group_.end() ? "default" : it->second;
    }

    std::size_t group_index(const std::string& group) {
        std::lock_guard lock(mutex_);
        return ensure_group(group);
    }

    double difficulty(const std::string& group) const {
        for (const auto& g : spec_.groups) {
            if (g.name == group) return g.difficulty;
        }
        return 0.0;
    }

    void register_revision(const std::string& rev, const LearnerModel& model,
                           std::map<std::string, std::int64_t> counts) {
        std::lock_guard lock(mutex_);
        revisions_[rev] = {model, std::move(counts)};
    }

    // True error of a revision on a group.
    double true_error(const std::string& revision, const std::string& group) const {
        std::lock_guard lock(mutex_);
        auto it = revisions_.find(revision);
        if (it == revisions_.end()) throw ProviderError("unknown learner revision " + revision);
        auto c = it->second.counts.find(group);
        return it->second.model.error(c == it->second.counts.end() ? 0 : c->second);
    }

    std::map<std::string, std::int64_t> counts(const std::string& revision) const {
        std::lock_guard lock(mutex_);
        auto it = revisions_.find(revision);
        if (it == revisions_.end()) throw ProviderError("unknown learner revision " + revision);
        return it->second.counts;
    }

    bool has_revision(const std::string& revision) const {
        std::lock_guard lock(mutex_);
        return revisions_.contains(revision);
    }

    Vector embedding(const std::string& text) {
        const auto g = group_index(group_of(text));
        Vector v(spec_.embed_dim, 0.0);
        v[g % spec_.embed_dim] = 1.0;
        const auto h = fnv1a(text);
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] += spec_.embed_noise * (2.0 * unit_from_bits(mix64(h + 0x9e37 * (i + 1))) - 1.0);
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        for (double& x : v) x /= norm;
        return v;
    }

private:
    struct Revision {
        LearnerModel model;
        std::map<std::string, std::int64_t> counts;
    };

    std::size_t ensure_group(const std::string& group) {
        auto [it, added] = index_.emplace(group, index_.size());
        return it->second;
    }

    SyntheticPoolSpec spec_;
    std::map<std::string, std::size_t> index_;
    std::map<std::string, std::string> text_group_;
    std::map<std::string, Revision> revisions_;
    mutable std::mutex mutex_;
};

// Logits whose softmax puts probability p on index 0.
inline std::vector<double> logits_for(double p) {
    p = std::clamp(p, 1e-9, 1.0 - 1e-9);
    return {std::log(p / (1.0 - p)), 0.0};
}

class MockLearner : public LearnerProvider {
public:
    MockLearner(MockWorld& world, LearnerModel model, std::string prefix = "m")
        : world_(world), model_(model), prefix_(std::move(prefix)) {}

    // Output carries the revision so the scorer can judge it.
    std::string generate(const GenerationRequest& r) override {
        const auto rev = r.revision.empty() ? std::string("base") : r.revision;
        if (!world_.has_revision(rev)) throw ProviderError("unknown learner revision " + rev);
        return "[" + rev + "] reply to: " + r.input;
    }

    std::string finetune(const FinetuneRequest& r) override {
        std::map<std::string, std::int64_t> counts;
        std::uint64_t h = fnv1a(r.base_revision + "|" + prefix_ + "|" + std::to_string(r.epochs));
        for (const auto& ex : r.examples) {
            ++counts[world_.group_of(ex.input)];
            h = mix64(h ^ fnv1a(ex.input) ^ (fnv1a(ex.target) << 1));
        }
        const auto rev = prefix_ + "-" + detail::hex8(h) + detail::hex8(mix64(h));
        world_.register_revision(rev, model_, std::move(counts));
        return rev;
    }

private:
    MockWorld& world_;
    LearnerModel model_;
    std::string prefix_;
};

class MockScorer : public ScorerProvider {
public:
    explicit MockScorer(MockWorld& world) : world_(world) {}

    std::vector<double> score(const std::string& input, const std::string& output) override {
        if (output.size() < 2 || output[0] != '[') throw ProviderError("scorer cannot parse learner output");
        const auto close = output.find(']');
        if (close == std::string::npos) throw ProviderError("scorer cannot parse learner output");
        const auto rev = output.substr(1, close - 1);
        const auto group = world_.group_of(input);
        const double e = world_.true_error(rev, group);
        double p = 1.0 - e * (1.0 - world_.difficulty(group));
        const double noise = world_.spec().scorer_noise;
        p += noise * (2.0 * unit_from_bits(mix64(fnv1a(output))) - 1.0);
        return logits_for(p);
    }

private:
    MockWorld& world_;
};

class MockEmbedder : public EmbeddingProvider {
public:
    explicit MockEmbedder(MockWorld& world) : world_(world) {}

    std::vector<Vector> embed(const std::vector<std::string>& texts) override {
        std::vector<Vector> out;
        out.reserve(texts.size());
        for (const auto& t : texts) out.push_back(world_.embedding(t));
        return out;
    }

private:
    MockWorld& world_;
};

// Answers "COUNTER(<input>)", recovering the input by stripping the known
// template around it.
class MockTeacher : public TeacherProvider {
public:
    explicit MockTeacher(Template tmpl, std::string model = "mock-teacher")
        : model_(std::move(model)), empty_(tmpl.render("")), head_(head_of(tmpl)) {}

    ChatResponse chat(const ChatRequest& r) override {
        if (r.messages.empty()) throw ProviderError("empty chat request");
        const auto& prompt = r.messages.back().content;
        std::string input = prompt;
        if (prompt.size() >= empty_.size() && prompt.compare(0, head_.size(), head_) == 0) {
            input = prompt.substr(head_.size(), prompt.size() - empty_.size());
        }
        const auto prompt_tokens = static_cast<std::int64_t>(tokenize(prompt).size());
        std::string content = "COUNTER(" + input + ")";
        return {content, model_, prompt_tokens, static_cast<std::int64_t>(tokenize(content).size())};
    }

private:
    static std::string head_of(const Template& t) {
        // render(x) = head + x + tail; find head by rendering a marker
        const std::string marker = "\x01";
        const auto r = t.render(marker);
        return r.substr(0, r.find(marker));
    }

    std::string model_;
    std::string empty_;
    std::string head_;
};

// Deterministic stand-in for human judges: within each group the first
// round(e_g * n_g) items (by id) are judged wrong, so the measured error
// ratio tracks the true error up to 1/n_g.
inline std::vector<Judgment> judge_stratified(const MockWorld& world, const std::vector<SyntheticItem>& items,
                                              const std::string& revision) {
    std::map<std::string, std::vector<const SyntheticItem*>> by_group;
    for (const auto& it : items) by_group[it.group].push_back(&it);
    std::vector<Judgment> out;
    for (auto& [g, members] : by_group) {
        std::sort(members.begin(), members.end(), [](auto* a, auto* b) { return a->id < b->id; });
        const double e = world.true_error(revision, g);
        const auto n = static_cast<double>(members.size());
        for (std::size_t j = 0; j < members.size(); ++j) {
            const bool wrong = (static_cast<double>(j) + 0.5) / n < e;
            out.push_back({members[j]->id, g, !wrong});
        }
    }
    return out;
}

}  // namespace kdal
