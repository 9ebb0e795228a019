#pragma once

// Informativeness of unlabeled instances and the three acquisition
// strategies built on it.
//
// The learner's interim output G(x) is judged by an auxiliary scorer whose
// final linear layer yields logits over attribute adherence. With
// p_adhere = softmax(logits)[adhere_index], the informativeness of an
// instance is 1 - p_adhere: the probability mass the scorer puts on the
// learner violating the regulated attribute. Entropy is kept as the
// classification-style baseline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kdal/embed_cluster.hpp"
#include "kdal/error.hpp"
#include "kdal/parallel.hpp"
#include "kdal/pool_store.hpp"
#include "kdal/providers.hpp"
#include "kdal/random.hpp"

namespace kdal {

// Shannon entropy in nats; 0 ln 0 is taken as 0.
inline double entropy(std::span<const double> dist) {
    if (dist.empty()) throw InvalidInput("entropy of an empty distribution");
    double sum = 0.0;
    double h = 0.0;
    for (double p : dist) {
        if (!(p >= 0.0) || !std::isfinite(p)) throw InvalidInput("probability components must be finite and non-negative");
        sum += p;
        if (p > 0.0) h -= p * std::log(p);
    }
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidInput("probabilities must sum to 1");
    return h;
}

inline std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw InvalidInput("softmax of an empty vector");
    double hi = -std::numeric_limits<double>::infinity();
    for (double z : logits) {
        if (!std::isfinite(z)) throw InvalidInput("non-finite logit");
        hi = std::max(hi, z);
    }
    std::vector<double> out(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - hi);
        total += out[i];
    }
    for (double& p : out) p /= total;
    return out;
}

struct RegulatedAttribute {
    std::string name = "inoffensiveness";
    std::size_t adhere_index = 0;
    std::string description;
};

struct AttributeScore {
    std::string instance_id;
    std::string generated_text;
    std::vector<double> logits;
    double p_adhere = 0.0;
    double informativeness = 0.0;

    bool operator==(const AttributeScore&) const = default;
};

inline AttributeScore make_attribute_score(std::string instance_id, std::string generated, std::vector<double> logits,
                                           const RegulatedAttribute& attr) {
    if (attr.adhere_index >= logits.size()) {
        throw ConfigError("adhere_index " + std::to_string(attr.adhere_index) + " out of range for scorer arity " +
                          std::to_string(logits.size()));
    }
    const auto probs = softmax(logits);
    AttributeScore s{std::move(instance_id), std::move(generated), std::move(logits), probs[attr.adhere_index], 0.0};
    s.informativeness = std::clamp(1.0 - s.p_adhere, 0.0, 1.0);
    return s;
}

// Scores within one learner revision; keyed by (instance id, revision).
class ScoreCache {
public:
    std::optional<AttributeScore> get(const std::string& id, const std::string& revision) const {
        std::lock_guard lock(mutex_);
        auto it = entries_.find({id, revision});
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    void put(const std::string& revision, const AttributeScore& score) {
        std::lock_guard lock(mutex_);
        entries_[{score.instance_id, revision}] = score;
    }

    std::size_t size() const {
        std::lock_guard lock(mutex_);
        return entries_.size();
    }

private:
    std::map<std::pair<std::string, std::string>, AttributeScore> entries_;
    mutable std::mutex mutex_;
};

struct ScoringOptions {
    std::int64_t max_tokens = 128;
    double temperature = 0.0;
    RetryPolicy retry;
    std::size_t concurrency = 4;
    double rate_limit_per_sec = 0.0;
};

inline AttributeScore score_instance(const Instance& inst, LearnerProvider& learner, ScorerProvider& scorer,
                                     const RegulatedAttribute& attr, const ScoringOptions& opts = {},
                                     ScoreCache* cache = nullptr, const std::string& revision = {}) {
    if (inst.state != InstanceState::unlabeled) {
        throw StateError("cannot score " + inst.id + " in state " + std::string(to_string(inst.state)));
    }
    if (cache) {
        if (auto hit = cache->get(inst.id, revision)) return *hit;
    }
    const auto generated = with_retry(opts.retry, [&] {
        return learner.generate({inst.source_text, opts.max_tokens, opts.temperature, revision});
    });
    auto logits = with_retry(opts.retry, [&] {
        auto z = scorer.score(inst.source_text, generated);
        for (double v : z) {
            if (!std::isfinite(v)) throw ProviderError("scorer returned a non-finite logit");
        }
        return z;
    });
    auto s = make_attribute_score(inst.id, generated, std::move(logits), attr);
    if (cache) cache->put(revision, s);
    return s;
}

struct ScoringPass {
    std::vector<AttributeScore> scores;  // ascending instance id
    std::vector<FailureRecord> failures;
};

// Scores the given instances with bounded parallelism. Provider failures
// are recorded in the pool as scoring_failure and the instance is skipped.
inline ScoringPass score_instances(PoolStore& pool, const std::vector<std::string>& ids, LearnerProvider& learner,
                                   ScorerProvider& scorer, const RegulatedAttribute& attr, const ScoringOptions& opts,
                                   ScoreCache* cache, const std::string& revision,
                                   std::optional<std::int64_t> iteration = std::nullopt) {
    std::vector<std::optional<AttributeScore>> results(ids.size());
    std::vector<std::string> errors(ids.size());
    TokenBucket bucket(opts.rate_limit_per_sec, static_cast<double>(opts.concurrency));
    parallel_for(ids.size(), opts.concurrency, [&](std::size_t i) {
        const auto inst = pool.instance(ids[i]);
        try {
            bucket.acquire();
            results[i] = score_instance(inst, learner, scorer, attr, opts, cache, revision);
        } catch (const ProviderError& e) {
            errors[i] = e.what();
        }
    });
    ScoringPass pass;
    const auto stamp = iteration.value_or(pool.loop_state().iteration);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (results[i]) {
            pass.scores.push_back(std::move(*results[i]));
        } else {
            FailureRecord f{ids[i], stamp, FailureKind::scoring_failure, errors[i]};
            pool.record_failure(f);
            pass.failures.push_back(std::move(f));
        }
    }
    std::sort(pass.scores.begin(), pass.scores.end(),
              [](const auto& a, const auto& b) { return a.instance_id < b.instance_id; });
    return pass;
}

// ---- selection --------------------------------------------------------------

struct SelectionResult {
    Strategy strategy = Strategy::random;
    std::vector<std::string> chosen;
    std::optional<std::map<std::size_t, std::size_t>> per_cluster_quota;
    std::uint64_t seed = 0;
};

// Uniform sample without replacement (partial Fisher-Yates over the ids in
// ascending order).
inline SelectionResult select_random(std::vector<std::string> eligible, std::size_t n, std::uint64_t seed) {
    if (n > eligible.size()) {
        throw InvalidInput("cannot sample " + std::to_string(n) + " from " + std::to_string(eligible.size()) +
                           " unlabeled instances");
    }
    std::sort(eligible.begin(), eligible.end());
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const auto j = i + rng.below(eligible.size() - i);
        std::swap(eligible[i], eligible[j]);
    }
    eligible.resize(n);
    return {Strategy::random, std::move(eligible), std::nullopt, seed};
}

inline SelectionResult select_random(const PoolStore& pool, std::size_t n, std::uint64_t seed) {
    return select_random(pool.eligible_ids(), n, seed);
}

namespace detail {
inline bool more_informative(const AttributeScore& a, const AttributeScore& b) {
    if (a.informativeness != b.informativeness) return a.informativeness > b.informativeness;
    return a.instance_id < b.instance_id;
}

inline void check_unique(const std::vector<AttributeScore>& scores) {
    std::set<std::string> seen;
    for (const auto& s : scores) {
        if (!seen.insert(s.instance_id).second) throw InvalidInput("duplicate score for " + s.instance_id);
    }
}
}  // namespace detail

// The n highest informativeness values; ties by ascending id.
inline SelectionResult select_topn(std::vector<AttributeScore> scores, std::size_t n) {
    if (n > scores.size()) {
        throw InvalidInput("cannot select " + std::to_string(n) + " of " + std::to_string(scores.size()) + " scores");
    }
    detail::check_unique(scores);
    std::sort(scores.begin(), scores.end(), detail::more_informative);
    SelectionResult r{Strategy::topn, {}, std::nullopt, 0};
    for (std::size_t i = 0; i < n; ++i) r.chosen.push_back(scores[i].instance_id);
    return r;
}

// Per-cluster top-quota. Every cluster starts with floor(n/k); leftover
// slots (the n mod k remainder plus any quota a small cluster cannot fill)
// are handed out one per cluster per round, to clusters with the most
// unselected candidates first, lowest index on ties.
inline SelectionResult select_cluster(const std::vector<AttributeScore>& scores,
                                      const std::map<std::string, std::size_t>& assignments, std::size_t k,
                                      std::size_t n) {
    if (n < 1) throw InvalidInput("cluster selection needs n >= 1");
    if (k < 1) throw InvalidInput("cluster selection needs k >= 1");
    detail::check_unique(scores);
    std::vector<std::vector<const AttributeScore*>> members(k);
    for (const auto& s : scores) {
        auto it = assignments.find(s.instance_id);
        if (it == assignments.end()) throw InvalidInput("instance " + s.instance_id + " has no cluster assignment");
        if (it->second >= k) throw InvalidInput("cluster index out of range for " + s.instance_id);
        members[it->second].push_back(&s);
    }
    for (auto& m : members) {
        std::sort(m.begin(), m.end(), [](auto* a, auto* b) { return detail::more_informative(*a, *b); });
    }

    const std::size_t target = std::min(n, scores.size());
    std::vector<std::size_t> quota(k);
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < k; ++c) {
        quota[c] = std::min(n / k, members[c].size());
        assigned += quota[c];
    }
    while (assigned < target) {
        std::vector<std::size_t> open;
        for (std::size_t c = 0; c < k; ++c) {
            if (members[c].size() > quota[c]) open.push_back(c);
        }
        std::stable_sort(open.begin(), open.end(), [&](auto a, auto b) {
            return members[a].size() - quota[a] > members[b].size() - quota[b];
        });
        for (std::size_t c : open) {
            if (assigned == target) break;
            ++quota[c];
            ++assigned;
        }
    }

    SelectionResult r{Strategy::cluster, {}, std::map<std::size_t, std::size_t>{}, 0};
    for (std::size_t c = 0; c < k; ++c) {
        (*r.per_cluster_quota)[c] = quota[c];
        for (std::size_t i = 0; i < quota[c]; ++i) r.chosen.push_back(members[c][i]->instance_id);
    }
    return r;
}

inline SelectionResult select_cluster(const std::vector<AttributeScore>& scores, const ClusterModel& model,
                                      std::size_t n) {
    return select_cluster(scores, model.assignments, model.k, n);
}

}  // namespace kdal
