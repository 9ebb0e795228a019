#pragma once

// Pool vectorization and k-means partitioning (Lloyd iterations with
// greedy k-means++ seeding).

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "kdal/error.hpp"
#include "kdal/pool_store.hpp"
#include "kdal/providers.hpp"
#include "kdal/random.hpp"

namespace kdal {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sum += d * d;
    }
    return sum;
}

inline Vector normalized(Vector v) {
    double sum = 0.0;
    for (double x : v) {
        if (!std::isfinite(x)) throw InvalidInput("non-finite embedding component");
        sum += x * x;
    }
    if (sum == 0.0) throw InvalidInput("cannot normalize a zero vector");
    const double inv = 1.0 / std::sqrt(sum);
    for (double& x : v) x *= inv;
    return v;
}

// Embeds a batch and returns unit vectors in input order. `expected_dim`
// (0 = unknown) pins the dimension across batches.
inline std::vector<Vector> embed_batch(EmbeddingProvider& provider, const std::vector<std::string>& texts,
                                       const RetryPolicy& retry = {}, std::size_t expected_dim = 0) {
    if (texts.empty()) throw InvalidInput("empty batch");
    auto vectors = with_retry(retry, [&] { return provider.embed(texts); });
    if (vectors.size() != texts.size()) {
        throw ProviderError("embedder returned " + std::to_string(vectors.size()) + " vectors for " +
                            std::to_string(texts.size()) + " texts");
    }
    std::size_t dim = expected_dim;
    for (auto& v : vectors) {
        if (dim == 0) dim = v.size();
        if (v.size() != dim || dim == 0) {
            throw ProviderError("embedding dimension mismatch: expected " + std::to_string(dim) + ", got " +
                                std::to_string(v.size()));
        }
        v = normalized(std::move(v));
    }
    return vectors;
}

struct KMeansOptions {
    std::size_t max_iter = 300;
    double tol = 1e-4;
    // Independent seedings; the lowest-inertia run is kept.
    std::size_t n_init = 10;
};

struct ClusterModel {
    std::size_t k = 0;
    std::vector<Vector> centroids;
    std::vector<std::size_t> labels;                   // per input vector
    std::map<std::string, std::size_t> assignments;  // filled when ids are supplied
    double inertia = 0.0;
    std::uint64_t seed = 0;
    std::size_t iterations_run = 0;
    std::vector<double> inertia_history;  // after each Lloyd step, then the final assignment

    bool operator==(const ClusterModel&) const = default;
};

// Nearest centroid; ties go to the lowest index.
inline std::size_t nearest_centroid(std::span<const double> v, const std::vector<Vector>& centroids) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        const double d = squared_distance(v, centroids[c]);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

inline std::size_t assign(const Vector& v, const ClusterModel& model) {
    if (model.centroids.empty()) throw InvalidInput("cluster model has no centroids");
    if (v.size() != model.centroids.front().size()) {
        throw InvalidInput("dimension mismatch: vector has " + std::to_string(v.size()) + ", centroids have " +
                           std::to_string(model.centroids.front().size()));
    }
    return nearest_centroid(v, model.centroids);
}

inline double compute_inertia(std::span<const Vector> vectors, const std::vector<std::size_t>& labels,
                              const std::vector<Vector>& centroids) {
    double sum = 0.0;
    for (std::size_t i = 0; i < vectors.size(); ++i) sum += squared_distance(vectors[i], centroids[labels[i]]);
    return sum;
}

namespace detail {

struct LloydRun {
    std::vector<Vector> centroids;
    std::vector<std::size_t> labels;
    double inertia = 0.0;
    std::size_t iterations = 0;
    std::vector<double> history;
};

inline std::size_t pick_weighted(const std::vector<double>& weights, double total, Rng& rng) {
    const double r = rng.uniform() * total;
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] <= 0.0) continue;
        acc += weights[i];
        last_positive = i;
        if (acc > r) return i;
    }
    return last_positive;
}

// Greedy k-means++: each new center is the best of several D^2-weighted
// draws, judged by the resulting potential.
inline std::vector<Vector> kmeanspp_init(std::span<const Vector> pts, std::size_t k, Rng& rng) {
    const std::size_t n = pts.size();
    const std::size_t trials = 2 + static_cast<std::size_t>(std::log(static_cast<double>(k)));
    std::vector<Vector> centers;
    centers.push_back(pts[rng.below(n)]);
    std::vector<double> closest(n);
    for (std::size_t i = 0; i < n; ++i) closest[i] = squared_distance(pts[i], centers[0]);
    while (centers.size() < k) {
        const double total = std::accumulate(closest.begin(), closest.end(), 0.0);
        std::size_t best_idx = 0;
        double best_pot = std::numeric_limits<double>::infinity();
        std::vector<double> best_closest;
        for (std::size_t t = 0; t < trials; ++t) {
            const std::size_t cand = pick_weighted(closest, total, rng);
            std::vector<double> next(n);
            double pot = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                next[i] = std::min(closest[i], squared_distance(pts[i], pts[cand]));
                pot += next[i];
            }
            if (pot < best_pot) {
                best_pot = pot;
                best_idx = cand;
                best_closest = std::move(next);
            }
        }
        centers.push_back(pts[best_idx]);
        closest = std::move(best_closest);
    }
    return centers;
}

inline void assign_all(std::span<const Vector> pts, const std::vector<Vector>& centroids,
                       std::vector<std::size_t>& labels) {
    for (std::size_t i = 0; i < pts.size(); ++i) labels[i] = nearest_centroid(pts[i], centroids);
}

// Moves the point farthest from its centroid (in a cluster with more than
// one member) into each empty cluster. Returns true if anything moved.
inline bool repair_empty(std::span<const Vector> pts, std::vector<Vector>& centroids, std::vector<std::size_t>& labels) {
    const std::size_t k = centroids.size();
    bool changed = false;
    for (std::size_t c = 0; c < k; ++c) {
        std::vector<std::size_t> sizes(k, 0);
        for (auto l : labels) ++sizes[l];
        if (sizes[c] != 0) continue;
        std::size_t far = pts.size();
        double far_d = -1.0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (sizes[labels[i]] < 2) continue;
            const double d = squared_distance(pts[i], centroids[labels[i]]);
            if (d > far_d) {
                far_d = d;
                far = i;
            }
        }
        if (far == pts.size()) throw InvalidInput("cannot repair empty cluster");
        labels[far] = c;
        centroids[c] = pts[far];
        changed = true;
    }
    return changed;
}

inline std::vector<Vector> cluster_means(std::span<const Vector> pts, const std::vector<std::size_t>& labels,
                                         const std::vector<Vector>& previous) {
    const std::size_t k = previous.size();
    const std::size_t d = pts.front().size();
    std::vector<Vector> sums(k, Vector(d, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        auto& s = sums[labels[i]];
        for (std::size_t j = 0; j < d; ++j) s[j] += pts[i][j];
        ++counts[labels[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] == 0) {
            sums[c] = previous[c];
            continue;
        }
        for (double& x : sums[c]) x /= static_cast<double>(counts[c]);
    }
    return sums;
}

inline LloydRun lloyd(std::span<const Vector> pts, std::size_t k, Rng& rng, const KMeansOptions& opts) {
    LloydRun run;
    run.centroids = kmeanspp_init(pts, k, rng);
    run.labels.assign(pts.size(), 0);
    for (std::size_t it = 1; it <= std::max<std::size_t>(opts.max_iter, 1); ++it) {
        assign_all(pts, run.centroids, run.labels);
        repair_empty(pts, run.centroids, run.labels);
        auto next = cluster_means(pts, run.labels, run.centroids);
        double shift = 0.0;
        for (std::size_t c = 0; c < k; ++c) shift = std::max(shift, std::sqrt(squared_distance(next[c], run.centroids[c])));
        run.centroids = std::move(next);
        const double inertia = compute_inertia(pts, run.labels, run.centroids);
        assert(run.history.empty() || inertia <= run.history.back() * (1.0 + 1e-12) + 1e-300);
        run.history.push_back(inertia);
        run.iterations = it;
        if (shift < opts.tol) break;
    }
    // Final assignment against the final centroids; repairs are repeated
    // until no cluster is empty.
    assign_all(pts, run.centroids, run.labels);
    for (std::size_t guard = 0; guard <= pts.size() && repair_empty(pts, run.centroids, run.labels); ++guard) {
        assign_all(pts, run.centroids, run.labels);
    }
    run.inertia = compute_inertia(pts, run.labels, run.centroids);
    run.history.push_back(run.inertia);
    return run;
}

}  // namespace detail

// Deterministic for fixed (vectors, k, seed). Points are fitted in
// lexicographic order, so permuting the input leaves the partition and the
// centroids unchanged.
inline ClusterModel kmeans_fit(std::span<const Vector> vectors, std::size_t k, std::uint64_t seed,
                               const KMeansOptions& opts = {}) {
    if (k == 0) throw InvalidInput("k must be at least 1");
    if (vectors.empty()) throw InvalidInput("no vectors to cluster");
    const std::size_t d = vectors.front().size();
    if (d == 0) throw InvalidInput("zero-dimensional vectors");
    for (const auto& v : vectors) {
        if (v.size() != d) throw InvalidInput("inconsistent vector dimensions");
        for (double x : v) {
            if (!std::isfinite(x)) throw InvalidInput("non-finite vector component");
        }
    }

    std::vector<std::size_t> order(vectors.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return vectors[a] < vectors[b]; });
    std::vector<Vector> pts;
    pts.reserve(vectors.size());
    for (auto i : order) pts.push_back(vectors[i]);

    std::size_t distinct = 1;
    for (std::size_t i = 1; i < pts.size(); ++i) distinct += pts[i] != pts[i - 1];
    if (k > distinct) {
        throw InvalidInput("k = " + std::to_string(k) + " exceeds the " + std::to_string(distinct) +
                           " distinct vectors");
    }

    detail::LloydRun best;
    bool have_best = false;
    for (std::size_t r = 0; r < std::max<std::size_t>(opts.n_init, 1); ++r) {
        Rng rng(derive_seed(seed, "kmeans-init-" + std::to_string(r)));
        auto run = detail::lloyd(pts, k, rng, opts);
        if (!have_best || run.inertia < best.inertia) {
            best = std::move(run);
            have_best = true;
        }
    }

    ClusterModel model;
    model.k = k;
    model.centroids = std::move(best.centroids);
    model.labels.assign(vectors.size(), 0);
    for (std::size_t pos = 0; pos < order.size(); ++pos) model.labels[order[pos]] = best.labels[pos];
    model.inertia = best.inertia;
    model.seed = seed;
    model.iterations_run = best.iterations;
    model.inertia_history = std::move(best.history);
    return model;
}

inline ClusterModel kmeans_fit(const std::vector<std::string>& ids, std::span<const Vector> vectors, std::size_t k,
                               std::uint64_t seed, const KMeansOptions& opts = {}) {
    if (ids.size() != vectors.size()) throw InvalidInput("ids and vectors differ in length");
    auto model = kmeans_fit(vectors, k, seed, opts);
    for (std::size_t i = 0; i < ids.size(); ++i) model.assignments[ids[i]] = model.labels[i];
    return model;
}

inline nlohmann::json cluster_model_json(const ClusterModel& m) {
    return {{"k", m.k},
            {"centroids", m.centroids},
            {"assignments", m.assignments},
            {"inertia", m.inertia},
            {"seed", m.seed},
            {"iterations_run", m.iterations_run}};
}

// ---- pool integration -------------------------------------------------------

// Embeds every instance that lacks a vector, `batch` texts per request.
inline std::size_t embed_pool(PoolStore& pool, EmbeddingProvider& provider, std::size_t batch = 64,
                              const RetryPolicy& retry = {}) {
    std::vector<std::string> ids;
    std::vector<std::string> texts;
    std::size_t dim = 0;
    for (const auto& x : pool.instances()) {
        if (x.embedding) {
            dim = x.embedding->size();
            continue;
        }
        ids.push_back(x.id);
        texts.push_back(x.source_text);
    }
    for (std::size_t start = 0; start < ids.size(); start += batch) {
        const std::size_t end = std::min(ids.size(), start + batch);
        std::vector<std::string> chunk(texts.begin() + static_cast<std::ptrdiff_t>(start),
                                       texts.begin() + static_cast<std::ptrdiff_t>(end));
        auto vecs = embed_batch(provider, chunk, retry, dim);
        dim = vecs.front().size();
        for (std::size_t i = start; i < end; ++i) pool.set_embedding(ids[i], std::move(vecs[i - start]));
    }
    return ids.size();
}

// Fits on the non-held-out pool and records a cluster id on every
// embedded instance.
inline ClusterModel cluster_pool(PoolStore& pool, std::size_t k, std::uint64_t seed, const KMeansOptions& opts = {}) {
    const auto held = pool.held_out();
    std::vector<std::string> ids;
    std::vector<Vector> vecs;
    std::vector<Instance> rest;
    for (auto& x : pool.instances()) {
        if (!x.embedding) throw StateError("instance " + x.id + " has no embedding; run embedding first");
        if (held.contains(x.id)) {
            rest.push_back(std::move(x));
            continue;
        }
        ids.push_back(x.id);
        vecs.push_back(*x.embedding);
    }
    auto model = kmeans_fit(ids, vecs, k, seed, opts);
    pool.transaction([&](PoolStore& p) {
        for (const auto& [id, c] : model.assignments) p.set_cluster(id, static_cast<std::int64_t>(c));
        for (const auto& x : rest) p.set_cluster(x.id, static_cast<std::int64_t>(assign(*x.embedding, model)));
    });
    return model;
}

// Rebuilds a model view (assignments only) from the cluster ids stored on
// pool instances.
inline std::map<std::string, std::size_t> stored_assignments(const PoolStore& pool) {
    std::map<std::string, std::size_t> out;
    for (const auto& x : pool.instances()) {
        if (x.cluster_id) out[x.id] = static_cast<std::size_t>(*x.cluster_id);
    }
    return out;
}

}  // namespace kdal
