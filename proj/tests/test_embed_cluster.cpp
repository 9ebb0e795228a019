#include "kdal/embed_cluster.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"

using namespace kdal;

namespace {

std::vector<Vector> random_points(Rng& rng, std::size_t n, std::size_t d) {
    std::vector<Vector> pts(n, Vector(d));
    for (auto& p : pts)
        for (auto& x : p) x = rng.uniform(-1.0, 1.0);
    return pts;
}

// Deterministic embedder keyed on the text bytes.
class HashEmbedder : public EmbeddingProvider {
public:
    explicit HashEmbedder(std::size_t dim = 8) : dim_(dim) {}
    std::vector<Vector> embed(const std::vector<std::string>& texts) override {
        ++calls;
        std::vector<Vector> out;
        for (const auto& t : texts) {
            Vector v(dim_);
            for (std::size_t i = 0; i < dim_; ++i) v[i] = unit_from_bits(mix64(fnv1a(t) + i)) + 0.1;
            out.push_back(v);
        }
        return out;
    }
    int calls = 0;

private:
    std::size_t dim_;
};

class FlakyEmbedder : public EmbeddingProvider {
public:
    explicit FlakyEmbedder(int failures) : failures_(failures) {}
    std::vector<Vector> embed(const std::vector<std::string>& texts) override {
        ++calls;
        if (calls <= failures_) throw ProviderError("timeout");
        return std::vector<Vector>(texts.size(), Vector{3.0, 4.0});
    }
    int calls = 0;

private:
    int failures_;
};

}  // namespace

TEST(EmbedBatch, NormalizesAndKeepsOrder) {
    HashEmbedder e;
    auto v = embed_batch(e, {"alpha", "beta", "alpha"});
    ASSERT_EQ(v.size(), 3u);
    for (const auto& x : v) {
        double s = 0;
        for (double c : x) s += c * c;
        EXPECT_NEAR(std::sqrt(s), 1.0, 1e-12);
    }
    EXPECT_EQ(v[0], v[2]);
    EXPECT_NE(v[0], v[1]);
}

TEST(EmbedBatch, EmptyBatchIsAnError) {
    HashEmbedder e;
    try {
        embed_batch(e, {});
        FAIL();
    } catch (const InvalidInput& err) {
        EXPECT_STREQ(err.what(), "empty batch");
    }
    EXPECT_EQ(e.calls, 0);
}

TEST(EmbedBatch, RetriesThenSucceeds) {
    FlakyEmbedder e(2);
    auto v = embed_batch(e, {"x"}, RetryPolicy::immediate());
    EXPECT_EQ(e.calls, 3);
    EXPECT_NEAR(v[0][0], 0.6, 1e-15);
    EXPECT_NEAR(v[0][1], 0.8, 1e-15);
}

TEST(EmbedBatch, GivesUpAfterThreeAttempts) {
    FlakyEmbedder e(3);
    EXPECT_THROW(embed_batch(e, {"x"}, RetryPolicy::immediate()), ProviderError);
    EXPECT_EQ(e.calls, 3);
}

TEST(EmbedBatch, BackoffDoubles) {
    FlakyEmbedder e(2);
    RetryPolicy p;
    std::vector<long> waits;
    p.initial_delay = std::chrono::milliseconds{100};
    p.sleep = [&](std::chrono::milliseconds d) { waits.push_back(static_cast<long>(d.count())); };
    embed_batch(e, {"x"}, p);
    EXPECT_EQ(waits, (std::vector<long>{100, 200}));
}

TEST(EmbedBatch, DimensionMismatchAcrossBatches) {
    HashEmbedder e(8);
    EXPECT_THROW(embed_batch(e, {"x"}, RetryPolicy::immediate(), 16), ProviderError);
}

TEST(EmbedPool, EmbedsInBatches) {
    PoolStore pool;
    for (int i = 0; i < 10; ++i) pool.add_instance({"i" + std::to_string(i), "text " + std::to_string(i), {}, {}, {}, {}});
    HashEmbedder e;
    EXPECT_EQ(embed_pool(pool, e, 4), 10u);
    EXPECT_EQ(e.calls, 3);
    EXPECT_EQ(embed_pool(pool, e, 4), 0u);
    for (const auto& x : pool.instances()) EXPECT_TRUE(x.embedding.has_value());
}

TEST(KMeans, OnePointPerCluster) {
    std::vector<Vector> pts{{0, 0}, {1, 0}, {0, 1}, {5, 5}};
    auto m = kmeans_fit(pts, 4, 3);
    EXPECT_EQ(m.inertia, 0.0);
    EXPECT_EQ(oracle::partition_of(m.labels).size(), 4u);
    for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(m.centroids[m.labels[i]], pts[i]);
}

TEST(KMeans, TwoSeparatedBlobs) {
    std::vector<Vector> pts{{0, 0}, {0, 1}, {10, 10}, {10, 11}};
    // Brute force over all 2-partitions gives the reference optimum.
    const double optimum = oracle::optimal_inertia(pts, 2);
    EXPECT_DOUBLE_EQ(optimum, 1.0);
    auto m = kmeans_fit(pts, 2, 42);
    EXPECT_EQ(oracle::partition_of(m.labels), (std::set<std::set<std::size_t>>{{0, 1}, {2, 3}}));
    EXPECT_NEAR(m.inertia, optimum, 1e-12);
}

TEST(KMeans, DeterministicForFixedSeed) {
    Rng rng(5);
    auto pts = random_points(rng, 200, 4);
    auto a = kmeans_fit(pts, 7, 11);
    auto b = kmeans_fit(pts, 7, 11);
    EXPECT_EQ(a, b);
    EXPECT_EQ(cluster_model_json(a).dump(), cluster_model_json(b).dump());
}

TEST(KMeans, FinalModelInvariants) {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        auto pts = random_points(rng, 30 + rng.below(100), 1 + rng.below(5));
        const std::size_t k = 1 + rng.below(8);
        auto m = kmeans_fit(pts, k, rng.bits());
        std::vector<std::size_t> sizes(k, 0);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            ++sizes[m.labels[i]];
            EXPECT_EQ(m.labels[i], oracle::nearest(pts[i], m.centroids));
        }
        for (auto s : sizes) EXPECT_GT(s, 0u);
        double recomputed = 0;
        for (std::size_t i = 0; i < pts.size(); ++i) recomputed += oracle::sqdist(pts[i], m.centroids[m.labels[i]]);
        EXPECT_NEAR(m.inertia, recomputed, 1e-9 * std::max(1.0, recomputed));
    }
}

TEST(KMeans, InertiaNonIncreasingPerIteration) {
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        auto pts = random_points(rng, 150, 3);
        auto m = kmeans_fit(pts, 6, rng.bits(), {.max_iter = 300, .tol = 1e-4, .n_init = 1});
        ASSERT_GE(m.inertia_history.size(), 2u);
        for (std::size_t i = 1; i < m.inertia_history.size(); ++i) {
            EXPECT_LE(m.inertia_history[i], m.inertia_history[i - 1] * (1 + 1e-12));
        }
    }
}

TEST(KMeans, NearOptimalOnToyProblems) {
    Rng rng(2024);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const std::size_t n = 4 + rng.below(5);
        const std::size_t k = 1 + rng.below(3);
        auto pts = random_points(rng, n, 2);
        const double best = oracle::optimal_inertia(pts, k);
        auto m = kmeans_fit(pts, k, seed);
        EXPECT_LE(m.inertia, best * 1.05 + 1e-12) << "seed " << seed << " n=" << n << " k=" << k;
    }
}

TEST(KMeans, PermutationChangesOnlyLabels) {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        auto pts = random_points(rng, 60, 3);
        std::vector<std::size_t> perm(pts.size());
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        std::vector<Vector> shuffled;
        for (auto i : perm) shuffled.push_back(pts[i]);
        auto a = kmeans_fit(pts, 5, 99);
        auto b = kmeans_fit(shuffled, 5, 99);
        std::vector<std::size_t> back(pts.size());
        for (std::size_t pos = 0; pos < perm.size(); ++pos) back[perm[pos]] = b.labels[pos];
        EXPECT_EQ(oracle::partition_of(a.labels), oracle::partition_of(back));
        EXPECT_DOUBLE_EQ(a.inertia, b.inertia);
    }
}

TEST(KMeans, RejectsBadInput) {
    std::vector<Vector> dupes{{1, 1}, {1, 1}, {2, 2}};
    EXPECT_THROW(kmeans_fit(dupes, 3, 0), InvalidInput);
    EXPECT_NO_THROW(kmeans_fit(dupes, 2, 0));
    EXPECT_THROW(kmeans_fit(dupes, 0, 0), InvalidInput);
    std::vector<Vector> nan{{1, std::nan("")}, {0, 0}};
    EXPECT_THROW(kmeans_fit(nan, 1, 0), InvalidInput);
    std::vector<Vector> ragged{{1, 2}, {1}};
    EXPECT_THROW(kmeans_fit(ragged, 1, 0), InvalidInput);
}

TEST(KMeans, RepairMovesFarthestPoint) {
    std::vector<Vector> pts{{0}, {1}, {10}};
    std::vector<Vector> centroids{{0.5}, {100}};
    std::vector<std::size_t> labels{0, 0, 0};
    EXPECT_TRUE(detail::repair_empty(pts, centroids, labels));
    EXPECT_EQ(labels, (std::vector<std::size_t>{0, 0, 1}));
    EXPECT_EQ(centroids[1], Vector{10});
}

TEST(Assign, ExactCentroidAndTieBreak) {
    ClusterModel m;
    m.k = 5;
    m.centroids = {{0, 0}, {1, 0}, {0, 5}, {3, 3}, {-1, 0}};
    EXPECT_EQ(assign({3, 3}, m), 3u);
    // (0,-1) is equidistant from centroid 1 (1,0) and centroid 4 (-1,0)
    m.centroids[0] = {0, 100};
    EXPECT_EQ(assign({0, -1}, m), 1u);
    EXPECT_THROW(assign({1, 2, 3}, m), InvalidInput);
}

TEST(Assign, MatchesExhaustiveScan) {
    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        ClusterModel m;
        m.centroids = random_points(rng, 1 + rng.below(10), 3);
        m.k = m.centroids.size();
        Vector v = random_points(rng, 1, 3)[0];
        EXPECT_EQ(assign(v, m), oracle::nearest(v, m.centroids));
    }
}

TEST(ClusterPool, AssignsEveryInstance) {
    PoolStore pool;
    HashEmbedder e;
    for (int i = 0; i < 30; ++i) pool.add_instance({"i" + std::to_string(i), "t" + std::to_string(i), {}, {}, {}, {}});
    embed_pool(pool, e);
    pool.set_held_out({"i0", "i1"});
    auto model = cluster_pool(pool, 3, 1);
    EXPECT_EQ(model.assignments.size(), 28u);
    EXPECT_FALSE(model.assignments.contains("i0"));
    for (const auto& x : pool.instances()) ASSERT_TRUE(x.cluster_id.has_value());
    EXPECT_EQ(stored_assignments(pool).size(), 30u);
}
