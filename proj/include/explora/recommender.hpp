#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "explora/catalog.hpp"
#include "explora/clustering.hpp"
#include "explora/embedding.hpp"
#include "explora/rng.hpp"

namespace explora {

class RecommendError : public std::runtime_error {
public:
    explicit RecommendError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class Strategy { ColdStart, Personalized, Popularity, Cf };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::ColdStart: return "cold_start";
        case Strategy::Personalized: return "personalized";
        case Strategy::Popularity: return "popularity";
        case Strategy::Cf: return "cf";
    }
    return "?";
}

struct RecParams {
    int k = 0;
    int h = 0;
    std::uint64_t seed = 0;
};

struct RecommendationList {
    UserId user_id = 0;
    std::vector<ItemId> item_ids;  // ordered, no duplicates, disjoint from watched
    Strategy strategy = Strategy::Personalized;
    bool explore = false;
    RecParams params;
};

// Per-cluster interaction counts over the most recent window of a user's
// history, with the window position of each cluster's latest interaction.
struct ClusterEngagement {
    std::map<int, std::size_t> counts;
    std::map<int, std::size_t> last_seen;
    std::size_t window_len = 0;
};

// Engagement over the last min(window, |history|) interactions. Recorded
// cluster ids can be stale after merges, so each item is remapped through
// the current partition; items that fell out of it are not counted.
inline ClusterEngagement cluster_engagement(const UserProfile& user,
                                            const ClusterEngine& clustering, int window) {
    if (user.history.empty()) {
        throw RecommendError("cluster_engagement: user " + std::to_string(user.id) +
                             " has no history");
    }
    ClusterEngagement eng;
    const std::size_t len = std::min<std::size_t>(window > 0 ? window : 0, user.history.size());
    if (len == 0) throw RecommendError("cluster_engagement: window must be positive");
    const std::size_t start = user.history.size() - len;
    for (std::size_t i = start; i < user.history.size(); ++i) {
        const auto current = clustering.cluster_of(user.history[i].second);
        if (!current) continue;
        ++eng.counts[*current];
        eng.last_seen[*current] = i - start;
        ++eng.window_len;
    }
    return eng;
}

/// Up to three cluster ids ordered by engagement: count descending, then
/// most recent interaction, then lower cluster id.
inline std::vector<int> top_clusters(const ClusterEngagement& eng, std::size_t max_n = 3) {
    std::vector<int> ids;
    ids.reserve(eng.counts.size());
    for (const auto& [cid, count] : eng.counts) ids.push_back(cid);
    std::sort(ids.begin(), ids.end(), [&](int a, int b) {
        if (eng.counts.at(a) != eng.counts.at(b)) return eng.counts.at(a) > eng.counts.at(b);
        if (eng.last_seen.at(a) != eng.last_seen.at(b))
            return eng.last_seen.at(a) > eng.last_seen.at(b);
        return a < b;
    });
    if (ids.size() > max_n) ids.resize(max_n);
    return ids;
}

namespace detail {

// Sorted flat set of item ids. Requests probe a few hundred ids against a
// few dozen blocked ones, so a contiguous vector beats a node container on
// both build and lookup; inserts stay rare (one per chosen item).
class BlockedSet {
public:
    BlockedSet() = default;
    template <typename It>
    BlockedSet(It first, It last) : ids_(first, last) {
        std::sort(ids_.begin(), ids_.end());
    }

    bool contains(ItemId id) const { return std::binary_search(ids_.begin(), ids_.end(), id); }

    void insert(ItemId id) {
        const auto at = std::lower_bound(ids_.begin(), ids_.end(), id);
        if (at == ids_.end() || *at != id) ids_.insert(at, id);
    }

private:
    std::vector<ItemId> ids_;
};

// Cluster members still available for recommendation, id-sorted so the
// pool order never depends on insertion history. `blocked` holds watched
// plus already chosen items.
inline std::vector<ItemId> eligible_members(const Cluster& cluster, const BlockedSet& blocked) {
    std::vector<ItemId> out;
    for (ItemId m : cluster.member_ids) {
        if (!blocked.contains(m)) out.push_back(m);
    }
    std::sort(out.begin(), out.end());
    return out;
}

// Largest-remainder split of k slots across clusters, proportional to
// engagement counts. Integer arithmetic, so ties are exact: bigger
// remainder first, then bigger count, then lower cluster id.
inline std::map<int, std::size_t> proportional_quota(const std::vector<int>& clusters,
                                                     const std::map<int, std::size_t>& counts,
                                                     std::size_t k) {
    std::map<int, std::size_t> quota;
    std::size_t total = 0;
    for (int c : clusters) total += counts.at(c);
    if (total == 0 || clusters.empty()) return quota;
    std::size_t assigned = 0;
    std::vector<std::pair<std::size_t, int>> remainders;  // (remainder numerator, cluster)
    for (int c : clusters) {
        const std::size_t share = k * counts.at(c);
        quota[c] = share / total;
        assigned += share / total;
        remainders.emplace_back(share % total, c);
    }
    std::sort(remainders.begin(), remainders.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        if (counts.at(a.second) != counts.at(b.second))
            return counts.at(a.second) > counts.at(b.second);
        return a.second < b.second;
    });
    for (std::size_t i = 0; assigned < k && i < remainders.size(); ++i, ++assigned)
        ++quota[remainders[i].second];
    return quota;
}

}  // namespace detail

// Keyword-driven recommendations for users without usable history: the
// mean keyword embedding selects the three closest clusters and k items
// are sampled from their pooled members.
inline RecommendationList recommend_cold_start(const std::vector<std::string>& keywords, int k,
                                               const ClusterEngine& clustering,
                                               EmbeddingSource& source,
                                               const std::set<ItemId>& exclude, std::uint64_t seed,
                                               UserId user_id = 0) {
    if (keywords.empty()) throw RecommendError("recommend_cold_start: no keywords");
    if (clustering.clusters().empty()) throw RecommendError("recommend_cold_start: no clusters");
    if (k <= 0) throw RecommendError("recommend_cold_start: k must be positive");

    std::vector<Embedding> kw;
    kw.reserve(keywords.size());
    for (const auto& w : keywords) kw.push_back(source.embed_text(w));
    const Embedding query = mean_embedding(kw);

    std::vector<std::pair<double, int>> ranked;  // (similarity, cluster)
    for (const auto& [cid, cluster] : clustering.clusters()) {
        ranked.emplace_back(cosine_similarity(query, cluster.centroid), cid);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });

    std::vector<ItemId> pool;
    const detail::BlockedSet blocked(exclude.begin(), exclude.end());
    for (std::size_t i = 0; i < ranked.size() && i < 3; ++i) {
        const auto members =
            detail::eligible_members(clustering.clusters().at(ranked[i].second), blocked);
        pool.insert(pool.end(), members.begin(), members.end());
    }
    std::sort(pool.begin(), pool.end());

    Rng rng(seed);
    RecommendationList rec;
    rec.user_id = user_id;
    rec.item_ids = sample_without_replacement(pool, static_cast<std::size_t>(k), rng);
    rec.strategy = Strategy::ColdStart;
    rec.params = {k, 0, seed};
    return rec;
}

// Personalized recommendations over the user's top-3 engaged clusters.
//
// Exploration off: all k slots go to the top clusters, proportional to
// engagement, backfilled first from the other top clusters and then from
// the rest of the partition when a cluster runs dry.
//
// Exploration on: floor(2k/3) slots are filled first from non-top
// clusters, round-robin in a seed-shuffled cluster order with one uniform
// pick per cluster per pass; the remaining slots follow the
// exploitation path. Exploration picks lead the list.
inline RecommendationList recommend_personalized(const UserProfile& user, int k, bool explore,
                                                 int window, const ClusterEngine& clustering,
                                                 std::uint64_t seed) {
    if (k <= 0) throw RecommendError("recommend_personalized: k must be positive");
    if (clustering.clusters().empty()) throw RecommendError("recommend_personalized: no clusters");
    const ClusterEngagement eng = cluster_engagement(user, clustering, window);
    const std::vector<int> top = top_clusters(eng);

    Rng rng(seed);
    detail::BlockedSet blocked(user.watched.begin(), user.watched.end());
    std::vector<ItemId> explore_items;

    if (explore) {
        const auto n_explore = static_cast<std::size_t>(2 * k / 3);
        std::vector<int> non_top;
        non_top.reserve(clustering.cluster_ids().size());
        for (int cid : clustering.cluster_ids()) {
            if (std::find(top.begin(), top.end(), cid) == top.end()) non_top.push_back(cid);
        }
        // Lazy Fisher-Yates: identical to sampling a full shuffle up front,
        // but only the visited prefix is paid for.
        LazyShuffle<int> shuffled(std::move(non_top), rng);
        std::vector<std::vector<ItemId>> pools;  // one per visited cluster, visit order
        while (explore_items.size() < n_explore) {
            bool picked_any = false;
            // extend the order while the first pass is still running
            while (explore_items.size() < n_explore && !shuffled.done()) {
                const int cid = shuffled.next();
                pools.push_back(
                    detail::eligible_members(clustering.clusters().at(cid), blocked));
                auto& pool = pools.back();
                if (pool.empty()) continue;
                const std::size_t at = rng.below(pool.size());
                const ItemId pick = pool[at];
                pool[at] = pool.back();
                pool.pop_back();
                explore_items.push_back(pick);
                blocked.insert(pick);
                picked_any = true;
            }
            if (explore_items.size() >= n_explore) break;
            // subsequent passes reuse the same shuffled order
            for (std::size_t i = 0; i < pools.size(); ++i) {
                if (explore_items.size() >= n_explore) break;
                auto& pool = pools[i];
                if (pool.empty()) continue;
                const std::size_t at = rng.below(pool.size());
                const ItemId pick = pool[at];
                pool[at] = pool.back();
                pool.pop_back();
                explore_items.push_back(pick);
                blocked.insert(pick);
                picked_any = true;
            }
            if (!picked_any) break;  // non-top clusters exhausted
        }
    }

    const std::size_t want_top = static_cast<std::size_t>(k) - explore_items.size();
    std::vector<ItemId> top_items;
    const auto quota = detail::proportional_quota(top, eng.counts, want_top);
    for (int cid : top) {
        if (!clustering.clusters().count(cid)) continue;
        auto pool = detail::eligible_members(clustering.clusters().at(cid), blocked);
        const auto take = std::min<std::size_t>(quota.count(cid) ? quota.at(cid) : 0, pool.size());
        for (ItemId id : sample_without_replacement(pool, take, rng)) {
            top_items.push_back(id);
            blocked.insert(id);
        }
    }
    // Backfill shortfalls: first the other top clusters, then the rest.
    if (top_items.size() < want_top) {
        for (int cid : top) {
            if (top_items.size() >= want_top) break;
            if (!clustering.clusters().count(cid)) continue;
            auto pool = detail::eligible_members(clustering.clusters().at(cid), blocked);
            const auto take = std::min(want_top - top_items.size(), pool.size());
            for (ItemId id : sample_without_replacement(pool, take, rng)) {
                top_items.push_back(id);
                blocked.insert(id);
            }
        }
    }
    if (top_items.size() < want_top) {
        std::vector<ItemId> rest;
        for (const auto& [cid, cluster] : clustering.clusters()) {
            if (std::find(top.begin(), top.end(), cid) != top.end()) continue;
            const auto pool = detail::eligible_members(cluster, blocked);
            rest.insert(rest.end(), pool.begin(), pool.end());
        }
        std::sort(rest.begin(), rest.end());
        const auto take = std::min(want_top - top_items.size(), rest.size());
        for (ItemId id : sample_without_replacement(rest, take, rng)) {
            top_items.push_back(id);
            blocked.insert(id);
        }
    }

    RecommendationList rec;
    rec.user_id = user.id;
    rec.item_ids = std::move(explore_items);
    rec.item_ids.insert(rec.item_ids.end(), top_items.begin(), top_items.end());
    rec.strategy = Strategy::Personalized;
    rec.explore = explore;
    rec.params = {k, window, seed};
    return rec;
}

inline std::map<ItemId, std::int64_t> interaction_counts(const std::vector<UserProfile>& users) {
    std::map<ItemId, std::int64_t> counts;
    for (const auto& u : users) {
        for (const auto& [cluster, item] : u.history) ++counts[item];
    }
    return counts;
}

/// Most frequently interacted items the user has not watched; ties go to
/// the lower item id.
inline RecommendationList recommend_popularity(const UserProfile& user, int k,
                                               const std::map<ItemId, std::int64_t>& counts) {
    if (k <= 0) throw RecommendError("recommend_popularity: k must be positive");
    std::vector<std::pair<std::int64_t, ItemId>> ranked;
    for (const auto& [item, count] : counts) {
        if (!user.watched.count(item)) ranked.emplace_back(count, item);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    RecommendationList rec;
    rec.user_id = user.id;
    for (std::size_t i = 0; i < ranked.size() && i < static_cast<std::size_t>(k); ++i)
        rec.item_ids.push_back(ranked[i].second);
    rec.strategy = Strategy::Popularity;
    rec.params = {k, 0, 0};
    return rec;
}

// User-user collaborative filtering baseline. Users are binary vectors
// over item ids, neighbor similarity is the cosine |A∩B|/sqrt(|A||B|),
// and candidates are scored by the summed similarity of the top-20
// neighbors who watched them.
inline RecommendationList recommend_cf(const UserProfile& user, int k,
                                       const std::vector<UserProfile>& all_users,
                                       std::size_t neighborhood = 20) {
    if (k <= 0) throw RecommendError("recommend_cf: k must be positive");
    if (user.watched.empty()) {
        throw RecommendError("recommend_cf: user " + std::to_string(user.id) +
                             " has no history; use cold start");
    }
    std::vector<std::pair<double, const UserProfile*>> neighbors;
    for (const auto& other : all_users) {
        if (other.id == user.id || other.watched.empty()) continue;
        std::size_t inter = 0;
        for (ItemId w : user.watched) inter += other.watched.count(w);
        if (inter == 0) continue;
        const double sim = static_cast<double>(inter) /
                           std::sqrt(static_cast<double>(user.watched.size()) *
                                     static_cast<double>(other.watched.size()));
        neighbors.emplace_back(sim, &other);
    }
    std::sort(neighbors.begin(), neighbors.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second->id < b.second->id;
    });
    if (neighbors.size() > neighborhood) neighbors.resize(neighborhood);

    std::map<ItemId, double> scores;
    for (const auto& [sim, other] : neighbors) {
        for (ItemId item : other->watched) {
            if (!user.watched.count(item)) scores[item] += sim;
        }
    }
    std::vector<std::pair<double, ItemId>> ranked;
    for (const auto& [item, score] : scores) ranked.emplace_back(score, item);
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    RecommendationList rec;
    rec.user_id = user.id;
    for (std::size_t i = 0; i < ranked.size() && i < static_cast<std::size_t>(k); ++i)
        rec.item_ids.push_back(ranked[i].second);
    rec.strategy = Strategy::Cf;
    rec.params = {k, 0, 0};
    return rec;
}

/// Personalized when the history is long enough, otherwise keyword-driven
/// cold start; a user with neither history nor keywords is an error.
inline RecommendationList route(const UserProfile& user, int k, bool explore, int history_min,
                                int window, const ClusterEngine& clustering,
                                EmbeddingSource& source, std::uint64_t seed) {
    if (static_cast<int>(user.history.size()) >= history_min) {
        return recommend_personalized(user, k, explore, window, clustering, seed);
    }
    if (!user.prefs.empty()) {
        return recommend_cold_start(user.prefs, k, clustering, source, user.watched, seed,
                                    user.id);
    }
    throw RecommendError("route: user " + std::to_string(user.id) +
                         " has neither sufficient history nor preference keywords");
}

}  // namespace explora
