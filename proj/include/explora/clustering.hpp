#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "explora/embedding.hpp"
#include "explora/rng.hpp"

namespace explora {

class ClusteringError : public std::runtime_error {
public:
    explicit ClusteringError(const std::string& msg) : std::runtime_error(msg) {}
};

struct Cluster {
    int id = 0;
    std::vector<ItemId> member_ids;  // insertion order, non-empty
    Embedding centroid;              // element-wise mean of member embeddings
};

struct ClusteringConfig {
    double initial_threshold = 0.45;
    bool dynamic = true;
    int threshold_update_freq = 100;
    double merge_threshold = 0.85;
    // 0 = score every clustered item; otherwise a uniform sample cap for
    // the periodic silhouette pass (large-N escape hatch, off by default).
    std::size_t silhouette_sample = 0;
    std::uint64_t silhouette_seed = 20449;
};

// Online partition of items into semantic clusters. A new item joins the
// nearest centroid when cosine similarity is strictly above the current
// threshold, otherwise it starts a new cluster. Every
// threshold_update_freq insertions the silhouette score drives the
// threshold up or down and highly similar clusters are merged.
//
// Single-writer: mutations must be serialized by the owner. All reads on a
// quiescent engine are safe to share.
class ClusterEngine {
public:
    explicit ClusterEngine(ClusteringConfig config = {})
        : config_(config), threshold_(config.initial_threshold) {}

    // Returns the cluster the item ended up in (merges triggered by the
    // update cadence may remap it in the same call).
    int insert(ItemId item, const Embedding& v) {
        add_item(item, v);
        ++interaction_count_;
        if (config_.dynamic && config_.threshold_update_freq > 0 &&
            interaction_count_ % config_.threshold_update_freq == 0) {
            silhouette_last_ = silhouette();
            if (silhouette_last_) adapt_threshold(*silhouette_last_);
            merge_similar();
        }
        return item_to_cluster_.at(item);
    }

    // Cluster with the most similar centroid; ties go to the lowest id.
    std::pair<int, double> nearest_centroid(const Embedding& v) const {
        if (clusters_.empty()) throw ClusteringError("nearest_centroid: no clusters");
        int best_id = -1;
        double best_sim = -std::numeric_limits<double>::infinity();
        for (const auto& [cid, cluster] : clusters_) {
            const double sim = cosine_similarity(v, cluster.centroid);
            if (sim > best_sim) {
                best_sim = sim;
                best_id = cid;
            }
        }
        return {best_id, best_sim};
    }

    // Mean silhouette over clustered items with distance 1 - cosine.
    // Undefined (nullopt) until there are at least 2 clusters and 2 items;
    // singleton members contribute 0.
    std::optional<double> silhouette() const {
        const std::size_t n_items = item_to_cluster_.size();
        if (clusters_.size() < 2 || n_items < 2) return std::nullopt;

        // Mean distance from i to cluster c equals 1 - cos(i, centroid-sum)
        // by linearity of the dot product, so one pass over cluster sums of
        // unit vectors replaces the full pairwise loop.
        std::map<int, Embedding> sums;
        for (const auto& [cid, cluster] : clusters_) {
            Embedding s(dim_, 0.0);
            for (ItemId m : cluster.member_ids) {
                const Embedding& u = unit_vectors_.at(m);
                for (std::size_t i = 0; i < dim_; ++i) s[i] += u[i];
            }
            sums.emplace(cid, std::move(s));
        }

        double total = 0.0;
        std::size_t counted = 0;
        auto score_item = [&](ItemId item, int cid) {
            const auto& cluster = clusters_.at(cid);
            const std::size_t n_c = cluster.member_ids.size();
            if (n_c == 1) {
                ++counted;  // singleton contributes 0
                return;
            }
            const Embedding& self = unit_vectors_.at(item);
            const double self_dot = dot(self, self);
            const double a = 1.0 - (dot(self, sums.at(cid)) - self_dot) /
                                       static_cast<double>(n_c - 1);
            double b = std::numeric_limits<double>::infinity();
            for (const auto& [other_id, other] : clusters_) {
                if (other_id == cid) continue;
                const double d = 1.0 - dot(self, sums.at(other_id)) /
                                           static_cast<double>(other.member_ids.size());
                b = std::min(b, d);
            }
            const double m = std::max(a, b);
            total += m > 0.0 ? (b - a) / m : 0.0;
            ++counted;
        };

        if (config_.silhouette_sample > 0 && n_items > config_.silhouette_sample) {
            std::vector<ItemId> ids;
            ids.reserve(n_items);
            for (const auto& [cid, cluster] : clusters_)
                ids.insert(ids.end(), cluster.member_ids.begin(), cluster.member_ids.end());
            std::sort(ids.begin(), ids.end());
            Rng rng(derive_seed(config_.silhouette_seed, interaction_count_));
            for (ItemId id : sample_without_replacement(ids, config_.silhouette_sample, rng))
                score_item(id, item_to_cluster_.at(id));
        } else {
            for (const auto& [cid, cluster] : clusters_)
                for (ItemId m : cluster.member_ids) score_item(m, cid);
        }
        return counted ? total / static_cast<double>(counted) : 0.0;
    }

    // Threshold schedule: score < 0.1 shrinks by 5%, [0.1, 0.2) by 2%,
    // > 0.4 grows by 2%; floor 0.3, cap 0.8; the middle band holds steady.
    double adapt_threshold(double score) {
        if (score < 0.1) {
            threshold_ = std::max(0.3, threshold_ * 0.95);
        } else if (score < 0.2) {
            threshold_ = std::max(0.3, threshold_ * 0.98);
        } else if (score > 0.4) {
            threshold_ = std::min(0.8, threshold_ * 1.02);
        }
        return threshold_;
    }

    // Repeatedly merges the most similar centroid pair while its similarity
    // exceeds merge_threshold. The smaller id survives; on ties the lowest
    // pair wins. Returns the number of merges performed.
    int merge_similar() {
        int merges = 0;
        while (clusters_.size() >= 2) {
            int keep = -1, absorb = -1;
            double best_sim = -std::numeric_limits<double>::infinity();
            for (auto it = clusters_.begin(); it != clusters_.end(); ++it) {
                auto jt = it;
                for (++jt; jt != clusters_.end(); ++jt) {
                    const double sim =
                        cosine_similarity(it->second.centroid, jt->second.centroid);
                    if (sim > best_sim) {
                        best_sim = sim;
                        keep = it->first;
                        absorb = jt->first;
                    }
                }
            }
            if (best_sim <= config_.merge_threshold) break;
            Cluster& dst = clusters_.at(keep);
            Cluster& src = clusters_.at(absorb);
            for (ItemId m : src.member_ids) {
                dst.member_ids.push_back(m);
                item_to_cluster_[m] = keep;
            }
            clusters_.erase(absorb);
            untrack_cluster_id(absorb);
            recompute_centroid(dst);
            ++merges;
        }
        return merges;
    }

    // Re-runs the insert rule for an already clustered item (e.g. after a
    // metadata change) without counting it as a new interaction.
    int reassign_item(ItemId item, const Embedding& v) {
        auto it = item_to_cluster_.find(item);
        if (it == item_to_cluster_.end()) {
            throw ClusteringError("reassign_item: unknown item " + std::to_string(item));
        }
        check_dim(v);
        normalized(v);  // reject zero-norm before any state is touched
        const int old_cluster = it->second;
        Cluster& cluster = clusters_.at(old_cluster);
        cluster.member_ids.erase(
            std::find(cluster.member_ids.begin(), cluster.member_ids.end(), item));
        if (cluster.member_ids.empty()) {
            clusters_.erase(old_cluster);
            untrack_cluster_id(old_cluster);
        } else {
            recompute_centroid(cluster);
        }
        item_to_cluster_.erase(it);
        vectors_.erase(item);
        unit_vectors_.erase(item);
        add_item(item, v);
        return item_to_cluster_.at(item);
    }

    double threshold() const { return threshold_; }
    std::int64_t interaction_count() const { return interaction_count_; }
    std::optional<double> silhouette_last() const { return silhouette_last_; }
    std::size_t dim() const { return dim_; }
    std::size_t item_count() const { return item_to_cluster_.size(); }
    const std::map<int, Cluster>& clusters() const { return clusters_; }
    // Ascending cluster ids, mirroring clusters(). Kept as a flat vector so
    // per-request scans over all clusters avoid walking the map.
    const std::vector<int>& cluster_ids() const { return cluster_ids_; }
    const std::unordered_map<ItemId, int>& item_to_cluster() const { return item_to_cluster_; }
    const EmbeddingMap& vectors() const { return vectors_; }
    const ClusteringConfig& config() const { return config_; }

    std::optional<int> cluster_of(ItemId item) const {
        auto it = item_to_cluster_.find(item);
        if (it == item_to_cluster_.end()) return std::nullopt;
        return it->second;
    }

    nlohmann::json to_json() const {
        nlohmann::json clusters = nlohmann::json::array();
        for (const auto& [cid, cluster] : clusters_) {
            clusters.push_back({{"id", cid},
                                {"member_ids", cluster.member_ids},
                                {"centroid", cluster.centroid}});
        }
        return {{"threshold", threshold_}, {"clusters", clusters}};
    }

    // Rebuilds an engine from a snapshot. The snapshot holds no item
    // vectors, so the caller supplies them; each stored centroid is
    // validated against the recomputed member mean.
    static ClusterEngine from_json(const nlohmann::json& j, const EmbeddingMap& vectors,
                                   ClusteringConfig config = {}) {
        ClusterEngine engine(config);
        engine.threshold_ = j.at("threshold").get<double>();
        for (const auto& jc : j.at("clusters")) {
            Cluster c;
            c.id = jc.at("id").get<int>();
            c.member_ids = jc.at("member_ids").get<std::vector<ItemId>>();
            c.centroid = jc.at("centroid").get<Embedding>();
            if (c.member_ids.empty()) {
                throw ClusteringError("from_json: cluster " + std::to_string(c.id) + " is empty");
            }
            if (engine.clusters_.count(c.id)) {
                throw ClusteringError("from_json: duplicate cluster id " + std::to_string(c.id));
            }
            for (ItemId m : c.member_ids) {
                auto vi = vectors.find(m);
                if (vi == vectors.end()) {
                    throw ClusteringError("from_json: no embedding supplied for item " +
                                          std::to_string(m));
                }
                if (engine.item_to_cluster_.count(m)) {
                    throw ClusteringError("from_json: item " + std::to_string(m) +
                                          " in more than one cluster");
                }
                if (engine.dim_ == 0) engine.dim_ = vi->second.size();
                engine.check_dim(vi->second);
                engine.item_to_cluster_[m] = c.id;
                engine.vectors_[m] = vi->second;
                engine.unit_vectors_[m] = normalized(vi->second);
            }
            engine.next_cluster_id_ = std::max(engine.next_cluster_id_, c.id + 1);
            engine.track_cluster_id(c.id);
            engine.clusters_.emplace(c.id, std::move(c));
        }
        for (auto& [cid, cluster] : engine.clusters_) {
            const Embedding stored = cluster.centroid;
            engine.recompute_centroid(cluster);
            for (std::size_t i = 0; i < stored.size(); ++i) {
                if (std::abs(stored[i] - cluster.centroid[i]) > 1e-6) {
                    throw ClusteringError("from_json: centroid of cluster " +
                                          std::to_string(cid) + " does not match member mean");
                }
            }
        }
        engine.interaction_count_ = static_cast<std::int64_t>(engine.item_to_cluster_.size());
        return engine;
    }

private:
    void check_dim(const Embedding& v) const {
        if (dim_ != 0 && v.size() != dim_) {
            throw ClusteringError("embedding dimension " + std::to_string(v.size()) +
                                  " does not match engine dimension " + std::to_string(dim_));
        }
    }

    void track_cluster_id(int id) {
        cluster_ids_.insert(std::lower_bound(cluster_ids_.begin(), cluster_ids_.end(), id), id);
    }

    void untrack_cluster_id(int id) {
        cluster_ids_.erase(std::lower_bound(cluster_ids_.begin(), cluster_ids_.end(), id));
    }

    void add_item(ItemId item, const Embedding& v) {
        if (item_to_cluster_.count(item)) {
            throw ClusteringError("insert: duplicate item " + std::to_string(item));
        }
        check_dim(v);
        if (dim_ == 0) dim_ = v.size();
        Embedding unit = normalized(v);  // rejects zero-norm up front
        int target;
        if (clusters_.empty()) {
            target = next_cluster_id_++;
            Cluster c;
            c.id = target;
            c.member_ids.push_back(item);
            c.centroid = v;
            clusters_.emplace(target, std::move(c));
            track_cluster_id(target);
        } else {
            const auto [nearest, sim] = nearest_centroid(v);
            if (sim > threshold_) {
                target = nearest;
                clusters_.at(target).member_ids.push_back(item);
            } else {
                target = next_cluster_id_++;
                Cluster c;
                c.id = target;
                c.member_ids.push_back(item);
                c.centroid = v;
                clusters_.emplace(target, std::move(c));
                track_cluster_id(target);
            }
        }
        item_to_cluster_[item] = target;
        vectors_[item] = v;
        unit_vectors_[item] = std::move(unit);
        recompute_centroid(clusters_.at(target));
    }

    void recompute_centroid(Cluster& cluster) {
        Embedding mean(dim_, 0.0);
        for (ItemId m : cluster.member_ids) {
            const Embedding& v = vectors_.at(m);
            for (std::size_t i = 0; i < dim_; ++i) mean[i] += v[i];
        }
        const double n = static_cast<double>(cluster.member_ids.size());
        for (auto& x : mean) x /= n;
        cluster.centroid = std::move(mean);
    }

    ClusteringConfig config_;
    double threshold_;
    std::int64_t interaction_count_ = 0;
    std::optional<double> silhouette_last_;
    std::size_t dim_ = 0;
    int next_cluster_id_ = 0;
    std::map<int, Cluster> clusters_;
    std::vector<int> cluster_ids_;
    std::unordered_map<ItemId, int> item_to_cluster_;
    EmbeddingMap vectors_;
    EmbeddingMap unit_vectors_;
};

}  // namespace explora
