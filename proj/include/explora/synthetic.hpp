#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "explora/catalog.hpp"
#include "explora/embedding.hpp"
#include "explora/rng.hpp"

namespace explora {

class SyntheticError : public std::runtime_error {
public:
    explicit SyntheticError(const std::string& msg) : std::runtime_error(msg) {}
};

// Planted-cluster fixture: each cluster c has a unit anchor a_c, and every
// member is sqrt(1-noise^2)*a_c + noise*w with w a unit vector orthogonal
// to the span of all anchors. Pairwise cosines are then exactly
// (1-noise^2)*cos(a_i,a_j) + noise^2*cos(w_i,w_j), so with the default
// noise 0.25 and anchors kept below cosine 0.2 of each other,
// intra-cluster similarity stays above 0.9 and inter-cluster below 0.3.
struct SyntheticConfig {
    int n_clusters = 12;
    int n_items = 2000;
    int n_users = 100;
    std::size_t dim = 384;
    double noise = 0.25;
    double anchor_max_cos = 0.2;
    int history_len = 60;
    int home_clusters = 3;
    std::uint64_t seed = 1;
};

struct SyntheticData {
    std::map<ItemId, Item> items;
    EmbeddingMap embeddings;
    std::vector<Rating> ratings;
    std::vector<std::string> themes;                  // one per planted cluster
    std::map<std::string, Embedding> keyword_vectors; // theme -> anchor
    std::vector<std::vector<ItemId>> planted;         // ground-truth membership
};

namespace detail {

inline Embedding random_unit(Rng& rng, std::size_t dim) {
    for (int attempt = 0; attempt < 16; ++attempt) {
        Embedding v(dim);
        for (auto& x : v) x = rng.gaussian();
        const double n = norm(v);
        if (n > 1e-9) {
            for (auto& x : v) x /= n;
            return v;
        }
    }
    throw SyntheticError("random_unit: could not draw a nonzero vector");
}

inline std::vector<std::string> theme_words(int n) {
    static const std::vector<std::string> base = {
        "orbit",  "harbor",  "canyon", "ember",  "glacier", "meadow",
        "lantern", "tundra", "reef",   "summit", "prairie", "monsoon"};
    std::vector<std::string> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        if (i < static_cast<int>(base.size())) {
            out.push_back(base[i]);
        } else {
            out.push_back("theme" + std::to_string(i));
        }
    }
    return out;
}

}  // namespace detail

inline SyntheticData make_synthetic(const SyntheticConfig& cfg) {
    if (cfg.n_clusters < 2) throw SyntheticError("make_synthetic: need at least 2 clusters");
    if (cfg.n_items < cfg.n_clusters) {
        throw SyntheticError("make_synthetic: need at least one item per cluster");
    }
    if (cfg.n_users < 1) throw SyntheticError("make_synthetic: need at least 1 user");
    if (cfg.home_clusters < 1 || cfg.home_clusters > cfg.n_clusters) {
        throw SyntheticError("make_synthetic: home_clusters must be in [1, n_clusters]");
    }
    if (cfg.noise <= 0.0 || cfg.noise >= 1.0) {
        throw SyntheticError("make_synthetic: noise must be in (0, 1)");
    }
    if (cfg.dim < static_cast<std::size_t>(2 * cfg.n_clusters)) {
        throw SyntheticError("make_synthetic: dim must be at least 2 * n_clusters so anchors "
                             "can be separated");
    }

    SyntheticData data;
    data.themes = detail::theme_words(cfg.n_clusters);

    // Anchors: random unit vectors, resampled until well separated.
    Rng anchor_rng(derive_seed(cfg.seed, "synthetic", "anchors"));
    std::vector<Embedding> anchors;
    int attempts = 0;
    while (static_cast<int>(anchors.size()) < cfg.n_clusters) {
        if (++attempts > 1000 * cfg.n_clusters) {
            throw SyntheticError(
                "make_synthetic: could not separate " + std::to_string(cfg.n_clusters) +
                " anchors below cosine " + std::to_string(cfg.anchor_max_cos) +
                " in dimension " + std::to_string(cfg.dim) +
                "; raise dim or anchor_max_cos");
        }
        Embedding a = detail::random_unit(anchor_rng, cfg.dim);
        bool ok = true;
        for (const auto& b : anchors) {
            const double c = cosine_similarity(a, b);
            if (c > cfg.anchor_max_cos || c < -cfg.anchor_max_cos) {
                ok = false;
                break;
            }
        }
        if (ok) anchors.push_back(std::move(a));
    }
    for (int c = 0; c < cfg.n_clusters; ++c) data.keyword_vectors[data.themes[c]] = anchors[c];

    // Orthonormal basis of the anchor span, for exact noise orthogonalization.
    std::vector<Embedding> basis;
    for (const auto& a : anchors) {
        Embedding q = a;
        for (const auto& b : basis) {
            const double proj = dot(q, b);
            for (std::size_t i = 0; i < q.size(); ++i) q[i] -= proj * b[i];
        }
        const double n = norm(q);
        if (n > 1e-9) {
            for (auto& x : q) x /= n;
            basis.push_back(std::move(q));
        }
    }

    // Items: contiguous id blocks per cluster, ids starting at 1.
    const double keep = std::sqrt(1.0 - cfg.noise * cfg.noise);
    Rng item_rng(derive_seed(cfg.seed, "synthetic", "items"));
    data.planted.resize(cfg.n_clusters);
    const int per = cfg.n_items / cfg.n_clusters;
    const int rem = cfg.n_items % cfg.n_clusters;
    ItemId next_id = 1;
    for (int c = 0; c < cfg.n_clusters; ++c) {
        const int block = per + (c < rem ? 1 : 0);
        for (int i = 0; i < block; ++i) {
            const ItemId id = next_id++;
            Embedding w;
            for (int attempt = 0; attempt < 16; ++attempt) {
                w = detail::random_unit(item_rng, cfg.dim);
                for (const auto& b : basis) {
                    const double proj = dot(w, b);
                    for (std::size_t d = 0; d < w.size(); ++d) w[d] -= proj * b[d];
                }
                const double n = norm(w);
                if (n > 1e-9) {
                    for (auto& x : w) x /= n;
                    break;
                }
                w.clear();
            }
            if (w.empty()) throw SyntheticError("make_synthetic: degenerate noise vector");
            Embedding m(cfg.dim);
            for (std::size_t d = 0; d < cfg.dim; ++d) {
                m[d] = keep * anchors[c][d] + cfg.noise * w[d];
            }
            std::string theme = data.themes[c];
            theme[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(theme[0])));
            Item item;
            item.id = id;
            item.title = theme + " tale " + std::to_string(id);
            item.tags = {data.themes[c]};
            data.items.emplace(id, std::move(item));
            data.embeddings.emplace(id, std::move(m));
            data.planted[c].push_back(id);
        }
    }

    // Users: three home clusters each; every interaction picks a home
    // cluster and an unwatched member, rating 5.0, timestamps sequential.
    for (int u = 1; u <= cfg.n_users; ++u) {
        Rng rng(derive_seed(cfg.seed, "synthetic", "user", u));
        std::vector<int> all_clusters(cfg.n_clusters);
        for (int c = 0; c < cfg.n_clusters; ++c) all_clusters[c] = c;
        const std::vector<int> homes =
            sample_without_replacement(all_clusters, cfg.home_clusters, rng);
        std::map<int, std::vector<ItemId>> pools;
        for (int c : homes) pools[c] = data.planted[c];
        for (int t = 1; t <= cfg.history_len; ++t) {
            int home = homes[rng.below(homes.size())];
            if (pools.at(home).empty()) {
                bool found = false;
                for (int c : homes) {
                    if (!pools.at(c).empty()) {
                        home = c;
                        found = true;
                        break;
                    }
                }
                if (!found) {
                    throw SyntheticError("make_synthetic: user " + std::to_string(u) +
                                         " exhausted all home clusters; lower history_len or "
                                         "raise n_items");
                }
            }
            auto& pool = pools.at(home);
            const std::size_t at = rng.below(pool.size());
            const ItemId item = pool[at];
            pool[at] = pool.back();
            pool.pop_back();
            Rating r;
            r.user = u;
            r.item = item;
            r.value = 5.0;
            r.timestamp = t;
            data.ratings.push_back(r);
        }
    }
    return data;
}

}  // namespace explora
