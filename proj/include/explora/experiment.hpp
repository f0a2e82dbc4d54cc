#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_set>
#include <utility>
#include <vector>

#include "explora/abtest.hpp"
#include "explora/catalog.hpp"
#include "explora/clustering.hpp"
#include "explora/embedding.hpp"
#include "explora/http.hpp"
#include "explora/metrics.hpp"
#include "explora/recommender.hpp"
#include "explora/rng.hpp"
#include "explora/synthetic.hpp"

namespace explora {

class ExperimentError : public std::runtime_error {
public:
    explicit ExperimentError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ExperimentConfig {
    std::string dataset = "synthetic";  // "synthetic" | "movielens"
    std::string movies_path;
    std::string ratings_path;
    // "test" | "file:<path>" | an http:// endpoint. Ignored for the
    // synthetic dataset, which carries its own planted vectors.
    std::string embedding_source = "test";
    std::size_t embedding_dim = 384;
    int embed_timeout_s = 30;
    int embed_max_retries = 3;
    int embed_batch = 64;
    int n_items = 20000;
    int n_users = 300;
    std::vector<int> k_values = {5, 10};
    std::vector<int> h_values = {10, 50};
    double initial_threshold = 0.45;
    int threshold_update_freq = 100;
    double merge_threshold = 0.85;
    int silhouette_sample = 0;
    double watch_rating_min = 3.5;
    int history_min = 5;
    int history_len = 60;
    int n_keywords = 5;
    std::uint64_t seed = 42;
    std::string judge = "stub";  // "stub" | an http:// endpoint
    std::string judge_model = "judge-model";
    double judge_temperature = 0.4;
    int judge_max_retries = 2;
    int judge_timeout_s = 30;
    std::string judge_reply_path = "choices[0].message.content";
    std::string judge_api_key_env;
    int judge_parallelism = 4;
    std::string unexp_mode = "mean_pairwise";  // | "history_centroid"
    int threads = 0;                           // 0 = hardware concurrency
    int synthetic_clusters = 12;
    std::string out_dir = "out";
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::int64_t config_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const std::int64_t v = std::stoll(value, &used);
        if (used == value.size()) return v;
    } catch (const std::exception&) {
    }
    throw ExperimentError("config: key '" + key + "' expects an integer, got '" + value + "'");
}

inline std::uint64_t config_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const std::uint64_t v = std::stoull(value, &used);
        if (used == value.size()) return v;
    } catch (const std::exception&) {
    }
    throw ExperimentError("config: key '" + key + "' expects an unsigned integer, got '" + value +
                          "'");
}

inline double config_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used == value.size()) return v;
    } catch (const std::exception&) {
    }
    throw ExperimentError("config: key '" + key + "' expects a number, got '" + value + "'");
}

inline std::vector<int> config_int_list(const std::string& key, const std::string& value) {
    std::string body = trim(value);
    if (!body.empty() && body.front() == '[' && body.back() == ']') {
        body = trim(body.substr(1, body.size() - 2));
    }
    std::vector<int> out;
    std::stringstream ss(body);
    std::string piece;
    while (std::getline(ss, piece, ',')) {
        out.push_back(static_cast<int>(config_int(key, trim(piece))));
    }
    if (out.empty()) {
        throw ExperimentError("config: key '" + key + "' expects a non-empty integer list, got '" +
                              value + "'");
    }
    return out;
}

inline std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

struct ConfigKey {
    const char* name;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        {"dataset", [](ExperimentConfig& c, const std::string& v) { c.dataset = v; },
         [](const ExperimentConfig& c) { return c.dataset; }},
        {"movies", [](ExperimentConfig& c, const std::string& v) { c.movies_path = v; },
         [](const ExperimentConfig& c) { return c.movies_path; }},
        {"ratings", [](ExperimentConfig& c, const std::string& v) { c.ratings_path = v; },
         [](const ExperimentConfig& c) { return c.ratings_path; }},
        {"embedding_source",
         [](ExperimentConfig& c, const std::string& v) { c.embedding_source = v; },
         [](const ExperimentConfig& c) { return c.embedding_source; }},
        {"embedding_dim",
         [](ExperimentConfig& c, const std::string& v) {
             c.embedding_dim = static_cast<std::size_t>(config_int("embedding_dim", v));
         },
         [](const ExperimentConfig& c) { return std::to_string(c.embedding_dim); }},
        {"embed_timeout_s",
         [](ExperimentConfig& c, const std::string& v) {
             c.embed_timeout_s = static_cast<int>(config_int("embed_timeout_s", v));
         },
         [](const ExperimentConfig& c) { return std::to_string(c.embed_timeout_s); }},
        {"embed_max_retries",
         [](ExperimentConfig& c, const std::string& v) {
             c.embed_max_retries = static_cast<int>(config_int("embed_max_retries", v));
         },
         [](const ExperimentConfig& c) { return std::to_string(c.embed_max_retries); }},
        {"embed_batch",
         [](ExperimentConfig& c, const std::string& v) {
             c.embed_batch = static_cast<int>(config_int("embed_batch", v));
         },
         [](const ExperimentConfig& c) { return std::to_string(c.embed_batch); }},
        {"n_items",
         [](ExperimentConfig& c, const std::string& v) {
             c.n_items = static_cast<int>(config_int("n_items", v));
         },
         [](const ExperimentConfig& c) { return std::to_string(c.n_items); }},
        {"n_users",
         [](ExperimentConfig& c, const std::string& v) {
             c.n_users = static_cast<int>(config_int("n_users", v));
         },
         [](const ExperimentConfig& c) { return std::to_string(c.n_users); }},
        {"k", [](ExperimentConfig& c, const std::string& v) { c.k_values = config_int_list("k", v); },
         [](const ExperimentConfig& c) { return join_ints(c.k_values); }},
        {"h", [](ExperimentConfig& c, const std::string& v) { c.h_values = config_int_list("h", v); },
         [](const ExperimentConfig& c) { return join_ints(c.h_values); }},
        {"initial_threshold",
         [](ExperimentConfig& c, const std::string& v) {
             c.initial_threshold = config_double("initial_threshold", v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.initial_threshold); }},
        {"threshold_update_freq",
         [](ExperimentConfig& c, const std::string& v) {
             c.threshold_update_freq = static_cast<int>(config_int("threshold_update_freq", v));
         },
         [](const ExperimentConfig& c) { return std::to_string(c.threshold_update_freq); }},
        {"merge_threshold",
         [](ExperimentConfig& c, const std::string& v) {
             c.merge_threshold = config_double("merge_threshold", v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.merge_threshold); }},
        {"silhouette_sample",
         [](ExperimentConfig& c, const std::string& v) {
             c.silhouette_sample = static_cast<int>(config_int("silhouette_sample", v));
         },
         [](const ExperimentConfig& c) { return std::to_string(c.silhouette_sample); }},
        {"watch_rating_min",
         [](ExperimentConfig& c, const std::string& v) {
             c.watch_rating_min = config_double("watch_rating_min", v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.watch_rating_min); }},
        {"history_min",
         [](ExperimentConfig& c, const std::string& v) {
             c.history_min = static_cast<int>(config_int("history_min", v));
         },
         [](const ExperimentConfig& c) { return std::to_string(c.history_min); }},
        {"history_len",
         [](ExperimentConfig& c, const std::string& v) {
             c.history_len = static_cast<int>(config_int("history_len", v));
         },
         [](const ExperimentConfig& c) { return std::to_string(c.history_len); }},
        {"n_keywords",
         [](ExperimentConfig& c, const std::string& v) {
             c.n_keywords = static_cast<int>(config_int("n_keywords", v));
         },
         [](const ExperimentConfig& c) { return std::to_string(c.n_keywords); }},
        {"seed",
         [](ExperimentConfig& c, const std::string& v) { c.seed = config_u64("seed", v); },
         [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
        {"judge", [](ExperimentConfig& c, const std::string& v) { c.judge = v; },
         [](const ExperimentConfig& c) { return c.judge; }},
        {"judge_model", [](ExperimentConfig& c, const std::string& v) { c.judge_model = v; },
         [](const ExperimentConfig& c) { return c.judge_model; }},
        {"judge_temperature",
         [](ExperimentConfig& c, const std::string& v) {
             c.judge_temperature = config_double("judge_temperature", v);
         },
         [](const ExperimentConfig& c) { return std::to_string(c.judge_temperature); }},
        {"judge_max_retries",
         [](ExperimentConfig& c, const std::string& v) {
             c.judge_max_retries = static_cast<int>(config_int("judge_max_retries", v));
         },
         [](const ExperimentConfig& c) { return std::to_string(c.judge_max_retries); }},
        {"judge_timeout_s",
         [](ExperimentConfig& c, const std::string& v) {
             c.judge_timeout_s = static_cast<int>(config_int("judge_timeout_s", v));
         },
         [](const ExperimentConfig& c) { return std::to_string(c.judge_timeout_s); }},
        {"judge_reply_path",
         [](ExperimentConfig& c, const std::string& v) { c.judge_reply_path = v; },
         [](const ExperimentConfig& c) { return c.judge_reply_path; }},
        {"judge_api_key_env",
         [](ExperimentConfig& c, const std::string& v) { c.judge_api_key_env = v; },
         [](const ExperimentConfig& c) { return c.judge_api_key_env; }},
        {"judge_parallelism",
         [](ExperimentConfig& c, const std::string& v) {
             c.judge_parallelism = static_cast<int>(config_int("judge_parallelism", v));
         },
         [](const ExperimentConfig& c) { return std::to_string(c.judge_parallelism); }},
        {"unexp_mode", [](ExperimentConfig& c, const std::string& v) { c.unexp_mode = v; },
         [](const ExperimentConfig& c) { return c.unexp_mode; }},
        {"threads",
         [](ExperimentConfig& c, const std::string& v) {
             c.threads = static_cast<int>(config_int("threads", v));
         },
         [](const ExperimentConfig& c) { return std::to_string(c.threads); }},
        {"synthetic_clusters",
         [](ExperimentConfig& c, const std::string& v) {
             c.synthetic_clusters = static_cast<int>(config_int("synthetic_clusters", v));
         },
         [](const ExperimentConfig& c) { return std::to_string(c.synthetic_clusters); }},
        {"out_dir", [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; },
         [](const ExperimentConfig& c) { return c.out_dir; }},
    };
    return keys;
}

inline void apply_config_kv(ExperimentConfig& cfg, const std::string& key,
                            const std::string& value) {
    for (const auto& k : config_keys()) {
        if (key == k.name) {
            k.set(cfg, value);
            return;
        }
    }
    std::string valid;
    for (const auto& k : config_keys()) {
        if (!valid.empty()) valid += ", ";
        valid += k.name;
    }
    throw ExperimentError("config: unknown key '" + key + "'; valid keys: " + valid);
}

}  // namespace detail

/// Resolved configuration in the file format parse_config reads back.
inline std::string config_to_string(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& k : detail::config_keys()) {
        out += k.name;
        out += " = ";
        out += k.get(cfg);
        out += "\n";
    }
    return out;
}

inline void validate_config(const ExperimentConfig& cfg) {
    const auto positive = [](const char* what, long long v) {
        if (v <= 0) {
            throw ExperimentError(std::string("config: ") + what + " must be positive, got " +
                                  std::to_string(v));
        }
    };
    positive("n_items", cfg.n_items);
    positive("n_users", cfg.n_users);
    positive("history_len", cfg.history_len);
    positive("history_min", cfg.history_min);
    positive("n_keywords", cfg.n_keywords);
    positive("embedding_dim", static_cast<long long>(cfg.embedding_dim));
    if (cfg.k_values.empty()) throw ExperimentError("config: k must list at least one value");
    if (cfg.h_values.empty()) throw ExperimentError("config: h must list at least one value");
    for (int k : cfg.k_values) {
        positive("k", k);
        if (k > cfg.n_items) {
            throw ExperimentError("config: k = " + std::to_string(k) + " exceeds n_items = " +
                                  std::to_string(cfg.n_items));
        }
    }
    for (int h : cfg.h_values) positive("h", h);
    if (cfg.dataset != "synthetic" && cfg.dataset != "movielens") {
        throw ExperimentError("config: dataset must be 'synthetic' or 'movielens', got '" +
                              cfg.dataset + "'");
    }
    if (cfg.dataset == "movielens" && (cfg.movies_path.empty() || cfg.ratings_path.empty())) {
        throw ExperimentError("config: the movielens dataset needs 'movies' and 'ratings' paths");
    }
    if (cfg.unexp_mode != "mean_pairwise" && cfg.unexp_mode != "history_centroid") {
        throw ExperimentError(
            "config: unexp_mode must be 'mean_pairwise' or 'history_centroid', got '" +
            cfg.unexp_mode + "'");
    }
    const bool src_ok = cfg.embedding_source == "test" ||
                        cfg.embedding_source.rfind("file:", 0) == 0 ||
                        cfg.embedding_source.rfind("http://", 0) == 0;
    if (!src_ok) {
        throw ExperimentError(
            "config: embedding_source must be 'test', 'file:<path>' or an http:// URL, got '" +
            cfg.embedding_source + "'");
    }
    if (cfg.judge != "stub" && cfg.judge.rfind("http://", 0) != 0) {
        throw ExperimentError("config: judge must be 'stub' or an http:// URL, got '" + cfg.judge +
                              "'");
    }
    if (cfg.judge_temperature < 0) {
        throw ExperimentError("config: judge_temperature must be >= 0");
    }
}

/// Config file (key = value lines, '#' comments) merged with overrides;
/// overrides win. Unknown keys and malformed values are errors.
inline ExperimentConfig parse_config(
    const std::optional<std::string>& path,
    const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
    ExperimentConfig cfg;
    if (path) {
        std::ifstream in(*path);
        if (!in) throw ExperimentError("config: cannot open " + *path);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const std::string body = detail::trim(line);
            if (body.empty() || body.front() == '#') continue;
            const auto eq = body.find('=');
            if (eq == std::string::npos) {
                throw ExperimentError("config: " + *path + " line " + std::to_string(line_no) +
                                      ": expected 'key = value', got '" + body + "'");
            }
            detail::apply_config_kv(cfg, detail::trim(body.substr(0, eq)),
                                    detail::trim(body.substr(eq + 1)));
        }
    }
    for (const auto& [key, value] : overrides) detail::apply_config_kv(cfg, key, value);
    validate_config(cfg);
    return cfg;
}

struct ExperimentResult {
    std::vector<MetricReportRow> rows;
    std::map<std::pair<int, int>, AbSummary> ab;  // (k, h) -> summary
    std::vector<std::string> written;             // output file paths
    double final_threshold = 0.0;
    std::size_t n_clusters = 0;
};

namespace detail {

template <typename F>
void parallel_for(std::size_t n, int threads, F&& body) {
    std::size_t nt = threads > 0 ? static_cast<std::size_t>(threads)
                                 : std::max(1u, std::thread::hardware_concurrency());
    nt = std::min(nt, n);
    if (nt <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mu;
    std::vector<std::thread> workers;
    workers.reserve(nt);
    for (std::size_t w = 0; w < nt; ++w) {
        workers.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& w : workers) w.join();
    if (first_error) std::rethrow_exception(first_error);
}

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const ExperimentError&) {
        throw;
    } catch (const std::exception& e) {
        throw ExperimentError(std::string("stage ") + name + ": " + e.what());
    }
}

inline EmbeddingSource make_embedding_source(const ExperimentConfig& cfg) {
    if (cfg.embedding_source == "test") return EmbeddingSource::deterministic(cfg.embedding_dim);
    if (cfg.embedding_source.rfind("file:", 0) == 0) {
        return EmbeddingSource::from_file(cfg.embedding_source.substr(5));
    }
    return EmbeddingSource::from_http(cfg.embedding_source, cfg.embed_timeout_s,
                                      cfg.embed_max_retries);
}

}  // namespace detail

// Runs the full offline protocol: ingest, sample, embed, cluster, build
// user profiles, generate every strategy's lists per (k, h), score them,
// A/B-test exploration off vs on, and write the report files. With the
// stub judge and an offline embedding source the outputs are
// byte-identical per seed. `log` (when given) receives progress and
// warning lines.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
    validate_config(cfg);
    const auto say = [&](const std::string& line) {
        if (log) *log << line << "\n";
    };

    // Ingest: items, ratings, and (for synthetic data) planted vectors.
    std::vector<Item> items;
    std::vector<Rating> ratings;
    std::optional<SyntheticData> synthetic;
    if (cfg.dataset == "synthetic") {
        detail::stage("ingest", [&] {
            SyntheticConfig sc;
            sc.n_clusters = cfg.synthetic_clusters;
            sc.n_items = cfg.n_items;
            sc.n_users = cfg.n_users;
            sc.dim = cfg.embedding_dim;
            sc.history_len = cfg.history_len;
            sc.seed = cfg.seed;
            synthetic = make_synthetic(sc);
            for (const auto& [id, item] : synthetic->items) items.push_back(item);
            ratings = synthetic->ratings;
            return 0;
        });
    } else {
        detail::stage("ingest", [&] {
            items = load_movielens_movies(cfg.movies_path);
            return 0;
        });
    }
    say("ingest: " + std::to_string(items.size()) + " items");

    // Sample the working subset, then (for MovieLens) stream in only the
    // ratings that touch it.
    std::vector<Item> subset = detail::stage("sample", [&] {
        return sample_items(items, static_cast<std::size_t>(cfg.n_items), cfg.seed);
    });
    std::unordered_set<ItemId> subset_ids;
    for (const auto& item : subset) subset_ids.insert(item.id);
    if (cfg.dataset == "movielens") {
        detail::stage("ingest", [&] {
            ratings = load_movielens_ratings(cfg.ratings_path, &subset_ids);
            return 0;
        });
    }
    say("sample: " + std::to_string(subset.size()) + " items, " +
        std::to_string(ratings.size()) + " ratings");

    // Embed: fill the source's item cache for every subset item.
    EmbeddingSource source = detail::stage("embed", [&] {
        if (synthetic) {
            EmbeddingSource s = EmbeddingSource::from_map(synthetic->embeddings);
            for (const auto& [word, vec] : synthetic->keyword_vectors) s.put_text(word, vec);
            return s;
        }
        return detail::make_embedding_source(cfg);
    });
    EmbeddingMap vectors = detail::stage("embed", [&] {
        auto* http = dynamic_cast<HttpEmbedder*>(source.provider().get());
        if (http) {
            std::vector<ItemId> pending_ids;
            std::vector<std::string> pending_texts;
            const auto flush = [&] {
                if (pending_ids.empty()) return;
                const auto embedded = http->embed_batch(pending_texts);
                for (std::size_t i = 0; i < pending_ids.size(); ++i) {
                    source.put_item(pending_ids[i], embedded[i]);
                }
                pending_ids.clear();
                pending_texts.clear();
            };
            for (const auto& item : subset) {
                if (source.has_item(item.id)) continue;
                pending_ids.push_back(item.id);
                pending_texts.push_back(build_item_text(item));
                if (static_cast<int>(pending_ids.size()) >= std::max(1, cfg.embed_batch)) flush();
            }
            flush();
        } else {
            for (const auto& item : subset) source.item_vector(item.id, build_item_text(item));
        }
        EmbeddingMap out;
        out.reserve(subset.size());
        for (const auto& item : subset) {
            auto it = source.item_cache().find(item.id);
            if (it == source.item_cache().end()) {
                throw EmbeddingError("no embedding for item " + std::to_string(item.id) +
                                     " (source " + source.location() + ")");
            }
            out.emplace(item.id, it->second);
        }
        return out;
    });
    say("embed: " + std::to_string(vectors.size()) + " vectors");

    // Cluster: stream items in a seed-shuffled order (the algorithm is
    // online, so insertion order is part of the recorded protocol).
    ClusterEngine engine = detail::stage("cluster", [&] {
        ClusteringConfig cc;
        cc.initial_threshold = cfg.initial_threshold;
        cc.dynamic = true;
        cc.threshold_update_freq = cfg.threshold_update_freq;
        cc.merge_threshold = cfg.merge_threshold;
        cc.silhouette_sample = cfg.silhouette_sample;
        ClusterEngine eng(cc);
        std::vector<ItemId> order;
        order.reserve(subset.size());
        for (const auto& item : subset) order.push_back(item.id);
        Rng rng(derive_seed(cfg.seed, "insert_order"));
        shuffle(order, rng);
        for (ItemId id : order) eng.insert(id, vectors.at(id));
        return eng;
    });
    say("cluster: " + std::to_string(engine.clusters().size()) + " clusters, threshold " +
        std::to_string(engine.threshold()));

    // User profiles with preference keywords.
    std::map<ItemId, Item> item_index;
    for (const auto& item : subset) item_index.emplace(item.id, item);
    std::vector<UserProfile> users = detail::stage("histories", [&] {
        auto out = build_user_histories(ratings, subset_ids, engine,
                                        static_cast<std::size_t>(cfg.n_users),
                                        static_cast<std::size_t>(cfg.history_len),
                                        cfg.watch_rating_min, cfg.seed);
        for (auto& u : out) {
            u.prefs = derive_pref_keywords(u, item_index,
                                           static_cast<std::size_t>(cfg.n_keywords));
        }
        return out;
    });
    say("histories: " + std::to_string(users.size()) + " users");

    // Warm the keyword-vector cache single-threaded; the parallel stage
    // below only reads it. File sources cannot embed free text, so their
    // keywords fall back to the deterministic embedder at the catalog dim.
    detail::stage("keywords", [&] {
        std::set<std::string> words;
        for (const auto& u : users) words.insert(u.prefs.begin(), u.prefs.end());
        const std::size_t dim = vectors.empty() ? cfg.embedding_dim : vectors.begin()->second.size();
        DeterministicEmbedder fallback(dim);
        for (const auto& w : words) {
            try {
                source.embed_text(w);
            } catch (const RetryableError&) {
                throw;
            } catch (const EmbeddingError&) {
                source.put_text(w, fallback.embed(w));
            }
        }
        return 0;
    });

    const UnexpMode unexp_mode = cfg.unexp_mode == "history_centroid" ? UnexpMode::HistoryCentroid
                                                                      : UnexpMode::MeanPairwise;
    const auto counts = interaction_counts(users);

    std::unique_ptr<Judge> judge;
    if (cfg.judge == "stub") {
        judge = std::make_unique<StubJudge>();
    } else {
        JudgeConfig jc;
        jc.kind = JudgeKind::HttpChat;
        jc.endpoint = cfg.judge;
        jc.model = cfg.judge_model;
        jc.temperature = cfg.judge_temperature;
        jc.max_retries = cfg.judge_max_retries;
        jc.timeout_s = cfg.judge_timeout_s;
        jc.reply_path = cfg.judge_reply_path;
        jc.api_key_env = cfg.judge_api_key_env;
        jc.parallelism = cfg.judge_parallelism;
        judge = std::make_unique<HttpChatJudge>(jc);
    }

    const std::vector<std::string> label_order = {"Cold Start", "Collaborative Filtering",
                                                  "Popularity-Based", "Exploration Off",
                                                  "Exploration On"};
    struct UserOut {
        std::vector<MetricSample> samples;
        AbInput ab;
    };

    ExperimentResult result;
    std::vector<MetricSample> samples;
    std::vector<AbTrial> all_trials;
    for (const int k : cfg.k_values) {
        for (const int h : cfg.h_values) {
            std::vector<UserOut> outs(users.size());
            detail::stage("recommend", [&] {
                detail::parallel_for(users.size(), cfg.threads, [&](std::size_t i) {
                    const UserProfile& u = users[i];
                    UserOut& out = outs[i];
                    const auto add = [&](const std::string& label,
                                         const std::vector<ItemId>& list) {
                        MetricSample s;
                        s.label = label;
                        s.k = k;
                        s.h = h;
                        s.user = u.id;
                        std::vector<ItemId> history_items;
                        history_items.reserve(u.history.size());
                        for (const auto& [cl, it] : u.history) history_items.push_back(it);
                        s.ils = intra_list_similarity(list, vectors);
                        s.unexp = unexpectedness(list, history_items, vectors, unexp_mode);
                        out.samples.push_back(std::move(s));
                    };

                    if (!u.prefs.empty()) {
                        const auto cold = recommend_cold_start(
                            u.prefs, k, engine, source, u.watched,
                            derive_seed(cfg.seed, "cold", k, h, u.id), u.id);
                        add("Cold Start", cold.item_ids);
                    }
                    const auto cf = recommend_cf(u, k, users);
                    add("Collaborative Filtering", cf.item_ids);
                    const auto pop = recommend_popularity(u, k, counts);
                    add("Popularity-Based", pop.item_ids);
                    const auto off = recommend_personalized(
                        u, k, false, h, engine, derive_seed(cfg.seed, "off", k, h, u.id));
                    add("Exploration Off", off.item_ids);
                    const auto on = recommend_personalized(
                        u, k, true, h, engine, derive_seed(cfg.seed, "on", k, h, u.id));
                    add("Exploration On", on.item_ids);

                    AbInput ab;
                    ab.user = u.id;
                    ab.k = k;
                    ab.h = h;
                    ab.items_off = off.item_ids;
                    ab.items_on = on.item_ids;
                    for (ItemId id : off.item_ids) ab.titles_off.push_back(item_index.at(id).title);
                    for (ItemId id : on.item_ids) ab.titles_on.push_back(item_index.at(id).title);
                    const std::size_t window =
                        std::min<std::size_t>(static_cast<std::size_t>(h), u.history.size());
                    for (std::size_t j = u.history.size() - window; j < u.history.size(); ++j) {
                        ab.history_titles.push_back(item_index.at(u.history[j].second).title);
                    }
                    out.ab = std::move(ab);
                });
                return 0;
            });
            for (const auto& out : outs) {
                samples.insert(samples.end(), out.samples.begin(), out.samples.end());
            }

            const AbSummary ab = detail::stage("abtest", [&] {
                std::vector<AbInput> inputs;
                inputs.reserve(outs.size());
                for (const auto& out : outs) inputs.push_back(out.ab);
                return run_ab_test(inputs, *judge, derive_seed(cfg.seed, "ab", k, h),
                                   cfg.judge_parallelism);
            });
            all_trials.insert(all_trials.end(), ab.trials.begin(), ab.trials.end());
            if (ab.n_invalid > 0 || !ab.pct_on) {
                say("warning: A/B block k=" + std::to_string(k) + " h=" + std::to_string(h) +
                    ": " + std::to_string(ab.n_invalid) + " invalid verdicts" +
                    (ab.pct_on ? "" : "; all verdicts invalid, percentages undefined"));
            }
            result.ab.emplace(std::make_pair(k, h), ab);
            say("block k=" + std::to_string(k) + " h=" + std::to_string(h) + ": done");
        }
    }

    // Aggregate and attach A/B percentages to the exploration rows.
    std::ostringstream warnings;
    result.rows = detail::stage("aggregate", [&] {
        auto rows = aggregate_report(samples, label_order, &warnings);
        for (auto& row : rows) {
            const auto it = result.ab.find({row.k, row.h});
            if (it == result.ab.end()) continue;
            if (row.label == "Exploration On") row.ab_pref_pct = it->second.pct_on;
            if (row.label == "Exploration Off") row.ab_pref_pct = it->second.pct_off;
        }
        return rows;
    });
    if (log && !warnings.str().empty()) *log << warnings.str();
    result.final_threshold = engine.threshold();
    result.n_clusters = engine.clusters().size();

    // Emit the report files. Failures name what was already written.
    detail::stage("write", [&] {
        namespace fs = std::filesystem;
        fs::create_directories(cfg.out_dir);
        const auto emit = [&](const std::string& name,
                              const std::function<void(std::ostream&)>& writer) {
            const std::string path = (fs::path(cfg.out_dir) / name).string();
            std::ofstream out(path, std::ios::binary);
            if (!out) {
                std::string partial;
                for (const auto& p : result.written) partial += (partial.empty() ? "" : ", ") + p;
                throw ExperimentError("cannot write " + path +
                                      (partial.empty() ? "" : "; partial outputs: " + partial));
            }
            writer(out);
            result.written.push_back(path);
        };
        emit("report.csv", [&](std::ostream& os) { write_report_csv(result.rows, os); });
        emit("report.txt", [&](std::ostream& os) {
            write_report_table(result.rows, os);
            os << "\n";
            for (const auto& [kh, ab] : result.ab) {
                os << "A/B block k=" << kh.first << " h=" << kh.second << ": " << ab.n_on
                   << " prefer exploration on, " << ab.n_off << " off, " << ab.n_invalid
                   << " invalid" << (ab.pct_on ? "" : " (all invalid; percentages undefined)")
                   << "\n";
            }
            if (!warnings.str().empty()) os << "\n" << warnings.str();
        });
        emit("trials.jsonl", [&](std::ostream& os) { write_trials_jsonl(os, all_trials); });
        emit("clusters.json", [&](std::ostream& os) { os << engine.to_json().dump(2) << "\n"; });
        emit("config.resolved", [&](std::ostream& os) { os << config_to_string(cfg); });
        return 0;
    });
    return result;
}

}  // namespace explora
