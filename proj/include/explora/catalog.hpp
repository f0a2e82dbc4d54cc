#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "explora/clustering.hpp"
#include "explora/csv.hpp"
#include "explora/embedding.hpp"
#include "explora/rng.hpp"

namespace explora {

class CatalogError : public std::runtime_error {
public:
    explicit CatalogError(const std::string& msg) : std::runtime_error(msg) {}
};

struct Item {
    ItemId id = 0;
    std::string title;
    std::vector<std::string> tags;  // genres, tags, keywords
    std::string description;        // may be empty
};

struct Rating {
    UserId user = 0;
    ItemId item = 0;
    double value = 0.0;
    std::int64_t timestamp = 0;
};

struct UserProfile {
    UserId id = 0;
    std::vector<std::string> prefs;                   // declared interest keywords
    std::vector<std::pair<int, ItemId>> history;      // (cluster, item), oldest first
    std::set<ItemId> watched;                         // blocks re-recommendation
};

/// "title. tag1, tag2. description" with empty parts skipped.
inline std::string build_item_text(const Item& item) {
    std::string out = item.title;
    if (!item.tags.empty()) {
        std::string joined;
        for (const auto& t : item.tags) {
            if (!joined.empty()) joined += ", ";
            joined += t;
        }
        if (!out.empty()) out += ". ";
        out += joined;
    }
    if (!item.description.empty()) {
        if (!out.empty()) out += ". ";
        out += item.description;
    }
    return out;
}

namespace detail {

inline std::size_t require_column(const std::vector<std::string>& header, const std::string& name,
                                  const std::string& path) {
    for (std::size_t i = 0; i < header.size(); ++i) {
        std::string h = header[i];
        // strip a UTF-8 BOM on the first column
        if (h.rfind("\xEF\xBB\xBF", 0) == 0) h = h.substr(3);
        if (h == name) return i;
    }
    throw CatalogError(path + ": missing required column '" + name + "'");
}

inline std::int64_t parse_int(const std::string& s, const std::string& what, std::size_t row,
                              const std::string& path) {
    try {
        std::size_t used = 0;
        const std::int64_t v = std::stoll(s, &used);
        if (used != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw CatalogError(path + ": row " + std::to_string(row) + ": bad " + what + " '" + s +
                           "'");
    }
}

inline double parse_double(const std::string& s, const std::string& what, std::size_t row,
                           const std::string& path) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw CatalogError(path + ": row " + std::to_string(row) + ": bad " + what + " '" + s +
                           "'");
    }
}

}  // namespace detail

// movies.csv: movieId,title,genres with genres pipe-separated and the
// "(no genres listed)" sentinel mapping to an empty tag list.
inline std::vector<Item> load_movielens_movies(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CatalogError("cannot open " + path);
    CsvReader csv(in);
    std::vector<std::string> row;
    if (!csv.read_row(row)) throw CatalogError(path + ": empty file (no header)");
    const auto id_col = detail::require_column(row, "movieId", path);
    const auto title_col = detail::require_column(row, "title", path);
    const auto genres_col = detail::require_column(row, "genres", path);

    std::vector<Item> items;
    std::unordered_set<ItemId> seen;
    while (csv.read_row(row)) {
        if (row.size() == 1 && row[0].empty()) continue;  // trailing blank line
        if (row.size() <= std::max({id_col, title_col, genres_col})) {
            throw CatalogError(path + ": row " + std::to_string(csv.row_number()) +
                               ": expected at least " +
                               std::to_string(std::max({id_col, title_col, genres_col}) + 1) +
                               " fields, got " + std::to_string(row.size()));
        }
        Item item;
        item.id = detail::parse_int(row[id_col], "movieId", csv.row_number(), path);
        item.title = row[title_col];
        if (item.title.empty()) {
            throw CatalogError(path + ": row " + std::to_string(csv.row_number()) +
                               ": empty title");
        }
        if (!seen.insert(item.id).second) {
            throw CatalogError(path + ": row " + std::to_string(csv.row_number()) +
                               ": duplicate movieId " + std::to_string(item.id));
        }
        const std::string& genres = row[genres_col];
        if (!genres.empty() && genres != "(no genres listed)") {
            std::size_t start = 0;
            while (start <= genres.size()) {
                const auto bar = genres.find('|', start);
                const auto end = bar == std::string::npos ? genres.size() : bar;
                if (end > start) item.tags.push_back(genres.substr(start, end - start));
                if (bar == std::string::npos) break;
                start = bar + 1;
            }
        }
        items.push_back(std::move(item));
    }
    return items;
}

// ratings.csv: userId,movieId,rating,timestamp. Streamed row by row; the
// optional filter keeps memory proportional to the rows actually wanted.
inline std::vector<Rating> load_movielens_ratings(
    const std::string& path, const std::unordered_set<ItemId>* keep_items = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CatalogError("cannot open " + path);
    CsvReader csv(in);
    std::vector<std::string> row;
    if (!csv.read_row(row)) throw CatalogError(path + ": empty file (no header)");
    const auto user_col = detail::require_column(row, "userId", path);
    const auto item_col = detail::require_column(row, "movieId", path);
    const auto rating_col = detail::require_column(row, "rating", path);
    const auto ts_col = detail::require_column(row, "timestamp", path);

    std::vector<Rating> ratings;
    while (csv.read_row(row)) {
        if (row.size() == 1 && row[0].empty()) continue;
        if (row.size() <= std::max({user_col, item_col, rating_col, ts_col})) {
            throw CatalogError(path + ": row " + std::to_string(csv.row_number()) +
                               ": too few fields (" + std::to_string(row.size()) + ")");
        }
        Rating r;
        r.user = detail::parse_int(row[user_col], "userId", csv.row_number(), path);
        r.item = detail::parse_int(row[item_col], "movieId", csv.row_number(), path);
        r.value = detail::parse_double(row[rating_col], "rating", csv.row_number(), path);
        r.timestamp = detail::parse_int(row[ts_col], "timestamp", csv.row_number(), path);
        if (keep_items && !keep_items->count(r.item)) continue;
        ratings.push_back(r);
    }
    return ratings;
}

// Stratified sample of n items by primary (first-listed) genre. Each
// stratum gets floor(n * share) slots, leftovers go by largest remainder,
// picks within a stratum are uniform without replacement. Deterministic
// per seed.
inline std::vector<Item> sample_items(const std::vector<Item>& items, std::size_t n,
                                      std::uint64_t seed) {
    if (n == 0) throw CatalogError("sample_items: n must be positive");
    if (n >= items.size()) return items;

    std::map<std::string, std::vector<std::size_t>> strata;  // genre -> item indices
    for (std::size_t i = 0; i < items.size(); ++i) {
        const std::string genre = items[i].tags.empty() ? "" : items[i].tags.front();
        strata[genre].push_back(i);
    }

    const double total = static_cast<double>(items.size());
    std::vector<std::pair<std::string, std::size_t>> quota;  // genre -> slots
    std::vector<std::pair<double, std::string>> remainders;
    std::size_t assigned = 0;
    for (const auto& [genre, members] : strata) {
        const double exact = static_cast<double>(n) * static_cast<double>(members.size()) / total;
        const auto base = static_cast<std::size_t>(exact);
        quota.emplace_back(genre, base);
        assigned += base;
        remainders.emplace_back(exact - static_cast<double>(base), genre);
    }
    // Largest remainder first; ties broken by genre name for determinism.
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (std::size_t i = 0; assigned < n && i < remainders.size(); ++i) {
        for (auto& [genre, slots] : quota) {
            if (genre == remainders[i].second) {
                ++slots;
                ++assigned;
                break;
            }
        }
    }

    std::vector<Item> out;
    out.reserve(n);
    for (const auto& [genre, slots] : quota) {
        if (slots == 0) continue;
        Rng rng(derive_seed(seed, "sample_items", genre));
        for (std::size_t idx : sample_without_replacement(strata.at(genre), slots, rng))
            out.push_back(items[idx]);
    }
    std::sort(out.begin(), out.end(), [](const Item& a, const Item& b) { return a.id < b.id; });
    return out;
}

// Builds user profiles from positive ratings (value >= watch_rating_min)
// on items inside the sampled subset. Eligible users have at least
// history_len qualifying ratings; n_users of them are chosen uniformly by
// seed. Each history holds the user's history_len most recent qualifying
// items, oldest first, with cluster ids resolved against the engine.
inline std::vector<UserProfile> build_user_histories(const std::vector<Rating>& ratings,
                                                     const std::unordered_set<ItemId>& subset,
                                                     const ClusterEngine& clustering,
                                                     std::size_t n_users, std::size_t history_len,
                                                     double watch_rating_min, std::uint64_t seed) {
    if (n_users == 0) throw CatalogError("build_user_histories: n_users must be positive");
    if (history_len == 0) throw CatalogError("build_user_histories: history length must be positive");

    std::map<UserId, std::vector<Rating>> qualifying;
    for (const Rating& r : ratings) {
        if (r.value >= watch_rating_min && subset.count(r.item)) qualifying[r.user].push_back(r);
    }
    std::vector<UserId> eligible;
    for (const auto& [user, rows] : qualifying) {
        if (rows.size() >= history_len) eligible.push_back(user);
    }
    if (eligible.size() < n_users) {
        throw CatalogError("build_user_histories: only " + std::to_string(eligible.size()) +
                           " users have >= " + std::to_string(history_len) +
                           " qualifying ratings, need " + std::to_string(n_users) + " (short by " +
                           std::to_string(n_users - eligible.size()) + ")");
    }

    Rng rng(derive_seed(seed, "select_users"));
    std::vector<UserId> chosen = sample_without_replacement(eligible, n_users, rng);
    std::sort(chosen.begin(), chosen.end());

    std::vector<UserProfile> users;
    users.reserve(chosen.size());
    for (UserId uid : chosen) {
        auto& rows = qualifying.at(uid);
        std::sort(rows.begin(), rows.end(), [](const Rating& a, const Rating& b) {
            if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
            return a.item < b.item;
        });
        UserProfile profile;
        profile.id = uid;
        for (std::size_t i = rows.size() - history_len; i < rows.size(); ++i) {
            const ItemId item = rows[i].item;
            const auto cluster = clustering.cluster_of(item);
            if (!cluster) {
                throw CatalogError("build_user_histories: item " + std::to_string(item) +
                                   " is not clustered");
            }
            profile.history.emplace_back(*cluster, item);
            profile.watched.insert(item);
        }
        users.push_back(std::move(profile));
    }
    return users;
}

// The n most frequent tags across a user's history items; ties favor the
// alphabetically smaller tag. Stands in for self-declared interests when
// profiles are simulated.
inline std::vector<std::string> derive_pref_keywords(const UserProfile& user,
                                                     const std::map<ItemId, Item>& items,
                                                     std::size_t n) {
    std::map<std::string, std::size_t> counts;
    for (const auto& [cluster, item] : user.history) {
        auto it = items.find(item);
        if (it == items.end()) continue;
        for (const auto& tag : it->second.tags) ++counts[tag];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < ranked.size() && i < n; ++i) out.push_back(ranked[i].first);
    return out;
}

struct Catalog {
    std::map<ItemId, Item> items;
    EmbeddingMap embeddings;
    std::vector<UserProfile> users;

    nlohmann::json to_json() const {
        nlohmann::json jitems = nlohmann::json::array();
        for (const auto& [id, item] : items) {
            jitems.push_back({{"id", id},
                              {"title", item.title},
                              {"tags", item.tags},
                              {"description", item.description}});
        }
        nlohmann::json jusers = nlohmann::json::array();
        for (const auto& u : users) {
            nlohmann::json history = nlohmann::json::array();
            for (const auto& [cluster, item] : u.history)
                history.push_back({{"cluster", cluster}, {"item", item}});
            jusers.push_back({{"id", u.id},
                              {"prefs", u.prefs},
                              {"history", history},
                              {"watched", std::vector<ItemId>(u.watched.begin(), u.watched.end())}});
        }
        return {{"items", jitems}, {"users", jusers}};
    }
};

}  // namespace explora
