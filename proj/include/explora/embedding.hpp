#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "explora/rng.hpp"

namespace explora {

using ItemId = std::int64_t;
using UserId = std::int64_t;
using Embedding = std::vector<double>;
using EmbeddingMap = std::unordered_map<ItemId, Embedding>;

class EmbeddingError : public std::runtime_error {
public:
    explicit EmbeddingError(const std::string& msg) : std::runtime_error(msg) {}
};

// Transport failures that a caller may retry (service unreachable, non-200).
class RetryableError : public EmbeddingError {
public:
    explicit RetryableError(const std::string& msg) : EmbeddingError(msg) {}
};

inline double dot(const Embedding& a, const Embedding& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const Embedding& a) { return std::sqrt(dot(a, a)); }

/// Cosine similarity in [-1, 1]. Throws on dimension mismatch or a
/// zero-norm operand. Exactly symmetric: the summation order of
/// dot(a, b) is identical to dot(b, a).
inline double cosine_similarity(const Embedding& a, const Embedding& b) {
    if (a.size() != b.size()) {
        throw EmbeddingError("cosine_similarity: dimension mismatch (" +
                             std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    }
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) {
        throw EmbeddingError("cosine_similarity: zero-norm vector");
    }
    return dot(a, b) / (na * nb);
}

inline Embedding normalized(const Embedding& a) {
    const double n = norm(a);
    if (n == 0.0) throw EmbeddingError("normalized: zero-norm vector");
    Embedding out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] / n;
    return out;
}

inline Embedding mean_embedding(const std::vector<Embedding>& vs) {
    if (vs.empty()) throw EmbeddingError("mean_embedding: no vectors");
    Embedding out(vs.front().size(), 0.0);
    for (const auto& v : vs) {
        if (v.size() != out.size()) throw EmbeddingError("mean_embedding: dimension mismatch");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
    }
    for (auto& x : out) x /= static_cast<double>(vs.size());
    return out;
}

inline std::vector<std::string> tokenize_lower(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) tokens.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual Embedding embed(const std::string& text) = 0;
    virtual std::size_t dim() const = 0;
};

// Offline bag-of-tokens embedder: each token hashes to a reproducible
// pseudo-random unit vector; the text embedding is their mean,
// renormalized. A pure function of the token multiset (tokens are sorted
// before accumulation, so even float summation order is fixed).
class DeterministicEmbedder : public EmbeddingProvider {
public:
    explicit DeterministicEmbedder(std::size_t dim = 384) : dim_(dim) {
        if (dim_ == 0) throw EmbeddingError("DeterministicEmbedder: dim must be positive");
    }

    Embedding embed(const std::string& text) override {
        auto tokens = tokenize_lower(text);
        if (tokens.empty()) throw EmbeddingError("embed: empty text");
        std::sort(tokens.begin(), tokens.end());
        Embedding acc(dim_, 0.0);
        for (const auto& tok : tokens) {
            const Embedding tv = token_vector(tok);
            for (std::size_t i = 0; i < dim_; ++i) acc[i] += tv[i];
        }
        for (auto& x : acc) x /= static_cast<double>(tokens.size());
        return normalized(acc);
    }

    std::size_t dim() const override { return dim_; }

    Embedding token_vector(const std::string& token) const {
        Rng rng(fnv1a64(token));
        Embedding v(dim_);
        for (auto& x : v) x = rng.gaussian();
        return normalized(v);
    }

private:
    std::size_t dim_;
};

/// Reads `item_id<TAB>f1,f2,...,fd` records, one per line. Lines starting
/// with '#' and blank lines are skipped. All vectors must share one
/// dimension and ids must be unique; violations name the line and id.
inline std::map<ItemId, Embedding> load_embeddings(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw EmbeddingError("load_embeddings: cannot open " + path);
    std::map<ItemId, Embedding> out;
    std::string line;
    std::size_t line_no = 0;
    std::size_t dim = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw EmbeddingError("load_embeddings: line " + std::to_string(line_no) +
                                 ": missing tab separator");
        }
        ItemId id = 0;
        try {
            std::size_t used = 0;
            id = std::stoll(line.substr(0, tab), &used);
            if (used != tab) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw EmbeddingError("load_embeddings: line " + std::to_string(line_no) +
                                 ": bad item id '" + line.substr(0, tab) + "'");
        }
        if (out.count(id)) {
            throw EmbeddingError("load_embeddings: line " + std::to_string(line_no) +
                                 ": duplicate id " + std::to_string(id));
        }
        Embedding v;
        std::stringstream ss(line.substr(tab + 1));
        std::string field;
        while (std::getline(ss, field, ',')) {
            try {
                std::size_t used = 0;
                v.push_back(std::stod(field, &used));
                while (used < field.size() &&
                       std::isspace(static_cast<unsigned char>(field[used])))
                    ++used;
                if (used != field.size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw EmbeddingError("load_embeddings: line " + std::to_string(line_no) +
                                     ": bad float '" + field + "'");
            }
        }
        if (v.empty()) {
            throw EmbeddingError("load_embeddings: line " + std::to_string(line_no) +
                                 ": empty vector");
        }
        for (double x : v) {
            if (!std::isfinite(x)) {
                throw EmbeddingError("load_embeddings: line " + std::to_string(line_no) +
                                     ": non-finite entry for id " + std::to_string(id));
            }
        }
        if (dim == 0) {
            dim = v.size();
        } else if (v.size() != dim) {
            throw EmbeddingError("load_embeddings: line " + std::to_string(line_no) +
                                 ": id " + std::to_string(id) + " has dimension " +
                                 std::to_string(v.size()) + ", expected " + std::to_string(dim));
        }
        out.emplace(id, std::move(v));
    }
    return out;
}

enum class SourceKind { File, HttpService, DeterministicTest };

// A source of embeddings with an observable cache: any id or text queried
// more than once returns byte-identical vectors. File sources can only
// serve what was preloaded (items from disk, texts injected via
// put_text); free-text queries against them fail loudly.
class EmbeddingSource {
public:
    static EmbeddingSource deterministic(std::size_t dim = 384) {
        EmbeddingSource s(SourceKind::DeterministicTest, "");
        s.provider_ = std::make_shared<DeterministicEmbedder>(dim);
        return s;
    }

    static EmbeddingSource from_file(const std::string& path) {
        EmbeddingSource s(SourceKind::File, path);
        for (auto& [id, v] : load_embeddings(path)) s.item_cache_.emplace(id, std::move(v));
        return s;
    }

    static EmbeddingSource from_map(EmbeddingMap vectors) {
        EmbeddingSource s(SourceKind::File, "<memory>");
        s.item_cache_ = std::move(vectors);
        return s;
    }

    // Declared in http.hpp (needs the HTTP client).
    static EmbeddingSource from_http(const std::string& base_url, int timeout_s = 30,
                                     int max_retries = 3);

    SourceKind kind() const { return kind_; }
    const std::string& location() const { return location_; }

    Embedding embed_text(const std::string& text) {
        if (text.empty() || tokenize_lower(text).empty()) {
            throw EmbeddingError("embed_text: empty text");
        }
        auto it = text_cache_.find(text);
        if (it != text_cache_.end()) return it->second;
        if (!provider_) {
            throw EmbeddingError("embed_text: file source has no embedding for text '" + text +
                                 "'; configure an http or test source for free-text queries");
        }
        Embedding v = provider_->embed(text);
        text_cache_.emplace(text, v);
        return v;
    }

    // Vector for an item, computing (and caching) from its text on a miss.
    const Embedding& item_vector(ItemId id, const std::string& text) {
        auto it = item_cache_.find(id);
        if (it != item_cache_.end()) return it->second;
        if (!provider_) {
            throw EmbeddingError("item_vector: no vector for item " + std::to_string(id) +
                                 " in file source");
        }
        auto [pos, inserted] = item_cache_.emplace(id, embed_text(text));
        (void)inserted;
        return pos->second;
    }

    bool has_item(ItemId id) const { return item_cache_.count(id) != 0; }
    const EmbeddingMap& item_cache() const { return item_cache_; }
    const std::shared_ptr<EmbeddingProvider>& provider() const { return provider_; }

    void put_text(const std::string& text, Embedding v) { text_cache_[text] = std::move(v); }
    void put_item(ItemId id, Embedding v) { item_cache_[id] = std::move(v); }

private:
    EmbeddingSource(SourceKind kind, std::string location)
        : kind_(kind), location_(std::move(location)) {}

    friend class HttpEmbedder;  // from_http fills provider_
    static EmbeddingSource with_provider(SourceKind kind, std::string location,
                                         std::shared_ptr<EmbeddingProvider> p) {
        EmbeddingSource s(kind, std::move(location));
        s.provider_ = std::move(p);
        return s;
    }

    SourceKind kind_;
    std::string location_;
    std::shared_ptr<EmbeddingProvider> provider_;
    std::unordered_map<std::string, Embedding> text_cache_;
    EmbeddingMap item_cache_;
};

}  // namespace explora
