#pragma once

#include <cstdlib>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "explora/abtest.hpp"
#include "explora/embedding.hpp"

namespace explora {

namespace detail {

// "http://host:port/some/path" -> {"http://host:port", "/some/path"}
inline std::pair<std::string, std::string> split_url(const std::string& url) {
    const auto scheme = url.find("://");
    const std::size_t host_start = scheme == std::string::npos ? 0 : scheme + 3;
    const auto slash = url.find('/', host_start);
    if (slash == std::string::npos) return {url, "/"};
    return {url.substr(0, slash), url.substr(slash)};
}

inline void require_plain_http(const std::string& url, const std::string& what) {
    if (url.rfind("https://", 0) == 0) {
        throw EmbeddingError(what + ": https endpoints are not supported, use http:// (" + url +
                             ")");
    }
}

}  // namespace detail

// Client for the embedding service contract: POST {"texts": [...]} and
// read back {"embeddings": [[...], ...]} in the same order. Transport
// failures and non-200 statuses are retried, then surface as
// RetryableError; a malformed 200 body is a hard error.
class HttpEmbedder : public EmbeddingProvider {
public:
    explicit HttpEmbedder(const std::string& url, int timeout_s = 30, int max_retries = 3)
        : timeout_s_(timeout_s), max_retries_(max_retries) {
        detail::require_plain_http(url, "HttpEmbedder");
        auto [base, path] = detail::split_url(url);
        base_ = std::move(base);
        path_ = std::move(path);
    }

    Embedding embed(const std::string& text) override { return embed_batch({text}).front(); }

    std::vector<Embedding> embed_batch(const std::vector<std::string>& texts) {
        if (texts.empty()) return {};
        nlohmann::json req;
        req["texts"] = texts;
        const std::string body = req.dump();
        std::string last_err;
        for (int attempt = 0; attempt <= max_retries_; ++attempt) {
            httplib::Client cli(base_);
            cli.set_connection_timeout(timeout_s_, 0);
            cli.set_read_timeout(timeout_s_, 0);
            cli.set_write_timeout(timeout_s_, 0);
            auto res = cli.Post(path_, body, "application/json");
            if (!res) {
                last_err = "transport: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status != 200) {
                last_err = "status " + std::to_string(res->status);
                continue;
            }
            return parse_reply(res->body, texts.size());
        }
        throw RetryableError("embedding service " + base_ + path_ + " failed after " +
                             std::to_string(max_retries_ + 1) + " attempts (" + last_err + ")");
    }

    std::size_t dim() const override { return dim_; }

private:
    std::vector<Embedding> parse_reply(const std::string& body, std::size_t expected) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception& e) {
            throw EmbeddingError(std::string("embedding service returned invalid JSON: ") +
                                 e.what());
        }
        if (!j.is_object() || !j.contains("embeddings") || !j["embeddings"].is_array()) {
            throw EmbeddingError("embedding service reply lacks an \"embeddings\" array");
        }
        const auto& arr = j["embeddings"];
        if (arr.size() != expected) {
            throw EmbeddingError("embedding service returned " + std::to_string(arr.size()) +
                                 " vectors for " + std::to_string(expected) + " texts");
        }
        std::vector<Embedding> out;
        out.reserve(arr.size());
        for (const auto& row : arr) {
            if (!row.is_array() || row.empty()) {
                throw EmbeddingError("embedding service returned an empty or non-array vector");
            }
            Embedding v;
            v.reserve(row.size());
            for (const auto& x : row) {
                if (!x.is_number()) {
                    throw EmbeddingError("embedding service returned a non-numeric component");
                }
                v.push_back(x.get<double>());
            }
            if (dim_ == 0) dim_ = v.size();
            if (v.size() != dim_) {
                throw EmbeddingError("embedding service returned mixed dimensions: " +
                                     std::to_string(v.size()) + " vs " + std::to_string(dim_));
            }
            out.push_back(std::move(v));
        }
        return out;
    }

    std::string base_;
    std::string path_;
    int timeout_s_;
    int max_retries_;
    std::size_t dim_ = 0;
};

inline EmbeddingSource EmbeddingSource::from_http(const std::string& base_url, int timeout_s,
                                                  int max_retries) {
    return with_provider(SourceKind::HttpService, base_url,
                         std::make_shared<HttpEmbedder>(base_url, timeout_s, max_retries));
}

// Resolve a dotted path with optional [index] steps, e.g.
// "choices[0].message.content". Returns nullptr when any step misses.
inline const nlohmann::json* json_path_get(const nlohmann::json& root, const std::string& path) {
    const nlohmann::json* cur = &root;
    std::size_t i = 0;
    while (i < path.size()) {
        if (path[i] == '.') {
            ++i;
            continue;
        }
        if (path[i] == '[') {
            const auto close = path.find(']', i);
            if (close == std::string::npos) return nullptr;
            const std::string idx_s = path.substr(i + 1, close - i - 1);
            if (idx_s.empty() ||
                idx_s.find_first_not_of("0123456789") != std::string::npos) {
                return nullptr;
            }
            const std::size_t idx = std::stoull(idx_s);
            if (!cur->is_array() || idx >= cur->size()) return nullptr;
            cur = &(*cur)[idx];
            i = close + 1;
        } else {
            auto end = path.find_first_of(".[", i);
            if (end == std::string::npos) end = path.size();
            const std::string key = path.substr(i, end - i);
            if (!cur->is_object() || !cur->contains(key)) return nullptr;
            cur = &cur->at(key);
            i = end;
        }
    }
    return cur;
}

// Chat-completion judge. Sends {"model", "temperature", "messages":
// [{"role": "user", "content": prompt}]} and extracts the reply text at
// the configured JSON path. Retries cover transport failures, non-200
// statuses, and replies with no standalone A/B; once retries are
// exhausted the last reply text (if any) is returned for the caller to
// record as invalid, and pure transport failure throws RetryableError.
class HttpChatJudge : public Judge {
public:
    explicit HttpChatJudge(JudgeConfig cfg) : cfg_(std::move(cfg)) {
        detail::require_plain_http(cfg_.endpoint, "HttpChatJudge");
        auto [base, path] = detail::split_url(cfg_.endpoint);
        base_ = std::move(base);
        path_ = std::move(path);
    }

    std::string reply(const std::string& prompt, const std::vector<std::string>&,
                      const std::vector<std::string>&) const override {
        nlohmann::json req;
        req["model"] = cfg_.model;
        req["temperature"] = cfg_.temperature;
        req["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", prompt}}});
        const std::string body = req.dump();

        httplib::Headers headers;
        if (!cfg_.api_key_env.empty()) {
            if (const char* key = std::getenv(cfg_.api_key_env.c_str())) {
                headers.emplace("Authorization", std::string("Bearer ") + key);
            }
        }

        std::string last_err;
        std::string last_text;
        bool have_text = false;
        for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
            httplib::Client cli(base_);
            cli.set_connection_timeout(cfg_.timeout_s, 0);
            cli.set_read_timeout(cfg_.timeout_s, 0);
            cli.set_write_timeout(cfg_.timeout_s, 0);
            auto res = cli.Post(path_, headers, body, "application/json");
            if (!res) {
                last_err = "transport: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status != 200) {
                last_err = "status " + std::to_string(res->status);
                continue;
            }
            try {
                const auto j = nlohmann::json::parse(res->body);
                const auto* node = json_path_get(j, cfg_.reply_path);
                if (!node || !node->is_string()) {
                    last_err = "no text at reply path '" + cfg_.reply_path + "'";
                    continue;
                }
                last_text = node->get<std::string>();
                have_text = true;
                if (parse_verdict(last_text)) return last_text;
                last_err = "reply contained no standalone A or B";
            } catch (const nlohmann::json::exception& e) {
                last_err = std::string("invalid JSON reply: ") + e.what();
            }
        }
        if (have_text) return last_text;
        throw RetryableError("chat judge " + base_ + path_ + " failed after " +
                             std::to_string(cfg_.max_retries + 1) + " attempts (" + last_err +
                             ")");
    }

    const char* name() const override { return "http-chat"; }

private:
    JudgeConfig cfg_;
    std::string base_;
    std::string path_;
};

}  // namespace explora
