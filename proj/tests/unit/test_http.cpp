#include <explora/http.hpp>

#include <catch2/catch_amalgamated.hpp>
#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

using namespace explora;

namespace {

// In-process HTTP server on an ephemeral localhost port.
struct LocalServer {
    httplib::Server svr;
    int port = 0;
    std::thread th;

    void start() {
        port = svr.bind_to_any_port("127.0.0.1");
        REQUIRE(port > 0);
        th = std::thread([this] { svr.listen_after_bind(); });
        svr.wait_until_ready();
    }

    ~LocalServer() {
        svr.stop();
        if (th.joinable()) th.join();
    }

    std::string url(const std::string& path) const {
        return "http://127.0.0.1:" + std::to_string(port) + path;
    }
};

}  // namespace

TEST_CASE("http embedder posts texts and keeps reply order", "[http]") {
    LocalServer server;
    std::atomic<int> posts{0};
    server.svr.Post("/embed", [&](const httplib::Request& req, httplib::Response& res) {
        ++posts;
        const auto j = nlohmann::json::parse(req.body);
        nlohmann::json out;
        out["embeddings"] = nlohmann::json::array();
        for (const auto& t : j.at("texts")) {
            const auto s = t.get<std::string>();
            out["embeddings"].push_back({static_cast<double>(s.size()), 1.0});
        }
        res.set_content(out.dump(), "application/json");
    });
    server.start();

    HttpEmbedder emb(server.url("/embed"), 5, 0);
    const auto vecs = emb.embed_batch({"ab", "wxyz", "q"});
    REQUIRE(vecs.size() == 3);
    CHECK(vecs[0] == Embedding{2.0, 1.0});
    CHECK(vecs[1] == Embedding{4.0, 1.0});
    CHECK(vecs[2] == Embedding{1.0, 1.0});
    CHECK(posts.load() == 1);  // one batch, one request
    CHECK(emb.dim() == 2);

    CHECK(emb.embed("hello") == Embedding{5.0, 1.0});
    CHECK(emb.embed_batch({}).empty());
    CHECK(posts.load() == 2);  // the empty batch never hits the wire
}

TEST_CASE("http embedder retries failures and then succeeds", "[http]") {
    LocalServer server;
    std::atomic<int> posts{0};
    server.svr.Post("/embed", [&](const httplib::Request&, httplib::Response& res) {
        if (++posts < 3) {
            res.status = 500;
            return;
        }
        res.set_content(R"({"embeddings": [[1.0, 2.0]]})", "application/json");
    });
    server.start();

    HttpEmbedder emb(server.url("/embed"), 5, 3);
    CHECK(emb.embed("x") == Embedding{1.0, 2.0});
    CHECK(posts.load() == 3);
}

TEST_CASE("http embedder surfaces exhausted retries as retryable", "[http]") {
    LocalServer server;
    std::atomic<int> posts{0};
    server.svr.Post("/embed", [&](const httplib::Request&, httplib::Response& res) {
        ++posts;
        res.status = 503;
    });
    server.start();

    HttpEmbedder emb(server.url("/embed"), 5, 1);
    CHECK_THROWS_MATCHES(emb.embed("x"), RetryableError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("failed after 2 attempts")));
    CHECK(posts.load() == 2);
}

TEST_CASE("malformed embedder replies are hard errors, not retried", "[http]") {
    LocalServer server;
    std::atomic<int> posts{0};
    std::string body;
    server.svr.Post("/embed", [&](const httplib::Request&, httplib::Response& res) {
        ++posts;
        res.set_content(body, "application/json");
    });
    server.start();

    HttpEmbedder emb(server.url("/embed"), 5, 3);

    body = "not json at all";
    CHECK_THROWS_AS(emb.embed("x"), EmbeddingError);
    CHECK(posts.load() == 1);

    posts = 0;
    body = R"({"vectors": [[1.0]]})";
    CHECK_THROWS_MATCHES(
        emb.embed("x"), EmbeddingError,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("embeddings")));
    CHECK(posts.load() == 1);

    posts = 0;
    body = R"({"embeddings": [[1.0], [2.0]]})";  // two vectors for one text
    CHECK_THROWS_AS(emb.embed("x"), EmbeddingError);
    CHECK(posts.load() == 1);

    posts = 0;
    body = R"({"embeddings": [[1.0, "oops"]]})";
    CHECK_THROWS_MATCHES(
        emb.embed("x"), EmbeddingError,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("non-numeric")));
    CHECK(posts.load() == 1);

    posts = 0;
    body = R"({"embeddings": [[1.0, 2.0], [3.0]]})";
    CHECK_THROWS_MATCHES(
        emb.embed_batch({"a", "b"}), EmbeddingError,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("mixed dimensions")));
    CHECK(posts.load() == 1);
}

TEST_CASE("https endpoints are rejected up front", "[http]") {
    CHECK_THROWS_MATCHES(
        HttpEmbedder("https://example.test/embed"), EmbeddingError,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("https")));
    JudgeConfig cfg;
    cfg.endpoint = "https://example.test/chat";
    CHECK_THROWS_AS(HttpChatJudge(cfg), EmbeddingError);
}

TEST_CASE("json_path_get walks keys and indices", "[http]") {
    const auto j = nlohmann::json::parse(
        R"({"choices": [{"message": {"content": "hi"}}], "grid": [[10, 20], [30]]})");

    const auto* node = json_path_get(j, "choices[0].message.content");
    REQUIRE(node != nullptr);
    CHECK(node->get<std::string>() == "hi");

    const auto* cell = json_path_get(j, "grid[1][0]");
    REQUIRE(cell != nullptr);
    CHECK(cell->get<int>() == 30);

    CHECK(json_path_get(j, "choices[1].message.content") == nullptr);
    CHECK(json_path_get(j, "missing") == nullptr);
    CHECK(json_path_get(j, "choices[x]") == nullptr);
    CHECK(json_path_get(j, "choices[0].message.content.deeper") == nullptr);
    CHECK(json_path_get(j, "choices[") == nullptr);
    CHECK(json_path_get(j, "") == &j);
}

TEST_CASE("chat judge sends the chat payload and auth header", "[http]") {
    LocalServer server;
    nlohmann::json seen_body;
    std::string seen_auth;
    server.svr.Post("/chat", [&](const httplib::Request& req, httplib::Response& res) {
        seen_body = nlohmann::json::parse(req.body);
        seen_auth = req.get_header_value("Authorization");
        res.set_content(R"({"choices": [{"message": {"content": "I pick A"}}]})",
                        "application/json");
    });
    server.start();

    setenv("EXPLORA_TEST_KEY", "sk-test-123", 1);
    JudgeConfig cfg;
    cfg.kind = JudgeKind::HttpChat;
    cfg.endpoint = server.url("/chat");
    cfg.model = "judge-model";
    cfg.api_key_env = "EXPLORA_TEST_KEY";
    HttpChatJudge judge(cfg);

    const std::string prompt = "choose a set";
    CHECK(judge.reply(prompt, {"t1"}, {"t2"}) == "I pick A");
    unsetenv("EXPLORA_TEST_KEY");

    CHECK(seen_body.at("model") == "judge-model");
    CHECK(seen_body.at("temperature").get<double>() == Catch::Approx(cfg.temperature));
    REQUIRE(seen_body.at("messages").size() == 1);
    CHECK(seen_body["messages"][0].at("role") == "user");
    CHECK(seen_body["messages"][0].at("content") == prompt);
    CHECK(seen_auth == "Bearer sk-test-123");
}

TEST_CASE("chat judge retries replies with no verdict", "[http]") {
    LocalServer server;
    std::atomic<int> posts{0};
    server.svr.Post("/chat", [&](const httplib::Request&, httplib::Response& res) {
        const char* text = (++posts < 2) ? "hmm, undecided" : "B it is";
        nlohmann::json out;
        out["choices"] = {{{"message", {{"content", text}}}}};
        res.set_content(out.dump(), "application/json");
    });
    server.start();

    JudgeConfig cfg;
    cfg.endpoint = server.url("/chat");
    cfg.max_retries = 2;
    HttpChatJudge judge(cfg);
    CHECK(judge.reply("p", {}, {}) == "B it is");
    CHECK(posts.load() == 2);
}

TEST_CASE("chat judge returns the last text when no attempt parses", "[http]") {
    LocalServer server;
    std::atomic<int> posts{0};
    server.svr.Post("/chat", [&](const httplib::Request&, httplib::Response& res) {
        ++posts;
        res.set_content(R"({"choices": [{"message": {"content": "still nothing"}}]})",
                        "application/json");
    });
    server.start();

    JudgeConfig cfg;
    cfg.endpoint = server.url("/chat");
    cfg.max_retries = 1;
    HttpChatJudge judge(cfg);

    // the caller records it as an invalid trial rather than losing the run
    const std::string text = judge.reply("p", {}, {});
    CHECK(text == "still nothing");
    CHECK(posts.load() == 2);
    CHECK(!parse_verdict(text).has_value());
}

TEST_CASE("unreachable judge endpoints become invalid trials", "[http]") {
    JudgeConfig cfg;
    cfg.endpoint = "http://127.0.0.1:9/chat";  // discard port, nothing listens
    cfg.max_retries = 0;
    cfg.timeout_s = 1;
    HttpChatJudge judge(cfg);
    CHECK_THROWS_AS(judge.reply("p", {}, {}), RetryableError);

    AbInput in;
    in.user = 1;
    in.k = 1;
    in.h = 10;
    in.items_on = {1};
    in.items_off = {2};
    in.titles_on = {"on title"};
    in.titles_off = {"off title"};
    const auto sum = run_ab_test({in}, judge, 11);
    REQUIRE(sum.trials.size() == 1);
    CHECK(sum.trials[0].verdict == Verdict::Invalid);
    CHECK(sum.trials[0].raw_reply.rfind("error: ", 0) == 0);
    CHECK(sum.n_invalid == 1);
}

TEST_CASE("http embedding source serves free text through the service", "[http]") {
    LocalServer server;
    server.svr.Post("/embed", [&](const httplib::Request& req, httplib::Response& res) {
        const auto j = nlohmann::json::parse(req.body);
        nlohmann::json out;
        out["embeddings"] = nlohmann::json::array();
        for (const auto& t : j.at("texts")) {
            const auto s = t.get<std::string>();
            out["embeddings"].push_back(
                {static_cast<double>(s.size()), static_cast<double>(s.front())});
        }
        res.set_content(out.dump(), "application/json");
    });
    server.start();

    auto src = EmbeddingSource::from_http(server.url("/embed"), 5, 0);
    const auto v = src.embed_text("query");
    CHECK(v == Embedding{5.0, static_cast<double>('q')});
    // second call is served from the cache; result must be identical
    CHECK(src.embed_text("query") == v);
}
