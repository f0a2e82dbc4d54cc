#pragma once

#include <atomic>
#include <cctype>
#include <cstdint>
#include <optional>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "explora/embedding.hpp"
#include "explora/rng.hpp"

namespace explora {

class AbTestError : public std::runtime_error {
public:
    explicit AbTestError(const std::string& msg) : std::runtime_error(msg) {}
};

// Stamped into every trial log line so replies can be traced to the exact
// prompt wording that produced them.
inline constexpr const char* kPromptVersion = "ab-prompt-v1";

enum class Verdict { Off, On, Invalid };

inline const char* verdict_name(Verdict v) {
    switch (v) {
        case Verdict::Off: return "off";
        case Verdict::On: return "on";
        case Verdict::Invalid: return "invalid";
    }
    return "?";
}

enum class JudgeKind { Stub, HttpChat };

struct JudgeConfig {
    JudgeKind kind = JudgeKind::Stub;
    std::string endpoint;
    std::string model = "judge-model";
    double temperature = 0.4;
    int max_retries = 2;
    int timeout_s = 30;
    std::string reply_path = "choices[0].message.content";
    std::string api_key_env;
    int parallelism = 4;
};

/// Deterministic pairwise-preference prompt: persona from the user's
/// recent watch history, both candidate sets, and an instruction to
/// answer with exactly A or B.
inline std::string build_prompt(const std::vector<std::string>& history_titles,
                                const std::vector<std::string>& a_titles,
                                const std::vector<std::string>& b_titles) {
    if (a_titles.empty() || b_titles.empty()) {
        throw AbTestError("build_prompt: both recommendation sets must be non-empty");
    }
    std::string p;
    p += "You are a movie viewer choosing what to watch next.";
    if (!history_titles.empty()) {
        p += " You recently watched: ";
        for (std::size_t i = 0; i < history_titles.size(); ++i) {
            if (i) p += "; ";
            p += history_titles[i];
        }
        p += ".";
    }
    p += "\n\nTwo recommendation sets are offered.\n\nSet A:\n";
    for (std::size_t i = 0; i < a_titles.size(); ++i) {
        p += std::to_string(i + 1) + ". " + a_titles[i] + "\n";
    }
    p += "\nSet B:\n";
    for (std::size_t i = 0; i < b_titles.size(); ++i) {
        p += std::to_string(i + 1) + ". " + b_titles[i] + "\n";
    }
    p += "\nConsidering your personal taste and how watchable each set feels, which set do you "
         "find more appealing? Answer with exactly one letter: A or B.";
    return p;
}

/// First standalone "A" or "B" in the reply (neighbors must not be
/// alphanumeric), so phrasing like "I would pick B because..." parses.
inline std::optional<char> parse_verdict(const std::string& reply) {
    for (std::size_t i = 0; i < reply.size(); ++i) {
        const char c = reply[i];
        if (c != 'A' && c != 'B') continue;
        const bool left_ok =
            i == 0 || !std::isalnum(static_cast<unsigned char>(reply[i - 1]));
        const bool right_ok = i + 1 == reply.size() ||
                              !std::isalnum(static_cast<unsigned char>(reply[i + 1]));
        if (left_ok && right_ok) return c;
    }
    return std::nullopt;
}

/// Map a parsed label back through the recorded presentation order.
/// Flipping the assignment flips the verdict by construction.
inline Verdict map_verdict(std::optional<char> label, bool on_is_a) {
    if (!label) return Verdict::Invalid;
    const bool picked_a = (*label == 'A');
    return picked_a == on_is_a ? Verdict::On : Verdict::Off;
}

// Mean Jaccard overlap between the token sets of all title pairs; 0 for
// fewer than two titles. The stub judge uses it as a diversity proxy.
inline double mean_pairwise_token_overlap(const std::vector<std::string>& titles) {
    if (titles.size() < 2) return 0.0;
    std::vector<std::set<std::string>> toks;
    toks.reserve(titles.size());
    for (const auto& t : titles) {
        const auto v = tokenize_lower(t);
        toks.emplace_back(v.begin(), v.end());
    }
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < toks.size(); ++i) {
        for (std::size_t j = i + 1; j < toks.size(); ++j) {
            std::size_t inter = 0;
            for (const auto& w : toks[i]) inter += toks[j].count(w);
            const std::size_t uni = toks[i].size() + toks[j].size() - inter;
            total += uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
            ++pairs;
        }
    }
    return total / static_cast<double>(pairs);
}

// A judge sees the rendered prompt plus the raw title lists and returns
// the raw reply text. Implementations must be safe to call concurrently.
class Judge {
public:
    virtual ~Judge() = default;
    virtual std::string reply(const std::string& prompt, const std::vector<std::string>& a_titles,
                              const std::vector<std::string>& b_titles) const = 0;
    virtual const char* name() const = 0;
};

// Offline stand-in for an LLM judge: prefers the set whose titles share
// fewer tokens (lower mean pairwise overlap), ties to B. Exists so the
// pipeline is testable without a model; its verdict direction carries no
// scientific weight.
class StubJudge : public Judge {
public:
    std::string reply(const std::string&, const std::vector<std::string>& a_titles,
                      const std::vector<std::string>& b_titles) const override {
        return mean_pairwise_token_overlap(a_titles) < mean_pairwise_token_overlap(b_titles)
                   ? "A"
                   : "B";
    }
    const char* name() const override { return "stub"; }
};

struct AbTrial {
    UserId user = 0;
    int k = 0;
    int h = 0;
    std::vector<ItemId> items_off;
    std::vector<ItemId> items_on;
    bool on_is_a = false;
    std::optional<char> raw_label;
    Verdict verdict = Verdict::Invalid;
    std::string raw_reply;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["user"] = user;
        j["k"] = k;
        j["h"] = h;
        j["items_off"] = items_off;
        j["items_on"] = items_on;
        j["on_is_a"] = on_is_a;
        j["raw_label"] = raw_label ? nlohmann::json(std::string(1, *raw_label))
                                   : nlohmann::json(nullptr);
        j["verdict"] = verdict_name(verdict);
        j["raw_reply"] = raw_reply;
        j["prompt_version"] = kPromptVersion;
        return j;
    }
};

// One user's off-vs-on comparison, ready for presentation.
struct AbInput {
    UserId user = 0;
    int k = 0;
    int h = 0;
    std::vector<ItemId> items_off;
    std::vector<ItemId> items_on;
    std::vector<std::string> titles_off;
    std::vector<std::string> titles_on;
    std::vector<std::string> history_titles;
};

struct AbSummary {
    std::size_t n_on = 0;
    std::size_t n_off = 0;
    std::size_t n_invalid = 0;
    std::optional<double> pct_on;   // over valid verdicts only
    std::optional<double> pct_off;
    std::vector<AbTrial> trials;    // input order
};

namespace detail {

inline AbTrial run_one_trial(const AbInput& in, const Judge& judge, std::uint64_t base_seed) {
    AbTrial t;
    t.user = in.user;
    t.k = in.k;
    t.h = in.h;
    t.items_off = in.items_off;
    t.items_on = in.items_on;
    Rng rng(derive_seed(base_seed, "ab_assign", in.user));
    t.on_is_a = rng.below(2) == 0;
    const auto& a = t.on_is_a ? in.titles_on : in.titles_off;
    const auto& b = t.on_is_a ? in.titles_off : in.titles_on;
    try {
        const std::string prompt = build_prompt(in.history_titles, a, b);
        t.raw_reply = judge.reply(prompt, a, b);
        t.raw_label = parse_verdict(t.raw_reply);
    } catch (const std::exception& e) {
        t.raw_reply = std::string("error: ") + e.what();
        t.raw_label = std::nullopt;
    }
    t.verdict = map_verdict(t.raw_label, t.on_is_a);
    return t;
}

}  // namespace detail

// Presentation order is randomized per user from the seed and recorded
// before the judge call. Trials run concurrently up to `parallelism`;
// per-trial seeds depend only on (seed, user), so the schedule cannot
// change any result. Invalid verdicts are excluded from the percentages.
inline AbSummary run_ab_test(const std::vector<AbInput>& inputs, const Judge& judge,
                             std::uint64_t seed, int parallelism = 1) {
    AbSummary sum;
    sum.trials.resize(inputs.size());
    const std::size_t n_threads =
        std::min<std::size_t>(std::max(parallelism, 1), inputs.empty() ? 1 : inputs.size());
    if (n_threads <= 1) {
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            sum.trials[i] = detail::run_one_trial(inputs[i], judge, seed);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> workers;
        workers.reserve(n_threads);
        for (std::size_t w = 0; w < n_threads; ++w) {
            workers.emplace_back([&] {
                for (;;) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= inputs.size()) return;
                    sum.trials[i] = detail::run_one_trial(inputs[i], judge, seed);
                }
            });
        }
        for (auto& w : workers) w.join();
    }
    for (const auto& t : sum.trials) {
        switch (t.verdict) {
            case Verdict::On: ++sum.n_on; break;
            case Verdict::Off: ++sum.n_off; break;
            case Verdict::Invalid: ++sum.n_invalid; break;
        }
    }
    const std::size_t valid = sum.n_on + sum.n_off;
    if (valid > 0) {
        sum.pct_on = 100.0 * static_cast<double>(sum.n_on) / static_cast<double>(valid);
        sum.pct_off = 100.0 * static_cast<double>(sum.n_off) / static_cast<double>(valid);
    }
    return sum;
}

inline void write_trials_jsonl(std::ostream& os, const std::vector<AbTrial>& trials) {
    for (const auto& t : trials) os << t.to_json().dump() << "\n";
}

}  // namespace explora
