#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

namespace explora {

// 64-bit FNV-1a. Used for token hashing and seed derivation; must stay
// stable across platforms and releases, so we do not rely on std::hash.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
    // splitmix64 finalizer over the xor; good avalanche, cheap.
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h += 0x9e3779b97f4a7c15ULL;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
    return h ^ (h >> 31);
}

// Derive an independent stream seed from a base seed plus any mix of
// integer/string parts, e.g. derive_seed(seed, "explore", user_id, k).
inline std::uint64_t derive_seed(std::uint64_t base) { return base; }

template <typename T, typename... Rest>
std::uint64_t derive_seed(std::uint64_t base, const T& part, const Rest&... rest) {
    std::uint64_t v;
    if constexpr (std::is_convertible_v<T, std::string_view>) {
        v = fnv1a64(std::string_view(part));
    } else {
        v = static_cast<std::uint64_t>(part);
    }
    return derive_seed(hash_combine(base, v), rest...);
}

// Seeded random stream. mt19937_64 output is fully specified by the
// standard; the distributions below are hand-rolled because the std
// distribution algorithms are implementation-defined, and experiment
// outputs must be byte-reproducible everywhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1).
    double next_unit() { return (gen_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, bound). Rejection sampling, no modulo bias.
    std::uint64_t below(std::uint64_t bound) {
        if (bound <= 1) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t v = gen_();
        while (v >= limit) v = gen_();
        return v % bound;
    }

    // Standard normal via Box-Muller, one spare cached.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = next_unit(), u2 = next_unit();
        while (u1 <= 0.0) u1 = next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = 0; i + 1 < v.size(); ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(v.size() - i));
        using std::swap;
        swap(v[i], v[j]);
    }
}

// k distinct elements, uniform without replacement, in draw order.
template <typename T>
std::vector<T> sample_without_replacement(std::vector<T> pool, std::size_t k, Rng& rng) {
    if (k > pool.size()) k = pool.size();
    std::vector<T> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
        using std::swap;
        swap(pool[i], pool[j]);
        out.push_back(pool[i]);
    }
    return out;
}

// Fisher-Yates evaluated lazily: next() yields the same sequence a full
// shuffle would, but only pays for the prefix actually consumed.
template <typename T>
class LazyShuffle {
public:
    LazyShuffle(std::vector<T> pool, Rng& rng) : pool_(std::move(pool)), rng_(&rng) {}

    bool done() const { return pos_ >= pool_.size(); }

    const T& next() {
        const std::size_t j = pos_ + static_cast<std::size_t>(rng_->below(pool_.size() - pos_));
        using std::swap;
        swap(pool_[pos_], pool_[j]);
        return pool_[pos_++];
    }

private:
    std::vector<T> pool_;
    std::size_t pos_ = 0;
    Rng* rng_;
};

}  // namespace explora
