#include <explora/rng.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <vector>

using namespace explora;

TEST_CASE("derive_seed is deterministic and sensitive to every part", "[rng]") {
    const std::uint64_t a = derive_seed(1, "alpha", 5);
    CHECK(a == derive_seed(1, "alpha", 5));
    CHECK(a != derive_seed(2, "alpha", 5));
    CHECK(a != derive_seed(1, "beta", 5));
    CHECK(a != derive_seed(1, "alpha", 6));
    CHECK(derive_seed(3) == derive_seed(3));
    CHECK(derive_seed(3) != derive_seed(4));
}

TEST_CASE("identical seeds give identical streams", "[rng]") {
    Rng a(99), b(99);
    for (int i = 0; i < 200; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("below respects the bound and reaches every residue", "[rng]") {
    Rng rng(7);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 300; ++i) {
        const std::uint64_t v = rng.below(3);
        REQUIRE(v < 3);
        seen.insert(v);
    }
    CHECK(seen.size() == 3);
    for (int i = 0; i < 10; ++i) CHECK(rng.below(1) == 0);
}

TEST_CASE("next_unit stays in [0,1)", "[rng]") {
    Rng rng(13);
    for (int i = 0; i < 2000; ++i) {
        const double u = rng.next_unit();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
}

TEST_CASE("gaussian matches standard normal moments", "[rng]") {
    Rng rng(11);
    const int n = 40000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double g = rng.gaussian();
        sum += g;
        sum_sq += g * g;
    }
    const double mean = sum / n;
    const double var = sum_sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.03);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("shuffle permutes deterministically per seed", "[rng]") {
    std::vector<int> base(20);
    std::iota(base.begin(), base.end(), 0);

    std::vector<int> a = base, b = base;
    Rng ra(5), rb(5);
    shuffle(a, ra);
    shuffle(b, rb);
    CHECK(a == b);

    std::vector<int> sorted = a;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == base);

    std::vector<int> c = base;
    Rng rc(6);
    shuffle(c, rc);
    CHECK(c != a);
}

TEST_CASE("sample_without_replacement draws distinct pool members and clamps k", "[rng]") {
    const std::vector<int> pool{1, 2, 3, 4, 5, 6, 7, 8};
    Rng rng(21);
    const auto got = sample_without_replacement(pool, 5, rng);
    REQUIRE(got.size() == 5);
    const std::set<int> uniq(got.begin(), got.end());
    CHECK(uniq.size() == 5);
    for (int v : got) CHECK(std::count(pool.begin(), pool.end(), v) == 1);

    Rng rng2(21);
    CHECK(sample_without_replacement(pool, 5, rng2) == got);

    Rng rng3(4);
    const auto all = sample_without_replacement(pool, 50, rng3);
    const std::set<int> all_set(all.begin(), all.end());
    CHECK(all.size() == pool.size());
    CHECK(all_set.size() == pool.size());
}

TEST_CASE("LazyShuffle prefix equals the eager shuffle", "[rng]") {
    std::vector<int> base(26);
    std::iota(base.begin(), base.end(), 100);
    for (std::uint64_t seed : {1u, 2u, 77u}) {
        std::vector<int> eager = base;
        Rng re(seed);
        shuffle(eager, re);

        Rng rl(seed);
        LazyShuffle<int> lazy(base, rl);
        std::vector<int> drained;
        while (!lazy.done()) drained.push_back(lazy.next());
        CHECK(drained == eager);

        Rng rp(seed);
        LazyShuffle<int> partial(base, rp);
        std::vector<int> prefix;
        for (int i = 0; i < 7; ++i) prefix.push_back(partial.next());
        CHECK(prefix == std::vector<int>(eager.begin(), eager.begin() + 7));
    }
}
