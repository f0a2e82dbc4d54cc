#include <explora/catalog.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "helpers.hpp"

using namespace explora;
using testutil::TempDir;

namespace {

// Engine whose clusters cover the given item ids; geometry is irrelevant
// for history building, only cluster_of lookups matter.
ClusterEngine cluster_items(const std::vector<ItemId>& ids) {
    ClusterEngine engine;
    Rng rng(99);
    for (ItemId id : ids) {
        Embedding v(4);
        for (auto& x : v) x = rng.gaussian();
        engine.insert(id, v);
    }
    return engine;
}

}  // namespace

TEST_CASE("build_item_text concatenates non-empty parts", "[catalog]") {
    CHECK(build_item_text({1, "Heat", {"Action", "Crime"}, ""}) == "Heat. Action, Crime");
    CHECK(build_item_text({2, "X", {}, ""}) == "X");
    CHECK(build_item_text({3, "T", {"a"}, "desc"}) == "T. a. desc");
    const Item item{4, "Same", {"tag"}, "text"};
    CHECK(build_item_text(item) == build_item_text(item));
}

TEST_CASE("movies loader parses MovieLens rows", "[catalog]") {
    TempDir tmp;
    const auto path = tmp.file("movies.csv",
                               "movieId,title,genres\n"
                               "1,Toy Story (1995),Adventure|Animation\n"
                               "2,\"Heat, The (1995)\",Action|Crime|Thriller\n"
                               "3,Ghost Dog,(no genres listed)\n");
    const auto items = load_movielens_movies(path.string());
    REQUIRE(items.size() == 3);
    CHECK(items[0].id == 1);
    CHECK(items[0].title == "Toy Story (1995)");
    CHECK(items[0].tags == std::vector<std::string>{"Adventure", "Animation"});
    CHECK(items[1].title == "Heat, The (1995)");
    CHECK(items[1].tags.size() == 3);
    CHECK(items[2].tags.empty());
}

TEST_CASE("movies loader reports structural problems", "[catalog]") {
    TempDir tmp;
    const auto no_column = tmp.file("no_genres.csv", "movieId,title\n1,X\n");
    CHECK_THROWS_WITH(load_movielens_movies(no_column.string()),
                      Catch::Matchers::ContainsSubstring("genres"));

    const auto bad_id = tmp.file("bad_id.csv", "movieId,title,genres\nabc,X,Drama\n");
    CHECK_THROWS_WITH(load_movielens_movies(bad_id.string()),
                      Catch::Matchers::ContainsSubstring("row 2"));

    const auto dup = tmp.file("dup.csv", "movieId,title,genres\n1,X,Drama\n1,Y,Drama\n");
    CHECK_THROWS_WITH(load_movielens_movies(dup.string()),
                      Catch::Matchers::ContainsSubstring("duplicate"));

    CHECK_THROWS_AS(load_movielens_movies((tmp.path / "nope.csv").string()), CatalogError);
}

TEST_CASE("ratings loader parses rows and honours the item filter", "[catalog]") {
    TempDir tmp;
    const auto path = tmp.file("ratings.csv",
                               "userId,movieId,rating,timestamp\n"
                               "7,1,4.5,1000\n"
                               "7,2,3.0,1001\n"
                               "8,1,5.0,999\n");
    const auto all = load_movielens_ratings(path.string());
    REQUIRE(all.size() == 3);
    CHECK(all[0].user == 7);
    CHECK(all[0].item == 1);
    CHECK(all[0].value == 4.5);
    CHECK(all[0].timestamp == 1000);

    const std::unordered_set<ItemId> keep{2};
    const auto filtered = load_movielens_ratings(path.string(), &keep);
    REQUIRE(filtered.size() == 1);
    CHECK(filtered[0].item == 2);

    const auto empty = tmp.file("empty.csv", "userId,movieId,rating,timestamp\n");
    CHECK(load_movielens_ratings(empty.string()).empty());
}

TEST_CASE("sample_items returns everything when n covers the catalog", "[catalog]") {
    std::vector<Item> items;
    for (ItemId i = 1; i <= 6; ++i) items.push_back({i, "t" + std::to_string(i), {"G"}, ""});
    CHECK(sample_items(items, 6, 1).size() == 6);
    CHECK(sample_items(items, 10, 1).size() == 6);
    CHECK_THROWS_AS(sample_items(items, 0, 1), CatalogError);
}

TEST_CASE("sample_items stratifies by primary genre", "[catalog]") {
    std::vector<Item> items;
    for (ItemId i = 1; i <= 20; ++i) {
        const bool first_half = i <= 10;
        items.push_back({i, "t" + std::to_string(i),
                         {first_half ? "A" : "B", "Shared"}, ""});
    }
    const auto picked = sample_items(items, 10, 42);
    REQUIRE(picked.size() == 10);
    std::map<std::string, int> shares;
    for (const auto& it : picked) ++shares[it.tags.front()];
    CHECK(shares["A"] == 5);
    CHECK(shares["B"] == 5);

    // deterministic per seed, and emitted in ascending id order
    const auto again = sample_items(items, 10, 42);
    REQUIRE(again.size() == picked.size());
    for (std::size_t i = 0; i < picked.size(); ++i) CHECK(again[i].id == picked[i].id);
    for (std::size_t i = 1; i < picked.size(); ++i) CHECK(picked[i - 1].id < picked[i].id);
}

TEST_CASE("sample_items assigns leftovers by largest remainder", "[catalog]") {
    std::vector<Item> items;
    ItemId next = 1;
    for (int i = 0; i < 5; ++i) items.push_back({next++, "a", {"GenreA"}, ""});
    for (int i = 0; i < 3; ++i) items.push_back({next++, "b", {"GenreB"}, ""});
    for (int i = 0; i < 2; ++i) items.push_back({next++, "c", {"GenreC"}, ""});

    // exact quotas 2.0 / 1.2 / 0.8: the leftover slot goes to GenreC
    const auto picked = sample_items(items, 4, 7);
    REQUIRE(picked.size() == 4);
    std::map<std::string, int> shares;
    for (const auto& it : picked) ++shares[it.tags.front()];
    CHECK(shares["GenreA"] == 2);
    CHECK(shares["GenreB"] == 1);
    CHECK(shares["GenreC"] == 1);
}

TEST_CASE("user histories keep the most recent qualifying items", "[catalog]") {
    const std::vector<ItemId> ids{1, 2, 3, 4, 5, 6, 7, 8};
    const auto engine = cluster_items(ids);
    const std::unordered_set<ItemId> subset(ids.begin(), ids.end());

    std::vector<Rating> ratings;
    for (int i = 1; i <= 5; ++i)
        ratings.push_back({1, i, 4.0, 100 * i});
    ratings.push_back({1, 6, 3.5, 650});   // boundary rating qualifies
    ratings.push_back({1, 7, 3.0, 700});   // below the cutoff
    ratings.push_back({1, 8, 5.0, 800});
    ratings.push_back({1, 99, 5.0, 900});  // outside the sampled subset
    ratings.push_back({2, 3, 4.0, 10});
    ratings.push_back({2, 2, 4.0, 20});
    ratings.push_back({2, 1, 4.0, 30});

    const auto users = build_user_histories(ratings, subset, engine, 2, 3, 3.5, 5);
    REQUIRE(users.size() == 2);
    CHECK(users[0].id == 1);
    CHECK(users[1].id == 2);

    // user 1 has seven qualifying ratings; the three most recent stay
    std::vector<ItemId> got;
    for (const auto& [cluster, item] : users[0].history) {
        got.push_back(item);
        CHECK(engine.cluster_of(item) == cluster);
    }
    CHECK(got == std::vector<ItemId>{5, 6, 8});
    CHECK(users[0].watched == std::set<ItemId>{5, 6, 8});

    // user 2 has exactly three, kept in timestamp order
    std::vector<ItemId> got2;
    for (const auto& [cluster, item] : users[1].history) got2.push_back(item);
    CHECK(got2 == std::vector<ItemId>{3, 2, 1});
}

TEST_CASE("user history shortfall is reported with counts", "[catalog]") {
    const std::vector<ItemId> ids{1, 2};
    const auto engine = cluster_items(ids);
    const std::unordered_set<ItemId> subset(ids.begin(), ids.end());
    const std::vector<Rating> ratings{{1, 1, 4.0, 10}, {1, 2, 4.0, 20}, {2, 1, 4.0, 30}};

    CHECK_THROWS_WITH(build_user_histories(ratings, subset, engine, 5, 2, 3.5, 1),
                      Catch::Matchers::ContainsSubstring("only 1") &&
                          Catch::Matchers::ContainsSubstring("need 5"));
}

TEST_CASE("history selection is deterministic per seed", "[catalog]") {
    std::vector<ItemId> ids;
    for (ItemId i = 1; i <= 30; ++i) ids.push_back(i);
    const auto engine = cluster_items(ids);
    const std::unordered_set<ItemId> subset(ids.begin(), ids.end());

    std::vector<Rating> ratings;
    for (UserId u = 1; u <= 12; ++u)
        for (int i = 0; i < 6; ++i)
            ratings.push_back({u, (u * 2 + i) % 30 + 1, 4.0, 100 * i + u});

    const auto a = build_user_histories(ratings, subset, engine, 5, 4, 3.5, 11);
    const auto b = build_user_histories(ratings, subset, engine, 5, 4, 3.5, 11);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == b[i].id);
        CHECK(a[i].history == b[i].history);
    }
    for (const auto& u : a)
        for (const auto& [cluster, item] : u.history) {
            CHECK(subset.count(item) == 1);
            CHECK(u.watched.count(item) == 1);
        }
}

TEST_CASE("derive_pref_keywords ranks tags by frequency then name", "[catalog]") {
    std::map<ItemId, Item> items;
    items[1] = {1, "a", {"Drama", "Crime"}, ""};
    items[2] = {2, "b", {"Drama", "Action"}, ""};
    items[3] = {3, "c", {"Comedy"}, ""};

    UserProfile user;
    user.history = {{0, 1}, {0, 2}, {0, 3}};

    const auto prefs = derive_pref_keywords(user, items, 3);
    REQUIRE(prefs.size() == 3);
    CHECK(prefs[0] == "Drama");                     // count 2
    CHECK(prefs[1] == "Action");                    // count 1, ties alphabetical
    CHECK(prefs[2] == "Comedy");

    CHECK(derive_pref_keywords(user, items, 2) ==
          std::vector<std::string>{"Drama", "Action"});
    CHECK(derive_pref_keywords(UserProfile{}, items, 3).empty());
}
