#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <set>
#include <vector>

#include "roivqa/rng.hpp"

using namespace roivqa;

TEST_CASE("mix64 matches frozen outputs", "[rng]") {
    // Frozen from an independent Python implementation of the splitmix64
    // finalizer (xor-shift-multiply chain with 0xbf58476d1ce4e5b9 and
    // 0x94d049bb133111eb).
    CHECK(mix64(0) == 0ULL);
    CHECK(mix64(1) == 0x5692161d100b05e5ULL);
    CHECK(mix64(2) == 0xdbd238973a2b148aULL);
    CHECK(mix64(0xdeadbeefULL) == 0x4e062702ec929eeaULL);
    CHECK(mix64(0xffffffffffffffffULL) == 0xb4d055fcf2cbbd7bULL);
}

TEST_CASE("fnv1a64 matches frozen outputs", "[rng]") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("hello") == 0xa430d84680aabd0bULL);
    CHECK(fnv1a64("img001.loc.r0") == fnv1a64(std::string("img001.loc.r0")));
}

TEST_CASE("stream generator is deterministic and 64-bit uniform-ish", "[rng]") {
    SplitMix64 a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());

    // First draws for seed 42, frozen.
    SplitMix64 c(42);
    CHECK(c.next() == 0xbdd732262feb6e95ULL);
    CHECK(c.next() == 0x28efe333b266f103ULL);
}

TEST_CASE("next_below stays in range and covers all residues", "[rng]") {
    SplitMix64 g(7);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 2000; ++i) {
        auto v = g.next_below(5);
        REQUIRE(v < 5);
        seen.insert(v);
    }
    CHECK(seen.size() == 5);
    CHECK(g.next_below(1) == 0);
}

TEST_CASE("next_int covers an inclusive range", "[rng]") {
    SplitMix64 g(9);
    bool saw_lo = false, saw_hi = false;
    for (int i = 0; i < 4000; ++i) {
        int v = g.next_int(-3, 3);
        REQUIRE(v >= -3);
        REQUIRE(v <= 3);
        saw_lo |= v == -3;
        saw_hi |= v == 3;
    }
    CHECK(saw_lo);
    CHECK(saw_hi);
}

TEST_CASE("next_double lands in [0,1) with a sane mean", "[rng]") {
    SplitMix64 g(11);
    double sum = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double v = g.next_double();
        REQUIRE(v >= 0.0);
        REQUIRE(v < 1.0);
        sum += v;
    }
    CHECK_THAT(sum / n, Catch::Matchers::WithinAbs(0.5, 0.01));
}

TEST_CASE("item_key is stable and sensitive to both inputs", "[rng]") {
    auto k = item_key(3, "img001.loc.r0");
    CHECK(k == item_key(3, "img001.loc.r0"));
    CHECK(k != item_key(4, "img001.loc.r0"));
    CHECK(k != item_key(3, "img001.loc.r1"));

    // Frozen value so the derivation can never drift silently.
    CHECK(item_key(0, "x") == 0x54fe2359b7d540eaULL);
}

TEST_CASE("shuffle produces a permutation and is seed-stable", "[rng]") {
    std::vector<int> v(10);
    std::iota(v.begin(), v.end(), 0);
    auto w = v;
    SplitMix64 g1(5), g2(5);
    shuffle(v, g1);
    shuffle(w, g2);
    CHECK(v == w);
    std::sort(w.begin(), w.end());
    std::vector<int> id(10);
    std::iota(id.begin(), id.end(), 0);
    CHECK(w == id);

    SplitMix64 g3(6);
    auto u = id;
    shuffle(u, g3);
    CHECK(u != v);  // different seed, near-certainly different order
}
