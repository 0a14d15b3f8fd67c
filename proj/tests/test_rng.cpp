#include <doctest.h>

#include <cmath>
#include <vector>

#include "gridse/rng.hpp"

using gridse::Rng;

TEST_CASE("identical seeds reproduce identical streams") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("derived streams are independent of draw order") {
    Rng root(7);
    Rng c1 = root.derive("stage-a");
    root.next_u64();  // consuming the parent must not shift children
    Rng c2 = Rng(7).derive("stage-a");
    for (int i = 0; i < 100; ++i) CHECK(c1.next_u64() == c2.next_u64());
    CHECK(Rng(7).derive("stage-a").next_u64() != Rng(7).derive("stage-b").next_u64());
}

TEST_CASE("uniform stays in [0,1) and uniform_int hits bounds") {
    Rng rng(3);
    bool lo_seen = false, hi_seen = false;
    for (int i = 0; i < 20000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const auto k = rng.uniform_int(2, 5);
        CHECK(k >= 2);
        CHECK(k <= 5);
        lo_seen = lo_seen || k == 2;
        hi_seen = hi_seen || k == 5;
    }
    CHECK(lo_seen);
    CHECK(hi_seen);
}

TEST_CASE("normal draws have roughly standard moments") {
    Rng rng(11);
    const int n = 200000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sum_sq += x * x;
    }
    const double mean = sum / n;
    const double var = sum_sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("shuffle is deterministic under seed") {
    std::vector<int> a{1, 2, 3, 4, 5, 6, 7, 8}, b = a;
    Rng(9).shuffle(a);
    Rng(9).shuffle(b);
    CHECK(a == b);
}
