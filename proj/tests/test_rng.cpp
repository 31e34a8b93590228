#include "doctest.h"

#include <cmath>

#include "chaintok/rng.hpp"

using chaintok::Rng;

TEST_SUITE_BEGIN("rng");

TEST_CASE("same seed replays exactly") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("derived streams are independent of parent draws") {
    Rng a(7);
    Rng d1 = a.derive("stream");
    a.next_u64();
    a.next_u64();
    Rng d2 = Rng(7).derive("stream");
    for (int i = 0; i < 20; ++i) CHECK(d1.next_u64() == d2.next_u64());
}

TEST_CASE("different tags give different streams") {
    Rng a(7);
    CHECK(a.derive(1).next_u64() != a.derive(2).next_u64());
    CHECK(a.derive("x").next_u64() != a.derive("y").next_u64());
}

TEST_CASE("uniform stays in [0,1) and has plausible mean") {
    Rng a(3);
    double sum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double u = a.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(std::abs(sum / n - 0.5) < 0.01);
}

TEST_CASE("uniform_int covers the range inclusively") {
    Rng a(9);
    bool lo_seen = false, hi_seen = false;
    for (int i = 0; i < 2000; ++i) {
        int64_t v = a.uniform_int(1, 4);
        REQUIRE(v >= 1);
        REQUIRE(v <= 4);
        lo_seen = lo_seen || v == 1;
        hi_seen = hi_seen || v == 4;
    }
    CHECK(lo_seen);
    CHECK(hi_seen);
}

TEST_CASE("normal moments") {
    Rng a(11);
    double sum = 0.0, sq = 0.0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
        double x = a.normal();
        sum += x;
        sq += x * x;
    }
    CHECK(std::abs(sum / n) < 0.02);
    CHECK(std::abs(sq / n - 1.0) < 0.03);
}

TEST_SUITE_END();
