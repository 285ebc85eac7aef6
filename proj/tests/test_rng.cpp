// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cmath>
#include <vector>

#include "dropreg/rng.hpp"

using namespace dropreg;

TEST_CASE("philox known-answer vectors")
{
    using A4 = std::array<std::uint32_t, 4>;
    CHECK(philox4x32_10({0, 0, 0, 0}, {0, 0}) == A4{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
    CHECK(philox4x32_10({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff},
                        {0xffffffff, 0xffffffff})
          == A4{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
    CHECK(philox4x32_10({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344},
                        {0xa4093822, 0x299f31d0})
          == A4{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("identical seed and path give identical streams")
{
    RngStream a(42, {1, 2});
    RngStream b(42, {1, 2});
    for (int i = 0; i < 100; ++i)
        CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("split is pure and path-addressed")
{
    RngStream root(9);
    RngStream x = root.split(3);
    root.next_u64();
    root.next_u64();
    RngStream y = root.split(3);
    CHECK(x.next_u64() == y.next_u64());
    CHECK(root.split({3, 4}).next_u64() == root.split(3).split(4).next_u64());
    CHECK(root.split(3).next_u64() != root.split(4).next_u64());
    CHECK(RngStream(9).next_u64() != RngStream(10).next_u64());
}

TEST_CASE("uniform and normal moments")
{
    RngStream r(5);
    int const n = 200000;
    double s = 0, s2 = 0, ns = 0, ns2 = 0;
    for (int i = 0; i < n; ++i)
    {
        double u = r.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        s += u;
        s2 += u * u;
        double z = r.normal();
        ns += z;
        ns2 += z * z;
    }
    CHECK(s / n == doctest::Approx(0.5).epsilon(0.01));
    CHECK(s2 / n - (s / n) * (s / n) == doctest::Approx(1.0 / 12).epsilon(0.02));
    CHECK(std::abs(ns / n) < 4.0 / std::sqrt(n));
    CHECK(ns2 / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("rademacher and categorical")
{
    RngStream r(11);
    int const n = 100000;
    double s = 0;
    std::vector<int> counts(3, 0);
    std::vector<double> w{0.2, 0.5, 0.3};
    for (int i = 0; i < n; ++i)
    {
        double e = r.rademacher();
        REQUIRE(std::abs(e) == 1.0);
        s += e;
        ++counts[r.categorical(w)];
    }
    CHECK(std::abs(s / n) < 4.0 / std::sqrt(n));
    for (int k = 0; k < 3; ++k)
    {
        double p = w[k];
        CHECK(std::abs(counts[k] / double(n) - p) < 4 * std::sqrt(p * (1 - p) / n));
    }
    CHECK_THROWS(r.categorical(std::vector<double>{0.0, 0.0}));
    CHECK(r.uniform_index(1) == 0);
}
