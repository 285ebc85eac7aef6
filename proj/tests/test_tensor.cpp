// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cmath>
#include <limits>

#include "dropreg/grad_vector.hpp"
#include "dropreg/tensor.hpp"

using namespace dropreg;

TEST_CASE("tensor shape and data agree")
{
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(t.sum() == doctest::Approx(9.0));
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
    CHECK_THROWS_AS(Tensor({0, 3}), ShapeError);
}

TEST_CASE("rank-1 tensors act as rows")
{
    auto v = Tensor::vector({1, 2, 3});
    CHECK(v.rows() == 1);
    CHECK(v.cols() == 3);
    CHECK(v.norm() == doctest::Approx(std::sqrt(14.0)));
}

TEST_CASE("matmul matches hand product")
{
    auto a = Tensor::matrix(2, 2, {1, 2, 3, 4});
    auto b = Tensor::matrix(2, 1, {5, 6});
    auto c = matmul(a, b);
    CHECK(c(0, 0) == 17);
    CHECK(c(1, 0) == 39);
    CHECK_THROWS_AS(matmul(b, b), ShapeError);
}

TEST_CASE("transpose, row and reshape")
{
    auto a = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
    auto t = a.transposed();
    CHECK(t.rows() == 3);
    CHECK(t(2, 1) == 6);
    auto r = a.row(1);
    CHECK(r.size() == 3);
    CHECK(r[0] == 4);
    CHECK(a.reshaped({3, 2})(2, 1) == 6);
    CHECK_THROWS_AS(a.reshaped({4, 2}), ShapeError);
}

TEST_CASE("non-finite values are an error state")
{
    auto a = Tensor::vector({1.0, std::numeric_limits<double>::quiet_NaN()});
    CHECK_FALSE(a.all_finite());
    CHECK_THROWS_AS(a.require_finite("a"), NumericError);
}

TEST_CASE("elementwise arithmetic")
{
    auto a = Tensor::vector({1, 2});
    auto b = Tensor::vector({3, 5});
    CHECK((a + b)[1] == 7);
    CHECK((b - a)[0] == 2);
    CHECK((2.0 * a)[1] == 4);
    CHECK(hadamard(a, b)[1] == 10);
    CHECK(a.dot(b) == 13);
    CHECK_THROWS_AS(a + Tensor::vector({1, 2, 3}), ShapeError);
}

TEST_CASE("grad vector layout is contiguous")
{
    ParamLayout layout;
    layout.append("W1", {3, 2});
    layout.append("b1", {3});
    CHECK(layout.total_size() == 9);
    CHECK(layout.find("b1").offset == 6);
    GradVector g(layout, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    CHECK(g.slice("b1")[2] == 9);
    CHECK(g.slice("W1")(2, 1) == 6);
    GradVector h = 2.0 * g;
    CHECK((h - g).values() == g.values());
    CHECK(g.dot(g) == doctest::Approx(285));
    CHECK_THROWS(GradVector(layout, {1.0}));
}
