// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dropreg/autodiff.hpp"
#include "dropreg/numeric_oracles.hpp"
#include "dropreg/rng.hpp"

using namespace dropreg;
namespace ad = dropreg::ad;

namespace
{
using VarFn = std::function<ad::Var(ad::Var const&)>;

Tensor uniform_matrix(std::size_t r, std::size_t c, RngStream& rng, double lo, double hi)
{
    Tensor t = Tensor::matrix(r, c);
    for (auto& v : t.data())
        v = lo + (hi - lo) * rng.uniform();
    return t;
}

double rel_err(Tensor const& a, Tensor const& b)
{
    double n = b.norm();
    return n > 0 ? (a - b).norm() / n : (a - b).norm();
}

//! Scalar probe: <f(x), w> for a fixed random weight w.
ad::Var probe(VarFn const& f, ad::Var const& x, Tensor const& w)
{
    auto y = f(x);
    return ad::sum(y * ad::constant(w.reshaped({y.rows(), y.cols()})));
}

struct OpCase
{
    std::string name;
    VarFn f;
    std::size_t rows, cols;  // input shape
    std::size_t out_size;
    double lo = -2, hi = 2;
};

std::vector<OpCase> op_cases()
{
    std::vector<std::size_t> labels{2, 0, 1};
    auto b = Tensor::matrix(3, 4, {0.3, -1.2, 0.7, 1.1, -0.4, 0.9, 0.2, -0.8, 1.5, 0.1, -0.6, 0.4});
    auto m = Tensor::matrix(4, 2, {0.5, -0.3, 1.2, 0.8, -0.7, 0.2, 0.4, -1.1});
    return {
        {"add", [b](ad::Var const& x) { return x + ad::constant(b); }, 3, 4, 12},
        {"sub", [b](ad::Var const& x) { return ad::constant(b) - x; }, 3, 4, 12},
        {"neg", [](ad::Var const& x) { return -x; }, 3, 4, 12},
        {"mul", [](ad::Var const& x) { return x * x; }, 3, 4, 12},
        {"scale", [](ad::Var const& x) { return 2.5 * x; }, 3, 4, 12},
        {"add_scalar", [](ad::Var const& x) { return ad::add_scalar(x, 0.7); }, 3, 4, 12},
        {"matmul_left", [m](ad::Var const& x) { return ad::matmul(x, ad::constant(m)); }, 3, 4, 6},
        {"matmul_self", [](ad::Var const& x) { return ad::matmul(x, ad::transpose(x)); }, 3, 4, 9},
        {"transpose", [](ad::Var const& x) { return ad::transpose(x); }, 3, 4, 12},
        {"tanh", [](ad::Var const& x) { return ad::tanh(x); }, 3, 4, 12},
        {"exp", [](ad::Var const& x) { return ad::exp(x); }, 3, 4, 12},
        {"log", [](ad::Var const& x) { return ad::log(x); }, 3, 4, 12, 0.5, 2},
        {"sin", [](ad::Var const& x) { return ad::sin(x); }, 3, 4, 12},
        {"cos", [](ad::Var const& x) { return ad::cos(x); }, 3, 4, 12},
        {"square", [](ad::Var const& x) { return ad::square(x); }, 3, 4, 12},
        {"reciprocal", [](ad::Var const& x) { return ad::reciprocal(x); }, 3, 4, 12, 0.5, 2},
        {"relu", [](ad::Var const& x) { return ad::relu(x) * x; }, 3, 4, 12, 0.2, 2},
        {"sum", [](ad::Var const& x) { return ad::sum(ad::square(x)); }, 3, 4, 1},
        {"sum_rows", [](ad::Var const& x) { return ad::sum_rows(ad::square(x)); }, 3, 4, 4},
        {"sum_cols", [](ad::Var const& x) { return ad::sum_cols(ad::square(x)); }, 3, 4, 3},
        {"broadcast_rows",
         [](ad::Var const& x) { return ad::broadcast_rows(ad::sum_rows(x), 2) * ad::constant(Tensor::matrix(2, 4, 1.5)); },
         3, 4, 8},
        {"broadcast_cols", [](ad::Var const& x) { return ad::broadcast_cols(ad::sum_cols(ad::square(x)), 5); }, 3, 4, 15},
        {"broadcast_scalar", [](ad::Var const& x) { return ad::broadcast_scalar(ad::sum(ad::tanh(x)), 2, 2); }, 3, 4, 4},
        {"logsumexp", [](ad::Var const& x) { return ad::logsumexp_rows(x); }, 3, 4, 3},
        {"softmax", [](ad::Var const& x) { return ad::softmax_rows(x); }, 3, 4, 12},
        {"cross_entropy", [labels](ad::Var const& x) { return ad::cross_entropy_rows(x, labels); }, 3, 4, 3},
    };
}
}  // namespace

TEST_CASE("scalar derivative examples")
{
    auto x = ad::parameter(Tensor::vector({3.0}));
    CHECK(ad::grad(ad::square(x), x).item() == doctest::Approx(6.0).epsilon(1e-15));

    auto v = ad::parameter(Tensor::vector({1.0, -2.0, 0.5}));
    auto g = ad::grad(ad::sum(v), v);
    CHECK(g.value().values() == std::vector<double>{1, 1, 1});

    auto z = ad::parameter(Tensor::vector({2.0}));
    auto g1 = ad::grad(z * z * z, z, true);
    CHECK(g1.item() == doctest::Approx(12.0));
    auto g2 = ad::grad(g1, z);
    CHECK(g2.item() == doctest::Approx(12.0).epsilon(1e-15));
}

TEST_CASE("every op matches finite differences")
{
    RngStream rng(101);
    std::uint64_t idx = 0;
    for (auto const& c : op_cases())
    {
        CAPTURE(c.name);
        RngStream sub = rng.split(idx++);
        Tensor x0 = uniform_matrix(c.rows, c.cols, sub, c.lo, c.hi);
        Tensor w = uniform_matrix(1, c.out_size, sub, -1, 1);
        auto x = ad::parameter(x0);
        auto g = ad::grad(probe(c.f, x, w), x).value();
        Tensor fd = finite_diff_grad(
            [&](Tensor const& t) { return probe(c.f, ad::constant(t), w).item(); }, x0, 1e-5);
        CHECK(rel_err(g, fd) <= 1e-6);
    }
}

TEST_CASE("double backward matches finite differences of the first gradient")
{
    RngStream rng(202);
    std::uint64_t idx = 0;
    for (auto const& c : op_cases())
    {
        CAPTURE(c.name);
        RngStream sub = rng.split(idx++);
        Tensor x0 = uniform_matrix(c.rows, c.cols, sub, c.lo, c.hi);
        Tensor w = uniform_matrix(1, c.out_size, sub, -1, 1);
        Tensor v = uniform_matrix(c.rows, c.cols, sub, -1, 1);
        // h(x) = <grad f(x), v>; compose with tanh so linear ops still curve
        VarFn f = [&](ad::Var const& x) { return c.f(ad::tanh(x)); };
        auto first = [&](ad::Var const& x, bool create) {
            return ad::sum(ad::grad(probe(f, x, w), x, create) * ad::constant(v));
        };
        auto x = ad::parameter(x0);
        auto g2 = ad::grad(first(x, true), x).value();
        Tensor fd = finite_diff_grad(
            [&](Tensor const& t) { return first(ad::parameter(t), false).item(); }, x0, 1e-5);
        CHECK(rel_err(g2, fd) <= 1e-4);
    }
}

TEST_CASE("non-participating targets get zero gradients")
{
    auto a = ad::parameter(Tensor::vector({1.0, 2.0}));
    auto b = ad::parameter(Tensor::vector({3.0}));
    auto gs = ad::grad(ad::sum(ad::square(a)), std::vector<ad::Var>{a, b});
    CHECK(gs[1].value().values() == std::vector<double>{0.0});
    CHECK(gs[0].value().values() == std::vector<double>{2.0, 4.0});
}

TEST_CASE("gradient errors")
{
    auto a = ad::parameter(Tensor::vector({1.0, 2.0}));
    CHECK_THROWS_AS(ad::grad(a, a), ShapeError);
    auto z = ad::parameter(Tensor::vector({0.0}));
    CHECK_THROWS_AS(ad::log(z), NumericError);
}

TEST_CASE("gradients flow to interior nodes")
{
    auto x = ad::parameter(Tensor::vector({0.5, -0.3}));
    auto h = ad::tanh(x);
    auto y = ad::sum(ad::square(h));
    auto gh = ad::grad(y, h);
    CHECK(gh.value()[0] == doctest::Approx(2 * std::tanh(0.5)));
}

TEST_CASE("no-grad guard stops recording")
{
    auto x = ad::parameter(Tensor::vector({1.0}));
    ad::Var y;
    {
        ad::NoGradGuard guard;
        y = ad::square(x);
    }
    CHECK_FALSE(y.requires_grad());
    CHECK(ad::grad(ad::sum(y), x).item() == 0.0);
}
