// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cmath>

#include "dropreg/numeric_oracles.hpp"
#include "dropreg/regularizers.hpp"
#include "dropreg/training.hpp"

using namespace dropreg;

namespace
{
MlpModel deep(std::uint64_t seed, std::vector<std::size_t> dims = {5, 6, 4, 7})
{
    std::vector<Activation> acts(dims.size() - 2, Activation::tanh);
    return MlpModel::random(dims, acts, RngStream(seed), 1.4);
}

Tensor random_vector(std::size_t n, RngStream& rng, double scale = 1.0)
{
    Tensor t({n});
    for (auto& v : t.data())
        v = scale * rng.normal();
    return t;
}

Dataset random_batch(std::size_t m, std::size_t d, std::size_t c, std::uint64_t seed)
{
    RngStream r(seed);
    Dataset b;
    b.features = Tensor::matrix(m, d);
    for (auto& v : b.features.data())
        v = r.normal();
    for (std::size_t i = 0; i < m; ++i)
        b.labels.push_back(r.uniform_index(c));
    return b;
}

double rel_err(GradVector const& a, GradVector const& b)
{
    return (a - b).norm() / std::max(b.norm(), 1e-300);
}
}  // namespace

TEST_CASE("explicit_reg_exact examples")
{
    MlpModel lin({2, 2}, {});
    lin.weight(1) = Tensor::identity(2);
    auto r = explicit_reg_exact(lin, Tensor::vector({1, 1}));
    CHECK(r.total == doctest::Approx(0.5).epsilon(1e-15));

    // h = 0 at every site: input zero and tanh(bias 0) = 0.
    auto m = deep(1);
    CHECK(explicit_reg_exact(m, Tensor({5}), {0, 1, 2}).total == 0.0);

    MlpModel sat({2, 3}, {});
    sat.weight(1) = Tensor::matrix(3, 2, {400, 0, 0, 0, 0, 0});
    CHECK(explicit_reg_exact(sat, Tensor::vector({1, 1})).total <= 1e-100);
}

TEST_CASE("explicit_reg_exact invariants")
{
    RngStream r(2);
    for (int trial = 0; trial < 20; ++trial)
    {
        auto m = deep(10 + trial);
        auto x = random_vector(5, r);
        auto v = explicit_reg_exact(m, x, {0, 1, 2});
        double sum = 0;
        for (double s : v.per_site)
        {
            CHECK(s >= 0.0);
            sum += s;
        }
        CHECK(std::abs(sum - v.total) <= 1e-12);
        CHECK(v.total >= 0.0);
    }
}

TEST_CASE("sampled regularizer enumeration equals exact")
{
    RngStream r(3);
    for (int trial = 0; trial < 10; ++trial)
    {
        std::size_t c = 2 + 2 * trial % 15;
        auto m = deep(20 + trial, {6, 9, 8, c});
        auto x = random_vector(6, r);
        std::vector<std::size_t> sites{0, 1, 2};
        auto p = forward_trace(m, x).probs;
        double enumerated = 0;
        for (std::size_t y = 0; y < c; ++y)
            enumerated += p[y] * explicit_reg_for_label(m, x, y, sites);
        CHECK(std::abs(enumerated - explicit_reg_exact(m, x, sites).total) <= 1e-10);
    }

    auto m = deep(4);
    for (std::size_t y = 0; y < 7; ++y)
        CHECK(explicit_reg_for_label(m, Tensor({5}), y, {0, 1, 2}) == 0.0);
}

TEST_CASE("sampled regularizer MC mean")
{
    auto m = deep(5);
    RngStream r(6);
    auto x = random_vector(5, r);
    std::vector<std::size_t> sites{1, 2};
    double exact = explicit_reg_exact(m, x, sites).total;
    auto est = mc_mean([&](RngStream& s) { return explicit_reg_sampled(m, x, s, sites); }, 10000,
                       RngStream(7));
    CHECK(std::abs(est.mean - exact) <= 4 * est.std_error);
}

TEST_CASE("jacobian approximation")
{
    MlpModel sat({2, 3}, {});
    sat.weight(1) = Tensor::matrix(3, 2, {400, 0, 0, 0, 0, 0});
    CHECK(reg_jacobian_approx(sat, Tensor::vector({1, 1}), 0, {0}) <= 1e-100);

    // Single site, d = 1: (J^l)^2 h^2.
    MlpModel one({1, 3}, {});
    one.weight(1) = Tensor::matrix(3, 1, {0.7, -0.2, 1.1});
    one.bias(1) = Tensor::vector({0.1, 0.0, -0.3});
    auto x = Tensor::vector({1.3});
    auto t = forward_trace(one, x);
    double jl = loss_jacobian_hidden(one, t, 2, 0)[0];
    CHECK(reg_jacobian_approx(one, x, 2, {0}) == doctest::Approx(jl * jl * 1.69).epsilon(1e-14));

    // Two classes, confident at the label: approx = (1-p)^2 Q and exact =
    // p(1-p) Q, so both vanish and their ratio is (1-p)/p.
    double prev_gap = INFINITY;
    for (double a : {1.0, 2.0, 4.0, 8.0, 16.0, 32.0})
    {
        MlpModel lin({2, 2}, {});
        lin.weight(1) = Tensor::matrix(2, 2, {a, 0.5, -a, 0.25});
        auto xv = Tensor::vector({1.0, -0.5});
        double p = forward_trace(lin, xv).probs[0];
        double approx = reg_jacobian_approx(lin, xv, 0, {0});
        double exact = explicit_reg_exact(lin, xv, {0}).total;
        CHECK(approx / exact == doctest::Approx((1 - p) / p).epsilon(1e-9));
        double gap = std::abs(exact - approx);
        CHECK(gap < prev_gap);
        prev_gap = gap;
    }
    CHECK(prev_gap <= 1e-12);
}

TEST_CASE("identity-Hessian regularizer")
{
    // J = I, h = (1, 1): exact value 2.
    MlpModel lin({2, 2}, {});
    lin.weight(1) = Tensor::identity(2);
    RngStream r(8);
    auto x = Tensor::vector({1, 1});
    CHECK(reg_identity_hessian(lin, x, r, EstimatorMode::exact, {0}) == doctest::Approx(2.0));
    for (int i = 0; i < 5; ++i)
        CHECK(reg_identity_hessian(lin, x, r, EstimatorMode::sampled, {0}) == doctest::Approx(2.0));
    CHECK(reg_identity_hessian(lin, Tensor({2}), r, EstimatorMode::exact, {0}) == 0.0);
    CHECK(reg_identity_hessian(lin, Tensor({2}), r, EstimatorMode::sampled, {0}) == 0.0);

    auto m = deep(9, {5, 6, 8, 4});
    auto xm = random_vector(5, r);
    for (std::size_t site : {1, 2})
    {
        std::size_t d = m.site_width(site);
        double mean = 0;
        for (std::size_t bits = 0; bits < (std::size_t(1) << d); ++bits)
        {
            Tensor s({d});
            for (std::size_t k = 0; k < d; ++k)
                s[k] = (bits >> k) & 1 ? 1.0 : -1.0;
            mean += reg_identity_hessian_signs(m, xm, {s}, {site});
        }
        mean /= double(std::size_t(1) << d);
        double exact = reg_identity_hessian(m, xm, r, EstimatorMode::exact, {site});
        CHECK(std::abs(mean - exact) <= 1e-10);
    }
}

TEST_CASE("jvp")
{
    RngStream r(10);
    auto m = deep(11);
    auto t = forward_trace(m, random_vector(5, r));
    for (std::size_t site : {0, 1, 2})
    {
        std::size_t d = m.site_width(site);
        auto j = tail_jacobian(m, t, site);
        CHECK(jvp(m, t, site, Tensor({d})).max_abs() == 0.0);
        for (std::size_t k = 0; k < d; ++k)
        {
            Tensor e({d});
            e[k] = 1.0;
            auto col = jvp(m, t, site, e);
            for (std::size_t i = 0; i < j.rows(); ++i)
                CHECK(std::abs(col[i] - j(i, k)) <= 1e-12);
        }
        auto v = random_vector(d, r);
        auto a = jvp(m, t, site, v);
        auto b = jvp_double_backward(m, t, site, v);
        for (std::size_t i = 0; i < j.rows(); ++i)
        {
            double want = 0;
            for (std::size_t k = 0; k < d; ++k)
                want += j(i, k) * v[k];
            CHECK(std::abs(a[i] - want) <= 1e-10);
            CHECK(std::abs(b[i] - want) <= 1e-10);
        }
    }
}

TEST_CASE("lambda linkage")
{
    RegularizerConfig c;
    c.linkage = Linkage::experiment;
    auto r = c.resolved(0.4);
    CHECK(r.lambda1 == doctest::Approx(2.0 / 3).epsilon(1e-15));
    CHECK(r.lambda2 == doctest::Approx(std::sqrt(2.0 / 3)).epsilon(1e-15));
    c.linkage = Linkage::derivation;
    CHECK(c.resolved(0.4).lambda1 == doctest::Approx(1.0 / 3).epsilon(1e-15));
    c.linkage = Linkage::none;
    c.lambda1 = 0.3;
    CHECK(c.resolved(0.4).lambda1 == 0.3);
    c.lambda1 = -1;
    CHECK_THROWS(c.validate(deep(1)));
    CHECK(variant_from_string(to_string(RegularizerVariant::jacobian_approx))
          == RegularizerVariant::jacobian_approx);
    CHECK(linkage_from_string("derivation") == Linkage::derivation);
}

TEST_CASE("implicit noise")
{
    auto m = deep(12);
    auto batch = random_batch(3, 5, 7, 13);
    std::vector<std::size_t> sites{1, 2};
    std::vector<Tensor> zero{Tensor::matrix(3, 6), Tensor::matrix(3, 4)};
    CHECK(implicit_noise_for(m, batch, sites, zero, 1.0).norm() == 0.0);

    RngStream r(14);
    std::vector<Tensor> eta, neg;
    for (std::size_t w : {6, 4})
    {
        Tensor e = Tensor::matrix(3, w);
        for (auto& v : e.data())
            v = r.rademacher();
        eta.push_back(e);
        neg.push_back(-1.0 * e);
    }
    auto a = implicit_noise_for(m, batch, sites, eta, 1.0);
    auto b = implicit_noise_for(m, batch, sites, neg, 1.0);
    CHECK((a + b).norm() <= 1e-15 * a.norm());
    auto a3 = implicit_noise_for(m, batch, sites, eta, 3.0);
    CHECK(rel_err(a3, 3.0 * a) <= 1e-15);

    // Odd in eta, so mean zero.
    auto spec = DropoutSpec::hidden(m, 0.3);
    LabeledExample ex = batch.example(0);
    CovarianceOptions opts;
    opts.mode = CovarianceMode::diagonal;
    std::size_t n = 10000;
    auto est = mc_covariance([&](RngStream& s) { return implicit_noise_sample(m, ex, spec, s); }, n,
                             RngStream(15), opts);
    std::size_t violations = 0;
    for (std::size_t i = 0; i < est.mean.size(); ++i)
        if (std::abs(est.mean.values()[i]) > 4 * std::sqrt(est.diagonal[i] / n) + 1e-15)
            ++violations;
    CHECK(violations <= 1);

    // Per-example draws: the batch mean of single-example samples.
    auto per = implicit_noise_batch(m, batch, spec, RngStream(16), NoiseDraw::per_example);
    GradVector manual(m.layout());
    for (std::size_t i = 0; i < 3; ++i)
    {
        RngStream s = RngStream(16).split(i);
        manual.axpy(1.0 / 3, implicit_noise_sample(m, batch.example(i), spec, s));
    }
    CHECK(rel_err(per, manual) <= 1e-14);
}

TEST_CASE("combined update gradient")
{
    auto m = deep(17);
    auto batch = random_batch(4, 5, 7, 18);
    RngStream rng(19);
    RegularizerConfig none;
    none.variant = RegularizerVariant::sampled_hessian;
    auto g = combined_update_gradient(m, batch, none, rng);
    auto clean = batch_gradient(m, batch.features, batch.labels);
    CHECK(rel_err(g, clean) <= 1e-14);

    auto flat = Tensor::vector(m.flatten());
    for (auto v : {RegularizerVariant::exact_hessian, RegularizerVariant::sampled_hessian,
                   RegularizerVariant::jacobian_approx, RegularizerVariant::identity_hessian})
    {
        RegularizerConfig cfg;
        cfg.variant = v;
        cfg.lambda1 = 0.7;
        cfg.sites = {0, 1, 2};
        auto draws = draw_regularizer_noise(m, batch.features, cfg, rng.split(0));
        auto analytic = combined_objective_gradient(m, batch, cfg, draws);
        auto fd = finite_diff_grad(
            [&](Tensor const& w) {
                MlpModel c = m;
                c.assign(w.values());
                return combined_objective_value(c, batch, cfg, draws);
            },
            flat, 1e-5);
        CHECK_MESSAGE(rel_err(analytic, GradVector(m.layout(), fd.values())) <= 1e-4, to_string(v));
        auto upd = combined_update_gradient(m, batch, cfg, rng);
        CHECK(rel_err(upd, analytic) <= 1e-13);
    }
}

TEST_CASE("xi_ours covariance tracks dropout noise at small q on a trained desk model")
{
    RunConfig cfg = desk_benchmark();
    cfg.method = Method::dropout_k;
    auto data = gen_synthetic(cfg.data);
    auto model = train(cfg, data).model;
    auto spec = DropoutSpec::hidden(model, 0.1);
    CovarianceOptions opts;
    opts.mode = CovarianceMode::diagonal;
    std::size_t n = 20000;
    double drop = 0, ours = 0;
    for (std::size_t e = 0; e < 4; ++e)
    {
        Dataset one = Dataset::from_examples({data.train.example(e)});
        drop += mc_covariance([&](RngStream& s) { return drop_k_gradient(model, one, spec, 1, s); },
                              n, RngStream(20 + e), opts)
                    .trace;
        ours += mc_covariance(
                    [&](RngStream& s) { return implicit_noise_sample(model, one.example(0), spec, s); },
                    n, RngStream(30 + e), opts)
                    .trace;
    }
    MESSAGE("trace ratio xi_ours / xi_drop = " << ours / drop);
    CHECK(std::abs(ours / drop - 1) <= 0.25);
}
