// SPDX-License-Identifier: Apache-2.0
#include "dropreg/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dropreg
{
namespace
{
Dataset append_constant(Dataset const& data)
{
    Dataset out;
    out.labels = data.labels;
    auto d = data.dim();
    out.features = Tensor::matrix(data.size(), d + 1);
    for (std::size_t i = 0; i < data.size(); ++i)
    {
        for (std::size_t k = 0; k < d; ++k)
            out.features(i, k) = data.features(i, k);
        out.features(i, d) = 1.0;
    }
    return out;
}

Tensor logits_of(Tensor const& w, Tensor const& x)
{
    Eigen::VectorXd xv = Eigen::Map<Eigen::VectorXd const>(x.data().data(),
                                                           static_cast<Eigen::Index>(x.size()));
    Eigen::VectorXd z = w.as_matrix() * xv;
    return Tensor::vector(std::vector<double>(z.data(), z.data() + z.size()));
}

double mean_truncated(Tensor const& w, Dataset const& data, double b)
{
    double s = 0;
    for (std::size_t i = 0; i < data.size(); ++i)
        s += truncated_loss(logits_of(w, data.features.row(i)), data.labels[i], b);
    return s / static_cast<double>(data.size());
}
}  // namespace

double two_one_norm(Tensor const& m)
{
    auto mm = m.as_matrix();
    double s = 0;
    for (Eigen::Index j = 0; j < mm.cols(); ++j)
        s += mm.col(j).norm();
    return s;
}

MuNu mu_nu(Tensor const& w, Dataset const& data)
{
    if (data.size() == 0)
        throw std::invalid_argument("mu_nu: empty dataset");
    if (w.cols() != data.dim())
        throw ShapeError("mu_nu: weight and input widths differ");
    // Extended-precision accumulation; the trace is formed from unnormalized
    // exponentials so uniform predictions give exactly (c - 1) / c.
    long double mu = 0, nu = 0;
    for (std::size_t i = 0; i < data.size(); ++i)
    {
        Tensor z = logits_of(w, data.features.row(i));
        mu += ce_grad(z, data.labels[i]).norm();
        double zmax = *std::max_element(z.data().begin(), z.data().end());
        std::vector<double> e(z.size());
        double total = 0;
        for (std::size_t k = 0; k < e.size(); ++k)
            total += e[k] = std::exp(z[k] - zmax);
        double num = 0;
        for (std::size_t k = 0; k < e.size(); ++k)
        {
            double rest = 0;
            for (std::size_t j = 0; j < e.size(); ++j)
                if (j != k)
                    rest += e[j];
            num += e[k] * rest;
        }
        nu += num / (total * total);
    }
    auto n = static_cast<long double>(data.size());
    MuNu out;
    out.mu = static_cast<double>(mu / n);
    out.nu = static_cast<double>(nu / n);
    return out;
}

double max_sq_norm(Dataset const& data)
{
    double m = 0;
    for (std::size_t i = 0; i < data.size(); ++i)
    {
        double s = 0;
        for (std::size_t k = 0; k < data.dim(); ++k)
            s += data.features(i, k) * data.features(i, k);
        m = std::max(m, s);
    }
    return m;
}

double theta(std::size_t n, std::size_t c, double max_sq)
{
    if (n < 1 || c < 1)
        throw std::invalid_argument("theta: n and c must be positive");
    double l = std::log(static_cast<double>(n) * static_cast<double>(c));
    return l * l * l * max_sq;
}

double theta(Dataset const& data, std::size_t c)
{
    return theta(data.size(), c, max_sq_norm(data));
}

double truncated_loss(Tensor const& logits, std::size_t y, double b)
{
    if (!(b > 0))
        throw std::invalid_argument("truncated_loss: B must be positive");
    return std::min(b, ce_loss(logits, y));
}

BoundTerms bound_terms(BoundInputs const& in)
{
    if (in.n < 1 || !(in.b > 0) || !(in.delta > 0))
        throw std::invalid_argument("bound_terms: need n >= 1, B > 0, delta > 0");
    BoundTerms t;
    auto n = static_cast<double>(in.n);
    // log log n is negative or undefined below n = 3; clamp at zero
    double loglog = in.n >= 3 ? std::log(std::log(n)) : 0.0;
    t.zeta = in.b * (std::log(1.0 / in.delta) + std::max(0.0, loglog)) / n;
    if (in.a == 0.0)
        return t;
    double nu = in.nu;
    if (nu == 0.0)
    {
        nu = std::numeric_limits<double>::epsilon();
        t.nu_substituted = true;
    }
    t.term1 = std::cbrt((in.a * in.mu) * (in.a * in.mu)) * std::cbrt(in.theta * in.b)
              / std::cbrt(n);
    t.term2 = in.a * std::sqrt(in.b * nu * in.theta) / std::sqrt(n);
    double core = in.b * in.a * in.a * in.theta;
    double l3 = std::log(core / (nu * n));
    t.term3 = core / (n * (l3 * l3 + 1.0));
    double tau2 = in.tau * in.tau;
    double l3t = std::log(core * tau2 * tau2 / (n * nu));
    t.term3_tau = core * tau2 / (n * (l3t * l3t + 1.0));
    return t;
}

nlohmann::ordered_json BoundReport::to_json() const
{
    nlohmann::ordered_json j;
    j["A"] = a;
    j["mu"] = mu;
    j["nu"] = nu;
    j["kappa"] = kappa;
    j["theta"] = theta;
    j["B"] = b;
    j["delta"] = delta;
    j["n"] = n;
    j["c"] = c;
    j["zeta"] = terms.zeta;
    j["term1"] = terms.term1;
    j["term2"] = terms.term2;
    j["term3"] = terms.term3;
    j["term3_tau"] = terms.term3_tau;
    j["nu_substituted"] = terms.nu_substituted;
    j["train_truncated_loss"] = train_truncated;
    j["test_truncated_loss"] = test_truncated;
    j["empirical_gap"] = empirical_gap;
    j["bias_folded"] = bias_folded;
    return j;
}

BoundReport bound_report(MlpModel const& model,
                         Dataset const& train,
                         Dataset const& test,
                         double b,
                         double delta)
{
    if (model.hidden_layers() != 0)
        throw std::invalid_argument("bound_report: only linear models are supported");
    if (train.size() == 0 || test.size() == 0)
        throw std::invalid_argument("bound_report: datasets must be nonempty");
    if (!(b > 0) || !(delta > 0))
        throw std::invalid_argument("bound_report: B and delta must be positive");

    Tensor w = model.weight(1);
    Dataset tr = train, te = test;
    BoundReport r;
    if (model.bias(1).max_abs() > 0)
    {
        auto c = w.rows(), d = w.cols();
        Tensor aug = Tensor::matrix(c, d + 1);
        for (std::size_t i = 0; i < c; ++i)
        {
            for (std::size_t k = 0; k < d; ++k)
                aug(i, k) = w(i, k);
            aug(i, d) = model.bias(1)[i];
        }
        w = std::move(aug);
        tr = append_constant(train);
        te = append_constant(test);
        r.bias_folded = true;
    }
    r.a = two_one_norm(w.transposed());
    auto mn = mu_nu(w, tr);
    r.mu = mn.mu;
    r.nu = mn.nu;
    double msq = max_sq_norm(tr);
    r.kappa = std::sqrt(msq);
    r.n = tr.size();
    r.c = w.rows();
    r.theta = theta(r.n, r.c, msq);
    r.b = b;
    r.delta = delta;
    r.terms = bound_terms({r.a, r.mu, r.nu, r.theta, b, delta, r.n, std::sqrt(2.0)});
    r.train_truncated = mean_truncated(w, tr, b);
    r.test_truncated = mean_truncated(w, te, b);
    r.empirical_gap = r.test_truncated - 1.01 * r.train_truncated;
    return r;
}

}  // namespace dropreg
