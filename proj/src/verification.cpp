// SPDX-License-Identifier: Apache-2.0
#include "dropreg/verification.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace dropreg
{
namespace
{
char const* kind_name(CheckItem::Kind k)
{
    switch (k)
    {
    case CheckItem::Kind::absolute:
        return "absolute";
    case CheckItem::Kind::relative:
        return "relative";
    case CheckItem::Kind::at_most:
        return "at_most";
    case CheckItem::Kind::at_least:
        return "at_least";
    }
    return "?";
}

Tensor random_logits(std::size_t c, RngStream& rng, double scale)
{
    Tensor z({c});
    for (auto& v : z.data())
        v = scale * rng.normal();
    return z;
}

double frobenius_diff(Tensor const& a, Tensor const& b)
{
    return (a - b).norm();
}

MlpModel random_small_model(RngStream& rng)
{
    std::size_t d0 = 2 + rng.uniform_index(7);
    std::size_t layers = 1 + rng.uniform_index(2);
    std::vector<std::size_t> dims{d0};
    std::vector<Activation> acts;
    for (std::size_t l = 0; l < layers; ++l)
    {
        dims.push_back(2 + rng.uniform_index(31));
        acts.push_back(rng.uniform() < 0.5 ? Activation::tanh : Activation::relu);
    }
    dims.push_back(2 + rng.uniform_index(15));
    return MlpModel::random(dims, acts, rng.split(0), 1.5);
}

Tensor random_input(std::size_t d, RngStream& rng)
{
    Tensor x({d});
    for (auto& v : x.data())
        v = rng.normal();
    return x;
}
}  // namespace

//---------------------------------------------------------------------------//
CheckItem& CheckReport::check(std::string item,
                              double measured,
                              double reference,
                              double tolerance,
                              CheckItem::Kind kind)
{
    CheckItem c{std::move(item), measured, reference, tolerance, kind, false};
    double diff = measured - reference;
    switch (kind)
    {
    case CheckItem::Kind::absolute:
        c.pass = std::abs(diff) <= tolerance;
        break;
    case CheckItem::Kind::relative:
        c.pass = std::abs(diff) <= tolerance * std::abs(reference);
        break;
    case CheckItem::Kind::at_most:
        c.pass = measured <= reference + tolerance;
        break;
    case CheckItem::Kind::at_least:
        c.pass = measured >= reference - tolerance;
        break;
    }
    // NaN never passes
    c.pass = c.pass && std::isfinite(measured);
    pass = pass && c.pass;
    items.push_back(std::move(c));
    return items.back();
}

void CheckReport::report(std::string item, double v)
{
    info.emplace_back(std::move(item), v);
}

double CheckReport::value(std::string const& item) const
{
    for (auto const& c : items)
        if (c.name == item)
            return c.measured;
    for (auto const& [k, v] : info)
        if (k == item)
            return v;
    throw std::out_of_range("no report entry '" + item + "'");
}

nlohmann::ordered_json CheckReport::to_json() const
{
    nlohmann::ordered_json j;
    j["name"] = name;
    j["pass"] = pass;
    j["samples"] = samples;
    j["seed"] = seed;
    auto arr = nlohmann::ordered_json::array();
    for (auto const& c : items)
    {
        arr.push_back({{"name", c.name},
                       {"measured", c.measured},
                       {"reference", c.reference},
                       {"tolerance", c.tolerance},
                       {"kind", kind_name(c.kind)},
                       {"pass", c.pass}});
    }
    j["checks"] = std::move(arr);
    nlohmann::ordered_json inf = nlohmann::ordered_json::object();
    for (auto const& [k, v] : info)
        inf[k] = v;
    j["info"] = std::move(inf);
    return j;
}

//---------------------------------------------------------------------------//
CheckReport derivative_identity_check(std::vector<std::size_t> const& classes,
                                      std::size_t cases,
                                      RngStream const& rng,
                                      double tolerance)
{
    CheckReport r;
    r.name = "derivative_identities";
    r.seed = rng.seed();
    double worst_grad = 0, worst_hess = 0;
    for (auto c : classes)
    {
        for (std::size_t i = 0; i < cases; ++i)
        {
            RngStream sub = rng.split({c, i});
            Tensor z = random_logits(c, sub, 3.0);
            auto y = sub.uniform_index(c);
            Tensor g = ce_grad(z, y);
            Tensor g_fd = finite_diff_grad([&](Tensor const& t) { return ce_loss(t, y); }, z, 1e-5);
            worst_grad = std::max(worst_grad, frobenius_diff(g, g_fd) / g_fd.norm());
            Tensor h = ce_hessian(z);
            // H is label independent; differencing the gradient for the top
            // class keeps every component free of the 1 - p cancellation.
            auto top = static_cast<std::size_t>(
                std::max_element(z.values().begin(), z.values().end()) - z.values().begin());
            Tensor h_fd = finite_diff_jacobian([&](Tensor const& t) { return ce_grad(t, top); },
                                               z, 1e-6);
            worst_hess = std::max(worst_hess, frobenius_diff(h, h_fd) / h_fd.norm());
            ++r.samples;
        }
    }
    r.check("ce_grad_max_rel_err", worst_grad, 0.0, tolerance, CheckItem::Kind::at_most);
    r.check("ce_hessian_max_rel_err", worst_hess, 0.0, tolerance, CheckItem::Kind::at_most);
    return r;
}

CheckReport outer_product_check(std::vector<std::size_t> const& classes,
                                std::size_t cases,
                                RngStream const& rng,
                                double tolerance)
{
    CheckReport r;
    r.name = "hessian_outer_product";
    r.seed = rng.seed();
    double worst = 0;
    for (auto c : classes)
    {
        for (std::size_t i = 0; i < cases; ++i)
        {
            RngStream sub = rng.split({c, i});
            Tensor z = random_logits(c, sub, 3.0);
            Tensor p = softmax(z);
            Tensor expect = Tensor::matrix(c, c);
            for (std::size_t yh = 0; yh < c; ++yh)
            {
                Tensor g = ce_grad(z, yh);
                for (std::size_t a = 0; a < c; ++a)
                    for (std::size_t b = 0; b < c; ++b)
                        expect(a, b) += p[yh] * g[a] * g[b];
            }
            worst = std::max(worst, (expect - ce_hessian(z)).max_abs());
            ++r.samples;
        }
    }
    r.check("max_entry_diff", worst, 0.0, tolerance, CheckItem::Kind::at_most);
    return r;
}

CheckReport sampled_unbiasedness_check(std::size_t cases, RngStream const& rng, double tolerance)
{
    CheckReport r;
    r.name = "sampled_regularizer_unbiasedness";
    r.seed = rng.seed();
    double worst = 0;
    for (std::size_t i = 0; i < cases; ++i)
    {
        RngStream sub = rng.split(i);
        auto model = random_small_model(sub);
        Tensor x = random_input(model.input_dim(), sub);
        Tensor p = forward_trace(model, x).probs;
        double enumerated = 0;
        for (std::size_t yh = 0; yh < model.num_classes(); ++yh)
            enumerated += p[yh] * explicit_reg_for_label(model, x, yh, {});
        double exact = explicit_reg_exact(model, x).total;
        worst = std::max(worst, std::abs(enumerated - exact));
        ++r.samples;
    }
    r.check("max_abs_diff", worst, 0.0, tolerance, CheckItem::Kind::at_most);
    return r;
}

CheckReport mask_moment_check(std::vector<double> const& qs,
                              std::size_t n,
                              RngStream const& rng,
                              double sigmas)
{
    CheckReport r;
    r.name = "mask_moments";
    r.seed = rng.seed();
    r.samples = n;
    std::vector<std::size_t> dims{n, 2};
    for (std::size_t qi = 0; qi < qs.size(); ++qi)
    {
        DropoutSpec spec{qs[qi], {0}};
        RngStream sub = rng.split(qi);
        auto mask = sample_mask(spec, dims, sub);
        auto const& eta = mask.eta.front().data();
        double nd = static_cast<double>(n);
        double m1 = 0, m2 = 0;
        for (double e : eta)
        {
            m1 += e;
            m2 += e * e;
        }
        m1 /= nd;
        m2 /= nd;
        double v1 = 0, v2 = 0;
        for (double e : eta)
        {
            v1 += (e - m1) * (e - m1);
            v2 += (e * e - m2) * (e * e - m2);
        }
        double se1 = std::sqrt(v1 / (nd - 1) / nd);
        double se2 = std::sqrt(v2 / (nd - 1) / nd);
        std::string tag = "q=" + std::to_string(qs[qi]).substr(0, 4);
        r.check(tag + " mean", m1, 0.0, sigmas * se1);
        r.check(tag + " second_moment", m2, spec.kept_value(), sigmas * se2);
    }
    return r;
}

//---------------------------------------------------------------------------//
FdHessian hessian_hidden_fd_full(MlpModel const& model,
                                 LabeledExample const& example,
                                 std::size_t site,
                                 double step)
{
    auto trace = forward_trace(model, example.x);
    auto y = example.y;
    return finite_diff_hessian(
        [&](Tensor const& h) { return ce_loss(tail_logits(model, site, h), y); },
        trace.site(site), step);
}

Tensor hessian_hidden_fd(MlpModel const& model,
                         LabeledExample const& example,
                         std::size_t site,
                         double step)
{
    return hessian_hidden_fd_full(model, example, site, step).symmetric;
}

Tensor psd_hidden_hessian(MlpModel const& model, Tensor const& x, std::size_t site)
{
    auto trace = forward_trace(model, x);
    Tensor jac = tail_jacobian(model, trace, site);
    Tensor hout = ce_hessian(trace.logits);
    RowMatrix m = jac.as_matrix().transpose() * hout.as_matrix() * jac.as_matrix();
    return Tensor::from_eigen(m);
}

double diag_weighted(Tensor const& hessian, Tensor const& h)
{
    if (hessian.rows() != h.size() || hessian.cols() != h.size())
        throw ShapeError("diag_weighted: Hessian and activation disagree");
    double v = 0;
    for (std::size_t k = 0; k < h.size(); ++k)
        v += hessian(k, k) * h[k] * h[k];
    return v;
}

CheckReport decomposition_check(MlpModel const& model,
                                LabeledExample const& example,
                                std::size_t site,
                                double step)
{
    CheckReport r;
    r.name = "hessian_decomposition_site_" + std::to_string(site);
    auto fd = hessian_hidden_fd_full(model, example, site, step);
    Tensor psd = psd_hidden_hessian(model, example.x, site);
    Tensor rest = fd.symmetric - psd;
    auto trace = forward_trace(model, example.x);
    Tensor const& h = trace.site(site);
    double q_fd = diag_weighted(fd.symmetric, h);
    double q_psd = diag_weighted(psd, h);
    r.report("hfd_quadratic", q_fd);
    r.report("psd_quadratic", q_psd);
    r.report("nonpsd_quadratic", diag_weighted(rest, h));
    r.report("psd_fraction", q_fd != 0.0 ? q_psd / q_fd : 0.0);
    double nfd = fd.symmetric.norm();
    r.report("nonpsd_rel_norm", nfd > 0 ? rest.norm() / nfd : rest.norm());
    Eigen::SelfAdjointEigenSolver<RowMatrix> eig(RowMatrix(psd.as_matrix()),
                                                 Eigen::EigenvaluesOnly);
    double min_eig = psd.size() ? eig.eigenvalues().minCoeff() : 0.0;
    r.check("psd_min_eigenvalue", min_eig, 0.0, 1e-8, CheckItem::Kind::at_least);
    r.check("fd_asymmetry", fd.asymmetry, 0.0, 1e-6, CheckItem::Kind::at_most);
    r.samples = 1;
    return r;
}

//---------------------------------------------------------------------------//
CheckReport taylor_fidelity(MlpModel const& model,
                            Dataset const& examples,
                            DropoutSpec const& spec,
                            RngStream const& rng,
                            TaylorOptions const& options)
{
    spec.validate(model);
    if (options.n < 2)
        throw std::invalid_argument("taylor_fidelity: need at least two masks");
    CheckReport r;
    r.name = "taylor_fidelity";
    r.seed = rng.seed();
    r.samples = options.n * examples.size();
    double factor = 0.5 * spec.kept_value();
    double quad = 0, psd = 0, mc = 0, var = 0, mc_plain = 0, var_plain = 0;
    auto dims = model.dims();
    for (std::size_t e = 0; e < examples.size(); ++e)
    {
        auto ex = examples.example(e);
        auto trace = forward_trace(model, ex.x);
        std::vector<Tensor> lin;
        for (auto s : spec.sites)
        {
            if (spec.q > 0)
                quad += factor * diag_weighted(hessian_hidden_fd(model, ex, s, options.step),
                                               trace.site(s));
            lin.push_back(hadamard(loss_jacobian_hidden(model, trace, ex.y, s), trace.site(s)));
        }
        psd += factor * explicit_reg_exact(model, ex.x, spec.sites).total;
        double clean = ce_loss(trace.logits, ex.y);
        RngStream sub = rng.split(e);
        auto plain = elldrop_mc(model, ex, spec, options.n, sub, options.threads);
        mc_plain += plain.mean - clean;
        var_plain += plain.std_error * plain.std_error;
        if (options.control_variate)
        {
            auto cv = mc_mean(
                [&](RngStream& s) {
                    auto mask = sample_mask(spec, dims, s);
                    double v = ce_loss(dropped_forward(model, ex.x, mask).logits, ex.y) - clean;
                    // first-order term J^l (eta h) has mean zero
                    for (std::size_t k = 0; k < lin.size(); ++k)
                        v -= lin[k].dot(mask.eta[k]);
                    return v;
                },
                options.n, sub, options.threads);
            mc += cv.mean;
            var += cv.std_error * cv.std_error;
        }
        else
        {
            mc += plain.mean - clean;
            var += plain.std_error * plain.std_error;
        }
    }
    double se = std::sqrt(var);
    r.report("mc_rdrop", mc);
    r.report("mc_std_error", se);
    r.report("mc_rdrop_plain", mc_plain);
    r.report("mc_plain_std_error", std::sqrt(var_plain));
    r.report("quadratic_prediction", quad);
    r.report("psd_prediction", psd);
    bool degenerate = spec.q == 0.0 || mc == 0.0;
    double rel_se = degenerate ? 0.0 : se / std::abs(mc);
    r.report("quadratic_fraction", degenerate ? 0.0 : quad / mc);
    r.report("psd_fraction", degenerate ? 0.0 : psd / mc);
    r.report("quadratic_residual", degenerate ? 0.0 : std::abs(mc - quad) / std::abs(mc));
    r.report("rel_std_error", rel_se);
    if (!degenerate && rel_se > options.max_rel_std_error)
        throw NumericError("taylor_fidelity: MC standard error is "
                           + std::to_string(rel_se) + " of the estimate; use more samples");
    if (options.max_quadratic_residual)
        r.check("quadratic_residual", r.value("quadratic_residual"), 0.0,
                *options.max_quadratic_residual, CheckItem::Kind::at_most);
    if (options.min_psd_fraction)
        r.check("psd_fraction", r.value("psd_fraction"), *options.min_psd_fraction, 0.0,
                CheckItem::Kind::at_least);
    return r;
}

//---------------------------------------------------------------------------//
namespace
{
//! 1 - p_i summed from the other probabilities, exact near saturation.
std::vector<double> complements(Tensor const& p)
{
    std::vector<double> out(p.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i)
        for (std::size_t j = 0; j < p.size(); ++j)
            if (j != i)
                out[i] += p[j];
    return out;
}
}  // namespace

double hessian_trace(Tensor const& logits)
{
    Tensor p = softmax(logits);
    auto comp = complements(p);
    double t = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
        t += p[i] * comp[i];
    return t;
}

Tensor exp_tail_gradient(Tensor const& logits)
{
    Tensor p = softmax(logits);
    auto comp = complements(p);
    auto c = p.size();
    Tensor g({c});
    for (std::size_t i = 0; i < c; ++i)
    {
        double w = (comp[i] - p[i]) * p[i];
        for (std::size_t j = 0; j < c; ++j)
            g[j] += w * (i == j ? comp[i] : -p[j]);
    }
    return g;
}

CheckReport exp_tail_check(std::size_t c,
                           std::size_t trials,
                           RngStream const& rng,
                           std::size_t fd_trials,
                           double slack)
{
    if (trials < 1)
        throw std::invalid_argument("exp_tail_check: need at least one trial");
    CheckReport r;
    r.name = "exp_tail_c" + std::to_string(c);
    r.seed = rng.seed();
    r.samples = trials;
    double const tau = std::sqrt(2.0);
    std::size_t violations = 0;
    double max_ratio = 0, worst_fd = 0;
    for (std::size_t t = 0; t < trials; ++t)
    {
        RngStream sub = rng.split(t);
        double scale = 0.1 + 4.9 * sub.uniform();
        Tensor z = random_logits(c, sub, scale);
        Tensor g = exp_tail_gradient(z);
        double tr = hessian_trace(z);
        double gn = g.norm();
        if (gn > tau * tr + slack)
            ++violations;
        if (tr > 0)
            max_ratio = std::max(max_ratio, gn / tr);
        if (t < fd_trials)
        {
            Tensor g_fd = finite_diff_grad(hessian_trace, z, 1e-5);
            worst_fd = std::max(worst_fd, frobenius_diff(g, g_fd) / g_fd.norm());
        }
    }
    r.check("violations", static_cast<double>(violations), 0.0, 0.0);
    r.check("fd_max_rel_err", worst_fd, 0.0, 1e-5, CheckItem::Kind::at_most);
    r.report("max_ratio", max_ratio);
    r.report("tau", tau);
    return r;
}

//---------------------------------------------------------------------------//
CheckReport covariance_identity_suite(MlpModel const& model,
                                      LabeledExample const& example,
                                      DropoutSpec const& spec,
                                      std::vector<std::size_t> const& ks,
                                      RngStream const& rng,
                                      CovarianceSuiteOptions const& options)
{
    spec.validate(model);
    CheckReport r;
    r.name = "covariance_identities";
    r.seed = rng.seed();
    r.samples = options.n;
    auto batch = Dataset::from_examples({example});
    CovarianceOptions copts;
    copts.mode = CovarianceMode::diagonal;
    copts.threads = options.threads;
    auto trace_of = [&](GradSampler const& f) { return mc_covariance(f, options.n, rng, copts).trace; };

    double raw = trace_of([&](RngStream& s) { return drop_k_gradient(model, batch, spec, 1, s); });
    r.report("trace_raw", raw);
    bool zero = raw == 0.0;
    for (auto k : ks)
    {
        double t = trace_of([&](RngStream& s) { return drop_k_gradient(model, batch, spec, k, s); });
        auto name = "drop_" + std::to_string(k);
        r.report("trace_" + name, t);
        if (zero)
            r.check(name + " trace", t, 0.0, 0.0);
        else
            r.check(name + " k*trace/raw", static_cast<double>(k) * t / raw, 1.0,
                    options.drop_k_tolerance, CheckItem::Kind::relative);
    }
    double tilde = trace_of([&](RngStream& s) { return xi_tilde_sample(model, example, spec, s); });
    r.report("trace_xi_tilde", tilde);
    if (zero)
        r.check("xi_tilde trace", tilde, 0.0, 0.0);
    else
        r.check("xi_tilde/raw", tilde / raw, 2.0, options.xi_tilde_tolerance,
                CheckItem::Kind::relative);
    double ours = trace_of([&](RngStream& s) { return implicit_noise_sample(model, example, spec, s); });
    r.report("trace_xi_ours", ours);
    if (!zero)
    {
        r.report("xi_ours/raw", ours / raw);
        if (options.xi_ours_tolerance)
            r.check("xi_ours/raw", ours / raw, 1.0, *options.xi_ours_tolerance,
                    CheckItem::Kind::relative);
    }
    for (auto k : ks)
    {
        if (k < 2)
            continue;
        for (auto src : {NoiseSource::xi_tilde, NoiseSource::xi_ours})
        {
            double t = trace_of([&](RngStream& s) {
                return corrected_drop_k_gradient(model, batch, spec, k, src, s);
            });
            auto name = "corrected_" + std::to_string(k) + "_" + to_string(src);
            r.report("trace_" + name, t);
            if (zero)
                r.check(name + " trace", t, 0.0, 0.0);
            else if (src == NoiseSource::xi_tilde)
                r.check(name + "/raw", t / raw, 1.0, options.corrected_tolerance,
                        CheckItem::Kind::relative);
            else
                r.report(name + "/raw", t / raw);
        }
    }
    return r;
}

//---------------------------------------------------------------------------//
double relative_error(std::vector<double> const& a, std::vector<double> const& b)
{
    if (a.size() != b.size())
        throw ShapeError("relative_error: length mismatch");
    double diff = 0, ref = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
    {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        ref += b[i] * b[i];
    }
    return ref > 0 ? std::sqrt(diff / ref) : std::sqrt(diff);
}

std::vector<double> finite_diff_params(MlpModel const& model,
                                       std::function<double(MlpModel const&)> const& f,
                                       double step)
{
    Tensor point = Tensor::vector(model.flatten());
    MlpModel work = model;
    auto g = finite_diff_grad(
        [&](Tensor const& theta) {
            work.assign(theta.values());
            return f(work);
        },
        point, step);
    return g.values();
}

double implicit_noise_value(MlpModel const& model,
                            Dataset const& batch,
                            std::vector<std::size_t> const& sites,
                            std::vector<Tensor> const& eta)
{
    if (eta.size() != sites.size())
        throw ShapeError("implicit_noise_value: one eta per site required");
    double total = 0;
    for (std::size_t r = 0; r < batch.size(); ++r)
    {
        auto ex = batch.example(r);
        auto trace = forward_trace(model, ex.x);
        for (std::size_t k = 0; k < sites.size(); ++k)
        {
            Tensor lj = loss_jacobian_hidden(model, trace, ex.y, sites[k]);
            Tensor const& h = trace.site(sites[k]);
            for (std::size_t c = 0; c < h.size(); ++c)
                total += lj[c] * eta[k](r, c) * h[c];
        }
    }
    return total;
}

double regularized_objective_reference(MlpModel const& model,
                                       Dataset const& batch,
                                       RegularizerConfig const& config,
                                       RegularizerDraws const& draws)
{
    auto sites = config.sites.empty() ? default_sites(model) : config.sites;
    double total = 0;
    for (std::size_t i = 0; i < batch.size(); ++i)
    {
        auto ex = batch.example(i);
        total += ce_loss(forward_trace(model, ex.x).logits, ex.y);
        if (config.lambda1 == 0.0)
            continue;
        double reg = 0;
        switch (config.variant)
        {
        case RegularizerVariant::exact_hessian:
            reg = explicit_reg_exact(model, ex.x, sites).total;
            break;
        case RegularizerVariant::sampled_hessian:
            reg = explicit_reg_for_label(model, ex.x, draws.labels.at(i), sites);
            break;
        case RegularizerVariant::jacobian_approx:
            reg = reg_jacobian_approx(model, ex.x, ex.y, sites);
            break;
        case RegularizerVariant::identity_hessian:
            if (config.identity_sampled)
            {
                std::vector<Tensor> signs;
                for (auto const& s : draws.signs)
                    signs.push_back(s.row(i));
                reg = reg_identity_hessian_signs(model, ex.x, signs, sites);
            }
            else
            {
                RngStream unused(0);
                reg = reg_identity_hessian(model, ex.x, unused, EstimatorMode::exact, sites);
            }
            break;
        }
        total += config.lambda1 * reg;
    }
    return total / static_cast<double>(batch.size());
}

CheckReport grad_check_suite(MlpModel const& model,
                             Dataset const& examples,
                             RngStream const& rng,
                             GradCheckOptions const& options)
{
    CheckReport r;
    r.name = "gradient_checks";
    r.seed = rng.seed();
    r.samples = examples.size();

    auto ad_loss = batch_gradient(model, examples.features, examples.labels);
    RegularizerConfig plain;
    auto fd_loss = finite_diff_params(
        model,
        [&](MlpModel const& m) { return regularized_objective_reference(m, examples, plain, {}); },
        options.step);
    r.check("loss", relative_error(ad_loss.values(), fd_loss), 0.0, options.loss_tolerance,
            CheckItem::Kind::at_most);

    struct Case
    {
        RegularizerVariant variant;
        bool identity_sampled;
        char const* name;
    };
    Case const cases[] = {
        {RegularizerVariant::exact_hessian, true, "exact-hessian"},
        {RegularizerVariant::sampled_hessian, true, "sampled-hessian"},
        {RegularizerVariant::jacobian_approx, true, "jacobian-approx"},
        {RegularizerVariant::identity_hessian, true, "identity-hessian-sampled"},
        {RegularizerVariant::identity_hessian, false, "identity-hessian-exact"},
    };
    std::uint64_t idx = 0;
    for (auto const& c : cases)
    {
        RegularizerConfig cfg;
        cfg.variant = c.variant;
        cfg.identity_sampled = c.identity_sampled;
        cfg.lambda1 = 1.0;
        auto draws = draw_regularizer_noise(model, examples.features, cfg, rng.split(idx++));
        auto ad = combined_objective_gradient(model, examples, cfg, draws);
        auto fd = finite_diff_params(
            model,
            [&](MlpModel const& m) { return regularized_objective_reference(m, examples, cfg, draws); },
            options.step);
        r.check(std::string("regularizer ") + c.name, relative_error(ad.values(), fd), 0.0,
                options.regularizer_tolerance, CheckItem::Kind::at_most);
    }

    auto sites = default_sites(model);
    std::vector<Tensor> eta;
    RngStream signs = rng.split(idx);
    for (auto s : sites)
    {
        Tensor e = Tensor::matrix(examples.size(), model.site_width(s));
        for (auto& v : e.data())
            v = signs.rademacher();
        eta.push_back(std::move(e));
    }
    auto ad_noise = implicit_noise_for(model, examples, sites, eta, 1.0);
    double inv_m = 1.0 / static_cast<double>(examples.size());
    auto fd_noise = finite_diff_params(
        model,
        [&](MlpModel const& m) { return inv_m * implicit_noise_value(m, examples, sites, eta); },
        options.step);
    r.check("implicit noise", relative_error(ad_noise.values(), fd_noise), 0.0,
            options.noise_tolerance, CheckItem::Kind::at_most);
    return r;
}

}  // namespace dropreg
