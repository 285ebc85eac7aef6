// SPDX-License-Identifier: Apache-2.0
#include "dropreg/regularizers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dropreg
{
namespace
{
std::vector<std::size_t> sites_or_default(MlpModel const& model,
                                          std::vector<std::size_t> const& sites)
{
    return sites.empty() ? default_sites(model) : sites;
}

bool uses_input_site(std::vector<std::size_t> const& sites)
{
    return std::find(sites.begin(), sites.end(), 0u) != sites.end();
}

//! Row selector: m x c constant with ones in column j.
ad::Var column_selector(std::size_t rows, std::size_t cols, std::size_t j)
{
    Tensor e = Tensor::matrix(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
        e(r, j) = 1.0;
    return ad::constant(std::move(e));
}

std::vector<ad::Var> site_vars(GraphForward const& fwd, std::vector<std::size_t> const& sites)
{
    std::vector<ad::Var> out;
    for (auto s : sites)
        out.push_back(fwd.sites.at(s));
    return out;
}

//! Rows of J_i for every class: result[j][k] is m x d_{site k}.
std::vector<std::vector<ad::Var>> logit_jacobian_rows(GraphForward const& fwd,
                                                      std::vector<std::size_t> const& sites)
{
    auto m = fwd.logits.rows();
    auto c = fwd.logits.cols();
    auto wrt = site_vars(fwd, sites);
    std::vector<std::vector<ad::Var>> rows;
    for (std::size_t j = 0; j < c; ++j)
    {
        auto out = ad::sum(fwd.logits * column_selector(m, c, j));
        rows.push_back(ad::grad(out, wrt, true));
    }
    return rows;
}

//! Forward-mode tangent of the logits for a site-`site` direction v.
ad::Var graph_jvp(MlpModel const& model,
                  GraphParams const& params,
                  GraphForward const& fwd,
                  std::size_t site,
                  ad::Var const& v)
{
    auto L = model.hidden_layers();
    ad::Var t = v;
    for (std::size_t l = site + 1; l <= L; ++l)
    {
        auto u = ad::matmul(t, ad::transpose(params.weights[l - 1]));
        auto const& h = fwd.sites[l];
        ad::Var slope;
        if (model.activation(l) == Activation::tanh)
            slope = ad::add_scalar(-ad::square(h), 1.0);
        else
        {
            Tensor step = h.value();
            for (auto& x : step.data())
                x = x > 0 ? 1.0 : 0.0;
            slope = ad::constant(std::move(step));
        }
        t = slope * u;
    }
    return ad::matmul(t, ad::transpose(params.weights[L]));
}

std::vector<ad::Var> regularizer_terms(MlpModel const& model,
                                       GraphParams const& params,
                                       GraphForward const& fwd,
                                       std::vector<std::size_t> const& labels,
                                       RegularizerConfig const& config,
                                       RegularizerDraws const& draws)
{
    auto sites = sites_or_default(model, config.sites);
    auto m = fwd.logits.rows();
    std::vector<ad::Var> terms;
    switch (config.variant)
    {
    case RegularizerVariant::sampled_hessian:
    case RegularizerVariant::jacobian_approx: {
        auto const& lab = config.variant == RegularizerVariant::sampled_hessian
                              ? draws.labels
                              : labels;
        if (lab.size() != m)
            throw std::invalid_argument("regularizer: one label per row required");
        auto loss = ad::sum(ad::cross_entropy_rows(fwd.logits, lab));
        auto jac = ad::grad(loss, site_vars(fwd, sites), true);
        for (std::size_t k = 0; k < sites.size(); ++k)
            terms.push_back(ad::sum(ad::square(jac[k] * fwd.sites[sites[k]])));
        break;
    }
    case RegularizerVariant::exact_hessian: {
        auto p = ad::softmax_rows(fwd.logits);
        auto c = fwd.logits.cols();
        auto rows = logit_jacobian_rows(fwd, sites);
        for (std::size_t k = 0; k < sites.size(); ++k)
        {
            auto const& h = fwd.sites[sites[k]];
            auto d = h.cols();
            ad::Var first, mean;
            for (std::size_t j = 0; j < c; ++j)
            {
                auto pj = ad::broadcast_cols(ad::sum_cols(p * column_selector(m, c, j)), d);
                auto a = pj * ad::square(rows[j][k]);
                auto b = pj * rows[j][k];
                first = first.defined() ? first + a : a;
                mean = mean.defined() ? mean + b : b;
            }
            // <J^T (diag p - p p^T) J, diag h^2> per row
            terms.push_back(ad::sum(ad::square(h) * (first - ad::square(mean))));
        }
        break;
    }
    case RegularizerVariant::identity_hessian: {
        if (config.identity_sampled)
        {
            if (draws.signs.size() != sites.size())
                throw std::invalid_argument("regularizer: missing sign draws");
            for (std::size_t k = 0; k < sites.size(); ++k)
            {
                auto const& h = fwd.sites[sites[k]];
                auto t = graph_jvp(model, params, fwd, sites[k], ad::constant(draws.signs[k]) * h);
                terms.push_back(ad::sum(ad::square(t)));
            }
        }
        else
        {
            auto rows = logit_jacobian_rows(fwd, sites);
            for (std::size_t k = 0; k < sites.size(); ++k)
            {
                ad::Var acc;
                for (auto const& r : rows)
                {
                    auto a = ad::square(r[k]);
                    acc = acc.defined() ? acc + a : a;
                }
                terms.push_back(ad::sum(ad::square(fwd.sites[sites[k]]) * acc));
            }
        }
        break;
    }
    }
    return terms;
}

struct BuiltObjective
{
    GraphParams params;
    ad::Var objective;
};

BuiltObjective build_objective(MlpModel const& model,
                               Dataset const& batch,
                               RegularizerConfig const& config,
                               RegularizerDraws const* draws,
                               std::vector<Tensor> const* eta)
{
    if (batch.size() == 0)
        throw std::invalid_argument("empty batch");
    auto sites = sites_or_default(model, config.sites);
    bool reg = config.lambda1 > 0 && draws;
    bool noise = config.lambda2 > 0 && eta;
    BuiltObjective out;
    out.params = graph_params(model);
    auto input = (reg || noise) && uses_input_site(sites)
                     ? ad::parameter(batch.features)
                     : ad::constant(batch.features);
    auto fwd = graph_forward(model, out.params, input);
    double inv_m = 1.0 / static_cast<double>(batch.size());
    auto obj = inv_m * ad::sum(ad::cross_entropy_rows(fwd.logits, batch.labels));
    if (reg)
        obj = obj
              + (config.lambda1 * inv_m)
                    * regularizer_graph(model, out.params, fwd, batch.labels, config, *draws);
    if (noise)
        obj = obj
              + (config.lambda2 * inv_m)
                    * implicit_noise_scalar(model, fwd, batch.labels, sites, *eta);
    out.objective = obj;
    return out;
}

std::vector<Tensor> rademacher_rows(MlpModel const& model,
                                    std::size_t rows,
                                    std::vector<std::size_t> const& sites,
                                    RngStream const& rng,
                                    bool shared)
{
    std::vector<Tensor> eta;
    for (auto s : sites)
        eta.push_back(Tensor::matrix(rows, model.site_width(s)));
    for (std::size_t r = 0; r < rows; ++r)
    {
        RngStream sub = shared ? rng : rng.split(r);
        for (std::size_t k = 0; k < sites.size(); ++k)
            for (std::size_t c = 0; c < eta[k].cols(); ++c)
                eta[k](r, c) = sub.rademacher();
    }
    return eta;
}
}  // namespace

//---------------------------------------------------------------------------//
RegularizerVariant variant_from_string(std::string const& s)
{
    if (s == "exact-hessian")
        return RegularizerVariant::exact_hessian;
    if (s == "sampled-hessian")
        return RegularizerVariant::sampled_hessian;
    if (s == "jacobian-approx")
        return RegularizerVariant::jacobian_approx;
    if (s == "identity-hessian")
        return RegularizerVariant::identity_hessian;
    throw std::invalid_argument("unknown regularizer variant '" + s + "'");
}

std::string to_string(RegularizerVariant v)
{
    switch (v)
    {
    case RegularizerVariant::exact_hessian:
        return "exact-hessian";
    case RegularizerVariant::sampled_hessian:
        return "sampled-hessian";
    case RegularizerVariant::jacobian_approx:
        return "jacobian-approx";
    case RegularizerVariant::identity_hessian:
        return "identity-hessian";
    }
    return "?";
}

Linkage linkage_from_string(std::string const& s)
{
    if (s == "none")
        return Linkage::none;
    if (s == "experiment")
        return Linkage::experiment;
    if (s == "derivation")
        return Linkage::derivation;
    throw std::invalid_argument("unknown lambda linkage '" + s + "'");
}

std::string to_string(Linkage l)
{
    switch (l)
    {
    case Linkage::none:
        return "none";
    case Linkage::experiment:
        return "experiment";
    case Linkage::derivation:
        return "derivation";
    }
    return "?";
}

RegularizerConfig RegularizerConfig::resolved(double q) const
{
    RegularizerConfig out = *this;
    if (linkage == Linkage::none)
        return out;
    if (!(q >= 0.0 && q < 1.0))
        throw std::invalid_argument("linkage needs q in [0, 1)");
    double ratio = q / (1.0 - q);
    out.lambda1 = linkage == Linkage::experiment ? ratio : 0.5 * ratio;
    out.lambda2 = std::sqrt(ratio);
    return out;
}

void RegularizerConfig::validate(MlpModel const& model) const
{
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0))
        throw std::invalid_argument("regularization strengths must be non-negative");
    for (auto s : sites)
        if (s > model.hidden_layers())
            throw std::invalid_argument("regularizer site out of range");
}

std::vector<std::size_t> default_sites(MlpModel const& model)
{
    std::vector<std::size_t> sites;
    for (std::size_t i = 1; i <= model.hidden_layers(); ++i)
        sites.push_back(i);
    if (sites.empty())
        sites.push_back(0);
    return sites;
}

//---------------------------------------------------------------------------//
RegularizerValue explicit_reg_exact(MlpModel const& model,
                                    Tensor const& x,
                                    std::vector<std::size_t> const& sites)
{
    auto trace = forward_trace(model, x);
    Tensor hout = ce_hessian(trace.logits);
    RegularizerValue out;
    out.sites = sites_or_default(model, sites);
    for (auto s : out.sites)
    {
        Tensor jac = tail_jacobian(model, trace, s);
        RowMatrix quad = jac.as_matrix().transpose() * hout.as_matrix() * jac.as_matrix();
        auto const& h = trace.site(s);
        double v = 0;
        for (std::size_t k = 0; k < h.size(); ++k)
            v += h[k] * h[k] * quad(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
        out.per_site.push_back(v);
        out.total += v;
    }
    return out;
}

RegularizerValue explicit_reg_exact(MlpModel const& model, Tensor const& x)
{
    return explicit_reg_exact(model, x, {});
}

double explicit_reg_for_label(MlpModel const& model,
                              Tensor const& x,
                              std::size_t label,
                              std::vector<std::size_t> const& sites)
{
    auto trace = forward_trace(model, x);
    double total = 0;
    for (auto s : sites_or_default(model, sites))
    {
        Tensor lj = loss_jacobian_hidden(model, trace, label, s);
        auto const& h = trace.site(s);
        for (std::size_t k = 0; k < h.size(); ++k)
            total += lj[k] * lj[k] * h[k] * h[k];
    }
    return total;
}

double explicit_reg_sampled(MlpModel const& model,
                            Tensor const& x,
                            RngStream& rng,
                            std::vector<std::size_t> const& sites)
{
    auto p = forward_trace(model, x).probs;
    auto label = rng.categorical(p.data());
    return explicit_reg_for_label(model, x, label, sites);
}

double reg_jacobian_approx(MlpModel const& model,
                           Tensor const& x,
                           std::size_t y,
                           std::vector<std::size_t> const& sites)
{
    if (y >= model.num_classes())
        throw std::out_of_range("label out of range");
    return explicit_reg_for_label(model, x, y, sites);
}

double reg_identity_hessian(MlpModel const& model,
                            Tensor const& x,
                            RngStream& rng,
                            EstimatorMode mode,
                            std::vector<std::size_t> const& sites)
{
    auto used = sites_or_default(model, sites);
    if (mode == EstimatorMode::sampled)
    {
        std::vector<Tensor> signs;
        for (auto s : used)
        {
            Tensor eta({model.site_width(s)});
            for (auto& v : eta.data())
                v = rng.rademacher();
            signs.push_back(std::move(eta));
        }
        return reg_identity_hessian_signs(model, x, signs, used);
    }
    auto trace = forward_trace(model, x);
    double total = 0;
    for (auto s : used)
    {
        Tensor jac = tail_jacobian(model, trace, s);
        auto const& h = trace.site(s);
        for (std::size_t k = 0; k < h.size(); ++k)
        {
            double col = 0;
            for (std::size_t j = 0; j < jac.rows(); ++j)
                col += jac(j, k) * jac(j, k);
            total += h[k] * h[k] * col;
        }
    }
    return total;
}

double reg_identity_hessian_signs(MlpModel const& model,
                                  Tensor const& x,
                                  std::vector<Tensor> const& signs,
                                  std::vector<std::size_t> const& sites)
{
    auto used = sites_or_default(model, sites);
    if (signs.size() != used.size())
        throw ShapeError("one sign vector per site required");
    auto trace = forward_trace(model, x);
    double total = 0;
    for (std::size_t k = 0; k < used.size(); ++k)
    {
        Tensor v = hadamard(signs[k], trace.site(used[k]));
        Tensor t = jvp(model, trace, used[k], v);
        total += t.dot(t);
    }
    return total;
}

Tensor jvp(MlpModel const& model, ForwardTrace const& trace, std::size_t site, Tensor const& v)
{
    if (v.size() != model.site_width(site))
        throw ShapeError("jvp: direction has the wrong width");
    auto L = model.hidden_layers();
    Eigen::VectorXd t = Eigen::Map<Eigen::VectorXd const>(v.data().data(),
                                                          static_cast<Eigen::Index>(v.size()));
    for (std::size_t l = site + 1; l <= L; ++l)
    {
        Eigen::VectorXd u = model.weight(l).as_matrix() * t;
        auto const& z = trace.pre_activations.at(l - 1);
        for (Eigen::Index k = 0; k < u.size(); ++k)
        {
            double zk = z[static_cast<std::size_t>(k)];
            double slope;
            if (model.activation(l) == Activation::tanh)
            {
                double th = std::tanh(zk);
                slope = 1.0 - th * th;
            }
            else
                slope = zk > 0 ? 1.0 : 0.0;
            u(k) *= slope;
        }
        t = std::move(u);
    }
    Eigen::VectorXd out = model.weight(L + 1).as_matrix() * t;
    return Tensor::vector(std::vector<double>(out.data(), out.data() + out.size()));
}

Tensor jvp_double_backward(MlpModel const& model,
                           ForwardTrace const& trace,
                           std::size_t site,
                           Tensor const& v)
{
    if (v.size() != model.site_width(site))
        throw ShapeError("jvp: direction has the wrong width");
    auto params = graph_params(model, false);
    auto h = ad::parameter(trace.site(site));
    auto logits = graph_tail(model, params, site, h);
    auto u = ad::parameter(Tensor::matrix(1, model.num_classes()));
    // g(u) = J^T u, linear in u; differentiating <g(u), v> in u gives J v.
    auto g = ad::grad(ad::sum(logits * u), h, true);
    auto s = ad::sum(g * ad::constant(v));
    auto jv = ad::grad(s, u);
    return jv.value().reshaped({model.num_classes()});
}

//---------------------------------------------------------------------------//
RegularizerDraws draw_regularizer_noise(MlpModel const& model,
                                        Tensor const& inputs,
                                        RegularizerConfig const& config,
                                        RngStream const& rng)
{
    RegularizerDraws draws;
    auto rows = inputs.rows();
    if (config.variant == RegularizerVariant::sampled_hessian)
    {
        for (std::size_t r = 0; r < rows; ++r)
        {
            auto p = forward_trace(model, inputs.row(r)).probs;
            RngStream sub = rng.split(r);
            draws.labels.push_back(sub.categorical(p.data()));
        }
    }
    else if (config.variant == RegularizerVariant::identity_hessian && config.identity_sampled)
    {
        draws.signs = rademacher_rows(model, rows, sites_or_default(model, config.sites), rng, false);
    }
    return draws;
}

ad::Var regularizer_graph(MlpModel const& model,
                          GraphParams const& params,
                          GraphForward const& fwd,
                          std::vector<std::size_t> const& labels,
                          RegularizerConfig const& config,
                          RegularizerDraws const& draws)
{
    auto terms = regularizer_terms(model, params, fwd, labels, config, draws);
    ad::Var total = terms.front();
    for (std::size_t k = 1; k < terms.size(); ++k)
        total = total + terms[k];
    return total;
}

ad::Var implicit_noise_scalar(MlpModel const& /*model*/,
                              GraphForward const& fwd,
                              std::vector<std::size_t> const& labels,
                              std::vector<std::size_t> const& sites,
                              std::vector<Tensor> const& eta)
{
    if (eta.size() != sites.size())
        throw ShapeError("implicit noise: one eta per site required");
    auto loss = ad::sum(ad::cross_entropy_rows(fwd.logits, labels));
    auto jac = ad::grad(loss, site_vars(fwd, sites), true);
    ad::Var total;
    for (std::size_t k = 0; k < sites.size(); ++k)
    {
        auto const& h = fwd.sites[sites[k]];
        auto term = ad::sum(jac[k] * (ad::constant(eta[k]) * h));
        total = total.defined() ? total + term : term;
    }
    return total;
}

GradVector implicit_noise_for(MlpModel const& model,
                              Dataset const& batch,
                              std::vector<std::size_t> const& sites,
                              std::vector<Tensor> const& eta,
                              double scale)
{
    if (batch.size() == 0)
        throw std::invalid_argument("implicit noise: empty batch");
    auto params = graph_params(model);
    auto input = uses_input_site(sites) ? ad::parameter(batch.features)
                                        : ad::constant(batch.features);
    auto fwd = graph_forward(model, params, input);
    auto s = implicit_noise_scalar(model, fwd, batch.labels, sites, eta);
    s = (scale / static_cast<double>(batch.size())) * s;
    auto wrt = params.all();
    return to_grad_vector(model, ad::grad(s, wrt));
}

GradVector implicit_noise_sample(MlpModel const& model,
                                 LabeledExample const& example,
                                 DropoutSpec const& spec,
                                 RngStream& rng)
{
    spec.validate(model);
    std::vector<Tensor> eta;
    for (auto s : spec.sites)
    {
        Tensor e = Tensor::matrix(1, model.site_width(s));
        for (auto& v : e.data())
            v = rng.rademacher();
        eta.push_back(std::move(e));
    }
    auto batch = Dataset::from_examples({example});
    return implicit_noise_for(model, batch, spec.sites, eta, std::sqrt(spec.kept_value()));
}

GradVector implicit_noise_batch(MlpModel const& model,
                                Dataset const& batch,
                                DropoutSpec const& spec,
                                RngStream const& rng,
                                NoiseDraw draw)
{
    spec.validate(model);
    auto eta = rademacher_rows(model, batch.size(), spec.sites, rng, draw == NoiseDraw::shared);
    return implicit_noise_for(model, batch, spec.sites, eta, std::sqrt(spec.kept_value()));
}

GradVector combined_update_gradient(MlpModel const& model,
                                    Dataset const& batch,
                                    RegularizerConfig const& config,
                                    RngStream const& rng)
{
    config.validate(model);
    auto sites = sites_or_default(model, config.sites);
    RegularizerDraws draws;
    if (config.lambda1 > 0)
        draws = draw_regularizer_noise(model, batch.features, config, rng.split(0));
    std::vector<Tensor> eta;
    if (config.lambda2 > 0)
        eta = rademacher_rows(model, batch.size(), sites, rng.split(1), false);
    auto built = build_objective(model, batch, config, &draws, &eta);
    auto wrt = built.params.all();
    return to_grad_vector(model, ad::grad(built.objective, wrt));
}

double combined_objective_value(MlpModel const& model,
                                Dataset const& batch,
                                RegularizerConfig const& config,
                                RegularizerDraws const& draws)
{
    config.validate(model);
    return build_objective(model, batch, config, &draws, nullptr).objective.item();
}

GradVector combined_objective_gradient(MlpModel const& model,
                                       Dataset const& batch,
                                       RegularizerConfig const& config,
                                       RegularizerDraws const& draws)
{
    config.validate(model);
    auto built = build_objective(model, batch, config, &draws, nullptr);
    auto wrt = built.params.all();
    return to_grad_vector(model, ad::grad(built.objective, wrt));
}

}  // namespace dropreg
