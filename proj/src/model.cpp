// SPDX-License-Identifier: Apache-2.0
#include "dropreg/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dropreg
{
namespace
{
double activate(Activation a, double z)
{
    return a == Activation::tanh ? std::tanh(z) : (z > 0 ? z : 0.0);
}

double activate_slope(Activation a, double z)
{
    if (a == Activation::tanh)
    {
        double t = std::tanh(z);
        return 1.0 - t * t;
    }
    return z > 0 ? 1.0 : 0.0;
}

ad::Var graph_activate(Activation a, ad::Var const& z)
{
    return a == Activation::tanh ? ad::tanh(z) : ad::relu(z);
}

void check_site(MlpModel const& model, std::size_t site)
{
    if (site > model.hidden_layers())
        throw std::out_of_range("site index " + std::to_string(site)
                                + " out of range (model has "
                                + std::to_string(model.hidden_layers())
                                + " hidden layers)");
}

Tensor linear(Tensor const& w, Tensor const& b, Tensor const& h)
{
    Tensor out = Tensor::vector(std::vector<double>(w.rows()));
    Eigen::Map<Eigen::VectorXd>(out.data().data(), static_cast<Eigen::Index>(w.rows()))
        = w.as_matrix() * Eigen::Map<Eigen::VectorXd const>(h.data().data(),
                                                              static_cast<Eigen::Index>(h.size()))
          + Eigen::Map<Eigen::VectorXd const>(b.data().data(),
                                              static_cast<Eigen::Index>(b.size()));
    return out;
}
}  // namespace

std::string to_string(Activation a)
{
    return a == Activation::tanh ? "tanh" : "relu";
}

Activation activation_from_string(std::string const& s)
{
    if (s == "tanh")
        return Activation::tanh;
    if (s == "relu")
        return Activation::relu;
    throw std::invalid_argument("unknown activation '" + s + "'");
}

LabeledExample Dataset::example(std::size_t i) const
{
    return {features.row(i), labels.at(i)};
}

Dataset Dataset::subset(std::vector<std::size_t> const& indices) const
{
    Dataset out;
    out.features = Tensor::matrix(indices.size(), dim());
    out.labels.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r)
    {
        out.features.as_matrix().row(static_cast<Eigen::Index>(r))
            = features.as_matrix().row(static_cast<Eigen::Index>(indices[r]));
        out.labels.push_back(labels.at(indices[r]));
    }
    return out;
}

Dataset Dataset::from_examples(std::vector<LabeledExample> const& examples)
{
    if (examples.empty())
        throw std::invalid_argument("dataset needs at least one example");
    Dataset out;
    auto d = examples.front().x.size();
    out.features = Tensor::matrix(examples.size(), d);
    for (std::size_t r = 0; r < examples.size(); ++r)
    {
        if (examples[r].x.size() != d)
            throw ShapeError("examples have differing feature dimensions");
        for (std::size_t k = 0; k < d; ++k)
            out.features(r, k) = examples[r].x[k];
        out.labels.push_back(examples[r].y);
    }
    return out;
}

//---------------------------------------------------------------------------//
MlpModel::MlpModel(std::vector<std::size_t> dims,
                   std::vector<Activation> activations)
    : dims_(std::move(dims)), activations_(std::move(activations))
{
    if (dims_.size() < 2)
        throw std::invalid_argument("model needs input and class dimensions");
    if (activations_.size() != dims_.size() - 2)
        throw std::invalid_argument("one activation per hidden layer required");
    if (dims_.back() < 2)
        throw std::invalid_argument("at least two classes required");
    for (std::size_t l = 1; l < dims_.size(); ++l)
    {
        weights_.push_back(Tensor::matrix(dims_[l], dims_[l - 1]));
        biases_.push_back(Tensor({dims_[l]}));
    }
}

MlpModel MlpModel::random(std::vector<std::size_t> dims,
                          std::vector<Activation> activations,
                          RngStream rng,
                          double gain)
{
    MlpModel m(std::move(dims), std::move(activations));
    for (std::size_t l = 1; l <= m.linear_layers(); ++l)
    {
        auto& w = m.weight(l);
        double limit = gain * std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
        for (auto& v : w.data())
            v = limit * (2.0 * rng.uniform() - 1.0);
    }
    m.seed_provenance = rng.seed();
    return m;
}

std::size_t MlpModel::site_width(std::size_t site) const
{
    check_site(*this, site);
    return dims_[site];
}

ParamLayout MlpModel::layout() const
{
    ParamLayout layout;
    for (std::size_t l = 1; l <= weights_.size(); ++l)
    {
        layout.append("W" + std::to_string(l), weights_[l - 1].shape());
        layout.append("b" + std::to_string(l), biases_[l - 1].shape());
    }
    return layout;
}

std::vector<double> MlpModel::flatten() const
{
    std::vector<double> flat;
    for (std::size_t l = 0; l < weights_.size(); ++l)
    {
        flat.insert(flat.end(), weights_[l].values().begin(), weights_[l].values().end());
        flat.insert(flat.end(), biases_[l].values().begin(), biases_[l].values().end());
    }
    return flat;
}

void MlpModel::assign(std::vector<double> const& flat)
{
    if (flat.size() != parameter_count())
        throw ShapeError("parameter vector length does not match model");
    std::size_t pos = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l)
    {
        for (auto& v : weights_[l].data())
            v = flat[pos++];
        for (auto& v : biases_[l].data())
            v = flat[pos++];
    }
}

//---------------------------------------------------------------------------//
Tensor const& ForwardTrace::site(std::size_t i) const
{
    if (i == 0)
        return input;
    return hidden.at(i - 1);
}

ForwardTrace forward_trace(MlpModel const& model, Tensor const& x)
{
    return forward_trace(model, x, SiteFactors{});
}

ForwardTrace forward_trace(MlpModel const& model,
                           Tensor const& x,
                           SiteFactors const& factors)
{
    if (x.size() != model.input_dim())
        throw ShapeError("input has dimension " + std::to_string(x.size())
                         + ", model expects " + std::to_string(model.input_dim()));
    auto factor_at = [&](std::size_t site) -> Tensor const* {
        if (site < factors.size() && factors[site].size() > 0)
        {
            if (factors[site].size() != model.site_width(site))
                throw ShapeError("site factor shape mismatch at site "
                                 + std::to_string(site));
            return &factors[site];
        }
        return nullptr;
    };

    ForwardTrace tr;
    tr.input = x.reshaped({x.size()});
    if (auto const* f = factor_at(0))
        tr.input = hadamard(tr.input, *f);
    Tensor h = tr.input;
    auto L = model.hidden_layers();
    for (std::size_t i = 1; i <= L; ++i)
    {
        Tensor z = linear(model.weight(i), model.bias(i), h);
        Tensor a = z;
        for (auto& v : a.data())
            v = activate(model.activation(i), v);
        if (auto const* f = factor_at(i))
            a = hadamard(a, *f);
        a.require_finite("hidden activation");
        tr.pre_activations.push_back(std::move(z));
        tr.hidden.push_back(a);
        h = std::move(a);
    }
    tr.logits = linear(model.weight(L + 1), model.bias(L + 1), h);
    tr.logits.require_finite("logits");
    tr.probs = softmax(tr.logits);
    return tr;
}

Tensor tail_logits(MlpModel const& model, std::size_t site, Tensor const& h)
{
    check_site(model, site);
    if (h.size() != model.site_width(site))
        throw ShapeError("tail input has the wrong width");
    Tensor a = h.reshaped({h.size()});
    auto L = model.hidden_layers();
    for (std::size_t l = site + 1; l <= L; ++l)
    {
        a = linear(model.weight(l), model.bias(l), a);
        for (auto& v : a.data())
            v = activate(model.activation(l), v);
    }
    return linear(model.weight(L + 1), model.bias(L + 1), a);
}

//---------------------------------------------------------------------------//
Tensor softmax(Tensor const& logits)
{
    double m = *std::max_element(logits.values().begin(), logits.values().end());
    Tensor p = logits.reshaped({logits.size()});
    double total = 0;
    for (auto& v : p.data())
    {
        v = std::exp(v - m);
        total += v;
    }
    for (auto& v : p.data())
        v /= total;
    return p;
}

double ce_loss(Tensor const& logits, std::size_t y)
{
    if (y >= logits.size())
        throw std::out_of_range("label out of range");
    // (m - z_y) + log(1 + sum over non-max classes) keeps full relative
    // accuracy when the label is the confident class.
    auto const& z = logits.values();
    auto top = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
    double m = z[top];
    double rest = 0;
    for (std::size_t j = 0; j < z.size(); ++j)
        if (j != top)
            rest += std::exp(z[j] - m);
    return (m - z[y]) + std::log1p(rest);
}

Tensor ce_grad(Tensor const& logits, std::size_t y)
{
    if (y >= logits.size())
        throw std::out_of_range("label out of range");
    Tensor g = softmax(logits);
    // p_y - 1 as minus the other classes' mass, avoiding cancellation
    double others = 0;
    for (std::size_t j = 0; j < g.size(); ++j)
        if (j != y)
            others += g[j];
    g[y] = -others;
    return g;
}

Tensor ce_hessian(Tensor const& logits)
{
    Tensor p = softmax(logits);
    auto c = p.size();
    Tensor h = Tensor::matrix(c, c);
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < c; ++j)
            if (i != j)
                h(i, j) = -p[i] * p[j];
    // p_i (1 - p_i) with 1 - p_i summed from the other classes
    for (std::size_t i = 0; i < c; ++i)
    {
        double others = 0;
        for (std::size_t j = 0; j < c; ++j)
            if (j != i)
                others += p[j];
        h(i, i) = p[i] * others;
    }
    return h;
}

Tensor tail_jacobian(MlpModel const& model, ForwardTrace const& trace, std::size_t site)
{
    check_site(model, site);
    auto L = model.hidden_layers();
    RowMatrix jac = model.weight(L + 1).as_matrix();
    for (std::size_t l = L; l > site; --l)
    {
        auto const& z = trace.pre_activations.at(l - 1);
        Eigen::VectorXd slope(static_cast<Eigen::Index>(z.size()));
        for (std::size_t k = 0; k < z.size(); ++k)
            slope(static_cast<Eigen::Index>(k)) = activate_slope(model.activation(l), z[k]);
        jac = (jac * slope.asDiagonal()) * model.weight(l).as_matrix();
    }
    return Tensor::from_eigen(jac);
}

Tensor loss_jacobian_hidden(MlpModel const& model,
                            ForwardTrace const& trace,
                            std::size_t y,
                            std::size_t site)
{
    Tensor g = ce_grad(trace.logits, y);
    Tensor row = matmul(g, tail_jacobian(model, trace, site));
    return row.reshaped({row.size()});
}

//---------------------------------------------------------------------------//
std::vector<ad::Var> GraphParams::all() const
{
    std::vector<ad::Var> out;
    for (std::size_t l = 0; l < weights.size(); ++l)
    {
        out.push_back(weights[l]);
        out.push_back(biases[l]);
    }
    return out;
}

GraphParams graph_params(MlpModel const& model, bool trainable)
{
    GraphParams p;
    for (std::size_t l = 1; l <= model.linear_layers(); ++l)
    {
        auto make = trainable ? ad::parameter : ad::constant;
        p.weights.push_back(make(model.weight(l)));
        p.biases.push_back(make(model.bias(l)));
    }
    return p;
}

namespace
{
ad::Var graph_linear(GraphParams const& params, std::size_t l, ad::Var const& h)
{
    auto const& w = params.weights[l - 1];
    auto const& b = params.biases[l - 1];
    return ad::matmul(h, ad::transpose(w)) + ad::broadcast_rows(b, h.rows());
}
}  // namespace

GraphForward graph_forward(MlpModel const& model,
                           GraphParams const& params,
                           ad::Var const& input,
                           SiteFactors const* factors)
{
    if (input.cols() != model.input_dim())
        throw ShapeError("graph input width does not match model");
    auto apply = [&](std::size_t site, ad::Var v) {
        if (factors && site < factors->size() && (*factors)[site].size() > 0)
        {
            auto const& f = (*factors)[site];
            if (f.rows() != v.rows() || f.cols() != v.cols())
                throw ShapeError("site factor shape mismatch at site "
                                 + std::to_string(site));
            return v * ad::constant(f);
        }
        return v;
    };
    GraphForward out;
    auto L = model.hidden_layers();
    ad::Var h = apply(0, input);
    out.sites.push_back(h);
    for (std::size_t l = 1; l <= L; ++l)
    {
        h = apply(l, graph_activate(model.activation(l), graph_linear(params, l, h)));
        out.sites.push_back(h);
    }
    out.logits = graph_linear(params, L + 1, h);
    return out;
}

ad::Var graph_tail(MlpModel const& model,
                   GraphParams const& params,
                   std::size_t site,
                   ad::Var const& h)
{
    check_site(model, site);
    auto L = model.hidden_layers();
    ad::Var a = h;
    for (std::size_t l = site + 1; l <= L; ++l)
        a = graph_activate(model.activation(l), graph_linear(params, l, a));
    return graph_linear(params, L + 1, a);
}

GradVector to_grad_vector(MlpModel const& model, std::vector<ad::Var> const& grads)
{
    GradVector g(model.layout());
    auto& v = g.values();
    std::size_t pos = 0;
    for (auto const& var : grads)
        for (double x : var.value().values())
            v.at(pos++) = x;
    if (pos != v.size())
        throw ShapeError("gradient list does not cover the model layout");
    return g;
}

GradVector batch_gradient(MlpModel const& model,
                          Tensor const& inputs,
                          std::vector<std::size_t> const& labels,
                          SiteFactors const* factors,
                          double loss_scale)
{
    if (labels.empty())
        throw std::invalid_argument("batch_gradient: empty batch");
    auto params = graph_params(model);
    auto fwd = graph_forward(model, params, ad::constant(inputs), factors);
    auto loss = ad::sum(ad::cross_entropy_rows(fwd.logits, labels));
    loss = (loss_scale / static_cast<double>(labels.size())) * loss;
    auto wrt = params.all();
    return to_grad_vector(model, ad::grad(loss, wrt));
}

EvalResult evaluate(MlpModel const& model, Dataset const& data)
{
    if (data.size() == 0)
        throw std::invalid_argument("evaluate: empty dataset");
    RowMatrix h = data.features.as_matrix();
    auto L = model.hidden_layers();
    for (std::size_t l = 1; l <= L + 1; ++l)
    {
        RowMatrix z = h * model.weight(l).as_matrix().transpose();
        z.rowwise() += model.bias(l).as_matrix().row(0);
        if (l <= L)
            z = z.unaryExpr([a = model.activation(l)](double v) { return activate(a, v); });
        h = std::move(z);
    }
    EvalResult r;
    for (Eigen::Index i = 0; i < h.rows(); ++i)
    {
        double m = h.row(i).maxCoeff();
        double lse = m + std::log((h.row(i).array() - m).exp().sum());
        auto y = static_cast<Eigen::Index>(data.labels[static_cast<std::size_t>(i)]);
        r.loss += lse - h(i, y);
        Eigen::Index arg;
        h.row(i).maxCoeff(&arg);
        r.accuracy += arg == y ? 1.0 : 0.0;
    }
    auto n = static_cast<double>(data.size());
    r.loss /= n;
    r.accuracy /= n;
    if (!std::isfinite(r.loss))
        throw NumericError("non-finite evaluation loss");
    return r;
}

}  // namespace dropreg
