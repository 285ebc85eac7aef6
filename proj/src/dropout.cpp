// SPDX-License-Identifier: Apache-2.0
#include "dropreg/dropout.hpp"

#include <cmath>
#include <stdexcept>

#include "dropreg/regularizers.hpp"

namespace dropreg
{

DropoutSpec DropoutSpec::hidden(MlpModel const& model, double q)
{
    return {q, default_sites(model)};
}

void DropoutSpec::validate(MlpModel const& model) const
{
    if (!(q >= 0.0 && q < 1.0))
        throw std::invalid_argument("dropout probability must lie in [0, 1)");
    for (auto s : sites)
        if (s > model.hidden_layers())
            throw std::invalid_argument("dropout site " + std::to_string(s)
                                        + " is not a layer of the model");
}

SiteFactors MaskSample::factors(MlpModel const& model) const
{
    SiteFactors f(model.hidden_layers() + 1);
    for (std::size_t k = 0; k < sites.size(); ++k)
    {
        if (eta[k].size() != model.site_width(sites[k]))
            throw ShapeError("mask width does not match site "
                             + std::to_string(sites[k]));
        Tensor t = eta[k];
        for (auto& v : t.data())
            v += 1.0;
        f[sites[k]] = std::move(t);
    }
    return f;
}

MaskSample sample_mask(DropoutSpec const& spec,
                       std::span<std::size_t const> dims,
                       RngStream& rng)
{
    if (!(spec.q >= 0.0 && spec.q < 1.0))
        throw std::invalid_argument("dropout probability must lie in [0, 1)");
    MaskSample m;
    m.sites = spec.sites;
    double kept = spec.kept_value();
    for (auto s : spec.sites)
    {
        if (s + 1 >= dims.size())
            throw std::invalid_argument("dropout site outside model");
        Tensor eta({dims[s]});
        for (auto& v : eta.data())
            v = rng.uniform() < spec.q ? -1.0 : kept;
        m.eta.push_back(std::move(eta));
    }
    return m;
}

ForwardTrace dropped_forward(MlpModel const& model, Tensor const& x, MaskSample const& mask)
{
    return forward_trace(model, x, mask.factors(model));
}

GradVector param_gradient(MlpModel const& model, LabeledExample const& example)
{
    return batch_gradient(model, example.x.reshaped({1, example.x.size()}), {example.y});
}

GradVector param_gradient(MlpModel const& model,
                          LabeledExample const& example,
                          MaskSample const& mask)
{
    auto factors = stack_factors(model, {mask});
    return batch_gradient(model, example.x.reshaped({1, example.x.size()}),
                          {example.y}, &factors);
}

SiteFactors stack_factors(MlpModel const& model, std::vector<MaskSample> const& masks)
{
    SiteFactors out(model.hidden_layers() + 1);
    if (masks.empty())
        return out;
    auto rows = masks.size();
    for (auto s : masks.front().sites)
        out[s] = Tensor::matrix(rows, model.site_width(s));
    for (std::size_t r = 0; r < rows; ++r)
    {
        auto row_factors = masks[r].factors(model);
        for (std::size_t s = 0; s < out.size(); ++s)
        {
            if (out[s].size() == 0)
                continue;
            if (row_factors[s].size() == 0)
                throw ShapeError("masks in a batch cover different sites");
            for (std::size_t k = 0; k < row_factors[s].size(); ++k)
                out[s](r, k) = row_factors[s][k];
        }
    }
    return out;
}

McMean elldrop_mc(MlpModel const& model,
                  LabeledExample const& example,
                  DropoutSpec const& spec,
                  std::size_t n,
                  RngStream const& rng,
                  int threads)
{
    spec.validate(model);
    auto dims = model.dims();
    return mc_mean(
        [&](RngStream& sub) {
            auto mask = sample_mask(spec, dims, sub);
            return ce_loss(dropped_forward(model, example.x, mask).logits, example.y);
        },
        n, rng, threads);
}

std::vector<MaskSample> drop_k_masks(MlpModel const& model,
                                     DropoutSpec const& spec,
                                     std::size_t batch_size,
                                     std::size_t k,
                                     RngStream const& rng)
{
    std::vector<MaskSample> masks;
    masks.reserve(batch_size * k);
    for (std::size_t i = 0; i < batch_size; ++i)
        for (std::size_t j = 0; j < k; ++j)
        {
            RngStream sub = rng.split({i, j});
            masks.push_back(sample_mask(spec, model.dims(), sub));
        }
    return masks;
}

namespace
{
Tensor repeat_rows(Tensor const& features, std::size_t k)
{
    auto m = features.rows();
    auto d = features.cols();
    Tensor out = Tensor::matrix(m * k, d);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j)
            for (std::size_t c = 0; c < d; ++c)
                out(i * k + j, c) = features(i, c);
    return out;
}

std::vector<std::size_t> repeat_labels(std::vector<std::size_t> const& labels, std::size_t k)
{
    std::vector<std::size_t> out;
    out.reserve(labels.size() * k);
    for (auto y : labels)
        out.insert(out.end(), k, y);
    return out;
}
}  // namespace

GradVector drop_k_gradient(MlpModel const& model,
                           Dataset const& batch,
                           DropoutSpec const& spec,
                           std::size_t k,
                           RngStream const& rng)
{
    if (batch.size() == 0)
        throw std::invalid_argument("drop_k_gradient: empty batch");
    if (k < 1)
        throw std::invalid_argument("drop_k_gradient: k must be at least 1");
    spec.validate(model);
    auto masks = drop_k_masks(model, spec, batch.size(), k, rng);
    auto factors = stack_factors(model, masks);
    return batch_gradient(model, repeat_rows(batch.features, k),
                          repeat_labels(batch.labels, k), &factors);
}

GradVector xi_tilde_sample(MlpModel const& model,
                           LabeledExample const& example,
                           DropoutSpec const& spec,
                           RngStream const& rng)
{
    spec.validate(model);
    RngStream first = rng.split(0);
    RngStream second = rng.split(1);
    auto m1 = sample_mask(spec, model.dims(), first);
    auto m2 = sample_mask(spec, model.dims(), second);
    return param_gradient(model, example, m1) - param_gradient(model, example, m2);
}

NoiseSource noise_source_from_string(std::string const& s)
{
    if (s == "xi_tilde")
        return NoiseSource::xi_tilde;
    if (s == "xi_ours")
        return NoiseSource::xi_ours;
    throw std::invalid_argument("unknown noise source '" + s + "'");
}

std::string to_string(NoiseSource s)
{
    return s == NoiseSource::xi_tilde ? "xi_tilde" : "xi_ours";
}

GradVector corrected_drop_k_gradient(MlpModel const& model,
                                     Dataset const& batch,
                                     DropoutSpec const& spec,
                                     std::size_t k,
                                     NoiseSource source,
                                     RngStream const& rng,
                                     NoiseDraw draw)
{
    GradVector g = drop_k_gradient(model, batch, spec, k, rng.split(0));
    if (k == 1 || spec.q == 0.0)
        return g;
    double kk = static_cast<double>(k);
    RngStream noise = rng.split(1);
    if (source == NoiseSource::xi_tilde)
    {
        // Batch mean of per-example two-draw differences.
        std::vector<MaskSample> first, second;
        for (std::size_t i = 0; i < batch.size(); ++i)
        {
            RngStream base = draw == NoiseDraw::shared ? noise : noise.split(i);
            RngStream a = base.split(0);
            RngStream b = base.split(1);
            first.push_back(sample_mask(spec, model.dims(), a));
            second.push_back(sample_mask(spec, model.dims(), b));
        }
        auto f1 = stack_factors(model, first);
        auto f2 = stack_factors(model, second);
        GradVector diff = batch_gradient(model, batch.features, batch.labels, &f1)
                          - batch_gradient(model, batch.features, batch.labels, &f2);
        g.axpy(std::sqrt(0.5 * (1.0 - 1.0 / kk)), diff);
    }
    else
    {
        g.axpy(std::sqrt(1.0 - 1.0 / kk),
               implicit_noise_batch(model, batch, spec, noise, draw));
    }
    return g;
}

}  // namespace dropreg
