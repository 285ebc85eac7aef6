// SPDX-License-Identifier: Apache-2.0
//---------------------------------------------------------------------------//
//! \file dropreg/dropout.hpp
//! Node dropout masks, the k-sample dropout estimator, and the two-draw
//! gradient-noise correction.
//---------------------------------------------------------------------------//
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "grad_vector.hpp"
#include "model.hpp"
#include "numeric_oracles.hpp"
#include "rng.hpp"

namespace dropreg
{

struct DropoutSpec
{
    double q = 0.0;
    //! Site indices (0 = input, 1..L hidden).
    std::vector<std::size_t> sites;

    //! All hidden layers, or the input for a linear model.
    static DropoutSpec hidden(MlpModel const& model, double q);
    void validate(MlpModel const& model) const;
    //! Kept-coordinate value q / (1 - q); also E[eta^2].
    double kept_value() const { return q / (1.0 - q); }
};

/*!
 * One dropout draw: eta_i per site with entries -1 (probability q) or
 * q / (1 - q) (probability 1 - q). The dropped activation is (1 + eta) h.
 */
struct MaskSample
{
    std::vector<std::size_t> sites;
    std::vector<Tensor> eta;

    //! Multiplicative factors (1 + eta) laid out by site index.
    SiteFactors factors(MlpModel const& model) const;
};

MaskSample sample_mask(DropoutSpec const& spec,
                       std::span<std::size_t const> dims,
                       RngStream& rng);

ForwardTrace dropped_forward(MlpModel const& model, Tensor const& x, MaskSample const& mask);

GradVector param_gradient(MlpModel const& model, LabeledExample const& example);
GradVector param_gradient(MlpModel const& model,
                          LabeledExample const& example,
                          MaskSample const& mask);

//! Row-stacked site factors for one mask per row.
SiteFactors stack_factors(MlpModel const& model, std::vector<MaskSample> const& masks);

//! Mean of l(F(x, eta)) over n masks (mask j uses rng.split(j)).
McMean elldrop_mc(MlpModel const& model,
                  LabeledExample const& example,
                  DropoutSpec const& spec,
                  std::size_t n,
                  RngStream const& rng,
                  int threads = 0);

/*!
 * Masks used by drop_k_gradient, in row order: example i, sample j uses
 * rng.split({i, j}).
 */
std::vector<MaskSample> drop_k_masks(MlpModel const& model,
                                     DropoutSpec const& spec,
                                     std::size_t batch_size,
                                     std::size_t k,
                                     RngStream const& rng);

//! Gradient of (1/m) sum_i (1/k) sum_j l(F(x_i, eta_ij)).
GradVector drop_k_gradient(MlpModel const& model,
                           Dataset const& batch,
                           DropoutSpec const& spec,
                           std::size_t k,
                           RngStream const& rng);

//! grad l(F(x, eta_1)) - grad l(F(x, eta_2)), masks from rng.split(0), split(1).
GradVector xi_tilde_sample(MlpModel const& model,
                           LabeledExample const& example,
                           DropoutSpec const& spec,
                           RngStream const& rng);

enum class NoiseSource
{
    xi_tilde,
    xi_ours
};

NoiseSource noise_source_from_string(std::string const& s);
std::string to_string(NoiseSource s);

enum class NoiseDraw
{
    per_example,  //!< independent noise per example
    shared  //!< one draw shared by every example of the batch
};

/*!
 * drop_k gradient plus noise restoring the k = 1 update covariance.
 *
 * xi_tilde: adds sqrt((1 - 1/k) / 2) times the batch mean of two-draw
 * differences. xi_ours: adds sqrt(1 - 1/k) times the batch mean of
 * implicit_noise_sample (which carries the sqrt(q / (1 - q)) factor).
 * The drop_k part uses rng.split(0), the noise rng.split(1).
 */
GradVector corrected_drop_k_gradient(MlpModel const& model,
                                     Dataset const& batch,
                                     DropoutSpec const& spec,
                                     std::size_t k,
                                     NoiseSource source,
                                     RngStream const& rng,
                                     NoiseDraw draw = NoiseDraw::per_example);

}  // namespace dropreg
