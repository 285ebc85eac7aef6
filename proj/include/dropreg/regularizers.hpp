// SPDX-License-Identifier: Apache-2.0
//---------------------------------------------------------------------------//
//! \file dropreg/regularizers.hpp
//! Analytic replacements for dropout: the explicit Jacobian/Hessian
//! regularizer, its sampled estimator and ablations, and the implicit
//! gradient noise.
//!
//! For site i with activation h_i, tail Jacobian J_i and output Hessian
//! H_out = diag(p) - p p^T, the explicit regularizer is
//!
//!     R(x) = sum_i < J_i^T H_out J_i , diag(h_i^2) >
//!
//! and the implicit noise is grad_W sum_i J^l_i (eta_i (.) h_i) with
//! Rademacher eta_i and loss Jacobian J^l_i = (p - 1_y)^T J_i.
//---------------------------------------------------------------------------//
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "dropout.hpp"
#include "grad_vector.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace dropreg
{

enum class RegularizerVariant
{
    exact_hessian,
    sampled_hessian,
    jacobian_approx,
    identity_hessian
};

RegularizerVariant variant_from_string(std::string const& s);
std::string to_string(RegularizerVariant v);

//! How lambda1 / lambda2 follow from the dropout probability.
enum class Linkage
{
    none,  //!< use lambda1, lambda2 as given
    experiment,  //!< lambda1 = q/(1-q), lambda2 = sqrt(q/(1-q))
    derivation  //!< lambda1 = q/(2(1-q)), lambda2 = sqrt(q/(1-q))
};

Linkage linkage_from_string(std::string const& s);
std::string to_string(Linkage l);

struct RegularizerConfig
{
    RegularizerVariant variant = RegularizerVariant::exact_hessian;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    Linkage linkage = Linkage::none;
    //! Identity-Hessian variant: Rademacher JVP estimate instead of exact.
    bool identity_sampled = true;
    std::vector<std::size_t> sites;

    //! Copy with lambdas derived from q when linkage is set.
    RegularizerConfig resolved(double q) const;
    void validate(MlpModel const& model) const;
};

struct RegularizerValue
{
    double total = 0;
    std::vector<std::size_t> sites;
    std::vector<double> per_site;
};

//! Default sites: every hidden layer, or the input of a linear model.
std::vector<std::size_t> default_sites(MlpModel const& model);

//---------------------------------------------------------------------------//
// Single-example values (closed form from tail Jacobians)
//---------------------------------------------------------------------------//
RegularizerValue explicit_reg_exact(MlpModel const& model,
                                    Tensor const& x,
                                    std::vector<std::size_t> const& sites);
RegularizerValue explicit_reg_exact(MlpModel const& model, Tensor const& x);

//! sum_i J^l_i diag(h_i^2) J^l_i^T for a fixed label.
double explicit_reg_for_label(MlpModel const& model,
                              Tensor const& x,
                              std::size_t label,
                              std::vector<std::size_t> const& sites);

//! Draws yhat ~ softmax(F(x)) and returns explicit_reg_for_label(yhat).
double explicit_reg_sampled(MlpModel const& model,
                            Tensor const& x,
                            RngStream& rng,
                            std::vector<std::size_t> const& sites);

//! explicit_reg_for_label at the true label.
double reg_jacobian_approx(MlpModel const& model,
                           Tensor const& x,
                           std::size_t y,
                           std::vector<std::size_t> const& sites);

enum class EstimatorMode
{
    exact,
    sampled
};

/*!
 * Identity in place of H_out: exact mode is sum_i <J_i^T J_i, diag(h_i^2)>;
 * sampled mode is sum_i ||J_i (eta_i (.) h_i)||^2 with Rademacher eta_i.
 */
double reg_identity_hessian(MlpModel const& model,
                            Tensor const& x,
                            RngStream& rng,
                            EstimatorMode mode,
                            std::vector<std::size_t> const& sites);

//! Sampled identity-Hessian value for given sign vectors (one per site).
double reg_identity_hessian_signs(MlpModel const& model,
                                  Tensor const& x,
                                  std::vector<Tensor> const& signs,
                                  std::vector<std::size_t> const& sites);

//! J_i v by forward-mode tangent propagation through the tail.
Tensor jvp(MlpModel const& model, ForwardTrace const& trace, std::size_t site, Tensor const& v);

//! J_i v by differentiating u -> <J_i^T u, v> with respect to a dummy u.
Tensor jvp_double_backward(MlpModel const& model,
                           ForwardTrace const& trace,
                           std::size_t site,
                           Tensor const& v);

//---------------------------------------------------------------------------//
// Graph (differentiable) forms, batched over rows
//---------------------------------------------------------------------------//
//! Random choices for one evaluation of a sampled regularizer.
struct RegularizerDraws
{
    std::vector<std::size_t> labels;  //!< sampled yhat per row
    std::vector<Tensor> signs;  //!< per site (aligned with sites), m x d_i
};

RegularizerDraws draw_regularizer_noise(MlpModel const& model,
                                        Tensor const& inputs,
                                        RegularizerConfig const& config,
                                        RngStream const& rng);

/*!
 * Sum over rows of the regularizer, as a differentiable 1x1 variable.
 *
 * \c fwd must come from graph_forward without site factors; when site 0
 * is listed the input must be a differentiable leaf. Sampled labels are
 * constants, so the sampling distribution is not differentiated.
 */
ad::Var regularizer_graph(MlpModel const& model,
                          GraphParams const& params,
                          GraphForward const& fwd,
                          std::vector<std::size_t> const& labels,
                          RegularizerConfig const& config,
                          RegularizerDraws const& draws);

//! Sum over rows of sum_i J^l_i (eta_i (.) h_i); eta per site is m x d_i.
ad::Var implicit_noise_scalar(MlpModel const& model,
                              GraphForward const& fwd,
                              std::vector<std::size_t> const& labels,
                              std::vector<std::size_t> const& sites,
                              std::vector<Tensor> const& eta);

//! grad_W of implicit_noise_scalar for given eta (rows of \c batch).
GradVector implicit_noise_for(MlpModel const& model,
                              Dataset const& batch,
                              std::vector<std::size_t> const& sites,
                              std::vector<Tensor> const& eta,
                              double scale);

/*!
 * One draw of the implicit noise for a single example: Rademacher eta_i
 * per dropout site, scaled by sqrt(q / (1 - q)).
 */
GradVector implicit_noise_sample(MlpModel const& model,
                                 LabeledExample const& example,
                                 DropoutSpec const& spec,
                                 RngStream& rng);

/*!
 * Batch mean of implicit_noise_sample; example i uses rng.split(i), or
 * every example shares rng's draw with NoiseDraw::shared.
 */
GradVector implicit_noise_batch(MlpModel const& model,
                                Dataset const& batch,
                                DropoutSpec const& spec,
                                RngStream const& rng,
                                NoiseDraw draw = NoiseDraw::per_example);

/*!
 * g = (1/m) sum grad_W [l(F(x_i)) + lambda1 R(F, x_i)]
 *     + (1/m) sum lambda2 xi(F, x_i)
 *
 * xi uses unscaled Rademacher eta, so lambda2 alone sets the noise scale.
 * Regularizer draws use rng.split(0), noise signs rng.split(1).
 */
GradVector combined_update_gradient(MlpModel const& model,
                                    Dataset const& batch,
                                    RegularizerConfig const& config,
                                    RngStream const& rng);

//! Objective (1/m) sum [l + lambda1 R] for fixed draws, used by FD checks.
double combined_objective_value(MlpModel const& model,
                                Dataset const& batch,
                                RegularizerConfig const& config,
                                RegularizerDraws const& draws);

//! Gradient of combined_objective_value for fixed draws (no noise term).
GradVector combined_objective_gradient(MlpModel const& model,
                                       Dataset const& batch,
                                       RegularizerConfig const& config,
                                       RegularizerDraws const& draws);

}  // namespace dropreg
