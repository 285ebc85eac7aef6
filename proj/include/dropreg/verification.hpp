// SPDX-License-Identifier: Apache-2.0
//---------------------------------------------------------------------------//
//! \file dropreg/verification.hpp
//! Numerical checks of the dropout expansions: finite-difference hidden
//! Hessians, the PSD / non-PSD decomposition, Taylor fidelity, covariance
//! identities, the exp-tail inequality and AD-vs-FD gradient checks.
//---------------------------------------------------------------------------//
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dropout.hpp"
#include "model.hpp"
#include "numeric_oracles.hpp"
#include "regularizers.hpp"
#include "rng.hpp"

namespace dropreg
{

//---------------------------------------------------------------------------//
//! Measured-vs-reference comparison inside a report.
struct CheckItem
{
    enum class Kind
    {
        absolute,  //!< |measured - reference| <= tolerance
        relative,  //!< |measured - reference| <= tolerance * |reference|
        at_most,  //!< measured <= reference + tolerance
        at_least  //!< measured >= reference - tolerance
    };

    std::string name;
    double measured = 0;
    double reference = 0;
    double tolerance = 0;
    Kind kind = Kind::absolute;
    bool pass = false;
};

struct CheckReport
{
    std::string name;
    std::vector<CheckItem> items;
    //! Reported-only quantities.
    std::vector<std::pair<std::string, double>> info;
    std::size_t samples = 0;
    std::uint64_t seed = 0;
    bool pass = true;

    CheckItem& check(std::string item,
                     double measured,
                     double reference,
                     double tolerance,
                     CheckItem::Kind kind = CheckItem::Kind::absolute);
    void report(std::string item, double value);
    //! Look up an item's measured value or an info value by name.
    double value(std::string const& item) const;

    nlohmann::ordered_json to_json() const;
};

//---------------------------------------------------------------------------//
// Closed-form identities
//---------------------------------------------------------------------------//
//! AD-free FD checks of ce_grad and ce_hessian on random logits.
CheckReport derivative_identity_check(std::vector<std::size_t> const& classes,
                                      std::size_t cases,
                                      RngStream const& rng,
                                      double tolerance = 1e-6);

//! sum_yhat p_yhat g(yhat) g(yhat)^T against ce_hessian.
CheckReport outer_product_check(std::vector<std::size_t> const& classes,
                                std::size_t cases,
                                RngStream const& rng,
                                double tolerance = 1e-12);

//! Enumeration over yhat of the sampled regularizer against the exact one.
CheckReport sampled_unbiasedness_check(std::size_t cases,
                                       RngStream const& rng,
                                       double tolerance = 1e-10);

//! Empirical E[eta] and E[eta^2] against 0 and q / (1 - q).
CheckReport mask_moment_check(std::vector<double> const& qs,
                              std::size_t n,
                              RngStream const& rng,
                              double sigmas = 4.0);

//---------------------------------------------------------------------------//
// Hidden-layer Hessians
//---------------------------------------------------------------------------//
//! Central-difference Hessian of h -> l(F_i(h), y) at h_i(x), unsymmetrized residual kept.
FdHessian hessian_hidden_fd_full(MlpModel const& model,
                                 LabeledExample const& example,
                                 std::size_t site,
                                 double step = 1e-4);

//! Symmetrized FD Hessian of the loss with respect to site i.
Tensor hessian_hidden_fd(MlpModel const& model,
                         LabeledExample const& example,
                         std::size_t site,
                         double step = 1e-4);

//! J_i^T H_out J_i at x.
Tensor psd_hidden_hessian(MlpModel const& model, Tensor const& x, std::size_t site);

//! <H, diag(h^2)>
double diag_weighted(Tensor const& hessian, Tensor const& h);

/*!
 * Splits H_fd into J^T H_out J + M and reports the quadratic forms against
 * diag(h^2), the PSD share, ||M|| / ||H_fd||, the PSD part's smallest
 * eigenvalue and the FD asymmetry.
 */
CheckReport decomposition_check(MlpModel const& model,
                                LabeledExample const& example,
                                std::size_t site,
                                double step = 1e-4);

//---------------------------------------------------------------------------//
// Taylor fidelity
//---------------------------------------------------------------------------//
struct TaylorOptions
{
    std::size_t n = 10000;  //!< masks per example
    double step = 1e-4;  //!< FD Hessian step
    //! Subtract the mean-zero first-order term from every MC draw.
    bool control_variate = true;
    //! Throw when the MC standard error exceeds this fraction of R_drop.
    double max_rel_std_error = 0.1;
    int threads = 0;
    std::optional<double> max_quadratic_residual;
    std::optional<double> min_psd_fraction;
};

/*!
 * Monte-Carlo R_drop summed over \c examples against the second-order
 * prediction (q / (2(1 - q))) sum_i <H_fd,i, diag(h_i^2)> and the PSD-only
 * prediction from explicit_reg_exact.
 *
 * Info fields: mc_rdrop, mc_std_error, mc_rdrop_plain, mc_plain_std_error,
 * quadratic_prediction, psd_prediction, quadratic_fraction, psd_fraction,
 * quadratic_residual, rel_std_error. Example e uses rng.split(e).
 */
CheckReport taylor_fidelity(MlpModel const& model,
                            Dataset const& examples,
                            DropoutSpec const& spec,
                            RngStream const& rng,
                            TaylorOptions const& options = {});

//---------------------------------------------------------------------------//
// Exp-tail inequality
//---------------------------------------------------------------------------//
//! tr(diag(p) - p p^T) = sum_i p_i - p_i^2
double hessian_trace(Tensor const& logits);
//! sum_i (1 - 2 p_i) p_i (1_i - p): the logit gradient of hessian_trace.
Tensor exp_tail_gradient(Tensor const& logits);

/*!
 * Random logits with per-trial scale in [0.1, 5]: counts violations of
 * ||g|| <= sqrt(2) tr(H_out) beyond \c slack and FD-checks g on the first
 * \c fd_trials draws.
 */
CheckReport exp_tail_check(std::size_t c,
                           std::size_t trials,
                           RngStream const& rng,
                           std::size_t fd_trials = 200,
                           double slack = 1e-12);

//---------------------------------------------------------------------------//
// Covariance identities
//---------------------------------------------------------------------------//
struct CovarianceSuiteOptions
{
    std::size_t n = 20000;
    double drop_k_tolerance = 0.05;
    double xi_tilde_tolerance = 0.05;
    double corrected_tolerance = 0.10;
    //! Check trace Cov(xi_ours) against trace Cov(xi_drop) when set.
    std::optional<double> xi_ours_tolerance;
    int threads = 0;
};

/*!
 * Trace covariances for a batch-of-one sampler: raw dropout gradients,
 * drop_k for each k (k * trace against k = 1), xi_tilde (against twice
 * the raw trace), corrected drop_k for both noise sources (against the raw
 * trace; only xi_tilde is checked) and xi_ours.
 */
CheckReport covariance_identity_suite(MlpModel const& model,
                                      LabeledExample const& example,
                                      DropoutSpec const& spec,
                                      std::vector<std::size_t> const& ks,
                                      RngStream const& rng,
                                      CovarianceSuiteOptions const& options = {});

//---------------------------------------------------------------------------//
// Gradient checks
//---------------------------------------------------------------------------//
//! ||a - b|| / ||b||, or ||a - b|| when b is zero.
double relative_error(std::vector<double> const& a, std::vector<double> const& b);

//! FD gradient of f over the flattened parameters of \c model.
std::vector<double> finite_diff_params(MlpModel const& model,
                                       std::function<double(MlpModel const&)> const& f,
                                       double step);

//! sum over rows of J^l_i (eta_i (.) h_i) from closed-form Jacobians.
double implicit_noise_value(MlpModel const& model,
                            Dataset const& batch,
                            std::vector<std::size_t> const& sites,
                            std::vector<Tensor> const& eta);

//! (1/m) sum [l + lambda1 R] from closed-form Jacobians, for fixed draws.
double regularized_objective_reference(MlpModel const& model,
                                       Dataset const& batch,
                                       RegularizerConfig const& config,
                                       RegularizerDraws const& draws);

struct GradCheckOptions
{
    double step = 1e-5;
    double loss_tolerance = 1e-6;
    double regularizer_tolerance = 1e-4;
    double noise_tolerance = 1e-4;
};

/*!
 * AD against FD for the batch loss, each regularizer variant (with fixed
 * draws, so sampled labels act as constants) and the implicit-noise
 * scalar. Draws come from rng.
 */
CheckReport grad_check_suite(MlpModel const& model,
                             Dataset const& examples,
                             RngStream const& rng,
                             GradCheckOptions const& options = {});

}  // namespace dropreg
