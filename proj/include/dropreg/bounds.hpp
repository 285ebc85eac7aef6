// SPDX-License-Identifier: Apache-2.0
//---------------------------------------------------------------------------//
//! \file dropreg/bounds.hpp
//! Ingredients of the data-dependent generalization bound for linear
//! softmax classifiers: the 2,1-style norm A, the loss-derivative averages
//! mu and nu, theta, the truncated loss and the three bound terms.
//---------------------------------------------------------------------------//
#pragma once

#include <cstddef>

#include "json.hpp"

#include "model.hpp"
#include "tensor.hpp"

namespace dropreg
{

//! sum_j sqrt(sum_i M_ij^2): the sum of column Euclidean norms.
double two_one_norm(Tensor const& m);

struct MuNu
{
    double mu = 0;  //!< mean ||p - 1_y||_2
    double nu = 0;  //!< mean tr(diag(p) - p p^T)
};

//! Averages over \c data of the CE gradient norm and Hessian trace at W x.
MuNu mu_nu(Tensor const& w, Dataset const& data);

//! max_i ||x_i||^2
double max_sq_norm(Dataset const& data);

//! log^3(n c) * max_sq_norm, natural log.
double theta(std::size_t n, std::size_t c, double max_sq_norm);
double theta(Dataset const& data, std::size_t c);

//! min(B, ce_loss)
double truncated_loss(Tensor const& logits, std::size_t y, double b);

//! Inputs to the bound terms, separated so the formula can be probed directly.
struct BoundInputs
{
    double a = 0;
    double mu = 0;
    double nu = 0;
    double theta = 0;
    double b = 1;
    double delta = 0.05;
    std::size_t n = 1;
    double tau = 1.4142135623730951;
};

struct BoundTerms
{
    double term1 = 0;  //!< (A mu)^{2/3} (theta B)^{1/3} / n^{1/3}
    double term2 = 0;  //!< A sqrt(B nu theta) / sqrt(n)
    double term3 = 0;  //!< B A^2 theta / (n (log^2(B A^2 theta / (nu n)) + 1))
    double term3_tau = 0;  //!< tau-explicit form of term3
    double zeta = 0;  //!< B (log(1/delta) + log log n) / n
    bool nu_substituted = false;  //!< nu was 0 and replaced by machine epsilon
};

BoundTerms bound_terms(BoundInputs const& in);

struct BoundReport
{
    double a = 0;
    double mu = 0;
    double nu = 0;
    double kappa = 0;  //!< max ||x||
    double theta = 0;
    double b = 0;
    double delta = 0;
    std::size_t n = 0;
    std::size_t c = 0;
    BoundTerms terms;
    double train_truncated = 0;
    double test_truncated = 0;
    double empirical_gap = 0;  //!< test mean - 1.01 * train mean
    bool bias_folded = false;

    nlohmann::ordered_json to_json() const;
};

/*!
 * All bound ingredients for a linear model (no hidden layers).
 *
 * A nonzero bias is folded into W by appending a constant-1 input
 * coordinate, so A, kappa and theta see the augmented inputs.
 */
BoundReport bound_report(MlpModel const& model,
                         Dataset const& train,
                         Dataset const& test,
                         double b,
                         double delta);

}  // namespace dropreg
