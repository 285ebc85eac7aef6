// SPDX-License-Identifier: Apache-2.0
//---------------------------------------------------------------------------//
//! \file dropreg/numeric_oracles.hpp
//! Finite-difference derivatives and Monte-Carlo covariance estimation.
//---------------------------------------------------------------------------//
#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "grad_vector.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace dropreg
{

using ScalarFn = std::function<double(Tensor const&)>;
using VectorFn = std::function<Tensor(Tensor const&)>;

//! Central differences (f(x + s e_k) - f(x - s e_k)) / 2s per coordinate.
Tensor finite_diff_grad(ScalarFn const& f, Tensor const& point, double step);

//! Central-difference Jacobian, shape (output size) x (input size).
Tensor finite_diff_jacobian(VectorFn const& f, Tensor const& point, double step);

struct FdHessian
{
    Tensor symmetric;  //!< (H + H^T) / 2
    double asymmetry = 0;  //!< ||H - H^T||_F / ||H||_F before symmetrizing
};

/*!
 * Second-order central differences.
 *
 * Diagonal entries use the three-point stencil, off-diagonal entries the
 * four-point cross stencil; both (i, j) and (j, i) are evaluated so the
 * asymmetry residual is meaningful.
 */
FdHessian finite_diff_hessian(ScalarFn const& f, Tensor const& point, double step);

//---------------------------------------------------------------------------//
enum class CovarianceMode
{
    automatic,  //!< full when dimension <= full_cap, else diagonal
    full,
    diagonal
};

struct CovarianceOptions
{
    CovarianceMode mode = CovarianceMode::automatic;
    std::size_t full_cap = 2048;
    int threads = 0;  //!< 0 means default_threads()
    std::size_t block = 256;
};

struct CovarianceEstimate
{
    std::size_t samples = 0;
    GradVector mean;
    bool full = false;
    Tensor matrix;  //!< only when full
    std::vector<double> diagonal;
    double trace = 0;
};

using GradSampler = std::function<GradVector(RngStream&)>;

/*!
 * Unbiased mean and covariance (divisor n - 1) of \c n sampler draws.
 *
 * Draw i receives rng.split(i). Draws are evaluated in fixed-size blocks in
 * parallel and accumulated serially in index order, so the estimate is
 * bit-identical for any thread count.
 */
CovarianceEstimate mc_covariance(GradSampler const& sampler,
                                 std::size_t n,
                                 RngStream const& rng,
                                 CovarianceOptions const& options = {});

//! Mean and standard error of n scalar draws; draw i receives rng.split(i).
struct McMean
{
    double mean = 0;
    double std_error = 0;
    double variance = 0;
    std::size_t samples = 0;
};

McMean mc_mean(std::function<double(RngStream&)> const& sampler,
               std::size_t n,
               RngStream const& rng,
               int threads = 0);

}  // namespace dropreg
