// SPDX-License-Identifier: Apache-2.0
//---------------------------------------------------------------------------//
//! \file dropreg/autodiff.hpp
//! Tensor-level reverse-mode differentiation with double backward.
//---------------------------------------------------------------------------//
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace dropreg::ad
{

class Var;

//! Backward rule: upstream gradient, the node's parents, and which parents
//! need a gradient. Returns one entry per parent (undefined if not needed).
using BackwardFn = std::function<std::vector<Var>(
    Var const& grad, std::vector<Var> const& parents, std::vector<bool> const& need)>;

struct Node
{
    Tensor value;
    std::vector<Var> parents;
    BackwardFn backward;
    bool requires_grad = false;
    char const* op = "leaf";
};

//---------------------------------------------------------------------------//
/*!
 * Handle to a node of an acyclic computation graph.
 *
 * Values are always stored as matrices (rank 2); rank-1 inputs become row
 * vectors. Backward rules are written with the same differentiable
 * operations, so a gradient taken with \c create_graph is itself a Var that
 * can be differentiated again.
 */
class Var
{
  public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    bool defined() const { return static_cast<bool>(node_); }
    Tensor const& value() const { return node_->value; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    std::size_t rows() const { return node_->value.rows(); }
    std::size_t cols() const { return node_->value.cols(); }
    //! Value of a 1x1 variable.
    double item() const;
    Node* node() const { return node_.get(); }

  private:
    std::shared_ptr<Node> node_;
};

//! Graph recording is thread-local; this disables it for a scope.
class NoGradGuard
{
  public:
    explicit NoGradGuard(bool enable = false);
    ~NoGradGuard();
    NoGradGuard(NoGradGuard const&) = delete;
    NoGradGuard& operator=(NoGradGuard const&) = delete;

  private:
    bool previous_;
};

bool grad_enabled();

Var constant(Tensor value);
//! Differentiable leaf.
Var parameter(Tensor value);
//! Same value, cut from the graph.
Var detach(Var const& v);

Var operator+(Var const& a, Var const& b);
Var operator-(Var const& a, Var const& b);
Var operator-(Var const& a);
//! Elementwise product.
Var operator*(Var const& a, Var const& b);
Var operator*(double s, Var const& a);
Var add_scalar(Var const& a, double s);

Var matmul(Var const& a, Var const& b);
Var transpose(Var const& a);

Var tanh(Var const& a);
Var relu(Var const& a);
Var exp(Var const& a);
Var log(Var const& a);
Var sin(Var const& a);
Var cos(Var const& a);
Var square(Var const& a);
Var reciprocal(Var const& a);

//! Sum of all entries, 1x1.
Var sum(Var const& a);
//! Column sums, m x n -> 1 x n.
Var sum_rows(Var const& a);
//! Row sums, m x n -> m x 1.
Var sum_cols(Var const& a);
Var broadcast_rows(Var const& row, std::size_t rows);
Var broadcast_cols(Var const& col, std::size_t cols);
Var broadcast_scalar(Var const& s, std::size_t rows, std::size_t cols);

//! Row-wise log-sum-exp with max subtraction, m x c -> m x 1.
Var logsumexp_rows(Var const& logits);
Var softmax_rows(Var const& logits);
//! Per-row cross entropy, m x c -> m x 1.
Var cross_entropy_rows(Var const& logits, std::span<std::size_t const> labels);

/*!
 * Gradients of a scalar \c output with respect to each of \c wrt.
 *
 * Targets may be leaves or interior nodes. Targets that do not influence
 * the output get zeros. With \c create_graph the returned gradients are
 * recorded and can be differentiated again; otherwise they are constants.
 * Throws ShapeError for a non-scalar output and NumericError on NaN.
 */
std::vector<Var>
grad(Var const& output, std::span<Var const> wrt, bool create_graph = false);

Var grad(Var const& output, Var const& wrt, bool create_graph = false);

}  // namespace dropreg::ad
