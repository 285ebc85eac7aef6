// SPDX-License-Identifier: Apache-2.0
//---------------------------------------------------------------------------//
//! \file dropreg/model.hpp
//! Feedforward softmax classifiers, hidden-layer traces, and closed-form
//! cross-entropy derivatives.
//---------------------------------------------------------------------------//
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "grad_vector.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace dropreg
{

enum class Activation
{
    tanh,
    relu
};

std::string to_string(Activation a);
Activation activation_from_string(std::string const& s);

struct LabeledExample
{
    Tensor x;
    std::size_t y = 0;
};

//! Row-stacked examples: features is n x d.
struct Dataset
{
    Tensor features;
    std::vector<std::size_t> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return features.cols(); }
    LabeledExample example(std::size_t i) const;
    Dataset subset(std::vector<std::size_t> const& indices) const;
    static Dataset from_examples(std::vector<LabeledExample> const& examples);
};

//---------------------------------------------------------------------------//
/*!
 * Multilayer perceptron with L hidden layers and a linear softmax head.
 *
 * Layer widths are dims = {d_0, d_1, ..., d_L, c}. Sites are indexed
 * 0..L where site 0 is the input and site i >= 1 is the post-activation
 * hidden layer h_i. Linear layer l (1-based) holds W_l of shape
 * dims[l] x dims[l-1] and b_l of length dims[l]; L = 0 is a linear model.
 */
class MlpModel
{
  public:
    MlpModel() = default;
    //! Zero-initialized parameters.
    MlpModel(std::vector<std::size_t> dims, std::vector<Activation> activations);

    //! Glorot-uniform weights scaled by \c gain, zero biases.
    static MlpModel random(std::vector<std::size_t> dims,
                           std::vector<Activation> activations,
                           RngStream rng,
                           double gain = 1.0);

    std::vector<std::size_t> const& dims() const { return dims_; }
    std::vector<Activation> const& activations() const { return activations_; }
    std::size_t hidden_layers() const { return dims_.size() - 2; }
    std::size_t input_dim() const { return dims_.front(); }
    std::size_t num_classes() const { return dims_.back(); }
    std::size_t site_width(std::size_t site) const;
    //! Activation of hidden layer i (1-based).
    Activation activation(std::size_t i) const { return activations_.at(i - 1); }

    //! Linear layer l (1-based).
    Tensor& weight(std::size_t l) { return weights_.at(l - 1); }
    Tensor const& weight(std::size_t l) const { return weights_.at(l - 1); }
    Tensor& bias(std::size_t l) { return biases_.at(l - 1); }
    Tensor const& bias(std::size_t l) const { return biases_.at(l - 1); }
    std::size_t linear_layers() const { return weights_.size(); }

    ParamLayout layout() const;
    std::size_t parameter_count() const { return layout().total_size(); }
    std::vector<double> flatten() const;
    void assign(std::vector<double> const& flat);

    std::optional<std::uint64_t> seed_provenance;

    friend bool operator==(MlpModel const&, MlpModel const&) = default;

  private:
    std::vector<std::size_t> dims_;
    std::vector<Activation> activations_;
    std::vector<Tensor> weights_;
    std::vector<Tensor> biases_;
};

//! Per-site multiplicative factors (1 + eta); an empty tensor means none.
using SiteFactors = std::vector<Tensor>;

struct ForwardTrace
{
    Tensor input;
    std::vector<Tensor> pre_activations;  //!< z_1..z_L
    std::vector<Tensor> hidden;  //!< h_1..h_L as seen by the next layer
    Tensor logits;
    Tensor probs;

    //! Activation at site i (0 = input).
    Tensor const& site(std::size_t i) const;
};

ForwardTrace forward_trace(MlpModel const& model, Tensor const& x);
//! Forward pass with h_i replaced by factor_i (.) h_i at listed sites.
ForwardTrace forward_trace(MlpModel const& model,
                           Tensor const& x,
                           SiteFactors const& factors);
//! Logits of the tail F_i applied to a site-i activation.
Tensor tail_logits(MlpModel const& model, std::size_t site, Tensor const& h);

//---------------------------------------------------------------------------//
// Cross-entropy closed forms
//---------------------------------------------------------------------------//
Tensor softmax(Tensor const& logits);
//! -log softmax(logits)_y via log-sum-exp.
double ce_loss(Tensor const& logits, std::size_t y);
//! p - 1_y
Tensor ce_grad(Tensor const& logits, std::size_t y);
//! diag(p) - p p^T
Tensor ce_hessian(Tensor const& logits);

//! c x d_i Jacobian of the logits with respect to site i.
Tensor tail_jacobian(MlpModel const& model, ForwardTrace const& trace, std::size_t site);
//! Row of length d_i: derivative of the loss with respect to site i.
Tensor loss_jacobian_hidden(MlpModel const& model,
                            ForwardTrace const& trace,
                            std::size_t y,
                            std::size_t site);

//---------------------------------------------------------------------------//
// Graph construction
//---------------------------------------------------------------------------//
struct GraphParams
{
    std::vector<ad::Var> weights;
    std::vector<ad::Var> biases;
    //! Layout order: W1, b1, W2, b2, ...
    std::vector<ad::Var> all() const;
};

GraphParams graph_params(MlpModel const& model, bool trainable = true);

struct GraphForward
{
    std::vector<ad::Var> sites;  //!< size L + 1; sites[0] is the input
    ad::Var logits;
};

/*!
 * Batched forward pass in the autodiff graph. \c input is m x d_0.
 * With \c factors, each listed site's activation (m x d_i factors) is
 * multiplied in before flowing onward and sites[i] is the scaled value.
 */
GraphForward graph_forward(MlpModel const& model,
                           GraphParams const& params,
                           ad::Var const& input,
                           SiteFactors const* factors = nullptr);

//! Graph form of the tail F_i from a site-i activation (m x d_i) to logits.
ad::Var graph_tail(MlpModel const& model,
                   GraphParams const& params,
                   std::size_t site,
                   ad::Var const& h);

GradVector to_grad_vector(MlpModel const& model, std::vector<ad::Var> const& grads);

//! Gradient of ce loss (averaged over rows) for a batch with optional
//! per-row site factors.
GradVector batch_gradient(MlpModel const& model,
                          Tensor const& inputs,
                          std::vector<std::size_t> const& labels,
                          SiteFactors const* factors = nullptr,
                          double loss_scale = 1.0);

//! Mean clean cross entropy and accuracy over a dataset.
struct EvalResult
{
    double loss = 0;
    double accuracy = 0;
};
EvalResult evaluate(MlpModel const& model, Dataset const& data);

}  // namespace dropreg
