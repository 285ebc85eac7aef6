// SPDX-License-Identifier: Apache-2.0
//---------------------------------------------------------------------------//
//! \file dropreg/training.hpp
//! Run configuration, SGD training with each regularization method, and
//! per-epoch metric logs.
//---------------------------------------------------------------------------//
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "dropout.hpp"
#include "model.hpp"
#include "regularizers.hpp"
#include "synthetic.hpp"

namespace dropreg
{

enum class Method
{
    none,
    dropout_k,
    corrected_dropout_k,
    explicit_only,
    implicit_only,
    combined,
    jacobian_approx,
    identity_hessian
};

Method method_from_string(std::string const& s);
std::string to_string(Method m);

struct OptimizerConfig
{
    double lr = 0.1;
    //! Global gradient-norm clip threshold; 0 disables clipping.
    double clip = 5.0;
    //! L2 penalty on weight matrices (biases excluded).
    double weight_decay = 0.0;
    std::size_t epochs = 60;
    std::size_t batch_size = 32;
};

/*!
 * One training run.
 *
 * explicit / implicit / combined / jacobian-approx / identity-hessian all
 * use the combined update rule: explicit forces lambda2 = 0, implicit
 * forces lambda1 = 0, the two ablations force their variant. With a
 * linkage other than none, lambdas follow from q.
 */
struct RunConfig
{
    std::string name = "run";
    SyntheticSpec data;
    std::vector<std::size_t> hidden{64, 64};
    std::vector<Activation> activations{Activation::tanh, Activation::tanh};
    double init_gain = 1.0;
    OptimizerConfig optimizer;
    Method method = Method::none;
    double q = 0.4;
    //! Dropout / regularizer sites; empty means every hidden layer.
    std::vector<std::size_t> sites;
    std::size_t k = 1;
    NoiseSource noise_source = NoiseSource::xi_tilde;
    NoiseDraw noise_draw = NoiseDraw::per_example;
    RegularizerConfig regularizer{RegularizerVariant::sampled_hessian, 0.0, 0.0,
                                  Linkage::experiment, true, {}};
    //! Keep lambda2 for the jacobian-approx / identity-hessian ablations.
    bool ablation_noise = false;
    std::uint64_t seed = 7;
    //! Training examples used for the per-epoch regularizer metric.
    std::size_t reg_eval_examples = 64;

    void validate() const;
    MlpModel initial_model() const;
    DropoutSpec dropout_spec(MlpModel const& model) const;
    //! Regularizer settings actually used by the method.
    RegularizerConfig effective_regularizer() const;
};

nlohmann::ordered_json to_json(RunConfig const& c);
//! Missing keys keep the values already in \c base.
RunConfig run_config_from_json(nlohmann::json const& j, RunConfig base = {});

//! 64-bit FNV-1a of the canonical config JSON, as 16 hex digits.
std::string config_hash(RunConfig const& c);

struct MetricRecord
{
    std::size_t epoch = 0;
    std::size_t step = 0;
    double train_loss = 0;  //!< clean (no dropout, no regularizer)
    double val_loss = 0;
    double val_accuracy = 0;
    //! Mean exact explicit regularizer over reg_eval_examples training examples.
    double regularizer = 0;
    double wall_time = 0;  //!< seconds since start; kept out of metrics JSONL

    //! Deterministic record (no wall time).
    nlohmann::ordered_json to_json() const;
};

struct TrainResult
{
    std::vector<MetricRecord> records;
    MlpModel model;
    bool diverged = false;
    std::string error;

    double final_val_loss() const;
    //! Best val loss and its epoch.
    std::pair<double, std::size_t> best_val_loss() const;
};

//! Gradient of one mini-batch update for the configured method.
GradVector method_gradient(RunConfig const& config,
                           MlpModel const& model,
                           Dataset const& batch,
                           RngStream const& rng);

/*!
 * SGD with global-norm clipping. Epoch e shuffles with stream {1, e};
 * step s draws method noise from stream {2, s}; initialization uses {0}.
 * A non-finite loss or parameter stops training and sets \c diverged.
 */
TrainResult train(RunConfig const& config, SyntheticData const& data);
TrainResult train(RunConfig const& config);

/*!
 * Writes config.json, metrics.jsonl, timing.jsonl and checkpoint.json
 * into \c dir (created if needed).
 */
void write_run(RunConfig const& config, TrainResult const& result, std::string const& dir);

//! The frozen desk benchmark configuration.
RunConfig desk_benchmark();

}  // namespace dropreg
