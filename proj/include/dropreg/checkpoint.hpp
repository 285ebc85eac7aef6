// SPDX-License-Identifier: Apache-2.0
//---------------------------------------------------------------------------//
//! \file dropreg/checkpoint.hpp
//! JSON checkpoint format for MlpModel.
//!
//! {"format": "dropreg-mlp/1", "dims": [...], "activations": ["tanh", ...],
//!  "params": {"W1": [...], "b1": [...], ...}, "seed": <int or null>}
//---------------------------------------------------------------------------//
#pragma once

#include <filesystem>

#include <json.hpp>

#include "model.hpp"

namespace dropreg
{

nlohmann::json model_to_json(MlpModel const& model);
MlpModel model_from_json(nlohmann::json const& j);

void save_checkpoint(MlpModel const& model, std::filesystem::path const& path);
MlpModel load_checkpoint(std::filesystem::path const& path);

}  // namespace dropreg
