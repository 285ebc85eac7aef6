// SPDX-License-Identifier: Apache-2.0
#include "dropreg/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

namespace dropreg
{
namespace
{
constexpr char const* kFormat = "dropreg-mlp/1";
}

nlohmann::json model_to_json(MlpModel const& model)
{
    nlohmann::json j;
    j["format"] = kFormat;
    j["dims"] = model.dims();
    auto& acts = j["activations"] = nlohmann::json::array();
    for (auto a : model.activations())
        acts.push_back(to_string(a));
    auto& params = j["params"] = nlohmann::json::object();
    for (std::size_t l = 1; l <= model.linear_layers(); ++l)
    {
        params["W" + std::to_string(l)] = model.weight(l).values();
        params["b" + std::to_string(l)] = model.bias(l).values();
    }
    if (model.seed_provenance)
        j["seed"] = *model.seed_provenance;
    else
        j["seed"] = nullptr;
    return j;
}

MlpModel model_from_json(nlohmann::json const& j)
{
    if (j.value("format", std::string{}) != kFormat)
        throw std::invalid_argument("checkpoint: unrecognized format tag");
    std::vector<Activation> acts;
    for (auto const& a : j.at("activations"))
        acts.push_back(activation_from_string(a.get<std::string>()));
    MlpModel model(j.at("dims").get<std::vector<std::size_t>>(), std::move(acts));
    auto const& params = j.at("params");
    auto fill = [&](std::string const& name, Tensor& t) {
        auto values = params.at(name).get<std::vector<double>>();
        if (values.size() != t.size())
            throw ShapeError("checkpoint: parameter " + name + " has wrong length");
        t = Tensor(t.shape(), std::move(values));
        t.require_finite("checkpoint parameter " + name);
    };
    for (std::size_t l = 1; l <= model.linear_layers(); ++l)
    {
        fill("W" + std::to_string(l), model.weight(l));
        fill("b" + std::to_string(l), model.bias(l));
    }
    if (j.contains("seed") && !j["seed"].is_null())
        model.seed_provenance = j["seed"].get<std::uint64_t>();
    return model;
}

void save_checkpoint(MlpModel const& model, std::filesystem::path const& path)
{
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write checkpoint " + path.string());
    out << model_to_json(model).dump() << '\n';
}

MlpModel load_checkpoint(std::filesystem::path const& path)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot read checkpoint " + path.string());
    return model_from_json(nlohmann::json::parse(in));
}

}  // namespace dropreg
