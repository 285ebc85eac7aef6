// SPDX-License-Identifier: Apache-2.0
#include "dropreg/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "dropreg/checkpoint.hpp"

namespace dropreg
{

Method method_from_string(std::string const& s)
{
    if (s == "none")
        return Method::none;
    if (s == "dropout-k")
        return Method::dropout_k;
    if (s == "corrected-dropout-k")
        return Method::corrected_dropout_k;
    if (s == "explicit")
        return Method::explicit_only;
    if (s == "implicit")
        return Method::implicit_only;
    if (s == "combined")
        return Method::combined;
    if (s == "jacobian-approx")
        return Method::jacobian_approx;
    if (s == "identity-hessian")
        return Method::identity_hessian;
    throw std::invalid_argument("unknown method '" + s + "'");
}

std::string to_string(Method m)
{
    switch (m)
    {
    case Method::none:
        return "none";
    case Method::dropout_k:
        return "dropout-k";
    case Method::corrected_dropout_k:
        return "corrected-dropout-k";
    case Method::explicit_only:
        return "explicit";
    case Method::implicit_only:
        return "implicit";
    case Method::combined:
        return "combined";
    case Method::jacobian_approx:
        return "jacobian-approx";
    case Method::identity_hessian:
        return "identity-hessian";
    }
    return "?";
}

//---------------------------------------------------------------------------//
void RunConfig::validate() const
{
    data.validate();
    if (hidden.size() != activations.size())
        throw std::invalid_argument("config: one activation per hidden layer required");
    for (auto w : hidden)
        if (w < 1)
            throw std::invalid_argument("config: hidden widths must be positive");
    if (!(optimizer.lr >= 0) || !(optimizer.clip >= 0) || !(optimizer.weight_decay >= 0))
        throw std::invalid_argument("config: lr, clip and weight decay must be >= 0");
    if (optimizer.batch_size < 1)
        throw std::invalid_argument("config: batch size must be positive");
    if (k < 1)
        throw std::invalid_argument("config: k must be at least 1");
    if (!(q >= 0.0 && q < 1.0))
        throw std::invalid_argument("config: q must lie in [0, 1)");
    if (!(init_gain > 0))
        throw std::invalid_argument("config: init gain must be positive");
    for (auto s : sites)
        if (s > hidden.size())
            throw std::invalid_argument("config: site out of range");
    auto r = effective_regularizer();
    if (r.lambda1 < 0 || r.lambda2 < 0)
        throw std::invalid_argument("config: regularization strengths must be >= 0");
}

MlpModel RunConfig::initial_model() const
{
    std::vector<std::size_t> dims{data.d};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(data.c);
    return MlpModel::random(dims, activations, RngStream(seed, {0}), init_gain);
}

DropoutSpec RunConfig::dropout_spec(MlpModel const& model) const
{
    return sites.empty() ? DropoutSpec::hidden(model, q) : DropoutSpec{q, sites};
}

RegularizerConfig RunConfig::effective_regularizer() const
{
    RegularizerConfig r = regularizer.resolved(q);
    if (r.sites.empty())
        r.sites = sites;
    switch (method)
    {
    case Method::explicit_only:
        r.lambda2 = 0;
        break;
    case Method::implicit_only:
        r.lambda1 = 0;
        break;
    case Method::jacobian_approx:
        r.variant = RegularizerVariant::jacobian_approx;
        if (!ablation_noise)
            r.lambda2 = 0;
        break;
    case Method::identity_hessian:
        r.variant = RegularizerVariant::identity_hessian;
        if (!ablation_noise)
            r.lambda2 = 0;
        break;
    default:
        break;
    }
    return r;
}

nlohmann::ordered_json to_json(RunConfig const& c)
{
    nlohmann::ordered_json j;
    j["name"] = c.name;
    j["data"] = to_json(c.data);
    j["hidden"] = c.hidden;
    auto acts = nlohmann::ordered_json::array();
    for (auto a : c.activations)
        acts.push_back(to_string(a));
    j["activations"] = acts;
    j["init_gain"] = c.init_gain;
    j["optimizer"] = {{"lr", c.optimizer.lr},
                      {"clip", c.optimizer.clip},
                      {"weight_decay", c.optimizer.weight_decay},
                      {"epochs", c.optimizer.epochs},
                      {"batch_size", c.optimizer.batch_size}};
    j["method"] = to_string(c.method);
    j["q"] = c.q;
    j["sites"] = c.sites;
    j["k"] = c.k;
    j["noise_source"] = to_string(c.noise_source);
    j["noise_draw"] = c.noise_draw == NoiseDraw::shared ? "shared" : "per-example";
    j["regularizer"] = {{"variant", to_string(c.regularizer.variant)},
                        {"lambda1", c.regularizer.lambda1},
                        {"lambda2", c.regularizer.lambda2},
                        {"linkage", to_string(c.regularizer.linkage)},
                        {"identity_sampled", c.regularizer.identity_sampled},
                        {"sites", c.regularizer.sites}};
    j["ablation_noise"] = c.ablation_noise;
    j["seed"] = c.seed;
    j["reg_eval_examples"] = c.reg_eval_examples;
    return j;
}

RunConfig run_config_from_json(nlohmann::json const& j, RunConfig c)
{
    c.name = j.value("name", c.name);
    if (j.contains("data"))
        c.data = synthetic_from_json(j.at("data"), c.data);
    if (j.contains("hidden"))
        c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    if (j.contains("activations"))
    {
        c.activations.clear();
        for (auto const& a : j.at("activations"))
            c.activations.push_back(activation_from_string(a.get<std::string>()));
    }
    else if (j.contains("hidden"))
    {
        c.activations.assign(c.hidden.size(), Activation::tanh);
    }
    c.init_gain = j.value("init_gain", c.init_gain);
    if (j.contains("optimizer"))
    {
        auto const& o = j.at("optimizer");
        c.optimizer.lr = o.value("lr", c.optimizer.lr);
        c.optimizer.clip = o.value("clip", c.optimizer.clip);
        c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
        c.optimizer.epochs = o.value("epochs", c.optimizer.epochs);
        c.optimizer.batch_size = o.value("batch_size", c.optimizer.batch_size);
    }
    if (j.contains("method"))
        c.method = method_from_string(j.at("method").get<std::string>());
    c.q = j.value("q", c.q);
    if (j.contains("sites"))
        c.sites = j.at("sites").get<std::vector<std::size_t>>();
    c.k = j.value("k", c.k);
    if (j.contains("noise_source"))
        c.noise_source = noise_source_from_string(j.at("noise_source").get<std::string>());
    if (j.contains("noise_draw"))
    {
        auto s = j.at("noise_draw").get<std::string>();
        if (s == "shared")
            c.noise_draw = NoiseDraw::shared;
        else if (s == "per-example")
            c.noise_draw = NoiseDraw::per_example;
        else
            throw std::invalid_argument("unknown noise draw '" + s + "'");
    }
    if (j.contains("regularizer"))
    {
        auto const& r = j.at("regularizer");
        if (r.contains("variant"))
            c.regularizer.variant = variant_from_string(r.at("variant").get<std::string>());
        c.regularizer.lambda1 = r.value("lambda1", c.regularizer.lambda1);
        c.regularizer.lambda2 = r.value("lambda2", c.regularizer.lambda2);
        if (r.contains("linkage"))
            c.regularizer.linkage = linkage_from_string(r.at("linkage").get<std::string>());
        c.regularizer.identity_sampled = r.value("identity_sampled", c.regularizer.identity_sampled);
        if (r.contains("sites"))
            c.regularizer.sites = r.at("sites").get<std::vector<std::size_t>>();
    }
    c.ablation_noise = j.value("ablation_noise", c.ablation_noise);
    c.seed = j.value("seed", c.seed);
    c.reg_eval_examples = j.value("reg_eval_examples", c.reg_eval_examples);
    return c;
}

std::string config_hash(RunConfig const& c)
{
    auto text = to_json(c).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text)
    {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

//---------------------------------------------------------------------------//
nlohmann::ordered_json MetricRecord::to_json() const
{
    return {{"epoch", epoch},
            {"step", step},
            {"train_loss", train_loss},
            {"val_loss", val_loss},
            {"val_accuracy", val_accuracy},
            {"regularizer", regularizer}};
}

double TrainResult::final_val_loss() const
{
    if (records.empty())
        throw std::logic_error("no metrics recorded");
    return records.back().val_loss;
}

std::pair<double, std::size_t> TrainResult::best_val_loss() const
{
    if (records.empty())
        throw std::logic_error("no metrics recorded");
    auto best = std::min_element(records.begin(), records.end(),
                                 [](auto const& a, auto const& b) { return a.val_loss < b.val_loss; });
    return {best->val_loss, best->epoch};
}

GradVector method_gradient(RunConfig const& config,
                           MlpModel const& model,
                           Dataset const& batch,
                           RngStream const& rng)
{
    switch (config.method)
    {
    case Method::none:
        return batch_gradient(model, batch.features, batch.labels);
    case Method::dropout_k:
        return drop_k_gradient(model, batch, config.dropout_spec(model), config.k, rng);
    case Method::corrected_dropout_k:
        return corrected_drop_k_gradient(model, batch, config.dropout_spec(model), config.k,
                                         config.noise_source, rng, config.noise_draw);
    default:
        return combined_update_gradient(model, batch, config.effective_regularizer(), rng);
    }
}

namespace
{
MetricRecord measure(RunConfig const& config,
                     MlpModel const& model,
                     SyntheticData const& data,
                     std::vector<std::size_t> const& reg_sites,
                     std::size_t epoch,
                     std::size_t step)
{
    MetricRecord m;
    m.epoch = epoch;
    m.step = step;
    m.train_loss = evaluate(model, data.train).loss;
    auto val = evaluate(model, data.val);
    m.val_loss = val.loss;
    m.val_accuracy = val.accuracy;
    auto count = std::min(config.reg_eval_examples, data.train.size());
    double reg = 0;
    for (std::size_t i = 0; i < count; ++i)
        reg += explicit_reg_exact(model, data.train.features.row(i), reg_sites).total;
    m.regularizer = count ? reg / static_cast<double>(count) : 0.0;
    return m;
}

void apply_update(MlpModel& model, GradVector g, OptimizerConfig const& opt)
{
    auto flat = model.flatten();
    if (opt.weight_decay > 0)
    {
        for (auto const& e : g.layout().entries())
        {
            if (e.name.empty() || e.name[0] != 'W')
                continue;
            auto size = shape_size(e.shape);
            for (std::size_t k = 0; k < size; ++k)
                g.values()[e.offset + k] += opt.weight_decay * flat[e.offset + k];
        }
    }
    if (opt.clip > 0)
    {
        double norm = g.norm();
        if (norm > opt.clip)
            g *= opt.clip / norm;
    }
    for (std::size_t k = 0; k < flat.size(); ++k)
        flat[k] -= opt.lr * g.values()[k];
    for (double v : flat)
        if (!std::isfinite(v))
            throw NumericError("parameters became non-finite");
    model.assign(flat);
}
}  // namespace

TrainResult train(RunConfig const& config, SyntheticData const& data)
{
    config.validate();
    auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };
    TrainResult result;
    result.model = config.initial_model();
    auto reg_sites = config.dropout_spec(result.model).sites;
    RngStream root(config.seed);
    RngStream shuffle = root.split(1);
    RngStream noise = root.split(2);
    std::size_t step = 0;
    auto n = data.train.size();
    auto bs = config.optimizer.batch_size;
    try
    {
        result.records.push_back(measure(config, result.model, data, reg_sites, 0, 0));
        result.records.back().wall_time = elapsed();
        std::vector<std::size_t> order(n);
        for (std::size_t epoch = 1; epoch <= config.optimizer.epochs; ++epoch)
        {
            std::iota(order.begin(), order.end(), std::size_t{0});
            RngStream perm = shuffle.split(epoch);
            for (std::size_t i = n; i > 1; --i)
                std::swap(order[i - 1], order[perm.uniform_index(i)]);
            for (std::size_t b = 0; b < n; b += bs)
            {
                std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                             order.begin()
                                                 + static_cast<std::ptrdiff_t>(std::min(n, b + bs)));
                auto batch = data.train.subset(idx);
                auto g = method_gradient(config, result.model, batch, noise.split(step));
                apply_update(result.model, std::move(g), config.optimizer);
                ++step;
            }
            auto m = measure(config, result.model, data, reg_sites, epoch, step);
            m.wall_time = elapsed();
            if (!std::isfinite(m.train_loss) || !std::isfinite(m.val_loss))
                throw NumericError("loss became non-finite");
            result.records.push_back(m);
        }
    }
    catch (NumericError const& e)
    {
        result.diverged = true;
        result.error = e.what();
    }
    return result;
}

TrainResult train(RunConfig const& config)
{
    return train(config, gen_synthetic(config.data));
}

void write_run(RunConfig const& config, TrainResult const& result, std::string const& dir)
{
    std::filesystem::create_directories(dir);
    auto path = std::filesystem::path(dir);
    {
        std::ofstream os(path / "config.json");
        os << to_json(config).dump(2) << "\n";
    }
    {
        std::ofstream os(path / "metrics.jsonl");
        for (auto const& m : result.records)
            os << m.to_json().dump() << "\n";
        if (result.diverged)
            os << nlohmann::ordered_json{{"diverged", true}, {"error", result.error}}.dump() << "\n";
    }
    {
        std::ofstream os(path / "timing.jsonl");
        for (auto const& m : result.records)
            os << nlohmann::ordered_json{{"epoch", m.epoch}, {"wall_time", m.wall_time}}.dump()
               << "\n";
    }
    save_checkpoint(result.model, path / "checkpoint.json");
}

RunConfig desk_benchmark()
{
    RunConfig c;
    c.name = "desk";
    c.data.n_train = 512;
    c.data.n_val = 2048;
    c.data.d = 32;
    c.data.c = 8;
    c.data.separation = 3.0;
    c.data.label_noise = 0.2;
    c.data.seed = 1;
    c.hidden = {64, 64};
    c.activations = {Activation::tanh, Activation::tanh};
    c.optimizer.lr = 0.1;
    c.optimizer.clip = 5.0;
    c.optimizer.epochs = 60;
    c.optimizer.batch_size = 32;
    c.q = 0.4;
    c.seed = 7;
    return c;
}

}  // namespace dropreg
