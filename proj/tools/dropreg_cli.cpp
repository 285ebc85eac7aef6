// SPDX-License-Identifier: Apache-2.0
//---------------------------------------------------------------------------//
//! \file tools/dropreg_cli.cpp
//! Command-line front end: gen-data, train, suite, verify, bound.
//---------------------------------------------------------------------------//
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "dropreg/bounds.hpp"
#include "dropreg/checkpoint.hpp"
#include "dropreg/parallel.hpp"
#include "dropreg/suite.hpp"
#include "dropreg/synthetic.hpp"
#include "dropreg/training.hpp"
#include "dropreg/verification.hpp"

using namespace dropreg;
namespace fs = std::filesystem;

namespace
{
struct Common
{
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "out";
    int threads = 1;
};

void add_common(CLI::App* app, Common& c)
{
    app->add_option("--config", c.config, "JSON run configuration (defaults: desk benchmark)");
    app->add_option("--seed", c.seed, "Override the run seed");
    app->add_option("--out-dir", c.out_dir, "Output directory");
    app->add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber);
}

RunConfig load_config(Common const& c)
{
    RunConfig cfg = desk_benchmark();
    if (!c.config.empty())
    {
        std::ifstream is(c.config);
        if (!is)
            throw std::runtime_error("cannot read " + c.config);
        cfg = run_config_from_json(nlohmann::json::parse(is), cfg);
    }
    if (c.seed)
        cfg.seed = *c.seed;
    return cfg;
}

void write_json(fs::path const& path, nlohmann::ordered_json const& j)
{
    std::ofstream os(path);
    if (!os)
        throw std::runtime_error("cannot write " + path.string());
    os << j.dump(2) << "\n";
}

int run_verify(std::uint64_t seed, bool full, std::string const& out_dir)
{
    RngStream root(seed);
    std::vector<CheckReport> reports;
    reports.push_back(derivative_identity_check({2, 5, 50}, 100, root.split(1)));
    reports.push_back(outer_product_check({2, 5, 50}, 100, root.split(2)));
    reports.push_back(sampled_unbiasedness_check(50, root.split(3)));
    reports.push_back(mask_moment_check({0.1, 0.4, 0.5}, 100000, root.split(4)));
    for (std::size_t c : {2, 5, 50})
        reports.push_back(exp_tail_check(c, 100000, root.split({5, c})));

    auto small = MlpModel::random({4, 6, 5, 3}, {Activation::tanh, Activation::tanh},
                                  root.split(6));
    Dataset batch;
    batch.features = Tensor::matrix(3, 4);
    RngStream xs = root.split(7);
    for (auto& v : batch.features.data())
        v = xs.normal();
    batch.labels = {0, 2, 1};
    reports.push_back(grad_check_suite(small, batch, root.split(8)));
    for (std::size_t site : {1, 2})
        reports.push_back(decomposition_check(small, batch.example(0), site));

    if (full)
    {
        auto cov_model = MlpModel::random({6, 12, 12, 4}, {Activation::tanh, Activation::tanh},
                                          root.split(9));
        LabeledExample ex{Tensor::vector({0.5, -1.0, 0.3, 1.2, -0.7, 0.1}), 2};
        reports.push_back(covariance_identity_suite(cov_model, ex,
                                                    DropoutSpec::hidden(cov_model, 0.4),
                                                    {1, 2, 4, 8}, root.split(10)));
    }

    bool pass = true;
    auto all = nlohmann::ordered_json::array();
    for (auto const& r : reports)
    {
        std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << "\n";
        pass = pass && r.pass;
        all.push_back(r.to_json());
    }
    fs::create_directories(out_dir);
    write_json(fs::path(out_dir) / "verify.json", {{"pass", pass}, {"reports", all}});
    return pass ? 0 : 1;
}
}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Dropout regularizers: training, suites, checks and bounds"};
    app.require_subcommand(1);

    Common gen_c, train_c, suite_c, verify_c;
    auto* gen = app.add_subcommand("gen-data", "Write synthetic train/val CSV files");
    add_common(gen, gen_c);

    auto* tr = app.add_subcommand("train", "Train one configuration");
    add_common(tr, train_c);

    std::string suite_name;
    auto* su = app.add_subcommand("suite", "Run a named experiment grid");
    su->add_option("name", suite_name, "Suite name")
        ->required()
        ->check(CLI::IsMember(suite_names()));
    add_common(su, suite_c);

    bool full = false;
    auto* ve = app.add_subcommand("verify", "Run numerical checks; exit 1 on any failure");
    add_common(ve, verify_c);
    ve->add_flag("--full", full, "Include Monte-Carlo covariance identities");

    std::string data_csv, test_csv, ckpt, bound_out;
    double bound_b = 1.0, delta = 0.05;
    auto* bo = app.add_subcommand("bound", "Bound ingredients for a linear checkpoint");
    bo->add_option("--data", data_csv, "Training CSV (features..., label)")->required();
    bo->add_option("--test", test_csv, "Held-out CSV for the empirical gap (default: --data)");
    bo->add_option("--checkpoint", ckpt, "Model checkpoint JSON")->required();
    bo->add_option("-B,--truncation", bound_b, "Loss truncation level B");
    bo->add_option("--delta", delta, "Confidence parameter");
    bo->add_option("--out", bound_out, "Write the report here instead of stdout");

    CLI11_PARSE(app, argc, argv);

    try
    {
        if (gen->parsed())
        {
            auto cfg = load_config(gen_c);
            auto data = gen_synthetic(cfg.data);
            fs::create_directories(gen_c.out_dir);
            write_csv(data.train, (fs::path(gen_c.out_dir) / "train.csv").string());
            write_csv(data.val, (fs::path(gen_c.out_dir) / "val.csv").string());
            return 0;
        }
        if (tr->parsed())
        {
            set_default_threads(train_c.threads);
            auto cfg = load_config(train_c);
            auto result = train(cfg);
            write_run(cfg, result, train_c.out_dir);
            if (!result.records.empty())
                std::cout << "final val loss " << result.records.back().val_loss << "\n";
            return result.diverged ? 2 : 0;
        }
        if (su->parsed())
        {
            set_default_threads(suite_c.threads);
            auto cfg = load_config(suite_c);
            auto result = run_suite(suite_name, cfg, suite_c.out_dir, suite_c.threads);
            bool ok = true;
            for (auto const& r : result.rows)
            {
                std::cout << r.label << " best " << r.best_val_loss << " final " << r.final_val_loss
                          << " " << r.status << "\n";
                ok = ok && r.status == "ok";
            }
            return ok ? 0 : 2;
        }
        if (ve->parsed())
        {
            set_default_threads(verify_c.threads);
            return run_verify(verify_c.seed.value_or(2024), full, verify_c.out_dir);
        }
        if (bo->parsed())
        {
            auto train_set = read_csv(data_csv);
            auto test_set = test_csv.empty() ? train_set : read_csv(test_csv);
            auto model = load_checkpoint(ckpt);
            auto report = bound_report(model, train_set, test_set, bound_b, delta);
            if (bound_out.empty())
                std::cout << report.to_json().dump(2) << "\n";
            else
                write_json(bound_out, report.to_json());
            return 0;
        }
    }
    catch (std::exception const& e)
    {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
