// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dropreg/suite.hpp"
#include "dropreg/synthetic.hpp"
#include "dropreg/training.hpp"

using namespace dropreg;
namespace fs = std::filesystem;

namespace
{
RunConfig tiny()
{
    RunConfig c = desk_benchmark();
    c.data.n_train = 64;
    c.data.n_val = 64;
    c.data.d = 6;
    c.data.c = 3;
    c.hidden = {8};
    c.activations = {Activation::tanh};
    c.optimizer.epochs = 3;
    c.optimizer.batch_size = 16;
    c.reg_eval_examples = 8;
    return c;
}

std::string slurp(fs::path const& p)
{
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path fresh_dir(std::string const& name)
{
    auto p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    return p;
}
}  // namespace

TEST_CASE("gen_synthetic")
{
    SyntheticSpec s;
    auto a = gen_synthetic(s);
    auto b = gen_synthetic(s);
    CHECK(a.train.features == b.train.features);
    CHECK(a.train.labels == b.train.labels);
    CHECK(a.val.features == b.val.features);
    CHECK(a.train.size() == 512);
    CHECK(a.val.size() == 2048);
    CHECK(a.train.dim() == 32);

    s.seed = 2;
    CHECK_FALSE(gen_synthetic(s).train.features == a.train.features);

    // Noise 0.5, c = 2: a uniform resample keeps the label half the time.
    SyntheticSpec noisy;
    noisy.c = 2;
    noisy.n_train = 20000;
    noisy.n_val = 10;
    noisy.label_noise = 0.5;
    SyntheticSpec clean = noisy;
    clean.label_noise = 0.0;
    auto dn = gen_synthetic(noisy);
    auto dc = gen_synthetic(clean);
    CHECK(dn.train.features == dc.train.features);
    std::size_t flipped = 0;
    for (std::size_t i = 0; i < dn.train.size(); ++i)
        flipped += dn.train.labels[i] != dc.train.labels[i];
    double frac = double(flipped) / dn.train.size();
    CHECK(std::abs(frac - 0.25) <= 4 * std::sqrt(0.25 * 0.75 / dn.train.size()));
    CHECK(dn.val.labels == dc.val.labels);

    SyntheticSpec bad;
    bad.label_noise = 1.5;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("well separated clusters are linearly separable")
{
    RunConfig c = desk_benchmark();
    c.data.separation = 10.0;
    c.data.label_noise = 0.0;
    c.hidden = {};
    c.activations = {};
    c.optimizer.epochs = 20;
    auto run = train(c);
    REQUIRE_FALSE(run.diverged);
    CHECK(run.records.back().val_accuracy >= 0.99);
}

TEST_CASE("csv round trip")
{
    auto d = gen_synthetic(tiny().data).train;
    auto p = fs::temp_directory_path() / "dropreg_test_data.csv";
    write_csv(d, p.string());
    auto back = read_csv(p.string());
    fs::remove(p);
    CHECK(back.labels == d.labels);
    CHECK(back.features == d.features);
}

TEST_CASE("lr 0 keeps the loss constant")
{
    auto c = tiny();
    c.optimizer.lr = 0.0;
    auto run = train(c);
    REQUIRE(run.records.size() == c.optimizer.epochs + 1);
    for (auto const& r : run.records)
    {
        CHECK(r.train_loss == run.records.front().train_loss);
        CHECK(r.val_loss == run.records.front().val_loss);
    }
}

TEST_CASE("dropout with q = 0 reproduces method none")
{
    auto c = tiny();
    c.q = 0.0;
    auto none = train(c);
    c.method = Method::dropout_k;
    auto drop = train(c);
    REQUIRE(none.records.size() == drop.records.size());
    for (std::size_t i = 0; i < none.records.size(); ++i)
    {
        CHECK(none.records[i].train_loss == drop.records[i].train_loss);
        CHECK(none.records[i].val_loss == drop.records[i].val_loss);
    }
    CHECK(none.model == drop.model);
}

TEST_CASE("metric records")
{
    auto c = tiny();
    c.method = Method::combined;
    auto run = train(c);
    REQUIRE_FALSE(run.diverged);
    std::size_t prev = 0;
    for (std::size_t i = 0; i < run.records.size(); ++i)
    {
        auto const& r = run.records[i];
        CHECK(r.epoch == i);
        if (i > 0)
            CHECK(r.step > prev);
        prev = r.step;
        CHECK(std::isfinite(r.train_loss));
        CHECK(std::isfinite(r.val_loss));
        CHECK(r.regularizer >= 0.0);
        CHECK_FALSE(r.to_json().contains("wall_time"));
    }
}

TEST_CASE("divergence is recorded")
{
    auto c = tiny();
    c.optimizer.lr = 1e308;
    c.optimizer.clip = 0.0;
    auto run = train(c);
    CHECK(run.diverged);
    CHECK_FALSE(run.error.empty());
    CHECK_FALSE(run.records.empty());
}

TEST_CASE("config json round trip and hash")
{
    auto c = tiny();
    c.method = Method::corrected_dropout_k;
    c.k = 4;
    c.noise_source = NoiseSource::xi_ours;
    c.regularizer.linkage = Linkage::derivation;
    auto back = run_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK(config_hash(back) == config_hash(c));
    CHECK(config_hash(c).size() == 16);
    auto d = c;
    d.seed = 8;
    CHECK(config_hash(d) != config_hash(c));

    auto partial = run_config_from_json(nlohmann::json{{"q", 0.1}}, c);
    CHECK(partial.q == 0.1);
    CHECK(partial.k == 4);
    CHECK_THROWS(run_config_from_json(nlohmann::json{{"method", "bogus"}}));
    for (auto m : {Method::none, Method::dropout_k, Method::corrected_dropout_k, Method::explicit_only,
                   Method::implicit_only, Method::combined, Method::jacobian_approx,
                   Method::identity_hessian})
        CHECK(method_from_string(to_string(m)) == m);
}

TEST_CASE("every method trains")
{
    for (auto m : {Method::none, Method::dropout_k, Method::corrected_dropout_k, Method::explicit_only,
                   Method::implicit_only, Method::combined, Method::jacobian_approx,
                   Method::identity_hessian})
    {
        auto c = tiny();
        c.method = m;
        c.k = 2;
        auto run = train(c);
        CHECK_MESSAGE(!run.diverged, to_string(m));
        CHECK(run.records.back().val_loss < run.records.front().val_loss + 1.0);
    }
}

TEST_CASE("write_run outputs")
{
    auto c = tiny();
    auto run = train(c);
    auto dir = fresh_dir("dropreg_test_run");
    write_run(c, run, dir.string());
    for (auto f : {"config.json", "metrics.jsonl", "timing.jsonl", "checkpoint.json"})
        CHECK(fs::exists(dir / f));
    std::ifstream is(dir / "metrics.jsonl");
    std::string line;
    std::size_t lines = 0;
    while (std::getline(is, line))
    {
        auto j = nlohmann::json::parse(line);
        CHECK(j["epoch"] == lines);
        ++lines;
    }
    CHECK(lines == run.records.size());
    fs::remove_all(dir);
}

TEST_CASE("suite grids")
{
    auto base = tiny();
    for (auto const& name : suite_names())
        CHECK_FALSE(suite_grid(name, base).empty());
    CHECK(suite_grid("dropk-sweep", base).size() == 4);
    CHECK_THROWS(suite_grid("unknown", base));

    auto sizes = suite_grid("datasize", base);
    CHECK(sizes[0].config.data.n_train == 64);
    CHECK(sizes[2].config.data.n_train == 512);

    auto ablation = suite_grid("ablation", base);
    for (auto const& cell : ablation)
    {
        auto reg = cell.config.effective_regularizer();
        if (cell.label == "jacobian_approx" || cell.label == "identity_hessian")
            CHECK(reg.lambda2 == 0.0);
        if (cell.label == "jacobian_approx_noise" || cell.label == "combined")
            CHECK(reg.lambda2 > 0.0);
    }
}

TEST_CASE("suite plumbing and thread determinism")
{
    auto base = tiny();
    auto d1 = fresh_dir("dropreg_suite_t1");
    auto d4 = fresh_dir("dropreg_suite_t4");
    auto a = run_suite("dropk-sweep", base, d1.string(), 1);
    auto b = run_suite("dropk-sweep", base, d4.string(), 4);
    REQUIRE(a.rows.size() == 4);
    for (auto const& label : {"drop_1", "drop_4", "drop_8", "drop_32"})
    {
        CHECK(a.row(label).status == "ok");
        CHECK(slurp(d1 / "dropk-sweep" / label / "metrics.jsonl")
              == slurp(d4 / "dropk-sweep" / label / "metrics.jsonl"));
    }
    auto summary = slurp(d1 / "dropk-sweep" / "summary.csv");
    CHECK(summary == slurp(d4 / "dropk-sweep" / "summary.csv"));
    std::stringstream ss(summary);
    std::string line;
    std::size_t rows = 0;
    while (std::getline(ss, line))
    {
        if (rows > 0)
        {
            auto hash = line.substr(line.rfind(',') + 1);
            CHECK(hash == config_hash(a.rows[rows - 1].config));
        }
        ++rows;
    }
    CHECK(rows == 5);
    fs::remove_all(d1);
    fs::remove_all(d4);
}

TEST_CASE("a failing cell does not stop the grid")
{
    auto base = tiny();
    base.optimizer.lr = 1e308;
    base.optimizer.clip = 0.0;
    auto res = run_suite("combined", base, "", 1);
    CHECK(res.rows.size() == 3);
    for (auto const& r : res.rows)
        CHECK(r.status != "ok");
}
