// SPDX-License-Identifier: Apache-2.0
#include "dropreg/suite.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "dropreg/parallel.hpp"

namespace dropreg
{

std::vector<std::string> const& suite_names()
{
    static std::vector<std::string> const names{"dropk-sweep", "corrected", "explicit-only",
                                                "implicit-only", "combined", "ablation",
                                                "datasize"};
    return names;
}

namespace
{
SuiteCell cell(std::string label, RunConfig c)
{
    c.name = label;
    return {std::move(label), std::move(c)};
}

RunConfig with(RunConfig c, Method m, std::size_t k = 1)
{
    c.method = m;
    c.k = k;
    return c;
}

RunConfig corrected(RunConfig c, std::size_t k, NoiseSource src)
{
    c = with(std::move(c), Method::corrected_dropout_k, k);
    c.noise_source = src;
    return c;
}

RunConfig regularized(RunConfig c, Method m, RegularizerVariant v, bool noise = false)
{
    c = with(std::move(c), m);
    c.regularizer.variant = v;
    c.ablation_noise = noise;
    return c;
}
}  // namespace

std::vector<SuiteCell> suite_grid(std::string const& suite, RunConfig const& base)
{
    using M = Method;
    using V = RegularizerVariant;
    std::vector<SuiteCell> cells;
    if (suite == "dropk-sweep")
    {
        for (std::size_t k : {1, 4, 8, 32})
            cells.push_back(cell("drop_" + std::to_string(k), with(base, M::dropout_k, k)));
    }
    else if (suite == "corrected")
    {
        cells.push_back(cell("drop_1", with(base, M::dropout_k, 1)));
        cells.push_back(cell("drop_4", with(base, M::dropout_k, 4)));
        cells.push_back(cell("drop_4_xi_tilde", corrected(base, 4, NoiseSource::xi_tilde)));
        cells.push_back(cell("drop_4_xi_ours", corrected(base, 4, NoiseSource::xi_ours)));
    }
    else if (suite == "explicit-only")
    {
        cells.push_back(cell("none", with(base, M::none)));
        cells.push_back(cell("drop_1", with(base, M::dropout_k, 1)));
        cells.push_back(cell("explicit_sampled", regularized(base, M::explicit_only, V::sampled_hessian)));
        cells.push_back(cell("explicit_exact", regularized(base, M::explicit_only, V::exact_hessian)));
    }
    else if (suite == "implicit-only")
    {
        cells.push_back(cell("drop_1", with(base, M::dropout_k, 1)));
        cells.push_back(cell("drop_4", with(base, M::dropout_k, 4)));
        cells.push_back(cell("drop_4_xi_ours", corrected(base, 4, NoiseSource::xi_ours)));
        cells.push_back(cell("implicit", regularized(base, M::implicit_only, V::sampled_hessian)));
    }
    else if (suite == "combined")
    {
        cells.push_back(cell("none", with(base, M::none)));
        cells.push_back(cell("drop_1", with(base, M::dropout_k, 1)));
        cells.push_back(cell("combined", regularized(base, M::combined, V::sampled_hessian)));
    }
    else if (suite == "ablation")
    {
        cells.push_back(cell("explicit_sampled", regularized(base, M::explicit_only, V::sampled_hessian)));
        cells.push_back(cell("combined", regularized(base, M::combined, V::sampled_hessian)));
        cells.push_back(cell("identity_hessian", regularized(base, M::identity_hessian, V::identity_hessian)));
        cells.push_back(cell("jacobian_approx", regularized(base, M::jacobian_approx, V::jacobian_approx)));
        cells.push_back(cell("jacobian_approx_noise",
                             regularized(base, M::jacobian_approx, V::jacobian_approx, true)));
    }
    else if (suite == "datasize")
    {
        for (std::size_t scale : {1, 8})
        {
            RunConfig sized = base;
            sized.data.n_train = base.data.n_train * scale;
            auto tag = "n" + std::to_string(sized.data.n_train);
            cells.push_back(cell(tag + "_drop_1", with(sized, M::dropout_k, 1)));
            cells.push_back(cell(tag + "_drop_8", with(sized, M::dropout_k, 8)));
        }
    }
    else
    {
        throw std::invalid_argument("unknown suite '" + suite + "'");
    }
    return cells;
}

SuiteRow const& SuiteResult::row(std::string const& label) const
{
    for (auto const& r : rows)
        if (r.label == label)
            return r;
    throw std::out_of_range("suite " + suite + " has no run '" + label + "'");
}

SuiteResult run_suite(std::string const& suite,
                      RunConfig const& base,
                      std::string const& out_dir,
                      int threads)
{
    auto cells = suite_grid(suite, base);
    SuiteResult result;
    result.suite = suite;
    result.rows.resize(cells.size());
    std::filesystem::path root;
    if (!out_dir.empty())
    {
        root = std::filesystem::path(out_dir) / suite;
        std::filesystem::create_directories(root);
    }
    parallel_for(cells.size(), threads, [&](std::size_t i) {
        auto& row = result.rows[i];
        row.label = cells[i].label;
        row.config = cells[i].config;
        try
        {
            auto run = train(cells[i].config);
            if (run.diverged)
                row.status = "diverged";
            if (!run.records.empty())
            {
                auto [best, epoch] = run.best_val_loss();
                row.best_val_loss = best;
                row.best_epoch = epoch;
                row.final_val_loss = run.records.back().val_loss;
                row.final_val_accuracy = run.records.back().val_accuracy;
            }
            if (!root.empty())
                write_run(cells[i].config, run, (root / cells[i].label).string());
        }
        catch (std::exception const& e)
        {
            row.status = std::string("error: ") + e.what();
        }
    });
    if (!root.empty())
        write_summary_csv(result, (root / "summary.csv").string());
    return result;
}

void write_summary_csv(SuiteResult const& result, std::string const& path)
{
    std::ofstream os(path);
    if (!os)
        throw std::runtime_error("cannot write " + path);
    os << "suite,label,method,k,q,variant,lambda1,lambda2,n_train,best_val_loss,best_epoch,"
          "final_val_loss,final_val_accuracy,best_val_perplexity,status,config_hash\n";
    char buf[512];
    for (auto const& r : result.rows)
    {
        auto reg = r.config.effective_regularizer();
        bool uses_reg = r.config.method != Method::none && r.config.method != Method::dropout_k
                        && r.config.method != Method::corrected_dropout_k;
        std::snprintf(buf, sizeof(buf), "%s,%s,%s,%zu,%.6g,%s,%.6g,%.6g,%zu,%.8f,%zu,%.8f,%.6f,%.6f,",
                      result.suite.c_str(), r.label.c_str(), to_string(r.config.method).c_str(),
                      r.config.k, r.config.q, uses_reg ? to_string(reg.variant).c_str() : "",
                      uses_reg ? reg.lambda1 : 0.0, uses_reg ? reg.lambda2 : 0.0,
                      r.config.data.n_train, r.best_val_loss, r.best_epoch, r.final_val_loss,
                      r.final_val_accuracy, std::exp(r.best_val_loss));
        std::string status = r.status;
        for (auto& ch : status)
            if (ch == ',' || ch == '\n')
                ch = ';';
        os << buf << status << "," << config_hash(r.config) << "\n";
    }
}

}  // namespace dropreg
