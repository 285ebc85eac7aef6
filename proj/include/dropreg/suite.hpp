// SPDX-License-Identifier: Apache-2.0
//---------------------------------------------------------------------------//
//! \file dropreg/suite.hpp
//! Named experiment grids built from a base run configuration.
//---------------------------------------------------------------------------//
#pragma once

#include <string>
#include <vector>

#include "training.hpp"

namespace dropreg
{

std::vector<std::string> const& suite_names();

struct SuiteCell
{
    std::string label;
    RunConfig config;
};

/*!
 * Configurations of a suite:
 *
 * - dropk-sweep: dropout-k for k in {1, 4, 8, 32}
 * - corrected: drop_1, drop_4, drop_4 + xi_tilde, drop_4 + xi_ours
 * - explicit-only: none, drop_1, explicit (sampled and exact Hessian)
 * - implicit-only: drop_1, drop_4, drop_4 + xi_ours, clean + xi_ours
 * - combined: none, drop_1, explicit + implicit
 * - ablation: explicit, combined, identity-Hessian, jacobian-approx with
 *   and without noise
 * - datasize: drop_1 and drop_8 at the base size and eight times it
 */
std::vector<SuiteCell> suite_grid(std::string const& suite, RunConfig const& base);

struct SuiteRow
{
    std::string label;
    RunConfig config;
    std::string status = "ok";  //!< ok, diverged, or error: ...
    double best_val_loss = 0;
    std::size_t best_epoch = 0;
    double final_val_loss = 0;
    double final_val_accuracy = 0;
};

struct SuiteResult
{
    std::string suite;
    std::vector<SuiteRow> rows;

    SuiteRow const& row(std::string const& label) const;
};

/*!
 * Runs every cell (cells in parallel on \c threads workers), writing each
 * run into out_dir/<suite>/<label>/ and out_dir/<suite>/summary.csv when
 * out_dir is nonempty. A failing cell is recorded and the grid continues.
 */
SuiteResult run_suite(std::string const& suite,
                      RunConfig const& base,
                      std::string const& out_dir,
                      int threads);

void write_summary_csv(SuiteResult const& result, std::string const& path);

}  // namespace dropreg
