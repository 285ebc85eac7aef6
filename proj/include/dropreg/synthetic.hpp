// SPDX-License-Identifier: Apache-2.0
//---------------------------------------------------------------------------//
//! \file dropreg/synthetic.hpp
//! Gaussian-cluster classification data and CSV dataset I/O.
//---------------------------------------------------------------------------//
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "json.hpp"

#include "model.hpp"

namespace dropreg
{

struct SyntheticSpec
{
    std::size_t n_train = 512;
    std::size_t n_val = 2048;
    std::size_t d = 32;
    std::size_t c = 8;
    //! Class centers are separation * N(0, I / d), so ||center|| ~ separation.
    double separation = 3.0;
    //! Fraction of training labels resampled uniformly over classes.
    double label_noise = 0.2;
    std::uint64_t seed = 1;

    void validate() const;
};

nlohmann::ordered_json to_json(SyntheticSpec const& s);
//! Missing keys keep the values already in \c base.
SyntheticSpec synthetic_from_json(nlohmann::json const& j, SyntheticSpec base = {});

struct SyntheticData
{
    Dataset train;
    Dataset val;
};

/*!
 * Unit-variance Gaussian clusters around random class centers. Labels are
 * uniform over classes; only training labels receive noise. Centers use
 * stream path {0}, training example i {1, i}, validation example i {2, i}.
 */
SyntheticData gen_synthetic(SyntheticSpec const& spec);

//! Rows "f_1,...,f_d,label" with a header line.
void write_csv(Dataset const& data, std::string const& path);
Dataset read_csv(std::string const& path);

}  // namespace dropreg
