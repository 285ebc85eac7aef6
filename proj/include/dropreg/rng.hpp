// SPDX-License-Identifier: Apache-2.0
//---------------------------------------------------------------------------//
//! \file dropreg/rng.hpp
//! Counter-based splittable random streams.
//---------------------------------------------------------------------------//
#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace dropreg
{

//! Philox4x32 with 10 rounds (Salmon et al., SC'11).
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                           std::array<std::uint32_t, 2> key);

//! SplitMix64 finalizer, used to derive stream keys.
std::uint64_t mix64(std::uint64_t z);

//---------------------------------------------------------------------------//
/*!
 * Random stream identified by a seed and a path of sub-stream indices.
 *
 * The stream key is a hash of (seed, path); draws are Philox blocks indexed
 * by an internal counter. Splitting never touches the parent's counter, so
 * sub-stream i of a given stream is the same no matter when or on which
 * thread it is created.
 */
class RngStream
{
  public:
    explicit RngStream(std::uint64_t seed, std::vector<std::uint64_t> path = {});

    std::uint64_t seed() const { return seed_; }
    std::vector<std::uint64_t> const& path() const { return path_; }

    RngStream split(std::uint64_t index) const;
    RngStream split(std::initializer_list<std::uint64_t> indices) const;

    std::uint64_t next_u64();
    //! Uniform in [0, 1) with 53 random bits.
    double uniform();
    //! Standard normal via Box-Muller (no cached second variate).
    double normal();
    //! +1 or -1 with equal probability.
    double rademacher();
    //! Index drawn with probability proportional to \c weights.
    std::size_t categorical(std::span<double const> weights);
    std::size_t uniform_index(std::size_t n);

  private:
    std::uint64_t seed_;
    std::vector<std::uint64_t> path_;
    std::array<std::uint32_t, 2> key_{};
    std::uint64_t counter_ = 0;
    std::array<std::uint32_t, 4> block_{};
    int block_pos_ = 4;
};

}  // namespace dropreg
