// SPDX-License-Identifier: Apache-2.0
#include "dropreg/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dropreg
{
namespace
{
constexpr std::uint32_t kMulA = 0xD2511F53;
constexpr std::uint32_t kMulB = 0xCD9E8D57;
constexpr std::uint32_t kWeylA = 0x9E3779B9;
constexpr std::uint32_t kWeylB = 0xBB67AE85;

inline void mulhilo(std::uint32_t a,
                    std::uint32_t b,
                    std::uint32_t& hi,
                    std::uint32_t& lo)
{
    std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}
}  // namespace

std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                           std::array<std::uint32_t, 2> key)
{
    for (int round = 0; round < 10; ++round)
    {
        if (round > 0)
        {
            key[0] += kWeylA;
            key[1] += kWeylB;
        }
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kMulA, ctr[0], hi0, lo0);
        mulhilo(kMulB, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
}

std::uint64_t mix64(std::uint64_t z)
{
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

RngStream::RngStream(std::uint64_t seed, std::vector<std::uint64_t> path)
    : seed_(seed), path_(std::move(path))
{
    std::uint64_t k = mix64(seed_);
    for (auto p : path_)
        k = mix64(k ^ mix64(p + 0x632BE59BD9B4E019ull));
    key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
}

RngStream RngStream::split(std::uint64_t index) const
{
    auto path = path_;
    path.push_back(index);
    return RngStream(seed_, std::move(path));
}

RngStream RngStream::split(std::initializer_list<std::uint64_t> indices) const
{
    auto path = path_;
    path.insert(path.end(), indices.begin(), indices.end());
    return RngStream(seed_, std::move(path));
}

std::uint64_t RngStream::next_u64()
{
    if (block_pos_ >= 4)
    {
        block_ = philox4x32_10({static_cast<std::uint32_t>(counter_),
                                static_cast<std::uint32_t>(counter_ >> 32),
                                0u,
                                0u},
                               key_);
        ++counter_;
        block_pos_ = 0;
    }
    std::uint64_t lo = block_[block_pos_];
    std::uint64_t hi = block_[block_pos_ + 1];
    block_pos_ += 2;
    return (hi << 32) | lo;
}

double RngStream::uniform()
{
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal()
{
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1))
           * std::cos(2.0 * std::numbers::pi * u2);
}

double RngStream::rademacher()
{
    return (next_u64() >> 63) ? 1.0 : -1.0;
}

std::size_t RngStream::categorical(std::span<double const> weights)
{
    if (weights.empty())
        throw std::invalid_argument("categorical: no weights");
    double total = 0;
    for (double w : weights)
    {
        if (!(w >= 0.0) || !std::isfinite(w))
            throw std::invalid_argument("categorical: weights must be finite and >= 0");
        total += w;
    }
    if (!(total > 0.0))
        throw std::invalid_argument("categorical: weights sum to zero");
    double u = uniform() * total;
    double acc = 0;
    for (std::size_t i = 0; i < weights.size(); ++i)
    {
        acc += weights[i];
        if (u < acc)
            return i;
    }
    // Rounding can leave u == total; return the last positive weight.
    for (std::size_t i = weights.size(); i-- > 0;)
        if (weights[i] > 0)
            return i;
    return weights.size() - 1;
}

std::size_t RngStream::uniform_index(std::size_t n)
{
    if (n == 0)
        throw std::invalid_argument("uniform_index: empty range");
    return static_cast<std::size_t>(uniform() * static_cast<double>(n));
}

}  // namespace dropreg
