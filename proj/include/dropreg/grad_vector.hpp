// SPDX-License-Identifier: Apache-2.0
//---------------------------------------------------------------------------//
//! \file dropreg/grad_vector.hpp
//---------------------------------------------------------------------------//
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace dropreg
{

struct LayoutEntry
{
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
};

//! Ordered, contiguous parameter layout.
class ParamLayout
{
  public:
    ParamLayout() = default;
    void append(std::string name, std::vector<std::size_t> shape);

    std::vector<LayoutEntry> const& entries() const { return entries_; }
    std::size_t total_size() const { return total_; }
    LayoutEntry const& find(std::string const& name) const;

    friend bool operator==(ParamLayout const&, ParamLayout const&) = default;

  private:
    std::vector<LayoutEntry> entries_;
    std::size_t total_ = 0;
};

//---------------------------------------------------------------------------//
/*!
 * Flattened parameter gradient plus the layout that produced it.
 */
class GradVector
{
  public:
    GradVector() = default;
    explicit GradVector(ParamLayout layout);
    GradVector(ParamLayout layout, std::vector<double> values);

    ParamLayout const& layout() const { return layout_; }
    std::vector<double>& values() { return values_; }
    std::vector<double> const& values() const { return values_; }
    std::size_t size() const { return values_.size(); }

    //! View of one named parameter's slice, reshaped.
    Tensor slice(std::string const& name) const;

    //! this += scale * other
    void axpy(double scale, GradVector const& other);
    GradVector& operator+=(GradVector const& other);
    GradVector& operator-=(GradVector const& other);
    GradVector& operator*=(double s);

    double dot(GradVector const& other) const;
    double norm() const;

  private:
    ParamLayout layout_;
    std::vector<double> values_;
};

GradVector operator+(GradVector a, GradVector const& b);
GradVector operator-(GradVector a, GradVector const& b);
GradVector operator*(double s, GradVector a);

}  // namespace dropreg
