// SPDX-License-Identifier: Apache-2.0
#include "dropreg/grad_vector.hpp"

#include <cmath>

namespace dropreg
{

void ParamLayout::append(std::string name, std::vector<std::size_t> shape)
{
    auto n = shape_size(shape);
    entries_.push_back({std::move(name), std::move(shape), total_});
    total_ += n;
}

LayoutEntry const& ParamLayout::find(std::string const& name) const
{
    for (auto const& e : entries_)
        if (e.name == name)
            return e;
    throw std::out_of_range("no parameter named " + name);
}

GradVector::GradVector(ParamLayout layout)
    : layout_(std::move(layout)), values_(layout_.total_size(), 0.0)
{
}

GradVector::GradVector(ParamLayout layout, std::vector<double> values)
    : layout_(std::move(layout)), values_(std::move(values))
{
    if (values_.size() != layout_.total_size())
        throw ShapeError("gradient length does not match its layout");
}

Tensor GradVector::slice(std::string const& name) const
{
    auto const& e = layout_.find(name);
    auto n = shape_size(e.shape);
    return Tensor(e.shape,
                  std::vector<double>(values_.begin() + e.offset,
                                      values_.begin() + e.offset + n));
}

void GradVector::axpy(double scale, GradVector const& other)
{
    if (other.size() != size())
        throw ShapeError("gradient length mismatch");
    for (std::size_t i = 0; i < values_.size(); ++i)
        values_[i] += scale * other.values_[i];
}

GradVector& GradVector::operator+=(GradVector const& other)
{
    axpy(1.0, other);
    return *this;
}

GradVector& GradVector::operator-=(GradVector const& other)
{
    axpy(-1.0, other);
    return *this;
}

GradVector& GradVector::operator*=(double s)
{
    for (auto& v : values_)
        v *= s;
    return *this;
}

double GradVector::dot(GradVector const& other) const
{
    if (other.size() != size())
        throw ShapeError("gradient length mismatch");
    double acc = 0;
    for (std::size_t i = 0; i < values_.size(); ++i)
        acc += values_[i] * other.values_[i];
    return acc;
}

double GradVector::norm() const
{
    return std::sqrt(dot(*this));
}

GradVector operator+(GradVector a, GradVector const& b)
{
    a += b;
    return a;
}

GradVector operator-(GradVector a, GradVector const& b)
{
    a -= b;
    return a;
}

GradVector operator*(double s, GradVector a)
{
    a *= s;
    return a;
}

}  // namespace dropreg
