// SPDX-License-Identifier: Apache-2.0
#include "dropreg/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace dropreg
{

std::size_t shape_size(std::vector<std::size_t> const& shape)
{
    std::size_t n = 1;
    for (auto d : shape)
    {
        if (d == 0)
            throw ShapeError("tensor dimensions must be positive");
        n *= d;
    }
    return n;
}

std::string shape_string(std::vector<std::size_t> const& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill)
{
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data))
{
    if (shape_size(shape_) != data_.size())
        throw ShapeError("data length " + std::to_string(data_.size())
                         + " does not match shape " + shape_string(shape_));
}

Tensor Tensor::vector(std::vector<double> values)
{
    auto n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::vector(std::initializer_list<double> values)
{
    return vector(std::vector<double>(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill)
{
    return Tensor({rows, cols}, fill);
}

Tensor
Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
{
    return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::identity(std::size_t n)
{
    Tensor t = matrix(n, n);
    for (std::size_t i = 0; i < n; ++i)
        t(i, i) = 1.0;
    return t;
}

Tensor Tensor::from_eigen(RowMatrix const& m)
{
    Tensor t = matrix(static_cast<std::size_t>(m.rows()),
                      static_cast<std::size_t>(m.cols()));
    t.as_matrix() = m;
    return t;
}

std::size_t Tensor::rows() const
{
    if (shape_.size() == 1)
        return 1;
    if (shape_.size() != 2)
        throw ShapeError("matrix view requires rank 1 or 2, got "
                         + shape_string(shape_));
    return shape_[0];
}

std::size_t Tensor::cols() const
{
    if (shape_.size() == 1)
        return shape_[0];
    if (shape_.size() != 2)
        throw ShapeError("matrix view requires rank 1 or 2, got "
                         + shape_string(shape_));
    return shape_[1];
}

double& Tensor::operator()(std::size_t r, std::size_t c)
{
    return data_[r * cols() + c];
}

double Tensor::operator()(std::size_t r, std::size_t c) const
{
    return data_[r * cols() + c];
}

MatrixMap Tensor::as_matrix()
{
    return MatrixMap(data_.data(),
                     static_cast<Eigen::Index>(rows()),
                     static_cast<Eigen::Index>(cols()));
}

ConstMatrixMap Tensor::as_matrix() const
{
    return ConstMatrixMap(data_.data(),
                          static_cast<Eigen::Index>(rows()),
                          static_cast<Eigen::Index>(cols()));
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const
{
    return Tensor(std::move(shape), data_);
}

Tensor Tensor::transposed() const
{
    Tensor t = matrix(cols(), rows());
    t.as_matrix() = as_matrix().transpose();
    return t;
}

Tensor Tensor::row(std::size_t r) const
{
    auto c = cols();
    if (r >= rows())
        throw ShapeError("row index out of range");
    return vector(std::vector<double>(data_.begin() + r * c,
                                      data_.begin() + (r + 1) * c));
}

bool Tensor::all_finite() const
{
    for (double v : data_)
        if (!std::isfinite(v))
            return false;
    return true;
}

void Tensor::require_finite(std::string const& what) const
{
    if (!all_finite())
        throw NumericError("non-finite value in " + what);
}

Tensor& Tensor::operator+=(Tensor const& other)
{
    if (other.size() != size())
        throw ShapeError("size mismatch in +=");
    for (std::size_t i = 0; i < data_.size(); ++i)
        data_[i] += other.data_[i];
    return *this;
}

Tensor& Tensor::operator-=(Tensor const& other)
{
    if (other.size() != size())
        throw ShapeError("size mismatch in -=");
    for (std::size_t i = 0; i < data_.size(); ++i)
        data_[i] -= other.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double s)
{
    for (auto& v : data_)
        v *= s;
    return *this;
}

double Tensor::sum() const
{
    return std::accumulate(data_.begin(), data_.end(), 0.0);
}

double Tensor::dot(Tensor const& other) const
{
    if (other.size() != size())
        throw ShapeError("size mismatch in dot");
    double acc = 0;
    for (std::size_t i = 0; i < data_.size(); ++i)
        acc += data_[i] * other.data_[i];
    return acc;
}

double Tensor::norm() const
{
    return std::sqrt(dot(*this));
}

double Tensor::max_abs() const
{
    double m = 0;
    for (double v : data_)
        m = std::max(m, std::abs(v));
    return m;
}

Tensor operator+(Tensor a, Tensor const& b)
{
    a += b;
    return a;
}

Tensor operator-(Tensor a, Tensor const& b)
{
    a -= b;
    return a;
}

Tensor operator*(double s, Tensor a)
{
    a *= s;
    return a;
}

Tensor hadamard(Tensor const& a, Tensor const& b)
{
    if (a.size() != b.size())
        throw ShapeError("size mismatch in hadamard");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] *= b[i];
    return out;
}

Tensor matmul(Tensor const& a, Tensor const& b)
{
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions differ ("
                         + shape_string(a.shape()) + " x "
                         + shape_string(b.shape()) + ")");
    Tensor out = Tensor::matrix(a.rows(), b.cols());
    out.as_matrix().noalias() = a.as_matrix() * b.as_matrix();
    return out;
}

}  // namespace dropreg
