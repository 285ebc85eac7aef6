// SPDX-License-Identifier: Apache-2.0
//---------------------------------------------------------------------------//
//! \file dropreg/tensor.hpp
//! Dense row-major 64-bit tensor used throughout the library.
//---------------------------------------------------------------------------//
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dropreg
{

//! Raised when tensor shapes or indices are incompatible.
class ShapeError : public std::invalid_argument
{
  public:
    using std::invalid_argument::invalid_argument;
};

//! Raised when a computation produces NaN or infinity.
class NumericError : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

using RowMatrix
    = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<RowMatrix const>;

//---------------------------------------------------------------------------//
/*!
 * Dense array of doubles with an explicit shape.
 *
 * Rank-1 tensors of length n behave as 1 x n row vectors in matrix views.
 * Only rank 1 and 2 are used by the numerical code, but the shape may be
 * any list of positive dimensions.
 */
class Tensor
{
  public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor vector(std::vector<double> values);
    static Tensor vector(std::initializer_list<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    static Tensor matrix(std::size_t rows,
                         std::size_t cols,
                         std::vector<double> values);
    static Tensor identity(std::size_t n);
    static Tensor from_eigen(RowMatrix const& m);

    std::vector<std::size_t> const& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<double> data() { return data_; }
    std::span<double const> data() const { return data_; }
    std::vector<double> const& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& operator()(std::size_t r, std::size_t c);
    double operator()(std::size_t r, std::size_t c) const;

    MatrixMap as_matrix();
    ConstMatrixMap as_matrix() const;
    RowMatrix to_eigen() const { return as_matrix(); }

    Tensor reshaped(std::vector<std::size_t> shape) const;
    Tensor transposed() const;
    Tensor row(std::size_t r) const;

    bool all_finite() const;
    //! Throw NumericError naming \c what if any entry is NaN or infinite.
    void require_finite(std::string const& what) const;

    Tensor& operator+=(Tensor const& other);
    Tensor& operator-=(Tensor const& other);
    Tensor& operator*=(double s);

    double sum() const;
    double dot(Tensor const& other) const;
    double norm() const;
    double max_abs() const;

    friend bool operator==(Tensor const&, Tensor const&) = default;

  private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

Tensor operator+(Tensor a, Tensor const& b);
Tensor operator-(Tensor a, Tensor const& b);
Tensor operator*(double s, Tensor a);
Tensor hadamard(Tensor const& a, Tensor const& b);
//! Matrix product using the matrix view of each operand.
Tensor matmul(Tensor const& a, Tensor const& b);

std::size_t shape_size(std::vector<std::size_t> const& shape);
std::string shape_string(std::vector<std::size_t> const& shape);

}  // namespace dropreg
