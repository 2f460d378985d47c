#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "msurv/common.hpp"

namespace msurv {

/// Dense row-major matrix of 64-bit reals. Vectors are represented as n x 1
/// or 1 x n. All learnable state and all intermediate arrays in the model use
/// this type; there is no other numeric container.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), v_(rows * cols, fill) {}
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

    static Tensor row(std::vector<double> values);
    static Tensor column(std::vector<double> values);
    static Tensor scalar(double x) { return Tensor(1, 1, {x}); }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return v_.size(); }
    bool empty() const { return v_.empty(); }
    std::vector<std::size_t> shape() const { return {rows_, cols_}; }
    std::string shape_str() const;

    double& operator()(std::size_t r, std::size_t c) { return v_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return v_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return v_[i]; }
    double operator[](std::size_t i) const { return v_[i]; }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }
    std::vector<double>& values() { return v_; }
    const std::vector<double>& values() const { return v_; }

    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    /// True if every entry is finite (masked score arrays legitimately carry
    /// -inf and are exempted by their producers, not here).
    bool all_finite() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> v_;
};

/// C = A * B with cache-friendly loop order. Throws on inner-dimension
/// mismatch, naming both shapes.
Tensor matmul(const Tensor& a, const Tensor& b);

/// C += A * B; shapes must already agree.
void matmul_acc(const Tensor& a, const Tensor& b, Tensor& out);

/// C += A * B^T without materializing the transpose.
void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& out);

/// C += A^T * B without materializing the transpose.
void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& out);

Tensor transposed(const Tensor& a);

}  // namespace msurv
