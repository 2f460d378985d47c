#include "msurv/tensor.hpp"

#include <cmath>
#include <utility>

namespace msurv {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), v_(std::move(values)) {
    if (v_.size() != rows_ * cols_) {
        throw ContractError("tensor value count " + std::to_string(v_.size()) +
                            " does not match shape " + shape_str());
    }
}

Tensor Tensor::row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(1, n, std::move(values));
}

Tensor Tensor::column(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(n, 1, std::move(values));
}

std::string Tensor::shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

bool Tensor::all_finite() const {
    for (double x : v_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw ContractError("matmul dimension mismatch: " + a.shape_str() + " * " + b.shape_str());
    }
    Tensor out(a.rows(), b.cols());
    matmul_acc(a, b, out);
    return out;
}

void matmul_acc(const Tensor& a, const Tensor& b, Tensor& out) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
            const double av = pa[i * k + l];
            if (av == 0.0) continue;
            const double* brow = pb + l * n;
            double* orow = po + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& out) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = pa + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = pb + j * k;
            double acc = 0.0;
            for (std::size_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
            po[i * n + j] += acc;
        }
    }
}

void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& out) {
    const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t l = 0; l < k; ++l) {
        const double* arow = pa + l * m;
        const double* brow = pb + l * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* orow = po + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

Tensor transposed(const Tensor& a) {
    Tensor out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

}  // namespace msurv
