#pragma once
#include <algorithm>
#include <cassert>
#include <cmath>
#include <initializer_list>
#include <numeric>
#include <vector>

#define EIGEN_DONT_PARALLELIZE 1
#include <Eigen/Core>

#include "sal/common.hpp"

namespace sal {

// Dense row-major tensor, rank 1..4. The numeric core is templated so the
// same kernels run in float for training and double for gradient checks.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape, T fill = T(0)) : shape_(std::move(shape)) {
        for (int d : shape_) require(d > 0, "Tensor: nonpositive dimension ", d);
        data_.assign(numel_of(shape_), fill);
    }

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    static Tensor from_values(std::vector<int> shape, std::initializer_list<T> values) {
        Tensor t(std::move(shape));
        require(static_cast<std::size_t>(t.numel()) == values.size(),
                "Tensor::from_values: ", values.size(), " values for shape of ", t.numel());
        std::copy(values.begin(), values.end(), t.data_.begin());
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    long long numel() const { return static_cast<long long>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& raw() { return data_; }
    const std::vector<T>& raw() const { return data_; }

    T& operator[](long long i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](long long i) const { return data_[static_cast<std::size_t>(i)]; }

    T& at(int i) { assert(ndim() == 1); return data_[idx1(i)]; }
    const T& at(int i) const { assert(ndim() == 1); return data_[idx1(i)]; }
    T& at(int i, int j) { assert(ndim() == 2); return data_[idx2(i, j)]; }
    const T& at(int i, int j) const { assert(ndim() == 2); return data_[idx2(i, j)]; }
    T& at(int i, int j, int k) { assert(ndim() == 3); return data_[idx3(i, j, k)]; }
    const T& at(int i, int j, int k) const { assert(ndim() == 3); return data_[idx3(i, j, k)]; }
    T& at(int i, int j, int k, int l) { assert(ndim() == 4); return data_[idx4(i, j, k, l)]; }
    const T& at(int i, int j, int k, int l) const { assert(ndim() == 4); return data_[idx4(i, j, k, l)]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    // In-place flat reshape; element count must be preserved.
    void reshape(std::vector<int> shape) {
        require(numel_of(shape) == numel(), "Tensor::reshape: element count mismatch");
        shape_ = std::move(shape);
    }

    Tensor& operator+=(const Tensor& o) {
        require(same_shape(o), "Tensor+=: shape mismatch");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    Tensor& operator*=(T s) {
        for (auto& v : data_) v *= s;
        return *this;
    }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (long long i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<std::size_t>(i)]);
        return out;
    }

private:
    static long long numel_of(const std::vector<int>& shape) {
        long long n = 1;
        for (int d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

    std::size_t idx1(int i) const { return static_cast<std::size_t>(i); }
    std::size_t idx2(int i, int j) const {
        return static_cast<std::size_t>(i) * shape_[1] + j;
    }
    std::size_t idx3(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k;
    }
    std::size_t idx4(int i, int j, int k, int l) const {
        return ((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
    }

    std::vector<int> shape_;
    std::vector<T> data_;
};

// ---------------------------------------------------------------------------
// GEMM wrappers (Eigen-backed). Everything in the library is row-major.
// "t" marks a logically transposed operand.
// ---------------------------------------------------------------------------

template <typename T>
using EigenRowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<EigenRowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const EigenRowMat<T>>;

// C(m,n) = A(m,k) * B(k,n)   [+= when accumulate]
template <typename T>
void gemm_nn(int m, int n, int k, const T* A, const T* B, T* C, bool accumulate = false) {
    CMapMat<T> a(A, m, k), b(B, k, n);
    MapMat<T> c(C, m, n);
    if (accumulate) c.noalias() += a * b;
    else            c.noalias() = a * b;
}

// C(m,n) = A^T * B with A stored as (k,m)
template <typename T>
void gemm_tn(int m, int n, int k, const T* A, const T* B, T* C, bool accumulate = false) {
    CMapMat<T> a(A, k, m), b(B, k, n);
    MapMat<T> c(C, m, n);
    if (accumulate) c.noalias() += a.transpose() * b;
    else            c.noalias() = a.transpose() * b;
}

// C(m,n) = A * B^T with B stored as (n,k)
template <typename T>
void gemm_nt(int m, int n, int k, const T* A, const T* B, T* C, bool accumulate = false) {
    CMapMat<T> a(A, m, k), b(B, n, k);
    MapMat<T> c(C, m, n);
    if (accumulate) c.noalias() += a * b.transpose();
    else            c.noalias() = a * b.transpose();
}

template <typename T>
T dot(const T* a, const T* b, int n) {
    T s = T(0);
    for (int i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

} // namespace sal
