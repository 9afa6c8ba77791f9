#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "drt/common.hpp"

namespace drt {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Dense row-major array with an explicit shape. The only numeric container
// handed across module boundaries; scalar type is float or double.
template <typename T>
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(numel_of(shape_)), T(0));
    }
    Tensor(std::initializer_list<int64_t> shape) : Tensor(std::vector<int64_t>(shape)) {}

    static Tensor from(std::vector<int64_t> shape, std::vector<T> data) {
        Tensor t;
        DRT_CHECK(numel_of(shape) == static_cast<int64_t>(data.size()),
                  "shape/product mismatch: ", numel_of(shape), " vs ", data.size());
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        return t;
    }

    const std::vector<int64_t>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& raw() { return data_; }
    const std::vector<T>& raw() const { return data_; }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    T operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    T& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * dim(1) + j)]; }
    T at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * dim(1) + j)]; }
    T& at(int64_t i, int64_t j, int64_t k) {
        return data_[static_cast<size_t>((i * dim(1) + j) * dim(2) + k)];
    }
    T at(int64_t i, int64_t j, int64_t k) const {
        return data_[static_cast<size_t>((i * dim(1) + j) * dim(2) + k)];
    }

    // Row pointer for 2-d tensors, or the j-th row of the i-th slice for 3-d.
    T* row(int64_t i) { return data() + i * dim(ndim() - 1); }
    const T* row(int64_t i) const { return data() + i * dim(ndim() - 1); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(T(0)); }

    // 2-d Eigen view (no copy).
    MatMap<T> mat() {
        DRT_CHECK(ndim() == 2, "mat() on ", ndim(), "-d tensor");
        return MatMap<T>(data(), dim(0), dim(1));
    }
    ConstMatMap<T> mat() const {
        DRT_CHECK(ndim() == 2, "mat() on ", ndim(), "-d tensor");
        return ConstMatMap<T>(data(), dim(0), dim(1));
    }
    // Arbitrary rows×cols view over the flat buffer.
    MatMap<T> view(int64_t rows, int64_t cols) {
        DRT_CHECK(rows * cols == numel(), "view ", rows, "x", cols, " over ", numel());
        return MatMap<T>(data(), rows, cols);
    }
    ConstMatMap<T> view(int64_t rows, int64_t cols) const {
        DRT_CHECK(rows * cols == numel(), "view ", rows, "x", cols, " over ", numel());
        return ConstMatMap<T>(data(), rows, cols);
    }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    static int64_t numel_of(const std::vector<int64_t>& shape) {
        int64_t n = 1;
        for (int64_t d : shape) {
            DRT_CHECK(d >= 0, "negative extent");
            n *= d;
        }
        return n;
    }

  private:
    std::vector<int64_t> shape_;
    std::vector<T> data_;
};

}  // namespace drt
