#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ssah/errors.hpp"

namespace ssah {

// Dense row-major tensor. Image batches use NCHW layout; code batches are
// [N, k] matrices.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(std::vector<int> shape, T fill = T(0)) : shape_(std::move(shape)) {
        data_.assign(count(shape_), fill);
    }
    Tensor(std::vector<int> shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != count(shape_)) throw DimensionError("tensor data does not match shape " + shape_str());
    }

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    [[nodiscard]] const std::vector<int>& shape() const { return shape_; }
    [[nodiscard]] int rank() const { return static_cast<int>(shape_.size()); }
    [[nodiscard]] int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
    const T& at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }
    T& at(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
    const T& at(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

    // Elements per leading index (one image, one code row, ...).
    [[nodiscard]] std::size_t stride0() const { return shape_.empty() || shape_[0] == 0 ? 0 : data_.size() / shape_[0]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor& operator+=(const Tensor& o) {
        require_same_shape(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    [[nodiscard]] Tensor reshaped(std::vector<int> shape) const {
        if (count(shape) != data_.size()) throw DimensionError("cannot reshape " + shape_str());
        return Tensor(std::move(shape), data_);
    }

    template <typename U>
    [[nodiscard]] Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    [[nodiscard]] bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void require_same_shape(const Tensor& o, const char* what) const {
        if (!same_shape(o)) throw DimensionError(std::string(what) + ": shape " + shape_str() + " vs " + o.shape_str());
    }

    [[nodiscard]] std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
        os << ']';
        return os.str();
    }

    static std::size_t count(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) {
            if (d < 0) throw DimensionError("negative dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

private:
    [[nodiscard]] std::size_t offset(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }

    std::vector<int> shape_;
    std::vector<T> data_;
};

}  // namespace ssah
