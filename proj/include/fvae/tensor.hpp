#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fvae/common.hpp"

namespace fvae {

// Shaped numeric array, row-major flat storage. Single-precision for model
// state; the double instantiation backs gradient checking.
template <typename S>
class TensorT {
public:
    TensorT() = default;

    TensorT(std::vector<std::size_t> shape, std::vector<S> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (numel_of(shape_) != data_.size()) {
            throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                              " does not match shape " + shape_string(shape_));
        }
    }

    static TensorT zeros(std::vector<std::size_t> shape) {
        const std::size_t n = numel_of(shape);
        return TensorT(std::move(shape), std::vector<S>(n, S(0)));
    }

    static TensorT full(std::vector<std::size_t> shape, S value) {
        const std::size_t n = numel_of(shape);
        return TensorT(std::move(shape), std::vector<S>(n, value));
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
    std::size_t cols() const {
        return shape_.size() < 2 ? (shape_.empty() ? 0 : 1) : stride0();
    }

    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }
    std::vector<S>& vec() { return data_; }
    const std::vector<S>& vec() const { return data_; }

    S& operator[](std::size_t i) { return data_[i]; }
    S operator[](std::size_t i) const { return data_[i]; }

    // 2-D accessors (row, col) over the trailing dimensions flattened.
    S& at(std::size_t r, std::size_t c) { return data_[r * stride0() + c]; }
    S at(std::size_t r, std::size_t c) const { return data_[r * stride0() + c]; }

    bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (const S v : data_) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    void require_finite(const std::string& what) const {
        if (!all_finite()) {
            throw NumericError("non-finite values in " + what);
        }
    }

    template <typename T>
    TensorT<T> cast() const {
        std::vector<T> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<T>(data_[i]);
        return TensorT<T>(shape_, std::move(out));
    }

    static std::size_t numel_of(const std::vector<std::size_t>& shape) {
        if (shape.empty()) return 0;
        std::size_t n = 1;
        for (const std::size_t d : shape) {
            if (d == 0) throw ConfigError("tensor dimensions must be positive");
            n *= d;
        }
        return n;
    }

    static std::string shape_string(const std::vector<std::size_t>& shape) {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) os << "x";
            os << shape[i];
        }
        os << "]";
        return os.str();
    }

private:
    // Elements per leading row; 1-D tensors behave as a single row.
    std::size_t stride0() const {
        std::size_t s = 1;
        for (std::size_t i = 1; i < shape_.size(); ++i) s *= shape_[i];
        return s;
    }

    std::vector<std::size_t> shape_;
    std::vector<S> data_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

}  // namespace fvae
