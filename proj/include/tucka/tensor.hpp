#pragma once

#include <cassert>
#include <cstddef>
#include <string>
#include <vector>

#include "tucka/errors.hpp"

namespace tucka {

/// Dense real-valued matrix, row-major storage.
///
/// All containers in this library store IEEE double entries contiguously with
/// the last index fastest. Elements are zero-initialized on construction.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    [[nodiscard]] static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    [[nodiscard]] std::size_t rows() const { return rows_; }
    [[nodiscard]] std::size_t cols() const { return cols_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) {
        assert(i < rows_ && j < cols_);
        return data_[i * cols_ + j];
    }
    double operator()(std::size_t i, std::size_t j) const {
        assert(i < rows_ && j < cols_);
        return data_[i * cols_ + j];
    }

    [[nodiscard]] std::vector<double>& data() { return data_; }
    [[nodiscard]] const std::vector<double>& data() const { return data_; }

    /// Pointer to the start of row i.
    [[nodiscard]] const double* row(std::size_t i) const { return data_.data() + i * cols_; }
    [[nodiscard]] double* row(std::size_t i) { return data_.data() + i * cols_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Dense order-3 tensor with shape (n1, n2, n3), last index fastest.
class Tensor3 {
public:
    Tensor3() = default;

    Tensor3(std::size_t n1, std::size_t n2, std::size_t n3)
        : n1_(n1), n2_(n2), n3_(n3), data_(n1 * n2 * n3, 0.0) {}

    [[nodiscard]] std::size_t n1() const { return n1_; }
    [[nodiscard]] std::size_t n2() const { return n2_; }
    [[nodiscard]] std::size_t n3() const { return n3_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j, std::size_t k) {
        assert(i < n1_ && j < n2_ && k < n3_);
        return data_[(i * n2_ + j) * n3_ + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        assert(i < n1_ && j < n2_ && k < n3_);
        return data_[(i * n2_ + j) * n3_ + k];
    }

    [[nodiscard]] std::vector<double>& data() { return data_; }
    [[nodiscard]] const std::vector<double>& data() const { return data_; }

    bool operator==(const Tensor3&) const = default;

private:
    std::size_t n1_ = 0, n2_ = 0, n3_ = 0;
    std::vector<double> data_;
};

/// Dense order-4 tensor with shape (n1, n2, n3, n4), last index fastest.
class Tensor4 {
public:
    Tensor4() = default;

    Tensor4(std::size_t n1, std::size_t n2, std::size_t n3, std::size_t n4)
        : n1_(n1), n2_(n2), n3_(n3), n4_(n4), data_(n1 * n2 * n3 * n4, 0.0) {}

    [[nodiscard]] std::size_t n1() const { return n1_; }
    [[nodiscard]] std::size_t n2() const { return n2_; }
    [[nodiscard]] std::size_t n3() const { return n3_; }
    [[nodiscard]] std::size_t n4() const { return n4_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        assert(i < n1_ && j < n2_ && k < n3_ && l < n4_);
        return data_[((i * n2_ + j) * n3_ + k) * n4_ + l];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        assert(i < n1_ && j < n2_ && k < n3_ && l < n4_);
        return data_[((i * n2_ + j) * n3_ + k) * n4_ + l];
    }

    /// The (n2, n3, n4) block at first index i, as a copy.
    [[nodiscard]] Tensor3 slice(std::size_t i) const {
        Tensor3 out(n2_, n3_, n4_);
        const std::size_t block = n2_ * n3_ * n4_;
        std::copy(data_.begin() + static_cast<std::ptrdiff_t>(i * block),
                  data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * block),
                  out.data().begin());
        return out;
    }

    [[nodiscard]] std::vector<double>& data() { return data_; }
    [[nodiscard]] const std::vector<double>& data() const { return data_; }

    bool operator==(const Tensor4&) const = default;

private:
    std::size_t n1_ = 0, n2_ = 0, n3_ = 0, n4_ = 0;
    std::vector<double> data_;
};

/// Rank-agnostic dense tensor used as the carrier for contract() results.
///
/// Only small ranks (1..5) occur; last index fastest, matching the typed
/// containers above.
struct NdTensor {
    std::vector<std::size_t> dims;
    std::vector<double> values;

    [[nodiscard]] std::size_t rank() const { return dims.size(); }
    [[nodiscard]] std::size_t size() const { return values.size(); }
};

[[nodiscard]] inline std::string shape_string(const std::vector<std::size_t>& dims) {
    std::string s = "(";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(dims[i]);
    }
    return s + ")";
}

/// A batch of routing/adaptation inputs with shape (batch, seq, dim).
struct BatchInput {
    Tensor3 values;

    BatchInput() = default;
    BatchInput(std::size_t b, std::size_t s, std::size_t d) : values(b, s, d) {
        if (b == 0 || s == 0 || d == 0)
            throw ShapeError("BatchInput dimensions must be positive, got " +
                             shape_string({b, s, d}));
    }
    explicit BatchInput(Tensor3 t) : values(std::move(t)) {
        if (values.size() == 0)
            throw ShapeError("BatchInput requires a non-empty tensor");
    }

    [[nodiscard]] std::size_t batch() const { return values.n1(); }
    [[nodiscard]] std::size_t seq() const { return values.n2(); }
    [[nodiscard]] std::size_t dim() const { return values.n3(); }
};

}  // namespace tucka
