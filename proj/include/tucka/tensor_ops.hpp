#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "tucka/errors.hpp"
#include "tucka/tensor.hpp"

namespace tucka {

[[nodiscard]] inline double frobenius_norm(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

[[nodiscard]] inline double frobenius_norm(const Matrix& m) { return frobenius_norm(m.data()); }
[[nodiscard]] inline double frobenius_norm(const Tensor3& t) { return frobenius_norm(t.data()); }
[[nodiscard]] inline double frobenius_norm(const Tensor4& t) { return frobenius_norm(t.data()); }

/// Copy of x scaled to unit Frobenius norm. A zero tensor is returned
/// unchanged, so an all-zero operand stays all-zero instead of producing NaN.
template <class T>
[[nodiscard]] T frobenius_normalized(const T& x) {
    const double n = frobenius_norm(x);
    if (n <= 0.0) return x;
    T out = x;
    for (double& v : out.data()) v /= n;
    return out;
}

/// Mode-n product of an order-3 tensor with a matrix (mode is 1-based).
///
/// Replaces dimension `mode` of x by a.rows():
///   out[.., j, ..] = sum_i x[.., i, ..] * a(j, i)
/// which requires a.cols() == dim(x, mode).
[[nodiscard]] inline Tensor3 mode_n_product(const Tensor3& x, const Matrix& a, int mode) {
    if (mode < 1 || mode > 3)
        throw ShapeError("mode_n_product: mode must be 1, 2 or 3, got " + std::to_string(mode));
    const std::size_t dims[3] = {x.n1(), x.n2(), x.n3()};
    const std::size_t contracted = dims[mode - 1];
    if (a.cols() != contracted)
        throw ShapeError("mode_n_product: matrix " + shape_string({a.rows(), a.cols()}) +
                         " does not match tensor " + shape_string({x.n1(), x.n2(), x.n3()}) +
                         " on mode " + std::to_string(mode));

    const std::size_t j_max = a.rows();
    switch (mode) {
        case 1: {
            Tensor3 out(j_max, x.n2(), x.n3());
            for (std::size_t j = 0; j < j_max; ++j)
                for (std::size_t b = 0; b < x.n2(); ++b)
                    for (std::size_t c = 0; c < x.n3(); ++c) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < contracted; ++i)
                            acc += x(i, b, c) * a(j, i);
                        out(j, b, c) = acc;
                    }
            return out;
        }
        case 2: {
            Tensor3 out(x.n1(), j_max, x.n3());
            for (std::size_t aa = 0; aa < x.n1(); ++aa)
                for (std::size_t j = 0; j < j_max; ++j)
                    for (std::size_t c = 0; c < x.n3(); ++c) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < contracted; ++i)
                            acc += x(aa, i, c) * a(j, i);
                        out(aa, j, c) = acc;
                    }
            return out;
        }
        default: {
            Tensor3 out(x.n1(), x.n2(), j_max);
            for (std::size_t aa = 0; aa < x.n1(); ++aa)
                for (std::size_t b = 0; b < x.n2(); ++b)
                    for (std::size_t j = 0; j < j_max; ++j) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < contracted; ++i)
                            acc += x(aa, b, i) * a(j, i);
                        out(aa, b, j) = acc;
                    }
            return out;
        }
    }
}

/// Read-only view over any dense operand accepted by contract().
struct ConstView {
    const double* data = nullptr;
    std::vector<std::size_t> dims;

    ConstView(const std::vector<double>& v) : data(v.data()), dims{v.size()} {}
    ConstView(const Matrix& m) : data(m.data().data()), dims{m.rows(), m.cols()} {}
    ConstView(const Tensor3& t) : data(t.data().data()), dims{t.n1(), t.n2(), t.n3()} {}
    ConstView(const Tensor4& t) : data(t.data().data()), dims{t.n1(), t.n2(), t.n3(), t.n4()} {}
    ConstView(const NdTensor& t) : data(t.values.data()), dims(t.dims) {}

    [[nodiscard]] std::size_t rank() const { return dims.size(); }
};

namespace detail {

inline void require_rank(const ConstView& v, std::size_t rank, std::string_view pattern,
                         const char* which) {
    if (v.rank() != rank)
        throw ShapeError("contract " + std::string(pattern) + ": " + which + " operand " +
                         shape_string(v.dims) + " must have rank " + std::to_string(rank));
}

inline void require_match(std::string_view pattern, const ConstView& a, const ConstView& b,
                          std::size_t da, std::size_t db) {
    if (a.dims[da] != b.dims[db])
        throw ShapeError("contract " + std::string(pattern) + ": operand shapes " +
                         shape_string(a.dims) + " and " + shape_string(b.dims) +
                         " disagree on a contracted index");
}

}  // namespace detail

/// Pairwise tensor contraction restricted to the index patterns the adapter
/// forward passes actually use. Each pattern is a dedicated loop; anything
/// else throws UnsupportedContraction.
///
/// Supported: "tp,prl->trl", "t,trl->rl", "bsd,dr->bsr", "bsr,rl->bsl",
/// "bsr,dr->bsd", "tp,kprl->ktrl", "bsr,ktrl->bkstl", "bkt,bkstr->bsr".
[[nodiscard]] inline NdTensor contract(std::string_view pattern, const ConstView& a,
                                       const ConstView& b) {
    using detail::require_match;
    using detail::require_rank;

    if (pattern == "tp,prl->trl") {
        require_rank(a, 2, pattern, "first");
        require_rank(b, 3, pattern, "second");
        require_match(pattern, a, b, 1, 0);
        const std::size_t T = a.dims[0], P = a.dims[1], R = b.dims[1], L = b.dims[2];
        NdTensor out{{T, R, L}, std::vector<double>(T * R * L, 0.0)};
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t p = 0; p < P; ++p) {
                const double w = a.data[t * P + p];
                for (std::size_t r = 0; r < R; ++r)
                    for (std::size_t l = 0; l < L; ++l)
                        out.values[(t * R + r) * L + l] += w * b.data[(p * R + r) * L + l];
            }
        return out;
    }

    if (pattern == "t,trl->rl") {
        require_rank(a, 1, pattern, "first");
        require_rank(b, 3, pattern, "second");
        require_match(pattern, a, b, 0, 0);
        const std::size_t T = a.dims[0], R = b.dims[1], L = b.dims[2];
        NdTensor out{{R, L}, std::vector<double>(R * L, 0.0)};
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t l = 0; l < L; ++l)
                    out.values[r * L + l] += a.data[t] * b.data[(t * R + r) * L + l];
        return out;
    }

    if (pattern == "bsd,dr->bsr") {
        require_rank(a, 3, pattern, "first");
        require_rank(b, 2, pattern, "second");
        require_match(pattern, a, b, 2, 0);
        const std::size_t B = a.dims[0], S = a.dims[1], D = a.dims[2], R = b.dims[1];
        NdTensor out{{B, S, R}, std::vector<double>(B * S * R, 0.0)};
        for (std::size_t bs = 0; bs < B * S; ++bs)
            for (std::size_t d = 0; d < D; ++d) {
                const double x = a.data[bs * D + d];
                for (std::size_t r = 0; r < R; ++r)
                    out.values[bs * R + r] += x * b.data[d * R + r];
            }
        return out;
    }

    if (pattern == "bsr,rl->bsl") {
        require_rank(a, 3, pattern, "first");
        require_rank(b, 2, pattern, "second");
        require_match(pattern, a, b, 2, 0);
        const std::size_t B = a.dims[0], S = a.dims[1], R = a.dims[2], L = b.dims[1];
        NdTensor out{{B, S, L}, std::vector<double>(B * S * L, 0.0)};
        for (std::size_t bs = 0; bs < B * S; ++bs)
            for (std::size_t r = 0; r < R; ++r) {
                const double x = a.data[bs * R + r];
                for (std::size_t l = 0; l < L; ++l)
                    out.values[bs * L + l] += x * b.data[r * L + l];
            }
        return out;
    }

    // Up-projection: contracts the second index of both operands.
    if (pattern == "bsr,dr->bsd") {
        require_rank(a, 3, pattern, "first");
        require_rank(b, 2, pattern, "second");
        require_match(pattern, a, b, 2, 1);
        const std::size_t B = a.dims[0], S = a.dims[1], R = a.dims[2], D = b.dims[0];
        NdTensor out{{B, S, D}, std::vector<double>(B * S * D, 0.0)};
        for (std::size_t bs = 0; bs < B * S; ++bs)
            for (std::size_t d = 0; d < D; ++d) {
                double acc = 0.0;
                for (std::size_t r = 0; r < R; ++r)
                    acc += a.data[bs * R + r] * b.data[d * R + r];
                out.values[bs * D + d] = acc;
            }
        return out;
    }

    if (pattern == "tp,kprl->ktrl") {
        require_rank(a, 2, pattern, "first");
        require_rank(b, 4, pattern, "second");
        require_match(pattern, a, b, 1, 1);
        const std::size_t T = a.dims[0], P = a.dims[1];
        const std::size_t K = b.dims[0], R = b.dims[2], L = b.dims[3];
        NdTensor out{{K, T, R, L}, std::vector<double>(K * T * R * L, 0.0)};
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t p = 0; p < P; ++p) {
                    const double w = a.data[t * P + p];
                    for (std::size_t rl = 0; rl < R * L; ++rl)
                        out.values[(k * T + t) * R * L + rl] +=
                            w * b.data[(k * P + p) * R * L + rl];
                }
        return out;
    }

    if (pattern == "bsr,ktrl->bkstl") {
        require_rank(a, 3, pattern, "first");
        require_rank(b, 4, pattern, "second");
        require_match(pattern, a, b, 2, 2);
        const std::size_t B = a.dims[0], S = a.dims[1], R = a.dims[2];
        const std::size_t K = b.dims[0], T = b.dims[1], L = b.dims[3];
        NdTensor out{{B, K, S, T, L}, std::vector<double>(B * K * S * T * L, 0.0)};
        for (std::size_t bb = 0; bb < B; ++bb)
            for (std::size_t k = 0; k < K; ++k)
                for (std::size_t s = 0; s < S; ++s)
                    for (std::size_t t = 0; t < T; ++t)
                        for (std::size_t l = 0; l < L; ++l) {
                            double acc = 0.0;
                            for (std::size_t r = 0; r < R; ++r)
                                acc += a.data[(bb * S + s) * R + r] *
                                       b.data[((k * T + t) * R + r) * L + l];
                            out.values[(((bb * K + k) * S + s) * T + t) * L + l] = acc;
                        }
        return out;
    }

    // Per-sample expert combine: sums over groups and experts.
    if (pattern == "bkt,bkstr->bsr") {
        require_rank(a, 3, pattern, "first");
        require_rank(b, 5, pattern, "second");
        require_match(pattern, a, b, 0, 0);
        require_match(pattern, a, b, 1, 1);
        require_match(pattern, a, b, 2, 3);
        const std::size_t B = a.dims[0], K = a.dims[1], T = a.dims[2];
        const std::size_t S = b.dims[2], R = b.dims[4];
        NdTensor out{{B, S, R}, std::vector<double>(B * S * R, 0.0)};
        for (std::size_t bb = 0; bb < B; ++bb)
            for (std::size_t k = 0; k < K; ++k)
                for (std::size_t t = 0; t < T; ++t) {
                    const double w = a.data[(bb * K + k) * T + t];
                    for (std::size_t s = 0; s < S; ++s)
                        for (std::size_t r = 0; r < R; ++r)
                            out.values[(bb * S + s) * R + r] +=
                                w * b.data[(((bb * K + k) * S + s) * T + t) * R + r];
                }
        return out;
    }

    throw UnsupportedContraction(std::string(pattern));
}

[[nodiscard]] inline Matrix to_matrix(const NdTensor& t) {
    if (t.rank() != 2)
        throw ShapeError("to_matrix: tensor " + shape_string(t.dims) + " is not rank 2");
    Matrix m(t.dims[0], t.dims[1]);
    m.data() = t.values;
    return m;
}

[[nodiscard]] inline Tensor3 to_tensor3(const NdTensor& t) {
    if (t.rank() != 3)
        throw ShapeError("to_tensor3: tensor " + shape_string(t.dims) + " is not rank 3");
    Tensor3 out(t.dims[0], t.dims[1], t.dims[2]);
    out.data() = t.values;
    return out;
}

[[nodiscard]] inline Tensor4 to_tensor4(const NdTensor& t) {
    if (t.rank() != 4)
        throw ShapeError("to_tensor4: tensor " + shape_string(t.dims) + " is not rank 4");
    Tensor4 out(t.dims[0], t.dims[1], t.dims[2], t.dims[3]);
    out.data() = t.values;
    return out;
}

}  // namespace tucka
