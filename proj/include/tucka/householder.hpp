#pragma once

#include <cmath>
#include <string>

#include "tucka/errors.hpp"
#include "tucka/tensor.hpp"

namespace tucka {

/// Gamma factor of the compact reflection-product form.
///
/// For u with columns u_1..u_r, the left-to-right product
///   H_1 H_2 ... H_r,  H_i = I - 2 u_i u_i^T
/// equals I + U_r Gamma_r U_r^T with the recursion
///   Gamma_1 = [-2],
///   Gamma_r = [ Gamma_{r-1}   -2 Gamma_{r-1} U_{r-1}^T u_r ]
///             [ 0                                       -2 ].
[[nodiscard]] inline Matrix householder_gamma(const Matrix& u) {
    const std::size_t d = u.rows(), r = u.cols();
    if (r == 0) throw ShapeError("householder_gamma: need at least one column");

    Matrix gamma(r, r);
    gamma(0, 0) = -2.0;
    for (std::size_t step = 1; step < r; ++step) {
        // c = U_{step}^T u_step, then the new column is -2 * Gamma_{step} * c.
        std::vector<double> c(step, 0.0);
        for (std::size_t j = 0; j < step; ++j)
            for (std::size_t i = 0; i < d; ++i) c[j] += u(i, j) * u(i, step);
        for (std::size_t i = 0; i < step; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < step; ++j) acc += gamma(i, j) * c[j];
            gamma(i, step) = -2.0 * acc;
        }
        gamma(step, step) = -2.0;
    }
    return gamma;
}

/// I + U Gamma U^T for the given columns.
[[nodiscard]] inline Matrix householder_compact_form(const Matrix& u) {
    const std::size_t d = u.rows(), r = u.cols();
    const Matrix gamma = householder_gamma(u);
    // m = U Gamma, then I + m U^T.
    Matrix m(d, r);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < r; ++j) {
            double acc = 0.0;
            for (std::size_t l = 0; l < r; ++l) acc += u(i, l) * gamma(l, j);
            m(i, j) = acc;
        }
    Matrix out = Matrix::identity(d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double acc = 0.0;
            for (std::size_t l = 0; l < r; ++l) acc += m(i, l) * u(j, l);
            out(i, j) += acc;
        }
    return out;
}

/// Left-to-right product of reflections H_1 H_2 ... H_r, H_i = I - 2 u_i u_i^T,
/// where u_i is column i of u.
///
/// The result is cross-checked against the compact form I + U Gamma U^T; a
/// deviation above 1e-10 throws, so the two derivations guard each other.
[[nodiscard]] inline Matrix householder_product(const Matrix& u) {
    const std::size_t d = u.rows(), r = u.cols();
    if (r == 0) throw ShapeError("householder_product: need at least one column");

    Matrix prod = Matrix::identity(d);
    for (std::size_t step = 0; step < r; ++step) {
        // prod <- prod * (I - 2 u u^T) applied column-wise: prod - 2 (prod u) u^T.
        std::vector<double> pu(d, 0.0);
        for (std::size_t i = 0; i < d; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) acc += prod(i, j) * u(j, step);
            pu[i] = acc;
        }
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) prod(i, j) -= 2.0 * pu[i] * u(j, step);
    }

    const Matrix compact = householder_compact_form(u);
    double dev = 0.0;
    for (std::size_t i = 0; i < d * d; ++i)
        dev = std::max(dev, std::abs(prod.data()[i] - compact.data()[i]));
    if (dev > 1e-10)
        throw std::logic_error("householder_product: compact form deviates by " +
                               std::to_string(dev));
    return prod;
}

}  // namespace tucka
