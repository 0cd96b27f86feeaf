#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "tucka/errors.hpp"
#include "tucka/rng.hpp"
#include "tucka/routing.hpp"
#include "tucka/tensor.hpp"
#include "tucka/tensor_ops.hpp"

namespace tucka {

/// Shape and scaling of one grouped Tucker adapter.
///
/// d     input feature dimension of the adapted layer
/// d_out output dimension of the frozen base weight
/// r     Tucker rank of the shared column factors
/// p     core slices per group (depth of each group's core stack)
/// t     experts per group
/// k     number of groups (k*t experts total)
/// alpha scaling of the adapter update, must be positive
/// normalize  rescale core, C and U to unit Frobenius norm inside forwards
struct AdapterConfig {
    std::size_t d = 0;
    std::size_t d_out = 0;
    std::size_t r = 0;
    std::size_t p = 1;
    std::size_t t = 1;
    std::size_t k = 1;
    double alpha = 1.0;
    bool normalize = true;

    void validate() const {
        if (d == 0 || d_out == 0) throw ConfigError("AdapterConfig: d and d_out must be positive");
        if (r == 0 || r > d)
            throw ConfigError("AdapterConfig: need 1 <= r <= d, got r=" + std::to_string(r) +
                              " d=" + std::to_string(d));
        if (p == 0 || t == 0 || k == 0)
            throw ConfigError("AdapterConfig: p, t and k must be positive");
        if (!(alpha > 0.0)) throw ConfigError("AdapterConfig: alpha must be positive");
    }

    [[nodiscard]] std::size_t total_experts() const { return k * t; }
};

/// Trainable tensor count: k stacked (p,r,r) cores, the (t,p) slice-mixing
/// factor and the shared (d,r) column factor.
[[nodiscard]] inline std::size_t parameter_count(const AdapterConfig& c) {
    return c.k * c.p * c.r * c.r + c.p * c.t + c.d * c.r;
}

/// Grouped Tucker adapter: per-group core stacks plus two shared factors.
struct TuckaAdapter {
    AdapterConfig config;
    Tensor4 cores;    // (k, p, r, r)
    Matrix factor_c;  // (t, p)
    Matrix factor_u;  // (d, r)
};

/// Fresh adapter: cores start at zero so the adapted layer is exactly the
/// frozen base layer at step 0; C and U are seeded uniform on
/// (-1/sqrt(d), 1/sqrt(d)).
[[nodiscard]] inline TuckaAdapter init_adapter(const AdapterConfig& config, std::uint64_t seed) {
    config.validate();
    TuckaAdapter a;
    a.config = config;
    a.cores = Tensor4(config.k, config.p, config.r, config.r);
    a.factor_c = Matrix(config.t, config.p);
    a.factor_u = Matrix(config.d, config.r);
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(config.d));
    for (double& v : a.factor_c.data()) v = rng.uniform(-bound, bound);
    for (double& v : a.factor_u.data()) v = rng.uniform(-bound, bound);
    return a;
}

/// Materialize group i0's expert tensor stack (t, d, d) by mode products:
/// core x_1 C x_2 U x_3 U, with each factor rescaled to unit Frobenius norm
/// first when config.normalize is set.
[[nodiscard]] inline Tensor3 build_adapter_tensor(const TuckaAdapter& a, std::size_t group) {
    a.config.validate();
    if (group >= a.config.k)
        throw ConfigError("build_adapter_tensor: group " + std::to_string(group) +
                          " out of range for k=" + std::to_string(a.config.k));
    Tensor3 core = a.cores.slice(group);
    Matrix c = a.factor_c, u = a.factor_u;
    if (a.config.normalize) {
        core = frobenius_normalized(core);
        c = frobenius_normalized(c);
        u = frobenius_normalized(u);
    }
    Tensor3 out = mode_n_product(core, c, 1);  // (t, r, r)
    out = mode_n_product(out, u, 2);           // (t, d, r)
    out = mode_n_product(out, u, 3);           // (t, d, d)
    return out;
}

namespace detail {

inline void check_forward_args(const TuckaAdapter& a, const Matrix& w, const BatchInput& x) {
    a.config.validate();
    if (x.dim() != a.config.d)
        throw ShapeError("forward: input dim " + std::to_string(x.dim()) +
                         " does not match adapter d=" + std::to_string(a.config.d));
    if (w.rows() != a.config.d || w.cols() != a.config.d_out)
        throw ShapeError("forward: base weight " + shape_string({w.rows(), w.cols()}) +
                         " does not match adapter " +
                         shape_string({a.config.d, a.config.d_out}));
}

inline void check_decision(const TuckaAdapter& a, const RoutingDecision& decision) {
    if (decision.group >= a.config.k)
        throw ConfigError("forward: routed group out of range");
    if (decision.weights.size() != a.config.t)
        throw ShapeError("forward: expected " + std::to_string(a.config.t) +
                         " mixture weights, got " + std::to_string(decision.weights.size()));
    double sum = 0.0;
    for (double w : decision.weights) sum += w;
    if (std::abs(sum - 1.0) > 1e-9)
        throw ConfigError("forward: mixture weights sum to " + std::to_string(sum) +
                          ", expected 1");
}

// Y = (X + alpha * X_up) W, flattened over (batch, seq).
inline Tensor3 apply_base(const BatchInput& x, const Tensor3& x_up, double alpha,
                          const Matrix& w) {
    const std::size_t n = x.batch() * x.seq(), d = x.dim(), d_out = w.cols();
    Tensor3 y(x.batch(), x.seq(), d_out);
    for (std::size_t row = 0; row < n; ++row) {
        const double* xr = x.values.data().data() + row * d;
        const double* ur = x_up.data().data() + row * d;
        double* yr = y.data().data() + row * d_out;
        for (std::size_t c = 0; c < d; ++c) {
            const double v = xr[c] + alpha * ur[c];
            if (v != 0.0) {
                const double* wrow = w.row(c);
                for (std::size_t o = 0; o < d_out; ++o) yr[o] += v * wrow[o];
            }
        }
    }
    return y;
}

}  // namespace detail

/// Reference forward pass: materializes the selected group's full (d, d)
/// mixture sum_j g_j T[j] and applies X (I + alpha * mix) W directly.
///
/// Deliberately simple and allocation-heavy; forward_efficient must agree
/// with this path to within accumulation error.
[[nodiscard]] inline Tensor3 forward_naive(const TuckaAdapter& a, const Matrix& w,
                                           const BatchInput& x,
                                           const RoutingDecision& decision) {
    detail::check_forward_args(a, w, x);
    detail::check_decision(a, decision);
    const std::size_t d = a.config.d;

    const Tensor3 stack = build_adapter_tensor(a, decision.group);
    Matrix mix(d, d);
    for (std::size_t j = 0; j < a.config.t; ++j) {
        const double g = decision.weights[j];
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t l = 0; l < d; ++l) mix(i, l) += g * stack(j, i, l);
    }

    Tensor3 x_up(x.batch(), x.seq(), d);
    const std::size_t n = x.batch() * x.seq();
    for (std::size_t row = 0; row < n; ++row) {
        const double* xr = x.values.data().data() + row * d;
        double* out = x_up.data().data() + row * d;
        for (std::size_t l = 0; l < d; ++l) {
            double acc = 0.0;
            for (std::size_t i = 0; i < d; ++i) acc += xr[i] * mix(i, l);
            out[l] = acc;
        }
    }
    return detail::apply_base(x, x_up, a.config.alpha, w);
}

/// Production forward pass: stays in rank-r space and never materializes a
/// (d, d) tensor.
///
/// Chain: M = contract("tp,prl->trl", C, core_i0); M_avg = contract("t,trl->rl",
/// g, M); X_down = contract("bsd,dr->bsr", X, U); X_trans =
/// contract("bsr,rl->bsl", X_down, M_avg); X_up = contract("bsr,dr->bsd",
/// X_trans, U); Y = (X + alpha X_up) W.
[[nodiscard]] inline Tensor3 forward_efficient(const TuckaAdapter& a, const Matrix& w,
                                               const BatchInput& x,
                                               const RoutingDecision& decision) {
    detail::check_forward_args(a, w, x);
    detail::check_decision(a, decision);

    Tensor3 core = a.cores.slice(decision.group);
    Matrix c = a.factor_c, u = a.factor_u;
    if (a.config.normalize) {
        core = frobenius_normalized(core);
        c = frobenius_normalized(c);
        u = frobenius_normalized(u);
    }

    const NdTensor m = contract("tp,prl->trl", c, core);
    const NdTensor m_avg = contract("t,trl->rl", decision.weights, m);
    const NdTensor x_down = contract("bsd,dr->bsr", x.values, u);
    const NdTensor x_trans = contract("bsr,rl->bsl", x_down, to_matrix(m_avg));
    const NdTensor x_up = contract("bsr,dr->bsd", x_trans, u);
    return detail::apply_base(x, to_tensor3(x_up), a.config.alpha, w);
}

/// Per-sample routing forward pass: weights has shape (batch, k, t) and gives
/// every sample its own mixture over all k*t experts.
///
/// Each group's core is rescaled to its own unit Frobenius norm (the same
/// per-group scaling the batch-level paths use), so a one-hot group row
/// reproduces forward_efficient exactly.
[[nodiscard]] inline Tensor3 forward_sample_routing(const TuckaAdapter& a, const Matrix& w,
                                                    const BatchInput& x,
                                                    const Tensor3& weights) {
    detail::check_forward_args(a, w, x);
    if (weights.n1() != x.batch() || weights.n2() != a.config.k || weights.n3() != a.config.t)
        throw ShapeError("forward_sample_routing: weights " +
                         shape_string({weights.n1(), weights.n2(), weights.n3()}) +
                         " must be " + shape_string({x.batch(), a.config.k, a.config.t}));

    Tensor4 cores = a.cores;
    Matrix c = a.factor_c, u = a.factor_u;
    if (a.config.normalize) {
        for (std::size_t g = 0; g < a.config.k; ++g) {
            const Tensor3 norm = frobenius_normalized(cores.slice(g));
            std::copy(norm.data().begin(), norm.data().end(),
                      cores.data().begin() +
                          static_cast<std::ptrdiff_t>(g * norm.size()));
        }
        c = frobenius_normalized(c);
        u = frobenius_normalized(u);
    }

    const NdTensor x_down = contract("bsd,dr->bsr", x.values, u);
    const NdTensor m_all = contract("tp,kprl->ktrl", c, cores);
    const NdTensor x_expert = contract("bsr,ktrl->bkstl", x_down, m_all);
    const NdTensor x_trans = contract("bkt,bkstr->bsr", weights, x_expert);
    const NdTensor x_up = contract("bsr,dr->bsd", x_trans, u);
    return detail::apply_base(x, to_tensor3(x_up), a.config.alpha, w);
}

}  // namespace tucka
