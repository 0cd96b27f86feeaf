#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

#include "tucka/errors.hpp"
#include "tucka/rng.hpp"
#include "tucka/tensor.hpp"
#include "tucka/tensor_ops.hpp"

namespace tucka {

/// Learnable routing table: one d-dimensional centroid per expert, group-major
/// (row g*per_group + j is expert j of group g). When alb_bias is engaged it
/// shifts expert selection only, never the mixture weights.
struct ExpertCentroids {
    std::size_t groups = 0;     // k
    std::size_t per_group = 0;  // t
    std::size_t dim = 0;        // d
    Matrix vectors;             // (k*t, d)
    std::optional<std::vector<double>> alb_bias;
    double alb_gamma = 0.0;

    ExpertCentroids() = default;
    ExpertCentroids(std::size_t k, std::size_t t, std::size_t d)
        : groups(k), per_group(t), dim(d), vectors(k * t, d) {
        if (k == 0 || t == 0 || d == 0)
            throw ConfigError("ExpertCentroids: k, t and d must be positive");
    }

    [[nodiscard]] std::size_t total() const { return groups * per_group; }

    void engage_alb(double gamma) {
        alb_bias = std::vector<double>(total(), 0.0);
        alb_gamma = gamma;
    }
};

/// Outcome of batch-level routing: the selected group, the intra-group mixture
/// weights g, and the full score vector kept for diagnostics.
struct RoutingDecision {
    std::size_t group = 0;
    std::size_t argmax_expert = 0;  // flat index of the expert that won selection
    std::vector<double> weights;    // length t
    std::vector<double> scores;     // length k*t, sigmoid scores of all experts
};

/// Mean of the batch over its first two axes: one d-vector per batch of
/// (batch, seq, dim) inputs.
[[nodiscard]] inline std::vector<double> routing_feature(const BatchInput& x) {
    const std::size_t n = x.batch() * x.seq(), d = x.dim();
    std::vector<double> h(d, 0.0);
    const double* ptr = x.values.data().data();
    for (std::size_t row = 0; row < n; ++row)
        for (std::size_t c = 0; c < d; ++c) h[c] += ptr[row * d + c];
    for (double& v : h) v /= static_cast<double>(n);
    return h;
}

/// Batch-level top-1 group selection.
///
/// Affinities a = centroids * h are optionally L2-normalized (skipped when
/// ||a|| < 1e-12), passed through a sigmoid to give scores s, and the group
/// owning the highest-affinity expert is selected (lowest flat index wins
/// ties). Weights are the selected group's scores, normalized to sum 1 when
/// normalize_scores is set, raw otherwise (the raw mode exists so that a
/// single-expert group still carries a usable score gradient).
///
/// When alb_bias is engaged it is added to the (possibly normalized)
/// affinities before the argmax only; scores and weights stay unbiased.
[[nodiscard]] inline RoutingDecision route(const ExpertCentroids& centroids,
                                           const std::vector<double>& h,
                                           bool normalize_affinity = true,
                                           bool normalize_scores = true) {
    if (h.size() != centroids.dim)
        throw ShapeError("route: feature length " + std::to_string(h.size()) +
                         " does not match centroid dim " + std::to_string(centroids.dim));
    const std::size_t m = centroids.total(), t = centroids.per_group;

    std::vector<double> a(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = centroids.vectors.row(i);
        double acc = 0.0;
        for (std::size_t c = 0; c < centroids.dim; ++c) acc += row[c] * h[c];
        a[i] = acc;
    }

    if (normalize_affinity) {
        const double norm = frobenius_norm(a);
        if (norm >= 1e-12)
            for (double& v : a) v /= norm;
    }

    RoutingDecision out;
    out.scores.resize(m);
    for (std::size_t i = 0; i < m; ++i) out.scores[i] = 1.0 / (1.0 + std::exp(-a[i]));

    std::vector<double> selection = a;
    if (centroids.alb_bias) {
        if (centroids.alb_bias->size() != m)
            throw ShapeError("route: alb_bias length does not match expert count");
        for (std::size_t i = 0; i < m; ++i) selection[i] += (*centroids.alb_bias)[i];
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < m; ++i)
        if (selection[i] > selection[best]) best = i;
    out.group = best / t;
    out.argmax_expert = best;

    out.weights.assign(out.scores.begin() + static_cast<std::ptrdiff_t>(out.group * t),
                       out.scores.begin() + static_cast<std::ptrdiff_t>((out.group + 1) * t));
    if (normalize_scores) {
        double sum = 0.0;
        for (double w : out.weights) sum += w;
        // Sigmoid outputs are strictly positive, so sum > 0 always holds.
        for (double& w : out.weights) w /= sum;
    }
    return out;
}

/// Centroids drawn i.i.d. uniform on (-sqrt(a/d), sqrt(a/d)).
[[nodiscard]] inline ExpertCentroids init_kaiming(std::size_t k, std::size_t t, std::size_t d,
                                                  double a, std::uint64_t seed) {
    if (a < 0.0) throw ConfigError("init_kaiming: a must be non-negative");
    ExpertCentroids out(k, t, d);
    Rng rng(seed);
    const double bound = std::sqrt(a / static_cast<double>(d));
    for (double& v : out.vectors.data()) v = rng.uniform(-bound, bound);
    return out;
}

/// Data-aware centroids: the first expert is the probe batch's routing
/// feature e, every other expert is e plus i.i.d. uniform (-a, a) noise.
[[nodiscard]] inline ExpertCentroids init_dai(std::size_t k, std::size_t t,
                                              const BatchInput& probe, double a,
                                              std::uint64_t seed) {
    if (a < 0.0) throw ConfigError("init_dai: a must be non-negative");
    const std::vector<double> e = routing_feature(probe);
    ExpertCentroids out(k, t, probe.dim());
    Rng rng(seed);
    for (std::size_t i = 0; i < out.total(); ++i) {
        double* row = out.vectors.row(i);
        for (std::size_t c = 0; c < out.dim; ++c)
            row[c] = e[c] + (i == 0 ? 0.0 : rng.uniform(-a, a));
    }
    return out;
}

/// Loss-free balancing step after a batch picked `selected_group`: every
/// expert of that group loses (k-1)*gamma bias, every other expert gains
/// gamma, so the bias always sums to zero.
inline void alb_update(ExpertCentroids& centroids, std::size_t selected_group) {
    if (!centroids.alb_bias)
        throw ConfigError("alb_update: alb_bias is not engaged on these centroids");
    if (selected_group >= centroids.groups)
        throw ConfigError("alb_update: group index out of range");
    std::vector<double>& bias = *centroids.alb_bias;
    const double gamma = centroids.alb_gamma;
    const std::size_t t = centroids.per_group;
    for (std::size_t i = 0; i < centroids.total(); ++i)
        bias[i] += (i / t == selected_group)
                       ? -gamma * static_cast<double>(centroids.groups - 1)
                       : gamma;
}

/// One row per expert: group index, expert index, then the d coordinates.
inline void write_centroids_csv(const ExpertCentroids& centroids, std::ostream& os) {
    os << "group,expert";
    for (std::size_t c = 0; c < centroids.dim; ++c) os << ",c" << c;
    os << "\n";
    char buf[32];
    for (std::size_t i = 0; i < centroids.total(); ++i) {
        os << i / centroids.per_group << "," << i % centroids.per_group;
        const double* row = centroids.vectors.row(i);
        for (std::size_t c = 0; c < centroids.dim; ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", row[c]);
            os << "," << buf;
        }
        os << "\n";
    }
}

}  // namespace tucka
