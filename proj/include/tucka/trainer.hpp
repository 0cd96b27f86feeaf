#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "tucka/adapter.hpp"
#include "tucka/errors.hpp"
#include "tucka/rng.hpp"
#include "tucka/routing.hpp"
#include "tucka/tensor.hpp"
#include "tucka/tensor_ops.hpp"

namespace tucka {

// ---------------------------------------------------------------------------
// Toy data
// ---------------------------------------------------------------------------

/// Synthetic clustered classification task. Cluster centers are orthogonal
/// directions scaled by `separation` (within-cluster std is 1, so centers are
/// separation*sqrt(2) apart); the label mixes the cluster identity with the
/// sign of the sample's projection on a per-cluster direction, giving each
/// cluster internal structure a per-cluster linear map can exploit.
struct ToyTaskConfig {
    std::size_t n_clusters = 1;
    std::size_t samples_per_cluster = 128;
    std::size_t d = 16;
    std::size_t n_classes = 2;
    double separation = 6.0;
    std::uint64_t seed = 0;
};

struct ToyTask {
    ToyTaskConfig config;
    Matrix features;                      // (n_clusters*samples_per_cluster, d)
    std::vector<std::size_t> labels;      // class per sample
    std::vector<std::size_t> cluster_of;  // cluster per sample (cluster-major rows)

    [[nodiscard]] std::size_t size() const { return features.rows(); }
};

[[nodiscard]] inline ToyTask generate_toy_task(const ToyTaskConfig& cfg) {
    if (cfg.n_clusters == 0 || cfg.samples_per_cluster == 0)
        throw ConfigError("generate_toy_task: need at least one cluster and sample");
    if (cfg.n_classes < 2) throw ConfigError("generate_toy_task: need at least two classes");
    if (cfg.d < cfg.n_clusters)
        throw ConfigError("generate_toy_task: d must be >= n_clusters for orthogonal centers");
    if (cfg.separation * std::sqrt(2.0) < 4.0)
        throw ConfigError("generate_toy_task: separation too small for 4-sigma separability");

    Rng rng(cfg.seed);

    // Orthonormal center directions via Gram-Schmidt on Gaussian draws.
    Matrix centers(cfg.n_clusters, cfg.d);
    for (std::size_t c = 0; c < cfg.n_clusters; ++c) {
        std::vector<double> v(cfg.d);
        for (double& x : v) x = rng.gaussian();
        for (std::size_t prev = 0; prev < c; ++prev) {
            double dot = 0.0;
            for (std::size_t i = 0; i < cfg.d; ++i) dot += v[i] * centers(prev, i);
            for (std::size_t i = 0; i < cfg.d; ++i)
                v[i] -= dot * centers(prev, i) / (cfg.separation * cfg.separation);
        }
        const double norm = frobenius_norm(v);
        for (std::size_t i = 0; i < cfg.d; ++i) centers(c, i) = cfg.separation * v[i] / norm;
    }

    // One shared label direction whose sign alternates with cluster parity.
    // A single static adapter has one global slope along this direction, so it
    // cannot satisfy both parities at once; resolving the conflict requires
    // cluster-conditional adaptation.
    std::vector<double> shared_dir(cfg.d);
    for (double& x : shared_dir) x = rng.gaussian();
    const double shared_norm = frobenius_norm(shared_dir);
    Matrix label_dirs(cfg.n_clusters, cfg.d);
    for (std::size_t c = 0; c < cfg.n_clusters; ++c) {
        const double sign = c % 2 == 0 ? 1.0 : -1.0;
        for (std::size_t i = 0; i < cfg.d; ++i)
            label_dirs(c, i) = sign * shared_dir[i] / shared_norm;
    }

    ToyTask task;
    task.config = cfg;
    const std::size_t n = cfg.n_clusters * cfg.samples_per_cluster;
    task.features = Matrix(n, cfg.d);
    task.labels.resize(n);
    task.cluster_of.resize(n);
    for (std::size_t c = 0; c < cfg.n_clusters; ++c)
        for (std::size_t i = 0; i < cfg.samples_per_cluster; ++i) {
            const std::size_t row = c * cfg.samples_per_cluster + i;
            double proj = 0.0;
            for (std::size_t j = 0; j < cfg.d; ++j) {
                const double z = rng.gaussian();
                task.features(row, j) = centers(c, j) + z;
                proj += z * label_dirs(c, j);
            }
            const std::size_t bit = proj >= 0.0 ? 1 : 0;
            task.labels[row] = (2 * c + bit) % cfg.n_classes;
            task.cluster_of[row] = c;
        }
    return task;
}

// ---------------------------------------------------------------------------
// Model, loss, gradients
// ---------------------------------------------------------------------------

/// Frozen linear layer plus one trainable adapter and its routing table.
struct ToyModel {
    TuckaAdapter adapter;
    Matrix w;  // frozen (d, n_classes)
    ExpertCentroids centroids;
    bool normalize_affinity = true;
    bool normalize_scores = true;
};

/// Every intermediate of one adapted forward pass, kept for the backward pass.
struct ForwardCache {
    std::vector<double> h;      // routing feature
    std::vector<double> z;      // affinities after optional L2 normalization
    std::vector<double> s;      // sigmoid scores, all experts
    double affinity_norm = 0.0; // ||a|| when normalization was applied, else 0
    std::size_t group = 0;
    std::vector<double> weights;  // g (t), normalized or raw per model flag
    double weight_sum = 0.0;      // sum of selected-group scores, the unit-sum denominator

    double norm_core = 0.0, norm_c = 0.0, norm_u = 0.0;  // 0 when not rescaled
    Tensor3 core_n;  // (p, r, r) selected group's core, possibly rescaled
    Matrix c_n, u_n;
    NdTensor m;        // (t, r, r)
    Matrix m_avg;      // (r, r)
    NdTensor x_down;   // (b, s, r)
    NdTensor x_trans;  // (b, s, r)
    NdTensor x_up;     // (b, s, d)
    Tensor3 logits;    // (b, s, n_classes)
};

/// Adapted forward pass with caching. Mirrors forward_efficient exactly but
/// keeps intermediates and accepts raw (unnormalized) mixture weights, which
/// the public forwards reject.
[[nodiscard]] inline ForwardCache model_forward(const ToyModel& model, const BatchInput& x) {
    const AdapterConfig& cfg = model.adapter.config;
    cfg.validate();
    if (x.dim() != cfg.d) throw ShapeError("model_forward: input dim mismatch");
    if (model.w.rows() != cfg.d) throw ShapeError("model_forward: base weight rows != d");

    ForwardCache cache;
    cache.h = routing_feature(x);

    // Routing, kept inline so the backward pass can reuse the intermediates.
    const std::size_t m_total = model.centroids.total(), t = model.centroids.per_group;
    std::vector<double> a(m_total, 0.0);
    for (std::size_t i = 0; i < m_total; ++i) {
        const double* row = model.centroids.vectors.row(i);
        double acc = 0.0;
        for (std::size_t c = 0; c < model.centroids.dim; ++c) acc += row[c] * cache.h[c];
        a[i] = acc;
    }
    if (model.normalize_affinity) {
        const double norm = frobenius_norm(a);
        if (norm >= 1e-12) {
            for (double& v : a) v /= norm;
            cache.affinity_norm = norm;
        }
    }
    cache.z = a;
    cache.s.resize(m_total);
    for (std::size_t i = 0; i < m_total; ++i) cache.s[i] = 1.0 / (1.0 + std::exp(-a[i]));
    std::size_t best = 0;
    for (std::size_t i = 1; i < m_total; ++i)
        if (a[i] > a[best]) best = i;
    cache.group = best / t;
    cache.weights.assign(cache.s.begin() + static_cast<std::ptrdiff_t>(cache.group * t),
                         cache.s.begin() + static_cast<std::ptrdiff_t>((cache.group + 1) * t));
    cache.weight_sum = 0.0;
    for (double w : cache.weights) cache.weight_sum += w;
    if (model.normalize_scores)
        for (double& w : cache.weights) w /= cache.weight_sum;

    // Adapter chain.
    cache.core_n = model.adapter.cores.slice(cache.group);
    cache.c_n = model.adapter.factor_c;
    cache.u_n = model.adapter.factor_u;
    if (cfg.normalize) {
        const double ng = frobenius_norm(cache.core_n);
        if (ng > 0.0) {
            for (double& v : cache.core_n.data()) v /= ng;
            cache.norm_core = ng;
        }
        const double nc = frobenius_norm(cache.c_n);
        if (nc > 0.0) {
            for (double& v : cache.c_n.data()) v /= nc;
            cache.norm_c = nc;
        }
        const double nu = frobenius_norm(cache.u_n);
        if (nu > 0.0) {
            for (double& v : cache.u_n.data()) v /= nu;
            cache.norm_u = nu;
        }
    }
    cache.m = contract("tp,prl->trl", cache.c_n, cache.core_n);
    cache.m_avg = to_matrix(contract("t,trl->rl", cache.weights, cache.m));
    cache.x_down = contract("bsd,dr->bsr", x.values, cache.u_n);
    cache.x_trans = contract("bsr,rl->bsl", cache.x_down, cache.m_avg);
    cache.x_up = contract("bsr,dr->bsd", cache.x_trans, cache.u_n);

    const std::size_t n = x.batch() * x.seq(), d = cfg.d, d_out = model.w.cols();
    cache.logits = Tensor3(x.batch(), x.seq(), d_out);
    for (std::size_t row = 0; row < n; ++row) {
        const double* xr = x.values.data().data() + row * d;
        const double* ur = cache.x_up.values.data() + row * d;
        double* yr = cache.logits.data().data() + row * d_out;
        for (std::size_t c = 0; c < d; ++c) {
            const double v = xr[c] + cfg.alpha * ur[c];
            const double* wrow = model.w.row(c);
            for (std::size_t o = 0; o < d_out; ++o) yr[o] += v * wrow[o];
        }
    }
    return cache;
}

struct LossGrad {
    double loss = 0.0;
    double accuracy = 0.0;
    Tensor3 dlogits;  // same shape as logits, already mean-reduced
};

/// Softmax cross-entropy, averaged over all (batch, seq) rows.
[[nodiscard]] inline LossGrad softmax_xent(const Tensor3& logits,
                                           const std::vector<std::size_t>& labels) {
    const std::size_t n = logits.n1() * logits.n2(), c = logits.n3();
    if (labels.size() != n)
        throw ShapeError("softmax_xent: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
    LossGrad out;
    out.dlogits = Tensor3(logits.n1(), logits.n2(), logits.n3());
    std::size_t correct = 0;
    for (std::size_t row = 0; row < n; ++row) {
        const double* lr = logits.data().data() + row * c;
        double* dr = out.dlogits.data().data() + row * c;
        double mx = lr[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, lr[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) sum += std::exp(lr[j] - mx);
        const std::size_t y = labels[row];
        if (y >= c) throw ConfigError("softmax_xent: label out of range");
        out.loss += -(lr[y] - mx - std::log(sum));
        std::size_t argmax = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (lr[j] > lr[argmax]) argmax = j;
        correct += argmax == y ? 1 : 0;
        for (std::size_t j = 0; j < c; ++j) {
            const double p = std::exp(lr[j] - mx) / sum;
            dr[j] = (p - (j == y ? 1.0 : 0.0)) / static_cast<double>(n);
        }
    }
    out.loss /= static_cast<double>(n);
    out.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    return out;
}

struct Gradients {
    Tensor4 cores;
    Matrix factor_c;
    Matrix factor_u;
    Matrix centroids;
    std::vector<double> d_scores;  // dL/ds for the selected group's experts
};

namespace detail {

// Backward through z = v / n (Frobenius). When the rescale was skipped
// (norm == 0 or normalize off) the map was the identity.
inline void normalization_backward(std::vector<double>& dv, const std::vector<double>& z,
                                   double norm) {
    if (norm <= 0.0) return;
    double dot = 0.0;
    for (std::size_t i = 0; i < dv.size(); ++i) dot += dv[i] * z[i];
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] = (dv[i] - dot * z[i]) / norm;
}

}  // namespace detail

/// Analytic gradients of the cached forward pass. The argmax group selection
/// is treated as constant (straight-through); everything downstream of it,
/// including both optional normalizations, is differentiated exactly.
[[nodiscard]] inline Gradients model_backward(const ToyModel& model, const BatchInput& x,
                                              const ForwardCache& cache,
                                              const Tensor3& dlogits) {
    const AdapterConfig& cfg = model.adapter.config;
    const std::size_t n = x.batch() * x.seq(), d = cfg.d, d_out = model.w.cols();
    const std::size_t r = cfg.r, p = cfg.p, t = cfg.t;

    Gradients g;
    g.cores = Tensor4(cfg.k, p, r, r);
    g.factor_c = Matrix(t, p);
    g.factor_u = Matrix(d, r);
    g.centroids = Matrix(model.centroids.total(), model.centroids.dim);

    // dXa[row, c] = sum_o dlogits[row, o] * w(c, o); dXu = alpha * dXa.
    std::vector<double> dxu(n * d, 0.0);
    for (std::size_t row = 0; row < n; ++row) {
        const double* dl = dlogits.data().data() + row * d_out;
        double* du = dxu.data() + row * d;
        for (std::size_t c = 0; c < d; ++c) {
            const double* wrow = model.w.row(c);
            double acc = 0.0;
            for (std::size_t o = 0; o < d_out; ++o) acc += dl[o] * wrow[o];
            du[c] = cfg.alpha * acc;
        }
    }

    // x_up = x_trans U^T: split into dXt and the first dU contribution.
    std::vector<double> dxt(n * r, 0.0);
    std::vector<double> dun(d * r, 0.0);
    for (std::size_t row = 0; row < n; ++row) {
        const double* du = dxu.data() + row * d;
        const double* xt = cache.x_trans.values.data() + row * r;
        double* dt = dxt.data() + row * r;
        for (std::size_t c = 0; c < d; ++c) {
            const double* urow = cache.u_n.row(c);
            double* dun_row = dun.data() + c * r;
            for (std::size_t j = 0; j < r; ++j) {
                dt[j] += du[c] * urow[j];
                dun_row[j] += du[c] * xt[j];
            }
        }
    }

    // x_trans = x_down m_avg.
    std::vector<double> dxd(n * r, 0.0);
    Matrix dm_avg(r, r);
    for (std::size_t row = 0; row < n; ++row) {
        const double* dt = dxt.data() + row * r;
        const double* xd = cache.x_down.values.data() + row * r;
        double* dd = dxd.data() + row * r;
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t l = 0; l < r; ++l) {
                dd[i] += dt[l] * cache.m_avg(i, l);
                dm_avg(i, l) += xd[i] * dt[l];
            }
    }

    // x_down = x U_n: second dU contribution.
    for (std::size_t row = 0; row < n; ++row) {
        const double* xr = x.values.data().data() + row * d;
        const double* dd = dxd.data() + row * r;
        for (std::size_t c = 0; c < d; ++c) {
            double* dun_row = dun.data() + c * r;
            for (std::size_t j = 0; j < r; ++j) dun_row[j] += xr[c] * dd[j];
        }
    }

    // m_avg = sum_j g_j m[j].
    std::vector<double> dg(t, 0.0);
    std::vector<double> dm(t * r * r, 0.0);
    for (std::size_t j = 0; j < t; ++j) {
        const double* mj = cache.m.values.data() + j * r * r;
        double* dmj = dm.data() + j * r * r;
        for (std::size_t rl = 0; rl < r * r; ++rl) {
            dg[j] += dm_avg.data()[rl] * mj[rl];
            dmj[rl] = cache.weights[j] * dm_avg.data()[rl];
        }
    }

    // m[j] = sum_p c_n(j,p) core_n[p].
    std::vector<double> dcn(t * p, 0.0);
    std::vector<double> dcore_n(p * r * r, 0.0);
    for (std::size_t j = 0; j < t; ++j)
        for (std::size_t q = 0; q < p; ++q) {
            const double cjq = cache.c_n(j, q);
            const double* dmj = dm.data() + j * r * r;
            const double* corep = cache.core_n.data().data() + q * r * r;
            double* dcorep = dcore_n.data() + q * r * r;
            double acc = 0.0;
            for (std::size_t rl = 0; rl < r * r; ++rl) {
                acc += dmj[rl] * corep[rl];
                dcorep[rl] += cjq * dmj[rl];
            }
            dcn[j * p + q] += acc;
        }

    // Undo the three Frobenius rescales.
    detail::normalization_backward(dcore_n, cache.core_n.data(), cache.norm_core);
    detail::normalization_backward(dcn, cache.c_n.data(), cache.norm_c);
    detail::normalization_backward(dun, cache.u_n.data(), cache.norm_u);

    std::copy(dcore_n.begin(), dcore_n.end(),
              g.cores.data().begin() + static_cast<std::ptrdiff_t>(cache.group * p * r * r));
    g.factor_c.data() = dcn;
    g.factor_u.data() = dun;

    // Routing backward: weights -> scores -> affinities -> centroids.
    g.d_scores.assign(t, 0.0);
    if (model.normalize_scores) {
        double dot = 0.0;
        for (std::size_t j = 0; j < t; ++j) dot += dg[j] * cache.weights[j];
        for (std::size_t j = 0; j < t; ++j)
            g.d_scores[j] = (dg[j] - dot) / cache.weight_sum;
    } else {
        g.d_scores = dg;
    }

    const std::size_t m_total = model.centroids.total();
    std::vector<double> dz(m_total, 0.0);
    for (std::size_t j = 0; j < t; ++j) {
        const double s = cache.s[cache.group * t + j];
        dz[cache.group * t + j] = g.d_scores[j] * s * (1.0 - s);
    }
    detail::normalization_backward(dz, cache.z, cache.affinity_norm);
    for (std::size_t i = 0; i < m_total; ++i) {
        double* row = g.centroids.row(i);
        for (std::size_t c = 0; c < model.centroids.dim; ++c) row[c] = dz[i] * cache.h[c];
    }
    return g;
}

inline void sgd_step(ToyModel& model, const Gradients& g, double lr) {
    auto update = [lr](std::vector<double>& param, const std::vector<double>& grad) {
        for (std::size_t i = 0; i < param.size(); ++i) param[i] -= lr * grad[i];
    };
    update(model.adapter.cores.data(), g.cores.data());
    update(model.adapter.factor_c.data(), g.factor_c.data());
    update(model.adapter.factor_u.data(), g.factor_u.data());
    update(model.centroids.vectors.data(), g.centroids.data());
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

enum class CentroidInit { kaiming, dai };

struct TrainConfig {
    AdapterConfig adapter;  // adapter.d must match the task d; d_out = n_classes
    double lr = 0.1;
    std::size_t steps = 200;
    std::size_t batch_size = 16;
    CentroidInit init = CentroidInit::kaiming;
    double init_a = 2.0;  // kaiming fan parameter or dai perturbation radius
    bool normalize_affinity = true;
    bool normalize_scores = true;
    std::uint64_t seed = 0;
};

struct StepRecord {
    std::size_t step = 0;
    double loss = 0.0;
    double accuracy = 0.0;  // on the training batch
    std::size_t selected_group = 0;
};

struct TrainResult {
    std::vector<StepRecord> trace;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    double final_accuracy = 0.0;           // full dataset, cluster-wise batches
    std::vector<double> probe_d_scores;    // per step: dL/ds of the top selected expert
    ToyModel model;
};

namespace detail {

// Batches are drawn cluster-homogeneous: one cluster per step, samples with
// replacement. Batch-level routing sees one cluster at a time, which is what
// lets different groups specialize.
struct BatchDraw {
    BatchInput x;
    std::vector<std::size_t> labels;
};

inline BatchDraw draw_batch(const ToyTask& task, std::size_t batch_size, Rng& rng) {
    const std::size_t cluster = rng.index(task.config.n_clusters);
    const std::size_t base = cluster * task.config.samples_per_cluster;
    BatchDraw out{BatchInput(batch_size, 1, task.config.d), {}};
    out.labels.resize(batch_size);
    for (std::size_t b = 0; b < batch_size; ++b) {
        const std::size_t row = base + rng.index(task.config.samples_per_cluster);
        for (std::size_t c = 0; c < task.config.d; ++c)
            out.x.values(b, 0, c) = task.features(row, c);
        out.labels[b] = task.labels[row];
    }
    return out;
}

}  // namespace detail

[[nodiscard]] inline ToyModel make_toy_model(const ToyTask& task, const TrainConfig& cfg,
                                             const BatchInput* dai_probe) {
    AdapterConfig acfg = cfg.adapter;
    acfg.d = task.config.d;
    acfg.d_out = task.config.n_classes;
    acfg.validate();

    ToyModel model;
    model.adapter = init_adapter(acfg, cfg.seed + 1);
    model.w = Matrix(acfg.d, acfg.d_out);
    Rng wrng(cfg.seed + 2);
    const double bound = 1.0 / std::sqrt(static_cast<double>(acfg.d));
    for (double& v : model.w.data()) v = wrng.uniform(-bound, bound);

    if (cfg.init == CentroidInit::dai) {
        if (dai_probe == nullptr)
            throw ConfigError("make_toy_model: dai init requires a probe batch");
        model.centroids = init_dai(acfg.k, acfg.t, *dai_probe, cfg.init_a, cfg.seed + 3);
    } else {
        model.centroids = init_kaiming(acfg.k, acfg.t, acfg.d, cfg.init_a, cfg.seed + 3);
    }
    model.normalize_affinity = cfg.normalize_affinity;
    model.normalize_scores = cfg.normalize_scores;
    return model;
}

/// Full-dataset accuracy, evaluated one cluster per batch so routing sees
/// the same batch composition as training.
[[nodiscard]] inline double evaluate_accuracy(const ToyModel& model, const ToyTask& task) {
    std::size_t correct = 0;
    const std::size_t spc = task.config.samples_per_cluster;
    for (std::size_t cluster = 0; cluster < task.config.n_clusters; ++cluster) {
        BatchInput x(spc, 1, task.config.d);
        std::vector<std::size_t> labels(spc);
        for (std::size_t i = 0; i < spc; ++i) {
            const std::size_t row = cluster * spc + i;
            for (std::size_t c = 0; c < task.config.d; ++c)
                x.values(i, 0, c) = task.features(row, c);
            labels[i] = task.labels[row];
        }
        const ForwardCache cache = model_forward(model, x);
        const LossGrad lg = softmax_xent(cache.logits, labels);
        correct += static_cast<std::size_t>(std::lround(lg.accuracy * static_cast<double>(spc)));
    }
    return static_cast<double>(correct) / static_cast<double>(task.size());
}

/// Plain SGD over the toy task. The routing path trains through the mixture
/// weights only; the group argmax is straight-through.
[[nodiscard]] inline TrainResult train(const ToyTask& task, const TrainConfig& cfg) {
    if (cfg.steps == 0) throw ConfigError("train: need at least one step");
    Rng rng(cfg.seed);

    detail::BatchDraw first = detail::draw_batch(task, cfg.batch_size, rng);
    ToyModel model = make_toy_model(task, cfg, &first.x);

    TrainResult result;
    result.trace.reserve(cfg.steps);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        detail::BatchDraw batch =
            step == 0 ? std::move(first) : detail::draw_batch(task, cfg.batch_size, rng);

        const ForwardCache cache = model_forward(model, batch.x);
        const LossGrad lg = softmax_xent(cache.logits, batch.labels);
        const Gradients grads = model_backward(model, batch.x, cache, lg.dlogits);

        std::size_t top = 0;
        for (std::size_t j = 1; j < cache.weights.size(); ++j)
            if (cache.weights[j] > cache.weights[top]) top = j;
        result.probe_d_scores.push_back(grads.d_scores[top]);
        result.trace.push_back({step, lg.loss, lg.accuracy, cache.group});
        if (step == 0) result.initial_loss = lg.loss;
        result.final_loss = lg.loss;

        sgd_step(model, grads, cfg.lr);
    }
    result.final_accuracy = evaluate_accuracy(model, task);
    result.model = std::move(model);
    return result;
}

/// Fraction of the first `probe_steps` steps whose dL/ds for the picked
/// expert is strictly negative. A converged run whose gradients vanish
/// reports 0 by construction.
struct ProbeResult {
    double negative_fraction = 0.0;
    std::vector<double> d_scores;
};

[[nodiscard]] inline ProbeResult gradient_sign_probe(const ToyTask& task, TrainConfig cfg,
                                                     std::size_t probe_steps = 100) {
    cfg.steps = probe_steps;
    const TrainResult result = train(task, cfg);
    ProbeResult probe;
    probe.d_scores = result.probe_d_scores;
    std::size_t negative = 0;
    for (double v : probe.d_scores) negative += v < 0.0 ? 1 : 0;
    probe.negative_fraction =
        static_cast<double>(negative) / static_cast<double>(probe.d_scores.size());
    return probe;
}

inline void write_train_trace_csv(const std::vector<StepRecord>& trace, std::ostream& os) {
    os << "step,loss,accuracy,selected_group\n";
    char buf[32];
    for (const StepRecord& rec : trace) {
        os << rec.step << ",";
        std::snprintf(buf, sizeof(buf), "%.17g", rec.loss);
        os << buf << ",";
        std::snprintf(buf, sizeof(buf), "%.17g", rec.accuracy);
        os << buf << "," << rec.selected_group << "\n";
    }
}

// ---------------------------------------------------------------------------
// Two stacked adapted layers sharing one routing decision
// ---------------------------------------------------------------------------

/// Two adapted linear layers driven by a single batch-level RoutingDecision
/// computed from the first layer's input.
struct TwoLayerToyModel {
    TuckaAdapter first;
    Matrix w_first;  // (d, hidden)
    TuckaAdapter second;
    Matrix w_second;  // (hidden, d_out)
    ExpertCentroids centroids;
    bool normalize_affinity = true;
};

[[nodiscard]] inline Tensor3 forward_two_layer(const TwoLayerToyModel& model,
                                               const BatchInput& x) {
    if (model.first.config.k != model.second.config.k ||
        model.first.config.t != model.second.config.t)
        throw ConfigError("forward_two_layer: both adapters must share the group layout");
    const RoutingDecision decision =
        route(model.centroids, routing_feature(x), model.normalize_affinity);
    const Tensor3 hidden = forward_efficient(model.first, model.w_first, x, decision);
    return forward_efficient(model.second, model.w_second, BatchInput(hidden), decision);
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked_entries = 0;
};

namespace detail {

template <class LossFn>
double central_difference(LossFn&& loss, double& param, double h) {
    const double saved = param;
    param = saved + h;
    const double up = loss();
    param = saved - h;
    const double down = loss();
    param = saved;
    return (up - down) / (2.0 * h);
}

// Relative to the larger magnitude, floored at 1e-2 so that near-zero
// gradients are compared absolutely (the losses here are O(1)).
inline double rel_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-2});
    return std::abs(analytic - numeric) / denom;
}

}  // namespace detail

/// Compare analytic gradients of the batch loss against central differences
/// for every trainable entry (cores, both factors, centroids).
[[nodiscard]] inline GradCheckReport gradient_check(ToyModel& model, const BatchInput& x,
                                                    const std::vector<std::size_t>& labels,
                                                    double h = 1e-5) {
    const auto loss_of = [&]() {
        const ForwardCache cache = model_forward(model, x);
        return softmax_xent(cache.logits, labels).loss;
    };
    const ForwardCache cache = model_forward(model, x);
    const LossGrad lg = softmax_xent(cache.logits, labels);
    const Gradients grads = model_backward(model, x, cache, lg.dlogits);

    GradCheckReport report;
    const auto check_tensor = [&](std::vector<double>& params, const std::vector<double>& grad) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double numeric = detail::central_difference(loss_of, params[i], h);
            report.max_rel_error =
                std::max(report.max_rel_error, detail::rel_error(grad[i], numeric));
            ++report.checked_entries;
        }
    };
    check_tensor(model.adapter.cores.data(), grads.cores.data());
    check_tensor(model.adapter.factor_c.data(), grads.factor_c.data());
    check_tensor(model.adapter.factor_u.data(), grads.factor_u.data());
    check_tensor(model.centroids.vectors.data(), grads.centroids.data());
    return report;
}

/// Randomized gradient-check sweep used by both the test suite and the CLI.
/// Draws `count` small configurations covering every normalization-flag
/// combination and nonzero random tensors, and returns the worst case.
[[nodiscard]] inline GradCheckReport gradient_check_sweep(std::size_t count,
                                                          std::uint64_t seed) {
    GradCheckReport worst;
    Rng rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        AdapterConfig cfg;
        cfg.d = 3 + rng.index(4);
        cfg.d_out = 2 + rng.index(3);
        cfg.r = 1 + rng.index(std::min<std::size_t>(3, cfg.d));
        cfg.p = 1 + rng.index(2);
        cfg.t = 1 + rng.index(3);
        cfg.k = 1 + rng.index(3);
        cfg.alpha = 0.5 + rng.uniform(0.0, 1.5);
        cfg.normalize = rng.index(2) == 0;

        ToyModel model;
        model.adapter = init_adapter(cfg, seed + i);
        for (double& v : model.adapter.cores.data()) v = rng.uniform(-1.0, 1.0);
        model.w = Matrix(cfg.d, cfg.d_out);
        for (double& v : model.w.data()) v = rng.uniform(-1.0, 1.0);
        model.centroids = init_kaiming(cfg.k, cfg.t, cfg.d, 2.0, seed + 31 * i);
        model.normalize_affinity = rng.index(2) == 0;
        model.normalize_scores = rng.index(2) == 0;

        const std::size_t batch = 2 + rng.index(3);
        BatchInput x(batch, 1, cfg.d);
        for (double& v : x.values.data()) v = rng.uniform(-2.0, 2.0);
        std::vector<std::size_t> labels(batch);
        for (std::size_t& l : labels) l = rng.index(cfg.d_out);

        const GradCheckReport report = gradient_check(model, x, labels);
        worst.max_rel_error = std::max(worst.max_rel_error, report.max_rel_error);
        worst.checked_entries += report.checked_entries;
    }
    return worst;
}

}  // namespace tucka
