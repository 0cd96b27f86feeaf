#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tucka/errors.hpp"
#include "tucka/rng.hpp"
#include "tucka/routing.hpp"
#include "tucka/tensor.hpp"
#include "tucka/tensor_ops.hpp"

namespace tucka {

// ---------------------------------------------------------------------------
// Feature distribution
// ---------------------------------------------------------------------------

/// Gaussian feature generator with a controlled covariance spectrum: a shared
/// mean, a small isotropic variance floor, and a few orthonormal spike
/// directions carrying most of the variance. Samples are
///   h = mu + sqrt(floor) z + sum_i (sqrt(spike) - sqrt(floor)) v_i <v_i, z>
/// with z standard normal, so variance is `spike_variance` along each spike
/// and `floor_variance` everywhere else.
class GaussianFeatureModel {
public:
    GaussianFeatureModel(std::size_t d, double mean_scale, std::size_t spike_count,
                         double spike_variance, double floor_variance, Rng& rng)
        : mu_(d, mean_scale),
          spikes_(spike_count, d),
          spike_std_(std::sqrt(spike_variance)),
          floor_std_(std::sqrt(floor_variance)) {
        if (d == 0) throw ConfigError("GaussianFeatureModel: d must be positive");
        if (spike_count > d)
            throw ConfigError("GaussianFeatureModel: more spike directions than dimensions");
        if (spike_variance < 0.0 || floor_variance < 0.0)
            throw ConfigError("GaussianFeatureModel: variances must be non-negative");

        // Orthonormal spike directions via modified Gram-Schmidt on Gaussian
        // draws. Random Gaussian vectors in high dimension are far from
        // collinear, so no re-orthogonalization pass is needed.
        for (std::size_t i = 0; i < spike_count; ++i) {
            double* row = spikes_.row(i);
            for (std::size_t c = 0; c < d; ++c) row[c] = rng.gaussian();
            for (std::size_t prev = 0; prev < i; ++prev) {
                const double* prow = spikes_.row(prev);
                double dot = 0.0;
                for (std::size_t c = 0; c < d; ++c) dot += row[c] * prow[c];
                for (std::size_t c = 0; c < d; ++c) row[c] -= dot * prow[c];
            }
            double norm = 0.0;
            for (std::size_t c = 0; c < d; ++c) norm += row[c] * row[c];
            norm = std::sqrt(norm);
            if (norm < 1e-8)
                throw std::logic_error("GaussianFeatureModel: degenerate spike direction");
            for (std::size_t c = 0; c < d; ++c) row[c] /= norm;
        }
    }

    [[nodiscard]] std::size_t dim() const { return mu_.size(); }
    [[nodiscard]] const std::vector<double>& mean() const { return mu_; }
    [[nodiscard]] const Matrix& spike_directions() const { return spikes_; }

    /// One feature vector, appended to `out` (length dim()).
    void sample_into(double* out, Rng& rng) const {
        const std::size_t d = mu_.size(), n_spikes = spikes_.rows();
        std::vector<double> z(d);
        for (double& v : z) v = rng.gaussian();
        for (std::size_t c = 0; c < d; ++c) out[c] = mu_[c] + floor_std_ * z[c];
        for (std::size_t i = 0; i < n_spikes; ++i) {
            const double* v = spikes_.row(i);
            double proj = 0.0;
            for (std::size_t c = 0; c < d; ++c) proj += v[c] * z[c];
            const double gain = (spike_std_ - floor_std_) * proj;
            for (std::size_t c = 0; c < d; ++c) out[c] += gain * v[c];
        }
    }

    /// A batch of shape (batch_size, 1, d).
    [[nodiscard]] BatchInput sample_batch(std::size_t batch_size, Rng& rng) const {
        BatchInput x(batch_size, 1, mu_.size());
        for (std::size_t b = 0; b < batch_size; ++b)
            sample_into(x.values.data().data() + b * mu_.size(), rng);
        return x;
    }

private:
    std::vector<double> mu_;
    Matrix spikes_;  // (spike_count, d), orthonormal rows
    double spike_std_;
    double floor_std_;
};

// ---------------------------------------------------------------------------
// Simulation config and report
// ---------------------------------------------------------------------------

enum class SimInit { kaiming, dai, kaiming_alb };

[[nodiscard]] inline std::string to_string(SimInit init) {
    switch (init) {
        case SimInit::kaiming: return "kaiming";
        case SimInit::dai: return "dai";
        case SimInit::kaiming_alb: return "kaiming_alb";
    }
    throw std::logic_error("to_string: bad SimInit");
}

[[nodiscard]] inline SimInit sim_init_from_string(const std::string& s) {
    if (s == "kaiming") return SimInit::kaiming;
    if (s == "dai") return SimInit::dai;
    if (s == "kaiming_alb") return SimInit::kaiming_alb;
    throw ConfigError("unknown init mode '" + s + "' (want kaiming, dai or kaiming_alb)");
}

/// Routing dynamics simulation. Each batch is routed with affinity
/// normalization off, and every centroid of the winning group takes a
/// surrogate gradient step eta * max(c, s(1-s)) * hbar along the batch
/// feature, a worst-case stand-in for the true score gradient whose
/// magnitude never vanishes.
struct SimConfig {
    std::size_t d = 512;
    std::size_t k = 5;  // routing groups
    std::size_t t = 1;  // experts per group
    std::size_t batch_size = 64;
    std::size_t n_batches = 200;
    double mean_scale = 2.0;
    std::size_t spike_count = 3;
    std::optional<double> spike_variance;  // defaults to sqrt(d)
    double floor_variance = 0.01;
    double learning_rate = 1.0;  // eta
    double step_scale = 1.0;     // c, the floor on the surrogate step factor
    SimInit init = SimInit::kaiming;
    double init_a = 2.0;    // kaiming fan parameter or dai perturbation radius
    double alb_gamma = 0.0; // bias step, kaiming_alb only
    std::uint64_t seed = 0;
    bool update_centroids = true;

    void validate() const {
        if (d == 0 || k == 0 || t == 0 || batch_size == 0 || n_batches == 0)
            throw ConfigError("SimConfig: d, k, t, batch_size and n_batches must be positive");
        if (spike_count > d) throw ConfigError("SimConfig: spike_count must be <= d");
        if (floor_variance < 0.0 || (spike_variance && *spike_variance < 0.0))
            throw ConfigError("SimConfig: variances must be non-negative");
        if (learning_rate < 0.0 || step_scale < 0.0)
            throw ConfigError("SimConfig: learning_rate and step_scale must be non-negative");
        if (init_a < 0.0) throw ConfigError("SimConfig: init_a must be non-negative");
        if (init == SimInit::kaiming_alb && alb_gamma <= 0.0)
            throw ConfigError("SimConfig: kaiming_alb requires alb_gamma > 0");
    }

    [[nodiscard]] double resolved_spike_variance() const {
        return spike_variance ? *spike_variance : std::sqrt(static_cast<double>(d));
    }
};

struct SimReport {
    std::vector<std::size_t> activation_counts;  // per flat expert, k*t entries
    double max_load_fraction = 0.0;
    double load_entropy_normalized = 0.0;  // base log(k*t); 1.0 when k*t == 1
    double centroid_mse_initial = 0.0;     // mean pairwise ||e_i - e_j||^2 / d
    double centroid_mse_final = 0.0;
    std::optional<double> gradient_sign_negative_fraction;  // unset in surrogate mode
    bool degenerate_tie = false;  // some batch had an exact selection tie
};

struct SimTraceRow {
    std::size_t batch_index = 0;
    std::size_t selected_group = 0;
    std::size_t selected_expert = 0;  // flat index
    double max_affinity = 0.0;        // winner's selection value (bias included)
};

struct SimRun {
    SimConfig config;
    SimReport report;
    std::vector<SimTraceRow> trace;
    ExpertCentroids final_centroids;
};

namespace detail {

[[nodiscard]] inline double pairwise_centroid_mse(const ExpertCentroids& centroids) {
    const std::size_t m = centroids.total(), d = centroids.dim;
    if (m < 2) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) {
            const double *ri = centroids.vectors.row(i), *rj = centroids.vectors.row(j);
            double dist = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = ri[c] - rj[c];
                dist += diff * diff;
            }
            total += dist / static_cast<double>(d);
        }
    return total / (static_cast<double>(m) * static_cast<double>(m - 1) / 2.0);
}

[[nodiscard]] inline double normalized_entropy(const std::vector<std::size_t>& counts) {
    if (counts.size() < 2) return 1.0;
    std::size_t total = 0;
    for (std::size_t c : counts) total += c;
    double entropy = 0.0;
    for (std::size_t c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / static_cast<double>(total);
        entropy -= p * std::log(p);
    }
    return entropy / std::log(static_cast<double>(counts.size()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Simulation loop
// ---------------------------------------------------------------------------

[[nodiscard]] inline SimRun run_sim(const SimConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const GaussianFeatureModel features(cfg.d, cfg.mean_scale, cfg.spike_count,
                                        cfg.resolved_spike_variance(), cfg.floor_variance, rng);

    ExpertCentroids centroids;
    switch (cfg.init) {
        case SimInit::kaiming:
            centroids = init_kaiming(cfg.k, cfg.t, cfg.d, cfg.init_a, cfg.seed + 1);
            break;
        case SimInit::dai: {
            const BatchInput probe = features.sample_batch(cfg.batch_size, rng);
            centroids = init_dai(cfg.k, cfg.t, probe, cfg.init_a, cfg.seed + 1);
            break;
        }
        case SimInit::kaiming_alb:
            centroids = init_kaiming(cfg.k, cfg.t, cfg.d, cfg.init_a, cfg.seed + 1);
            centroids.engage_alb(cfg.alb_gamma);
            break;
    }

    SimRun run;
    run.config = cfg;
    const std::size_t m = centroids.total();
    run.report.activation_counts.assign(m, 0);
    run.report.centroid_mse_initial = detail::pairwise_centroid_mse(centroids);
    run.trace.reserve(cfg.n_batches);

    for (std::size_t batch = 0; batch < cfg.n_batches; ++batch) {
        const BatchInput x = features.sample_batch(cfg.batch_size, rng);
        const std::vector<double> h = routing_feature(x);
        const RoutingDecision decision = route(centroids, h, /*normalize_affinity=*/false);

        // Recompute the selection values for the trace and the tie check, and
        // cross-check the winner against the routing function.
        std::vector<double> selection(m, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            const double* row = centroids.vectors.row(i);
            double acc = 0.0;
            for (std::size_t c = 0; c < cfg.d; ++c) acc += row[c] * h[c];
            selection[i] = acc + (centroids.alb_bias ? (*centroids.alb_bias)[i] : 0.0);
        }
        std::size_t best = 0;
        std::size_t at_max = 1;
        for (std::size_t i = 1; i < m; ++i) {
            if (selection[i] > selection[best]) {
                best = i;
                at_max = 1;
            } else if (selection[i] == selection[best]) {
                ++at_max;
            }
        }
        if (best != decision.argmax_expert)
            throw std::logic_error("run_sim: selection disagrees with route()");
        if (at_max > 1) run.report.degenerate_tie = true;

        run.report.activation_counts[best] += 1;
        run.trace.push_back({batch, decision.group, best, selection[best]});

        if (cfg.update_centroids) {
            const double s = decision.scores[best];
            const double step =
                cfg.learning_rate * std::max(cfg.step_scale, s * (1.0 - s));
            for (std::size_t j = 0; j < cfg.t; ++j) {
                double* row = centroids.vectors.row(decision.group * cfg.t + j);
                for (std::size_t c = 0; c < cfg.d; ++c) row[c] += step * h[c];
            }
        }
        if (centroids.alb_bias) alb_update(centroids, decision.group);
    }

    std::size_t max_count = 0;
    for (std::size_t c : run.report.activation_counts) max_count = std::max(max_count, c);
    run.report.max_load_fraction =
        static_cast<double>(max_count) / static_cast<double>(cfg.n_batches);
    run.report.load_entropy_normalized = detail::normalized_entropy(run.report.activation_counts);
    run.report.centroid_mse_final = detail::pairwise_centroid_mse(centroids);
    run.final_centroids = std::move(centroids);
    return run;
}

// ---------------------------------------------------------------------------
// Config and report serialization
// ---------------------------------------------------------------------------

/// Parse a simulation config from JSON, rejecting unknown keys so config
/// typos fail loudly instead of silently running defaults.
[[nodiscard]] inline SimConfig parse_sim_config(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("simulation config must be a JSON object");
    static const char* known[] = {
        "d",           "k",           "t",           "batch_size",    "n_batches",
        "mean_scale",  "spike_count", "spike_variance", "floor_variance", "learning_rate",
        "step_scale",  "init",        "init_a",      "alb_gamma",     "seed",
        "update_centroids"};
    for (const auto& item : j.items()) {
        if (std::find_if(std::begin(known), std::end(known), [&](const char* key) {
                return item.key() == key;
            }) == std::end(known))
            throw ConfigError("unknown key '" + item.key() + "' in simulation config");
    }
    SimConfig cfg;
    const auto get = [&j](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).template get<std::decay_t<decltype(field)>>();
    };
    get("d", cfg.d);
    get("k", cfg.k);
    get("t", cfg.t);
    get("batch_size", cfg.batch_size);
    get("n_batches", cfg.n_batches);
    get("mean_scale", cfg.mean_scale);
    get("spike_count", cfg.spike_count);
    if (j.contains("spike_variance")) cfg.spike_variance = j.at("spike_variance").get<double>();
    get("floor_variance", cfg.floor_variance);
    get("learning_rate", cfg.learning_rate);
    get("step_scale", cfg.step_scale);
    if (j.contains("init")) cfg.init = sim_init_from_string(j.at("init").get<std::string>());
    get("init_a", cfg.init_a);
    get("alb_gamma", cfg.alb_gamma);
    get("seed", cfg.seed);
    get("update_centroids", cfg.update_centroids);
    cfg.validate();
    return cfg;
}

[[nodiscard]] inline nlohmann::ordered_json sim_config_to_json(const SimConfig& cfg) {
    nlohmann::ordered_json j;
    j["d"] = cfg.d;
    j["k"] = cfg.k;
    j["t"] = cfg.t;
    j["batch_size"] = cfg.batch_size;
    j["n_batches"] = cfg.n_batches;
    j["mean_scale"] = cfg.mean_scale;
    j["spike_count"] = cfg.spike_count;
    j["spike_variance"] = cfg.resolved_spike_variance();
    j["floor_variance"] = cfg.floor_variance;
    j["learning_rate"] = cfg.learning_rate;
    j["step_scale"] = cfg.step_scale;
    j["init"] = to_string(cfg.init);
    j["init_a"] = cfg.init_a;
    j["alb_gamma"] = cfg.alb_gamma;
    j["seed"] = cfg.seed;
    j["update_centroids"] = cfg.update_centroids;
    return j;
}

[[nodiscard]] inline nlohmann::ordered_json sim_report_to_json(const SimRun& run) {
    nlohmann::ordered_json j;
    j["config"] = sim_config_to_json(run.config);
    j["activation_counts"] = run.report.activation_counts;
    j["max_load_fraction"] = run.report.max_load_fraction;
    j["load_entropy_normalized"] = run.report.load_entropy_normalized;
    j["centroid_mse_initial"] = run.report.centroid_mse_initial;
    j["centroid_mse_final"] = run.report.centroid_mse_final;
    if (run.report.gradient_sign_negative_fraction)
        j["gradient_sign_negative_fraction"] = *run.report.gradient_sign_negative_fraction;
    else
        j["gradient_sign_negative_fraction"] = nullptr;
    j["degenerate_tie"] = run.report.degenerate_tie;
    return j;
}

inline void write_sim_trace_csv(const std::vector<SimTraceRow>& trace, std::ostream& os) {
    os << "batch,selected_group,selected_expert,max_affinity\n";
    char buf[32];
    for (const SimTraceRow& row : trace) {
        std::snprintf(buf, sizeof(buf), "%.17g", row.max_affinity);
        os << row.batch_index << "," << row.selected_group << "," << row.selected_expert << ","
           << buf << "\n";
    }
}

}  // namespace tucka
