// Acceptance gate. Each criterion is one self-contained check that prints a
// single PASS/FAIL line with its measured numbers. Run one criterion with
// --criterion N (the ctest wiring), or all of them with no arguments.
//
// Thresholds are fixed here, not tuned at run time. Criterion 5 is expected
// to fail: under the surrogate update rule the pinned operating point cannot
// produce the asserted balance, and the check states what it measures rather
// than being loosened. The corresponding ctest entry tracks the inversion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "tucka/tucka.hpp"

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = false;
    std::string detail;
};

[[nodiscard]] std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

[[nodiscard]] double elapsed_seconds(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

[[nodiscard]] double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

// ---------------------------------------------------------------------------
// 1. Reference vs efficient forward agree on random configurations.
// ---------------------------------------------------------------------------

Outcome criterion_1() {
    const auto start = Clock::now();
    constexpr std::size_t kCases = 120;
    constexpr double kTol = 1e-10;

    double worst = 0.0;
    for (std::size_t i = 0; i < kCases; ++i) {
        tucka::Rng rng(1000 + i);
        tucka::AdapterConfig cfg;
        cfg.d = 2 + rng.index(7);                             // <= 8
        cfg.d_out = 1 + rng.index(6);
        cfg.r = 1 + rng.index(std::min<std::size_t>(4, cfg.d));
        cfg.p = 1 + rng.index(3);                             // <= 3
        cfg.t = 1 + rng.index(4);                             // <= 4
        cfg.k = 1 + rng.index(3);                             // <= 3
        cfg.alpha = rng.uniform(0.25, 2.0);
        cfg.normalize = i % 2 == 0;  // both modes, half the cases each

        tucka::TuckaAdapter adapter = tucka::init_adapter(cfg, rng.engine()());
        for (double& v : adapter.cores.data()) v = rng.uniform(-1.0, 1.0);
        tucka::Matrix w(cfg.d, cfg.d_out);
        for (double& v : w.data()) v = rng.uniform(-1.0, 1.0);
        tucka::BatchInput x(1 + rng.index(3), 1 + rng.index(3), cfg.d);  // B,S <= 3
        for (double& v : x.values.data()) v = rng.uniform(-2.0, 2.0);

        const tucka::ExpertCentroids centroids =
            tucka::init_kaiming(cfg.k, cfg.t, cfg.d, 2.0, rng.engine()());
        const tucka::RoutingDecision decision =
            tucka::route(centroids, tucka::routing_feature(x));

        const tucka::Tensor3 naive = tucka::forward_naive(adapter, w, x, decision);
        const tucka::Tensor3 efficient = tucka::forward_efficient(adapter, w, x, decision);
        worst = std::max(worst, max_abs_diff(naive.data(), efficient.data()));
    }

    const double secs = elapsed_seconds(start);
    Outcome out;
    out.pass = worst <= kTol && secs < 10.0;
    out.detail = std::to_string(kCases) + " configs, max |naive - efficient| = " + fmt(worst) +
                 " (tol " + fmt(kTol) + "), " + fmt(secs) + "s";
    return out;
}

// ---------------------------------------------------------------------------
// 2. Parameter formula matches constructed element counts over a grid.
// ---------------------------------------------------------------------------

Outcome criterion_2() {
    const auto start = Clock::now();

    std::size_t checked = 0, mismatched = 0;
    auto check_one = [&](const tucka::AdapterConfig& cfg) {
        const tucka::TuckaAdapter a = tucka::init_adapter(cfg, 7);
        const std::size_t constructed =
            a.cores.data().size() + a.factor_c.data().size() + a.factor_u.data().size();
        ++checked;
        if (constructed != tucka::parameter_count(cfg)) ++mismatched;
    };

    for (std::size_t d : {4, 16})
        for (std::size_t r : {1, 2, 3, 4})
            for (std::size_t p : {1, 2, 3})
                for (std::size_t t : {1, 2, 4})
                    for (std::size_t k : {1, 2, 3}) {
                        tucka::AdapterConfig cfg;
                        cfg.d = d;
                        cfg.d_out = d;
                        cfg.r = r;
                        cfg.p = p;
                        cfg.t = t;
                        cfg.k = k;
                        check_one(cfg);
                    }

    tucka::AdapterConfig published;
    published.d = 768;
    published.d_out = 768;
    published.r = 2;
    published.p = 2;
    published.t = 3;
    published.k = 4;
    check_one(published);
    const std::size_t published_count = tucka::parameter_count(published);

    const double secs = elapsed_seconds(start);
    Outcome out;
    out.pass = checked >= 200 && mismatched == 0 && published_count == 1574 && secs < 1.0;
    out.detail = std::to_string(checked) + " configs, " + std::to_string(mismatched) +
                 " mismatches, d=768 r=2 p=2 t=3 k=4 -> " + std::to_string(published_count) +
                 " (want 1574), " + fmt(secs) + "s";
    return out;
}

// ---------------------------------------------------------------------------
// 3. Analytic gradients match central finite differences.
// ---------------------------------------------------------------------------

Outcome criterion_3() {
    const auto start = Clock::now();
    constexpr double kTol = 1e-5;
    const tucka::GradCheckReport report = tucka::gradient_check_sweep(20, 2024);

    const double secs = elapsed_seconds(start);
    Outcome out;
    out.pass = report.max_rel_error <= kTol && report.checked_entries > 0 && secs < 30.0;
    out.detail = "20 configs, " + std::to_string(report.checked_entries) +
                 " entries, max rel err = " + fmt(report.max_rel_error) + " (tol " + fmt(kTol) +
                 "), " + fmt(secs) + "s";
    return out;
}

// ---------------------------------------------------------------------------
// 4. Kaiming-initialized surrogate dynamics collapse onto one expert and the
//    unactivated centroids stay bit-identical to their initialization.
// ---------------------------------------------------------------------------

[[nodiscard]] tucka::SimConfig collapse_regime() {
    tucka::SimConfig cfg;  // defaults are the pinned operating point
    cfg.d = 512;
    cfg.k = 5;
    cfg.t = 1;
    cfg.batch_size = 64;
    cfg.n_batches = 200;
    cfg.mean_scale = 2.0;
    cfg.spike_count = 3;
    cfg.floor_variance = 0.01;
    cfg.learning_rate = 1.0;
    cfg.step_scale = 1.0;
    cfg.init = tucka::SimInit::kaiming;
    cfg.init_a = 2.0;
    cfg.seed = 0;
    return cfg;
}

Outcome criterion_4() {
    const auto start = Clock::now();
    const tucka::SimConfig cfg = collapse_regime();
    const tucka::SimRun run = tucka::run_sim(cfg);

    const tucka::ExpertCentroids initial =
        tucka::init_kaiming(cfg.k, cfg.t, cfg.d, cfg.init_a, cfg.seed + 1);

    std::size_t frozen_groups = 0, touched_frozen_rows = 0;
    for (std::size_t g = 0; g < cfg.k; ++g) {
        std::size_t group_count = 0;
        for (std::size_t j = 0; j < cfg.t; ++j)
            group_count += run.report.activation_counts[g * cfg.t + j];
        if (group_count != 0) continue;
        ++frozen_groups;
        for (std::size_t j = 0; j < cfg.t; ++j) {
            const std::size_t row = g * cfg.t + j;
            for (std::size_t c = 0; c < cfg.d; ++c)
                if (run.final_centroids.vectors(row, c) != initial.vectors(row, c)) {
                    ++touched_frozen_rows;
                    break;
                }
        }
    }

    const double secs = elapsed_seconds(start);
    Outcome out;
    out.pass = run.report.max_load_fraction >= 0.9 && touched_frozen_rows == 0 && secs < 20.0;
    out.detail = "max load = " + fmt(run.report.max_load_fraction) + " (want >= 0.9), " +
                 std::to_string(frozen_groups) + " unactivated groups all bit-identical (" +
                 std::to_string(touched_frozen_rows) + " modified), " + fmt(secs) + "s";
    return out;
}

// ---------------------------------------------------------------------------
// 5. Data-aware init under the identical surrogate dynamics.
// ---------------------------------------------------------------------------

Outcome criterion_5() {
    const auto start = Clock::now();
    tucka::SimConfig cfg = collapse_regime();
    cfg.init = tucka::SimInit::dai;
    cfg.init_a = 10.0;
    const tucka::SimRun run = tucka::run_sim(cfg);

    const double secs = elapsed_seconds(start);
    Outcome out;
    out.pass = run.report.load_entropy_normalized >= 0.9 && secs < 20.0;
    out.detail = "normalized activation entropy = " + fmt(run.report.load_entropy_normalized) +
                 " (want >= 0.9); the constant-sign surrogate step re-entrenches the first "
                 "winner regardless of init, see configs/dai-balanced.json for a regime where "
                 "near-identical centroids do stay balanced, " +
                 fmt(secs) + "s";
    return out;
}

// ---------------------------------------------------------------------------
// 6. Balancing bias stays zero-sum and only affects selection.
// ---------------------------------------------------------------------------

Outcome criterion_6() {
    tucka::ExpertCentroids big(4, 3, 8);
    big.engage_alb(0.013);
    tucka::Rng rng(99);
    for (std::size_t i = 0; i < 10000; ++i) tucka::alb_update(big, rng.index(big.groups));
    double bias_sum = 0.0;
    for (double b : *big.alb_bias) bias_sum += b;

    // Hand example: h aligned with expert 0; a bias on expert 1 must flip the
    // selection while the sigmoid scores stay bitwise identical.
    tucka::ExpertCentroids pair(2, 1, 2);
    pair.vectors(0, 0) = 1.0;
    pair.vectors(1, 1) = 1.0;
    const std::vector<double> h = {2.0, 0.0};
    const tucka::RoutingDecision before = tucka::route(pair, h, false, true);
    pair.engage_alb(0.1);
    (*pair.alb_bias)[1] = 3.0;
    const tucka::RoutingDecision after = tucka::route(pair, h, false, true);

    const bool flipped = before.group == 0 && after.group == 1;
    const bool scores_equal = before.scores == after.scores;

    Outcome out;
    out.pass = std::abs(bias_sum) <= 1e-9 && flipped && scores_equal;
    out.detail = "|sum(bias)| = " + fmt(std::abs(bias_sum)) +
                 " after 10000 updates (tol 1e-9), bias flipped selection " +
                 std::to_string(before.group) + " -> " + std::to_string(after.group) +
                 ", scores unchanged: " + (scores_equal ? "yes" : "no");
    return out;
}

// ---------------------------------------------------------------------------
// 7. Householder reflection product equals its compact form and is orthogonal.
// ---------------------------------------------------------------------------

Outcome criterion_7() {
    constexpr double kTol = 1e-10;
    double worst_form = 0.0, worst_orth = 0.0;

    for (std::size_t rep = 0; rep < 50; ++rep) {
        tucka::Rng rng(500 + rep);
        const std::size_t d = 2 + rng.index(15);                         // <= 16
        const std::size_t r = 1 + rng.index(std::min<std::size_t>(4, d));
        tucka::Matrix u(d, r);
        for (std::size_t j = 0; j < r; ++j) {
            double norm = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                u(i, j) = rng.gaussian();
                norm += u(i, j) * u(i, j);
            }
            norm = std::sqrt(norm);
            for (std::size_t i = 0; i < d; ++i) u(i, j) /= norm;
        }

        const tucka::Matrix product = tucka::householder_product(u);
        const tucka::Matrix compact = tucka::householder_compact_form(u);
        worst_form = std::max(worst_form, max_abs_diff(product.data(), compact.data()));

        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                double acc = 0.0;
                for (std::size_t l = 0; l < d; ++l) acc += product(l, i) * product(l, j);
                worst_orth = std::max(worst_orth, std::abs(acc - (i == j ? 1.0 : 0.0)));
            }
    }

    Outcome out;
    out.pass = worst_form <= kTol && worst_orth <= kTol;
    out.detail = "50 column sets, max |product - compact| = " + fmt(worst_form) +
                 ", max |H^T H - I| = " + fmt(worst_orth) + " (tol " + fmt(kTol) + ")";
    return out;
}

// ---------------------------------------------------------------------------
// 8. The selected expert's score gradient is predominantly negative early in
//    training on the single-cluster task.
// ---------------------------------------------------------------------------

Outcome criterion_8() {
    tucka::ToyTaskConfig task_cfg;
    task_cfg.n_clusters = 1;
    task_cfg.samples_per_cluster = 128;
    task_cfg.d = 16;
    task_cfg.n_classes = 2;
    task_cfg.separation = 6.0;
    task_cfg.seed = 1;
    const tucka::ToyTask task = tucka::generate_toy_task(task_cfg);

    tucka::TrainConfig cfg;
    cfg.adapter.r = 2;
    cfg.adapter.p = 1;
    cfg.adapter.t = 1;
    cfg.adapter.k = 5;
    cfg.lr = 0.1;
    cfg.batch_size = 16;
    cfg.init = tucka::CentroidInit::kaiming;
    cfg.init_a = 2.0;
    cfg.normalize_affinity = false;
    cfg.normalize_scores = false;
    cfg.seed = 2;

    const tucka::ProbeResult probe = tucka::gradient_sign_probe(task, cfg, 100);

    Outcome out;
    out.pass = probe.negative_fraction >= 0.8;
    out.detail = "dL/ds of the selected expert negative on " + fmt(probe.negative_fraction * 100) +
                 "% of the first 100 steps (want >= 80%)";
    return out;
}

// ---------------------------------------------------------------------------
// 9. Grouped experts match a single expert of equal-or-larger size on the
//    multi-cluster task.
// ---------------------------------------------------------------------------

[[nodiscard]] double median_accuracy(const tucka::ToyTaskConfig& task_cfg,
                                     tucka::TrainConfig cfg) {
    std::vector<double> acc;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        tucka::ToyTaskConfig tc = task_cfg;
        tc.seed = seed;
        cfg.seed = seed;
        const tucka::TrainResult result = tucka::train(tucka::generate_toy_task(tc), cfg);
        acc.push_back(result.final_accuracy);
    }
    std::sort(acc.begin(), acc.end());
    return acc[acc.size() / 2];
}

Outcome criterion_9() {
    const auto start = Clock::now();

    tucka::ToyTaskConfig task_cfg;
    task_cfg.n_clusters = 4;
    task_cfg.samples_per_cluster = 128;
    task_cfg.d = 16;
    task_cfg.n_classes = 2;
    task_cfg.separation = 6.0;

    // Raw affinities keep the within-group mixing weights spread out across
    // clusters; equal rank on both sides makes the parameter budgets match.
    tucka::TrainConfig multi;
    multi.adapter.r = 5;
    multi.adapter.p = 1;
    multi.adapter.t = 2;
    multi.adapter.k = 2;
    multi.adapter.alpha = 4.0;
    multi.lr = 0.5;
    multi.steps = 1500;
    multi.batch_size = 32;
    multi.normalize_affinity = false;

    tucka::TrainConfig single = multi;
    single.adapter.p = 2;
    single.adapter.t = 1;
    single.adapter.k = 1;

    tucka::AdapterConfig multi_params = multi.adapter;
    multi_params.d = task_cfg.d;
    multi_params.d_out = task_cfg.n_classes;
    tucka::AdapterConfig single_params = single.adapter;
    single_params.d = task_cfg.d;
    single_params.d_out = task_cfg.n_classes;
    const std::size_t multi_count = tucka::parameter_count(multi_params);
    const std::size_t single_count = tucka::parameter_count(single_params);

    const double multi_acc = median_accuracy(task_cfg, multi);
    const double single_acc = median_accuracy(task_cfg, single);

    const double secs = elapsed_seconds(start);
    Outcome out;
    out.pass = multi_acc >= single_acc - 0.02 && multi_count <= single_count && secs < 60.0;
    out.detail = "median accuracy k=2,t=2: " + fmt(multi_acc) + " (" +
                 std::to_string(multi_count) + " params) vs k=1,t=1: " + fmt(single_acc) + " (" +
                 std::to_string(single_count) + " params), want multi >= single - 0.02 at "
                 "equal-or-fewer params, " + fmt(secs) + "s";
    return out;
}

// ---------------------------------------------------------------------------

struct Criterion {
    int number;
    std::string summary;
    std::function<Outcome()> run;
};

const std::vector<Criterion> kCriteria = {
    {1, "reference and efficient forwards agree", criterion_1},
    {2, "parameter formula matches constructed sizes", criterion_2},
    {3, "analytic gradients match finite differences", criterion_3},
    {4, "surrogate dynamics collapse onto one expert", criterion_4},
    {5, "data-aware init balance under identical dynamics", criterion_5},
    {6, "balancing bias is zero-sum and selection-only", criterion_6},
    {7, "reflection product matches compact form", criterion_7},
    {8, "selected-expert score gradient is mostly negative", criterion_8},
    {9, "grouped experts hold up at fewer parameters", criterion_9},
};

int run_criterion(const Criterion& crit) {
    Outcome out;
    try {
        out = crit.run();
    } catch (const std::exception& e) {
        out.pass = false;
        out.detail = std::string("exception: ") + e.what();
    }
    std::cout << (out.pass ? "PASS" : "FAIL") << " criterion " << crit.number << ": "
              << crit.summary << " (" << out.detail << ")\n";
    return out.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc == 3 && std::string(argv[1]) == "--criterion") {
        const int wanted = std::atoi(argv[2]);
        for (const Criterion& crit : kCriteria)
            if (crit.number == wanted) return run_criterion(crit);
        std::cerr << "no criterion " << wanted << " (have 1.." << kCriteria.size() << ")\n";
        return 2;
    }
    if (argc != 1) {
        std::cerr << "usage: " << argv[0] << " [--criterion N]\n";
        return 2;
    }

    int failures = 0;
    for (const Criterion& crit : kCriteria) failures += run_criterion(crit);
    return failures == 0 ? 0 : 1;
}
