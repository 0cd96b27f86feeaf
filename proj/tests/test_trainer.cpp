#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "testutil.hpp"
#include "tucka/adapter.hpp"
#include "tucka/errors.hpp"
#include "tucka/rng.hpp"
#include "tucka/routing.hpp"
#include "tucka/trainer.hpp"

using namespace tucka;

namespace {

ToyTaskConfig small_task_config() {
    ToyTaskConfig cfg;
    cfg.n_clusters = 2;
    cfg.samples_per_cluster = 32;
    cfg.d = 8;
    cfg.n_classes = 4;
    cfg.separation = 6.0;
    cfg.seed = 3;
    return cfg;
}

}  // namespace

TEST_CASE("toy task clusters are far apart and labels are in range") {
    const ToyTaskConfig cfg = small_task_config();
    const ToyTask task = generate_toy_task(cfg);
    REQUIRE(task.size() == 64);

    // Empirical cluster means should sit ~separation*sqrt(2) apart.
    std::vector<double> mean0(cfg.d, 0.0), mean1(cfg.d, 0.0);
    for (std::size_t i = 0; i < task.size(); ++i) {
        const std::size_t c = task.cluster_of[i];
        REQUIRE(c == i / cfg.samples_per_cluster);
        REQUIRE(task.labels[i] < cfg.n_classes);
        for (std::size_t q = 0; q < cfg.d; ++q)
            (c == 0 ? mean0 : mean1)[q] += task.features(i, q);
    }
    double dist = 0.0;
    for (std::size_t q = 0; q < cfg.d; ++q) {
        mean0[q] /= 32.0;
        mean1[q] /= 32.0;
        dist += (mean0[q] - mean1[q]) * (mean0[q] - mean1[q]);
    }
    dist = std::sqrt(dist);
    CHECK(dist > 6.0);
    CHECK(dist < 11.0);
}

TEST_CASE("toy task validation rejects unusable settings") {
    ToyTaskConfig cfg = small_task_config();
    cfg.separation = 1.0;  // below the 4-sigma separability floor
    CHECK_THROWS_AS(generate_toy_task(cfg), ConfigError);

    cfg = small_task_config();
    cfg.n_clusters = 9;  // wants more orthogonal centers than dimensions
    CHECK_THROWS_AS(generate_toy_task(cfg), ConfigError);

    cfg = small_task_config();
    cfg.n_classes = 1;
    CHECK_THROWS_AS(generate_toy_task(cfg), ConfigError);
}

TEST_CASE("softmax cross-entropy matches a hand example") {
    Tensor3 logits(1, 1, 2);
    logits(0, 0, 0) = 0.0;
    logits(0, 0, 1) = std::log(3.0);
    const LossGrad lg = softmax_xent(logits, {1});

    CHECK(lg.loss == Catch::Approx(-std::log(0.75)));
    CHECK(lg.accuracy == 1.0);
    CHECK(lg.dlogits(0, 0, 0) == Catch::Approx(0.25));
    CHECK(lg.dlogits(0, 0, 1) == Catch::Approx(-0.25));

    CHECK_THROWS_AS(softmax_xent(logits, {1, 0}), ShapeError);
    CHECK_THROWS_AS(softmax_xent(logits, {5}), ConfigError);
}

TEST_CASE("cached model forward equals the library forward path") {
    Rng rng(41);
    for (int rep = 0; rep < 25; ++rep) {
        AdapterConfig cfg;
        cfg.d = 3 + rng.index(5);
        cfg.d_out = 2 + rng.index(3);
        cfg.r = 1 + rng.index(std::min<std::size_t>(3, cfg.d));
        cfg.p = 1 + rng.index(2);
        cfg.t = 1 + rng.index(3);
        cfg.k = 1 + rng.index(3);
        cfg.alpha = rng.uniform(0.2, 1.8);
        cfg.normalize = rng.index(2) == 0;

        ToyModel model;
        model.adapter = init_adapter(cfg, rng.engine()());
        testutil::fill_uniform(model.adapter.cores.data(), rng);
        model.w = Matrix(cfg.d, cfg.d_out);
        testutil::fill_uniform(model.w.data(), rng);
        model.centroids = init_kaiming(cfg.k, cfg.t, cfg.d, 2.0, rng.engine()());
        model.normalize_affinity = rng.index(2) == 0;
        model.normalize_scores = true;  // the public forward requires unit-sum weights

        BatchInput x(1 + rng.index(3), 1 + rng.index(2), cfg.d);
        testutil::fill_uniform(x.values.data(), rng, -2.0, 2.0);

        const ForwardCache cache = model_forward(model, x);
        const RoutingDecision decision =
            route(model.centroids, routing_feature(x), model.normalize_affinity);
        REQUIRE(cache.group == decision.group);

        const Tensor3 want = forward_efficient(model.adapter, model.w, x, decision);
        CHECK(cache.logits == want);
    }
}

TEST_CASE("analytic gradients match central differences across configurations") {
    // Randomized sweep over adapter shapes and both normalization flags;
    // every trainable entry is compared.
    const GradCheckReport report = gradient_check_sweep(20, 2024);
    INFO("worst relative error " << report.max_rel_error << " over "
                                 << report.checked_entries << " entries");
    CHECK(report.checked_entries > 500);
    CHECK(report.max_rel_error <= 1e-5);
}

TEST_CASE("zero cores confine the gradient to the selected group's core") {
    AdapterConfig cfg;
    cfg.d = 6;
    cfg.d_out = 3;
    cfg.r = 2;
    cfg.p = 2;
    cfg.t = 2;
    cfg.k = 3;
    cfg.normalize = false;  // finite differences stay valid at the zero point

    ToyModel model;
    model.adapter = init_adapter(cfg, 4);
    model.w = Matrix(cfg.d, cfg.d_out);
    model.centroids = init_kaiming(cfg.k, cfg.t, cfg.d, 2.0, 5);
    Rng rng(6);
    testutil::fill_uniform(model.w.data(), rng);

    BatchInput x(3, 1, cfg.d);
    testutil::fill_uniform(x.values.data(), rng, -2.0, 2.0);
    const std::vector<std::size_t> labels = {0, 2, 1};

    const ForwardCache cache = model_forward(model, x);
    const LossGrad lg = softmax_xent(cache.logits, labels);
    const Gradients grads = model_backward(model, x, cache, lg.dlogits);

    // Factor and centroid gradients all pass through the zero core stack.
    for (double v : grads.factor_c.data()) CHECK(v == 0.0);
    for (double v : grads.factor_u.data()) CHECK(v == 0.0);
    for (double v : grads.centroids.data()) CHECK(v == 0.0);

    double selected_mass = 0.0, other_mass = 0.0;
    for (std::size_t g = 0; g < cfg.k; ++g) {
        const Tensor3 slice_grad = [&] {
            Tensor3 s(cfg.p, cfg.r, cfg.r);
            const std::size_t block = cfg.p * cfg.r * cfg.r;
            std::copy(grads.cores.data().begin() + static_cast<std::ptrdiff_t>(g * block),
                      grads.cores.data().begin() + static_cast<std::ptrdiff_t>((g + 1) * block),
                      s.data().begin());
            return s;
        }();
        for (double v : slice_grad.data())
            (g == cache.group ? selected_mass : other_mass) += std::abs(v);
    }
    CHECK(other_mass == 0.0);
    CHECK(selected_mass > 0.0);

    // Finite differences agree, including all those exact zeros.
    const GradCheckReport report = gradient_check(model, x, labels);
    CHECK(report.max_rel_error <= 1e-5);
}

TEST_CASE("fresh model logits equal the frozen base layer") {
    const ToyTask task = generate_toy_task(small_task_config());
    TrainConfig cfg;
    cfg.adapter.r = 2;
    cfg.adapter.p = 1;
    cfg.adapter.t = 2;
    cfg.adapter.k = 2;
    cfg.seed = 9;

    const ToyModel model = make_toy_model(task, cfg, nullptr);
    BatchInput x(4, 1, task.config.d);
    for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t c = 0; c < task.config.d; ++c)
            x.values(b, 0, c) = task.features(b, c);

    const ForwardCache cache = model_forward(model, x);
    Tensor3 want(4, 1, task.config.n_classes);
    for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t c = 0; c < task.config.d; ++c)
            for (std::size_t o = 0; o < task.config.n_classes; ++o)
                want(b, 0, o) += x.values(b, 0, c) * model.w(c, o);

    CHECK(testutil::max_abs_diff(cache.logits.data(), want.data()) < 1e-12);
}

TEST_CASE("zero learning rate leaves the model untouched") {
    const ToyTask task = generate_toy_task(small_task_config());
    TrainConfig cfg;
    cfg.adapter.r = 2;
    cfg.adapter.p = 1;
    cfg.adapter.t = 1;
    cfg.adapter.k = 2;
    cfg.lr = 0.0;
    cfg.steps = 10;
    cfg.batch_size = 8;
    cfg.seed = 12;

    const TrainResult result = train(task, cfg);
    const ToyModel fresh = make_toy_model(task, cfg, nullptr);

    for (double v : result.model.adapter.cores.data()) CHECK(v == 0.0);
    CHECK(result.model.adapter.factor_u == fresh.adapter.factor_u);
    CHECK(result.model.adapter.factor_c == fresh.adapter.factor_c);
    CHECK(result.model.centroids.vectors == fresh.centroids.vectors);
}

TEST_CASE("training reduces the loss on a single separable cluster") {
    ToyTaskConfig task_cfg;
    task_cfg.n_clusters = 1;
    task_cfg.samples_per_cluster = 128;
    task_cfg.d = 16;
    task_cfg.n_classes = 2;
    task_cfg.seed = 7;
    const ToyTask task = generate_toy_task(task_cfg);

    TrainConfig cfg;
    cfg.adapter.r = 2;
    cfg.adapter.p = 1;
    cfg.adapter.t = 1;
    cfg.adapter.k = 1;
    // Factor normalization caps the adaptation magnitude, so alpha sets the
    // attainable logit scale and with it the cross-entropy floor.
    cfg.adapter.alpha = 8.0;
    cfg.lr = 0.5;
    cfg.steps = 200;
    cfg.batch_size = 32;
    cfg.normalize_scores = false;  // one expert per group: raw scores keep the gradient alive
    cfg.seed = 21;

    const TrainResult result = train(task, cfg);
    INFO("loss " << result.initial_loss << " -> " << result.final_loss);
    CHECK(result.final_loss < 0.5 * result.initial_loss);
    CHECK(result.final_accuracy > 0.75);
}

TEST_CASE("dai training init routes the first batch to the copied expert") {
    const ToyTask task = generate_toy_task(small_task_config());
    TrainConfig cfg;
    cfg.adapter.r = 1;
    cfg.adapter.p = 1;
    cfg.adapter.t = 1;
    cfg.adapter.k = 3;
    cfg.init = CentroidInit::dai;
    cfg.init_a = 0.0;  // all experts identical to the probe feature
    cfg.steps = 1;
    cfg.batch_size = 8;
    cfg.seed = 19;

    const TrainResult result = train(task, cfg);
    // Every expert ties exactly, so the lowest index wins.
    CHECK(result.trace[0].selected_group == 0);
}

TEST_CASE("gradient sign probe reports finite per-step score gradients") {
    ToyTaskConfig task_cfg;
    task_cfg.n_clusters = 1;
    task_cfg.samples_per_cluster = 64;
    task_cfg.d = 12;
    task_cfg.n_classes = 2;
    task_cfg.seed = 23;
    const ToyTask task = generate_toy_task(task_cfg);

    TrainConfig cfg;
    cfg.adapter.r = 2;
    cfg.adapter.p = 1;
    cfg.adapter.t = 1;
    cfg.adapter.k = 4;
    cfg.lr = 0.3;
    cfg.batch_size = 16;
    cfg.normalize_affinity = false;
    cfg.normalize_scores = false;
    cfg.seed = 29;

    const ProbeResult probe = gradient_sign_probe(task, cfg, 60);
    REQUIRE(probe.d_scores.size() == 60);
    CHECK(probe.negative_fraction >= 0.0);
    CHECK(probe.negative_fraction <= 1.0);

    bool any_nonzero = false;
    for (double v : probe.d_scores) {
        REQUIRE(std::isfinite(v));
        any_nonzero = any_nonzero || v != 0.0;
    }
    CHECK(any_nonzero);
}

TEST_CASE("two stacked layers reuse the first layer's routing decision") {
    const std::size_t d = 4, hidden = 4, d_out = 3;
    AdapterConfig cfg;
    cfg.d = d;
    cfg.d_out = hidden;
    cfg.r = 2;
    cfg.p = 1;
    cfg.t = 1;
    cfg.k = 2;
    cfg.normalize = false;

    TwoLayerToyModel model;
    Rng rng(31);
    model.first = init_adapter(cfg, 1);
    testutil::fill_uniform(model.first.cores.data(), rng);
    cfg.d = hidden;
    cfg.d_out = d_out;
    model.second = init_adapter(cfg, 2);
    testutil::fill_uniform(model.second.cores.data(), rng);

    model.w_first = Matrix(d, hidden);
    model.w_second = Matrix(hidden, d_out);
    testutil::fill_uniform(model.w_first.data(), rng);
    testutil::fill_uniform(model.w_second.data(), rng);

    // Group 1 wins on the raw input; make sure the hidden activations would
    // route differently so sharing is observable.
    model.centroids = ExpertCentroids(2, 1, d);
    BatchInput x(2, 1, d);
    testutil::fill_uniform(x.values.data(), rng, 0.5, 1.5);
    const std::vector<double> h = routing_feature(x);
    for (std::size_t c = 0; c < d; ++c) {
        model.centroids.vectors(0, c) = -h[c];
        model.centroids.vectors(1, c) = h[c];
    }

    const RoutingDecision shared = route(model.centroids, h, model.normalize_affinity);
    REQUIRE(shared.group == 1);

    const Tensor3 got = forward_two_layer(model, x);
    const Tensor3 hidden_out = forward_efficient(model.first, model.w_first, x, shared);
    const Tensor3 want =
        forward_efficient(model.second, model.w_second, BatchInput(hidden_out), shared);
    CHECK(got == want);

    // Re-routing on the hidden activations picks some group on its own; the
    // stacked forward must not do that implicitly.
    const RoutingDecision rerouted =
        route(model.centroids, routing_feature(BatchInput(hidden_out)));
    if (rerouted.group != shared.group) {
        const Tensor3 different =
            forward_efficient(model.second, model.w_second, BatchInput(hidden_out), rerouted);
        CHECK(testutil::max_abs_diff(different.data(), want.data()) > 0.0);
    }

    AdapterConfig mismatched = model.second.config;
    mismatched.k = 3;
    TwoLayerToyModel bad = model;
    bad.second = init_adapter(mismatched, 3);
    CHECK_THROWS_AS(forward_two_layer(bad, x), ConfigError);
}
