// Command-line front end: equivalence verification, parameter accounting,
// routing-dynamics simulation, toy training, gradient checking and centroid
// export. Every run writes report artifacts plus a manifest into --out.
//
// Exit codes: 0 success, 1 a verification-style check failed, 2 bad usage or
// unreadable/invalid inputs.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tucka/tucka.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr double kEquivalenceTolerance = 1e-10;
constexpr double kGradCheckTolerance = 1e-5;

struct OutputOptions {
    std::string out_dir = ".";
    std::string format = "json";  // json | csv for report files
};

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw tucka::IoError("cannot open " + path.string() + " for writing");
    os << text;
    if (!os) throw tucka::IoError("write failed for " + path.string());
}

// Reports are JSON by default; csv mode flattens the top level into
// key,value rows (nested values stay compact JSON).
void write_report(const OutputOptions& out, const ordered_json& report) {
    fs::create_directories(out.out_dir);
    if (out.format == "json") {
        write_text_file(fs::path(out.out_dir) / "report.json", report.dump(2) + "\n");
        return;
    }
    std::ostringstream os;
    os << "key,value\n";
    for (const auto& item : report.items()) {
        const json& v = item.value();
        if (v.is_string())
            os << item.key() << "," << v.get<std::string>() << "\n";
        else
            os << item.key() << "," << v.dump() << "\n";
    }
    write_text_file(fs::path(out.out_dir) / "report.csv", os.str());
}

void write_manifest(const OutputOptions& out, const std::string& subcommand,
                    const std::vector<std::string>& argv_copy,
                    std::chrono::steady_clock::time_point started) {
    const auto duration = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - started);
    ordered_json manifest;
    manifest["tool"] = "tucka";
    manifest["subcommand"] = subcommand;
    manifest["arguments"] = argv_copy;
    manifest["out_dir"] = fs::absolute(out.out_dir).string();
    // Wall-clock fields make the manifest the one artifact that is not
    // byte-identical across reruns; reports and traces are.
    manifest["duration_ms"] = duration.count();
    fs::create_directories(out.out_dir);
    write_text_file(fs::path(out.out_dir) / "manifest.json", manifest.dump(2) + "\n");
}

[[nodiscard]] double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

// ---------------------------------------------------------------------------
// verify-equivalence
// ---------------------------------------------------------------------------

// One random configuration: reference forward vs efficient forward vs one-hot
// sample routing, all on the same inputs. Returns the worst deviation.
[[nodiscard]] double equivalence_case(std::uint64_t case_seed, bool inject_fault) {
    tucka::Rng rng(case_seed);
    tucka::AdapterConfig cfg;
    cfg.d = 2 + rng.index(7);
    cfg.d_out = 1 + rng.index(5);
    cfg.r = 1 + rng.index(std::min<std::size_t>(4, cfg.d));
    cfg.p = 1 + rng.index(3);
    cfg.t = 1 + rng.index(3);
    cfg.k = 1 + rng.index(3);
    cfg.alpha = rng.uniform(0.1, 2.0);
    cfg.normalize = rng.index(2) == 0;

    tucka::TuckaAdapter adapter = tucka::init_adapter(cfg, rng.engine()());
    for (double& v : adapter.cores.data()) v = rng.uniform(-1.0, 1.0);
    tucka::Matrix w(cfg.d, cfg.d_out);
    for (double& v : w.data()) v = rng.uniform(-1.0, 1.0);
    tucka::BatchInput x(1 + rng.index(3), 1 + rng.index(2), cfg.d);
    for (double& v : x.values.data()) v = rng.uniform(-2.0, 2.0);

    const tucka::ExpertCentroids centroids =
        tucka::init_kaiming(cfg.k, cfg.t, cfg.d, 2.0, rng.engine()());
    const tucka::RoutingDecision decision =
        tucka::route(centroids, tucka::routing_feature(x));

    // The injected fault flips normalization on the efficient paths only, so
    // the reference disagrees and the check must go red.
    tucka::TuckaAdapter probed = adapter;
    if (inject_fault) probed.config.normalize = !probed.config.normalize;

    const tucka::Tensor3 naive = tucka::forward_naive(adapter, w, x, decision);
    const tucka::Tensor3 efficient = tucka::forward_efficient(probed, w, x, decision);
    double worst = max_abs_diff(naive.data(), efficient.data());

    tucka::Tensor3 weights(x.batch(), cfg.k, cfg.t);
    for (std::size_t b = 0; b < x.batch(); ++b)
        for (std::size_t j = 0; j < cfg.t; ++j)
            weights(b, decision.group, j) = decision.weights[j];
    const tucka::Tensor3 sampled = tucka::forward_sample_routing(probed, w, x, weights);
    return std::max(worst, max_abs_diff(naive.data(), sampled.data()));
}

int run_verify_equivalence(const OutputOptions& out, std::size_t count, std::uint64_t seed,
                           std::size_t jobs, bool inject_fault) {
    std::vector<double> diffs(count, 0.0);
    jobs = std::max<std::size_t>(1, std::min(jobs, count));

    // Cases are seeded by index, so the result is identical for any job count.
    std::vector<std::thread> workers;
    for (std::size_t worker = 0; worker < jobs; ++worker)
        workers.emplace_back([&, worker] {
            for (std::size_t i = worker; i < count; i += jobs)
                diffs[i] = equivalence_case(seed + i, inject_fault);
        });
    for (std::thread& t : workers) t.join();

    double worst = 0.0;
    for (double d : diffs) worst = std::max(worst, d);
    const bool passed = worst <= kEquivalenceTolerance;

    ordered_json report;
    report["count"] = count;
    report["seed"] = seed;
    report["tolerance"] = kEquivalenceTolerance;
    report["max_abs_diff"] = worst;
    report["fault_injected"] = inject_fault;
    report["passed"] = passed;
    write_report(out, report);

    std::cout << "verify-equivalence: " << count << " cases, max |diff| = " << worst
              << " (tolerance " << kEquivalenceTolerance << ") -> "
              << (passed ? "pass" : "FAIL") << "\n";
    return passed ? 0 : 1;
}

// ---------------------------------------------------------------------------
// param-count
// ---------------------------------------------------------------------------

int run_param_count(const OutputOptions& out, const tucka::AdapterConfig& cfg) {
    cfg.validate();
    const std::size_t n = tucka::parameter_count(cfg);

    ordered_json report;
    report["d"] = cfg.d;
    report["r"] = cfg.r;
    report["p"] = cfg.p;
    report["t"] = cfg.t;
    report["k"] = cfg.k;
    report["parameter_count"] = n;
    write_report(out, report);

    std::cout << "param-count: d=" << cfg.d << " r=" << cfg.r << " p=" << cfg.p
              << " t=" << cfg.t << " k=" << cfg.k << " -> " << n << " trainable parameters\n";
    return 0;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

[[nodiscard]] tucka::SimConfig load_sim_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw tucka::IoError("cannot open config " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw tucka::ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
    return tucka::parse_sim_config(j);
}

int run_simulate(const OutputOptions& out, const std::string& config_path,
                 const std::vector<double>& sweep_means) {
    tucka::SimConfig cfg = load_sim_config(config_path);
    fs::create_directories(out.out_dir);

    if (!sweep_means.empty()) {
        ordered_json sweep = ordered_json::array();
        std::cout << "simulate sweep over mean_scale:\n";
        for (double mean : sweep_means) {
            tucka::SimConfig point = cfg;
            point.mean_scale = mean;
            const tucka::SimRun run = tucka::run_sim(point);
            ordered_json row;
            row["mean_scale"] = mean;
            row["max_load_fraction"] = run.report.max_load_fraction;
            row["load_entropy_normalized"] = run.report.load_entropy_normalized;
            row["degenerate_tie"] = run.report.degenerate_tie;
            sweep.push_back(row);
            std::cout << "  mean_scale=" << mean
                      << " max_load=" << run.report.max_load_fraction
                      << " entropy=" << run.report.load_entropy_normalized << "\n";
        }
        write_text_file(fs::path(out.out_dir) / "sweep.json", sweep.dump(2) + "\n");
        return 0;
    }

    const tucka::SimRun run = tucka::run_sim(cfg);
    write_report(out, tucka::sim_report_to_json(run));
    std::ostringstream trace;
    tucka::write_sim_trace_csv(run.trace, trace);
    write_text_file(fs::path(out.out_dir) / "trace.csv", trace.str());

    std::cout << "simulate: " << cfg.n_batches << " batches, init " << tucka::to_string(cfg.init)
              << ", max_load=" << run.report.max_load_fraction
              << ", entropy=" << run.report.load_entropy_normalized
              << (run.report.degenerate_tie ? " (degenerate tie seen)" : "") << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainCliOptions {
    tucka::ToyTaskConfig task;
    tucka::TrainConfig train;
    std::string init = "kaiming";
    bool raw_scores = false;
    bool no_affinity_norm = false;
};

int run_train(const OutputOptions& out, TrainCliOptions opts) {
    if (opts.init != "dai" && opts.init != "kaiming")
        throw tucka::ConfigError("unknown init mode '" + opts.init + "' (want kaiming or dai)");
    opts.train.init = opts.init == "dai" ? tucka::CentroidInit::dai : tucka::CentroidInit::kaiming;
    opts.train.normalize_scores = !opts.raw_scores;
    opts.train.normalize_affinity = !opts.no_affinity_norm;

    const tucka::ToyTask task = tucka::generate_toy_task(opts.task);
    const tucka::TrainResult result = tucka::train(task, opts.train);

    std::size_t negative = 0;
    for (double v : result.probe_d_scores) negative += v < 0.0 ? 1 : 0;

    ordered_json report;
    report["task"] = {{"n_clusters", opts.task.n_clusters},
                      {"samples_per_cluster", opts.task.samples_per_cluster},
                      {"d", opts.task.d},
                      {"n_classes", opts.task.n_classes},
                      {"separation", opts.task.separation},
                      {"seed", opts.task.seed}};
    report["adapter"] = {{"r", opts.train.adapter.r},
                         {"p", opts.train.adapter.p},
                         {"t", opts.train.adapter.t},
                         {"k", opts.train.adapter.k},
                         {"alpha", opts.train.adapter.alpha}};
    report["steps"] = opts.train.steps;
    report["batch_size"] = opts.train.batch_size;
    report["lr"] = opts.train.lr;
    report["init"] = opts.init;
    report["normalize_scores"] = opts.train.normalize_scores;
    report["normalize_affinity"] = opts.train.normalize_affinity;
    report["seed"] = opts.train.seed;
    report["initial_loss"] = result.initial_loss;
    report["final_loss"] = result.final_loss;
    report["loss_decrease_fraction"] =
        result.initial_loss > 0.0 ? 1.0 - result.final_loss / result.initial_loss : 0.0;
    report["final_accuracy"] = result.final_accuracy;
    report["gradient_sign_negative_fraction"] =
        result.probe_d_scores.empty()
            ? 0.0
            : static_cast<double>(negative) / static_cast<double>(result.probe_d_scores.size());
    write_report(out, report);

    std::ostringstream trace;
    tucka::write_train_trace_csv(result.trace, trace);
    fs::create_directories(out.out_dir);
    write_text_file(fs::path(out.out_dir) / "trace.csv", trace.str());

    std::cout << "train: loss " << result.initial_loss << " -> " << result.final_loss
              << ", accuracy " << result.final_accuracy << " after " << opts.train.steps
              << " steps\n";
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

int run_gradcheck(const OutputOptions& out, std::size_t count, std::uint64_t seed) {
    const tucka::GradCheckReport result = tucka::gradient_check_sweep(count, seed);
    const bool passed = result.max_rel_error <= kGradCheckTolerance;

    ordered_json report;
    report["count"] = count;
    report["seed"] = seed;
    report["tolerance"] = kGradCheckTolerance;
    report["max_rel_error"] = result.max_rel_error;
    report["checked_entries"] = result.checked_entries;
    report["passed"] = passed;
    write_report(out, report);

    std::cout << "gradcheck: " << count << " configurations, " << result.checked_entries
              << " entries, max rel err = " << result.max_rel_error << " (tolerance "
              << kGradCheckTolerance << ") -> " << (passed ? "pass" : "FAIL") << "\n";
    return passed ? 0 : 1;
}

// ---------------------------------------------------------------------------
// export-centroids
// ---------------------------------------------------------------------------

int run_export_centroids(const OutputOptions& out, const std::string& init, std::size_t k,
                         std::size_t t, std::size_t d, double a, std::uint64_t seed) {
    tucka::ExpertCentroids centroids;
    if (init == "kaiming") {
        centroids = tucka::init_kaiming(k, t, d, a, seed);
    } else if (init == "dai") {
        // Standard-normal probe batch stands in for real activations.
        tucka::Rng rng(seed);
        tucka::BatchInput probe(16, 1, d);
        for (double& v : probe.values.data()) v = rng.gaussian();
        centroids = tucka::init_dai(k, t, probe, a, seed + 1);
    } else {
        throw tucka::ConfigError("unknown init mode '" + init + "' (want kaiming or dai)");
    }

    fs::create_directories(out.out_dir);
    std::ostringstream csv;
    tucka::write_centroids_csv(centroids, csv);
    write_text_file(fs::path(out.out_dir) / "centroids.csv", csv.str());

    ordered_json report;
    report["init"] = init;
    report["k"] = k;
    report["t"] = t;
    report["d"] = d;
    report["a"] = a;
    report["seed"] = seed;
    report["rows"] = centroids.total();
    write_report(out, report);

    std::cout << "export-centroids: wrote " << centroids.total() << " rows (" << init
              << ", d=" << d << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tucker-decomposed grouped-expert adapters: verification and analysis tools"};
    app.require_subcommand(1);

    OutputOptions out;
    app.add_option("--out", out.out_dir, "Directory for report artifacts")
        ->capture_default_str();
    app.add_option("--format", out.format, "Report format")
        ->check(CLI::IsMember({"json", "csv"}))
        ->capture_default_str();

    // verify-equivalence
    std::size_t verify_count = 128, verify_jobs = 1;
    std::uint64_t verify_seed = 0;
    bool inject_fault = false;
    CLI::App* verify = app.add_subcommand(
        "verify-equivalence", "Compare reference, efficient and sample-routing forwards");
    verify->add_option("--count", verify_count, "Random configurations to test")
        ->capture_default_str();
    verify->add_option("--seed", verify_seed, "Base seed")->capture_default_str();
    verify->add_option("--jobs", verify_jobs, "Worker threads")->capture_default_str();
    verify->add_flag("--inject-fault", inject_fault,
                     "Flip normalization in one path; the check must then fail");

    // param-count
    tucka::AdapterConfig pc_cfg;
    pc_cfg.d = 768;
    pc_cfg.d_out = 768;
    pc_cfg.r = 2;
    pc_cfg.p = 2;
    pc_cfg.t = 3;
    pc_cfg.k = 4;
    CLI::App* param = app.add_subcommand("param-count", "Trainable-parameter accounting");
    param->add_option("--d", pc_cfg.d, "Model width")->capture_default_str();
    param->add_option("--r", pc_cfg.r, "Tucker rank")->capture_default_str();
    param->add_option("--p", pc_cfg.p, "Core count per group")->capture_default_str();
    param->add_option("--t", pc_cfg.t, "Experts per group")->capture_default_str();
    param->add_option("--k", pc_cfg.k, "Groups")->capture_default_str();

    // simulate
    std::string sim_config_path;
    std::string sweep_spec;
    CLI::App* simulate = app.add_subcommand("simulate", "Routing-dynamics simulation");
    simulate->add_option("--config", sim_config_path, "Simulation config JSON")->required();
    simulate->add_option("--sweep-mean", sweep_spec,
                         "Comma-separated mean_scale values to sweep instead of one run");

    // train
    TrainCliOptions train_opts;
    train_opts.task.n_clusters = 1;
    train_opts.task.samples_per_cluster = 128;
    train_opts.task.d = 16;
    train_opts.task.n_classes = 2;
    train_opts.train.adapter.r = 2;
    train_opts.train.adapter.p = 1;
    train_opts.train.adapter.t = 1;
    train_opts.train.adapter.k = 2;
    train_opts.train.lr = 0.5;
    train_opts.train.steps = 150;
    train_opts.train.batch_size = 32;
    CLI::App* train_cmd = app.add_subcommand("train", "Toy trainer with manual gradients");
    train_cmd->add_option("--clusters", train_opts.task.n_clusters, "Task clusters")
        ->capture_default_str();
    train_cmd
        ->add_option("--samples-per-cluster", train_opts.task.samples_per_cluster,
                     "Samples per cluster")
        ->capture_default_str();
    train_cmd->add_option("--d", train_opts.task.d, "Feature width")->capture_default_str();
    train_cmd->add_option("--classes", train_opts.task.n_classes, "Label classes")
        ->capture_default_str();
    train_cmd->add_option("--separation", train_opts.task.separation, "Cluster separation")
        ->capture_default_str();
    train_cmd->add_option("--task-seed", train_opts.task.seed, "Task seed")
        ->capture_default_str();
    train_cmd->add_option("--r", train_opts.train.adapter.r, "Tucker rank")
        ->capture_default_str();
    train_cmd->add_option("--p", train_opts.train.adapter.p, "Cores per group")
        ->capture_default_str();
    train_cmd->add_option("--t", train_opts.train.adapter.t, "Experts per group")
        ->capture_default_str();
    train_cmd->add_option("--k", train_opts.train.adapter.k, "Groups")->capture_default_str();
    train_cmd->add_option("--alpha", train_opts.train.adapter.alpha, "Adapter scale")
        ->capture_default_str();
    train_cmd->add_option("--lr", train_opts.train.lr, "Learning rate")->capture_default_str();
    train_cmd->add_option("--steps", train_opts.train.steps, "SGD steps")
        ->capture_default_str();
    train_cmd->add_option("--batch-size", train_opts.train.batch_size, "Batch size")
        ->capture_default_str();
    train_cmd->add_option("--init", train_opts.init, "Centroid init: kaiming or dai")
        ->capture_default_str();
    train_cmd->add_option("--init-a", train_opts.train.init_a,
                          "Init spread (kaiming fan or dai radius)")
        ->capture_default_str();
    train_cmd->add_flag("--raw-scores", train_opts.raw_scores,
                        "Skip unit-sum weight normalization");
    train_cmd->add_flag("--no-affinity-norm", train_opts.no_affinity_norm,
                        "Skip affinity L2 normalization");
    train_cmd->add_option("--seed", train_opts.train.seed, "Training seed")
        ->capture_default_str();

    // gradcheck
    std::size_t gc_count = 20;
    std::uint64_t gc_seed = 2024;
    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "Analytic vs finite-difference gradients");
    gradcheck->add_option("--count", gc_count, "Random configurations")->capture_default_str();
    gradcheck->add_option("--seed", gc_seed, "Base seed")->capture_default_str();

    // export-centroids
    std::string ec_init = "kaiming";
    std::size_t ec_k = 4, ec_t = 3, ec_d = 64;
    double ec_a = 2.0;
    std::uint64_t ec_seed = 0;
    CLI::App* export_cmd =
        app.add_subcommand("export-centroids", "Write initialized centroids as CSV");
    export_cmd->add_option("--init", ec_init, "kaiming or dai")->capture_default_str();
    export_cmd->add_option("--k", ec_k, "Groups")->capture_default_str();
    export_cmd->add_option("--t", ec_t, "Experts per group")->capture_default_str();
    export_cmd->add_option("--d", ec_d, "Feature width")->capture_default_str();
    export_cmd->add_option("--a", ec_a, "Init spread")->capture_default_str();
    export_cmd->add_option("--seed", ec_seed, "Seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);  // --help and friends
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    const std::vector<std::string> argv_copy(argv + 1, argv + argc);
    const auto started = std::chrono::steady_clock::now();

    try {
        int code = 0;
        std::string name;
        if (verify->parsed()) {
            name = "verify-equivalence";
            code = run_verify_equivalence(out, verify_count, verify_seed, verify_jobs,
                                          inject_fault);
        } else if (param->parsed()) {
            name = "param-count";
            code = run_param_count(out, pc_cfg);
        } else if (simulate->parsed()) {
            name = "simulate";
            std::vector<double> means;
            if (!sweep_spec.empty()) {
                std::stringstream ss(sweep_spec);
                std::string token;
                while (std::getline(ss, token, ',')) means.push_back(std::stod(token));
            }
            code = run_simulate(out, sim_config_path, means);
        } else if (train_cmd->parsed()) {
            name = "train";
            code = run_train(out, train_opts);
        } else if (gradcheck->parsed()) {
            name = "gradcheck";
            code = run_gradcheck(out, gc_count, gc_seed);
        } else if (export_cmd->parsed()) {
            name = "export-centroids";
            code = run_export_centroids(out, ec_init, ec_k, ec_t, ec_d, ec_a, ec_seed);
        }
        write_manifest(out, name, argv_copy, started);
        return code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
