// ctxdiff: conditional diffusion with a context-aware forward process on
// small synthetic datasets, plus the numerical verification suite.
//
// Subcommands: gen-data, train, sample, nelbo, verify.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctxdiff/config.hpp"
#include "ctxdiff/hash.hpp"
#include "ctxdiff/manifest.hpp"
#include "ctxdiff/svg.hpp"
#include "ctxdiff/verify.hpp"
#include "ctxdiff/version.hpp"

namespace fs = std::filesystem;
using namespace ctxdiff;

namespace {

struct CommonOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
    int threads = 1;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required) {
    auto* c = cmd->add_option("--config", opts.config_path, "JSON config file");
    if (config_required) c->required();
    cmd->add_option("--seed", opts.seed, "root seed (overrides config seeds)");
    cmd->add_option("--out", opts.out, "output directory");
    cmd->add_option("--threads", opts.threads, "worker threads for shardable work");
}

std::string out_path(const CommonOpts& opts, const std::string& name) {
    fs::create_directories(opts.out);
    return (fs::path(opts.out) / name).string();
}

void write_metrics_csv(const std::string& path, const TrainMetrics& metrics) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os.precision(17);
    os << "step,loss,nelbo\n";
    for (const auto& row : metrics.rows) {
        os << row.step << "," << row.loss << ",";
        if (row.nelbo_bits) os << *row.nelbo_bits;
        os << "\n";
    }
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const CommonOpts& opts) {
    Config cfg = parse_config(load_json_file(opts.config_path), {"dataset"});
    if (opts.seed) {
        cfg.dataset.seed = *opts.seed;
        cfg.resolved["dataset"]["seed"] = *opts.seed;
    }
    Dataset ds = generate_dataset(cfg.dataset);
    const std::string csv = out_path(opts, fs::path(cfg.dataset_path).filename().string());
    write_dataset_csv(csv, ds);

    RunManifest man;
    man.command = "gen-data";
    man.config = cfg.resolved;
    man.root_seed = cfg.dataset.seed;
    man.dataset_fingerprint = sha256_file(csv);
    man.add_output(csv);
    man.write(out_path(opts, "manifest.json"));
    std::cout << "wrote " << csv << " (" << ds.records.size() << " records, "
              << man.dataset_fingerprint.substr(0, 12) << ")\n";
    return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& data_flag) {
    Config cfg = parse_config(load_json_file(opts.config_path),
                              {"dataset", "schedule", "adapter", "denoiser", "train"});
    if (opts.seed) {
        cfg.train.seed = *opts.seed;
        cfg.resolved["train"]["seed"] = *opts.seed;
    }
    const std::string data_path = data_flag.empty() ? cfg.dataset_path : data_flag;
    if (!fs::exists(data_path)) {
        std::cerr << "error: dataset file not found at 'dataset.path' (" << data_path
                  << "); run gen-data first or pass --data\n";
        return 2;
    }
    Dataset ds = read_dataset_csv(data_path);
    if (ds.dim != cfg.denoiser.dim) {
        std::cerr << "error: dataset dimension " << ds.dim << " does not match config dimension "
                  << cfg.denoiser.dim << "\n";
        return 2;
    }

    const std::string chash = config_hash(cfg.resolved);
    TrainMetrics metrics;
    TrainState state = [&] {
        try {
            return train(cfg.train, ds, &metrics);
        } catch (const NonFiniteLossError& e) {
            std::cerr << "error: training diverged: " << e.what() << "\n";
            std::exit(3);
        }
    }();

    const std::string ckpt = out_path(opts, "checkpoint.bin");
    save_train_checkpoint(ckpt, state, chash);
    const std::string mcsv = out_path(opts, "metrics.csv");
    write_metrics_csv(mcsv, metrics);

    RunManifest man;
    man.command = "train";
    man.config = cfg.resolved;
    man.root_seed = cfg.train.seed;
    man.dataset_fingerprint = sha256_file(data_path);
    man.add_output(ckpt);
    man.add_output(mcsv);
    man.checkpoint_hash = sha256_file(ckpt);
    man.write(out_path(opts, "manifest.json"));
    const double final_loss = metrics.rows.empty() ? 0.0 : metrics.rows.back().loss;
    std::cout << "trained " << state.step << " steps, final loss " << final_loss << ", checkpoint "
              << man.checkpoint_hash.substr(0, 12) << "\n";
    return 0;
}

struct LoadedRun {
    Config cfg;
    TrainState state;
    std::string config_hash_hex;
};

LoadedRun load_run(const std::string& run_dir) {
    const std::string man_path = (fs::path(run_dir) / "manifest.json").string();
    const std::string ckpt_path = (fs::path(run_dir) / "checkpoint.bin").string();
    json man = load_json_file(man_path);
    LoadedRun run{parse_config(man, {"schedule", "adapter", "denoiser", "train"}), {}, {}};
    run.config_hash_hex = config_hash(run.cfg.resolved);
    run.state = load_train_checkpoint(ckpt_path, run.cfg.train, run.config_hash_hex);
    return run;
}

int cmd_sample(const CommonOpts& opts, const std::string& run_dir, bool svg,
               const std::string& mode_flag, int stride_flag, double eta_flag, long n_flag) {
    LoadedRun run = load_run(run_dir);
    SamplerSection sa = run.cfg.sampler;
    if (!mode_flag.empty()) sa.mode = sampler_mode_from_string(mode_flag);
    if (stride_flag > 0) sa.ddim_stride = stride_flag;
    if (eta_flag >= 0.0) sa.eta = eta_flag;
    if (n_flag >= 0) sa.n_per_class = n_flag;
    if (opts.seed) sa.seed = *opts.seed;

    json resolved = run.cfg.resolved;
    resolved["sampler"] =
        json{{"mode", to_string(sa.mode)},   {"ddim_stride", sa.ddim_stride},
             {"eta", sa.eta},                {"seed", sa.seed},
             {"n_per_class", sa.n_per_class}, {"guidance_scale", sa.guidance_scale},
             {"clamp_x0", sa.clamp_x0},      {"clamp_lo", sa.clamp_lo},
             {"clamp_hi", sa.clamp_hi}};

    const NoiseSchedule& sched = run.state.schedule;
    SamplerConfig scfg;
    scfg.mode = sa.mode;
    scfg.ddim_stride = sa.ddim_stride;
    scfg.eta = sa.eta;
    scfg.guidance_scale = sa.guidance_scale;
    if (sa.clamp_x0) scfg.x0_clamp = {sa.clamp_lo, sa.clamp_hi};

    const int classes = run.cfg.denoiser.num_classes;
    std::vector<Vec> points;
    std::vector<int> point_class;
    for (int c = 0; c < classes; ++c) {
        scfg.seed = splitmix64(sa.seed ^ static_cast<std::uint64_t>(c + 1));
        std::vector<Vec> got = sample_chain(static_cast<int>(sa.n_per_class), ConditionValue{c, {}},
                                            run.state.denoiser.fn(), run.state.adapter, sched, scfg);
        for (auto& v : got) {
            points.push_back(std::move(v));
            point_class.push_back(c);
        }
    }

    const std::string csv = out_path(opts, "samples.csv");
    {
        std::ofstream os(csv);
        if (!os) throw std::runtime_error("cannot open " + csv);
        os.precision(17);
        for (int k = 1; k <= run.cfg.denoiser.dim; ++k) os << "x_" << k << ",";
        os << "class,seed,mode\n";
        for (std::size_t i = 0; i < points.size(); ++i) {
            for (double v : points[i]) os << v << ",";
            os << point_class[i] << "," << sa.seed << "," << to_string(sa.mode) << "\n";
        }
    }

    RunManifest man;
    man.command = "sample";
    man.config = resolved;
    man.root_seed = sa.seed;
    man.checkpoint_hash = sha256_file((fs::path(run_dir) / "checkpoint.bin").string());
    man.add_output(csv);
    if (svg && run.cfg.denoiser.dim == 2) {
        const std::string svg_path = out_path(opts, "samples.svg");
        write_scatter_svg(svg_path, points, point_class);
        man.add_output(svg_path);
    }
    man.write(out_path(opts, "manifest.json"));
    std::cout << "wrote " << points.size() << " samples to " << csv << "\n";
    return 0;
}

int cmd_nelbo(const CommonOpts& opts, const std::string& run_dir, const std::string& baseline_dir,
              const std::string& data_flag, int mc, long max_examples, int resamples) {
    LoadedRun run = load_run(run_dir);
    const std::string data_path = data_flag.empty() ? run.cfg.dataset_path : data_flag;
    if (!fs::exists(data_path)) {
        std::cerr << "error: dataset file not found (" << data_path << ")\n";
        return 2;
    }
    Dataset ds = read_dataset_csv(data_path);
    const std::uint64_t eval_seed = opts.seed.value_or(0);
    const long n = max_examples > 0
                       ? std::min<long>(max_examples, static_cast<long>(ds.records.size()))
                       : static_cast<long>(ds.records.size());
    std::span<const DatasetRecord> recs(ds.records.data(), static_cast<std::size_t>(n));

    auto summarize = [&](const TrainState& st) {
        std::vector<double> totals;
        totals.reserve(static_cast<std::size_t>(n));
        double prior = 0.0, recon = 0.0, total = 0.0;
        for (long i = 0; i < n; ++i) {
            // per-example streams, shared between paired models
            Rng rng = Rng::stream(eval_seed, static_cast<std::uint64_t>(i));
            ConditionValue c{recs[static_cast<std::size_t>(i)].class_id, {}};
            NelboReport rep = nelbo(recs[static_cast<std::size_t>(i)].x, c, st.denoiser.fn(),
                                    st.adapter, st.schedule, mc, rng);
            prior += rep.prior_bits;
            recon += rep.recon_bits;
            total += rep.total_bits;
            totals.push_back(rep.total_bits);
        }
        json j;
        j["examples"] = n;
        j["prior_bits"] = prior / static_cast<double>(n);
        j["recon_bits"] = recon / static_cast<double>(n);
        j["kl_bits"] = (total - prior - recon) / static_cast<double>(n);
        j["total_bits"] = total / static_cast<double>(n);
        return std::pair<json, std::vector<double>>{j, totals};
    };

    json report;
    auto [main_summary, main_totals] = summarize(run.state);
    report["model"] = main_summary;
    if (!baseline_dir.empty()) {
        LoadedRun base = load_run(baseline_dir);
        auto [base_summary, base_totals] = summarize(base.state);
        report["baseline"] = base_summary;
        std::vector<double> diffs(main_totals.size());
        for (std::size_t i = 0; i < diffs.size(); ++i) diffs[i] = main_totals[i] - base_totals[i];
        double mean_diff = 0.0;
        for (double d : diffs) mean_diff += d;
        mean_diff /= static_cast<double>(diffs.size());
        Rng brng = Rng::stream(eval_seed, 0xB007);
        auto [lo, hi] = bootstrap_mean_ci(diffs, resamples, 0.95, brng);
        report["difference_bits"] = mean_diff;
        report["difference_ci95"] = {lo, hi};
    }

    const std::string rpath = out_path(opts, "nelbo.json");
    {
        std::ofstream os(rpath);
        os << report.dump(2) << "\n";
    }
    RunManifest man;
    man.command = "nelbo";
    man.config = run.cfg.resolved;
    man.root_seed = eval_seed;
    man.dataset_fingerprint = sha256_file(data_path);
    man.add_output(rpath);
    man.write(out_path(opts, "manifest.json"));
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_verify(const CommonOpts& opts, long mc_samples, int probes, int lambda_states,
               int grad_seeds, const std::string& fault, bool zero_only, bool write_report) {
    VerifySuiteConfig vcfg;
    vcfg.seed = opts.seed.value_or(0);
    vcfg.mc_samples = mc_samples;
    vcfg.bayes_probes = probes;
    vcfg.lambda_states = lambda_states;
    vcfg.grad_check_seeds = grad_seeds;
    vcfg.threads = opts.threads;
    vcfg.zero_adapter_only = zero_only;
    if (fault == "drop-transition-prev-bias") {
        vcfg.faults.drop_transition_prev_bias = true;
    } else if (fault == "drop-posterior-prev-bias") {
        vcfg.faults.drop_posterior_prev_bias = true;
    } else if (!fault.empty() && fault != "none") {
        std::cerr << "error: unknown fault '" << fault << "'\n";
        return 2;
    }

    std::vector<CheckResult> results = run_verify_suite(vcfg);
    bool all = true;
    for (const auto& r : results) {
        std::printf("%s  %-28s  max_dev=%-12.3e tol=%-9.0e\n", r.pass ? "PASS" : "FAIL",
                    r.check.c_str(), r.max_deviation, r.tolerance);
        all = all && r.pass;
    }
    if (write_report) {
        const std::string rpath = out_path(opts, "verify.json");
        std::ofstream os(rpath);
        os << to_json(results).dump(2) << "\n";

        RunManifest man;
        man.command = "verify";
        man.config = json{{"seed", vcfg.seed},
                          {"mc_samples", vcfg.mc_samples},
                          {"bayes_probes", vcfg.bayes_probes},
                          {"lambda_states", vcfg.lambda_states},
                          {"grad_check_seeds", vcfg.grad_check_seeds},
                          {"fault", fault.empty() ? "none" : fault},
                          {"zero_adapter_only", vcfg.zero_adapter_only}};
        man.root_seed = vcfg.seed;
        man.add_output(rpath);
        man.write(out_path(opts, "manifest.json"));
    }
    std::printf("%s\n", all ? "all checks passed" : "some checks FAILED");
    return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cross-modal contextualized diffusion on toy data"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    CommonOpts gen_opts, train_opts, sample_opts, nelbo_opts, verify_opts;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    add_common(gen, gen_opts, true);

    auto* tr = app.add_subcommand("train", "train denoiser + adapter jointly");
    add_common(tr, train_opts, true);
    std::string train_data;
    tr->add_option("--data", train_data, "dataset csv (default: dataset.path from config)");

    auto* sa = app.add_subcommand("sample", "sample from a trained checkpoint");
    add_common(sa, sample_opts, false);
    std::string sample_run, sample_mode;
    int sample_stride = 0;
    double sample_eta = -1.0;
    long sample_n = -1;
    bool sample_svg = false;
    sa->add_option("--run", sample_run, "training output directory")->required();
    sa->add_option("--mode", sample_mode, "ddpm or ddim");
    sa->add_option("--stride", sample_stride, "ddim stride");
    sa->add_option("--eta", sample_eta, "ddim eta");
    sa->add_option("--n", sample_n, "samples per class");
    sa->add_flag("--svg", sample_svg, "also write a 2D scatter svg");

    auto* ne = app.add_subcommand("nelbo", "evaluate the variational bound");
    add_common(ne, nelbo_opts, false);
    std::string nelbo_run, nelbo_baseline, nelbo_data;
    int nelbo_mc = 1, nelbo_resamples = 2000;
    long nelbo_examples = 256;
    ne->add_option("--run", nelbo_run, "training output directory")->required();
    ne->add_option("--baseline-run", nelbo_baseline, "second run for paired comparison");
    ne->add_option("--data", nelbo_data, "dataset csv (default: dataset.path from config)");
    ne->add_option("--mc", nelbo_mc, "MC samples per KL term");
    ne->add_option("--examples", nelbo_examples, "max examples to evaluate");
    ne->add_option("--resamples", nelbo_resamples, "bootstrap resamples");

    auto* ve = app.add_subcommand("verify", "run the full verification suite");
    add_common(ve, verify_opts, false);
    long verify_mc = 1'000'000;
    int verify_probes = 1000, verify_lambda = 1000, verify_grad_seeds = 3;
    std::string verify_fault;
    bool verify_zero_only = false;
    ve->add_option("--mc-samples", verify_mc, "MC draws per toy-oracle grid point");
    ve->add_option("--probes", verify_probes, "Bayes-identity probes per adapter");
    ve->add_option("--lambda-states", verify_lambda, "randomized states for the lambda bound");
    ve->add_option("--grad-seeds", verify_grad_seeds, "seeds for the joint gradient check");
    ve->add_option("--inject-fault", verify_fault,
                   "none|drop-transition-prev-bias|drop-posterior-prev-bias");
    ve->add_flag("--zero-adapter-only", verify_zero_only, "restrict the adapter grid to zero");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gen_opts);
        if (tr->parsed()) return cmd_train(train_opts, train_data);
        if (sa->parsed()) {
            return cmd_sample(sample_opts, sample_run, sample_svg, sample_mode, sample_stride,
                              sample_eta, sample_n);
        }
        if (ne->parsed()) {
            return cmd_nelbo(nelbo_opts, nelbo_run, nelbo_baseline, nelbo_data, nelbo_mc,
                             nelbo_examples, nelbo_resamples);
        }
        if (ve->parsed()) {
            return cmd_verify(verify_opts, verify_mc, verify_probes, verify_lambda,
                              verify_grad_seeds, verify_fault, verify_zero_only, true);
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
