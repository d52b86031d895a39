// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. An optional argv[1] selects a single criterion id (development
// convenience); the default runs all ten.

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include "ctxdiff/training.hpp"
#include "ctxdiff/verify.hpp"
#include "vanilla_reference.hpp"

using namespace ctxdiff;

namespace {

struct Outcome {
    int id;
    std::string name;
    bool pass;
    std::string detail;
    double seconds;
};

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof(buf), f, args);
    va_end(args);
    return std::string(buf);
}

const ConditionValue kC0{0, {}};

std::vector<NoiseSchedule> criterion_schedules() {
    return {
        make_schedule(ScheduleKind::linear, 20, 0.00085, 0.012),
        make_schedule(ScheduleKind::linear, 1000, 1e-4, 0.02),
        make_schedule(ScheduleKind::cosine, 1000, 0, 0),
    };
}

std::vector<ContextAdapter> criterion_adapters(int T, std::uint64_t seed) {
    std::vector<ContextAdapter> out;
    out.push_back(ContextAdapter::zero(2));
    out.push_back(ContextAdapter::linear_toy(2, 0.1));
    out.push_back(ContextAdapter::linear_toy(2, 0.2));
    out.push_back(make_random_learned_adapter(2, 2, T, seed));
    return out;
}

// ---------------------------------------------------------------------- 1
Outcome criterion_1() {
    const auto start = Clock::now();
    Rng rng(101);
    double mean_dev = 0.0, var_dev = 0.0;
    for (const auto& s : criterion_schedules()) {
        for (const auto& a : criterion_adapters(s.T(), 11)) {
            Vec x0 = {rng.normal(), rng.normal()};
            CompositionReport rep = verify_composition(x0, kC0, a, s);
            mean_dev = std::max(mean_dev, rep.max_mean_dev);
            var_dev = std::max(var_dev, rep.max_var_rel_dev);
        }
    }
    const double secs = elapsed(start);
    const bool pass = mean_dev < 1e-10 && var_dev < 1e-10 && secs < 10.0;
    return {1, "lemma1-composition",
            pass, fmt("max_mean_dev=%.2e max_var_rel_dev=%.2e (tol 1e-10)", mean_dev, var_dev),
            secs};
}

// ---------------------------------------------------------------------- 2
Outcome criterion_2() {
    const auto start = Clock::now();
    const NoiseSchedule s = make_schedule(ScheduleKind::linear, 50, 1e-3, 0.05);
    Rng rng(202);
    double worst = 0.0;
    for (const auto& a : criterion_adapters(s.T(), 22)) {
        for (int i = 0; i < 1000; ++i) {
            Vec x0 = {rng.normal(), rng.normal()};
            const int t = rng.uniform_int(2, s.T());
            Vec x_prev = sample_marginal(x0, kC0, t - 1, a, s, rng).x_t;
            GaussianParams trans = transition_params(x_prev, x0, kC0, t, a, s);
            Vec x_t(2);
            for (int k = 0; k < 2; ++k) {
                x_t[static_cast<std::size_t>(k)] =
                    trans.mean[static_cast<std::size_t>(k)] + std::sqrt(trans.var) * rng.normal();
            }
            std::pair<Vec, Vec> probe{x_prev, x_t};
            worst = std::max(worst,
                             verify_bayes_identity(x0, kC0, t, a, s, {&probe, 1}).max_log_discrepancy);
        }
    }
    const double secs = elapsed(start);
    const bool pass = worst < 1e-8 && secs < 10.0;
    return {2, "bayes-identity", pass, fmt("max_log_discrepancy=%.2e (tol 1e-8)", worst), secs};
}

// ---------------------------------------------------------------------- 3
Outcome criterion_3() {
    const auto start = Clock::now();
    Rng rng(303);
    double mean_dev = 0.0, var_dev = 0.0;
    for (const auto& s : criterion_schedules()) {
        for (const auto& a : criterion_adapters(s.T(), 33)) {
            for (double eta : {0.25, 0.5, 1.0}) {
                Vec x0 = {rng.normal(), rng.normal()};
                DdimMarginalReport rep = verify_ddim_marginals(x0, kC0, a, s, eta);
                mean_dev = std::max(mean_dev, rep.max_mean_dev);
                var_dev = std::max(var_dev, rep.max_var_rel_dev);
            }
        }
    }
    const double secs = elapsed(start);
    const bool pass = mean_dev < 1e-8 && var_dev < 1e-8 && secs < 10.0;
    return {3, "ddim-marginal-preservation",
            pass, fmt("max_mean_dev=%.2e max_var_rel_dev=%.2e (tol 1e-8)", mean_dev, var_dev), secs};
}

// ---------------------------------------------------------------------- 4
Outcome criterion_4() {
    const auto start = Clock::now();
    ToyModel model;
    model.dim = 2;
    model.means = {{-2.0, 0.0}, {2.0, 0.0}};
    model.sigmas = {1.0, 1.0};
    Rng rng(404);
    const double ab_grid[] = {0.1, 0.3, 0.5, 0.7, 0.9};
    const double r_grid[] = {0.0, 0.1, 0.2, 0.35, 0.5};
    double worst_sigma_ratio = 0.0;
    bool strict = true;
    for (double ab : ab_grid) {
        const double ddpm = ddpm_optimal_error(1.0, ab, 2);
        for (double r : r_grid) {
            const double closed = contextdiff_optimal_error(1.0, ab, r, 2);
            McErrorResult mc = mc_error(model, 0, ab, r, 1'000'000, rng);
            worst_sigma_ratio =
                std::max(worst_sigma_ratio, std::abs(mc.mse - closed) / mc.std_error);
            if (r > 0.0 && !(closed < ddpm)) strict = false;
        }
    }
    // frozen worked values, cross-checked by the same oracle
    const bool worked = ddpm_optimal_error(1.0, 0.5, 2) == 1.0 &&
                        std::abs(contextdiff_optimal_error(1.0, 0.5, 0.2, 2) -
                                 0.7559477710916344) < 1e-12;
    const double secs = elapsed(start);
    const bool pass = worst_sigma_ratio < 3.0 && strict && worked && secs < 60.0;
    return {4, "toy-oracle-agreement",
            pass,
            fmt("max |mc-closed|/se=%.2f (tol 3), strict-reduction=%s, worked-values=%s",
                worst_sigma_ratio, strict ? "yes" : "NO", worked ? "ok" : "BAD"),
            secs};
}

// ---------------------------------------------------------------------- 5
Outcome criterion_5() {
    const auto start = Clock::now();
    const int T = 40;
    NoiseSchedule s = make_schedule(ScheduleKind::linear, T, 1e-3, 0.06);
    vanilla::Schedule ref = vanilla::linear_schedule(T, 1e-3, 0.06);
    ContextAdapter zero = ContextAdapter::zero(2);
    long mismatches = 0;
    auto expect_eq = [&](double a, double b) {
        if (!(a == b)) ++mismatches;
    };

    DenoiserFn stub = [](const Vec& x, const ConditionValue&, int t) {
        Vec v(x.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.85 * x[i] + 0.02 * t;
        return v;
    };
    vanilla::Predictor ref_stub = [&](const Vec& x, int t) { return stub(x, kC0, t); };

    Rng lib_rng(505), ref_rng(505), data_rng(506);
    for (int i = 0; i < 500; ++i) {
        Vec x0 = {data_rng.normal(), data_rng.normal()};
        const int t = data_rng.uniform_int(2, T);
        Vec lib = sample_marginal(x0, kC0, t, zero, s, lib_rng).x_t;
        Vec refv = vanilla::forward_sample(x0, t, ref, ref_rng);
        for (int k = 0; k < 2; ++k) expect_eq(lib[k], refv[k]);

        GaussianParams post = posterior_params(lib, x0, kC0, t, zero, s);
        vanilla::MeanVar mv = vanilla::posterior(refv, x0, t, ref);
        for (int k = 0; k < 2; ++k) expect_eq(post.mean[k], mv.mean[k]);
        expect_eq(post.var, mv.var);

        Vec step = ddpm_step(lib, kC0, t, stub, zero, s, lib_rng);
        Vec step_ref = vanilla::ancestral_step(refv, t, ref_stub, ref, ref_rng);
        for (int k = 0; k < 2; ++k) expect_eq(step[k], step_ref[k]);

        const int tp = data_rng.uniform_int(1, t - 1);
        const double eta = (i % 2 == 0) ? 0.0 : 1.0;
        Vec dd = ddim_step(lib, kC0, t, tp, stub, zero, s, eta, lib_rng);
        Vec dd_ref = vanilla::ddim_update(refv, t, tp, ref_stub, eta, ref, ref_rng);
        for (int k = 0; k < 2; ++k) expect_eq(dd[k], dd_ref[k]);
    }

    // training loss on a shared stream
    {
        TrainConfig cfg;
        cfg.schedule = ScheduleSpec{ScheduleKind::linear, T, 1e-3, 0.06};
        cfg.adapter.variant = AdapterVariant::zero;
        cfg.adapter.dim = 2;
        cfg.adapter.num_classes = 2;
        cfg.denoiser.dim = 2;
        cfg.denoiser.num_classes = 2;
        cfg.denoiser.hidden = {16};
        cfg.seed = 3;
        TrainState state = init_train_state(cfg);
        state.rng = Rng(909);
        std::vector<DatasetRecord> batch;
        std::vector<std::pair<Vec, int>> ref_batch;
        for (int i = 0; i < 16; ++i) {
            Vec x = {data_rng.normal(), data_rng.normal()};
            batch.push_back({x, i % 2});
            ref_batch.emplace_back(x, i % 2);
        }
        LossBatchResult res = loss_batch(batch, state, state.schedule);
        Rng ref_loss_rng(909);
        const double ref_loss = vanilla::x0_loss(
            ref_batch,
            [&](const Vec& x_t, int cls, int t) {
                return state.denoiser.predict(x_t, ConditionValue{cls, {}}, t);
            },
            ref, ref_loss_rng);
        expect_eq(res.loss, ref_loss);
    }

    const double secs = elapsed(start);
    return {5, "vanilla-reduction-bitwise", mismatches == 0,
            fmt("%ld mismatching doubles across forward/posterior/ddpm/ddim/loss", mismatches),
            secs};
}

// ---------------------------------------------------------------------- 6
Outcome criterion_6() {
    const auto start = Clock::now();
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
        nn::GradCheckReport rep =
            grad_check_joint_loss(splitmix64(0xACCE97 + static_cast<std::uint64_t>(i)), 1e-4, 1e-4);
        worst = std::max(worst, rep.max_rel_err);
    }
    const double secs = elapsed(start);
    return {6, "gradient-correctness", worst < 1e-4,
            fmt("max_rel_err=%.2e over 10 seeds (tol 1e-4, h=1e-4)", worst), secs};
}

// ---------------------------------------------------------------------- 7 & 8
struct PairedRunResult {
    double mean_diff;
    double ci_lo;
    double ci_hi;
    bool pass;
    TrainState ctx_state;
};

TrainConfig toy2d_train_config(AdapterVariant variant, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.schedule = ScheduleSpec{ScheduleKind::cosine, 100, 0.00085, 0.012};
    cfg.adapter.variant = variant;
    cfg.adapter.dim = 2;
    cfg.adapter.num_classes = 2;
    cfg.adapter.hidden_dim = 16;
    cfg.adapter.class_emb_dim = 8;
    cfg.adapter.time_emb_dim = 16;
    cfg.denoiser.dim = 2;
    cfg.denoiser.num_classes = 2;
    cfg.denoiser.hidden = {64, 64};
    cfg.denoiser.class_emb_dim = 8;
    cfg.denoiser.time_emb_dim = 16;
    cfg.steps = 5000;
    cfg.batch_size = 32;
    cfg.lr = 1e-3;
    cfg.seed = seed;
    return cfg;
}

Dataset toy2d_dataset(long n, std::uint64_t seed) {
    DatasetSpec spec;
    spec.kind = GeneratorKind::toy_gaussian;
    spec.n = n;
    spec.toy.dim = 2;
    spec.toy.means = {{-2.0, 0.0}, {2.0, 0.0}};
    spec.toy.sigmas = {0.5, 0.5};
    spec.seed = seed;
    return generate_dataset(spec);
}

PairedRunResult paired_replicate(std::uint64_t seed) {
    Dataset train_ds = toy2d_dataset(4096, splitmix64(seed ^ 0xDA7A));
    Dataset eval_ds = toy2d_dataset(256, splitmix64(seed ^ 0xE7A1));

    TrainState ctx = train(toy2d_train_config(AdapterVariant::learned, seed), train_ds, nullptr);
    TrainState base = train(toy2d_train_config(AdapterVariant::zero, seed), train_ds, nullptr);

    const std::uint64_t eval_seed = splitmix64(seed ^ 0x9999);
    std::vector<double> ctx_nelbo = nelbo_per_example(eval_ds.records, ctx.denoiser.fn(),
                                                      ctx.adapter, ctx.schedule, 1, eval_seed);
    std::vector<double> base_nelbo = nelbo_per_example(eval_ds.records, base.denoiser.fn(),
                                                       base.adapter, base.schedule, 1, eval_seed);
    std::vector<double> diffs(ctx_nelbo.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < diffs.size(); ++i) {
        diffs[i] = ctx_nelbo[i] - base_nelbo[i];
        mean += diffs[i];
    }
    mean /= static_cast<double>(diffs.size());
    Rng brng = Rng::stream(seed, 0xC1);
    auto [lo, hi] = bootstrap_mean_ci(diffs, 2000, 0.95, brng);
    PairedRunResult res{mean, lo, hi, mean <= 0.0 && hi <= 0.02, std::move(ctx)};
    return res;
}

Outcome criterion_7(std::vector<TrainState>* keep_ctx) {
    const auto start = Clock::now();
    int passed = 0;
    std::string detail;
    for (int rep = 0; rep < 5; ++rep) {
        PairedRunResult r = paired_replicate(1000 + static_cast<std::uint64_t>(rep));
        passed += r.pass ? 1 : 0;
        detail += fmt("%s%.4f[%.4f,%.4f]", rep ? " " : "", r.mean_diff, r.ci_lo, r.ci_hi);
        if (keep_ctx) keep_ctx->push_back(std::move(r.ctx_state));
    }
    const double secs = elapsed(start);
    const bool pass = passed >= 4 && secs < 600.0;
    return {7, "nelbo-tighter-bound",
            pass,
            fmt("%d/5 replicates with diff<=0 and ci_hi<=0.02 bits/dim: %s", passed,
                detail.c_str()),
            secs};
}

Outcome criterion_8(std::vector<TrainState>* trained) {
    const auto start = Clock::now();
    TrainState* model = nullptr;
    std::vector<TrainState> local;
    if (trained && !trained->empty()) {
        model = &trained->front();
    } else {
        Dataset ds = toy2d_dataset(4096, splitmix64(1000 ^ 0xDA7A));
        local.push_back(train(toy2d_train_config(AdapterVariant::learned, 1000), ds, nullptr));
        model = &local.front();
    }
    const Vec mu[2] = {{-2.0, 0.0}, {2.0, 0.0}};
    double worst = 0.0;
    for (int pass_idx = 0; pass_idx < 2; ++pass_idx) {
        SamplerConfig scfg;
        if (pass_idx == 0) {
            scfg.mode = SamplerMode::ddpm;
        } else {
            scfg.mode = SamplerMode::ddim;
            scfg.ddim_stride = 10;
            scfg.eta = 0.0;
        }
        for (int cls = 0; cls < 2; ++cls) {
            scfg.seed = splitmix64(0x5A3 + static_cast<std::uint64_t>(pass_idx * 2 + cls));
            auto samples = sample_chain(1000, ConditionValue{cls, {}}, model->denoiser.fn(),
                                        model->adapter, model->schedule, scfg);
            Vec mean(2, 0.0);
            for (const auto& v : samples) {
                mean[0] += v[0];
                mean[1] += v[1];
            }
            mean[0] /= 1000.0;
            mean[1] /= 1000.0;
            worst = std::max({worst, std::abs(mean[0] - mu[cls][0]), std::abs(mean[1] - mu[cls][1])});
        }
    }
    const double secs = elapsed(start);
    return {8, "conditional-fidelity", worst < 0.15,
            fmt("max |sample_mean - mu| = %.4f over {ddpm, ddim stride 10} x classes (tol 0.15)",
                worst),
            secs};
}

// ---------------------------------------------------------------------- 9
Outcome criterion_9() {
    const auto start = Clock::now();
    NoiseSchedule s = make_schedule(ScheduleKind::linear, 50, 1e-3, 0.08);
    double max_k = 0.0;
    for (int t = 1; t <= s.T(); ++t) max_k = std::max(max_k, s.k(t));
    ContextAdapter a = ContextAdapter::linear_toy(2, 0.2);
    Vec x0 = {1.0, -1.0};

    FaultFlags f1{.drop_transition_prev_bias = true};
    const double comp_dev = verify_composition(x0, kC0, a, s, f1).max_mean_dev;

    FaultFlags f2{.drop_posterior_prev_bias = true};
    Rng rng(909);
    double bayes_dev = 0.0;
    for (int i = 0; i < 200; ++i) {
        const int t = rng.uniform_int(2, s.T());
        Vec x_prev = sample_marginal(x0, kC0, t - 1, a, s, rng).x_t;
        Vec x_t = sample_marginal(x0, kC0, t, a, s, rng).x_t;
        std::pair<Vec, Vec> probe{x_prev, x_t};
        bayes_dev = std::max(
            bayes_dev, verify_bayes_identity(x0, kC0, t, a, s, {&probe, 1}, f2).max_log_discrepancy);
    }
    const double secs = elapsed(start);
    const bool pass = max_k >= 0.1 && comp_dev >= 1e-3 && bayes_dev >= 1e-3;
    return {9, "mutation-sensitivity",
            pass,
            fmt("max_k=%.3f, dropped-transition-bias dev=%.2e, dropped-posterior-bias dev=%.2e "
                "(must be >= 1e-3)",
                max_k, comp_dev, bayes_dev),
            secs};
}

// ---------------------------------------------------------------------- 10
Outcome criterion_10() {
    const auto start = Clock::now();
    NoiseSchedule worked;
    worked.spec.T = 2;
    worked.betas = {0.0, 0.2, 0.1};
    worked.alphas = {1.0, 0.8, 0.9};
    worked.alpha_bars = {1.0, 0.8, 0.72};
    worked.k_gains = {0.0, 0.1, 0.2};
    std::vector<double> c_worked(3, 0.2);
    const double lam = lambda_weight(LambdaMode::lipschitz, worked, 2, c_worked);
    const bool worked_ok = std::abs(lam - 0.3665435195871275) < 1e-12;

    NoiseSchedule s = make_schedule(ScheduleKind::linear, 20, 1e-3, 0.08);
    Rng rng(1010);
    double worst_violation = -1e300;
    for (int i = 0; i < 1000; ++i) {
        const double r = 0.5 * rng.uniform();
        ContextAdapter adapter = ContextAdapter::linear_toy(2, r);
        std::vector<double> c_exact(static_cast<std::size_t>(s.T()) + 1, r);
        const int t = rng.uniform_int(2, s.T());
        Vec x0 = {2.0 * rng.normal(), 2.0 * rng.normal()};
        Vec x0_hat = {x0[0] + rng.normal(), x0[1] + rng.normal()};
        Vec x_t = {rng.normal(), rng.normal()};
        const GaussianParams q = posterior_params(x_t, x0, kC0, t, adapter, s);
        const GaussianParams p = ddpm_step_params(x_t, x0_hat, kC0, t, adapter, s);
        const double gap = norm(sub(q.mean, p.mean));
        const double lam_t = lambda_weight(LambdaMode::lipschitz, s, t, c_exact);
        worst_violation = std::max(worst_violation, gap - lam_t * norm(sub(x0_hat, x0)));
    }
    const double secs = elapsed(start);
    const bool pass = worked_ok && worst_violation < 1e-12;
    return {10, "lipschitz-lambda",
            pass,
            fmt("lambda=%.12f (expect 0.366543...), max bound violation=%.2e over 1000 states",
                lam, worst_violation),
            secs};
}

}  // namespace

int main(int argc, char** argv) {
    const int only = argc > 1 ? std::atoi(argv[1]) : 0;
    std::vector<Outcome> outcomes;
    std::vector<TrainState> trained_ctx;

    auto want = [&](int id) { return only == 0 || only == id; };

    if (want(1)) outcomes.push_back(criterion_1());
    if (want(2)) outcomes.push_back(criterion_2());
    if (want(3)) outcomes.push_back(criterion_3());
    if (want(4)) outcomes.push_back(criterion_4());
    if (want(5)) outcomes.push_back(criterion_5());
    if (want(6)) outcomes.push_back(criterion_6());
    if (want(7)) outcomes.push_back(criterion_7(&trained_ctx));
    if (want(8)) outcomes.push_back(criterion_8(&trained_ctx));
    if (want(9)) outcomes.push_back(criterion_9());
    if (want(10)) outcomes.push_back(criterion_10());

    bool all = true;
    for (const auto& o : outcomes) {
        std::printf("%s [%2d] %-28s %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", o.id, o.name.c_str(),
                    o.detail.c_str(), o.seconds);
        all = all && o.pass;
    }
    std::printf("%s\n", all ? "ACCEPTANCE: all criteria passed"
                            : "ACCEPTANCE: some criteria FAILED");
    return all ? 0 : 1;
}
