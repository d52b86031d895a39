#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxdiff/adapter.hpp"
#include "ctxdiff/forward.hpp"
#include "ctxdiff/reverse.hpp"
#include "ctxdiff/schedule.hpp"
#include "ctxdiff/toy_oracle.hpp"
#include "ctxdiff/training.hpp"

namespace ctxdiff {

struct CheckResult {
    std::string check;
    double max_deviation = 0.0;
    double tolerance = 0.0;
    bool pass = false;

    static CheckResult make(std::string name, double dev, double tol) {
        CheckResult r;
        r.check = std::move(name);
        r.max_deviation = dev;
        r.tolerance = tol;
        r.pass = tol == 0.0 ? dev == 0.0 : dev < tol;
        return r;
    }
};

inline nlohmann::json to_json(const std::vector<CheckResult>& results) {
    nlohmann::json arr = nlohmann::json::array();
    bool all = true;
    for (const auto& r : results) {
        arr.push_back(nlohmann::json{{"check", r.check},
                                     {"max_deviation", r.max_deviation},
                                     {"tolerance", r.tolerance},
                                     {"pass", r.pass}});
        all = all && r.pass;
    }
    return nlohmann::json{{"checks", arr}, {"all_pass", all}};
}

struct VerifySuiteConfig {
    std::uint64_t seed = 0;
    long mc_samples = 1'000'000;
    int bayes_probes = 1000;
    int lambda_states = 1000;
    int grad_check_seeds = 3;
    int threads = 1;
    bool zero_adapter_only = false;
    FaultFlags faults;
};

// A learned adapter with every tensor randomized (the factory zero-inits the
// output layer, which would make the bias vanish).
inline ContextAdapter make_random_learned_adapter(int dim, int num_classes, int T,
                                                  std::uint64_t seed) {
    Rng rng = Rng::stream(seed, 77);
    AdapterSpec spec;
    spec.dim = dim;
    spec.num_classes = num_classes;
    spec.hidden_dim = 8;
    spec.T = T;
    ContextAdapter a = ContextAdapter::learned(spec, rng);
    for (auto& [_, t] : a.params().tensors()) {
        for (auto& v : t.data) v = rng.normal() * 0.4;
    }
    return a;
}

namespace detail {

struct AdapterCase {
    std::string name;
    ContextAdapter adapter;
};

inline std::vector<AdapterCase> adapter_grid(int dim, int num_classes, int T, std::uint64_t seed,
                                             bool zero_only) {
    std::vector<AdapterCase> out;
    out.push_back({"zero", ContextAdapter::zero(dim)});
    if (zero_only) return out;
    out.push_back({"linear_toy_r0.1", ContextAdapter::linear_toy(dim, 0.1)});
    out.push_back({"linear_toy_r0.2", ContextAdapter::linear_toy(dim, 0.2)});
    out.push_back({"learned", make_random_learned_adapter(dim, num_classes, T, seed)});
    return out;
}

inline std::vector<NoiseSchedule> schedule_grid() {
    return {
        make_schedule(ScheduleKind::linear, 20, 0.00085, 0.012),
        make_schedule(ScheduleKind::linear, 1000, 1e-4, 0.02),
        make_schedule(ScheduleKind::cosine, 1000, 0, 0),
    };
}

}  // namespace detail

// --------------------------------------------------------------------------
// Individual checks (each returns one or two CheckResult entries)
// --------------------------------------------------------------------------

inline void check_schedule_invariants(std::vector<CheckResult>& out) {
    double worst = 0.0;
    for (const NoiseSchedule& s : detail::schedule_grid()) {
        for (int t = 1; t <= s.T(); ++t) {
            worst = std::max(worst, std::abs(s.alpha_bar(t) / s.alpha_bar(t - 1) - s.alpha(t)));
            if (!(s.alpha_bar(t) < s.alpha_bar(t - 1))) worst = std::max(worst, 1.0);
            if (s.k(t) < 0.0 || s.k(t) > 0.25) worst = std::max(worst, 1.0);
        }
    }
    out.push_back(CheckResult::make("schedule-invariants", worst, 1e-12));
}

inline void check_lemma1_composition(const VerifySuiteConfig& cfg, std::vector<CheckResult>& out) {
    Rng rng = Rng::stream(cfg.seed, 1);
    double mean_dev = 0.0, var_dev = 0.0;
    for (const NoiseSchedule& s : detail::schedule_grid()) {
        for (auto& [name, adapter] :
             detail::adapter_grid(2, 2, s.T(), cfg.seed, cfg.zero_adapter_only)) {
            Vec x0 = {rng.normal(), rng.normal()};
            ConditionValue c{rng.uniform_int(0, 1), {}};
            CompositionReport rep = verify_composition(x0, c, adapter, s, cfg.faults);
            mean_dev = std::max(mean_dev, rep.max_mean_dev);
            var_dev = std::max(var_dev, rep.max_var_rel_dev);
        }
    }
    out.push_back(CheckResult::make("lemma1-composition-mean", mean_dev, 1e-10));
    out.push_back(CheckResult::make("lemma1-composition-var", var_dev, 1e-10));
}

inline void check_bayes_identity(const VerifySuiteConfig& cfg, std::vector<CheckResult>& out) {
    Rng rng = Rng::stream(cfg.seed, 2);
    const NoiseSchedule s = make_schedule(ScheduleKind::linear, 50, 1e-3, 0.05);
    double worst = 0.0;
    for (auto& [name, adapter] : detail::adapter_grid(2, 2, s.T(), cfg.seed, cfg.zero_adapter_only)) {
        for (int i = 0; i < cfg.bayes_probes; ++i) {
            Vec x0 = {rng.normal(), rng.normal()};
            ConditionValue c{rng.uniform_int(0, 1), {}};
            const int t = rng.uniform_int(2, s.T());
            // realistic probes: run the forward process itself
            Vec x_prev = sample_marginal(x0, c, t - 1, adapter, s, rng).x_t;
            GaussianParams trans = transition_params(x_prev, x0, c, t, adapter, s);
            Vec x_t(x_prev.size());
            for (std::size_t k = 0; k < x_t.size(); ++k) {
                x_t[k] = trans.mean[k] + std::sqrt(trans.var) * rng.normal();
            }
            std::pair<Vec, Vec> probe{x_prev, x_t};
            BayesReport rep = verify_bayes_identity(x0, c, t, adapter, s, {&probe, 1}, cfg.faults);
            worst = std::max(worst, rep.max_log_discrepancy);
        }
    }
    out.push_back(CheckResult::make("bayes-identity", worst, 1e-8));
}

inline void check_ddim_marginals(const VerifySuiteConfig& cfg, std::vector<CheckResult>& out) {
    Rng rng = Rng::stream(cfg.seed, 3);
    double mean_dev = 0.0, var_dev = 0.0;
    for (const NoiseSchedule& s : detail::schedule_grid()) {
        for (auto& [name, adapter] :
             detail::adapter_grid(2, 2, s.T(), cfg.seed, cfg.zero_adapter_only)) {
            for (double eta : {0.25, 0.5, 1.0}) {
                Vec x0 = {rng.normal(), rng.normal()};
                ConditionValue c{rng.uniform_int(0, 1), {}};
                DdimMarginalReport rep = verify_ddim_marginals(x0, c, adapter, s, eta);
                mean_dev = std::max(mean_dev, rep.max_mean_dev);
                var_dev = std::max(var_dev, rep.max_var_rel_dev);
            }
        }
    }
    out.push_back(CheckResult::make("ddim-marginals-mean", mean_dev, 1e-8));
    out.push_back(CheckResult::make("ddim-marginals-var", var_dev, 1e-8));
}

inline void check_toy_oracle(const VerifySuiteConfig& cfg, std::vector<CheckResult>& out) {
    Rng rng = Rng::stream(cfg.seed, 4);
    ToyModel model;
    model.dim = 2;
    model.means = {{-2.0, 0.0}, {2.0, 0.0}};
    model.sigmas = {1.0, 1.0};
    const double ab_grid[] = {0.1, 0.3, 0.5, 0.7, 0.9};
    const double r_grid[] = {0.0, 0.1, 0.2, 0.35, 0.5};
    double agree_dev = 0.0;      // |mc - closed| / (3 se), must stay < 1
    double reduction_dev = -1e300;  // max of ctx - ddpm over r > 0, must stay < 0
    double zero_dev = 0.0;       // reduction at r = 0, relative
    for (double ab : ab_grid) {
        const double ddpm = ddpm_optimal_error(1.0, ab, model.dim);
        for (double r : r_grid) {
            const double closed = contextdiff_optimal_error(1.0, ab, r, model.dim);
            McErrorResult mc = mc_error(model, 0, ab, r, cfg.mc_samples, rng, cfg.threads);
            agree_dev = std::max(agree_dev, std::abs(mc.mse - closed) / (3.0 * mc.std_error));
            if (r > 0.0) reduction_dev = std::max(reduction_dev, closed - ddpm);
            if (r == 0.0) zero_dev = std::max(zero_dev, std::abs(closed - ddpm) / ddpm);
        }
    }
    out.push_back(CheckResult::make("toy-mc-agreement", agree_dev, 1.0));
    out.push_back(CheckResult::make("toy-error-reduction", reduction_dev, 0.0 - 1e-300));
    out.push_back(CheckResult::make("toy-reduction-at-zero", zero_dev, 1e-14));

    // strict monotonicity in r on a random grid
    double mono_dev = -1e300;
    for (int i = 0; i < 200; ++i) {
        const double ab = 0.01 + 0.98 * rng.uniform();
        const double sigma = 0.2 + 2.0 * rng.uniform();
        double r1 = 2.0 * rng.uniform();
        double r2 = r1 + 1e-3 + rng.uniform();
        mono_dev = std::max(mono_dev, contextdiff_optimal_error(sigma, ab, r2, 2) -
                                          contextdiff_optimal_error(sigma, ab, r1, 2));
    }
    out.push_back(CheckResult::make("toy-monotonic-in-r", mono_dev, 0.0 - 1e-300));
}

// Joint gradient check: the loss as a function of (theta, phi) together, with
// the reparameterized x_t inside, against central differences.
inline nn::GradCheckReport grad_check_joint_loss(std::uint64_t seed, double h, double tol,
                                                 int coords_per_tensor = 0) {
    TrainConfig cfg;
    cfg.schedule = ScheduleSpec{ScheduleKind::linear, 8, 1e-3, 0.05};
    cfg.adapter.variant = AdapterVariant::learned;
    cfg.adapter.dim = 2;
    cfg.adapter.num_classes = 2;
    cfg.adapter.hidden_dim = 4;
    cfg.adapter.class_emb_dim = 4;
    cfg.adapter.time_emb_dim = 8;
    cfg.denoiser.dim = 2;
    cfg.denoiser.num_classes = 2;
    cfg.denoiser.class_emb_dim = 4;
    cfg.denoiser.time_emb_dim = 8;
    cfg.denoiser.hidden = {8};
    cfg.seed = seed;
    TrainState base = init_train_state(cfg);
    // randomize the adapter output layer so phi gradients are non-trivial
    Rng prng = Rng::stream(seed, 99);
    for (auto& v : base.adapter.params().at("out.W").data) v = prng.normal() * 0.3;
    for (auto& v : base.adapter.params().at("out.b").data) v = prng.normal() * 0.1;

    std::vector<DatasetRecord> batch;
    for (int i = 0; i < 4; ++i) {
        batch.push_back(DatasetRecord{{prng.normal(), prng.normal()}, i % 2});
    }
    const std::uint64_t loss_seed = splitmix64(seed ^ 0xABCD);

    auto eval_with = [&](const nn::ParamSet& merged, nn::ParamSet* theta_g,
                         nn::ParamSet* phi_g) {
        TrainState st = base;
        st.denoiser.set_params(split_prefixed(merged, "denoiser."));
        st.adapter.set_params(split_prefixed(merged, "adapter."));
        st.rng = Rng(loss_seed);
        LossBatchResult res = loss_batch(batch, st, st.schedule);
        if (theta_g) *theta_g = std::move(res.theta_grads);
        if (phi_g) *phi_g = std::move(res.phi_grads);
        return res.loss;
    };

    nn::ParamSet merged = merge_prefixed(
        {{"denoiser.", &base.denoiser.params()}, {"adapter.", &base.adapter.params()}});
    nn::ParamSet theta_g, phi_g;
    eval_with(merged, &theta_g, &phi_g);
    nn::ParamSet analytic = merge_prefixed({{"denoiser.", &theta_g}, {"adapter.", &phi_g}});

    Rng coord_rng = Rng::stream(seed, 5);
    return nn::grad_check(
        merged, [&](const nn::ParamSet& p) { return eval_with(p, nullptr, nullptr); }, analytic, h,
        tol, coords_per_tensor, &coord_rng);
}

inline void check_gradients(const VerifySuiteConfig& cfg, std::vector<CheckResult>& out) {
    double worst = 0.0;
    for (int i = 0; i < cfg.grad_check_seeds; ++i) {
        nn::GradCheckReport rep =
            grad_check_joint_loss(splitmix64(cfg.seed + static_cast<std::uint64_t>(i)), 1e-4, 1e-4);
        worst = std::max(worst, rep.max_rel_err);
    }
    out.push_back(CheckResult::make("grad-check-joint", worst, 1e-4));
}

// Lemma-2 direction: with exact C_t (linear_toy), the weighted reconstruction
// norm upper-bounds the posterior mean gap for every randomized state.
inline void check_lambda_upper_bound(const VerifySuiteConfig& cfg, std::vector<CheckResult>& out) {
    Rng rng = Rng::stream(cfg.seed, 6);
    const NoiseSchedule s = make_schedule(ScheduleKind::linear, 20, 1e-3, 0.08);
    double worst = -1e300;
    for (int i = 0; i < cfg.lambda_states; ++i) {
        const double r = 0.5 * rng.uniform();
        ContextAdapter adapter = ContextAdapter::linear_toy(2, r);
        std::vector<double> c_exact(static_cast<std::size_t>(s.T()) + 1, r);
        const int t = rng.uniform_int(2, s.T());
        Vec x0 = {2.0 * rng.normal(), 2.0 * rng.normal()};
        Vec x0_hat = {x0[0] + rng.normal(), x0[1] + rng.normal()};
        Vec x_t = {rng.normal(), rng.normal()};
        ConditionValue c{0, {}};
        const GaussianParams q = posterior_params(x_t, x0, c, t, adapter, s);
        const GaussianParams p = ddpm_step_params(x_t, x0_hat, c, t, adapter, s);
        const double gap = norm(sub(q.mean, p.mean));
        const double lam = lambda_weight(LambdaMode::lipschitz, s, t, c_exact);
        worst = std::max(worst, gap - lam * norm(sub(x0_hat, x0)));
    }
    out.push_back(CheckResult::make("lambda-upper-bound", worst, 1e-12));
}

// k_T = 0 makes the prior KL independent of phi.
inline void check_prior_term_adapter_free(const VerifySuiteConfig& cfg,
                                          std::vector<CheckResult>& out) {
    Rng rng = Rng::stream(cfg.seed, 7);
    const NoiseSchedule s = make_schedule(ScheduleKind::cosine, 100, 0, 0);
    double worst = 0.0;
    for (int i = 0; i < 8; ++i) {
        ContextAdapter a1 = make_random_learned_adapter(2, 2, s.T(), cfg.seed + 1000 + i);
        ContextAdapter a2 = make_random_learned_adapter(2, 2, s.T(), cfg.seed + 2000 + i);
        Vec x0 = {rng.normal(), rng.normal()};
        ConditionValue c{rng.uniform_int(0, 1), {}};
        const double p1 = kl_to_standard_normal(marginal_params(x0, c, s.T(), a1, s));
        const double p2 = kl_to_standard_normal(marginal_params(x0, c, s.T(), a2, s));
        worst = std::max(worst, std::abs(p1 - p2));
    }
    out.push_back(CheckResult::make("prior-term-adapter-free", worst, 1e-12));
}

// Zero-adapter reduction against vanilla formulas coded inline here (the test
// suite carries its own, separately written reference).
inline void check_vanilla_reduction(const VerifySuiteConfig& cfg, std::vector<CheckResult>& out) {
    const NoiseSchedule s = make_schedule(ScheduleKind::linear, 40, 1e-3, 0.05);
    ContextAdapter zero = ContextAdapter::zero(2);
    ConditionValue c{0, {}};
    double dev = 0.0;
    auto track = [&](double a, double b) { dev = std::max(dev, a == b ? 0.0 : std::abs(a - b)); };

    Rng rng_a = Rng::stream(cfg.seed, 8);
    Rng rng_b = Rng::stream(cfg.seed, 8);
    DenoiserFn stub = [](const Vec& x, const ConditionValue&, int) {
        Vec v(x.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.9 * x[i] + 0.05;
        return v;
    };
    Rng data_rng = Rng::stream(cfg.seed, 9);
    for (int i = 0; i < 64; ++i) {
        Vec x0 = {data_rng.normal(), data_rng.normal()};
        const int t = data_rng.uniform_int(2, s.T());
        // forward sample
        Vec lib = sample_marginal(x0, c, t, zero, s, rng_a).x_t;
        Vec ref(x0.size());
        {
            const double a = std::sqrt(s.alpha_bar(t));
            const double b = std::sqrt(1.0 - s.alpha_bar(t));
            for (std::size_t k = 0; k < ref.size(); ++k) ref[k] = a * x0[k] + b * rng_b.normal();
        }
        for (std::size_t k = 0; k < ref.size(); ++k) track(lib[k], ref[k]);
        // posterior
        GaussianParams post = posterior_params(lib, x0, c, t, zero, s);
        {
            const double c0 = std::sqrt(s.alpha_bar(t - 1)) * s.beta(t) / (1.0 - s.alpha_bar(t));
            const double ct = std::sqrt(s.alpha(t)) * (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t));
            for (std::size_t k = 0; k < ref.size(); ++k) track(post.mean[k], c0 * x0[k] + ct * lib[k]);
            track(post.var, (1.0 - s.alpha_bar(t - 1)) * s.beta(t) / (1.0 - s.alpha_bar(t)));
        }
        // one ancestral step
        Vec step_lib = ddpm_step(lib, c, t, stub, zero, s, rng_a);
        {
            Vec x0_hat = stub(lib, c, t);
            const double c0 = std::sqrt(s.alpha_bar(t - 1)) * s.beta(t) / (1.0 - s.alpha_bar(t));
            const double ct = std::sqrt(s.alpha(t)) * (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t));
            const double sd =
                std::sqrt((1.0 - s.alpha_bar(t - 1)) * s.beta(t) / (1.0 - s.alpha_bar(t)));
            for (std::size_t k = 0; k < ref.size(); ++k) {
                track(step_lib[k], c0 * x0_hat[k] + ct * lib[k] + sd * rng_b.normal());
            }
        }
        // one deterministic ddim step
        Vec dd_lib = ddim_step(lib, c, t, t - 1, stub, zero, s, 0.0, rng_a);
        {
            Vec x0_hat = stub(lib, c, t);
            const double ab_t = s.alpha_bar(t), ab_p = s.alpha_bar(t - 1);
            const double dir = std::sqrt(1.0 - ab_p) / std::sqrt(1.0 - ab_t);
            for (std::size_t k = 0; k < ref.size(); ++k) {
                track(dd_lib[k],
                      std::sqrt(ab_p) * x0_hat[k] + dir * (lib[k] - std::sqrt(ab_t) * x0_hat[k]));
            }
        }
    }
    out.push_back(CheckResult::make("vanilla-reduction", dev, 0.0));
}

inline std::vector<CheckResult> run_verify_suite(const VerifySuiteConfig& cfg) {
    std::vector<CheckResult> out;
    check_schedule_invariants(out);
    check_lemma1_composition(cfg, out);
    check_bayes_identity(cfg, out);
    check_ddim_marginals(cfg, out);
    check_toy_oracle(cfg, out);
    check_gradients(cfg, out);
    check_lambda_upper_bound(cfg, out);
    check_prior_term_adapter_free(cfg, out);
    check_vanilla_reduction(cfg, out);
    return out;
}

}  // namespace ctxdiff
