#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "ctxdiff/adapter.hpp"
#include "ctxdiff/denoiser.hpp"
#include "ctxdiff/forward.hpp"
#include "ctxdiff/gaussian.hpp"
#include "ctxdiff/rng.hpp"
#include "ctxdiff/schedule.hpp"
#include "ctxdiff/vec.hpp"

namespace ctxdiff {

enum class SamplerMode { ddpm, ddim };

inline const char* to_string(SamplerMode m) { return m == SamplerMode::ddpm ? "ddpm" : "ddim"; }

inline SamplerMode sampler_mode_from_string(const std::string& s) {
    if (s == "ddpm") return SamplerMode::ddpm;
    if (s == "ddim") return SamplerMode::ddim;
    throw std::invalid_argument("unknown sampler mode: " + s);
}

struct SamplerConfig {
    SamplerMode mode = SamplerMode::ddpm;
    int ddim_stride = 1;  // uniform subsampling of 1..T; 1 = full sequence
    double eta = 0.0;     // 0 = deterministic DDIM
    std::uint64_t seed = 0;
    std::optional<std::pair<double, double>> x0_clamp;  // componentwise box, off by default
    double guidance_scale = 1.0;  // classifier-free guidance hook; 1 = off
};

// sigma_t for the stochastic-DDIM family.
inline double ddim_sigma(const NoiseSchedule& s, int t, int t_prev, double eta) {
    const double ab_t = s.alpha_bar(t);
    const double ab_prev = s.alpha_bar(t_prev);
    return eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_prev);
}

// Descending timestep sequence for DDIM: T, T-stride, ...; endpoints always
// include T and 1.
inline std::vector<int> ddim_timesteps(int T, int stride) {
    if (stride < 1) throw std::invalid_argument("ddim_timesteps: stride must be >= 1");
    std::vector<int> ts;
    for (int t = T; t > 1; t -= stride) ts.push_back(t);
    ts.push_back(1);
    return ts;
}

// The kernel p_theta(x_{t-1} | x_t, c): the forward posterior with the
// denoiser's x0_hat inserted (bias terms evaluated at x0_hat).
inline GaussianParams ddpm_step_params(const Vec& x_t, const Vec& x0_hat, const ConditionValue& c,
                                       int t, const ContextAdapter& adapter,
                                       const NoiseSchedule& s, FaultFlags faults = {}) {
    return posterior_params(x_t, x0_hat, c, t, adapter, s, faults);
}

// One ancestral step. For t > 1 draws from the adapted posterior around
// x0_hat; the final step emits x0_hat deterministically.
inline Vec ddpm_step(const Vec& x_t, const ConditionValue& c, int t, const DenoiserFn& denoiser,
                     const ContextAdapter& adapter, const NoiseSchedule& s, Rng& rng,
                     FaultFlags faults = {}) {
    s.check_t(t, 1);
    const Vec x0_hat = denoiser(x_t, c, t);
    if (t == 1) return x0_hat;
    GaussianParams g = ddpm_step_params(x_t, x0_hat, c, t, adapter, s, faults);
    const double sd = std::sqrt(g.var);
    Vec out(g.mean.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = g.mean[i] + sd * rng.normal();
    return out;
}

// One contextualized DDIM step from t down to t_prev. The adaptation carried
// by x_t is removed with the same sqrt((1-ab_prev-sigma^2)/(1-ab_t)) factor
// that scales the noise direction, and the target step's bias is added back.
inline Vec ddim_step(const Vec& x_t, const ConditionValue& c, int t, int t_prev,
                     const DenoiserFn& denoiser, const ContextAdapter& adapter,
                     const NoiseSchedule& s, double eta, Rng& rng) {
    s.check_t(t, 1);
    if (!(t_prev >= 1 && t_prev < t)) {
        throw std::invalid_argument("ddim_step: need 1 <= t_prev < t");
    }
    const double ab_t = s.alpha_bar(t);
    const double ab_prev = s.alpha_bar(t_prev);
    const double sigma = ddim_sigma(s, t, t_prev, eta);
    if (sigma * sigma > 1.0 - ab_prev) {
        throw std::invalid_argument("ddim_step: sigma^2 exceeds 1 - alpha_bar_{t_prev}");
    }
    const Vec x0_hat = denoiser(x_t, c, t);
    const double dir_coef = std::sqrt(1.0 - ab_prev - sigma * sigma) / std::sqrt(1.0 - ab_t);
    const double sqrt_ab_t = std::sqrt(ab_t);
    const double sqrt_ab_prev = std::sqrt(ab_prev);
    const Vec b_t = bias(adapter, s, x0_hat, c, t);
    const Vec b_prev = bias(adapter, s, x0_hat, c, t_prev);
    Vec out(x_t.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x_tilde = sqrt_ab_prev * x0_hat[i] + dir_coef * (x_t[i] - sqrt_ab_t * x0_hat[i]);
        out[i] = x_tilde - b_t[i] * dir_coef + b_prev[i];
    }
    if (eta > 0.0) {
        for (auto& v : out) v += sigma * rng.normal();
    }
    return out;
}

// Ancestral / DDIM chain from x_T ~ N(0, I). Chains use rng streams split per
// sample index, so results are reproducible and independent of evaluation
// order.
inline std::vector<Vec> sample_chain(int n, const ConditionValue& c, const DenoiserFn& denoiser,
                                     const ContextAdapter& adapter, const NoiseSchedule& s,
                                     const SamplerConfig& cfg) {
    const DenoiserFn* base = &denoiser;
    DenoiserFn clamped;
    if (cfg.x0_clamp) {
        const auto [lo, hi] = *cfg.x0_clamp;
        clamped = [base, lo, hi](const Vec& x, const ConditionValue& cc, int t) {
            Vec v = (*base)(x, cc, t);
            for (auto& e : v) e = std::clamp(e, lo, hi);
            return v;
        };
    }
    DenoiserFn guided;
    if (cfg.guidance_scale != 1.0) {
        const DenoiserFn* inner = cfg.x0_clamp ? &clamped : base;
        const double gs = cfg.guidance_scale;
        const int null_id = adapter.spec().num_classes;  // reserved dropped-condition row
        guided = [inner, gs, null_id](const Vec& x, const ConditionValue& cc, int t) {
            ConditionValue null_c = cc;
            null_c.class_id = null_id;
            Vec cond = (*inner)(x, cc, t);
            Vec uncond = (*inner)(x, null_c, t);
            for (std::size_t i = 0; i < cond.size(); ++i) {
                cond[i] = uncond[i] + gs * (cond[i] - uncond[i]);
            }
            return cond;
        };
    }
    const DenoiserFn& f = cfg.guidance_scale != 1.0 ? guided : (cfg.x0_clamp ? clamped : denoiser);

    std::vector<int> ts;
    if (cfg.mode == SamplerMode::ddpm) {
        for (int t = s.T(); t >= 1; --t) ts.push_back(t);
    } else {
        ts = ddim_timesteps(s.T(), cfg.ddim_stride);
    }
    if (ts.empty()) throw std::invalid_argument("sample_chain: empty timestep sequence");

    std::vector<Vec> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Rng rng = Rng::stream(cfg.seed, static_cast<std::uint64_t>(i));
        Vec x = rng.normal_vec(static_cast<std::size_t>(adapter.dim()));
        if (cfg.mode == SamplerMode::ddpm) {
            for (int t : ts) x = ddpm_step(x, c, t, f, adapter, s, rng);
        } else {
            for (std::size_t j = 0; j + 1 < ts.size(); ++j) {
                x = ddim_step(x, c, ts[j], ts[j + 1], f, adapter, s, cfg.eta, rng);
            }
            x = f(x, c, 1);  // final deterministic emission, as in the t = 1 DDPM step
        }
        out.push_back(std::move(x));
    }
    return out;
}

struct DdimMarginalReport {
    double max_mean_dev = 0.0;
    double max_var_rel_dev = 0.0;
};

// Lemma-3 check: starting from the closed-form marginal at T and applying the
// DDIM posterior kernel (with the bias replacement) analytically for
// t = T..2, the marginal at every t-1 must match the closed form. Uses the
// true x0; requires eta > 0 so the kernel family is non-degenerate.
inline DdimMarginalReport verify_ddim_marginals(const Vec& x0, const ConditionValue& c,
                                                const ContextAdapter& adapter,
                                                const NoiseSchedule& s, double eta) {
    if (!(eta > 0.0)) throw std::invalid_argument("verify_ddim_marginals: eta must be > 0");
    DdimMarginalReport rep;
    GaussianParams top = marginal_params(x0, c, s.T(), adapter, s);
    Vec mean = top.mean;
    double var = top.var;
    for (int t = s.T(); t >= 2; --t) {
        const int tp = t - 1;
        const double ab_t = s.alpha_bar(t);
        const double ab_prev = s.alpha_bar(tp);
        const double sigma = ddim_sigma(s, t, tp, eta);
        const double dir_coef = std::sqrt(1.0 - ab_prev - sigma * sigma) / std::sqrt(1.0 - ab_t);
        const Vec b_t = bias(adapter, s, x0, c, t);
        const Vec b_prev = bias(adapter, s, x0, c, tp);
        // x_{t-1} = dir_coef * x_t + drift + sigma * eps, with the drift
        // carrying the x0 terms and the +-bias replacement.
        for (std::size_t i = 0; i < mean.size(); ++i) {
            const double drift = std::sqrt(ab_prev) * x0[i] - dir_coef * std::sqrt(ab_t) * x0[i] -
                                 dir_coef * b_t[i] + b_prev[i];
            mean[i] = dir_coef * mean[i] + drift;
        }
        var = dir_coef * dir_coef * var + sigma * sigma;
        GaussianParams marg = marginal_params(x0, c, tp, adapter, s);
        rep.max_mean_dev = std::max(rep.max_mean_dev, max_abs_diff(mean, marg.mean));
        rep.max_var_rel_dev =
            std::max(rep.max_var_rel_dev, std::abs(var - marg.var) / std::max(marg.var, 1e-300));
    }
    return rep;
}

}  // namespace ctxdiff
