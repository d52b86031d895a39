#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "ctxdiff/adapter.hpp"
#include "ctxdiff/gaussian.hpp"
#include "ctxdiff/rng.hpp"
#include "ctxdiff/schedule.hpp"
#include "ctxdiff/vec.hpp"

namespace ctxdiff {

// Deliberate formula mutations, used only to prove the verification suite
// notices when a bias term is dropped. All live paths use the default (no
// fault) value.
struct FaultFlags {
    bool drop_transition_prev_bias = false;  // drop -sqrt(alpha_t)*b_{t-1} in the transition kernel
    bool drop_posterior_prev_bias = false;   // drop +b_{t-1} in the posterior mean
};

struct NoisySample {
    Vec x_t;
    int t = 0;
    ConditionValue c;
    std::optional<int> source_id;
};

// q(x_t | x0, c) = N( sqrt(ab_t) x0 + b_t(x0,c), (1 - ab_t) I )
inline GaussianParams marginal_params(const Vec& x0, const ConditionValue& c, int t,
                                      const ContextAdapter& adapter, const NoiseSchedule& s) {
    s.check_t(t, 1);
    const double ab = s.alpha_bar(t);
    GaussianParams g;
    g.mean = axpy(std::sqrt(ab), x0, bias(adapter, s, x0, c, t));
    g.var = 1.0 - ab;
    return g;
}

// Reparameterized draw from the marginal: x_t = mean + sqrt(var) * eps.
inline NoisySample sample_marginal(const Vec& x0, const ConditionValue& c, int t,
                                   const ContextAdapter& adapter, const NoiseSchedule& s, Rng& rng,
                                   std::optional<int> source_id = std::nullopt) {
    GaussianParams g = marginal_params(x0, c, t, adapter, s);
    const double sd = std::sqrt(g.var);
    NoisySample out;
    out.x_t.resize(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) out.x_t[i] = g.mean[i] + sd * rng.normal();
    out.t = t;
    out.c = c;
    out.source_id = source_id;
    return out;
}

// q(x_t | x_{t-1}, x0, c) = N( sqrt(a_t) x_{t-1} + b_t - sqrt(a_t) b_{t-1}, beta_t I )
inline GaussianParams transition_params(const Vec& x_prev, const Vec& x0, const ConditionValue& c,
                                        int t, const ContextAdapter& adapter,
                                        const NoiseSchedule& s, FaultFlags faults = {}) {
    s.check_t(t, 1);
    check_same_dim(x_prev, x0, "transition_params");
    const double sqrt_a = std::sqrt(s.alpha(t));
    Vec mean = axpy(sqrt_a, x_prev, bias(adapter, s, x0, c, t));
    if (!faults.drop_transition_prev_bias) {
        const Vec b_prev = bias(adapter, s, x0, c, t - 1);
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] -= sqrt_a * b_prev[i];
    }
    return GaussianParams{std::move(mean), s.beta(t)};
}

// q(x_{t-1} | x_t, x0, c), the adapted forward posterior. At t = 1 the
// boundary conventions alpha_bar_0 = 1, b_0 = 0 make it the degenerate kernel
// at x0 (var = 0).
inline GaussianParams posterior_params(const Vec& x_t, const Vec& x0, const ConditionValue& c,
                                       int t, const ContextAdapter& adapter,
                                       const NoiseSchedule& s, FaultFlags faults = {}) {
    s.check_t(t, 1);
    check_same_dim(x_t, x0, "posterior_params");
    const double a_t = s.alpha(t);
    const double ab_t = s.alpha_bar(t);
    const double ab_prev = s.alpha_bar(t - 1);
    const double beta_t = s.beta(t);
    const double c0 = std::sqrt(ab_prev) * beta_t / (1.0 - ab_t);
    const double ct = std::sqrt(a_t) * (1.0 - ab_prev) / (1.0 - ab_t);
    const Vec b_t = bias(adapter, s, x0, c, t);
    GaussianParams g;
    g.mean.resize(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) {
        g.mean[i] = c0 * x0[i] + ct * (x_t[i] - b_t[i]);
    }
    if (!faults.drop_posterior_prev_bias) {
        const Vec b_prev = bias(adapter, s, x0, c, t - 1);
        for (std::size_t i = 0; i < g.mean.size(); ++i) g.mean[i] += b_prev[i];
    }
    g.var = (1.0 - ab_prev) * beta_t / (1.0 - ab_t);
    return g;
}

// ---------------------------------------------------------------------------
// Deterministic verification of the appendix derivations
// ---------------------------------------------------------------------------

struct CompositionReport {
    double max_mean_dev = 0.0;
    double max_var_rel_dev = 0.0;
};

// Composes the transition kernels analytically (they are linear-Gaussian in
// x_{t-1} for fixed x0, c) and compares the resulting per-t moments against
// the closed-form marginal. The per-step shift is read off the transition
// kernel itself, so injected faults propagate into the recursion.
inline CompositionReport verify_composition(const Vec& x0, const ConditionValue& c,
                                            const ContextAdapter& adapter, const NoiseSchedule& s,
                                            FaultFlags faults = {}) {
    CompositionReport rep;
    const Vec zero(x0.size(), 0.0);
    Vec mean = x0;
    double var = 0.0;
    for (int t = 1; t <= s.T(); ++t) {
        GaussianParams kernel = transition_params(zero, x0, c, t, adapter, s, faults);
        const double sqrt_a = std::sqrt(s.alpha(t));
        for (std::size_t i = 0; i < mean.size(); ++i) {
            mean[i] = sqrt_a * mean[i] + kernel.mean[i];
        }
        var = s.alpha(t) * var + kernel.var;
        GaussianParams marg = marginal_params(x0, c, t, adapter, s);
        rep.max_mean_dev = std::max(rep.max_mean_dev, max_abs_diff(mean, marg.mean));
        rep.max_var_rel_dev =
            std::max(rep.max_var_rel_dev, std::abs(var - marg.var) / std::max(marg.var, 1e-300));
    }
    return rep;
}

struct BayesReport {
    double max_log_discrepancy = 0.0;
    int probes = 0;
};

// Pointwise check of
//   log q(x_{t-1}|x0,c) + log q(x_t|x_{t-1},x0,c)
//     = log q(x_t|x0,c) + log q(x_{t-1}|x_t,x0,c)
// at the given probe pairs (x_{t-1}, x_t). Requires t >= 2 so every kernel is
// non-degenerate.
inline BayesReport verify_bayes_identity(const Vec& x0, const ConditionValue& c, int t,
                                         const ContextAdapter& adapter, const NoiseSchedule& s,
                                         std::span<const std::pair<Vec, Vec>> probes,
                                         FaultFlags faults = {}) {
    if (t < 2) throw std::invalid_argument("verify_bayes_identity: t must be >= 2");
    s.check_t(t, 2);
    if (probes.empty()) throw std::invalid_argument("verify_bayes_identity: need at least one probe");
    BayesReport rep;
    for (const auto& [x_prev, x_t] : probes) {
        const double lhs = log_pdf(marginal_params(x0, c, t - 1, adapter, s), x_prev) +
                           log_pdf(transition_params(x_prev, x0, c, t, adapter, s, faults), x_t);
        const double rhs = log_pdf(marginal_params(x0, c, t, adapter, s), x_t) +
                           log_pdf(posterior_params(x_t, x0, c, t, adapter, s, faults), x_prev);
        rep.max_log_discrepancy = std::max(rep.max_log_discrepancy, std::abs(lhs - rhs));
        ++rep.probes;
    }
    return rep;
}

}  // namespace ctxdiff
