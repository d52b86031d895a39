#pragma once

// Standalone standard-DDPM/DDIM reference, written directly from the usual
// textbook formulas and kept independent of the library's forward/reverse
// code paths. Used to check that the adapted process with a zero adapter
// reduces to the vanilla process exactly (shared rng stream, same doubles).

#include <cmath>
#include <functional>
#include <vector>

#include "ctxdiff/rng.hpp"

namespace vanilla {

using Vec = std::vector<double>;

struct Schedule {
    int T = 0;
    std::vector<double> beta;       // [0..T], index 0 unused
    std::vector<double> alpha;      // [0..T], alpha[0] = 1
    std::vector<double> alpha_bar;  // [0..T], alpha_bar[0] = 1
};

inline Schedule linear_schedule(int T, double b0, double b1) {
    Schedule s;
    s.T = T;
    s.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
    s.alpha.assign(static_cast<std::size_t>(T) + 1, 1.0);
    s.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
    for (int t = 1; t <= T; ++t) {
        s.beta[t] = b0 + double(t - 1) / double(T - 1) * (b1 - b0);
        s.alpha[t] = 1.0 - s.beta[t];
        s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    }
    return s;
}

// x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps
inline Vec forward_sample(const Vec& x0, int t, const Schedule& s, ctxdiff::Rng& rng) {
    const double a = std::sqrt(s.alpha_bar[t]);
    const double b = std::sqrt(1.0 - s.alpha_bar[t]);
    Vec out(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * rng.normal();
    return out;
}

struct MeanVar {
    Vec mean;
    double var = 0.0;
};

// q(x_{t-1} | x_t, x0) for the standard process.
inline MeanVar posterior(const Vec& x_t, const Vec& x0, int t, const Schedule& s) {
    const double c0 = std::sqrt(s.alpha_bar[t - 1]) * s.beta[t] / (1.0 - s.alpha_bar[t]);
    const double ct = std::sqrt(s.alpha[t]) * (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]);
    MeanVar mv;
    mv.mean.resize(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) mv.mean[i] = c0 * x0[i] + ct * x_t[i];
    mv.var = (1.0 - s.alpha_bar[t - 1]) * s.beta[t] / (1.0 - s.alpha_bar[t]);
    return mv;
}

using Predictor = std::function<Vec(const Vec&, int)>;

// x0-parameterized ancestral step; t = 1 emits the prediction itself.
inline Vec ancestral_step(const Vec& x_t, int t, const Predictor& predict, const Schedule& s,
                          ctxdiff::Rng& rng) {
    Vec x0_hat = predict(x_t, t);
    if (t == 1) return x0_hat;
    MeanVar mv = posterior(x_t, x0_hat, t, s);
    const double sd = std::sqrt(mv.var);
    Vec out(x_t.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = mv.mean[i] + sd * rng.normal();
    return out;
}

// Standard DDIM update (x0 parameterization) with the usual sigma family.
inline Vec ddim_update(const Vec& x_t, int t, int t_prev, const Predictor& predict, double eta,
                       const Schedule& s, ctxdiff::Rng& rng) {
    const double ab_t = s.alpha_bar[t];
    const double ab_p = s.alpha_bar[t_prev];
    const double sigma =
        eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_p);
    Vec x0_hat = predict(x_t, t);
    const double dir = std::sqrt(1.0 - ab_p - sigma * sigma) / std::sqrt(1.0 - ab_t);
    Vec out(x_t.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::sqrt(ab_p) * x0_hat[i] + dir * (x_t[i] - std::sqrt(ab_t) * x0_hat[i]);
    }
    if (eta > 0.0) {
        for (auto& v : out) v += sigma * rng.normal();
    }
    return out;
}

// Mean x0-prediction loss over a batch; per item draws t then the noise,
// mirroring the library's draw order.
inline double x0_loss(const std::vector<std::pair<Vec, int>>& batch,
                      const std::function<Vec(const Vec&, int, int)>& predict, const Schedule& s,
                      ctxdiff::Rng& rng) {
    double total = 0.0;
    for (const auto& [x0, cls] : batch) {
        const int t = rng.uniform_int(1, s.T);
        const double a = std::sqrt(s.alpha_bar[t]);
        const double b = std::sqrt(1.0 - s.alpha_bar[t]);
        Vec x_t(x0.size());
        for (std::size_t i = 0; i < x0.size(); ++i) x_t[i] = a * x0[i] + b * rng.normal();
        Vec x0_hat = predict(x_t, cls, t);
        double item = 0.0;
        for (std::size_t i = 0; i < x0.size(); ++i) {
            const double d = x0_hat[i] - x0[i];
            item += d * d;
        }
        total = total + 1.0 * item;
    }
    return (1.0 / double(batch.size())) * total;
}

}  // namespace vanilla
