#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctxdiff {

enum class ScheduleKind { linear, cosine };

inline const char* to_string(ScheduleKind k) {
    return k == ScheduleKind::linear ? "linear" : "cosine";
}

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "linear") return ScheduleKind::linear;
    if (s == "cosine") return ScheduleKind::cosine;
    throw std::invalid_argument("unknown schedule kind: " + s);
}

// What gets serialized; the arrays below are recomputed on load.
struct ScheduleSpec {
    ScheduleKind kind = ScheduleKind::linear;
    int T = 0;
    double beta_start = 0.0;
    double beta_end = 0.0;
};

// Diffusion timeline for t = 1..T. Arrays are stored with a slot for t = 0 so
// the boundary conventions alpha_bar_0 = 1 and k_0 = 0 need no special-casing
// in the step formulas. k_T is clamped to exactly zero, which makes the prior
// KL term adapter-free.
struct NoiseSchedule {
    ScheduleSpec spec;
    std::vector<double> betas;       // betas[t], t in 1..T; betas[0] unused (0)
    std::vector<double> alphas;      // alphas[t] = 1 - betas[t]; alphas[0] = 1
    std::vector<double> alpha_bars;  // alpha_bars[t] = prod_{s<=t} alphas[s]; alpha_bars[0] = 1
    std::vector<double> k_gains;     // k_gains[t] = sqrt(ab_t)*(1-sqrt(ab_t)), k_0 = k_T = 0

    int T() const { return spec.T; }

    void check_t(int t, int lo) const {
        if (t < lo || t > spec.T) {
            throw std::out_of_range("timestep " + std::to_string(t) + " outside " +
                                    std::to_string(lo) + ".." + std::to_string(spec.T));
        }
    }

    double beta(int t) const {
        check_t(t, 1);
        return betas[static_cast<std::size_t>(t)];
    }
    double alpha(int t) const {
        check_t(t, 0);
        return alphas[static_cast<std::size_t>(t)];
    }
    double alpha_bar(int t) const {
        check_t(t, 0);
        return alpha_bars[static_cast<std::size_t>(t)];
    }
    double k(int t) const {
        check_t(t, 0);
        return k_gains[static_cast<std::size_t>(t)];
    }
};

inline double context_gain(const NoiseSchedule& s, int t) { return s.k(t); }

namespace detail {

// Fills alphas/alpha_bars/k_gains from betas and enforces the type invariants.
inline void finalize_schedule(NoiseSchedule& s) {
    const int T = s.spec.T;
    s.alphas.assign(static_cast<std::size_t>(T) + 1, 1.0);
    s.alpha_bars.assign(static_cast<std::size_t>(T) + 1, 1.0);
    s.k_gains.assign(static_cast<std::size_t>(T) + 1, 0.0);
    for (int t = 1; t <= T; ++t) {
        const double b = s.betas[static_cast<std::size_t>(t)];
        if (!(b > 0.0 && b < 1.0)) {
            throw std::invalid_argument("beta_" + std::to_string(t) + " = " + std::to_string(b) +
                                        " outside (0,1)");
        }
        s.alphas[static_cast<std::size_t>(t)] = 1.0 - b;
        s.alpha_bars[static_cast<std::size_t>(t)] =
            s.alpha_bars[static_cast<std::size_t>(t) - 1] * (1.0 - b);
    }
    if (!(s.alpha_bars[static_cast<std::size_t>(T)] > 0.0)) {
        throw std::invalid_argument("alpha_bar_T underflowed to zero; schedule too aggressive");
    }
    for (int t = 1; t < T; ++t) {
        const double root = std::sqrt(s.alpha_bars[static_cast<std::size_t>(t)]);
        s.k_gains[static_cast<std::size_t>(t)] = root * (1.0 - root);
    }
    // k_T = 0 by hard clamp (already zero from assign).
}

}  // namespace detail

inline NoiseSchedule make_schedule(ScheduleKind kind, int T, double beta_start, double beta_end) {
    if (T < 2) throw std::invalid_argument("make_schedule: T must be >= 2");
    NoiseSchedule s;
    s.spec = ScheduleSpec{kind, T, beta_start, beta_end};
    s.betas.assign(static_cast<std::size_t>(T) + 1, 0.0);
    if (kind == ScheduleKind::linear) {
        if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
            throw std::invalid_argument("make_schedule: need 0 < beta_start <= beta_end < 1");
        }
        for (int t = 1; t <= T; ++t) {
            s.betas[static_cast<std::size_t>(t)] =
                beta_start + static_cast<double>(t - 1) / static_cast<double>(T - 1) * (beta_end - beta_start);
        }
    } else {
        // Squared-cosine alpha_bar profile with offset 0.008 and beta clipped
        // at 0.999; alpha_bar is then recomputed from the clipped betas so the
        // product-consistency invariant holds exactly.
        const double offset = 0.008;
        auto profile = [&](double u) {
            const double v = std::cos((u + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
            return v * v;
        };
        const double f0 = profile(0.0);
        double prev = 1.0;
        for (int t = 1; t <= T; ++t) {
            const double cur = profile(static_cast<double>(t) / static_cast<double>(T)) / f0;
            double b = 1.0 - cur / prev;
            b = std::min(b, 0.999);
            s.betas[static_cast<std::size_t>(t)] = b;
            prev = cur;
        }
    }
    detail::finalize_schedule(s);
    return s;
}

inline NoiseSchedule make_schedule(const ScheduleSpec& spec) {
    return make_schedule(spec.kind, spec.T, spec.beta_start, spec.beta_end);
}

}  // namespace ctxdiff
