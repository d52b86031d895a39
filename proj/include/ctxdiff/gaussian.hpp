#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "ctxdiff/vec.hpp"

namespace ctxdiff {

// Every kernel in the adapted diffusion is an isotropic Gaussian N(mean, var*I).
// var = 0 marks the degenerate (Dirac) kernels that show up at the chain
// boundary; density/KL evaluation rejects them.
struct GaussianParams {
    Vec mean;
    double var = 0.0;

    bool degenerate() const { return var <= 0.0; }
    int dim() const { return static_cast<int>(mean.size()); }
};

inline double log_pdf(const GaussianParams& g, const Vec& x) {
    if (g.degenerate()) throw std::invalid_argument("log_pdf: degenerate kernel");
    check_same_dim(g.mean, x, "log_pdf");
    const double d = static_cast<double>(x.size());
    double quad = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = x[i] - g.mean[i];
        quad += r * r;
    }
    return -0.5 * (d * std::log(2.0 * std::numbers::pi * g.var) + quad / g.var);
}

// KL( N(mean_p, var_p I) || N(mean_q, var_q I) ), in nats.
inline double kl_isotropic(const GaussianParams& p, const GaussianParams& q) {
    if (p.degenerate() || q.degenerate()) throw std::invalid_argument("kl_isotropic: degenerate kernel");
    check_same_dim(p.mean, q.mean, "kl_isotropic");
    const double d = static_cast<double>(p.mean.size());
    const double ratio = p.var / q.var;
    double quad = 0.0;
    for (std::size_t i = 0; i < p.mean.size(); ++i) {
        const double r = p.mean[i] - q.mean[i];
        quad += r * r;
    }
    return 0.5 * (d * (ratio - 1.0 - std::log(ratio)) + quad / q.var);
}

// KL( N(mean, var I) || N(0, I) ), in nats.
inline double kl_to_standard_normal(const GaussianParams& p) {
    if (p.degenerate()) throw std::invalid_argument("kl_to_standard_normal: degenerate kernel");
    const double d = static_cast<double>(p.mean.size());
    return 0.5 * (sq_norm(p.mean) + d * (p.var - 1.0 - std::log(p.var)));
}

}  // namespace ctxdiff
