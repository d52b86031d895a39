#pragma once

#include <cmath>
#include <future>
#include <stdexcept>
#include <vector>

#include "ctxdiff/rng.hpp"
#include "ctxdiff/vec.hpp"

namespace ctxdiff {

// Conditional Gaussian data model x0 = mu(c) + sigma(c) * eps, the setting in
// which both the vanilla and the adapted optimal estimation errors have
// closed forms.
struct ToyModel {
    std::vector<Vec> means;      // per class
    std::vector<double> sigmas;  // per class, > 0
    int dim = 0;

    int num_classes() const { return static_cast<int>(means.size()); }

    void validate() const {
        if (dim <= 0) throw std::invalid_argument("ToyModel: dim must be >= 1");
        if (means.empty() || means.size() != sigmas.size()) {
            throw std::invalid_argument("ToyModel: means/sigmas must be non-empty and equal-sized");
        }
        for (const auto& m : means) {
            if (static_cast<int>(m.size()) != dim) {
                throw std::invalid_argument("ToyModel: mean dimension mismatch");
            }
        }
        for (double s : sigmas) {
            if (!(s > 0.0)) throw std::invalid_argument("ToyModel: sigma must be > 0");
        }
    }
};

namespace detail {
inline void check_toy_args(double sigma_c, double alpha_bar_t, int d) {
    if (!(sigma_c > 0.0)) throw std::invalid_argument("toy oracle: sigma must be > 0");
    if (!(alpha_bar_t >= 0.0 && alpha_bar_t <= 1.0)) {
        throw std::invalid_argument("toy oracle: alpha_bar must be in [0,1]");
    }
    if (d < 1) throw std::invalid_argument("toy oracle: d must be >= 1");
}
}  // namespace detail

// Expected squared error of E[x0 | x_t, c] under the vanilla forward process:
// d * sigma^2 * (1 - ab) / (ab * sigma^2 + 1 - ab).
inline double ddpm_optimal_error(double sigma_c, double alpha_bar_t, int d) {
    detail::check_toy_args(sigma_c, alpha_bar_t, d);
    const double s2 = sigma_c * sigma_c;
    if (alpha_bar_t == 1.0) return 0.0;
    return static_cast<double>(d) * s2 * (1.0 - alpha_bar_t) /
           (alpha_bar_t * s2 + 1.0 - alpha_bar_t);
}

// Same error with the linear adapter of strength r >= 0 added to the
// observation: d * sigma^2 * (1 - ab) / (1 - ab + (r + sqrt(ab))^2 sigma^2).
inline double contextdiff_optimal_error(double sigma_c, double alpha_bar_t, double r, int d) {
    detail::check_toy_args(sigma_c, alpha_bar_t, d);
    if (r < 0.0) throw std::invalid_argument("toy oracle: r must be >= 0");
    const double s2 = sigma_c * sigma_c;
    const double coef = r + std::sqrt(alpha_bar_t);
    const double denom = 1.0 - alpha_bar_t + coef * coef * s2;
    if (denom == 0.0) return 0.0;  // ab = 1, r = 0 reduces to the noise-free case
    return static_cast<double>(d) * s2 * (1.0 - alpha_bar_t) / denom;
}

struct McErrorResult {
    double mse = 0.0;
    double std_error = 0.0;
    long n = 0;
};

// Brute-force oracle for both closed forms: draws (eps, eps'), forms
// x0 = mu + sigma*eps and x_t = (r + sqrt(ab)) x0 + sqrt(1-ab) eps', applies
// the conditional-expectation estimator and reports the empirical MSE with
// its standard error. Work is split into fixed shards with per-shard rng
// streams and reduced in shard order, so results do not depend on the thread
// count.
inline McErrorResult mc_error(const ToyModel& model, int class_id, double alpha_bar_t, double r,
                              long n, Rng& rng, int threads = 1) {
    model.validate();
    if (class_id < 0 || class_id >= model.num_classes()) {
        throw std::out_of_range("mc_error: class id out of range");
    }
    if (n < 1) throw std::invalid_argument("mc_error: n must be >= 1");
    detail::check_toy_args(model.sigmas[static_cast<std::size_t>(class_id)], alpha_bar_t, model.dim);
    if (r < 0.0) throw std::invalid_argument("mc_error: r must be >= 0");

    const Vec& mu = model.means[static_cast<std::size_t>(class_id)];
    const double sigma = model.sigmas[static_cast<std::size_t>(class_id)];
    const double s2 = sigma * sigma;
    const double coef = r + std::sqrt(alpha_bar_t);
    const double noise_sd = std::sqrt(1.0 - alpha_bar_t);
    const double denom = 1.0 - alpha_bar_t + coef * coef * s2;
    const double gain = denom > 0.0 ? s2 * coef / denom : 0.0;
    const int d = model.dim;

    const std::uint64_t shard_root = rng.next_u64();
    const int shards = static_cast<int>(std::min<long>(n, 64));

    auto run_shard = [&](int shard, long count) {
        Rng srng = Rng::stream(shard_root, static_cast<std::uint64_t>(shard));
        double sum = 0.0, sum_sq = 0.0;
        for (long i = 0; i < count; ++i) {
            double err = 0.0;
            for (int k = 0; k < d; ++k) {
                const double eps = srng.normal();
                const double eps_prime = srng.normal();
                const double x0 = mu[static_cast<std::size_t>(k)] + sigma * eps;
                const double x_t = coef * x0 + noise_sd * eps_prime;
                const double x0_hat = mu[static_cast<std::size_t>(k)] -
                                      gain * (coef * mu[static_cast<std::size_t>(k)] - x_t);
                const double delta = x0 - x0_hat;
                err += delta * delta;
            }
            sum += err;
            sum_sq += err * err;
        }
        return std::pair<double, double>{sum, sum_sq};
    };

    std::vector<long> counts(static_cast<std::size_t>(shards), n / shards);
    for (long i = 0; i < n % shards; ++i) counts[static_cast<std::size_t>(i)] += 1;

    std::vector<std::pair<double, double>> partials(static_cast<std::size_t>(shards));
    const int workers = std::max(1, std::min(threads, shards));
    if (workers == 1) {
        for (int sdx = 0; sdx < shards; ++sdx) {
            partials[static_cast<std::size_t>(sdx)] = run_shard(sdx, counts[static_cast<std::size_t>(sdx)]);
        }
    } else {
        std::vector<std::future<void>> futs;
        futs.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            futs.push_back(std::async(std::launch::async, [&, w] {
                for (int sdx = w; sdx < shards; sdx += workers) {
                    partials[static_cast<std::size_t>(sdx)] =
                        run_shard(sdx, counts[static_cast<std::size_t>(sdx)]);
                }
            }));
        }
        for (auto& f : futs) f.get();
    }

    double sum = 0.0, sum_sq = 0.0;
    for (const auto& [a, b] : partials) {
        sum += a;
        sum_sq += b;
    }
    McErrorResult res;
    res.n = n;
    res.mse = sum / static_cast<double>(n);
    const double var = std::max(0.0, sum_sq / static_cast<double>(n) - res.mse * res.mse);
    res.std_error = std::sqrt(var / static_cast<double>(n));
    return res;
}

}  // namespace ctxdiff
