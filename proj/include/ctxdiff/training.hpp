#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ctxdiff/adapter.hpp"
#include "ctxdiff/dataset.hpp"
#include "ctxdiff/denoiser.hpp"
#include "ctxdiff/forward.hpp"
#include "ctxdiff/gaussian.hpp"
#include "ctxdiff/nn.hpp"
#include "ctxdiff/reverse.hpp"
#include "ctxdiff/rng.hpp"
#include "ctxdiff/schedule.hpp"

namespace ctxdiff {

enum class LambdaMode { unit, lipschitz };

inline const char* to_string(LambdaMode m) { return m == LambdaMode::unit ? "unit" : "lipschitz"; }

inline LambdaMode lambda_mode_from_string(const std::string& s) {
    if (s == "unit") return LambdaMode::unit;
    if (s == "lipschitz") return LambdaMode::lipschitz;
    throw std::invalid_argument("unknown lambda mode: " + s);
}

// Per-t loss weight. The lipschitz mode is the coefficient under which the
// weighted reconstruction norm upper-bounds the posterior mean gap:
//   sqrt(ab_{t-1}) beta_t / (1-ab_t)
//   + (sqrt(a_t)(1-ab_{t-1})/(1-ab_t)) * k_t * C_t + k_{t-1} * C_{t-1}.
inline double lambda_weight(LambdaMode mode, const NoiseSchedule& s, int t,
                            std::span<const double> lipschitz_c = {}) {
    s.check_t(t, 1);
    if (mode == LambdaMode::unit) return 1.0;
    if (lipschitz_c.size() != static_cast<std::size_t>(s.T()) + 1) {
        throw std::invalid_argument("lambda_weight: lipschitz estimates missing (need C_0..C_T)");
    }
    const double ab_t = s.alpha_bar(t);
    const double ab_prev = s.alpha_bar(t - 1);
    const double beta_t = s.beta(t);
    const double c0 = std::sqrt(ab_prev) * beta_t / (1.0 - ab_t);
    const double ct = std::sqrt(s.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab_t);
    return c0 + ct * s.k(t) * lipschitz_c[static_cast<std::size_t>(t)] +
           s.k(t - 1) * lipschitz_c[static_cast<std::size_t>(t - 1)];
}

struct TrainConfig {
    ScheduleSpec schedule;
    AdapterSpec adapter;
    DenoiserSpec denoiser;
    long steps = 1000;
    int batch_size = 32;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.0;
    LambdaMode lambda_mode = LambdaMode::unit;
    double cond_dropout_prob = 0.0;  // classifier-free guidance hook; 0 disables
    std::uint64_t seed = 0;
    long nelbo_every = 0;  // 0 = no NELBO checkpoints in the metrics log
    int nelbo_examples = 64;
    int nelbo_mc = 1;
    int lipschitz_samples = 64;     // sample-set size for C_t estimation
    long lipschitz_refresh = 1000;  // re-estimate every this many steps

    void validate() const {
        if (steps < 0) throw std::invalid_argument("train config: steps must be >= 0");
        if (batch_size < 1) throw std::invalid_argument("train config: batch size must be >= 1");
        if (!(lr > 0.0)) throw std::invalid_argument("train config: learning rate must be > 0");
    }
};

struct TrainState {
    NoiseSchedule schedule;
    MlpDenoiser denoiser;
    ContextAdapter adapter;
    nn::AdamW opt_theta;
    nn::AdamW opt_phi;
    long step = 0;
    Rng rng{0};
    std::vector<double> lipschitz_c;  // C_0..C_T when lambda_mode == lipschitz
    LambdaMode lambda_mode = LambdaMode::unit;
    double cond_dropout_prob = 0.0;
};

struct NonFiniteLossError : std::runtime_error {
    std::vector<int> indices;
    explicit NonFiniteLossError(std::vector<int> idx)
        : std::runtime_error(describe(idx)), indices(std::move(idx)) {}
    static std::string describe(const std::vector<int>& idx) {
        std::string s = "non-finite loss at batch indices:";
        for (int i : idx) s += " " + std::to_string(i);
        return s;
    }
};

struct LossBatchResult {
    double loss = 0.0;
    nn::ParamSet theta_grads;
    nn::ParamSet phi_grads;
};

// Simplified training objective over one batch: per item, t ~ U{1..T},
// x_t drawn by reparameterization (so d loss / d phi flows through the noisy
// sample into the denoiser), then lambda_t * ||f_theta(x_t,c,t) - x0||^2.
// Returns the batch mean and exact reverse-mode gradients for theta and phi.
inline LossBatchResult loss_batch(std::span<const DatasetRecord> batch, TrainState& state,
                                  const NoiseSchedule& s, nn::Tape& tape) {
    if (batch.empty()) throw std::invalid_argument("loss_batch: empty batch");
    constexpr int kThetaGroup = 0;
    constexpr int kPhiGroup = 1;
    tape.clear();
    const int null_id = state.denoiser.spec().num_classes;
    std::vector<nn::Tape::Ref> item_losses;
    item_losses.reserve(batch.size());
    nn::Tape::Ref total{};
    for (const auto& rec : batch) {
        const int t = state.rng.uniform_int(1, s.T());
        ConditionValue c{rec.class_id, {}};
        if (state.cond_dropout_prob > 0.0 && state.rng.uniform() < state.cond_dropout_prob) {
            c.class_id = null_id;
        }
        Vec eps = state.rng.normal_vec(rec.x.size());
        const double lam =
            lambda_weight(state.lambda_mode, s, t,
                          state.lambda_mode == LambdaMode::lipschitz
                              ? std::span<const double>(state.lipschitz_c)
                              : std::span<const double>{});
        nn::Tape::Ref x0 = tape.constant(rec.x);
        nn::Tape::Ref r = state.adapter.tape_apply(tape, x0, c, t, kPhiGroup);
        nn::Tape::Ref biased = tape.axpy(std::sqrt(s.alpha_bar(t)), x0, tape.scale(s.k(t), r));
        nn::Tape::Ref x_t = tape.axpy(std::sqrt(1.0 - s.alpha_bar(t)), tape.constant(eps), biased);
        nn::Tape::Ref x0_hat = state.denoiser.tape_forward(tape, x_t, c, t, kThetaGroup);
        nn::Tape::Ref item = tape.scale(lam, tape.sum_sq(tape.sub(x0_hat, x0)));
        item_losses.push_back(item);
        total = total.valid() ? tape.add(total, item) : item;
    }
    nn::Tape::Ref mean = tape.scale(1.0 / static_cast<double>(batch.size()), total);
    const double loss = tape.value_scalar(mean);
    if (!std::isfinite(loss)) {
        std::vector<int> bad;
        for (std::size_t i = 0; i < item_losses.size(); ++i) {
            if (!std::isfinite(tape.value_scalar(item_losses[i]))) bad.push_back(static_cast<int>(i));
        }
        throw NonFiniteLossError(std::move(bad));
    }
    tape.backward(mean);
    LossBatchResult res;
    res.loss = loss;
    res.theta_grads = nn::ParamSet::zeros_like(state.denoiser.params());
    res.phi_grads = nn::ParamSet::zeros_like(state.adapter.params());
    tape.accumulate_param_grads(kThetaGroup, res.theta_grads);
    tape.accumulate_param_grads(kPhiGroup, res.phi_grads);
    return res;
}

inline LossBatchResult loss_batch(std::span<const DatasetRecord> batch, TrainState& state,
                                  const NoiseSchedule& s) {
    nn::Tape tape;
    return loss_batch(batch, state, s, tape);
}

// ---------------------------------------------------------------------------
// Variational bound (Eq.-4 style NELBO), in bits per dimension
// ---------------------------------------------------------------------------

struct NelboReport {
    double total_bits = 0.0;
    double prior_bits = 0.0;
    double recon_bits = 0.0;
    std::vector<double> kl_bits;  // indexed by t, entries 2..T used
};

inline constexpr double kReconVar = 1e-3;  // fixed width of p(x0 | x1, c)

// Monte-Carlo NELBO for one example. The prior KL is closed-form and
// adapter-free (k_T = 0); interior terms compare the adapted posterior around
// the true x0 with the sampling kernel built from x0_hat; the reconstruction
// term uses the fixed-width Gaussian convention.
inline NelboReport nelbo(const Vec& x0, const ConditionValue& c, const DenoiserFn& denoiser,
                         const ContextAdapter& adapter, const NoiseSchedule& s, int mc_per_term,
                         Rng& rng, double recon_var = kReconVar) {
    if (mc_per_term < 1) throw std::invalid_argument("nelbo: mc_per_term must be >= 1");
    const double d = static_cast<double>(x0.size());
    const double to_bits = 1.0 / (d * std::numbers::ln2);
    NelboReport rep;
    rep.kl_bits.assign(static_cast<std::size_t>(s.T()) + 1, 0.0);

    rep.prior_bits = kl_to_standard_normal(marginal_params(x0, c, s.T(), adapter, s)) * to_bits;

    for (int t = s.T(); t >= 2; --t) {
        double acc = 0.0;
        for (int m = 0; m < mc_per_term; ++m) {
            const Vec x_t = sample_marginal(x0, c, t, adapter, s, rng).x_t;
            const GaussianParams q = posterior_params(x_t, x0, c, t, adapter, s);
            const Vec x0_hat = denoiser(x_t, c, t);
            const GaussianParams p = ddpm_step_params(x_t, x0_hat, c, t, adapter, s);
            acc += kl_isotropic(q, p);
        }
        const double term = acc / static_cast<double>(mc_per_term) * to_bits;
        if (!std::isfinite(term)) throw std::runtime_error("nelbo: non-finite KL term at t=" + std::to_string(t));
        rep.kl_bits[static_cast<std::size_t>(t)] = term;
    }

    double acc = 0.0;
    for (int m = 0; m < mc_per_term; ++m) {
        const Vec x_1 = sample_marginal(x0, c, 1, adapter, s, rng).x_t;
        const GaussianParams recon{denoiser(x_1, c, 1), recon_var};
        acc += -log_pdf(recon, x0);
    }
    rep.recon_bits = acc / static_cast<double>(mc_per_term) * to_bits;
    if (!std::isfinite(rep.recon_bits)) throw std::runtime_error("nelbo: non-finite reconstruction term");

    rep.total_bits = rep.prior_bits + rep.recon_bits;
    for (int t = 2; t <= s.T(); ++t) rep.total_bits += rep.kl_bits[static_cast<std::size_t>(t)];
    return rep;
}

inline NelboReport nelbo(const Vec& x0, const ConditionValue& c, const TrainState& state,
                         const NoiseSchedule& s, int mc_per_term, Rng& rng,
                         double recon_var = kReconVar) {
    return nelbo(x0, c, state.denoiser.fn(), state.adapter, s, mc_per_term, rng, recon_var);
}

// Per-example NELBO totals over a record set, with per-example rng streams so
// paired model comparisons share their noise draws.
inline std::vector<double> nelbo_per_example(std::span<const DatasetRecord> records,
                                             const DenoiserFn& denoiser,
                                             const ContextAdapter& adapter, const NoiseSchedule& s,
                                             int mc_per_term, std::uint64_t eval_seed,
                                             double recon_var = kReconVar) {
    std::vector<double> out;
    out.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        Rng rng = Rng::stream(eval_seed, i);
        ConditionValue c{records[i].class_id, {}};
        out.push_back(nelbo(records[i].x, c, denoiser, adapter, s, mc_per_term, rng, recon_var)
                          .total_bits);
    }
    return out;
}

// Percentile bootstrap CI for the mean of `values`.
inline std::pair<double, double> bootstrap_mean_ci(std::span<const double> values, int resamples,
                                                   double coverage, Rng& rng) {
    if (values.empty()) throw std::invalid_argument("bootstrap_mean_ci: empty sample");
    std::vector<double> means;
    means.reserve(static_cast<std::size_t>(resamples));
    const int n = static_cast<int>(values.size());
    for (int r = 0; r < resamples; ++r) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) acc += values[static_cast<std::size_t>(rng.uniform_int(0, n - 1))];
        means.push_back(acc / n);
    }
    std::sort(means.begin(), means.end());
    const double tail = (1.0 - coverage) / 2.0;
    const auto pick = [&](double q) {
        const double pos = q * (means.size() - 1);
        const std::size_t i = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(i);
        return i + 1 < means.size() ? means[i] * (1.0 - frac) + means[i + 1] * frac : means[i];
    };
    return {pick(tail), pick(1.0 - tail)};
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainMetrics {
    struct Row {
        long step = 0;
        double loss = 0.0;
        std::optional<double> nelbo_bits;
    };
    std::vector<Row> rows;
};

inline void refresh_lipschitz(TrainState& state, const Dataset& data, int sample_count) {
    std::vector<std::pair<Vec, ConditionValue>> samples;
    const std::size_t n = std::min<std::size_t>(data.records.size(),
                                                static_cast<std::size_t>(sample_count));
    for (std::size_t i = 0; i < n; ++i) {
        samples.emplace_back(data.records[i].x, ConditionValue{data.records[i].class_id, {}});
    }
    state.lipschitz_c.assign(static_cast<std::size_t>(state.schedule.T()) + 1, 0.0);
    for (int t = 0; t <= state.schedule.T(); ++t) {
        state.lipschitz_c[static_cast<std::size_t>(t)] = estimate_lipschitz(state.adapter, samples, t);
    }
}

inline TrainState init_train_state(const TrainConfig& cfg) {
    cfg.validate();
    TrainState state;
    state.schedule = make_schedule(cfg.schedule);
    Rng init_theta = Rng::stream(cfg.seed, 1);
    Rng init_phi = Rng::stream(cfg.seed, 2);
    DenoiserSpec dspec = cfg.denoiser;
    dspec.T = cfg.schedule.T;
    state.denoiser = MlpDenoiser::init(dspec, init_theta);
    AdapterSpec aspec = cfg.adapter;
    aspec.T = cfg.schedule.T;
    switch (aspec.variant) {
        case AdapterVariant::zero:
            state.adapter = ContextAdapter::zero(aspec.dim);
            break;
        case AdapterVariant::linear_toy:
            state.adapter = ContextAdapter::linear_toy(aspec.dim, aspec.r);
            break;
        case AdapterVariant::learned:
            state.adapter = ContextAdapter::learned(aspec, init_phi);
            break;
    }
    nn::AdamWConfig oc;
    oc.lr = cfg.lr;
    oc.beta1 = cfg.beta1;
    oc.beta2 = cfg.beta2;
    oc.weight_decay = cfg.weight_decay;
    state.opt_theta = nn::AdamW(oc);
    state.opt_phi = nn::AdamW(oc);
    state.rng = Rng::stream(cfg.seed, 3);
    state.lambda_mode = cfg.lambda_mode;
    state.cond_dropout_prob = cfg.cond_dropout_prob;
    return state;
}

// Joint optimization of (theta, phi). Reproducible from cfg.seed; aborts with
// NonFiniteLossError if the loss diverges.
inline TrainState train(const TrainConfig& cfg, const Dataset& data, TrainMetrics* metrics = nullptr) {
    if (data.records.empty()) throw std::invalid_argument("train: dataset is empty");
    TrainState state = init_train_state(cfg);
    if (cfg.lambda_mode == LambdaMode::lipschitz) {
        refresh_lipschitz(state, data, cfg.lipschitz_samples);
    }
    nn::Tape tape;
    std::vector<DatasetRecord> batch(static_cast<std::size_t>(cfg.batch_size));
    const int n = static_cast<int>(data.records.size());
    for (long step = 1; step <= cfg.steps; ++step) {
        for (auto& slot : batch) {
            slot = data.records[static_cast<std::size_t>(state.rng.uniform_int(0, n - 1))];
        }
        LossBatchResult res = loss_batch(batch, state, state.schedule, tape);
        state.opt_theta.step(state.denoiser.params(), res.theta_grads);
        if (!state.adapter.params().tensors().empty()) {
            state.opt_phi.step(state.adapter.params(), res.phi_grads);
        }
        state.step = step;
        if (metrics) {
            TrainMetrics::Row row;
            row.step = step;
            row.loss = res.loss;
            if (cfg.nelbo_every > 0 && step % cfg.nelbo_every == 0) {
                const std::size_t ne = std::min<std::size_t>(
                    data.records.size(), static_cast<std::size_t>(cfg.nelbo_examples));
                std::vector<double> vals = nelbo_per_example(
                    std::span<const DatasetRecord>(data.records.data(), ne), state.denoiser.fn(),
                    state.adapter, state.schedule, cfg.nelbo_mc,
                    splitmix64(cfg.seed ^ static_cast<std::uint64_t>(step)));
                double acc = 0.0;
                for (double v : vals) acc += v;
                row.nelbo_bits = acc / static_cast<double>(vals.size());
            }
            metrics->rows.push_back(row);
        }
        if (cfg.lambda_mode == LambdaMode::lipschitz && cfg.lipschitz_refresh > 0 &&
            step % cfg.lipschitz_refresh == 0) {
            refresh_lipschitz(state, data, cfg.lipschitz_samples);
        }
    }
    return state;
}

// ---------------------------------------------------------------------------
// Train-state checkpointing (single file: params + optimizer moments)
// ---------------------------------------------------------------------------

inline nn::ParamSet merge_prefixed(const std::vector<std::pair<std::string, const nn::ParamSet*>>& parts) {
    nn::ParamSet out;
    for (const auto& [prefix, ps] : parts) {
        for (const auto& [name, t] : ps->tensors()) {
            nn::Tensor& dst = out.add(prefix + name, t.shape.rows, t.shape.cols);
            dst.data = t.data;
        }
    }
    return out;
}

inline nn::ParamSet split_prefixed(const nn::ParamSet& merged, const std::string& prefix) {
    nn::ParamSet out;
    for (const auto& [name, t] : merged.tensors()) {
        if (name.rfind(prefix, 0) == 0) {
            nn::Tensor& dst = out.add(name.substr(prefix.size()), t.shape.rows, t.shape.cols);
            dst.data = t.data;
        }
    }
    return out;
}

inline void save_train_checkpoint(const std::string& path, const TrainState& state,
                                  const std::string& config_hash) {
    nn::ParamSet merged = merge_prefixed({
        {"denoiser.", &state.denoiser.params()},
        {"adapter.", &state.adapter.params()},
        {"opt_m.denoiser.", &state.opt_theta.moment1()},
        {"opt_v.denoiser.", &state.opt_theta.moment2()},
        {"opt_m.adapter.", &state.opt_phi.moment1()},
        {"opt_v.adapter.", &state.opt_phi.moment2()},
    });
    nlohmann::json extra;
    extra["config_hash"] = config_hash;
    extra["step"] = state.step;
    extra["rng"] = state.rng.state_string();
    extra["opt_steps"] = {state.opt_theta.step_count(), state.opt_phi.step_count()};
    nn::save_checkpoint(path, merged, std::move(extra));
}

// Rebuilds a TrainState from cfg (shapes, specs) and overwrites all tensors
// from the checkpoint file. Throws if the stored config hash differs from
// expected_config_hash (pass empty to skip the check).
inline TrainState load_train_checkpoint(const std::string& path, const TrainConfig& cfg,
                                        const std::string& expected_config_hash = "") {
    nlohmann::json header;
    nn::ParamSet merged = nn::load_checkpoint(path, &header);
    if (!expected_config_hash.empty() && header.value("config_hash", "") != expected_config_hash) {
        throw std::runtime_error("checkpoint/config hash mismatch for " + path);
    }
    TrainState state = init_train_state(cfg);
    auto assign = [&](nn::ParamSet& dst, const std::string& prefix) {
        nn::ParamSet src = split_prefixed(merged, prefix);
        if (!src.tensors().empty() || !dst.tensors().empty()) {
            if (!dst.same_layout(src)) {
                throw std::runtime_error("checkpoint layout mismatch under prefix " + prefix);
            }
            dst = std::move(src);
        }
    };
    assign(state.denoiser.params(), "denoiser.");
    assign(state.adapter.params(), "adapter.");
    const auto opt_steps = header.at("opt_steps");
    state.opt_theta.restore(split_prefixed(merged, "opt_m.denoiser."),
                            split_prefixed(merged, "opt_v.denoiser."), opt_steps.at(0).get<long>());
    state.opt_phi.restore(split_prefixed(merged, "opt_m.adapter."),
                          split_prefixed(merged, "opt_v.adapter."), opt_steps.at(1).get<long>());
    state.step = header.at("step").get<long>();
    state.rng.restore_state(header.at("rng").get<std::string>());
    return state;
}

}  // namespace ctxdiff
