#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ctxdiff/nn.hpp"
#include "ctxdiff/rng.hpp"
#include "ctxdiff/schedule.hpp"
#include "ctxdiff/vec.hpp"

namespace ctxdiff {

// Condition attached to a sample: a class id standing in for a text condition,
// plus an optional continuous feature vector.
struct ConditionValue {
    int class_id = 0;
    Vec continuous;
};

enum class AdapterVariant { zero, linear_toy, learned };

inline const char* to_string(AdapterVariant v) {
    switch (v) {
        case AdapterVariant::zero: return "zero";
        case AdapterVariant::linear_toy: return "linear_toy";
        case AdapterVariant::learned: return "learned";
    }
    return "?";
}

inline AdapterVariant adapter_variant_from_string(const std::string& s) {
    if (s == "zero") return AdapterVariant::zero;
    if (s == "linear_toy") return AdapterVariant::linear_toy;
    if (s == "learned") return AdapterVariant::learned;
    throw std::invalid_argument("unknown adapter variant: " + s);
}

struct AdapterSpec {
    AdapterVariant variant = AdapterVariant::zero;
    int dim = 0;          // dimension of x0 (and of the output)
    double r = 0.0;       // linear_toy coefficient, >= 0
    // learned variant only:
    int num_classes = 0;
    int class_emb_dim = 8;
    int time_emb_dim = 16;
    int hidden_dim = 16;
    int cond_extra_dim = 0;  // size of ConditionValue::continuous, if used
    int T = 0;               // diffusion length the time features are scaled by
};

// The relational function r_phi(x0, c, t). The learned variant mixes projected
// x0 features with projected condition/time features through an elementwise
// product, a stand-in for cross attention at this scale. Its output layer is
// zero-initialized so a fresh model starts exactly at the vanilla process.
class ContextAdapter {
public:
    static ContextAdapter zero(int dim) {
        ContextAdapter a;
        a.spec_.variant = AdapterVariant::zero;
        a.spec_.dim = dim;
        return a;
    }

    static ContextAdapter linear_toy(int dim, double r) {
        if (r < 0.0) throw std::invalid_argument("linear_toy adapter requires r >= 0");
        ContextAdapter a;
        a.spec_.variant = AdapterVariant::linear_toy;
        a.spec_.dim = dim;
        a.spec_.r = r;
        return a;
    }

    static ContextAdapter learned(AdapterSpec spec, Rng& rng) {
        spec.variant = AdapterVariant::learned;
        if (spec.dim <= 0 || spec.num_classes <= 0 || spec.T <= 0) {
            throw std::invalid_argument("learned adapter needs dim, num_classes and T");
        }
        ContextAdapter a;
        a.spec_ = spec;
        // one extra embedding row reserved for the null (dropped) condition
        nn::Tensor& emb = a.phi_.add("emb_class", spec.num_classes + 1, spec.class_emb_dim);
        for (auto& v : emb.data) v = rng.normal() * 0.02;
        nn::Tensor& pxw = a.phi_.add("px.W", spec.hidden_dim, spec.dim);
        nn::init_dense(pxw, rng);
        a.phi_.add("px.b", spec.hidden_dim);
        const int cond_in = spec.class_emb_dim + spec.time_emb_dim + spec.cond_extra_dim;
        nn::Tensor& pcw = a.phi_.add("pc.W", spec.hidden_dim, cond_in);
        nn::init_dense(pcw, rng);
        a.phi_.add("pc.b", spec.hidden_dim);
        nn::Tensor& hw = a.phi_.add("h.W", spec.hidden_dim, spec.hidden_dim);
        nn::init_dense(hw, rng);
        a.phi_.add("h.b", spec.hidden_dim);
        a.phi_.add("out.W", spec.dim, spec.hidden_dim);  // zero init
        a.phi_.add("out.b", spec.dim);
        return a;
    }

    const AdapterSpec& spec() const { return spec_; }
    AdapterVariant variant() const { return spec_.variant; }
    int dim() const { return spec_.dim; }
    nn::ParamSet& params() { return phi_; }
    const nn::ParamSet& params() const { return phi_; }
    void set_params(nn::ParamSet p) { phi_ = std::move(p); }

    // r_phi(x0, c, t). Defined for t in 0..T; the t = 0 / t = T gain clamps
    // happen downstream in bias(), not here.
    Vec apply(const Vec& x0, const ConditionValue& c, int t) const {
        validate(x0, c, t);
        switch (spec_.variant) {
            case AdapterVariant::zero:
                return Vec(x0.size(), 0.0);
            case AdapterVariant::linear_toy:
                return scale(spec_.r, x0);
            case AdapterVariant::learned: {
                Vec px = nn::dense_eval(phi_.at("px.W"), phi_.at("px.b"), x0);
                Vec pc = nn::dense_eval(phi_.at("pc.W"), phi_.at("pc.b"), cond_features(c, t));
                Vec inter(px.size());
                for (std::size_t i = 0; i < px.size(); ++i) inter[i] = px[i] * pc[i];
                Vec h = nn::dense_eval(phi_.at("h.W"), phi_.at("h.b"), inter);
                for (auto& v : h) v = std::tanh(v);
                return nn::dense_eval(phi_.at("out.W"), phi_.at("out.b"), h);
            }
        }
        throw std::logic_error("unreachable");
    }

    // Tape version of apply(); x0 may be any tape node of the right size.
    // group is the tape binding group for phi.
    nn::Tape::Ref tape_apply(nn::Tape& tape, nn::Tape::Ref x0, const ConditionValue& c, int t,
                             int group) const {
        switch (spec_.variant) {
            case AdapterVariant::zero:
                return tape.scale(0.0, x0);
            case AdapterVariant::linear_toy:
                return tape.scale(spec_.r, x0);
            case AdapterVariant::learned: {
                auto p = [&](const char* name) {
                    return tape.param(phi_.at(name), group, name);
                };
                nn::Tape::Ref px =
                    tape.matvec_add(p("px.W"), p("px.b"), x0, spec_.hidden_dim, spec_.dim);
                const int cond_in = spec_.class_emb_dim + spec_.time_emb_dim + spec_.cond_extra_dim;
                // class embedding participates via the tape so its rows train
                nn::Tape::Ref emb = tape.table_row(p("emb_class"), c.class_id,
                                                   spec_.num_classes + 1, spec_.class_emb_dim);
                Vec tail = c.continuous;
                Vec tf = nn::time_features(t, spec_.T, spec_.time_emb_dim);
                tail.insert(tail.end(), tf.begin(), tf.end());
                nn::Tape::Ref cond_full = tape.concat(emb, tape.constant(tail));
                nn::Tape::Ref pc = tape.matvec_add(p("pc.W"), p("pc.b"), cond_full,
                                                   spec_.hidden_dim, cond_in);
                nn::Tape::Ref inter = tape.mul(px, pc);
                nn::Tape::Ref h = tape.tanh_act(tape.matvec_add(p("h.W"), p("h.b"), inter,
                                                                spec_.hidden_dim, spec_.hidden_dim));
                return tape.matvec_add(p("out.W"), p("out.b"), h, spec_.dim, spec_.hidden_dim);
            }
        }
        throw std::logic_error("unreachable");
    }

private:
    void validate(const Vec& x0, const ConditionValue& c, int t) const {
        if (static_cast<int>(x0.size()) != spec_.dim) {
            throw std::invalid_argument("adapter: x0 dimension " + std::to_string(x0.size()) +
                                        " does not match configured dimension " +
                                        std::to_string(spec_.dim));
        }
        if (t < 0 || (spec_.T > 0 && t > spec_.T)) {
            throw std::out_of_range("adapter: timestep out of range");
        }
        if (spec_.variant == AdapterVariant::learned &&
            (c.class_id < 0 || c.class_id > spec_.num_classes)) {
            throw std::out_of_range("adapter: class id out of range");
        }
        if (spec_.variant == AdapterVariant::learned &&
            static_cast<int>(c.continuous.size()) != spec_.cond_extra_dim) {
            throw std::invalid_argument("adapter: continuous condition size mismatch");
        }
    }

    // [class embedding row; continuous features; time features]
    Vec cond_features(const ConditionValue& c, int t) const {
        Vec out;
        out.reserve(static_cast<std::size_t>(spec_.class_emb_dim + spec_.cond_extra_dim +
                                             spec_.time_emb_dim));
        const nn::Tensor& emb = phi_.at("emb_class");
        const double* row = emb.data.data() + static_cast<std::size_t>(c.class_id) * spec_.class_emb_dim;
        out.insert(out.end(), row, row + spec_.class_emb_dim);
        out.insert(out.end(), c.continuous.begin(), c.continuous.end());
        Vec tf = nn::time_features(t, spec_.T, spec_.time_emb_dim);
        out.insert(out.end(), tf.begin(), tf.end());
        return out;
    }

    AdapterSpec spec_;
    nn::ParamSet phi_;
};

inline Vec apply_adapter(const ContextAdapter& adapter, const Vec& x0, const ConditionValue& c,
                         int t) {
    return adapter.apply(x0, c, t);
}

// b_t(x0, c) = k_t * r_phi(x0, c, t); exactly zero at both chain ends.
inline Vec bias(const ContextAdapter& adapter, const NoiseSchedule& schedule, const Vec& x0,
                const ConditionValue& c, int t) {
    const double k = schedule.k(t);
    if (k == 0.0) return Vec(x0.size(), 0.0);
    return scale(k, adapter.apply(x0, c, t));
}

// Empirical lower bound on the Lipschitz constant C_t of x0 -> r_phi(x0,c,t):
// max pairwise ratio over same-condition pairs.
inline double estimate_lipschitz(const ContextAdapter& adapter,
                                 const std::vector<std::pair<Vec, ConditionValue>>& samples,
                                 int t) {
    if (samples.size() < 2) {
        throw std::invalid_argument("estimate_lipschitz: need at least 2 samples");
    }
    std::vector<Vec> outputs;
    outputs.reserve(samples.size());
    for (const auto& [x0, c] : samples) outputs.push_back(adapter.apply(x0, c, t));
    double best = 0.0;
    bool any_pair = false;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        for (std::size_t j = i + 1; j < samples.size(); ++j) {
            if (samples[i].second.class_id != samples[j].second.class_id) continue;
            const double dx = norm(sub(samples[i].first, samples[j].first));
            if (dx < 1e-12) continue;
            any_pair = true;
            best = std::max(best, norm(sub(outputs[i], outputs[j])) / dx);
        }
    }
    if (!any_pair) {
        throw std::invalid_argument("estimate_lipschitz: no distinct same-condition pair in sample set");
    }
    return best;
}

}  // namespace ctxdiff
