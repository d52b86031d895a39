#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctxdiff/adapter.hpp"
#include "ctxdiff/nn.hpp"
#include "ctxdiff/rng.hpp"
#include "ctxdiff/vec.hpp"

namespace ctxdiff {

// Any x0-predictor usable by the samplers; trained models, stubs and oracles
// all fit this shape.
using DenoiserFn = std::function<Vec(const Vec& x_t, const ConditionValue& c, int t)>;

struct DenoiserSpec {
    int dim = 0;
    int num_classes = 0;
    int class_emb_dim = 8;
    int time_emb_dim = 16;
    std::vector<int> hidden = {64, 64};
    int T = 0;
};

// f_theta(x_t, c, t) -> x0_hat: class embedding + sinusoidal time features
// concatenated to x_t, through a small tanh MLP.
class MlpDenoiser {
public:
    static MlpDenoiser init(DenoiserSpec spec, Rng& rng) {
        if (spec.dim <= 0 || spec.num_classes <= 0 || spec.T <= 0) {
            throw std::invalid_argument("MlpDenoiser needs dim, num_classes and T");
        }
        MlpDenoiser d;
        d.spec_ = spec;
        nn::Tensor& emb = d.theta_.add("emb_class", spec.num_classes + 1, spec.class_emb_dim);
        for (auto& v : emb.data) v = rng.normal() * 0.02;
        d.mlp_.dims.clear();
        d.mlp_.dims.push_back(spec.dim + spec.class_emb_dim + spec.time_emb_dim);
        for (int h : spec.hidden) d.mlp_.dims.push_back(h);
        d.mlp_.dims.push_back(spec.dim);
        nn::init_mlp(d.theta_, "mlp", d.mlp_, rng);
        return d;
    }

    const DenoiserSpec& spec() const { return spec_; }
    nn::ParamSet& params() { return theta_; }
    const nn::ParamSet& params() const { return theta_; }
    void set_params(nn::ParamSet p) { theta_ = std::move(p); }

    Vec predict(const Vec& x_t, const ConditionValue& c, int t) const {
        validate(x_t, c, t);
        Vec in;
        in.reserve(static_cast<std::size_t>(mlp_.dims.front()));
        in.insert(in.end(), x_t.begin(), x_t.end());
        const nn::Tensor& emb = theta_.at("emb_class");
        const double* row = emb.data.data() + static_cast<std::size_t>(c.class_id) * spec_.class_emb_dim;
        in.insert(in.end(), row, row + spec_.class_emb_dim);
        Vec tf = nn::time_features(t, spec_.T, spec_.time_emb_dim);
        in.insert(in.end(), tf.begin(), tf.end());
        return nn::mlp_eval(theta_, "mlp", mlp_, std::move(in));
    }

    nn::Tape::Ref tape_forward(nn::Tape& tape, nn::Tape::Ref x_t, const ConditionValue& c, int t,
                               int group) const {
        nn::Tape::Ref emb = tape.table_row(tape.param(theta_.at("emb_class"), group, "emb_class"),
                                           c.class_id, spec_.num_classes + 1, spec_.class_emb_dim);
        nn::Tape::Ref tf = tape.constant(nn::time_features(t, spec_.T, spec_.time_emb_dim));
        nn::Tape::Ref in = tape.concat(x_t, emb, tf);
        return nn::mlp_forward(tape, theta_, "mlp", mlp_, in, group);
    }

    DenoiserFn fn() const {
        return [this](const Vec& x_t, const ConditionValue& c, int t) { return predict(x_t, c, t); };
    }

private:
    void validate(const Vec& x_t, const ConditionValue& c, int t) const {
        if (static_cast<int>(x_t.size()) != spec_.dim) {
            throw std::invalid_argument("denoiser: input dimension mismatch");
        }
        if (t < 0 || t > spec_.T) throw std::out_of_range("denoiser: timestep out of range");
        if (c.class_id < 0 || c.class_id > spec_.num_classes) {
            throw std::out_of_range("denoiser: class id out of range");
        }
    }

    DenoiserSpec spec_;
    nn::MlpSpec mlp_;
    nn::ParamSet theta_;
};

}  // namespace ctxdiff
