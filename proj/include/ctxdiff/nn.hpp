#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxdiff/rng.hpp"
#include "ctxdiff/vec.hpp"
#include "ctxdiff/version.hpp"

namespace ctxdiff::nn {

// ---------------------------------------------------------------------------
// Parameter storage
// ---------------------------------------------------------------------------

struct TensorShape {
    int rows = 0;
    int cols = 1;
    int numel() const { return rows * cols; }
    bool operator==(const TensorShape&) const = default;
};

struct Tensor {
    TensorShape shape;
    Vec data;
};

// Named tensors with immutable shapes. Iteration order is sorted by name,
// which fixes the layout of the checkpoint binary section.
class ParamSet {
public:
    Tensor& add(const std::string& name, int rows, int cols = 1) {
        if (tensors_.count(name)) throw std::invalid_argument("ParamSet: duplicate tensor " + name);
        Tensor t;
        t.shape = TensorShape{rows, cols};
        t.data.assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), 0.0);
        return tensors_.emplace(name, std::move(t)).first->second;
    }

    Tensor& at(const std::string& name) {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw std::out_of_range("ParamSet: no tensor named " + name);
        return it->second;
    }
    const Tensor& at(const std::string& name) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw std::out_of_range("ParamSet: no tensor named " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return tensors_.count(name) > 0; }

    const std::map<std::string, Tensor>& tensors() const { return tensors_; }
    std::map<std::string, Tensor>& tensors() { return tensors_; }

    std::size_t total_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : tensors_) n += t.data.size();
        return n;
    }

    void zero() {
        for (auto& [_, t] : tensors_) std::fill(t.data.begin(), t.data.end(), 0.0);
    }

    // Same names and shapes, zero-filled.
    static ParamSet zeros_like(const ParamSet& other) {
        ParamSet out;
        for (const auto& [name, t] : other.tensors()) out.add(name, t.shape.rows, t.shape.cols);
        return out;
    }

    bool same_layout(const ParamSet& other) const {
        if (tensors_.size() != other.tensors_.size()) return false;
        auto a = tensors_.begin();
        auto b = other.tensors_.begin();
        for (; a != tensors_.end(); ++a, ++b) {
            if (a->first != b->first || !(a->second.shape == b->second.shape)) return false;
        }
        return true;
    }

private:
    std::map<std::string, Tensor> tensors_;
};

// ---------------------------------------------------------------------------
// Reverse-mode tape
// ---------------------------------------------------------------------------

// Records one forward evaluation over flat double vectors and replays it in
// reverse for exact gradients. Values of computed nodes live in one arena that
// is reused across clear() calls; parameter leaves alias the ParamSet storage
// directly instead of copying it.
//
// A tape is single-use with respect to parameter mutation: mutating a bound
// tensor invalidates recorded values. backward() detects the common case
// (optimizer stepped the parameters) and throws.
class Tape {
public:
    struct Ref {
        int i = -1;
        bool valid() const { return i >= 0; }
    };

    void clear() {
        nodes_.clear();
        values_.clear();
        grads_.clear();
        bindings_.clear();
    }

    Ref constant(std::span<const double> v) {
        Node n;
        n.op = Op::leaf;
        n.size = static_cast<int>(v.size());
        n.val_off = alloc_value(n.size);
        std::memcpy(values_.data() + n.val_off, v.data(), v.size() * sizeof(double));
        return push(n);
    }
    Ref constant(const Vec& v) { return constant(std::span<const double>(v)); }

    // Binding the same tensor twice returns the original leaf, so per-item
    // loops over a batch share one leaf per parameter.
    Ref param(const Tensor& t, int group, const std::string& name) {
        for (const auto& b : bindings_) {
            if (nodes_[static_cast<std::size_t>(b.node)].external == t.data.data()) {
                return Ref{b.node};
            }
        }
        Node n;
        n.op = Op::leaf;
        n.size = t.shape.numel();
        n.external = t.data.data();
        n.guard = t.data.empty() ? 0.0 : t.data.front();
        Ref r = push(n);
        bindings_.push_back(Binding{r.i, group, name});
        return r;
    }

    // W (rows x cols, row-major) * x + b
    Ref matvec_add(Ref w, Ref b, Ref x, int rows, int cols) {
        require(w, rows * cols, "matvec_add: W");
        require(b, rows, "matvec_add: b");
        require(x, cols, "matvec_add: x");
        Node n = make(Op::matvec_add, rows, w, b, x);
        n.rows = rows;
        n.cols = cols;
        const double* W = val_ptr(w);
        const double* B = val_ptr(b);
        const double* X = val_ptr(x);
        double* Y = values_.data() + n.val_off;
        for (int r = 0; r < rows; ++r) {
            double acc = B[r];
            const double* Wr = W + static_cast<std::size_t>(r) * cols;
            for (int c = 0; c < cols; ++c) acc += Wr[c] * X[c];
            Y[r] = acc;
        }
        return push(n);
    }

    Ref add(Ref a, Ref b) { return binary(Op::add, a, b); }
    Ref sub(Ref a, Ref b) { return binary(Op::sub, a, b); }
    Ref mul(Ref a, Ref b) { return binary(Op::mul, a, b); }

    // s*x + y
    Ref axpy(double s, Ref x, Ref y) {
        require(y, node(x).size, "axpy: operand sizes differ");
        Node n = make(Op::axpy, node(x).size, x, y);
        n.s = s;
        const double* X = val_ptr(x);
        const double* Y = val_ptr(y);
        double* O = values_.data() + n.val_off;
        for (int i = 0; i < n.size; ++i) O[i] = s * X[i] + Y[i];
        return push(n);
    }

    Ref scale(double s, Ref x) {
        Node n = make(Op::scale, node(x).size, x);
        n.s = s;
        const double* X = val_ptr(x);
        double* O = values_.data() + n.val_off;
        for (int i = 0; i < n.size; ++i) O[i] = s * X[i];
        return push(n);
    }

    Ref tanh_act(Ref x) {
        Node n = make(Op::tanh_act, node(x).size, x);
        const double* X = val_ptr(x);
        double* O = values_.data() + n.val_off;
        for (int i = 0; i < n.size; ++i) O[i] = std::tanh(X[i]);
        return push(n);
    }

    Ref concat(Ref a, Ref b) {
        Node n = make(Op::concat2, node(a).size + node(b).size, a, b);
        double* O = values_.data() + n.val_off;
        std::memcpy(O, val_ptr(a), node(a).size * sizeof(double));
        std::memcpy(O + node(a).size, val_ptr(b), node(b).size * sizeof(double));
        return push(n);
    }
    Ref concat(Ref a, Ref b, Ref c) { return concat(concat(a, b), c); }

    // One row of a rows x cols table (embedding lookup).
    Ref table_row(Ref table, int row, int rows, int cols) {
        require(table, rows * cols, "table_row: table");
        if (row < 0 || row >= rows) throw std::out_of_range("table_row: row out of range");
        Node n = make(Op::table_row, cols, table);
        n.rows = rows;
        n.cols = cols;
        n.row = row;
        std::memcpy(values_.data() + n.val_off, val_ptr(table) + static_cast<std::size_t>(row) * cols,
                    static_cast<std::size_t>(cols) * sizeof(double));
        return push(n);
    }

    Ref sum_sq(Ref x) {
        Node n = make(Op::sum_sq, 1, x);
        const double* X = val_ptr(x);
        double acc = 0.0;
        for (int i = 0; i < node(x).size; ++i) acc += X[i] * X[i];
        values_[static_cast<std::size_t>(n.val_off)] = acc;
        return push(n);
    }

    std::span<const double> value(Ref r) const {
        const Node& n = node(r);
        return {val_ptr(r), static_cast<std::size_t>(n.size)};
    }
    double value_scalar(Ref r) const {
        if (node(r).size != 1) throw std::invalid_argument("value_scalar: node is not scalar");
        return value(r)[0];
    }
    std::span<const double> grad(Ref r) const {
        if (grads_.empty()) throw std::logic_error("grad: backward() has not run");
        return {grads_.data() + node(r).grad_off, static_cast<std::size_t>(node(r).size)};
    }

    void backward(Ref out) {
        for (const auto& b : bindings_) {
            const Node& n = nodes_[static_cast<std::size_t>(b.node)];
            if (n.size > 0 && n.external[0] != n.guard) {
                throw std::logic_error("Tape::backward: bound parameters were mutated after recording");
            }
        }
        std::size_t total = 0;
        for (auto& n : nodes_) {
            n.grad_off = static_cast<int>(total);
            total += static_cast<std::size_t>(n.size);
        }
        grads_.assign(total, 0.0);
        {
            const Node& n = node(out);
            if (n.size != 1) throw std::invalid_argument("backward: output must be scalar");
            grads_[static_cast<std::size_t>(n.grad_off)] = 1.0;
        }
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
            const Node& n = nodes_[static_cast<std::size_t>(i)];
            const double* gy = grads_.data() + n.grad_off;
            switch (n.op) {
                case Op::leaf:
                    break;
                case Op::matvec_add: {
                    const Node& wn = nodes_[static_cast<std::size_t>(n.a)];
                    const Node& bn = nodes_[static_cast<std::size_t>(n.b)];
                    const Node& xn = nodes_[static_cast<std::size_t>(n.c)];
                    const double* W = node_val(wn);
                    const double* X = node_val(xn);
                    double* gW = grads_.data() + wn.grad_off;
                    double* gB = grads_.data() + bn.grad_off;
                    double* gX = grads_.data() + xn.grad_off;
                    for (int r = 0; r < n.rows; ++r) {
                        const double g = gy[r];
                        gB[r] += g;
                        const double* Wr = W + static_cast<std::size_t>(r) * n.cols;
                        double* gWr = gW + static_cast<std::size_t>(r) * n.cols;
                        for (int c = 0; c < n.cols; ++c) {
                            gWr[c] += g * X[c];
                            gX[c] += g * Wr[c];
                        }
                    }
                    break;
                }
                case Op::add: {
                    accum(n.a, gy, n.size, +1.0);
                    accum(n.b, gy, n.size, +1.0);
                    break;
                }
                case Op::sub: {
                    accum(n.a, gy, n.size, +1.0);
                    accum(n.b, gy, n.size, -1.0);
                    break;
                }
                case Op::mul: {
                    const Node& an = nodes_[static_cast<std::size_t>(n.a)];
                    const Node& bn = nodes_[static_cast<std::size_t>(n.b)];
                    const double* A = node_val(an);
                    const double* B = node_val(bn);
                    double* gA = grads_.data() + an.grad_off;
                    double* gB = grads_.data() + bn.grad_off;
                    for (int i2 = 0; i2 < n.size; ++i2) {
                        gA[i2] += gy[i2] * B[i2];
                        gB[i2] += gy[i2] * A[i2];
                    }
                    break;
                }
                case Op::axpy: {
                    accum(n.a, gy, n.size, n.s);
                    accum(n.b, gy, n.size, 1.0);
                    break;
                }
                case Op::scale: {
                    accum(n.a, gy, n.size, n.s);
                    break;
                }
                case Op::tanh_act: {
                    const Node& an = nodes_[static_cast<std::size_t>(n.a)];
                    const double* Y = values_.data() + n.val_off;
                    double* gA = grads_.data() + an.grad_off;
                    for (int i2 = 0; i2 < n.size; ++i2) gA[i2] += gy[i2] * (1.0 - Y[i2] * Y[i2]);
                    break;
                }
                case Op::concat2: {
                    const Node& an = nodes_[static_cast<std::size_t>(n.a)];
                    accum(n.a, gy, an.size, 1.0);
                    accum(n.b, gy + an.size, n.size - an.size, 1.0);
                    break;
                }
                case Op::table_row: {
                    const Node& tn = nodes_[static_cast<std::size_t>(n.a)];
                    double* gT = grads_.data() + tn.grad_off + static_cast<std::size_t>(n.row) * n.cols;
                    for (int i2 = 0; i2 < n.cols; ++i2) gT[i2] += gy[i2];
                    break;
                }
                case Op::sum_sq: {
                    const Node& an = nodes_[static_cast<std::size_t>(n.a)];
                    const double* A = node_val(an);
                    double* gA = grads_.data() + an.grad_off;
                    const double g = gy[0];
                    for (int i2 = 0; i2 < an.size; ++i2) gA[i2] += 2.0 * A[i2] * g;
                    break;
                }
            }
        }
    }

    // out += s * (gradients of the group's bound tensors)
    void accumulate_param_grads(int group, ParamSet& out, double s = 1.0) const {
        if (grads_.empty()) throw std::logic_error("accumulate_param_grads: backward() has not run");
        for (const auto& b : bindings_) {
            if (b.group != group) continue;
            Tensor& t = out.at(b.name);
            const Node& n = nodes_[static_cast<std::size_t>(b.node)];
            if (t.shape.numel() != n.size) {
                throw std::invalid_argument("accumulate_param_grads: shape mismatch for " + b.name);
            }
            const double* g = grads_.data() + n.grad_off;
            for (int i = 0; i < n.size; ++i) t.data[static_cast<std::size_t>(i)] += s * g[i];
        }
    }

private:
    enum class Op : std::uint8_t {
        leaf,
        matvec_add,
        add,
        sub,
        mul,
        axpy,
        scale,
        tanh_act,
        concat2,
        table_row,
        sum_sq
    };

    struct Node {
        Op op = Op::leaf;
        int a = -1, b = -1, c = -1;
        int rows = 0, cols = 0, row = 0;
        double s = 0.0;
        int size = 0;
        int val_off = -1;              // offset into values_ when computed here
        const double* external = nullptr;  // parameter leaves alias their tensor
        double guard = 0.0;
        int grad_off = 0;
    };

    struct Binding {
        int node;
        int group;
        std::string name;
    };

    int alloc_value(int size) {
        const int off = static_cast<int>(values_.size());
        values_.resize(values_.size() + static_cast<std::size_t>(size), 0.0);
        return off;
    }

    Node make(Op op, int size, Ref a, Ref b = Ref{-1}, Ref c = Ref{-1}) {
        Node n;
        n.op = op;
        n.a = a.i;
        n.b = b.i;
        n.c = c.i;
        n.size = size;
        n.val_off = alloc_value(size);
        return n;
    }

    Ref binary(Op op, Ref a, Ref b) {
        require(b, node(a).size, "binary op: operand sizes differ");
        Node n = make(op, node(a).size, a, b);
        const double* A = val_ptr(a);
        const double* B = val_ptr(b);
        double* O = values_.data() + n.val_off;
        switch (op) {
            case Op::add:
                for (int i = 0; i < n.size; ++i) O[i] = A[i] + B[i];
                break;
            case Op::sub:
                for (int i = 0; i < n.size; ++i) O[i] = A[i] - B[i];
                break;
            case Op::mul:
                for (int i = 0; i < n.size; ++i) O[i] = A[i] * B[i];
                break;
            default:
                throw std::logic_error("binary: bad op");
        }
        return push(n);
    }

    Ref push(Node n) {
        nodes_.push_back(n);
        return Ref{static_cast<int>(nodes_.size()) - 1};
    }

    const Node& node(Ref r) const {
        if (!r.valid() || r.i >= static_cast<int>(nodes_.size())) {
            throw std::out_of_range("Tape: invalid node ref");
        }
        return nodes_[static_cast<std::size_t>(r.i)];
    }

    const double* val_ptr(Ref r) const { return node_val(node(r)); }
    const double* node_val(const Node& n) const {
        return n.external ? n.external : values_.data() + n.val_off;
    }

    void require(Ref r, int size, const char* what) const {
        if (node(r).size != size) {
            throw std::invalid_argument(std::string(what) + ": expected size " + std::to_string(size) +
                                        ", got " + std::to_string(node(r).size));
        }
    }

    void accum(int target, const double* gy, int count, double s) {
        const Node& tn = nodes_[static_cast<std::size_t>(target)];
        double* g = grads_.data() + tn.grad_off;
        for (int i = 0; i < count; ++i) g[i] += s * gy[i];
    }

    std::vector<Node> nodes_;
    std::vector<double> values_;
    std::vector<double> grads_;
    std::vector<Binding> bindings_;
};

// ---------------------------------------------------------------------------
// MLP building blocks
// ---------------------------------------------------------------------------

// dims = {in, hidden..., out}; tanh between layers, linear output.
struct MlpSpec {
    std::vector<int> dims;
    int layers() const { return static_cast<int>(dims.size()) - 1; }
};

inline std::string layer_w(const std::string& prefix, int l) { return prefix + ".W" + std::to_string(l); }
inline std::string layer_b(const std::string& prefix, int l) { return prefix + ".b" + std::to_string(l); }

// Uniform fan-in scaling for weights, zero biases.
inline void init_dense(Tensor& w, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.shape.cols));
    for (auto& v : w.data) v = (2.0 * rng.uniform() - 1.0) * bound;
}

inline void init_mlp(ParamSet& ps, const std::string& prefix, const MlpSpec& spec, Rng& rng) {
    for (int l = 0; l < spec.layers(); ++l) {
        Tensor& w = ps.add(layer_w(prefix, l), spec.dims[static_cast<std::size_t>(l) + 1],
                           spec.dims[static_cast<std::size_t>(l)]);
        init_dense(w, rng);
        ps.add(layer_b(prefix, l), spec.dims[static_cast<std::size_t>(l) + 1]);
    }
}

inline Tape::Ref mlp_forward(Tape& tape, const ParamSet& ps, const std::string& prefix,
                             const MlpSpec& spec, Tape::Ref x, int group) {
    Tape::Ref h = x;
    for (int l = 0; l < spec.layers(); ++l) {
        const Tensor& w = ps.at(layer_w(prefix, l));
        Tape::Ref wr = tape.param(w, group, layer_w(prefix, l));
        Tape::Ref br = tape.param(ps.at(layer_b(prefix, l)), group, layer_b(prefix, l));
        h = tape.matvec_add(wr, br, h, w.shape.rows, w.shape.cols);
        if (l + 1 < spec.layers()) h = tape.tanh_act(h);
    }
    return h;
}

// Tape-free evaluation; loop order matches the tape path exactly so both give
// identical doubles.
inline Vec dense_eval(const Tensor& w, const Tensor& b, const Vec& x) {
    if (static_cast<int>(x.size()) != w.shape.cols) {
        throw std::invalid_argument("dense_eval: input size mismatch");
    }
    Vec y(static_cast<std::size_t>(w.shape.rows));
    for (int r = 0; r < w.shape.rows; ++r) {
        double acc = b.data[static_cast<std::size_t>(r)];
        const double* Wr = w.data.data() + static_cast<std::size_t>(r) * w.shape.cols;
        for (int c = 0; c < w.shape.cols; ++c) acc += Wr[c] * x[static_cast<std::size_t>(c)];
        y[static_cast<std::size_t>(r)] = acc;
    }
    return y;
}

inline Vec mlp_eval(const ParamSet& ps, const std::string& prefix, const MlpSpec& spec, Vec x) {
    for (int l = 0; l < spec.layers(); ++l) {
        x = dense_eval(ps.at(layer_w(prefix, l)), ps.at(layer_b(prefix, l)), x);
        if (l + 1 < spec.layers()) {
            for (auto& v : x) v = std::tanh(v);
        }
    }
    return x;
}

// Sinusoidal features of u = t/T: pairs (sin, cos) at frequencies pi * 2^i.
inline Vec time_features(int t, int T, int dim) {
    if (dim % 2 != 0 || dim <= 0) throw std::invalid_argument("time_features: dim must be positive and even");
    const double u = static_cast<double>(t) / static_cast<double>(T);
    Vec out(static_cast<std::size_t>(dim));
    double freq = std::numbers::pi;
    for (int i = 0; i < dim / 2; ++i) {
        out[static_cast<std::size_t>(2 * i)] = std::sin(u * freq);
        out[static_cast<std::size_t>(2 * i + 1)] = std::cos(u * freq);
        freq *= 2.0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Optimizer: adaptive moments with decoupled weight decay
// ---------------------------------------------------------------------------

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

class AdamW {
public:
    AdamW() = default;
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    void step(ParamSet& params, const ParamSet& grads) {
        if (m_.tensors().empty()) {
            m_ = ParamSet::zeros_like(params);
            v_ = ParamSet::zeros_like(params);
        }
        if (!params.same_layout(grads) || !params.same_layout(m_)) {
            throw std::invalid_argument("AdamW::step: parameter/gradient layout mismatch");
        }
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        auto mi = m_.tensors().begin();
        auto vi = v_.tensors().begin();
        auto gi = grads.tensors().begin();
        for (auto pi = params.tensors().begin(); pi != params.tensors().end(); ++pi, ++mi, ++vi, ++gi) {
            Vec& p = pi->second.data;
            Vec& m = mi->second.data;
            Vec& v = vi->second.data;
            const Vec& g = gi->second.data;
            for (std::size_t i = 0; i < p.size(); ++i) {
                if (!std::isfinite(g[i])) {
                    throw std::runtime_error("AdamW::step: non-finite gradient in " + pi->first);
                }
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                const double m_hat = m[i] / bc1;
                const double v_hat = v[i] / bc2;
                p[i] -= cfg_.lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * p[i]);
            }
        }
    }

    long step_count() const { return step_; }
    const AdamWConfig& config() const { return cfg_; }
    ParamSet& moment1() { return m_; }
    ParamSet& moment2() { return v_; }
    const ParamSet& moment1() const { return m_; }
    const ParamSet& moment2() const { return v_; }
    void restore(ParamSet m, ParamSet v, long step) {
        m_ = std::move(m);
        v_ = std::move(v);
        step_ = step;
    }

private:
    AdamWConfig cfg_;
    ParamSet m_, v_;
    long step_ = 0;
};

inline void optimizer_step(AdamW& opt, ParamSet& params, const ParamSet& grads) {
    opt.step(params, grads);
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_rel_err = 0.0;
    int coords_checked = 0;
    double tolerance = 0.0;
    bool pass = false;
};

// Central differences (f(p+h) - f(p-h)) / 2h against analytic gradients.
// max_coords_per_tensor = 0 checks every coordinate; otherwise a random
// subset per tensor. Relative error uses a small floor so vanishing
// gradients do not dominate the report.
inline GradCheckReport grad_check(const ParamSet& params,
                                  const std::function<double(const ParamSet&)>& loss,
                                  const ParamSet& analytic, double h, double tolerance,
                                  int max_coords_per_tensor = 0, Rng* coord_rng = nullptr) {
    if (!params.same_layout(analytic)) throw std::invalid_argument("grad_check: layout mismatch");
    if (!std::isfinite(loss(params))) throw std::runtime_error("grad_check: non-finite loss at probe point");
    ParamSet probe = params;
    GradCheckReport rep;
    rep.tolerance = tolerance;
    for (const auto& [name, t] : params.tensors()) {
        const std::size_t n = t.data.size();
        std::vector<std::size_t> coords;
        if (max_coords_per_tensor <= 0 || static_cast<std::size_t>(max_coords_per_tensor) >= n) {
            coords.resize(n);
            for (std::size_t i = 0; i < n; ++i) coords[i] = i;
        } else {
            if (!coord_rng) throw std::invalid_argument("grad_check: sampling requires an rng");
            for (int i = 0; i < max_coords_per_tensor; ++i) {
                coords.push_back(static_cast<std::size_t>(
                    coord_rng->uniform_int(0, static_cast<int>(n) - 1)));
            }
        }
        Vec& pd = probe.at(name).data;
        const Vec& ad = analytic.at(name).data;
        for (std::size_t i : coords) {
            const double saved = pd[i];
            pd[i] = saved + h;
            const double fp = loss(probe);
            pd[i] = saved - h;
            const double fm = loss(probe);
            pd[i] = saved;
            const double fd = (fp - fm) / (2.0 * h);
            const double a = ad[i];
            const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
            rep.max_rel_err = std::max(rep.max_rel_err, rel);
            ++rep.coords_checked;
        }
    }
    rep.pass = rep.max_rel_err < tolerance;
    return rep;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization
// ---------------------------------------------------------------------------
// One JSON header line, then raw little-endian float64 payload in the header's
// (sorted) tensor-name order.

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian host");

inline void save_checkpoint(const std::string& path, const ParamSet& params,
                            nlohmann::json extra = nlohmann::json::object()) {
    nlohmann::json header = std::move(extra);
    header["magic"] = kCheckpointMagic;
    nlohmann::json shapes = nlohmann::json::object();
    for (const auto& [name, t] : params.tensors()) {
        shapes[name] = {t.shape.rows, t.shape.cols};
    }
    header["tensors"] = shapes;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    os << header.dump() << "\n";
    for (const auto& [name, t] : params.tensors()) {
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline ParamSet load_checkpoint(const std::string& path, nlohmann::json* header_out = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("load_checkpoint: missing header in " + path);
    nlohmann::json header = nlohmann::json::parse(line);
    if (header.value("magic", "") != kCheckpointMagic) {
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    }
    ParamSet params;
    for (const auto& [name, shape] : header.at("tensors").items()) {
        Tensor& t = params.add(name, shape.at(0).get<int>(), shape.at(1).get<int>());
        is.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (!is) throw std::runtime_error("load_checkpoint: truncated payload in " + path);
    }
    if (header_out) *header_out = std::move(header);
    return params;
}

}  // namespace ctxdiff::nn
