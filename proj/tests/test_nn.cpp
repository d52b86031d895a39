#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ctxdiff/nn.hpp"

using namespace ctxdiff;
using namespace ctxdiff::nn;

namespace {

std::string read_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream buf;
    buf << is.rdbuf();
    return buf.str();
}

}  // namespace

TEST_CASE("identity linear layer reproduces its input") {
    ParamSet ps;
    Tensor& w = ps.add("W", 3, 3);
    w.data = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    ps.add("b", 3);
    Vec x = {0.5, -2.0, 7.25};
    CHECK(dense_eval(ps.at("W"), ps.at("b"), x) == x);
}

TEST_CASE("1x1 affine layer arithmetic") {
    ParamSet ps;
    ps.add("W", 1, 1).data = {2.0};
    ps.add("b", 1).data = {0.5};
    Vec y = dense_eval(ps.at("W"), ps.at("b"), {3.0});
    CHECK(y[0] == 6.5);
}

TEST_CASE("mlp init and forward are reproducible from the seed") {
    MlpSpec spec{{4, 8, 2}};
    Vec x = {0.1, -0.2, 0.3, 0.4};
    Vec first, second;
    for (Vec* out : {&first, &second}) {
        ParamSet ps;
        Rng rng(42);
        init_mlp(ps, "mlp", spec, rng);
        *out = mlp_eval(ps, "mlp", spec, x);
    }
    CHECK(first == second);
}

TEST_CASE("tape forward matches tape-free evaluation exactly") {
    MlpSpec spec{{5, 16, 16, 3}};
    ParamSet ps;
    Rng rng(7);
    init_mlp(ps, "mlp", spec, rng);
    Vec x = {0.3, -1.2, 0.8, 0.05, 2.0};
    Vec plain = mlp_eval(ps, "mlp", spec, x);
    Tape tape;
    Tape::Ref out = mlp_forward(tape, ps, "mlp", spec, tape.constant(x), 0);
    auto taped = tape.value(out);
    REQUIRE(taped.size() == plain.size());
    for (std::size_t i = 0; i < plain.size(); ++i) CHECK(taped[i] == plain[i]);
}

TEST_CASE("backward through a single linear map gives the calculus answer") {
    ParamSet ps;
    ps.add("W", 1, 1).data = {3.0};
    ps.add("b", 1).data = {0.0};
    Tape tape;
    Tape::Ref x = tape.constant(Vec{2.0});
    Tape::Ref w = tape.param(ps.at("W"), 0, "W");
    Tape::Ref b = tape.param(ps.at("b"), 0, "b");
    Tape::Ref y = tape.matvec_add(w, b, x, 1, 1);
    tape.backward(y);
    CHECK(tape.grad(w)[0] == 2.0);  // dy/dW = x
    CHECK(tape.grad(x)[0] == 3.0);  // dy/dx = W
    CHECK(tape.grad(b)[0] == 1.0);
}

TEST_CASE("chain rule through two composed layers matches the hand product") {
    // y = w2 * (w1 * x): dy/dw1 = w2*x, dy/dw2 = w1*x
    ParamSet ps;
    ps.add("w1", 1, 1).data = {1.5};
    ps.add("w2", 1, 1).data = {-2.0};
    ps.add("zero", 1);
    Tape tape;
    Tape::Ref x = tape.constant(Vec{4.0});
    Tape::Ref z = tape.param(ps.at("zero"), 0, "zero");
    Tape::Ref h = tape.matvec_add(tape.param(ps.at("w1"), 0, "w1"), z, x, 1, 1);
    Tape::Ref y = tape.matvec_add(tape.param(ps.at("w2"), 0, "w2"), z, h, 1, 1);
    tape.backward(y);
    ParamSet grads = ParamSet::zeros_like(ps);
    tape.accumulate_param_grads(0, grads);
    CHECK(grads.at("w1").data[0] == -2.0 * 4.0);
    CHECK(grads.at("w2").data[0] == 1.5 * 4.0);
}

TEST_CASE("grad_check on a quadratic is exact up to rounding") {
    ParamSet ps;
    ps.add("p", 4).data = {0.3, -1.0, 2.0, 0.7};
    auto loss = [](const ParamSet& q) {
        double acc = 0.0;
        for (double v : q.at("p").data) acc += 0.5 * v * v;
        return acc;
    };
    ParamSet analytic = ParamSet::zeros_like(ps);
    analytic.at("p").data = ps.at("p").data;  // gradient of ||p||^2/2 is p
    GradCheckReport rep = grad_check(ps, loss, analytic, 1e-4, 1e-8);
    CHECK(rep.pass);
    CHECK(rep.coords_checked == 4);
}

TEST_CASE("grad_check on a constant loss sees zero both ways") {
    ParamSet ps;
    ps.add("p", 3).data = {1.0, 2.0, 3.0};
    ParamSet analytic = ParamSet::zeros_like(ps);
    GradCheckReport rep = grad_check(
        ps, [](const ParamSet&) { return 5.0; }, analytic, 1e-4, 1e-10);
    CHECK(rep.pass);
    CHECK(rep.max_rel_err == 0.0);
}

TEST_CASE("random mlp passes grad_check on a sum-of-squares objective") {
    MlpSpec spec{{3, 8, 2}};
    ParamSet ps;
    Rng rng(11);
    init_mlp(ps, "mlp", spec, rng);
    Vec x = {0.5, -0.3, 1.2};
    auto sq_loss = [&](const ParamSet& q) {
        Vec y = mlp_eval(q, "mlp", spec, x);
        double acc = 0.0;
        for (double v : y) acc += v * v;
        return acc;
    };
    ParamSet grads = ParamSet::zeros_like(ps);
    Tape tape;
    Tape::Ref y = mlp_forward(tape, ps, "mlp", spec, tape.constant(x), 0);
    tape.backward(tape.sum_sq(y));
    tape.accumulate_param_grads(0, grads);
    GradCheckReport rep = grad_check(ps, sq_loss, grads, 1e-4, 1e-4);
    CHECK(rep.pass);
}

TEST_CASE("elementwise product and tanh backward match finite differences") {
    ParamSet ps;
    ps.add("a", 3).data = {0.2, -0.7, 1.1};
    ps.add("b", 3).data = {1.4, 0.3, -0.5};
    auto loss = [](const ParamSet& q) {
        const Vec& a = q.at("a").data;
        const Vec& b = q.at("b").data;
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double v = std::tanh(a[i] * b[i]);
            acc += v * v;
        }
        return acc;
    };
    Tape tape;
    Tape::Ref a = tape.param(ps.at("a"), 0, "a");
    Tape::Ref b = tape.param(ps.at("b"), 0, "b");
    Tape::Ref out = tape.sum_sq(tape.tanh_act(tape.mul(a, b)));
    tape.backward(out);
    ParamSet grads = ParamSet::zeros_like(ps);
    tape.accumulate_param_grads(0, grads);
    GradCheckReport rep = grad_check(ps, loss, grads, 1e-5, 1e-6);
    CHECK(rep.pass);
}

TEST_CASE("adamw leaves parameters unchanged for zero gradients") {
    ParamSet ps;
    ps.add("p", 2).data = {1.0, -2.0};
    ParamSet grads = ParamSet::zeros_like(ps);
    AdamW opt(AdamWConfig{.lr = 0.1, .weight_decay = 0.0});
    opt.step(ps, grads);
    CHECK(ps.at("p").data == Vec{1.0, -2.0});
}

TEST_CASE("adamw first step matches the scalar hand computation") {
    ParamSet ps;
    ps.add("p", 1).data = {1.0};
    ParamSet grads = ParamSet::zeros_like(ps);
    grads.at("p").data = {0.5};
    AdamWConfig cfg{.lr = 0.01, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8, .weight_decay = 0.0};
    AdamW opt(cfg);
    opt.step(ps, grads);
    // m_hat = g, v_hat = g^2 after bias correction at step 1
    const double expected = 1.0 - 0.01 * (0.5 / (std::sqrt(0.25) + 1e-8));
    CHECK(ps.at("p").data[0] == Catch::Approx(expected).epsilon(1e-15));
}

TEST_CASE("decoupled weight decay shrinks by (1 - lr*wd) when gradients vanish") {
    ParamSet ps;
    ps.add("p", 1).data = {2.0};
    ParamSet grads = ParamSet::zeros_like(ps);
    AdamW opt(AdamWConfig{.lr = 0.1, .weight_decay = 0.5});
    opt.step(ps, grads);
    CHECK(ps.at("p").data[0] == Catch::Approx(2.0 * (1.0 - 0.1 * 0.5)).epsilon(1e-15));
}

TEST_CASE("adamw rejects non-finite gradients") {
    ParamSet ps;
    ps.add("p", 1).data = {1.0};
    ParamSet grads = ParamSet::zeros_like(ps);
    grads.at("p").data = {std::numeric_limits<double>::quiet_NaN()};
    AdamW opt{AdamWConfig{}};
    CHECK_THROWS_AS(opt.step(ps, grads), std::runtime_error);
}

TEST_CASE("checkpoint save/load/save is byte-identical") {
    ParamSet ps;
    Rng rng(3);
    ps.add("alpha", 4, 3);
    ps.add("beta", 5);
    for (auto& [_, t] : ps.tensors()) {
        for (auto& v : t.data) v = rng.normal();
    }
    const auto dir = std::filesystem::temp_directory_path();
    const std::string p1 = (dir / "ctxdiff_ckpt_a.bin").string();
    const std::string p2 = (dir / "ctxdiff_ckpt_b.bin").string();
    nlohmann::json extra;
    extra["config_hash"] = "deadbeef";
    extra["step"] = 17;
    save_checkpoint(p1, ps, extra);
    nlohmann::json header;
    ParamSet loaded = load_checkpoint(p1, &header);
    CHECK(header.at("config_hash") == "deadbeef");
    CHECK(header.at("step") == 17);
    nlohmann::json extra2 = header;
    extra2.erase("magic");
    extra2.erase("tensors");
    save_checkpoint(p2, loaded, extra2);
    CHECK(read_bytes(p1) == read_bytes(p2));
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}

TEST_CASE("checkpoint loader rejects a bad magic") {
    const auto dir = std::filesystem::temp_directory_path();
    const std::string p = (dir / "ctxdiff_ckpt_bad.bin").string();
    {
        std::ofstream os(p, std::ios::binary);
        os << "{\"magic\":\"NOPE\",\"tensors\":{}}\n";
    }
    CHECK_THROWS_AS(load_checkpoint(p), std::runtime_error);
    std::filesystem::remove(p);
}

TEST_CASE("tape detects parameter mutation between forward and backward") {
    ParamSet ps;
    ps.add("p", 2).data = {1.0, 2.0};
    Tape tape;
    Tape::Ref p = tape.param(ps.at("p"), 0, "p");
    Tape::Ref out = tape.sum_sq(p);
    ps.at("p").data[0] = 99.0;  // simulate an optimizer step before backward
    CHECK_THROWS_AS(tape.backward(out), std::logic_error);
}

TEST_CASE("time features are deterministic and bounded") {
    Vec f1 = time_features(7, 100, 16);
    Vec f2 = time_features(7, 100, 16);
    CHECK(f1 == f2);
    REQUIRE(f1.size() == 16);
    for (double v : f1) {
        CHECK(v <= 1.0);
        CHECK(v >= -1.0);
    }
    CHECK_THROWS_AS(time_features(1, 10, 15), std::invalid_argument);
}
