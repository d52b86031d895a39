#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxdiff/adapter.hpp"
#include "ctxdiff/dataset.hpp"
#include "ctxdiff/denoiser.hpp"
#include "ctxdiff/reverse.hpp"
#include "ctxdiff/schedule.hpp"
#include "ctxdiff/training.hpp"

namespace ctxdiff {

using nlohmann::json;

// All config-schema violations for one document, reported together.
struct ConfigError : std::runtime_error {
    std::vector<std::string> problems;
    explicit ConfigError(std::vector<std::string> probs)
        : std::runtime_error(join(probs)), problems(std::move(probs)) {}
    static std::string join(const std::vector<std::string>& probs) {
        std::ostringstream os;
        os << "invalid config (" << probs.size() << " problem" << (probs.size() == 1 ? "" : "s")
           << "):";
        for (const auto& p : probs) os << "\n  - " << p;
        return os.str();
    }
};

struct SamplerSection {
    SamplerMode mode = SamplerMode::ddpm;
    int ddim_stride = 1;
    double eta = 0.0;
    std::uint64_t seed = 0;
    long n_per_class = 100;
    double guidance_scale = 1.0;
    bool clamp_x0 = false;
    double clamp_lo = -6.0, clamp_hi = 6.0;
};

// One JSON document drives every command; sections are independent so a
// config may carry only what its command needs.
struct Config {
    DatasetSpec dataset;
    std::string dataset_path = "dataset.csv";
    bool has_dataset = false;

    ScheduleSpec schedule;
    bool has_schedule = false;

    AdapterSpec adapter;
    DenoiserSpec denoiser;
    TrainConfig train;
    bool has_train = false;

    SamplerSection sampler;

    json resolved;  // canonical document (defaults filled in)
};

namespace cfgdetail {

class Checker {
public:
    explicit Checker(const json& root) : root_(root) {}

    const json* section(const char* name, bool required) {
        known_.insert(name);
        if (!root_.contains(name)) {
            if (required) problems_.push_back(std::string("missing required section '") + name + "'");
            return nullptr;
        }
        if (!root_.at(name).is_object()) {
            problems_.push_back(std::string("section '") + name + "' must be an object");
            return nullptr;
        }
        return &root_.at(name);
    }

    void finish_root() {
        for (const auto& [key, _] : root_.items()) {
            if (!known_.count(key)) problems_.push_back("unknown top-level key '" + key + "'");
        }
    }

    void unknown_keys(const json& sec, const char* sec_name, const std::set<std::string>& allowed) {
        for (const auto& [key, _] : sec.items()) {
            if (!allowed.count(key)) {
                problems_.push_back(std::string("unknown key '") + sec_name + "." + key + "'");
            }
        }
    }

    template <typename T>
    T get(const json& sec, const char* sec_name, const char* key, T def, bool required = false) {
        if (!sec.contains(key)) {
            if (required) {
                problems_.push_back(std::string("missing required field '") + sec_name + "." + key + "'");
            }
            return def;
        }
        try {
            return sec.at(key).get<T>();
        } catch (const json::exception&) {
            problems_.push_back(std::string("field '") + sec_name + "." + key + "' has the wrong type");
            return def;
        }
    }

    void problem(std::string p) { problems_.push_back(std::move(p)); }
    void throw_if_any() const {
        if (!problems_.empty()) throw ConfigError(problems_);
    }

private:
    const json& root_;
    std::set<std::string> known_;
    std::vector<std::string> problems_;
};

}  // namespace cfgdetail

// Parses and validates the whole document, collecting every violation before
// throwing. `needs` lists the sections the command requires.
inline Config parse_config(const json& root_in, const std::set<std::string>& needs) {
    // A manifest is also accepted as a config: unwrap its "config" field.
    const json& root = (root_in.contains("config") && root_in.contains("command"))
                           ? root_in.at("config")
                           : root_in;
    cfgdetail::Checker ck(root);
    Config cfg;

    if (const json* ds = ck.section("dataset", needs.count("dataset") > 0)) {
        ck.unknown_keys(*ds, "dataset",
                        {"generator", "n", "dim", "classes", "means", "sigmas", "noise", "seed",
                         "path"});
        const std::string gen = ck.get<std::string>(*ds, "dataset", "generator", "toy-gaussian");
        try {
            cfg.dataset.kind = generator_kind_from_string(gen);
        } catch (const std::invalid_argument& e) {
            ck.problem(e.what());
        }
        cfg.dataset.n = ck.get<long>(*ds, "dataset", "n", 1024);
        cfg.dataset.noise = ck.get<double>(*ds, "dataset", "noise", 0.1);
        cfg.dataset.seed = ck.get<std::uint64_t>(*ds, "dataset", "seed", 1);
        cfg.dataset_path = ck.get<std::string>(*ds, "dataset", "path", "dataset.csv");
        if (cfg.dataset.n < 0) ck.problem("dataset.n must be >= 0");
        if (cfg.dataset.kind == GeneratorKind::toy_gaussian) {
            const int dim = ck.get<int>(*ds, "dataset", "dim", 2);
            const int classes = ck.get<int>(*ds, "dataset", "classes", 2);
            cfg.dataset.toy.dim = dim;
            auto means = ck.get<std::vector<std::vector<double>>>(
                *ds, "dataset", "means", {{-2.0, 0.0}, {2.0, 0.0}});
            auto sigmas = ck.get<std::vector<double>>(*ds, "dataset", "sigmas",
                                                      std::vector<double>(classes, 0.5));
            if (static_cast<int>(means.size()) != classes) {
                ck.problem("dataset.means must have one row per class");
            }
            if (static_cast<int>(sigmas.size()) != classes) {
                ck.problem("dataset.sigmas must have one entry per class");
            }
            for (const auto& m : means) {
                if (static_cast<int>(m.size()) != dim) {
                    ck.problem("dataset.means rows must have length dataset.dim");
                    break;
                }
            }
            for (double sv : sigmas) {
                if (!(sv > 0.0)) {
                    ck.problem("dataset.sigmas entries must be > 0");
                    break;
                }
            }
            cfg.dataset.toy.means.assign(means.begin(), means.end());
            cfg.dataset.toy.sigmas = sigmas;
        } else {
            cfg.dataset.toy.dim = 2;
            cfg.dataset.toy.means = {{0.0, 0.0}, {0.0, 0.0}};
            cfg.dataset.toy.sigmas = {1.0, 1.0};
        }
        cfg.has_dataset = true;
    }

    if (const json* sc = ck.section("schedule", needs.count("schedule") > 0)) {
        ck.unknown_keys(*sc, "schedule", {"kind", "T", "beta_start", "beta_end"});
        const std::string kind = ck.get<std::string>(*sc, "schedule", "kind", "linear");
        try {
            cfg.schedule.kind = schedule_kind_from_string(kind);
        } catch (const std::invalid_argument& e) {
            ck.problem(e.what());
        }
        cfg.schedule.T = ck.get<int>(*sc, "schedule", "T", 100);
        cfg.schedule.beta_start = ck.get<double>(*sc, "schedule", "beta_start", 0.00085);
        cfg.schedule.beta_end = ck.get<double>(*sc, "schedule", "beta_end", 0.012);
        if (cfg.schedule.T < 2) ck.problem("schedule.T must be >= 2");
        if (cfg.schedule.kind == ScheduleKind::linear &&
            !(cfg.schedule.beta_start > 0.0 && cfg.schedule.beta_start <= cfg.schedule.beta_end &&
              cfg.schedule.beta_end < 1.0)) {
            ck.problem("schedule betas must satisfy 0 < beta_start <= beta_end < 1");
        }
        cfg.has_schedule = true;
    }

    if (const json* ad = ck.section("adapter", needs.count("adapter") > 0)) {
        ck.unknown_keys(*ad, "adapter",
                        {"variant", "r", "hidden_dim", "class_emb_dim", "time_emb_dim"});
        const std::string variant = ck.get<std::string>(*ad, "adapter", "variant", "learned");
        try {
            cfg.adapter.variant = adapter_variant_from_string(variant);
        } catch (const std::invalid_argument& e) {
            ck.problem(e.what());
        }
        cfg.adapter.r = ck.get<double>(*ad, "adapter", "r", 0.2);
        cfg.adapter.hidden_dim = ck.get<int>(*ad, "adapter", "hidden_dim", 16);
        cfg.adapter.class_emb_dim = ck.get<int>(*ad, "adapter", "class_emb_dim", 8);
        cfg.adapter.time_emb_dim = ck.get<int>(*ad, "adapter", "time_emb_dim", 16);
        if (cfg.adapter.variant == AdapterVariant::linear_toy && cfg.adapter.r < 0.0) {
            ck.problem("adapter.r must be >= 0 for the linear_toy variant");
        }
    }

    if (const json* de = ck.section("denoiser", needs.count("denoiser") > 0)) {
        ck.unknown_keys(*de, "denoiser", {"hidden", "class_emb_dim", "time_emb_dim"});
        cfg.denoiser.hidden = ck.get<std::vector<int>>(*de, "denoiser", "hidden", {64, 64});
        cfg.denoiser.class_emb_dim = ck.get<int>(*de, "denoiser", "class_emb_dim", 8);
        cfg.denoiser.time_emb_dim = ck.get<int>(*de, "denoiser", "time_emb_dim", 16);
        for (int h : cfg.denoiser.hidden) {
            if (h < 1) {
                ck.problem("denoiser.hidden entries must be >= 1");
                break;
            }
        }
    }

    if (const json* tr = ck.section("train", needs.count("train") > 0)) {
        ck.unknown_keys(*tr, "train",
                        {"steps", "batch_size", "lr", "beta1", "beta2", "weight_decay",
                         "lambda_mode", "cond_dropout_prob", "seed", "nelbo_every",
                         "nelbo_examples", "nelbo_mc"});
        cfg.train.steps = ck.get<long>(*tr, "train", "steps", 1000);
        cfg.train.batch_size = ck.get<int>(*tr, "train", "batch_size", 32);
        cfg.train.lr = ck.get<double>(*tr, "train", "lr", 1e-3);
        cfg.train.beta1 = ck.get<double>(*tr, "train", "beta1", 0.9);
        cfg.train.beta2 = ck.get<double>(*tr, "train", "beta2", 0.999);
        cfg.train.weight_decay = ck.get<double>(*tr, "train", "weight_decay", 0.0);
        cfg.train.cond_dropout_prob = ck.get<double>(*tr, "train", "cond_dropout_prob", 0.0);
        cfg.train.seed = ck.get<std::uint64_t>(*tr, "train", "seed", 0);
        cfg.train.nelbo_every = ck.get<long>(*tr, "train", "nelbo_every", 0);
        cfg.train.nelbo_examples = ck.get<int>(*tr, "train", "nelbo_examples", 64);
        cfg.train.nelbo_mc = ck.get<int>(*tr, "train", "nelbo_mc", 1);
        const std::string lm = ck.get<std::string>(*tr, "train", "lambda_mode", "unit");
        try {
            cfg.train.lambda_mode = lambda_mode_from_string(lm);
        } catch (const std::invalid_argument& e) {
            ck.problem(e.what());
        }
        if (cfg.train.steps < 0) ck.problem("train.steps must be >= 0");
        if (cfg.train.batch_size < 1) ck.problem("train.batch_size must be >= 1");
        if (!(cfg.train.lr > 0.0)) ck.problem("train.lr must be > 0");
        cfg.has_train = true;
    }

    if (const json* sa = ck.section("sampler", needs.count("sampler") > 0)) {
        ck.unknown_keys(*sa, "sampler",
                        {"mode", "ddim_stride", "eta", "seed", "n_per_class", "guidance_scale",
                         "clamp_x0", "clamp_lo", "clamp_hi"});
        const std::string mode = ck.get<std::string>(*sa, "sampler", "mode", "ddpm");
        try {
            cfg.sampler.mode = sampler_mode_from_string(mode);
        } catch (const std::invalid_argument& e) {
            ck.problem(e.what());
        }
        cfg.sampler.ddim_stride = ck.get<int>(*sa, "sampler", "ddim_stride", 1);
        cfg.sampler.eta = ck.get<double>(*sa, "sampler", "eta", 0.0);
        cfg.sampler.seed = ck.get<std::uint64_t>(*sa, "sampler", "seed", 0);
        cfg.sampler.n_per_class = ck.get<long>(*sa, "sampler", "n_per_class", 100);
        cfg.sampler.guidance_scale = ck.get<double>(*sa, "sampler", "guidance_scale", 1.0);
        cfg.sampler.clamp_x0 = ck.get<bool>(*sa, "sampler", "clamp_x0", false);
        cfg.sampler.clamp_lo = ck.get<double>(*sa, "sampler", "clamp_lo", -6.0);
        cfg.sampler.clamp_hi = ck.get<double>(*sa, "sampler", "clamp_hi", 6.0);
        if (cfg.sampler.ddim_stride < 1) ck.problem("sampler.ddim_stride must be >= 1");
        if (cfg.sampler.eta < 0.0) ck.problem("sampler.eta must be >= 0");
        if (cfg.sampler.n_per_class < 0) ck.problem("sampler.n_per_class must be >= 0");
    }

    ck.finish_root();
    ck.throw_if_any();

    // dimensions come from the dataset section when present
    if (cfg.has_dataset) {
        cfg.adapter.dim = cfg.dataset.kind == GeneratorKind::toy_gaussian ? cfg.dataset.toy.dim : 2;
        cfg.denoiser.dim = cfg.adapter.dim;
        const int classes =
            cfg.dataset.kind == GeneratorKind::toy_gaussian ? cfg.dataset.toy.num_classes() : 2;
        cfg.adapter.num_classes = classes;
        cfg.denoiser.num_classes = classes;
    }
    if (cfg.has_schedule) {
        cfg.adapter.T = cfg.schedule.T;
        cfg.denoiser.T = cfg.schedule.T;
        cfg.train.schedule = cfg.schedule;
    }
    cfg.train.adapter = cfg.adapter;
    cfg.train.denoiser = cfg.denoiser;

    // canonical resolved document
    json r;
    if (cfg.has_dataset) {
        json d;
        d["generator"] = to_string(cfg.dataset.kind);
        d["n"] = cfg.dataset.n;
        d["seed"] = cfg.dataset.seed;
        d["path"] = cfg.dataset_path;
        if (cfg.dataset.kind == GeneratorKind::toy_gaussian) {
            d["dim"] = cfg.dataset.toy.dim;
            d["classes"] = cfg.dataset.toy.num_classes();
            d["means"] = cfg.dataset.toy.means;
            d["sigmas"] = cfg.dataset.toy.sigmas;
        } else {
            d["noise"] = cfg.dataset.noise;
        }
        r["dataset"] = d;
    }
    if (cfg.has_schedule) {
        r["schedule"] = json{{"kind", to_string(cfg.schedule.kind)},
                             {"T", cfg.schedule.T},
                             {"beta_start", cfg.schedule.beta_start},
                             {"beta_end", cfg.schedule.beta_end}};
    }
    if (root.contains("adapter") || needs.count("adapter")) {
        r["adapter"] = json{{"variant", to_string(cfg.adapter.variant)},
                            {"r", cfg.adapter.r},
                            {"hidden_dim", cfg.adapter.hidden_dim},
                            {"class_emb_dim", cfg.adapter.class_emb_dim},
                            {"time_emb_dim", cfg.adapter.time_emb_dim}};
    }
    if (root.contains("denoiser") || needs.count("denoiser")) {
        r["denoiser"] = json{{"hidden", cfg.denoiser.hidden},
                             {"class_emb_dim", cfg.denoiser.class_emb_dim},
                             {"time_emb_dim", cfg.denoiser.time_emb_dim}};
    }
    if (cfg.has_train) {
        r["train"] = json{{"steps", cfg.train.steps},
                          {"batch_size", cfg.train.batch_size},
                          {"lr", cfg.train.lr},
                          {"beta1", cfg.train.beta1},
                          {"beta2", cfg.train.beta2},
                          {"weight_decay", cfg.train.weight_decay},
                          {"lambda_mode", to_string(cfg.train.lambda_mode)},
                          {"cond_dropout_prob", cfg.train.cond_dropout_prob},
                          {"seed", cfg.train.seed},
                          {"nelbo_every", cfg.train.nelbo_every},
                          {"nelbo_examples", cfg.train.nelbo_examples},
                          {"nelbo_mc", cfg.train.nelbo_mc}};
    }
    if (root.contains("sampler") || needs.count("sampler")) {
        r["sampler"] = json{{"mode", to_string(cfg.sampler.mode)},
                            {"ddim_stride", cfg.sampler.ddim_stride},
                            {"eta", cfg.sampler.eta},
                            {"seed", cfg.sampler.seed},
                            {"n_per_class", cfg.sampler.n_per_class},
                            {"guidance_scale", cfg.sampler.guidance_scale},
                            {"clamp_x0", cfg.sampler.clamp_x0},
                            {"clamp_lo", cfg.sampler.clamp_lo},
                            {"clamp_hi", cfg.sampler.clamp_hi}};
    }
    cfg.resolved = r;
    return cfg;
}

inline json load_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config file " + path);
    json j;
    is >> j;
    return j;
}

}  // namespace ctxdiff
