#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctxdiff/rng.hpp"
#include "ctxdiff/toy_oracle.hpp"
#include "ctxdiff/vec.hpp"

namespace ctxdiff {

struct DatasetRecord {
    Vec x;
    int class_id = 0;
};

struct Dataset {
    std::vector<DatasetRecord> records;
    int dim = 0;
    int num_classes = 0;
};

enum class GeneratorKind { toy_gaussian, two_moons, swiss_roll };

inline const char* to_string(GeneratorKind g) {
    switch (g) {
        case GeneratorKind::toy_gaussian: return "toy-gaussian";
        case GeneratorKind::two_moons: return "two-moons";
        case GeneratorKind::swiss_roll: return "swiss-roll";
    }
    return "?";
}

inline GeneratorKind generator_kind_from_string(const std::string& s) {
    if (s == "toy-gaussian") return GeneratorKind::toy_gaussian;
    if (s == "two-moons") return GeneratorKind::two_moons;
    if (s == "swiss-roll") return GeneratorKind::swiss_roll;
    throw std::invalid_argument("unknown dataset generator: " + s);
}

struct DatasetSpec {
    GeneratorKind kind = GeneratorKind::toy_gaussian;
    long n = 0;  // total record count
    ToyModel toy;          // toy-gaussian parameters
    double noise = 0.1;    // two-moons / swiss-roll jitter
    std::uint64_t seed = 0;
};

inline Dataset generate_dataset(const DatasetSpec& spec) {
    Dataset ds;
    Rng rng(spec.seed);
    switch (spec.kind) {
        case GeneratorKind::toy_gaussian: {
            spec.toy.validate();
            ds.dim = spec.toy.dim;
            ds.num_classes = spec.toy.num_classes();
            for (long i = 0; i < spec.n; ++i) {
                const int c = static_cast<int>(i % ds.num_classes);
                const Vec& mu = spec.toy.means[static_cast<std::size_t>(c)];
                const double sigma = spec.toy.sigmas[static_cast<std::size_t>(c)];
                Vec x(static_cast<std::size_t>(ds.dim));
                for (auto& v : x) v = rng.normal();
                for (std::size_t k = 0; k < x.size(); ++k) x[k] = mu[k] + sigma * x[k];
                ds.records.push_back(DatasetRecord{std::move(x), c});
            }
            break;
        }
        case GeneratorKind::two_moons: {
            ds.dim = 2;
            ds.num_classes = 2;
            for (long i = 0; i < spec.n; ++i) {
                const int c = static_cast<int>(i % 2);
                const double a = rng.uniform() * std::numbers::pi;
                Vec x(2);
                if (c == 0) {
                    x[0] = std::cos(a);
                    x[1] = std::sin(a);
                } else {
                    x[0] = 1.0 - std::cos(a);
                    x[1] = 0.5 - std::sin(a);
                }
                x[0] += spec.noise * rng.normal();
                x[1] += spec.noise * rng.normal();
                ds.records.push_back(DatasetRecord{std::move(x), c});
            }
            break;
        }
        case GeneratorKind::swiss_roll: {
            // 2D spiral; class = inner/outer half of the angle range.
            ds.dim = 2;
            ds.num_classes = 2;
            const double lo = 1.5 * std::numbers::pi, hi = 4.5 * std::numbers::pi;
            for (long i = 0; i < spec.n; ++i) {
                const double a = lo + rng.uniform() * (hi - lo);
                const int c = a < 0.5 * (lo + hi) ? 0 : 1;
                Vec x(2);
                x[0] = a * std::cos(a) / hi + spec.noise * rng.normal();
                x[1] = a * std::sin(a) / hi + spec.noise * rng.normal();
                ds.records.push_back(DatasetRecord{std::move(x), c});
            }
            break;
        }
    }
    return ds;
}

// CSV with header x_1,...,x_d,class. Doubles are round-trip exact (max_digits10).
inline void write_dataset_csv(const std::string& path, const Dataset& ds) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_dataset_csv: cannot open " + path);
    os.precision(17);
    for (int k = 1; k <= ds.dim; ++k) os << "x_" << k << ",";
    os << "class\n";
    for (const auto& rec : ds.records) {
        for (double v : rec.x) os << v << ",";
        os << rec.class_id << "\n";
    }
    if (!os) throw std::runtime_error("write_dataset_csv: write failed for " + path);
}

inline Dataset read_dataset_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_dataset_csv: cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("read_dataset_csv: empty file " + path);
    int dim = 0;
    {
        std::stringstream hs(line);
        std::string col;
        while (std::getline(hs, col, ',')) {
            if (col.rfind("x_", 0) == 0) ++dim;
        }
    }
    if (dim == 0) throw std::runtime_error("read_dataset_csv: no x_ columns in " + path);
    Dataset ds;
    ds.dim = dim;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::string cell;
        DatasetRecord rec;
        for (int k = 0; k < dim; ++k) {
            if (!std::getline(ls, cell, ',')) {
                throw std::runtime_error("read_dataset_csv: short row in " + path);
            }
            rec.x.push_back(std::stod(cell));
        }
        if (!std::getline(ls, cell, ',')) throw std::runtime_error("read_dataset_csv: missing class");
        rec.class_id = std::stoi(cell);
        ds.num_classes = std::max(ds.num_classes, rec.class_id + 1);
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

}  // namespace ctxdiff
