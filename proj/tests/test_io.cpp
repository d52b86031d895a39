#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ctxdiff/config.hpp"
#include "ctxdiff/dataset.hpp"
#include "ctxdiff/hash.hpp"
#include "ctxdiff/manifest.hpp"
#include "ctxdiff/svg.hpp"

using namespace ctxdiff;
namespace fs = std::filesystem;

namespace {

std::string read_text(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream buf;
    buf << is.rdbuf();
    return buf.str();
}

DatasetSpec toy_spec(long n, std::uint64_t seed) {
    DatasetSpec spec;
    spec.kind = GeneratorKind::toy_gaussian;
    spec.n = n;
    spec.toy.dim = 2;
    spec.toy.means = {{-2.0, 0.0}, {2.0, 0.0}};
    spec.toy.sigmas = {0.5, 0.5};
    spec.seed = seed;
    return spec;
}

}  // namespace

TEST_CASE("sha256 matches the empty-string test vector") {
    CHECK(sha256_hex("") ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("dataset generation is reproducible byte-for-byte") {
    const auto dir = fs::temp_directory_path();
    const std::string p1 = (dir / "ctxdiff_ds_a.csv").string();
    const std::string p2 = (dir / "ctxdiff_ds_b.csv").string();
    write_dataset_csv(p1, generate_dataset(toy_spec(500, 42)));
    write_dataset_csv(p2, generate_dataset(toy_spec(500, 42)));
    CHECK(read_text(p1) == read_text(p2));
    fs::remove(p1);
    fs::remove(p2);
}

TEST_CASE("empty dataset writes a header-only file") {
    const auto dir = fs::temp_directory_path();
    const std::string p = (dir / "ctxdiff_ds_empty.csv").string();
    write_dataset_csv(p, generate_dataset(toy_spec(0, 1)));
    CHECK(read_text(p) == "x_1,x_2,class\n");
    fs::remove(p);
}

TEST_CASE("dataset csv round-trips exactly") {
    const auto dir = fs::temp_directory_path();
    const std::string p = (dir / "ctxdiff_ds_rt.csv").string();
    Dataset ds = generate_dataset(toy_spec(200, 9));
    write_dataset_csv(p, ds);
    Dataset back = read_dataset_csv(p);
    REQUIRE(back.records.size() == ds.records.size());
    CHECK(back.dim == 2);
    CHECK(back.num_classes == 2);
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        CHECK(back.records[i].x == ds.records[i].x);
        CHECK(back.records[i].class_id == ds.records[i].class_id);
    }
    fs::remove(p);
}

TEST_CASE("toy-gaussian per-class means land near the configured centers") {
    Dataset ds = generate_dataset(toy_spec(10'000, 3));
    Vec mean0(2, 0.0), mean1(2, 0.0);
    long n0 = 0, n1 = 0;
    for (const auto& rec : ds.records) {
        Vec& m = rec.class_id == 0 ? mean0 : mean1;
        (rec.class_id == 0 ? n0 : n1) += 1;
        for (int k = 0; k < 2; ++k) m[static_cast<std::size_t>(k)] += rec.x[static_cast<std::size_t>(k)];
    }
    for (int k = 0; k < 2; ++k) {
        mean0[static_cast<std::size_t>(k)] /= static_cast<double>(n0);
        mean1[static_cast<std::size_t>(k)] /= static_cast<double>(n1);
    }
    const double tol = 4.0 * 0.5 / std::sqrt(5000.0);
    CHECK(std::abs(mean0[0] - (-2.0)) < tol);
    CHECK(std::abs(mean0[1] - 0.0) < tol);
    CHECK(std::abs(mean1[0] - 2.0) < tol);
    CHECK(std::abs(mean1[1] - 0.0) < tol);
}

TEST_CASE("two-moons and swiss-roll generators label two classes in 2D") {
    for (GeneratorKind kind : {GeneratorKind::two_moons, GeneratorKind::swiss_roll}) {
        DatasetSpec spec;
        spec.kind = kind;
        spec.n = 300;
        spec.noise = 0.05;
        spec.seed = 11;
        Dataset ds = generate_dataset(spec);
        CHECK(ds.dim == 2);
        CHECK(ds.num_classes == 2);
        CHECK(ds.records.size() == 300);
        bool saw[2] = {false, false};
        for (const auto& rec : ds.records) {
            REQUIRE(rec.class_id >= 0);
            REQUIRE(rec.class_id < 2);
            saw[rec.class_id] = true;
            CHECK(std::abs(rec.x[0]) < 10.0);
            CHECK(std::abs(rec.x[1]) < 10.0);
        }
        CHECK(saw[0]);
        CHECK(saw[1]);
    }
}

TEST_CASE("manifest JSON is canonical: sorted keys, deterministic dump") {
    RunManifest man;
    man.command = "gen-data";
    man.config = json{{"zeta", 1}, {"alpha", 2}};
    man.root_seed = 7;
    const std::string dumped = man.to_json().dump();
    CHECK(dumped.find("\"alpha\"") < dumped.find("\"zeta\""));
    CHECK(dumped.find("\"checkpoint_hash\"") < dumped.find("\"command\""));
    CHECK(man.to_json().dump() == man.to_json().dump());
}

TEST_CASE("config hash is stable under key reordering of the source text") {
    json a = json::parse(R"({"b": 1, "a": {"y": 2, "x": 3}})");
    json b = json::parse(R"({"a": {"x": 3, "y": 2}, "b": 1})");
    CHECK(config_hash(a) == config_hash(b));
}

TEST_CASE("config parser reports all violations at once") {
    json bad = json::parse(R"({
        "dataset": {"generator": "nope", "n": -5, "bogus": 1},
        "schedule": {"kind": "linear", "T": 1, "beta_start": 0.5, "beta_end": 0.1},
        "surprise": {}
    })");
    try {
        parse_config(bad, {"dataset", "schedule"});
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(e.problems.size() >= 5);
        CHECK(msg.find("unknown dataset generator") != std::string::npos);
        CHECK(msg.find("dataset.n") != std::string::npos);
        CHECK(msg.find("dataset.bogus") != std::string::npos);
        CHECK(msg.find("schedule.T") != std::string::npos);
        CHECK(msg.find("beta_start") != std::string::npos);
        CHECK(msg.find("surprise") != std::string::npos);
    }
}

TEST_CASE("config parser names missing required sections and fields") {
    try {
        parse_config(json::object(), {"dataset", "train"});
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("'dataset'") != std::string::npos);
        CHECK(msg.find("'train'") != std::string::npos);
    }
}

TEST_CASE("resolved config re-parses to the same document") {
    json doc = json::parse(R"({
        "dataset": {"generator": "toy-gaussian", "n": 64, "dim": 2, "classes": 2,
                     "means": [[-2.0, 0.0], [2.0, 0.0]], "sigmas": [0.5, 0.5], "seed": 3},
        "schedule": {"kind": "cosine", "T": 50},
        "adapter": {"variant": "learned"},
        "denoiser": {},
        "train": {"steps": 10, "seed": 4}
    })");
    Config c1 = parse_config(doc, {"dataset", "schedule", "adapter", "denoiser", "train"});
    Config c2 = parse_config(c1.resolved, {"dataset", "schedule", "adapter", "denoiser", "train"});
    CHECK(c1.resolved == c2.resolved);
    CHECK(config_hash(c1.resolved) == config_hash(c2.resolved));
}

TEST_CASE("a manifest doubles as a config input") {
    json doc = json::parse(R"({
        "dataset": {"generator": "toy-gaussian", "n": 16, "dim": 2, "classes": 2,
                     "means": [[-1.0, 0.0], [1.0, 0.0]], "sigmas": [0.5, 0.5], "seed": 3}
    })");
    Config cfg = parse_config(doc, {"dataset"});
    RunManifest man;
    man.command = "gen-data";
    man.config = cfg.resolved;
    Config again = parse_config(man.to_json(), {"dataset"});
    CHECK(again.resolved == cfg.resolved);
}

TEST_CASE("svg scatter writes circles for every point") {
    const auto dir = fs::temp_directory_path();
    const std::string p = (dir / "ctxdiff_scatter.svg").string();
    std::vector<Vec> pts = {{0.0, 0.0}, {1.0, 1.0}, {-1.0, 0.5}};
    write_scatter_svg(p, pts, {0, 1, 0});
    const std::string text = read_text(p);
    CHECK(text.find("<svg") != std::string::npos);
    std::size_t circles = 0, pos = 0;
    while ((pos = text.find("<circle", pos)) != std::string::npos) {
        ++circles;
        pos += 7;
    }
    CHECK(circles == 3);
    fs::remove(p);
}
