#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxdiff/hash.hpp"
#include "ctxdiff/version.hpp"

namespace ctxdiff {

using nlohmann::json;

// Everything needed to reproduce a run bit-exactly: the resolved config, the
// root seed, and fingerprints of the inputs/outputs. Serialized as canonical
// JSON (object keys sorted, which nlohmann does by construction). No
// timestamps: the file content is a pure function of the run.
struct RunManifest {
    std::string command;
    json config;  // fully resolved; reusable as a --config input
    std::uint64_t root_seed = 0;
    std::string dataset_fingerprint;  // sha256 of the dataset csv, empty if none
    std::vector<std::pair<std::string, std::string>> outputs;  // (path, sha256)
    std::string checkpoint_hash;  // sha256 of the checkpoint file, empty if none

    void add_output(const std::string& path) { outputs.emplace_back(path, sha256_file(path)); }

    json to_json() const {
        json j;
        j["version"] = kVersion;
        j["command"] = command;
        j["config"] = config;
        j["root_seed"] = root_seed;
        j["dataset_fingerprint"] = dataset_fingerprint;
        json outs = json::array();
        for (const auto& [path, digest] : outputs) {
            outs.push_back(json{{"path", path}, {"sha256", digest}});
        }
        j["outputs"] = outs;
        j["checkpoint_hash"] = checkpoint_hash;
        return j;
    }

    void write(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw std::runtime_error("RunManifest::write: cannot open " + path);
        os << to_json().dump(2) << "\n";
    }
};

inline std::string config_hash(const json& config) { return sha256_hex(config.dump()); }

}  // namespace ctxdiff
