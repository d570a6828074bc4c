#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "semgen/nn.hpp"
#include "semgen/optim.hpp"
#include "semgen/rng.hpp"

namespace semgen {

// One file format for every trained module:
//   line 1: "SEMGEN-CKPT 1"
//   line 2: byte length of the JSON header
//   JSON header {"meta": {...}, "tensors": [{"name", "shape"}, ...]}
//   float32 little-endian blob, tensors concatenated in header order
struct StoredTensor {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

struct Checkpoint {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<StoredTensor> tensors;

    const StoredTensor *find(const std::string &name) const;
    // Appends every parameter under `prefix`.
    void add_params(const ParamList &params, const std::string &prefix = "");
    // Copies stored values into `params`; missing names or shape mismatches
    // are configuration errors naming the checkpoint entry.
    void load_params(ParamList &params, const std::string &prefix = "") const;
    void add_adam(const ParamList &params, const AdamState &state, const std::string &prefix);
    AdamState load_adam(const ParamList &params, const std::string &prefix) const;
};

void save_checkpoint(const std::filesystem::path &path, const Checkpoint &ckpt);
Checkpoint load_checkpoint(const std::filesystem::path &path);

}  // namespace semgen
