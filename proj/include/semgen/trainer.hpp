#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "semgen/hash.hpp"
#include "semgen/nn.hpp"
#include "semgen/optim.hpp"
#include "semgen/rng.hpp"

namespace semgen {

struct TrainOptions {
    std::string stage = "train";
    std::size_t steps = 100;
    std::size_t ckpt_every = 0;  // 0: only at the end
    AdamHyper hyper;
    // Cosine decay of the learning rate to hyper.lr * final_lr_ratio at the
    // last step; 1 keeps it constant.
    double final_lr_ratio = 1.0;
    std::uint64_t seed = 0;
    // Empty: train in memory only. Otherwise ckpt_<step>.bin and loss.csv are
    // written here and an existing checkpoint is resumed.
    std::filesystem::path run_dir;
    // Called after each checkpoint step, with the parameters already rounded.
    std::function<void(std::size_t step)> on_checkpoint;
};

struct TrainResult {
    std::vector<double> losses;  // one per step, including resumed ones
    std::size_t resumed_from = 0;
    std::uint64_t data_order_hash = 0;
    double seconds = 0.0;
};

// One optimization step: draw a batch from `rng`, fold the batch indices into
// `order`, build the loss, call backward, and return the loss value. The
// trainer zeroes gradients before and applies Adam after.
using StepFn = std::function<double(std::size_t step, Rng &rng, Fnv1a &order)>;

// Generic loop with resumable checkpoints. At every checkpoint the
// parameters and Adam moments are rounded to float32 (the on-disk precision)
// so a resumed run continues from exactly the state an uninterrupted run has.
TrainResult run_training(ParamList &params, const TrainOptions &opts, const StepFn &step_fn,
                         const nlohmann::json &meta = nlohmann::json::object());

// Moving average used for trend checks on loss curves.
std::vector<double> smooth(const std::vector<double> &xs, std::size_t window);

}  // namespace semgen
