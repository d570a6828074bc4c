#include "semgen/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <regex>
#include <sstream>

#include "semgen/checkpoint.hpp"
#include "semgen/errors.hpp"
#include "semgen/io.hpp"

namespace semgen {

namespace {

std::filesystem::path ckpt_path(const std::filesystem::path &dir, std::size_t step) {
    return dir / ("ckpt_" + std::to_string(step) + ".bin");
}

// Latest ckpt_<step>.bin with step <= limit, or 0.
std::size_t latest_checkpoint(const std::filesystem::path &dir, std::size_t limit) {
    if (dir.empty() || !std::filesystem::exists(dir)) return 0;
    static const std::regex re("ckpt_([0-9]+)\\.bin");
    std::size_t best = 0;
    for (const auto &e : std::filesystem::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = e.path().filename().string();
        if (std::regex_match(name, m, re)) {
            const std::size_t s = std::stoul(m[1].str());
            if (s <= limit && s > best) best = s;
        }
    }
    return best;
}

void write_loss_csv(const std::filesystem::path &dir, const std::vector<double> &losses,
                    const std::vector<double> &seconds) {
    std::ostringstream os;
    os.precision(17);
    os << "step,loss,seconds\n";
    for (std::size_t i = 0; i < losses.size(); ++i) os << i << ',' << losses[i] << ',' << seconds[i] << '\n';
    io::write_text(dir / "loss.csv", os.str());
}

}  // namespace

TrainResult run_training(ParamList &params, const TrainOptions &opts, const StepFn &step_fn,
                         const nlohmann::json &meta) {
    TrainResult res;
    AdamState adam = AdamState::zeros_like(params);
    Rng rng(opts.seed);
    Fnv1a order;
    std::vector<double> seconds;
    const bool persist = !opts.run_dir.empty();

    if (const std::size_t start = latest_checkpoint(opts.run_dir, opts.steps); start > 0) {
        const Checkpoint ck = load_checkpoint(ckpt_path(opts.run_dir, start));
        if (ck.meta.value("stage", "") != opts.stage) {
            throw ConfigError("checkpoint in " + opts.run_dir.string() + " belongs to stage '" +
                              ck.meta.value("stage", "") + "', not '" + opts.stage + "'");
        }
        ck.load_params(params);
        adam = ck.load_adam(params, "");
        rng = Rng::deserialize(ck.meta.at("rng").get<std::string>());
        order = Fnv1a(std::stoull(ck.meta.at("order_hash").get<std::string>()));
        res.losses = ck.meta.at("losses").get<std::vector<double>>();
        seconds = ck.meta.at("seconds").get<std::vector<double>>();
        res.resumed_from = start;
    }

    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t step = res.resumed_from; step < opts.steps; ++step) {
        const auto ts = std::chrono::steady_clock::now();
        zero_grads(params);
        const double loss = step_fn(step, rng, order);
        if (!std::isfinite(loss)) {
            throw TrainingAbort(opts.stage + ": non-finite loss at step " + std::to_string(step), "loss", step);
        }
        AdamHyper hyper = opts.hyper;
        if (opts.final_lr_ratio != 1.0 && opts.steps > 1) {
            const double progress = static_cast<double>(step) / static_cast<double>(opts.steps - 1);
            const double c = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
            hyper.lr = opts.hyper.lr * (opts.final_lr_ratio + (1.0 - opts.final_lr_ratio) * c);
        }
        adam_step(params, adam, hyper);
        res.losses.push_back(loss);
        seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - ts).count());

        const std::size_t done = step + 1;
        const bool at_ckpt = done == opts.steps || (opts.ckpt_every > 0 && done % opts.ckpt_every == 0);
        if (at_ckpt) {
            for (auto &p : params) io::round_to_f32(p.tensor.mutable_data());
            for (auto &m : adam.m) io::round_to_f32(m);
            for (auto &v : adam.v) io::round_to_f32(v);
            if (persist) {
                Checkpoint ck;
                ck.meta = meta;
                ck.meta["stage"] = opts.stage;
                ck.meta["step"] = done;
                ck.meta["seed"] = opts.seed;
                ck.meta["rng"] = rng.serialize();
                ck.meta["order_hash"] = std::to_string(order.digest());
                ck.meta["losses"] = res.losses;
                ck.meta["seconds"] = seconds;
                ck.add_params(params);
                ck.add_adam(params, adam, "");
                save_checkpoint(ckpt_path(opts.run_dir, done), ck);
                write_loss_csv(opts.run_dir, res.losses, seconds);
            }
            if (opts.on_checkpoint) opts.on_checkpoint(done);
        }
    }
    zero_grads(params);
    res.data_order_hash = order.digest();
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

std::vector<double> smooth(const std::vector<double> &xs, std::size_t window) {
    if (window == 0 || xs.size() < window) return {};
    std::vector<double> out;
    double acc = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        acc += xs[i];
        if (i >= window) acc -= xs[i - window];
        if (i + 1 >= window) out.push_back(acc / static_cast<double>(window));
    }
    return out;
}

}  // namespace semgen
