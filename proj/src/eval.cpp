#include "semgen/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "semgen/autoencoder.hpp"
#include "semgen/errors.hpp"
#include "semgen/io.hpp"

namespace semgen::eval {

namespace fs = std::filesystem;
using nlohmann::json;

// ------------------------------------------------------------------ metrics

namespace {

std::vector<double> luma_frame(const synth::Video &v, std::size_t f) {
    if (v.channels != 3 && v.channels != 1) throw ValidationError("metrics need 1- or 3-channel video");
    std::vector<double> out(v.height * v.width);
    for (std::size_t y = 0; y < v.height; ++y)
        for (std::size_t x = 0; x < v.width; ++x) {
            out[y * v.width + x] = v.channels == 1 ? v.at(f, 0, y, x)
                                                   : 0.299 * v.at(f, 0, y, x) + 0.587 * v.at(f, 1, y, x) +
                                                         0.114 * v.at(f, 2, y, x);
        }
    return out;
}

void require_frames(const synth::Video &v) {
    if (v.frames == 0) throw ValidationError("metric of an empty video");
}

double pearson(const std::vector<double> &a, const std::vector<double> &b) {
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += (a[i] - ma) * (b[i] - mb);
        aa += (a[i] - ma) * (a[i] - ma);
        bb += (b[i] - mb) * (b[i] - mb);
    }
    constexpr double kTiny = 1e-18;
    if (aa <= kTiny || bb <= kTiny) {
        const bool both_flat = aa <= kTiny && bb <= kTiny;
        return both_flat && std::abs(ma - mb) <= 1e-12 ? 1.0 : 0.0;
    }
    return ab / std::sqrt(aa * bb);
}

}  // namespace

double mean_luma(const synth::Video &v) {
    require_frames(v);
    double s = 0.0;
    for (std::size_t f = 0; f < v.frames; ++f)
        for (double l : luma_frame(v, f)) s += l;
    return s / static_cast<double>(v.frames * v.height * v.width);
}

double frame_diff_energy(const synth::Video &v) {
    require_frames(v);
    if (v.frames < 2) return 0.0;
    const std::size_t fs = v.frame_size();
    double s = 0.0;
    for (std::size_t f = 0; f + 1 < v.frames; ++f)
        for (std::size_t i = 0; i < fs; ++i) {
            const double d = v.pixels[(f + 1) * fs + i] - v.pixels[f * fs + i];
            s += d * d;
        }
    return s / static_cast<double>((v.frames - 1) * fs);
}

double bg_consistency(const synth::Video &v) {
    require_frames(v);
    if (v.frames < 2) return 1.0;
    const std::size_t np = v.height * v.width;
    std::vector<std::vector<double>> frames;
    for (std::size_t f = 0; f < v.frames; ++f) frames.push_back(luma_frame(v, f));
    std::vector<double> sd(np);
    for (std::size_t p = 0; p < np; ++p) {
        double m = 0.0, m2 = 0.0;
        for (const auto &fr : frames) {
            m += fr[p];
            m2 += fr[p] * fr[p];
        }
        m /= static_cast<double>(v.frames);
        sd[p] = std::sqrt(std::max(0.0, m2 / static_cast<double>(v.frames) - m * m));
    }
    std::vector<double> sorted = sd;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(np / 2), sorted.end());
    const double median = sorted[np / 2];
    std::vector<std::size_t> mask;
    for (std::size_t p = 0; p < np; ++p)
        if (sd[p] <= median) mask.push_back(p);
    std::vector<std::vector<double>> bg;
    for (const auto &fr : frames) {
        std::vector<double> b;
        for (auto p : mask) b.push_back(fr[p]);
        bg.push_back(std::move(b));
    }
    double s = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < bg.size(); ++i)
        for (std::size_t j = i + 1; j < bg.size(); ++j) {
            s += pearson(bg[i], bg[j]);
            ++pairs;
        }
    return s / static_cast<double>(pairs);
}

MetricFn metric(const std::string &name) {
    if (name == "mean_luma") return {name, mean_luma};
    if (name == "frame_diff_energy") return {name, frame_diff_energy};
    if (name == "bg_consistency") return {name, bg_consistency};
    throw ConfigError("unknown metric '" + name + "' (mean_luma | frame_diff_energy | bg_consistency)");
}

std::vector<std::string> metric_names() { return {"mean_luma", "frame_diff_energy", "bg_consistency"}; }

MetricFn factor_match_metric(const synth::FactorSpec &target, const sem::SemanticEncoderParams &probe) {
    return {"factor_match", [target, &probe](const synth::Video &v) {
                return sem::predict_factors(v, probe).shape() == target.shape_id ? 1.0 : 0.0;
            }};
}

// -------------------------------------------------------------------- drift

json DriftReport::to_json() const {
    return {{"metric", metric}, {"head", head},         {"tail", tail},
            {"delta", delta},   {"fraction", fraction}, {"segment_frames", segment_frames}};
}

DriftReport drift(const synth::Video &v, const MetricFn &m, double fraction) {
    if (!(fraction > 0.0 && fraction <= 0.5)) throw ValidationError("drift fraction must lie in (0, 0.5]");
    const auto n = static_cast<std::size_t>(std::floor(static_cast<double>(v.frames) * fraction));
    if (n < 1) {
        throw ValidationError("video of " + std::to_string(v.frames) + " frames is too short for drift segments of " +
                              std::to_string(fraction));
    }
    DriftReport r;
    r.metric = m.name;
    r.fraction = fraction;
    r.segment_frames = n;
    r.head = m(v.frame_range(0, n));
    r.tail = m(v.frame_range(v.frames - n, v.frames));
    r.delta = std::abs(r.head - r.tail);
    return r;
}

// ------------------------------------------------------------ probe scores

json ProbeScores::to_json() const {
    return {{"factor_match", factor_match},
            {"coherent", coherent},
            {"bg_consistency", bg_consistency},
            {"frame_diff_energy", frame_diff_energy},
            {"clips", clips}};
}

ProbeScores probe_scores(const std::vector<synth::Video> &clips, const std::vector<synth::FactorSpec> &conds,
                         const sem::SemanticEncoderParams &probe, double coherence_threshold) {
    if (clips.size() != conds.size() || clips.empty()) {
        throw ValidationError("probe scores need one condition per clip and at least one clip");
    }
    ProbeScores s;
    s.clips = clips.size();
    for (std::size_t i = 0; i < clips.size(); ++i) {
        const auto p = sem::predict_factors(clips[i], probe);
        s.factor_match += p.shape() == conds[i].shape_id ? 1.0 : 0.0;
        s.coherent += *std::max_element(p.shape_prob.begin(), p.shape_prob.end()) >= coherence_threshold ? 1.0 : 0.0;
        s.bg_consistency += bg_consistency(clips[i]);
        s.frame_diff_energy += frame_diff_energy(clips[i]);
    }
    const double n = static_cast<double>(clips.size());
    s.factor_match /= n;
    s.coherent /= n;
    s.bg_consistency /= n;
    s.frame_diff_energy /= n;
    return s;
}

std::vector<synth::FactorSpec> eval_conditions(const Config &c, std::size_t n) {
    synth::CorpusConfig cc = workflow::corpus_config(c);
    cc.num_clips = n;
    cc.seed += 1000;
    return synth::draw_factors(cc);
}

std::uint64_t sample_seed(std::size_t i) { return 100 + i; }

std::vector<synth::Video> generate_clips(const workflow::TrainedRun &run, const pipeline::SemanticGenerator *semantic,
                                         const ae::AeParams &ae, const std::vector<synth::FactorSpec> &conds,
                                         const pipeline::GenerateOptions &base, bool long_mode,
                                         const fs::path &sample_dir, const std::string &stem, std::size_t keep) {
    std::vector<synth::Video> out;
    for (std::size_t i = 0; i < conds.size(); ++i) {
        pipeline::GenerateOptions o = base;
        o.seed = sample_seed(i);
        out.push_back(workflow::sample(run, semantic, ae, &conds[i], o, long_mode));
        if (!sample_dir.empty() && i < keep) pipeline::save_sample(sample_dir, stem + "_" + std::to_string(i), out.back());
    }
    return out;
}

std::vector<double> read_losses(const fs::path &loss_csv) {
    if (!fs::exists(loss_csv)) throw DependencyError("loss curve " + loss_csv.string() + " not found");
    std::istringstream is(io::read_text(loss_csv));
    std::string line;
    std::getline(is, line);
    std::vector<double> out;
    while (std::getline(is, line)) {
        const auto a = line.find(',');
        if (a == std::string::npos) continue;
        const auto b = line.find(',', a + 1);
        out.push_back(std::stod(line.substr(a + 1, b == std::string::npos ? std::string::npos : b - a - 1)));
    }
    return out;
}

std::vector<std::pair<std::size_t, double>> loss_grid(const std::vector<double> &losses, std::size_t every) {
    if (every == 0) throw ConfigError("loss grid interval must be >= 1");
    std::vector<std::pair<std::size_t, double>> out;
    for (std::size_t step = every; step <= losses.size(); step += every) {
        double s = 0.0;
        for (std::size_t i = step - every; i < step; ++i) s += losses[i];
        out.emplace_back(step, s / static_cast<double>(every));
    }
    return out;
}

// -------------------------------------------------------------- experiments

namespace {

class ReportCsv {
   public:
    explicit ReportCsv(std::string header) { os_ << header << '\n'; os_.precision(10); }
    template <typename... Ts>
    void row(const Ts &...cells) {
        std::size_t i = 0;
        ((os_ << (i++ ? "," : "") << cells), ...);
        os_ << '\n';
    }
    void write(const fs::path &path) const {
        fs::create_directories(path.parent_path());
        io::write_text(path, os_.str());
    }

   private:
    std::ostringstream os_;
};

void score_rows(ReportCsv &csv, const std::string &system, const std::string &checkpoint, std::size_t step,
                const ProbeScores &s) {
    const json j = s.to_json();
    for (const auto &[k, v] : j.items())
        if (k != "clips") csv.row(system, checkpoint, step, k, v.get<double>());
}

void check_runs_fair(const workflow::Workspace &ws, const std::vector<std::string> &names) {
    std::vector<pipeline::RunFingerprint> fps;
    for (const auto &n : names) fps.push_back(workflow::load_fingerprint(ws, n));
    pipeline::check_fairness(fps);
}

std::size_t early_step(const pipeline::StageConfig &sc, double fraction) {
    if (sc.ckpt_every == 0) throw ConfigError("the early checkpoint needs train.ckpt_every > 0");
    const auto raw = static_cast<std::size_t>(std::floor(static_cast<double>(sc.steps) * fraction));
    const std::size_t step = std::max<std::size_t>(1, raw / sc.ckpt_every) * sc.ckpt_every;
    if (step > sc.steps) throw ConfigError("no checkpoint at or before the early fraction of train.steps");
    return step;
}

void write_summary(const fs::path &out, const json &summary) {
    fs::create_directories(out);
    io::write_text(out / "summary.json", summary.dump(2) + "\n");
}

}  // namespace

std::string ablation_run_name(const std::string &prefix, std::size_t d_c) {
    return prefix + "_dc" + std::to_string(d_c);
}

std::vector<SystemSpec> convergence_systems(const std::string &prefix, std::size_t d_c) {
    return {{"semantic", {ablation_run_name(prefix, d_c), pipeline::Stage::kLatentGen, false, {{"sem.d_c", d_c}}}},
            {"vae_latent", {prefix + "_vae", pipeline::Stage::kBaselineVae2Stage, false, json::object()}}};
}

json convergence_experiment(workflow::Workspace &ws, const std::vector<SystemSpec> &systems, const fs::path &out) {
    if (systems.empty()) throw ConfigError("convergence experiment needs at least one system");
    const Config &c = ws.config();
    std::vector<workflow::TrainedRun> runs;
    std::vector<std::string> names;
    for (const auto &s : systems) {
        if (!workflow::two_stage(s.run.stage)) throw ConfigError(s.label + ": convergence compares two-stage pipelines");
        runs.push_back(workflow::train_run(ws, s.run));
        names.push_back(s.run.name);
    }
    check_runs_fair(ws, names);

    const auto conds = eval_conditions(c, c.size("eval.probe_clips"));
    const auto opts = workflow::generate_options(c, false, 0);
    const double threshold = c.real("eval.coherence_threshold");
    const auto &ae = ws.autoencoder();
    const auto &probe = ws.probe();

    ReportCsv report("system,checkpoint,step,metric,value");
    ReportCsv curves("system,stage,step,loss");
    json summary = {{"experiment", "convergence"}, {"systems", json::array()}};
    for (std::size_t k = 0; k < systems.size(); ++k) {
        const auto &spec = systems[k];
        const auto &run = runs[k];
        const auto sc = run.semantic->cfg;
        const std::size_t early = early_step(sc, c.real("eval.early_fraction"));
        for (const auto &[stage, dir] : {std::pair{"latent", "latent"}, std::pair{"semantic", "semantic"}}) {
            const auto losses = read_losses(ws.run_dir(spec.run.name) / dir / "loss.csv");
            for (const auto &[step, l] : loss_grid(losses, sc.ckpt_every)) curves.row(spec.label, stage, step, l);
        }
        const auto early_gen = workflow::semantic_at_step(ws, run, spec.run.name, early);
        const fs::path samples = out;
        const auto v_early = generate_clips(run, &early_gen, ae, conds, opts, false, samples, spec.label + "_early");
        const auto v_final = generate_clips(run, nullptr, ae, conds, opts, false, samples, spec.label + "_final");
        const auto s_early = probe_scores(v_early, conds, probe, threshold);
        const auto s_final = probe_scores(v_final, conds, probe, threshold);
        score_rows(report, spec.label, "early", early, s_early);
        score_rows(report, spec.label, "final", sc.steps, s_final);
        summary["systems"].push_back({{"label", spec.label},
                                      {"run", spec.run.name},
                                      {"stage", pipeline::stage_name(spec.run.stage)},
                                      {"early_step", early},
                                      {"final_step", sc.steps},
                                      {"early", s_early.to_json()},
                                      {"final", s_final.to_json()}});
    }
    summary["coherence_threshold"] = threshold;
    summary["coherence_pass"] = c.real("eval.coherence_pass");
    report.write(out / "report.csv");
    curves.write(out / "curves.csv");
    write_summary(out, summary);
    return summary;
}

json compression_ablation(workflow::Workspace &ws, const std::vector<std::size_t> &sweep, const std::string &prefix,
                          const fs::path &out) {
    if (sweep.empty()) throw ConfigError("compression sweep is empty");
    const Config &c = ws.config();
    const std::size_t d = c.size("sem.d");
    std::vector<std::string> names;
    std::vector<workflow::TrainedRun> runs;
    for (auto d_c : sweep) {
        if (d_c == 0 || d_c > d) throw ConfigError("sweep entry d_c=" + std::to_string(d_c) + " outside [1, sem.d]");
        workflow::RunSpec spec{ablation_run_name(prefix, d_c), pipeline::Stage::kLatentGen, false, {{"sem.d_c", d_c}}};
        runs.push_back(workflow::train_run(ws, spec));
        names.push_back(spec.name);
    }
    check_runs_fair(ws, names);

    const auto conds = eval_conditions(c, c.size("eval.probe_clips"));
    const auto opts = workflow::generate_options(c, false, 0);
    const double threshold = c.real("eval.coherence_threshold");
    const auto &ae = ws.autoencoder();
    const auto &probe = ws.probe();
    ReportCsv report("system,checkpoint,step,metric,value");
    json summary = {{"experiment", "compression_ablation"}, {"rows", json::array()}};
    for (std::size_t k = 0; k < sweep.size(); ++k) {
        const std::string label = "dc" + std::to_string(sweep[k]);
        const auto v = generate_clips(runs[k], nullptr, ae, conds, opts, false, out, label);
        const auto s = probe_scores(v, conds, probe, threshold);
        score_rows(report, label, "final", runs[k].semantic->cfg.steps, s);
        json row = s.to_json();
        row["d_c"] = sweep[k];
        row["run"] = names[k];
        summary["rows"].push_back(row);
    }
    report.write(out / "report.csv");
    write_summary(out, summary);
    return summary;
}

json drift_experiment(workflow::Workspace &ws, const std::vector<std::string> &runs, std::size_t clips,
                      const fs::path &out) {
    if (runs.empty()) throw ConfigError("drift experiment needs at least one run");
    const Config &c = ws.config();
    std::vector<workflow::TrainedRun> trained;
    for (const auto &r : runs) {
        try {
            trained.push_back(workflow::load_run(ws, r));
        } catch (const DependencyError &e) {
            throw ConfigError(std::string("drift experiment: ") + e.what());
        }
        if (trained.back().latent.cfg.layout.mode != dit::LayoutMode::kSwinInterleaved) {
            throw ConfigError("drift experiment: run '" + r + "' is not a long-mode (swin_interleaved) generator");
        }
    }
    check_runs_fair(ws, runs);

    const auto conds = eval_conditions(c, clips);
    const auto opts = workflow::generate_options(c, true, 0);
    const double fraction = c.real("eval.fraction");
    const auto &ae = ws.autoencoder();
    ReportCsv report("system,clip,metric,head,tail,delta");
    json summary = {{"experiment", "drift"}, {"fraction", fraction}, {"clips", clips}, {"systems", json::array()}};
    for (std::size_t k = 0; k < runs.size(); ++k) {
        const auto videos = generate_clips(trained[k], nullptr, ae, conds, opts, true, out, runs[k]);
        json means = json::object();
        for (const auto &name : metric_names()) {
            const auto m = metric(name);
            double s = 0.0;
            for (std::size_t i = 0; i < videos.size(); ++i) {
                const auto d = drift(videos[i], m, fraction);
                report.row(runs[k], i, name, d.head, d.tail, d.delta);
                s += d.delta;
            }
            means[name] = s / static_cast<double>(videos.size());
        }
        summary["systems"].push_back({{"run", runs[k]},
                                      {"stage", pipeline::stage_name(trained[k].latent.cfg.stage)},
                                      {"mean_drift", means}});
    }
    report.write(out / "report.csv");
    write_summary(out, summary);
    return summary;
}

json ReferenceReport::to_json() const {
    return {{"shape_agreement", shape_agreement},
            {"motion_agreement", motion_agreement},
            {"agreement", agreement()},
            {"mse", mse},
            {"texture_floor", texture_floor},
            {"clips", clips}};
}

ReferenceReport reference_experiment(workflow::Workspace &ws, const std::string &run, std::size_t clips,
                                     const fs::path &out) {
    if (clips == 0) throw ConfigError("reference experiment needs at least one clip");
    const Config &c = ws.config();
    const auto trained = workflow::load_run(ws, run);
    if (!trained.latent.has_semantics()) throw ConfigError("run '" + run + "' takes no semantic tokens");
    const auto frozen = ws.frozen(trained.latent.source);
    const auto &probe = ws.probe();
    const auto cc = workflow::corpus_config(c);
    const auto conds = eval_conditions(c, clips);
    ReferenceReport r;
    r.clips = clips;
    for (std::size_t i = 0; i < clips; ++i) {
        Rng a(5000 + i), b(6000 + i);
        const auto ref = synth::render_clip(conds[i], cc, a);
        const auto twin = synth::render_clip(conds[i], cc, b);
        const auto opts = workflow::generate_options(c, false, sample_seed(i));
        const auto v = pipeline::generate_from_reference(ref, nullptr, trained.latent, frozen, opts);
        const auto pv = sem::predict_factors(v, probe), pr = sem::predict_factors(ref, probe);
        r.shape_agreement += pv.shape() == pr.shape() ? 1.0 : 0.0;
        r.motion_agreement += pv.motion() == pr.motion() ? 1.0 : 0.0;
        r.mse += ae::video_mse(v, ref);
        r.texture_floor += ae::video_mse(twin, ref);
        if (!out.empty() && i < 2) {
            pipeline::save_sample(out, "reference_" + std::to_string(i), ref);
            pipeline::save_sample(out, "from_reference_" + std::to_string(i), v);
        }
    }
    const double n = static_cast<double>(clips);
    r.shape_agreement /= n;
    r.motion_agreement /= n;
    r.mse /= n;
    r.texture_floor /= n;
    if (!out.empty()) write_summary(out, r.to_json());
    return r;
}

}  // namespace semgen::eval
