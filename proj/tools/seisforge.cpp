// seisforge: dataset generation, simulation, identification, training and
// prediction for lumped-mass seismic response surrogates.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "seisforge/dynamics.hpp"
#include "seisforge/errors.hpp"
#include "seisforge/ground_motion.hpp"
#include "seisforge/identification.hpp"
#include "seisforge/jsondoc.hpp"
#include "seisforge/structure_model.hpp"
#include "seisforge/svg.hpp"
#include "seisforge/training.hpp"

namespace fs = std::filesystem;
using namespace seisforge;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitGeneration = 3;
constexpr int kExitCompatibility = 4;
constexpr int kExitNumerical = 5;

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool out_required = true) {
    cmd->add_option("--config", args.config_path, "configuration document (JSON)");
    auto* out = cmd->add_option("--out", args.out_dir, "output directory");
    if (out_required) out->required();
    cmd->add_option("--seed", args.seed, "override the configured RNG seed");
}

fs::path ensure_out_dir(const std::string& dir) {
    fs::path p(dir);
    fs::create_directories(p);
    return p;
}

void write_resolved(const fs::path& out, const std::string& command, const Doc& doc) {
    save_doc(out / (command + ".resolved.json"), doc);
}

/// Accepts either a building document (reduced on the fly) or a lumped-mass
/// model document.
model::LumpedMassModel load_model_or_building(const fs::path& path,
                                              const std::string& direction) {
    const Doc d = load_doc(path);
    if (d.contains("masses_kg")) return model::model_from_doc(d);
    const auto b = model::building_from_doc(d);
    const auto dir = direction == "y" ? model::Direction::y : model::Direction::x;
    auto m = model::reduce_to_mdof(b, dir);
    m.id = path.stem().string();
    return m;
}

/// Floor selectors: integers, "mid" (n/2, at least 1) and "top".
std::vector<std::size_t> parse_floors(const std::string& spec, std::size_t n_stories) {
    std::vector<std::size_t> floors;
    std::istringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        std::size_t f;
        if (tok == "mid")
            f = std::max<std::size_t>(1, n_stories / 2);
        else if (tok == "top")
            f = n_stories;
        else {
            try {
                f = static_cast<std::size_t>(std::stoul(tok));
            } catch (...) {
                throw ConfigError("bad floor selector '" + tok + "'");
            }
        }
        if (f < 1 || f > n_stories)
            throw ConfigError("floor " + std::to_string(f) + " outside 1.." +
                              std::to_string(n_stories));
        floors.push_back(f);
    }
    std::sort(floors.begin(), floors.end());
    floors.erase(std::unique(floors.begin(), floors.end()), floors.end());
    if (floors.empty()) throw ConfigError("no floors selected");
    return floors;
}

Vec story_slice(const dyn::ResponseHistory& r, const Vec& q, std::size_t story) {
    Vec out(r.n_steps);
    for (std::size_t t = 0; t < r.n_steps; ++t) out[t] = q[story * r.n_steps + t];
    return out;
}

void write_response_outputs(const fs::path& out, const std::string& base,
                            const dyn::ResponseHistory& r) {
    dyn::save_response(out / (base + ".sfrh"), r);
    dyn::export_csv(out / (base + ".u.csv"), r, r.u, "u");
    dyn::export_csv(out / (base + ".v.csv"), r, r.v, "v");
    dyn::export_csv(out / (base + ".a.csv"), r, r.a, "a");
}

void plot_floors(const fs::path& out, const std::string& prefix,
                 const dyn::ResponseHistory& pred, const dyn::ResponseHistory* reference,
                 const std::vector<std::size_t>& floors) {
    for (std::size_t f : floors) {
        for (int q = 0; q < 2; ++q) {
            const char* qn = q == 0 ? "u" : "a";
            const Vec& pq = q == 0 ? pred.u : pred.a;
            std::vector<svg::Series> series;
            if (reference) {
                const Vec& rq = q == 0 ? reference->u : reference->a;
                series.push_back({"reference", "#888888", story_slice(*reference, rq, f - 1)});
            }
            series.push_back({reference ? "prediction" : "response", "#c0392b",
                              story_slice(pred, pq, f - 1)});
            const std::string unit = q == 0 ? "displacement (m)" : "acceleration (m/s2)";
            char name[128];
            std::snprintf(name, sizeof name, "%s_%s_floor%zu.svg", prefix.c_str(), qn, f);
            svg::write_line_chart(out / name, "floor " + std::to_string(f), unit, pred.dt,
                                  series);
        }
    }
}

// -------------------------------------------------------------------------
// gen
// -------------------------------------------------------------------------

int cmd_gen(const CommonArgs& args, std::optional<int> samples_override) {
    train::GenConfig cfg;
    if (!args.config_path.empty()) cfg = train::GenConfig::from_doc(load_doc(args.config_path));
    if (args.seed) cfg.seed = *args.seed;
    if (samples_override) cfg.n_samples = *samples_override;
    cfg.validate();
    const fs::path out = ensure_out_dir(args.out_dir);
    write_resolved(out, "gen", cfg.to_doc());
    const auto manifest = train::build_dataset(cfg, out);
    std::printf("%s\n", (out / "manifest.json").string().c_str());
    std::fprintf(stderr, "gen: %zu samples (%zu skipped)\n", manifest.samples.size(),
                 manifest.skipped.size());
    return kExitOk;
}

// -------------------------------------------------------------------------
// simulate
// -------------------------------------------------------------------------

struct SimulateArgs {
    std::string building, motion, direction = "x", floors = "mid,top";
    double dt = 0.02, gamma = 0.5, beta = 0.25;
    bool resample = false, plot = false;
};

int cmd_simulate(const CommonArgs& common, const SimulateArgs& a) {
    const fs::path out = ensure_out_dir(common.out_dir);
    auto mdl = load_model_or_building(a.building, a.direction);
    auto motion = gm::load_record(a.motion);
    double dt = a.dt;
    if (motion.dt != dt) {
        if (!a.resample)
            throw ConfigError("motion dt " + gm::fmt_g17(motion.dt) +
                              " differs from --dt " + gm::fmt_g17(dt) +
                              "; pass --resample to interpolate");
        motion = gm::resample(motion, dt);
    }
    Doc resolved;
    resolved["building"] = a.building;
    resolved["motion"] = a.motion;
    resolved["direction"] = a.direction;
    resolved["dt_s"] = dt;
    resolved["gamma"] = a.gamma;
    resolved["beta"] = a.beta;
    resolved["resample"] = a.resample;
    resolved["plot"] = a.plot;
    resolved["floors"] = a.floors;
    write_resolved(out, "simulate", resolved);

    const dyn::IntegratorParams p{a.gamma, a.beta, dt};
    const auto oracle = dyn::simulate(mdl, motion, p);
    const auto sdr = dyn::sdr_response(mdl, motion, p);
    write_response_outputs(out, "response", oracle);
    write_response_outputs(out, "sdr", sdr);
    if (a.plot) plot_floors(out, "plot", oracle, nullptr, parse_floors(a.floors, oracle.n_stories));
    std::printf("%s\n", (out / "response.sfrh").string().c_str());
    return kExitOk;
}

// -------------------------------------------------------------------------
// identify
// -------------------------------------------------------------------------

struct IdentifyArgs {
    std::string model, reference, motion, method = "gauss_newton";
    double bounds_factor = 20.0;
    double guess_factor = 1.0;
};

int cmd_identify(const CommonArgs& common, const IdentifyArgs& a) {
    const fs::path out = ensure_out_dir(common.out_dir);
    const auto mdl = load_model_or_building(a.model, "x");
    ident::IdentificationProblem prob;
    prob.masses_kg = mdl.masses_kg;
    prob.reference = dyn::load_response(a.reference);
    prob.excitation = gm::load_record(a.motion);
    prob.damping_ratio = mdl.damping_ratio;
    prob.initial_guess_n_per_m = mdl.story_stiffness_n_per_m;
    for (auto& k : prob.initial_guess_n_per_m) k *= a.guess_factor;
    for (double k : prob.initial_guess_n_per_m) {
        prob.bounds_lo_n_per_m.push_back(k / a.bounds_factor);
        prob.bounds_hi_n_per_m.push_back(k * a.bounds_factor);
    }
    ident::IdentifyOptions opt;
    if (common.seed) opt.seed = *common.seed;
    if (a.method != "evolutionary" && a.method != "gauss_newton")
        throw ConfigError("identify: unknown method '" + a.method + "'");
    const auto method = a.method == "evolutionary" ? ident::IdentifyMethod::evolutionary
                                                   : ident::IdentifyMethod::gauss_newton;

    Doc resolved;
    resolved["model"] = a.model;
    resolved["reference"] = a.reference;
    resolved["motion"] = a.motion;
    resolved["method"] = a.method;
    resolved["bounds_factor"] = a.bounds_factor;
    resolved["guess_factor"] = a.guess_factor;
    resolved["seed"] = opt.seed;
    write_resolved(out, "identify", resolved);

    const auto result = ident::identify_stiffness(prob, method, opt);
    save_doc(out / "identify.result.json", ident::to_doc(result));
    std::printf("%s\n", (out / "identify.result.json").string().c_str());
    return kExitOk;
}

// -------------------------------------------------------------------------
// train / finetune
// -------------------------------------------------------------------------

int cmd_train(const CommonArgs& common, const std::string& manifest_path) {
    const fs::path out = ensure_out_dir(common.out_dir);
    train::TrainConfig cfg;
    if (!common.config_path.empty())
        cfg = train::TrainConfig::from_doc(load_doc(common.config_path));
    if (common.seed) cfg.seed = *common.seed;
    cfg.validate();
    write_resolved(out, "train", cfg.to_doc());

    const auto manifest = train::load_manifest(manifest_path);
    auto result = train::train(
        cfg, manifest, [&](int step, const train::Checkpoint& ck) {
            train::write_file_bytes(out / ("checkpoint_step" + std::to_string(step) + ".sgpt"),
                                    ck.encode());
        });
    train::write_file_bytes(out / "checkpoint.sgpt", result.checkpoint.encode());
    train::write_training_log(out / "train_log.csv", result.log);
    std::printf("%s\n", (out / "checkpoint.sgpt").string().c_str());
    std::fprintf(stderr, "train: final loss %.6g after %d steps\n", result.log.back().loss,
                 cfg.max_steps);
    return kExitOk;
}

int cmd_finetune(const CommonArgs& common, const std::string& checkpoint_path,
                 const std::string& manifest_path, int rank, double alpha) {
    const fs::path out = ensure_out_dir(common.out_dir);
    train::TrainConfig cfg;
    if (!common.config_path.empty())
        cfg = train::TrainConfig::from_doc(load_doc(common.config_path));
    if (common.seed) cfg.seed = *common.seed;

    const std::string base_bytes = train::read_file_bytes(checkpoint_path);
    const auto base = train::Checkpoint::decode(base_bytes, checkpoint_path);
    const auto manifest = train::load_manifest(manifest_path);

    Doc resolved = cfg.to_doc();
    resolved["checkpoint"] = checkpoint_path;
    resolved["lora_rank"] = rank;
    resolved["lora_alpha"] = alpha;
    write_resolved(out, "finetune", resolved);

    std::vector<train::LogRow> log;
    auto adapter = train::finetune_lora(base, base_bytes, manifest, rank, alpha, cfg, &log);
    auto weights_copy = base.weights;
    train::write_file_bytes(out / "adapter.sgpt", adapter.encode(weights_copy));
    train::write_training_log(out / "finetune_log.csv", log);
    std::printf("%s\n", (out / "adapter.sgpt").string().c_str());
    return kExitOk;
}

// -------------------------------------------------------------------------
// predict / evaluate
// -------------------------------------------------------------------------

struct PredictArgs {
    std::string checkpoint, adapter, model, motion, reference, direction = "x";
    std::string floors = "mid,top";
    bool resample = false, plot = false;
};

int cmd_predict(const CommonArgs& common, const PredictArgs& a) {
    const fs::path out = ensure_out_dir(common.out_dir);
    const std::string base_bytes = train::read_file_bytes(a.checkpoint);
    const auto ckpt = train::Checkpoint::decode(base_bytes, a.checkpoint);
    std::optional<train::AdapterCheckpoint> adapter;
    if (!a.adapter.empty())
        adapter = train::AdapterCheckpoint::decode(train::read_file_bytes(a.adapter), a.adapter,
                                                   ckpt, base_bytes);

    auto mdl = load_model_or_building(a.model, a.direction);
    auto motion = gm::load_record(a.motion);
    if (motion.dt != ckpt.stats.dt) {
        if (!a.resample)
            throw ConfigError("motion dt " + gm::fmt_g17(motion.dt) +
                              " differs from the checkpoint grid " +
                              gm::fmt_g17(ckpt.stats.dt) + "; pass --resample");
        motion = gm::resample(motion, ckpt.stats.dt);
    }

    Doc resolved;
    resolved["checkpoint"] = a.checkpoint;
    if (!a.adapter.empty()) resolved["adapter"] = a.adapter;
    resolved["model"] = a.model;
    resolved["motion"] = a.motion;
    resolved["direction"] = a.direction;
    resolved["resample"] = a.resample;
    resolved["plot"] = a.plot;
    resolved["floors"] = a.floors;
    write_resolved(out, "predict", resolved);

    const auto pred = train::predict_rollout(ckpt, adapter ? &adapter->lora : nullptr, mdl, motion);
    write_response_outputs(out, "prediction", pred);

    std::optional<dyn::ResponseHistory> reference;
    if (!a.reference.empty()) {
        reference = dyn::load_response(a.reference);
        if (reference->n_stories != pred.n_stories || reference->n_steps != pred.n_steps)
            throw ConfigError("predict: reference shape does not match the prediction");
        std::vector<double> pd, td, pa, ta;
        for (std::size_t s = 0; s < pred.n_stories; ++s)
            for (std::size_t t = 0; t < pred.n_steps; ++t) {
                pd.push_back(pred.get_u(s, t));
                td.push_back(reference->get_u(s, t));
                pa.push_back(pred.get_a(s, t));
                ta.push_back(reference->get_a(s, t));
            }
        const auto md = train::compute_metrics(pd, td);
        const auto ma = train::compute_metrics(pa, ta);
        Doc rep;
        rep["displacement"] = Doc{{"mse", md.mse}, {"mae", md.mae}, {"mre", md.mre}, {"r", md.r}};
        rep["acceleration"] = Doc{{"mse", ma.mse}, {"mae", ma.mae}, {"mre", ma.mre}, {"r", ma.r}};
        save_doc(out / "predict.report.json", rep);
    }
    if (a.plot)
        plot_floors(out, "predict", pred, reference ? &*reference : nullptr,
                    parse_floors(a.floors, pred.n_stories));
    std::printf("%s\n", (out / "prediction.sfrh").string().c_str());
    return kExitOk;
}

struct EvaluateArgs {
    std::string checkpoint, adapter, manifest, split = "test";
    int worst = 2;
};

int cmd_evaluate(const CommonArgs& common, const EvaluateArgs& a) {
    const fs::path out = ensure_out_dir(common.out_dir);
    const std::string base_bytes = train::read_file_bytes(a.checkpoint);
    const auto ckpt = train::Checkpoint::decode(base_bytes, a.checkpoint);
    std::optional<train::AdapterCheckpoint> adapter;
    if (!a.adapter.empty())
        adapter = train::AdapterCheckpoint::decode(train::read_file_bytes(a.adapter), a.adapter,
                                                   ckpt, base_bytes);
    const auto manifest = train::load_manifest(a.manifest);

    Doc resolved;
    resolved["checkpoint"] = a.checkpoint;
    if (!a.adapter.empty()) resolved["adapter"] = a.adapter;
    resolved["manifest"] = a.manifest;
    resolved["split"] = a.split;
    resolved["worst"] = a.worst;
    write_resolved(out, "evaluate", resolved);

    std::vector<dyn::ResponseHistory> predictions;
    std::vector<const train::SampleMeta*> metas;
    const auto rep = train::evaluate(ckpt, adapter ? &adapter->lora : nullptr, manifest, a.split,
                                     &predictions, &metas);
    save_doc(out / "eval.report.json", rep.to_doc());
    train::write_eval_csv(out / "eval.report.csv", rep);

    // overlay plots for the worst displacement-R samples, mid and top floors
    const int n_worst = std::min<int>(a.worst, static_cast<int>(rep.worst.size()));
    for (int w = 0; w < n_worst; ++w) {
        const std::string& id = rep.worst[w].sample_id;
        for (std::size_t i = 0; i < metas.size(); ++i) {
            if (metas[i]->id != id) continue;
            const auto sample = train::load_sample(manifest, *metas[i]);
            const auto floors = parse_floors("mid,top", predictions[i].n_stories);
            plot_floors(out, "worst_" + id, predictions[i], &sample.oracle, floors);
        }
    }
    std::printf("%s\n", (out / "eval.report.json").string().c_str());
    std::fprintf(stderr, "evaluate: %d samples, displacement R %.4f, acceleration R %.4f\n",
                 rep.n_samples, rep.displacement.r, rep.acceleration.r);
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"seisforge: physics-conditioned seismic response surrogate pipeline"};
    app.require_subcommand(1);

    CommonArgs gen_common, sim_common, ident_common, train_common, tune_common, pred_common,
        eval_common;
    std::optional<int> gen_samples;
    SimulateArgs sim;
    IdentifyArgs ident_args;
    std::string train_manifest, tune_checkpoint, tune_manifest;
    int tune_rank = 4;
    double tune_alpha = 16.0;
    PredictArgs pred;
    EvaluateArgs eval_args;

    auto* c_gen = app.add_subcommand("gen", "generate a synthetic dataset with the physics oracle");
    add_common(c_gen, gen_common);
    c_gen->add_option("--samples", gen_samples, "override the configured sample count");

    auto* c_sim = app.add_subcommand("simulate", "time-history simulation of one building/motion pair");
    add_common(c_sim, sim_common);
    c_sim->add_option("--building", sim.building, "building or lumped-mass model document")->required();
    c_sim->add_option("--motion", sim.motion, "ground-motion record file")->required();
    c_sim->add_option("--direction", sim.direction, "planar direction for building reduction (x|y)");
    c_sim->add_option("--dt", sim.dt, "integration grid in seconds (default 0.02)");
    c_sim->add_flag("--resample", sim.resample, "resample the motion onto the --dt grid");
    c_sim->add_flag("--plot", sim.plot, "emit SVG time-history plots");
    c_sim->add_option("--floors", sim.floors, "floors to plot: numbers, mid, top (default mid,top)");
    c_sim->add_option("--gamma", sim.gamma, "Newmark gamma (default 0.5)");
    c_sim->add_option("--beta", sim.beta, "Newmark beta (default 0.25)");

    auto* c_ident = app.add_subcommand("identify", "recover story stiffness from a reference response");
    add_common(c_ident, ident_common);
    c_ident->add_option("--model", ident_args.model, "model document holding masses and the initial guess")->required();
    c_ident->add_option("--reference", ident_args.reference, "reference response (SFRH)")->required();
    c_ident->add_option("--motion", ident_args.motion, "excitation record file")->required();
    c_ident->add_option("--method", ident_args.method, "gauss_newton (default) or evolutionary");
    c_ident->add_option("--bounds-factor", ident_args.bounds_factor, "search bounds as a factor of the guess (default 20)");
    c_ident->add_option("--guess-factor", ident_args.guess_factor, "scale the document stiffness to form the initial guess");

    auto* c_train = app.add_subcommand("train", "pretrain the response decoder on a dataset");
    add_common(c_train, train_common);
    c_train->add_option("--manifest", train_manifest, "dataset manifest path")->required();

    auto* c_tune = app.add_subcommand("finetune", "LoRA fine-tuning of a base checkpoint");
    add_common(c_tune, tune_common);
    c_tune->add_option("--checkpoint", tune_checkpoint, "base checkpoint (SGPT)")->required();
    c_tune->add_option("--manifest", tune_manifest, "fine-tune dataset manifest")->required();
    c_tune->add_option("--rank", tune_rank, "adapter rank (default 4)");
    c_tune->add_option("--alpha", tune_alpha, "adapter alpha (default 16)");

    auto* c_pred = app.add_subcommand("predict", "autoregressive rollout for one building/motion pair");
    add_common(c_pred, pred_common);
    c_pred->add_option("--checkpoint", pred.checkpoint, "base checkpoint (SGPT)")->required();
    c_pred->add_option("--adapter", pred.adapter, "adapter checkpoint (SGPT)");
    c_pred->add_option("--model", pred.model, "building or lumped-mass model document")->required();
    c_pred->add_option("--motion", pred.motion, "ground-motion record file")->required();
    c_pred->add_option("--direction", pred.direction, "planar direction for building reduction (x|y)");
    c_pred->add_option("--reference", pred.reference, "oracle response (SFRH) for a comparison report");
    c_pred->add_flag("--resample", pred.resample, "resample the motion onto the checkpoint grid");
    c_pred->add_flag("--plot", pred.plot, "emit SVG comparison plots");
    c_pred->add_option("--floors", pred.floors, "floors to plot: numbers, mid, top (default mid,top)");

    auto* c_eval = app.add_subcommand("evaluate", "rollout metrics over a dataset split");
    add_common(c_eval, eval_common);
    c_eval->add_option("--checkpoint", eval_args.checkpoint, "base checkpoint (SGPT)")->required();
    c_eval->add_option("--adapter", eval_args.adapter, "adapter checkpoint (SGPT)");
    c_eval->add_option("--manifest", eval_args.manifest, "dataset manifest path")->required();
    c_eval->add_option("--split", eval_args.split, "split to evaluate (default test)");
    c_eval->add_option("--worst", eval_args.worst, "number of worst-case overlay plots (default 2)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (c_gen->parsed()) return cmd_gen(gen_common, gen_samples);
        if (c_sim->parsed()) return cmd_simulate(sim_common, sim);
        if (c_ident->parsed()) return cmd_identify(ident_common, ident_args);
        if (c_train->parsed()) return cmd_train(train_common, train_manifest);
        if (c_tune->parsed())
            return cmd_finetune(tune_common, tune_checkpoint, tune_manifest, tune_rank, tune_alpha);
        if (c_pred->parsed()) return cmd_predict(pred_common, pred);
        if (c_eval->parsed()) return cmd_evaluate(eval_common, eval_args);
    } catch (const CompatibilityError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitCompatibility;
    } catch (const GenerationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitGeneration;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNumerical;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    }
    return kExitOk;
}
