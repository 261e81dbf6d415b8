// ldreg: batch front end for the registration toolkit.
//
// Commands: train / register / evaluate / synth / gridsearch. Global flags
// (--config, --seed, --out, --device) may appear before or after the command
// name. Every run writes a manifest.json next to its outputs. Exit codes:
// 0 success, 1 usage or configuration error, 2 data error, 3 numerical
// divergence.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ldreg/config.hpp"
#include "ldreg/data.hpp"
#include "ldreg/errors.hpp"
#include "ldreg/evaluation.hpp"
#include "ldreg/io.hpp"
#include "ldreg/network.hpp"
#include "ldreg/rng.hpp"
#include "ldreg/training.hpp"
#include "ldreg/warp.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ldreg;

namespace {

constexpr uint64_t kSaltDeformedNoise = 0x6e6f697365ull;

// Options every command shares.
struct GlobalArgs {
    std::string config_path;
    std::string out_dir = ".";
    std::string device = "cpu";
    uint64_t seed = 0;
    bool seed_set = false;
};

std::string utc_now() {
    const std::time_t t =
        std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_text(const std::string &path, const std::string &text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f.good())
        throw DataError("cannot open " + path + " for writing");
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f.good())
        throw DataError("short write to " + path);
}

void ensure_out_dir(const std::string &dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir))
        throw DataError("cannot create output directory " + dir);
}

// Accumulates the run record and dumps it as manifest.json in the out dir.
struct Manifest {
    std::string command;
    std::map<std::string, std::string> config;
    std::vector<std::string> inputs, outputs;
    uint64_t seed = 0;
    std::string started = utc_now();

    void write(const std::string &out_dir) const {
        json j;
        j["command"] = command;
        j["config"] = config;
        j["inputs"] = inputs;
        j["outputs"] = outputs;
        j["seed"] = seed;
        j["version"] = kToolkitVersion;
        j["started_utc"] = started;
        j["finished_utc"] = utc_now();
        write_text(out_dir + "/manifest.json", j.dump(2) + "\n");
    }
};

std::map<std::string, std::string> load_kv(const GlobalArgs &g) {
    if (g.config_path.empty())
        return {};
    return load_config_file(g.config_path);
}

void reject_leftover(const std::map<std::string, std::string> &kv,
                     const std::set<std::string> &consumed) {
    for (const auto &[key, value] : kv)
        if (!consumed.count(key))
            throw ValidationError("unknown config key: " + key);
}

// Resolved training configuration: config file, then --seed, then ablation
// flags, strictest last.
struct TrainFlags {
    bool no_refine_core = false, no_rigid = false, no_range_loss = false,
         no_smooth_loss = false;
};

TrainConfig resolve_train_config(const GlobalArgs &g, const TrainFlags &flags) {
    const auto kv = load_kv(g);
    TrainConfig cfg;
    std::set<std::string> consumed;
    apply_train_keys(cfg, kv, consumed);
    reject_leftover(kv, consumed);
    if (g.seed_set)
        cfg.seed = g.seed;
    if (flags.no_refine_core)
        cfg.network.use_refine_core = false;
    if (flags.no_rigid)
        cfg.network.use_rigid = false;
    if (flags.no_range_loss)
        cfg.weights.alpha = 0.0;
    if (flags.no_smooth_loss)
        cfg.weights.beta = 0.0;
    cfg.validate();
    return cfg;
}

// One synthetic case on disk: "<dir>/caseNNN_<part>". Absent parts are "".
struct CaseFiles {
    std::string id;
    std::string phantom, mask, deformed, deformed_mask, field;
};

std::vector<CaseFiles> scan_cases(const std::string &dir) {
    if (!fs::is_directory(dir))
        throw DataError("data directory not found: " + dir);
    std::map<std::string, CaseFiles> by_id;
    for (const auto &entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("case", 0) != 0)
            continue;
        const size_t us = name.find('_');
        if (us == std::string::npos)
            continue;
        const std::string part = name.substr(us + 1);
        CaseFiles &c = by_id[name.substr(0, us)];
        if (part == "phantom.nii")
            c.phantom = entry.path().string();
        else if (part == "mask.nii")
            c.mask = entry.path().string();
        else if (part == "deformed.nii")
            c.deformed = entry.path().string();
        else if (part == "deformed_mask.nii")
            c.deformed_mask = entry.path().string();
        else if (part == "field.field")
            c.field = entry.path().string();
    }
    std::vector<CaseFiles> out;
    for (auto &[id, c] : by_id) {
        c.id = id;
        out.push_back(c);
    }
    if (out.empty())
        throw DataError("no cases (case*_phantom.nii) found in " + dir);
    return out;
}

void require_files(const std::vector<std::string> &missing, const std::string &dir) {
    if (missing.empty())
        return;
    std::string msg = "missing files in " + dir + ":";
    for (const std::string &m : missing)
        msg += " " + m;
    throw DataError(msg);
}

// Training registers each case's deformed copy (fixed) onto its phantom
// (moving), so the generating field is the target deformation.
std::vector<TrainPair> load_train_pairs(const std::vector<CaseFiles> &cases,
                                        const std::string &dir) {
    std::vector<std::string> missing;
    for (const CaseFiles &c : cases) {
        if (c.phantom.empty())
            missing.push_back(c.id + "_phantom.nii");
        if (c.deformed.empty())
            missing.push_back(c.id + "_deformed.nii");
    }
    require_files(missing, dir);
    std::vector<TrainPair> pairs;
    for (const CaseFiles &c : cases)
        pairs.push_back({load_volume(c.deformed).data, load_volume(c.phantom).data});
    return pairs;
}

std::vector<EvalPair> load_eval_pairs(const std::vector<CaseFiles> &cases,
                                      const std::string &dir) {
    std::vector<std::string> missing;
    for (const CaseFiles &c : cases) {
        if (c.phantom.empty())
            missing.push_back(c.id + "_phantom.nii");
        if (c.deformed.empty())
            missing.push_back(c.id + "_deformed.nii");
        if (c.mask.empty())
            missing.push_back(c.id + "_mask.nii");
        if (c.deformed_mask.empty())
            missing.push_back(c.id + "_deformed_mask.nii");
    }
    require_files(missing, dir);
    std::vector<EvalPair> pairs;
    for (const CaseFiles &c : cases) {
        EvalPair p;
        p.fixed = load_volume(c.deformed);
        p.moving = load_volume(c.phantom);
        p.mask_fixed = load_mask(c.deformed_mask);
        p.mask_moving = load_mask(c.mask);
        if (!c.field.empty())
            p.true_field = load_field(c.field);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

// Deformed copy of a phantom: resample along the field, then optional
// additive Gaussian intensity noise.
Tensor make_deformed(const Tensor &vol, const Tensor &field, double noise_sigma,
                     uint64_t case_seed) {
    Tensor out = grid_sample(vol, field);
    if (noise_sigma > 0.0) {
        Rng rng(Rng::mix(case_seed, kSaltDeformedNoise));
        for (int64_t i = 0; i < out.numel(); ++i)
            out[i] += static_cast<float>(noise_sigma) * rng.normal();
    }
    return out;
}

std::string case_path(const std::string &dir, int64_t index, const std::string &part) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "case%03lld_", static_cast<long long>(index));
    return dir + "/" + buf + part;
}

uint64_t verify_checkpoint_config(const TrainConfig &cfg, const Checkpoint &ckpt) {
    if (cfg.hash() != ckpt.config_hash)
        throw ValidationError("checkpoint was trained under a different train config; pass the "
                              "config.resolved.cfg written next to it");
    return ckpt.config_hash;
}

double parse_double_value(const std::string &key, const std::string &value) {
    size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(value, &pos);
    } catch (const std::exception &) {
        throw ValidationError("config key " + key + ": '" + value + "' is not a number");
    }
    if (pos != value.size())
        throw ValidationError("config key " + key + ": '" + value + "' is not a number");
    return v;
}

std::vector<double> parse_double_list(const std::string &key, const std::string &value) {
    std::vector<double> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(parse_double_value(key, item));
    if (out.empty())
        throw ValidationError("config key " + key + ": empty list");
    return out;
}

std::string format_double_list(const std::vector<double> &v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%s%.17g", i ? "," : "", v[i]);
        out += buf;
    }
    return out;
}

int cmd_train(const GlobalArgs &g, const std::string &data_dir, const std::string &resume_path,
              const TrainFlags &flags, int64_t step_limit) {
    Manifest man;
    man.command = "train";
    const TrainConfig cfg = resolve_train_config(g, flags);
    man.config = parse_config_text(render_train_config(cfg));
    man.seed = cfg.seed;
    if (!g.config_path.empty())
        man.inputs.push_back(g.config_path);
    man.inputs.push_back(data_dir);

    const std::vector<TrainPair> pairs = load_train_pairs(scan_cases(data_dir), data_dir);

    uint64_t start_step = 0;
    TrainResult res;
    if (!resume_path.empty()) {
        man.inputs.push_back(resume_path);
        const Checkpoint resume = load_checkpoint(resume_path);
        verify_checkpoint_config(cfg, resume);
        start_step = resume.step;
        res = train(cfg, pairs, resume, step_limit);
    } else {
        res = train(cfg, pairs, step_limit);
    }

    ensure_out_dir(g.out_dir);
    const std::string ckpt_path = g.out_dir + "/checkpoint.ckpt";
    const std::string hist_path = g.out_dir + "/history.csv";
    const std::string cfg_path = g.out_dir + "/config.resolved.cfg";
    save_checkpoint(res.checkpoint, ckpt_path);
    write_history_csv(hist_path, res.history, start_step);
    write_text(cfg_path, render_train_config(cfg));
    man.outputs = {ckpt_path, hist_path, cfg_path};
    man.write(g.out_dir);

    if (res.diverged) {
        std::fprintf(stderr,
                     "ldreg train: loss became non-finite at step %llu; last good state saved "
                     "to %s\n",
                     static_cast<unsigned long long>(res.diverged_at), ckpt_path.c_str());
        return 3;
    }
    std::printf("trained to step %llu (%zu steps this run), checkpoint at %s\n",
                static_cast<unsigned long long>(res.checkpoint.step), res.history.size(),
                ckpt_path.c_str());
    if (!res.history.empty())
        std::printf("final loss %.6g\n", res.history.back().total);
    return 0;
}

int cmd_register(const GlobalArgs &g, const std::string &ckpt_path,
                 const std::string &fixed_path, const std::string &moving_path) {
    if (g.config_path.empty())
        throw ValidationError("register requires --config (the config.resolved.cfg written at "
                              "training time)");
    Manifest man;
    man.command = "register";
    const TrainConfig cfg = resolve_train_config(g, {});
    man.config = parse_config_text(render_train_config(cfg));
    man.seed = cfg.seed;
    man.inputs = {g.config_path, ckpt_path, fixed_path, moving_path};

    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    verify_checkpoint_config(cfg, ckpt);
    const Volume fixed = load_volume(fixed_path);
    const Volume moving = load_volume(moving_path);

    Graph graph(Graph::Mode::Infer);
    const BoundParams bp = bind_params(graph, ckpt.params);
    const StageOutputs out = forward(graph, cfg.network, bp, fixed.data, moving.data);
    const Tensor phi = graph.val(out.phi0());
    check_is_field(phi);
    Volume warped = fixed;
    warped.data = graph.val(out.warped_full());

    ensure_out_dir(g.out_dir);
    const std::string field_path = g.out_dir + "/field.field";
    const std::string warped_path = g.out_dir + "/warped.nii";
    save_field(field_path, phi);
    save_volume(warped_path, warped);
    man.outputs = {field_path, warped_path};
    man.write(g.out_dir);
    std::printf("wrote %s and %s\n", field_path.c_str(), warped_path.c_str());
    return 0;
}

int cmd_evaluate(const GlobalArgs &g, const std::string &ckpt_path, const std::string &data_dir) {
    if (g.config_path.empty())
        throw ValidationError("evaluate requires --config (the config.resolved.cfg written at "
                              "training time)");
    Manifest man;
    man.command = "evaluate";
    const TrainConfig cfg = resolve_train_config(g, {});
    man.config = parse_config_text(render_train_config(cfg));
    man.seed = cfg.seed;
    man.inputs = {g.config_path, ckpt_path, data_dir};

    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    verify_checkpoint_config(cfg, ckpt);
    const std::vector<CaseFiles> cases = scan_cases(data_dir);
    const std::vector<EvalPair> pairs = load_eval_pairs(cases, data_dir);

    std::vector<MetricsRow> rows;
    double mean = 0.0;
    for (size_t i = 0; i < pairs.size(); ++i) {
        MetricsRow row;
        row.fixed_id = cases[i].id + "_deformed";
        row.moving_id = cases[i].id + "_phantom";
        row.metrics = evaluate_pair(cfg.network, ckpt.params, pairs[i]);
        mean += row.metrics.dice_mean;
        rows.push_back(std::move(row));
    }
    mean /= static_cast<double>(rows.size());

    ensure_out_dir(g.out_dir);
    const std::string csv_path = g.out_dir + "/metrics.csv";
    write_metrics_csv(csv_path, rows);
    man.outputs = {csv_path};
    man.write(g.out_dir);
    std::printf("mean_dice=%.6f over %zu pairs, rows in %s\n", mean, rows.size(),
                csv_path.c_str());
    return 0;
}

int cmd_synth(const GlobalArgs &g, int64_t count) {
    if (count <= 0)
        throw ValidationError("synth --count must be positive");
    Manifest man;
    man.command = "synth";
    const auto kv = load_kv(g);
    SynthConfig scfg;
    std::set<std::string> consumed;
    apply_synth_keys(scfg, kv, consumed);
    reject_leftover(kv, consumed);
    if (g.seed_set)
        scfg.seed = g.seed;
    scfg.validate();
    man.config = parse_config_text(render_synth_config(scfg));
    man.seed = scfg.seed;
    if (!g.config_path.empty())
        man.inputs.push_back(g.config_path);

    ensure_out_dir(g.out_dir);
    for (int64_t i = 0; i < count; ++i) {
        SynthConfig c = scfg;
        c.seed = Rng::mix(scfg.seed, static_cast<uint64_t>(i));
        const auto [phantom, mask] = generate_phantom(c);
        const Tensor field = synth_deformation(c);
        Volume deformed = phantom;
        deformed.data = make_deformed(phantom.data, field, c.noise_sigma, c.seed);
        const LabelMask deformed_mask = warp_mask(mask, field);

        const std::string paths[5] = {
            case_path(g.out_dir, i, "phantom.nii"), case_path(g.out_dir, i, "mask.nii"),
            case_path(g.out_dir, i, "deformed.nii"),
            case_path(g.out_dir, i, "deformed_mask.nii"), case_path(g.out_dir, i, "field.field")};
        save_volume(paths[0], phantom);
        save_mask(paths[1], mask);
        save_volume(paths[2], deformed);
        save_mask(paths[3], deformed_mask);
        save_field(paths[4], field);
        for (const std::string &p : paths)
            man.outputs.push_back(p);
    }
    man.write(g.out_dir);
    std::printf("wrote %lld cases to %s\n", static_cast<long long>(count), g.out_dir.c_str());
    return 0;
}

int cmd_gridsearch(const GlobalArgs &g) {
    Manifest man;
    man.command = "gridsearch";
    const auto kv = load_kv(g);
    TrainConfig base;
    SynthConfig scfg;
    std::set<std::string> consumed;
    apply_train_keys(base, kv, consumed);
    apply_synth_keys(scfg, kv, consumed);

    std::vector<double> alphas = default_alpha_grid();
    std::vector<double> betas = default_beta_grid();
    int64_t train_cases = 4, eval_cases = 2;
    if (const auto it = kv.find("grid.alphas"); it != kv.end()) {
        alphas = parse_double_list("grid.alphas", it->second);
        consumed.insert("grid.alphas");
    }
    if (const auto it = kv.find("grid.betas"); it != kv.end()) {
        betas = parse_double_list("grid.betas", it->second);
        consumed.insert("grid.betas");
    }
    if (const auto it = kv.find("grid.train_cases"); it != kv.end()) {
        train_cases = static_cast<int64_t>(parse_double_value("grid.train_cases", it->second));
        consumed.insert("grid.train_cases");
    }
    if (const auto it = kv.find("grid.eval_cases"); it != kv.end()) {
        eval_cases = static_cast<int64_t>(parse_double_value("grid.eval_cases", it->second));
        consumed.insert("grid.eval_cases");
    }
    reject_leftover(kv, consumed);
    if (train_cases <= 0 || eval_cases <= 0)
        throw ValidationError("grid.train_cases and grid.eval_cases must be positive");
    if (g.seed_set) {
        base.seed = g.seed;
        scfg.seed = g.seed;
    }
    base.validate();
    scfg.validate();

    std::string grid_cfg;
    grid_cfg += "grid.alphas=" + format_double_list(alphas) + "\n";
    grid_cfg += "grid.betas=" + format_double_list(betas) + "\n";
    grid_cfg += "grid.train_cases=" + std::to_string(train_cases) + "\n";
    grid_cfg += "grid.eval_cases=" + std::to_string(eval_cases) + "\n";
    man.config =
        parse_config_text(render_train_config(base) + render_synth_config(scfg) + grid_cfg);
    man.seed = base.seed;
    if (!g.config_path.empty())
        man.inputs.push_back(g.config_path);

    // The sweep generates its own data: train cases first, eval cases after.
    std::vector<TrainPair> train_pairs;
    std::vector<EvalPair> eval_pairs;
    for (int64_t i = 0; i < train_cases + eval_cases; ++i) {
        SynthConfig c = scfg;
        c.seed = Rng::mix(scfg.seed, static_cast<uint64_t>(i));
        auto [phantom, mask] = generate_phantom(c);
        const Tensor field = synth_deformation(c);
        Tensor deformed = make_deformed(phantom.data, field, c.noise_sigma, c.seed);
        if (i < train_cases) {
            train_pairs.push_back({std::move(deformed), phantom.data});
        } else {
            EvalPair p;
            p.fixed = phantom;
            p.fixed.data = std::move(deformed);
            p.moving = phantom;
            p.mask_fixed = warp_mask(mask, field);
            p.mask_moving = mask;
            p.true_field = field;
            eval_pairs.push_back(std::move(p));
        }
    }

    const std::vector<GridCell> cells =
        grid_search(alphas, betas, base, train_pairs, eval_pairs);
    ensure_out_dir(g.out_dir);
    const std::string csv_path = g.out_dir + "/grid.csv";
    write_grid_csv(csv_path, cells);
    man.outputs = {csv_path};
    man.write(g.out_dir);

    const GridCell *best = nullptr;
    for (const GridCell &c : cells)
        if (std::isfinite(c.dice_mean) && (!best || c.dice_mean > best->dice_mean))
            best = &c;
    if (!best) {
        std::fprintf(stderr, "ldreg gridsearch: every cell diverged; surface in %s\n",
                     csv_path.c_str());
        return 3;
    }
    std::printf("best cell alpha=%g beta=%g mean_dice=%.6f, surface in %s\n", best->alpha,
                best->beta, best->dice_mean, csv_path.c_str());
    return 0;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"registration toolkit: synthetic data, training, inference, evaluation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolkitVersion);

    GlobalArgs g;
    app.add_option("--config", g.config_path, "key=value config file with dotted sections");
    CLI::Option *seed_opt = app.add_option("--seed", g.seed, "override the config seed");
    app.add_option("--out", g.out_dir, "output directory")->capture_default_str();
    app.add_option("--device", g.device, "compute device (only 'cpu' is available)")
        ->capture_default_str();

    CLI::App *train = app.add_subcommand("train", "train a model on a synthetic case directory");
    train->fallthrough();
    std::string train_data, resume_path;
    int64_t step_limit = -1;
    TrainFlags flags;
    train->add_option("--data", train_data, "case directory produced by `ldreg synth`")
        ->required();
    train->add_option("--resume", resume_path, "checkpoint to continue from");
    train
        ->add_option("--step-limit", step_limit,
                     "stop after this many steps this run (-1 runs the whole schedule)")
        ->capture_default_str();
    train->add_flag("--no-refine-core", flags.no_refine_core,
                    "ablation: refine blocks see only the feature tensor");
    train->add_flag("--no-rigid", flags.no_rigid, "ablation: skip the rigid head");
    train->add_flag("--no-range-loss", flags.no_range_loss,
                    "ablation: drop the displacement-range penalty (alpha = 0)");
    train->add_flag("--no-smooth-loss", flags.no_smooth_loss,
                    "ablation: drop the smoothness penalty (beta = 0)");

    CLI::App *reg = app.add_subcommand("register", "apply a trained model to one volume pair");
    reg->fallthrough();
    std::string reg_ckpt, fixed_path, moving_path;
    reg->add_option("--checkpoint", reg_ckpt, "trained checkpoint file")->required();
    reg->add_option("--fixed", fixed_path, "fixed (reference) volume")->required();
    reg->add_option("--moving", moving_path, "moving volume to be warped")->required();

    CLI::App *eval = app.add_subcommand("evaluate", "score a model on a labeled case directory");
    eval->fallthrough();
    std::string eval_ckpt, eval_data;
    eval->add_option("--checkpoint", eval_ckpt, "trained checkpoint file")->required();
    eval->add_option("--data", eval_data, "case directory produced by `ldreg synth`")->required();

    CLI::App *synth =
        app.add_subcommand("synth", "generate phantom cases with ground-truth deformations");
    synth->fallthrough();
    int64_t count = 1;
    synth->add_option("--count", count, "number of cases to generate")->capture_default_str();

    CLI::App *gridsearch = app.add_subcommand(
        "gridsearch", "regularization-weight sweep on self-generated synthetic data");
    gridsearch->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }
    g.seed_set = seed_opt->count() > 0;

    try {
        if (g.device != "cpu")
            throw ValidationError("unknown device '" + g.device + "'; only 'cpu' is available");
        if (train->parsed())
            return cmd_train(g, train_data, resume_path, flags, step_limit);
        if (reg->parsed())
            return cmd_register(g, reg_ckpt, fixed_path, moving_path);
        if (eval->parsed())
            return cmd_evaluate(g, eval_ckpt, eval_data);
        if (synth->parsed())
            return cmd_synth(g, count);
        if (gridsearch->parsed())
            return cmd_gridsearch(g);
        std::fprintf(stderr, "ldreg: no command given\n");
        return 1;
    } catch (const DivergenceError &e) {
        std::fprintf(stderr, "ldreg: %s\n", e.what());
        return 3;
    } catch (const ValidationError &e) {
        std::fprintf(stderr, "ldreg: %s\n", e.what());
        return 1;
    } catch (const FormatError &e) {
        std::fprintf(stderr, "ldreg: %s\n", e.what());
        return 2;
    } catch (const DataError &e) {
        std::fprintf(stderr, "ldreg: %s\n", e.what());
        return 2;
    } catch (const fs::filesystem_error &e) {
        std::fprintf(stderr, "ldreg: %s\n", e.what());
        return 2;
    } catch (const std::exception &e) {
        std::fprintf(stderr, "ldreg: %s\n", e.what());
        return 1;
    }
}
