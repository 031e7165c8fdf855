// Command-line front end: featurize, synth, split, train, eval, ablate,
// gradcheck. Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
// failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "davihd/audio.hpp"
#include "davihd/config.hpp"
#include "davihd/dataio.hpp"
#include "davihd/model.hpp"
#include "davihd/optim.hpp"
#include "davihd/synth.hpp"
#include "davihd/train.hpp"

namespace {

constexpr const char* kVersion = "davihd 0.1.0";

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

namespace fs = std::filesystem;
using namespace davihd;

struct CommonConfigFlags {
    std::string preset = "toy";
    std::string config_file;
    std::vector<std::string> sets;  // extra key=value overrides
};

void add_config_flags(CLI::App* cmd, CommonConfigFlags& flags) {
    cmd->add_option("--preset", flags.preset, "preset: toy|mrhisum|tvsum")->capture_default_str();
    cmd->add_option("--config", flags.config_file, "key = value configuration file");
    cmd->add_option("--set", flags.sets, "override a single key, e.g. --set epochs=10");
}

ConfigMap resolve_config(const CommonConfigFlags& flags) {
    ConfigMap map = preset_config(flags.preset);
    if (!flags.config_file.empty()) apply_config_file(map, flags.config_file);
    for (const std::string& kv : flags.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw DataError("--set expects key=value, got '" + kv + "'");
        config_set(map, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return map;
}

void echo_config(const ConfigMap& map, const std::string& run_dir) {
    fs::create_directories(run_dir);
    std::ofstream f(fs::path(run_dir) / "config.resolved");
    if (!f) throw DataError("cannot write resolved config under " + run_dir);
    f << "# " << kVersion << "\n# config_hash " << config_hash_hex(map) << "\n"
      << serialize_config(map);
}

// --------------------------------------------------------------------------

int cmd_featurize(const std::string& wav_dir, const std::string& out_dir, std::size_t n_fft,
                  std::size_t hop, std::size_t mels, double f_min, double f_max) {
    if (!fs::is_directory(wav_dir)) throw DataError("featurize: not a directory: " + wav_dir);
    std::vector<fs::path> inputs;
    for (const auto& entry : fs::directory_iterator(wav_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".wav")
            inputs.push_back(entry.path());
    std::sort(inputs.begin(), inputs.end());
    if (inputs.empty()) {
        std::fprintf(stderr, "featurize: warning: no inputs under %s\n", wav_dir.c_str());
        return kExitOk;
    }
    fs::create_directories(out_dir);
    SpectrogramParams p{n_fft, hop, mels, f_min, f_max};
    std::vector<std::string> failures;
    for (const fs::path& in : inputs) {
        try {
            Waveform w = load_wav(in.string());
            LogMelSpectrogram s = make_log_mel(w, p);
            const fs::path out = fs::path(out_dir) / (in.stem().string() + ".dft");
            write_dft(out.string(), s.values);
            std::printf("%s -> %s [%zux%zu]\n", in.filename().string().c_str(),
                        out.filename().string().c_str(), s.values.dim(0), s.values.dim(1));
        } catch (const std::exception& e) {
            failures.push_back(in.filename().string() + ": " + e.what());
        }
    }
    if (!failures.empty()) {
        std::fprintf(stderr, "featurize: %zu file(s) failed:\n", failures.size());
        for (const std::string& f : failures) std::fprintf(stderr, "  %s\n", f.c_str());
        return kExitData;
    }
    return kExitOk;
}

int cmd_synth(const CommonConfigFlags& flags, const std::string& out_dir) {
    ConfigMap map = resolve_config(flags);
    SynthSpec spec = synth_spec_from(map);
    Manifest m = synth_dataset(spec, out_dir);
    echo_config(map, out_dir);
    std::printf("synth: %zu videos under %s (manifest.jsonl)\n", m.records.size(), out_dir.c_str());
    return kExitOk;
}

int cmd_split(const std::string& manifest_path, std::size_t k, std::uint64_t seed,
              std::string out_path) {
    Manifest m = load_manifest(manifest_path);
    assign_kfold(m, k, seed);
    if (out_path.empty()) out_path = manifest_path;
    save_manifest(out_path, m);
    std::vector<std::size_t> sizes(k, 0);
    for (const auto& r : m.records) ++sizes[std::stoul(r.split.substr(4))];
    std::printf("split: %zu videos into %zu folds (", m.records.size(), k);
    for (std::size_t i = 0; i < k; ++i) std::printf(i ? ",%zu" : "%zu", sizes[i]);
    std::printf(") -> %s\n", out_path.c_str());
    return kExitOk;
}

int cmd_train(const CommonConfigFlags& flags, const std::string& manifest_flag,
              const std::string& run_dir, std::uint64_t seed_flag, bool seed_set, bool verbose) {
    ConfigMap map = resolve_config(flags);
    if (!manifest_flag.empty()) config_set(map, "manifest", manifest_flag);
    if (seed_set) config_set(map, "seed", std::to_string(seed_flag));
    TrainConfig cfg = train_config_from(map);
    if (cfg.manifest_path.empty()) throw DataError("train: no manifest given (flag or config)");
    cfg.verbose = verbose;
    echo_config(map, run_dir);
    TrainResult res = train(cfg, run_dir);
    const EpochLog& last = res.log.epochs.back();
    std::printf("train: %zu epochs, final_loss %.8f, best_epoch %zu, best_map50 %s\n",
                res.log.epochs.size(), last.train_loss, res.log.best_epoch,
                res.log.best_map50 >= 0 ? std::to_string(res.log.best_map50).c_str() : "n/a");
    std::printf("checkpoint: %s\nrunlog: %s\n", res.checkpoint_path.c_str(), res.runlog_path.c_str());
    return kExitOk;
}

std::string cell(const std::optional<double>& v) {
    char c[16];
    if (v)
        std::snprintf(c, sizeof(c), "%.4f", *v);
    else
        std::snprintf(c, sizeof(c), "n/a");
    return c;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest_path,
             const std::string& split, std::string out_path) {
    Model model = load_checkpoint(checkpoint);
    Manifest manifest = load_manifest(manifest_path);
    EvalReport report = evaluate(model, manifest, split);
    if (report.rows.empty()) throw DataError("eval: split '" + split + "' selects no videos");

    std::printf("id               F1      mAP50   mAP15   rho     tau\n");
    for (const MetricRow& r : report.rows)
        std::printf("%-16s %.4f  %-7s %-7s %-7s %-7s\n", r.id.c_str(), r.f1, cell(r.map50).c_str(),
                    cell(r.map15).c_str(), cell(r.rho).c_str(), cell(r.tau).c_str());
    const MetricAggregate& a = report.aggregate;
    std::printf("%-16s %.4f  %-7s %-7s %-7s %-7s\n", "aggregate", a.f1, cell(a.map50).c_str(),
                cell(a.map15).c_str(), cell(a.rho).c_str(), cell(a.tau).c_str());

    if (out_path.empty())
        out_path = (fs::path(checkpoint).parent_path() / "eval_metrics.jsonl").string();
    std::ofstream f(out_path, std::ios::trunc);
    if (!f) throw DataError("eval: cannot write " + out_path);
    for (const MetricRow& r : report.rows) f << metric_row_json(r).dump() << "\n";
    nlohmann::json agg;
    agg["aggregate"] = true;
    agg["split"] = split;
    agg["metrics"] = metric_aggregate_json(a);
    f << agg.dump() << "\n";
    std::printf("report: %s\n", out_path.c_str());
    return kExitOk;
}

int cmd_ablate(const CommonConfigFlags& flags, const std::string& axis,
               const std::string& manifest_flag, const std::string& run_dir) {
    if (axis != "modality" && axis != "fusion") throw DataError("ablate: axis must be modality|fusion");
    ConfigMap map = resolve_config(flags);
    if (!manifest_flag.empty()) config_set(map, "manifest", manifest_flag);
    TrainConfig cfg = train_config_from(map);
    if (cfg.manifest_path.empty()) throw DataError("ablate: no manifest given (flag or config)");
    echo_config(map, run_dir);
    AblationTable table = ablation_sweep(
        cfg, axis == "modality" ? AblationAxis::modality : AblationAxis::fusion, run_dir);
    const std::string text = table.to_text();
    std::fputs(text.c_str(), stdout);
    std::ofstream tf(fs::path(run_dir) / "table.txt");
    tf << text;
    std::ofstream jf(fs::path(run_dir) / "rows.jsonl");
    jf << table.to_jsonl();
    return kExitOk;
}

ModelConfig gradcheck_default_config() {
    ModelConfig c;
    c.d_v = 16;
    c.d_s = c.d_d = c.d_a = 16;
    c.k_basis = 2;
    c.heads = 4;
    c.conv_hidden = 4;
    c.attn_channels = 4;
    c.basis_channels = 4;
    c.gamma_hidden = 4;
    c.n_mels = 16;
    c.n_fft = 512;
    c.hop = 512;
    return c;
}

int cmd_gradcheck(const CommonConfigFlags& flags, bool use_config, double eps, double tol,
                  bool corrupt_backward) {
    ModelConfig mc = use_config ? model_config_from(resolve_config(flags)) : gradcheck_default_config();
    const std::size_t t_f = 4, frames = 40;
    Model model(mc, 12345);
    model.set_requires_grad(true);
    Rng rng(999);
    ModelInputs in;
    in.t_f = t_f;
    if (mc.use_v) in.visual = Tensor::normal(rng, {t_f, mc.d_v});
    if (mc.use_as) in.semantic = Tensor::normal(rng, {t_f, mc.d_s});
    if (mc.use_ad) in.spec = Tensor::normal(rng, {mc.n_mels, frames});

    // Probe targets sit close to the untrained predictions. This keeps the
    // loss small, which keeps the finite-difference roundoff floor well
    // below the relative-error floor of 1e-8 without touching the
    // derivative code being verified.
    Tensor p0 = model.forward(in, false);
    Tensor target({t_f});
    for (std::size_t i = 0; i < t_f; ++i)
        target.values()[i] = std::clamp(p0.values()[i] + rng.uniform(-0.01, 0.01), 0.02, 0.98);

    // eval-mode forward: running statistics stay frozen during perturbation
    auto loss_fn = [&]() { return mse_loss(model.forward(in, false), target); };

    std::vector<std::pair<std::string, Tensor>> groups = model.named_parameters();
    if (mc.use_ad) groups.emplace_back("input.S", in.spec);

    GradCheckReport report = grad_check_many(loss_fn, groups, eps);
    if (corrupt_backward && !report.groups.empty()) {
        // test hook: simulate a broken backward implementation
        report.groups.front().max_rel_err += 1.0;
        report.max_rel_err += 1.0;
    }
    bool ok = true;
    for (const GradCheckGroup& g : report.groups) {
        const bool pass = g.max_rel_err < tol;
        ok = ok && pass;
        std::printf("%-28s %10.3e  [%s] (%zu elements)\n", g.name.c_str(), g.max_rel_err,
                    pass ? "PASS" : "FAIL", g.elements);
    }
    std::printf("gradcheck: max_rel_err %.3e, tol %.1e -> %s\n", report.max_rel_err, tol,
                ok ? "PASS" : "FAIL");
    return ok ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{std::string(kVersion) + " - dual-pathway audio-visual highlight detection toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    // featurize
    auto* feat = app.add_subcommand("featurize", "convert 16 kHz PCM WAVs to log-mel DFT1 files");
    std::string wav_dir, feat_out;
    std::size_t n_fft = 2048, hop = 256, mels = 128;
    double f_min = 0.0, f_max = 8000.0;
    feat->add_option("--wav-dir", wav_dir, "directory of .wav inputs")->required();
    feat->add_option("--out-dir", feat_out, "output directory")->required();
    feat->add_option("--n-fft", n_fft)->capture_default_str();
    feat->add_option("--hop", hop)->capture_default_str();
    feat->add_option("--mels", mels)->capture_default_str();
    feat->add_option("--f-min", f_min)->capture_default_str();
    feat->add_option("--f-max", f_max)->capture_default_str();

    // synth
    auto* synth = app.add_subcommand("synth", "generate the synthetic benchmark dataset");
    CommonConfigFlags synth_flags;
    std::string synth_out;
    add_config_flags(synth, synth_flags);
    synth->add_option("--out-dir", synth_out, "dataset directory")->required();

    // split
    auto* split = app.add_subcommand("split", "assign k-fold split labels to a manifest");
    std::string split_manifest, split_out;
    std::size_t split_k = 5;
    std::uint64_t split_seed = 1;
    split->add_option("--manifest", split_manifest)->required();
    split->add_option("--k", split_k)->capture_default_str();
    split->add_option("--seed", split_seed)->capture_default_str();
    split->add_option("--out", split_out, "output manifest (default: in place)");

    // train
    auto* tr = app.add_subcommand("train", "train a model");
    CommonConfigFlags train_flags;
    std::string train_manifest, train_run_dir = "run";
    std::uint64_t train_seed = 0;
    bool train_verbose = false;
    add_config_flags(tr, train_flags);
    tr->add_option("--manifest", train_manifest, "dataset manifest (overrides config)");
    tr->add_option("--run-dir", train_run_dir)->capture_default_str();
    auto* seed_opt = tr->add_option("--seed", train_seed, "RNG seed (overrides config)");
    tr->add_flag("--verbose", train_verbose, "per-epoch progress on stderr");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on one split");
    std::string eval_ckpt, eval_manifest, eval_split = "val", eval_out;
    ev->add_option("--checkpoint", eval_ckpt)->required();
    ev->add_option("--manifest", eval_manifest)->required();
    ev->add_option("--split", eval_split)->capture_default_str();
    ev->add_option("--out", eval_out, "metrics JSONL path");

    // ablate
    auto* ab = app.add_subcommand("ablate", "run a modality or fusion ablation sweep");
    CommonConfigFlags ablate_flags;
    std::string ablate_axis, ablate_manifest, ablate_run_dir = "ablation";
    add_config_flags(ab, ablate_flags);
    ab->add_option("--axis", ablate_axis, "modality|fusion")->required();
    ab->add_option("--manifest", ablate_manifest);
    ab->add_option("--run-dir", ablate_run_dir)->capture_default_str();

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "verify reverse-mode gradients per parameter group");
    CommonConfigFlags gc_flags;
    double gc_eps = 1e-5, gc_tol = 1e-5;
    bool gc_corrupt = false;
    add_config_flags(gc, gc_flags);
    gc->add_option("--eps", gc_eps, "finite-difference step")->capture_default_str();
    gc->add_option("--tol", gc_tol, "max relative error")->capture_default_str();
    gc->add_flag("--corrupt-backward", gc_corrupt)->group("");  // test hook, hidden

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (feat->parsed()) return cmd_featurize(wav_dir, feat_out, n_fft, hop, mels, f_min, f_max);
        if (synth->parsed()) return cmd_synth(synth_flags, synth_out);
        if (split->parsed()) return cmd_split(split_manifest, split_k, split_seed, split_out);
        if (tr->parsed())
            return cmd_train(train_flags, train_manifest, train_run_dir, train_seed,
                             seed_opt->count() > 0, train_verbose);
        if (ev->parsed()) return cmd_eval(eval_ckpt, eval_manifest, eval_split, eval_out);
        if (ab->parsed()) return cmd_ablate(ablate_flags, ablate_axis, ablate_manifest, ablate_run_dir);
        if (gc->parsed())
            return cmd_gradcheck(gc_flags, !gc_flags.config_file.empty(), gc_eps, gc_tol, gc_corrupt);
    } catch (const DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return kExitNumeric;
    } catch (const ShapeError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kExitUsage;
    }
    return kExitUsage;
}
