#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "davihd/audio.hpp"
#include "davihd/dataio.hpp"
#include "davihd/metrics.hpp"
#include "davihd/model.hpp"
#include "davihd/optim.hpp"

namespace davihd {

inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

struct TrainConfig {
    std::size_t epochs = 50;
    double lr = 1e-3;
    std::size_t batch_size = 8;
    double weight_decay = 1e-4;
    double clip_norm = 0.5;
    std::uint64_t seed = 1;
    std::string manifest_path;
    std::string val_split = "val";
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    ModelConfig model;

    // Injectable clock so deterministic runs can produce byte-identical
    // logs; defaults to wall time.
    std::function<double()> clock;
    bool verbose = false;

    void validate() const {
        if (epochs < 1) throw ShapeError("train: epochs must be >= 1");
        if (batch_size < 1) throw ShapeError("train: batch_size must be >= 1");
        if (!(clip_norm > 0.0)) throw ShapeError("train: clip_norm must be > 0");
        if (lr < 0.0) throw ShapeError("train: lr must be >= 0");
        model.validate();
    }

    // Canonical hash over everything that influences the run result.
    std::string hash_hex() const {
        nlohmann::json j;
        j["epochs"] = epochs;
        j["lr"] = lr;
        j["batch_size"] = batch_size;
        j["weight_decay"] = weight_decay;
        j["clip_norm"] = clip_norm;
        j["seed"] = seed;
        j["manifest"] = manifest_path;
        j["val_split"] = val_split;
        j["adam_beta1"] = adam_beta1;
        j["adam_beta2"] = adam_beta2;
        j["adam_eps"] = adam_eps;
        j["model"] = model.to_json();
        return hex64(fnv1a64(j.dump()));
    }
};

// ---------------------------------------------------------------------------
// in-memory dataset
// ---------------------------------------------------------------------------

struct LoadedVideo {
    std::string id;
    std::size_t t_f = 0;
    std::string split;
    bool degenerate = false;
    ModelInputs inputs;
    std::vector<double> gt;
};

struct Dataset {
    std::vector<LoadedVideo> videos;

    std::vector<std::size_t> indices_for(const std::string& split) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < videos.size(); ++i)
            if (videos[i].split == split) out.push_back(i);
        return out;
    }
    std::vector<std::size_t> indices_not_for(const std::string& split) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < videos.size(); ++i)
            if (videos[i].split != split) out.push_back(i);
        return out;
    }
};

// Loads every record, featurizing waveforms to log-mel with the model's
// front-end parameters. Only the modalities the config consumes are read.
inline Dataset load_dataset(const Manifest& manifest, const ModelConfig& cfg) {
    Dataset ds;
    ds.videos.reserve(manifest.records.size());
    SpectrogramParams sp{cfg.n_fft, cfg.hop, cfg.n_mels, cfg.f_min, cfg.f_max};
    for (const ManifestRecord& rec : manifest.records) {
        LoadedVideo v;
        v.id = rec.id;
        v.t_f = rec.t_f;
        v.split = rec.split;
        v.degenerate = rec.degenerate;
        v.inputs.t_f = rec.t_f;
        if (cfg.use_v) {
            DftTensor t = read_dft(manifest.resolve(rec.visual));
            if (t.shape.size() != 2 || t.shape[0] != rec.t_f || t.shape[1] != cfg.d_v)
                throw DataError("load_dataset: " + rec.id + ": visual shape " + shape_str(t.shape) +
                                " does not match config d_v " + std::to_string(cfg.d_v));
            v.inputs.visual = t.to_tensor();
        }
        if (cfg.use_as)
            v.inputs.semantic = semantic_ingest(manifest.resolve(rec.semantic), rec.t_f, cfg.d_s);
        if (cfg.use_ad) {
            Waveform w = load_wav(manifest.resolve(rec.waveform));
            LogMelSpectrogram s = make_log_mel(w, sp);
            if (s.values.dim(1) < rec.t_f)
                throw DataError("load_dataset: " + rec.id + ": spectrogram too short for t_f");
            v.inputs.spec = s.values;
        }
        DftTensor gt = read_dft(manifest.resolve(rec.gt));
        if (gt.shape.size() != 1 || gt.shape[0] != rec.t_f)
            throw DataError("load_dataset: " + rec.id + ": bad gt shape");
        v.gt = gt.data;
        ds.videos.push_back(std::move(v));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct EvalReport {
    std::vector<MetricRow> rows;
    MetricAggregate aggregate;
};

inline EvalReport evaluate_videos(Model& model, const Dataset& ds,
                                  const std::vector<std::size_t>& idx) {
    EvalReport report;
    report.rows.reserve(idx.size());
    for (std::size_t i : idx) {
        const LoadedVideo& v = ds.videos[i];
        Tensor scores = model.forward(v.inputs, false);
        report.rows.push_back(score_video(v.id, scores.values(), v.gt));
    }
    report.aggregate = aggregate_metrics(report.rows);
    return report;
}

// Eval-mode scoring of one split of a manifest against a checkpointed model.
inline EvalReport evaluate(Model& model, const Manifest& manifest, const std::string& split) {
    Dataset ds = load_dataset(manifest, model.config());
    return evaluate_videos(model, ds, ds.indices_for(split));
}

inline nlohmann::json metric_row_json(const MetricRow& r) {
    nlohmann::json j;
    j["id"] = r.id;
    j["f1"] = r.f1;
    j["map50"] = r.map50 ? nlohmann::json(*r.map50) : nlohmann::json(nullptr);
    j["map15"] = r.map15 ? nlohmann::json(*r.map15) : nlohmann::json(nullptr);
    j["rho"] = r.rho ? nlohmann::json(*r.rho) : nlohmann::json(nullptr);
    j["tau"] = r.tau ? nlohmann::json(*r.tau) : nlohmann::json(nullptr);
    return j;
}

inline nlohmann::json metric_aggregate_json(const MetricAggregate& a) {
    nlohmann::json j;
    j["n"] = a.n_videos;
    j["f1"] = a.f1;
    j["map50"] = a.map50 ? nlohmann::json(*a.map50) : nlohmann::json(nullptr);
    j["map15"] = a.map15 ? nlohmann::json(*a.map15) : nlohmann::json(nullptr);
    j["rho"] = a.rho ? nlohmann::json(*a.rho) : nlohmann::json(nullptr);
    j["tau"] = a.tau ? nlohmann::json(*a.tau) : nlohmann::json(nullptr);
    return j;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    MetricAggregate val;
    double wall_s = 0.0;
};

struct RunLog {
    std::uint64_t seed = 0;
    std::string config_hash;
    std::vector<EpochLog> epochs;
    std::size_t best_epoch = 0;
    double best_map50 = -1.0;

    std::string to_jsonl() const {
        std::string out;
        for (const EpochLog& e : epochs) {
            nlohmann::json j;
            j["epoch"] = e.epoch;
            j["train_loss"] = e.train_loss;
            j["val"] = metric_aggregate_json(e.val);
            j["wall_s"] = e.wall_s;
            out += j.dump() + "\n";
        }
        nlohmann::json s;
        s["summary"] = true;
        s["epochs"] = epochs.size();
        s["best_epoch"] = best_epoch;
        s["best_map50"] = best_map50 >= 0.0 ? nlohmann::json(best_map50) : nlohmann::json(nullptr);
        s["config_hash"] = config_hash;
        s["seed"] = seed;
        out += s.dump() + "\n";
        return out;
    }
};

struct TrainResult {
    RunLog log;
    std::string checkpoint_path;
    std::string runlog_path;
};

namespace train_detail {

// Padding-free batching: equal-T_f videos share a batch. Buckets fill in
// shuffled order and flush when full; leftovers flush by ascending T_f.
inline std::vector<std::vector<std::size_t>> make_batches(const Dataset& ds,
                                                          std::vector<std::size_t> order,
                                                          std::size_t batch_size) {
    std::vector<std::vector<std::size_t>> batches;
    std::map<std::size_t, std::vector<std::size_t>> buckets;
    for (std::size_t i : order) {
        auto& bucket = buckets[ds.videos[i].t_f];
        bucket.push_back(i);
        if (bucket.size() == batch_size) {
            batches.push_back(std::move(bucket));
            bucket.clear();
        }
    }
    for (auto& [t_f, bucket] : buckets)
        if (!bucket.empty()) batches.push_back(std::move(bucket));
    return batches;
}

}  // namespace train_detail

// Deterministic mini-batch training. Best checkpoint by validation mAP@50 is
// written under run_dir together with the run log.
inline TrainResult train(const TrainConfig& cfg, const std::string& run_dir) {
    cfg.validate();
    std::filesystem::create_directories(run_dir);
    Manifest manifest = load_manifest(cfg.manifest_path);
    Dataset ds = load_dataset(manifest, cfg.model);
    const auto train_idx = ds.indices_not_for(cfg.val_split);
    const auto val_idx = ds.indices_for(cfg.val_split);
    if (train_idx.empty()) throw DataError("train: no training videos outside split '" + cfg.val_split + "'");

    auto clock = cfg.clock;
    if (!clock) {
        const auto t0 = std::chrono::steady_clock::now();
        clock = [t0] {
            return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        };
    }

    Model model(cfg.model, cfg.seed);
    model.set_requires_grad(true);
    Adam opt(model.parameters(), cfg.lr, cfg.weight_decay, cfg.adam_beta1, cfg.adam_beta2,
             cfg.adam_eps);

    TrainResult result;
    result.log.seed = cfg.seed;
    result.log.config_hash = cfg.hash_hex();
    result.checkpoint_path = (std::filesystem::path(run_dir) / "checkpoint.dvhd").string();
    result.runlog_path = (std::filesystem::path(run_dir) / "runlog.jsonl").string();

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<std::size_t> order = train_idx;
        Rng epoch_rng = Rng::derived(cfg.seed, 0xe70c000ull + epoch);
        epoch_rng.shuffle(order);
        const auto batches = train_detail::make_batches(ds, std::move(order), cfg.batch_size);

        double loss_sum = 0.0;
        std::size_t loss_n = 0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const auto& batch = batches[b];
            opt.zero_grad();
            double batch_loss;
            try {
                Tape tape;
                Tensor total;
                {
                    TapeScope scope(tape);
                    for (std::size_t i : batch) {
                        const LoadedVideo& v = ds.videos[i];
                        Tensor loss = mse_loss(model.forward(v.inputs, true), Tensor({v.t_f}, v.gt));
                        total = total.defined() ? add(total, loss) : loss;
                    }
                    total = scale(total, 1.0 / static_cast<double>(batch.size()));
                    tape.backward(total);
                }
                batch_loss = total.item();
            } catch (const NumericError& e) {
                throw NumericError("train: epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(b) + ": " + e.what());
            }
            auto params = opt.params();
            clip_global_norm(params, cfg.clip_norm);
            opt.step();
            loss_sum += batch_loss * static_cast<double>(batch.size());
            loss_n += batch.size();
        }

        EpochLog el;
        el.epoch = epoch;
        el.train_loss = loss_sum / static_cast<double>(loss_n);
        if (!val_idx.empty()) el.val = evaluate_videos(model, ds, val_idx).aggregate;
        el.wall_s = clock();
        if (el.val.map50 && *el.val.map50 > result.log.best_map50) {
            result.log.best_map50 = *el.val.map50;
            result.log.best_epoch = epoch;
            save_checkpoint(result.checkpoint_path, model);
        }
        if (cfg.verbose)
            std::fprintf(stderr, "epoch %zu loss %.6f map50 %s\n", epoch, el.train_loss,
                         el.val.map50 ? std::to_string(*el.val.map50).c_str() : "n/a");
        result.log.epochs.push_back(std::move(el));
    }

    // no validation mAP ever defined: persist the final state
    if (result.log.best_map50 < 0.0) {
        result.log.best_epoch = cfg.epochs;
        save_checkpoint(result.checkpoint_path, model);
    }

    std::ofstream logf(result.runlog_path, std::ios::trunc);
    if (!logf) throw DataError("train: cannot write " + result.runlog_path);
    logf << result.log.to_jsonl();
    logf.close();
    return result;
}

// ---------------------------------------------------------------------------
// k-fold splits
// ---------------------------------------------------------------------------

// Seeded partition into k near-equal folds; returns fold index per record.
inline std::vector<std::size_t> kfold_splits(std::size_t n, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw ShapeError("kfold: k must be >= 2");
    if (k > n) throw ShapeError("kfold: k exceeds the video count");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng = Rng::derived(seed, 0xf01d);
    rng.shuffle(order);
    std::vector<std::size_t> fold(n);
    std::size_t pos = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t size = n / k + (f < n % k ? 1 : 0);
        for (std::size_t j = 0; j < size; ++j) fold[order[pos++]] = f;
    }
    return fold;
}

inline void assign_kfold(Manifest& manifest, std::size_t k, std::uint64_t seed) {
    const auto folds = kfold_splits(manifest.records.size(), k, seed);
    for (std::size_t i = 0; i < manifest.records.size(); ++i)
        manifest.records[i].split = "fold" + std::to_string(folds[i]);
}

// ---------------------------------------------------------------------------
// ablation sweeps
// ---------------------------------------------------------------------------

enum class AblationAxis { modality, fusion };

struct AblationRow {
    std::string variant;
    std::string config_hash;
    MetricAggregate metrics;
};

struct AblationTable {
    std::vector<AblationRow> rows;

    std::string to_text() const {
        char buf[256];
        std::string out = "variant          F1      mAP50   mAP15   rho     tau     config\n";
        for (const AblationRow& r : rows) {
            auto cell = [](const std::optional<double>& v) {
                char c[16];
                if (v)
                    std::snprintf(c, sizeof(c), "%.4f", *v);
                else
                    std::snprintf(c, sizeof(c), "n/a");
                return std::string(c);
            };
            std::snprintf(buf, sizeof(buf), "%-16s %.4f  %-7s %-7s %-7s %-7s %s\n",
                          r.variant.c_str(), r.metrics.f1, cell(r.metrics.map50).c_str(),
                          cell(r.metrics.map15).c_str(), cell(r.metrics.rho).c_str(),
                          cell(r.metrics.tau).c_str(), r.config_hash.c_str());
            out += buf;
        }
        return out;
    }

    std::string to_jsonl() const {
        std::string out;
        for (const AblationRow& r : rows) {
            nlohmann::json j;
            j["variant"] = r.variant;
            j["config_hash"] = r.config_hash;
            j["metrics"] = metric_aggregate_json(r.metrics);
            out += j.dump() + "\n";
        }
        return out;
    }
};

struct AblationVariant {
    std::string name;
    ModelConfig model;
};

inline std::vector<AblationVariant> ablation_variants(const ModelConfig& base, AblationAxis axis) {
    std::vector<AblationVariant> out;
    if (axis == AblationAxis::modality) {
        const struct {
            const char* name;
            bool v, as, ad;
        } rows[] = {{"V", true, false, false},      {"As", false, true, false},
                    {"Ad", false, false, true},     {"V+As", true, true, false},
                    {"V+Ad", true, false, true},    {"As+Ad", false, true, true},
                    {"V+As+Ad", true, true, true}};
        for (const auto& r : rows) {
            ModelConfig m = base;
            m.use_v = r.v;
            m.use_as = r.as;
            m.use_ad = r.ad;
            out.push_back({r.name, m});
        }
    } else {
        const struct {
            const char* name;
            SaPlacement sp;
            FusionOp op;
        } rows[] = {{"late-concat", SaPlacement::late, FusionOp::concat},
                    {"late-multiply", SaPlacement::late, FusionOp::multiply},
                    {"early-concat", SaPlacement::early, FusionOp::concat},
                    {"early-multiply", SaPlacement::early, FusionOp::multiply}};
        for (const auto& r : rows) {
            ModelConfig m = base;
            m.sa_placement = r.sp;
            m.fusion_op = r.op;
            out.push_back({r.name, m});
        }
    }
    return out;
}

// Trains every variant with the shared seed and reports validation metrics
// of each best checkpoint.
inline AblationTable ablation_sweep(const TrainConfig& base, AblationAxis axis,
                                    const std::string& run_dir) {
    AblationTable table;
    for (const AblationVariant& var : ablation_variants(base.model, axis)) {
        TrainConfig cfg = base;
        cfg.model = var.model;
        const std::string vdir = (std::filesystem::path(run_dir) / var.name).string();
        TrainResult res = train(cfg, vdir);
        Model best = load_checkpoint(res.checkpoint_path);
        Manifest manifest = load_manifest(cfg.manifest_path);
        EvalReport report = evaluate(best, manifest, cfg.val_split);
        table.rows.push_back({var.name, cfg.hash_hex(), report.aggregate});
    }
    return table;
}

}  // namespace davihd
