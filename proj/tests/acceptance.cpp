// Acceptance suite: one criterion per function, one PASS/FAIL line each,
// exit code = number of failures. `acceptance A2 A5` runs a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "davihd/audio.hpp"
#include "davihd/config.hpp"
#include "davihd/metrics.hpp"
#include "davihd/model.hpp"
#include "davihd/optim.hpp"
#include "davihd/synth.hpp"
#include "davihd/train.hpp"
#include "oracles.hpp"

using namespace davihd;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

struct Check {
    Outcome& out;
    void operator()(bool ok, const std::string& what) {
        if (!ok) {
            out.pass = false;
            if (!out.detail.empty()) out.detail += "; ";
            out.detail += what;
        }
    }
};

double now_s() {
    static const auto t0 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path work_dir() {
    static const fs::path dir = [] {
        fs::path p = fs::temp_directory_path() /
                     ("davihd-acceptance-" + std::to_string(::getpid()));
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

ModelConfig toy_model_config() {
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

// ---------------------------------------------------------------------------
// A1: autodiff vs central finite differences on the full model
// ---------------------------------------------------------------------------

Outcome a1_gradient_fidelity() {
    Outcome out;
    Check check{out};
    const double t_start = now_s();

    ModelConfig mc = toy_model_config();  // T_f=4, D=16, K=2, F=16
    Model model(mc, 12345);
    model.set_requires_grad(true);
    Rng rng(999);
    ModelInputs in;
    in.t_f = 4;
    in.visual = Tensor::normal(rng, {4, mc.d_v});
    in.semantic = Tensor::normal(rng, {4, mc.d_s});
    in.spec = Tensor::normal(rng, {mc.n_mels, 40});  // T=40 frames

    // probe near the untrained predictions keeps the FD roundoff floor
    // below the 1e-8 relative-error floor
    Tensor p0 = model.forward(in, false);
    Tensor target({4});
    for (std::size_t i = 0; i < 4; ++i)
        target.values()[i] = std::clamp(p0.values()[i] + rng.uniform(-0.01, 0.01), 0.02, 0.98);
    auto loss_fn = [&]() { return mse_loss(model.forward(in, false), target); };

    auto groups = model.named_parameters();
    groups.emplace_back("input.S", in.spec);
    GradCheckReport report = grad_check_many(loss_fn, groups, 1e-5);

    std::size_t n_elements = 0;
    for (const auto& g : report.groups) {
        n_elements += g.elements;
        check(g.max_rel_err < 1e-5, g.name + " rel err " + std::to_string(g.max_rel_err));
    }
    const double elapsed = now_s() - t_start;
    check(elapsed < 60.0, "runtime " + std::to_string(elapsed) + " s exceeds 60 s");
    if (out.pass) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%zu groups / %zu elements, max rel err %.2e, %.1f s",
                      report.groups.size(), n_elements, report.max_rel_err, elapsed);
        out.detail = buf;
    }
    return out;
}

// ---------------------------------------------------------------------------
// A2: frequency-dynamic convolution degeneracies
// ---------------------------------------------------------------------------

Outcome a2_fdc_degeneracy() {
    Outcome out;
    Check check{out};
    Rng rng(31);

    ModelConfig k1 = toy_model_config();
    k1.k_basis = 1;
    Model m1(k1, 7);
    Tensor s = Tensor::normal(rng, {k1.n_mels, 30});
    Tensor fc = Tensor::normal(rng, {k1.attn_channels, k1.n_mels});
    Tensor gamma1 = m1.dynamics().gamma_weights(fc, false);
    Tensor fdc = m1.dynamics().fdc_apply(s, gamma1);
    Tensor plain = conv2d(reshape(s, {1, k1.n_mels, 30}), m1.dynamics().basis[0], 1, 1, 1, 1);
    double d1 = 0.0;
    for (std::size_t i = 0; i < fdc.numel(); ++i)
        d1 = std::max(d1, std::abs(fdc.values()[i] - plain.values()[i]));
    check(d1 <= 1e-12, "K=1 deviates from plain conv2d by " + std::to_string(d1));

    ModelConfig k4 = toy_model_config();
    k4.k_basis = 4;
    Model m4(k4, 11);
    for (std::size_t k = 1; k < 4; ++k) m4.dynamics().basis[k] = m4.dynamics().basis[0].detached_copy();
    Tensor gamma({4, k4.n_mels});
    for (std::size_t f = 0; f < k4.n_mels; ++f) {
        double remaining = 1.0;
        for (std::size_t k = 0; k < 3; ++k) {
            const double g = rng.uniform(0.0, remaining);
            gamma.at({k, f}) = g;
            remaining -= g;
        }
        gamma.at({3, f}) = remaining;
    }
    Tensor fdc4 = m4.dynamics().fdc_apply(s, gamma);
    Tensor plain4 = conv2d(reshape(s, {1, k4.n_mels, 30}), m4.dynamics().basis[0], 1, 1, 1, 1);
    double d4 = 0.0;
    for (std::size_t i = 0; i < fdc4.numel(); ++i)
        d4 = std::max(d4, std::abs(fdc4.values()[i] - plain4.values()[i]));
    check(d4 <= 1e-12, "identical-basis case deviates by " + std::to_string(d4));

    if (out.pass) out.detail = "K=1 diff " + std::to_string(d1) + ", shared-basis diff " + std::to_string(d4);
    return out;
}

// ---------------------------------------------------------------------------
// A3: gating algebra of the aggregation and the multiplicative fusion
// ---------------------------------------------------------------------------

Outcome a3_gating_algebra() {
    Outcome out;
    Check check{out};
    Rng rng(41);
    ModelConfig mc = toy_model_config();
    Model m(mc, 13);
    Tensor s = Tensor::normal(rng, {mc.n_mels, 24});
    auto br = m.dynamics().attention_branches(s, frame_diff(s), true);

    // x_s = 0: both gated sums vanish exactly and only the pooled branch remains
    DynamicsEncoder::Branches zeroed = br;
    zeroed.gate = Tensor::zeros(br.gate.shape());
    Tensor f_ta = sum_axis(mul(zeroed.alpha, zeroed.gate), 2);
    Tensor f_va = sum_axis(mul(zeroed.beta, zeroed.gate), 2);
    bool exact_zero = true;
    for (double v : f_ta.values()) exact_zero = exact_zero && v == 0.0;
    for (double v : f_va.values()) exact_zero = exact_zero && v == 0.0;
    check(exact_zero, "f_TA/f_VA not exactly zero under a zero gate");
    Tensor fc = DynamicsEncoder::aggregate(zeroed, s);
    Tensor gap = mean_axis(s, 1);
    bool gap_only = true;
    for (std::size_t c = 0; c < fc.dim(0); ++c)
        for (std::size_t f = 0; f < fc.dim(1); ++f)
            gap_only = gap_only && fc.at({c, f}) == gap.values()[f];
    check(gap_only, "f_combined != pooled branch under a zero gate");

    // multiplicative fusion: zero dynamics annihilates, unit dynamics is identity
    const std::size_t t_f = 6;
    Tensor zs = Tensor::normal(rng, {t_f, mc.d_s});
    Tensor fused_zero = m.fuse_combine(zs, Tensor::zeros({t_f, mc.d_d}));
    bool zero_fused = true;
    for (double v : fused_zero.values()) zero_fused = zero_fused && v == 0.0;
    check(zero_fused, "zero dynamics stream does not annihilate the fusion");
    Tensor fused_ones = m.fuse_combine(zs, Tensor::full({t_f, mc.d_d}, 1.0));
    check(fused_ones.values() == zs.values(), "all-ones dynamics stream is not the identity");

    if (out.pass) out.detail = "all identities exact";
    return out;
}

// ---------------------------------------------------------------------------
// A4: row-stochastic attention across 100 randomized configs
// ---------------------------------------------------------------------------

Outcome a4_attention_stochasticity() {
    Outcome out;
    Check check{out};
    Rng meta(4242);
    std::size_t checked_rows = 0;
    double worst = 0.0;
    for (int trial = 0; trial < 100 && out.pass; ++trial) {
        const std::size_t heads = 1 + meta.below(4);
        const std::size_t dq = heads * (1 + meta.below(6));
        const std::size_t dc = heads * (1 + meta.below(6));
        const std::size_t t_f = 1 + meta.below(9);
        Rng rng(meta.next_u64());
        SelfAttentionBlock self(dq, heads, rng);
        CrossAttentionBlock cross(dq, dc, heads, rng);
        Tensor x = Tensor::normal(rng, {t_f, dq}, 0.0, 1.0 + static_cast<double>(meta.below(4)));
        Tensor ctx = Tensor::normal(rng, {t_f, dc}, 0.0, 1.0 + static_cast<double>(meta.below(4)));
        self.forward(x);
        cross.forward(x, ctx);
        for (const auto* attns : {&self.last_attn, &cross.last_attn})
            for (const Tensor& a : *attns)
                for (std::size_t r = 0; r < a.dim(0); ++r) {
                    double sum = 0.0;
                    for (std::size_t c = 0; c < a.dim(1); ++c) sum += a.at({r, c});
                    worst = std::max(worst, std::abs(sum - 1.0));
                    ++checked_rows;
                    check(std::abs(sum - 1.0) <= 1e-12,
                          "row sum off by " + std::to_string(std::abs(sum - 1.0)) + " at trial " +
                              std::to_string(trial));
                }
    }
    if (out.pass)
        out.detail = std::to_string(checked_rows) + " rows over 100 configs, worst |sum-1| = " +
                     std::to_string(worst);
    return out;
}

// ---------------------------------------------------------------------------
// A5: metric implementations vs brute-force oracles
// ---------------------------------------------------------------------------

Outcome a5_metric_oracles() {
    Outcome out;
    Check check{out};
    Rng rng(555);

    // correlations on 1000 random instances with ties, n <= 10
    for (int trial = 0; trial < 1000 && out.pass; ++trial) {
        const std::size_t n = 2 + rng.below(9);
        std::vector<double> p(n), g(n);
        const bool tie_p = trial % 2 == 0, tie_g = trial % 3 == 0;
        for (double& x : p) x = tie_p ? static_cast<double>(rng.below(4)) : rng.uniform(0, 1);
        for (double& x : g) x = tie_g ? static_cast<double>(rng.below(4)) : rng.uniform(0, 1);
        for (int which = 0; which < 2; ++which) {
            bool lib_err = false, ora_err = false;
            double lib = 0, ora = 0;
            try {
                lib = which ? spearman_rho(p, g) : kendall_tau(p, g);
            } catch (const NumericError&) {
                lib_err = true;
            }
            try {
                ora = which ? oracles::spearman(p, g) : oracles::kendall(p, g);
            } catch (const std::runtime_error&) {
                ora_err = true;
            }
            check(lib_err == ora_err, std::string(which ? "spearman" : "kendall") +
                                          " definedness mismatch at trial " + std::to_string(trial));
            if (!lib_err && !ora_err)
                check(std::abs(lib - ora) <= 1e-12, std::string(which ? "spearman" : "kendall") +
                                                        " deviates at trial " + std::to_string(trial));
        }
    }

    // exhaustive AP enumeration over every permutation of n <= 6
    std::size_t permutations = 0;
    for (std::size_t n = 2; n <= 6 && out.pass; ++n) {
        for (int draw = 0; draw < 2; ++draw) {
            std::vector<double> g(n);
            for (double& x : g) x = draw == 0 ? rng.uniform(0, 1) : static_cast<double>(rng.below(3));
            std::vector<double> p(n);
            for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<double>(i);
            std::sort(p.begin(), p.end());
            do {
                ++permutations;
                for (double rho : {0.34, 0.5, 1.0}) {
                    if (static_cast<std::size_t>(std::floor(rho * static_cast<double>(n))) == 0) continue;
                    const double lib = map_at_rho(p, g, rho);
                    const double ora = oracles::average_precision(p, g, rho);
                    check(lib == ora, "AP mismatch at n=" + std::to_string(n));
                }
            } while (std::next_permutation(p.begin(), p.end()) && out.pass);
        }
    }
    // no positives at tiny rho is an error, not zero
    try {
        map_at_rho({1, 2, 3, 4}, {1, 2, 3, 4}, 0.15);
        check(false, "map_at_rho accepted an empty positive set");
    } catch (const NumericError&) {
    }

    // F1 vs the set-overlap oracle
    for (int trial = 0; trial < 500 && out.pass; ++trial) {
        const std::size_t n = 2 + rng.below(9);
        std::vector<double> p(n), g(n);
        for (double& x : p) x = trial % 2 ? rng.uniform(0, 1) : static_cast<double>(rng.below(3));
        for (double& x : g) x = trial % 3 ? rng.uniform(0, 1) : static_cast<double>(rng.below(3));
        check(std::abs(f1_at_50(p, g) - oracles::f1_overlap(p, g)) <= 1e-12,
              "F1 deviates at trial " + std::to_string(trial));
    }

    if (out.pass)
        out.detail = "1000 correlation instances, " + std::to_string(permutations) +
                     " AP permutations, 500 F1 instances";
    return out;
}

// ---------------------------------------------------------------------------
// A6: front-end contracts
// ---------------------------------------------------------------------------

Outcome a6_frontend() {
    Outcome out;
    Check check{out};

    Waveform sine;
    sine.samples.resize(16000);
    for (std::size_t i = 0; i < sine.samples.size(); ++i)
        sine.samples[i] = 0.25 * std::sin(2.0 * M_PI * 1000.0 * static_cast<double>(i) / 16000.0);

    LogMelSpectrogram s = make_log_mel(sine, {});
    check(s.values.shape() == Shape{128, 55},
          "1 s spectrogram is " + shape_str(s.values.shape()) + ", expected [128,55]");

    Tensor power = stft_power(sine);
    bool argmax_ok = true;
    for (std::size_t t = 0; t < power.dim(1); ++t) {
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t b = 0; b < power.dim(0); ++b)
            if (power.at({b, t}) > best) {
                best = power.at({b, t});
                arg = b;
            }
        argmax_ok = argmax_ok && arg == 128;
    }
    check(argmax_ok, "1 kHz sine does not peak at bin 128 in every frame");

    // broadband probe so nearly every mel band sits above the log floor
    Rng rng(606);
    Waveform rich;
    rich.samples.resize(16000);
    for (std::size_t i = 0; i < rich.samples.size(); ++i) {
        const double t = static_cast<double>(i) / 16000.0;
        rich.samples[i] = 0.15 * std::sin(2.0 * M_PI * 700.0 * t) +
                          0.1 * std::sin(2.0 * M_PI * 3100.0 * t) + 0.02 * rng.normal();
    }
    Waveform doubled = rich;
    for (double& v : doubled.samples) v *= 2.0;
    LogMelSpectrogram s1 = make_log_mel(rich, {});
    LogMelSpectrogram s2 = make_log_mel(doubled, {});
    const double floor_val = std::log(1e-10);
    double worst = 0.0;
    std::size_t compared = 0;
    for (std::size_t i = 0; i < s1.values.numel(); ++i) {
        if (s1.values.values()[i] <= floor_val + 1.5) continue;  // floor-clipped entries excluded
        worst = std::max(worst, std::abs(s2.values.values()[i] - s1.values.values()[i] - std::log(4.0)));
        ++compared;
    }
    check(compared > 500, "too few above-floor entries to compare");
    check(worst <= 1e-9, "log-mel shift deviates from ln 4 by " + std::to_string(worst));

    if (out.pass) {
        char buf[120];
        std::snprintf(buf, sizeof(buf), "128x55, argmax@128, ln4 shift err %.2e over %zu entries",
                      worst, compared);
        out.detail = buf;
    }
    return out;
}

// ---------------------------------------------------------------------------
// A7/A8 share the synthetic benchmark
// ---------------------------------------------------------------------------

const std::string& benchmark_manifest() {
    static const std::string path = [] {
        const fs::path dir = work_dir() / "benchmark";
        ConfigMap map = preset_config("toy");
        SynthSpec spec = synth_spec_from(map);
        Manifest m = synth_dataset(spec, dir.string());
        assign_kfold(m, 5, 20250810);
        const std::string p = (dir / "manifest.jsonl").string();
        save_manifest(p, m);
        return p;
    }();
    return path;
}

TrainConfig benchmark_train_config() {
    ConfigMap map = preset_config("toy");
    TrainConfig cfg = train_config_from(map);
    cfg.manifest_path = benchmark_manifest();
    cfg.val_split = "fold0";
    cfg.seed = 7;
    return cfg;
}

struct BenchmarkRun {
    MetricAggregate held_out;
    double wall_s = 0.0;
};

BenchmarkRun run_benchmark_variant(const std::string& name, bool use_v, bool use_as, bool use_ad) {
    TrainConfig cfg = benchmark_train_config();
    cfg.model.use_v = use_v;
    cfg.model.use_as = use_as;
    cfg.model.use_ad = use_ad;
    const double t0 = now_s();
    TrainResult res = train(cfg, (work_dir() / ("run-" + name)).string());
    Model best = load_checkpoint(res.checkpoint_path);
    Manifest manifest = load_manifest(cfg.manifest_path);
    EvalReport report = evaluate(best, manifest, cfg.val_split);
    return {report.aggregate, now_s() - t0};
}

BenchmarkRun& full_model_run() {
    static BenchmarkRun run = run_benchmark_variant("full", true, true, true);
    return run;
}

Outcome a7_end_to_end_learning() {
    Outcome out;
    Check check{out};
    const BenchmarkRun& run = full_model_run();
    check(run.held_out.rho.has_value() && run.held_out.map50.has_value(),
          "held-out metrics undefined");
    if (run.held_out.rho) {
        check(*run.held_out.rho >= 0.8, "held-out Spearman " + std::to_string(*run.held_out.rho) + " < 0.8");
        check(*run.held_out.map50 >= 0.85, "held-out mAP@50 " + std::to_string(*run.held_out.map50) + " < 0.85");
    }
    check(run.wall_s < 600.0, "wall time " + std::to_string(run.wall_s) + " s exceeds 10 min");
    if (out.pass) {
        char buf[120];
        std::snprintf(buf, sizeof(buf), "rho %.3f, mAP@50 %.3f, %.0f s (240 videos, 50 epochs)",
                      *run.held_out.rho, *run.held_out.map50, run.wall_s);
        out.detail = buf;
    }
    return out;
}

Outcome a8_ablation_direction() {
    Outcome out;
    Check check{out};
    const BenchmarkRun& full = full_model_run();
    BenchmarkRun v_only = run_benchmark_variant("v-only", true, false, false);
    BenchmarkRun ad_only = run_benchmark_variant("ad-only", false, false, true);
    check(v_only.held_out.map50.has_value() && ad_only.held_out.map50.has_value() &&
              full.held_out.map50.has_value(),
          "mAP@50 undefined for a variant");
    if (out.pass) {
        const double v = *v_only.held_out.map50;
        const double ad = *ad_only.held_out.map50;
        const double all = *full.held_out.map50;
        check(ad - v >= 0.15, "dynamics-only lead over visual-only is " + std::to_string(ad - v));
        check(all >= ad, "full model mAP@50 " + std::to_string(all) + " below dynamics-only " +
                             std::to_string(ad));
        if (out.pass) {
            char buf[120];
            std::snprintf(buf, sizeof(buf), "mAP@50: V %.3f, Ad %.3f, V+As+Ad %.3f", v, ad, all);
            out.detail = buf;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// A9: bit-identical repeated training
// ---------------------------------------------------------------------------

std::string file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

Outcome a9_determinism() {
    Outcome out;
    Check check{out};
    const fs::path dir = work_dir() / "determinism";
    SynthSpec spec;
    spec.n_videos = 40;
    spec.t_f_min = 6;
    spec.t_f_max = 8;
    spec.d_v = 8;
    spec.d_s = 16;
    spec.seed = 33;
    Manifest m = synth_dataset(spec, (dir / "ds").string());
    assign_kfold(m, 4, 5);
    save_manifest((dir / "ds" / "manifest.jsonl").string(), m);

    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.lr = 1e-3;
    cfg.batch_size = 4;
    cfg.seed = 99;
    cfg.manifest_path = (dir / "ds" / "manifest.jsonl").string();
    cfg.val_split = "fold0";
    cfg.model = toy_model_config();
    cfg.model.d_v = 8;
    cfg.model.n_fft = 1024;
    cfg.model.hop = 1024;
    // injected clock: identical logs require identical timestamps
    cfg.clock = [] { return 0.0; };

    TrainResult a = train(cfg, (dir / "a").string());
    TrainResult b = train(cfg, (dir / "b").string());
    check(file_bytes(a.checkpoint_path) == file_bytes(b.checkpoint_path),
          "checkpoints differ between identical runs");
    check(file_bytes(a.runlog_path) == file_bytes(b.runlog_path),
          "run logs differ between identical runs");
    check(!file_bytes(a.checkpoint_path).empty(), "empty checkpoint");
    if (out.pass)
        out.detail = "checkpoint " + std::to_string(file_bytes(a.checkpoint_path).size()) +
                     " bytes and runlog are bit-identical across runs";
    return out;
}

// ---------------------------------------------------------------------------
// A10: bitwise format round trips
// ---------------------------------------------------------------------------

Outcome a10_format_round_trips() {
    Outcome out;
    Check check{out};
    Rng rng(1010);

    std::size_t tensors = 0;
    for (int trial = 0; trial < 900 && out.pass; ++trial) {
        const std::size_t ndim = 1 + rng.below(4);
        Shape shape(ndim);
        for (auto& d : shape) d = 1 + rng.below(5);
        const DftDtype dtype = trial % 2 ? DftDtype::f32 : DftDtype::f64;
        std::vector<double> data(shape_numel(shape));
        for (double& v : data) {
            v = rng.normal(0, 1000.0);
            if (dtype == DftDtype::f32) v = static_cast<double>(static_cast<float>(v));
        }
        const DftTensor t{dtype, shape, data};
        const std::string once = dft_to_bytes(t);
        const DftTensor back = dft_from_bytes(once);
        check(dft_to_bytes(back) == once && back.data == t.data && back.dtype == t.dtype,
              "DFT1 round trip broke at trial " + std::to_string(trial));
        ++tensors;
    }

    std::size_t checkpoints = 0;
    for (int trial = 0; trial < 100 && out.pass; ++trial) {
        ModelConfig mc = toy_model_config();
        mc.heads = 1 + rng.below(2);
        mc.d_v = mc.heads * (2 + rng.below(3)) * 2;
        mc.d_s = mc.d_d = mc.d_a = mc.heads * (2 + rng.below(3)) * 2;
        mc.k_basis = 1 + rng.below(3);
        mc.n_mels = 8 + rng.below(4);
        mc.use_as = trial % 3 != 0;
        mc.use_v = trial % 4 != 0 || !mc.use_as;
        Model model(mc, rng.next_u64());
        // jitter every state tensor so payloads are not all at init values
        model.visit_state([&](const std::string&, Tensor& t, bool) {
            for (double& v : t.values()) v += rng.normal(0, 0.01);
        });
        const std::string once = checkpoint_to_bytes(model);
        Model back = checkpoint_from_bytes(once, "<mem>");
        check(checkpoint_to_bytes(back) == once,
              "DVHD1 round trip broke at trial " + std::to_string(trial));
        ++checkpoints;
    }

    if (out.pass)
        out.detail = std::to_string(tensors) + " DFT1 tensors + " + std::to_string(checkpoints) +
                     " DVHD1 checkpoints, all bitwise";
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<std::string> only;
    for (int i = 1; i < argc; ++i) only.insert(argv[i]);

    struct Criterion {
        const char* id;
        const char* title;
        std::function<Outcome()> fn;
    };
    const std::vector<Criterion> criteria = {
        {"A1", "gradient fidelity (autodiff vs central differences)", a1_gradient_fidelity},
        {"A2", "frequency-dynamic convolution degeneracies", a2_fdc_degeneracy},
        {"A3", "gating algebra (aggregation and fusion)", a3_gating_algebra},
        {"A4", "attention row-stochasticity, 100 random configs", a4_attention_stochasticity},
        {"A5", "metric oracles (AP, F1, rank correlations)", a5_metric_oracles},
        {"A6", "audio front-end contracts", a6_frontend},
        {"A7", "end-to-end learning on the synthetic benchmark", a7_end_to_end_learning},
        {"A8", "ablation direction (dynamics beats visual)", a8_ablation_direction},
        {"A9", "bit-identical training determinism", a9_determinism},
        {"A10", "bitwise format round trips (DFT1, DVHD1)", a10_format_round_trips},
    };

    int failures = 0;
    for (const Criterion& c : criteria) {
        if (!only.empty() && !only.count(c.id)) continue;
        Outcome out;
        try {
            out = c.fn();
        } catch (const std::exception& e) {
            out.pass = false;
            out.detail = std::string("exception: ") + e.what();
        }
        std::printf("[%s] %-4s %s%s%s\n", out.pass ? "PASS" : "FAIL", c.id, c.title,
                    out.detail.empty() ? "" : " -- ", out.detail.c_str());
        std::fflush(stdout);
        failures += out.pass ? 0 : 1;
    }
    if (failures == 0) std::printf("acceptance: all criteria passed\n");
    return failures;
}
