#pragma once

#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "davihd/dataio.hpp"
#include "davihd/nn.hpp"
#include "davihd/tensor.hpp"

namespace davihd {

enum class SaPlacement { early, late };
enum class FusionOp { multiply, concat };

inline const char* to_string(SaPlacement p) { return p == SaPlacement::early ? "early" : "late"; }
inline const char* to_string(FusionOp f) { return f == FusionOp::multiply ? "multiply" : "concat"; }

// Architecture hyperparameters. Sequence length is not part of the config;
// every component is length-agnostic and T_f is taken from the data.
struct ModelConfig {
    std::size_t d_v = 1024;  // visual dim
    std::size_t d_s = 2048;  // semantic dim
    std::size_t d_d = 2048;  // dynamics dim
    std::size_t d_a = 2048;  // fused audio dim
    std::size_t k_basis = 4;
    std::size_t heads = 4;

    std::size_t conv_hidden = 32;     // hidden channels inside each conv block
    std::size_t attn_channels = 32;   // channels of the alpha/beta/gate maps
    std::size_t basis_channels = 16;  // output channels of each basis kernel
    std::size_t gamma_hidden = 32;    // hidden channels of the gamma block
    std::size_t conv_kernel = 3;      // odd

    SaPlacement sa_placement = SaPlacement::early;
    FusionOp fusion_op = FusionOp::multiply;
    bool use_v = true;
    bool use_as = true;
    bool use_ad = true;

    // Front-end parameters; n_mels fixes the dynamics projection input.
    std::size_t n_mels = 128;
    std::size_t n_fft = 2048;
    std::size_t hop = 256;
    double f_min = 0.0;
    double f_max = 8000.0;

    double bn_momentum = 0.1;
    double bn_eps = 1e-5;
    double ln_eps = 1e-5;

    bool fused_audio() const { return use_as && use_ad; }
    bool any_audio() const { return use_as || use_ad; }

    // Dim of the audio representation reaching cross-attention and the head.
    std::size_t audio_dim() const {
        if (fused_audio()) return d_a;
        return use_as ? d_s : d_d;
    }

    std::size_t head_input_dim() const {
        std::size_t d = 0;
        if (use_v) d += d_v;
        if (any_audio()) d += audio_dim();
        if (use_v && any_audio()) d += d_v + audio_dim();  // cross-attended streams
        return d;
    }

    void validate() const {
        if (!use_v && !use_as && !use_ad) throw ShapeError("config: no modalities enabled");
        if (k_basis < 1) throw ShapeError("config: k_basis must be >= 1");
        if (conv_kernel % 2 == 0 || conv_kernel == 0) throw ShapeError("config: conv_kernel must be odd");
        if (fused_audio() && fusion_op == FusionOp::multiply && !(d_s == d_d && d_d == d_a))
            throw ShapeError("config: multiply fusion requires d_s == d_d == d_a");
        if (heads == 0) throw ShapeError("config: heads must be >= 1");
        if (use_v && d_v % heads != 0) throw ShapeError("config: heads must divide d_v");
        if (any_audio() && audio_dim() % heads != 0)
            throw ShapeError("config: heads must divide the audio dim");
        if (use_as && use_ad && sa_placement == SaPlacement::early &&
            (d_s % heads != 0 || d_d % heads != 0))
            throw ShapeError("config: heads must divide d_s and d_d");
        if (n_mels == 0 || n_fft == 0 || hop == 0) throw ShapeError("config: bad spectrogram params");
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["d_v"] = d_v;
        j["d_s"] = d_s;
        j["d_d"] = d_d;
        j["d_a"] = d_a;
        j["k_basis"] = k_basis;
        j["heads"] = heads;
        j["conv_hidden"] = conv_hidden;
        j["attn_channels"] = attn_channels;
        j["basis_channels"] = basis_channels;
        j["gamma_hidden"] = gamma_hidden;
        j["conv_kernel"] = conv_kernel;
        j["sa_placement"] = to_string(sa_placement);
        j["fusion_op"] = to_string(fusion_op);
        j["use_v"] = use_v;
        j["use_as"] = use_as;
        j["use_ad"] = use_ad;
        j["n_mels"] = n_mels;
        j["n_fft"] = n_fft;
        j["hop"] = hop;
        j["f_min"] = f_min;
        j["f_max"] = f_max;
        j["bn_momentum"] = bn_momentum;
        j["bn_eps"] = bn_eps;
        j["ln_eps"] = ln_eps;
        return j;
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.d_v = j.at("d_v").get<std::size_t>();
        c.d_s = j.at("d_s").get<std::size_t>();
        c.d_d = j.at("d_d").get<std::size_t>();
        c.d_a = j.at("d_a").get<std::size_t>();
        c.k_basis = j.at("k_basis").get<std::size_t>();
        c.heads = j.at("heads").get<std::size_t>();
        c.conv_hidden = j.at("conv_hidden").get<std::size_t>();
        c.attn_channels = j.at("attn_channels").get<std::size_t>();
        c.basis_channels = j.at("basis_channels").get<std::size_t>();
        c.gamma_hidden = j.at("gamma_hidden").get<std::size_t>();
        c.conv_kernel = j.at("conv_kernel").get<std::size_t>();
        c.sa_placement = j.at("sa_placement").get<std::string>() == "early" ? SaPlacement::early
                                                                            : SaPlacement::late;
        c.fusion_op = j.at("fusion_op").get<std::string>() == "multiply" ? FusionOp::multiply
                                                                         : FusionOp::concat;
        c.use_v = j.at("use_v").get<bool>();
        c.use_as = j.at("use_as").get<bool>();
        c.use_ad = j.at("use_ad").get<bool>();
        c.n_mels = j.at("n_mels").get<std::size_t>();
        c.n_fft = j.at("n_fft").get<std::size_t>();
        c.hop = j.at("hop").get<std::size_t>();
        c.f_min = j.at("f_min").get<double>();
        c.f_max = j.at("f_max").get<double>();
        c.bn_momentum = j.at("bn_momentum").get<double>();
        c.bn_eps = j.at("bn_eps").get<double>();
        c.ln_eps = j.at("ln_eps").get<double>();
        return c;
    }
};

// ---------------------------------------------------------------------------
// audio dynamics encoder
// ---------------------------------------------------------------------------

// Multi-branch encoder over the log-mel spectrogram: temporal and velocity
// attention maps gated by a saliency map select where to aggregate, the
// aggregate drives per-frequency mixing weights for K basis kernels, and the
// mixed convolution of the original spectrogram is pooled to T_f segments.
struct DynamicsEncoder {
    ConvBlock2d alpha_block;  // temporal attention branch, input S
    ConvBlock2d gate_block;   // saliency gate branch, input S
    ConvBlock2d beta_block;   // velocity attention branch, input |dS|
    ConvBlock2d gamma_block;  // 1-D (over frequency) block: f_combined -> K weights
    std::vector<Tensor> basis;  // K kernels [C_out, 1, k, k]
    Linear proj;                // [C_out * F] -> d_d

    DynamicsEncoder() = default;

    DynamicsEncoder(const ModelConfig& cfg, Rng& rng)
        : alpha_block(1, cfg.conv_hidden, cfg.attn_channels, cfg.conv_kernel, cfg.conv_kernel, rng,
                      cfg.bn_momentum, cfg.bn_eps),
          gate_block(1, cfg.conv_hidden, cfg.attn_channels, cfg.conv_kernel, cfg.conv_kernel, rng,
                     cfg.bn_momentum, cfg.bn_eps),
          beta_block(1, cfg.conv_hidden, cfg.attn_channels, cfg.conv_kernel, cfg.conv_kernel, rng,
                     cfg.bn_momentum, cfg.bn_eps),
          gamma_block(cfg.attn_channels, cfg.gamma_hidden, cfg.k_basis, cfg.conv_kernel, 1, rng,
                      cfg.bn_momentum, cfg.bn_eps),
          proj(cfg.basis_channels * cfg.n_mels, cfg.d_d, rng) {
        basis.reserve(cfg.k_basis);
        const std::size_t k = cfg.conv_kernel;
        for (std::size_t i = 0; i < cfg.k_basis; ++i)
            basis.push_back(init_weight(rng, {cfg.basis_channels, 1, k, k}, k * k));
    }

    struct Branches {
        Tensor alpha;  // softmax over time, [C', F, T]
        Tensor beta;   // softmax over time of the difference branch
        Tensor gate;   // sigmoid saliency, shared by both products
    };

    // S and dS are [F, T].
    Branches attention_branches(const Tensor& s, const Tensor& ds, bool training) {
        if (s.shape() != ds.shape()) throw ShapeError("attention_branches: S and dS differ in shape");
        const std::size_t f = s.dim(0), t = s.dim(1);
        Tensor x = reshape(s, {1, f, t});
        Tensor dx = reshape(ds, {1, f, t});
        Branches br;
        br.alpha = softmax(alpha_block.forward(x, training), 2);
        br.beta = softmax(beta_block.forward(dx, training), 2);
        br.gate = sigmoid(gate_block.forward(x, training));
        return br;
    }

    // f_TA = sum_t(alpha * gate), f_VA = sum_t(beta * gate); both summed with
    // the time-mean of the raw spectrogram (the pooling branch), broadcast
    // over channels.
    static Tensor aggregate(const Branches& br, const Tensor& s) {
        Tensor f_ta = sum_axis(mul(br.alpha, br.gate), 2);
        Tensor f_va = sum_axis(mul(br.beta, br.gate), 2);
        Tensor gap = mean_axis(s, 1);  // [F]
        return add_axis(add(f_ta, f_va), gap, 1);
    }

    // Per-frequency mixture weights, softmax-normalized over the K axis.
    Tensor gamma_weights(const Tensor& f_combined, bool training) {
        const std::size_t c = f_combined.dim(0), f = f_combined.dim(1);
        Tensor x = reshape(f_combined, {c, f, 1});
        Tensor g = gamma_block.forward(x, training);  // [K, F, 1]
        return softmax(reshape(g, {g.dim(0), f}), 0);
    }

    // sum_k gamma_k(f) * (W_k * S); gamma broadcasts over channels and time.
    Tensor fdc_apply(const Tensor& s, const Tensor& gamma) const {
        const std::size_t f = s.dim(0), t = s.dim(1);
        if (gamma.ndim() != 2 || gamma.dim(0) != basis.size() || gamma.dim(1) != f)
            throw ShapeError("fdc_apply: gamma must be [K, F]");
        Tensor x = reshape(s, {1, f, t});
        const std::size_t pad = (basis[0].dim(2) - 1) / 2;
        Tensor out;
        for (std::size_t k = 0; k < basis.size(); ++k) {
            Tensor conv = conv2d(x, basis[k], 1, 1, pad, pad);
            Tensor gk = reshape(slice_rows(gamma, k, 1), {f});
            Tensor term = mul_axis(conv, gk, 1);
            out = k == 0 ? term : add(out, term);
        }
        return out;
    }

    // Full pathway: S [F, T] -> [t_f, d_d].
    Tensor encode(const Tensor& s, std::size_t t_f, bool training) {
        if (s.ndim() != 2) throw ShapeError("dynamics encode: expected [F, T]");
        if (s.dim(1) < t_f)
            throw ShapeError("dynamics encode: spectrogram has fewer frames (" +
                             std::to_string(s.dim(1)) + ") than segments (" + std::to_string(t_f) + ")");
        Tensor ds = frame_diff(s);
        Branches br = attention_branches(s, ds, training);
        Tensor f_combined = aggregate(br, s);
        Tensor gamma = gamma_weights(f_combined, training);
        Tensor z = fdc_apply(s, gamma);  // [C_out, F, T]
        z = reshape(z, {z.dim(0) * z.dim(1), z.dim(2)});
        z = adaptive_avg_pool_time(z, t_f);
        z = transpose2d(z);
        return proj.forward(z);
    }

    void visit(const std::string& prefix, const StateVisitor& fn) {
        alpha_block.visit(prefix + ".alpha", fn);
        gate_block.visit(prefix + ".gate", fn);
        beta_block.visit(prefix + ".beta", fn);
        gamma_block.visit(prefix + ".gamma", fn);
        for (std::size_t i = 0; i < basis.size(); ++i)
            fn(prefix + ".basis." + std::to_string(i), basis[i], true);
        proj.visit(prefix + ".proj", fn);
    }
};

// ---------------------------------------------------------------------------
// full model
// ---------------------------------------------------------------------------

struct ModelInputs {
    Tensor visual;        // [T_f, d_v]; undefined when the modality is off
    Tensor spec;          // [F, T] log-mel; undefined when dynamics is off
    Tensor semantic;      // [T_f, d_s]; undefined when semantics is off
    std::size_t t_f = 0;  // segment count; deduced from visual/semantic when 0
};

// Mean over segments of the squared score error; targets must lie in [0, 1].
inline Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    if (pred.numel() != target.numel()) throw ShapeError("mse_loss: length mismatch");
    for (double v : target.values())
        if (v < 0.0 || v > 1.0) throw ShapeError("mse_loss: targets must lie in [0,1]");
    Tensor p = pred.ndim() == 1 ? pred : reshape(pred, {pred.numel()});
    Tensor t = target.ndim() == 1 ? target : Tensor({target.numel()}, target.values());
    Tensor d = sub(p, t);
    return mean_all(mul(d, d));
}

class Model {
public:
    Model() = default;

    Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(Rng::derived(seed, 0x6d6f64656cull).next_u64());
        if (cfg_.use_v) visual_sa_ = std::make_unique<SelfAttentionBlock>(cfg_.d_v, cfg_.heads, rng, cfg_.ln_eps);
        if (cfg_.use_ad) dynamics_ = std::make_unique<DynamicsEncoder>(cfg_, rng);
        if (cfg_.fused_audio()) {
            if (cfg_.sa_placement == SaPlacement::early) {
                sa_s_ = std::make_unique<SelfAttentionBlock>(cfg_.d_s, cfg_.heads, rng, cfg_.ln_eps);
                sa_d_ = std::make_unique<SelfAttentionBlock>(cfg_.d_d, cfg_.heads, rng, cfg_.ln_eps);
            }
            if (cfg_.fusion_op == FusionOp::concat)
                fuse_proj_ = std::make_unique<Linear>(cfg_.d_s + cfg_.d_d, cfg_.d_a, rng);
            if (cfg_.sa_placement == SaPlacement::late)
                sa_late_ = std::make_unique<SelfAttentionBlock>(cfg_.d_a, cfg_.heads, rng, cfg_.ln_eps);
        } else if (cfg_.use_as) {
            sa_s_ = std::make_unique<SelfAttentionBlock>(cfg_.d_s, cfg_.heads, rng, cfg_.ln_eps);
        } else if (cfg_.use_ad) {
            sa_d_ = std::make_unique<SelfAttentionBlock>(cfg_.d_d, cfg_.heads, rng, cfg_.ln_eps);
        }
        if (cfg_.use_v && cfg_.any_audio()) {
            cross_av_ = std::make_unique<CrossAttentionBlock>(cfg_.d_v, cfg_.audio_dim(), cfg_.heads, rng);
            cross_va_ = std::make_unique<CrossAttentionBlock>(cfg_.audio_dim(), cfg_.d_v, cfg_.heads, rng);
        }
        head_ = std::make_unique<ScoreHead>(cfg_.head_input_dim(), rng);
    }

    const ModelConfig& config() const { return cfg_; }

    // Contextualized visual stream: self-attention + residual + layer norm.
    Tensor visual_encode(const Tensor& zv) {
        if (!visual_sa_) throw ShapeError("visual_encode: visual modality disabled");
        if (zv.ndim() != 2 || zv.dim(1) != cfg_.d_v)
            throw ShapeError("visual_encode: expected [T_f," + std::to_string(cfg_.d_v) + "]");
        return visual_sa_->forward(zv);
    }

    // The fusion combination step alone (inputs already contextualized in
    // early placement).
    Tensor fuse_combine(const Tensor& zs, const Tensor& zd) const {
        if (cfg_.fusion_op == FusionOp::multiply) return mul(zs, zd);
        return fuse_proj_->forward(concat_cols({zs, zd}));
    }

    // Fused audio representation Z'_a from the two pathway outputs.
    Tensor audio_fuse(const Tensor& zs, const Tensor& zd) {
        if (!cfg_.fused_audio()) throw ShapeError("audio_fuse: both audio streams must be enabled");
        if (cfg_.sa_placement == SaPlacement::early)
            return fuse_combine(sa_s_->forward(zs), sa_d_->forward(zd));
        return sa_late_->forward(fuse_combine(zs, zd));
    }

    struct CrossAttended {
        Tensor s_v;  // Z'_v + audio-contextualized visual
        Tensor s_a;  // Z'_a + visual-contextualized audio
    };

    CrossAttended cross_attend(const Tensor& zv, const Tensor& za) {
        if (!cross_av_) throw ShapeError("cross_attend: needs both modalities");
        if (zv.dim(0) != za.dim(0)) throw ShapeError("cross_attend: sequence length mismatch");
        CrossAttended out;
        out.s_v = add(zv, cross_av_->forward(zv, za));
        out.s_a = add(za, cross_va_->forward(za, zv));
        return out;
    }

    Tensor predict_scores(const std::vector<Tensor>& streams) const {
        Tensor x = streams.size() == 1 ? streams[0] : concat_cols(streams);
        if (x.dim(1) != cfg_.head_input_dim())
            throw ShapeError("predict_scores: head input dim mismatch");
        Tensor y = head_->forward(x);  // [T_f, 1]
        return reshape(y, {y.dim(0)});
    }

    // Full forward pass; returns per-segment scores in (0, 1).
    Tensor forward(const ModelInputs& in, bool training) {
        std::size_t t_f = in.t_f;
        if (cfg_.use_v) {
            if (!in.visual.defined()) throw ShapeError("forward: visual input missing");
            if (t_f == 0) t_f = in.visual.dim(0);
            if (in.visual.ndim() != 2 || in.visual.dim(0) != t_f || in.visual.dim(1) != cfg_.d_v)
                throw ShapeError("forward: visual input must be [T_f," + std::to_string(cfg_.d_v) + "]");
        }
        if (cfg_.use_as) {
            if (!in.semantic.defined()) throw ShapeError("forward: semantic input missing");
            if (t_f == 0) t_f = in.semantic.dim(0);
            if (in.semantic.ndim() != 2 || in.semantic.dim(0) != t_f || in.semantic.dim(1) != cfg_.d_s)
                throw ShapeError("forward: semantic input must be [T_f," + std::to_string(cfg_.d_s) + "]");
        }
        if (cfg_.use_ad) {
            if (!in.spec.defined()) throw ShapeError("forward: spectrogram input missing");
            if (in.spec.ndim() != 2 || in.spec.dim(0) != cfg_.n_mels)
                throw ShapeError("forward: spectrogram has " +
                                 (in.spec.ndim() == 2 ? std::to_string(in.spec.dim(0)) : shape_str(in.spec.shape())) +
                                 " mel bins, config expects " + std::to_string(cfg_.n_mels));
        }
        if (t_f == 0)
            throw ShapeError("forward: T_f must be given explicitly when only the dynamics stream is on");

        Tensor zv;
        if (cfg_.use_v) zv = visual_encode(in.visual);

        Tensor za;
        if (cfg_.fused_audio()) {
            Tensor zd = dynamics_->encode(in.spec, t_f, training);
            za = audio_fuse(in.semantic, zd);
        } else if (cfg_.use_as) {
            za = sa_s_->forward(in.semantic);
        } else if (cfg_.use_ad) {
            Tensor zd = dynamics_->encode(in.spec, t_f, training);
            za = sa_d_->forward(zd);
        }

        std::vector<Tensor> streams;
        if (cfg_.use_v) streams.push_back(zv);
        if (cfg_.any_audio()) streams.push_back(za);
        if (cfg_.use_v && cfg_.any_audio()) {
            CrossAttended ca = cross_attend(zv, za);
            streams.push_back(ca.s_v);
            streams.push_back(ca.s_a);
        }
        return predict_scores(streams);
    }

    DynamicsEncoder& dynamics() {
        if (!dynamics_) throw ShapeError("dynamics pathway disabled");
        return *dynamics_;
    }
    SelfAttentionBlock& visual_sa() { return *visual_sa_; }
    SelfAttentionBlock& semantic_sa() { return *sa_s_; }
    SelfAttentionBlock& dynamics_sa() { return *sa_d_; }
    SelfAttentionBlock& late_sa() { return *sa_late_; }
    CrossAttentionBlock& cross_av() { return *cross_av_; }
    CrossAttentionBlock& cross_va() { return *cross_va_; }
    ScoreHead& head() { return *head_; }

    void visit_state(const StateVisitor& fn) {
        if (visual_sa_) visual_sa_->visit("visual_sa", fn);
        if (dynamics_) dynamics_->visit("dyn", fn);
        if (sa_s_) sa_s_->visit("fuse.sa_s", fn);
        if (sa_d_) sa_d_->visit("fuse.sa_d", fn);
        if (sa_late_) sa_late_->visit("fuse.sa_late", fn);
        if (fuse_proj_) fuse_proj_->visit("fuse.proj", fn);
        if (cross_av_) cross_av_->visit("cross_av", fn);
        if (cross_va_) cross_va_->visit("cross_va", fn);
        if (head_) head_->visit("head", fn);
    }

    std::vector<Tensor> parameters() {
        std::vector<Tensor> out;
        visit_state([&](const std::string&, Tensor& t, bool learnable) {
            if (learnable) out.push_back(t);
        });
        return out;
    }

    std::vector<std::pair<std::string, Tensor>> named_parameters() {
        std::vector<std::pair<std::string, Tensor>> out;
        visit_state([&](const std::string& n, Tensor& t, bool learnable) {
            if (learnable) out.emplace_back(n, t);
        });
        return out;
    }

    void set_requires_grad(bool on) {
        for (Tensor& p : parameters()) p.set_requires_grad(on);
    }

    void zero_grad() {
        for (Tensor& p : parameters()) p.zero_grad();
    }

private:
    ModelConfig cfg_;
    std::unique_ptr<SelfAttentionBlock> visual_sa_;
    std::unique_ptr<DynamicsEncoder> dynamics_;
    std::unique_ptr<SelfAttentionBlock> sa_s_, sa_d_, sa_late_;
    std::unique_ptr<Linear> fuse_proj_;
    std::unique_ptr<CrossAttentionBlock> cross_av_, cross_va_;
    std::unique_ptr<ScoreHead> head_;
};

// Loads precomputed per-second semantic embeddings for one video.
inline Tensor semantic_ingest(const std::string& path, std::size_t t_f, std::size_t d_s) {
    DftTensor t = read_dft(path);
    if (t.shape.size() != 2 || t.shape[0] != t_f || t.shape[1] != d_s)
        throw DataError("semantic_ingest: " + path + " has shape " + shape_str(t.shape) +
                        ", expected [" + std::to_string(t_f) + "," + std::to_string(d_s) + "]");
    return t.to_tensor();
}

// ---------------------------------------------------------------------------
// DVHD1 checkpoints
// magic "DVHD1" | u64 config_len | config JSON | u64 n_entries |
// entries { u16 name_len | name | u8 learnable | u8 ndim | ndim x u64 dims |
// u64 offset } | concatenated DFT1 blobs at the recorded offsets.
// ---------------------------------------------------------------------------

inline std::string checkpoint_to_bytes(Model& model) {
    const std::string cfg = model.config().to_json().dump();
    struct Entry {
        std::string name;
        bool learnable;
        Shape shape;
        std::string blob;
    };
    std::vector<Entry> entries;
    model.visit_state([&](const std::string& n, Tensor& t, bool learnable) {
        entries.push_back({n, learnable, t.shape(), dft_to_bytes(DftTensor{DftDtype::f64, t.shape(), t.values()})});
    });
    std::string head = "DVHD1";
    dft_detail::put_u64(head, cfg.size());
    head += cfg;
    dft_detail::put_u64(head, entries.size());
    std::size_t table_len = 0;
    for (const Entry& e : entries) table_len += 2 + e.name.size() + 1 + 1 + 8 * e.shape.size() + 8;
    std::size_t offset = head.size() + table_len;
    std::string table, payload;
    for (const Entry& e : entries) {
        table.push_back(static_cast<char>(e.name.size() & 0xff));
        table.push_back(static_cast<char>((e.name.size() >> 8) & 0xff));
        table += e.name;
        table.push_back(e.learnable ? 1 : 0);
        table.push_back(static_cast<char>(e.shape.size()));
        for (std::size_t d : e.shape) dft_detail::put_u64(table, d);
        dft_detail::put_u64(table, offset);
        payload += e.blob;
        offset += e.blob.size();
    }
    return head + table + payload;
}

inline void save_checkpoint(const std::string& path, Model& model) {
    const std::string bytes = checkpoint_to_bytes(model);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("save_checkpoint: cannot open " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("save_checkpoint: write failed: " + path);
}

inline Model checkpoint_from_bytes(const std::string& bytes, const std::string& origin) {
    if (bytes.size() < 13 || bytes.compare(0, 5, "DVHD1") != 0)
        throw DataError("checkpoint: bad magic in " + origin);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    std::size_t off = 5;
    const std::uint64_t cfg_len = dft_detail::get_u64(p + off);
    off += 8;
    if (bytes.size() < off + cfg_len + 8) throw DataError("checkpoint: truncated config in " + origin);
    ModelConfig cfg;
    try {
        cfg = ModelConfig::from_json(nlohmann::json::parse(bytes.substr(off, cfg_len)));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint: bad config in " + origin + ": " + e.what());
    }
    off += cfg_len;
    const std::uint64_t n_entries = dft_detail::get_u64(p + off);
    off += 8;
    struct Entry {
        std::string name;
        Shape shape;
        std::uint64_t offset;
    };
    std::vector<Entry> entries;
    entries.reserve(n_entries);
    for (std::uint64_t i = 0; i < n_entries; ++i) {
        if (bytes.size() < off + 2) throw DataError("checkpoint: truncated table in " + origin);
        const std::size_t name_len = p[off] | (p[off + 1] << 8);
        off += 2;
        if (bytes.size() < off + name_len + 2) throw DataError("checkpoint: truncated table in " + origin);
        Entry e;
        e.name = bytes.substr(off, name_len);
        off += name_len;
        off += 1;  // learnable flag; reconstructed from the model structure
        const std::size_t ndim = p[off];
        off += 1;
        if (bytes.size() < off + 8 * ndim + 8) throw DataError("checkpoint: truncated table in " + origin);
        e.shape.resize(ndim);
        for (std::size_t d = 0; d < ndim; ++d, off += 8) e.shape[d] = dft_detail::get_u64(p + off);
        e.offset = dft_detail::get_u64(p + off);
        off += 8;
        entries.push_back(std::move(e));
    }

    Model model(cfg, 0);
    std::size_t assigned = 0;
    std::vector<std::string> missing;
    model.visit_state([&](const std::string& n, Tensor& t, bool) {
        const Entry* found = nullptr;
        for (const Entry& e : entries)
            if (e.name == n) {
                found = &e;
                break;
            }
        if (!found) {
            missing.push_back(n);
            return;
        }
        if (found->shape != t.shape())
            throw DataError("checkpoint: shape mismatch for " + n + " in " + origin);
        if (found->offset >= bytes.size())
            throw DataError("checkpoint: bad tensor offset for " + n + " in " + origin);
        // Tensor blobs run back-to-back; parse from the recorded offset.
        std::size_t blob_end = bytes.size();
        for (const Entry& e : entries)
            if (e.offset > found->offset) blob_end = std::min(blob_end, static_cast<std::size_t>(e.offset));
        DftTensor dt = dft_from_bytes(bytes.substr(found->offset, blob_end - found->offset), origin + ":" + n);
        if (dt.shape != t.shape()) throw DataError("checkpoint: payload shape mismatch for " + n);
        t.values() = dt.data;
        ++assigned;
    });
    if (!missing.empty())
        throw DataError("checkpoint: " + origin + " is missing tensor " + missing.front());
    if (assigned != entries.size())
        throw DataError("checkpoint: " + origin + " carries tensors unknown to this config");
    return model;
}

inline Model load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("load_checkpoint: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return checkpoint_from_bytes(ss.str(), path);
}

}  // namespace davihd
