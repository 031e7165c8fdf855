#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "davihd/tensor.hpp"

namespace davihd {

// Walks every named state tensor of a module tree. `learnable` is false for
// buffers (running statistics) that are checkpointed but not optimized.
using StateVisitor = std::function<void(const std::string& name, Tensor& t, bool learnable)>;

// Fan-in-scaled uniform initialization for weights, zeros for biases.
inline Tensor init_weight(Rng& rng, Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return Tensor::uniform(rng, std::move(shape), -bound, bound);
}

struct Linear {
    Tensor w;  // [in, out]
    Tensor b;  // [out]

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng)
        : w(init_weight(rng, {in, out}, in)), b(Tensor::zeros({out})) {}

    Tensor forward(const Tensor& x) const { return add_axis(matmul(x, w), b, x.ndim() - 1); }

    void visit(const std::string& prefix, const StateVisitor& fn) {
        fn(prefix + ".w", w, true);
        fn(prefix + ".b", b, true);
    }
};

struct LayerNorm {
    Tensor g, b;
    double eps = 1e-5;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t d, double eps_ = 1e-5)
        : g(Tensor::full({d}, 1.0)), b(Tensor::zeros({d})), eps(eps_) {}

    Tensor forward(const Tensor& x) const { return layer_norm(x, g, b, eps); }

    void visit(const std::string& prefix, const StateVisitor& fn) {
        fn(prefix + ".g", g, true);
        fn(prefix + ".b", b, true);
    }
};

struct Conv2dLayer {
    Tensor kernel;  // [Co, Ci, k, k]
    Tensor bias;    // [Co]
    std::size_t pad_f = 0, pad_t = 0;

    Conv2dLayer() = default;
    Conv2dLayer(std::size_t in_ch, std::size_t out_ch, std::size_t kf, std::size_t kt, Rng& rng)
        : kernel(init_weight(rng, {out_ch, in_ch, kf, kt}, in_ch * kf * kt)),
          bias(Tensor::zeros({out_ch})),
          pad_f((kf - 1) / 2),
          pad_t((kt - 1) / 2) {}

    Tensor forward(const Tensor& x) const {
        return add_axis(conv2d(x, kernel, 1, 1, pad_f, pad_t), bias, 0);
    }

    void visit(const std::string& prefix, const StateVisitor& fn) {
        fn(prefix + ".kernel", kernel, true);
        fn(prefix + ".bias", bias, true);
    }
};

inline void visit_batch_norm(BatchNorm2dState& bn, const std::string& prefix,
                             const StateVisitor& fn) {
    fn(prefix + ".g", bn.gamma, true);
    fn(prefix + ".b", bn.beta, true);
    fn(prefix + ".running_mean", bn.running_mean, false);
    fn(prefix + ".running_var", bn.running_var, false);
}

// Conv -> BatchNorm -> ReLU -> dimension-matching 1x1 conv. Shape-preserving
// on [C, F, T] apart from the channel count.
struct ConvBlock2d {
    Conv2dLayer conv;
    BatchNorm2dState bn;
    Conv2dLayer proj;  // 1x1

    ConvBlock2d() = default;
    ConvBlock2d(std::size_t in_ch, std::size_t hidden, std::size_t out_ch, std::size_t kf,
                std::size_t kt, Rng& rng, double bn_momentum, double bn_eps)
        : conv(in_ch, hidden, kf, kt, rng),
          bn(hidden, bn_momentum, bn_eps),
          proj(hidden, out_ch, 1, 1, rng) {}

    Tensor forward(const Tensor& x, bool training) {
        Tensor h = conv.forward(x);
        const std::size_t c = h.dim(0), f = h.dim(1), t = h.dim(2);
        h = reshape(h, {1, c, f, t});
        h = batch_norm2d(h, bn, training);
        h = reshape(h, {c, f, t});
        h = relu(h);
        return proj.forward(h);
    }

    void visit(const std::string& prefix, const StateVisitor& fn) {
        conv.visit(prefix + ".conv", fn);
        visit_batch_norm(bn, prefix + ".bn", fn);
        proj.visit(prefix + ".proj", fn);
    }
};

// One multi-head self-attention block with residual connection and layer
// normalization; no positional encoding, no feed-forward sub-layer.
struct SelfAttentionBlock {
    std::size_t heads = 1;
    Linear q, k, v, o;
    LayerNorm ln;
    mutable std::vector<Tensor> last_attn;  // per-head [T, T], row-stochastic

    SelfAttentionBlock() = default;
    SelfAttentionBlock(std::size_t d, std::size_t heads_, Rng& rng, double ln_eps = 1e-5)
        : heads(heads_), q(d, d, rng), k(d, d, rng), v(d, d, rng), o(d, d, rng), ln(d, ln_eps) {
        if (heads == 0 || d % heads != 0)
            throw ShapeError("self-attention: head count must divide the model dim");
    }

    Tensor forward(const Tensor& x) {
        const std::size_t d = q.w.dim(0);
        if (x.ndim() != 2 || x.dim(1) != d)
            throw ShapeError("self-attention: expected [T," + std::to_string(d) + "], got " +
                             shape_str(x.shape()));
        const std::size_t dk = d / heads;
        const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
        Tensor Q = q.forward(x), K = k.forward(x), V = v.forward(x);
        std::vector<Tensor> head_out;
        head_out.reserve(heads);
        last_attn.clear();
        for (std::size_t h = 0; h < heads; ++h) {
            Tensor qh = slice_cols(Q, h * dk, dk);
            Tensor kh = slice_cols(K, h * dk, dk);
            Tensor vh = slice_cols(V, h * dk, dk);
            Tensor attn = softmax(scale(matmul(qh, transpose2d(kh)), inv_sqrt_dk), 1);
            last_attn.push_back(attn);
            head_out.push_back(matmul(attn, vh));
        }
        Tensor ctx = heads == 1 ? head_out[0] : concat_cols(head_out);
        return ln.forward(add(x, o.forward(ctx)));
    }

    void visit(const std::string& prefix, const StateVisitor& fn) {
        q.visit(prefix + ".q", fn);
        k.visit(prefix + ".k", fn);
        v.visit(prefix + ".v", fn);
        o.visit(prefix + ".o", fn);
        ln.visit(prefix + ".ln", fn);
    }
};

// Multi-head attention where one stream queries another. Output lives in the
// query stream's dimension; the caller adds the residual.
struct CrossAttentionBlock {
    std::size_t heads = 1;
    Linear q, k, v, o;
    mutable std::vector<Tensor> last_attn;

    CrossAttentionBlock() = default;
    CrossAttentionBlock(std::size_t d_query, std::size_t d_context, std::size_t heads_, Rng& rng)
        : heads(heads_),
          q(d_query, d_query, rng),
          k(d_context, d_query, rng),
          v(d_context, d_query, rng),
          o(d_query, d_query, rng) {
        if (heads == 0 || d_query % heads != 0)
            throw ShapeError("cross-attention: head count must divide the query dim");
    }

    Tensor forward(const Tensor& query_x, const Tensor& context_x) {
        if (query_x.dim(0) != context_x.dim(0))
            throw ShapeError("cross-attention: sequence length mismatch");
        const std::size_t d = q.w.dim(1);
        const std::size_t dk = d / heads;
        const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
        Tensor Q = q.forward(query_x), K = k.forward(context_x), V = v.forward(context_x);
        std::vector<Tensor> head_out;
        head_out.reserve(heads);
        last_attn.clear();
        for (std::size_t h = 0; h < heads; ++h) {
            Tensor qh = slice_cols(Q, h * dk, dk);
            Tensor kh = slice_cols(K, h * dk, dk);
            Tensor vh = slice_cols(V, h * dk, dk);
            Tensor attn = softmax(scale(matmul(qh, transpose2d(kh)), inv_sqrt_dk), 1);
            last_attn.push_back(attn);
            head_out.push_back(matmul(attn, vh));
        }
        Tensor ctx = heads == 1 ? head_out[0] : concat_cols(head_out);
        return o.forward(ctx);
    }

    void visit(const std::string& prefix, const StateVisitor& fn) {
        q.visit(prefix + ".q", fn);
        k.visit(prefix + ".k", fn);
        v.visit(prefix + ".v", fn);
        o.visit(prefix + ".o", fn);
    }
};

// 3-layer MLP with ReLU hidden activations and a sigmoid output, applied
// per segment: [T, d_in] -> [T, 1] in (0, 1).
struct ScoreHead {
    Linear l1, l2, l3;

    ScoreHead() = default;
    ScoreHead(std::size_t d_in, Rng& rng)
        : l1(d_in, std::max<std::size_t>(d_in / 2, 1), rng),
          l2(std::max<std::size_t>(d_in / 2, 1), std::max<std::size_t>(d_in / 4, 1), rng),
          l3(std::max<std::size_t>(d_in / 4, 1), 1, rng) {}

    Tensor forward(const Tensor& x) const {
        return sigmoid(l3.forward(relu(l2.forward(relu(l1.forward(x))))));
    }

    void visit(const std::string& prefix, const StateVisitor& fn) {
        l1.visit(prefix + ".l1", fn);
        l2.visit(prefix + ".l2", fn);
        l3.visit(prefix + ".l3", fn);
    }
};

}  // namespace davihd
