#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "c2kd/errors.hpp"
#include "c2kd/io.hpp"
#include "c2kd/kernel.hpp"
#include "c2kd/rng.hpp"
#include "c2kd/tensor.hpp"

// Text and video encoders: mean-pooling over feature sequences, an optional
// self-attention stack on the video side, a gated projection into the shared
// embedding space and L2 normalization. Every forward path has a matching
// hand-derived vjp so the whole student objective is differentiable without
// a tape.

namespace c2kd {

inline constexpr double kLayerNormEps = 1e-5;

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Parameter containers
// ---------------------------------------------------------------------------

// Shared projection + gate tail used by both heads. Weights are (out x in);
// a row vector u maps to u W^T + b.
struct TextHead {
    std::size_t in_dim = 0;
    std::size_t embed_dim = 0;
    std::size_t max_tokens = 40;
    Tensor2D w_proj;  // embed_dim x in_dim
    Tensor2D b_proj;  // 1 x embed_dim
    Tensor2D w_gate;  // embed_dim x embed_dim
    Tensor2D b_gate;  // 1 x embed_dim
};

struct AttentionLayer {
    Tensor2D w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;  // width x width, 1 x width
    Tensor2D ln1_gamma, ln1_beta;                     // 1 x width
    Tensor2D ff_w1, ff_b1;                            // ff_dim x width, 1 x ff_dim
    Tensor2D ff_w2, ff_b2;                            // width x ff_dim, 1 x width
    Tensor2D ln2_gamma, ln2_beta;                     // 1 x width
};

struct VideoHead {
    std::size_t in_dim = 0;
    std::size_t embed_dim = 0;
    std::size_t max_frames = 30;
    bool use_attention = false;
    std::size_t n_heads = 4;
    std::size_t ff_dim = 0;
    std::vector<AttentionLayer> layers;  // attention operates at width in_dim
    Tensor2D w_proj;                     // embed_dim x in_dim
    Tensor2D b_proj;
    Tensor2D w_gate;
    Tensor2D b_gate;
};

struct ModelParams {
    TextHead text;
    VideoHead video;
    bool frozen = false;

    std::vector<ParamRef> params();
    std::vector<ParamRef> params() const;
};

// Single source of truth for parameter ordering; initialization, gradient
// views and the checkpoint format all follow this visit order.
template <typename Fn>
void visit_tensors(TextHead& h, const std::string& prefix, Fn&& fn) {
    fn(prefix + ".proj.w", h.w_proj);
    fn(prefix + ".proj.b", h.b_proj);
    fn(prefix + ".gate.w", h.w_gate);
    fn(prefix + ".gate.b", h.b_gate);
}

template <typename Fn>
void visit_tensors(AttentionLayer& l, const std::string& prefix, Fn&& fn) {
    fn(prefix + ".attn.wq", l.w_q);
    fn(prefix + ".attn.bq", l.b_q);
    fn(prefix + ".attn.wk", l.w_k);
    fn(prefix + ".attn.bk", l.b_k);
    fn(prefix + ".attn.wv", l.w_v);
    fn(prefix + ".attn.bv", l.b_v);
    fn(prefix + ".attn.wo", l.w_o);
    fn(prefix + ".attn.bo", l.b_o);
    fn(prefix + ".ln1.gamma", l.ln1_gamma);
    fn(prefix + ".ln1.beta", l.ln1_beta);
    fn(prefix + ".ff.w1", l.ff_w1);
    fn(prefix + ".ff.b1", l.ff_b1);
    fn(prefix + ".ff.w2", l.ff_w2);
    fn(prefix + ".ff.b2", l.ff_b2);
    fn(prefix + ".ln2.gamma", l.ln2_gamma);
    fn(prefix + ".ln2.beta", l.ln2_beta);
}

template <typename Fn>
void visit_tensors(VideoHead& h, const std::string& prefix, Fn&& fn) {
    for (std::size_t i = 0; i < h.layers.size(); ++i)
        visit_tensors(h.layers[i], prefix + ".layer" + std::to_string(i), fn);
    fn(prefix + ".proj.w", h.w_proj);
    fn(prefix + ".proj.b", h.b_proj);
    fn(prefix + ".gate.w", h.w_gate);
    fn(prefix + ".gate.b", h.b_gate);
}

template <typename Fn>
void visit_tensors(ModelParams& m, Fn&& fn) {
    visit_tensors(m.text, "text", fn);
    visit_tensors(m.video, "video", fn);
}

inline std::vector<ParamRef> ModelParams::params() {
    std::vector<ParamRef> out;
    visit_tensors(*this, [&](const std::string& name, Tensor2D& t) { out.push_back({name, &t}); });
    return out;
}

inline std::vector<ParamRef> ModelParams::params() const {
    return const_cast<ModelParams*>(this)->params();
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

struct EncoderDims {
    std::size_t text_dim = 0;
    std::size_t video_dim = 0;
    std::size_t embed_dim = 512;
    std::size_t max_tokens = 40;
    std::size_t max_frames = 30;
    bool video_attention = false;
    std::size_t attn_layers = 2;
    std::size_t attn_heads = 4;
    std::size_t ff_dim = 0;  // 0 -> 4 * video_dim
};

namespace detail {

inline void init_uniform(Tensor2D& t, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
}

inline void init_linear(Tensor2D& w, Tensor2D& b, std::size_t out, std::size_t in, Rng& rng) {
    w = Tensor2D(out, in);
    b = Tensor2D(1, out);
    init_uniform(w, in, rng);
    init_uniform(b, in, rng);
}

}  // namespace detail

inline TextHead init_text_head(std::size_t in_dim, std::size_t embed_dim, std::size_t max_tokens, Rng& rng) {
    TextHead h;
    h.in_dim = in_dim;
    h.embed_dim = embed_dim;
    h.max_tokens = max_tokens;
    detail::init_linear(h.w_proj, h.b_proj, embed_dim, in_dim, rng);
    detail::init_linear(h.w_gate, h.b_gate, embed_dim, embed_dim, rng);
    return h;
}

inline AttentionLayer init_attention_layer(std::size_t width, std::size_t ff_dim, Rng& rng) {
    AttentionLayer l;
    detail::init_linear(l.w_q, l.b_q, width, width, rng);
    detail::init_linear(l.w_k, l.b_k, width, width, rng);
    detail::init_linear(l.w_v, l.b_v, width, width, rng);
    detail::init_linear(l.w_o, l.b_o, width, width, rng);
    l.ln1_gamma = Tensor2D(1, width, 1.0);
    l.ln1_beta = Tensor2D(1, width, 0.0);
    detail::init_linear(l.ff_w1, l.ff_b1, ff_dim, width, rng);
    detail::init_linear(l.ff_w2, l.ff_b2, width, ff_dim, rng);
    l.ln2_gamma = Tensor2D(1, width, 1.0);
    l.ln2_beta = Tensor2D(1, width, 0.0);
    return l;
}

inline VideoHead init_video_head(const EncoderDims& dims, Rng& rng) {
    VideoHead h;
    h.in_dim = dims.video_dim;
    h.embed_dim = dims.embed_dim;
    h.max_frames = dims.max_frames;
    h.use_attention = dims.video_attention;
    if (h.use_attention) {
        if (dims.attn_heads == 0 || dims.video_dim % dims.attn_heads != 0)
            throw ConfigError("video attention: head count " + std::to_string(dims.attn_heads) +
                              " does not divide width " + std::to_string(dims.video_dim));
        h.n_heads = dims.attn_heads;
        h.ff_dim = dims.ff_dim ? dims.ff_dim : 4 * dims.video_dim;
        for (std::size_t i = 0; i < dims.attn_layers; ++i)
            h.layers.push_back(init_attention_layer(dims.video_dim, h.ff_dim, rng));
    }
    detail::init_linear(h.w_proj, h.b_proj, dims.embed_dim, dims.video_dim, rng);
    detail::init_linear(h.w_gate, h.b_gate, dims.embed_dim, dims.embed_dim, rng);
    return h;
}

inline ModelParams init_model(const EncoderDims& dims, std::uint64_t seed) {
    if (dims.text_dim == 0 || dims.video_dim == 0 || dims.embed_dim == 0)
        throw ConfigError("encoder dims must be positive");
    ModelParams m;
    Rng text_rng(derive_seed(seed, {1}));
    Rng video_rng(derive_seed(seed, {2}));
    m.text = init_text_head(dims.text_dim, dims.embed_dim, dims.max_tokens, text_rng);
    m.video = init_video_head(dims, video_rng);
    return m;
}

// ---------------------------------------------------------------------------
// Forward passes with caches
// ---------------------------------------------------------------------------

// Multiplicative sigmoid gate on an already-projected vector:
// out_i = x_i * sigmoid((W_g x + b_g)_i)
inline Tensor2D context_gate(const Tensor2D& x, const Tensor2D& w_gate, const Tensor2D& b_gate) {
    if (x.rows != 1 || x.cols != w_gate.cols)
        throw ShapeError("context_gate: input " + x.shape_str() + " vs gate " + w_gate.shape_str());
    Tensor2D pre = matmul(x, transpose(w_gate));
    pre += b_gate;
    Tensor2D out(1, x.cols);
    for (std::size_t c = 0; c < x.cols; ++c) out(0, c) = x(0, c) * sigmoid(pre(0, c));
    return out;
}

struct GateCache {
    Tensor2D pooled;      // 1 x in_dim input to the projection
    Tensor2D projected;   // 1 x d
    Tensor2D gate_sig;    // 1 x d, sigmoid of gate pre-activation
    Tensor2D gated;       // 1 x d
    Tensor2D embedding;   // 1 x d, unit norm
};

namespace detail {

// pooled -> projection -> gate -> normalize, shared by both heads.
template <typename Head>
Tensor2D project_gate_normalize(const Tensor2D& pooled, const Head& h, GateCache* cache) {
    Tensor2D y = matmul(pooled, transpose(h.w_proj));
    y += h.b_proj;
    Tensor2D pre = matmul(y, transpose(h.w_gate));
    pre += h.b_gate;
    Tensor2D sig(1, y.cols);
    Tensor2D z(1, y.cols);
    for (std::size_t c = 0; c < y.cols; ++c) {
        sig(0, c) = sigmoid(pre(0, c));
        z(0, c) = y(0, c) * sig(0, c);
    }
    Tensor2D e = l2_normalize_rows(z);
    if (cache) *cache = {pooled, y, sig, z, e};
    return e;
}

// Accumulates projection/gate parameter gradients and returns d(pooled).
template <typename Head>
Tensor2D project_gate_normalize_vjp(const Head& h, const GateCache& c, const Tensor2D& d_emb,
                                    Tensor2D& d_w_proj, Tensor2D& d_b_proj,
                                    Tensor2D& d_w_gate, Tensor2D& d_b_gate) {
    const std::size_t d = d_emb.cols;
    Tensor2D dz = l2_normalize_rows_vjp(c.gated, c.embedding, d_emb);
    Tensor2D dy(1, d), da(1, d);
    for (std::size_t i = 0; i < d; ++i) {
        const double s = c.gate_sig(0, i);
        dy(0, i) = dz(0, i) * s;
        da(0, i) = dz(0, i) * c.projected(0, i) * s * (1.0 - s);
    }
    // gate linear: pre = y W_g^T + b_g
    d_w_gate += matmul(transpose(da), c.projected);
    d_b_gate += da;
    dy += matmul(da, h.w_gate);
    // projection linear: y = pooled W_p^T + b_p
    d_w_proj += matmul(transpose(dy), c.pooled);
    d_b_proj += dy;
    return matmul(dy, h.w_proj);
}

inline Tensor2D truncate_rows(const Tensor2D& x, std::size_t max_rows) {
    if (x.rows <= max_rows) return x;
    Tensor2D out(max_rows, x.cols);
    std::copy(x.data.begin(), x.data.begin() + max_rows * x.cols, out.data.begin());
    return out;
}

}  // namespace detail

struct LayerNormCache {
    Tensor2D xhat;            // T x w
    std::vector<double> istd; // per row
};

inline Tensor2D layer_norm(const Tensor2D& x, const Tensor2D& gamma, const Tensor2D& beta, LayerNormCache* cache) {
    const std::size_t w = x.cols;
    Tensor2D out(x.rows, w);
    Tensor2D xhat(x.rows, w);
    std::vector<double> istd(x.rows);
    for (std::size_t r = 0; r < x.rows; ++r) {
        double mu = 0.0;
        for (std::size_t c = 0; c < w; ++c) mu += x(r, c);
        mu /= static_cast<double>(w);
        double var = 0.0;
        for (std::size_t c = 0; c < w; ++c) {
            const double d = x(r, c) - mu;
            var += d * d;
        }
        var /= static_cast<double>(w);
        istd[r] = 1.0 / std::sqrt(var + kLayerNormEps);
        for (std::size_t c = 0; c < w; ++c) {
            xhat(r, c) = (x(r, c) - mu) * istd[r];
            out(r, c) = gamma(0, c) * xhat(r, c) + beta(0, c);
        }
    }
    if (cache) *cache = {std::move(xhat), std::move(istd)};
    return out;
}

inline Tensor2D layer_norm_vjp(const LayerNormCache& cache, const Tensor2D& gamma, const Tensor2D& d_out,
                               Tensor2D& d_gamma, Tensor2D& d_beta) {
    const std::size_t w = d_out.cols;
    Tensor2D dx(d_out.rows, w);
    for (std::size_t r = 0; r < d_out.rows; ++r) {
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (std::size_t c = 0; c < w; ++c) {
            const double dxhat = d_out(r, c) * gamma(0, c);
            d_gamma(0, c) += d_out(r, c) * cache.xhat(r, c);
            d_beta(0, c) += d_out(r, c);
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * cache.xhat(r, c);
        }
        mean_dxhat /= static_cast<double>(w);
        mean_dxhat_xhat /= static_cast<double>(w);
        for (std::size_t c = 0; c < w; ++c) {
            const double dxhat = d_out(r, c) * gamma(0, c);
            dx(r, c) = cache.istd[r] * (dxhat - mean_dxhat - cache.xhat(r, c) * mean_dxhat_xhat);
        }
    }
    return dx;
}

struct AttentionCache {
    Tensor2D input;                 // T x w
    Tensor2D q, k, v;               // T x w
    std::vector<Tensor2D> attn;     // per head: T x T softmax weights
    Tensor2D concat;                // T x w
    Tensor2D attn_out;              // T x w
    LayerNormCache ln1;
    Tensor2D n1;                    // T x w
    Tensor2D ff_pre;                // T x ff_dim
    Tensor2D ff_act;                // T x ff_dim
    LayerNormCache ln2;
};

namespace detail {

inline Tensor2D linear_seq(const Tensor2D& x, const Tensor2D& w, const Tensor2D& b) {
    Tensor2D y = matmul(x, transpose(w));
    for (std::size_t r = 0; r < y.rows; ++r)
        for (std::size_t c = 0; c < y.cols; ++c) y(r, c) += b(0, c);
    return y;
}

// dX for Y = X W^T + b, accumulating dW and db.
inline Tensor2D linear_seq_vjp(const Tensor2D& x, const Tensor2D& w, const Tensor2D& dy,
                               Tensor2D& dw, Tensor2D& db) {
    dw += matmul(transpose(dy), x);
    for (std::size_t r = 0; r < dy.rows; ++r)
        for (std::size_t c = 0; c < dy.cols; ++c) db(0, c) += dy(r, c);
    return matmul(dy, w);
}

}  // namespace detail

// One post-LN transformer encoder layer: multi-head scaled dot-product
// attention with residual + layer norm, then a position-wise feed-forward
// (ReLU) with residual + layer norm. No positional embeddings, no dropout.
inline Tensor2D self_attention_block(const Tensor2D& x, const AttentionLayer& l, std::size_t n_heads,
                                     AttentionCache* cache = nullptr) {
    const std::size_t w = x.cols;
    if (n_heads == 0 || w % n_heads != 0)
        throw ConfigError("self_attention_block: head count " + std::to_string(n_heads) +
                          " does not divide width " + std::to_string(w));
    const std::size_t hd = w / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const std::size_t T = x.rows;

    Tensor2D q = detail::linear_seq(x, l.w_q, l.b_q);
    Tensor2D k = detail::linear_seq(x, l.w_k, l.b_k);
    Tensor2D v = detail::linear_seq(x, l.w_v, l.b_v);

    std::vector<Tensor2D> attn(n_heads);
    Tensor2D concat(T, w);
    for (std::size_t h = 0; h < n_heads; ++h) {
        Tensor2D scores(T, T);
        for (std::size_t i = 0; i < T; ++i)
            for (std::size_t j = 0; j < T; ++j)
                scores(i, j) = scale * dot(q.row(i) + h * hd, k.row(j) + h * hd, hd);
        attn[h] = softmax_rows(scores, 1.0);
        for (std::size_t i = 0; i < T; ++i)
            for (std::size_t j = 0; j < T; ++j)
                for (std::size_t c = 0; c < hd; ++c)
                    concat(i, h * hd + c) += attn[h](i, j) * v(j, h * hd + c);
    }
    Tensor2D attn_out = detail::linear_seq(concat, l.w_o, l.b_o);

    Tensor2D r1 = x;
    r1 += attn_out;
    LayerNormCache ln1;
    Tensor2D n1 = layer_norm(r1, l.ln1_gamma, l.ln1_beta, &ln1);

    Tensor2D ff_pre = detail::linear_seq(n1, l.ff_w1, l.ff_b1);
    Tensor2D ff_act = ff_pre;
    for (double& vv : ff_act.data) vv = std::max(vv, 0.0);
    Tensor2D ff_out = detail::linear_seq(ff_act, l.ff_w2, l.ff_b2);

    Tensor2D r2 = n1;
    r2 += ff_out;
    LayerNormCache ln2;
    Tensor2D out = layer_norm(r2, l.ln2_gamma, l.ln2_beta, &ln2);

    if (cache)
        *cache = {x, std::move(q), std::move(k), std::move(v), std::move(attn), std::move(concat),
                  std::move(attn_out), std::move(ln1), std::move(n1), std::move(ff_pre),
                  std::move(ff_act), std::move(ln2)};
    return out;
}

// Named gradient slots for one attention layer, in visit order.
struct AttnGrads {
    Tensor2D *w_q, *b_q, *w_k, *b_k, *w_v, *b_v, *w_o, *b_o;
    Tensor2D *ln1_gamma, *ln1_beta, *ff_w1, *ff_b1, *ff_w2, *ff_b2, *ln2_gamma, *ln2_beta;
};

inline Tensor2D self_attention_block_vjp(const AttentionLayer& l, std::size_t n_heads,
                                         const AttentionCache& c, const Tensor2D& d_out,
                                         const AttnGrads& g) {
    const std::size_t w = d_out.cols;
    const std::size_t hd = w / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const std::size_t T = d_out.rows;

    Tensor2D dr2 = layer_norm_vjp(c.ln2, l.ln2_gamma, d_out, *g.ln2_gamma, *g.ln2_beta);
    Tensor2D dn1 = dr2;  // residual branch
    Tensor2D dff_act = detail::linear_seq_vjp(c.ff_act, l.ff_w2, dr2, *g.ff_w2, *g.ff_b2);
    for (std::size_t i = 0; i < dff_act.data.size(); ++i)
        if (c.ff_pre.data[i] <= 0.0) dff_act.data[i] = 0.0;
    dn1 += detail::linear_seq_vjp(c.n1, l.ff_w1, dff_act, *g.ff_w1, *g.ff_b1);

    Tensor2D dr1 = layer_norm_vjp(c.ln1, l.ln1_gamma, dn1, *g.ln1_gamma, *g.ln1_beta);
    Tensor2D dx = dr1;  // residual branch
    Tensor2D dconcat = detail::linear_seq_vjp(c.concat, l.w_o, dr1, *g.w_o, *g.b_o);

    Tensor2D dq(T, w), dk(T, w), dv(T, w);
    for (std::size_t h = 0; h < n_heads; ++h) {
        const Tensor2D& a = c.attn[h];
        Tensor2D da(T, T);
        for (std::size_t i = 0; i < T; ++i)
            for (std::size_t j = 0; j < T; ++j) {
                da(i, j) = dot(dconcat.row(i) + h * hd, c.v.row(j) + h * hd, hd);
                for (std::size_t cc = 0; cc < hd; ++cc)
                    dv(j, h * hd + cc) += a(i, j) * dconcat(i, h * hd + cc);
            }
        Tensor2D ds = softmax_rows_vjp(a, da, 1.0);
        for (std::size_t i = 0; i < T; ++i)
            for (std::size_t j = 0; j < T; ++j) {
                const double s = scale * ds(i, j);
                for (std::size_t cc = 0; cc < hd; ++cc) {
                    dq(i, h * hd + cc) += s * c.k(j, h * hd + cc);
                    dk(j, h * hd + cc) += s * c.q(i, h * hd + cc);
                }
            }
    }
    dx += detail::linear_seq_vjp(c.input, l.w_q, dq, *g.w_q, *g.b_q);
    dx += detail::linear_seq_vjp(c.input, l.w_k, dk, *g.w_k, *g.b_k);
    dx += detail::linear_seq_vjp(c.input, l.w_v, dv, *g.w_v, *g.b_v);
    return dx;
}

// ---------------------------------------------------------------------------
// Encoder entry points
// ---------------------------------------------------------------------------

struct TextCache {
    Tensor2D tokens;  // truncated input actually used
    GateCache gate;
};

inline Tensor2D embed_text(const Tensor2D& tokens, const TextHead& h, TextCache* cache = nullptr) {
    if (tokens.rows == 0) throw InputError("embed_text: empty token sequence");
    if (tokens.cols != h.in_dim)
        throw ShapeError("embed_text: token dim " + std::to_string(tokens.cols) + " vs head " +
                         std::to_string(h.in_dim));
    Tensor2D used = detail::truncate_rows(tokens, h.max_tokens);
    Tensor2D pooled = mean_rows(used);
    GateCache gc;
    Tensor2D e = detail::project_gate_normalize(pooled, h, &gc);
    if (cache) *cache = {std::move(used), std::move(gc)};
    return e;
}

struct VideoCache {
    Tensor2D frames;  // truncated input actually used
    std::vector<AttentionCache> attn;
    GateCache gate;
};

inline Tensor2D embed_video(const Tensor2D& frames, const VideoHead& h, VideoCache* cache = nullptr) {
    if (frames.rows == 0) throw InputError("embed_video: empty frame sequence");
    if (frames.cols != h.in_dim)
        throw ShapeError("embed_video: frame dim " + std::to_string(frames.cols) + " vs head " +
                         std::to_string(h.in_dim));
    Tensor2D used = detail::truncate_rows(frames, h.max_frames);
    std::vector<AttentionCache> attn_caches;
    Tensor2D seq = used;
    if (h.use_attention) {
        attn_caches.resize(h.layers.size());
        for (std::size_t i = 0; i < h.layers.size(); ++i)
            seq = self_attention_block(seq, h.layers[i], h.n_heads, &attn_caches[i]);
    }
    Tensor2D pooled = mean_rows(seq);
    GateCache gc;
    Tensor2D e = detail::project_gate_normalize(pooled, h, &gc);
    if (cache) *cache = {std::move(used), std::move(attn_caches), std::move(gc)};
    return e;
}

// Stacks per-example embeddings into a B x d matrix.
inline Tensor2D embed_text_batch(const std::vector<const Tensor2D*>& sequences, const TextHead& h,
                                 std::vector<TextCache>* caches = nullptr) {
    Tensor2D out(sequences.size(), h.embed_dim);
    if (caches) caches->resize(sequences.size());
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        Tensor2D e = embed_text(*sequences[i], h, caches ? &(*caches)[i] : nullptr);
        std::copy(e.data.begin(), e.data.end(), out.row(i));
    }
    return out;
}

inline Tensor2D embed_video_batch(const std::vector<const Tensor2D*>& sequences, const VideoHead& h,
                                  std::vector<VideoCache>* caches = nullptr) {
    Tensor2D out(sequences.size(), h.embed_dim);
    if (caches) caches->resize(sequences.size());
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        Tensor2D e = embed_video(*sequences[i], h, caches ? &(*caches)[i] : nullptr);
        std::copy(e.data.begin(), e.data.end(), out.row(i));
    }
    return out;
}

// Gradient views over a Gradients store, resolved by name once per run.
struct TextGrads {
    Tensor2D *w_proj, *b_proj, *w_gate, *b_gate;
};
struct VideoGrads {
    std::vector<AttnGrads> layers;
    Tensor2D *w_proj, *b_proj, *w_gate, *b_gate;
};
struct ModelGrads {
    TextGrads text;
    VideoGrads video;

    static ModelGrads view(const ModelParams& m, Gradients& g) {
        ModelGrads v;
        v.text = {&g.find("text.proj.w"), &g.find("text.proj.b"), &g.find("text.gate.w"), &g.find("text.gate.b")};
        for (std::size_t i = 0; i < m.video.layers.size(); ++i) {
            const std::string p = "video.layer" + std::to_string(i);
            AttnGrads a;
            a.w_q = &g.find(p + ".attn.wq");
            a.b_q = &g.find(p + ".attn.bq");
            a.w_k = &g.find(p + ".attn.wk");
            a.b_k = &g.find(p + ".attn.bk");
            a.w_v = &g.find(p + ".attn.wv");
            a.b_v = &g.find(p + ".attn.bv");
            a.w_o = &g.find(p + ".attn.wo");
            a.b_o = &g.find(p + ".attn.bo");
            a.ln1_gamma = &g.find(p + ".ln1.gamma");
            a.ln1_beta = &g.find(p + ".ln1.beta");
            a.ff_w1 = &g.find(p + ".ff.w1");
            a.ff_b1 = &g.find(p + ".ff.b1");
            a.ff_w2 = &g.find(p + ".ff.w2");
            a.ff_b2 = &g.find(p + ".ff.b2");
            a.ln2_gamma = &g.find(p + ".ln2.gamma");
            a.ln2_beta = &g.find(p + ".ln2.beta");
            v.video.layers.push_back(a);
        }
        v.video.w_proj = &g.find("video.proj.w");
        v.video.b_proj = &g.find("video.proj.b");
        v.video.w_gate = &g.find("video.gate.w");
        v.video.b_gate = &g.find("video.gate.b");
        return v;
    }
};

inline void embed_text_vjp(const TextHead& h, const TextCache& c, const Tensor2D& d_emb, TextGrads& g) {
    detail::project_gate_normalize_vjp(h, c.gate, d_emb, *g.w_proj, *g.b_proj, *g.w_gate, *g.b_gate);
    // tokens are data, their gradient is discarded
}

inline void embed_video_vjp(const VideoHead& h, const VideoCache& c, const Tensor2D& d_emb, VideoGrads& g) {
    Tensor2D d_pooled =
        detail::project_gate_normalize_vjp(h, c.gate, d_emb, *g.w_proj, *g.b_proj, *g.w_gate, *g.b_gate);
    if (!h.use_attention) return;
    const std::size_t T = c.attn.empty() ? c.frames.rows : c.attn.back().input.rows;
    Tensor2D d_seq(T, h.in_dim);
    for (std::size_t r = 0; r < T; ++r)
        for (std::size_t cc = 0; cc < h.in_dim; ++cc)
            d_seq(r, cc) = d_pooled(0, cc) / static_cast<double>(T);
    for (std::size_t i = h.layers.size(); i-- > 0;)
        d_seq = self_attention_block_vjp(h.layers[i], h.n_heads, c.attn[i], d_seq, g.layers[i]);
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------
//
// Magic "C2KM", then little-endian:
//   u16 version (= 1)
//   u16 flags   (bit0 frozen, bit1 video attention)
//   u32 text_in_dim, u32 video_in_dim, u32 embed_dim
//   u32 max_tokens, u32 max_frames
//   u32 attn_layers, u32 attn_heads, u32 ff_dim   (all 0 when attention off)
// followed by every weight matrix as raw IEEE-754 64-bit little-endian values
// in visit order. Round-trips bit-exactly.

inline constexpr char kModelMagic[4] = {'C', '2', 'K', 'M'};
inline constexpr std::uint16_t kModelVersion = 1;

inline std::string serialize_model(const ModelParams& m) {
    std::string out;
    out.append(kModelMagic, 4);
    detail::put_u16(out, kModelVersion);
    std::uint16_t flags = 0;
    if (m.frozen) flags |= 1;
    if (m.video.use_attention) flags |= 2;
    detail::put_u16(out, flags);
    detail::put_u32(out, static_cast<std::uint32_t>(m.text.in_dim));
    detail::put_u32(out, static_cast<std::uint32_t>(m.video.in_dim));
    detail::put_u32(out, static_cast<std::uint32_t>(m.text.embed_dim));
    detail::put_u32(out, static_cast<std::uint32_t>(m.text.max_tokens));
    detail::put_u32(out, static_cast<std::uint32_t>(m.video.max_frames));
    detail::put_u32(out, static_cast<std::uint32_t>(m.video.use_attention ? m.video.layers.size() : 0));
    detail::put_u32(out, static_cast<std::uint32_t>(m.video.use_attention ? m.video.n_heads : 0));
    detail::put_u32(out, static_cast<std::uint32_t>(m.video.use_attention ? m.video.ff_dim : 0));
    visit_tensors(const_cast<ModelParams&>(m), [&](const std::string&, Tensor2D& t) {
        for (double v : t.data) detail::put_f64(out, v);
    });
    return out;
}

inline void save_model(const ModelParams& m, const std::string& path) {
    detail::write_file_bytes(path, serialize_model(m));
}

inline ModelParams deserialize_model(const std::string& bytes) {
    detail::ByteReader r{bytes};
    r.need(4, "magic");
    if (std::memcmp(bytes.data(), kModelMagic, 4) != 0) throw FormatError("bad checkpoint magic", 0);
    r.pos = 4;
    const std::uint16_t version = r.u16("version");
    if (version != kModelVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
    const std::uint16_t flags = r.u16("flags");
    EncoderDims dims;
    dims.text_dim = r.u32("text_in_dim");
    dims.video_dim = r.u32("video_in_dim");
    dims.embed_dim = r.u32("embed_dim");
    dims.max_tokens = r.u32("max_tokens");
    dims.max_frames = r.u32("max_frames");
    dims.attn_layers = r.u32("attn_layers");
    dims.attn_heads = r.u32("attn_heads");
    dims.ff_dim = r.u32("ff_dim");
    dims.video_attention = (flags & 2) != 0;
    ModelParams m = init_model(dims, 0);
    m.frozen = (flags & 1) != 0;
    visit_tensors(m, [&](const std::string& name, Tensor2D& t) {
        for (double& v : t.data) v = r.f64(name.c_str());
    });
    if (r.pos != bytes.size()) throw FormatError("trailing bytes after checkpoint payload", r.pos);
    return m;
}

inline ModelParams load_model(const std::string& path) {
    return deserialize_model(detail::read_file_bytes(path));
}

}  // namespace c2kd
