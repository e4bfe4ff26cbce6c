#pragma once

// Patch embedding and the frame-level transformer stack, with the temporal
// context pipeline wired in layer-wise: layers listed in tc_layers summarize
// their interim tokens into a fresh context set after attention, and every
// later layer attends against the most recent context set.

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

#include "vtc/context.hpp"
#include "vtc/tensor.hpp"

namespace vtc {

struct VideoClip {
    std::size_t frames = 0, height = 0, width = 0;
    std::vector<double> pixels;  // T x H x W x 3, row-major, values in [0,1]
    int label = -1;

    double at(std::size_t t, std::size_t y, std::size_t x, std::size_t c) const {
        return pixels[((t * height + y) * width + x) * 3 + c];
    }
};

struct VisionConfig {
    std::size_t frames = 8;
    std::size_t height = 32, width = 32, patch = 8;
    std::size_t d_v = 64;
    std::size_t heads = 4;
    std::size_t layers = 4;
    double alpha = 0.3;
    std::size_t context_k = 8;
    AggregationOptions agg;
    std::vector<std::size_t> tc_layers{2, 3, 4};  // 1-based producer layers
    bool tc_enabled = true;

    std::size_t n_patches() const { return (height / patch) * (width / patch); }

    void validate() const {
        if (height % patch != 0 || width % patch != 0)
            throw std::invalid_argument("vision config: H and W must be multiples of P");
        if (frames < 1) throw std::invalid_argument("vision config: T must be >= 1");
        if (d_v % heads != 0)
            throw std::invalid_argument("vision config: heads must divide d_v");
        if (context_k < 1) throw std::invalid_argument("vision config: k must be >= 1");
        for (std::size_t l : tc_layers) {
            if (l == 1)
                throw std::invalid_argument(
                    "vision config: tc_layers may not contain layer 1 (no prior attention scores)");
            if (l > layers)
                throw std::invalid_argument("vision config: tc layer index exceeds depth");
        }
        if (tc_enabled && std::size_t(std::floor(alpha * double(n_patches()))) < 1)
            throw std::invalid_argument("vision config: floor(alpha*N) must be >= 1");
    }
};

struct VisionLayerParams {
    AttentionWeights attn;
    Value ffn_w1, ffn_w2;        // d -> 4d -> d, no biases
    Value ln1_g, ln1_b, ln2_g, ln2_b;
    Value b_local, b_global;     // per-head scalars; only on layers >= 2 with TC
};

// Per-frame token sequences; frame t occupies rows [t*(N+1), (t+1)*(N+1)),
// with the frame's [CLS] token at row offset 0.
struct FrameTokenBatch {
    Value tokens;  // (T*(N+1)) x d_v
    std::size_t frames = 0;
    std::size_t tokens_per_frame = 0;
    int layer = 0;
};

// ---------------------------------------------------------------------------
// patch embedding
// ---------------------------------------------------------------------------

// Flattened patch vectors (3P^2 per patch: patch rows, then columns, then
// RGB), one row per patch, frame-major. This is the inverse-free view used by
// the round-trip test.
inline std::vector<double> extract_patches(const VideoClip& clip, std::size_t patch) {
    const std::size_t gy = clip.height / patch, gx = clip.width / patch;
    const std::size_t n = gy * gx, pv = 3 * patch * patch;
    std::vector<double> out(clip.frames * n * pv);
    std::size_t w = 0;
    for (std::size_t t = 0; t < clip.frames; ++t)
        for (std::size_t py = 0; py < gy; ++py)
            for (std::size_t px = 0; px < gx; ++px)
                for (std::size_t y = 0; y < patch; ++y)
                    for (std::size_t x = 0; x < patch; ++x)
                        for (std::size_t c = 0; c < 3; ++c)
                            out[w++] = clip.at(t, py * patch + y, px * patch + x, c);
    return out;
}

inline VideoClip reassemble_patches(const std::vector<double>& flat, std::size_t frames,
                                    std::size_t height, std::size_t width, std::size_t patch) {
    VideoClip clip;
    clip.frames = frames;
    clip.height = height;
    clip.width = width;
    clip.pixels.assign(frames * height * width * 3, 0.0);
    const std::size_t gy = height / patch, gx = width / patch;
    std::size_t r = 0;
    for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t py = 0; py < gy; ++py)
            for (std::size_t px = 0; px < gx; ++px)
                for (std::size_t y = 0; y < patch; ++y)
                    for (std::size_t x = 0; x < patch; ++x)
                        for (std::size_t c = 0; c < 3; ++c)
                            clip.pixels[((t * height + (py * patch + y)) * width +
                                         (px * patch + x)) * 3 + c] = flat[r++];
    return clip;
}

// Projects patches with w_emb, prepends the [CLS] embedding and adds the
// shared spatial positional table to every frame.
inline FrameTokenBatch patchify_embed(const VideoClip& clip, const VisionConfig& cfg,
                                      const Value& w_emb, const Value& x_cls,
                                      const Value& e_pos) {
    cfg.validate();
    if (clip.frames != cfg.frames || clip.height != cfg.height || clip.width != cfg.width)
        throw std::invalid_argument("patchify_embed: clip dims do not match config");
    const std::size_t n = cfg.n_patches(), pv = 3 * cfg.patch * cfg.patch;
    if (w_emb.shape() != Shape{pv, cfg.d_v})
        throw std::invalid_argument("patchify_embed: w_emb must be " + std::to_string(pv) + " x " +
                                    std::to_string(cfg.d_v) + ", got " + shape_str(w_emb.shape()));
    if (x_cls.shape() != Shape{cfg.d_v})
        throw std::invalid_argument("patchify_embed: x_cls must be length d_v");
    if (e_pos.shape() != Shape{n + 1, cfg.d_v})
        throw std::invalid_argument("patchify_embed: e_pos must be (N+1) x d_v");

    std::vector<double> flat = extract_patches(clip, cfg.patch);
    Value cls_row = reshape(x_cls, {1, cfg.d_v});
    std::vector<Value> frames;
    frames.reserve(clip.frames);
    for (std::size_t t = 0; t < clip.frames; ++t) {
        Value patches = tensor({n, pv}, std::vector<double>(flat.begin() + t * n * pv,
                                                            flat.begin() + (t + 1) * n * pv));
        Value proj = matmul(patches, w_emb);
        frames.push_back(add(concat_rows({cls_row, proj}), e_pos));
    }
    FrameTokenBatch out;
    out.tokens = concat_rows(frames);
    out.frames = clip.frames;
    out.tokens_per_frame = n + 1;
    out.layer = 0;
    return out;
}

// ---------------------------------------------------------------------------
// encoder stack
// ---------------------------------------------------------------------------

struct VisionLayerRecord {
    std::vector<AttentionRecord> frames;
    bool consumed_context = false;
    bool produced_context = false;
    Value scores;            // T x N averaged [CLS] attention, when produced
    SeedSelection seeds;     // when produced
};

struct EncodeResult {
    FrameTokenBatch batch;
    std::optional<ContextSet> context;     // most recent (final) context set
    std::optional<SeedSelection> context_seeds;
    std::vector<VisionLayerRecord> layers;
};

namespace detail {

inline Value ffn_residual(const Value& x, const Value& ln_g, const Value& ln_b,
                          const Value& w1, const Value& w2) {
    return add(matmul(gelu(matmul(layer_norm(x, ln_g, ln_b), w1)), w2), x);
}

}  // namespace detail

inline EncodeResult encode_video(const FrameTokenBatch& input,
                                 const std::vector<VisionLayerParams>& params,
                                 const VisionConfig& cfg) {
    cfg.validate();
    const std::size_t n = cfg.n_patches();
    const std::size_t tpf = n + 1;
    if (input.tokens_per_frame != tpf || input.frames != cfg.frames)
        throw std::invalid_argument("encode_video: batch layout does not match config");
    if (params.size() != cfg.layers)
        throw std::invalid_argument("encode_video: expected " + std::to_string(cfg.layers) +
                                    " layers of parameters, got " + std::to_string(params.size()));

    EncodeResult res;
    Value z = input.tokens;
    std::optional<ContextSet> ctx;
    std::optional<SeedSelection> ctx_seeds;

    for (std::size_t l = 1; l <= cfg.layers; ++l) {
        const VisionLayerParams& lp = params[l - 1];
        VisionLayerRecord rec;

        Value x_ln = layer_norm(z, lp.ln1_g, lp.ln1_b);
        const bool consume = cfg.tc_enabled && l >= 2 && ctx.has_value();
        ContextKV ckv;
        std::vector<Value> bias_rows;
        std::size_t k_out = 0;
        if (consume) {
            Value ctx_ln = layer_norm(ctx->tokens, lp.ln1_g, lp.ln1_b);
            ckv = project_context(ctx_ln, lp.attn);
            k_out = ctx->tokens.shape()[0];
            bias_rows = make_bias_rows(lp.b_local, lp.b_global, tpf, k_out);
        }
        rec.consumed_context = consume;

        std::vector<Value> frame_out;
        frame_out.reserve(cfg.frames);
        rec.frames.resize(cfg.frames);
        for (std::size_t t = 0; t < cfg.frames; ++t) {
            Value z_ln_t = slice_rows(x_ln, t * tpf, tpf);
            frame_out.push_back(tc_attention(z_ln_t, lp.attn, consume ? &ckv : nullptr,
                                             consume ? &bias_rows : nullptr, &rec.frames[t]));
        }
        Value interim = add(concat_rows(frame_out), z);

        const bool produce = cfg.tc_enabled &&
                             std::find(cfg.tc_layers.begin(), cfg.tc_layers.end(), l) !=
                                 cfg.tc_layers.end();
        if (produce) {
            rec.produced_context = true;
            rec.scores = cls_attention_scores(rec.frames, n);
            rec.seeds = select_seeds(rec.scores, cfg.alpha);

            std::vector<std::size_t> rows;
            std::vector<Value> wparts;
            const bool weighted = cfg.agg.method == Aggregation::kBipartiteWeighted;
            for (std::size_t t = 0; t < cfg.frames; ++t)
                for (int i : rec.seeds.per_frame[t]) {
                    rows.push_back(t * tpf + 1 + std::size_t(i));
                    if (weighted) wparts.push_back(at(rec.scores, t * n + std::size_t(i)));
                }
            Value seed_mat = take_rows(interim, rows);
            Value weights = weighted ? stack_scalars(wparts) : Value();
            ContextSet fresh = summarize_context(seed_mat, cfg.agg, cfg.context_k, weights);
            fresh.tokens = detail::ffn_residual(fresh.tokens, lp.ln2_g, lp.ln2_b,
                                                lp.ffn_w1, lp.ffn_w2);
            ctx = std::move(fresh);
            ctx_seeds = rec.seeds;
        }

        z = detail::ffn_residual(interim, lp.ln2_g, lp.ln2_b, lp.ffn_w1, lp.ffn_w2);
        res.layers.push_back(std::move(rec));
    }

    res.batch = FrameTokenBatch{z, cfg.frames, tpf, int(cfg.layers)};
    res.context = std::move(ctx);
    res.context_seeds = std::move(ctx_seeds);
    return res;
}

// v = mean over frames of the projected per-frame [CLS] states.
inline Value project_and_pool(const FrameTokenBatch& batch, const Value& w_vis) {
    std::vector<std::size_t> cls_rows(batch.frames);
    for (std::size_t t = 0; t < batch.frames; ++t) cls_rows[t] = t * batch.tokens_per_frame;
    return mean_axis0(matmul(take_rows(batch.tokens, cls_rows), w_vis));
}

}  // namespace vtc
