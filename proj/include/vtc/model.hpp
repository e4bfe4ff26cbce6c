#pragma once

// The full video-text model: parameter schema, deterministic initialization,
// and the per-clip forward pass producing the pooled video vector, the
// per-class conditional text embeddings, and their similarities.

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vtc/align.hpp"
#include "vtc/context.hpp"
#include "vtc/rng.hpp"
#include "vtc/tensor.hpp"
#include "vtc/text.hpp"
#include "vtc/vision.hpp"

namespace vtc {

struct ModelConfig {
    VisionConfig vision;
    TextConfig text;
    std::size_t d_vl = 32;
    bool vp_init_from_last_layer = true;   // else random init (ablation)
    bool prompt_init_from_vocab = true;    // reserved rows stand in for a template
    std::vector<std::vector<std::size_t>> classes;  // token ids per class

    void validate() const {
        vision.validate();
        text.validate();
        if (classes.empty()) throw std::invalid_argument("model config: no classes");
    }
};

struct ModelParams {
    Value w_emb, x_cls, e_pos;
    std::vector<VisionLayerParams> vision_layers;
    Value w_vis;

    Value vocab, pos_table, prompt;
    std::vector<TextLayerParams> text_layers;
    Value w_text;
    VPParams vp;

    Value log_tau;

    ParamList ordered;  // fixed enumeration order; shares nodes with the fields

    Value find(const std::string& name) const {
        for (const auto& [n, v] : ordered)
            if (n == name) return v;
        throw std::invalid_argument("unknown parameter: " + name);
    }
};

namespace detail {

inline Value init_matrix(Rng& rng, std::size_t rows, std::size_t cols, double std_dev) {
    std::vector<double> d(rows * cols);
    for (double& v : d) v = std_dev * rng.next_normal();
    return tensor({rows, cols}, std::move(d), true);
}

inline Value init_vector(Rng& rng, std::size_t n, double std_dev) {
    std::vector<double> d(n);
    for (double& v : d) v = std_dev * rng.next_normal();
    return tensor({n}, std::move(d), true);
}

inline Value const_vector(std::size_t n, double v) {
    return tensor({n}, std::vector<double>(n, v), true);
}

inline Value clone_param(const Value& v) {
    return tensor(v.shape(), v.data(), true);
}

// Leading rows of v, randomly padded when more rows are asked for than exist
// (the vision-language width may exceed the text width).
inline Value clone_rows(Rng& rng, const Value& v, std::size_t rows, double pad_std) {
    const std::size_t have = std::min(rows, v.shape()[0]);
    const std::size_t cols = v.shape()[1];
    std::vector<double> d(v.data().begin(), v.data().begin() + have * cols);
    d.resize(rows * cols);
    for (std::size_t i = have * cols; i < d.size(); ++i) d[i] = pad_std * rng.next_normal();
    return tensor({rows, cols}, std::move(d), true);
}

inline Value clone_prefix(const Value& v, std::size_t n, double pad) {
    const std::size_t have = std::min(n, v.size());
    std::vector<double> d(v.data().begin(), v.data().begin() + have);
    d.resize(n, pad);
    return tensor({n}, std::move(d), true);
}

}  // namespace detail

// Deterministic initialization; a single SplitMix64 stream consumed in
// declaration order, so (config, seed) pins every weight.
inline ModelParams init_model_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed, 17);
    ModelParams p;
    const auto& vc = cfg.vision;
    const auto& tc = cfg.text;
    const std::size_t n = vc.n_patches(), pv = 3 * vc.patch * vc.patch;
    const double ws = 0.02;

    p.w_emb = detail::init_matrix(rng, pv, vc.d_v, ws);
    p.x_cls = detail::init_vector(rng, vc.d_v, ws);
    p.e_pos = detail::init_matrix(rng, n + 1, vc.d_v, 0.01);
    for (std::size_t l = 1; l <= vc.layers; ++l) {
        VisionLayerParams lp;
        lp.attn.heads = vc.heads;
        lp.attn.w_q = detail::init_matrix(rng, vc.d_v, vc.d_v, ws);
        lp.attn.w_k = detail::init_matrix(rng, vc.d_v, vc.d_v, ws);
        lp.attn.w_v = detail::init_matrix(rng, vc.d_v, vc.d_v, ws);
        lp.attn.w_o = detail::init_matrix(rng, vc.d_v, vc.d_v, ws);
        lp.ffn_w1 = detail::init_matrix(rng, vc.d_v, 4 * vc.d_v, ws);
        lp.ffn_w2 = detail::init_matrix(rng, 4 * vc.d_v, vc.d_v, ws);
        lp.ln1_g = detail::const_vector(vc.d_v, 1.0);
        lp.ln1_b = detail::const_vector(vc.d_v, 0.0);
        lp.ln2_g = detail::const_vector(vc.d_v, 1.0);
        lp.ln2_b = detail::const_vector(vc.d_v, 0.0);
        if (vc.tc_enabled && l >= 2) {
            lp.b_local = detail::const_vector(vc.heads, 0.0);
            lp.b_global = detail::const_vector(vc.heads, 0.0);
        }
        p.vision_layers.push_back(std::move(lp));
    }
    p.w_vis = detail::init_matrix(rng, vc.d_v, cfg.d_vl, ws);

    p.vocab = detail::init_matrix(rng, tc.vocab, tc.d_l, ws);
    p.pos_table = detail::init_matrix(rng, tc.max_len, tc.d_l, 0.01);
    p.prompt = cfg.prompt_init_from_vocab && tc.n_prompt
                   ? detail::clone_rows(rng, p.vocab, tc.n_prompt, ws)
                   : detail::init_matrix(rng, tc.n_prompt, tc.d_l, ws);
    for (std::size_t l = 1; l <= tc.layers; ++l) {
        TextLayerParams lp;
        lp.attn.heads = tc.heads;
        lp.attn.w_q = detail::init_matrix(rng, tc.d_l, tc.d_l, ws);
        lp.attn.w_k = detail::init_matrix(rng, tc.d_l, tc.d_l, ws);
        lp.attn.w_v = detail::init_matrix(rng, tc.d_l, tc.d_l, ws);
        lp.attn.w_o = detail::init_matrix(rng, tc.d_l, tc.d_l, ws);
        lp.ffn_w1 = detail::init_matrix(rng, tc.d_l, 4 * tc.d_l, ws);
        lp.ffn_w2 = detail::init_matrix(rng, 4 * tc.d_l, tc.d_l, ws);
        lp.ln1_g = detail::const_vector(tc.d_l, 1.0);
        lp.ln1_b = detail::const_vector(tc.d_l, 0.0);
        lp.ln2_g = detail::const_vector(tc.d_l, 1.0);
        lp.ln2_b = detail::const_vector(tc.d_l, 0.0);
        p.text_layers.push_back(std::move(lp));
    }
    p.w_text = detail::init_matrix(rng, tc.d_l, cfg.d_vl, ws);

    if (tc.vp_enabled) {
        const TextLayerParams& last = p.text_layers.back();
        p.vp.heads = tc.heads;
        if (cfg.vp_init_from_last_layer) {
            p.vp.w_q = detail::clone_param(last.attn.w_q);
            p.vp.w_o = detail::clone_param(last.attn.w_o);
            // keys/values take the leading d_vl rows of the text projections
            p.vp.w_k = detail::clone_rows(rng, last.attn.w_k, cfg.d_vl, ws);
            p.vp.w_v = detail::clone_rows(rng, last.attn.w_v, cfg.d_vl, ws);
            p.vp.ffn_w1 = detail::clone_param(last.ffn_w1);
            p.vp.ffn_w2 = detail::clone_param(last.ffn_w2);
            p.vp.ln_p_g = detail::clone_param(last.ln1_g);
            p.vp.ln_p_b = detail::clone_param(last.ln1_b);
            p.vp.ln_s_g = detail::clone_prefix(last.ln1_g, cfg.d_vl, 1.0);
            p.vp.ln_s_b = detail::clone_prefix(last.ln1_b, cfg.d_vl, 0.0);
            p.vp.ln_f_g = detail::clone_param(last.ln2_g);
            p.vp.ln_f_b = detail::clone_param(last.ln2_b);
        } else {
            p.vp.w_q = detail::init_matrix(rng, tc.d_l, tc.d_l, ws);
            p.vp.w_o = detail::init_matrix(rng, tc.d_l, tc.d_l, ws);
            p.vp.w_k = detail::init_matrix(rng, cfg.d_vl, tc.d_l, ws);
            p.vp.w_v = detail::init_matrix(rng, cfg.d_vl, tc.d_l, ws);
            p.vp.ffn_w1 = detail::init_matrix(rng, tc.d_l, 4 * tc.d_l, ws);
            p.vp.ffn_w2 = detail::init_matrix(rng, 4 * tc.d_l, tc.d_l, ws);
            p.vp.ln_p_g = detail::const_vector(tc.d_l, 1.0);
            p.vp.ln_p_b = detail::const_vector(tc.d_l, 0.0);
            p.vp.ln_s_g = detail::const_vector(cfg.d_vl, 1.0);
            p.vp.ln_s_b = detail::const_vector(cfg.d_vl, 0.0);
            p.vp.ln_f_g = detail::const_vector(tc.d_l, 1.0);
            p.vp.ln_f_b = detail::const_vector(tc.d_l, 0.0);
        }
    }

    p.log_tau = tensor({}, {std::log(0.01)}, true);

    auto& o = p.ordered;
    o.emplace_back("vision.w_emb", p.w_emb);
    o.emplace_back("vision.x_cls", p.x_cls);
    o.emplace_back("vision.e_pos", p.e_pos);
    for (std::size_t l = 0; l < p.vision_layers.size(); ++l) {
        const std::string pre = "vision.layer" + std::to_string(l + 1) + ".";
        auto& lp = p.vision_layers[l];
        o.emplace_back(pre + "w_q", lp.attn.w_q);
        o.emplace_back(pre + "w_k", lp.attn.w_k);
        o.emplace_back(pre + "w_v", lp.attn.w_v);
        o.emplace_back(pre + "w_o", lp.attn.w_o);
        o.emplace_back(pre + "ffn_w1", lp.ffn_w1);
        o.emplace_back(pre + "ffn_w2", lp.ffn_w2);
        o.emplace_back(pre + "ln1_g", lp.ln1_g);
        o.emplace_back(pre + "ln1_b", lp.ln1_b);
        o.emplace_back(pre + "ln2_g", lp.ln2_g);
        o.emplace_back(pre + "ln2_b", lp.ln2_b);
        if (lp.b_local.defined()) {
            o.emplace_back(pre + "b_local", lp.b_local);
            o.emplace_back(pre + "b_global", lp.b_global);
        }
    }
    o.emplace_back("vision.w_vis", p.w_vis);
    o.emplace_back("text.vocab", p.vocab);
    o.emplace_back("text.pos", p.pos_table);
    if (tc.n_prompt) o.emplace_back("text.prompt", p.prompt);
    for (std::size_t l = 0; l < p.text_layers.size(); ++l) {
        const std::string pre = "text.layer" + std::to_string(l + 1) + ".";
        auto& lp = p.text_layers[l];
        o.emplace_back(pre + "w_q", lp.attn.w_q);
        o.emplace_back(pre + "w_k", lp.attn.w_k);
        o.emplace_back(pre + "w_v", lp.attn.w_v);
        o.emplace_back(pre + "w_o", lp.attn.w_o);
        o.emplace_back(pre + "ffn_w1", lp.ffn_w1);
        o.emplace_back(pre + "ffn_w2", lp.ffn_w2);
        o.emplace_back(pre + "ln1_g", lp.ln1_g);
        o.emplace_back(pre + "ln1_b", lp.ln1_b);
        o.emplace_back(pre + "ln2_g", lp.ln2_g);
        o.emplace_back(pre + "ln2_b", lp.ln2_b);
    }
    o.emplace_back("text.w_text", p.w_text);
    if (tc.vp_enabled) {
        o.emplace_back("vp.w_q", p.vp.w_q);
        o.emplace_back("vp.w_k", p.vp.w_k);
        o.emplace_back("vp.w_v", p.vp.w_v);
        o.emplace_back("vp.w_o", p.vp.w_o);
        o.emplace_back("vp.ffn_w1", p.vp.ffn_w1);
        o.emplace_back("vp.ffn_w2", p.vp.ffn_w2);
        o.emplace_back("vp.ln_p_g", p.vp.ln_p_g);
        o.emplace_back("vp.ln_p_b", p.vp.ln_p_b);
        o.emplace_back("vp.ln_s_g", p.vp.ln_s_g);
        o.emplace_back("vp.ln_s_b", p.vp.ln_s_b);
        o.emplace_back("vp.ln_f_g", p.vp.ln_f_g);
        o.emplace_back("vp.ln_f_b", p.vp.ln_f_b);
    }
    o.emplace_back("align.log_tau", p.log_tau);
    return p;
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

struct ClipOutputs {
    Value v;                          // pooled video vector, d_vl
    std::vector<Value> class_embeds;  // conditional text embedding per class
    Value sims;                       // [C] cosine similarities
    EncodeResult enc;
    int prediction = -1;
};

// `frozen_s_proj`, when given, replaces the stop-gradient context projection
// feeding VP. The gradient checker uses it to pin the stopped value, so the
// finite differences measure the same partial derivative the backward pass
// computes (the value behind a stop-gradient is held fixed by definition).
inline ClipOutputs forward_clip(const ModelParams& p, const ModelConfig& cfg,
                                const VideoClip& clip, const Value* frozen_s_proj = nullptr) {
    ClipOutputs out;
    FrameTokenBatch batch = patchify_embed(clip, cfg.vision, p.w_emb, p.x_cls, p.e_pos);
    out.enc = encode_video(batch, p.vision_layers, cfg.vision);
    out.v = project_and_pool(out.enc.batch, p.w_vis);

    TextConfig tcfg = cfg.text;
    Value s_proj;
    if (tcfg.vp_enabled && frozen_s_proj)
        s_proj = *frozen_s_proj;
    else if (tcfg.vp_enabled && out.enc.context.has_value())
        s_proj = project_context_for_vp(out.enc.context->tokens, p.w_vis);
    else
        tcfg.vp_enabled = false;  // no context available (frame-wise baseline)

    std::vector<Value> sims;
    sims.reserve(cfg.classes.size());
    for (const auto& ids : cfg.classes) {
        TextSequence seq{ids};
        Value init = embed_text(seq, tcfg, p.vocab, p.prompt, p.pos_table);
        Value c = encode_text(init, p.text_layers, tcfg, tcfg.vp_enabled ? &p.vp : nullptr,
                              s_proj, p.w_text);
        out.class_embeds.push_back(c);
        sims.push_back(cosine_similarity(out.v, c));
    }
    out.sims = stack_scalars(sims);
    const auto& sd = out.sims.data();
    out.prediction = int(std::max_element(sd.begin(), sd.end()) - sd.begin());
    return out;
}

// Row i of the batch similarity matrix: video i against the class embeddings
// (conditioned on video i) of every batch element's label.
inline Value batch_row(const ClipOutputs& o, const std::vector<int>& batch_labels) {
    std::vector<Value> row;
    row.reserve(batch_labels.size());
    for (int y : batch_labels) row.push_back(at(o.sims, std::size_t(y)));
    return stack_scalars(row);
}

}  // namespace vtc
