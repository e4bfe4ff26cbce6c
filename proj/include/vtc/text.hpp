#pragma once

// Toy causal text encoder over a synthetic integer vocabulary, with learnable
// prompt vectors and the video-conditional prompting block that cross-attends
// prompts against projected context tokens just before the last layer.

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "vtc/context.hpp"
#include "vtc/tensor.hpp"

namespace vtc {

struct TextConfig {
    std::size_t vocab = 32;      // rows [0, n_prompt) seed the prompts, row vocab-1 is EOS
    std::size_t d_l = 64;
    std::size_t heads = 4;
    std::size_t layers = 2;
    std::size_t n_prompt = 4;
    std::size_t max_len = 12;
    bool vp_enabled = true;
    std::size_t vp_layer = 0;    // 1-based; 0 means the last layer

    std::size_t eos_id() const { return vocab - 1; }
    std::size_t vp_at() const { return vp_layer == 0 ? layers : vp_layer; }

    void validate() const {
        if (d_l % heads != 0) throw std::invalid_argument("text config: heads must divide d_l");
        if (vocab < n_prompt + 2)
            throw std::invalid_argument("text config: vocab too small for prompt rows + EOS");
        if (vp_at() < 1 || vp_at() > layers)
            throw std::invalid_argument("text config: vp layer out of range");
    }
};

struct TextSequence {
    std::vector<std::size_t> class_ids;  // EOS is appended implicitly
};

struct TextLayerParams {
    AttentionWeights attn;
    Value ffn_w1, ffn_w2;
    Value ln1_g, ln1_b, ln2_g, ln2_b;
};

struct VPParams {
    Value w_q, w_o;              // d_l x d_l
    Value w_k, w_v;              // d_vl x d_l (absorb the vision->text width change)
    Value ffn_w1, ffn_w2;        // d_l -> 4 d_l -> d_l
    Value ln_p_g, ln_p_b;        // prompt-side norm, width d_l
    Value ln_s_g, ln_s_b;        // context-side norm, width d_vl
    Value ln_f_g, ln_f_b;        // pre-FFN norm, width d_l
    std::size_t heads = 1;
};

// ---------------------------------------------------------------------------

// Initial [p, c, EOS] sequence with the positional table added. Prompts come
// from the learnable prompt parameter, class tokens and EOS from the table.
inline Value embed_text(const TextSequence& seq, const TextConfig& cfg, const Value& vocab_table,
                        const Value& prompt, const Value& pos_table) {
    cfg.validate();
    if (vocab_table.shape() != Shape{cfg.vocab, cfg.d_l})
        throw std::invalid_argument("embed_text: vocab table must be V x d_l");
    if (prompt.defined() && prompt.shape() != Shape{cfg.n_prompt, cfg.d_l})
        throw std::invalid_argument("embed_text: prompt must be n_p x d_l");
    const std::size_t len = cfg.n_prompt + seq.class_ids.size() + 1;
    if (len > cfg.max_len)
        throw std::invalid_argument("embed_text: sequence length " + std::to_string(len) +
                                    " exceeds maximum " + std::to_string(cfg.max_len));
    std::vector<std::size_t> ids;
    for (std::size_t id : seq.class_ids) {
        if (id >= cfg.vocab)
            throw std::invalid_argument("embed_text: token id " + std::to_string(id) +
                                        " out of range for vocab " + std::to_string(cfg.vocab));
        ids.push_back(id);
    }
    ids.push_back(cfg.eos_id());
    Value toks = take_rows(vocab_table, ids);
    Value x = cfg.n_prompt ? concat_rows({prompt, toks}) : toks;
    return add(x, slice_rows(pos_table, 0, len));
}

namespace detail {

inline Value causal_mask(std::size_t len) {
    std::vector<double> m(len * len, 0.0);
    for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = i + 1; j < len; ++j)
            m[i * len + j] = -std::numeric_limits<double>::infinity();
    return tensor({len, len}, std::move(m));
}

inline Value causal_self_attention(const Value& x_ln, const AttentionWeights& w) {
    const std::size_t len = x_ln.shape()[0], d = x_ln.shape()[1];
    const std::size_t dh = d / w.heads;
    Value q = matmul(x_ln, w.w_q);
    Value k = matmul(x_ln, w.w_k);
    Value v = matmul(x_ln, w.w_v);
    Value mask = causal_mask(len);
    const double inv_sqrt_d = 1.0 / std::sqrt(double(dh));
    std::vector<Value> heads;
    heads.reserve(w.heads);
    for (std::size_t h = 0; h < w.heads; ++h) {
        Value logits = scale(matmul_transb(slice_cols(q, h * dh, dh), slice_cols(k, h * dh, dh)),
                             inv_sqrt_d);
        heads.push_back(matmul(softmax_rows(logits, mask), slice_cols(v, h * dh, dh)));
    }
    return matmul(concat_cols(heads), w.w_o);
}

inline Value text_block(const Value& x, const TextLayerParams& lp) {
    Value a = add(causal_self_attention(layer_norm(x, lp.ln1_g, lp.ln1_b), lp.attn), x);
    return add(matmul(gelu(matmul(layer_norm(a, lp.ln2_g, lp.ln2_b), lp.ffn_w1)), lp.ffn_w2), a);
}

}  // namespace detail

// Cross-attention with prompts as queries and projected context tokens as
// keys/values, then an FFN, both residual.
inline Value vp_forward(const Value& prompts, const Value& s_proj, const VPParams& vp) {
    if (s_proj.rank() != 2 || s_proj.shape()[0] < 1)
        throw std::invalid_argument("vp_forward: at least one context token required");
    const std::size_t d = prompts.shape()[1];
    const std::size_t dh = d / vp.heads;
    Value q = matmul(layer_norm(prompts, vp.ln_p_g, vp.ln_p_b), vp.w_q);
    Value s_ln = layer_norm(s_proj, vp.ln_s_g, vp.ln_s_b);
    Value k = matmul(s_ln, vp.w_k);
    Value v = matmul(s_ln, vp.w_v);
    const double inv_sqrt_d = 1.0 / std::sqrt(double(dh));
    std::vector<Value> heads;
    heads.reserve(vp.heads);
    for (std::size_t h = 0; h < vp.heads; ++h) {
        Value logits = scale(matmul_transb(slice_cols(q, h * dh, dh), slice_cols(k, h * dh, dh)),
                             inv_sqrt_d);
        heads.push_back(matmul(softmax_rows(logits), slice_cols(v, h * dh, dh)));
    }
    Value p_hat = add(matmul(concat_cols(heads), vp.w_o), prompts);
    Value p_tld = add(matmul(gelu(matmul(layer_norm(p_hat, vp.ln_f_g, vp.ln_f_b), vp.ffn_w1)),
                             vp.ffn_w2), p_hat);
    return p_tld;
}

// Context tokens mapped into the shared vision-language space behind a
// stop-gradient, as consumed by the VP block.
inline Value project_context_for_vp(const Value& ctx_tokens, const Value& w_vis) {
    return stop_gradient(matmul(ctx_tokens, w_vis));
}

// Runs the causal stack, splicing the VP output into the prompt slots just
// before the configured layer; returns the projected EOS state.
inline Value encode_text(const Value& init_seq, const std::vector<TextLayerParams>& layers,
                         const TextConfig& cfg, const VPParams* vp, const Value& s_proj,
                         const Value& w_text) {
    cfg.validate();
    if (layers.size() != cfg.layers)
        throw std::invalid_argument("encode_text: expected " + std::to_string(cfg.layers) +
                                    " layers");
    if (cfg.vp_enabled && !s_proj.defined())
        throw std::invalid_argument("encode_text: VP enabled but no context tokens given");
    const std::size_t len = init_seq.shape()[0];
    Value x = init_seq;
    for (std::size_t l = 1; l <= cfg.layers; ++l) {
        if (cfg.vp_enabled && l == cfg.vp_at()) {
            Value p = slice_rows(x, 0, cfg.n_prompt);
            Value rest = slice_rows(x, cfg.n_prompt, len - cfg.n_prompt);
            x = concat_rows({vp_forward(p, s_proj, *vp), rest});
        }
        x = detail::text_block(x, layers[l - 1]);
    }
    return reshape(matmul(slice_rows(x, len - 1, 1), w_text), {w_text.shape()[1]});
}

}  // namespace vtc
