#pragma once

// Multiply-accumulate accounting for the vision encoder. Per frame and layer:
// QKV + output projections cost 4*n*d^2, score and value products 2*n*m*d
// (m = n without context, n+k with), the FFN 8*n*d^2. Context key/value
// projections add 2*k*d^2 once per consuming layer, and each producing layer
// pays the pairwise cosine products of the bipartite schedule. The "all" mode
// prices every layer at the steady state (consume + produce); first-layer
// startup effects are ignored.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace vtc {

struct MacsShape {
    std::size_t d = 768;
    std::size_t n_patches = 196;
    std::size_t frames = 16;
    std::size_t context_k = 96;
    std::size_t layers = 12;
    double alpha = 0.3;
    std::size_t merge_pace = 100;
};

enum class TcMode { kOff, kAll, kLite };

inline const char* tc_mode_name(TcMode m) {
    switch (m) {
        case TcMode::kOff: return "off";
        case TcMode::kAll: return "all";
        case TcMode::kLite: return "lite";
    }
    return "?";
}

struct LayerMacs {
    std::size_t layer = 0;
    bool consumes = false, produces = false;
    double projections = 0, attention = 0, ffn = 0, context_kv = 0, summarize = 0;

    double total() const { return projections + attention + ffn + context_kv + summarize; }
};

struct MacsReport {
    std::vector<LayerMacs> layers;
    double total = 0;
};

inline double score_value_macs(std::size_t n, std::size_t m, std::size_t d) {
    return 2.0 * double(n) * double(m) * double(d);
}

// Pairwise-similarity MACs of the bipartite merge schedule from `seeds`
// tokens down to k, at r merges per iteration (clamped as in the merger).
inline double bipartite_similarity_macs(std::size_t seeds, std::size_t k, std::size_t pace,
                                        std::size_t d) {
    double macs = 0;
    std::size_t c = seeds;
    while (c > k) {
        std::size_t r = std::min<std::size_t>({pace, c / 2, c - k});
        if (r == 0) break;
        const std::size_t a = (c + 1) / 2, b = c / 2;
        macs += double(a) * double(b) * double(d);
        c -= r;
    }
    return macs;
}

inline MacsReport count_macs(const MacsShape& s, TcMode mode,
                             const std::vector<std::size_t>& lite_layers = {4, 8, 12}) {
    const std::size_t n = s.n_patches + 1;
    const std::size_t n_s = std::size_t(std::floor(s.alpha * double(s.n_patches)));
    const std::size_t seeds = s.frames * n_s;
    MacsReport rep;
    for (std::size_t l = 1; l <= s.layers; ++l) {
        LayerMacs lm;
        lm.layer = l;
        switch (mode) {
            case TcMode::kOff: break;
            case TcMode::kAll:
                lm.consumes = true;
                lm.produces = true;
                break;
            case TcMode::kLite: {
                bool in_set = false;
                std::size_t first = s.layers + 1;
                for (std::size_t x : lite_layers) {
                    if (x <= s.layers) first = std::min(first, x);
                    if (x == l) in_set = true;
                }
                lm.produces = in_set;
                lm.consumes = l > first;
                break;
            }
        }
        const double d2 = double(s.d) * double(s.d);
        lm.projections = double(s.frames) * 4.0 * double(n) * d2;
        lm.ffn = double(s.frames) * 8.0 * double(n) * d2;
        const std::size_t m = lm.consumes ? n + s.context_k : n;
        lm.attention = double(s.frames) * score_value_macs(n, m, s.d);
        if (lm.consumes) lm.context_kv = 2.0 * double(s.context_k) * d2;
        if (lm.produces)
            lm.summarize = bipartite_similarity_macs(seeds, s.context_k, s.merge_pace, s.d);
        rep.total += lm.total();
        rep.layers.push_back(lm);
    }
    return rep;
}

}  // namespace vtc
