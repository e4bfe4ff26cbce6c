#pragma once

// Temporal context pipeline: informative-token selection from [CLS] attention,
// summarization of seed tokens into a small set of context tokens, and
// context-infused multi-head attention with local/global logit biases.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vtc/tensor.hpp"

namespace vtc {

enum class Aggregation { kBipartite, kBipartiteWeighted, kKMeans, kDpcKnn, kNone };

inline const char* aggregation_name(Aggregation a) {
    switch (a) {
        case Aggregation::kBipartite: return "bipartite";
        case Aggregation::kBipartiteWeighted: return "bipartite-weighted";
        case Aggregation::kKMeans: return "kmeans";
        case Aggregation::kDpcKnn: return "dpcknn";
        case Aggregation::kNone: return "none";
    }
    return "?";
}

inline Aggregation aggregation_from_name(const std::string& s) {
    if (s == "bipartite") return Aggregation::kBipartite;
    if (s == "bipartite-weighted") return Aggregation::kBipartiteWeighted;
    if (s == "kmeans") return Aggregation::kKMeans;
    if (s == "dpcknn") return Aggregation::kDpcKnn;
    if (s == "none") return Aggregation::kNone;
    throw std::invalid_argument("unknown aggregation method: " + s);
}

struct AggregationOptions {
    Aggregation method = Aggregation::kBipartite;
    int merge_pace = 100;     // r: merges per bipartite iteration
    int kmeans_iters = 3;
    int dpcknn_neighbors = 5;
};

// Seed token indices per frame, ordered by descending averaged [CLS] score,
// ties broken toward the lower patch index.
struct SeedSelection {
    std::vector<std::vector<int>> per_frame;  // patch indices in 0..N-1
    std::size_t seeds_per_frame = 0;
};

// k context tokens with constituent counts and a total seed->context map.
struct ContextSet {
    Value tokens;                      // k_out x d
    std::vector<std::size_t> sizes;    // constituent counts, sum = seed count
    std::vector<int> assignment;       // seed position -> context index
};

// One bipartite merge: positions are into the current token sequence.
struct MergeStep {
    int iteration;
    int a_pos;
    int b_pos;
    double similarity;
};

struct IterationSnapshot {
    std::vector<std::vector<double>> features;  // working (pairwise-averaged) features
    std::vector<double> weights;
    std::vector<std::size_t> sizes;
};

struct MergeTrace {
    std::vector<MergeStep> steps;
    std::vector<IterationSnapshot> after_iteration;
};

// ---------------------------------------------------------------------------
// [CLS] attention scoring and seed selection
// ---------------------------------------------------------------------------

// Per-frame softmax rows of every head; probs are (N+1) x (N+1+k_ctx).
struct AttentionRecord {
    std::vector<Value> head_probs;
};

// Averaged [CLS]-to-patch attention, T x N. Column 0 ([CLS] itself) and any
// context columns are excluded; the patch mass is not renormalized.
inline Value cls_attention_scores(const std::vector<AttentionRecord>& frames, std::size_t n_patches) {
    if (frames.empty()) throw std::invalid_argument("cls_attention_scores: no frames");
    std::vector<Value> rows;
    rows.reserve(frames.size());
    for (const auto& fr : frames) {
        if (fr.head_probs.empty())
            throw std::invalid_argument("cls_attention_scores: frame without heads");
        Value acc;
        for (const auto& hp : fr.head_probs) {
            Value r = slice_cols(slice_rows(hp, 0, 1), 1, n_patches);
            acc = acc.defined() ? add(acc, r) : r;
        }
        rows.push_back(scale(acc, 1.0 / double(frames.size() ? frames[0].head_probs.size() : 1)));
    }
    return concat_rows(rows);
}

inline SeedSelection select_seeds(const Value& scores, double alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0))
        throw std::invalid_argument("select_seeds: alpha must be in (0,1], got " +
                                    std::to_string(alpha));
    if (scores.rank() != 2) throw std::invalid_argument("select_seeds: scores must be T x N");
    const std::size_t t_frames = scores.shape()[0], n = scores.shape()[1];
    const std::size_t n_s = std::size_t(std::floor(alpha * double(n)));
    if (n_s < 1)
        throw std::invalid_argument("select_seeds: floor(alpha*N) must be >= 1, alpha=" +
                                    std::to_string(alpha) + " N=" + std::to_string(n));
    SeedSelection sel;
    sel.seeds_per_frame = n_s;
    sel.per_frame.resize(t_frames);
    const auto& d = scores.data();
    for (std::size_t t = 0; t < t_frames; ++t) {
        std::vector<int> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = int(i);
        const double* row = d.data() + t * n;
        std::stable_sort(idx.begin(), idx.end(),
                         [row](int a, int b) { return row[a] > row[b]; });
        sel.per_frame[t].assign(idx.begin(), idx.begin() + std::ptrdiff_t(n_s));
    }
    return sel;
}

// ---------------------------------------------------------------------------
// summarization backends
// ---------------------------------------------------------------------------

namespace detail {

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    double den = std::sqrt(na) * std::sqrt(nb);
    return den == 0.0 ? 0.0 : dot / den;
}

inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double c = a[i] - b[i];
        s += c * c;
    }
    return s;
}

struct WorkToken {
    std::vector<double> feat;
    double weight = 1.0;
    std::size_t size = 1;
    std::vector<int> members;
};

// Alternating-position bipartite soft matching. Each A token (even positions)
// proposes its most cosine-similar B partner (odd positions, ties to the lower
// B index); the r most similar proposals merge by weight-weighted averaging,
// the merged token staying at the B position. Survivors keep sequence order.
// r is clamped to floor(count/2) and to the number of merges still needed so
// the final iteration lands exactly on k.
inline std::vector<WorkToken> bipartite_merge(std::vector<WorkToken> toks, std::size_t k,
                                              int pace, MergeTrace* trace) {
    int iteration = 0;
    while (toks.size() > k) {
        ++iteration;
        const std::size_t count = toks.size();
        std::size_t r = std::size_t(std::max(pace, 1));
        r = std::min(r, count / 2);
        r = std::min(r, count - k);

        std::vector<std::size_t> apos, bpos;
        for (std::size_t p = 0; p < count; ++p) (p % 2 == 0 ? apos : bpos).push_back(p);

        struct Proposal {
            std::size_t a, b;
            double sim;
        };
        std::vector<Proposal> props;
        props.reserve(apos.size());
        for (std::size_t a : apos) {
            std::size_t best = bpos[0];
            double best_sim = -std::numeric_limits<double>::infinity();
            for (std::size_t b : bpos) {
                double s = cosine(toks[a].feat, toks[b].feat);
                if (s > best_sim) {
                    best_sim = s;
                    best = b;
                }
            }
            props.push_back({a, best, best_sim});
        }
        std::stable_sort(props.begin(), props.end(), [](const Proposal& x, const Proposal& y) {
            if (x.sim != y.sim) return x.sim > y.sim;
            return x.a < y.a;
        });

        std::vector<bool> gone(count, false);
        for (std::size_t i = 0; i < r; ++i) {
            const Proposal& pr = props[i];
            WorkToken& src = toks[pr.a];
            WorkToken& dst = toks[pr.b];
            const double wa = src.weight, wb = dst.weight;
            for (std::size_t j = 0; j < dst.feat.size(); ++j)
                dst.feat[j] = (wa * src.feat[j] + wb * dst.feat[j]) / (wa + wb);
            dst.weight = wa + wb;
            dst.size += src.size;
            dst.members.insert(dst.members.end(), src.members.begin(), src.members.end());
            gone[pr.a] = true;
            if (trace) trace->steps.push_back({iteration, int(pr.a), int(pr.b), pr.sim});
        }

        std::vector<WorkToken> next;
        next.reserve(count - r);
        for (std::size_t p = 0; p < count; ++p)
            if (!gone[p]) next.push_back(std::move(toks[p]));
        toks = std::move(next);

        if (trace) {
            IterationSnapshot snap;
            for (const auto& t : toks) {
                snap.features.push_back(t.feat);
                snap.weights.push_back(t.weight);
                snap.sizes.push_back(t.size);
            }
            trace->after_iteration.push_back(std::move(snap));
        }
    }
    return toks;
}

// Farthest-point initialization anchored at token 0, then a fixed number of
// Lloyd iterations; ties everywhere go to the lower index.
inline std::vector<std::vector<int>> kmeans_groups(const std::vector<std::vector<double>>& feats,
                                                   std::size_t k, int iters) {
    const std::size_t n = feats.size();
    std::vector<std::size_t> centers{0};
    std::vector<double> mind(n);
    for (std::size_t i = 0; i < n; ++i) mind[i] = sq_dist(feats[i], feats[0]);
    while (centers.size() < k) {
        std::size_t best = 0;
        double bd = -1.0;
        for (std::size_t i = 0; i < n; ++i)
            if (mind[i] > bd) {
                bd = mind[i];
                best = i;
            }
        centers.push_back(best);
        for (std::size_t i = 0; i < n; ++i) mind[i] = std::min(mind[i], sq_dist(feats[i], feats[best]));
    }
    std::vector<std::vector<double>> cent;
    cent.reserve(k);
    for (std::size_t c : centers) cent.push_back(feats[c]);

    std::vector<int> assign(n, 0);
    for (int it = 0; it < std::max(iters, 1); ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double bd = std::numeric_limits<double>::infinity();
            int bc = 0;
            for (std::size_t c = 0; c < k; ++c) {
                double d = sq_dist(feats[i], cent[c]);
                if (d < bd) {
                    bd = d;
                    bc = int(c);
                }
            }
            assign[i] = bc;
        }
        for (std::size_t c = 0; c < k; ++c) {
            std::vector<double> m(feats[0].size(), 0.0);
            std::size_t cnt = 0;
            for (std::size_t i = 0; i < n; ++i)
                if (assign[i] == int(c)) {
                    for (std::size_t j = 0; j < m.size(); ++j) m[j] += feats[i][j];
                    ++cnt;
                }
            if (cnt) {
                for (double& v : m) v /= double(cnt);
                cent[c] = std::move(m);
            }
        }
    }
    std::vector<std::vector<int>> groups(k);
    for (std::size_t i = 0; i < n; ++i) groups[assign[i]].push_back(int(i));
    groups.erase(std::remove_if(groups.begin(), groups.end(),
                                [](const std::vector<int>& g) { return g.empty(); }),
                 groups.end());
    return groups;
}

// Density peaks with K-nearest-neighbor density. Density rank ties resolve to
// the lower index; the top-k density-distance products become centers and the
// rest join the nearest center of higher density (nearest center if none).
inline std::vector<std::vector<int>> dpcknn_groups(const std::vector<std::vector<double>>& feats,
                                                   std::size_t k, int neighbors) {
    const std::size_t n = feats.size();
    std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) dist[i][j] = dist[j][i] = sq_dist(feats[i], feats[j]);

    const std::size_t kk = std::min<std::size_t>(std::max(neighbors, 1), n - 1);
    std::vector<double> rho(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> ds;
        ds.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) ds.push_back(dist[i][j]);
        std::nth_element(ds.begin(), ds.begin() + std::ptrdiff_t(kk - 1), ds.end());
        double m = 0.0;
        for (std::size_t j = 0; j < kk; ++j) m += ds[j];
        rho[i] = std::exp(-m / double(kk));
    }
    auto denser = [&](std::size_t j, std::size_t i) {
        return rho[j] > rho[i] || (rho[j] == rho[i] && j < i);
    };
    std::vector<double> delta(n);
    for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        bool any = false;
        double dmax = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            dmax = std::max(dmax, dist[i][j]);
            if (denser(j, i) && dist[i][j] < best) {
                best = dist[i][j];
                any = true;
            }
        }
        delta[i] = any ? best : dmax;
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return rho[a] * delta[a] > rho[b] * delta[b];
    });
    std::vector<std::size_t> centers(order.begin(), order.begin() + std::ptrdiff_t(k));
    std::sort(centers.begin(), centers.end());

    std::vector<int> assign(n, -1);
    for (std::size_t c = 0; c < centers.size(); ++c) assign[centers[c]] = int(c);
    for (std::size_t i = 0; i < n; ++i) {
        if (assign[i] >= 0) continue;
        double bd = std::numeric_limits<double>::infinity();
        int bc = -1;
        for (std::size_t c = 0; c < centers.size(); ++c) {
            if (!denser(centers[c], i)) continue;
            if (dist[i][centers[c]] < bd) {
                bd = dist[i][centers[c]];
                bc = int(c);
            }
        }
        if (bc < 0) {
            for (std::size_t c = 0; c < centers.size(); ++c)
                if (dist[i][centers[c]] < bd) {
                    bd = dist[i][centers[c]];
                    bc = int(c);
                }
        }
        assign[i] = bc;
    }
    std::vector<std::vector<int>> groups(centers.size());
    for (std::size_t i = 0; i < n; ++i) groups[assign[i]].push_back(int(i));
    return groups;
}

// Canonical emitted token: (sum of weighted member rows, in member order)
// scaled by the reciprocal total weight. Keeping one arithmetic order here is
// what lets the exhaustive-merge oracle match bit-for-bit.
inline Value group_mean(const Value& seeds, const std::vector<int>& members,
                        const Value& weights) {
    std::vector<std::size_t> idx(members.begin(), members.end());
    Value rows = take_rows(seeds, idx);
    if (!weights.defined()) {
        Value ones = tensor({1, idx.size()}, std::vector<double>(idx.size(), 1.0));
        return scale(matmul(ones, rows), 1.0 / double(idx.size()));
    }
    std::vector<Value> ws;
    ws.reserve(idx.size());
    for (std::size_t i : idx) ws.push_back(at(weights, i));
    Value wvec = stack_scalars(ws);
    Value num = matmul(reshape(wvec, {1, idx.size()}), rows);
    return mul(num, reciprocal(sum(wvec)));
}

}  // namespace detail

// Summarize ordered seed tokens (frame-major, within-frame by descending
// score) into at most k context tokens. `weights`, when defined, carries the
// per-seed attention scores used by the weighted bipartite variant.
inline ContextSet summarize_context(const Value& seeds, const AggregationOptions& opts,
                                    std::size_t k, const Value& weights = Value(),
                                    MergeTrace* trace = nullptr) {
    if (seeds.rank() != 2) throw std::invalid_argument("summarize_context: seeds must be n x d");
    const std::size_t n = seeds.shape()[0], d = seeds.shape()[1];
    if (n == 0) throw std::invalid_argument("summarize_context: empty seed set");
    if (k < 1) throw std::invalid_argument("summarize_context: k must be >= 1");
    if (weights.defined() && weights.shape() != Shape{n})
        throw std::invalid_argument("summarize_context: weights must be length " +
                                    std::to_string(n));

    std::vector<std::vector<int>> groups;
    const bool weighted = opts.method == Aggregation::kBipartiteWeighted;
    if (opts.method == Aggregation::kNone || n <= k) {
        groups.resize(n);
        for (std::size_t i = 0; i < n; ++i) groups[i] = {int(i)};
    } else if (opts.method == Aggregation::kBipartite || weighted) {
        std::vector<detail::WorkToken> toks(n);
        const auto& sd = seeds.data();
        for (std::size_t i = 0; i < n; ++i) {
            toks[i].feat.assign(sd.begin() + i * d, sd.begin() + (i + 1) * d);
            toks[i].weight = weighted && weights.defined() ? weights.data()[i] : 1.0;
            toks[i].members = {int(i)};
        }
        auto merged = detail::bipartite_merge(std::move(toks), k, opts.merge_pace, trace);
        for (auto& t : merged) groups.push_back(std::move(t.members));
    } else {
        std::vector<std::vector<double>> feats(n);
        const auto& sd = seeds.data();
        for (std::size_t i = 0; i < n; ++i)
            feats[i].assign(sd.begin() + i * d, sd.begin() + (i + 1) * d);
        groups = opts.method == Aggregation::kKMeans
                     ? detail::kmeans_groups(feats, k, opts.kmeans_iters)
                     : detail::dpcknn_groups(feats, k, opts.dpcknn_neighbors);
    }

    ContextSet out;
    out.assignment.assign(n, -1);
    std::vector<Value> token_rows;
    token_rows.reserve(groups.size());
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        for (int m : groups[gi]) out.assignment[std::size_t(m)] = int(gi);
        out.sizes.push_back(groups[gi].size());
        token_rows.push_back(
            detail::group_mean(seeds, groups[gi], weighted ? weights : Value()));
    }
    out.tokens = concat_rows(token_rows);
    return out;
}

// ---------------------------------------------------------------------------
// context-infused attention
// ---------------------------------------------------------------------------

struct AttentionWeights {
    Value w_q, w_k, w_v, w_o;  // d x d, no biases
    std::size_t heads = 1;
};

struct ContextKV {
    Value k, v;  // k_ctx x d, projections of layer-normed context tokens
};

// Per-head additive logit rows: b_local over the first n_local columns,
// b_global over the remaining n_ctx columns.
inline std::vector<Value> make_bias_rows(const Value& b_local, const Value& b_global,
                                         std::size_t n_local, std::size_t n_ctx) {
    if (b_local.shape() != b_global.shape() || b_local.rank() != 1)
        throw std::invalid_argument("make_bias_rows: per-head bias vectors required");
    std::vector<Value> rows;
    const std::size_t heads = b_local.shape()[0];
    rows.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h)
        rows.push_back(concat_vec({fill_from_scalar(at(b_local, h), n_local),
                                   fill_from_scalar(at(b_global, h), n_ctx)}));
    return rows;
}

// Multi-head attention over one frame's layer-normed tokens with optional
// extra context key/value rows and per-head bias rows. Returns the
// pre-residual output; the caller adds the residual.
inline Value tc_attention(const Value& z_ln, const AttentionWeights& w,
                          const ContextKV* ctx = nullptr,
                          const std::vector<Value>* bias_rows = nullptr,
                          AttentionRecord* record = nullptr) {
    const std::size_t d = z_ln.shape()[1];
    if (d % w.heads != 0)
        throw std::invalid_argument("tc_attention: head count " + std::to_string(w.heads) +
                                    " does not divide width " + std::to_string(d));
    const std::size_t dh = d / w.heads;
    if (ctx && ctx->k.shape()[1] != d)
        throw std::invalid_argument("tc_attention: context width " +
                                    std::to_string(ctx->k.shape()[1]) + " != " +
                                    std::to_string(d));
    Value q = matmul(z_ln, w.w_q);
    Value kf = matmul(z_ln, w.w_k);
    Value vf = matmul(z_ln, w.w_v);
    Value kall = ctx ? concat_rows({kf, ctx->k}) : kf;
    Value vall = ctx ? concat_rows({vf, ctx->v}) : vf;

    const double inv_sqrt_d = 1.0 / std::sqrt(double(dh));
    std::vector<Value> head_out;
    head_out.reserve(w.heads);
    for (std::size_t h = 0; h < w.heads; ++h) {
        Value qh = slice_cols(q, h * dh, dh);
        Value kh = slice_cols(kall, h * dh, dh);
        Value vh = slice_cols(vall, h * dh, dh);
        Value logits = scale(matmul_transb(qh, kh), inv_sqrt_d);
        Value probs = bias_rows ? softmax_rows(logits, (*bias_rows)[h]) : softmax_rows(logits);
        if (record) record->head_probs.push_back(probs);
        head_out.push_back(matmul(probs, vh));
    }
    return matmul(concat_cols(head_out), w.w_o);
}

// Context token projection shared across the frames of one layer.
inline ContextKV project_context(const Value& ctx_ln, const AttentionWeights& w) {
    return ContextKV{matmul(ctx_ln, w.w_k), matmul(ctx_ln, w.w_v)};
}

}  // namespace vtc
