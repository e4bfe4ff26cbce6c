#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oracle_bipartite.hpp"
#include "test_util.hpp"
#include "vtc/context.hpp"

using namespace vtc;
using testutil::fd_max_rel_err;
using testutil::random_tensor;

namespace {

Value probs_tensor(std::size_t rows, std::size_t cols, const std::vector<double>& row0) {
    // row 0 as given, remaining rows uniform
    std::vector<double> d(rows * cols, 1.0 / double(cols));
    std::copy(row0.begin(), row0.end(), d.begin());
    return tensor({rows, cols}, std::move(d));
}

std::vector<std::vector<double>> rows_of(const Value& m) {
    std::vector<std::vector<double>> out;
    const std::size_t r = m.shape()[0], c = m.shape()[1];
    for (std::size_t i = 0; i < r; ++i)
        out.emplace_back(m.data().begin() + i * c, m.data().begin() + (i + 1) * c);
    return out;
}

}  // namespace

TEST(ClsScores, UniformSingleHead) {
    AttentionRecord fr;
    fr.head_probs.push_back(probs_tensor(5, 5, {0.2, 0.2, 0.2, 0.2, 0.2}));
    Value s = cls_attention_scores({fr}, 4);
    ASSERT_EQ(s.shape(), (Shape{1, 4}));
    for (double v : s.data()) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(ClsScores, HeadMean) {
    AttentionRecord fr;
    fr.head_probs.push_back(probs_tensor(3, 3, {0.0, 1.0, 0.0}));
    fr.head_probs.push_back(probs_tensor(3, 3, {0.0, 0.0, 1.0}));
    Value s = cls_attention_scores({fr}, 2);
    EXPECT_NEAR(s.data()[0], 0.5, 1e-15);
    EXPECT_NEAR(s.data()[1], 0.5, 1e-15);
}

TEST(ClsScores, MatchesBruteForceMean) {
    Rng rng(101);
    const std::size_t n = 6, heads = 3, frames = 2, cols = n + 1 + 3;
    std::vector<AttentionRecord> recs(frames);
    std::vector<std::vector<double>> raw(frames, std::vector<double>(heads * cols));
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t h = 0; h < heads; ++h) {
            std::vector<double> row0(cols);
            for (double& v : row0) v = rng.next_double();
            std::copy(row0.begin(), row0.end(), raw[t].begin() + h * cols);
            recs[t].head_probs.push_back(probs_tensor(n + 1, cols, row0));
        }
    }
    Value s = cls_attention_scores(recs, n);
    for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t i = 0; i < n; ++i) {
            double mean = 0.0;
            for (std::size_t h = 0; h < heads; ++h) mean += raw[t][h * cols + 1 + i];
            mean /= double(heads);
            EXPECT_NEAR(s.data()[t * n + i], mean, 1e-12);
        }
}

TEST(SelectSeeds, TieBreaksToLowerIndex) {
    Value a = tensor({1, 4}, {0.1, 0.5, 0.2, 0.2});
    SeedSelection sel = select_seeds(a, 0.5);
    ASSERT_EQ(sel.seeds_per_frame, 2u);
    EXPECT_EQ(sel.per_frame[0], (std::vector<int>{1, 2}));
}

TEST(SelectSeeds, AlphaOneKeepsEverything) {
    Rng rng(102);
    Value a = random_tensor(rng, {2, 5}, 1.0, false);
    SeedSelection sel = select_seeds(a, 1.0);
    EXPECT_EQ(sel.seeds_per_frame, 5u);
    for (const auto& f : sel.per_frame) {
        std::vector<int> sorted = f;
        std::sort(sorted.begin(), sorted.end());
        EXPECT_EQ(sorted, (std::vector<int>{0, 1, 2, 3, 4}));
    }
}

TEST(SelectSeeds, DefaultAlphaOnVitGrid) {
    Rng rng(103);
    Value a = random_tensor(rng, {1, 196}, 1.0, false);
    SeedSelection sel = select_seeds(a, 0.3);
    EXPECT_EQ(sel.seeds_per_frame, 58u);
}

TEST(SelectSeeds, RejectsAlphaOutOfRange) {
    Value a = tensor({1, 4}, {0.1, 0.5, 0.2, 0.2});
    EXPECT_THROW(select_seeds(a, 0.0), std::invalid_argument);
    EXPECT_THROW(select_seeds(a, 1.5), std::invalid_argument);
    EXPECT_THROW(select_seeds(a, 0.1), std::invalid_argument);  // floor(0.4) = 0
}

TEST(SelectSeeds, MatchesFullSortReference) {
    Rng rng(104);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 3 + rng.next_below(20);
        Value a = random_tensor(rng, {3, n}, 1.0, false);
        const double alpha = 1.0 / double(1 + rng.next_below(3));
        if (std::size_t(std::floor(alpha * double(n))) < 1) continue;
        SeedSelection sel = select_seeds(a, alpha);
        for (std::size_t t = 0; t < 3; ++t) {
            std::vector<int> ref(n);
            std::iota(ref.begin(), ref.end(), 0);
            const double* row = a.data().data() + t * n;
            std::sort(ref.begin(), ref.end(), [&](int x, int y) {
                if (row[x] != row[y]) return row[x] > row[y];
                return x < y;
            });
            ref.resize(sel.seeds_per_frame);
            EXPECT_EQ(sel.per_frame[t], ref);
        }
    }
}

// ---------------------------------------------------------------------------

TEST(Summarize, SpecExampleOneBipartiteIteration) {
    Value seeds = tensor({6, 2}, {1, 0, 0.99, 0.1, 0, 1, 0.1, 0.99, -1, 0, 0.7, 0.7});
    AggregationOptions opts;
    opts.method = Aggregation::kBipartite;
    opts.merge_pace = 2;
    MergeTrace trace;
    ContextSet ctx = summarize_context(seeds, opts, 4, Value(), &trace);
    ASSERT_EQ(ctx.sizes.size(), 4u);
    ASSERT_EQ(trace.steps.size(), 2u);
    // merges {0,1} and {2,3}
    EXPECT_EQ(trace.steps[0].a_pos, 0);
    EXPECT_EQ(trace.steps[0].b_pos, 1);
    EXPECT_EQ(trace.steps[1].a_pos, 2);
    EXPECT_EQ(trace.steps[1].b_pos, 3);
    auto rows = rows_of(ctx.tokens);
    EXPECT_NEAR(rows[0][0], 0.995, 1e-12);
    EXPECT_NEAR(rows[0][1], 0.05, 1e-12);
    EXPECT_NEAR(rows[1][0], 0.05, 1e-12);
    EXPECT_NEAR(rows[1][1], 0.995, 1e-12);
    EXPECT_NEAR(rows[2][0], -1.0, 1e-12);
    EXPECT_NEAR(rows[2][1], 0.0, 1e-12);
    EXPECT_NEAR(rows[3][0], 0.7, 1e-12);
    EXPECT_NEAR(rows[3][1], 0.7, 1e-12);
    EXPECT_EQ(ctx.sizes, (std::vector<std::size_t>{2, 2, 1, 1}));
    EXPECT_EQ(ctx.assignment, (std::vector<int>{0, 0, 1, 1, 2, 3}));
}

TEST(Summarize, IdenticalSeedsCollapseToOneToken) {
    for (Aggregation m : {Aggregation::kBipartite, Aggregation::kBipartiteWeighted,
                          Aggregation::kKMeans, Aggregation::kDpcKnn}) {
        std::vector<double> d;
        for (int i = 0; i < 5; ++i) {
            d.push_back(0.3);
            d.push_back(-0.7);
        }
        Value seeds = tensor({5, 2}, d);
        AggregationOptions opts;
        opts.method = m;
        Value w = m == Aggregation::kBipartiteWeighted
                      ? tensor({5}, {0.1, 0.2, 0.3, 0.2, 0.2})
                      : Value();
        ContextSet ctx = summarize_context(seeds, opts, 1, w);
        ASSERT_EQ(ctx.sizes.size(), 1u) << aggregation_name(m);
        EXPECT_EQ(ctx.sizes[0], 5u);
        EXPECT_NEAR(ctx.tokens.data()[0], 0.3, 1e-12);
        EXPECT_NEAR(ctx.tokens.data()[1], -0.7, 1e-12);
    }
}

TEST(Summarize, SeedCountAtMostKIsIdentity) {
    Rng rng(111);
    Value seeds = random_tensor(rng, {4, 3}, 1.0, false);
    for (Aggregation m : {Aggregation::kBipartite, Aggregation::kKMeans, Aggregation::kDpcKnn,
                          Aggregation::kNone}) {
        AggregationOptions opts;
        opts.method = m;
        ContextSet ctx = summarize_context(seeds, opts, 8);
        EXPECT_EQ(ctx.sizes, (std::vector<std::size_t>{1, 1, 1, 1}));
        EXPECT_EQ(ctx.assignment, (std::vector<int>{0, 1, 2, 3}));
        for (std::size_t i = 0; i < seeds.size(); ++i)
            EXPECT_DOUBLE_EQ(ctx.tokens.data()[i], seeds.data()[i]);
    }
}

TEST(Summarize, RejectsBadArguments) {
    Rng rng(112);
    Value seeds = random_tensor(rng, {4, 3}, 1.0, false);
    AggregationOptions opts;
    EXPECT_THROW(summarize_context(seeds, opts, 0), std::invalid_argument);
    EXPECT_THROW(summarize_context(tensor({0, 3}, {}), opts, 2), std::invalid_argument);
}

TEST(Summarize, ConservationAndMassPreservationAllBackends) {
    Rng rng(113);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 2 + rng.next_below(39), d = 1 + rng.next_below(8);
        Value seeds = random_tensor(rng, {n, d}, 1.0, false);
        std::vector<double> wd(n);
        for (double& v : wd) v = 0.05 + rng.next_double();
        Value weights = tensor({n}, wd);
        const std::size_t k = 1 + rng.next_below(8);
        for (Aggregation m : {Aggregation::kBipartite, Aggregation::kBipartiteWeighted,
                              Aggregation::kKMeans, Aggregation::kDpcKnn, Aggregation::kNone}) {
            AggregationOptions opts;
            opts.method = m;
            opts.merge_pace = 1 + int(rng.next_below(100));
            ContextSet ctx = summarize_context(seeds, opts, k,
                                               m == Aggregation::kBipartiteWeighted ? weights
                                                                                    : Value());
            const std::size_t k_out = ctx.sizes.size();
            if (m == Aggregation::kNone)
                EXPECT_EQ(k_out, n);
            else
                EXPECT_LE(k_out, std::max(k, std::min(n, k)));
            // conservation
            std::size_t total = 0;
            for (std::size_t s : ctx.sizes) total += s;
            EXPECT_EQ(total, n) << aggregation_name(m);
            for (int a : ctx.assignment) EXPECT_GE(a, 0);
            // mass preservation under the backend's own averaging weights
            const bool weighted = m == Aggregation::kBipartiteWeighted;
            for (std::size_t j = 0; j < d; ++j) {
                double lhs = 0.0, rhs = 0.0;
                for (std::size_t g = 0; g < k_out; ++g) {
                    double denom = 0.0;
                    for (std::size_t i = 0; i < n; ++i)
                        if (ctx.assignment[i] == int(g)) denom += weighted ? wd[i] : 1.0;
                    lhs += ctx.tokens.data()[g * d + j] * denom;
                }
                for (std::size_t i = 0; i < n; ++i)
                    rhs += (weighted ? wd[i] : 1.0) * seeds.data()[i * d + j];
                EXPECT_NEAR(lhs, rhs, 1e-5) << aggregation_name(m);
            }
        }
    }
}

TEST(Summarize, MeanPreservationAfterEveryIteration) {
    Rng rng(114);
    Value seeds = random_tensor(rng, {24, 5}, 1.0, false);
    AggregationOptions opts;
    opts.merge_pace = 3;
    MergeTrace trace;
    summarize_context(seeds, opts, 4, Value(), &trace);
    ASSERT_FALSE(trace.after_iteration.empty());
    for (const auto& snap : trace.after_iteration) {
        for (std::size_t j = 0; j < 5; ++j) {
            double lhs = 0.0, rhs = 0.0;
            for (std::size_t t = 0; t < snap.features.size(); ++t)
                lhs += double(snap.sizes[t]) * snap.features[t][j];
            for (std::size_t i = 0; i < 24; ++i) rhs += seeds.data()[i * 5 + j];
            EXPECT_NEAR(lhs, rhs, 1e-5);
        }
    }
}

TEST(Summarize, BipartiteMatchesExhaustiveOracleAtPaceOne) {
    Rng rng(115);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 2 + rng.next_below(11), d = 2 + rng.next_below(5);
        const std::size_t k = 1 + rng.next_below(n);
        std::vector<std::vector<double>> feats(n, std::vector<double>(d));
        std::vector<double> flat;
        for (auto& f : feats)
            for (double& v : f) {
                v = rng.next_normal();
                flat.push_back(v);
            }
        Value seeds = tensor({n, d}, flat);
        AggregationOptions opts;
        opts.merge_pace = 1;
        MergeTrace trace;
        ContextSet ctx = summarize_context(seeds, opts, k, Value(), &trace);
        oracle::Result ref = oracle::run(feats, {}, k);
        ASSERT_EQ(trace.steps.size(), ref.merges.size());
        for (std::size_t i = 0; i < ref.merges.size(); ++i) {
            EXPECT_EQ(trace.steps[i].a_pos, ref.merges[i].a_pos);
            EXPECT_EQ(trace.steps[i].b_pos, ref.merges[i].b_pos);
            EXPECT_EQ(trace.steps[i].similarity, ref.merges[i].sim);  // bitwise
        }
        ASSERT_EQ(ctx.sizes.size(), ref.sizes.size());
        for (std::size_t g = 0; g < ref.sizes.size(); ++g) {
            EXPECT_EQ(ctx.sizes[g], ref.sizes[g]);
            for (std::size_t j = 0; j < d; ++j)
                EXPECT_EQ(ctx.tokens.data()[g * d + j], ref.final_tokens[g][j]);  // bitwise
        }
    }
}

TEST(Summarize, GradientFlowsThroughMerging) {
    Rng rng(116);
    Value seeds = random_tensor(rng, {10, 4});
    Value probe = random_tensor(rng, {4, 1}, 1.0, false);
    AggregationOptions opts;
    opts.merge_pace = 2;
    auto closure = [&]() {
        ContextSet ctx = summarize_context(seeds, opts, 3);
        return sum(matmul(ctx.tokens, probe));
    };
    EXPECT_LT(fd_max_rel_err(closure, {seeds}), 1e-5);
}

TEST(Summarize, WeightedGradientFlowsIntoWeights) {
    Rng rng(117);
    Value seeds = random_tensor(rng, {8, 3});
    std::vector<double> wd(8);
    for (double& v : wd) v = 0.2 + rng.next_double();
    Value weights = tensor({8}, wd, true);
    Value probe = random_tensor(rng, {3, 1}, 1.0, false);
    AggregationOptions opts;
    opts.method = Aggregation::kBipartiteWeighted;
    opts.merge_pace = 2;
    auto closure = [&]() {
        ContextSet ctx = summarize_context(seeds, opts, 3, weights);
        return sum(matmul(ctx.tokens, probe));
    };
    EXPECT_LT(fd_max_rel_err(closure, {seeds, weights}), 1e-5);
}

// ---------------------------------------------------------------------------

namespace {

struct AttnFixture {
    AttentionWeights w;
    Value z_ln;
    Value ctx_ln;

    explicit AttnFixture(Rng& rng, std::size_t n = 9, std::size_t d = 16, std::size_t heads = 4,
                         std::size_t kc = 3) {
        w.heads = heads;
        w.w_q = random_tensor(rng, {d, d}, 0.3);
        w.w_k = random_tensor(rng, {d, d}, 0.3);
        w.w_v = random_tensor(rng, {d, d}, 0.3);
        w.w_o = random_tensor(rng, {d, d}, 0.3);
        z_ln = random_tensor(rng, {n, d}, 1.0, false);
        ctx_ln = random_tensor(rng, {kc, d}, 1.0, false);
    }
};

}  // namespace

TEST(TcAttention, EmptyContextBitwiseEqualsPlain) {
    Rng rng(121);
    AttnFixture f(rng);
    Value plain = tc_attention(f.z_ln, f.w);
    Value empty_ctx_tokens = tensor({0, 16}, {});
    ContextKV ckv = project_context(empty_ctx_tokens, f.w);
    Value with_empty = tc_attention(f.z_ln, f.w, &ckv);
    ASSERT_EQ(plain.shape(), with_empty.shape());
    for (std::size_t i = 0; i < plain.size(); ++i)
        EXPECT_EQ(plain.data()[i], with_empty.data()[i]);
}

TEST(TcAttention, UniformBiasShiftInvariance) {
    Rng rng(122);
    AttnFixture f(rng);
    ContextKV ckv = project_context(f.ctx_ln, f.w);
    Value zeros_h = tensor({4}, {0, 0, 0, 0});
    Value c_h = tensor({4}, {2.7, 2.7, 2.7, 2.7});
    auto rows0 = make_bias_rows(zeros_h, zeros_h, 9, 3);
    auto rows_c = make_bias_rows(c_h, c_h, 9, 3);
    Value out0 = tc_attention(f.z_ln, f.w, &ckv, &rows0);
    Value out_c = tc_attention(f.z_ln, f.w, &ckv, &rows_c);
    for (std::size_t i = 0; i < out0.size(); ++i)
        EXPECT_NEAR(out0.data()[i], out_c.data()[i], 1e-12);
}

TEST(TcAttention, HugeNegativeGlobalBiasReducesToPlain) {
    Rng rng(123);
    AttnFixture f(rng);
    ContextKV ckv = project_context(f.ctx_ln, f.w);
    Value zeros_h = tensor({4}, {0, 0, 0, 0});
    Value neg_h = tensor({4}, std::vector<double>(4, -1e9));
    auto rows = make_bias_rows(zeros_h, neg_h, 9, 3);
    Value suppressed = tc_attention(f.z_ln, f.w, &ckv, &rows);
    Value plain = tc_attention(f.z_ln, f.w);
    for (std::size_t i = 0; i < plain.size(); ++i)
        EXPECT_NEAR(plain.data()[i], suppressed.data()[i], 1e-5);
}

TEST(TcAttention, RowsSumToOne) {
    Rng rng(124);
    AttnFixture f(rng);
    ContextKV ckv = project_context(f.ctx_ln, f.w);
    Value bl = tensor({4}, {0.3, -0.1, 0.2, 0.0});
    Value bg = tensor({4}, {-0.2, 0.4, 0.1, -0.3});
    auto rows = make_bias_rows(bl, bg, 9, 3);
    AttentionRecord rec;
    tc_attention(f.z_ln, f.w, &ckv, &rows, &rec);
    ASSERT_EQ(rec.head_probs.size(), 4u);
    for (const Value& p : rec.head_probs) {
        ASSERT_EQ(p.shape(), (Shape{9, 12}));
        for (std::size_t r = 0; r < 9; ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < 12; ++j) s += p.data()[r * 12 + j];
            EXPECT_NEAR(s, 1.0, 1e-9);
        }
    }
}

TEST(TcAttention, HeadWidthMismatchRejected) {
    Rng rng(125);
    AttnFixture f(rng);
    f.w.heads = 5;  // does not divide 16
    EXPECT_THROW(tc_attention(f.z_ln, f.w), std::invalid_argument);
}

TEST(TcAttention, GradientsMatchFiniteDifferences) {
    Rng rng(126);
    const std::size_t n = 5, d = 8, heads = 2, kc = 3;
    AttentionWeights w;
    w.heads = heads;
    w.w_q = random_tensor(rng, {d, d}, 0.3);
    w.w_k = random_tensor(rng, {d, d}, 0.3);
    w.w_v = random_tensor(rng, {d, d}, 0.3);
    w.w_o = random_tensor(rng, {d, d}, 0.3);
    Value z = random_tensor(rng, {n, d});
    Value ctx = random_tensor(rng, {kc, d});
    Value bl = random_tensor(rng, {heads}, 0.2);
    Value bg = random_tensor(rng, {heads}, 0.2);
    Value probe = random_tensor(rng, {n, d}, 1.0, false);
    auto closure = [&]() {
        ContextKV ckv = project_context(ctx, w);
        auto rows = make_bias_rows(bl, bg, n, kc);
        return sum(mul(tc_attention(z, w, &ckv, &rows), probe));
    };
    EXPECT_LT(fd_max_rel_err(closure, {z, ctx, bl, bg, w.w_q, w.w_k, w.w_v, w.w_o}), 1e-5);
}
