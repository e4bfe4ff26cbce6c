#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "vtc/config.hpp"
#include "vtc/data.hpp"
#include "vtc/io.hpp"
#include "vtc/macs.hpp"
#include "vtc/train.hpp"
#include "vtc/viz.hpp"

using namespace vtc;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("vtc_test_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::vector<char> read_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(is), {});
}

RunConfig tiny_run_config() {
    RunConfig rc = toy_config();
    rc.model.vision.frames = 4;
    rc.model.vision.height = 16;
    rc.model.vision.width = 16;
    rc.model.vision.d_v = 16;
    rc.model.vision.heads = 2;
    rc.model.vision.layers = 2;
    rc.model.vision.tc_layers = {2};
    rc.model.vision.alpha = 0.5;
    rc.model.vision.context_k = 4;
    rc.model.text.d_l = 16;
    rc.model.text.heads = 2;
    rc.model.text.layers = 2;
    rc.data.frames = 4;
    rc.data.height = 16;
    rc.data.width = 16;
    rc.data.square = 4;
    rc.data.start_row = 6;
    rc.data.start_col = 1;
    rc.data.vel_col = 2;
    rc.data.train_pairs = 4;
    rc.data.eval_pairs = 4;
    rc.train.steps = 3;
    rc.train.batch = 4;
    rc.train.warmup_steps = 2;
    return rc;
}

}  // namespace

TEST(Rng, MatchesDocumentedAlgorithm) {
    // reference values computed independently from the written-down update
    Rng r(1);
    EXPECT_EQ(r.next_u64(), 0xa784c31d524d0df7ULL);
    EXPECT_EQ(r.next_u64(), 0x39c3f1e2dab8846cULL);
    EXPECT_EQ(r.next_u64(), 0x92f79659eb1cc4dfULL);
    Rng r1(1);
    EXPECT_DOUBLE_EQ(r1.next_double(), 0.6543695398889221);
    Rng r2(7, 2);
    EXPECT_EQ(r2.next_u64(), 0x0e56f728898b5edeULL);
}

TEST(TensorFile, ScalarRoundTrip) {
    std::string dir = temp_dir("tct_scalar");
    NamedTensor t{"answer", {}, {3.5}};
    save_tensor(dir + "/s.tct", t);
    NamedTensor back = load_tensor(dir + "/s.tct");
    EXPECT_EQ(back.name, "answer");
    EXPECT_TRUE(back.shape.empty());
    EXPECT_EQ(back.data, t.data);
}

TEST(TensorFile, MatrixRoundTripBitExact) {
    std::string dir = temp_dir("tct_matrix");
    Rng rng(5);
    NamedTensor t{"m", {2, 3}, {}};
    for (int i = 0; i < 6; ++i) t.data.push_back(rng.next_normal() * 1e154);
    save_tensor(dir + "/m.tct", t);
    NamedTensor back = load_tensor(dir + "/m.tct");
    EXPECT_EQ(back.shape, t.shape);
    for (int i = 0; i < 6; ++i)
        EXPECT_EQ(std::memcmp(&back.data[i], &t.data[i], 8), 0);
}

TEST(TensorFile, F32WidensOnLoad) {
    std::string dir = temp_dir("tct_f32");
    NamedTensor t{"w", {3}, {0.25, -1.5, 1024.0}};  // exactly representable in f32
    save_tensor(dir + "/w.tct", t, true);
    NamedTensor back = load_tensor(dir + "/w.tct");
    EXPECT_EQ(back.data, t.data);
}

TEST(TensorFile, TruncationNamesExpectedAndActual) {
    std::string dir = temp_dir("tct_trunc");
    NamedTensor t{"m", {2, 3}, {1, 2, 3, 4, 5, 6}};
    save_tensor(dir + "/m.tct", t);
    auto bytes = read_bytes(dir + "/m.tct");
    bytes.pop_back();
    std::ofstream os(dir + "/cut.tct", std::ios::binary);
    os.write(bytes.data(), std::streamsize(bytes.size()));
    os.close();
    try {
        load_tensor(dir + "/cut.tct");
        FAIL() << "expected truncation error";
    } catch (const std::runtime_error& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("truncated"), std::string::npos) << msg;
        EXPECT_NE(msg.find("expected"), std::string::npos) << msg;
    }
}

TEST(TensorFile, BadMagicReportsOffset) {
    std::string dir = temp_dir("tct_magic");
    std::ofstream os(dir + "/bad.tct", std::ios::binary);
    os << "NOPEketchup";
    os.close();
    try {
        load_tensor(dir + "/bad.tct");
        FAIL() << "expected magic error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("offset 0"), std::string::npos) << e.what();
    }
}

TEST(Checkpoint, RoundTripWithManifest) {
    std::string dir = temp_dir("ckpt");
    Checkpoint ck;
    ck.manifest = R"({"note":"hello"})";
    ck.tensors.push_back({"a", {2}, {1.5, -2.5}});
    ck.tensors.push_back({"b", {1, 3}, {0.1, 0.2, 0.3}});
    save_checkpoint(dir + "/c.tcc", ck);
    Checkpoint back = load_checkpoint(dir + "/c.tcc");
    EXPECT_EQ(back.manifest, ck.manifest);
    ASSERT_EQ(back.tensors.size(), 2u);
    EXPECT_EQ(back.tensors[0].name, "a");
    EXPECT_EQ(back.tensors[1].data, ck.tensors[1].data);
    EXPECT_NE(back.find("b"), nullptr);
    EXPECT_EQ(back.find("zz"), nullptr);
}

// ---------------------------------------------------------------------------

TEST(MovingSquare, RightwardTrajectoryPositions) {
    SquareClipSpec spec;
    spec.frames = 4;
    spec.height = spec.width = 8;
    spec.square = 2;
    spec.start_row = 3;
    spec.start_col = 1;
    spec.vel_col = 1;
    spec.vel_row = 0;
    spec.noise = 0.0;
    spec.background = 0.0;
    VideoClip clip = gen_moving_square(spec);
    EXPECT_EQ(clip.label, kLabelRight);
    for (std::size_t t = 0; t < 4; ++t) {
        const std::size_t col = 1 + t;
        EXPECT_EQ(clip.at(t, 3, col, 0), 1.0) << "frame " << t;
        EXPECT_EQ(clip.at(t, 3, col + 1, 0), 1.0) << "frame " << t;
        EXPECT_EQ(clip.at(t, 3, col - 1, 0), 0.0) << "frame " << t;
        EXPECT_EQ(clip.at(t, 3, col + 2, 0), 0.0) << "frame " << t;
    }
}

TEST(MovingSquare, TrajectoryLeavingGridRejected) {
    SquareClipSpec spec;
    spec.frames = 8;
    spec.height = spec.width = 8;
    spec.square = 2;
    spec.start_col = 1;
    spec.vel_col = 1;  // would reach column 8 + 2 > 8
    spec.start_row = 3;
    EXPECT_THROW(gen_moving_square(spec), std::invalid_argument);
}

TEST(MovingSquare, DeterministicForSeedAndConfig) {
    SquareClipSpec spec;
    spec.noise_seed = 77;
    VideoClip a = gen_moving_square(spec);
    VideoClip b = gen_moving_square(spec);
    EXPECT_EQ(a.pixels, b.pixels);
    spec.noise_seed = 78;
    VideoClip c = gen_moving_square(spec);
    EXPECT_NE(a.pixels, c.pixels);
}

TEST(MovingSquare, ReversalPairsAreBitExactMirrors) {
    DataConfig d;
    auto clips = make_reversal_pairs(d, 9, 3);
    ASSERT_EQ(clips.size(), 6u);
    const std::size_t fs = d.height * d.width * 3;
    for (std::size_t p = 0; p < 3; ++p) {
        const VideoClip& fwd = clips[2 * p];
        const VideoClip& rev = clips[2 * p + 1];
        EXPECT_EQ(fwd.label, kLabelForward);
        EXPECT_EQ(rev.label, kLabelReversed);
        for (std::size_t t = 0; t < d.frames; ++t)
            EXPECT_TRUE(std::equal(rev.pixels.begin() + t * fs, rev.pixels.begin() + (t + 1) * fs,
                                   fwd.pixels.begin() + (d.frames - 1 - t) * fs));
    }
}

TEST(MovingSquare, DirectionLabels) {
    SquareClipSpec spec;
    spec.vel_col = -2;
    spec.start_col = 20;
    EXPECT_EQ(gen_moving_square(spec).label, kLabelLeft);
    spec.vel_col = 0;
    spec.vel_row = 2;
    spec.start_row = 2;
    spec.start_col = 10;
    EXPECT_EQ(gen_moving_square(spec).label, kLabelDown);
}

// ---------------------------------------------------------------------------

TEST(Config, JsonRoundTripPreservesFields) {
    RunConfig rc = toy_config("direction4");
    rc.seed = 99;
    rc.model.vision.agg.method = Aggregation::kDpcKnn;
    rc.model.vision.agg.merge_pace = 7;
    rc.model.vision.alpha = 0.4;
    rc.train.lr = 2.5e-4;
    rc.data.noise = 0.05;
    RunConfig back = run_config_from_json(to_json(rc));
    EXPECT_EQ(back.seed, 99u);
    EXPECT_EQ(back.model.vision.agg.method, Aggregation::kDpcKnn);
    EXPECT_EQ(back.model.vision.agg.merge_pace, 7);
    EXPECT_DOUBLE_EQ(back.model.vision.alpha, 0.4);
    EXPECT_DOUBLE_EQ(back.train.lr, 2.5e-4);
    EXPECT_DOUBLE_EQ(back.data.noise, 0.05);
    EXPECT_EQ(back.data.task, "direction4");
    EXPECT_EQ(back.model.classes.size(), 4u);
    EXPECT_EQ(to_json(back).dump(), to_json(rc).dump());
}

// ---------------------------------------------------------------------------

TEST(Macs, ScoreValueProductFormula) {
    EXPECT_DOUBLE_EQ(score_value_macs(2, 3, 4), 48.0);
}

TEST(Macs, TcOffMatchesClosedFormSingleLayer) {
    MacsShape s;
    s.d = 32;
    s.n_patches = 9;
    s.frames = 5;
    s.layers = 1;
    MacsReport rep = count_macs(s, TcMode::kOff);
    const double n = 10, d = 32, T = 5;
    const double expect = T * (12.0 * n * d * d + 2.0 * n * n * d);
    EXPECT_DOUBLE_EQ(rep.total, expect);
    EXPECT_EQ(rep.layers[0].context_kv, 0.0);
    EXPECT_EQ(rep.layers[0].summarize, 0.0);
}

TEST(Macs, VitB16RatioWithinWindow) {
    MacsShape s = vit_b16_shape();
    MacsReport on = count_macs(s, TcMode::kAll);
    MacsReport off = count_macs(s, TcMode::kOff);
    const double ratio = on.total / off.total;
    EXPECT_GE(ratio, 1.05);
    EXPECT_LE(ratio, 1.12);
}

TEST(Macs, LiteCostsLessThanFull) {
    MacsShape s = vit_b16_shape();
    const double all = count_macs(s, TcMode::kAll).total;
    const double lite = count_macs(s, TcMode::kLite).total;
    const double off = count_macs(s, TcMode::kOff).total;
    EXPECT_LT(lite, all);
    EXPECT_GT(lite, off);
}

TEST(Macs, BipartiteScheduleMacs) {
    // 8 tokens -> k=2 at pace 2: iterations 8,6,4 with |A|x|B| = 16,9,4
    EXPECT_DOUBLE_EQ(bipartite_similarity_macs(8, 2, 2, 3), (16.0 + 9.0 + 4.0) * 3.0);
}

// ---------------------------------------------------------------------------

namespace {

// counts which of the expected context hues appear anywhere in the image
std::size_t distinct_hue_count(const Image& img, std::size_t k_out) {
    auto hues = context_hues(k_out);
    std::size_t found = 0;
    for (std::size_t j = 0; j < hues.size(); ++j) {
        bool present = false;
        for (const Rgb& p : img.px)
            if (p == hues[j]) {
                present = true;
                break;
            }
        if (present) ++found;
    }
    return found;
}

}  // namespace

TEST(Viz, SpecExampleRendersFourHues) {
    // one 32x32 frame, patch 8 -> 16 patches; the six-seed bipartite example
    SquareClipSpec spec;
    spec.frames = 1;
    spec.noise_seed = 3;
    VideoClip clip = gen_moving_square(spec);

    SeedSelection seeds;
    seeds.seeds_per_frame = 6;
    seeds.per_frame = {{0, 1, 2, 3, 4, 5}};
    Value toks = tensor({6, 2}, {1, 0, 0.99, 0.1, 0, 1, 0.1, 0.99, -1, 0, 0.7, 0.7});
    AggregationOptions opts;
    opts.merge_pace = 2;
    ContextSet ctx = summarize_context(toks, opts, 4);
    ASSERT_EQ(ctx.sizes.size(), 4u);

    std::string dir = temp_dir("viz4");
    std::string path = render_assignment_map(clip, 8, seeds, ctx, dir + "/map", true);
    Image img = read_ppm(path);
    EXPECT_EQ(distinct_hue_count(img, 4), 4u);
    EXPECT_TRUE(fs::exists(dir + "/map.svg"));
}

TEST(Viz, NoneBackendGivesEverySeedItsOwnHue) {
    SquareClipSpec spec;
    spec.frames = 1;
    spec.noise_seed = 4;
    VideoClip clip = gen_moving_square(spec);
    SeedSelection seeds;
    seeds.seeds_per_frame = 5;
    seeds.per_frame = {{2, 5, 7, 11, 13}};
    Rng rng(8);
    AggregationOptions opts;
    opts.method = Aggregation::kNone;
    ContextSet ctx = summarize_context(testutil::random_tensor(rng, {5, 3}, 1.0, false), opts, 3);
    std::string dir = temp_dir("viz_none");
    Image img = read_ppm(render_assignment_map(clip, 8, seeds, ctx, dir + "/map"));
    EXPECT_EQ(distinct_hue_count(img, 5), 5u);
}

TEST(Viz, SingleContextSingleHue) {
    SquareClipSpec spec;
    spec.frames = 2;
    spec.noise_seed = 5;
    VideoClip clip = gen_moving_square(spec);
    SeedSelection seeds;
    seeds.seeds_per_frame = 2;
    seeds.per_frame = {{0, 3}, {1, 2}};
    Value toks = tensor({4, 2}, std::vector<double>(8, 0.5));
    AggregationOptions opts;
    ContextSet ctx = summarize_context(toks, opts, 1);
    ASSERT_EQ(ctx.sizes.size(), 1u);
    std::string dir = temp_dir("viz1");
    Image img = read_ppm(render_assignment_map(clip, 8, seeds, ctx, dir + "/map"));
    EXPECT_EQ(distinct_hue_count(img, 1), 1u);
}

// ---------------------------------------------------------------------------

TEST(TrainRun, ReproducibleAndThreadCountInvariant) {
    RunConfig rc = tiny_run_config();
    std::string d1 = temp_dir("run_a"), d2 = temp_dir("run_b"), d3 = temp_dir("run_c");
    train_toy_run(rc, d1);
    train_toy_run(rc, d2);
    RunConfig rc3 = rc;
    rc3.train.threads = 1;
    train_toy_run(rc3, d3);

    auto m1 = read_bytes(d1 + "/metrics.jsonl");
    auto m2 = read_bytes(d2 + "/metrics.jsonl");
    EXPECT_FALSE(m1.empty());
    EXPECT_EQ(m1, m2);
    EXPECT_EQ(read_bytes(d1 + "/ckpt_final.tcc"), read_bytes(d2 + "/ckpt_final.tcc"));
    // gradient reduction is ordered, so the thread count cannot change any
    // computed value (the checkpoint manifest differs: it records the config)
    EXPECT_EQ(m1, read_bytes(d3 + "/metrics.jsonl"));
    Checkpoint c1 = load_checkpoint(d1 + "/ckpt_final.tcc");
    Checkpoint c3 = load_checkpoint(d3 + "/ckpt_final.tcc");
    ASSERT_EQ(c1.tensors.size(), c3.tensors.size());
    for (std::size_t i = 0; i < c1.tensors.size(); ++i) {
        EXPECT_EQ(c1.tensors[i].name, c3.tensors[i].name);
        EXPECT_EQ(c1.tensors[i].data, c3.tensors[i].data);
    }
}

TEST(TrainRun, MetricLogLinesAreSelfContainedRecords) {
    RunConfig rc = tiny_run_config();
    std::string dir = temp_dir("run_log");
    train_toy_run(rc, dir);
    std::ifstream is(dir + "/metrics.jsonl");
    std::string line;
    std::size_t lines = 0;
    while (std::getline(is, line)) {
        nlohmann::json j = nlohmann::json::parse(line);  // throws on malformed records
        EXPECT_TRUE(j.contains("step"));
        EXPECT_TRUE(j.contains("loss"));
        EXPECT_TRUE(j.contains("acc"));
        ++lines;
    }
    EXPECT_EQ(lines, rc.train.steps);
    std::ifstream ts(dir + "/timing.jsonl");
    std::size_t tlines = 0;
    while (std::getline(ts, line)) {
        nlohmann::json j = nlohmann::json::parse(line);
        EXPECT_TRUE(j.contains("wall_ms"));
        ++tlines;
    }
    EXPECT_EQ(tlines, rc.train.steps);
}

TEST(TrainRun, CheckpointReloadReproducesEval) {
    RunConfig rc = tiny_run_config();
    std::string dir = temp_dir("run_reload");
    ModelParams trained;
    TrainArtifacts art = train_toy_run(rc, dir, &trained);

    ModelParams fresh = init_model_params(rc.model, rc.seed);
    load_params_from_checkpoint(fresh, load_checkpoint(art.ckpt_final_path));
    std::vector<VideoClip> eval_clips = make_eval_clips(rc);
    EvalMetrics again = evaluate(fresh, rc.model, eval_clips, 1);
    EXPECT_EQ(again.accuracy, art.final_eval.accuracy);
    EXPECT_EQ(again.mean_loss, art.final_eval.mean_loss);
}

TEST(TrainRun, EnsembleEndpointsReproduceSnapshots) {
    RunConfig rc = tiny_run_config();
    std::string dir = temp_dir("run_ens");
    TrainArtifacts art = train_toy_run(rc, dir);
    EvalMetrics a = eval_checkpoint(art.ckpt_init_path, "", 0.0, 1);
    EvalMetrics b = eval_checkpoint(art.ckpt_final_path, "", 0.0, 1);
    EvalMetrics w0 = eval_checkpoint(art.ckpt_init_path, art.ckpt_final_path, 0.0, 1);
    EvalMetrics w1 = eval_checkpoint(art.ckpt_init_path, art.ckpt_final_path, 1.0, 1);
    EXPECT_EQ(w0.accuracy, a.accuracy);
    EXPECT_EQ(w0.mean_loss, a.mean_loss);
    EXPECT_EQ(w1.accuracy, b.accuracy);
    EXPECT_EQ(w1.mean_loss, b.mean_loss);
}
