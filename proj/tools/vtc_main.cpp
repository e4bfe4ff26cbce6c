// Command-line harness: toy contrastive training, checkpoint evaluation with
// weight-space ensembling, the gradient-check suite, aggregation benchmarks,
// MAC accounting and assignment-map rendering.
//
// Exit codes: 0 ok, 1 usage/config error, 2 numerical failure.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vtc/config.hpp"
#include "vtc/data.hpp"
#include "vtc/io.hpp"
#include "vtc/macs.hpp"
#include "vtc/model.hpp"
#include "vtc/train.hpp"
#include "vtc/viz.hpp"

using namespace vtc;
using nlohmann::json;

namespace {

struct CommonFlags {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir = "out";
    std::string method;
    double alpha = -1.0;
    long long context_k = -1;
    std::string tc_mode;  // all | lite | off
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "run-config JSON file");
    cmd->add_option("--seed", f.seed, "global RNG seed")->each([&](const std::string&) {
        f.seed_set = true;
    });
    cmd->add_option("--out", f.out_dir, "output directory");
    cmd->add_option("--method", f.method, "aggregation backend")
        ->check(CLI::IsMember({"bipartite", "bipartite-weighted", "kmeans", "dpcknn", "none"}));
    cmd->add_option("--alpha", f.alpha, "seed-token ratio");
    cmd->add_option("--k", f.context_k, "context token count");
    cmd->add_option("--tc", f.tc_mode, "temporal context mode")
        ->check(CLI::IsMember({"all", "lite", "off"}));
}

RunConfig resolve_config(const CommonFlags& f, const std::string& task) {
    RunConfig rc = f.config_path.empty() ? toy_config(task) : load_run_config(f.config_path);
    if (f.seed_set) rc.seed = f.seed;
    if (!f.method.empty()) rc.model.vision.agg.method = aggregation_from_name(f.method);
    if (f.alpha > 0) rc.model.vision.alpha = f.alpha;
    if (f.context_k > 0) rc.model.vision.context_k = std::size_t(f.context_k);
    if (!f.tc_mode.empty()) {
        auto& vc = rc.model.vision;
        if (f.tc_mode == "off") {
            vc.tc_enabled = false;
            rc.model.text.vp_enabled = false;
        } else if (f.tc_mode == "all") {
            vc.tc_enabled = true;
            vc.tc_layers.clear();
            for (std::size_t l = 2; l <= vc.layers; ++l) vc.tc_layers.push_back(l);
        } else {  // lite
            vc.tc_enabled = true;
            vc.tc_layers.clear();
            for (std::size_t l : {4, 8, 12})
                if (l <= vc.layers) vc.tc_layers.push_back(l);
        }
    }
    rc.model.classes = classes_for_task(rc.data.task, rc.model.text.n_prompt);
    return rc;
}

int cmd_train_toy(const CommonFlags& f, const std::string& task, std::size_t steps_override) {
    RunConfig rc = resolve_config(f, task);
    if (steps_override) rc.train.steps = steps_override;
    TrainArtifacts art = train_toy_run(rc, f.out_dir);
    json out;
    out["metrics"] = art.metrics_path;
    out["checkpoint"] = art.ckpt_final_path;
    out["eval"] = {{"n", art.final_eval.n},
                   {"accuracy", art.final_eval.accuracy},
                   {"mean_loss", art.final_eval.mean_loss}};
    out["rejected_steps"] = art.rejected_steps;
    std::cout << out.dump(2) << "\n";
    return art.rejected_steps == 0 ? 0 : 2;
}

int cmd_eval(const std::string& ckpt_a, const std::string& ckpt_b, double w,
             std::size_t threads) {
    EvalMetrics m = eval_checkpoint(ckpt_a, ckpt_b, w, threads);
    json out;
    out["n"] = m.n;
    out["accuracy"] = m.accuracy;
    out["mean_loss"] = m.mean_loss;
    if (!ckpt_b.empty()) out["ensemble_w"] = w;
    std::cout << out.dump(2) << "\n";
    return 0;
}

// Gradient suite on the end-to-end toy model: one forward/reversed pair, the
// batch-row contrastive loss, central differences on a spot-checked sample of
// coordinates from every parameter tensor. The stop-gradient boundary value
// (the context projection feeding VP) is pinned per clip so the differences
// measure the partial derivative the backward pass defines.
int cmd_gradcheck(const CommonFlags& f, double h, std::size_t coords, double tol) {
    RunConfig rc = resolve_config(f, "reversal2");
    ModelParams params = init_model_params(rc.model, rc.seed ? rc.seed : 1);
    std::vector<VideoClip> clips = make_reversal_pairs(rc.data, rc.seed + 11, 1);
    const std::vector<int> labels{clips[0].label, clips[1].label};
    std::vector<Value> frozen(clips.size());
    {
        NoGradGuard ng;
        for (std::size_t i = 0; i < clips.size(); ++i) {
            ClipOutputs o = forward_clip(params, rc.model, clips[i]);
            if (rc.model.text.vp_enabled && o.enc.context)
                frozen[i] = project_context_for_vp(o.enc.context->tokens, params.w_vis);
        }
    }
    auto closure = [&]() {
        std::vector<Value> losses;
        for (std::size_t i = 0; i < clips.size(); ++i) {
            ClipOutputs o = forward_clip(params, rc.model, clips[i],
                                         frozen[i].defined() ? &frozen[i] : nullptr);
            losses.push_back(contrastive_row_loss(batch_row(o, labels), params.log_tau, i));
        }
        return scale(add(losses[0], losses[1]), 0.5);
    };
    const auto t0 = std::chrono::steady_clock::now();
    GradCheckReport rep = grad_check(closure, params.ordered, h, coords, rc.seed + 23);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const auto& e : rep.entries)
        std::printf("%-28s max_rel_err %.3e  (%zu coords)\n", e.name.c_str(), e.max_rel_err,
                    e.coords_checked);
    std::printf("max relative error %.3e over %zu tensors in %.1f s (tolerance %.1e)\n",
                rep.max_rel_err, rep.entries.size(), secs, tol);
    return rep.passes(tol) ? 0 : 2;
}

// Planted-cluster token clouds: purity, mass-preservation error and throughput
// per aggregation backend.
int cmd_merge_bench(std::uint64_t seed, std::size_t clusters, std::size_t per_cluster,
                    std::size_t dim, double noise, std::size_t repeats) {
    Rng rng(seed, 9);
    const std::size_t n = clusters * per_cluster;
    std::vector<double> flat(n * dim);
    std::vector<int> labels(n);
    for (std::size_t c = 0; c < clusters; ++c)
        for (std::size_t i = 0; i < per_cluster; ++i) {
            const std::size_t row = c * per_cluster + i;
            labels[row] = int(c);
            for (std::size_t j = 0; j < dim; ++j)
                flat[row * dim + j] = (j == c ? 1.0 : 0.0) + noise * rng.next_normal();
        }
    Value seeds = tensor({n, dim}, flat);
    std::vector<double> wd(n);
    for (double& v : wd) v = 0.5 + rng.next_double();
    Value weights = tensor({n}, wd);

    for (Aggregation m : {Aggregation::kBipartite, Aggregation::kBipartiteWeighted,
                          Aggregation::kKMeans, Aggregation::kDpcKnn, Aggregation::kNone}) {
        AggregationOptions opts;
        opts.method = m;
        ContextSet ctx;
        const auto t0 = std::chrono::steady_clock::now();
        for (std::size_t r = 0; r < repeats; ++r)
            ctx = summarize_context(seeds, opts, clusters,
                                    m == Aggregation::kBipartiteWeighted ? weights : Value());
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        // purity: majority planted label per context token
        const std::size_t k_out = ctx.sizes.size();
        std::vector<std::vector<std::size_t>> counts(k_out,
                                                     std::vector<std::size_t>(clusters, 0));
        for (std::size_t i = 0; i < n; ++i) counts[ctx.assignment[i]][labels[i]]++;
        double pure = 0;
        for (const auto& row : counts) pure += double(*std::max_element(row.begin(), row.end()));
        pure /= double(n);

        const bool weighted = m == Aggregation::kBipartiteWeighted;
        double mp_err = 0;
        for (std::size_t j = 0; j < dim; ++j) {
            double lhs = 0, rhs = 0;
            for (std::size_t g = 0; g < k_out; ++g) {
                double denom = 0;
                for (std::size_t i = 0; i < n; ++i)
                    if (ctx.assignment[i] == int(g)) denom += weighted ? wd[i] : 1.0;
                lhs += ctx.tokens.data()[g * dim + j] * denom;
            }
            for (std::size_t i = 0; i < n; ++i)
                rhs += (weighted ? wd[i] : 1.0) * flat[i * dim + j];
            mp_err = std::max(mp_err, std::abs(lhs - rhs));
        }
        json rec;
        rec["method"] = aggregation_name(m);
        rec["tokens"] = n;
        rec["k_out"] = k_out;
        rec["purity"] = pure;
        rec["mass_error"] = mp_err;
        rec["tokens_per_sec"] = double(n) * double(repeats) / secs;
        std::cout << rec.dump() << "\n";
    }
    return 0;
}

int cmd_macs(const MacsShape& shape, const std::string& tc_mode) {
    const TcMode mode = tc_mode == "off"   ? TcMode::kOff
                        : tc_mode == "lite" ? TcMode::kLite
                                             : TcMode::kAll;
    MacsReport on = count_macs(shape, mode);
    MacsReport off = count_macs(shape, TcMode::kOff);
    json out;
    out["shape"] = {{"d", shape.d},         {"n_patches", shape.n_patches},
                    {"frames", shape.frames}, {"context_k", shape.context_k},
                    {"layers", shape.layers}, {"alpha", shape.alpha},
                    {"merge_pace", shape.merge_pace}};
    out["mode"] = tc_mode.empty() ? "all" : tc_mode;
    json layers = json::array();
    for (const auto& lm : on.layers)
        layers.push_back({{"layer", lm.layer},
                          {"projections", lm.projections},
                          {"attention", lm.attention},
                          {"ffn", lm.ffn},
                          {"context_kv", lm.context_kv},
                          {"summarize", lm.summarize},
                          {"total", lm.total()}});
    out["layers"] = layers;
    out["total_macs"] = on.total;
    out["baseline_macs"] = off.total;
    out["ratio_vs_off"] = on.total / off.total;
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_viz(const CommonFlags& f, const std::string& ckpt, bool svg) {
    RunConfig rc = resolve_config(f, "reversal2");
    if (!rc.model.vision.tc_enabled)
        throw std::invalid_argument("viz needs temporal context enabled");
    ModelParams params = init_model_params(rc.model, rc.seed ? rc.seed : 1);
    if (!ckpt.empty()) load_params_from_checkpoint(params, load_checkpoint(ckpt));
    Rng rng(rc.seed ? rc.seed : 1, 5);
    VideoClip clip = gen_moving_square(base_spec(rc.data, rng));
    NoGradGuard ng;
    ClipOutputs out = forward_clip(params, rc.model, clip);
    if (!out.enc.context || !out.enc.context_seeds)
        throw std::invalid_argument("viz: the forward pass produced no context set");
    std::filesystem::create_directories(f.out_dir);
    const std::string stem = f.out_dir + "/assignment";
    std::string path = render_assignment_map(clip, rc.model.vision.patch,
                                             *out.enc.context_seeds, *out.enc.context, stem, svg);
    std::cout << path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"temporal-context video-text alignment lab"};
    app.require_subcommand(1);

    CommonFlags train_f, grad_f, viz_f;
    std::string task = "reversal2";
    std::size_t steps_override = 0;
    auto* train_cmd = app.add_subcommand("train-toy", "train the toy model");
    add_common(train_cmd, train_f);
    train_cmd->add_option("--task", task)->check(CLI::IsMember({"reversal2", "direction4"}));
    train_cmd->add_option("--steps", steps_override, "override step count");

    std::string ckpt_a, ckpt_b;
    double ensemble_w = 0.7;
    std::size_t eval_threads = 2;
    auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint");
    eval_cmd->add_option("--ckpt-a", ckpt_a, "checkpoint to evaluate")->required();
    eval_cmd->add_option("--ckpt-b", ckpt_b, "second checkpoint for weight ensembling");
    eval_cmd->add_option("--ensemble-w", ensemble_w, "interpolation ratio toward ckpt-b");
    eval_cmd->add_option("--threads", eval_threads);

    double gc_h = 1e-5, gc_tol = 1e-4;
    std::size_t gc_coords = 4;
    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    add_common(grad_cmd, grad_f);
    grad_cmd->add_option("--fd-step", gc_h, "finite-difference step");
    grad_cmd->add_option("--coords", gc_coords, "coordinates checked per tensor");
    grad_cmd->add_option("--tol", gc_tol, "max relative error tolerance");

    std::uint64_t mb_seed = 1;
    std::size_t mb_clusters = 4, mb_per = 8, mb_dim = 16, mb_repeats = 50;
    double mb_noise = 1e-3;
    auto* bench_cmd = app.add_subcommand("merge-bench", "aggregation backends on planted clusters");
    bench_cmd->add_option("--seed", mb_seed);
    bench_cmd->add_option("--clusters", mb_clusters);
    bench_cmd->add_option("--per-cluster", mb_per);
    bench_cmd->add_option("--dim", mb_dim);
    bench_cmd->add_option("--noise", mb_noise);
    bench_cmd->add_option("--repeats", mb_repeats);

    MacsShape shape = vit_b16_shape();
    std::string macs_tc = "all";
    auto* macs_cmd = app.add_subcommand("macs", "multiply-accumulate accounting");
    macs_cmd->add_option("--d", shape.d);
    macs_cmd->add_option("--n-patches", shape.n_patches);
    macs_cmd->add_option("--frames", shape.frames);
    macs_cmd->add_option("--k", shape.context_k);
    macs_cmd->add_option("--layers", shape.layers);
    macs_cmd->add_option("--alpha", shape.alpha);
    macs_cmd->add_option("--pace", shape.merge_pace);
    macs_cmd->add_option("--tc", macs_tc)->check(CLI::IsMember({"all", "lite", "off"}));

    std::string viz_ckpt;
    bool viz_svg = false;
    auto* viz_cmd = app.add_subcommand("viz", "render the seed/context assignment map");
    add_common(viz_cmd, viz_f);
    viz_cmd->add_option("--ckpt-a", viz_ckpt, "checkpoint to visualize");
    viz_cmd->add_flag("--svg", viz_svg, "also emit an SVG");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) return cmd_train_toy(train_f, task, steps_override);
        if (eval_cmd->parsed()) return cmd_eval(ckpt_a, ckpt_b, ensemble_w, eval_threads);
        if (grad_cmd->parsed()) return cmd_gradcheck(grad_f, gc_h, gc_coords, gc_tol);
        if (bench_cmd->parsed())
            return cmd_merge_bench(mb_seed, mb_clusters, mb_per, mb_dim, mb_noise, mb_repeats);
        if (macs_cmd->parsed()) return cmd_macs(shape, macs_tc);
        if (viz_cmd->parsed()) return cmd_viz(viz_f, viz_ckpt, viz_svg);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
