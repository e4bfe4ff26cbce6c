#pragma once

// Training loop, evaluation and checkpoint glue. Per-clip graphs are
// independent, so a batch can fan out across worker threads; gradients are
// reduced in batch order afterwards, which keeps runs byte-reproducible for
// any thread count.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "vtc/align.hpp"
#include "vtc/config.hpp"
#include "vtc/data.hpp"
#include "vtc/io.hpp"
#include "vtc/model.hpp"

namespace vtc {

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

inline Checkpoint params_to_checkpoint(const ModelParams& p, const std::string& manifest) {
    Checkpoint ck;
    ck.manifest = manifest;
    for (const auto& [name, v] : p.ordered) ck.tensors.push_back({name, v.shape(), v.data()});
    return ck;
}

inline void load_params_from_checkpoint(ModelParams& p, const Checkpoint& ck) {
    if (ck.tensors.size() != p.ordered.size())
        throw std::invalid_argument("checkpoint holds " + std::to_string(ck.tensors.size()) +
                                    " tensors, model wants " + std::to_string(p.ordered.size()));
    for (auto& [name, v] : p.ordered) {
        const NamedTensor* t = ck.find(name);
        if (!t) throw std::invalid_argument("checkpoint is missing tensor '" + name + "'");
        if (t->shape != v.shape())
            throw std::invalid_argument("checkpoint tensor '" + name + "' has shape " +
                                        shape_str(t->shape) + ", model wants " +
                                        shape_str(v.shape()));
        v.mutable_data() = t->data;
    }
}

inline WeightSnapshot snapshot_from_checkpoint(const Checkpoint& ck) {
    WeightSnapshot s;
    for (const auto& t : ck.tensors) s.tensors.emplace_back(t.name, t.data);
    return s;
}

// Aligns snapshot a to b's schema before interpolation: tensors absent from a
// (no pretrained counterpart, e.g. context biases or VP weights against a
// plain checkpoint) are taken from b at any ratio.
inline WeightSnapshot align_snapshots(const WeightSnapshot& a, const WeightSnapshot& b) {
    WeightSnapshot out;
    out.tensors.reserve(b.tensors.size());
    for (const auto& [name, bv] : b.tensors) {
        const std::vector<double>* av = a.find(name);
        out.tensors.emplace_back(name, av && av->size() == bv.size() ? *av : bv);
    }
    return out;
}

// ---------------------------------------------------------------------------
// batched forward/backward
// ---------------------------------------------------------------------------

struct BatchResult {
    double loss = 0.0;
    double accuracy = 0.0;
    std::vector<std::vector<double>> grads;  // aligned with params.ordered
};

namespace detail {

struct PerClip {
    double loss = 0.0;
    int prediction = -1;
    std::vector<std::vector<double>> grads;
};

template <typename Fn>
void parallel_over(std::size_t n, std::size_t threads, Fn&& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back([&, t]() {
            for (std::size_t i = t; i < n; i += threads) fn(i);
        });
    for (auto& th : pool) th.join();
}

}  // namespace detail

inline BatchResult batch_forward_backward(ModelParams& params, const ModelConfig& cfg,
                                          const std::vector<VideoClip>& clips,
                                          const std::vector<std::size_t>& batch,
                                          std::size_t threads) {
    const std::size_t b = batch.size();
    std::vector<int> labels(b);
    for (std::size_t i = 0; i < b; ++i) labels[i] = clips[batch[i]].label;

    std::vector<detail::PerClip> per(b);
    detail::parallel_over(b, threads, [&](std::size_t i) {
        ClipOutputs out = forward_clip(params, cfg, clips[batch[i]]);
        Value row = batch_row(out, labels);
        Value loss = contrastive_row_loss(row, params.log_tau, i);
        Gradients g = backward(loss);
        per[i].loss = loss.item();
        per[i].prediction = out.prediction;
        per[i].grads.reserve(params.ordered.size());
        for (const auto& [name, v] : params.ordered) per[i].grads.push_back(g.get(v));
    });

    BatchResult res;
    res.grads.resize(params.ordered.size());
    for (std::size_t pi = 0; pi < params.ordered.size(); ++pi)
        res.grads[pi].assign(params.ordered[pi].second.size(), 0.0);
    const double inv_b = 1.0 / double(b);
    for (std::size_t i = 0; i < b; ++i) {
        res.loss += per[i].loss * inv_b;
        res.accuracy += (per[i].prediction == labels[i] ? 1.0 : 0.0) * inv_b;
        for (std::size_t pi = 0; pi < res.grads.size(); ++pi) {
            const auto& gi = per[i].grads[pi];
            auto& acc = res.grads[pi];
            for (std::size_t j = 0; j < gi.size(); ++j) acc[j] += gi[j] * inv_b;
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct EvalMetrics {
    std::size_t n = 0;
    double accuracy = 0.0;
    double mean_loss = 0.0;  // per-clip cross entropy over the class set
};

inline EvalMetrics evaluate(const ModelParams& params, const ModelConfig& cfg,
                            const std::vector<VideoClip>& clips, std::size_t threads = 1) {
    const std::size_t n = clips.size();
    std::vector<double> losses(n, 0.0);
    std::vector<int> preds(n, -1);
    const double tau = std::exp(params.log_tau.item());
    detail::parallel_over(n, threads, [&](std::size_t i) {
        NoGradGuard ng;
        ClipOutputs out = forward_clip(params, cfg, clips[i]);
        preds[i] = out.prediction;
        Value probs = softmax_rows(scale(out.sims, 1.0 / tau));
        losses[i] = -std::log(probs.data()[std::size_t(clips[i].label)]);
    });
    EvalMetrics m;
    m.n = n;
    for (std::size_t i = 0; i < n; ++i) {
        m.accuracy += preds[i] == clips[i].label ? 1.0 : 0.0;
        m.mean_loss += losses[i];
    }
    if (n) {
        m.accuracy /= double(n);
        m.mean_loss /= double(n);
    }
    return m;
}

// ---------------------------------------------------------------------------
// the toy training run
// ---------------------------------------------------------------------------

struct TrainArtifacts {
    std::string metrics_path, timing_path, config_path, ckpt_init_path, ckpt_final_path;
    EvalMetrics final_eval;
    std::size_t rejected_steps = 0;
};

inline std::vector<VideoClip> make_train_clips(const RunConfig& rc) {
    if (rc.data.task == "reversal2")
        return make_reversal_pairs(rc.data, rc.seed, rc.data.train_pairs);
    return make_direction_clips(rc.data, rc.seed, 2 * rc.data.train_pairs);
}

inline std::vector<VideoClip> make_eval_clips(const RunConfig& rc) {
    // Held-out stream: offset seed keeps it disjoint from the train stream.
    if (rc.data.task == "reversal2")
        return make_reversal_pairs(rc.data, rc.seed + 0x9E3779B9ULL, rc.data.eval_pairs);
    return make_direction_clips(rc.data, rc.seed + 0x9E3779B9ULL, 2 * rc.data.eval_pairs);
}

inline TrainArtifacts train_toy_run(const RunConfig& rc, const std::string& out_dir,
                                    ModelParams* out_params = nullptr) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const std::string cfg_json = to_json(rc).dump(2);

    TrainArtifacts art;
    art.metrics_path = out_dir + "/metrics.jsonl";
    art.timing_path = out_dir + "/timing.jsonl";
    art.config_path = out_dir + "/config.json";
    art.ckpt_init_path = out_dir + "/ckpt_init.tcc";
    art.ckpt_final_path = out_dir + "/ckpt_final.tcc";

    {
        std::ofstream cf(art.config_path);
        cf << cfg_json << "\n";
    }

    ModelParams params = init_model_params(rc.model, rc.seed);
    save_checkpoint(art.ckpt_init_path, params_to_checkpoint(params, cfg_json));

    std::vector<VideoClip> train_clips = make_train_clips(rc);

    TrainState state;
    state.opt = rc.train.optimizer();
    state.init(params.ordered);

    std::ofstream metrics(art.metrics_path);
    std::ofstream timing(art.timing_path);
    if (!metrics || !timing) throw std::runtime_error("cannot open log files in " + out_dir);

    Rng batch_rng(rc.seed, 1000);
    for (std::size_t step = 1; step <= rc.train.steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<std::size_t> batch(rc.train.batch);
        for (auto& idx : batch) idx = std::size_t(batch_rng.next_below(train_clips.size()));
        BatchResult br = batch_forward_backward(params, rc.model, train_clips, batch,
                                                rc.train.threads);
        StepResult sr = optimizer_step(state, params.ordered, br.grads);

        json rec;
        rec["step"] = step;
        rec["loss"] = br.loss;
        rec["acc"] = br.accuracy;
        rec["lr"] = sr.lr;
        if (!sr.applied) {
            rec["rejected"] = sr.error;
            ++art.rejected_steps;
        }
        metrics << rec.dump() << "\n";

        const auto t1 = std::chrono::steady_clock::now();
        json trec;
        trec["step"] = step;
        trec["wall_ms"] =
            std::chrono::duration_cast<std::chrono::microseconds>(t1 - t0).count() / 1000.0;
        timing << trec.dump() << "\n";
    }
    metrics.close();
    timing.close();

    save_checkpoint(art.ckpt_final_path, params_to_checkpoint(params, cfg_json));

    std::vector<VideoClip> eval_clips = make_eval_clips(rc);
    art.final_eval = evaluate(params, rc.model, eval_clips, rc.train.threads);
    if (out_params) *out_params = std::move(params);
    return art;
}

// Loads checkpoint a (optionally blended toward b at ratio w) into a model
// built from the manifest config and scores it on that config's held-out set.
inline EvalMetrics eval_checkpoint(const std::string& ckpt_a, const std::string& ckpt_b,
                                   double w, std::size_t threads = 2,
                                   RunConfig* out_rc = nullptr) {
    Checkpoint a = load_checkpoint(ckpt_a);
    RunConfig rc = run_config_from_json(json::parse(a.manifest));
    ModelParams params = init_model_params(rc.model, rc.seed);
    if (!ckpt_b.empty()) {
        WeightSnapshot sa = snapshot_from_checkpoint(a);
        WeightSnapshot sb = snapshot_from_checkpoint(load_checkpoint(ckpt_b));
        load_snapshot(params.ordered, ensemble_weights(align_snapshots(sa, sb), sb, w));
    } else {
        load_params_from_checkpoint(params, a);
    }
    std::vector<VideoClip> eval_clips = make_eval_clips(rc);
    if (out_rc) *out_rc = rc;
    return evaluate(params, rc.model, eval_clips, threads);
}

}  // namespace vtc
