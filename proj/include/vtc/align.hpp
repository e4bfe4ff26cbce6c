#pragma once

// Video-text alignment: cosine similarity, the video->text contrastive loss,
// AdamW with warmup + cosine decay, weight-space ensembling, and a central
// finite-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vtc/rng.hpp"
#include "vtc/tensor.hpp"

namespace vtc {

using ParamList = std::vector<std::pair<std::string, Value>>;

// ---------------------------------------------------------------------------
// similarity and loss
// ---------------------------------------------------------------------------

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("cosine_similarity: length mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0)
        throw std::invalid_argument("cosine_similarity: zero vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline Value cosine_similarity(const Value& a, const Value& b) {
    if (a.shape() != b.shape() || a.rank() != 1)
        throw std::invalid_argument("cosine_similarity: rank-1 vectors of equal length required");
    double na = 0.0, nb = 0.0;
    for (double x : a.data()) na += x * x;
    for (double x : b.data()) nb += x * x;
    if (na == 0.0 || nb == 0.0)
        throw std::invalid_argument("cosine_similarity: zero vector");
    Value dot = sum(mul(a, b));
    Value den = sqrt_op(mul(sum(mul(a, a)), sum(mul(b, b))));
    return mul(dot, reciprocal(den));
}

// L = -(1/B) sum_i log softmax(S_i / tau)_i, matched pairs on the diagonal.
inline Value contrastive_loss(const Value& s, double tau) {
    if (s.rank() != 2 || s.shape()[0] != s.shape()[1])
        throw std::invalid_argument("contrastive_loss: square matrix required, got " +
                                    shape_str(s.shape()));
    if (tau <= 0.0) throw std::invalid_argument("contrastive_loss: tau must be positive");
    const std::size_t b = s.shape()[0];
    Value probs = softmax_rows(scale(s, 1.0 / tau));
    std::vector<Value> diag;
    diag.reserve(b);
    for (std::size_t i = 0; i < b; ++i) diag.push_back(at(probs, i * b + i));
    return scale(sum(log_op(stack_scalars(diag))), -1.0 / double(b));
}

// Same loss with a learnable log-temperature value in the graph.
inline Value contrastive_loss(const Value& s, const Value& log_tau) {
    if (s.rank() != 2 || s.shape()[0] != s.shape()[1])
        throw std::invalid_argument("contrastive_loss: square matrix required");
    const std::size_t b = s.shape()[0];
    Value probs = softmax_rows(mul(s, exp_op(neg(log_tau))));
    std::vector<Value> diag;
    diag.reserve(b);
    for (std::size_t i = 0; i < b; ++i) diag.push_back(at(probs, i * b + i));
    return scale(sum(log_op(stack_scalars(diag))), -1.0 / double(b));
}

// One row of the batch loss: -log softmax(sims / tau)[index].
inline Value contrastive_row_loss(const Value& sims_row, const Value& log_tau, std::size_t index) {
    Value probs = softmax_rows(mul(sims_row, exp_op(neg(log_tau))));
    return neg(log_op(at(probs, index)));
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

struct OptimizerConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
    double weight_decay = 0.001;   // decoupled; applied to rank >= 2 tensors
    std::size_t warmup_steps = 50;
    std::size_t total_steps = 1000;
    double min_lr_ratio = 0.01;    // cosine decays lr to lr * ratio
    // per-group learning-rate multipliers, matched by parameter-name prefix
    std::vector<std::pair<std::string, double>> lr_groups{{"vp.", 10.0}};

    double group_multiplier(const std::string& name) const {
        for (const auto& [prefix, mult] : lr_groups)
            if (name.rfind(prefix, 0) == 0) return mult;
        return 1.0;
    }
};

inline double lr_at_step(const OptimizerConfig& cfg, std::size_t step) {
    if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps)
        return cfg.lr * double(step) / double(cfg.warmup_steps);
    const double lo = cfg.lr * cfg.min_lr_ratio;
    if (cfg.total_steps <= cfg.warmup_steps) return lo;
    double t = double(step - cfg.warmup_steps) / double(cfg.total_steps - cfg.warmup_steps);
    t = std::min(t, 1.0);
    return lo + 0.5 * (cfg.lr - lo) * (1.0 + std::cos(3.14159265358979323846 * t));
}

struct TrainState {
    OptimizerConfig opt;
    std::vector<std::vector<double>> m, v;  // aligned with the param list
    std::size_t step = 0;

    void init(const ParamList& params) {
        m.assign(params.size(), {});
        v.assign(params.size(), {});
        for (std::size_t i = 0; i < params.size(); ++i) {
            m[i].assign(params[i].second.size(), 0.0);
            v[i].assign(params[i].second.size(), 0.0);
        }
    }
};

struct StepResult {
    bool applied = false;
    double lr = 0.0;
    std::string error;
};

// Decoupled-weight-decay adaptive step with bias correction. A non-finite
// gradient anywhere rejects the whole step and reports the offending tensor.
inline StepResult optimizer_step(TrainState& state, ParamList& params,
                                 const std::vector<std::vector<double>>& grads) {
    if (grads.size() != params.size())
        throw std::invalid_argument("optimizer_step: gradient list misaligned");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].size() != params[i].second.size())
            throw std::invalid_argument("optimizer_step: gradient shape misaligned for " +
                                        params[i].first);
        for (double gv : grads[i])
            if (!std::isfinite(gv))
                return {false, 0.0, "non-finite gradient in " + params[i].first};
    }
    state.step += 1;
    const double lr = lr_at_step(state.opt, state.step);
    const double b1 = state.opt.beta1, b2 = state.opt.beta2;
    const double bc1 = 1.0 - std::pow(b1, double(state.step));
    const double bc2 = 1.0 - std::pow(b2, double(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].second.mutable_data();
        const bool decay = params[i].second.rank() >= 2;
        const double group_lr = lr * state.opt.group_multiplier(params[i].first);
        auto& mi = state.m[i];
        auto& vi = state.v[i];
        const auto& gi = grads[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            mi[j] = b1 * mi[j] + (1.0 - b1) * gi[j];
            vi[j] = b2 * vi[j] + (1.0 - b2) * gi[j] * gi[j];
            double mhat = mi[j] / bc1;
            double vhat = vi[j] / bc2;
            double upd = mhat / (std::sqrt(vhat) + state.opt.eps);
            if (decay) upd += state.opt.weight_decay * p[j];
            p[j] -= group_lr * upd;
        }
    }
    return {true, lr, ""};
}

// ---------------------------------------------------------------------------
// weight-space ensembling
// ---------------------------------------------------------------------------

struct WeightSnapshot {
    std::vector<std::pair<std::string, std::vector<double>>> tensors;

    const std::vector<double>* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.first == name) return &t.second;
        return nullptr;
    }
};

inline WeightSnapshot snapshot_params(const ParamList& params) {
    WeightSnapshot s;
    s.tensors.reserve(params.size());
    for (const auto& [name, v] : params) s.tensors.emplace_back(name, v.data());
    return s;
}

// theta_w = (1-w) a + w b, per tensor; schemas must match exactly.
inline WeightSnapshot ensemble_weights(const WeightSnapshot& a, const WeightSnapshot& b,
                                       double w) {
    if (a.tensors.size() != b.tensors.size())
        throw std::invalid_argument("ensemble_weights: snapshots differ in tensor count");
    WeightSnapshot out;
    out.tensors.reserve(a.tensors.size());
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
        const auto& [an, av] = a.tensors[i];
        const auto& [bn, bv] = b.tensors[i];
        if (an != bn || av.size() != bv.size())
            throw std::invalid_argument("ensemble_weights: schema mismatch at '" + an + "' vs '" +
                                        bn + "'");
        std::vector<double> mix(av.size());
        for (std::size_t j = 0; j < av.size(); ++j) mix[j] = (1.0 - w) * av[j] + w * bv[j];
        out.tensors.emplace_back(an, std::move(mix));
    }
    return out;
}

inline void load_snapshot(ParamList& params, const WeightSnapshot& s) {
    if (s.tensors.size() != params.size())
        throw std::invalid_argument("load_snapshot: tensor count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].first != s.tensors[i].first)
            throw std::invalid_argument("load_snapshot: name mismatch at '" + params[i].first +
                                        "'");
        params[i].second.mutable_data() = s.tensors[i].second;
    }
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t coords_checked = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;  // sorted by descending error
    double max_rel_err = 0.0;

    bool passes(double tol) const { return max_rel_err < tol; }
};

// Central differences at step h against analytic gradients, spot-checking a
// deterministic sample of coordinates per tensor. Rejects closures whose two
// initial evaluations disagree bitwise.
inline GradCheckReport grad_check(const std::function<Value()>& closure, ParamList& params,
                                  double h = 1e-5, std::size_t coords_per_tensor = 4,
                                  std::uint64_t seed = 0) {
    Value l0 = closure();
    {
        NoGradGuard ng;
        Value l1 = closure();
        if (l0.item() != l1.item())
            throw std::runtime_error("grad_check: closure is not deterministic (" +
                                     std::to_string(l0.item()) + " vs " +
                                     std::to_string(l1.item()) + ")");
    }
    Gradients grads = backward(l0);

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& [name, value] = params[pi];
        auto& data = value.mutable_data();
        std::vector<double> analytic = grads.get(value);
        Rng rng(seed, pi + 1);
        std::vector<std::size_t> coords;
        if (data.size() <= coords_per_tensor) {
            for (std::size_t i = 0; i < data.size(); ++i) coords.push_back(i);
        } else {
            for (std::size_t i = 0; i < coords_per_tensor; ++i)
                coords.push_back(std::size_t(rng.next_below(data.size())));
        }
        GradCheckEntry entry;
        entry.name = name;
        entry.coords_checked = coords.size();
        for (std::size_t c : coords) {
            const double orig = data[c];
            double fp, fm;
            {
                NoGradGuard ng;
                data[c] = orig + h;
                fp = closure().item();
                data[c] = orig - h;
                fm = closure().item();
                data[c] = orig;
            }
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[c];
            const double mag = std::max(std::abs(a), std::abs(numeric));
            const double abs_err = std::abs(a - numeric);
            // Differences below 1e-7 are inside the double-precision
            // cancellation floor of the central difference and certify the
            // coordinate absolutely; near-zero analytic values are only ever
            // judged absolutely.
            double err;
            if (abs_err < 1e-7)
                err = 0.0;
            else if (mag < 1e-8)
                err = abs_err;
            else
                err = abs_err / mag;
            entry.max_rel_err = std::max(entry.max_rel_err, err);
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    std::sort(report.entries.begin(), report.entries.end(),
              [](const GradCheckEntry& a, const GradCheckEntry& b) {
                  return a.max_rel_err > b.max_rel_err;
              });
    return report;
}

}  // namespace vtc
