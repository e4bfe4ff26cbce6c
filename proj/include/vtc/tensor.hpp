#pragma once

// Dense double-precision tensors with reverse-mode differentiation.
// Values are immutable once created; every op returns a fresh node that
// remembers its inputs and a backward closure. backward() walks reachable
// nodes in reverse creation order, so gradient accumulation order is
// deterministic.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace vtc {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

class Gradients;
struct Node;
using NodePtr = std::shared_ptr<Node>;

using BackwardFn = std::function<void(const std::vector<double>& grad_out, Gradients& g)>;

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<NodePtr> inputs;
    BackwardFn backward;
    std::uint64_t id = 0;
    bool is_param = false;    // leaf created with requires_grad
    bool needs_grad = false;  // this or something upstream wants gradients
};

namespace detail {

inline std::uint64_t next_node_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

inline bool& autograd_flag() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

// Disables graph recording in a scope (forward-only evaluation).
class NoGradGuard {
  public:
    NoGradGuard() : prev_(detail::autograd_flag()) { detail::autograd_flag() = false; }
    ~NoGradGuard() { detail::autograd_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

class Value {
  public:
    Value() = default;
    explicit Value(NodePtr n) : node_(std::move(n)) {}

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->data.size(); }
    const std::vector<double>& data() const { return node_->data; }
    std::vector<double>& mutable_data() { return node_->data; }
    Node* node() const { return node_.get(); }
    NodePtr node_ptr() const { return node_; }
    bool is_param() const { return node_->is_param; }

    double item() const {
        if (node_->data.size() != 1)
            throw std::invalid_argument("item(): tensor has " +
                                        std::to_string(node_->data.size()) + " elements");
        return node_->data[0];
    }

  private:
    NodePtr node_;
};

// Per-backward-pass gradient buffers keyed by node. Kept outside the nodes so
// independent graphs sharing parameter leaves can run backward concurrently.
class Gradients {
  public:
    std::vector<double>& buffer(const Node* n) {
        auto it = map_.find(n);
        if (it == map_.end())
            it = map_.emplace(n, std::vector<double>(n->data.size(), 0.0)).first;
        return it->second;
    }

    const std::vector<double>* find(const Node* n) const {
        auto it = map_.find(n);
        return it == map_.end() ? nullptr : &it->second;
    }

    // Gradient of a value; zeros when the value was unreachable from the loss.
    std::vector<double> get(const Value& v) const {
        const auto* p = find(v.node());
        return p ? *p : std::vector<double>(v.size(), 0.0);
    }

  private:
    std::unordered_map<const Node*, std::vector<double>> map_;
};

inline Value tensor(Shape shape, std::vector<double> data, bool requires_grad = false) {
    if (numel(shape) != data.size())
        throw std::invalid_argument("tensor: shape " + shape_str(shape) + " wants " +
                                    std::to_string(numel(shape)) + " elements, got " +
                                    std::to_string(data.size()));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->id = detail::next_node_id();
    n->is_param = requires_grad;
    n->needs_grad = requires_grad;
    return Value(n);
}

inline Value zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> d(numel(shape), 0.0);
    return tensor(std::move(shape), std::move(d), requires_grad);
}

inline Value scalar(double x) { return tensor({}, {x}); }

namespace detail {

// Generic op constructor. Records inputs and a backward closure only when
// autograd is on and some input needs gradients; otherwise the result is a
// plain constant leaf. Exposed so tests can build custom ops (e.g. negative
// controls with deliberately wrong backward rules).
inline Value make_op(Shape shape, std::vector<double> data,
                     std::vector<Value> inputs, BackwardFn backward) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->id = next_node_id();
    bool track = autograd_flag();
    if (track) {
        bool any = false;
        for (const auto& v : inputs) any = any || v.node()->needs_grad;
        track = any;
    }
    if (track) {
        n->needs_grad = true;
        n->inputs.reserve(inputs.size());
        for (auto& v : inputs) n->inputs.push_back(v.node_ptr());
        n->backward = std::move(backward);
    }
    return Value(n);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// backward sweep
// ---------------------------------------------------------------------------

inline Gradients backward(const Value& loss) {
    if (!loss.shape().empty())
        throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                    shape_str(loss.shape()));
    // Collect the reachable subgraph, then sweep by descending creation id.
    std::vector<Node*> order;
    std::unordered_map<Node*, bool> seen;
    std::vector<Node*> stack{loss.node()};
    seen[loss.node()] = true;
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& in : n->inputs) {
            if (!seen[in.get()]) {
                seen[in.get()] = true;
                stack.push_back(in.get());
            }
        }
    }
    std::sort(order.begin(), order.end(),
              [](const Node* a, const Node* b) { return a->id > b->id; });

    Gradients g;
    g.buffer(loss.node())[0] = 1.0;
    for (Node* n : order) {
        if (!n->backward) continue;
        const auto* gout = g.find(n);
        if (!gout) continue;
        n->backward(*gout, g);
    }
    return g;
}

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

inline void check_same_shape(const char* op, const Value& a, const Value& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// b may either match a's shape or be a rank-0 scalar.
inline bool scalar_rhs(const char* op, const Value& a, const Value& b) {
    if (b.rank() == 0) return true;
    check_same_shape(op, a, b);
    return false;
}

}  // namespace detail

inline Value add(const Value& a, const Value& b) {
    const bool bs = detail::scalar_rhs("add", a, b);
    std::vector<double> out(a.size());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + (bs ? bd[0] : bd[i]);
    Node* an = a.node();
    Node* bn = b.node();
    return detail::make_op(a.shape(), std::move(out), {a, b},
                           [an, bn, bs](const std::vector<double>& go, Gradients& g) {
                               auto& ga = g.buffer(an);
                               for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
                               auto& gb = g.buffer(bn);
                               if (bs) {
                                   for (double v : go) gb[0] += v;
                               } else {
                                   for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
                               }
                           });
}

inline Value sub(const Value& a, const Value& b) {
    const bool bs = detail::scalar_rhs("sub", a, b);
    std::vector<double> out(a.size());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - (bs ? bd[0] : bd[i]);
    Node* an = a.node();
    Node* bn = b.node();
    return detail::make_op(a.shape(), std::move(out), {a, b},
                           [an, bn, bs](const std::vector<double>& go, Gradients& g) {
                               auto& ga = g.buffer(an);
                               for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
                               auto& gb = g.buffer(bn);
                               if (bs) {
                                   for (double v : go) gb[0] -= v;
                               } else {
                                   for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
                               }
                           });
}

// Backward closures read their input nodes' payloads live rather than copying
// them: a node's data is immutable between the forward pass and backward().
inline Value mul(const Value& a, const Value& b) {
    const bool bs = detail::scalar_rhs("mul", a, b);
    std::vector<double> out(a.size());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * (bs ? bd[0] : bd[i]);
    Node* an = a.node();
    Node* bn = b.node();
    return detail::make_op(a.shape(), std::move(out), {a, b},
                           [an, bn, bs](const std::vector<double>& go, Gradients& g) {
                               const auto& ac = an->data;
                               const auto& bc = bn->data;
                               auto& ga = g.buffer(an);
                               for (std::size_t i = 0; i < go.size(); ++i)
                                   ga[i] += go[i] * (bs ? bc[0] : bc[i]);
                               auto& gb = g.buffer(bn);
                               if (bs) {
                                   for (std::size_t i = 0; i < go.size(); ++i)
                                       gb[0] += go[i] * ac[i];
                               } else {
                                   for (std::size_t i = 0; i < go.size(); ++i)
                                       gb[i] += go[i] * ac[i];
                               }
                           });
}

inline Value divide(const Value& a, const Value& b) {
    const bool bs = detail::scalar_rhs("divide", a, b);
    std::vector<double> out(a.size());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] / (bs ? bd[0] : bd[i]);
    Node* an = a.node();
    Node* bn = b.node();
    return detail::make_op(a.shape(), std::move(out), {a, b},
                           [an, bn, bs](const std::vector<double>& go, Gradients& g) {
                               const auto& ac = an->data;
                               const auto& bc = bn->data;
                               auto& ga = g.buffer(an);
                               for (std::size_t i = 0; i < go.size(); ++i)
                                   ga[i] += go[i] / (bs ? bc[0] : bc[i]);
                               auto& gb = g.buffer(bn);
                               if (bs) {
                                   for (std::size_t i = 0; i < go.size(); ++i)
                                       gb[0] -= go[i] * ac[i] / (bc[0] * bc[0]);
                               } else {
                                   for (std::size_t i = 0; i < go.size(); ++i)
                                       gb[i] -= go[i] * ac[i] / (bc[i] * bc[i]);
                               }
                           });
}

inline Value scale(const Value& a, double c) {
    std::vector<double> out(a.size());
    const auto& ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * c;
    Node* an = a.node();
    return detail::make_op(a.shape(), std::move(out), {a},
                           [an, c](const std::vector<double>& go, Gradients& g) {
                               auto& ga = g.buffer(an);
                               for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * c;
                           });
}

inline Value neg(const Value& a) { return scale(a, -1.0); }

// gelu with the tanh approximation.
inline Value gelu(const Value& a) {
    static const double kC = std::sqrt(2.0 / 3.14159265358979323846);
    const auto& ad = a.data();
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double x = ad[i];
        double t = std::tanh(kC * (x + 0.044715 * x * x * x));
        out[i] = 0.5 * x * (1.0 + t);
    }
    Node* an = a.node();
    return detail::make_op(a.shape(), std::move(out), {a},
                           [an](const std::vector<double>& go, Gradients& g) {
                               const auto& xc = an->data;
                               auto& ga = g.buffer(an);
                               for (std::size_t i = 0; i < go.size(); ++i) {
                                   double x = xc[i];
                                   double u = kC * (x + 0.044715 * x * x * x);
                                   double t = std::tanh(u);
                                   double du = kC * (1.0 + 3.0 * 0.044715 * x * x);
                                   double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                                   ga[i] += go[i] * d;
                               }
                           });
}

inline Value exp_op(const Value& a) {
    std::vector<double> out(a.size());
    const auto& ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(ad[i]);
    Node* an = a.node();
    std::vector<double> oc = out;
    return detail::make_op(a.shape(), std::move(out), {a},
                           [an, oc = std::move(oc)](const std::vector<double>& go, Gradients& g) {
                               auto& ga = g.buffer(an);
                               for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * oc[i];
                           });
}

inline Value log_op(const Value& a) {
    std::vector<double> out(a.size());
    const auto& ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(ad[i]);
    Node* an = a.node();
    return detail::make_op(a.shape(), std::move(out), {a},
                           [an](const std::vector<double>& go, Gradients& g) {
                               auto& ga = g.buffer(an);
                               for (std::size_t i = 0; i < go.size(); ++i)
                                   ga[i] += go[i] / an->data[i];
                           });
}

inline Value sqrt_op(const Value& a) {
    std::vector<double> out(a.size());
    const auto& ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(ad[i]);
    Node* an = a.node();
    std::vector<double> oc = out;
    return detail::make_op(a.shape(), std::move(out), {a},
                           [an, oc = std::move(oc)](const std::vector<double>& go, Gradients& g) {
                               auto& ga = g.buffer(an);
                               for (std::size_t i = 0; i < go.size(); ++i)
                                   ga[i] += go[i] * 0.5 / oc[i];
                           });
}

inline Value reciprocal(const Value& a) {
    std::vector<double> out(a.size());
    const auto& ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / ad[i];
    Node* an = a.node();
    std::vector<double> oc = out;
    return detail::make_op(a.shape(), std::move(out), {a},
                           [an, oc = std::move(oc)](const std::vector<double>& go, Gradients& g) {
                               auto& ga = g.buffer(an);
                               for (std::size_t i = 0; i < go.size(); ++i)
                                   ga[i] -= go[i] * oc[i] * oc[i];
                           });
}

// Forward identity; contributes zero gradient through this edge.
inline Value stop_gradient(const Value& a) {
    return tensor(a.shape(), a.data(), false);
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace detail {

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_acc(const double* A, const double* B, double* C,
                     std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        double* crow = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double a = arow[p];
            if (a == 0.0) continue;
            const double* brow = B + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

// C[m x k] += G[m x n] * B^T  (i.e. C[i,p] += sum_j G[i,j] * B[p,j]).
// Larger problems go through an explicit transpose so the inner loop is
// elementwise (it vectorizes; the scalar fallback keeps reductions).
inline void gemm_nt_acc(const double* G, const double* B, double* C,
                        std::size_t m, std::size_t n, std::size_t k) {
    if (m * n * k >= 4096 && n >= 4) {
        thread_local std::vector<double> scratch;
        scratch.assign(n * k, 0.0);
        for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < n; ++j) scratch[j * k + p] = B[p * n + j];
        gemm_acc(G, scratch.data(), C, m, n, k);
        return;
    }
    for (std::size_t i = 0; i < m; ++i) {
        const double* grow = G + i * n;
        double* crow = C + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* brow = B + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            crow[p] += acc;
        }
    }
}

// C[k x n] += A^T * G  (i.e. C[p,j] += sum_i A[i,p] * G[i,j])
inline void gemm_tn_acc(const double* A, const double* G, double* C,
                        std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        const double* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double a = arow[p];
            if (a == 0.0) continue;
            double* crow = C + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += a * grow[j];
        }
    }
}

}  // namespace detail

// Standard product over the last two axes. Leading (batch) dimensions, when
// present, must match exactly; a rank-2 operand broadcasts over them.
inline Value matmul(const Value& a, const Value& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2)
        throw std::invalid_argument("matmul: operands must have rank >= 2, got " +
                                    shape_str(sa) + " and " + shape_str(sb));
    const std::size_t m = sa[sa.size() - 2], ka = sa[sa.size() - 1];
    const std::size_t kb = sb[sb.size() - 2], n = sb[sb.size() - 1];
    if (ka != kb)
        throw std::invalid_argument("matmul: inner dimensions disagree, " + shape_str(sa) +
                                    " vs " + shape_str(sb));
    Shape lead_a(sa.begin(), sa.end() - 2), lead_b(sb.begin(), sb.end() - 2);
    if (!lead_a.empty() && !lead_b.empty() && lead_a != lead_b)
        throw std::invalid_argument("matmul: batch dimensions disagree, " + shape_str(sa) +
                                    " vs " + shape_str(sb));
    Shape lead = lead_a.empty() ? lead_b : lead_a;
    const std::size_t batch = numel(lead);
    const bool abat = !lead_a.empty(), bbat = !lead_b.empty();

    Shape oshape = lead;
    oshape.push_back(m);
    oshape.push_back(n);
    std::vector<double> out(batch * m * n, 0.0);
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    for (std::size_t t = 0; t < batch; ++t)
        detail::gemm_acc(ad + (abat ? t * m * ka : 0), bd + (bbat ? t * ka * n : 0),
                         out.data() + t * m * n, m, ka, n);

    Node* an = a.node();
    Node* bn = b.node();
    const std::size_t k = ka;
    return detail::make_op(std::move(oshape), std::move(out), {a, b},
                           [an, bn, m, k, n, batch, abat, bbat](const std::vector<double>& go,
                                                                Gradients& g) {
                               auto& ga = g.buffer(an);
                               auto& gb = g.buffer(bn);
                               for (std::size_t t = 0; t < batch; ++t) {
                                   const double* gt = go.data() + t * m * n;
                                   const double* at = an->data.data() + (abat ? t * m * k : 0);
                                   const double* bt = bn->data.data() + (bbat ? t * k * n : 0);
                                   detail::gemm_nt_acc(gt, bt, ga.data() + (abat ? t * m * k : 0),
                                                       m, n, k);
                                   detail::gemm_tn_acc(at, gt, gb.data() + (bbat ? t * k * n : 0),
                                                       m, k, n);
                               }
                           });
}

// C = A * B^T for rank-2 operands; avoids materializing the transpose.
inline Value matmul_transb(const Value& a, const Value& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2)
        throw std::invalid_argument("matmul_transb: rank-2 operands required");
    const std::size_t m = sa[0], k = sa[1], n = sb[0];
    if (sb[1] != k)
        throw std::invalid_argument("matmul_transb: inner dimensions disagree, " +
                                    shape_str(sa) + " vs " + shape_str(sb) + "^T");
    std::vector<double> out(m * n, 0.0);
    detail::gemm_nt_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
    Node* an = a.node();
    Node* bn = b.node();
    return detail::make_op({m, n}, std::move(out), {a, b},
                           [an, bn, m, k, n](const std::vector<double>& go, Gradients& g) {
                               // dA = G * B ; dB = G^T * A
                               detail::gemm_acc(go.data(), bn->data.data(), g.buffer(an).data(),
                                                m, n, k);
                               detail::gemm_tn_acc(go.data(), an->data.data(), g.buffer(bn).data(),
                                                   m, n, k);
                           });
}

inline Value transpose(const Value& a) {
    if (a.rank() != 2) throw std::invalid_argument("transpose: rank-2 tensor required");
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    std::vector<double> out(m * n);
    const auto& ad = a.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = ad[i * n + j];
    Node* an = a.node();
    return detail::make_op({n, m}, std::move(out), {a},
                           [an, m, n](const std::vector<double>& go, Gradients& g) {
                               auto& ga = g.buffer(an);
                               for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < n; ++j)
                                       ga[i * n + j] += go[j * m + i];
                           });
}

// ---------------------------------------------------------------------------
// softmax / layer norm / reductions
// ---------------------------------------------------------------------------

// Row softmax over the last axis, computed with max subtraction. The optional
// additive bias must match a trailing suffix of x's shape and is added to the
// logits before normalization, broadcasting over the leading axes.
inline Value softmax_rows(const Value& x, const Value& bias = Value()) {
    if (x.rank() < 1) throw std::invalid_argument("softmax_rows: rank >= 1 required");
    const std::size_t m = x.shape().back();
    const std::size_t rows = x.size() / m;
    std::size_t bn = 1;
    if (bias.defined()) {
        const Shape& sb = bias.shape();
        const Shape& sx = x.shape();
        if (sb.size() > sx.size() ||
            !std::equal(sb.rbegin(), sb.rend(), sx.rbegin()))
            throw std::invalid_argument("softmax_rows: bias shape " + shape_str(sb) +
                                        " is not a trailing suffix of " + shape_str(sx));
        bn = bias.size();
    }
    std::vector<double> out(x.size());
    const auto& xd = x.data();
    const double* bd = bias.defined() ? bias.data().data() : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xd.data() + r * m;
        double* orow = out.data() + r * m;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m; ++j) {
            double v = xr[j] + (bd ? bd[(r * m + j) % bn] : 0.0);
            orow[j] = v;
            if (v > mx) mx = v;
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            orow[j] = std::exp(orow[j] - mx);
            sum += orow[j];
        }
        for (std::size_t j = 0; j < m; ++j) orow[j] /= sum;
    }
    Node* xn = x.node();
    Node* bnode = bias.defined() ? bias.node() : nullptr;
    std::vector<double> pc = out;
    std::vector<Value> ins{x};
    if (bias.defined()) ins.push_back(bias);
    return detail::make_op(x.shape(), std::move(out), std::move(ins),
                           [xn, bnode, rows, m, bn, pc = std::move(pc)](
                               const std::vector<double>& go, Gradients& g) {
                               auto& gx = g.buffer(xn);
                               std::vector<double>* gb = bnode ? &g.buffer(bnode) : nullptr;
                               for (std::size_t r = 0; r < rows; ++r) {
                                   const double* p = pc.data() + r * m;
                                   const double* gr = go.data() + r * m;
                                   double dot = 0.0;
                                   for (std::size_t j = 0; j < m; ++j) dot += p[j] * gr[j];
                                   double* gxr = gx.data() + r * m;
                                   for (std::size_t j = 0; j < m; ++j) {
                                       double d = p[j] * (gr[j] - dot);
                                       gxr[j] += d;
                                       if (gb) (*gb)[(r * m + j) % bn] += d;
                                   }
                               }
                           });
}

// Per-vector normalization over the last axis followed by an affine map.
inline Value layer_norm(const Value& x, const Value& gain, const Value& bias,
                        double eps = 1e-5) {
    if (x.rank() < 1) throw std::invalid_argument("layer_norm: rank >= 1 required");
    const std::size_t d = x.shape().back();
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
        throw std::invalid_argument("layer_norm: gain/bias must be length-" + std::to_string(d) +
                                    " vectors, got " + shape_str(gain.shape()) + " and " +
                                    shape_str(bias.shape()));
    if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
    const std::size_t rows = x.size() / d;
    std::vector<double> out(x.size());
    std::vector<double> xhat(x.size());
    std::vector<double> inv_sigma(rows);
    const auto& xd = x.data();
    const auto& gd = gain.data();
    const auto& bd = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xd.data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= double(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            double c = xr[j] - mean;
            var += c * c;
        }
        var /= double(d);
        double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[r] = is;
        double* hr = xhat.data() + r * d;
        double* orow = out.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
            hr[j] = (xr[j] - mean) * is;
            orow[j] = hr[j] * gd[j] + bd[j];
        }
    }
    Node* xn = x.node();
    Node* gn = gain.node();
    Node* bn = bias.node();
    std::vector<double> gc = gain.data();
    return detail::make_op(
        x.shape(), std::move(out), {x, gain, bias},
        [xn, gn, bn, rows, d, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma),
         gc = std::move(gc)](const std::vector<double>& go, Gradients& g) {
            auto& gx = g.buffer(xn);
            auto& gg = g.buffer(gn);
            auto& gb = g.buffer(bn);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* h = xhat.data() + r * d;
                const double* gr = go.data() + r * d;
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    double w = gr[j] * gc[j];
                    m1 += w;
                    m2 += w * h[j];
                    gg[j] += gr[j] * h[j];
                    gb[j] += gr[j];
                }
                m1 /= double(d);
                m2 /= double(d);
                double* gxr = gx.data() + r * d;
                for (std::size_t j = 0; j < d; ++j)
                    gxr[j] += (gr[j] * gc[j] - m1 - h[j] * m2) * inv_sigma[r];
            }
        });
}

inline Value sum(const Value& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    Node* an = a.node();
    std::size_t n = a.size();
    return detail::make_op({}, {s}, {a},
                           [an, n](const std::vector<double>& go, Gradients& g) {
                               auto& ga = g.buffer(an);
                               for (std::size_t i = 0; i < n; ++i) ga[i] += go[0];
                           });
}

// Column means of a rank-2 tensor -> rank-1 vector.
inline Value mean_axis0(const Value& a) {
    if (a.rank() != 2) throw std::invalid_argument("mean_axis0: rank-2 tensor required");
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    std::vector<double> out(n, 0.0);
    const auto& ad = a.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j] += ad[i * n + j];
    for (std::size_t j = 0; j < n; ++j) out[j] /= double(m);
    Node* an = a.node();
    return detail::make_op({n}, std::move(out), {a},
                           [an, m, n](const std::vector<double>& go, Gradients& g) {
                               auto& ga = g.buffer(an);
                               for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < n; ++j)
                                       ga[i * n + j] += go[j] / double(m);
                           });
}

// ---------------------------------------------------------------------------
// shape / indexing ops
// ---------------------------------------------------------------------------

inline Value reshape(const Value& a, Shape shape) {
    if (numel(shape) != a.size())
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                    shape_str(shape));
    Node* an = a.node();
    std::vector<double> out = a.data();
    return detail::make_op(std::move(shape), std::move(out), {a},
                           [an](const std::vector<double>& go, Gradients& g) {
                               auto& ga = g.buffer(an);
                               for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
                           });
}

inline Value slice_rows(const Value& a, std::size_t start, std::size_t len) {
    if (a.rank() != 2) throw std::invalid_argument("slice_rows: rank-2 tensor required");
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    if (start + len > m)
        throw std::invalid_argument("slice_rows: range [" + std::to_string(start) + "," +
                                    std::to_string(start + len) + ") exceeds " +
                                    std::to_string(m) + " rows");
    std::vector<double> out(a.data().begin() + start * n, a.data().begin() + (start + len) * n);
    Node* an = a.node();
    return detail::make_op({len, n}, std::move(out), {a},
                           [an, start, n](const std::vector<double>& go, Gradients& g) {
                               auto& ga = g.buffer(an);
                               for (std::size_t i = 0; i < go.size(); ++i)
                                   ga[start * n + i] += go[i];
                           });
}

inline Value slice_cols(const Value& a, std::size_t start, std::size_t len) {
    if (a.rank() != 2) throw std::invalid_argument("slice_cols: rank-2 tensor required");
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    if (start + len > n)
        throw std::invalid_argument("slice_cols: range exceeds " + std::to_string(n) + " cols");
    std::vector<double> out(m * len);
    const auto& ad = a.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < len; ++j) out[i * len + j] = ad[i * n + start + j];
    Node* an = a.node();
    return detail::make_op({m, len}, std::move(out), {a},
                           [an, m, n, start, len](const std::vector<double>& go, Gradients& g) {
                               auto& ga = g.buffer(an);
                               for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < len; ++j)
                                       ga[i * n + start + j] += go[i * len + j];
                           });
}

// Gather rows by index; backward scatter-adds (duplicate indices accumulate).
inline Value take_rows(const Value& a, std::vector<std::size_t> idx) {
    if (a.rank() != 2) throw std::invalid_argument("take_rows: rank-2 tensor required");
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    std::vector<double> out(idx.size() * n);
    const auto& ad = a.data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= m)
            throw std::invalid_argument("take_rows: index " + std::to_string(idx[i]) +
                                        " out of range for " + std::to_string(m) + " rows");
        std::copy(ad.begin() + idx[i] * n, ad.begin() + (idx[i] + 1) * n, out.begin() + i * n);
    }
    Node* an = a.node();
    const std::size_t rows = idx.size();
    return detail::make_op({rows, n}, std::move(out), {a},
                           [an, n, idx = std::move(idx)](const std::vector<double>& go,
                                                         Gradients& g) {
                               auto& ga = g.buffer(an);
                               for (std::size_t i = 0; i < idx.size(); ++i)
                                   for (std::size_t j = 0; j < n; ++j)
                                       ga[idx[i] * n + j] += go[i * n + j];
                           });
}

inline Value concat_rows(const std::vector<Value>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    const std::size_t n = parts[0].shape()[1];
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.shape()[1] != n)
            throw std::invalid_argument("concat_rows: column counts disagree");
        rows += p.shape()[0];
    }
    std::vector<double> out;
    out.reserve(rows * n);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    std::vector<Node*> nodes;
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
        nodes.push_back(p.node());
        sizes.push_back(p.size());
    }
    return detail::make_op({rows, n}, std::move(out), parts,
                           [nodes = std::move(nodes), sizes = std::move(sizes)](
                               const std::vector<double>& go, Gradients& g) {
                               std::size_t off = 0;
                               for (std::size_t p = 0; p < nodes.size(); ++p) {
                                   auto& gp = g.buffer(nodes[p]);
                                   for (std::size_t i = 0; i < sizes[p]; ++i) gp[i] += go[off + i];
                                   off += sizes[p];
                               }
                           });
}

inline Value concat_cols(const std::vector<Value>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    const std::size_t m = parts[0].shape()[0];
    std::size_t cols = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.shape()[0] != m)
            throw std::invalid_argument("concat_cols: row counts disagree");
        cols += p.shape()[1];
    }
    std::vector<double> out(m * cols);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.shape()[1];
        for (std::size_t i = 0; i < m; ++i)
            std::copy(p.data().begin() + i * w, p.data().begin() + (i + 1) * w,
                      out.begin() + i * cols + off);
        off += w;
    }
    std::vector<Node*> nodes;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        nodes.push_back(p.node());
        widths.push_back(p.shape()[1]);
    }
    return detail::make_op({m, cols}, std::move(out), parts,
                           [m, cols, nodes = std::move(nodes), widths = std::move(widths)](
                               const std::vector<double>& go, Gradients& g) {
                               std::size_t off = 0;
                               for (std::size_t p = 0; p < nodes.size(); ++p) {
                                   auto& gp = g.buffer(nodes[p]);
                                   for (std::size_t i = 0; i < m; ++i)
                                       for (std::size_t j = 0; j < widths[p]; ++j)
                                           gp[i * widths[p] + j] += go[i * cols + off + j];
                                   off += widths[p];
                               }
                           });
}

inline Value concat_vec(const std::vector<Value>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_vec: no parts");
    std::size_t n = 0;
    for (const auto& p : parts) {
        if (p.rank() != 1) throw std::invalid_argument("concat_vec: rank-1 inputs required");
        n += p.size();
    }
    std::vector<double> out;
    out.reserve(n);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    std::vector<Node*> nodes;
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
        nodes.push_back(p.node());
        sizes.push_back(p.size());
    }
    return detail::make_op({n}, std::move(out), parts,
                           [nodes = std::move(nodes), sizes = std::move(sizes)](
                               const std::vector<double>& go, Gradients& g) {
                               std::size_t off = 0;
                               for (std::size_t p = 0; p < nodes.size(); ++p) {
                                   auto& gp = g.buffer(nodes[p]);
                                   for (std::size_t i = 0; i < sizes[p]; ++i) gp[i] += go[off + i];
                                   off += sizes[p];
                               }
                           });
}

// Stack rank-0 scalars into a rank-1 vector.
inline Value stack_scalars(const std::vector<Value>& xs) {
    if (xs.empty()) throw std::invalid_argument("stack_scalars: no inputs");
    std::vector<double> out(xs.size());
    std::vector<Node*> nodes(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (xs[i].rank() != 0) throw std::invalid_argument("stack_scalars: rank-0 inputs required");
        out[i] = xs[i].data()[0];
        nodes[i] = xs[i].node();
    }
    return detail::make_op({xs.size()}, std::move(out), xs,
                           [nodes = std::move(nodes)](const std::vector<double>& go, Gradients& g) {
                               for (std::size_t i = 0; i < nodes.size(); ++i)
                                   g.buffer(nodes[i])[0] += go[i];
                           });
}

inline Value at(const Value& a, std::size_t i) {
    if (i >= a.size())
        throw std::invalid_argument("at: index " + std::to_string(i) + " out of range");
    Node* an = a.node();
    return detail::make_op({}, {a.data()[i]}, {a},
                           [an, i](const std::vector<double>& go, Gradients& g) {
                               g.buffer(an)[i] += go[0];
                           });
}

// Broadcast a rank-0 scalar to a constant-filled rank-1 vector.
inline Value fill_from_scalar(const Value& s, std::size_t n) {
    if (s.rank() != 0) throw std::invalid_argument("fill_from_scalar: rank-0 input required");
    Node* sn = s.node();
    std::vector<double> out(n, s.data()[0]);
    return detail::make_op({n}, std::move(out), {s},
                           [sn](const std::vector<double>& go, Gradients& g) {
                               double acc = 0.0;
                               for (double v : go) acc += v;
                               g.buffer(sn)[0] += acc;
                           });
}

// Multiply row i of a by v[i].
inline Value rowwise_scale(const Value& a, const Value& v) {
    if (a.rank() != 2 || v.rank() != 1 || v.shape()[0] != a.shape()[0])
        throw std::invalid_argument("rowwise_scale: need [m,n] and [m], got " +
                                    shape_str(a.shape()) + " and " + shape_str(v.shape()));
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    std::vector<double> out(m * n);
    const auto& ad = a.data();
    const auto& vd = v.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = ad[i * n + j] * vd[i];
    Node* an = a.node();
    Node* vn = v.node();
    return detail::make_op({m, n}, std::move(out), {a, v},
                           [an, vn, m, n](const std::vector<double>& go, Gradients& g) {
                               const auto& ac = an->data;
                               const auto& vc = vn->data;
                               auto& ga = g.buffer(an);
                               auto& gv = g.buffer(vn);
                               for (std::size_t i = 0; i < m; ++i) {
                                   double acc = 0.0;
                                   for (std::size_t j = 0; j < n; ++j) {
                                       ga[i * n + j] += go[i * n + j] * vc[i];
                                       acc += go[i * n + j] * ac[i * n + j];
                                   }
                                   gv[i] += acc;
                               }
                           });
}

}  // namespace vtc
