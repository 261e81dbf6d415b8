#ifndef LDREG_AUTODIFF_HPP
#define LDREG_AUTODIFF_HPP

#include <array>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "ldreg/tensor.hpp"

namespace ldreg {

// Reverse-mode tape over Tensor. Ops execute eagerly (values available
// immediately); backward() replays the tape in reverse. Everything is
// single-threaded and accumulation orders are fixed, so results are
// bit-reproducible across runs.
class Graph;

struct Var {
    int32_t idx = -1;
    bool valid() const { return idx >= 0; }
};

class Graph {
  public:
    enum class Mode { Train, Infer };

    explicit Graph(Mode mode = Mode::Train) : mode_(mode) {}

    Mode mode() const { return mode_; }

    // Leaves. Parameters require gradients; plain inputs do not.
    Var input(Tensor v);
    Var param(Tensor v);

    const Tensor &val(Var v) const;
    // Gradient of the last backward() w.r.t. v; empty tensor if untouched.
    const Tensor &grad(Var v) const;
    // Scalar nodes (reductions, affine_sum) keep a double-precision copy of
    // their value; loss reporting and finite-difference tests read this.
    double scalar_val(Var v) const;

    // In Infer mode, drop a value that no later op will read (memory relief
    // for full-resolution passes). No-op in Train mode.
    void release(Var v);

    // --- network ops -------------------------------------------------------
    // x: (Ci,D,H,W); w: (Co,Ci,k,k,k) with k in {1,3}; b: (Co). Padding
    // (k-1)/2, stride 1 or 2.
    Var conv3d(Var x, Var w, Var b, int stride);
    Var leaky_relu(Var x, float slope);
    // Per-channel batch-statistics normalization (batch of one volume, so
    // instance-style): y = gamma*(x-mu)/sqrt(var+eps)+beta.
    Var norm(Var x, Var gamma, Var beta, float eps);
    Var avg_pool2(Var x);                                    // (C,D,H,W) halved
    Var upsample3(Var x, std::array<int64_t, 3> target);     // trilinear, per channel
    Var concat(const std::vector<Var> &xs);                  // along channel dim
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var reshape(Var x, std::vector<int64_t> shape);          // same element count
    Var fc(Var x, Var w, Var b);                             // x:(N), w:(M,N), b:(M)
    Var channel_max(Var x);                                  // (C,D,H,W)->(1,D,H,W)
    Var flatten(Var x);                                      // -> (numel)
    // vol: (D,H,W) sampled at identity+phi; gradients flow to phi and, when
    // vol requires them, to vol.
    Var grid_sample(Var vol, Var phi);
    // r9: (9) row-major matrix, t3: (3); phi'(p)=R*(g+phi)+t-g.
    Var apply_rigid(Var phi, Var r9, Var t3);

    // --- loss ops (scalar outputs, shape {1}) ------------------------------
    Var mean_sq_diff(Var a, Var b);
    Var mean_abs(Var x);
    Var mean_sq(Var x);
    Var spatial_grad(Var phi);                               // (3,..)->(9,..)
    // sum_i coeff_i * scalar_i + bias; terms may be empty.
    Var affine_sum(const std::vector<std::pair<double, Var>> &terms, double bias = 0.0);
    // <x, w> with w a constant tensor (test utility for gradient checks).
    Var weighted_sum(Var x, Tensor w);

    void backward(Var scalar_loss);

    size_t num_nodes() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor val;
        Tensor grad; // empty until touched by backward
        double scalar = 0.0;
        bool has_scalar = false;
        bool needs_grad = false;
        std::function<void(Graph &)> back; // null for leaves / no-grad ops
    };

    Var push(Tensor v, bool needs_grad, std::function<void(Graph &)> back = nullptr);
    Var push_scalar(double v, bool needs_grad);
    Node &node(Var v) { return nodes_[static_cast<size_t>(v.idx)]; }
    const Node &node(Var v) const { return nodes_[static_cast<size_t>(v.idx)]; }
    Tensor &ensure_grad(Var v);
    bool wants(Var v) const { return node(v).needs_grad; }

    Mode mode_;
    std::vector<Node> nodes_;
    Tensor empty_;
};

} // namespace ldreg

#endif
