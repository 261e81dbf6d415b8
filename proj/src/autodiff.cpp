#include "ldreg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "kernels.hpp"
#include "ldreg/errors.hpp"
#include "ldreg/warp.hpp"

namespace ldreg {

Var Graph::push(Tensor v, bool needs_grad, std::function<void(Graph &)> back) {
    nodes_.push_back(Node{std::move(v), Tensor{}, 0.0, false, needs_grad, std::move(back)});
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Var Graph::push_scalar(double v, bool needs_grad) {
    Tensor t({1});
    t[0] = static_cast<float>(v);
    Var out = push(std::move(t), needs_grad);
    node(out).scalar = v;
    node(out).has_scalar = true;
    return out;
}

double Graph::scalar_val(Var v) const {
    const Node &n = node(v);
    if (n.has_scalar)
        return n.scalar;
    if (n.val.numel() != 1)
        throw ValidationError("scalar_val on non-scalar node of shape " + n.val.shape_str());
    return static_cast<double>(n.val[0]);
}

Var Graph::input(Tensor v) { return push(std::move(v), false); }

Var Graph::param(Tensor v) { return push(std::move(v), true); }

const Tensor &Graph::val(Var v) const { return node(v).val; }

const Tensor &Graph::grad(Var v) const {
    const Tensor &g = node(v).grad;
    return g.empty() ? empty_ : g;
}

void Graph::release(Var v) {
    if (mode_ == Mode::Infer)
        node(v).val = Tensor{};
}

Tensor &Graph::ensure_grad(Var v) {
    Node &n = node(v);
    if (n.grad.empty())
        n.grad = Tensor(n.val.shape());
    return n.grad;
}

Var Graph::conv3d(Var x, Var w, Var b, int stride) {
    Tensor y = kern::conv3d_fwd(val(x), val(w), val(b), stride);
    const bool ng = wants(x) || wants(w) || wants(b);
    Var out = push(std::move(y), ng);
    if (ng)
        node(out).back = [x, w, b, out, stride](Graph &g) {
            Tensor *dx = g.wants(x) ? &g.ensure_grad(x) : nullptr;
            kern::conv3d_bwd(g.val(x), g.val(w), g.node(out).grad, stride, dx, g.ensure_grad(w),
                             g.ensure_grad(b));
        };
    return out;
}

Var Graph::leaky_relu(Var x, float slope) {
    Var out = push(kern::lrelu_fwd(val(x), slope), wants(x));
    if (wants(x))
        node(out).back = [x, out, slope](Graph &g) {
            kern::lrelu_bwd(g.val(x), g.node(out).grad, slope, g.ensure_grad(x));
        };
    return out;
}

Var Graph::norm(Var x, Var gamma, Var beta, float eps) {
    auto mean = std::make_shared<std::vector<double>>();
    auto inv_std = std::make_shared<std::vector<double>>();
    Tensor y = kern::norm_fwd(val(x), val(gamma), val(beta), eps, *mean, *inv_std);
    const bool ng = wants(x) || wants(gamma) || wants(beta);
    Var out = push(std::move(y), ng);
    if (ng)
        node(out).back = [x, gamma, beta, out, mean, inv_std](Graph &g) {
            Tensor *dx = g.wants(x) ? &g.ensure_grad(x) : nullptr;
            kern::norm_bwd(g.val(x), g.val(gamma), g.node(out).grad, *mean, *inv_std, dx,
                           g.ensure_grad(gamma), g.ensure_grad(beta));
        };
    return out;
}

Var Graph::avg_pool2(Var x) {
    Var out = push(kern::avg_pool2_fwd(val(x)), wants(x));
    if (wants(x))
        node(out).back = [x, out](Graph &g) {
            kern::avg_pool2_bwd(g.node(out).grad, g.ensure_grad(x));
        };
    return out;
}

Var Graph::upsample3(Var x, std::array<int64_t, 3> target) {
    Var out = push(kern::upsample3_fwd(val(x), target), wants(x));
    if (wants(x))
        node(out).back = [x, out](Graph &g) {
            kern::upsample3_bwd(g.node(out).grad, g.ensure_grad(x));
        };
    return out;
}

Var Graph::concat(const std::vector<Var> &xs) {
    if (xs.empty())
        throw ValidationError("concat of zero tensors");
    const Tensor &first = val(xs[0]);
    if (first.rank() != 4)
        throw ValidationError("concat expects (C,D,H,W) inputs");
    int64_t ctot = 0;
    for (const Var v : xs) {
        const Tensor &t = val(v);
        if (t.rank() != 4 || t.dim(1) != first.dim(1) || t.dim(2) != first.dim(2) ||
            t.dim(3) != first.dim(3))
            throw ValidationError("concat spatial shape mismatch: " + t.shape_str() + " vs " +
                                  first.shape_str());
        ctot += t.dim(0);
    }
    Tensor y({ctot, first.dim(1), first.dim(2), first.dim(3)});
    int64_t off = 0;
    bool ng = false;
    for (const Var v : xs) {
        const Tensor &t = val(v);
        std::copy(t.data(), t.data() + t.numel(), y.data() + off);
        off += t.numel();
        ng = ng || wants(v);
    }
    Var out = push(std::move(y), ng);
    if (ng) {
        auto parts = std::make_shared<std::vector<Var>>(xs);
        node(out).back = [parts, out](Graph &g) {
            const Tensor &dy = g.node(out).grad;
            int64_t off2 = 0;
            for (const Var v : *parts) {
                const int64_t n = g.node(v).val.numel();
                if (g.wants(v)) {
                    Tensor &dx = g.ensure_grad(v);
                    const float *src = dy.data() + off2;
                    for (int64_t i = 0; i < n; ++i)
                        dx[i] += src[i];
                }
                off2 += n;
            }
        };
    }
    return out;
}

Var Graph::add(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    if (!ta.same_shape(tb))
        throw ValidationError("add shape mismatch: " + ta.shape_str() + " vs " + tb.shape_str());
    Tensor y(ta.shape());
    for (int64_t i = 0; i < ta.numel(); ++i)
        y[i] = ta[i] + tb[i];
    const bool ng = wants(a) || wants(b);
    Var out = push(std::move(y), ng);
    if (ng)
        node(out).back = [a, b, out](Graph &g) {
            const Tensor &dy = g.node(out).grad;
            for (const Var v : {a, b})
                if (g.wants(v)) {
                    Tensor &d = g.ensure_grad(v);
                    for (int64_t i = 0; i < dy.numel(); ++i)
                        d[i] += dy[i];
                }
        };
    return out;
}

Var Graph::sub(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    if (!ta.same_shape(tb))
        throw ValidationError("sub shape mismatch: " + ta.shape_str() + " vs " + tb.shape_str());
    Tensor y(ta.shape());
    for (int64_t i = 0; i < ta.numel(); ++i)
        y[i] = ta[i] - tb[i];
    const bool ng = wants(a) || wants(b);
    Var out = push(std::move(y), ng);
    if (ng)
        node(out).back = [a, b, out](Graph &g) {
            const Tensor &dy = g.node(out).grad;
            if (g.wants(a)) {
                Tensor &d = g.ensure_grad(a);
                for (int64_t i = 0; i < dy.numel(); ++i)
                    d[i] += dy[i];
            }
            if (g.wants(b)) {
                Tensor &d = g.ensure_grad(b);
                for (int64_t i = 0; i < dy.numel(); ++i)
                    d[i] -= dy[i];
            }
        };
    return out;
}

Var Graph::reshape(Var x, std::vector<int64_t> shape) {
    const Tensor &tx = val(x);
    if (shape_numel(shape) != tx.numel())
        throw ValidationError("reshape element count mismatch: " + tx.shape_str() + " -> " +
                              shape_to_string(shape));
    Tensor y(shape);
    std::copy(tx.data(), tx.data() + tx.numel(), y.data());
    const bool ng = wants(x);
    Var out = push(std::move(y), ng);
    if (ng)
        node(out).back = [x, out](Graph &g) {
            const Tensor &dy = g.node(out).grad;
            Tensor &d = g.ensure_grad(x);
            for (int64_t i = 0; i < dy.numel(); ++i)
                d[i] += dy[i];
        };
    return out;
}

Var Graph::fc(Var x, Var w, Var b) {
    Tensor y = kern::fc_fwd(val(x), val(w), val(b));
    const bool ng = wants(x) || wants(w) || wants(b);
    Var out = push(std::move(y), ng);
    if (ng)
        node(out).back = [x, w, b, out](Graph &g) {
            Tensor *dx = g.wants(x) ? &g.ensure_grad(x) : nullptr;
            kern::fc_bwd(g.val(x), g.val(w), g.node(out).grad, dx, g.ensure_grad(w),
                         g.ensure_grad(b));
        };
    return out;
}

Var Graph::channel_max(Var x) {
    auto argmax = std::make_shared<std::vector<int32_t>>();
    Tensor y = kern::channel_max_fwd(val(x), *argmax);
    Var out = push(std::move(y), wants(x));
    if (wants(x))
        node(out).back = [x, out, argmax](Graph &g) {
            kern::channel_max_bwd(g.node(out).grad, *argmax, g.ensure_grad(x));
        };
    return out;
}

Var Graph::flatten(Var x) {
    const Tensor &t = val(x);
    Tensor y({t.numel()});
    std::copy(t.data(), t.data() + t.numel(), y.data());
    Var out = push(std::move(y), wants(x));
    if (wants(x))
        node(out).back = [x, out](Graph &g) {
            Tensor &dx = g.ensure_grad(x);
            const Tensor &dy = g.node(out).grad;
            for (int64_t i = 0; i < dy.numel(); ++i)
                dx[i] += dy[i];
        };
    return out;
}

Var Graph::grid_sample(Var vol, Var phi) {
    Tensor y = kern::grid_sample_fwd(val(vol), val(phi));
    const bool ng = wants(vol) || wants(phi);
    Var out = push(std::move(y), ng);
    if (ng)
        node(out).back = [vol, phi, out](Graph &g) {
            Tensor *dv = g.wants(vol) ? &g.ensure_grad(vol) : nullptr;
            Tensor *dp = g.wants(phi) ? &g.ensure_grad(phi) : nullptr;
            kern::grid_sample_bwd(g.val(vol), g.val(phi), g.node(out).grad, dv, dp);
        };
    return out;
}

Var Graph::apply_rigid(Var phi, Var r9, Var t3) {
    if (val(r9).numel() != 9 || val(t3).numel() != 3)
        throw ValidationError("apply_rigid expects r9 of length 9 and t3 of length 3");
    Tensor y = kern::apply_rigid_fwd(val(phi), val(r9), val(t3));
    const bool ng = wants(phi) || wants(r9) || wants(t3);
    Var out = push(std::move(y), ng);
    if (ng)
        node(out).back = [phi, r9, t3, out](Graph &g) {
            Tensor *dp = g.wants(phi) ? &g.ensure_grad(phi) : nullptr;
            Tensor *dr = g.wants(r9) ? &g.ensure_grad(r9) : nullptr;
            Tensor *dt = g.wants(t3) ? &g.ensure_grad(t3) : nullptr;
            kern::apply_rigid_bwd(g.val(phi), g.val(r9), g.node(out).grad, dp, dr, dt);
        };
    return out;
}

Var Graph::mean_sq_diff(Var a, Var b) {
    const Tensor &ta = val(a), &tb = val(b);
    if (!ta.same_shape(tb))
        throw ValidationError("mean_sq_diff shape mismatch: " + ta.shape_str() + " vs " +
                              tb.shape_str());
    const bool ng = wants(a) || wants(b);
    Var out = push_scalar(kern::mean_sq_diff(ta, tb), ng);
    if (ng)
        node(out).back = [a, b, out](Graph &g) {
            const float gy = g.node(out).grad[0];
            const Tensor &ta2 = g.val(a), &tb2 = g.val(b);
            const float c = 2.0f * gy / static_cast<float>(ta2.numel());
            Tensor *da = g.wants(a) ? &g.ensure_grad(a) : nullptr;
            Tensor *db = g.wants(b) ? &g.ensure_grad(b) : nullptr;
            for (int64_t i = 0; i < ta2.numel(); ++i) {
                const float dd = c * (ta2[i] - tb2[i]);
                if (da)
                    (*da)[i] += dd;
                if (db)
                    (*db)[i] -= dd;
            }
        };
    return out;
}

Var Graph::mean_abs(Var x) {
    Var out = push_scalar(kern::mean_abs(val(x)), wants(x));
    if (wants(x))
        node(out).back = [x, out](Graph &g) {
            const float gy = g.node(out).grad[0];
            const Tensor &t = g.val(x);
            Tensor &dx = g.ensure_grad(x);
            const float c = gy / static_cast<float>(t.numel());
            for (int64_t i = 0; i < t.numel(); ++i)
                dx[i] += t[i] > 0.0f ? c : (t[i] < 0.0f ? -c : 0.0f);
        };
    return out;
}

Var Graph::mean_sq(Var x) {
    Var out = push_scalar(kern::mean_sq(val(x)), wants(x));
    if (wants(x))
        node(out).back = [x, out](Graph &g) {
            const float gy = g.node(out).grad[0];
            const Tensor &t = g.val(x);
            Tensor &dx = g.ensure_grad(x);
            const float c = 2.0f * gy / static_cast<float>(t.numel());
            for (int64_t i = 0; i < t.numel(); ++i)
                dx[i] += c * t[i];
        };
    return out;
}

Var Graph::spatial_grad(Var phi) {
    Var out = push(kern::spatial_grad_fwd(val(phi)), wants(phi));
    if (wants(phi))
        node(out).back = [phi, out](Graph &g) {
            kern::spatial_grad_bwd(g.node(out).grad, g.ensure_grad(phi));
        };
    return out;
}

Var Graph::affine_sum(const std::vector<std::pair<double, Var>> &terms, double bias) {
    double acc = bias;
    for (const auto &[c, v] : terms) {
        if (val(v).numel() != 1)
            throw ValidationError("affine_sum expects scalar terms");
        acc += c * scalar_val(v);
    }
    bool ng = false;
    for (const auto &[c, v] : terms)
        ng = ng || wants(v);
    Var out = push_scalar(acc, ng);
    if (ng) {
        auto ts = std::make_shared<std::vector<std::pair<double, Var>>>(terms);
        node(out).back = [ts, out](Graph &g) {
            const float gy = g.node(out).grad[0];
            for (const auto &[c, v] : *ts)
                if (g.wants(v))
                    g.ensure_grad(v)[0] += static_cast<float>(c) * gy;
        };
    }
    return out;
}

Var Graph::weighted_sum(Var x, Tensor w) {
    const Tensor &t = val(x);
    if (!t.same_shape(w))
        throw ValidationError("weighted_sum shape mismatch");
    double acc = 0.0;
    for (int64_t i = 0; i < t.numel(); ++i)
        acc += static_cast<double>(t[i]) * static_cast<double>(w[i]);
    Var out = push_scalar(acc, wants(x));
    if (wants(x)) {
        auto wp = std::make_shared<Tensor>(std::move(w));
        node(out).back = [x, out, wp](Graph &g) {
            const float gy = g.node(out).grad[0];
            Tensor &dx = g.ensure_grad(x);
            for (int64_t i = 0; i < dx.numel(); ++i)
                dx[i] += gy * (*wp)[i];
        };
    }
    return out;
}

void Graph::backward(Var scalar_loss) {
    if (mode_ != Mode::Train)
        throw ValidationError("backward requires a Train-mode graph");
    if (val(scalar_loss).numel() != 1)
        throw ValidationError("backward seed must be a scalar, got " +
                              val(scalar_loss).shape_str());
    ensure_grad(scalar_loss)[0] = 1.0f;
    for (int32_t i = scalar_loss.idx; i >= 0; --i) {
        Node &n = nodes_[static_cast<size_t>(i)];
        if (n.back && !n.grad.empty())
            n.back(*this);
    }
}

} // namespace ldreg
