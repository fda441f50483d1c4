#include "retc/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace retc {

namespace {

std::atomic<std::int64_t> g_order{0};

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->order = g_order.fetch_add(1);
    bool any = false;
    for (const auto& p : parents)
        if (p->requires_grad) any = true;
    n->requires_grad = any;
    if (any) {
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return n;
}

void accum(Node& n, const Tensor& g) {
    if (!n.requires_grad) return;
    if (n.grad.data.empty()) n.grad = Tensor(n.value.shape);
    for (std::size_t i = 0; i < g.data.size(); ++i) n.grad.data[i] += g.data[i];
}

const Tensor& grad_of(const Node& n) { return n.grad; }

}  // namespace

Var leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->order = g_order.fetch_add(1);
    n->requires_grad = requires_grad;
    return n;
}

Var constant(Tensor value) { return leaf(std::move(value), false); }

void backward(const Var& loss) {
    RETC_CHECK(loss != nullptr, ErrorKind::Usage, "backward: null loss");
    RETC_CHECK(loss->value.numel() == 1, ErrorKind::Usage, "backward: loss must be scalar");

    // Collect reachable nodes, then replay in reverse creation order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{loss.get()};
    seen.insert(loss.get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->order > b->order; });

    accum(*loss, Tensor::full({1}, 1.0));
    for (Node* n : order) {
        if (!n->backprop || !n->requires_grad) continue;
        if (n->grad.data.empty()) continue;  // not on a path to the loss
        n->backprop(*n);
        n->backprop_runs += 1;
    }
}

Var add(const Var& a, const Var& b) {
    return make_node(add(a->value, b->value), {a, b}, [a, b](Node& n) {
        accum(*a, grad_of(n));
        accum(*b, grad_of(n));
    });
}

Var sub(const Var& a, const Var& b) {
    return make_node(sub(a->value, b->value), {a, b}, [a, b](Node& n) {
        accum(*a, grad_of(n));
        accum(*b, neg(grad_of(n)));
    });
}

Var mul(const Var& a, const Var& b) {
    return make_node(mul(a->value, b->value), {a, b}, [a, b](Node& n) {
        accum(*a, mul(grad_of(n), b->value));
        accum(*b, mul(grad_of(n), a->value));
    });
}

Var scale(const Var& a, Real c) {
    return make_node(scale(a->value, c), {a}, [a, c](Node& n) { accum(*a, scale(grad_of(n), c)); });
}

Var matmul(const Var& a, const Var& b) {
    return make_node(matmul(a->value, b->value), {a, b}, [a, b](Node& n) {
        // dA = G B^T ; dB = A^T G
        accum(*a, matmul(grad_of(n), transpose(b->value)));
        accum(*b, matmul(transpose(a->value), grad_of(n)));
    });
}

Var transpose(const Var& a) {
    return make_node(transpose(a->value), {a}, [a](Node& n) { accum(*a, transpose(grad_of(n))); });
}

Var softmax(const Var& x) {
    Tensor y = softmax(x->value);
    return make_node(y, {x}, [x, y](Node& n) {
        const std::int64_t d = y.shape.back();
        const std::int64_t rows = y.numel() / d;
        Tensor dx(y.shape);
        const Tensor& g = grad_of(n);
        for (std::int64_t r = 0; r < rows; ++r) {
            const Real* yr = y.data.data() + r * d;
            const Real* gr = g.data.data() + r * d;
            Real dot = 0.0;
            for (std::int64_t j = 0; j < d; ++j) dot += yr[j] * gr[j];
            Real* o = dx.data.data() + r * d;
            for (std::int64_t j = 0; j < d; ++j) o[j] = yr[j] * (gr[j] - dot);
        }
        accum(*x, dx);
    });
}

namespace {

// Shared LN/GN backward over a contiguous span of m entries feeding per-column
// affine params. `col` maps span offset -> affine index.
template <typename ColFn>
void norm_span_backward(const Real* xin, const Real* gin, const Real* gamma, Real eps, std::int64_t m,
                        Real* dx_out, Real* dgamma, Real* dbeta, ColFn col) {
    Real mean = 0.0;
    for (std::int64_t j = 0; j < m; ++j) mean += xin[j];
    mean /= static_cast<Real>(m);
    Real var = 0.0;
    for (std::int64_t j = 0; j < m; ++j) {
        const Real c = xin[j] - mean;
        var += c * c;
    }
    var /= static_cast<Real>(m);
    const Real inv = 1.0 / std::sqrt(var + eps);

    Real sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (std::int64_t j = 0; j < m; ++j) {
        const Real xhat = (xin[j] - mean) * inv;
        const Real dxhat = gin[j] * gamma[col(j)];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
        dgamma[col(j)] += gin[j] * xhat;
        dbeta[col(j)] += gin[j];
    }
    const Real im = 1.0 / static_cast<Real>(m);
    for (std::int64_t j = 0; j < m; ++j) {
        const Real xhat = (xin[j] - mean) * inv;
        const Real dxhat = gin[j] * gamma[col(j)];
        dx_out[j] = inv * (dxhat - sum_dxhat * im - xhat * sum_dxhat_xhat * im);
    }
}

}  // namespace

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, Real eps) {
    Tensor y = layer_norm(x->value, gamma->value, beta->value, eps);
    return make_node(y, {x, gamma, beta}, [x, gamma, beta, eps](Node& n) {
        const std::int64_t d = x->value.shape.back();
        const std::int64_t rows = x->value.numel() / d;
        Tensor dx(x->value.shape), dg(gamma->value.shape), db(beta->value.shape);
        const Tensor& g = grad_of(n);
        for (std::int64_t r = 0; r < rows; ++r) {
            norm_span_backward(
                x->value.data.data() + r * d, g.data.data() + r * d, gamma->value.data.data(), eps, d,
                dx.data.data() + r * d, dg.data.data(), db.data.data(),
                [](std::int64_t j) { return static_cast<std::size_t>(j); });
        }
        accum(*x, dx);
        accum(*gamma, dg);
        accum(*beta, db);
    });
}

Var group_norm(const Var& x, std::int64_t groups, const Var& gamma, const Var& beta, Real eps) {
    Tensor y = group_norm(x->value, groups, gamma->value, beta->value, eps);
    return make_node(y, {x, gamma, beta}, [x, groups, gamma, beta, eps](Node& n) {
        const std::int64_t d = x->value.shape[1];
        const std::int64_t gd = d / groups;
        Tensor dx(x->value.shape), dg(gamma->value.shape), db(beta->value.shape);
        const Tensor& g = grad_of(n);
        for (std::int64_t r = 0; r < x->value.shape[0]; ++r) {
            for (std::int64_t grp = 0; grp < groups; ++grp) {
                const std::int64_t off = r * d + grp * gd;
                norm_span_backward(x->value.data.data() + off, g.data.data() + off,
                                   gamma->value.data.data(), eps, gd, dx.data.data() + off,
                                   dg.data.data(), db.data.data(), [grp, gd](std::int64_t j) {
                                       return static_cast<std::size_t>(grp * gd + j);
                                   });
            }
        }
        accum(*x, dx);
        accum(*gamma, dg);
        accum(*beta, db);
    });
}

Var group_norm_chw(const Var& x, std::int64_t groups, const Var& gamma, const Var& beta, Real eps) {
    Tensor y = group_norm_chw(x->value, groups, gamma->value, beta->value, eps);
    return make_node(y, {x, gamma, beta}, [x, groups, gamma, beta, eps](Node& n) {
        const std::int64_t c = x->value.shape[0], plane = x->value.shape[1] * x->value.shape[2];
        const std::int64_t gc = c / groups;
        Tensor dx(x->value.shape), dg(gamma->value.shape), db(beta->value.shape);
        const Tensor& g = grad_of(n);
        for (std::int64_t grp = 0; grp < groups; ++grp) {
            const std::int64_t off = grp * gc * plane;
            norm_span_backward(x->value.data.data() + off, g.data.data() + off, gamma->value.data.data(),
                               eps, gc * plane, dx.data.data() + off, dg.data.data(), db.data.data(),
                               [grp, gc, plane](std::int64_t j) {
                                   return static_cast<std::size_t>(grp * gc + j / plane);
                               });
        }
        accum(*x, dx);
        accum(*gamma, dg);
        accum(*beta, db);
    });
}

Var conv2d(const Var& x, const Var& kernels, const Var& bias, std::int64_t stride, std::int64_t pad) {
    Tensor y = conv2d(x->value, kernels->value, bias->value, stride, pad);
    return make_node(y, {x, kernels, bias}, [x, kernels, bias, stride, pad](Node& n) {
        const Tensor& g = grad_of(n);
        const std::int64_t cout = kernels->value.shape[0], cin = kernels->value.shape[1];
        const std::int64_t kh = kernels->value.shape[2], kw = kernels->value.shape[3];
        const std::int64_t h = x->value.shape[1], w = x->value.shape[2];
        const std::int64_t hout = g.shape[1], wout = g.shape[2];
        const std::int64_t patch = cin * kh * kw, cols_n = hout * wout;

        const Tensor cols = im2col(x->value, kh, kw, stride, pad, hout, wout);
        // dW[Cout, patch] = G[Cout, cols_n] * cols^T
        Tensor dw({cout, cin, kh, kw});
        matmul_acc(g.data.data(), transpose(cols).data.data(), dw.data.data(), cout, cols_n, patch);
        // db[c] = sum over plane of G
        Tensor dbias({cout});
        for (std::int64_t c = 0; c < cout; ++c) {
            Real s = 0.0;
            const Real* plane = g.data.data() + c * cols_n;
            for (std::int64_t i = 0; i < cols_n; ++i) s += plane[i];
            dbias.data[static_cast<std::size_t>(c)] = s;
        }
        // dX = col2im(W^T * G)
        Tensor wt({patch, cout});
        for (std::int64_t c = 0; c < cout; ++c)
            for (std::int64_t p = 0; p < patch; ++p)
                wt.data[static_cast<std::size_t>(p * cout + c)] =
                    kernels->value.data[static_cast<std::size_t>(c * patch + p)];
        Tensor dcols({patch, cols_n});
        matmul_acc(wt.data.data(), g.data.data(), dcols.data.data(), patch, cout, cols_n);
        accum(*x, col2im(dcols, cin, h, w, kh, kw, stride, pad, hout, wout));
        accum(*kernels, dw);
        accum(*bias, dbias);
    });
}

Var nearest_upsample2x(const Var& x) {
    return make_node(nearest_upsample2x(x->value), {x}, [x](Node& n) {
        const std::int64_t c = x->value.shape[0], h = x->value.shape[1], w = x->value.shape[2];
        Tensor dx(x->value.shape);
        const Tensor& g = grad_of(n);
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t y = 0; y < 2 * h; ++y)
                for (std::int64_t xx = 0; xx < 2 * w; ++xx)
                    dx.data[static_cast<std::size_t>((ch * h + y / 2) * w + xx / 2)] +=
                        g.data[static_cast<std::size_t>((ch * 2 * h + y) * 2 * w + xx)];
        accum(*x, dx);
    });
}

Var gelu(const Var& x) {
    return make_node(gelu(x->value), {x}, [x](Node& n) {
        Tensor dx(x->value.shape);
        const Tensor& g = grad_of(n);
        const Real c = 0.7978845608028654;
        for (std::size_t i = 0; i < dx.data.size(); ++i) {
            const Real v = x->value.data[i];
            const Real u = c * (v + 0.044715 * v * v * v);
            const Real t = std::tanh(u);
            const Real du = c * (1.0 + 3.0 * 0.044715 * v * v);
            dx.data[i] = g.data[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
        }
        accum(*x, dx);
    });
}

Var silu(const Var& x) {
    return make_node(silu(x->value), {x}, [x](Node& n) {
        Tensor dx(x->value.shape);
        const Tensor& g = grad_of(n);
        for (std::size_t i = 0; i < dx.data.size(); ++i) {
            const Real v = x->value.data[i];
            const Real s = 1.0 / (1.0 + std::exp(-v));
            dx.data[i] = g.data[i] * (s * (1.0 + v * (1.0 - s)));
        }
        accum(*x, dx);
    });
}

Var log_v(const Var& x) {
    return make_node(log_val(x->value), {x}, [x](Node& n) {
        Tensor dx(x->value.shape);
        const Tensor& g = grad_of(n);
        for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] = g.data[i] / x->value.data[i];
        accum(*x, dx);
    });
}

Var abs_v(const Var& x) {
    return make_node(abs_val(x->value), {x}, [x](Node& n) {
        Tensor dx(x->value.shape);
        const Tensor& g = grad_of(n);
        for (std::size_t i = 0; i < dx.data.size(); ++i) {
            const Real v = x->value.data[i];
            dx.data[i] = g.data[i] * (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
        }
        accum(*x, dx);
    });
}

Var sum_all_v(const Var& x) {
    return make_node(Tensor({1}, {sum_all(x->value)}), {x}, [x](Node& n) {
        accum(*x, Tensor::full(x->value.shape, grad_of(n).data[0]));
    });
}

Var mean_all_v(const Var& x) {
    const Real inv = 1.0 / static_cast<Real>(x->value.numel());
    return make_node(Tensor({1}, {sum_all(x->value) * inv}), {x}, [x, inv](Node& n) {
        accum(*x, Tensor::full(x->value.shape, grad_of(n).data[0] * inv));
    });
}

Var add_rowvec(const Var& x, const Var& v) {
    return make_node(add_rowvec(x->value, v->value), {x, v}, [x, v](Node& n) {
        const Tensor& g = grad_of(n);
        accum(*x, g);
        Tensor dv(v->value.shape);
        const std::int64_t cols = x->value.shape[1];
        for (std::int64_t r = 0; r < x->value.shape[0]; ++r)
            for (std::int64_t c = 0; c < cols; ++c)
                dv.data[static_cast<std::size_t>(c)] += g.data[static_cast<std::size_t>(r * cols + c)];
        accum(*v, dv);
    });
}

Var reverse_rows(const Var& x) {
    return make_node(reverse_rows(x->value), {x}, [x](Node& n) { accum(*x, reverse_rows(grad_of(n))); });
}

Var slice_cols(const Var& x, std::int64_t c0, std::int64_t c1) {
    return make_node(slice_cols(x->value, c0, c1), {x}, [x, c0, c1](Node& n) {
        Tensor dx(x->value.shape);
        const Tensor& g = grad_of(n);
        const std::int64_t d = x->value.shape[1], sw = c1 - c0;
        for (std::int64_t r = 0; r < x->value.shape[0]; ++r)
            for (std::int64_t c = 0; c < sw; ++c)
                dx.data[static_cast<std::size_t>(r * d + c0 + c)] = g.data[static_cast<std::size_t>(r * sw + c)];
        accum(*x, dx);
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    std::vector<Tensor> vals;
    vals.reserve(parts.size());
    for (const auto& p : parts) vals.push_back(p->value);
    Tensor y = concat_cols(vals);
    std::vector<Var> parents(parts.begin(), parts.end());
    return make_node(y, parents, [parts](Node& n) {
        const Tensor& g = grad_of(n);
        const std::int64_t d = g.shape[1];
        std::int64_t off = 0;
        for (const auto& p : parts) {
            const std::int64_t pw = p->value.shape[1];
            Tensor dp(p->value.shape);
            for (std::int64_t r = 0; r < p->value.shape[0]; ++r)
                for (std::int64_t c = 0; c < pw; ++c)
                    dp.data[static_cast<std::size_t>(r * pw + c)] =
                        g.data[static_cast<std::size_t>(r * d + off + c)];
            accum(*p, dp);
            off += pw;
        }
    });
}

Var slice_rows(const Var& x, std::int64_t r0, std::int64_t r1) {
    return make_node(slice_rows(x->value, r0, r1), {x}, [x, r0, r1](Node& n) {
        Tensor dx(x->value.shape);
        const Tensor& g = grad_of(n);
        const std::int64_t d = x->value.shape[1];
        std::memcpy(dx.data.data() + r0 * d, g.data.data(),
                    static_cast<std::size_t>((r1 - r0) * d) * sizeof(Real));
        accum(*x, dx);
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    std::vector<Tensor> vals;
    vals.reserve(parts.size());
    for (const auto& p : parts) vals.push_back(p->value);
    Tensor y = concat_rows(vals);
    std::vector<Var> parents(parts.begin(), parts.end());
    return make_node(y, parents, [parts](Node& n) {
        const Tensor& g = grad_of(n);
        const std::int64_t d = g.shape[1];
        std::int64_t off = 0;
        for (const auto& p : parts) {
            Tensor dp(p->value.shape);
            std::memcpy(dp.data.data(), g.data.data() + off * d,
                        static_cast<std::size_t>(p->value.numel()) * sizeof(Real));
            accum(*p, dp);
            off += p->value.shape[0];
        }
    });
}

Var gather_rows(const Var& table, const std::vector<std::int64_t>& idx) {
    return make_node(gather_rows(table->value, idx), {table}, [table, idx](Node& n) {
        Tensor dt(table->value.shape);
        const Tensor& g = grad_of(n);
        const std::int64_t d = table->value.shape[1];
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::int64_t c = 0; c < d; ++c)
                dt.data[static_cast<std::size_t>(idx[i] * d + c)] +=
                    g.data[i * static_cast<std::size_t>(d) + static_cast<std::size_t>(c)];
        accum(*table, dt);
    });
}

Var take_per_row(const Var& x, const std::vector<std::int64_t>& idx) {
    return make_node(take_per_row(x->value, idx), {x}, [x, idx](Node& n) {
        Tensor dx(x->value.shape);
        const Tensor& g = grad_of(n);
        for (std::int64_t r = 0; r < x->value.shape[0]; ++r)
            dx.data[static_cast<std::size_t>(r * x->value.shape[1] + idx[static_cast<std::size_t>(r)])] =
                g.data[static_cast<std::size_t>(r)];
        accum(*x, dx);
    });
}

Var reshape(const Var& x, std::vector<std::int64_t> shape) {
    RETC_CHECK(shape_numel(shape) == x->value.numel(), ErrorKind::Dimension,
               "reshape: element count mismatch");
    Tensor y(shape, x->value.data);
    return make_node(y, {x}, [x](Node& n) {
        Tensor dx(x->value.shape, grad_of(n).data);
        accum(*x, dx);
    });
}

Var mul_const(const Var& x, const Tensor& c) {
    return make_node(mul(x->value, c), {x}, [x, c](Node& n) { accum(*x, mul(grad_of(n), c)); });
}

Var row_scale_const(const Var& x, const std::vector<Real>& s) {
    return make_node(row_scale(x->value, s), {x}, [x, s](Node& n) { accum(*x, row_scale(grad_of(n), s)); });
}

Var rotate_rows(const Var& x, const std::vector<Real>& theta, std::int64_t start_pos) {
    return make_node(rotate_rows(x->value, theta, start_pos), {x}, [x, theta, start_pos](Node& n) {
        accum(*x, rotate_rows_inverse(grad_of(n), theta, start_pos));
    });
}

Real fd_max_rel_error(const std::vector<Var>& params, const std::function<Var()>& loss_fn, Real step) {
    Var loss = loss_fn();
    backward(loss);
    std::vector<Tensor> ad_grads;
    ad_grads.reserve(params.size());
    for (const auto& p : params)
        ad_grads.push_back(p->grad.data.empty() ? Tensor(p->value.shape) : p->grad);

    Real worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& v = params[pi]->value;
        for (std::size_t i = 0; i < v.data.size(); ++i) {
            const Real saved = v.data[i];
            v.data[i] = saved + step;
            const Real up = loss_fn()->value.data[0];
            v.data[i] = saved - step;
            const Real dn = loss_fn()->value.data[0];
            v.data[i] = saved;
            const Real fd = (up - dn) / (2.0 * step);
            const Real ad = ad_grads[pi].data[i];
            const Real denom = std::max({std::abs(fd), std::abs(ad), static_cast<Real>(1e-6)});
            worst = std::max(worst, std::abs(fd - ad) / denom);
        }
    }
    return worst;
}

}  // namespace retc
