#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "retc/tensor.hpp"

namespace retc {

// Define-by-run reverse-mode tape. Nodes are shared_ptr-owned; dropping every
// handle releases the graph, which is the "reset between steps".
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::int64_t order = 0;  // creation index; creation order is topological
    std::vector<Var> parents;
    std::function<void(Node&)> backprop;
    int backprop_runs = 0;  // instrumentation for graph-invariant tests

    bool has_grad() const { return grad.numel() == static_cast<std::int64_t>(grad.data.size()) && !grad.data.empty(); }
};

Var leaf(Tensor value, bool requires_grad = true);
Var constant(Tensor value);

// Runs reverse-mode accumulation from a scalar loss. Visits each reachable
// node exactly once, in reverse creation order.
void backward(const Var& loss);

// ---- differentiable ops ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, Real c);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var softmax(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, Real eps);
Var group_norm(const Var& x, std::int64_t groups, const Var& gamma, const Var& beta, Real eps);
Var group_norm_chw(const Var& x, std::int64_t groups, const Var& gamma, const Var& beta, Real eps);
Var conv2d(const Var& x, const Var& kernels, const Var& bias, std::int64_t stride, std::int64_t pad);
Var nearest_upsample2x(const Var& x);
Var gelu(const Var& x);
Var silu(const Var& x);
Var log_v(const Var& x);
Var abs_v(const Var& x);
Var sum_all_v(const Var& x);       // -> shape [1]
Var mean_all_v(const Var& x);      // -> shape [1]
Var add_rowvec(const Var& x, const Var& v);
Var reverse_rows(const Var& x);
Var slice_cols(const Var& x, std::int64_t c0, std::int64_t c1);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& x, std::int64_t r0, std::int64_t r1);
Var concat_rows(const std::vector<Var>& parts);
Var gather_rows(const Var& table, const std::vector<std::int64_t>& idx);
Var take_per_row(const Var& x, const std::vector<std::int64_t>& idx);
Var reshape(const Var& x, std::vector<std::int64_t> shape);
// Elementwise product with a fixed (non-trained) tensor, e.g. a decay mask.
Var mul_const(const Var& x, const Tensor& c);
Var row_scale_const(const Var& x, const std::vector<Real>& s);
Var rotate_rows(const Var& x, const std::vector<Real>& theta, std::int64_t start_pos);

// Central finite-difference check. `loss_fn` must rebuild the loss graph from
// the current values of `params` (leaf vars). Returns the largest relative
// error between autodiff and finite-difference gradients over all params.
Real fd_max_rel_error(const std::vector<Var>& params, const std::function<Var()>& loss_fn,
                      Real step = 1e-4);

}  // namespace retc
