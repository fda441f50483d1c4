#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "retc/autodiff.hpp"
#include "retc/tensor.hpp"

namespace retc {

// One retention head. Projections act on the head's slice of the model width.
// Rotation frequencies theta (length d_head/2) give xPos-style relative
// positions over the 1-d raster stream; gamma is the per-head decay.
struct RetentionHeadParams {
    Tensor wq, wk, wv;  // [d_head, d_head]
    Real gamma = 0.9;
    std::vector<Real> theta;

    std::int64_t d_head() const { return wq.shape[0]; }
};

// Multi-scale decay schedule: gamma_h = 1 - 2^-(5 + h).
Real head_decay(std::int64_t head_index);
// theta_j = base^(-2j / d_head), base 10000.
std::vector<Real> head_theta(std::int64_t d_head);

// Running summary S = sum_{m<=n} gamma^(n-m) K~_m^T V_m. Size is fixed at
// d_head x d_head regardless of how many positions were consumed; `step`
// counts consumed positions (and fixes the absolute rotation of the next key).
struct RetentionState {
    Tensor s;  // [d_head, d_head]
    std::int64_t step = 0;

    static RetentionState fresh(std::int64_t d_head) {
        RetentionState st;
        st.s = Tensor::zeros({d_head, d_head});
        return st;
    }
};

// Lower-triangular decay matrix D[n][m] = gamma^(n-m), used by the parallel form.
Tensor decay_matrix(std::int64_t len, Real gamma);

// Parallel form: ((Q~ K~^T) o D) V over the whole sequence. `start_pos` is the
// absolute position of row 0 in the stream (non-zero when processing a suffix).
Tensor retention_parallel(const Tensor& x, const RetentionHeadParams& p,
                          std::int64_t start_pos = 0);

// One recurrent step: S' = gamma*S + K~^T V; o = Q~ S'.
std::pair<Tensor, RetentionState> retention_recurrent_step(const Tensor& x_row,
                                                           const RetentionState& state,
                                                           const RetentionHeadParams& p);

// Chunkwise form: within-chunk parallel plus cross-chunk state carry.
// Equals the parallel form for any chunk size. When `carry` is given it is
// consumed as the incoming state and replaced with the outgoing one.
Tensor retention_chunkwise(const Tensor& x, std::int64_t chunk, const RetentionHeadParams& p,
                           RetentionState* carry = nullptr, std::int64_t start_pos = 0);

// Differentiable parallel / chunkwise forms over graph values.
Var retention_parallel(const Var& x, const Var& wq, const Var& wk, const Var& wv,
                       Real gamma, const std::vector<Real>& theta, std::int64_t start_pos = 0);
Var retention_chunkwise(const Var& x, std::int64_t chunk, const Var& wq, const Var& wk,
                        const Var& wv, Real gamma, const std::vector<Real>& theta,
                        std::int64_t start_pos = 0);

// Multi-scale retention over the full width: per-head retention on column
// slices, concat, GroupNorm(groups = h), swish gate from the block input, and
// a d x d output projection.
struct MsrParams {
    std::vector<RetentionHeadParams> heads;
    Tensor gn_gamma, gn_beta;  // [d]
    Tensor wg, wo;             // [d, d]

    std::int64_t d() const { return wg.shape[0]; }
    std::int64_t h() const { return static_cast<std::int64_t>(heads.size()); }
};

enum class Paradigm { Parallel, Chunkwise };

inline constexpr Real kNormEps = 1e-6;

Tensor msr(const Tensor& x, const MsrParams& p, Paradigm paradigm = Paradigm::Parallel,
           std::int64_t chunk = 0, std::vector<RetentionState>* states = nullptr,
           std::int64_t start_pos = 0);

}  // namespace retc
