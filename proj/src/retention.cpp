#include "retc/retention.hpp"

#include <cmath>

namespace retc {

Real head_decay(std::int64_t head_index) {
    return 1.0 - std::pow(2.0, -5.0 - static_cast<Real>(head_index));
}

std::vector<Real> head_theta(std::int64_t d_head) {
    std::vector<Real> theta(static_cast<std::size_t>(d_head / 2));
    for (std::size_t j = 0; j < theta.size(); ++j)
        theta[j] = std::pow(10000.0, -2.0 * static_cast<Real>(j) / static_cast<Real>(d_head));
    return theta;
}

Tensor decay_matrix(std::int64_t len, Real gamma) {
    Tensor d({len, len});
    for (std::int64_t n = 0; n < len; ++n)
        for (std::int64_t m = 0; m <= n; ++m)
            d.at(n, m) = std::pow(gamma, static_cast<Real>(n - m));
    return d;
}

Tensor retention_parallel(const Tensor& x, const RetentionHeadParams& p, std::int64_t start_pos) {
    RETC_CHECK(x.ndim() == 2 && x.shape[1] == p.d_head(), ErrorKind::Dimension,
               "retention_parallel: input width must equal d_head");
    const std::int64_t len = x.shape[0];
    const Tensor q = rotate_rows(matmul(x, p.wq), p.theta, start_pos);
    const Tensor k = rotate_rows(matmul(x, p.wk), p.theta, start_pos);
    const Tensor v = matmul(x, p.wv);
    const Tensor a = mul(matmul(q, transpose(k)), decay_matrix(len, p.gamma));
    return matmul(a, v);
}

std::pair<Tensor, RetentionState> retention_recurrent_step(const Tensor& x_row,
                                                           const RetentionState& state,
                                                           const RetentionHeadParams& p) {
    const std::int64_t dh = p.d_head();
    RETC_CHECK(x_row.numel() == dh, ErrorKind::Dimension,
               "retention_recurrent_step: input must have d_head entries");
    const Tensor row({1, dh}, x_row.data);
    const Tensor q = rotate_rows(matmul(row, p.wq), p.theta, state.step);
    const Tensor k = rotate_rows(matmul(row, p.wk), p.theta, state.step);
    const Tensor v = matmul(row, p.wv);

    RetentionState next;
    next.step = state.step + 1;
    next.s = Tensor({dh, dh});
    // S' = gamma*S + K^T V (outer product of the single row)
    for (std::int64_t i = 0; i < dh; ++i)
        for (std::int64_t j = 0; j < dh; ++j)
            next.s.at(i, j) = p.gamma * state.s.at(i, j) + k.data[static_cast<std::size_t>(i)] *
                                                               v.data[static_cast<std::size_t>(j)];
    Tensor o = matmul(q, next.s);
    o.shape = {dh};
    return {std::move(o), std::move(next)};
}

Tensor retention_chunkwise(const Tensor& x, std::int64_t chunk, const RetentionHeadParams& p,
                           RetentionState* carry, std::int64_t start_pos) {
    const std::int64_t len = x.shape[0];
    RETC_CHECK(chunk >= 1 && chunk <= len, ErrorKind::Usage,
               "retention_chunkwise: chunk size must lie in [1, L]");
    const std::int64_t dh = p.d_head();

    RetentionState state = carry ? *carry : RetentionState::fresh(dh);
    RETC_CHECK(state.step == start_pos, ErrorKind::Usage,
               "retention_chunkwise: carry state position does not match start_pos");

    std::vector<Tensor> outs;
    for (std::int64_t t0 = 0; t0 < len; t0 += chunk) {
        const std::int64_t b = std::min(chunk, len - t0);
        const Tensor xs = slice_rows(x, t0, t0 + b);
        const std::int64_t abs0 = start_pos + t0;
        const Tensor q = rotate_rows(matmul(xs, p.wq), p.theta, abs0);
        const Tensor k = rotate_rows(matmul(xs, p.wk), p.theta, abs0);
        const Tensor v = matmul(xs, p.wv);

        // within-chunk parallel part
        Tensor o = matmul(mul(matmul(q, transpose(k)), decay_matrix(b, p.gamma)), v);
        // cross-chunk: o_i += gamma^(i+1) * q_i . S
        const Tensor qs = matmul(q, state.s);
        std::vector<Real> in_decay(static_cast<std::size_t>(b));
        for (std::int64_t i = 0; i < b; ++i)
            in_decay[static_cast<std::size_t>(i)] = std::pow(p.gamma, static_cast<Real>(i + 1));
        o = add(o, row_scale(qs, in_decay));
        outs.push_back(std::move(o));

        // S <- gamma^b S + sum_i gamma^(b-1-i) k_i^T v_i
        std::vector<Real> out_decay(static_cast<std::size_t>(b));
        for (std::int64_t i = 0; i < b; ++i)
            out_decay[static_cast<std::size_t>(i)] = std::pow(p.gamma, static_cast<Real>(b - 1 - i));
        state.s = add(scale(state.s, std::pow(p.gamma, static_cast<Real>(b))),
                      matmul(transpose(row_scale(k, out_decay)), v));
        state.step += b;
    }
    if (carry) *carry = state;
    return outs.size() == 1 ? outs[0] : concat_rows(outs);
}

Var retention_parallel(const Var& x, const Var& wq, const Var& wk, const Var& wv, Real gamma,
                       const std::vector<Real>& theta, std::int64_t start_pos) {
    const std::int64_t len = x->value.shape[0];
    const Var q = rotate_rows(matmul(x, wq), theta, start_pos);
    const Var k = rotate_rows(matmul(x, wk), theta, start_pos);
    const Var v = matmul(x, wv);
    const Var a = mul_const(matmul(q, transpose(k)), decay_matrix(len, gamma));
    return matmul(a, v);
}

Var retention_chunkwise(const Var& x, std::int64_t chunk, const Var& wq, const Var& wk,
                        const Var& wv, Real gamma, const std::vector<Real>& theta,
                        std::int64_t start_pos) {
    const std::int64_t len = x->value.shape[0];
    RETC_CHECK(chunk >= 1 && chunk <= len, ErrorKind::Usage,
               "retention_chunkwise: chunk size must lie in [1, L]");
    const std::int64_t dh = wq->value.shape[0];

    Var state = constant(Tensor::zeros({dh, dh}));
    std::vector<Var> outs;
    for (std::int64_t t0 = 0; t0 < len; t0 += chunk) {
        const std::int64_t b = std::min(chunk, len - t0);
        const Var xs = slice_rows(x, t0, t0 + b);
        const std::int64_t abs0 = start_pos + t0;
        const Var q = rotate_rows(matmul(xs, wq), theta, abs0);
        const Var k = rotate_rows(matmul(xs, wk), theta, abs0);
        const Var v = matmul(xs, wv);

        Var o = matmul(mul_const(matmul(q, transpose(k)), decay_matrix(b, gamma)), v);
        std::vector<Real> in_decay(static_cast<std::size_t>(b));
        for (std::int64_t i = 0; i < b; ++i)
            in_decay[static_cast<std::size_t>(i)] = std::pow(gamma, static_cast<Real>(i + 1));
        o = add(o, row_scale_const(matmul(q, state), in_decay));
        outs.push_back(o);

        std::vector<Real> out_decay(static_cast<std::size_t>(b));
        for (std::int64_t i = 0; i < b; ++i)
            out_decay[static_cast<std::size_t>(i)] = std::pow(gamma, static_cast<Real>(b - 1 - i));
        state = add(scale(state, std::pow(gamma, static_cast<Real>(b))),
                    matmul(transpose(row_scale_const(k, out_decay)), v));
    }
    return outs.size() == 1 ? outs[0] : concat_rows(outs);
}

Tensor msr(const Tensor& x, const MsrParams& p, Paradigm paradigm, std::int64_t chunk,
           std::vector<RetentionState>* states, std::int64_t start_pos) {
    const std::int64_t d = p.d();
    const std::int64_t h = p.h();
    RETC_CHECK(x.ndim() == 2 && x.shape[1] == d, ErrorKind::Dimension, "msr: input width mismatch");
    RETC_CHECK(d % h == 0, ErrorKind::Dimension, "msr: d must be divisible by head count");
    const std::int64_t dh = d / h;
    if (states) RETC_CHECK(static_cast<std::int64_t>(states->size()) == h, ErrorKind::Usage,
                           "msr: need one carry state per head");

    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(h));
    for (std::int64_t i = 0; i < h; ++i) {
        const Tensor xs = slice_cols(x, i * dh, (i + 1) * dh);
        const auto& hp = p.heads[static_cast<std::size_t>(i)];
        if (states) {
            heads.push_back(retention_chunkwise(xs, chunk > 0 ? chunk : x.shape[0], hp,
                                                &(*states)[static_cast<std::size_t>(i)], start_pos));
        } else if (paradigm == Paradigm::Chunkwise) {
            heads.push_back(retention_chunkwise(xs, chunk > 0 ? chunk : x.shape[0], hp, nullptr, start_pos));
        } else {
            heads.push_back(retention_parallel(xs, hp, start_pos));
        }
    }
    const Tensor y = group_norm(concat_cols(heads), h, p.gn_gamma, p.gn_beta, kNormEps);
    return matmul(mul(silu(matmul(x, p.wg)), y), p.wo);
}

}  // namespace retc
