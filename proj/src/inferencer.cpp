#include "retc/inferencer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace retc {

std::int64_t sample_color(const Tensor& dist, const SamplingPolicy& policy, Rng& rng) {
    const std::int64_t k = dist.numel();
    RETC_CHECK(k >= 1, ErrorKind::Usage, "sample_color: empty distribution");
    if (policy.mode == SamplingPolicy::Mode::Top1) {
        std::int64_t best = 0;
        for (std::int64_t i = 1; i < k; ++i)
            if (dist.data[static_cast<std::size_t>(i)] > dist.data[static_cast<std::size_t>(best)])
                best = i;
        return best;
    }
    RETC_CHECK(policy.top_k >= 1 && policy.temperature > 0.0, ErrorKind::Usage,
               "sample_color: top-k needs k >= 1 and temperature > 0");
    const std::int64_t kk = std::min(policy.top_k, k);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(k));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) {
        return dist.data[static_cast<std::size_t>(a)] > dist.data[static_cast<std::size_t>(b)];
    });
    std::vector<Real> w(static_cast<std::size_t>(kk));
    Real z = 0.0;
    for (std::int64_t i = 0; i < kk; ++i) {
        const Real p = dist.data[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
        w[static_cast<std::size_t>(i)] = std::pow(std::max(p, static_cast<Real>(1e-300)),
                                                  1.0 / policy.temperature);
        z += w[static_cast<std::size_t>(i)];
    }
    const Real target = rng.uniform01() * z;
    Real acc = 0.0;
    for (std::int64_t i = 0; i < kk; ++i) {
        acc += w[static_cast<std::size_t>(i)];
        if (acc >= target) return idx[static_cast<std::size_t>(i)];
    }
    return idx[static_cast<std::size_t>(kk - 1)];
}

namespace {

std::vector<std::int64_t> masked_positions(const PixelSequence& seq) {
    std::vector<std::int64_t> out;
    for (std::size_t i = 0; i < seq.mask.size(); ++i)
        if (seq.mask[i]) out.push_back(static_cast<std::int64_t>(i));
    return out;
}

Tensor fe_pe_row(const BiRetNet& net, std::int64_t fe_row, std::int64_t pos) {
    const std::int64_t d = net.cfg.dim;
    Tensor row({1, d});
    for (std::int64_t c = 0; c < d; ++c)
        row.data[static_cast<std::size_t>(c)] =
            net.fe.at(fe_row, c) + net.pe.at(pos, c);
    return row;
}

Tensor pe_row(const BiRetNet& net, std::int64_t pos) {
    const std::int64_t d = net.cfg.dim;
    Tensor row({1, d});
    for (std::int64_t c = 0; c < d; ++c) row.data[static_cast<std::size_t>(c)] = net.pe.at(pos, c);
    return row;
}

// Single-row MSR step against per-head states. With persist=false the states
// are only peeked (the query does not become part of the stream).
Tensor msr_step(const Tensor& ln_row, const BlockParams& blk, std::vector<RetentionState>& states,
                bool persist) {
    const std::int64_t h = blk.msr.h();
    const std::int64_t d = blk.msr.d();
    const std::int64_t dh = d / h;
    Tensor heads({1, d});
    for (std::int64_t i = 0; i < h; ++i) {
        const auto& hp = blk.msr.heads[static_cast<std::size_t>(i)];
        auto& st = states[static_cast<std::size_t>(i)];
        const Tensor xs = slice_cols(ln_row, i * dh, (i + 1) * dh);
        const Tensor q = rotate_rows(matmul(xs, hp.wq), hp.theta, st.step);
        const Tensor k = rotate_rows(matmul(xs, hp.wk), hp.theta, st.step);
        const Tensor v = matmul(xs, hp.wv);
        // o = q . (gamma*S + k^T v) = gamma*(q S) + (q.k) v
        Real qk = 0.0;
        for (std::int64_t c = 0; c < dh; ++c)
            qk += q.data[static_cast<std::size_t>(c)] * k.data[static_cast<std::size_t>(c)];
        for (std::int64_t col = 0; col < dh; ++col) {
            Real qs = 0.0;
            for (std::int64_t r = 0; r < dh; ++r)
                qs += q.data[static_cast<std::size_t>(r)] * st.s.at(r, col);
            heads.data[static_cast<std::size_t>(i * dh + col)] =
                hp.gamma * qs + qk * v.data[static_cast<std::size_t>(col)];
        }
        if (persist) {
            for (std::int64_t r = 0; r < dh; ++r)
                for (std::int64_t c = 0; c < dh; ++c)
                    st.s.at(r, c) = hp.gamma * st.s.at(r, c) +
                                    k.data[static_cast<std::size_t>(r)] * v.data[static_cast<std::size_t>(c)];
            st.step += 1;
        }
    }
    const Tensor y = group_norm(heads, h, blk.msr.gn_gamma, blk.msr.gn_beta, kNormEps);
    return matmul(mul(silu(matmul(ln_row, blk.msr.wg)), y), blk.msr.wo);
}

// Runs one row through the forward tower's blocks in recurrent mode.
Tensor tower_step(const Tensor& row, const std::vector<BlockParams>& blocks, TowerStates& states,
                  bool persist) {
    Tensor x = row;
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        const auto& blk = blocks[l];
        const Tensor ln1 = layer_norm(x, blk.ln1_g, blk.ln1_b, kNormEps);
        const Tensor y = add(msr_step(ln1, blk, states.layers[l], persist), x);
        const Tensor ln2 = layer_norm(y, blk.ln2_g, blk.ln2_b, kNormEps);
        const Tensor f =
            add_rowvec(matmul(gelu(add_rowvec(matmul(ln2, blk.ffn.w1), blk.ffn.b1)), blk.ffn.w2),
                       blk.ffn.b2);
        x = add(f, y);
    }
    return x;
}

}  // namespace

InferenceSession init_session(const PixelSequence& seq, const BiRetNet& net,
                              const SamplingPolicy& policy) {
    RETC_CHECK(seq.side == net.cfg.side, ErrorKind::Usage,
               "init_session: sequence side does not match the model config");
    RETC_CHECK(static_cast<std::int64_t>(seq.tokens.size()) == net.cfg.seq_len() &&
                   seq.tokens.size() == seq.mask.size(),
               ErrorKind::Dimension, "init_session: sequence arrays have wrong length");

    InferenceSession s;
    s.net = &net;
    s.tokens = seq.tokens;
    s.mask = seq.mask;
    s.pending = masked_positions(seq);
    s.policy = policy;
    s.rng = make_rng(policy.seed, "sampling");

    const Tensor x0 = embed(seq, net.tables());
    s.fwd_states = TowerStates::fresh(net.cfg);
    // Single chunk over the whole initial sequence: computes the decayed
    // summary S = sum gamma^(n-m) K^T V per layer/head in one pass.
    forward_tower(x0, net.fwd, Paradigm::Chunkwise, net.cfg.seq_len(), &s.fwd_states, 0);
    s.backward_acts = backward_tower(x0, net.bwd, Paradigm::Parallel);
    return s;
}

StepResult step(InferenceSession& s, std::int64_t position, std::optional<std::int64_t> forced) {
    RETC_CHECK(s.net != nullptr, ErrorKind::Usage, "step: uninitialized session");
    RETC_CHECK(!s.done(), ErrorKind::Usage, "step: no masked positions left");
    RETC_CHECK(position == s.pending[s.next], ErrorKind::Usage,
               "step: position " + std::to_string(position) +
                   " is out of order (expected " + std::to_string(s.pending[s.next]) + ")");
    const BiRetNet& net = *s.net;

    // Query pass: the step input is PE[j_n]; states are peeked, not advanced.
    const Tensor f_row = tower_step(pe_row(net, position), net.fwd, s.fwd_states, false);

    const std::int64_t d = net.cfg.dim;
    Tensor fused({1, d});
    for (std::int64_t c = 0; c < d; ++c)
        fused.data[static_cast<std::size_t>(c)] =
            f_row.data[static_cast<std::size_t>(c)] + s.backward_acts.at(position, c);
    const Tensor logits = add_rowvec(
        matmul(layer_norm(fused, net.head_ln_g, net.head_ln_b, kNormEps), net.head_fc_w),
        net.head_fc_b);
    Tensor dist = softmax(logits);
    dist.shape = {net.cfg.palette};

    const std::int64_t color = forced ? *forced : sample_color(dist, s.policy, s.rng);
    RETC_CHECK(color >= 0 && color < net.cfg.palette, ErrorKind::Vocabulary,
               "step: sampled color outside the palette");

    // Advance pass: the sampled pixel's embedding becomes part of the stream.
    tower_step(fe_pe_row(net, color, position), net.fwd, s.fwd_states, true);

    s.tokens[static_cast<std::size_t>(position)] = color;
    s.next += 1;
    return {position, color, std::move(dist)};
}

CompletionResult complete(const PixelSequence& seq, const BiRetNet& net,
                          const SamplingPolicy& policy, const std::vector<std::int64_t>* forced) {
    InferenceSession s = init_session(seq, net, policy);
    if (forced)
        RETC_CHECK(forced->size() == s.pending.size(), ErrorKind::Usage,
                   "complete: forced sample count mismatch");
    CompletionResult out;
    std::size_t i = 0;
    while (!s.done()) {
        const std::int64_t pos = s.next_position();
        StepResult r = step(s, pos, forced ? std::optional<std::int64_t>((*forced)[i]) : std::nullopt);
        out.positions.push_back(r.position);
        out.dists.push_back(std::move(r.dist));
        ++i;
    }
    out.tokens = s.tokens;
    return out;
}

CompletionResult complete_oneshot(const PixelSequence& seq, const BiRetNet& net,
                                  const SamplingPolicy& policy) {
    const Tensor probs = predict_all(net, seq, Paradigm::Parallel);
    Rng rng = make_rng(policy.seed, "sampling");
    CompletionResult out;
    out.tokens = seq.tokens;
    for (std::size_t i = 0; i < seq.mask.size(); ++i) {
        if (!seq.mask[i]) continue;
        Tensor dist({net.cfg.palette});
        for (std::int64_t c = 0; c < net.cfg.palette; ++c)
            dist.data[static_cast<std::size_t>(c)] = probs.at(static_cast<std::int64_t>(i), c);
        const std::int64_t color = sample_color(dist, policy, rng);
        out.tokens[i] = color;
        out.positions.push_back(static_cast<std::int64_t>(i));
        out.dists.push_back(std::move(dist));
    }
    return out;
}

CompletionResult complete_recompute(const PixelSequence& seq, const BiRetNet& net,
                                    const SamplingPolicy& policy,
                                    const std::vector<std::int64_t>* forced) {
    RETC_CHECK(seq.side == net.cfg.side, ErrorKind::Usage,
               "complete_recompute: sequence side does not match the model config");
    const Tensor x0 = embed(seq, net.tables());
    const Tensor backward_acts = backward_tower(x0, net.bwd, Paradigm::Parallel);
    const auto pending = masked_positions(seq);
    if (forced)
        RETC_CHECK(forced->size() == pending.size(), ErrorKind::Usage,
                   "complete_recompute: forced sample count mismatch");

    Rng rng = make_rng(policy.seed, "sampling");
    CompletionResult out;
    out.tokens = seq.tokens;
    std::vector<Tensor> consumed;  // embeddings of pixels already fed back
    for (std::size_t n = 0; n < pending.size(); ++n) {
        const std::int64_t pos = pending[n];
        // extended stream: initial sequence, consumed pixels, query row
        std::vector<Tensor> rows{x0};
        for (const auto& r : consumed) rows.push_back(r);
        rows.push_back(pe_row(net, pos));
        const Tensor xf = forward_tower(concat_rows(rows), net.fwd, Paradigm::Parallel);

        const std::int64_t d = net.cfg.dim;
        Tensor fused({1, d});
        const std::int64_t last = xf.shape[0] - 1;
        for (std::int64_t c = 0; c < d; ++c)
            fused.data[static_cast<std::size_t>(c)] = xf.at(last, c) + backward_acts.at(pos, c);
        const Tensor logits = add_rowvec(
            matmul(layer_norm(fused, net.head_ln_g, net.head_ln_b, kNormEps), net.head_fc_w),
            net.head_fc_b);
        Tensor dist = softmax(logits);
        dist.shape = {net.cfg.palette};

        const std::int64_t color = forced ? (*forced)[n] : sample_color(dist, policy, rng);
        out.tokens[static_cast<std::size_t>(pos)] = color;
        out.positions.push_back(pos);
        out.dists.push_back(std::move(dist));
        consumed.push_back(fe_pe_row(net, color, pos));
    }
    return out;
}

SuffixRecompute init_suffix_recompute(const PixelSequence& seq, const BiRetNet& net) {
    RETC_CHECK(seq.side == net.cfg.side, ErrorKind::Usage,
               "suffix_recompute: sequence side does not match the model config");
    SuffixRecompute s;
    s.net = &net;
    s.tokens = seq.tokens;
    s.pending = masked_positions(seq);
    const Tensor x0 = embed(seq, net.tables());
    s.init_states = TowerStates::fresh(net.cfg);
    forward_tower(x0, net.fwd, Paradigm::Chunkwise, net.cfg.seq_len(), &s.init_states, 0);
    s.backward_acts = backward_tower(x0, net.bwd, Paradigm::Parallel);
    return s;
}

Tensor suffix_recompute_dist(const SuffixRecompute& s) {
    RETC_CHECK(!s.done(), ErrorKind::Usage, "suffix_recompute: no masked positions left");
    const BiRetNet& net = *s.net;
    const std::int64_t pos = s.pending[s.next];

    std::vector<Tensor> rows = s.prefix_rows;
    rows.push_back(pe_row(net, pos));
    const Tensor suffix = rows.size() == 1 ? rows[0] : concat_rows(rows);

    // Re-run the parallel towers over everything generated so far, seeded by
    // the initial-state carry. Copies keep the cached states untouched.
    TowerStates carry = s.init_states;
    const Tensor xf = forward_tower(suffix, net.fwd, Paradigm::Parallel, suffix.shape[0], &carry,
                                    net.cfg.seq_len());

    const std::int64_t d = net.cfg.dim;
    Tensor fused({1, d});
    const std::int64_t last = xf.shape[0] - 1;
    for (std::int64_t c = 0; c < d; ++c)
        fused.data[static_cast<std::size_t>(c)] = xf.at(last, c) + s.backward_acts.at(pos, c);
    const Tensor logits = add_rowvec(
        matmul(layer_norm(fused, net.head_ln_g, net.head_ln_b, kNormEps), net.head_fc_w),
        net.head_fc_b);
    Tensor dist = softmax(logits);
    dist.shape = {net.cfg.palette};
    return dist;
}

void suffix_recompute_push(SuffixRecompute& s, std::int64_t color) {
    RETC_CHECK(!s.done(), ErrorKind::Usage, "suffix_recompute: nothing to push");
    const std::int64_t pos = s.pending[s.next];
    s.prefix_rows.push_back(fe_pe_row(*s.net, color, pos));
    s.tokens[static_cast<std::size_t>(pos)] = color;
    s.next += 1;
}

Image entropy_map(const CompletionResult& res, std::int64_t side, std::int64_t k) {
    Image img(side, side, 1);
    const Real norm = std::log(static_cast<Real>(k));
    for (std::size_t i = 0; i < res.positions.size(); ++i) {
        Real h = 0.0;
        for (Real p : res.dists[i].data)
            if (p > 0.0) h -= p * std::log(p);
        img.data[static_cast<std::size_t>(res.positions[i])] = h / norm;
    }
    return img;
}

}  // namespace retc
