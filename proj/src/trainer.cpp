#include "retc/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "retc/optim.hpp"
#include "retc/rng.hpp"

namespace retc {

void TrainConfig::validate() const {
    RETC_CHECK(lr >= 0.0, ErrorKind::Usage, "train config: learning rate must be >= 0");
    RETC_CHECK(batch_size >= 1 && steps >= 0, ErrorKind::Usage,
               "train config: batch size and steps must be non-negative");
    RETC_CHECK(0.0 < mask_ratio_min && mask_ratio_min <= mask_ratio_max && mask_ratio_max < 1.0,
               ErrorKind::Usage, "train config: mask ratio range must lie inside (0,1)");
    RETC_CHECK(chunk >= 1, ErrorKind::Usage, "train config: chunk must be >= 1");
}

Real mlm_loss_value(const Tensor& pred, const std::vector<std::int64_t>& targets,
                    const std::vector<std::uint8_t>& mask) {
    RETC_CHECK(pred.ndim() == 2 && pred.shape[0] == static_cast<std::int64_t>(targets.size()) &&
                   targets.size() == mask.size(),
               ErrorKind::Dimension, "mlm_loss: prediction/target/mask sizes disagree");
    std::int64_t n = 0;
    Real acc = 0.0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        ++n;
        acc -= std::log(pred.at(static_cast<std::int64_t>(i), targets[i]));
    }
    RETC_CHECK(n > 0, ErrorKind::Usage, "mlm_loss: no masked positions");
    return acc / static_cast<Real>(n);
}

Var mlm_loss(const Var& pred, const std::vector<std::int64_t>& targets,
             const std::vector<std::uint8_t>& mask) {
    RETC_CHECK(pred->value.ndim() == 2 &&
                   pred->value.shape[0] == static_cast<std::int64_t>(targets.size()) &&
                   targets.size() == mask.size(),
               ErrorKind::Dimension, "mlm_loss: prediction/target/mask sizes disagree");
    std::int64_t n = 0;
    Tensor weights({static_cast<std::int64_t>(mask.size())});
    for (std::size_t i = 0; i < mask.size(); ++i) {
        weights.data[i] = mask[i] ? 1.0 : 0.0;
        n += mask[i] ? 1 : 0;
    }
    RETC_CHECK(n > 0, ErrorKind::Usage, "mlm_loss: no masked positions");
    const Var picked = take_per_row(pred, targets);
    const Var weighted = mul_const(log_v(picked), weights);
    return scale(sum_all_v(weighted), -1.0 / static_cast<Real>(n));
}

AdamState AdamState::fresh(const BiRetNet& net) {
    AdamState st;
    visit_params(net, [&](const std::string&, const Tensor& t) {
        st.m.emplace_back(t.shape);
        st.v.emplace_back(t.shape);
    });
    return st;
}

TokenDataset tokenize_dataset(const std::vector<Image>& images, const Palette& palette,
                              std::int64_t side) {
    RETC_CHECK(!images.empty(), ErrorKind::Usage, "tokenize_dataset: empty image list");
    TokenDataset out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(quantize(downsample(img, side), palette));
    return out;
}

namespace {

std::vector<std::uint8_t> training_mask(const TrainConfig& cfg, std::int64_t side,
                                        std::int64_t step, std::int64_t item) {
    Rng pick = make_rng(cfg.seed, "mask.pick", static_cast<std::uint64_t>(step),
                        static_cast<std::uint64_t>(item));
    MaskSpec spec;
    spec.ratio = pick.uniform(cfg.mask_ratio_min, cfg.mask_ratio_max);
    spec.kind = pick.uniform_int(2) == 0 ? MaskKind::RandomStroke : MaskKind::RandomRect;
    spec.thickness = 1 + static_cast<std::int64_t>(pick.uniform_int(2));
    spec.seed = pick.next_u64();
    auto m = gen_mask(spec, side);
    // mask ratios are bounded away from 0, but guard tiny grids anyway
    if (std::none_of(m.begin(), m.end(), [](std::uint8_t v) { return v != 0; }))
        m[m.size() / 2] = 1;
    return m;
}

struct BatchForward {
    Var loss;
    Real top1 = 0.0;
};

BatchForward batch_forward(const GraphParams& gp, const ModelConfig& cfg, const TokenDataset& data,
                           const TrainConfig& tc, std::int64_t step) {
    Rng pick = make_rng(tc.seed, "batch", static_cast<std::uint64_t>(step));
    Var total;
    std::int64_t hits = 0, masked_total = 0;
    for (std::int64_t b = 0; b < tc.batch_size; ++b) {
        const auto& tokens = data[pick.uniform_int(data.size())];
        RETC_CHECK(static_cast<std::int64_t>(tokens.size()) == cfg.seq_len(), ErrorKind::Dimension,
                   "train: dataset token grid does not match model side");
        PixelSequence seq;
        seq.side = cfg.side;
        seq.tokens = tokens;
        seq.mask = training_mask(tc, cfg.side, step, b);

        const Var probs = predict_all(gp, cfg, seq, tc.paradigm, tc.chunk);
        const Var item_loss = mlm_loss(probs, seq.tokens, seq.mask);
        total = total ? add(total, item_loss) : item_loss;

        for (std::size_t i = 0; i < seq.mask.size(); ++i) {
            if (!seq.mask[i]) continue;
            ++masked_total;
            const std::int64_t row = static_cast<std::int64_t>(i);
            std::int64_t best = 0;
            for (std::int64_t c = 1; c < cfg.palette; ++c)
                if (probs->value.at(row, c) > probs->value.at(row, best)) best = c;
            if (best == seq.tokens[i]) ++hits;
        }
    }
    BatchForward out;
    out.loss = scale(total, 1.0 / static_cast<Real>(tc.batch_size));
    out.top1 = masked_total > 0 ? static_cast<Real>(hits) / static_cast<Real>(masked_total) : 0.0;
    return out;
}

}  // namespace

TrainMetrics train_step(BiRetNet& net, AdamState& opt, const TokenDataset& data,
                        const TrainConfig& cfg, std::int64_t step) {
    cfg.validate();
    RETC_CHECK(!data.empty(), ErrorKind::Usage, "train_step: empty dataset");
    const auto t0 = std::chrono::steady_clock::now();

    GraphParams gp = GraphParams::from(net);
    BatchForward fwd = batch_forward(gp, net.cfg, data, cfg, step);
    const Real loss = fwd.loss->value.data[0];
    if (!std::isfinite(loss))
        fail(ErrorKind::Training,
             "non-finite loss at step " + std::to_string(step) + " (value " + std::to_string(loss) + ")");
    backward(fwd.loss);

    // gather gradients in canonical order
    std::vector<Tensor> grads;
    grads.reserve(gp.ordered.size());
    for (const auto& [_, v] : gp.ordered)
        grads.push_back(v->grad.data.empty() ? Tensor(v->value.shape) : v->grad);

    std::vector<Tensor*> params;
    params.reserve(grads.size());
    visit_params(net, [&](const std::string&, Tensor& p) { params.push_back(&p); });

    opt.t += 1;
    adam_step(params, grads, opt.m, opt.v, opt.t,
              {cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.grad_clip});

    const auto t1 = std::chrono::steady_clock::now();
    TrainMetrics m;
    m.step = step;
    m.mlm_loss = loss;
    m.masked_top1_acc = fwd.top1;
    m.ms_per_step = std::chrono::duration<Real, std::milli>(t1 - t0).count();
    return m;
}

void train_loop(BiRetNet& net, AdamState& opt, const TokenDataset& data, const TrainConfig& cfg,
                std::int64_t start_step,
                const std::function<void(const TrainMetrics&)>& on_metrics,
                const std::function<void(std::int64_t)>& on_checkpoint) {
    cfg.validate();
    for (std::int64_t step = start_step; step < cfg.steps; ++step) {
        const TrainMetrics m = train_step(net, opt, data, cfg, step);
        if (on_metrics) on_metrics(m);
        const bool last = step + 1 == cfg.steps;
        if (on_checkpoint && (last || (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)))
            on_checkpoint(step + 1);
    }
    if (on_checkpoint && cfg.steps == start_step) on_checkpoint(start_step);
}

Checkpoint training_checkpoint(const BiRetNet& net, const AdamState& opt, std::int64_t step) {
    Checkpoint ck = to_checkpoint(net, step);
    ck.meta["opt_t"] = opt.t;
    std::size_t pi = 0;
    visit_params(net, [&](const std::string& name, const Tensor&) {
        ck.add("opt.m." + name, opt.m[pi]);
        ck.add("opt.v." + name, opt.v[pi]);
        ++pi;
    });
    return ck;
}

std::int64_t restore_training(const Checkpoint& ck, BiRetNet& net, AdamState& opt) {
    net = biretnet_from_checkpoint(ck);
    opt = AdamState::fresh(net);
    opt.t = ck.meta.value("opt_t", static_cast<std::int64_t>(0));
    std::size_t pi = 0;
    visit_params(net, [&](const std::string& name, const Tensor& t) {
        if (ck.find("opt.m." + name)) {
            opt.m[pi] = ck.tensor("opt.m." + name, t.shape);
            opt.v[pi] = ck.tensor("opt.v." + name, t.shape);
        }
        ++pi;
    });
    return ck.meta.value("step", static_cast<std::int64_t>(0));
}

std::string metrics_csv_header() { return "step,mlm_loss,masked_top1_acc,ms_per_step\n"; }

std::string metrics_csv_row(const TrainMetrics& m) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%lld,%.9f,%.6f,%.3f\n", static_cast<long long>(m.step),
                  m.mlm_loss, m.masked_top1_acc, m.ms_per_step);
    return buf;
}

}  // namespace retc
