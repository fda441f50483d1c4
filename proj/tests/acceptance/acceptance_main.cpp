// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Tolerances are pinned in code next to each check.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "retc/bench.hpp"
#include "retc/biretnet.hpp"
#include "retc/inferencer.hpp"
#include "retc/rng.hpp"
#include "retc/trainer.hpp"
#include "retc/upsampler.hpp"
#include "support/synthetic.hpp"

using namespace retc;
using retc::testing::make_net;
using retc::testing::make_palette;
using retc::testing::make_sequence;
using retc::testing::max_abs_diff;
using retc::testing::stripe_setup;

namespace {

struct Criterion {
    std::string name;
    std::function<void()> run;  // throws on failure
};

#define ACCEPT(cond, msg)                                        \
    do {                                                         \
        if (!(cond)) throw std::runtime_error(msg);              \
    } while (0)

// ---- 1. paradigm equivalence -------------------------------------------

void criterion_paradigms() {
    Rng pick = make_rng(1, "acc.paradigm");
    for (int trial = 0; trial < 100; ++trial) {
        const std::int64_t len = 4 + static_cast<std::int64_t>(pick.uniform_int(61));  // 4..64
        const std::int64_t dh = 2 + static_cast<std::int64_t>(pick.uniform_int(7));    // 2..8
        RetentionHeadParams p;
        Rng rng = make_rng(pick.next_u64(), "acc.head");
        p.wq = Tensor::randn({dh, dh}, rng, 0.5);
        p.wk = Tensor::randn({dh, dh}, rng, 0.5);
        p.wv = Tensor::randn({dh, dh}, rng, 0.5);
        p.gamma = head_decay(static_cast<std::int64_t>(pick.uniform_int(4)));
        p.theta = head_theta(dh);
        const Tensor x = Tensor::randn({len, dh}, rng);

        const Tensor par = retention_parallel(x, p);

        RetentionState st = RetentionState::fresh(dh);
        Tensor rec({len, dh});
        for (std::int64_t r = 0; r < len; ++r) {
            Tensor row({dh});
            for (std::int64_t c = 0; c < dh; ++c) row.data[static_cast<std::size_t>(c)] = x.at(r, c);
            auto [o, next] = retention_recurrent_step(row, st, p);
            st = next;
            for (std::int64_t c = 0; c < dh; ++c) rec.at(r, c) = o.data[static_cast<std::size_t>(c)];
        }
        ACCEPT(max_abs_diff(par, rec) < 1e-6, "recurrent stepping diverged from the parallel form");

        for (const std::int64_t b : {std::int64_t{1}, std::int64_t{4}, len}) {
            const Tensor ch = retention_chunkwise(x, b, p);
            ACCEPT(max_abs_diff(par, ch) < 1e-6, "chunkwise form diverged from the parallel form");
        }
    }
}

// ---- 2. pixel-wise inference fidelity -----------------------------------

void criterion_algorithm_fidelity() {
    ModelConfig cfg;
    cfg.heads = 2;
    cfg.dim = 16;
    cfg.layers = 2;
    cfg.side = 8;
    cfg.palette = 8;
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        const BiRetNet net = make_net(cfg, 100 + trial);
        const PixelSequence seq = make_sequence(cfg, 200 + trial, 0.3 + 0.02 * (trial % 10));
        const CompletionResult fast = complete(seq, net, SamplingPolicy::top1());
        const CompletionResult slow = complete_recompute(seq, net, SamplingPolicy::top1());
        ACCEPT(fast.tokens == slow.tokens, "color sequences differ from the recompute reference");
        for (std::size_t i = 0; i < fast.dists.size(); ++i)
            ACCEPT(max_abs_diff(fast.dists[i], slow.dists[i]) < 1e-4,
                   "per-pixel distributions differ beyond 1e-4");
    }
}

// ---- 3. gradient correctness --------------------------------------------

void criterion_gradients() {
    ModelConfig cfg;
    cfg.heads = 2;
    cfg.dim = 16;
    cfg.layers = 2;
    cfg.side = 4;
    cfg.palette = 8;
    const BiRetNet net = make_net(cfg, 300);
    PixelSequence seq = make_sequence(cfg, 301, 0.5);
    seq.mask[0] = 1;  // at least one masked position

    const GraphParams gp = GraphParams::from(net);
    const Real err = fd_max_rel_error(gp.vars(), [&] {
        const Var probs = predict_all(gp, cfg, seq, Paradigm::Parallel);
        return mlm_loss(probs, seq.tokens, seq.mask);
    });
    ACCEPT(err < 1e-3, "finite-difference relative error " + std::to_string(err) + " >= 1e-3");
}

// ---- 4. training sanity ---------------------------------------------------

void criterion_training() {
    const std::int64_t k = 8, side = 8;
    const auto setup = stripe_setup(side, k);
    ModelConfig cfg;
    cfg.heads = 2;
    cfg.dim = 32;
    cfg.layers = 2;
    cfg.side = side;
    cfg.palette = k;
    BiRetNet net = init_biretnet(cfg, setup.palette, 400);
    AdamState opt = AdamState::fresh(net);
    TrainConfig tc;
    tc.batch_size = 16;
    tc.lr = 5e-3;
    tc.seed = 401;

    const Real lnk = std::log(static_cast<Real>(k));
    Real first = 0.0, last = 0.0, acc = 0.0;
    for (std::int64_t s = 0; s < 200; ++s) {
        const TrainMetrics m = train_step(net, opt, setup.data, tc, s);
        if (s == 0) first = m.mlm_loss;
        last = m.mlm_loss;
        acc = m.masked_top1_acc;
    }
    std::printf("      [info] loss %.4f (init) -> %.4f (200 steps, 0.5 ln k = %.4f); top-1 %.3f\n",
                first, last, 0.5 * lnk, acc);
    ACCEPT(std::abs(first - lnk) < 0.1 * lnk,
           "initial loss " + std::to_string(first) + " not within 10% of ln k");
    ACCEPT(last < 0.5 * lnk, "final loss " + std::to_string(last) + " >= 0.5 ln k");
    ACCEPT(acc > 0.6, "masked top-1 accuracy " + std::to_string(acc) + " <= 60%");
}

// ---- 5. constant-cost decoding --------------------------------------------

void criterion_decode_cost() {
    ModelConfig cfg;
    cfg.heads = 4;
    cfg.dim = 64;
    cfg.layers = 4;
    cfg.side = 32;
    cfg.palette = 32;
    const BiRetNet net = make_net(cfg, 500);

    BenchConfig bc;
    bc.ratios = {0.25, 0.75};
    bc.reps = 5;
    bc.warmup = 1;
    bc.baseline_samples = 9;
    bc.seed = 501;
    const BenchRun run = run_bench(bc, net);

    auto median = [&](const std::string& method, Real ratio) {
        for (const auto& r : run.rows)
            if (r.method == method && r.mask_ratio == ratio) return r.median_ms;
        throw std::runtime_error("missing bench row");
    };
    const Real rec_lo = median("recurrent", 0.25), rec_hi = median("recurrent", 0.75);
    const Real base_lo = median("recompute", 0.25), base_hi = median("recompute", 0.75);
    std::printf("      [info] recurrent %.4f -> %.4f ms/pixel; recompute %.4f -> %.4f ms/pixel\n",
                rec_lo, rec_hi, base_lo, base_hi);
    ACCEPT(rec_hi <= 1.3 * rec_lo,
           "recurrent per-pixel time grew by more than 1.3x across ratios");
    ACCEPT(base_hi >= 2.0 * base_lo,
           "recompute baseline per-pixel time did not grow at least 2x");
}

// ---- 6. masking semantics (no leakage) ------------------------------------

void criterion_no_leakage() {
    ModelConfig cfg;
    cfg.heads = 2;
    cfg.dim = 16;
    cfg.layers = 2;
    cfg.side = 8;
    cfg.palette = 8;
    const BiRetNet net = make_net(cfg, 600);
    PixelSequence seq = make_sequence(cfg, 601, 0.4);
    seq.mask[10] = 1;
    const std::vector<std::int64_t> targets = seq.tokens;

    const Tensor p0 = predict_all(net, seq, Paradigm::Parallel);
    const Real l0 = mlm_loss_value(p0, targets, seq.mask);
    const CompletionResult c0 = complete(seq, net, SamplingPolicy::top1());

    for (std::size_t pos = 0; pos < seq.mask.size(); ++pos) {
        if (!seq.mask[pos]) continue;
        PixelSequence tampered = seq;
        tampered.tokens[pos] = (tampered.tokens[pos] + 1 +
                                static_cast<std::int64_t>(pos) % (cfg.palette - 1)) %
                               cfg.palette;
        const Tensor p1 = predict_all(net, tampered, Paradigm::Parallel);
        ACCEPT(p0.data == p1.data, "prediction changed when a masked input color changed");
        ACCEPT(mlm_loss_value(p1, targets, seq.mask) == l0,
               "loss changed when a masked input color changed");
        // every masked cell is re-sampled from identical distributions, so the
        // tampered stored value cannot survive into the output
        const CompletionResult c1 = complete(tampered, net, SamplingPolicy::top1());
        ACCEPT(c0.tokens == c1.tokens, "completion changed when a masked input color changed");
    }
}

// ---- 7. unmasked preservation + composite rule -----------------------------

void criterion_preservation() {
    ModelConfig cfg;
    cfg.heads = 2;
    cfg.dim = 16;
    cfg.layers = 1;
    cfg.side = 8;
    cfg.palette = 8;
    const BiRetNet net = make_net(cfg, 700);
    const PixelSequence seq = make_sequence(cfg, 701, 0.5);
    const CompletionResult res = complete(seq, net, SamplingPolicy::top1());
    for (std::size_t i = 0; i < seq.mask.size(); ++i)
        if (!seq.mask[i])
            ACCEPT(res.tokens[i] == seq.tokens[i], "completion modified an unmasked token");

    UpsamplerConfig ucfg;
    ucfg.width0 = 8;
    ucfg.width1 = 16;
    ucfg.res_blocks = 1;
    ucfg.gn_groups = 4;
    UpsamplerParams params = init_upsampler(ucfg, 702);
    Rng rng = make_rng(703, "acc.ups");
    for (auto& v : params.out_w.data) v = snap_f32(0.05 * rng.normal());

    Image orig(16, 16, 3);
    for (auto& v : orig.data) v = rng.uniform01();
    const Image up = bilinear_upscale(downsample(orig, 4), 16, 16);
    Image mask(16, 16, 1);
    for (std::int64_t i = 0; i < 256; i += 3) mask.data[static_cast<std::size_t>(i)] = 1.0;
    const Image out = refine(up, orig, mask, params);
    for (std::int64_t y = 0; y < 16; ++y)
        for (std::int64_t x = 0; x < 16; ++x)
            if (mask.at(y, x, 0) < 0.5)
                for (int c = 0; c < 3; ++c)
                    ACCEPT(out.at(y, x, c) == orig.at(y, x, c),
                           "upsampler output differs from the original on an unmasked pixel");
}

// ---- 8. palette correctness -------------------------------------------------

void criterion_palette() {
    const Palette p = make_palette(16, 800);
    Rng rng = make_rng(801, "acc.pal");
    for (int i = 0; i < 10000; ++i) {
        const Rgb px = {rng.uniform01(), rng.uniform01(), rng.uniform01()};
        Real best = 1e300;
        std::int64_t bj = 0;
        for (std::int64_t j = 0; j < p.k(); ++j) {
            Real d = 0.0;
            for (int ch = 0; ch < 3; ++ch) {
                const Real dd = px[static_cast<std::size_t>(ch)] -
                                p.centroids[static_cast<std::size_t>(j)][static_cast<std::size_t>(ch)];
                d += dd * dd;
            }
            if (d < best) {  // strict comparison = ties to the lowest index
                best = d;
                bj = j;
            }
        }
        ACCEPT(quantize_one(px, p) == bj, "quantize disagrees with the brute-force oracle");
    }
    // exact tie handling
    Palette tie;
    tie.centroids = {{0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}, {0.25, 0.0, 0.0}, {0.75, 0.0, 0.0}};
    ACCEPT(quantize_one({0.5, 0.0, 0.0}, tie) == 2, "tie not broken toward the lowest index");

    std::vector<Rgb> px;
    for (int i = 0; i < 2000; ++i) px.push_back({rng.uniform01(), rng.uniform01(), rng.uniform01()});
    KMeansStats stats;
    fit_kmeans(px, 12, 40, 802, &stats);
    for (std::size_t i = 1; i < stats.inertia_per_iter.size(); ++i)
        ACCEPT(stats.inertia_per_iter[i] <= stats.inertia_per_iter[i - 1] + 1e-12,
               "k-means inertia increased between iterations");
}

// ---- 9. determinism ----------------------------------------------------------

void criterion_determinism() {
    // palettes
    Rng rng = make_rng(900, "acc.det");
    std::vector<Rgb> px;
    for (int i = 0; i < 1000; ++i) px.push_back({rng.uniform01(), rng.uniform01(), rng.uniform01()});
    ACCEPT(serialize_palette(fit_kmeans(px, 8, 30, 77)) ==
               serialize_palette(fit_kmeans(px, 8, 30, 77)),
           "palette fitting is not bit-deterministic");

    // checkpoints after training
    const auto setup = stripe_setup(8, 8);
    ModelConfig cfg;
    cfg.heads = 2;
    cfg.dim = 16;
    cfg.layers = 1;
    cfg.side = 8;
    cfg.palette = 8;
    auto train_bytes = [&] {
        BiRetNet net = init_biretnet(cfg, setup.palette, 901);
        AdamState opt = AdamState::fresh(net);
        TrainConfig tc;
        tc.batch_size = 2;
        tc.seed = 902;
        for (std::int64_t s = 0; s < 10; ++s) train_step(net, opt, setup.data, tc, s);
        return serialize_checkpoint(training_checkpoint(net, opt, 10));
    };
    ACCEPT(train_bytes() == train_bytes(), "training checkpoints are not bit-identical");

    // completions
    const BiRetNet net = make_net(cfg, 903);
    const PixelSequence seq = make_sequence(cfg, 904, 0.5);
    const SamplingPolicy policy = SamplingPolicy::topk(3, 0.7, 905);
    const CompletionResult a = complete(seq, net, policy);
    const CompletionResult b = complete(seq, net, policy);
    ACCEPT(a.tokens == b.tokens, "completions are not bit-identical");

    // bench CSVs under a deterministic clock
    BenchConfig bc;
    bc.ratios = {0.0, 0.5};
    bc.reps = 5;
    bc.warmup = 0;
    bc.baseline_samples = 4;
    bc.seed = 906;
    bc.check_timer = false;  // simulated clock
    auto clock_a = [t = std::make_shared<std::uint64_t>(0)]() mutable {
        *t += 1000;
        return *t;
    };
    auto clock_b = [t = std::make_shared<std::uint64_t>(0)]() mutable {
        *t += 1000;
        return *t;
    };
    ACCEPT(bench_csv(run_bench(bc, net, clock_a)) == bench_csv(run_bench(bc, net, clock_b)),
           "bench CSVs differ across identically-seeded runs");
}

// ---- 10. upsampler value -------------------------------------------------------

void criterion_upsampler_value() {
    UpsamplerConfig ucfg;
    ucfg.width0 = 16;
    ucfg.width1 = 32;
    ucfg.res_blocks = 2;
    ucfg.gn_groups = 4;
    UpsamplerParams params = init_upsampler(ucfg, 1000);
    UpsamplerOpt opt = UpsamplerOpt::fresh(params);

    // toy set: quantized low-res priors of smooth images; held-out image excluded
    const std::int64_t hw = 24, low_side = 6;
    const Palette pal = make_palette(16, 1001);
    Rng rng = make_rng(1002, "acc.upsv");
    auto make_image = [&](Real fy, Real fx, Real phase) {
        Image img(hw, hw, 3);
        for (std::int64_t y = 0; y < hw; ++y)
            for (std::int64_t x = 0; x < hw; ++x) {
                img.at(y, x, 0) = 0.5 + 0.45 * std::sin(fy * y / 2.0 + phase);
                img.at(y, x, 1) = 0.5 + 0.45 * std::cos(fx * x / 2.0 + phase);
                img.at(y, x, 2) = 0.5 + 0.45 * std::sin((fy * y + fx * x) / 3.0);
            }
        return img;
    };
    std::vector<UpsamplerExample> data;
    for (int i = 0; i < 8; ++i) {
        const Image gt = make_image(1.0 + 0.2 * i, 1.3 - 0.1 * i, 0.4 * i);
        data.push_back({gt, dequantize(quantize(downsample(gt, low_side), pal), low_side, pal)});
    }
    const Image held_gt = make_image(1.15, 0.95, 2.2);
    const Image held_low = dequantize(quantize(downsample(held_gt, low_side), pal), low_side, pal);

    UpsamplerTrainConfig tc;
    tc.batch_size = 2;
    tc.lr = 2e-3;
    tc.steps = 300;
    tc.seed = 1003;
    for (std::int64_t s = 0; s < tc.steps; ++s) train_upsampler_step(params, opt, data, tc, s);

    Image mask(hw, hw, 1);
    for (std::int64_t y = 8; y < 16; ++y)
        for (std::int64_t x = 6; x < 18; ++x) mask.at(y, x, 0) = 1.0;
    const Image up = bilinear_upscale(held_low, hw, hw);
    const Image refined = refine(up, held_gt, mask, params);
    const Real l1_refined = masked_l1(refined, held_gt, mask);
    const Real l1_bilinear = masked_l1(up, held_gt, mask);
    std::printf("      [info] masked L1: refined %.5f vs bilinear %.5f\n", l1_refined, l1_bilinear);
    ACCEPT(l1_refined < l1_bilinear,
           "refined masked L1 (" + std::to_string(l1_refined) +
               ") is not below the bilinear baseline (" + std::to_string(l1_bilinear) + ")");
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria = {
        {"paradigm equivalence (parallel / recurrent / chunkwise, 1e-6)", criterion_paradigms},
        {"pixel-wise inference matches full recompute (1e-4, 20 cases)", criterion_algorithm_fidelity},
        {"finite-difference gradients (rel err < 1e-3, every parameter)", criterion_gradients},
        {"training sanity on stripes (loss < 0.5 ln 8, top-1 > 60%)", criterion_training},
        {"constant-cost decoding vs linear recompute baseline", criterion_decode_cost},
        {"masking semantics: no leakage (exact equality)", criterion_no_leakage},
        {"unmasked preservation and composite rule (exact)", criterion_preservation},
        {"palette: brute-force agreement incl. ties; inertia monotone", criterion_palette},
        {"determinism: palettes, checkpoints, completions, bench CSVs", criterion_determinism},
        {"upsampler beats the bilinear baseline after 300 steps", criterion_upsampler_value},
    };

    // optional filter: run only the criterion with the given 1-based index
    const int only = argc > 1 ? std::atoi(argv[1]) : 0;

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (only > 0 && static_cast<std::size_t>(only) != i + 1) continue;
        const auto t0 = std::chrono::steady_clock::now();
        std::string message;
        bool ok = true;
        try {
            criteria[i].run();
        } catch (const std::exception& e) {
            ok = false;
            message = e.what();
        }
        const auto t1 = std::chrono::steady_clock::now();
        const double secs = std::chrono::duration<double>(t1 - t0).count();
        std::printf("[%s] %2zu. %s (%.1fs)\n", ok ? "PASS" : "FAIL", i + 1,
                    criteria[i].name.c_str(), secs);
        if (!ok) {
            std::printf("       %s\n", message.c_str());
            ++failures;
        }
        std::fflush(stdout);
    }
    if (failures > 0) std::printf("%d criterion(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}
