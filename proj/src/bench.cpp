#include "retc/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "retc/rng.hpp"
#include "retc/sequencer.hpp"

namespace retc {

void BenchConfig::validate() const {
    RETC_CHECK(reps >= 5, ErrorKind::Usage, "bench: need at least 5 repetitions");
    RETC_CHECK(warmup >= 0 && baseline_samples >= 1, ErrorKind::Usage,
               "bench: warmup must be >= 0 and baseline_samples >= 1");
    for (Real r : ratios)
        RETC_CHECK(r >= 0.0 && r < 1.0, ErrorKind::Usage, "bench: ratios must lie in [0,1)");
}

BenchClock steady_clock_ns() {
    return [] {
        return static_cast<std::uint64_t>(
            std::chrono::duration_cast<std::chrono::nanoseconds>(
                std::chrono::steady_clock::now().time_since_epoch())
                .count());
    };
}

namespace {

std::uint64_t clock_resolution_ns(const BenchClock& clock) {
    std::uint64_t best = ~0ULL;
    std::uint64_t prev = clock();
    for (int i = 0; i < 256; ++i) {
        const std::uint64_t now = clock();
        if (now > prev) best = std::min(best, now - prev);
        prev = now;
    }
    return best == ~0ULL ? 1'000'000'000ULL : best;
}

Real percentile_ms(std::vector<std::uint64_t> ns, Real q) {
    if (ns.empty()) return 0.0;
    std::sort(ns.begin(), ns.end());
    const Real pos = q * static_cast<Real>(ns.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, ns.size() - 1);
    const Real frac = pos - static_cast<Real>(lo);
    const Real v = static_cast<Real>(ns[lo]) * (1.0 - frac) + static_cast<Real>(ns[hi]) * frac;
    return v / 1e6;
}

PixelSequence bench_workload(const BiRetNet& net, Real ratio, std::uint64_t seed) {
    const std::int64_t side = net.cfg.side;
    PixelSequence seq;
    seq.side = side;
    seq.tokens.resize(static_cast<std::size_t>(side * side));
    Rng rng = make_rng(seed, "bench.tokens");
    for (auto& t : seq.tokens)
        t = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(net.cfg.palette)));
    if (ratio <= 0.0) {
        seq.mask.assign(static_cast<std::size_t>(side * side), 0);
    } else {
        MaskSpec spec;
        spec.kind = MaskKind::RandomStroke;
        spec.ratio = ratio;
        spec.thickness = 2;
        spec.seed = seed ^ 0x5eedULL;
        seq.mask = gen_mask(spec, side);
    }
    return seq;
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t want) {
    std::vector<std::size_t> out;
    if (n == 0) return out;
    const std::size_t s = std::min(n, want);
    for (std::size_t j = 0; j < s; ++j)
        out.push_back((2 * j + 1) * n / (2 * s));  // midpoints of s equal strata
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

Real max_abs_diff(const Tensor& a, const Tensor& b) {
    Real worst = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
    return worst;
}

std::int64_t argmax(const Tensor& t) {
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < t.numel(); ++i)
        if (t.data[static_cast<std::size_t>(i)] > t.data[static_cast<std::size_t>(best)]) best = i;
    return best;
}

}  // namespace

BenchRun run_bench(const BenchConfig& cfg, const BiRetNet& net, const BenchClock& clock) {
    cfg.validate();
    const std::uint64_t res_ns = clock_resolution_ns(clock);

    BenchRun run;
    for (Real ratio : cfg.ratios) {
        const PixelSequence seq = bench_workload(net, ratio, cfg.seed);
        const std::int64_t steps = seq.masked_count();

        if (steps == 0) {
            run.rows.push_back({"recurrent", ratio, 0.0, 0.0, 0.0, 0});
            run.rows.push_back({"recompute", ratio, 0.0, 0.0, 0.0, 0});
            continue;
        }

        // Reference completion: provides the teacher-forcing colors and the
        // distributions for the correctness gate.
        const CompletionResult ref = complete(seq, net, SamplingPolicy::top1());
        std::vector<std::int64_t> forced;
        forced.reserve(ref.positions.size());
        for (std::size_t i = 0; i < ref.positions.size(); ++i) forced.push_back(ref.tokens[
            static_cast<std::size_t>(ref.positions[i])]);

        const auto sampled = sample_indices(static_cast<std::size_t>(steps),
                                            static_cast<std::size_t>(cfg.baseline_samples));

        // Correctness gate before timing: the recompute baseline must agree
        // with the recurrent session at every sampled step.
        {
            SuffixRecompute base = init_suffix_recompute(seq, net);
            std::size_t si = 0;
            for (std::size_t n = 0; n < static_cast<std::size_t>(steps); ++n) {
                if (si < sampled.size() && sampled[si] == n) {
                    const Tensor dist = suffix_recompute_dist(base);
                    const Real diff = max_abs_diff(dist, ref.dists[n]);
                    RETC_CHECK(diff <= cfg.gate_tol, ErrorKind::Bench,
                               "bench gate: methods disagree at step " + std::to_string(n) +
                                   " (max diff " + std::to_string(diff) + ")");
                    RETC_CHECK(argmax(dist) == forced[n], ErrorKind::Bench,
                               "bench gate: pixel outputs differ at step " + std::to_string(n));
                    ++si;
                }
                suffix_recompute_push(base, forced[n]);
            }
        }

        // --- recurrent method: time every step ---
        std::vector<std::uint64_t> rec_ns;
        {
            const InferenceSession proto = init_session(seq, net, SamplingPolicy::top1());
            for (int rep = 0; rep < cfg.warmup + cfg.reps; ++rep) {
                InferenceSession s = proto;
                const bool measured = rep >= cfg.warmup;
                while (!s.done()) {
                    const std::int64_t pos = s.next_position();
                    const std::uint64_t t0 = clock();
                    step(s, pos);
                    const std::uint64_t t1 = clock();
                    if (measured) rec_ns.push_back(t1 - t0);
                }
            }
        }

        // --- recompute baseline: time the sampled steps, teacher-forced ---
        std::vector<std::uint64_t> base_ns;
        {
            const SuffixRecompute proto = init_suffix_recompute(seq, net);
            for (int rep = 0; rep < cfg.warmup + cfg.reps; ++rep) {
                SuffixRecompute s = proto;
                const bool measured = rep >= cfg.warmup;
                std::size_t si = 0;
                for (std::size_t n = 0; n < static_cast<std::size_t>(steps); ++n) {
                    if (si < sampled.size() && sampled[si] == n) {
                        const std::uint64_t t0 = clock();
                        const Tensor dist = suffix_recompute_dist(s);
                        const std::uint64_t t1 = clock();
                        (void)dist;
                        if (measured) base_ns.push_back(t1 - t0);
                        ++si;
                    }
                    suffix_recompute_push(s, forced[n]);
                }
            }
        }

        const Real median_rec = percentile_ms(rec_ns, 0.5);
        if (cfg.check_timer && median_rec * 1e6 < 20.0 * static_cast<Real>(res_ns))
            fail(ErrorKind::Bench,
                 "bench: timer resolution (" + std::to_string(res_ns) +
                     " ns) is too coarse for this workload; use a larger model side L");

        run.rows.push_back({"recurrent", ratio, median_rec, percentile_ms(rec_ns, 0.25),
                            percentile_ms(rec_ns, 0.75), steps});
        run.rows.push_back({"recompute", ratio, percentile_ms(base_ns, 0.5),
                            percentile_ms(base_ns, 0.25), percentile_ms(base_ns, 0.75), steps});
    }
    return run;
}

std::string bench_csv(const BenchRun& run) {
    std::string out = "method,mask_ratio,median_ms,p25_ms,p75_ms\n";
    char buf[192];
    for (const auto& r : run.rows) {
        std::snprintf(buf, sizeof buf, "%s,%.4f,%.6f,%.6f,%.6f\n", r.method.c_str(), r.mask_ratio,
                      r.median_ms, r.p25_ms, r.p75_ms);
        out += buf;
    }
    return out;
}

std::string bench_dat(const BenchRun& run) {
    // gnuplot blocks: one per method, blank-line separated
    std::string out = "# method mask_ratio median_ms p25_ms p75_ms\n";
    char buf[192];
    for (const char* method : {"recurrent", "recompute"}) {
        bool any = false;
        for (const auto& r : run.rows) {
            if (r.method != method) continue;
            std::snprintf(buf, sizeof buf, "%s %.4f %.6f %.6f %.6f\n", r.method.c_str(),
                          r.mask_ratio, r.median_ms, r.p25_ms, r.p75_ms);
            out += buf;
            any = true;
        }
        if (any) out += "\n";
    }
    return out;
}

void emit_report(const BenchRun& run, const std::string& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& [name, text] :
         {std::pair<std::string, std::string>{"results.csv", bench_csv(run)},
          std::pair<std::string, std::string>{"results.dat", bench_dat(run)}}) {
        const std::string path = dir + "/" + name;
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        RETC_CHECK(out.good(), ErrorKind::Io, "cannot open report file: " + path);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        RETC_CHECK(out.good(), ErrorKind::Io, "report write failed: " + path);
    }
}

}  // namespace retc
