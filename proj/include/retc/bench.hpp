#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "retc/biretnet.hpp"
#include "retc/inferencer.hpp"

namespace retc {

struct BenchConfig {
    std::vector<Real> ratios;
    int reps = 5;
    int warmup = 1;
    int baseline_samples = 12;  // step indices timed for the recompute method
    std::uint64_t seed = 0;
    Real gate_tol = 1e-4;  // max distribution difference allowed by the gate
    // disabled when running under a simulated clock, where resolution is
    // meaningless; the CLI always keeps it on
    bool check_timer = true;

    void validate() const;
};

// Monotonic nanosecond clock. Injectable so the harness itself is testable
// and its CSV output reproducible under a deterministic clock.
using BenchClock = std::function<std::uint64_t()>;
BenchClock steady_clock_ns();

struct BenchRow {
    std::string method;  // "recurrent" | "recompute"
    Real mask_ratio = 0.0;
    Real median_ms = 0.0;
    Real p25_ms = 0.0;
    Real p75_ms = 0.0;
    std::int64_t steps = 0;  // generation steps in the workload
};

struct BenchRun {
    std::vector<BenchRow> rows;
};

// Runs the workload for every ratio: a deterministic random token grid with an
// exact-coverage stroke mask, completed by (a) the recurrent session and (b)
// the per-pixel recompute baseline. Before any timing, both methods must agree
// on per-pixel distributions under teacher forcing at the sampled steps.
BenchRun run_bench(const BenchConfig& cfg, const BiRetNet& net,
                   const BenchClock& clock = steady_clock_ns());

std::string bench_csv(const BenchRun& run);
std::string bench_dat(const BenchRun& run);

// Writes results.csv and results.dat under `dir`. Bit-identical output for
// identical results.
void emit_report(const BenchRun& run, const std::string& dir);

}  // namespace retc
