#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "retc/biretnet.hpp"
#include "retc/rng.hpp"

namespace retc {

struct SamplingPolicy {
    enum class Mode { Top1, TopK };
    Mode mode = Mode::Top1;
    std::int64_t top_k = 1;
    Real temperature = 1.0;
    std::uint64_t seed = 0;

    static SamplingPolicy top1() { return {}; }
    static SamplingPolicy topk(std::int64_t k, Real temperature, std::uint64_t seed) {
        return {Mode::TopK, k, temperature, seed};
    }
};

// Draws a color index from a probability row under the policy. Top-1 is
// deterministic (lowest index wins ties).
std::int64_t sample_color(const Tensor& dist, const SamplingPolicy& policy, Rng& rng);

// Pixel-wise decoding state. Forward retention states summarize the full
// initial sequence and every pixel consumed since; backward activations are
// computed once at init and never change. Single-writer: exactly one thread
// may advance a given session.
struct InferenceSession {
    const BiRetNet* net = nullptr;
    TowerStates fwd_states;
    Tensor backward_acts;  // [L^2, d]
    std::vector<std::int64_t> tokens;
    std::vector<std::uint8_t> mask;
    std::vector<std::int64_t> pending;  // masked positions in raster order
    std::size_t next = 0;
    SamplingPolicy policy;
    Rng rng{0};

    bool done() const { return next >= pending.size(); }
    std::int64_t next_position() const { return done() ? -1 : pending[next]; }
};

InferenceSession init_session(const PixelSequence& seq, const BiRetNet& net,
                              const SamplingPolicy& policy = SamplingPolicy::top1());

struct StepResult {
    std::int64_t position = -1;
    std::int64_t color = -1;
    Tensor dist;  // [k]
};

// One Algorithm-1 step at `position`, which must be the next masked position
// in raster order. The query pass reads PE[position] through both towers'
// step paths; the sampled pixel's embedding then advances the forward states.
// `forced` overrides sampling (teacher forcing) but the distribution is still
// computed and returned.
StepResult step(InferenceSession& session, std::int64_t position,
                std::optional<std::int64_t> forced = std::nullopt);

struct CompletionResult {
    std::vector<std::int64_t> tokens;       // full grid, unmasked untouched
    std::vector<std::int64_t> positions;    // masked positions in step order
    std::vector<Tensor> dists;              // one [k] row per step
};

// Fills every masked position in raster order.
CompletionResult complete(const PixelSequence& seq, const BiRetNet& net,
                          const SamplingPolicy& policy,
                          const std::vector<std::int64_t>* forced = nullptr);

// One-shot variant: all masked pixels predicted simultaneously from unmasked
// context only, sampled independently.
CompletionResult complete_oneshot(const PixelSequence& seq, const BiRetNet& net,
                                  const SamplingPolicy& policy);

// Full-recompute reference: after every sampled pixel the parallel towers are
// re-run from scratch over the extended stream (initial sequence, consumed
// pixels, then the query row). Exactly the math the recurrent session caches.
CompletionResult complete_recompute(const PixelSequence& seq, const BiRetNet& net,
                                    const SamplingPolicy& policy,
                                    const std::vector<std::int64_t>* forced = nullptr);

// Per-pixel recompute baseline used by the bench: the initial sequence is
// folded once into retention states, then every step re-runs the parallel
// towers over all pixels generated so far plus the query. Output-identical to
// the session, but per-step work grows with the generated context.
struct SuffixRecompute {
    const BiRetNet* net = nullptr;
    TowerStates init_states;
    Tensor backward_acts;
    std::vector<std::int64_t> tokens;
    std::vector<std::int64_t> pending;
    std::vector<Tensor> prefix_rows;  // embeddings of consumed pixels
    std::size_t next = 0;

    bool done() const { return next >= pending.size(); }
};

SuffixRecompute init_suffix_recompute(const PixelSequence& seq, const BiRetNet& net);
// Distribution at the n-th pending position (requires position order).
Tensor suffix_recompute_dist(const SuffixRecompute& s);
// Consumes the pixel (teacher-forced color) and moves to the next position.
void suffix_recompute_push(SuffixRecompute& s, std::int64_t color);

// Normalized entropy map (values in [0,1]) of the per-step distributions,
// zero at unmasked positions.
Image entropy_map(const CompletionResult& res, std::int64_t side, std::int64_t k);

}  // namespace retc
