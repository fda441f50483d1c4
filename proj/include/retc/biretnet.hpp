#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "retc/autodiff.hpp"
#include "retc/checkpoint.hpp"
#include "retc/palette.hpp"
#include "retc/retention.hpp"
#include "retc/sequencer.hpp"
#include "retc/tensor.hpp"

namespace retc {

struct ModelConfig {
    std::int64_t heads = 4;     // h
    std::int64_t dim = 64;      // d
    std::int64_t layers = 4;    // N
    std::int64_t side = 16;     // L (low-res image side)
    std::int64_t palette = 32;  // k

    std::int64_t seq_len() const { return side * side; }
    std::int64_t d_head() const { return dim / heads; }
    void validate() const;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
    bool operator==(const ModelConfig&) const = default;

    // Full-scale presets (512-color vocabulary). Desk-scale tests use much
    // smaller configs; these exist for running the real thing.
    static ModelConfig celeba_hq();  // h=8, d=512,  N=30, 48x48
    static ModelConfig imagenet();   // h=8, d=1024, N=35, 32x32
};

struct FfnParams {
    Tensor w1, b1, w2, b2;  // [d,4d],[4d],[4d,d],[d]
};

struct BlockParams {
    Tensor ln1_g, ln1_b;
    MsrParams msr;
    Tensor ln2_g, ln2_b;
    FfnParams ffn;
};

// Two parameter-independent towers plus shared embeddings and the fusion head.
// The palette rides along so a checkpoint is self-contained.
struct BiRetNet {
    ModelConfig cfg;
    Tensor fe;  // [k+1, d]; row k is the mask embedding
    Tensor pe;  // [L^2, d]
    std::vector<BlockParams> fwd, bwd;
    Tensor head_ln_g, head_ln_b;
    Tensor head_fc_w, head_fc_b;  // [d,k],[k]
    Palette palette;

    EmbeddingTable tables() const { return EmbeddingTable{fe, pe}; }
};

BiRetNet init_biretnet(const ModelConfig& cfg, const Palette& palette, std::uint64_t seed);

// Visits every trainable tensor in canonical (checkpoint) order.
void visit_params(BiRetNet& net,
                  const std::function<void(const std::string&, Tensor&)>& fn);
void visit_params(const BiRetNet& net,
                  const std::function<void(const std::string&, const Tensor&)>& fn);
std::int64_t param_count(const ModelConfig& cfg);

// Per-layer, per-head retention states of one tower.
struct TowerStates {
    std::vector<std::vector<RetentionState>> layers;  // [N][h]

    static TowerStates fresh(const ModelConfig& cfg);
    std::int64_t step() const { return layers.empty() || layers[0].empty() ? 0 : layers[0][0].step; }
};

// Applies the N blocks in order. When `states` is non-null they are consumed
// as incoming per-layer carries (their step must equal start_pos) and advanced
// past the sequence, which is how inference folds a prefix into state.
Tensor forward_tower(const Tensor& x, const std::vector<BlockParams>& blocks, Paradigm paradigm,
                     std::int64_t chunk = 0, TowerStates* states = nullptr,
                     std::int64_t start_pos = 0);

// reverse -> forward over the backward-direction blocks -> reverse.
Tensor backward_tower(const Tensor& x, const std::vector<BlockParams>& blocks, Paradigm paradigm,
                      std::int64_t chunk = 0);

// softmax(FC(LN(Xf + Xb))): rows are distributions over the k palette colors.
Tensor fuse_predict(const Tensor& xf, const Tensor& xb, const BiRetNet& net);

// One-shot prediction for the whole sequence from unmasked context only.
Tensor predict_all(const BiRetNet& net, const PixelSequence& seq, Paradigm paradigm,
                   std::int64_t chunk = 0);

// ---- differentiable path (training) ----

// Leaf vars mirroring the canonical parameter order.
struct GraphParams {
    std::vector<std::pair<std::string, Var>> ordered;
    std::unordered_map<std::string, Var> by_name;

    static GraphParams from(const BiRetNet& net);
    const Var& at(const std::string& name) const;
    std::vector<Var> vars() const;
};

Var forward_tower(const Var& x, const GraphParams& gp, const std::string& dir,
                  const ModelConfig& cfg, Paradigm paradigm, std::int64_t chunk = 0);
Var backward_tower(const Var& x, const GraphParams& gp, const ModelConfig& cfg, Paradigm paradigm,
                   std::int64_t chunk = 0);
Var fuse_predict(const Var& xf, const Var& xb, const GraphParams& gp, const ModelConfig& cfg);
// embed + both towers + fusion, from a sequence. The full training forward.
Var predict_all(const GraphParams& gp, const ModelConfig& cfg, const PixelSequence& seq,
                Paradigm paradigm, std::int64_t chunk = 0);

// ---- persistence ----

Checkpoint to_checkpoint(const BiRetNet& net, std::int64_t step);
BiRetNet biretnet_from_checkpoint(const Checkpoint& ck);

}  // namespace retc
