#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "retc/autodiff.hpp"
#include "retc/biretnet.hpp"
#include "retc/sequencer.hpp"

namespace retc {

struct TrainConfig {
    std::int64_t batch_size = 8;
    Real lr = 3e-3;
    Real beta1 = 0.9;
    Real beta2 = 0.98;
    Real adam_eps = 1e-8;
    std::int64_t steps = 200;
    Real mask_ratio_min = 0.2;
    Real mask_ratio_max = 0.7;
    Paradigm paradigm = Paradigm::Parallel;
    std::int64_t chunk = 8;  // used when paradigm == Chunkwise
    std::uint64_t seed = 0;
    std::int64_t checkpoint_every = 100;
    Real grad_clip = 1.0;

    void validate() const;
};

struct TrainMetrics {
    std::int64_t step = 0;
    Real mlm_loss = 0.0;
    Real masked_top1_acc = 0.0;
    Real ms_per_step = 0.0;
};

// Mean negative log-likelihood of the target color over masked positions
// only. `pred` holds per-position probability rows.
Real mlm_loss_value(const Tensor& pred, const std::vector<std::int64_t>& targets,
                    const std::vector<std::uint8_t>& mask);
Var mlm_loss(const Var& pred, const std::vector<std::int64_t>& targets,
             const std::vector<std::uint8_t>& mask);

// Adam moments in canonical parameter order, kept on the float32 grid so they
// serialize exactly into checkpoints.
struct AdamState {
    std::vector<Tensor> m, v;
    std::int64_t t = 0;

    static AdamState fresh(const BiRetNet& net);
};

// Token grids (palette indices, raster order) of the training corpus.
using TokenDataset = std::vector<std::vector<std::int64_t>>;

// Builds the token dataset from images: downsample to the model side, quantize.
TokenDataset tokenize_dataset(const std::vector<Image>& images, const Palette& palette,
                              std::int64_t side);

// One optimization step over a deterministic batch drawn from the dataset.
TrainMetrics train_step(BiRetNet& net, AdamState& opt, const TokenDataset& data,
                        const TrainConfig& cfg, std::int64_t step);

// Runs steps [start_step, cfg.steps). `on_metrics` fires per step and
// `on_checkpoint` at the checkpoint cadence plus at the end.
void train_loop(BiRetNet& net, AdamState& opt, const TokenDataset& data, const TrainConfig& cfg,
                std::int64_t start_step,
                const std::function<void(const TrainMetrics&)>& on_metrics,
                const std::function<void(std::int64_t)>& on_checkpoint);

// Checkpoint with optimizer state attached (kind stays "biretnet").
Checkpoint training_checkpoint(const BiRetNet& net, const AdamState& opt, std::int64_t step);
// Restores net + optimizer + next step index from a training checkpoint.
std::int64_t restore_training(const Checkpoint& ck, BiRetNet& net, AdamState& opt);

std::string metrics_csv_header();
std::string metrics_csv_row(const TrainMetrics& m);

}  // namespace retc
