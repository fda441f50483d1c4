#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <json.hpp>

#include "retc/autodiff.hpp"
#include "retc/checkpoint.hpp"
#include "retc/image.hpp"
#include "retc/sequencer.hpp"

namespace retc {

struct UpsamplerConfig {
    std::int64_t width0 = 32;
    std::int64_t width1 = 64;
    std::int64_t res_blocks = 4;
    std::int64_t gn_groups = 8;

    void validate() const;
    nlohmann::json to_json() const;
    static UpsamplerConfig from_json(const nlohmann::json& j);
    bool operator==(const UpsamplerConfig&) const = default;
};

// Encoder (two stride-2 convs), residual blocks, decoder (two nearest-up +
// conv stages), and a zero-initialized output head. The network predicts a
// residual on top of the bilinear upscale.
struct UpsamplerParams {
    UpsamplerConfig cfg;
    Tensor stem_w, stem_b, stem_gn_g, stem_gn_b;
    Tensor enc1_w, enc1_b, enc1_gn_g, enc1_gn_b;
    Tensor enc2_w, enc2_b, enc2_gn_g, enc2_gn_b;
    struct ResBlock {
        Tensor c1_w, c1_b, gn1_g, gn1_b;
        Tensor c2_w, c2_b, gn2_g, gn2_b;
    };
    std::vector<ResBlock> res;
    Tensor dec1_w, dec1_b, dec1_gn_g, dec1_gn_b;
    Tensor dec2_w, dec2_b, dec2_gn_g, dec2_gn_b;
    Tensor out_w, out_b;
};

UpsamplerParams init_upsampler(const UpsamplerConfig& cfg, std::uint64_t seed);
void visit_params(UpsamplerParams& p, const std::function<void(const std::string&, Tensor&)>& fn);
void visit_params(const UpsamplerParams& p,
                  const std::function<void(const std::string&, const Tensor&)>& fn);

// Standard bilinear interpolation with aligned corners; exact on corner
// samples and constant-preserving.
Image bilinear_upscale(const Image& low, std::int64_t height, std::int64_t width);

// Refinement: runs the CNN on (upscaled, original, mask), adds the residual
// to the upscaled image, clamps to [0,1], then composites so that unmasked
// pixels equal the original exactly. Mask is full-resolution, 1 = masked.
// H and W must be divisible by 4 (two stride-2 stages).
Image refine(const Image& upscaled, const Image& original, const Image& mask,
             const UpsamplerParams& params);

struct UpsamplerExample {
    Image gt;   // full-resolution ground truth
    Image low;  // low-resolution appearance prior (completed or simulated)
};

struct UpsamplerTrainConfig {
    std::int64_t steps = 300;
    std::int64_t batch_size = 4;
    Real lr = 2e-3;
    Real beta1 = 0.9;
    Real beta2 = 0.98;
    Real adam_eps = 1e-8;
    Real grad_clip = 1.0;
    Real mask_ratio_min = 0.2;  // set both to 1.0 to train on fully-masked images
    Real mask_ratio_max = 0.7;
    std::uint64_t seed = 0;
    std::int64_t checkpoint_every = 100;
};

struct UpsamplerMetrics {
    std::int64_t step = 0;
    Real l1_loss = 0.0;  // over the masked region
    Real ms_per_step = 0.0;
};

struct UpsamplerOpt {
    std::vector<Tensor> m, v;
    std::int64_t t = 0;

    static UpsamplerOpt fresh(const UpsamplerParams& p);
};

UpsamplerMetrics train_upsampler_step(UpsamplerParams& params, UpsamplerOpt& opt,
                                      const std::vector<UpsamplerExample>& data,
                                      const UpsamplerTrainConfig& cfg, std::int64_t step);

void train_upsampler(UpsamplerParams& params, UpsamplerOpt& opt,
                     const std::vector<UpsamplerExample>& data, const UpsamplerTrainConfig& cfg,
                     std::int64_t start_step,
                     const std::function<void(const UpsamplerMetrics&)>& on_metrics,
                     const std::function<void(std::int64_t)>& on_checkpoint);

// Mean absolute error over masked pixels (all channels); mask 1 = masked.
Real masked_l1(const Image& a, const Image& b, const Image& mask);

Checkpoint upsampler_checkpoint(const UpsamplerParams& p, const UpsamplerOpt& opt, std::int64_t step);
std::int64_t restore_upsampler(const Checkpoint& ck, UpsamplerParams& p, UpsamplerOpt& opt);

}  // namespace retc
