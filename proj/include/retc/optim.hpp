#pragma once

#include <cstdint>
#include <vector>

#include "retc/tensor.hpp"

namespace retc {

struct AdamHyper {
    Real lr = 1e-3;
    Real beta1 = 0.9;
    Real beta2 = 0.98;
    Real eps = 1e-8;
    Real grad_clip = 1.0;  // global norm; <= 0 disables
};

// One Adam update over an ordered parameter list. Moments and parameters are
// snapped to the float32 grid afterwards so checkpoints round-trip exactly.
// `t` must already be incremented to the 1-based step count.
void adam_step(const std::vector<Tensor*>& params, std::vector<Tensor>& grads,
               std::vector<Tensor>& m, std::vector<Tensor>& v, std::int64_t t,
               const AdamHyper& hp);

}  // namespace retc
