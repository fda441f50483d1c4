#include "retc/optim.hpp"

#include <cmath>

namespace retc {

void adam_step(const std::vector<Tensor*>& params, std::vector<Tensor>& grads,
               std::vector<Tensor>& m, std::vector<Tensor>& v, std::int64_t t,
               const AdamHyper& hp) {
    RETC_CHECK(params.size() == grads.size() && params.size() == m.size() && params.size() == v.size(),
               ErrorKind::Usage, "adam_step: parameter/gradient/moment counts disagree");
    Real norm2 = 0.0;
    for (const auto& g : grads)
        for (Real x : g.data) norm2 += x * x;
    const Real norm = std::sqrt(norm2);
    if (hp.grad_clip > 0.0 && norm > hp.grad_clip) {
        const Real s = hp.grad_clip / norm;
        for (auto& g : grads)
            for (Real& x : g.data) x *= s;
    }

    const Real bc1 = 1.0 - std::pow(hp.beta1, static_cast<Real>(t));
    const Real bc2 = 1.0 - std::pow(hp.beta2, static_cast<Real>(t));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        const Tensor& g = grads[pi];
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            m[pi].data[i] = snap_f32(hp.beta1 * m[pi].data[i] + (1.0 - hp.beta1) * g.data[i]);
            v[pi].data[i] = snap_f32(hp.beta2 * v[pi].data[i] + (1.0 - hp.beta2) * g.data[i] * g.data[i]);
            const Real mhat = m[pi].data[i] / bc1;
            const Real vhat = v[pi].data[i] / bc2;
            p.data[i] = snap_f32(p.data[i] - hp.lr * mhat / (std::sqrt(vhat) + hp.eps));
        }
    }
}

}  // namespace retc
