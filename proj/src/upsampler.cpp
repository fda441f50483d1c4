#include "retc/upsampler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <unordered_map>

#include "retc/optim.hpp"
#include "retc/rng.hpp"

namespace retc {

namespace {
constexpr Real kEps = 1e-6;
}

void UpsamplerConfig::validate() const {
    RETC_CHECK(width0 >= 1 && width1 >= 1 && res_blocks >= 0 && gn_groups >= 1, ErrorKind::Usage,
               "upsampler config: extents must be positive");
    RETC_CHECK(width0 % gn_groups == 0 && width1 % gn_groups == 0, ErrorKind::Dimension,
               "upsampler config: widths must be divisible by gn_groups");
}

nlohmann::json UpsamplerConfig::to_json() const {
    return {{"width0", width0}, {"width1", width1}, {"res_blocks", res_blocks}, {"gn_groups", gn_groups}};
}

UpsamplerConfig UpsamplerConfig::from_json(const nlohmann::json& j) {
    UpsamplerConfig cfg;
    cfg.width0 = j.at("width0").get<std::int64_t>();
    cfg.width1 = j.at("width1").get<std::int64_t>();
    cfg.res_blocks = j.at("res_blocks").get<std::int64_t>();
    cfg.gn_groups = j.at("gn_groups").get<std::int64_t>();
    cfg.validate();
    return cfg;
}

namespace {

template <typename P, typename Fn>
void visit_ups(P& p, Fn&& fn) {
    fn("stem.w", p.stem_w);
    fn("stem.b", p.stem_b);
    fn("stem.gn.g", p.stem_gn_g);
    fn("stem.gn.b", p.stem_gn_b);
    fn("enc1.w", p.enc1_w);
    fn("enc1.b", p.enc1_b);
    fn("enc1.gn.g", p.enc1_gn_g);
    fn("enc1.gn.b", p.enc1_gn_b);
    fn("enc2.w", p.enc2_w);
    fn("enc2.b", p.enc2_b);
    fn("enc2.gn.g", p.enc2_gn_g);
    fn("enc2.gn.b", p.enc2_gn_b);
    for (std::size_t r = 0; r < p.res.size(); ++r) {
        const std::string pre = "res" + std::to_string(r) + ".";
        fn(pre + "c1.w", p.res[r].c1_w);
        fn(pre + "c1.b", p.res[r].c1_b);
        fn(pre + "gn1.g", p.res[r].gn1_g);
        fn(pre + "gn1.b", p.res[r].gn1_b);
        fn(pre + "c2.w", p.res[r].c2_w);
        fn(pre + "c2.b", p.res[r].c2_b);
        fn(pre + "gn2.g", p.res[r].gn2_g);
        fn(pre + "gn2.b", p.res[r].gn2_b);
    }
    fn("dec1.w", p.dec1_w);
    fn("dec1.b", p.dec1_b);
    fn("dec1.gn.g", p.dec1_gn_g);
    fn("dec1.gn.b", p.dec1_gn_b);
    fn("dec2.w", p.dec2_w);
    fn("dec2.b", p.dec2_b);
    fn("dec2.gn.g", p.dec2_gn_g);
    fn("dec2.gn.b", p.dec2_gn_b);
    fn("out.w", p.out_w);
    fn("out.b", p.out_b);
}

bool ups_is_gain(const std::string& name) { return name.ends_with("gn.g") || name.ends_with("gn1.g") || name.ends_with("gn2.g"); }
bool ups_is_bias(const std::string& name) { return name.ends_with(".b"); }

}  // namespace

void visit_params(UpsamplerParams& p, const std::function<void(const std::string&, Tensor&)>& fn) {
    visit_ups(p, fn);
}

void visit_params(const UpsamplerParams& p,
                  const std::function<void(const std::string&, const Tensor&)>& fn) {
    visit_ups(p, fn);
}

UpsamplerParams init_upsampler(const UpsamplerConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::int64_t w0 = cfg.width0, w1 = cfg.width1;
    UpsamplerParams p;
    p.cfg = cfg;
    p.stem_w = Tensor({w0, 7, 3, 3});
    p.stem_b = Tensor({w0});
    p.stem_gn_g = Tensor({w0});
    p.stem_gn_b = Tensor({w0});
    p.enc1_w = Tensor({w1, w0, 3, 3});
    p.enc1_b = Tensor({w1});
    p.enc1_gn_g = Tensor({w1});
    p.enc1_gn_b = Tensor({w1});
    p.enc2_w = Tensor({w1, w1, 3, 3});
    p.enc2_b = Tensor({w1});
    p.enc2_gn_g = Tensor({w1});
    p.enc2_gn_b = Tensor({w1});
    p.res.resize(static_cast<std::size_t>(cfg.res_blocks));
    for (auto& r : p.res) {
        r.c1_w = Tensor({w1, w1, 3, 3});
        r.c1_b = Tensor({w1});
        r.gn1_g = Tensor({w1});
        r.gn1_b = Tensor({w1});
        r.c2_w = Tensor({w1, w1, 3, 3});
        r.c2_b = Tensor({w1});
        r.gn2_g = Tensor({w1});
        r.gn2_b = Tensor({w1});
    }
    p.dec1_w = Tensor({w0, w1, 3, 3});
    p.dec1_b = Tensor({w0});
    p.dec1_gn_g = Tensor({w0});
    p.dec1_gn_b = Tensor({w0});
    p.dec2_w = Tensor({w0, w0, 3, 3});
    p.dec2_b = Tensor({w0});
    p.dec2_gn_g = Tensor({w0});
    p.dec2_gn_b = Tensor({w0});
    p.out_w = Tensor({3, w0, 3, 3});  // zero-initialized head
    p.out_b = Tensor({3});

    visit_params(p, [&](const std::string& name, Tensor& t) {
        if (ups_is_gain(name)) {
            t = Tensor::full(t.shape, 1.0);
            return;
        }
        if (ups_is_bias(name) || name == "out.w") return;  // zeros
        Rng rng = make_rng(seed, "ups.init." + name);
        // He-style fan-in scaling for 3x3 convs
        const Real fan_in = static_cast<Real>(t.shape[1] * t.shape[2] * t.shape[3]);
        const Real stddev = std::sqrt(2.0 / fan_in);
        for (auto& v : t.data) v = snap_f32(rng.truncated_normal(stddev));
    });
    return p;
}

Image bilinear_upscale(const Image& low, std::int64_t height, std::int64_t width) {
    RETC_CHECK(height >= low.h && width >= low.w, ErrorKind::Usage,
               "bilinear_upscale: target must not shrink the image");
    Image out(height, width, low.c);
    for (std::int64_t y = 0; y < height; ++y) {
        const Real sy = height == 1 ? 0.0
                                    : static_cast<Real>(y) * static_cast<Real>(low.h - 1) /
                                          static_cast<Real>(height - 1);
        const std::int64_t y0 = std::min(static_cast<std::int64_t>(sy), low.h - 1);
        const std::int64_t y1 = std::min(y0 + 1, low.h - 1);
        const Real fy = sy - static_cast<Real>(y0);
        for (std::int64_t x = 0; x < width; ++x) {
            const Real sx = width == 1 ? 0.0
                                       : static_cast<Real>(x) * static_cast<Real>(low.w - 1) /
                                             static_cast<Real>(width - 1);
            const std::int64_t x0 = std::min(static_cast<std::int64_t>(sx), low.w - 1);
            const std::int64_t x1 = std::min(x0 + 1, low.w - 1);
            const Real fx = sx - static_cast<Real>(x0);
            for (std::int64_t ch = 0; ch < low.c; ++ch) {
                const Real v = (1 - fy) * ((1 - fx) * low.at(y0, x0, ch) + fx * low.at(y0, x1, ch)) +
                               fy * ((1 - fx) * low.at(y1, x0, ch) + fx * low.at(y1, x1, ch));
                out.at(y, x, ch) = v;
            }
        }
    }
    return out;
}

namespace {

// One forward pass, shared between the value path (T = Tensor) and the graph
// path (T = Var). `get` resolves parameter names.
template <typename T, typename GetFn>
T ups_net_forward(const T& x, const UpsamplerConfig& cfg, GetFn&& get) {
    const std::int64_t g = cfg.gn_groups;
    T t = gelu(group_norm_chw(conv2d(x, get("stem.w"), get("stem.b"), 1, 1), g, get("stem.gn.g"),
                              get("stem.gn.b"), kEps));
    t = gelu(group_norm_chw(conv2d(t, get("enc1.w"), get("enc1.b"), 2, 1), g, get("enc1.gn.g"),
                            get("enc1.gn.b"), kEps));
    t = gelu(group_norm_chw(conv2d(t, get("enc2.w"), get("enc2.b"), 2, 1), g, get("enc2.gn.g"),
                            get("enc2.gn.b"), kEps));
    for (std::int64_t r = 0; r < cfg.res_blocks; ++r) {
        const std::string pre = "res" + std::to_string(r) + ".";
        T u = gelu(group_norm_chw(conv2d(t, get(pre + "c1.w"), get(pre + "c1.b"), 1, 1), g,
                                  get(pre + "gn1.g"), get(pre + "gn1.b"), kEps));
        u = group_norm_chw(conv2d(u, get(pre + "c2.w"), get(pre + "c2.b"), 1, 1), g,
                           get(pre + "gn2.g"), get(pre + "gn2.b"), kEps);
        t = add(t, u);
    }
    t = gelu(group_norm_chw(conv2d(nearest_upsample2x(t), get("dec1.w"), get("dec1.b"), 1, 1), g,
                            get("dec1.gn.g"), get("dec1.gn.b"), kEps));
    t = gelu(group_norm_chw(conv2d(nearest_upsample2x(t), get("dec2.w"), get("dec2.b"), 1, 1), g,
                            get("dec2.gn.g"), get("dec2.gn.b"), kEps));
    return conv2d(t, get("out.w"), get("out.b"), 1, 1);
}

Tensor stack_input_chw(const Image& upscaled, const Image& original, const Image& mask) {
    RETC_CHECK(upscaled.c == 3 && original.c == 3 && mask.c == 1, ErrorKind::Dimension,
               "refine: expected RGB images and a single-channel mask");
    RETC_CHECK(upscaled.h == original.h && upscaled.w == original.w && mask.h == original.h &&
                   mask.w == original.w,
               ErrorKind::Dimension, "refine: image and mask shapes disagree");
    const std::int64_t h = original.h, w = original.w;
    Tensor x({7, h, w});
    const Tensor up = image_to_chw(upscaled);
    const Tensor org = image_to_chw(original);
    std::copy(up.data.begin(), up.data.end(), x.data.begin());
    std::copy(org.data.begin(), org.data.end(), x.data.begin() + 3 * h * w);
    std::copy(mask.data.begin(), mask.data.end(), x.data.begin() + 6 * h * w);
    return x;
}

std::unordered_map<std::string, const Tensor*> param_map(const UpsamplerParams& p) {
    std::unordered_map<std::string, const Tensor*> map;
    visit_params(p, [&](const std::string& name, const Tensor& t) { map.emplace(name, &t); });
    return map;
}

}  // namespace

Image refine(const Image& upscaled, const Image& original, const Image& mask,
             const UpsamplerParams& params) {
    RETC_CHECK(original.h % 4 == 0 && original.w % 4 == 0, ErrorKind::Usage,
               "refine: H and W must be divisible by 4");
    const Tensor x = stack_input_chw(upscaled, original, mask);
    const auto map = param_map(params);
    const Tensor residual = ups_net_forward(x, params.cfg, [&](const std::string& n) -> const Tensor& {
        return *map.at(n);
    });

    Image out(original.h, original.w, 3);
    for (std::int64_t y = 0; y < out.h; ++y) {
        for (std::int64_t x2 = 0; x2 < out.w; ++x2) {
            const bool masked = mask.at(y, x2, 0) >= 0.5;
            for (std::int64_t ch = 0; ch < 3; ++ch) {
                if (!masked) {
                    out.at(y, x2, ch) = original.at(y, x2, ch);  // exact passthrough
                    continue;
                }
                const Real v =
                    upscaled.at(y, x2, ch) +
                    residual.data[static_cast<std::size_t>((ch * out.h + y) * out.w + x2)];
                out.at(y, x2, ch) = std::clamp(v, static_cast<Real>(0.0), static_cast<Real>(1.0));
            }
        }
    }
    return out;
}

Real masked_l1(const Image& a, const Image& b, const Image& mask) {
    RETC_CHECK(a.h == b.h && a.w == b.w && a.c == b.c && mask.h == a.h && mask.w == a.w,
               ErrorKind::Dimension, "masked_l1: shapes disagree");
    Real acc = 0.0;
    std::int64_t n = 0;
    for (std::int64_t y = 0; y < a.h; ++y)
        for (std::int64_t x = 0; x < a.w; ++x) {
            if (mask.at(y, x, 0) < 0.5) continue;
            ++n;
            for (std::int64_t ch = 0; ch < a.c; ++ch) acc += std::abs(a.at(y, x, ch) - b.at(y, x, ch));
        }
    RETC_CHECK(n > 0, ErrorKind::Usage, "masked_l1: empty mask");
    return acc / static_cast<Real>(n * a.c);
}

UpsamplerOpt UpsamplerOpt::fresh(const UpsamplerParams& p) {
    UpsamplerOpt opt;
    visit_params(p, [&](const std::string&, const Tensor& t) {
        opt.m.emplace_back(t.shape);
        opt.v.emplace_back(t.shape);
    });
    return opt;
}

namespace {

Image training_mask_full(const UpsamplerTrainConfig& cfg, std::int64_t low_side, std::int64_t h,
                         std::int64_t w, std::int64_t step, std::int64_t item) {
    Image full(h, w, 1);
    if (cfg.mask_ratio_min >= 0.999) {
        std::fill(full.data.begin(), full.data.end(), 1.0);
        return full;
    }
    Rng pick = make_rng(cfg.seed, "ups.mask", static_cast<std::uint64_t>(step),
                        static_cast<std::uint64_t>(item));
    MaskSpec spec;
    spec.ratio = pick.uniform(cfg.mask_ratio_min, cfg.mask_ratio_max);
    spec.kind = pick.uniform_int(2) == 0 ? MaskKind::RandomStroke : MaskKind::RandomRect;
    spec.seed = pick.next_u64();
    const auto low = gen_mask(spec, low_side);
    bool any = false;
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            const std::int64_t ly = y * low_side / h, lx = x * low_side / w;
            const bool m = low[static_cast<std::size_t>(ly * low_side + lx)] != 0;
            any = any || m;
            full.at(y, x, 0) = m ? 1.0 : 0.0;
        }
    if (!any) full.at(h / 2, w / 2, 0) = 1.0;
    return full;
}

}  // namespace

UpsamplerMetrics train_upsampler_step(UpsamplerParams& params, UpsamplerOpt& opt,
                                      const std::vector<UpsamplerExample>& data,
                                      const UpsamplerTrainConfig& cfg, std::int64_t step) {
    RETC_CHECK(!data.empty(), ErrorKind::Usage, "train_upsampler: empty dataset");
    const auto t0 = std::chrono::steady_clock::now();

    // graph leaves in canonical order
    std::vector<std::pair<std::string, Var>> leaves;
    std::unordered_map<std::string, Var> by_name;
    visit_params(params, [&](const std::string& name, Tensor& t) {
        Var v = leaf(t, true);
        leaves.emplace_back(name, v);
        by_name.emplace(name, v);
    });

    Rng pick = make_rng(cfg.seed, "ups.batch", static_cast<std::uint64_t>(step));
    Var total;
    for (std::int64_t b = 0; b < cfg.batch_size; ++b) {
        const auto& ex = data[pick.uniform_int(data.size())];
        RETC_CHECK(ex.gt.h % 4 == 0 && ex.gt.w % 4 == 0, ErrorKind::Usage,
                   "train_upsampler: H and W must be divisible by 4");
        const Image up = bilinear_upscale(ex.low, ex.gt.h, ex.gt.w);
        const Image mask = training_mask_full(cfg, ex.low.h, ex.gt.h, ex.gt.w, step, b);

        const Tensor x = stack_input_chw(up, ex.gt, mask);
        const Var residual = ups_net_forward(constant(x), params.cfg,
                                             [&](const std::string& n) -> const Var& {
                                                 return by_name.at(n);
                                             });
        const Var pred = add(residual, constant(image_to_chw(up)));

        // L1 over the masked region only
        Tensor mask_c({3, ex.gt.h, ex.gt.w});
        Real count = 0.0;
        for (std::int64_t y = 0; y < ex.gt.h; ++y)
            for (std::int64_t x2 = 0; x2 < ex.gt.w; ++x2) {
                const bool m = mask.at(y, x2, 0) >= 0.5;
                count += m ? 1.0 : 0.0;
                for (std::int64_t ch = 0; ch < 3; ++ch)
                    mask_c.data[static_cast<std::size_t>((ch * ex.gt.h + y) * ex.gt.w + x2)] =
                        m ? 1.0 : 0.0;
            }
        const Var diff = abs_v(sub(pred, constant(image_to_chw(ex.gt))));
        const Var item_loss = scale(sum_all_v(mul_const(diff, mask_c)), 1.0 / (3.0 * count));
        total = total ? add(total, item_loss) : item_loss;
    }
    Var loss = scale(total, 1.0 / static_cast<Real>(cfg.batch_size));
    const Real loss_val = loss->value.data[0];
    if (!std::isfinite(loss_val))
        fail(ErrorKind::Training, "non-finite upsampler loss at step " + std::to_string(step));
    backward(loss);

    std::vector<Tensor> grads;
    std::vector<Tensor*> ptrs;
    grads.reserve(leaves.size());
    visit_params(params, [&](const std::string&, Tensor& t) { ptrs.push_back(&t); });
    for (const auto& [_, v] : leaves)
        grads.push_back(v->grad.data.empty() ? Tensor(v->value.shape) : v->grad);

    opt.t += 1;
    adam_step(ptrs, grads, opt.m, opt.v, opt.t,
              {cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.grad_clip});

    const auto t1 = std::chrono::steady_clock::now();
    UpsamplerMetrics m;
    m.step = step;
    m.l1_loss = loss_val;
    m.ms_per_step = std::chrono::duration<Real, std::milli>(t1 - t0).count();
    return m;
}

void train_upsampler(UpsamplerParams& params, UpsamplerOpt& opt,
                     const std::vector<UpsamplerExample>& data, const UpsamplerTrainConfig& cfg,
                     std::int64_t start_step,
                     const std::function<void(const UpsamplerMetrics&)>& on_metrics,
                     const std::function<void(std::int64_t)>& on_checkpoint) {
    for (std::int64_t step = start_step; step < cfg.steps; ++step) {
        const UpsamplerMetrics m = train_upsampler_step(params, opt, data, cfg, step);
        if (on_metrics) on_metrics(m);
        const bool last = step + 1 == cfg.steps;
        if (on_checkpoint && (last || (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)))
            on_checkpoint(step + 1);
    }
    if (on_checkpoint && cfg.steps == start_step) on_checkpoint(start_step);
}

Checkpoint upsampler_checkpoint(const UpsamplerParams& p, const UpsamplerOpt& opt, std::int64_t step) {
    Checkpoint ck;
    ck.meta = {{"format", 1}, {"kind", "upsampler"}, {"ups", p.cfg.to_json()}, {"step", step},
               {"opt_t", opt.t}};
    visit_params(p, [&](const std::string& name, const Tensor& t) { ck.add(name, t); });
    std::size_t pi = 0;
    visit_params(p, [&](const std::string& name, const Tensor&) {
        ck.add("opt.m." + name, opt.m[pi]);
        ck.add("opt.v." + name, opt.v[pi]);
        ++pi;
    });
    return ck;
}

std::int64_t restore_upsampler(const Checkpoint& ck, UpsamplerParams& p, UpsamplerOpt& opt) {
    RETC_CHECK(ck.meta.value("kind", "") == "upsampler", ErrorKind::Io,
               "checkpoint kind is not 'upsampler'");
    p = init_upsampler(UpsamplerConfig::from_json(ck.meta.at("ups")), 0);
    visit_params(p, [&](const std::string& name, Tensor& t) { t = ck.tensor(name, t.shape); });
    opt = UpsamplerOpt::fresh(p);
    opt.t = ck.meta.value("opt_t", static_cast<std::int64_t>(0));
    std::size_t pi = 0;
    visit_params(p, [&](const std::string& name, const Tensor& t) {
        if (ck.find("opt.m." + name)) {
            opt.m[pi] = ck.tensor("opt.m." + name, t.shape);
            opt.v[pi] = ck.tensor("opt.v." + name, t.shape);
        }
        ++pi;
    });
    return ck.meta.value("step", static_cast<std::int64_t>(0));
}

}  // namespace retc
