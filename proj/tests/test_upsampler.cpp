#include <doctest.h>

#include <cmath>

#include "retc/upsampler.hpp"
#include "support/synthetic.hpp"

using namespace retc;
using retc::testing::TempDir;

TEST_SUITE_BEGIN("upsampler");

namespace {

UpsamplerConfig tiny_cfg() {
    UpsamplerConfig cfg;
    cfg.width0 = 8;
    cfg.width1 = 16;
    cfg.res_blocks = 1;
    cfg.gn_groups = 4;
    return cfg;
}

Image gradient_image(std::int64_t h, std::int64_t w) {
    Image img(h, w, 3);
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            img.at(y, x, 0) = static_cast<Real>(y) / static_cast<Real>(h);
            img.at(y, x, 1) = static_cast<Real>(x) / static_cast<Real>(w);
            img.at(y, x, 2) = 0.5;
        }
    return img;
}

Image full_mask(std::int64_t h, std::int64_t w, Real v) {
    Image m(h, w, 1);
    std::fill(m.data.begin(), m.data.end(), v);
    return m;
}

}  // namespace

TEST_CASE("bilinear keeps constants and corner samples") {
    Image c(3, 3, 3);
    std::fill(c.data.begin(), c.data.end(), 0.25);
    const Image up = bilinear_upscale(c, 9, 7);
    for (Real v : up.data) CHECK(v == doctest::Approx(0.25));

    Image corners(2, 2, 1);
    corners.data = {0.0, 1.0, 1.0, 0.0};
    const Image u3 = bilinear_upscale(corners, 3, 3);
    CHECK(u3.at(0, 0, 0) == doctest::Approx(0.0));
    CHECK(u3.at(0, 2, 0) == doctest::Approx(1.0));
    CHECK(u3.at(2, 0, 0) == doctest::Approx(1.0));
    CHECK(u3.at(2, 2, 0) == doctest::Approx(0.0));
    CHECK(u3.at(1, 1, 0) == doctest::Approx(0.5));  // bilinear midpoint
}

TEST_CASE("bilinear matches the interpolation formula on a random 4x4 -> 8x8") {
    Rng rng = make_rng(1, "ups.bil");
    Image low(4, 4, 3);
    for (auto& v : low.data) v = rng.uniform01();
    const Image up = bilinear_upscale(low, 8, 8);
    for (std::int64_t y = 0; y < 8; ++y)
        for (std::int64_t x = 0; x < 8; ++x)
            for (int c = 0; c < 3; ++c) {
                const Real sy = static_cast<Real>(y) * 3.0 / 7.0;
                const Real sx = static_cast<Real>(x) * 3.0 / 7.0;
                const auto y0 = static_cast<std::int64_t>(sy), x0 = static_cast<std::int64_t>(sx);
                const std::int64_t y1 = std::min<std::int64_t>(y0 + 1, 3), x1 = std::min<std::int64_t>(x0 + 1, 3);
                const Real fy = sy - static_cast<Real>(y0), fx = sx - static_cast<Real>(x0);
                const Real expect =
                    (1 - fy) * ((1 - fx) * low.at(y0, x0, c) + fx * low.at(y0, x1, c)) +
                    fy * ((1 - fx) * low.at(y1, x0, c) + fx * low.at(y1, x1, c));
                CHECK(up.at(y, x, c) == doctest::Approx(expect).epsilon(1e-12));
            }
}

TEST_CASE("zero-initialized head: refine returns the blended bilinear upscale") {
    const UpsamplerConfig cfg = tiny_cfg();
    const UpsamplerParams params = init_upsampler(cfg, 2);  // out.w is zero at init
    const Image orig = gradient_image(16, 16);
    const Image low = downsample(orig, 4);
    const Image up = bilinear_upscale(low, 16, 16);
    const Image mask = full_mask(16, 16, 1.0);

    const Image out = refine(up, orig, mask, params);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        CHECK(out.data[i] == doctest::Approx(std::clamp(up.data[i], 0.0, 1.0)).epsilon(1e-12));
}

TEST_CASE("empty mask: output equals the original exactly") {
    const UpsamplerParams params = init_upsampler(tiny_cfg(), 3);
    const Image orig = gradient_image(16, 16);
    const Image low = downsample(orig, 4);
    const Image up = bilinear_upscale(low, 16, 16);
    const Image out = refine(up, orig, full_mask(16, 16, 0.0), params);
    CHECK(out.data == orig.data);
}

TEST_CASE("unmasked passthrough is exact under a partial mask") {
    UpsamplerParams params = init_upsampler(tiny_cfg(), 4);
    // make the head nonzero so masked pixels actually change
    Rng rng = make_rng(5, "ups.head");
    for (auto& v : params.out_w.data) v = snap_f32(0.1 * rng.normal());

    const Image orig = gradient_image(16, 16);
    const Image low = downsample(orig, 4);
    const Image up = bilinear_upscale(low, 16, 16);
    Image mask = full_mask(16, 16, 0.0);
    for (std::int64_t y = 4; y < 12; ++y)
        for (std::int64_t x = 4; x < 12; ++x) mask.at(y, x, 0) = 1.0;

    const Image out = refine(up, orig, mask, params);
    bool changed_masked = false;
    for (std::int64_t y = 0; y < 16; ++y)
        for (std::int64_t x = 0; x < 16; ++x)
            for (int c = 0; c < 3; ++c) {
                if (mask.at(y, x, 0) < 0.5) {
                    CHECK(out.at(y, x, c) == orig.at(y, x, c));  // exact
                } else if (out.at(y, x, c) != up.at(y, x, c)) {
                    changed_masked = true;
                }
            }
    CHECK(changed_masked);

    // output range after clamp
    for (Real v : out.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("refine rejects sizes not divisible by four") {
    const UpsamplerParams params = init_upsampler(tiny_cfg(), 6);
    const Image orig = gradient_image(18, 16);
    const Image up = gradient_image(18, 16);
    CHECK_THROWS_AS(refine(up, orig, full_mask(18, 16, 1.0), params), Error);
}

TEST_CASE("zero learning rate leaves the upsampler unchanged") {
    const UpsamplerConfig cfg = tiny_cfg();
    UpsamplerParams params = init_upsampler(cfg, 7);
    std::vector<Real> before;
    visit_params(params, [&](const std::string&, const Tensor& t) {
        before.insert(before.end(), t.data.begin(), t.data.end());
    });

    UpsamplerOpt opt = UpsamplerOpt::fresh(params);
    UpsamplerTrainConfig tc;
    tc.lr = 0.0;
    tc.batch_size = 1;
    tc.steps = 1;
    const Image gt = gradient_image(16, 16);
    std::vector<UpsamplerExample> data{{gt, downsample(gt, 4)}};
    train_upsampler_step(params, opt, data, tc, 0);

    std::vector<Real> after;
    visit_params(params, [&](const std::string&, const Tensor& t) {
        after.insert(after.end(), t.data.begin(), t.data.end());
    });
    CHECK(before == after);
}

TEST_CASE("seeded upsampler training is bit-deterministic") {
    const UpsamplerConfig cfg = tiny_cfg();
    const Image gt = gradient_image(16, 16);
    std::vector<UpsamplerExample> data{{gt, downsample(gt, 4)}};

    auto run = [&] {
        UpsamplerParams p = init_upsampler(cfg, 8);
        UpsamplerOpt opt = UpsamplerOpt::fresh(p);
        UpsamplerTrainConfig tc;
        tc.batch_size = 1;
        tc.steps = 3;
        tc.seed = 9;
        for (std::int64_t s = 0; s < 3; ++s) train_upsampler_step(p, opt, data, tc, s);
        return upsampler_checkpoint(p, opt, 3);
    };
    CHECK(serialize_checkpoint(run()) == serialize_checkpoint(run()));
}

TEST_CASE("a few steps reduce the identity-fit loss") {
    const UpsamplerConfig cfg = tiny_cfg();
    UpsamplerParams params = init_upsampler(cfg, 10);
    UpsamplerOpt opt = UpsamplerOpt::fresh(params);
    UpsamplerTrainConfig tc;
    tc.batch_size = 1;
    tc.lr = 3e-3;
    tc.steps = 12;
    tc.mask_ratio_min = tc.mask_ratio_max = 1.0;  // identity-fit: fully masked
    tc.seed = 11;
    const Image gt = gradient_image(16, 16);
    std::vector<UpsamplerExample> data{{gt, downsample(gt, 4)}};

    Real first = 0.0, last = 0.0;
    for (std::int64_t s = 0; s < tc.steps; ++s) {
        const auto m = train_upsampler_step(params, opt, data, tc, s);
        if (s == 0) first = m.l1_loss;
        last = m.l1_loss;
    }
    CHECK(last < first);
}

TEST_CASE("upsampler checkpoints restore bit-exactly") {
    const UpsamplerConfig cfg = tiny_cfg();
    UpsamplerParams params = init_upsampler(cfg, 12);
    UpsamplerOpt opt = UpsamplerOpt::fresh(params);
    TempDir tmp("ups");
    save_checkpoint(upsampler_checkpoint(params, opt, 5), tmp.file("u.rckpt"));

    UpsamplerParams back = init_upsampler(cfg, 99);
    UpsamplerOpt bopt = UpsamplerOpt::fresh(back);
    const std::int64_t step = restore_upsampler(load_checkpoint(tmp.file("u.rckpt")), back, bopt);
    CHECK(step == 5);
    CHECK(serialize_checkpoint(upsampler_checkpoint(back, bopt, 5)) ==
          serialize_checkpoint(upsampler_checkpoint(params, opt, 5)));
}

TEST_SUITE_END();
