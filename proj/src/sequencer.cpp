#include "retc/sequencer.hpp"

#include <algorithm>
#include <cmath>

#include "retc/rng.hpp"

namespace retc {

std::int64_t PixelSequence::masked_count() const {
    std::int64_t n = 0;
    for (auto m : mask) n += m ? 1 : 0;
    return n;
}

MaskKind parse_mask_kind(const std::string& name) {
    if (name == "center") return MaskKind::Center;
    if (name == "half") return MaskKind::Half;
    if (name == "expand") return MaskKind::Expand;
    if (name == "random_stroke" || name == "stroke") return MaskKind::RandomStroke;
    if (name == "random_rect" || name == "rect") return MaskKind::RandomRect;
    fail(ErrorKind::Usage, "unknown mask kind: " + name);
}

std::string mask_kind_name(MaskKind k) {
    switch (k) {
        case MaskKind::Center: return "center";
        case MaskKind::Half: return "half";
        case MaskKind::Expand: return "expand";
        case MaskKind::RandomStroke: return "random_stroke";
        case MaskKind::RandomRect: return "random_rect";
    }
    return "?";
}

Image downsample(const Image& img, std::int64_t side) {
    RETC_CHECK(side >= 1, ErrorKind::Usage, "downsample: target side must be >= 1");
    RETC_CHECK(img.h >= side && img.w >= side, ErrorKind::Usage,
               "downsample: target side exceeds source dimensions");
    Image out(side, side, img.c);
    // Exact area averaging: output cell (oy, ox) covers
    // [oy*h/side, (oy+1)*h/side) x [ox*w/side, (ox+1)*w/side) with fractional
    // edge weights, so a constant image stays constant for any size ratio.
    for (std::int64_t oy = 0; oy < side; ++oy) {
        const Real y0 = static_cast<Real>(oy) * img.h / side;
        const Real y1 = static_cast<Real>(oy + 1) * img.h / side;
        for (std::int64_t ox = 0; ox < side; ++ox) {
            const Real x0 = static_cast<Real>(ox) * img.w / side;
            const Real x1 = static_cast<Real>(ox + 1) * img.w / side;
            for (std::int64_t ch = 0; ch < img.c; ++ch) {
                Real acc = 0.0, area = 0.0;
                for (std::int64_t y = static_cast<std::int64_t>(std::floor(y0)); y < img.h && y < y1; ++y) {
                    const Real wy = std::min(y1, static_cast<Real>(y + 1)) - std::max(y0, static_cast<Real>(y));
                    if (wy <= 0.0) continue;
                    for (std::int64_t x = static_cast<std::int64_t>(std::floor(x0)); x < img.w && x < x1; ++x) {
                        const Real wx =
                            std::min(x1, static_cast<Real>(x + 1)) - std::max(x0, static_cast<Real>(x));
                        if (wx <= 0.0) continue;
                        acc += img.at(y, x, ch) * wy * wx;
                        area += wy * wx;
                    }
                }
                out.at(oy, ox, ch) = acc / area;
            }
        }
    }
    return out;
}

PixelSequence to_sequence(const Image& img_low, const Palette& palette,
                          const std::vector<std::uint8_t>& mask_grid) {
    RETC_CHECK(img_low.h == img_low.w, ErrorKind::Dimension, "to_sequence: image must be square");
    const std::int64_t side = img_low.h;
    RETC_CHECK(static_cast<std::int64_t>(mask_grid.size()) == side * side, ErrorKind::Dimension,
               "to_sequence: mask grid size must be side^2");
    PixelSequence seq;
    seq.side = side;
    seq.tokens = quantize(img_low, palette);
    seq.mask = mask_grid;
    return seq;
}

namespace {

std::vector<std::uint8_t> center_mask(std::int64_t side, std::int64_t region) {
    RETC_CHECK(region >= 1 && region <= side, ErrorKind::Usage,
               "gen_mask: center region must be in [1, side]");
    std::vector<std::uint8_t> m(static_cast<std::size_t>(side * side), 0);
    const std::int64_t start = (side - region) / 2;
    for (std::int64_t y = start; y < start + region; ++y)
        for (std::int64_t x = start; x < start + region; ++x)
            m[static_cast<std::size_t>(y * side + x)] = 1;
    return m;
}

// Paints pixels of a disc one at a time; stops when the target count is hit,
// which keeps the coverage exact.
void stamp_disc(std::vector<std::uint8_t>& m, std::int64_t side, std::int64_t cy, std::int64_t cx,
                std::int64_t radius, std::int64_t target, std::int64_t& painted) {
    for (std::int64_t dy = -radius; dy <= radius && painted < target; ++dy) {
        for (std::int64_t dx = -radius; dx <= radius && painted < target; ++dx) {
            if (dy * dy + dx * dx > radius * radius) continue;
            const std::int64_t y = cy + dy, x = cx + dx;
            if (y < 0 || y >= side || x < 0 || x >= side) continue;
            auto& cell = m[static_cast<std::size_t>(y * side + x)];
            if (!cell) {
                cell = 1;
                ++painted;
            }
        }
    }
}

std::vector<std::uint8_t> stroke_mask(std::int64_t side, Real ratio, std::int64_t thickness,
                                      int strokes, Rng& rng) {
    std::vector<std::uint8_t> m(static_cast<std::size_t>(side * side), 0);
    const auto target = static_cast<std::int64_t>(std::llround(ratio * static_cast<Real>(side * side)));
    // stroke count shapes the texture: fewer strokes -> longer walks; the
    // coverage target is hit exactly either way
    const std::int64_t disc = std::max<std::int64_t>(1, 3 * thickness * thickness);
    const int steps_per_walk = static_cast<int>(
        std::max<std::int64_t>(4, target / std::max<std::int64_t>(1, strokes * disc)));
    std::int64_t painted = 0;
    while (painted < target) {
        // random walk with momentum
        Real y = static_cast<Real>(rng.uniform_int(static_cast<std::uint64_t>(side)));
        Real x = static_cast<Real>(rng.uniform_int(static_cast<std::uint64_t>(side)));
        Real angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        for (int s = 0; s < steps_per_walk && painted < target; ++s) {
            stamp_disc(m, side, static_cast<std::int64_t>(y), static_cast<std::int64_t>(x), thickness,
                       target, painted);
            angle += rng.uniform(-0.6, 0.6);
            y += std::sin(angle) * static_cast<Real>(thickness);
            x += std::cos(angle) * static_cast<Real>(thickness);
            y = std::clamp(y, static_cast<Real>(0), static_cast<Real>(side - 1));
            x = std::clamp(x, static_cast<Real>(0), static_cast<Real>(side - 1));
        }
    }
    return m;
}

std::vector<std::uint8_t> rect_mask(std::int64_t side, Real ratio, Rng& rng) {
    std::vector<std::uint8_t> m(static_cast<std::size_t>(side * side), 0);
    const auto target = static_cast<std::int64_t>(std::llround(ratio * static_cast<Real>(side * side)));
    std::int64_t painted = 0;
    while (painted < target) {
        const std::int64_t rh = 1 + static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(std::max<std::int64_t>(1, side / 2))));
        const std::int64_t rw = 1 + static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(std::max<std::int64_t>(1, side / 2))));
        const std::int64_t y0 = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(side)));
        const std::int64_t x0 = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(side)));
        for (std::int64_t y = y0; y < std::min(side, y0 + rh) && painted < target; ++y) {
            for (std::int64_t x = x0; x < std::min(side, x0 + rw) && painted < target; ++x) {
                auto& cell = m[static_cast<std::size_t>(y * side + x)];
                if (!cell) {
                    cell = 1;
                    ++painted;
                }
            }
        }
    }
    return m;
}

}  // namespace

std::vector<std::uint8_t> gen_mask(const MaskSpec& spec, std::int64_t side) {
    RETC_CHECK(side >= 1, ErrorKind::Usage, "gen_mask: side must be >= 1");
    const std::int64_t region = spec.region > 0 ? spec.region : side / 2;
    switch (spec.kind) {
        case MaskKind::Center:
            return center_mask(side, region);
        case MaskKind::Expand: {
            auto m = center_mask(side, region);
            for (auto& v : m) v = v ? 0 : 1;
            return m;
        }
        case MaskKind::Half: {
            Rng rng = make_rng(spec.seed, "mask.half");
            std::vector<std::uint8_t> m(static_cast<std::size_t>(side * side), 0);
            const std::uint64_t orient = rng.uniform_int(4);  // top/bottom/left/right
            for (std::int64_t y = 0; y < side; ++y)
                for (std::int64_t x = 0; x < side; ++x) {
                    bool on = false;
                    switch (orient) {
                        case 0: on = y < side / 2; break;
                        case 1: on = y >= side - side / 2; break;
                        case 2: on = x < side / 2; break;
                        case 3: on = x >= side - side / 2; break;
                    }
                    if (on) m[static_cast<std::size_t>(y * side + x)] = 1;
                }
            return m;
        }
        case MaskKind::RandomStroke: {
            RETC_CHECK(spec.ratio > 0.0 && spec.ratio < 1.0, ErrorKind::Usage,
                       "gen_mask: stroke ratio must lie in (0,1)");
            RETC_CHECK(spec.thickness >= 1 && spec.strokes >= 1, ErrorKind::Usage,
                       "gen_mask: thickness and stroke count must be >= 1");
            Rng rng = make_rng(spec.seed, "mask.stroke");
            return stroke_mask(side, spec.ratio, spec.thickness, spec.strokes, rng);
        }
        case MaskKind::RandomRect: {
            RETC_CHECK(spec.ratio > 0.0 && spec.ratio < 1.0, ErrorKind::Usage,
                       "gen_mask: rect ratio must lie in (0,1)");
            Rng rng = make_rng(spec.seed, "mask.rect");
            return rect_mask(side, spec.ratio, rng);
        }
    }
    fail(ErrorKind::Usage, "gen_mask: invalid kind");
}

namespace {
std::vector<std::int64_t> substituted_rows(const PixelSequence& seq, std::int64_t k,
                                           std::int64_t mask_row) {
    std::vector<std::int64_t> rows(seq.tokens.size());
    for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
        if (seq.mask[i]) {
            rows[i] = mask_row;
        } else {
            RETC_CHECK(seq.tokens[i] >= 0 && seq.tokens[i] < k, ErrorKind::Vocabulary,
                       "embed: token outside palette range");
            rows[i] = seq.tokens[i];
        }
    }
    return rows;
}
}  // namespace

Tensor embed(const PixelSequence& seq, const EmbeddingTable& tables) {
    RETC_CHECK(tables.pe.shape[0] == seq.length(), ErrorKind::Dimension,
               "embed: PE row count must equal sequence length");
    const auto rows = substituted_rows(seq, tables.k(), tables.mask_row());
    return add(gather_rows(tables.fe, rows), tables.pe);
}

Var embed(const PixelSequence& seq, const Var& fe, const Var& pe) {
    RETC_CHECK(pe->value.shape[0] == seq.length(), ErrorKind::Dimension,
               "embed: PE row count must equal sequence length");
    const auto rows = substituted_rows(seq, fe->value.shape[0] - 1, fe->value.shape[0] - 1);
    return add(gather_rows(fe, rows), pe);
}

Image mask_to_image(const std::vector<std::uint8_t>& mask, std::int64_t side) {
    Image img(side, side, 1);
    for (std::int64_t i = 0; i < side * side; ++i)
        img.data[static_cast<std::size_t>(i)] = mask[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    return img;
}

std::vector<std::uint8_t> image_to_mask(const Image& img) {
    RETC_CHECK(img.c == 1, ErrorKind::Usage, "image_to_mask: expected a single-channel image");
    std::vector<std::uint8_t> m(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) m[i] = img.data[i] >= 0.5 ? 1 : 0;
    return m;
}

std::vector<std::uint8_t> reduce_mask_to_grid(const Image& mask_img, std::int64_t side) {
    RETC_CHECK(mask_img.c == 1, ErrorKind::Usage, "reduce_mask: expected a single-channel mask");
    if (mask_img.h == side && mask_img.w == side) return image_to_mask(mask_img);
    RETC_CHECK(mask_img.h >= side && mask_img.w >= side, ErrorKind::Usage,
               "reduce_mask: mask smaller than the token grid");
    const Image low = downsample(mask_img, side);
    std::vector<std::uint8_t> m(static_cast<std::size_t>(side * side));
    for (std::int64_t i = 0; i < side * side; ++i)
        m[static_cast<std::size_t>(i)] = low.data[static_cast<std::size_t>(i)] >= 0.5 ? 1 : 0;
    return m;
}

}  // namespace retc
