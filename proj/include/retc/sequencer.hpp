#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "retc/autodiff.hpp"
#include "retc/image.hpp"
#include "retc/palette.hpp"
#include "retc/tensor.hpp"

namespace retc {

// Raster-scan token/mask pair for an L x L low-resolution image.
// Sequence position p maps to pixel (row = p / L, col = p % L).
struct PixelSequence {
    std::vector<std::int64_t> tokens;  // palette indices, length L^2
    std::vector<std::uint8_t> mask;    // 1 = masked, length L^2
    std::int64_t side = 0;

    std::int64_t length() const { return side * side; }
    std::int64_t masked_count() const;
};

// Trainable lookup tables. FE has k+1 rows; row k is the reserved embedding
// substituted at masked positions. PE has one row per raster position.
struct EmbeddingTable {
    Tensor fe;  // [k+1, d]
    Tensor pe;  // [L^2, d]

    std::int64_t k() const { return fe.shape[0] - 1; }
    std::int64_t d() const { return fe.shape[1]; }
    std::int64_t mask_row() const { return fe.shape[0] - 1; }
};

enum class MaskKind { Center, Half, Expand, RandomStroke, RandomRect };

struct MaskSpec {
    MaskKind kind = MaskKind::Center;
    std::int64_t region = 0;     // side of the central square (center/expand); 0 = L/2
    Real ratio = 0.5;            // target coverage for stroke/rect kinds
    int strokes = 4;             // stroke walks to draw
    std::int64_t thickness = 2;  // stroke radius in pixels
    std::uint64_t seed = 0;
};

MaskKind parse_mask_kind(const std::string& name);
std::string mask_kind_name(MaskKind k);

// Area-averaging (box filter) resample of an H x W image to L x L. H, W >= L.
Image downsample(const Image& img, std::int64_t side);

// Quantizes and raster-scans an L x L image together with its mask grid.
PixelSequence to_sequence(const Image& img_low, const Palette& palette,
                          const std::vector<std::uint8_t>& mask_grid);

// Deterministic mask grid (row-major, 1 = masked) for the given spec.
std::vector<std::uint8_t> gen_mask(const MaskSpec& spec, std::int64_t side);

// X = FE(tokens under mask substitution) + PE. Masked positions use the
// reserved FE row, so their stored token never reaches the model.
Tensor embed(const PixelSequence& seq, const EmbeddingTable& tables);
// Differentiable version used in training; fe/pe are graph leaves.
Var embed(const PixelSequence& seq, const Var& fe, const Var& pe);

// Mask grid <-> PGM image (255 = masked).
Image mask_to_image(const std::vector<std::uint8_t>& mask, std::int64_t side);
std::vector<std::uint8_t> image_to_mask(const Image& img);

// Reduces an arbitrary-resolution mask image to an L x L grid by majority
// coverage; exact-size masks pass through unchanged.
std::vector<std::uint8_t> reduce_mask_to_grid(const Image& mask_img, std::int64_t side);

}  // namespace retc
