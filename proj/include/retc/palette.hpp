#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "retc/common.hpp"
#include "retc/image.hpp"

namespace retc {

using Rgb = std::array<Real, 3>;

// Discrete visual vocabulary: k centroid colors in [0,1]^3, kept in canonical
// (lexicographic) order so serialization is deterministic. Centroids live on
// the float32 grid to match the on-disk format exactly.
struct Palette {
    std::vector<Rgb> centroids;

    std::int64_t k() const { return static_cast<std::int64_t>(centroids.size()); }
};

struct KMeansStats {
    std::vector<Real> inertia_per_iter;  // non-increasing
    int iters = 0;
};

// Lloyd's algorithm with k-means++ seeding. Deterministic given seed.
// Fails with a vocabulary error when the input has fewer than k distinct colors.
Palette fit_kmeans(const std::vector<Rgb>& pixels, std::int64_t k, int max_iters,
                   std::uint64_t seed, KMeansStats* stats = nullptr);

// Nearest-centroid index per pixel (squared Euclidean, ties to lowest index).
std::vector<std::int64_t> quantize(const Image& img, const Palette& p);
std::int64_t quantize_one(const Rgb& px, const Palette& p);

// Index grid (given as flat row-major tokens of an L x L image) back to colors.
Image dequantize(const std::vector<std::int64_t>& tokens, std::int64_t side, const Palette& p);

// Binary container: magic "RCPAL1", little-endian u32 k, then k*3 float32.
std::vector<std::uint8_t> serialize_palette(const Palette& p);
Palette deserialize_palette(const std::vector<std::uint8_t>& bytes);
void save_palette(const Palette& p, const std::string& path);
Palette load_palette(const std::string& path);

// FNV-1a of the serialized bytes, as fixed-width hex. Stored in checkpoints.
std::string palette_hash(const Palette& p);

// Collects all pixels of a set of images (training corpus helper).
std::vector<Rgb> collect_pixels(const std::vector<Image>& images);

}  // namespace retc
