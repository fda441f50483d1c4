#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "retc/common.hpp"
#include "retc/tensor.hpp"

namespace retc {

// H x W x C image, values in [0,1], row-major HWC.
struct Image {
    std::int64_t h = 0, w = 0, c = 0;
    std::vector<Real> data;

    Image() = default;
    Image(std::int64_t height, std::int64_t width, std::int64_t channels)
        : h(height), w(width), c(channels),
          data(static_cast<std::size_t>(height * width * channels), 0.0) {}

    Real& at(std::int64_t y, std::int64_t x, std::int64_t ch) {
        return data[static_cast<std::size_t>((y * w + x) * c + ch)];
    }
    Real at(std::int64_t y, std::int64_t x, std::int64_t ch) const {
        return data[static_cast<std::size_t>((y * w + x) * c + ch)];
    }
};

// Converts between HWC images and [C,H,W] tensors (the conv layout).
Tensor image_to_chw(const Image& img);
Image chw_to_image(const Tensor& t);

// Decodes PNG (8-bit gray/RGB/RGBA, non-interlaced) or PPM (P6) by magic
// bytes. Always returns 3 channels; alpha is dropped, grayscale replicated.
Image load_image(const std::string& path);

// Encodes by extension: .png, .ppm. Values are clamped and quantized to 8 bits.
void save_image(const Image& img, const std::string& path);

// Single-channel PGM (P5). Used for masks (255 = masked) and entropy maps.
Image load_pgm(const std::string& path);
void save_pgm(const Image& img, const std::string& path);

// In-memory PNG codec (exposed for tests).
std::vector<std::uint8_t> encode_png(const Image& img);
Image decode_png(const std::vector<std::uint8_t>& bytes);

}  // namespace retc
