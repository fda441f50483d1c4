#include "retc/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace retc {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    RETC_CHECK(in.good(), ErrorKind::Io, "cannot open file: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    RETC_CHECK(!in.bad(), ErrorKind::Io, "read failed: " + path);
    return bytes;
}

void write_file(const std::string& path, const void* data, std::size_t len) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    RETC_CHECK(out.good(), ErrorKind::Io, "cannot open file for writing: " + path);
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
    out.flush();
    RETC_CHECK(out.good(), ErrorKind::Io, "write failed: " + path);
}

std::uint8_t to_byte(Real v) {
    const Real c = std::clamp(v, static_cast<Real>(0.0), static_cast<Real>(1.0));
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

// ---- PNM (P5/P6) ----

struct PnmHeader {
    int kind = 0;  // 5 or 6
    std::int64_t w = 0, h = 0, maxval = 0;
    std::size_t data_off = 0;
};

PnmHeader parse_pnm_header(const std::vector<std::uint8_t>& b, const std::string& path) {
    PnmHeader hd;
    RETC_CHECK(b.size() >= 2 && b[0] == 'P' && (b[1] == '5' || b[1] == '6'), ErrorKind::Io,
               "not a P5/P6 PNM file: " + path);
    hd.kind = b[1] - '0';
    std::size_t i = 2;
    auto skip_space = [&]() {
        for (;;) {
            while (i < b.size() && std::isspace(b[i])) ++i;
            if (i < b.size() && b[i] == '#') {
                while (i < b.size() && b[i] != '\n') ++i;
            } else {
                break;
            }
        }
    };
    auto read_int = [&]() -> std::int64_t {
        skip_space();
        RETC_CHECK(i < b.size() && std::isdigit(b[i]), ErrorKind::Io,
                   "malformed PNM header at byte " + std::to_string(i) + ": " + path);
        std::int64_t v = 0;
        while (i < b.size() && std::isdigit(b[i])) v = v * 10 + (b[i++] - '0');
        return v;
    };
    hd.w = read_int();
    hd.h = read_int();
    hd.maxval = read_int();
    RETC_CHECK(hd.w > 0 && hd.h > 0, ErrorKind::Io, "bad PNM dimensions: " + path);
    RETC_CHECK(hd.maxval > 0 && hd.maxval <= 255, ErrorKind::Io,
               "unsupported PNM maxval " + std::to_string(hd.maxval) + " (only <=255): " + path);
    RETC_CHECK(i < b.size() && std::isspace(b[i]), ErrorKind::Io, "malformed PNM header: " + path);
    hd.data_off = ++i;  // single whitespace after maxval
    return hd;
}

Image load_pnm(const std::vector<std::uint8_t>& b, const std::string& path) {
    const PnmHeader hd = parse_pnm_header(b, path);
    const std::int64_t ch = hd.kind == 6 ? 3 : 1;
    const std::size_t need = static_cast<std::size_t>(hd.w * hd.h * ch);
    RETC_CHECK(b.size() >= hd.data_off + need, ErrorKind::Io,
               "PNM truncated at byte " + std::to_string(b.size()) + " (need " +
                   std::to_string(hd.data_off + need) + "): " + path);
    Image img(hd.h, hd.w, ch);
    const Real inv = 1.0 / static_cast<Real>(hd.maxval);
    for (std::size_t i = 0; i < need; ++i)
        img.data[i] = static_cast<Real>(b[hd.data_off + i]) * inv;
    return img;
}

// ---- PNG ----

std::uint32_t be32(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[5], const std::vector<std::uint8_t>& data) {
    put_be32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(4 + data.size()));
    put_be32(out, static_cast<std::uint32_t>(crc));
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

Image decode_png(const std::vector<std::uint8_t>& b) {
    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    RETC_CHECK(b.size() >= 8 && std::memcmp(b.data(), sig, 8) == 0, ErrorKind::Io,
               "not a PNG file (bad signature)");

    std::int64_t w = 0, h = 0;
    int color_type = -1;
    std::vector<std::uint8_t> idat;
    bool seen_ihdr = false, seen_iend = false;

    std::size_t i = 8;
    while (i + 8 <= b.size() && !seen_iend) {
        const std::uint32_t len = be32(b.data() + i);
        RETC_CHECK(i + 12 + len <= b.size(), ErrorKind::Io,
                   "PNG chunk truncated at byte " + std::to_string(i));
        const char* type = reinterpret_cast<const char*>(b.data() + i + 4);
        const std::uint8_t* data = b.data() + i + 8;
        const std::uint32_t want_crc = be32(b.data() + i + 8 + len);
        const uLong got_crc = crc32(0L, b.data() + i + 4, static_cast<uInt>(4 + len));
        RETC_CHECK(static_cast<std::uint32_t>(got_crc) == want_crc, ErrorKind::Io,
                   "PNG CRC mismatch in chunk at byte " + std::to_string(i));

        if (std::memcmp(type, "IHDR", 4) == 0) {
            RETC_CHECK(len == 13, ErrorKind::Io, "PNG IHDR has wrong length");
            w = be32(data);
            h = be32(data + 4);
            const int bit_depth = data[8];
            color_type = data[9];
            const int interlace = data[12];
            RETC_CHECK(w > 0 && h > 0, ErrorKind::Io, "PNG has zero dimension");
            RETC_CHECK(bit_depth == 8, ErrorKind::Io, "unsupported PNG bit depth (only 8)");
            RETC_CHECK(color_type == 0 || color_type == 2 || color_type == 6, ErrorKind::Io,
                       "unsupported PNG color type " + std::to_string(color_type) +
                           " (only gray/RGB/RGBA)");
            RETC_CHECK(interlace == 0, ErrorKind::Io, "interlaced PNG not supported");
            seen_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            seen_iend = true;
        }
        // ancillary chunks are skipped
        i += 12 + len;
    }
    RETC_CHECK(seen_ihdr && seen_iend && !idat.empty(), ErrorKind::Io, "PNG missing required chunks");

    const std::int64_t bpp = color_type == 0 ? 1 : (color_type == 2 ? 3 : 4);
    const std::int64_t stride = w * bpp;
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(h * (stride + 1)));
    uLongf dst_len = static_cast<uLongf>(raw.size());
    const int zret = uncompress(raw.data(), &dst_len, idat.data(), static_cast<uLong>(idat.size()));
    RETC_CHECK(zret == Z_OK && dst_len == raw.size(), ErrorKind::Io,
               "PNG IDAT inflate failed (zlib code " + std::to_string(zret) + ")");

    // Undo per-row filters in place (working on a copy of the previous row).
    std::vector<std::uint8_t> pix(static_cast<std::size_t>(h * stride));
    for (std::int64_t y = 0; y < h; ++y) {
        const std::uint8_t filter = raw[static_cast<std::size_t>(y * (stride + 1))];
        const std::uint8_t* src = raw.data() + y * (stride + 1) + 1;
        std::uint8_t* cur = pix.data() + y * stride;
        const std::uint8_t* up = y > 0 ? pix.data() + (y - 1) * stride : nullptr;
        RETC_CHECK(filter <= 4, ErrorKind::Io,
                   "bad PNG filter type in row " + std::to_string(y));
        for (std::int64_t x = 0; x < stride; ++x) {
            const int a = x >= bpp ? cur[x - bpp] : 0;
            const int bb = up ? up[x] : 0;
            const int cc = (up && x >= bpp) ? up[x - bpp] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += bb; break;
                case 3: v += (a + bb) / 2; break;
                case 4: v += paeth(a, bb, cc); break;
            }
            cur[x] = static_cast<std::uint8_t>(v & 0xff);
        }
    }

    Image img(h, w, 3);
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            const std::uint8_t* p = pix.data() + y * stride + x * bpp;
            for (std::int64_t ch = 0; ch < 3; ++ch) {
                const std::uint8_t v = bpp == 1 ? p[0] : p[ch];
                img.at(y, x, ch) = static_cast<Real>(v) / 255.0;
            }
        }
    }
    return img;
}

std::vector<std::uint8_t> encode_png(const Image& img) {
    RETC_CHECK(img.c == 1 || img.c == 3, ErrorKind::Usage, "encode_png: image must have 1 or 3 channels");
    const std::int64_t bpp = img.c;
    const std::int64_t stride = img.w * bpp;

    std::vector<std::uint8_t> raw(static_cast<std::size_t>(img.h * (stride + 1)));
    for (std::int64_t y = 0; y < img.h; ++y) {
        raw[static_cast<std::size_t>(y * (stride + 1))] = 0;  // filter: none
        for (std::int64_t x = 0; x < img.w; ++x)
            for (std::int64_t ch = 0; ch < bpp; ++ch)
                raw[static_cast<std::size_t>(y * (stride + 1) + 1 + x * bpp + ch)] = to_byte(img.at(y, x, ch));
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> z(bound);
    const int zret = compress2(z.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6);
    RETC_CHECK(zret == Z_OK, ErrorKind::Io, "PNG deflate failed (zlib code " + std::to_string(zret) + ")");
    z.resize(bound);

    std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<std::uint8_t> ihdr;
    put_be32(ihdr, static_cast<std::uint32_t>(img.w));
    put_be32(ihdr, static_cast<std::uint32_t>(img.h));
    ihdr.push_back(8);                                    // bit depth
    ihdr.push_back(img.c == 3 ? 2 : 0);                   // color type
    ihdr.push_back(0);                                    // compression
    ihdr.push_back(0);                                    // filter
    ihdr.push_back(0);                                    // interlace
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", z);
    put_chunk(out, "IEND", {});
    return out;
}

Tensor image_to_chw(const Image& img) {
    Tensor t({img.c, img.h, img.w});
    for (std::int64_t ch = 0; ch < img.c; ++ch)
        for (std::int64_t y = 0; y < img.h; ++y)
            for (std::int64_t x = 0; x < img.w; ++x)
                t.data[static_cast<std::size_t>((ch * img.h + y) * img.w + x)] = img.at(y, x, ch);
    return t;
}

Image chw_to_image(const Tensor& t) {
    RETC_CHECK(t.ndim() == 3, ErrorKind::Dimension, "chw_to_image: tensor must be [C,H,W]");
    Image img(t.shape[1], t.shape[2], t.shape[0]);
    for (std::int64_t ch = 0; ch < img.c; ++ch)
        for (std::int64_t y = 0; y < img.h; ++y)
            for (std::int64_t x = 0; x < img.w; ++x)
                img.at(y, x, ch) = t.data[static_cast<std::size_t>((ch * img.h + y) * img.w + x)];
    return img;
}

Image load_image(const std::string& path) {
    const auto bytes = read_file(path);
    RETC_CHECK(bytes.size() >= 2, ErrorKind::Io, "file too short: " + path);
    if (bytes[0] == 0x89 && bytes[1] == 'P') {
        try {
            return decode_png(bytes);
        } catch (const Error& e) {
            fail(e.kind(), std::string(e.what()) + ": " + path);
        }
    }
    if (bytes[0] == 'P' && bytes[1] == '6') return load_pnm(bytes, path);
    fail(ErrorKind::Io, "unsupported image format (need PNG or P6 PPM): " + path);
}

void save_image(const Image& img, const std::string& path) {
    RETC_CHECK(img.c == 3, ErrorKind::Usage, "save_image: expected a 3-channel image");
    const auto dot = path.find_last_of('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot);
    if (ext == ".png") {
        const auto bytes = encode_png(img);
        write_file(path, bytes.data(), bytes.size());
        return;
    }
    if (ext == ".ppm") {
        std::string header = "P6\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
        std::vector<std::uint8_t> out(header.begin(), header.end());
        for (std::int64_t y = 0; y < img.h; ++y)
            for (std::int64_t x = 0; x < img.w; ++x)
                for (std::int64_t ch = 0; ch < 3; ++ch) out.push_back(to_byte(img.at(y, x, ch)));
        write_file(path, out.data(), out.size());
        return;
    }
    fail(ErrorKind::Usage, "save_image: unsupported extension '" + ext + "' (use .png or .ppm)");
}

Image load_pgm(const std::string& path) {
    const auto bytes = read_file(path);
    RETC_CHECK(bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5', ErrorKind::Io,
               "not a P5 PGM file: " + path);
    return load_pnm(bytes, path);
}

void save_pgm(const Image& img, const std::string& path) {
    RETC_CHECK(img.c == 1, ErrorKind::Usage, "save_pgm: expected a 1-channel image");
    std::string header = "P5\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    for (std::int64_t y = 0; y < img.h; ++y)
        for (std::int64_t x = 0; x < img.w; ++x) out.push_back(to_byte(img.at(y, x, 0)));
    write_file(path, out.data(), out.size());
}

}  // namespace retc
