#include "retc/palette.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include "retc/rng.hpp"

namespace retc {

namespace {

Real dist2(const Rgb& a, const Rgb& b) {
    const Real d0 = a[0] - b[0], d1 = a[1] - b[1], d2 = a[2] - b[2];
    return d0 * d0 + d1 * d1 + d2 * d2;
}

Rgb snap_rgb(const Rgb& c) { return {snap_f32(c[0]), snap_f32(c[1]), snap_f32(c[2])}; }

}  // namespace

Palette fit_kmeans(const std::vector<Rgb>& pixels, std::int64_t k, int max_iters,
                   std::uint64_t seed, KMeansStats* stats) {
    RETC_CHECK(k >= 1, ErrorKind::Usage, "fit_kmeans: k must be >= 1");
    RETC_CHECK(!pixels.empty(), ErrorKind::Usage, "fit_kmeans: empty pixel set");

    {
        std::set<Rgb> distinct(pixels.begin(), pixels.end());
        RETC_CHECK(static_cast<std::int64_t>(distinct.size()) >= k, ErrorKind::Vocabulary,
                   "fit_kmeans: corpus has " + std::to_string(distinct.size()) +
                       " distinct colors, need at least k=" + std::to_string(k));
    }

    Rng rng = make_rng(seed, "palette");
    const std::size_t n = pixels.size();

    // k-means++ seeding
    std::vector<Rgb> centers;
    centers.reserve(static_cast<std::size_t>(k));
    centers.push_back(pixels[rng.uniform_int(n)]);
    std::vector<Real> best_d(n);
    while (static_cast<std::int64_t>(centers.size()) < k) {
        Real total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            Real d = std::numeric_limits<Real>::max();
            for (const auto& c : centers) d = std::min(d, dist2(pixels[i], c));
            best_d[i] = d;
            total += d;
        }
        if (total <= 0.0) {
            // all points coincide with existing centers; pick any unseen color
            for (std::size_t i = 0; i < n; ++i) {
                if (std::find(centers.begin(), centers.end(), pixels[i]) == centers.end()) {
                    centers.push_back(pixels[i]);
                    break;
                }
            }
            continue;
        }
        Real target = rng.uniform01() * total;
        std::size_t pick = n - 1;
        Real acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            acc += best_d[i];
            if (acc >= target) {
                pick = i;
                break;
            }
        }
        centers.push_back(pixels[pick]);
    }

    // Lloyd iterations
    std::vector<std::int64_t> assign(n, 0);
    Real prev_inertia = std::numeric_limits<Real>::max();
    int iters = 0;
    for (int it = 0; it < max_iters; ++it) {
        Real inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            Real best = std::numeric_limits<Real>::max();
            std::int64_t bj = 0;
            for (std::int64_t j = 0; j < k; ++j) {
                const Real d = dist2(pixels[i], centers[static_cast<std::size_t>(j)]);
                if (d < best) {
                    best = d;
                    bj = j;
                }
            }
            assign[i] = bj;
            inertia += best;
        }
        if (stats) stats->inertia_per_iter.push_back(inertia);
        iters = it + 1;

        std::vector<Rgb> sums(static_cast<std::size_t>(k), {0.0, 0.0, 0.0});
        std::vector<std::int64_t> counts(static_cast<std::size_t>(k), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto j = static_cast<std::size_t>(assign[i]);
            sums[j][0] += pixels[i][0];
            sums[j][1] += pixels[i][1];
            sums[j][2] += pixels[i][2];
            counts[j]++;
        }
        for (std::int64_t j = 0; j < k; ++j) {
            const auto ji = static_cast<std::size_t>(j);
            if (counts[ji] == 0) {
                // reseed an empty cluster to the point farthest from its centroid
                std::size_t far_i = 0;
                Real far_d = -1.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const Real d = dist2(pixels[i], centers[static_cast<std::size_t>(assign[i])]);
                    if (d > far_d) {
                        far_d = d;
                        far_i = i;
                    }
                }
                centers[ji] = pixels[far_i];
            } else {
                centers[ji] = {sums[ji][0] / static_cast<Real>(counts[ji]),
                               sums[ji][1] / static_cast<Real>(counts[ji]),
                               sums[ji][2] / static_cast<Real>(counts[ji])};
            }
        }
        if (inertia >= prev_inertia - 1e-15) break;  // converged
        prev_inertia = inertia;
    }
    if (stats) stats->iters = iters;

    Palette p;
    p.centroids.reserve(static_cast<std::size_t>(k));
    for (const auto& c : centers) p.centroids.push_back(snap_rgb(c));
    std::sort(p.centroids.begin(), p.centroids.end());

    // Distinctness is an invariant of the vocabulary; duplicates can only
    // arise from degenerate input after float32 snapping.
    for (std::size_t i = 1; i < p.centroids.size(); ++i) {
        RETC_CHECK(p.centroids[i] != p.centroids[i - 1], ErrorKind::Vocabulary,
                   "fit_kmeans: duplicate centroids after convergence; reduce k");
    }
    return p;
}

std::int64_t quantize_one(const Rgb& px, const Palette& p) {
    RETC_CHECK(p.k() >= 1, ErrorKind::Usage, "quantize: palette is empty");
    Real best = std::numeric_limits<Real>::max();
    std::int64_t bj = 0;
    for (std::int64_t j = 0; j < p.k(); ++j) {
        const Real d = dist2(px, p.centroids[static_cast<std::size_t>(j)]);
        if (d < best) {  // strict: ties keep the lowest index
            best = d;
            bj = j;
        }
    }
    return bj;
}

std::vector<std::int64_t> quantize(const Image& img, const Palette& p) {
    RETC_CHECK(img.c == 3, ErrorKind::Usage, "quantize: expected a 3-channel image");
    std::vector<std::int64_t> out(static_cast<std::size_t>(img.h * img.w));
    for (std::int64_t y = 0; y < img.h; ++y)
        for (std::int64_t x = 0; x < img.w; ++x)
            out[static_cast<std::size_t>(y * img.w + x)] =
                quantize_one({img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)}, p);
    return out;
}

Image dequantize(const std::vector<std::int64_t>& tokens, std::int64_t side, const Palette& p) {
    RETC_CHECK(static_cast<std::int64_t>(tokens.size()) == side * side, ErrorKind::Dimension,
               "dequantize: token count must equal side^2");
    Image img(side, side, 3);
    for (std::int64_t i = 0; i < side * side; ++i) {
        const std::int64_t t = tokens[static_cast<std::size_t>(i)];
        RETC_CHECK(t >= 0 && t < p.k(), ErrorKind::Vocabulary,
                   "dequantize: token " + std::to_string(t) + " outside palette of size " +
                       std::to_string(p.k()));
        const Rgb& c = p.centroids[static_cast<std::size_t>(t)];
        for (std::int64_t ch = 0; ch < 3; ++ch)
            img.data[static_cast<std::size_t>(i * 3 + ch)] = c[static_cast<std::size_t>(ch)];
    }
    return img;
}

std::vector<std::uint8_t> serialize_palette(const Palette& p) {
    std::vector<std::uint8_t> out;
    const char magic[6] = {'R', 'C', 'P', 'A', 'L', '1'};
    out.insert(out.end(), magic, magic + 6);
    const auto k = static_cast<std::uint32_t>(p.k());
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((k >> (8 * i)) & 0xff));
    for (const auto& c : p.centroids) {
        for (int ch = 0; ch < 3; ++ch) {
            const float f = static_cast<float>(c[static_cast<std::size_t>(ch)]);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
        }
    }
    return out;
}

Palette deserialize_palette(const std::vector<std::uint8_t>& b) {
    RETC_CHECK(b.size() >= 10 && std::memcmp(b.data(), "RCPAL1", 6) == 0, ErrorKind::Io,
               "not a palette file (bad magic)");
    std::uint32_t k = 0;
    for (int i = 0; i < 4; ++i) k |= static_cast<std::uint32_t>(b[6 + i]) << (8 * i);
    RETC_CHECK(b.size() == 10 + static_cast<std::size_t>(k) * 12, ErrorKind::Io,
               "palette file truncated");
    Palette p;
    p.centroids.resize(k);
    for (std::uint32_t j = 0; j < k; ++j) {
        for (int ch = 0; ch < 3; ++ch) {
            std::uint32_t bits = 0;
            for (int i = 0; i < 4; ++i)
                bits |= static_cast<std::uint32_t>(b[10 + j * 12 + ch * 4 + i]) << (8 * i);
            float f;
            std::memcpy(&f, &bits, 4);
            p.centroids[j][static_cast<std::size_t>(ch)] = static_cast<Real>(f);
        }
    }
    return p;
}

void save_palette(const Palette& p, const std::string& path) {
    const auto bytes = serialize_palette(p);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    RETC_CHECK(out.good(), ErrorKind::Io, "cannot open palette file for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    RETC_CHECK(out.good(), ErrorKind::Io, "palette write failed: " + path);
}

Palette load_palette(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    RETC_CHECK(in.good(), ErrorKind::Io, "cannot open palette file: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_palette(bytes);
}

std::string palette_hash(const Palette& p) {
    const auto bytes = serialize_palette(p);
    const std::uint64_t h = fnv1a64(bytes.data(), bytes.size());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

std::vector<Rgb> collect_pixels(const std::vector<Image>& images) {
    std::vector<Rgb> out;
    for (const auto& img : images) {
        RETC_CHECK(img.c == 3, ErrorKind::Usage, "collect_pixels: expected 3-channel images");
        for (std::int64_t i = 0; i < img.h * img.w; ++i)
            out.push_back({img.data[static_cast<std::size_t>(i * 3)],
                           img.data[static_cast<std::size_t>(i * 3 + 1)],
                           img.data[static_cast<std::size_t>(i * 3 + 2)]});
    }
    return out;
}

}  // namespace retc
