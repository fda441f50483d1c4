#include "retc/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>

namespace retc {

namespace {
std::atomic<bool> g_finite_checks{true};
}

void set_finite_checks(bool on) { g_finite_checks.store(on); }
bool finite_checks_enabled() { return g_finite_checks.load(); }

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto e : shape) {
        RETC_CHECK(e > 0, ErrorKind::Dimension, "tensor extents must be positive");
        n *= e;
    }
    return n;
}

Tensor::Tensor(std::vector<std::int64_t> s)
    : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), 0.0) {}

Tensor::Tensor(std::vector<std::int64_t> s, std::vector<Real> d) : shape(std::move(s)), data(std::move(d)) {
    RETC_CHECK(shape_numel(shape) == static_cast<std::int64_t>(data.size()), ErrorKind::Dimension,
               "tensor data length does not match shape");
}

Tensor Tensor::zeros(std::vector<std::int64_t> s) { return Tensor(std::move(s)); }

Tensor Tensor::full(std::vector<std::int64_t> s, Real v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
}

Tensor Tensor::from(std::initializer_list<Real> v) {
    return Tensor({static_cast<std::int64_t>(v.size())}, std::vector<Real>(v));
}

Tensor Tensor::randn(std::vector<std::int64_t> s, Rng& rng, Real stddev) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = rng.normal() * stddev;
    return t;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

void check_finite(const Tensor& t, const char* op) {
    if (!finite_checks_enabled()) return;
    for (Real v : t.data) {
        if (!std::isfinite(v)) {
            fail(ErrorKind::Numeric, std::string(op) + ": non-finite value produced");
        }
    }
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    RETC_CHECK(a.shape == b.shape, ErrorKind::Dimension,
               std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

template <typename F>
Tensor map2(const Tensor& a, const Tensor& b, const char* op, F f) {
    require_same_shape(a, b, op);
    Tensor out(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i], b.data[i]);
    check_finite(out, op);
    return out;
}

template <typename F>
Tensor map1(const Tensor& a, const char* op, F f) {
    Tensor out(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i]);
    check_finite(out, op);
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return map2(a, b, "add", [](Real x, Real y) { return x + y; }); }
Tensor sub(const Tensor& a, const Tensor& b) { return map2(a, b, "sub", [](Real x, Real y) { return x - y; }); }
Tensor mul(const Tensor& a, const Tensor& b) { return map2(a, b, "mul", [](Real x, Real y) { return x * y; }); }
Tensor scale(const Tensor& a, Real c) { return map1(a, "scale", [c](Real x) { return x * c; }); }
Tensor neg(const Tensor& a) { return map1(a, "neg", [](Real x) { return -x; }); }
Tensor abs_val(const Tensor& a) { return map1(a, "abs", [](Real x) { return std::abs(x); }); }
Tensor exp_val(const Tensor& a) { return map1(a, "exp", [](Real x) { return std::exp(x); }); }
Tensor log_val(const Tensor& a) { return map1(a, "log", [](Real x) { return std::log(x); }); }

Tensor gelu(const Tensor& a) {
    // tanh approximation, the usual transformer flavor
    return map1(a, "gelu", [](Real x) {
        const Real c = 0.7978845608028654;  // sqrt(2/pi)
        return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
    });
}

Tensor silu(const Tensor& a) {
    return map1(a, "silu", [](Real x) { return x / (1.0 + std::exp(-x)); });
}

Real sum_all(const Tensor& a) {
    Real s = 0.0;
    for (Real v : a.data) s += v;
    return s;
}

void matmul_acc(const Real* a, const Real* b, Real* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const Real* arow = a + i * k;
        Real* crow = c + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const Real aip = arow[p];
            if (aip == 0.0) continue;
            const Real* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    RETC_CHECK(a.ndim() == 2 && b.ndim() == 2, ErrorKind::Dimension, "matmul: operands must be 2-d");
    RETC_CHECK(a.shape[1] == b.shape[0], ErrorKind::Dimension,
               "matmul: inner dims mismatch " + a.shape_str() + " x " + b.shape_str());
    Tensor out({a.shape[0], b.shape[1]});
    matmul_acc(a.data.data(), b.data.data(), out.data.data(), a.shape[0], a.shape[1], b.shape[1]);
    check_finite(out, "matmul");
    return out;
}

Tensor transpose(const Tensor& a) {
    RETC_CHECK(a.ndim() == 2, ErrorKind::Dimension, "transpose: operand must be 2-d");
    Tensor out({a.shape[1], a.shape[0]});
    for (std::int64_t i = 0; i < a.shape[0]; ++i)
        for (std::int64_t j = 0; j < a.shape[1]; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

Tensor softmax(const Tensor& x) {
    RETC_CHECK(x.ndim() >= 1, ErrorKind::Dimension, "softmax: needs at least one axis");
    const std::int64_t n = x.shape.back();
    const std::int64_t rows = x.numel() / n;
    Tensor out(x.shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        const Real* in = x.data.data() + r * n;
        Real* o = out.data.data() + r * n;
        Real mx = in[0];
        for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
        Real z = 0.0;
        for (std::int64_t j = 0; j < n; ++j) {
            o[j] = std::exp(in[j] - mx);
            z += o[j];
        }
        for (std::int64_t j = 0; j < n; ++j) o[j] /= z;
    }
    check_finite(out, "softmax");
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
    const std::int64_t d = x.shape.back();
    RETC_CHECK(gamma.numel() == d && beta.numel() == d, ErrorKind::Dimension,
               "layer_norm: affine params must have length d");
    const std::int64_t rows = x.numel() / d;
    Tensor out(x.shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        const Real* in = x.data.data() + r * d;
        Real* o = out.data.data() + r * d;
        Real mean = 0.0;
        for (std::int64_t j = 0; j < d; ++j) mean += in[j];
        mean /= static_cast<Real>(d);
        Real var = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            const Real c = in[j] - mean;
            var += c * c;
        }
        var /= static_cast<Real>(d);
        const Real inv = 1.0 / std::sqrt(var + eps);
        for (std::int64_t j = 0; j < d; ++j)
            o[j] = (in[j] - mean) * inv * gamma.data[static_cast<std::size_t>(j)] +
                   beta.data[static_cast<std::size_t>(j)];
    }
    check_finite(out, "layer_norm");
    return out;
}

Tensor group_norm(const Tensor& x, std::int64_t groups, const Tensor& gamma, const Tensor& beta, Real eps) {
    RETC_CHECK(x.ndim() == 2, ErrorKind::Dimension, "group_norm: input must be [L, d]");
    const std::int64_t d = x.shape[1];
    RETC_CHECK(groups > 0 && d % groups == 0, ErrorKind::Dimension,
               "group_norm: feature dim not divisible by groups");
    RETC_CHECK(gamma.numel() == d && beta.numel() == d, ErrorKind::Dimension,
               "group_norm: affine params must have length d");
    const std::int64_t gd = d / groups;
    Tensor out(x.shape);
    for (std::int64_t r = 0; r < x.shape[0]; ++r) {
        for (std::int64_t g = 0; g < groups; ++g) {
            const Real* in = x.data.data() + r * d + g * gd;
            Real* o = out.data.data() + r * d + g * gd;
            Real mean = 0.0;
            for (std::int64_t j = 0; j < gd; ++j) mean += in[j];
            mean /= static_cast<Real>(gd);
            Real var = 0.0;
            for (std::int64_t j = 0; j < gd; ++j) {
                const Real c = in[j] - mean;
                var += c * c;
            }
            var /= static_cast<Real>(gd);
            const Real inv = 1.0 / std::sqrt(var + eps);
            for (std::int64_t j = 0; j < gd; ++j) {
                const std::size_t col = static_cast<std::size_t>(g * gd + j);
                o[j] = (in[j] - mean) * inv * gamma.data[col] + beta.data[col];
            }
        }
    }
    check_finite(out, "group_norm");
    return out;
}

Tensor group_norm_chw(const Tensor& x, std::int64_t groups, const Tensor& gamma, const Tensor& beta, Real eps) {
    RETC_CHECK(x.ndim() == 3, ErrorKind::Dimension, "group_norm_chw: input must be [C,H,W]");
    const std::int64_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
    RETC_CHECK(groups > 0 && c % groups == 0, ErrorKind::Dimension,
               "group_norm_chw: channels not divisible by groups");
    RETC_CHECK(gamma.numel() == c && beta.numel() == c, ErrorKind::Dimension,
               "group_norm_chw: affine params must have length C");
    const std::int64_t gc = c / groups, plane = h * w;
    Tensor out(x.shape);
    for (std::int64_t g = 0; g < groups; ++g) {
        const Real* in = x.data.data() + g * gc * plane;
        Real mean = 0.0;
        for (std::int64_t i = 0; i < gc * plane; ++i) mean += in[i];
        mean /= static_cast<Real>(gc * plane);
        Real var = 0.0;
        for (std::int64_t i = 0; i < gc * plane; ++i) {
            const Real d = in[i] - mean;
            var += d * d;
        }
        var /= static_cast<Real>(gc * plane);
        const Real inv = 1.0 / std::sqrt(var + eps);
        for (std::int64_t ch = 0; ch < gc; ++ch) {
            const std::int64_t cc = g * gc + ch;
            const Real ga = gamma.data[static_cast<std::size_t>(cc)];
            const Real be = beta.data[static_cast<std::size_t>(cc)];
            Real* o = out.data.data() + cc * plane;
            const Real* xin = x.data.data() + cc * plane;
            for (std::int64_t i = 0; i < plane; ++i) o[i] = (xin[i] - mean) * inv * ga + be;
        }
    }
    check_finite(out, "group_norm_chw");
    return out;
}

Tensor im2col(const Tensor& x, std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad,
              std::int64_t hout, std::int64_t wout) {
    const std::int64_t cin = x.shape[0], h = x.shape[1], w = x.shape[2];
    Tensor cols({cin * kh * kw, hout * wout});
    for (std::int64_t c = 0; c < cin; ++c) {
        for (std::int64_t ky = 0; ky < kh; ++ky) {
            for (std::int64_t kx = 0; kx < kw; ++kx) {
                Real* row = cols.data.data() + ((c * kh + ky) * kw + kx) * hout * wout;
                for (std::int64_t oy = 0; oy < hout; ++oy) {
                    const std::int64_t iy = oy * stride + ky - pad;
                    for (std::int64_t ox = 0; ox < wout; ++ox) {
                        const std::int64_t ix = ox * stride + kx - pad;
                        Real v = 0.0;
                        if (iy >= 0 && iy < h && ix >= 0 && ix < w)
                            v = x.data[static_cast<std::size_t>((c * h + iy) * w + ix)];
                        row[oy * wout + ox] = v;
                    }
                }
            }
        }
    }
    return cols;
}

Tensor col2im(const Tensor& cols, std::int64_t cin, std::int64_t h, std::int64_t w, std::int64_t kh,
              std::int64_t kw, std::int64_t stride, std::int64_t pad, std::int64_t hout, std::int64_t wout) {
    Tensor img({cin, h, w});
    for (std::int64_t c = 0; c < cin; ++c) {
        for (std::int64_t ky = 0; ky < kh; ++ky) {
            for (std::int64_t kx = 0; kx < kw; ++kx) {
                const Real* row = cols.data.data() + ((c * kh + ky) * kw + kx) * hout * wout;
                for (std::int64_t oy = 0; oy < hout; ++oy) {
                    const std::int64_t iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    for (std::int64_t ox = 0; ox < wout; ++ox) {
                        const std::int64_t ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= w) continue;
                        img.data[static_cast<std::size_t>((c * h + iy) * w + ix)] += row[oy * wout + ox];
                    }
                }
            }
        }
    }
    return img;
}

Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::int64_t stride, std::int64_t pad) {
    RETC_CHECK(x.ndim() == 3, ErrorKind::Dimension, "conv2d: input must be [Cin,H,W]");
    RETC_CHECK(kernels.ndim() == 4, ErrorKind::Dimension, "conv2d: kernels must be [Cout,Cin,kh,kw]");
    RETC_CHECK(kernels.shape[1] == x.shape[0], ErrorKind::Dimension,
               "conv2d: kernel Cin does not match input channels");
    RETC_CHECK(stride >= 1 && pad >= 0, ErrorKind::Usage, "conv2d: stride must be >=1 and pad >=0");
    const std::int64_t cout = kernels.shape[0], cin = x.shape[0];
    const std::int64_t h = x.shape[1], w = x.shape[2];
    const std::int64_t kh = kernels.shape[2], kw = kernels.shape[3];
    RETC_CHECK(h + 2 * pad >= kh && w + 2 * pad >= kw, ErrorKind::Dimension,
               "conv2d: kernel does not fit padded input");
    RETC_CHECK(bias.numel() == cout, ErrorKind::Dimension, "conv2d: bias must have length Cout");
    const std::int64_t hout = (h + 2 * pad - kh) / stride + 1;
    const std::int64_t wout = (w + 2 * pad - kw) / stride + 1;

    const Tensor cols = im2col(x, kh, kw, stride, pad, hout, wout);
    Tensor out({cout, hout, wout});
    // kernels viewed as [Cout, Cin*kh*kw]
    matmul_acc(kernels.data.data(), cols.data.data(), out.data.data(), cout, cin * kh * kw, hout * wout);
    for (std::int64_t c = 0; c < cout; ++c) {
        Real* plane = out.data.data() + c * hout * wout;
        const Real b = bias.data[static_cast<std::size_t>(c)];
        for (std::int64_t i = 0; i < hout * wout; ++i) plane[i] += b;
    }
    check_finite(out, "conv2d");
    return out;
}

Tensor nearest_upsample2x(const Tensor& x) {
    RETC_CHECK(x.ndim() == 3, ErrorKind::Dimension, "nearest_upsample2x: input must be [C,H,W]");
    const std::int64_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
    Tensor out({c, h * 2, w * 2});
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t y = 0; y < h * 2; ++y)
            for (std::int64_t xx = 0; xx < w * 2; ++xx)
                out.data[static_cast<std::size_t>((ch * h * 2 + y) * w * 2 + xx)] =
                    x.data[static_cast<std::size_t>((ch * h + y / 2) * w + xx / 2)];
    return out;
}

Tensor reverse_rows(const Tensor& x) {
    RETC_CHECK(x.ndim() == 2, ErrorKind::Dimension, "reverse_rows: input must be 2-d");
    Tensor out(x.shape);
    const std::int64_t rows = x.shape[0], d = x.shape[1];
    for (std::int64_t r = 0; r < rows; ++r)
        std::memcpy(out.data.data() + (rows - 1 - r) * d, x.data.data() + r * d,
                    static_cast<std::size_t>(d) * sizeof(Real));
    return out;
}

Tensor slice_cols(const Tensor& x, std::int64_t c0, std::int64_t c1) {
    RETC_CHECK(x.ndim() == 2 && 0 <= c0 && c0 < c1 && c1 <= x.shape[1], ErrorKind::Dimension,
               "slice_cols: bad column range");
    Tensor out({x.shape[0], c1 - c0});
    for (std::int64_t r = 0; r < x.shape[0]; ++r)
        std::memcpy(out.data.data() + r * (c1 - c0), x.data.data() + r * x.shape[1] + c0,
                    static_cast<std::size_t>(c1 - c0) * sizeof(Real));
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    RETC_CHECK(!parts.empty(), ErrorKind::Usage, "concat_cols: empty list");
    const std::int64_t rows = parts[0].shape[0];
    std::int64_t d = 0;
    for (const auto& p : parts) {
        RETC_CHECK(p.ndim() == 2 && p.shape[0] == rows, ErrorKind::Dimension,
                   "concat_cols: row mismatch");
        d += p.shape[1];
    }
    Tensor out({rows, d});
    for (std::int64_t r = 0; r < rows; ++r) {
        std::int64_t off = 0;
        for (const auto& p : parts) {
            std::memcpy(out.data.data() + r * d + off, p.data.data() + r * p.shape[1],
                        static_cast<std::size_t>(p.shape[1]) * sizeof(Real));
            off += p.shape[1];
        }
    }
    return out;
}

Tensor slice_rows(const Tensor& x, std::int64_t r0, std::int64_t r1) {
    RETC_CHECK(x.ndim() == 2 && 0 <= r0 && r0 < r1 && r1 <= x.shape[0], ErrorKind::Dimension,
               "slice_rows: bad row range");
    const std::int64_t d = x.shape[1];
    Tensor out({r1 - r0, d});
    std::memcpy(out.data.data(), x.data.data() + r0 * d,
                static_cast<std::size_t>((r1 - r0) * d) * sizeof(Real));
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    RETC_CHECK(!parts.empty(), ErrorKind::Usage, "concat_rows: empty list");
    const std::int64_t d = parts[0].shape[1];
    std::int64_t rows = 0;
    for (const auto& p : parts) {
        RETC_CHECK(p.ndim() == 2 && p.shape[1] == d, ErrorKind::Dimension, "concat_rows: column mismatch");
        rows += p.shape[0];
    }
    Tensor out({rows, d});
    std::int64_t off = 0;
    for (const auto& p : parts) {
        std::memcpy(out.data.data() + off * d, p.data.data(),
                    static_cast<std::size_t>(p.numel()) * sizeof(Real));
        off += p.shape[0];
    }
    return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<std::int64_t>& idx) {
    RETC_CHECK(table.ndim() == 2, ErrorKind::Dimension, "gather_rows: table must be 2-d");
    const std::int64_t d = table.shape[1];
    Tensor out({static_cast<std::int64_t>(idx.size()), d});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        RETC_CHECK(idx[i] >= 0 && idx[i] < table.shape[0], ErrorKind::Dimension,
                   "gather_rows: index out of range");
        std::memcpy(out.data.data() + static_cast<std::int64_t>(i) * d, table.data.data() + idx[i] * d,
                    static_cast<std::size_t>(d) * sizeof(Real));
    }
    return out;
}

Tensor take_per_row(const Tensor& x, const std::vector<std::int64_t>& idx) {
    RETC_CHECK(x.ndim() == 2 && static_cast<std::int64_t>(idx.size()) == x.shape[0], ErrorKind::Dimension,
               "take_per_row: need one index per row");
    Tensor out({x.shape[0]});
    for (std::int64_t r = 0; r < x.shape[0]; ++r) {
        RETC_CHECK(idx[static_cast<std::size_t>(r)] >= 0 && idx[static_cast<std::size_t>(r)] < x.shape[1],
                   ErrorKind::Dimension, "take_per_row: index out of range");
        out.data[static_cast<std::size_t>(r)] = x.at(r, idx[static_cast<std::size_t>(r)]);
    }
    return out;
}

Tensor row_scale(const Tensor& x, const std::vector<Real>& s) {
    RETC_CHECK(x.ndim() == 2 && static_cast<std::int64_t>(s.size()) == x.shape[0], ErrorKind::Dimension,
               "row_scale: need one scale per row");
    Tensor out(x.shape);
    for (std::int64_t r = 0; r < x.shape[0]; ++r)
        for (std::int64_t c = 0; c < x.shape[1]; ++c) out.at(r, c) = x.at(r, c) * s[static_cast<std::size_t>(r)];
    return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    RETC_CHECK(x.ndim() == 2 && v.numel() == x.shape[1], ErrorKind::Dimension,
               "add_rowvec: vector length must equal column count");
    Tensor out(x.shape);
    for (std::int64_t r = 0; r < x.shape[0]; ++r)
        for (std::int64_t c = 0; c < x.shape[1]; ++c)
            out.at(r, c) = x.at(r, c) + v.data[static_cast<std::size_t>(c)];
    check_finite(out, "add_rowvec");
    return out;
}

namespace {
Tensor rotate_impl(const Tensor& x, const std::vector<Real>& theta, std::int64_t start_pos, Real sign) {
    RETC_CHECK(x.ndim() == 2, ErrorKind::Dimension, "rotate_rows: input must be 2-d");
    const std::int64_t d = x.shape[1];
    const std::int64_t pairs = d / 2;
    RETC_CHECK(static_cast<std::int64_t>(theta.size()) == pairs, ErrorKind::Dimension,
               "rotate_rows: need theta of length floor(d/2)");
    Tensor out = x;
    for (std::int64_t r = 0; r < x.shape[0]; ++r) {
        const Real pos = static_cast<Real>(start_pos + r);
        for (std::int64_t j = 0; j < pairs; ++j) {
            const Real ang = sign * pos * theta[static_cast<std::size_t>(j)];
            const Real c = std::cos(ang), s = std::sin(ang);
            const Real a = x.at(r, 2 * j), b = x.at(r, 2 * j + 1);
            out.at(r, 2 * j) = a * c - b * s;
            out.at(r, 2 * j + 1) = a * s + b * c;
        }
    }
    return out;
}
}  // namespace

Tensor rotate_rows(const Tensor& x, const std::vector<Real>& theta, std::int64_t start_pos) {
    return rotate_impl(x, theta, start_pos, 1.0);
}

Tensor rotate_rows_inverse(const Tensor& x, const std::vector<Real>& theta, std::int64_t start_pos) {
    return rotate_impl(x, theta, start_pos, -1.0);
}

}  // namespace retc
