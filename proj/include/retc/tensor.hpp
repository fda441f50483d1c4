#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "retc/common.hpp"
#include "retc/rng.hpp"

namespace retc {

// Dense row-major N-d array of Real. Plain value semantics; no views.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<Real> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> s);
    Tensor(std::vector<std::int64_t> s, std::vector<Real> d);

    static Tensor zeros(std::vector<std::int64_t> s);
    static Tensor full(std::vector<std::int64_t> s, Real v);
    static Tensor from(std::initializer_list<Real> v);
    static Tensor randn(std::vector<std::int64_t> s, Rng& rng, Real stddev = 1.0);

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    std::int64_t ndim() const { return static_cast<std::int64_t>(shape.size()); }
    std::int64_t dim(std::int64_t i) const { return shape[static_cast<std::size_t>(i)]; }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    std::string shape_str() const;

    // 2-d accessors (rows x cols).
    Real& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * shape[1] + c)]; }
    Real at(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * shape[1] + c)]; }
};

std::int64_t shape_numel(const std::vector<std::int64_t>& shape);

// Raises a numeric error if any entry is non-finite (when checks enabled).
void check_finite(const Tensor& t, const char* op);

// ---- elementwise / linear algebra kernels (pure, value level) ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real c);
Tensor neg(const Tensor& a);
Tensor abs_val(const Tensor& a);
Tensor exp_val(const Tensor& a);
Tensor log_val(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor silu(const Tensor& a);
Real sum_all(const Tensor& a);

// c[m,n] = a[m,k] * b[k,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// Low-level: c[m,n] += a[m,k] * b[k,n]
void matmul_acc(const Real* a, const Real* b, Real* c, std::int64_t m,
                std::int64_t k, std::int64_t n);
Tensor transpose(const Tensor& a);

// x[..., n]: softmax over the last axis. Shift-invariant implementation.
Tensor softmax(const Tensor& x);

// Per-last-axis normalization. gamma/beta have length d = last extent.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps);

// x[L, d] with d divisible by groups; normalizes each (row, group) slice.
Tensor group_norm(const Tensor& x, std::int64_t groups, const Tensor& gamma,
                  const Tensor& beta, Real eps);

// x[C, H, W]; per-group statistics over (channels-in-group, H, W); per-channel affine.
Tensor group_norm_chw(const Tensor& x, std::int64_t groups, const Tensor& gamma,
                      const Tensor& beta, Real eps);

// x[Cin,H,W], kernels[Cout,Cin,kh,kw]; cross-correlation with zero padding.
Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias,
              std::int64_t stride, std::int64_t pad);

// im2col for the conv above: result [Cin*kh*kw, Hout*Wout].
Tensor im2col(const Tensor& x, std::int64_t kh, std::int64_t kw,
              std::int64_t stride, std::int64_t pad, std::int64_t hout,
              std::int64_t wout);
// Adjoint of im2col: scatters cols back into an image of shape [Cin,H,W].
Tensor col2im(const Tensor& cols, std::int64_t cin, std::int64_t h, std::int64_t w,
              std::int64_t kh, std::int64_t kw, std::int64_t stride,
              std::int64_t pad, std::int64_t hout, std::int64_t wout);

// [C,H,W] -> [C,2H,2W] nearest-neighbor.
Tensor nearest_upsample2x(const Tensor& x);

// Row utilities for [L, d] matrices.
Tensor reverse_rows(const Tensor& x);
Tensor slice_cols(const Tensor& x, std::int64_t c0, std::int64_t c1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::int64_t r0, std::int64_t r1);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& table, const std::vector<std::int64_t>& idx);
// v[i] = x[i, idx[i]]
Tensor take_per_row(const Tensor& x, const std::vector<std::int64_t>& idx);
// out[i, :] = x[i, :] * s[i]
Tensor row_scale(const Tensor& x, const std::vector<Real>& s);
// out[i, :] = x[i, :] + v[:]
Tensor add_rowvec(const Tensor& x, const Tensor& v);

// Pairwise 2-d rotation of each row: row index i is rotated by angle
// (start_pos + i) * theta[j] on dims (2j, 2j+1); a trailing odd dim passes
// through. Used for xPos-style keys/queries.
Tensor rotate_rows(const Tensor& x, const std::vector<Real>& theta,
                   std::int64_t start_pos);
// Adjoint (rotation by the negated angles).
Tensor rotate_rows_inverse(const Tensor& x, const std::vector<Real>& theta,
                           std::int64_t start_pos);

}  // namespace retc
