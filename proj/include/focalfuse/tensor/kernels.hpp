// SPDX-License-Identifier: Apache-2.0
#pragma once

// Raw (tape-free) convolution kernels: im2col + register-blocked GEMM.
// Every output element is reduced in a fixed order, independent of tiling
// and of the number of worker threads.

#include <algorithm>
#include <array>
#include <vector>

#include "focalfuse/tensor/parallel.hpp"
#include "focalfuse/tensor/tensor.hpp"

namespace focalfuse::kernels {

/// C(m, n) (+)= sum_p A(m, p) * B(p, n), p ascending.
/// A(m, p) = a[m * a_rs + p * a_cs]; B(p, n) = b[p * ldb + n]; C(m, n) = c[m * ldc + n].
template <class T>
void gemm(Index M, Index N, Index K, const T* a, Index a_rs, Index a_cs, const T* b, Index ldb,
          T* c, Index ldc, bool accumulate) {
  constexpr Index MR = 4;
  constexpr Index NR = 16;
  auto rows = [&](Index r0, Index r1) {
    for (Index i0 = r0; i0 < r1; i0 += MR) {
      const Index mr = std::min(MR, r1 - i0);
      for (Index j0 = 0; j0 < N; j0 += NR) {
        const Index nr = std::min(NR, N - j0);
        if (mr == MR && nr == NR) {
          T acc[MR][NR];
          for (Index i = 0; i < MR; ++i)
            for (Index j = 0; j < NR; ++j) acc[i][j] = accumulate ? c[(i0 + i) * ldc + j0 + j] : T{0};
          const T* a0 = a + (i0 + 0) * a_rs;
          const T* a1 = a + (i0 + 1) * a_rs;
          const T* a2 = a + (i0 + 2) * a_rs;
          const T* a3 = a + (i0 + 3) * a_rs;
          for (Index p = 0; p < K; ++p) {
            const T* brow = b + p * ldb + j0;
            const T w0 = a0[p * a_cs], w1 = a1[p * a_cs], w2 = a2[p * a_cs], w3 = a3[p * a_cs];
            for (Index j = 0; j < NR; ++j) {
              const T bv = brow[j];
              acc[0][j] += w0 * bv;
              acc[1][j] += w1 * bv;
              acc[2][j] += w2 * bv;
              acc[3][j] += w3 * bv;
            }
          }
          for (Index i = 0; i < MR; ++i)
            for (Index j = 0; j < NR; ++j) c[(i0 + i) * ldc + j0 + j] = acc[i][j];
        } else {
          for (Index i = 0; i < mr; ++i) {
            T acc[NR];
            for (Index j = 0; j < nr; ++j) acc[j] = accumulate ? c[(i0 + i) * ldc + j0 + j] : T{0};
            const T* ai = a + (i0 + i) * a_rs;
            for (Index p = 0; p < K; ++p) {
              const T* brow = b + p * ldb + j0;
              const T w = ai[p * a_cs];
              for (Index j = 0; j < nr; ++j) acc[j] += w * brow[j];
            }
            for (Index j = 0; j < nr; ++j) c[(i0 + i) * ldc + j0 + j] = acc[j];
          }
        }
      }
    }
  };
  const Index tiles = (M + MR - 1) / MR;
  parallel_for(tiles, 8, [&](Index t0, Index t1) { rows(t0 * MR, std::min(M, t1 * MR)); });
}

/// Geometry of a grouped 3-D cross-correlation from `in` extents to `out` extents.
struct ConvGeometry {
  Index batch = 1;
  Index in_channels = 1;
  Index out_channels = 1;
  Index groups = 1;
  std::array<Index, 3> in{1, 1, 1};
  std::array<Index, 3> out{1, 1, 1};
  std::array<Index, 3> kernel{1, 1, 1};
  std::array<Index, 3> stride{1, 1, 1};
  std::array<Index, 3> pad{0, 0, 0};

  [[nodiscard]] Index in_numel() const { return in[0] * in[1] * in[2]; }
  [[nodiscard]] Index out_numel() const { return out[0] * out[1] * out[2]; }
  [[nodiscard]] Index kernel_numel() const { return kernel[0] * kernel[1] * kernel[2]; }
  [[nodiscard]] Index in_per_group() const { return in_channels / groups; }
  [[nodiscard]] Index out_per_group() const { return out_channels / groups; }
  /// Reduction length per output element.
  [[nodiscard]] Index patch() const { return in_per_group() * kernel_numel(); }
  [[nodiscard]] bool pointwise() const {
    return kernel == std::array<Index, 3>{1, 1, 1} && stride == std::array<Index, 3>{1, 1, 1} &&
           pad == std::array<Index, 3>{0, 0, 0} && in == out;
  }
  [[nodiscard]] bool depthwise() const { return in_per_group() == 1 && out_per_group() == 1 && groups > 1; }
  /// Output voxels per im2col block: whole z-lines, sized to keep the block cache-resident.
  [[nodiscard]] Index block() const {
    const Index target = (Index{1} << 17) / std::max<Index>(1, patch());
    const Index lines = std::max<Index>(1, target / out[2]);
    return std::min(out_numel(), lines * out[2]);
  }
};

/// Visits the output z-lines of block [n0, n0 + nb) (the block starts and ends on
/// line boundaries): fn(j_offset, ow, oh).
template <class Fn>
void for_each_line(const ConvGeometry& g, Index n0, Index nb, Fn&& fn) {
  const Index oz_n = g.out[2];
  for (Index line = n0 / oz_n, j = 0; j < nb; ++line, j += oz_n) fn(j, line / g.out[1], line % g.out[1]);
}

/// col[r][j] for rows r = (ci, kw, kh, kz) and output voxels n0 + j.
template <class T>
void im2col(const ConvGeometry& g, const T* x, Index n0, Index nb, T* col) {
  const Index cin = g.in_per_group();
  const auto [iw_n, ih_n, iz_n] = g.in;
  const Index oz_n = g.out[2];
  const Index sz = g.stride[2];
  for (Index ci = 0; ci < cin; ++ci) {
    const T* xc = x + ci * g.in_numel();
    for (Index kw = 0; kw < g.kernel[0]; ++kw)
      for (Index kh = 0; kh < g.kernel[1]; ++kh)
        for (Index kz = 0; kz < g.kernel[2]; ++kz) {
          const Index r = ((ci * g.kernel[0] + kw) * g.kernel[1] + kh) * g.kernel[2] + kz;
          // Valid oz range: 0 <= oz * sz - pad + kz < iz_n.
          const Index shift = kz - g.pad[2];
          const Index z0 = std::clamp<Index>((-shift + sz - 1) / sz, 0, oz_n);
          const Index z1 = std::clamp<Index>((iz_n - shift + sz - 1) / sz, z0, oz_n);
          for_each_line(g, n0, nb, [&](Index j, Index ow, Index oh) {
            T* dst = col + r * nb + j;
            const Index iw = ow * g.stride[0] - g.pad[0] + kw;
            const Index ih = oh * g.stride[1] - g.pad[1] + kh;
            if (iw < 0 || iw >= iw_n || ih < 0 || ih >= ih_n) {
              std::fill_n(dst, oz_n, T{0});
              return;
            }
            const T* src = xc + (iw * ih_n + ih) * iz_n;
            std::fill(dst, dst + z0, T{0});
            if (sz == 1) {
              std::copy(src + z0 + shift, src + z1 + shift, dst + z0);
            } else {
              for (Index oz = z0; oz < z1; ++oz) dst[oz] = src[oz * sz + shift];
            }
            std::fill(dst + z1, dst + oz_n, T{0});
          });
        }
  }
}

/// Scatter-add of col rows back into the (group-local) input gradient.
template <class T>
void col2im(const ConvGeometry& g, const T* col, Index n0, Index nb, T* dx) {
  const Index cin = g.in_per_group();
  const auto [iw_n, ih_n, iz_n] = g.in;
  const Index oz_n = g.out[2];
  const Index sz = g.stride[2];
  for (Index ci = 0; ci < cin; ++ci) {
    T* dxc = dx + ci * g.in_numel();
    for (Index kw = 0; kw < g.kernel[0]; ++kw)
      for (Index kh = 0; kh < g.kernel[1]; ++kh)
        for (Index kz = 0; kz < g.kernel[2]; ++kz) {
          const Index r = ((ci * g.kernel[0] + kw) * g.kernel[1] + kh) * g.kernel[2] + kz;
          const Index shift = kz - g.pad[2];
          const Index z0 = std::clamp<Index>((-shift + sz - 1) / sz, 0, oz_n);
          const Index z1 = std::clamp<Index>((iz_n - shift + sz - 1) / sz, z0, oz_n);
          for_each_line(g, n0, nb, [&](Index j, Index ow, Index oh) {
            const T* src = col + r * nb + j;
            const Index iw = ow * g.stride[0] - g.pad[0] + kw;
            const Index ih = oh * g.stride[1] - g.pad[1] + kh;
            if (iw < 0 || iw >= iw_n || ih < 0 || ih >= ih_n) return;
            T* dst = dxc + (iw * ih_n + ih) * iz_n;
            for (Index oz = z0; oz < z1; ++oz) dst[oz * sz + shift] += src[oz];
          });
        }
  }
}

/// Direct kernels for depthwise geometry (one input and one output channel per
/// group), where im2col would dominate. Taps are applied in the same ascending
/// order as the GEMM path.
template <class Fn>
void for_each_tap_line(const ConvGeometry& g, Fn&& fn) {
  const auto [iw_n, ih_n, iz_n] = g.in;
  const Index sz = g.stride[2];
  Index tap = 0;
  for (Index kw = 0; kw < g.kernel[0]; ++kw)
    for (Index kh = 0; kh < g.kernel[1]; ++kh)
      for (Index kz = 0; kz < g.kernel[2]; ++kz, ++tap) {
        const Index shift = kz - g.pad[2];
        const Index z0 = std::clamp<Index>((-shift + sz - 1) / sz, 0, g.out[2]);
        const Index z1 = std::clamp<Index>((iz_n - shift + sz - 1) / sz, z0, g.out[2]);
        for (Index ow = 0; ow < g.out[0]; ++ow) {
          const Index iw = ow * g.stride[0] - g.pad[0] + kw;
          if (iw < 0 || iw >= iw_n) continue;
          for (Index oh = 0; oh < g.out[1]; ++oh) {
            const Index ih = oh * g.stride[1] - g.pad[1] + kh;
            if (ih < 0 || ih >= ih_n) continue;
            fn(tap, (ow * g.out[1] + oh) * g.out[2], (iw * ih_n + ih) * iz_n, shift, z0, z1);
          }
        }
      }
}

template <class T>
void depthwise_forward(const ConvGeometry& g, const T* x, const T* w, T* y) {
  const Index kvol = g.kernel_numel();
  const Index sz = g.stride[2];
  for (Index p = 0; p < g.batch * g.out_channels; ++p) {
    const Index c = p % g.out_channels;
    const T* xp = x + p * g.in_numel();
    T* yp = y + p * g.out_numel();
    std::fill_n(yp, g.out_numel(), T{0});
    for_each_tap_line(g, [&](Index tap, Index yo, Index xo, Index shift, Index z0, Index z1) {
      const T wt = w[c * kvol + tap];
      T* yr = yp + yo;
      const T* xr = xp + xo + shift;
      if (sz == 1) {
        for (Index oz = z0; oz < z1; ++oz) yr[oz] += wt * xr[oz];
      } else {
        for (Index oz = z0; oz < z1; ++oz) yr[oz] += wt * xr[oz * sz];
      }
    });
  }
}

template <class T>
void depthwise_backward_data(const ConvGeometry& g, const T* dy, const T* w, T* dx) {
  const Index kvol = g.kernel_numel();
  const Index sz = g.stride[2];
  for (Index p = 0; p < g.batch * g.out_channels; ++p) {
    const Index c = p % g.out_channels;
    T* dxp = dx + p * g.in_numel();
    const T* dyp = dy + p * g.out_numel();
    for_each_tap_line(g, [&](Index tap, Index yo, Index xo, Index shift, Index z0, Index z1) {
      const T wt = w[c * kvol + tap];
      const T* dyr = dyp + yo;
      T* dxr = dxp + xo + shift;
      if (sz == 1) {
        for (Index oz = z0; oz < z1; ++oz) dxr[oz] += wt * dyr[oz];
      } else {
        for (Index oz = z0; oz < z1; ++oz) dxr[oz * sz] += wt * dyr[oz];
      }
    });
  }
}

template <class T>
void depthwise_backward_weight(const ConvGeometry& g, const T* x, const T* dy, T* dw) {
  const Index kvol = g.kernel_numel();
  const Index sz = g.stride[2];
  constexpr Index L = 8;
  std::vector<T> lanes(static_cast<std::size_t>(kvol * L));
  for (Index c = 0; c < g.out_channels; ++c) {
    std::fill(lanes.begin(), lanes.end(), T{0});
    for (Index b = 0; b < g.batch; ++b) {
      const Index p = b * g.out_channels + c;
      const T* xp = x + p * g.in_numel();
      const T* dyp = dy + p * g.out_numel();
      for_each_tap_line(g, [&](Index tap, Index yo, Index xo, Index shift, Index z0, Index z1) {
        T* acc = lanes.data() + tap * L;
        const T* dyr = dyp + yo;
        const T* xr = xp + xo + shift;
        Index oz = z0;
        if (sz == 1) {
          for (; oz + L <= z1; oz += L)
            for (Index t = 0; t < L; ++t) acc[t] += dyr[oz + t] * xr[oz + t];
        }
        for (; oz < z1; ++oz) acc[0] += dyr[oz] * xr[oz * sz];
      });
    }
    for (Index tap = 0; tap < kvol; ++tap) {
      T s{0};
      for (Index t = 0; t < L; ++t) s += lanes[static_cast<std::size_t>(tap * L + t)];
      dw[c * kvol + tap] += s;
    }
  }
}

/// y = conv(x, w). y is overwritten; bias is not applied here.
/// x: [B, Cin, in], w: [Cout, Cin/groups, kernel], y: [B, Cout, out].
template <class T>
void conv_forward(const ConvGeometry& g, const T* x, const T* w, T* y) {
  if (g.depthwise()) return depthwise_forward(g, x, w, y);
  const Index n_out = g.out_numel();
  const Index cout_g = g.out_per_group();
  const Index patch = g.patch();
  std::vector<T> col;
  for (Index b = 0; b < g.batch; ++b) {
    for (Index grp = 0; grp < g.groups; ++grp) {
      const T* xg = x + (b * g.in_channels + grp * g.in_per_group()) * g.in_numel();
      const T* wg = w + grp * cout_g * patch;
      T* yg = y + (b * g.out_channels + grp * cout_g) * n_out;
      if (g.pointwise()) {
        gemm<T>(cout_g, n_out, patch, wg, patch, 1, xg, n_out, yg, n_out, false);
        continue;
      }
      const Index nb_max = g.block();
      col.resize(static_cast<std::size_t>(patch * nb_max));
      for (Index n0 = 0; n0 < n_out; n0 += nb_max) {
        const Index nb = std::min(nb_max, n_out - n0);
        im2col(g, xg, n0, nb, col.data());
        gemm<T>(cout_g, nb, patch, wg, patch, 1, col.data(), nb, yg + n0, n_out, false);
      }
    }
  }
}

/// dx += conv^T(dy, w).
template <class T>
void conv_backward_data(const ConvGeometry& g, const T* dy, const T* w, T* dx) {
  if (g.depthwise()) return depthwise_backward_data(g, dy, w, dx);
  const Index n_out = g.out_numel();
  const Index cout_g = g.out_per_group();
  const Index patch = g.patch();
  std::vector<T> col;
  for (Index b = 0; b < g.batch; ++b) {
    for (Index grp = 0; grp < g.groups; ++grp) {
      T* dxg = dx + (b * g.in_channels + grp * g.in_per_group()) * g.in_numel();
      const T* wg = w + grp * cout_g * patch;
      const T* dyg = dy + (b * g.out_channels + grp * cout_g) * n_out;
      if (g.pointwise()) {
        gemm<T>(patch, n_out, cout_g, wg, 1, patch, dyg, n_out, dxg, n_out, true);
        continue;
      }
      const Index nb_max = g.block();
      col.resize(static_cast<std::size_t>(patch * nb_max));
      for (Index n0 = 0; n0 < n_out; n0 += nb_max) {
        const Index nb = std::min(nb_max, n_out - n0);
        gemm<T>(patch, nb, cout_g, wg, 1, patch, dyg + n0, n_out, col.data(), nb, false);
        col2im(g, col.data(), n0, nb, dxg);
      }
    }
  }
}

/// dw += dy (x) im2col(x)^T, reduced over batch then voxel blocks in order.
template <class T>
void conv_backward_weight(const ConvGeometry& g, const T* x, const T* dy, T* dw) {
  if (g.depthwise()) return depthwise_backward_weight(g, x, dy, dw);
  const Index n_out = g.out_numel();
  const Index cout_g = g.out_per_group();
  const Index patch = g.patch();
  const Index nb_max = g.block();
  std::vector<T> col(static_cast<std::size_t>(patch * nb_max));
  std::vector<T> col_t(col.size());
  for (Index b = 0; b < g.batch; ++b) {
    for (Index grp = 0; grp < g.groups; ++grp) {
      const T* xg = x + (b * g.in_channels + grp * g.in_per_group()) * g.in_numel();
      const T* dyg = dy + (b * g.out_channels + grp * cout_g) * n_out;
      T* dwg = dw + grp * cout_g * patch;
      for (Index n0 = 0; n0 < n_out; n0 += nb_max) {
        const Index nb = std::min(nb_max, n_out - n0);
        if (g.pointwise()) {
          for (Index r = 0; r < patch; ++r)
            for (Index j = 0; j < nb; ++j) col_t[j * patch + r] = xg[r * n_out + n0 + j];
        } else {
          im2col(g, xg, n0, nb, col.data());
          for (Index r = 0; r < patch; ++r)
            for (Index j = 0; j < nb; ++j) col_t[j * patch + r] = col[r * nb + j];
        }
        gemm<T>(cout_g, patch, nb, dyg + n0, n_out, 1, col_t.data(), patch, dwg, patch, true);
      }
    }
  }
}

}  // namespace focalfuse::kernels
