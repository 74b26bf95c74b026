#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "featreg/volume.hpp"

namespace featreg {

/// One axis of a clamped linear interpolation stencil.
///
/// Coordinates are clamped to [0, n-1]. `slope_live` is false when the
/// coordinate was clamped, so the sampler has zero derivative there. At an
/// integer coordinate the stencil spans [i, i+1] (right-limit derivative).
struct LinearStencil {
  Index lo = 0;
  Index hi = 0;
  double frac = 0.0;
  bool slope_live = false;

  static LinearStencil make(double p, Index n) {
    LinearStencil s;
    const double top = static_cast<double>(n - 1);
    double q = p;
    s.slope_live = n > 1 && p >= 0.0 && p < top;
    if (!(q > 0.0)) q = 0.0;  // also catches NaN
    if (q > top) q = top;
    const double f = std::floor(q);
    s.lo = std::min<Index>(static_cast<Index>(f), n - 1);
    s.hi = std::min<Index>(s.lo + 1, n - 1);
    s.frac = q - static_cast<double>(s.lo);
    return s;
  }
};

/// Trilinear sample of every channel at continuous voxel coordinate p,
/// edge-clamped. `out` must hold vol.channels() values.
template <typename T, typename Out>
void sample_trilinear(const Volume<T>& vol, const Eigen::Vector3d& p, Out* out) {
  const Dims& d = vol.dims();
  const auto sx = LinearStencil::make(p.x(), d.x);
  const auto sy = LinearStencil::make(p.y(), d.y);
  const auto sz = LinearStencil::make(p.z(), d.z);
  const Index C = vol.channels();
  const double wx[2] = {1.0 - sx.frac, sx.frac};
  const double wy[2] = {1.0 - sy.frac, sy.frac};
  const double wz[2] = {1.0 - sz.frac, sz.frac};
  const Index ix[2] = {sx.lo, sx.hi};
  const Index iy[2] = {sy.lo, sy.hi};
  const Index iz[2] = {sz.lo, sz.hi};
  for (Index c = 0; c < C; ++c) out[c] = Out(0);
  const T* base = vol.data().data();
  for (int k = 0; k < 2; ++k)
    for (int j = 0; j < 2; ++j)
      for (int i = 0; i < 2; ++i) {
        const double w = wx[i] * wy[j] * wz[k];
        if (w == 0.0) continue;
        const T* v = base + vol.linear(ix[i], iy[j], iz[k]) * C;
        for (Index c = 0; c < C; ++c) out[c] += static_cast<Out>(w * static_cast<double>(v[c]));
      }
}

/// Trilinear sample plus its partial derivatives with respect to p.
/// `grad` receives 3*C values laid out [c][axis].
template <typename T>
void sample_trilinear_with_gradient(const Volume<T>& vol, const Eigen::Vector3d& p, double* value,
                                    double* grad) {
  const Dims& d = vol.dims();
  const std::array<LinearStencil, 3> s = {LinearStencil::make(p.x(), d.x), LinearStencil::make(p.y(), d.y),
                                          LinearStencil::make(p.z(), d.z)};
  const Index C = vol.channels();
  for (Index c = 0; c < C; ++c) {
    value[c] = 0.0;
    grad[3 * c] = grad[3 * c + 1] = grad[3 * c + 2] = 0.0;
  }
  const T* base = vol.data().data();
  for (int k = 0; k < 2; ++k)
    for (int j = 0; j < 2; ++j)
      for (int i = 0; i < 2; ++i) {
        const int corner[3] = {i, j, k};
        double w = 1.0;
        double dw[3];
        for (int a = 0; a < 3; ++a) {
          const double wa = corner[a] ? s[a].frac : 1.0 - s[a].frac;
          const double da = s[a].slope_live ? (corner[a] ? 1.0 : -1.0) : 0.0;
          // product rule: dw[a] accumulates the derivative along axis a
          for (int b = 0; b < a; ++b) dw[b] *= wa;
          dw[a] = w * da;
          w *= wa;
        }
        const Index x = corner[0] ? s[0].hi : s[0].lo;
        const Index y = corner[1] ? s[1].hi : s[1].lo;
        const Index z = corner[2] ? s[2].hi : s[2].lo;
        const T* v = base + vol.linear(x, y, z) * C;
        for (Index c = 0; c < C; ++c) {
          const double fv = static_cast<double>(v[c]);
          value[c] += w * fv;
          grad[3 * c] += dw[0] * fv;
          grad[3 * c + 1] += dw[1] * fv;
          grad[3 * c + 2] += dw[2] * fv;
        }
      }
}

/// Nearest-voxel index with edge clamping (round half away from zero).
inline Index nearest_index(double p, Index n) {
  const double r = std::round(p);
  if (!(r > 0.0)) return 0;
  return std::min<Index>(static_cast<Index>(r), n - 1);
}

/// Corner-aligned mapping of output index i in [0,n_out) onto [0, n_in-1].
inline double corner_aligned(Index i, Index n_out, Index n_in) {
  if (n_out <= 1 || n_in <= 1) return 0.0;
  return static_cast<double>(i) * static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1);
}

}  // namespace featreg
