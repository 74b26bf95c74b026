#include "featreg/preprocess.hpp"

#include <cmath>

#include "featreg/parallel.hpp"
#include "featreg/sampling.hpp"

namespace featreg {
namespace {

template <typename T>
Volume<T> resample_impl(const Volume<T>& vol, double target) {
  if (!(target > 0.0) || !std::isfinite(target))
    throw Error(ErrorCode::InvalidArgument, "target spacing must be positive");
  const Dims& in = vol.dims();
  const Eigen::Vector3d& sp = vol.spacing();
  const Dims out{static_cast<Index>(std::llround(in.x * sp.x() / target)),
                 static_cast<Index>(std::llround(in.y * sp.y() / target)),
                 static_cast<Index>(std::llround(in.z * sp.z() / target))};
  if (out.x < 1 || out.y < 1 || out.z < 1)
    throw Error(ErrorCode::DegenerateVolume, "resampling " + to_string(in) + " would produce " + to_string(out));
  if (out == in && (sp.array() == target).all()) return vol;

  Volume<T> res(out, vol.channels(), Eigen::Vector3d::Constant(target));
  res.meta() = vol.meta();
  const Eigen::Vector3d scale = Eigen::Vector3d::Constant(target).cwiseQuotient(sp);
  const Index C = vol.channels();
  parallel_for(out.z, [&](Index z) {
    std::vector<double> buf(static_cast<std::size_t>(C));
    for (Index y = 0; y < out.y; ++y)
      for (Index x = 0; x < out.x; ++x) {
        const Eigen::Vector3d p = Eigen::Vector3d(double(x), double(y), double(z)).cwiseProduct(scale);
        if constexpr (std::is_floating_point_v<T>) {
          sample_trilinear(vol, p, buf.data());
          for (Index c = 0; c < C; ++c) res(x, y, z, c) = static_cast<T>(buf[c]);
        } else {
          const Index sx = nearest_index(p.x(), in.x), sy = nearest_index(p.y(), in.y), sz = nearest_index(p.z(), in.z);
          for (Index c = 0; c < C; ++c) res(x, y, z, c) = vol(sx, sy, sz, c);
        }
      }
  });
  return res;
}

template <typename T>
Volume<T> pad_impl(const Volume<T>& vol, Index size, T fill) {
  const Dims& d = vol.dims();
  const Dims off = cube_offsets(d, size);
  Volume<T> out({size, size, size}, vol.channels(), vol.spacing(), fill);
  out.meta() = vol.meta();
  const Index C = vol.channels();
  for (Index z = 0; z < d.z; ++z)
    for (Index y = 0; y < d.y; ++y)
      for (Index x = 0; x < d.x; ++x)
        for (Index c = 0; c < C; ++c) out(x + off.x, y + off.y, z + off.z, c) = vol(x, y, z, c);
  return out;
}

}  // namespace

Dims cube_offsets(const Dims& d, Index size) {
  if (size < d.x || size < d.y || size < d.z)
    throw Error(ErrorCode::SizeTooSmall, "cube size " + std::to_string(size) + " smaller than " + to_string(d));
  return {(size - d.x) / 2, (size - d.y) / 2, (size - d.z) / 2};
}

FeatureVolume resample_isotropic(const FeatureVolume& vol, double target) { return resample_impl(vol, target); }
LabelMask resample_isotropic(const LabelMask& mask, double target) { return resample_impl(mask, target); }

FeatureVolume pad_to_cube(const FeatureVolume& vol, Index size, float fill) { return pad_impl(vol, size, fill); }
LabelMask pad_to_cube(const LabelMask& mask, Index size, std::uint8_t fill) { return pad_impl(mask, size, fill); }

}  // namespace featreg
