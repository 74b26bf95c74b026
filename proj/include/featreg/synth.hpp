#pragma once

#include <cstdint>

#include "featreg/volume.hpp"

namespace featreg {

inline constexpr std::uint8_t kTissueLabel = 1;
inline constexpr std::uint8_t kLesionLabel = 2;

enum class SynthMode { Warp, Translate, Identical };

struct SynthParams {
  Index size = 64;
  Index channels = 1;
  std::uint64_t seed = 1;
  SynthMode mode = SynthMode::Warp;
  double max_displacement = 6.0;         ///< Warp: peak |u| over the volume
  Eigen::Vector3i shift{4, -2, 2};       ///< Translate: circular shift of the moving volume
  int blobs = 150;
};

/// Phantom pair with known ground truth: fixed(x) = moving(x + truth(x)).
///
/// The moving volume is a sum of Gaussian blobs (one amplitude set per
/// channel). Warp mode evaluates the fixed volume analytically through a
/// smooth sinusoidal displacement; Translate mode circularly shifts the
/// moving volume so moving[x + shift] = fixed[x]. Masks carry a tissue label
/// and a lesion label.
struct SynthPair {
  FeatureVolume fixed;
  FeatureVolume moving;
  LabelMask fixed_mask;
  LabelMask moving_mask;
  DisplacementField<float> truth;
};

SynthPair make_synthetic_pair(const SynthParams& params);

/// Circular shift: out[(x + s) mod n] = in[x].
template <typename T>
Volume<T> circular_shift(const Volume<T>& in, const Eigen::Vector3i& s) {
  const Dims& d = in.dims();
  Volume<T> out(d, in.channels(), in.spacing());
  out.meta() = in.meta();
  const auto wrap = [](Index v, Index n) { return ((v % n) + n) % n; };
  for (Index z = 0; z < d.z; ++z)
    for (Index y = 0; y < d.y; ++y)
      for (Index x = 0; x < d.x; ++x)
        for (Index c = 0; c < in.channels(); ++c)
          out(wrap(x + s.x(), d.x), wrap(y + s.y(), d.y), wrap(z + s.z(), d.z), c) = in(x, y, z, c);
  return out;
}

}  // namespace featreg
