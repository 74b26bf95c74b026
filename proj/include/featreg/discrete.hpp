#pragma once

#include <span>
#include <vector>

#include "featreg/volume.hpp"

namespace featreg {

/// Control points on a regular grid; point p owns the voxel block
/// [p*g, min((p+1)*g, n)) along each axis.
struct ControlGrid {
  Index spacing = 1;
  Dims dims{};

  static ControlGrid covering(const Dims& volume, Index spacing);
  Index points() const { return dims.voxels(); }
};

/// All q-multiples in [-r, r]^3, ordered by (squared norm, x, y, z) so the
/// first minimum in list order implements the tie-break rule. Index 0 is the
/// zero displacement.
struct CandidateSet {
  Index radius = 0;
  Index quantization = 1;
  std::vector<Eigen::Vector3i> displacements;

  static CandidateSet make(Index radius, Index quantization);
  Index size() const { return static_cast<Index>(displacements.size()); }
  Index index_of(const Eigen::Vector3i& v) const;  ///< -1 if absent
};

/// cost(p, l): mean over the block of p of the channel-summed squared
/// difference between fixed[x] and moving[x + v_l], moving edge-clamped.
struct CostVolume {
  ControlGrid grid;
  CandidateSet candidates;
  std::vector<float> values;  ///< [point][candidate]

  float operator()(Index point, Index label) const {
    return values[static_cast<std::size_t>(point * candidates.size() + label)];
  }
  std::span<const float> costs(Index point) const {
    return {values.data() + point * candidates.size(), static_cast<std::size_t>(candidates.size())};
  }
};

CostVolume build_cost_volume(const FeatureVolume& fixed, const FeatureVolume& moving, const ControlGrid& grid,
                             const CandidateSet& candidates);

/// Coupled convex optimisation over the discrete candidates.
///
/// Iteration t selects per control point
///   v_t(p) = argmin_v cost(p, v) + coupling[t] * |v - m(p)|^2
/// where m is the 6-neighbour mean of the auxiliary field a (m = 0 in the
/// first iteration), then sets a(p) = (v_t(p) + m(p)) / 2, or a(p) = v_1(p)
/// after the first iteration. The returned field is the final selection v_T,
/// so every entry is a member of the candidate set.
DisplacementField<float> coupled_convex(const CostVolume& cost, std::span<const double> coupling);

/// Argmin labels of the final coupled_convex selection (same rule, exposed for
/// diagnostics and tests).
std::vector<Index> coupled_convex_labels(const CostVolume& cost, std::span<const double> coupling);

/// 6-neighbour mean of a field on its own grid; points without neighbours keep
/// their value.
template <typename Scalar>
DisplacementField<Scalar> neighbour_mean(const DisplacementField<Scalar>& field) {
  const Dims& d = field.dims();
  DisplacementField<Scalar> out(d);
  for (Index z = 0; z < d.z; ++z)
    for (Index y = 0; y < d.y; ++y)
      for (Index x = 0; x < d.x; ++x) {
        typename DisplacementField<Scalar>::Vector sum = DisplacementField<Scalar>::Vector::Zero();
        int n = 0;
        const auto add = [&](Index xi, Index yi, Index zi) {
          if (xi < 0 || yi < 0 || zi < 0 || xi >= d.x || yi >= d.y || zi >= d.z) return;
          sum += field(xi, yi, zi);
          ++n;
        };
        add(x - 1, y, z), add(x + 1, y, z), add(x, y - 1, z), add(x, y + 1, z), add(x, y, z - 1), add(x, y, z + 1);
        out(x, y, z) = n ? (sum / Scalar(n)).eval() : field(x, y, z).eval();
      }
  return out;
}

/// Trilinear, corner-aligned densification of a grid field to `target`.
/// Values stay in voxel units of the target volume.
template <typename Scalar>
DisplacementField<Scalar> upsample_field(const DisplacementField<Scalar>& grid, const Dims& target);

/// Adjoint of upsample_field: scatters a dense field back onto a grid of
/// `grid_dims` with the same interpolation weights.
template <typename Scalar>
DisplacementField<Scalar> upsample_field_adjoint(const DisplacementField<Scalar>& dense, const Dims& grid_dims);

/// Sample a dense field at the corner-aligned positions of a `grid_dims` grid.
template <typename Scalar>
DisplacementField<Scalar> restrict_field(const DisplacementField<Scalar>& dense, const Dims& grid_dims);

struct DiscreteParams {
  Index grid_spacing = 4;
  Index radius = 6;
  Index quantization = 2;
  std::vector<double> coupling = {0.0, 0.06, 0.2};
};

/// Stage 1 end to end: cost volume on the covering grid, then coupled_convex.
DisplacementField<float> discrete_register(const FeatureVolume& fixed, const FeatureVolume& moving,
                                           const DiscreteParams& params);

}  // namespace featreg
