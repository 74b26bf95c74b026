#include "featreg/discrete.hpp"

#include <algorithm>
#include <limits>
#include <tuple>

#include "featreg/parallel.hpp"
#include "featreg/sampling.hpp"

namespace featreg {

ControlGrid ControlGrid::covering(const Dims& volume, Index spacing) {
  if (spacing < 1) throw Error(ErrorCode::InvalidArgument, "control grid spacing must be >= 1");
  const auto cells = [&](Index n) { return (n + spacing - 1) / spacing; };
  ControlGrid g{spacing, {cells(volume.x), cells(volume.y), cells(volume.z)}};
  if (g.points() < 1) throw Error(ErrorCode::DegenerateVolume, "empty control grid for " + to_string(volume));
  return g;
}

CandidateSet CandidateSet::make(Index radius, Index quantization) {
  if (radius < 0 || quantization < 1 || radius % quantization != 0)
    throw Error(ErrorCode::InvalidArgument, "search radius " + std::to_string(radius) +
                                                " must be a nonnegative multiple of quantization " +
                                                std::to_string(quantization));
  CandidateSet s{radius, quantization, {}};
  const int r = static_cast<int>(radius), q = static_cast<int>(quantization);
  for (int x = -r; x <= r; x += q)
    for (int y = -r; y <= r; y += q)
      for (int z = -r; z <= r; z += q) s.displacements.emplace_back(x, y, z);
  std::sort(s.displacements.begin(), s.displacements.end(), [](const Eigen::Vector3i& a, const Eigen::Vector3i& b) {
    return std::make_tuple(a.squaredNorm(), a.x(), a.y(), a.z()) < std::make_tuple(b.squaredNorm(), b.x(), b.y(), b.z());
  });
  return s;
}

Index CandidateSet::index_of(const Eigen::Vector3i& v) const {
  const auto it = std::find(displacements.begin(), displacements.end(), v);
  return it == displacements.end() ? -1 : static_cast<Index>(it - displacements.begin());
}

CostVolume build_cost_volume(const FeatureVolume& fixed, const FeatureVolume& moving, const ControlGrid& grid,
                             const CandidateSet& candidates) {
  if (!fixed.same_grid(moving) || fixed.channels() != moving.channels())
    throw Error(ErrorCode::DimensionMismatch, "fixed " + to_string(fixed.dims()) + "x" +
                                                  std::to_string(fixed.channels()) + " vs moving " +
                                                  to_string(moving.dims()) + "x" + std::to_string(moving.channels()));
  const ControlGrid expected = ControlGrid::covering(fixed.dims(), grid.spacing);
  if (!(expected.dims == grid.dims)) throw Error(ErrorCode::DimensionMismatch, "control grid does not cover the volume");

  CostVolume cv{grid, candidates, {}};
  const Index L = candidates.size();
  cv.values.assign(static_cast<std::size_t>(grid.points() * L), 0.0f);
  const Dims& d = fixed.dims();
  const Index C = fixed.channels();
  const Index g = grid.spacing;

  parallel_for(grid.points(), [&](Index p) {
    const Index px = p % grid.dims.x, py = (p / grid.dims.x) % grid.dims.y, pz = p / (grid.dims.x * grid.dims.y);
    const Index x0 = px * g, y0 = py * g, z0 = pz * g;
    const Index x1 = std::min(x0 + g, d.x), y1 = std::min(y0 + g, d.y), z1 = std::min(z0 + g, d.z);
    const double count = double((x1 - x0) * (y1 - y0) * (z1 - z0));
    for (Index l = 0; l < L; ++l) {
      const Eigen::Vector3i& v = candidates.displacements[static_cast<std::size_t>(l)];
      double sum = 0.0;
      for (Index z = z0; z < z1; ++z) {
        const Index mz = std::clamp<Index>(z + v.z(), 0, d.z - 1);
        for (Index y = y0; y < y1; ++y) {
          const Index my = std::clamp<Index>(y + v.y(), 0, d.y - 1);
          for (Index x = x0; x < x1; ++x) {
            const Index mx = std::clamp<Index>(x + v.x(), 0, d.x - 1);
            const float* a = fixed.data().data() + fixed.linear(x, y, z) * C;
            const float* b = moving.data().data() + moving.linear(mx, my, mz) * C;
            for (Index c = 0; c < C; ++c) {
              const double diff = double(a[c]) - double(b[c]);
              sum += diff * diff;
            }
          }
        }
      }
      cv.values[static_cast<std::size_t>(p * L + l)] = static_cast<float>(sum / count);
    }
  });
  return cv;
}

std::vector<Index> coupled_convex_labels(const CostVolume& cost, std::span<const double> coupling) {
  const Index L = cost.candidates.size();
  const Index P = cost.grid.points();
  if (L == 0 || P == 0 || cost.values.size() != static_cast<std::size_t>(L * P))
    throw Error(ErrorCode::EmptyCostVolume, "cost volume is empty or malformed");
  if (coupling.empty()) throw Error(ErrorCode::InvalidArgument, "coupling schedule needs at least one iteration");
  for (std::size_t t = 0; t < coupling.size(); ++t)
    if (!(coupling[t] >= 0.0) || (t > 0 && coupling[t] < coupling[t - 1]))
      throw Error(ErrorCode::InvalidArgument, "coupling schedule must be nonnegative and non-decreasing");

  std::vector<Eigen::Vector3d> cand(static_cast<std::size_t>(L));
  for (Index l = 0; l < L; ++l) cand[static_cast<std::size_t>(l)] = cost.candidates.displacements[static_cast<std::size_t>(l)].cast<double>();

  DisplacementField<double> aux(cost.grid.dims);
  DisplacementField<double> mean(cost.grid.dims);  // zero at t = 1
  std::vector<Index> labels(static_cast<std::size_t>(P), 0);
  for (std::size_t t = 0; t < coupling.size(); ++t) {
    const double alpha = coupling[t];
    if (t > 0) mean = neighbour_mean(aux);
    parallel_for(P, [&](Index p) {
      const Eigen::Vector3d m = mean.at(p);
      const auto costs = cost.costs(p);
      double best = std::numeric_limits<double>::infinity();
      Index arg = 0;
      for (Index l = 0; l < L; ++l) {
        const double e = double(costs[static_cast<std::size_t>(l)]) + alpha * (cand[static_cast<std::size_t>(l)] - m).squaredNorm();
        if (e < best) {
          best = e;
          arg = l;
        }
      }
      labels[static_cast<std::size_t>(p)] = arg;
      // nothing to average with before the first selection
      aux.at(p) = t == 0 ? cand[static_cast<std::size_t>(arg)] : Eigen::Vector3d(0.5 * (cand[static_cast<std::size_t>(arg)] + m));
    });
  }
  return labels;
}

DisplacementField<float> coupled_convex(const CostVolume& cost, std::span<const double> coupling) {
  const auto labels = coupled_convex_labels(cost, coupling);
  DisplacementField<float> field(cost.grid.dims);
  for (Index p = 0; p < field.voxels(); ++p)
    field.at(p) = cost.candidates.displacements[static_cast<std::size_t>(labels[static_cast<std::size_t>(p)])].cast<float>();
  return field;
}

namespace {

template <typename Scalar, typename Visit>
void for_each_stencil(const Dims& grid, const Dims& target, Visit&& visit) {
  for (Index z = 0; z < target.z; ++z) {
    const auto sz = LinearStencil::make(corner_aligned(z, target.z, grid.z), grid.z);
    for (Index y = 0; y < target.y; ++y) {
      const auto sy = LinearStencil::make(corner_aligned(y, target.y, grid.y), grid.y);
      for (Index x = 0; x < target.x; ++x) {
        const auto sx = LinearStencil::make(corner_aligned(x, target.x, grid.x), grid.x);
        visit(x, y, z, sx, sy, sz);
      }
    }
  }
}

void check_upsample_dims(const Dims& grid, const Dims& target) {
  if (target.x < grid.x || target.y < grid.y || target.z < grid.z)
    throw Error(ErrorCode::DimensionMismatch, "target " + to_string(target) + " smaller than grid " + to_string(grid));
}

}  // namespace

template <typename Scalar>
DisplacementField<Scalar> upsample_field(const DisplacementField<Scalar>& grid, const Dims& target) {
  check_upsample_dims(grid.dims(), target);
  if (grid.dims() == target) return grid;
  DisplacementField<Scalar> out(target);
  const Dims gd = grid.dims();
  parallel_for(target.z, [&](Index z) {
    const auto sz = LinearStencil::make(corner_aligned(z, target.z, gd.z), gd.z);
    for (Index y = 0; y < target.y; ++y) {
      const auto sy = LinearStencil::make(corner_aligned(y, target.y, gd.y), gd.y);
      for (Index x = 0; x < target.x; ++x) {
        const auto sx = LinearStencil::make(corner_aligned(x, target.x, gd.x), gd.x);
        Eigen::Vector3d acc = Eigen::Vector3d::Zero();
        for (int k = 0; k < 2; ++k)
          for (int j = 0; j < 2; ++j)
            for (int i = 0; i < 2; ++i) {
              const double w = (i ? sx.frac : 1 - sx.frac) * (j ? sy.frac : 1 - sy.frac) * (k ? sz.frac : 1 - sz.frac);
              if (w == 0.0) continue;
              acc += w * grid(i ? sx.hi : sx.lo, j ? sy.hi : sy.lo, k ? sz.hi : sz.lo).template cast<double>();
            }
        out(x, y, z) = acc.cast<Scalar>();
      }
    }
  });
  return out;
}

template <typename Scalar>
DisplacementField<Scalar> upsample_field_adjoint(const DisplacementField<Scalar>& dense, const Dims& grid_dims) {
  check_upsample_dims(grid_dims, dense.dims());
  if (grid_dims == dense.dims()) return dense;
  DisplacementField<double> acc(grid_dims);
  for_each_stencil<Scalar>(grid_dims, dense.dims(), [&](Index x, Index y, Index z, const LinearStencil& sx,
                                                         const LinearStencil& sy, const LinearStencil& sz) {
    const Eigen::Vector3d g = dense(x, y, z).template cast<double>();
    for (int k = 0; k < 2; ++k)
      for (int j = 0; j < 2; ++j)
        for (int i = 0; i < 2; ++i) {
          const double w = (i ? sx.frac : 1 - sx.frac) * (j ? sy.frac : 1 - sy.frac) * (k ? sz.frac : 1 - sz.frac);
          if (w == 0.0) continue;
          acc(i ? sx.hi : sx.lo, j ? sy.hi : sy.lo, k ? sz.hi : sz.lo) += w * g;
        }
  });
  return acc.template cast<Scalar>();
}

template <typename Scalar>
DisplacementField<Scalar> restrict_field(const DisplacementField<Scalar>& dense, const Dims& grid_dims) {
  check_upsample_dims(grid_dims, dense.dims());
  if (grid_dims == dense.dims()) return dense;
  DisplacementField<Scalar> out(grid_dims);
  const Dims dd = dense.dims();
  for (Index z = 0; z < grid_dims.z; ++z)
    for (Index y = 0; y < grid_dims.y; ++y)
      for (Index x = 0; x < grid_dims.x; ++x) {
        const Eigen::Vector3d p(corner_aligned(x, grid_dims.x, dd.x), corner_aligned(y, grid_dims.y, dd.y),
                                corner_aligned(z, grid_dims.z, dd.z));
        const auto sx = LinearStencil::make(p.x(), dd.x), sy = LinearStencil::make(p.y(), dd.y),
                   sz = LinearStencil::make(p.z(), dd.z);
        Eigen::Vector3d acc = Eigen::Vector3d::Zero();
        for (int k = 0; k < 2; ++k)
          for (int j = 0; j < 2; ++j)
            for (int i = 0; i < 2; ++i) {
              const double w = (i ? sx.frac : 1 - sx.frac) * (j ? sy.frac : 1 - sy.frac) * (k ? sz.frac : 1 - sz.frac);
              if (w == 0.0) continue;
              acc += w * dense(i ? sx.hi : sx.lo, j ? sy.hi : sy.lo, k ? sz.hi : sz.lo).template cast<double>();
            }
        out(x, y, z) = acc.cast<Scalar>();
      }
  return out;
}

template DisplacementField<float> upsample_field(const DisplacementField<float>&, const Dims&);
template DisplacementField<double> upsample_field(const DisplacementField<double>&, const Dims&);
template DisplacementField<float> upsample_field_adjoint(const DisplacementField<float>&, const Dims&);
template DisplacementField<double> upsample_field_adjoint(const DisplacementField<double>&, const Dims&);
template DisplacementField<float> restrict_field(const DisplacementField<float>&, const Dims&);
template DisplacementField<double> restrict_field(const DisplacementField<double>&, const Dims&);

DisplacementField<float> discrete_register(const FeatureVolume& fixed, const FeatureVolume& moving,
                                           const DiscreteParams& params) {
  const auto grid = ControlGrid::covering(fixed.dims(), params.grid_spacing);
  const auto candidates = CandidateSet::make(params.radius, params.quantization);
  const auto cost = build_cost_volume(fixed, moving, grid, candidates);
  return coupled_convex(cost, params.coupling);
}

}  // namespace featreg
