#pragma once

#include <cmath>
#include <type_traits>
#include <vector>

#include "featreg/discrete.hpp"
#include "featreg/parallel.hpp"
#include "featreg/sampling.hpp"
#include "featreg/volume.hpp"

namespace featreg {

struct EnergyConfig {
  double lambda = 2.0;      ///< diffusion regulariser weight
  Index grid_spacing = 2;   ///< control spacing of the refined parameterisation
};

struct AdamParams {
  double learning_rate = 1.0;
  int iterations = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

/// Mean squared feature difference and weighted diffusion penalty.
struct EnergyTerms {
  double data = 0.0;
  double regularizer = 0.0;
  double total() const { return data + regularizer; }
};

namespace detail {

inline void check_pair(const Dims& fixed, Index fc, const Dims& moving, Index mc, const Dims& field) {
  if (!(fixed == moving) || fc != mc || !(field == fixed))
    throw Error(ErrorCode::DimensionMismatch, "fixed " + to_string(fixed) + "x" + std::to_string(fc) + ", moving " +
                                                  to_string(moving) + "x" + std::to_string(mc) + ", field " +
                                                  to_string(field));
}

}  // namespace detail

/// Pull-back warp: out(x) = vol(x + u(x)), edge-clamped. Float volumes are
/// sampled trilinearly, label volumes by nearest neighbour.
template <typename T, typename S>
Volume<T> warp(const Volume<T>& vol, const DisplacementField<S>& field) {
  if (!(vol.dims() == field.dims()))
    throw Error(ErrorCode::DimensionMismatch, "volume " + to_string(vol.dims()) + " vs field " + to_string(field.dims()));
  const Dims& d = vol.dims();
  const Index C = vol.channels();
  Volume<T> out(d, C, vol.spacing());
  out.meta() = vol.meta();
  parallel_for(d.z, [&](Index z) {
    std::vector<double> buf(static_cast<std::size_t>(C));
    for (Index y = 0; y < d.y; ++y)
      for (Index x = 0; x < d.x; ++x) {
        const Eigen::Vector3d p = Eigen::Vector3d(double(x), double(y), double(z)) + field(x, y, z).template cast<double>();
        if constexpr (std::is_floating_point_v<T>) {
          sample_trilinear(vol, p, buf.data());
          for (Index c = 0; c < C; ++c) out(x, y, z, c) = static_cast<T>(buf[static_cast<std::size_t>(c)]);
        } else {
          const Index sx = nearest_index(p.x(), d.x), sy = nearest_index(p.y(), d.y), sz = nearest_index(p.z(), d.z);
          for (Index c = 0; c < C; ++c) out(x, y, z, c) = vol(sx, sy, sz, c);
        }
      }
  });
  return out;
}

/// Energy terms and, if `grad` is non-null, the analytic gradient with respect
/// to every field component.
///
/// data = mean over voxels and channels of (fixed - moving o u)^2
/// reg  = lambda * mean over voxels, components and axes of the squared forward
///        difference of u (differences leaving the volume count as zero)
template <typename S>
EnergyTerms energy_and_gradient(const FeatureVolume& fixed, const FeatureVolume& moving,
                                const DisplacementField<S>& field, const EnergyConfig& cfg,
                                DisplacementField<S>* grad) {
  detail::check_pair(fixed.dims(), fixed.channels(), moving.dims(), moving.channels(), field.dims());
  const Dims& d = fixed.dims();
  const Index C = fixed.channels();
  const double N = double(d.voxels());
  const double data_scale = 1.0 / (N * double(C));
  const double reg_scale = cfg.lambda / (9.0 * N);
  if (grad && !(grad->dims() == d)) *grad = DisplacementField<S>(d);

  std::vector<double> data_part(static_cast<std::size_t>(d.z), 0.0), reg_part(static_cast<std::size_t>(d.z), 0.0);
  parallel_for(d.z, [&](Index z) {
    std::vector<double> value(static_cast<std::size_t>(C)), dval(static_cast<std::size_t>(3 * C));
    double data_sum = 0.0, reg_sum = 0.0;
    for (Index y = 0; y < d.y; ++y)
      for (Index x = 0; x < d.x; ++x) {
        const Eigen::Vector3d u = field(x, y, z).template cast<double>();
        const Eigen::Vector3d p = Eigen::Vector3d(double(x), double(y), double(z)) + u;
        sample_trilinear_with_gradient(moving, p, value.data(), dval.data());
        Eigen::Vector3d g = Eigen::Vector3d::Zero();
        const float* f = fixed.data().data() + fixed.linear(x, y, z) * C;
        for (Index c = 0; c < C; ++c) {
          const double r = double(f[c]) - value[static_cast<std::size_t>(c)];
          data_sum += r * r;
          g -= 2.0 * r * Eigen::Vector3d::Map(dval.data() + 3 * c);
        }
        g *= data_scale;

        const Index here[3] = {x, y, z};
        for (int a = 0; a < 3; ++a) {
          Index nb[3] = {x, y, z};
          if (here[a] + 1 < d[a]) {
            nb[a] = here[a] + 1;
            const Eigen::Vector3d diff = field(nb[0], nb[1], nb[2]).template cast<double>() - u;
            reg_sum += diff.squaredNorm();
            g -= 2.0 * reg_scale * diff;
          }
          if (here[a] > 0) {
            nb[a] = here[a] - 1;
            const Eigen::Vector3d diff = u - field(nb[0], nb[1], nb[2]).template cast<double>();
            g += 2.0 * reg_scale * diff;
          }
        }
        if (grad) (*grad)(x, y, z) = g.cast<S>();
      }
    data_part[static_cast<std::size_t>(z)] = data_sum;
    reg_part[static_cast<std::size_t>(z)] = reg_sum;
  });
  EnergyTerms e;
  for (Index z = 0; z < d.z; ++z) {
    e.data += data_part[static_cast<std::size_t>(z)];
    e.regularizer += reg_part[static_cast<std::size_t>(z)];
  }
  e.data *= data_scale;
  e.regularizer *= reg_scale;
  return e;
}

template <typename S>
EnergyTerms energy_terms(const FeatureVolume& fixed, const FeatureVolume& moving, const DisplacementField<S>& field,
                         const EnergyConfig& cfg) {
  return energy_and_gradient<S>(fixed, moving, field, cfg, nullptr);
}

template <typename S>
double energy(const FeatureVolume& fixed, const FeatureVolume& moving, const DisplacementField<S>& field,
              const EnergyConfig& cfg) {
  return energy_terms(fixed, moving, field, cfg).total();
}

template <typename S>
DisplacementField<S> energy_gradient(const FeatureVolume& fixed, const FeatureVolume& moving,
                                     const DisplacementField<S>& field, const EnergyConfig& cfg) {
  DisplacementField<S> grad(field.dims());
  energy_and_gradient(fixed, moving, field, cfg, &grad);
  return grad;
}

struct RefineTrace {
  double initial_energy = 0.0;
  double best_energy = 0.0;
  int best_iteration = -1;  ///< -1 when the initialisation was never improved on
  std::vector<double> energies;  ///< energy evaluated at each iterate
};

/// Control grid used by adam_refine for a volume of `dims`.
Dims refine_grid_dims(const Dims& dims, Index spacing);

/// Adam minimisation of the energy over a control-grid field (spacing
/// cfg.grid_spacing, trilinear densification), started from `init` sampled
/// onto that grid. Returns the lowest-energy dense field seen, which is `init`
/// itself unless some iterate is strictly better.
DisplacementField<float> adam_refine(const FeatureVolume& fixed, const FeatureVolume& moving,
                                     const DisplacementField<float>& init, const EnergyConfig& cfg,
                                     const AdamParams& params, RefineTrace* trace = nullptr);

}  // namespace featreg
