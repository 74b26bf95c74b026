#include "featreg/refine.hpp"

namespace featreg {

void AdamParams::validate() const {
  if (!(learning_rate > 0.0) || iterations < 0 || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) ||
      !(epsilon > 0.0))
    throw Error(ErrorCode::InvalidArgument, "Adam parameters out of range");
}

Dims refine_grid_dims(const Dims& dims, Index spacing) {
  if (spacing < 1) throw Error(ErrorCode::InvalidArgument, "refinement grid spacing must be >= 1");
  const auto cells = [&](Index n) { return std::max<Index>(1, (n + spacing - 1) / spacing); };
  return {cells(dims.x), cells(dims.y), cells(dims.z)};
}

DisplacementField<float> adam_refine(const FeatureVolume& fixed, const FeatureVolume& moving,
                                     const DisplacementField<float>& init, const EnergyConfig& cfg,
                                     const AdamParams& params, RefineTrace* trace) {
  params.validate();
  if (cfg.lambda < 0.0) throw Error(ErrorCode::InvalidArgument, "lambda must be nonnegative");
  detail::check_pair(fixed.dims(), fixed.channels(), moving.dims(), moving.channels(), init.dims());
  const Dims dims = fixed.dims();

  const double initial = energy(fixed, moving, init, cfg);
  RefineTrace local;
  RefineTrace& tr = trace ? *trace : local;
  tr = RefineTrace{initial, initial, -1, {}};
  if (params.iterations == 0) return init;

  const Dims grid = refine_grid_dims(dims, cfg.grid_spacing);
  DisplacementField<double> control = restrict_field(init.cast<double>(), grid);
  Eigen::VectorXd m = Eigen::VectorXd::Zero(control.flat().size());
  Eigen::VectorXd v = m;

  DisplacementField<float> best = init;
  DisplacementField<double> dense_grad(dims);
  double b1t = 1.0, b2t = 1.0;
  for (int it = 0; it <= params.iterations; ++it) {
    const DisplacementField<double> dense = upsample_field(control, dims);
    const bool last = it == params.iterations;
    const double e = energy_and_gradient(fixed, moving, dense, cfg, last ? nullptr : &dense_grad).total();
    if (!std::isfinite(e)) throw Error(ErrorCode::NumericFailure, "energy became non-finite during refinement");
    tr.energies.push_back(e);
    if (e < tr.best_energy) {
      tr.best_energy = e;
      tr.best_iteration = it;
      best = dense.cast<float>();
    }
    if (last) break;

    const auto g = upsample_field_adjoint(dense_grad, grid);
    b1t *= params.beta1;
    b2t *= params.beta2;
    m = params.beta1 * m + (1.0 - params.beta1) * g.flat();
    v = params.beta2 * v + (1.0 - params.beta2) * g.flat().cwiseAbs2();
    const Eigen::VectorXd m_hat = m / (1.0 - b1t);
    const Eigen::VectorXd v_hat = v / (1.0 - b2t);
    control.flat() -= params.learning_rate * m_hat.cwiseQuotient((v_hat.cwiseSqrt().array() + params.epsilon).matrix());
  }
  return best;
}

}  // namespace featreg
