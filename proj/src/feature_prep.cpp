#include "featreg/feature_prep.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

#include "featreg/parallel.hpp"
#include "featreg/sampling.hpp"

namespace featreg {

void SliceFeatureStack::validate() const {
  if (slices.empty()) throw Error(ErrorCode::EmptyStack, "slice stack has no encoded slices");
  if (stride < 1) throw Error(ErrorCode::InvariantViolation, "slice stride must be >= 1");
  if (width < 1 || height < 1) throw Error(ErrorCode::InvariantViolation, "token grid must be non-empty");
  const Index D = token_dim();
  Index prev = -1;
  for (const auto& s : slices) {
    if (s.z <= prev || s.z >= z_total)
      throw Error(ErrorCode::InvariantViolation,
                  "slice index " + std::to_string(s.z) + " out of order or outside [0," + std::to_string(z_total) + ")");
    if (s.tokens.rows() != token_count() || s.tokens.cols() != D)
      throw Error(ErrorCode::InvariantViolation, "slice " + std::to_string(s.z) + " has a mismatched token grid");
    prev = s.z;
  }
  if (slices.front().z != 0) throw Error(ErrorCode::InvariantViolation, "slice 0 must be encoded");
}

SliceFeatureStack stack_from_volume(const FeatureVolume& vol) {
  SliceFeatureStack s;
  s.width = vol.dims().x;
  s.height = vol.dims().y;
  const Index n = vol.dims().z;
  s.stride = vol.meta().value("slice_stride", Index{1});
  s.z_total = vol.meta().value("z_total", n);
  s.spacing = vol.spacing();
  s.meta = vol.meta();
  if (s.stride < 1) throw Error(ErrorCode::BadHeader, "slice_stride must be >= 1");
  const Index expected = (s.z_total + s.stride - 1) / s.stride;
  if (expected != n)
    throw Error(ErrorCode::DimensionMismatch, "stack holds " + std::to_string(n) + " slices, z_total " +
                                                  std::to_string(s.z_total) + " with stride " +
                                                  std::to_string(s.stride) + " needs " + std::to_string(expected));
  const Index N = s.token_count();
  for (Index i = 0; i < n; ++i)
    s.slices.push_back({i * s.stride, vol.tokens().middleRows(i * N, N)});
  s.validate();
  return s;
}

FeatureVolume stack_to_volume(const SliceFeatureStack& stack) {
  stack.validate();
  const Index n = static_cast<Index>(stack.slices.size());
  FeatureVolume vol({stack.width, stack.height, n}, stack.token_dim(), stack.spacing);
  vol.meta() = stack.meta;
  vol.meta()["slice_stride"] = stack.stride;
  vol.meta()["z_total"] = stack.z_total;
  vol.meta()["patch_grid"] = {stack.width, stack.height};
  const Index N = stack.token_count();
  for (Index i = 0; i < n; ++i) vol.tokens().middleRows(i * N, N) = stack.slices[i].tokens;
  return vol;
}

FeatureVolume interpolate_skipped_slices(const SliceFeatureStack& stack) {
  stack.validate();
  const Index N = stack.token_count();
  FeatureVolume out({stack.width, stack.height, stack.z_total}, stack.token_dim(), stack.spacing);
  out.meta() = stack.meta;
  out.meta().erase("slice_stride");
  out.meta().erase("z_total");
  auto tokens = out.tokens();
  const auto& sl = stack.slices;
  std::size_t upper = 0;  // first encoded slice with z >= current
  for (Index z = 0; z < stack.z_total; ++z) {
    while (upper < sl.size() && sl[upper].z < z) ++upper;
    auto dst = tokens.middleRows(z * N, N);
    if (upper < sl.size() && sl[upper].z == z) {
      dst = sl[upper].tokens;
    } else if (upper == sl.size()) {
      dst = sl.back().tokens;
    } else {
      const auto& a = sl[upper - 1];
      const auto& b = sl[upper];
      const double t = double(z - a.z) / double(b.z - a.z);
      dst = (a.tokens.cast<double>() * (1.0 - t) + b.tokens.cast<double>() * t).cast<float>();
    }
  }
  return out;
}

nlohmann::json PcaProjection::record() const {
  std::vector<double> ev(explained_variance.data(), explained_variance.data() + explained_variance.size());
  return {{"d", output_dim()}, {"explained_variance", ev}};
}

PcaProjection fit_pca(const std::vector<Eigen::Ref<const TokenGrid>>& blocks, Index d) {
  if (blocks.empty()) throw Error(ErrorCode::EmptyStack, "no tokens to fit PCA on");
  const Index D = blocks.front().cols();
  Index M = 0;
  for (const auto& b : blocks) {
    if (b.cols() != D) throw Error(ErrorCode::DimensionMismatch, "token blocks disagree on dimension");
    M += b.rows();
  }
  if (d < 1 || d > D)
    throw Error(ErrorCode::InvalidArgument, "PCA dimension " + std::to_string(d) + " outside [1," + std::to_string(D) + "]");
  if (M < d)
    throw Error(ErrorCode::RankDeficient, std::to_string(M) + " samples cannot support " + std::to_string(d) + " components");

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(D);
  for (const auto& b : blocks) mean += b.cast<double>().colwise().sum().transpose();
  mean /= double(M);

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(D, D);
  constexpr Index kChunk = 4096;
  for (const auto& b : blocks)
    for (Index r = 0; r < b.rows(); r += kChunk) {
      const Index n = std::min(kChunk, b.rows() - r);
      const Eigen::MatrixXd centered = b.middleRows(r, n).cast<double>().rowwise() - mean.transpose();
      cov.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose());
    }
  cov = cov.selfadjointView<Eigen::Lower>();
  cov /= double(M);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw Error(ErrorCode::NumericFailure, "covariance eigendecomposition failed");

  PcaProjection p;
  p.mean = mean;
  p.samples = M;
  p.basis.resize(D, d);
  p.explained_variance.resize(d);
  for (Index j = 0; j < d; ++j) {
    const Index src = D - 1 - j;  // eigenvalues come back ascending
    Eigen::VectorXd v = es.eigenvectors().col(src);
    Index arg = 0;
    for (Index i = 1; i < D; ++i)
      if (std::abs(v(i)) > std::abs(v(arg))) arg = i;
    if (v(arg) < 0) v = -v;
    p.basis.col(j) = v;
    p.explained_variance(j) = std::max(0.0, es.eigenvalues()(src));
  }
  return p;
}

PcaProjection fit_joint_pca(const SliceFeatureStack& ref, const SliceFeatureStack& mov, Index d) {
  ref.validate();
  mov.validate();
  if (ref.token_dim() != mov.token_dim())
    throw Error(ErrorCode::DimensionMismatch, "reference and moving stacks have different token dimensions");
  std::vector<Eigen::Ref<const TokenGrid>> blocks;
  blocks.reserve(ref.slices.size() + mov.slices.size());
  for (const auto* s : {&ref, &mov})
    for (const auto& slice : s->slices) blocks.emplace_back(slice.tokens);
  return fit_pca(blocks, d);
}

PcaProjection fit_joint_pca(const FeatureVolume& ref, const FeatureVolume& mov, Index d) {
  if (ref.channels() != mov.channels())
    throw Error(ErrorCode::DimensionMismatch, "reference and moving volumes have different channel counts");
  return fit_pca({ref.tokens(), mov.tokens()}, d);
}

FeatureVolume apply_pca(const FeatureVolume& grid, const PcaProjection& proj) {
  if (grid.channels() != proj.input_dim())
    throw Error(ErrorCode::DimensionMismatch, "volume has " + std::to_string(grid.channels()) +
                                                  " channels, projection expects " + std::to_string(proj.input_dim()));
  FeatureVolume out(grid.dims(), proj.output_dim(), grid.spacing());
  out.meta() = grid.meta();
  out.meta()["pca"] = proj.record();
  const Index Z = grid.dims().z;
  const Index per_slice = grid.dims().x * grid.dims().y;
  const Eigen::RowVectorXd mean = proj.mean.transpose();
  parallel_for(Z, [&](Index z) {
    const Eigen::MatrixXd x = grid.tokens().middleRows(z * per_slice, per_slice).cast<double>();
    out.tokens().middleRows(z * per_slice, per_slice) = ((x.rowwise() - mean) * proj.basis).cast<float>();
  });
  return out;
}

FeatureVolume upsample_to_volume(const FeatureVolume& reduced, Index target_x, Index target_y) {
  const Dims& in = reduced.dims();
  if (target_x < in.x || target_y < in.y)
    throw Error(ErrorCode::DimensionMismatch, "upsample target [" + std::to_string(target_x) + "," +
                                                  std::to_string(target_y) + "] smaller than grid " + to_string(in));
  if (target_x == in.x && target_y == in.y) return reduced;
  const Eigen::Vector3d sp(reduced.spacing().x() * double(in.x) / double(target_x),
                           reduced.spacing().y() * double(in.y) / double(target_y), reduced.spacing().z());
  FeatureVolume out({target_x, target_y, in.z}, reduced.channels(), sp);
  out.meta() = reduced.meta();
  const Index C = reduced.channels();
  parallel_for(in.z, [&](Index z) {
    for (Index y = 0; y < target_y; ++y) {
      const auto sy = LinearStencil::make(corner_aligned(y, target_y, in.y), in.y);
      for (Index x = 0; x < target_x; ++x) {
        const auto sx = LinearStencil::make(corner_aligned(x, target_x, in.x), in.x);
        for (Index c = 0; c < C; ++c) {
          const double v00 = reduced(sx.lo, sy.lo, z, c), v10 = reduced(sx.hi, sy.lo, z, c);
          const double v01 = reduced(sx.lo, sy.hi, z, c), v11 = reduced(sx.hi, sy.hi, z, c);
          const double top = v00 + sx.frac * (v10 - v00);
          const double bot = v01 + sx.frac * (v11 - v01);
          out(x, y, z, c) = static_cast<float>(top + sy.frac * (bot - top));
        }
      }
    }
  });
  return out;
}

}  // namespace featreg
