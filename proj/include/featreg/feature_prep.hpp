#pragma once

#include <Eigen/Core>
#include <vector>

#include "featreg/volume.hpp"

namespace featreg {

/// Patch tokens of one slice, rows ordered y-major (row = y * width + x).
using TokenGrid = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct EncodedSlice {
  Index z = 0;
  TokenGrid tokens;
};

/// Encoder output for the slices {0, k, 2k, ...} of a Z-slice volume.
struct SliceFeatureStack {
  Index width = 0;
  Index height = 0;
  Index z_total = 0;
  Index stride = 1;
  std::vector<EncodedSlice> slices;
  Eigen::Vector3d spacing = Eigen::Vector3d::Ones();
  nlohmann::json meta = nlohmann::json::object();

  Index token_dim() const { return slices.empty() ? 0 : slices.front().tokens.cols(); }
  Index token_count() const { return width * height; }

  /// Throws EmptyStack or InvariantViolation.
  void validate() const;
};

/// Build a stack from an encoder FVOL of shape [w,h,n_encoded,D]. The slice
/// layout comes from the "z_total" and "slice_stride" header keys (defaults:
/// n_encoded and 1).
SliceFeatureStack stack_from_volume(const FeatureVolume& vol);
FeatureVolume stack_to_volume(const SliceFeatureStack& stack);

/// Dense [w,h,Z_total,D] grid volume. Encoded slices are copied, skipped
/// slices are linear blends of the bracketing encoded slices, slices past the
/// last encoded index replicate it.
FeatureVolume interpolate_skipped_slices(const SliceFeatureStack& stack);

struct PcaProjection {
  Eigen::VectorXd mean;                ///< D
  Eigen::MatrixXd basis;               ///< D x d, orthonormal columns
  Eigen::VectorXd explained_variance;  ///< d, non-increasing
  Index samples = 0;                   ///< rows M of the joint matrix

  Index input_dim() const { return basis.rows(); }
  Index output_dim() const { return basis.cols(); }
  nlohmann::json record() const;
};

/// PCA of the row-concatenation of `blocks` (each M_i x D). Covariance is
/// normalised by M; each basis column's largest-magnitude entry is made
/// nonnegative.
PcaProjection fit_pca(const std::vector<Eigen::Ref<const TokenGrid>>& blocks, Index d);

/// Joint fit on the encoded tokens of both stacks.
PcaProjection fit_joint_pca(const SliceFeatureStack& ref, const SliceFeatureStack& mov, Index d);
/// Joint fit treating every voxel of both volumes as a token.
PcaProjection fit_joint_pca(const FeatureVolume& ref, const FeatureVolume& mov, Index d);

/// (x - mean) * W for every token; same spatial dims, d channels.
FeatureVolume apply_pca(const FeatureVolume& grid, const PcaProjection& proj);

/// Per-slice, per-channel bilinear upsampling with corner-aligned sampling to
/// [target_x, target_y, Z]. In-plane spacing is scaled by the size ratio.
FeatureVolume upsample_to_volume(const FeatureVolume& reduced, Index target_x, Index target_y);

}  // namespace featreg
