#pragma once

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

#include "featreg/error.hpp"

namespace featreg {

using Index = std::ptrdiff_t;

/// Voxel counts along x, y, z.
struct Dims {
  Index x = 0;
  Index y = 0;
  Index z = 0;

  Index voxels() const { return x * y * z; }
  Index operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  friend bool operator==(const Dims&, const Dims&) = default;
};

std::string to_string(const Dims& d);

/// Dense 4-D volume [X,Y,Z,C] stored C-order over [Z][Y][X][C], channel fastest.
///
/// `meta` carries free-form header entries (encoder id, PCA record, ...) that
/// survive a round trip through the FVOL container unchanged.
template <typename T>
class Volume {
 public:
  using Scalar = T;
  using TokenMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Volume() = default;
  Volume(Dims dims, Index channels, Eigen::Vector3d spacing = Eigen::Vector3d::Ones(), T fill = T(0))
      : dims_(dims), channels_(channels), spacing_(spacing) {
    if (dims.x < 1 || dims.y < 1 || dims.z < 1 || channels < 1)
      throw Error(ErrorCode::InvariantViolation, "volume dims " + to_string(dims) + " x " +
                                                     std::to_string(channels) + " must be positive");
    if (!(spacing.array() > 0.0).all() || !spacing.allFinite())
      throw Error(ErrorCode::InvariantViolation, "spacing must be strictly positive");
    data_.assign(static_cast<std::size_t>(dims.voxels() * channels), fill);
  }

  const Dims& dims() const { return dims_; }
  Index channels() const { return channels_; }
  Index voxels() const { return dims_.voxels(); }
  const Eigen::Vector3d& spacing() const { return spacing_; }
  void set_spacing(const Eigen::Vector3d& s) {
    if (!(s.array() > 0.0).all())
      throw Error(ErrorCode::InvariantViolation, "spacing must be strictly positive");
    spacing_ = s;
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }
  nlohmann::json& meta() { return meta_; }
  const nlohmann::json& meta() const { return meta_; }

  Index linear(Index x, Index y, Index z) const { return (z * dims_.y + y) * dims_.x + x; }

  T& operator()(Index x, Index y, Index z, Index c = 0) {
    return data_[static_cast<std::size_t>(linear(x, y, z) * channels_ + c)];
  }
  T operator()(Index x, Index y, Index z, Index c = 0) const {
    return data_[static_cast<std::size_t>(linear(x, y, z) * channels_ + c)];
  }

  /// Voxels as rows, channels as columns.
  Eigen::Map<TokenMatrix> tokens() { return {data_.data(), voxels(), channels_}; }
  Eigen::Map<const TokenMatrix> tokens() const { return {data_.data(), voxels(), channels_}; }

  bool same_grid(const Volume& other) const { return dims_ == other.dims_; }

  bool all_finite() const {
    if constexpr (std::is_floating_point_v<T>) {
      for (T v : data_)
        if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const Volume& a, const Volume& b) {
    return a.dims_ == b.dims_ && a.channels_ == b.channels_ && a.spacing_ == b.spacing_ &&
           a.data_ == b.data_ && a.meta_ == b.meta_;
  }

 private:
  Dims dims_{};
  Index channels_ = 0;
  Eigen::Vector3d spacing_ = Eigen::Vector3d::Ones();
  std::vector<T> data_;
  nlohmann::json meta_ = nlohmann::json::object();
};

using FeatureVolume = Volume<float>;
using LabelMask = Volume<std::uint8_t>;

/// Per-voxel displacement (dx,dy,dz) in voxel units, pull-back convention:
/// warped(x) = source(x + u(x)).
template <typename Scalar = float>
class DisplacementField {
 public:
  using Vector = Eigen::Matrix<Scalar, 3, 1>;

  DisplacementField() = default;
  explicit DisplacementField(Dims dims, const Vector& fill = Vector::Zero()) : dims_(dims) {
    if (dims.x < 1 || dims.y < 1 || dims.z < 1)
      throw Error(ErrorCode::InvariantViolation, "field dims " + to_string(dims) + " must be positive");
    data_.resize(static_cast<std::size_t>(dims.voxels() * 3));
    for (Index i = 0; i < dims.voxels(); ++i) at(i) = fill;
  }

  const Dims& dims() const { return dims_; }
  Index voxels() const { return dims_.voxels(); }
  Index linear(Index x, Index y, Index z) const { return (z * dims_.y + y) * dims_.x + x; }

  Eigen::Map<Vector> at(Index i) { return Eigen::Map<Vector>(data_.data() + 3 * i); }
  Eigen::Map<const Vector> at(Index i) const { return Eigen::Map<const Vector>(data_.data() + 3 * i); }
  Eigen::Map<Vector> operator()(Index x, Index y, Index z) { return at(linear(x, y, z)); }
  Eigen::Map<const Vector> operator()(Index x, Index y, Index z) const { return at(linear(x, y, z)); }

  /// All components as one flat vector (voxel-major, component fastest).
  Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> flat() { return {data_.data(), Index(data_.size())}; }
  Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> flat() const {
    return {data_.data(), Index(data_.size())};
  }

  std::vector<Scalar>& data() { return data_; }
  const std::vector<Scalar>& data() const { return data_; }

  Scalar max_abs() const {
    Scalar m(0);
    for (Scalar v : data_) m = std::max(m, Scalar(std::abs(v)));
    return m;
  }

  template <typename Other>
  DisplacementField<Other> cast() const {
    DisplacementField<Other> out(dims_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<Other>(data_[i]);
    return out;
  }

  friend bool operator==(const DisplacementField& a, const DisplacementField& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  Dims dims_{};
  std::vector<Scalar> data_;
};

/// Field as a 3-channel float volume tagged with the warp convention.
template <typename Scalar>
FeatureVolume to_volume(const DisplacementField<Scalar>& field,
                        const Eigen::Vector3d& spacing = Eigen::Vector3d::Ones()) {
  FeatureVolume v(field.dims(), 3, spacing);
  for (std::size_t i = 0; i < field.data().size(); ++i) v.data()[i] = static_cast<float>(field.data()[i]);
  v.meta()["warp_convention"] = "pullback";
  v.meta()["units"] = "voxel";
  return v;
}

DisplacementField<float> field_from_volume(const FeatureVolume& v);

}  // namespace featreg
