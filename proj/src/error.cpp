#include "featreg/error.hpp"

#include "featreg/volume.hpp"

namespace featreg {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::BadHeader: return "BadHeader";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::DegenerateVolume: return "DegenerateVolume";
    case ErrorCode::SizeTooSmall: return "SizeTooSmall";
    case ErrorCode::EmptyStack: return "EmptyStack";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyCostVolume: return "EmptyCostVolume";
    case ErrorCode::EmptyMovingLesion: return "EmptyMovingLesion";
    case ErrorCode::FieldTooSmall: return "FieldTooSmall";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NumericFailure: return "NumericFailure";
  }
  return "Unknown";
}

std::string to_string(const Dims& d) {
  return "[" + std::to_string(d.x) + "," + std::to_string(d.y) + "," + std::to_string(d.z) + "]";
}

DisplacementField<float> field_from_volume(const FeatureVolume& v) {
  if (v.channels() != 3)
    throw Error(ErrorCode::DimensionMismatch,
                "displacement field needs 3 channels, got " + std::to_string(v.channels()));
  DisplacementField<float> f(v.dims());
  f.data() = v.data();
  return f;
}

}  // namespace featreg
