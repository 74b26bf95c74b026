#pragma once

#include <filesystem>
#include <variant>

#include "featreg/volume.hpp"

namespace featreg {

/// FVOL container:
///   bytes 0-3   "FVL1"
///   bytes 4-7   header length H, uint32 little-endian
///   bytes 8..   H bytes of UTF-8 JSON: shape=[X,Y,Z,C], dtype "f32"|"u8",
///               spacing=[sx,sy,sz], plus any metadata keys
///   remainder   little-endian payload, C-order [Z][Y][X][C]
inline constexpr char kFvolMagic[4] = {'F', 'V', 'L', '1'};

using AnyVolume = std::variant<FeatureVolume, LabelMask>;

AnyVolume read_fvol(const std::filesystem::path& path);
FeatureVolume read_feature_volume(const std::filesystem::path& path);
LabelMask read_label_mask(const std::filesystem::path& path);

void write_fvol(const FeatureVolume& vol, const std::filesystem::path& path);
void write_fvol(const LabelMask& vol, const std::filesystem::path& path);

/// Header JSON exactly as write_fvol would emit it.
std::string fvol_header(const FeatureVolume& vol);
std::string fvol_header(const LabelMask& vol);

}  // namespace featreg
