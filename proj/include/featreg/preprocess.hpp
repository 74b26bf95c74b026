#pragma once

#include "featreg/volume.hpp"

namespace featreg {

/// Resample to isotropic `target_spacing` mm. Output voxel i sits at physical
/// offset i * target_spacing from the shared origin (voxel 0 centre).
/// Feature volumes are sampled trilinearly per channel, masks nearest-neighbour.
FeatureVolume resample_isotropic(const FeatureVolume& vol, double target_spacing);
LabelMask resample_isotropic(const LabelMask& mask, double target_spacing);

/// Centre `vol` in a size^3 cube; odd remainders put the extra voxel on the high side.
FeatureVolume pad_to_cube(const FeatureVolume& vol, Index size, float fill = 0.0f);
LabelMask pad_to_cube(const LabelMask& mask, Index size, std::uint8_t fill = 0);

/// Low-side offsets pad_to_cube uses for `dims`.
Dims cube_offsets(const Dims& dims, Index size);

}  // namespace featreg
