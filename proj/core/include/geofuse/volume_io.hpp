#pragma once

#include <string>

#include "geofuse/tsdf.hpp"

namespace geofuse {

// TSDF volume file: one-line JSON header (origin, voxel_size, dims,
// truncation, endianness), then raw little-endian float32 values in
// x-fastest order, float32 weights, and a packed observed bitmask
// (LSB-first within each byte).
void write_tsdf_volume(const std::string& path, const TsdfVolume& vol);
TsdfVolume read_tsdf_volume(const std::string& path);

}  // namespace geofuse
