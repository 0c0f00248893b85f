#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "geofuse/tsdf.hpp"

namespace geofuse {

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<uint32_t, 3>> faces;
  std::vector<Vec3> vertex_normals;  // unit, oriented along +grad(S)

  bool empty() const { return faces.empty(); }
  double area() const;
};

// Table-driven isosurface extraction at the given level. Cells are processed
// only when all eight corner voxels are observed; vertices interpolate
// linearly along sign-changing edges and are shared between cells. Vertex
// normals come from trilinear interpolation of the TSDF gradient. No
// crossing at all yields an empty mesh.
Mesh marching_cubes(const TsdfVolume& vol, double iso = 0.0);

namespace mc_detail {
extern const uint16_t kEdgeTable[256];
extern const int8_t kTriTable[256][16];
// Cube corner c offset (x,y,z bits) and the two corners of each edge.
extern const int kCornerOffset[8][3];
extern const int kEdgeCorner[12][2];
}  // namespace mc_detail

}  // namespace geofuse
