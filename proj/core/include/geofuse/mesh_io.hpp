#pragma once

#include <string>

#include "geofuse/marching_cubes.hpp"

namespace geofuse {

// Binary little-endian PLY with per-vertex normals (float32 positions and
// normals, int32 face indices).
void write_ply(const std::string& path, const Mesh& mesh);

// ASCII OBJ with v / vn / f v//vn records.
void write_obj(const std::string& path, const Mesh& mesh);

// Reads ascii or binary_little_endian PLY. Faces and normals are optional;
// a vertex-only file loads as a point cloud (empty face list).
Mesh read_ply(const std::string& path);

// Minimal OBJ reader (v / vn / f, triangulating polygon faces as fans).
Mesh read_obj(const std::string& path);

// Dispatches on file extension (.ply / .obj).
Mesh read_mesh(const std::string& path);

}  // namespace geofuse
