#include "geofuse/volume_io.hpp"

#include <nlohmann/json.hpp>

#include "geofuse/fsio.hpp"

namespace geofuse {

using nlohmann::json;

void write_tsdf_volume(const std::string& path, const TsdfVolume& vol) {
  json hdr;
  hdr["format"] = "geofuse-tsdf-v1";
  hdr["endianness"] = "little";
  hdr["origin"] = {vol.grid.origin.x(), vol.grid.origin.y(), vol.grid.origin.z()};
  hdr["voxel_size"] = vol.grid.voxel_size;
  hdr["dims"] = {vol.grid.dims.nx, vol.grid.dims.ny, vol.grid.dims.nz};
  hdr["truncation"] = vol.truncation;

  std::string out = hdr.dump();
  out.push_back('\n');
  const int64_t n = vol.grid.count();
  out.reserve(out.size() + n * 8 + n / 8 + 1);
  for (int64_t i = 0; i < n; ++i) append_f32(out, static_cast<float>(vol.values[i]));
  for (int64_t i = 0; i < n; ++i) append_f32(out, static_cast<float>(vol.weights[i]));
  for (int64_t i = 0; i < n; i += 8) {
    uint8_t byte = 0;
    for (int b = 0; b < 8 && i + b < n; ++b)
      if (vol.observed[i + b]) byte |= static_cast<uint8_t>(1u << b);
    out.push_back(static_cast<char>(byte));
  }
  write_file_atomic(path, out);
}

TsdfVolume read_tsdf_volume(const std::string& path) {
  const std::string data = read_file(path);
  const size_t nl = data.find('\n');
  require(nl != std::string::npos, "tsdf volume: missing header line");
  json hdr;
  try {
    hdr = json::parse(data.substr(0, nl));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("tsdf volume: bad header: ") + e.what());
  }
  require(hdr.value("format", "") == "geofuse-tsdf-v1", "tsdf volume: unknown format");
  require(hdr.value("endianness", "") == "little", "tsdf volume: unsupported endianness");

  TsdfVolume vol;
  const auto origin = hdr.at("origin");
  vol.grid.origin = Vec3(origin.at(0), origin.at(1), origin.at(2));
  vol.grid.voxel_size = hdr.at("voxel_size").get<double>();
  const auto dims = hdr.at("dims");
  vol.grid.dims = {dims.at(0).get<int64_t>(), dims.at(1).get<int64_t>(),
                   dims.at(2).get<int64_t>()};
  vol.truncation = hdr.at("truncation").get<double>();
  vol.grid.validate();

  const int64_t n = vol.grid.count();
  BinReader rd(data, nl + 1);
  vol.values.resize(n);
  for (int64_t i = 0; i < n; ++i) vol.values[i] = rd.read_f32();
  vol.weights.resize(n);
  for (int64_t i = 0; i < n; ++i) vol.weights[i] = rd.read_f32();
  vol.observed.assign(n, 0);
  for (int64_t i = 0; i < n; i += 8) {
    const uint8_t byte = rd.read_u8();
    for (int b = 0; b < 8 && i + b < n; ++b) vol.observed[i + b] = (byte >> b) & 1u;
  }
  require(rd.remaining() == 0, "tsdf volume: trailing bytes");
  return vol;
}

}  // namespace geofuse
