#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace geofuse {

std::string read_file(const std::string& path);

// Write-temp-rename so partially written outputs never appear under the
// final name.
void write_file_atomic(const std::string& path, const std::string& data);

// Little-endian binary pack/unpack. The on-disk formats are all declared
// little-endian; these fail loudly on exotic hosts instead of silently
// writing the wrong byte order.
void append_f64(std::string& out, double v);
void append_f32(std::string& out, float v);
void append_u64(std::string& out, uint64_t v);

class BinReader {
 public:
  BinReader(const std::string& data, size_t offset) : data_(data), pos_(offset) {}
  double read_f64();
  float read_f32();
  uint64_t read_u64();
  uint8_t read_u8();
  size_t pos() const { return pos_; }
  size_t remaining() const;

 private:
  const std::string& data_;
  size_t pos_;
};

}  // namespace geofuse
