#include "geofuse/mesh_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "geofuse/fsio.hpp"

namespace geofuse {

void write_ply(const std::string& path, const Mesh& mesh) {
  std::string out;
  {
    std::ostringstream hdr;
    hdr << "ply\nformat binary_little_endian 1.0\n";
    hdr << "element vertex " << mesh.vertices.size() << "\n";
    hdr << "property float x\nproperty float y\nproperty float z\n";
    hdr << "property float nx\nproperty float ny\nproperty float nz\n";
    hdr << "element face " << mesh.faces.size() << "\n";
    hdr << "property list uchar int vertex_indices\n";
    hdr << "end_header\n";
    out = hdr.str();
  }
  out.reserve(out.size() + mesh.vertices.size() * 24 + mesh.faces.size() * 13);
  const bool has_normals = mesh.vertex_normals.size() == mesh.vertices.size();
  for (size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3& p = mesh.vertices[i];
    const Vec3 n = has_normals ? mesh.vertex_normals[i] : Vec3(0, 0, 1);
    append_f32(out, static_cast<float>(p.x()));
    append_f32(out, static_cast<float>(p.y()));
    append_f32(out, static_cast<float>(p.z()));
    append_f32(out, static_cast<float>(n.x()));
    append_f32(out, static_cast<float>(n.y()));
    append_f32(out, static_cast<float>(n.z()));
  }
  for (const auto& f : mesh.faces) {
    out.push_back(static_cast<char>(3));
    for (int k = 0; k < 3; ++k) {
      const int32_t idx = static_cast<int32_t>(f[k]);
      char b[4];
      std::memcpy(b, &idx, 4);
      out.append(b, 4);
    }
  }
  write_file_atomic(path, out);
}

void write_obj(const std::string& path, const Mesh& mesh) {
  std::string out;
  out.reserve(mesh.vertices.size() * 64 + mesh.faces.size() * 32);
  char line[160];
  const bool has_normals = mesh.vertex_normals.size() == mesh.vertices.size();
  for (const auto& p : mesh.vertices) {
    std::snprintf(line, sizeof(line), "v %.9g %.9g %.9g\n", p.x(), p.y(), p.z());
    out += line;
  }
  if (has_normals)
    for (const auto& n : mesh.vertex_normals) {
      std::snprintf(line, sizeof(line), "vn %.9g %.9g %.9g\n", n.x(), n.y(), n.z());
      out += line;
    }
  for (const auto& f : mesh.faces) {
    if (has_normals)
      std::snprintf(line, sizeof(line), "f %u//%u %u//%u %u//%u\n", f[0] + 1, f[0] + 1,
                    f[1] + 1, f[1] + 1, f[2] + 1, f[2] + 1);
    else
      std::snprintf(line, sizeof(line), "f %u %u %u\n", f[0] + 1, f[1] + 1, f[2] + 1);
    out += line;
  }
  write_file_atomic(path, out);
}

namespace {

struct PlyProperty {
  std::string name;
  std::string type;
  bool is_list = false;
  std::string count_type;
};

struct PlyElement {
  std::string name;
  size_t count = 0;
  std::vector<PlyProperty> props;
};

size_t scalar_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" ||
      t == "float32")
    return 4;
  if (t == "double" || t == "float64") return 8;
  throw ValidationError("ply: unknown property type: " + t);
}

double read_scalar_binary(BinReader& rd, const std::string& t) {
  if (t == "float" || t == "float32") return rd.read_f32();
  if (t == "double" || t == "float64") return rd.read_f64();
  if (t == "char" || t == "int8") return static_cast<int8_t>(rd.read_u8());
  if (t == "uchar" || t == "uint8") return rd.read_u8();
  if (t == "short" || t == "int16") {
    const uint16_t v = rd.read_u8() | (static_cast<uint16_t>(rd.read_u8()) << 8);
    return static_cast<int16_t>(v);
  }
  if (t == "ushort" || t == "uint16")
    return rd.read_u8() | (static_cast<uint16_t>(rd.read_u8()) << 8);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(rd.read_u8()) << (8 * i);
  if (t == "int" || t == "int32") return static_cast<int32_t>(v);
  if (t == "uint" || t == "uint32") return v;
  if (t == "float") {
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
  throw ValidationError("ply: unsupported binary type: " + t);
}

}  // namespace

Mesh read_ply(const std::string& path) {
  const std::string data = read_file(path);
  require(data.rfind("ply", 0) == 0, "ply: missing magic in " + path);

  size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const size_t nl = data.find('\n', pos);
    require(nl != std::string::npos, "ply: truncated header in " + path);
    std::string line = data.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pos = nl + 1;
    return line;
  };

  next_line();  // "ply"
  bool binary = false;
  std::vector<PlyElement> elements;
  for (;;) {
    const std::string line = next_line();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "comment" || tok == "obj_info") continue;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "binary_little_endian")
        binary = true;
      else
        require(fmt == "ascii", "ply: unsupported format " + fmt);
    } else if (tok == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (tok == "property") {
      require(!elements.empty(), "ply: property before element");
      PlyProperty p;
      std::string t;
      ls >> t;
      if (t == "list") {
        p.is_list = true;
        ls >> p.count_type >> p.type >> p.name;
      } else {
        p.type = t;
        ls >> p.name;
      }
      elements.back().props.push_back(p);
    } else if (tok == "end_header") {
      break;
    } else {
      throw ValidationError("ply: unexpected header token '" + tok + "'");
    }
  }

  Mesh mesh;
  BinReader rd(data, pos);
  std::istringstream ascii_body;
  if (!binary) ascii_body.str(data.substr(pos));

  auto read_ascii = [&]() -> double {
    double v;
    require(static_cast<bool>(ascii_body >> v), "ply: truncated ascii body");
    return v;
  };

  for (const auto& e : elements) {
    if (e.name == "vertex") {
      int ix = -1, iy = -1, iz = -1, inx = -1, iny = -1, inz = -1;
      for (size_t p = 0; p < e.props.size(); ++p) {
        const std::string& n = e.props[p].name;
        if (n == "x") ix = static_cast<int>(p);
        if (n == "y") iy = static_cast<int>(p);
        if (n == "z") iz = static_cast<int>(p);
        if (n == "nx") inx = static_cast<int>(p);
        if (n == "ny") iny = static_cast<int>(p);
        if (n == "nz") inz = static_cast<int>(p);
      }
      require(ix >= 0 && iy >= 0 && iz >= 0, "ply: vertex element lacks x/y/z");
      const bool normals = inx >= 0 && iny >= 0 && inz >= 0;
      mesh.vertices.reserve(e.count);
      if (normals) mesh.vertex_normals.reserve(e.count);
      std::vector<double> row(e.props.size());
      for (size_t i = 0; i < e.count; ++i) {
        for (size_t p = 0; p < e.props.size(); ++p) {
          require(!e.props[p].is_list, "ply: list property on vertex unsupported");
          row[p] = binary ? read_scalar_binary(rd, e.props[p].type) : read_ascii();
        }
        mesh.vertices.emplace_back(row[ix], row[iy], row[iz]);
        if (normals) mesh.vertex_normals.emplace_back(row[inx], row[iny], row[inz]);
      }
    } else if (e.name == "face") {
      require(e.props.size() == 1 && e.props[0].is_list, "ply: unsupported face layout");
      for (size_t i = 0; i < e.count; ++i) {
        const int n = static_cast<int>(binary ? read_scalar_binary(rd, e.props[0].count_type)
                                              : read_ascii());
        std::vector<uint32_t> idx(n);
        for (int k = 0; k < n; ++k)
          idx[k] = static_cast<uint32_t>(binary ? read_scalar_binary(rd, e.props[0].type)
                                                : read_ascii());
        for (int k = 2; k < n; ++k) mesh.faces.push_back({idx[0], idx[k - 1], idx[k]});
      }
    } else {
      // Skip unknown elements.
      for (size_t i = 0; i < e.count; ++i)
        for (const auto& p : e.props) {
          if (p.is_list) {
            const int n = static_cast<int>(binary ? read_scalar_binary(rd, p.count_type)
                                                  : read_ascii());
            for (int k = 0; k < n; ++k)
              binary ? static_cast<void>(read_scalar_binary(rd, p.type))
                     : static_cast<void>(read_ascii());
          } else {
            binary ? static_cast<void>(read_scalar_binary(rd, p.type))
                   : static_cast<void>(read_ascii());
          }
        }
    }
  }
  for (const auto& f : mesh.faces)
    for (int k = 0; k < 3; ++k)
      require(f[k] < mesh.vertices.size(), "ply: face index out of range");
  return mesh;
}

Mesh read_obj(const std::string& path) {
  const std::string data = read_file(path);
  Mesh mesh;
  std::vector<Vec3> normals;
  std::vector<int> vertex_normal(0);
  std::istringstream in(data);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "v") {
      double x, y, z;
      ls >> x >> y >> z;
      mesh.vertices.emplace_back(x, y, z);
    } else if (tok == "vn") {
      double x, y, z;
      ls >> x >> y >> z;
      normals.emplace_back(x, y, z);
    } else if (tok == "f") {
      std::vector<uint32_t> vi;
      std::vector<int> ni;
      std::string ref;
      while (ls >> ref) {
        // v, v/t, v//n, v/t/n
        int v = 0, nrm = 0;
        const size_t s1 = ref.find('/');
        v = std::stoi(ref.substr(0, s1));
        if (s1 != std::string::npos) {
          const size_t s2 = ref.find('/', s1 + 1);
          if (s2 != std::string::npos && s2 + 1 < ref.size())
            nrm = std::stoi(ref.substr(s2 + 1));
        }
        require(v > 0, "obj: negative/zero vertex references unsupported");
        vi.push_back(static_cast<uint32_t>(v - 1));
        ni.push_back(nrm - 1);
      }
      require(vi.size() >= 3, "obj: face with fewer than 3 vertices");
      if (vertex_normal.size() < mesh.vertices.size())
        vertex_normal.resize(mesh.vertices.size(), -1);
      for (size_t k = 0; k < vi.size(); ++k)
        if (ni[k] >= 0 && vi[k] < vertex_normal.size()) vertex_normal[vi[k]] = ni[k];
      for (size_t k = 2; k < vi.size(); ++k)
        mesh.faces.push_back({vi[0], vi[k - 1], vi[k]});
    }
  }
  if (!normals.empty()) {
    if (vertex_normal.size() < mesh.vertices.size())
      vertex_normal.resize(mesh.vertices.size(), -1);
    // A vertex-aligned normal list is also accepted (point clouds).
    mesh.vertex_normals.assign(mesh.vertices.size(), Vec3(0, 0, 1));
    for (size_t i = 0; i < mesh.vertices.size(); ++i) {
      int ni = vertex_normal[i];
      if (ni < 0 && i < normals.size()) ni = static_cast<int>(i);
      if (ni >= 0 && ni < static_cast<int>(normals.size())) mesh.vertex_normals[i] = normals[ni];
    }
  }
  for (const auto& f : mesh.faces)
    for (int k = 0; k < 3; ++k)
      require(f[k] < mesh.vertices.size(), "obj: face index out of range");
  return mesh;
}

Mesh read_mesh(const std::string& path) {
  const size_t dot = path.find_last_of('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  if (ext == "ply" || ext == "PLY") return read_ply(path);
  if (ext == "obj" || ext == "OBJ") return read_obj(path);
  throw ValidationError("unsupported mesh format (want .ply or .obj): " + path);
}

}  // namespace geofuse
