#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "primfit/core.hpp"
#include "primfit/ply.hpp"

namespace primfit {

namespace fs = std::filesystem;

enum class MeshFormat { Ply, Obj };

inline MeshFormat parse_mesh_format(const std::string& s) {
  if (s == "ply") return MeshFormat::Ply;
  if (s == "obj") return MeshFormat::Obj;
  fail(ErrorCode::InvalidArgument, "unknown mesh format '" + s + "' (expected ply or obj)");
}

inline const char* extension(MeshFormat f) { return f == MeshFormat::Ply ? "ply" : "obj"; }

namespace detail {

inline std::ifstream open_in(const fs::path& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) fail(ErrorCode::IOFailure, "cannot open '" + path.string() + "' for reading");
  return in;
}

inline std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IOFailure, "cannot open '" + path.string() + "' for writing");
  return out;
}

inline void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) fail(ErrorCode::IOFailure, "write to '" + path.string() + "' failed");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Point clouds

inline PointCloud read_point_cloud(std::istream& in, const std::string& source) {
  ply::Reader reader(in, source);
  const auto* vertex = reader.header().find("vertex");
  if (!vertex) fail(ErrorCode::ParseError, source + ": no 'vertex' element");
  const int ix = vertex->index_of("x"), iy = vertex->index_of("y"), iz = vertex->index_of("z");
  if (ix < 0 || iy < 0 || iz < 0) fail(ErrorCode::ParseError, source + ": vertex element lacks x, y or z");
  const int ir = vertex->index_of("red"), ig = vertex->index_of("green"), ib = vertex->index_of("blue");
  const bool colours = ir >= 0 && ig >= 0 && ib >= 0;

  std::size_t vertex_element = 0;
  for (std::size_t e = 0; e < reader.header().elements.size(); ++e)
    if (&reader.header().elements[e] == vertex) vertex_element = e;

  std::vector<Vec3> points;
  std::vector<Rgb> rgb;
  points.reserve(vertex->count);
  reader.read([&](std::size_t e, std::size_t r, const ply::Row& row) {
    if (e != vertex_element) return;
    const Vec3 p(row.values[ix], row.values[iy], row.values[iz]);
    if (!p.allFinite()) reader.error_at_row(*vertex, r, "non-finite coordinate");
    points.push_back(p);
    if (colours)
      rgb.push_back({static_cast<std::uint8_t>(row.values[ir]), static_cast<std::uint8_t>(row.values[ig]),
                     static_cast<std::uint8_t>(row.values[ib])});
  });
  if (points.empty()) fail(ErrorCode::ParseError, source + ": point cloud has no vertices");
  return PointCloud(std::move(points), std::move(rgb));
}

inline PointCloud load_point_cloud(const fs::path& path) {
  auto in = detail::open_in(path, true);
  return read_point_cloud(in, path.string());
}

inline void write_point_cloud(std::ostream& out, const PointCloud& cloud, ply::Encoding enc) {
  ply::Header h;
  h.encoding = enc;
  ply::Element v{"vertex", cloud.size(), {{"x"}, {"y"}, {"z"}}};
  if (cloud.has_colours())
    for (const char* c : {"red", "green", "blue"}) v.properties.push_back({c, ply::Type::UInt8});
  h.elements.push_back(v);
  ply::write_header(out, h);
  for (std::size_t k = 0; k < cloud.size(); ++k) {
    std::vector<std::pair<ply::Type, double>> vals = {
        {ply::Type::Float32, cloud[k].x()}, {ply::Type::Float32, cloud[k].y()}, {ply::Type::Float32, cloud[k].z()}};
    if (cloud.has_colours()) {
      const auto& c = cloud.colours()[k];
      vals.insert(vals.end(), {{ply::Type::UInt8, c.r}, {ply::Type::UInt8, c.g}, {ply::Type::UInt8, c.b}});
    }
    for (std::size_t i = 0; i < vals.size(); ++i) {
      if (enc == ply::Encoding::Ascii && i > 0) out << ' ';
      ply::write_value(out, vals[i].first, vals[i].second, enc);
    }
    if (enc == ply::Encoding::Ascii) out << '\n';
  }
}

inline void save_point_cloud(const fs::path& path, const PointCloud& cloud, ply::Encoding enc) {
  auto out = detail::open_out(path);
  write_point_cloud(out, cloud, enc);
  detail::finish(out, path);
}

// ---------------------------------------------------------------------------
// Cameras: [{ "id": int, "P": [12 floats row-major], "image": str, "width": int, "height": int }]

inline std::vector<CameraView> parse_cameras(const nlohmann::json& doc, const std::string& source) {
  if (!doc.is_array()) fail(ErrorCode::ParseError, source + ": camera file must be a JSON array");
  std::vector<CameraView> views;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& c = doc[i];
    const std::string where = source + ": camera " + std::to_string(i);
    try {
      const auto& P = c.at("P");
      if (!P.is_array() || P.size() != 12) fail(ErrorCode::ParseError, where + ": 'P' must hold 12 numbers");
      Mat34 m;
      for (int r = 0; r < 3; ++r)
        for (int col = 0; col < 4; ++col) m(r, col) = P.at(r * 4 + col).get<double>();
      views.emplace_back(c.at("id").get<int>(), m, c.at("image").get<std::string>(),
                         ImageSize{c.at("width").get<int>(), c.at("height").get<int>()});
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ParseError, where + ": " + e.what());
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ParseError) throw;
      fail(ErrorCode::ParseError, where + ": " + e.what());
    }
  }
  return views;
}

inline std::vector<CameraView> load_cameras(const fs::path& path) {
  auto in = detail::open_in(path, false);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  return parse_cameras(doc, path.string());
}

inline nlohmann::json cameras_to_json(const std::vector<CameraView>& views) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& v : views) {
    std::vector<double> P;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) P.push_back(v.projection()(r, c));
    doc.push_back({{"id", v.id()}, {"P", P}, {"image", v.image_ref()}, {"width", v.image_size().width},
                   {"height", v.image_size().height}});
  }
  return doc;
}

// ---------------------------------------------------------------------------
// Meshes

namespace detail {

inline std::string sanitize_tag(std::string tag) {
  if (tag.empty()) tag = "mesh";
  for (auto& ch : tag)
    if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') ch = '_';
  return tag;
}

inline std::vector<Vec3> export_vertex_normals(const SurfaceMesh& m) {
  if (m.vertex_normals.size() == m.vertices.size()) return m.vertex_normals;
  return area_weighted_vertex_normals(m);
}

}  // namespace detail

/// Concatenated PLY with per-vertex normals and a per-face `source` index.
/// Header comments record each mesh's tag and vertex/face ranges.
inline void write_meshes_ply(std::ostream& out, const std::vector<SurfaceMesh>& meshes,
                             ply::Encoding enc = ply::Encoding::BinaryLittleEndian) {
  ply::Header h;
  h.encoding = enc;
  h.comments.push_back("generated by primfit");
  std::size_t nv = 0, nf = 0;
  for (std::size_t i = 0; i < meshes.size(); ++i) {
    h.comments.push_back("mesh " + std::to_string(i) + " " + detail::sanitize_tag(meshes[i].source_tag) + " " +
                         std::to_string(meshes[i].vertices.size()) + " " + std::to_string(meshes[i].faces.size()));
    nv += meshes[i].vertices.size();
    nf += meshes[i].faces.size();
  }
  h.elements.push_back({"vertex", nv, {{"x"}, {"y"}, {"z"}, {"nx"}, {"ny"}, {"nz"}}});
  h.elements.push_back(
      {"face", nf, {{"vertex_indices", ply::Type::Int32, true, ply::Type::UInt8}, {"source", ply::Type::Int32}}});
  ply::write_header(out, h);

  const bool ascii = enc == ply::Encoding::Ascii;
  for (const auto& m : meshes) {
    const auto vn = detail::export_vertex_normals(m);
    for (std::size_t k = 0; k < m.vertices.size(); ++k) {
      const double vals[6] = {m.vertices[k].x(), m.vertices[k].y(), m.vertices[k].z(), vn[k].x(), vn[k].y(), vn[k].z()};
      for (int i = 0; i < 6; ++i) {
        if (ascii && i > 0) out << ' ';
        ply::write_value(out, ply::Type::Float32, vals[i], enc);
      }
      if (ascii) out << '\n';
    }
  }
  std::size_t offset = 0;
  for (std::size_t s = 0; s < meshes.size(); ++s) {
    for (const auto& f : meshes[s].faces) {
      ply::write_value(out, ply::Type::UInt8, 3, enc);
      for (auto v : f) {
        if (ascii) out << ' ';
        ply::write_value(out, ply::Type::Int32, double(offset + v), enc);
      }
      if (ascii) out << ' ';
      ply::write_value(out, ply::Type::Int32, double(s), enc);
      if (ascii) out << '\n';
    }
    offset += meshes[s].vertices.size();
  }
}

/// Wavefront OBJ with one `g` group per mesh and shared v/vn indexing.
inline void write_meshes_obj(std::ostream& out, const std::vector<SurfaceMesh>& meshes) {
  out << "# generated by primfit\n";
  std::size_t offset = 1;
  for (const auto& m : meshes) {
    out << "g " << detail::sanitize_tag(m.source_tag) << "\n";
    const auto vn = detail::export_vertex_normals(m);
    for (const auto& v : m.vertices)
      out << "v " << ply::format_float(float(v.x())) << ' ' << ply::format_float(float(v.y())) << ' '
          << ply::format_float(float(v.z())) << "\n";
    for (const auto& n : vn)
      out << "vn " << ply::format_float(float(n.x())) << ' ' << ply::format_float(float(n.y())) << ' '
          << ply::format_float(float(n.z())) << "\n";
    for (const auto& f : m.faces) {
      out << "f";
      for (auto v : f) out << ' ' << offset + v << "//" << offset + v;
      out << "\n";
    }
    offset += m.vertices.size();
  }
}

inline void write_meshes(std::ostream& out, const std::vector<SurfaceMesh>& meshes, MeshFormat format,
                         ply::Encoding enc = ply::Encoding::BinaryLittleEndian) {
  if (format == MeshFormat::Ply)
    write_meshes_ply(out, meshes, enc);
  else
    write_meshes_obj(out, meshes);
}

inline void export_mesh(const std::vector<SurfaceMesh>& meshes, MeshFormat format, const fs::path& path,
                        ply::Encoding enc = ply::Encoding::BinaryLittleEndian) {
  auto out = detail::open_out(path);
  write_meshes(out, meshes, format, enc);
  detail::finish(out, path);
}

inline std::string meshes_to_string(const std::vector<SurfaceMesh>& meshes, MeshFormat format,
                                    ply::Encoding enc = ply::Encoding::BinaryLittleEndian) {
  std::ostringstream out(std::ios::binary);
  write_meshes(out, meshes, format, enc);
  return out.str();
}

namespace detail {

inline void finalize_imported(SurfaceMesh& m) {
  compute_face_normals(m);
  if (!m.vertex_normals.empty() && m.vertex_normals.size() != m.vertices.size()) m.vertex_normals.clear();
}

}  // namespace detail

/// Reads a PLY mesh. Files written by primfit split back into their source
/// meshes; any other PLY (e.g. an external Poisson surface) becomes one mesh.
/// Polygons are fan-triangulated.
inline std::vector<SurfaceMesh> read_meshes_ply(std::istream& in, const std::string& source) {
  ply::Reader reader(in, source);
  const auto& header = reader.header();
  const auto* vertex = header.find("vertex");
  if (!vertex) fail(ErrorCode::ParseError, source + ": no 'vertex' element");
  const int ix = vertex->index_of("x"), iy = vertex->index_of("y"), iz = vertex->index_of("z");
  if (ix < 0 || iy < 0 || iz < 0) fail(ErrorCode::ParseError, source + ": vertex element lacks x, y or z");
  const int inx = vertex->index_of("nx"), iny = vertex->index_of("ny"), inz = vertex->index_of("nz");
  const bool has_normals = inx >= 0 && iny >= 0 && inz >= 0;
  const auto* face = header.find("face");
  int ilist = -1;
  if (face) {
    ilist = face->index_of("vertex_indices");
    if (ilist < 0) ilist = face->index_of("vertex_index");
    if (ilist < 0 || !face->properties[ilist].is_list) fail(ErrorCode::ParseError, source + ": face element lacks a vertex index list");
  }

  // Mesh layout recorded by write_meshes_ply.
  struct Layout {
    std::string tag;
    std::size_t vertices, faces;
  };
  std::vector<Layout> layout;
  for (const auto& c : header.comments) {
    std::istringstream ss(c);
    std::string word, tag;
    std::size_t idx = 0, nv = 0, nf = 0;
    if (ss >> word && word == "mesh" && ss >> idx >> tag >> nv >> nf && idx == layout.size()) layout.push_back({tag, nv, nf});
  }
  std::size_t total_v = 0, total_f = 0;
  for (const auto& l : layout) total_v += l.vertices, total_f += l.faces;
  if (layout.empty() || total_v != vertex->count || total_f != (face ? face->count : 0)) {
    layout = {{fs::path(source).stem().string(), vertex->count, face ? face->count : 0}};
  }

  std::vector<Vec3> verts, normals;
  std::vector<std::vector<std::uint32_t>> polys;
  reader.read([&](std::size_t e, std::size_t r, const ply::Row& row) {
    const auto& el = header.elements[e];
    if (&el == vertex) {
      const Vec3 p(row.values[ix], row.values[iy], row.values[iz]);
      if (!p.allFinite()) reader.error_at_row(el, r, "non-finite coordinate");
      verts.push_back(p);
      if (has_normals) normals.emplace_back(row.values[inx], row.values[iny], row.values[inz]);
    } else if (&el == face) {
      std::vector<std::uint32_t> poly;
      for (double v : row.lists[ilist]) {
        if (v < 0 || v >= double(vertex->count)) reader.error_at_row(el, r, "vertex index out of range");
        poly.push_back(static_cast<std::uint32_t>(v));
      }
      if (poly.size() < 3) reader.error_at_row(el, r, "face with fewer than three vertices");
      polys.push_back(std::move(poly));
    }
  });

  std::vector<SurfaceMesh> meshes;
  std::size_t v0 = 0, f0 = 0;
  for (const auto& l : layout) {
    SurfaceMesh m;
    m.source_tag = l.tag;
    m.vertices.assign(verts.begin() + v0, verts.begin() + v0 + l.vertices);
    if (has_normals) m.vertex_normals.assign(normals.begin() + v0, normals.begin() + v0 + l.vertices);
    for (std::size_t f = f0; f < f0 + l.faces; ++f) {
      const auto& poly = polys[f];
      for (std::size_t t = 1; t + 1 < poly.size(); ++t) {
        Face tri{poly[0], poly[t], poly[t + 1]};
        for (auto& v : tri) {
          if (v < v0 || v >= v0 + l.vertices) fail(ErrorCode::ParseError, source + ": face " + std::to_string(f) + " references another mesh");
          v -= static_cast<std::uint32_t>(v0);
        }
        m.faces.push_back(tri);
      }
    }
    detail::finalize_imported(m);
    meshes.push_back(std::move(m));
    v0 += l.vertices;
    f0 += l.faces;
  }
  return meshes;
}

/// Reads an OBJ file; each `g`/`o` statement starts a new mesh.
inline std::vector<SurfaceMesh> read_meshes_obj(std::istream& in, const std::string& source) {
  std::vector<SurfaceMesh> meshes;
  std::vector<std::size_t> first_vertex;  // global (0-based) index of each mesh's first vertex
  std::size_t global_v = 0;
  std::string line;
  std::size_t lineno = 0;
  auto current = [&]() -> SurfaceMesh& {
    if (meshes.empty()) {
      meshes.emplace_back();
      meshes.back().source_tag = fs::path(source).stem().string();
      first_vertex.push_back(global_v);
    }
    return meshes.back();
  };
  auto error = [&](const std::string& what) { fail(ErrorCode::ParseError, source + ":" + std::to_string(lineno) + ": " + what); };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string kw;
    if (!(ss >> kw) || kw[0] == '#') continue;
    if (kw == "g" || kw == "o") {
      std::string tag;
      ss >> tag;
      meshes.emplace_back();
      meshes.back().source_tag = tag;
      first_vertex.push_back(global_v);
    } else if (kw == "v") {
      Vec3 p;
      if (!(ss >> p.x() >> p.y() >> p.z())) error("malformed vertex");
      if (!p.allFinite()) error("non-finite coordinate");
      current().vertices.push_back(p);
      ++global_v;
    } else if (kw == "vn") {
      Vec3 n;
      if (!(ss >> n.x() >> n.y() >> n.z())) error("malformed normal");
      current().vertex_normals.push_back(n);
    } else if (kw == "f") {
      auto& m = current();
      const std::size_t base = first_vertex.back();
      std::vector<std::uint32_t> poly;
      std::string tok;
      while (ss >> tok) {
        long long idx = 0;
        auto res = std::from_chars(tok.data(), tok.data() + tok.size(), idx);
        if (res.ec != std::errc()) error("malformed face index '" + tok + "'");
        if (idx < 0) idx = static_cast<long long>(global_v) + idx + 1;
        if (idx < 1 || std::size_t(idx) > global_v) error("face index out of range");
        const std::size_t g = std::size_t(idx) - 1;
        if (g < base || g >= base + m.vertices.size()) error("face references a vertex of another group");
        poly.push_back(static_cast<std::uint32_t>(g - base));
      }
      if (poly.size() < 3) error("face with fewer than three vertices");
      for (std::size_t t = 1; t + 1 < poly.size(); ++t) m.faces.push_back({poly[0], poly[t], poly[t + 1]});
    }
  }
  for (auto& m : meshes) detail::finalize_imported(m);
  return meshes;
}

inline std::vector<SurfaceMesh> import_meshes(const fs::path& path) {
  const bool obj = path.extension() == ".obj";
  auto in = detail::open_in(path, !obj);
  return obj ? read_meshes_obj(in, path.string()) : read_meshes_ply(in, path.string());
}

}  // namespace primfit
