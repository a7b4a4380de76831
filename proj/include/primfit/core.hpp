#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Dense>

#include "primfit/error.hpp"

namespace primfit {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;

using Face = std::array<std::uint32_t, 3>;

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

inline bool all_finite(const Vec3& v) { return v.allFinite(); }

// ---------------------------------------------------------------------------
// PointCloud

class PointCloud {
 public:
  PointCloud() = default;

  explicit PointCloud(std::vector<Vec3> points, std::vector<Rgb> colours = {})
      : points_(std::move(points)), colours_(std::move(colours)) {
    if (points_.empty()) fail(ErrorCode::InvalidArgument, "point cloud must contain at least one point");
    for (std::size_t k = 0; k < points_.size(); ++k) {
      if (!points_[k].allFinite())
        fail(ErrorCode::InvalidArgument, "point " + std::to_string(k) + " has a non-finite coordinate");
    }
    if (!colours_.empty() && colours_.size() != points_.size())
      fail(ErrorCode::InvalidArgument, "colour count does not match point count");
  }

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const Vec3& operator[](std::size_t k) const { return points_[k]; }
  const std::vector<Vec3>& points() const { return points_; }
  const std::vector<Rgb>& colours() const { return colours_; }
  bool has_colours() const { return !colours_.empty(); }

  /// Gathers the listed points into a new point list, preserving index order.
  std::vector<Vec3> subset(const std::vector<std::size_t>& indices) const {
    std::vector<Vec3> out;
    out.reserve(indices.size());
    for (auto k : indices) out.push_back(points_.at(k));
    return out;
  }

 private:
  std::vector<Vec3> points_;
  std::vector<Rgb> colours_;
};

// ---------------------------------------------------------------------------
// CameraView

struct ImageSize {
  int width = 0;
  int height = 0;
};

class CameraView {
 public:
  CameraView() = default;

  CameraView(int id, const Mat34& projection, std::string image_ref, ImageSize size)
      : id_(id), projection_(projection), image_ref_(std::move(image_ref)), size_(size) {
    if (size_.width <= 0 || size_.height <= 0)
      fail(ErrorCode::InvalidArgument, "camera " + std::to_string(id_) + ": image size must be positive");
    if (!projection_.allFinite())
      fail(ErrorCode::InvalidArgument, "camera " + std::to_string(id_) + ": non-finite projection matrix");
    Eigen::JacobiSVD<Mat34> svd(projection_);
    const auto& sv = svd.singularValues();
    if (!(sv(0) > 0.0) || sv(2) <= 1e-12 * sv(0))
      fail(ErrorCode::InvalidArgument, "camera " + std::to_string(id_) + ": projection matrix must have rank 3");
  }

  int id() const { return id_; }
  const Mat34& projection() const { return projection_; }
  const std::string& image_ref() const { return image_ref_; }
  ImageSize image_size() const { return size_; }

  /// Clamps a pixel position into the image (origin top-left, y down).
  Vec2 clamp_to_image(const Vec2& y) const {
    return {std::clamp(y.x(), 0.0, double(size_.width - 1)), std::clamp(y.y(), 0.0, double(size_.height - 1))};
  }

 private:
  int id_ = 0;
  Mat34 projection_ = Mat34::Zero();
  std::string image_ref_;
  ImageSize size_;
};

/// Pinhole projection P·[z;1] followed by homogeneous division.
/// Throws PointAtInfinity when the homogeneous component vanishes.
inline Vec2 project(const Mat34& P, const Vec3& z) {
  const Eigen::Vector3d h = P.leftCols<3>() * z + P.col(3);
  if (std::abs(h.z()) <= 1e-12) fail(ErrorCode::PointAtInfinity, "point projects to infinity");
  return {h.x() / h.z(), h.y() / h.z()};
}

inline Vec2 project(const CameraView& camera, const Vec3& z) { return project(camera.projection(), z); }

/// Non-throwing variant for hot loops.
inline std::optional<Vec2> try_project(const Mat34& P, const Vec3& z) {
  const Eigen::Vector3d h = P.leftCols<3>() * z + P.col(3);
  if (!(std::abs(h.z()) > 1e-12)) return std::nullopt;
  return Vec2(h.x() / h.z(), h.y() / h.z());
}

// ---------------------------------------------------------------------------
// Sketches

class Stroke {
 public:
  Stroke() = default;

  Stroke(int view_id, Rgb colour, double width_px, std::vector<Vec2> raw_points)
      : view_id_(view_id), colour_(colour), width_px_(width_px), raw_points_(std::move(raw_points)) {
    if (!(width_px_ > 0.0) || !std::isfinite(width_px_))
      fail(ErrorCode::InvalidArgument, "stroke width must be positive");
    for (const auto& p : raw_points_)
      if (!p.allFinite()) fail(ErrorCode::InvalidArgument, "stroke point is not finite");
  }

  /// Builds a stroke for a view, clamping raw positions to the image bounds.
  static Stroke ingest(const CameraView& view, Rgb colour, double width_px, std::vector<Vec2> raw) {
    for (auto& p : raw) {
      if (!p.allFinite()) fail(ErrorCode::InvalidArgument, "stroke point is not finite");
      p = view.clamp_to_image(p);
    }
    return Stroke(view.id(), colour, width_px, std::move(raw));
  }

  int view_id() const { return view_id_; }
  Rgb colour() const { return colour_; }
  double width_px() const { return width_px_; }
  const std::vector<Vec2>& raw_points() const { return raw_points_; }

 private:
  int view_id_ = 0;
  Rgb colour_;
  double width_px_ = 1.0;
  std::vector<Vec2> raw_points_;
};

struct SketchSet {
  std::vector<Stroke> strokes;

  /// Strokes sharing a colour; one selection query.
  std::vector<Stroke> group(Rgb colour) const {
    std::vector<Stroke> out;
    for (const auto& s : strokes)
      if (s.colour() == colour) out.push_back(s);
    return out;
  }
};

// ---------------------------------------------------------------------------
// SurfaceMesh

struct SurfaceMesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::vector<Vec3> normals;  // per face, unit length
  // Optional per-vertex normals; when empty they are derived on export.
  std::vector<Vec3> vertex_normals;
  std::string source_tag;
  std::vector<std::string> warnings;

  std::size_t vertex_count() const { return vertices.size(); }
  std::size_t face_count() const { return faces.size(); }
};

inline Vec3 face_cross(const SurfaceMesh& m, const Face& f) {
  return (m.vertices[f[1]] - m.vertices[f[0]]).cross(m.vertices[f[2]] - m.vertices[f[0]]);
}

inline double face_area(const SurfaceMesh& m, const Face& f) { return 0.5 * face_cross(m, f).norm(); }

inline Vec3 face_centroid(const SurfaceMesh& m, const Face& f) {
  return (m.vertices[f[0]] + m.vertices[f[1]] + m.vertices[f[2]]) / 3.0;
}

inline constexpr double kMinFaceArea = 1e-12;

inline bool is_degenerate(const SurfaceMesh& m, const Face& f) {
  return f[0] == f[1] || f[1] == f[2] || f[0] == f[2] || face_area(m, f) <= kMinFaceArea;
}

/// Recomputes per-face normals from the winding. Degenerate faces get a zero normal.
inline void compute_face_normals(SurfaceMesh& m) {
  m.normals.resize(m.faces.size());
  for (std::size_t i = 0; i < m.faces.size(); ++i) {
    Vec3 n = face_cross(m, m.faces[i]);
    const double len = n.norm();
    m.normals[i] = len > 0.0 ? Vec3(n / len) : Vec3::Zero();
  }
}

/// Area-weighted average of incident face normals.
inline std::vector<Vec3> area_weighted_vertex_normals(const SurfaceMesh& m) {
  std::vector<Vec3> vn(m.vertices.size(), Vec3::Zero());
  for (const auto& f : m.faces) {
    const Vec3 c = face_cross(m, f);  // |c| = 2·area, direction = normal
    for (auto v : f) vn[v] += c;
  }
  for (auto& n : vn) {
    const double len = n.norm();
    if (len > 0.0) n /= len;
  }
  return vn;
}

/// Checks the structural invariants; returns an empty string when valid.
inline std::string validate_mesh(const SurfaceMesh& m) {
  if (m.normals.size() != m.faces.size()) return "normal count does not match face count";
  for (std::size_t i = 0; i < m.faces.size(); ++i) {
    const auto& f = m.faces[i];
    for (auto v : f)
      if (v >= m.vertices.size()) return "face " + std::to_string(i) + " indexes past the vertex list";
    if (is_degenerate(m, f)) return "face " + std::to_string(i) + " is degenerate";
    if (std::abs(m.normals[i].norm() - 1.0) > 1e-9) return "normal " + std::to_string(i) + " is not unit length";
  }
  return {};
}

/// Flips the winding (and normal) of every face.
inline void flip_all_faces(SurfaceMesh& m) {
  for (auto& f : m.faces) std::swap(f[1], f[2]);
  for (auto& n : m.normals) n = -n;
  for (auto& n : m.vertex_normals) n = -n;
}

}  // namespace primfit
