#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "primfit/core.hpp"

namespace primfit {

/// Row-major K×J lattice of vertices; vertex (k, j) lives at k·cols + j.
struct VertexGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Vec3> vertices;

  const Vec3& at(std::size_t k, std::size_t j) const { return vertices[k * cols + j]; }
  Vec3& at(std::size_t k, std::size_t j) { return vertices[k * cols + j]; }
};

/// Two triangles per lattice quad with a fixed diagonal from (k,j) to (k+1,j+1).
/// Zero-area triangles are dropped and counted in a warning.
inline SurfaceMesh triangulate_grid(const VertexGrid& grid, std::string source_tag = "grid") {
  if (grid.rows < 2 || grid.cols < 2) fail(ErrorCode::GridTooSmall, "grid needs at least 2x2 vertices");
  if (grid.vertices.size() != grid.rows * grid.cols) fail(ErrorCode::InvalidArgument, "grid vertex count mismatch");
  for (const auto& v : grid.vertices)
    if (!v.allFinite()) fail(ErrorCode::InvalidArgument, "grid vertex is not finite");

  SurfaceMesh mesh;
  mesh.vertices = grid.vertices;
  mesh.source_tag = std::move(source_tag);
  const auto idx = [&](std::size_t k, std::size_t j) { return static_cast<std::uint32_t>(k * grid.cols + j); };
  std::size_t dropped = 0;
  for (std::size_t k = 0; k + 1 < grid.rows; ++k) {
    for (std::size_t j = 0; j + 1 < grid.cols; ++j) {
      const Face a{idx(k, j), idx(k + 1, j), idx(k + 1, j + 1)};
      const Face b{idx(k, j), idx(k + 1, j + 1), idx(k, j + 1)};
      for (const auto& f : {a, b}) {
        if (is_degenerate(mesh, f)) {
          ++dropped;
          continue;
        }
        mesh.faces.push_back(f);
      }
    }
  }
  if (dropped > 0) mesh.warnings.push_back("dropped " + std::to_string(dropped) + " degenerate triangles");
  compute_face_normals(mesh);
  return mesh;
}

/// Σ_f n_f · (camera − centroid_f); positive when the surface faces the camera overall.
inline double orientation_score(const SurfaceMesh& mesh, const Vec3& camera_center) {
  double score = 0.0;
  for (std::size_t i = 0; i < mesh.faces.size(); ++i)
    score += mesh.normals[i].dot(camera_center - face_centroid(mesh, mesh.faces[i]));
  return score;
}

/// Flips every face when the summed orientation score is negative.
inline SurfaceMesh orient_normals(SurfaceMesh mesh, const Vec3& camera_center) {
  if (orientation_score(mesh, camera_center) < 0.0) flip_all_faces(mesh);
  return mesh;
}

/// Optical center −M⁻¹p₄ of P = [M | p₄].
inline Vec3 camera_center(const Mat34& P) {
  const Mat3 M = P.leftCols<3>();
  Eigen::JacobiSVD<Mat3> svd(M);
  const auto& sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(2) <= 1e-12 * sv(0)) fail(ErrorCode::DegenerateCamera, "left 3x3 block of P is singular");
  return -M.partialPivLu().solve(Vec3(P.col(3)));
}

namespace detail {

inline std::vector<double> unique_edge_lengths(const SurfaceMesh& mesh) {
  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  std::vector<double> lengths;
  for (const auto& f : mesh.faces) {
    for (int e = 0; e < 3; ++e) {
      auto a = f[e], b = f[(e + 1) % 3];
      if (a > b) std::swap(a, b);
      if (seen.emplace(a, b).second) lengths.push_back((mesh.vertices[a] - mesh.vertices[b]).norm());
    }
  }
  return lengths;
}

}  // namespace detail

inline double median_edge_length(const SurfaceMesh& mesh) {
  auto lengths = detail::unique_edge_lengths(mesh);
  if (lengths.empty()) return 0.0;
  std::sort(lengths.begin(), lengths.end());
  const std::size_t n = lengths.size();
  return n % 2 == 1 ? lengths[n / 2] : 0.5 * (lengths[n / 2 - 1] + lengths[n / 2]);
}

inline double max_edge_length(const SurfaceMesh& mesh, const Face& f) {
  double longest = 0.0;
  for (int e = 0; e < 3; ++e) longest = std::max(longest, (mesh.vertices[f[e]] - mesh.vertices[f[(e + 1) % 3]]).norm());
  return longest;
}

/// Keeps the faces for which keep(face_index) holds, then drops vertices no
/// face references. Surviving vertices keep their relative order, so a filter
/// that removes nothing returns the mesh unchanged.
template <typename Pred>
SurfaceMesh filter_faces(const SurfaceMesh& mesh, Pred keep) {
  SurfaceMesh out;
  out.source_tag = mesh.source_tag;
  out.warnings = mesh.warnings;
  std::vector<char> kept(mesh.faces.size(), 0);
  std::vector<std::int64_t> remap(mesh.vertices.size(), -1);
  for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
    if (!keep(i)) continue;
    kept[i] = 1;
    for (auto v : mesh.faces[i]) remap[v] = 0;
  }
  for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
    if (remap[v] < 0) continue;
    remap[v] = static_cast<std::int64_t>(out.vertices.size());
    out.vertices.push_back(mesh.vertices[v]);
    if (!mesh.vertex_normals.empty()) out.vertex_normals.push_back(mesh.vertex_normals[v]);
  }
  for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
    if (!kept[i]) continue;
    const auto& f = mesh.faces[i];
    out.faces.push_back({static_cast<std::uint32_t>(remap[f[0]]), static_cast<std::uint32_t>(remap[f[1]]),
                         static_cast<std::uint32_t>(remap[f[2]])});
    out.normals.push_back(mesh.normals[i]);
  }
  return out;
}

/// Deletes faces with any edge longer than the threshold (default: five times
/// the median edge length) and then the vertices left unreferenced.
inline SurfaceMesh remove_long_edges(const SurfaceMesh& mesh, std::optional<double> threshold = std::nullopt) {
  if (mesh.faces.empty()) fail(ErrorCode::InvalidArgument, "remove_long_edges needs a non-empty mesh");
  const double limit = threshold ? *threshold : 5.0 * median_edge_length(mesh);
  if (!(limit >= 0.0)) fail(ErrorCode::InvalidArgument, "edge threshold must be non-negative");
  auto out = filter_faces(mesh, [&](std::size_t i) { return max_edge_length(mesh, mesh.faces[i]) <= limit; });
  if (out.faces.empty()) fail(ErrorCode::EmptyAfterFilter, "every face exceeded the edge threshold");
  return out;
}

}  // namespace primfit
