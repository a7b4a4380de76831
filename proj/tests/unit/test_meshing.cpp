#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "primfit/io.hpp"
#include "primfit/meshing.hpp"
#include "primfit/quadric.hpp"

using namespace primfit;

namespace {

VertexGrid planar_grid(std::size_t rows, std::size_t cols, double spacing = 1.0) {
  VertexGrid g{rows, cols, {}};
  for (std::size_t k = 0; k < rows; ++k)
    for (std::size_t j = 0; j < cols; ++j) g.vertices.emplace_back(spacing * double(j), spacing * double(k), 0.0);
  return g;
}

double total_area(const SurfaceMesh& m) {
  double a = 0.0;
  for (const auto& f : m.faces) a += face_area(m, f);
  return a;
}

SurfaceMesh triangle_facing_z() {
  SurfaceMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  m.faces = {{0, 1, 2}};
  compute_face_normals(m);
  return m;
}

// Score recomputed from positions alone; orientation flips its sign.
double direct_score(const SurfaceMesh& m, const Vec3& c) {
  double s = 0.0;
  for (const auto& f : m.faces) {
    const Vec3 &a = m.vertices[f[0]], &b = m.vertices[f[1]], &d = m.vertices[f[2]];
    s += (b - a).cross(d - a).normalized().dot(c - (a + b + d) / 3.0);
  }
  return s;
}

}  // namespace

TEST(TriangulateGrid, TwoByTwo) {
  const auto m = triangulate_grid(planar_grid(2, 2));
  ASSERT_EQ(m.faces.size(), 2u);
  EXPECT_LT((m.normals[0] - m.normals[1]).norm(), 1e-15);
  EXPECT_EQ(m.faces[0], (Face{0, 2, 3}));
  EXPECT_EQ(m.faces[1], (Face{0, 3, 1}));
}

TEST(TriangulateGrid, AreaIsConserved) {
  const auto m = triangulate_grid(planar_grid(3, 3));
  EXPECT_EQ(m.faces.size(), 8u);
  EXPECT_NEAR(total_area(m), 4.0, 4e-9);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rows = 2 + rng() % 10, cols = 2 + rng() % 10;
    const double s = u(rng);
    const auto g = triangulate_grid(planar_grid(rows, cols, s));
    const double expected = s * s * double(rows - 1) * double(cols - 1);
    EXPECT_NEAR(total_area(g), expected, 1e-9 * expected);
    EXPECT_EQ(g.faces.size(), 2 * (rows - 1) * (cols - 1));
  }
}

TEST(TriangulateGrid, RepeatedRowDropsDegenerateTriangles) {
  auto g = planar_grid(3, 3);
  for (std::size_t j = 0; j < 3; ++j) g.at(1, j) = g.at(0, j);
  const auto m = triangulate_grid(g);
  EXPECT_EQ(m.faces.size(), 4u);
  ASSERT_EQ(m.warnings.size(), 1u);
  EXPECT_NE(m.warnings[0].find("dropped 4"), std::string::npos);
}

TEST(TriangulateGrid, TooSmall) {
  try {
    triangulate_grid(planar_grid(1, 5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::GridTooSmall);
  }
}

TEST(OrientNormals, TriangleFacingTheCameraIsKept) {
  const auto m = orient_normals(triangle_facing_z(), {0, 0, 5});
  EXPECT_EQ(m.faces[0], (Face{0, 1, 2}));
  EXPECT_EQ(m.normals[0], Vec3(0, 0, 1));
}

TEST(OrientNormals, TriangleFacingAwayIsFlipped) {
  const auto m = orient_normals(triangle_facing_z(), {0, 0, -5});
  EXPECT_EQ(m.normals[0], Vec3(0, 0, -1));
  EXPECT_GE(orientation_score(m, {0, 0, -5}), 0.0);
}

TEST(OrientNormals, ClosedSphereTakesTheHigherScoringWinding) {
  PrincipalFrame unit;
  unit.eigenvalues = Vec3::Ones();
  unit.tau = 1.0;
  const auto outward = ellipsoid_mesh(unit, {24, 12});
  auto inward = outward;
  flip_all_faces(inward);
  const Vec3 camera(0, 0, 4);
  const double s_out = direct_score(outward, camera), s_in = direct_score(inward, camera);
  EXPECT_NEAR(s_out, -s_in, 1e-9);
  const auto chosen = orient_normals(outward, camera);
  EXPECT_EQ(chosen.faces, (s_out >= 0.0 ? outward : inward).faces);
  EXPECT_GE(orientation_score(chosen, camera), 0.0);
  EXPECT_EQ(orient_normals(inward, camera).faces, chosen.faces);
}

TEST(OrientNormals, Idempotent) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-20, 20);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = oracle::random_mesh(rng);
    const Vec3 c(u(rng), u(rng), u(rng));
    const auto once = orient_normals(m, c);
    const auto twice = orient_normals(once, c);
    EXPECT_EQ(once.faces, twice.faces);
    EXPECT_EQ(once.normals, twice.normals);
    EXPECT_GE(orientation_score(once, c), 0.0);
  }
}

TEST(CameraCenter, Examples) {
  Mat34 P = Mat34::Zero();
  P.leftCols<3>() = Mat3::Identity();
  EXPECT_EQ(camera_center(P), Vec3(0, 0, 0));
  P.col(3) = -Vec3(1, -2, 3);
  EXPECT_LT((camera_center(P) - Vec3(1, -2, 3)).norm(), 1e-15);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int trial = 0; trial < 50; ++trial) {
    const Mat3 R = oracle::random_rotation(rng);
    const Vec3 c(u(rng), u(rng), u(rng));
    Mat34 Q;
    Q.leftCols<3>() = R;
    Q.col(3) = -R * c;
    EXPECT_LT((camera_center(Q) - c).norm(), 1e-12 * std::max(1.0, c.norm()));
  }
}

TEST(CameraCenter, SingularBlockIsDegenerate) {
  Mat34 P = Mat34::Zero();
  P(0, 0) = P(1, 1) = 1.0;
  P(2, 3) = 1.0;
  try {
    camera_center(P);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateCamera);
  }
}

TEST(RemoveLongEdges, UniformMeshIsUnchanged) {
  const auto m = triangulate_grid(planar_grid(5, 5));
  const auto out = remove_long_edges(m);
  EXPECT_EQ(out.vertices, m.vertices);
  EXPECT_EQ(out.faces, m.faces);
}

TEST(RemoveLongEdges, OneStretchedFaceIsRemoved) {
  auto m = triangulate_grid(planar_grid(6, 6));
  // A lone triangle hanging off vertex 0 with one edge 100× the median.
  const auto far = static_cast<std::uint32_t>(m.vertices.size());
  m.vertices.emplace_back(-100.0, 0.0, 0.0);
  m.faces.push_back({0, far, 1});
  compute_face_normals(m);
  const auto out = remove_long_edges(m);
  EXPECT_EQ(out.faces.size(), m.faces.size() - 1);
  EXPECT_EQ(out.vertices.size(), m.vertices.size() - 1);
  EXPECT_EQ(oracle::triangles(out), oracle::triangles(triangulate_grid(planar_grid(6, 6))));
}

TEST(RemoveLongEdges, MatchesThePerFaceOracle) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = oracle::random_mesh(rng, 0.3);
    const double t = median_edge_length(m);
    std::vector<oracle::Triangle> expected = oracle::faces_within(m, t);
    if (expected.empty()) {
      EXPECT_THROW(remove_long_edges(m, t), Error);
      continue;
    }
    const auto out = remove_long_edges(m, t);
    EXPECT_EQ(oracle::triangles(out), expected);
    EXPECT_EQ(validate_mesh(out), "");
    const auto again = remove_long_edges(out, t);
    EXPECT_EQ(again.faces, out.faces);
    EXPECT_EQ(again.vertices, out.vertices);
  }
}

TEST(RemoveLongEdges, EverythingRemovedIsAnError) {
  try {
    remove_long_edges(triangulate_grid(planar_grid(3, 3)), 0.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyAfterFilter);
  }
  EXPECT_THROW(remove_long_edges(SurfaceMesh{}), Error);
}

TEST(ExportMesh, SingleTrianglePly) {
  auto m = triangle_facing_z();
  const auto text = meshes_to_string({m}, MeshFormat::Ply, ply::Encoding::Ascii);
  EXPECT_NE(text.find("element vertex 3\n"), std::string::npos);
  EXPECT_NE(text.find("element face 1\n"), std::string::npos);
  EXPECT_NE(text.find("property int source\n"), std::string::npos);
  std::istringstream in(text);
  const auto back = read_meshes_ply(in, "tri.ply");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].faces, m.faces);
  EXPECT_EQ(back[0].vertices, m.vertices);
}

TEST(ExportMesh, TwoObjGroupsWithOffsetIndices) {
  auto a = triangle_facing_z();
  a.source_tag = "first";
  auto b = triangle_facing_z();
  b.source_tag = "second mesh";
  for (auto& v : b.vertices) v += Vec3(0, 0, 1);
  const auto text = meshes_to_string({a, b}, MeshFormat::Obj);
  EXPECT_NE(text.find("g first\n"), std::string::npos);
  EXPECT_NE(text.find("g second_mesh\n"), std::string::npos);
  EXPECT_NE(text.find("f 1//1 2//2 3//3\n"), std::string::npos);
  EXPECT_NE(text.find("f 4//4 5//5 6//6\n"), std::string::npos);
  std::istringstream in(text);
  const auto back = read_meshes_obj(in, "two.obj");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].source_tag, "second_mesh");
  EXPECT_EQ(back[1].faces, b.faces);
  EXPECT_EQ(back[1].vertices, b.vertices);
}

TEST(ExportMesh, RoundTripIsByteStable) {
  std::mt19937_64 rng(5);
  std::vector<SurfaceMesh> meshes{oracle::random_mesh(rng), oracle::random_mesh(rng)};
  meshes[1].source_tag = "other";
  for (auto enc : {ply::Encoding::Ascii, ply::Encoding::BinaryLittleEndian}) {
    const auto first = meshes_to_string(meshes, MeshFormat::Ply, enc);
    std::istringstream in(first);
    const auto second = meshes_to_string(read_meshes_ply(in, "rt.ply"), MeshFormat::Ply, enc);
    std::istringstream in2(second);
    EXPECT_EQ(meshes_to_string(read_meshes_ply(in2, "rt.ply"), MeshFormat::Ply, enc), second);
    EXPECT_EQ(first.size(), second.size());
  }
  const auto first = meshes_to_string(meshes, MeshFormat::Obj);
  std::istringstream in(first);
  const auto second = meshes_to_string(read_meshes_obj(in, "rt.obj"), MeshFormat::Obj);
  std::istringstream in2(second);
  EXPECT_EQ(meshes_to_string(read_meshes_obj(in2, "rt.obj"), MeshFormat::Obj), second);
}

TEST(ExportMesh, UnwritablePathIsAnIoFailure) {
  try {
    export_mesh({triangle_facing_z()}, MeshFormat::Ply, "/nonexistent-dir/x.ply");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IOFailure);
  }
}
