#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "primfit/core.hpp"
#include "primfit/meshing.hpp"

namespace primfit {

/// Parameter vector ordered [a11, a22, a33, a12, a13, a23, b1, b2, b3, c].
using QuadricParams = Eigen::Matrix<double, 10, 1>;
using Vec10 = Eigen::Matrix<double, 10, 1>;
using Mat10 = Eigen::Matrix<double, 10, 10>;

/// Implicit surface zᵀAz + bᵀz + c = 0 with symmetric A.
struct Quadric {
  Mat3 A = Mat3::Zero();
  Vec3 b = Vec3::Zero();
  double c = 0.0;

  double evaluate(const Vec3& z) const { return z.dot(A * z) + b.dot(z) + c; }
  Vec3 gradient(const Vec3& z) const { return 2.0 * A * z + b; }

  static Quadric from_params(const QuadricParams& psi) {
    Quadric q;
    q.A << psi(0), psi(3), psi(4),
           psi(3), psi(1), psi(5),
           psi(4), psi(5), psi(2);
    q.b = psi.segment<3>(6);
    q.c = psi(9);
    return q;
  }

  QuadricParams params() const {
    QuadricParams psi;
    psi << A(0, 0), A(1, 1), A(2, 2), A(0, 1), A(0, 2), A(1, 2), b(0), b(1), b(2), c;
    return psi;
  }

  Quadric negated() const { return Quadric{-A, -b, -c}; }
};

/// [z1², z2², z3², 2z1z2, 2z1z3, 2z2z3, z1, z2, z3, 1]; ψᵀx = zᵀAz + bᵀz + c.
inline Vec10 monomial_vector(const Vec3& z) {
  Vec10 x;
  x << z(0) * z(0), z(1) * z(1), z(2) * z(2), 2.0 * z(0) * z(1), 2.0 * z(0) * z(2), 2.0 * z(1) * z(2), z(0), z(1),
      z(2), 1.0;
  return x;
}

/// Prior mean of the quadratic block: the unit-coefficient sphere.
inline QuadricParams sphere_prior_mean() {
  QuadricParams r = QuadricParams::Zero();
  r.head<3>().setOnes();
  return r;
}

inline constexpr double kMaxConditionNumber = 1e14;

/// MAP quadric: ψ = (σ²XᵀX + blkdiag(I₆, 0₄))⁻¹ r with r the sphere prior mean.
///
/// Points are centred and scaled to unit RMS radius before the solve and the
/// result is mapped back exactly, so the surface {ψᵀx = 0} is expressed in the
/// caller's coordinates. An empty input returns the prior mean.
inline QuadricParams fit_quadric_map(std::span<const Vec3> points, double prior_sigma) {
  if (!(prior_sigma > 0.0) || !std::isfinite(prior_sigma))
    fail(ErrorCode::InvalidArgument, "prior_sigma must be positive");
  if (points.empty()) return sphere_prior_mean();

  Vec3 mean = Vec3::Zero();
  for (const auto& z : points) {
    if (!z.allFinite()) fail(ErrorCode::InvalidArgument, "non-finite point in quadric fit");
    mean += z;
  }
  mean /= double(points.size());
  double ms = 0.0;
  for (const auto& z : points) ms += (z - mean).squaredNorm();
  double scale = std::sqrt(ms / double(points.size()));
  if (!(scale > 0.0)) scale = 1.0;

  Mat10 xtx = Mat10::Zero();
  for (const auto& z : points) {
    const Vec10 x = monomial_vector((z - mean) / scale);
    xtx.selfadjointView<Eigen::Lower>().rankUpdate(x);
  }
  xtx = xtx.selfadjointView<Eigen::Lower>();

  Mat10 system = prior_sigma * prior_sigma * xtx;
  system.topLeftCorner<6, 6>() += Eigen::Matrix<double, 6, 6>::Identity();

  Eigen::SelfAdjointEigenSolver<Mat10> eig(system, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff(), hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > kMaxConditionNumber)
    fail(ErrorCode::SingularSystem, "regularized quadric system is numerically singular");

  const Eigen::LLT<Mat10> llt(system);
  if (llt.info() != Eigen::Success) fail(ErrorCode::SingularSystem, "quadric system is not positive definite");
  const QuadricParams local = llt.solve(sphere_prior_mean());

  // (z-m)ᵀA'(z-m)/s² + b'ᵀ(z-m)/s + c' expanded in z.
  const Quadric ql = Quadric::from_params(local);
  Quadric q;
  q.A = ql.A / (scale * scale);
  q.b = ql.b / scale - 2.0 * q.A * mean;
  q.c = mean.dot(q.A * mean) - ql.b.dot(mean) / scale + ql.c;
  return q.params();
}

inline Quadric fit_quadric(std::span<const Vec3> points, double prior_sigma) {
  return Quadric::from_params(fit_quadric_map(points, prior_sigma));
}

/// Per-axis coverage of the supporting data in a principal frame.
struct AxisExtent {
  double min = 0.0;
  double max = 0.0;
  double range() const { return max - min; }
};

/// Centre, orthonormal axes and scale of a quadric, plus the extents of the
/// data projected onto those axes.
struct PrincipalFrame {
  Vec3 center = Vec3::Zero();
  Mat3 axes = Mat3::Identity();  // columns are eigenvectors of A
  Vec3 eigenvalues = Vec3::Zero();
  double tau = 0.0;
  std::array<AxisExtent, 3> extents{};

  Vec3 local(const Vec3& z) const { return axes.transpose() * (z - center); }

  /// √(τ/λᵢ); only meaningful when all λᵢ and τ share a sign.
  Vec3 radii() const {
    return {std::sqrt(tau / eigenvalues(0)), std::sqrt(tau / eigenvalues(1)), std::sqrt(tau / eigenvalues(2))};
  }

  void compute_extents(std::span<const Vec3> points) {
    if (points.empty()) {
      extents = {};
      return;
    }
    for (int a = 0; a < 3; ++a) extents[a] = {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& z : points) {
      const Vec3 p = local(z);
      for (int a = 0; a < 3; ++a) {
        extents[a].min = std::min(extents[a].min, p(a));
        extents[a].max = std::max(extents[a].max, p(a));
      }
    }
  }
};

namespace detail {

/// Flips each column so that its largest-magnitude component is positive.
inline void canonical_signs(Mat3& V) {
  for (int c = 0; c < 3; ++c) {
    Eigen::Index i = 0;
    V.col(c).cwiseAbs().maxCoeff(&i);
    if (V(i, c) < 0.0) V.col(c) = -V.col(c);
  }
}

/// A quadric and its negation describe the same surface; prefer trace(A) ≥ 0.
inline Quadric positive_form(const Quadric& q) { return q.A.trace() < 0.0 ? q.negated() : q; }

}  // namespace detail

/// Completes the square: (z−μ)ᵀA(z−μ) = τ with μ = −½A⁻¹b, τ = μᵀAμ − c.
inline PrincipalFrame principal_frame(const Quadric& input, std::span<const Vec3> points) {
  const Quadric q = detail::positive_form(input);
  Eigen::SelfAdjointEigenSolver<Mat3> eig(q.A);
  if (eig.info() != Eigen::Success) fail(ErrorCode::DegenerateQuadric, "eigen-decomposition failed");
  const Vec3 lambda = eig.eigenvalues();
  const double largest = lambda.cwiseAbs().maxCoeff();
  if (!(largest > 0.0) || lambda.cwiseAbs().minCoeff() <= 1e-12 * largest)
    fail(ErrorCode::DegenerateQuadric, "matrix A is singular");

  PrincipalFrame frame;
  frame.axes = eig.eigenvectors();
  detail::canonical_signs(frame.axes);
  frame.eigenvalues = lambda;
  // A⁻¹ through the eigen-decomposition keeps μ consistent with the axes.
  const Vec3 vb = frame.axes.transpose() * q.b;
  frame.center = -0.5 * frame.axes * vb.cwiseQuotient(lambda);
  frame.tau = frame.center.dot(q.A * frame.center) - q.c;
  frame.compute_extents(points);
  return frame;
}

/// Latitude/longitude tessellation resolution.
struct SphereResolution {
  int n_theta = 64;  // around the pole axis
  int n_phi = 32;    // pole to pole
};

/// UV ellipsoid of the frame: radii √(τ/λᵢ), rotated by the axes and centred on μ.
/// Faces wind outward.
inline SurfaceMesh ellipsoid_mesh(const PrincipalFrame& frame, SphereResolution res = {}) {
  if ((frame.eigenvalues.array() <= 0.0).any() || !(frame.tau > 0.0))
    fail(ErrorCode::NotAnEllipsoid, "quadric is not a real ellipsoid");
  if (res.n_theta < 3 || res.n_phi < 2) fail(ErrorCode::InvalidArgument, "ellipsoid resolution too small");

  const Vec3 r = frame.radii();
  const auto place = [&](const Vec3& u) -> Vec3 { return frame.center + frame.axes * r.cwiseProduct(u); };

  SurfaceMesh mesh;
  mesh.source_tag = "ellipsoid";
  const auto nt = static_cast<std::uint32_t>(res.n_theta);
  const auto rings = static_cast<std::uint32_t>(res.n_phi - 1);
  mesh.vertices.push_back(place({0.0, 0.0, 1.0}));
  for (std::uint32_t i = 1; i <= rings; ++i) {
    const double phi = std::numbers::pi * double(i) / double(res.n_phi);
    for (std::uint32_t j = 0; j < nt; ++j) {
      const double theta = 2.0 * std::numbers::pi * double(j) / double(nt);
      mesh.vertices.push_back(place({std::sin(phi) * std::cos(theta), std::sin(phi) * std::sin(theta), std::cos(phi)}));
    }
  }
  mesh.vertices.push_back(place({0.0, 0.0, -1.0}));
  const std::uint32_t south = static_cast<std::uint32_t>(mesh.vertices.size() - 1);
  const auto ring = [&](std::uint32_t i, std::uint32_t j) { return 1 + (i - 1) * nt + (j % nt); };

  for (std::uint32_t j = 0; j < nt; ++j) mesh.faces.push_back({0, ring(1, j), ring(1, j + 1)});
  for (std::uint32_t i = 1; i < rings; ++i) {
    for (std::uint32_t j = 0; j < nt; ++j) {
      const auto a = ring(i, j), b = ring(i, j + 1), c = ring(i + 1, j), d = ring(i + 1, j + 1);
      mesh.faces.push_back({a, c, d});
      mesh.faces.push_back({a, d, b});
    }
  }
  for (std::uint32_t j = 0; j < nt; ++j) mesh.faces.push_back({ring(rings, j), south, ring(rings, j + 1)});

  if (frame.axes.determinant() < 0.0)
    for (auto& f : mesh.faces) std::swap(f[1], f[2]);
  compute_face_normals(mesh);
  return mesh;
}

/// Cylinder parameters extracted from a quadric: the eigen-direction of
/// smallest |λ| is the axis, the other two define an elliptic cross-section.
struct CylinderFrame {
  Vec3 center = Vec3::Zero();  // on the axis, in the cross-section plane through the origin's projection
  Vec3 axis = Vec3::UnitZ();
  Vec3 u = Vec3::UnitX();  // cross-section axes, (u, v, axis) right-handed
  Vec3 v = Vec3::UnitY();
  double radius_u = 1.0;
  double radius_v = 1.0;
  double lambda_u = 1.0;
  double lambda_v = 1.0;
  double tau = 1.0;
  double t_min = 0.0;  // data extent along the axis, relative to center
  double t_max = 0.0;

  /// Trimming frame with columns (u, v, axis).
  PrincipalFrame trimming_frame(std::span<const Vec3> points) const {
    PrincipalFrame f;
    f.center = center;
    f.axes.col(0) = u;
    f.axes.col(1) = v;
    f.axes.col(2) = axis;
    f.eigenvalues = {lambda_u, lambda_v, 0.0};
    f.tau = tau;
    f.compute_extents(points);
    return f;
  }
};

inline CylinderFrame cylinder_frame(const Quadric& input, std::span<const Vec3> points) {
  if (points.empty()) fail(ErrorCode::InvalidArgument, "cylinder fit needs a non-empty sub-cloud");
  const Quadric q = detail::positive_form(input);
  Eigen::SelfAdjointEigenSolver<Mat3> eig(q.A);
  if (eig.info() != Eigen::Success) fail(ErrorCode::DegenerateQuadric, "eigen-decomposition failed");
  Mat3 V = eig.eigenvectors();
  detail::canonical_signs(V);
  const Vec3 lambda = eig.eigenvalues();

  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return std::abs(lambda(a)) < std::abs(lambda(b)); });
  const int ia = order[0];
  const int i1 = std::min(order[1], order[2]);
  const int i2 = std::max(order[1], order[2]);

  CylinderFrame cyl;
  cyl.axis = V.col(ia);
  cyl.u = V.col(i1);
  cyl.lambda_u = lambda(i1);
  cyl.lambda_v = lambda(i2);
  if (!(cyl.lambda_u > 0.0) || !(cyl.lambda_v > 0.0))
    fail(ErrorCode::DegenerateQuadric, "cross-section eigenvalues are not both positive");
  cyl.v = cyl.axis.cross(cyl.u);  // ±V.col(i2)

  cyl.center = -0.5 * (cyl.u.dot(q.b) / cyl.lambda_u * cyl.u + cyl.v.dot(q.b) / cyl.lambda_v * cyl.v);
  const double quad = cyl.lambda_u * std::pow(cyl.u.dot(cyl.center), 2) + cyl.lambda_v * std::pow(cyl.v.dot(cyl.center), 2);
  cyl.tau = quad - q.c;
  if (!(cyl.tau > 0.0)) fail(ErrorCode::DegenerateQuadric, "cylinder cross-section is empty");
  cyl.radius_u = std::sqrt(cyl.tau / cyl.lambda_u);
  cyl.radius_v = std::sqrt(cyl.tau / cyl.lambda_v);

  cyl.t_min = std::numeric_limits<double>::infinity();
  cyl.t_max = -std::numeric_limits<double>::infinity();
  for (const auto& z : points) {
    const double t = cyl.axis.dot(z - cyl.center);
    cyl.t_min = std::min(cyl.t_min, t);
    cyl.t_max = std::max(cyl.t_max, t);
  }
  return cyl;
}

struct CylinderResolution {
  int n_theta = 64;  // around the axis
  int n_len = 32;    // along the axis
};

/// Open elliptic tube spanning the sub-cloud's extent along the axis; faces wind outward.
inline SurfaceMesh cylinder_mesh(const CylinderFrame& cyl, CylinderResolution res = {}) {
  if (res.n_theta < 3 || res.n_len < 1) fail(ErrorCode::InvalidArgument, "cylinder resolution too small");
  if (!(cyl.t_max > cyl.t_min)) fail(ErrorCode::DegenerateQuadric, "sub-cloud has no extent along the cylinder axis");
  SurfaceMesh mesh;
  mesh.source_tag = "cylinder";
  const auto nt = static_cast<std::uint32_t>(res.n_theta);
  const auto nl = static_cast<std::uint32_t>(res.n_len);
  for (std::uint32_t l = 0; l <= nl; ++l) {
    const double t = cyl.t_min + (cyl.t_max - cyl.t_min) * double(l) / double(nl);
    for (std::uint32_t j = 0; j < nt; ++j) {
      const double theta = 2.0 * std::numbers::pi * double(j) / double(nt);
      mesh.vertices.push_back(cyl.center + t * cyl.axis + cyl.radius_u * std::cos(theta) * cyl.u +
                              cyl.radius_v * std::sin(theta) * cyl.v);
    }
  }
  const auto at = [&](std::uint32_t l, std::uint32_t j) { return l * nt + (j % nt); };
  for (std::uint32_t l = 0; l < nl; ++l) {
    for (std::uint32_t j = 0; j < nt; ++j) {
      const auto a = at(l + 1, j), b = at(l + 1, j + 1), c = at(l, j), d = at(l, j + 1);
      mesh.faces.push_back({a, c, d});
      mesh.faces.push_back({a, d, b});
    }
  }
  compute_face_normals(mesh);
  return mesh;
}

inline SurfaceMesh cylinder_mesh(const Quadric& q, std::span<const Vec3> points, CylinderResolution res = {}) {
  return cylinder_mesh(cylinder_frame(q, points), res);
}

inline constexpr double kDefaultTrimMargin = 0.02;

/// Whether a point lies within the frame's data extents widened by margin·range per axis.
inline bool within_extents(const PrincipalFrame& frame, const Vec3& z, double margin) {
  const Vec3 p = frame.local(z);
  for (int a = 0; a < 3; ++a) {
    const double slack = margin * frame.extents[a].range();
    if (p(a) < frame.extents[a].min - slack || p(a) > frame.extents[a].max + slack) return false;
  }
  return true;
}

/// Removes vertices outside the data extents and every face touching one.
inline SurfaceMesh trim_mesh(const SurfaceMesh& mesh, const PrincipalFrame& frame, double margin = kDefaultTrimMargin) {
  if (!(margin >= 0.0)) fail(ErrorCode::InvalidArgument, "trim margin must be non-negative");
  std::vector<std::int64_t> remap(mesh.vertices.size(), -1);
  SurfaceMesh out;
  out.source_tag = mesh.source_tag;
  out.warnings = mesh.warnings;
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    if (!within_extents(frame, mesh.vertices[i], margin)) continue;
    remap[i] = static_cast<std::int64_t>(out.vertices.size());
    out.vertices.push_back(mesh.vertices[i]);
    if (!mesh.vertex_normals.empty()) out.vertex_normals.push_back(mesh.vertex_normals[i]);
  }
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& face = mesh.faces[f];
    if (remap[face[0]] < 0 || remap[face[1]] < 0 || remap[face[2]] < 0) continue;
    out.faces.push_back({static_cast<std::uint32_t>(remap[face[0]]), static_cast<std::uint32_t>(remap[face[1]]),
                         static_cast<std::uint32_t>(remap[face[2]])});
    if (f < mesh.normals.size()) out.normals.push_back(mesh.normals[f]);
  }
  if (out.faces.empty()) fail(ErrorCode::EmptyAfterTrim, "no faces remain inside the data extents");
  return out;
}

}  // namespace primfit
