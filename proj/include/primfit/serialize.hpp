#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "primfit/core.hpp"
#include "primfit/curve.hpp"
#include "primfit/quadric.hpp"
#include "primfit/select.hpp"

namespace primfit {

using json = nlohmann::json;

inline std::string colour_to_string(Rgb c) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", c.r, c.g, c.b);
  return buf;
}

inline Rgb colour_from_string(const std::string& s) {
  if (s.size() != 7 || s[0] != '#') fail(ErrorCode::InvalidArgument, "colour must be '#rrggbb', got '" + s + "'");
  auto hex = [&](std::size_t i) -> std::uint8_t {
    unsigned v = 0;
    for (std::size_t k = i; k < i + 2; ++k) {
      const char ch = s[k];
      v <<= 4;
      if (ch >= '0' && ch <= '9') v |= unsigned(ch - '0');
      else if (ch >= 'a' && ch <= 'f') v |= unsigned(ch - 'a' + 10);
      else if (ch >= 'A' && ch <= 'F') v |= unsigned(ch - 'A' + 10);
      else fail(ErrorCode::InvalidArgument, "colour must be '#rrggbb', got '" + s + "'");
    }
    return static_cast<std::uint8_t>(v);
  };
  return {hex(1), hex(3), hex(5)};
}

inline json vec_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec3_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) fail(ErrorCode::InvalidArgument, "expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

// Quadric: { "A": [9 floats row-major], "b": [3], "c": float }
inline json to_json(const Quadric& q) {
  json A = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) A.push_back(q.A(r, c));
  return {{"A", A}, {"b", vec_to_json(q.b)}, {"c", q.c}};
}

inline Quadric quadric_from_json(const json& j) {
  const auto& A = j.at("A");
  if (!A.is_array() || A.size() != 9) fail(ErrorCode::InvalidArgument, "quadric 'A' must hold 9 numbers");
  Quadric q;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) q.A(r, c) = A[r * 3 + c].get<double>();
  if (q.A != q.A.transpose())
    fail(ErrorCode::InvalidArgument, "quadric 'A' must be symmetric");
  q.b = vec3_from_json(j.at("b"));
  q.c = j.at("c").get<double>();
  return q;
}

// CurveModel: { "W": [[...]], "sigma2": float, "L": int, "D": int, "active": [lo, hi] }
inline json to_json(const CurveModel& m) {
  json W = json::array();
  for (int r = 0; r < 3; ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.W.cols(); ++c) row.push_back(m.W(r, c));
    W.push_back(row);
  }
  return {{"W", W},
          {"sigma2", m.sigma2},
          {"L", m.basis.degree()},
          {"D", m.basis.samples()},
          {"active", json::array({m.active_lo, m.active_hi})}};
}

inline CurveModel curve_from_json(const json& j) {
  CurveModel m;
  m.basis = PolynomialBasis(j.at("L").get<int>(), j.at("D").get<int>());
  const auto& W = j.at("W");
  if (!W.is_array() || W.size() != 3) fail(ErrorCode::InvalidArgument, "curve 'W' must have 3 rows");
  m.W.resize(3, m.basis.degree() + 1);
  for (int r = 0; r < 3; ++r) {
    if (W[r].size() != std::size_t(m.basis.degree() + 1)) fail(ErrorCode::InvalidArgument, "curve 'W' row length must be L+1");
    for (int c = 0; c <= m.basis.degree(); ++c) m.W(r, c) = W[r][c].get<double>();
  }
  m.sigma2 = j.at("sigma2").get<double>();
  if (!(m.sigma2 > 0.0)) fail(ErrorCode::InvalidArgument, "curve sigma2 must be positive");
  m.active_lo = j.at("active").at(0).get<int>();
  m.active_hi = j.at("active").at(1).get<int>();
  if (m.active_lo < 0 || m.active_lo > m.active_hi || m.active_hi > m.basis.samples())
    fail(ErrorCode::InvalidArgument, "curve active range out of bounds");
  m.omega = Eigen::VectorXd::Constant(m.basis.components(), 1.0 / double(m.basis.components()));
  return m;
}

inline json to_json(const SelectionResult& s, bool with_probabilities = true) {
  json j = {{"selected_indices", s.selected_indices}, {"threshold", s.threshold_used}, {"count", s.selected_indices.size()}};
  if (with_probabilities) j["probabilities"] = s.probabilities;
  return j;
}

inline json to_json(const CurveSamples& samples) {
  json out = json::array();
  for (const auto& p : samples) out.push_back(vec_to_json(p));
  return out;
}

inline json mesh_summary(const SurfaceMesh& m) {
  return {{"source", m.source_tag}, {"vertices", m.vertices.size()}, {"faces", m.faces.size()}, {"warnings", m.warnings}};
}

}  // namespace primfit
