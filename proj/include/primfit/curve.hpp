#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "primfit/core.hpp"
#include "primfit/meshing.hpp"

namespace primfit {

/// Polynomial basis evaluated at the integer latent positions 0..D:
/// Φ[l][d] = dˡ, l = 0..L.
class PolynomialBasis {
 public:
  PolynomialBasis() : PolynomialBasis(3, 50) {}

  PolynomialBasis(int degree, int samples) : degree_(degree), samples_(samples) {
    if (degree_ < 1) fail(ErrorCode::InvalidArgument, "polynomial degree must be at least 1");
    if (samples_ < 2) fail(ErrorCode::InvalidArgument, "sample count D must be at least 2");
    phi_.resize(degree_ + 1, samples_ + 1);
    for (int d = 0; d <= samples_; ++d) {
      double power = 1.0;
      for (int l = 0; l <= degree_; ++l) {
        phi_(l, d) = power;
        power *= double(d);
      }
    }
  }

  int degree() const { return degree_; }
  int samples() const { return samples_; }
  int components() const { return samples_ + 1; }
  const Eigen::MatrixXd& phi() const { return phi_; }

 private:
  int degree_;
  int samples_;
  Eigen::MatrixXd phi_;
};

/// Constrained Gaussian mixture whose centres W·φ_j lie on a polynomial curve.
struct CurveModel {
  Eigen::Matrix3Xd W;  // 3 × (L+1)
  double sigma2 = 1.0;
  PolynomialBasis basis;
  int active_lo = 0;
  int active_hi = 0;
  Eigen::VectorXd omega;  // component weights, uniform

  Eigen::Matrix3Xd centers() const { return W * basis.phi(); }
};

/// R(i, j): posterior probability that component i generated point j.
struct Responsibilities {
  Eigen::MatrixXd R;  // (D+1) × N
};

struct EStep {
  Responsibilities resp;
  double log_likelihood = 0.0;
};

using CurveSamples = std::vector<Vec3>;

namespace detail {

inline Eigen::Matrix3Xd to_matrix(std::span<const Vec3> points) {
  Eigen::Matrix3Xd Z(3, static_cast<Eigen::Index>(points.size()));
  for (std::size_t j = 0; j < points.size(); ++j) {
    if (!points[j].allFinite()) fail(ErrorCode::InvalidArgument, "non-finite point in curve fit");
    Z.col(static_cast<Eigen::Index>(j)) = points[j];
  }
  return Z;
}

struct Moments {
  Vec3 mean = Vec3::Zero();
  Mat3 covariance = Mat3::Zero();
};

inline Moments moments(const Eigen::Matrix3Xd& Z) {
  Moments m;
  const double n = double(Z.cols());
  m.mean = Z.rowwise().sum() / n;
  const Eigen::Matrix3Xd centred = Z.colwise() - m.mean;
  m.covariance = centred * centred.transpose() / n;
  return m;
}

/// Lower bound for σ²: a tiny fraction of the data's spread.
inline double variance_floor(const Eigen::Matrix3Xd& Z) {
  const auto m = moments(Z);
  Eigen::SelfAdjointEigenSolver<Mat3> eig(m.covariance, Eigen::EigenvaluesOnly);
  double scale = eig.eigenvalues().maxCoeff();
  if (!(scale > 0.0)) scale = std::max(1.0, m.mean.squaredNorm());
  return 1e-12 * scale;
}

inline EStep e_step(const CurveModel& model, const Eigen::Matrix3Xd& Z) {
  const Eigen::Matrix3Xd C = model.centers();
  const Eigen::Index K = C.cols(), N = Z.cols();
  const double s2 = model.sigma2;
  const double log_norm = -1.5 * std::log(2.0 * std::numbers::pi * s2);

  EStep out;
  out.resp.R.resize(K, N);
  Eigen::VectorXd col(K);
  for (Eigen::Index j = 0; j < N; ++j) {
    double hi = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < K; ++i) {
      col(i) = std::log(model.omega(i)) + log_norm - (C.col(i) - Z.col(j)).squaredNorm() / (2.0 * s2);
      hi = std::max(hi, col(i));
    }
    double sum = 0.0;
    for (Eigen::Index i = 0; i < K; ++i) sum += std::exp(col(i) - hi);
    const double lse = hi + std::log(sum);
    out.log_likelihood += lse;
    for (Eigen::Index i = 0; i < K; ++i) out.resp.R(i, j) = std::exp(col(i) - lse);
  }
  return out;
}

}  // namespace detail

/// Responsibilities and observed-data log-likelihood of the model on the points.
inline EStep e_step(const CurveModel& model, std::span<const Vec3> points) {
  return detail::e_step(model, detail::to_matrix(points));
}

/// Line through the data mean along the largest principal component,
/// parameterised so that t ∈ [0, D] spans the projected data.
inline CurveModel init_pca(std::span<const Vec3> points, const PolynomialBasis& basis) {
  if (points.size() < 2) fail(ErrorCode::DegeneratePoints, "curve fit needs at least two distinct points");
  const Eigen::Matrix3Xd Z = detail::to_matrix(points);
  const auto mom = detail::moments(Z);
  Eigen::SelfAdjointEigenSolver<Mat3> eig(mom.covariance);
  const Vec3 lambda = eig.eigenvalues();
  if (!(lambda(2) > 0.0)) fail(ErrorCode::DegeneratePoints, "all points are identical");

  Vec3 dir = eig.eigenvectors().col(2);
  for (int c = 0; c < 3; ++c) {
    if (std::abs(dir(c)) > 1e-12) {
      if (dir(c) < 0.0) dir = -dir;
      break;
    }
  }

  double t_min = std::numeric_limits<double>::infinity(), t_max = -t_min;
  for (Eigen::Index j = 0; j < Z.cols(); ++j) {
    const double t = dir.dot(Z.col(j) - mom.mean);
    t_min = std::min(t_min, t);
    t_max = std::max(t_max, t);
  }

  CurveModel model;
  model.basis = basis;
  model.W = Eigen::Matrix3Xd::Zero(3, basis.degree() + 1);
  model.W.col(0) = mom.mean + t_min * dir;
  model.W.col(1) = (t_max - t_min) / double(basis.samples()) * dir;
  model.sigma2 = std::max(lambda(0), 1e-12 * lambda(2));
  model.omega = Eigen::VectorXd::Constant(basis.components(), 1.0 / double(basis.components()));
  model.active_lo = 0;
  model.active_hi = basis.samples();
  return model;
}

namespace detail {

/// M-step: Wᵀ = (ΦGΦᵀ + εI)⁻¹ΦRZᵀ, then σ² from the updated centres.
/// The normal equations are diagonally equilibrated before the ridge is added;
/// Φ spans many orders of magnitude (D^L) and an unscaled ridge would swamp
/// the low-order rows.
inline CurveModel m_step(const CurveModel& model, const Eigen::Matrix3Xd& Z, const Eigen::MatrixXd& R) {
  const Eigen::MatrixXd& phi = model.basis.phi();
  const Eigen::VectorXd g = R.rowwise().sum();
  const Eigen::MatrixXd normal = phi * g.asDiagonal() * phi.transpose();
  const Eigen::MatrixXd rhs = phi * R * Z.transpose();  // (L+1) × 3

  const Eigen::Index m = normal.rows();
  const double max_diag = normal.diagonal().maxCoeff();
  if (!(max_diag > 0.0) || !std::isfinite(max_diag)) fail(ErrorCode::SingularBasis, "basis normal matrix is zero");
  Eigen::VectorXd scale(m);
  for (Eigen::Index l = 0; l < m; ++l) scale(l) = 1.0 / std::sqrt(std::max(normal(l, l), 1e-12 * max_diag));

  Eigen::MatrixXd scaled = scale.asDiagonal() * normal * scale.asDiagonal();
  const double ridge = 1e-10 * scaled.trace() / double(m);
  scaled.diagonal().array() += ridge;

  const Eigen::LDLT<Eigen::MatrixXd> ldlt(scaled);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    fail(ErrorCode::SingularBasis, "ridged basis system is singular");
  const Eigen::MatrixXd y = ldlt.solve(scale.asDiagonal() * rhs);
  const Eigen::MatrixXd wt = scale.asDiagonal() * y;
  if (!wt.allFinite()) fail(ErrorCode::SingularBasis, "ridged basis system is singular");

  CurveModel next = model;
  next.W = wt.transpose();
  const Eigen::Matrix3Xd C = next.centers();
  double sse = 0.0;
  for (Eigen::Index j = 0; j < Z.cols(); ++j)
    for (Eigen::Index i = 0; i < C.cols(); ++i) sse += R(i, j) * (C.col(i) - Z.col(j)).squaredNorm();
  next.sigma2 = std::max(sse / (3.0 * double(Z.cols())), variance_floor(Z));
  return next;
}

}  // namespace detail

/// One EM iteration. Returns the updated model and its observed-data log-likelihood.
inline std::pair<CurveModel, double> em_step(const CurveModel& model, std::span<const Vec3> points) {
  if (points.empty()) fail(ErrorCode::InvalidArgument, "em_step needs at least one point");
  const Eigen::Matrix3Xd Z = detail::to_matrix(points);
  const auto e = detail::e_step(model, Z);
  CurveModel next = detail::m_step(model, Z, e.resp.R);
  const double ll = detail::e_step(next, Z).log_likelihood;
  return {std::move(next), ll};
}

inline constexpr double trim_threshold(int samples) { return 1.0 / (10.0 * double(samples + 1)); }

/// Shrinks the active range from both ends while a component's mean
/// responsibility is below 1/(10·(D+1)). Never passes the midpoint.
inline CurveModel trim_ends(CurveModel model, const Responsibilities& resp) {
  const Eigen::Index n = resp.R.cols();
  if (n == 0) return model;
  const Eigen::VectorXd mass = resp.R.rowwise().sum() / double(n);
  const int D = model.basis.samples();
  const double threshold = trim_threshold(D);
  const int lo_limit = D / 2, hi_limit = (D + 1) / 2;
  while (model.active_lo < lo_limit && mass(model.active_lo) < threshold) ++model.active_lo;
  while (model.active_hi > hi_limit && mass(model.active_hi) < threshold) --model.active_hi;
  return model;
}

struct CurveFitOptions {
  int degree = 3;
  int samples = 50;
  int max_iters = 300;
  double tol = 1e-7;
};

struct CurveFit {
  CurveModel model;
  int iterations = 0;
  std::vector<double> log_likelihoods;  // initial model first
};

/// PCA initialisation, EM until the relative log-likelihood change drops
/// below tol (or max_iters), then end trimming.
inline CurveFit fit_curve_traced(std::span<const Vec3> points, const CurveFitOptions& opts = {}) {
  const PolynomialBasis basis(opts.degree, opts.samples);
  CurveFit fit;
  fit.model = init_pca(points, basis);
  const Eigen::Matrix3Xd Z = detail::to_matrix(points);
  double prev = detail::e_step(fit.model, Z).log_likelihood;
  fit.log_likelihoods.push_back(prev);
  for (int it = 0; it < opts.max_iters; ++it) {
    auto [next, ll] = em_step(fit.model, points);
    fit.model = std::move(next);
    fit.log_likelihoods.push_back(ll);
    fit.iterations = it + 1;
    const bool converged = std::abs(ll - prev) < opts.tol * std::abs(ll);
    prev = ll;
    if (converged) break;
  }
  fit.model = trim_ends(fit.model, detail::e_step(fit.model, Z).resp);
  return fit;
}

inline CurveModel fit_curve(std::span<const Vec3> points, const CurveFitOptions& opts = {}) {
  return fit_curve_traced(points, opts).model;
}

/// Mixture centres of the active range, in parameter order.
inline CurveSamples sample_curve(const CurveModel& model) {
  const Eigen::Matrix3Xd C = model.centers();
  CurveSamples out;
  for (int j = model.active_lo; j <= model.active_hi; ++j) out.push_back(C.col(j));
  return out;
}

/// Reverses p when its far end is closer to q's start than its near end.
inline std::pair<CurveSamples, CurveSamples> orient_pair(CurveSamples q, CurveSamples p) {
  if (q.empty() || p.empty()) fail(ErrorCode::CurveTooShort, "orient_pair needs non-empty curves");
  if ((q.front() - p.back()).norm() < (q.front() - p.front()).norm()) std::reverse(p.begin(), p.end());
  return {std::move(q), std::move(p)};
}

/// Linear resampling to `count` points equally spaced in arc length.
/// Endpoints are copied exactly.
inline CurveSamples resample_polyline(const CurveSamples& curve, std::size_t count) {
  if (curve.empty() || count == 0) fail(ErrorCode::CurveTooShort, "cannot resample an empty curve");
  if (count == 1) return {curve.front()};
  std::vector<double> cum(curve.size(), 0.0);
  for (std::size_t i = 1; i < curve.size(); ++i) cum[i] = cum[i - 1] + (curve[i] - curve[i - 1]).norm();
  const double total = cum.back();
  CurveSamples out(count, curve.front());
  if (!(total > 0.0)) return out;
  std::size_t seg = 1;
  for (std::size_t m = 1; m + 1 < count; ++m) {
    const double t = total * double(m) / double(count - 1);
    while (seg + 1 < curve.size() && cum[seg] < t) ++seg;
    const double len = cum[seg] - cum[seg - 1];
    out[m] = len > 0.0 ? Vec3(curve[seg - 1] + (t - cum[seg - 1]) / len * (curve[seg] - curve[seg - 1])) : curve[seg];
  }
  out.back() = curve.back();
  return out;
}

/// Lattice s(k, j) = (j/D)·q_k + (1 − j/D)·p_k after resampling both curves
/// to the longer of the two lengths. Column j = 0 is p, column j = D is q.
inline VertexGrid interpolation_grid(const CurveSamples& q, const CurveSamples& p) {
  if (q.size() < 2 || p.size() < 2) fail(ErrorCode::CurveTooShort, "interpolation needs curves with at least 2 samples");
  const std::size_t count = std::max(q.size(), p.size());
  const auto qr = resample_polyline(q, count);
  const auto pr = resample_polyline(p, count);
  const double D = double(count - 1);
  VertexGrid grid{count, count, std::vector<Vec3>(count * count)};
  for (std::size_t k = 0; k < count; ++k) {
    for (std::size_t j = 0; j < count; ++j) {
      const double w = double(j) / D;
      grid.at(k, j) = w * qr[k] + (1.0 - w) * pr[k];
    }
  }
  return grid;
}

inline SurfaceMesh interpolate_surface(const CurveSamples& q, const CurveSamples& p) {
  auto mesh = triangulate_grid(interpolation_grid(q, p), "interpolate");
  if (mesh.faces.empty()) mesh.warnings.push_back("degenerate: the two curves coincide");
  return mesh;
}

/// Translational sweep s(k, j) = q_k + (p_j − p_0): the profile q copied along the path p.
inline VertexGrid extrusion_grid(const CurveSamples& q, const CurveSamples& p) {
  if (q.size() < 2 || p.size() < 2) fail(ErrorCode::CurveTooShort, "extrusion needs curves with at least 2 samples");
  VertexGrid grid{q.size(), p.size(), std::vector<Vec3>(q.size() * p.size())};
  for (std::size_t j = 0; j < p.size(); ++j) {
    const Vec3 offset = p[j] - p[0];
    for (std::size_t k = 0; k < q.size(); ++k) grid.at(k, j) = q[k] + offset;
  }
  return grid;
}

inline SurfaceMesh extrude_surface(const CurveSamples& q, const CurveSamples& p) {
  auto mesh = triangulate_grid(extrusion_grid(q, p), "extrude");
  if (mesh.faces.empty()) mesh.warnings.push_back("degenerate: sweep has no area");
  return mesh;
}

}  // namespace primfit
