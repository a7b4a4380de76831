#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <span>
#include <thread>
#include <vector>

#include "primfit/core.hpp"

namespace primfit {

/// One isotropic Gaussian of a per-view stroke mixture.
struct MixtureComponent {
  Vec2 mean;
  double sigma;
};

/// Result of thresholding the normalized per-point probability.
struct SelectionResult {
  std::vector<double> probabilities;
  std::vector<std::size_t> selected_indices;
  double threshold_used = 0.0;
};

namespace detail {

inline double log_sum_exp(std::span<const double> values) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : values) hi = std::max(hi, v);
  if (!std::isfinite(hi)) return hi;
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - hi);
  return hi + std::log(sum);
}

}  // namespace detail

/// Resamples a stroke polyline at arc-length spacing max(1, width/2) pixels.
/// The first raw point is always a sample; the last raw point is appended when
/// it does not coincide with the final regular sample.
inline std::vector<MixtureComponent> resample_stroke(const Stroke& stroke) {
  const auto& raw = stroke.raw_points();
  if (raw.empty()) return {};
  const double sigma = stroke.width_px();
  const double spacing = std::max(1.0, sigma / 2.0);

  std::vector<double> cumulative(raw.size(), 0.0);
  for (std::size_t i = 1; i < raw.size(); ++i) cumulative[i] = cumulative[i - 1] + (raw[i] - raw[i - 1]).norm();
  const double total = cumulative.back();

  std::vector<MixtureComponent> out;
  if (total <= 1e-12) {
    out.push_back({raw.front(), sigma});
    return out;
  }

  const auto count = static_cast<std::size_t>(std::floor(total / spacing + 1e-9));
  std::size_t seg = 1;
  for (std::size_t k = 0; k <= count; ++k) {
    const double t = std::min(double(k) * spacing, total);
    while (seg + 1 < raw.size() && cumulative[seg] < t) ++seg;
    const double len = cumulative[seg] - cumulative[seg - 1];
    Vec2 p = raw[seg - 1];
    if (len > 0.0) p += (t - cumulative[seg - 1]) / len * (raw[seg] - raw[seg - 1]);
    out.push_back({p, sigma});
  }
  const double last_t = double(count) * spacing;
  if (total - last_t > 1e-9 * std::max(1.0, total)) out.push_back({raw.back(), sigma});
  return out;
}

/// The Gaussian mixture induced by all strokes of one colour group in one view.
class ViewMixture {
 public:
  ViewMixture(int view_id, std::vector<MixtureComponent> components)
      : view_id_(view_id), components_(std::move(components)) {
    if (components_.empty()) fail(ErrorCode::EmptyStroke, "view " + std::to_string(view_id_) + " has no stroke samples");
    for (const auto& c : components_)
      if (!(c.sigma > 0.0)) fail(ErrorCode::InvalidArgument, "mixture component sigma must be positive");
    log_k_ = std::log(double(components_.size()));
  }

  static ViewMixture from_strokes(int view_id, std::span<const Stroke> strokes) {
    std::vector<MixtureComponent> comps;
    for (const auto& s : strokes) {
      auto r = resample_stroke(s);
      comps.insert(comps.end(), r.begin(), r.end());
    }
    return ViewMixture(view_id, std::move(comps));
  }

  int view_id() const { return view_id_; }
  const std::vector<MixtureComponent>& components() const { return components_; }

  /// log( (1/K) Σ_j N(y | μ_j, σ_j² I) ), evaluated with log-sum-exp.
  double logpdf(const Vec2& y) const {
    double hi = -std::numeric_limits<double>::infinity();
    // Two passes keep memory flat for large K.
    for (const auto& c : components_) hi = std::max(hi, term(c, y));
    double sum = 0.0;
    for (const auto& c : components_) sum += std::exp(term(c, y) - hi);
    return hi + std::log(sum) - log_k_;
  }

 private:
  static double term(const MixtureComponent& c, const Vec2& y) {
    const double s2 = c.sigma * c.sigma;
    return -(y - c.mean).squaredNorm() / (2.0 * s2) - std::log(2.0 * std::numbers::pi * s2);
  }

  int view_id_;
  std::vector<MixtureComponent> components_;
  double log_k_ = 0.0;
};

/// Log density of the stroke mixture for the strokes of one view at pixel y.
inline double stroke_mixture_logpdf(std::span<const Stroke> strokes_in_view, const Vec2& y) {
  const int view = strokes_in_view.empty() ? 0 : strokes_in_view.front().view_id();
  return ViewMixture::from_strokes(view, strokes_in_view).logpdf(y);
}

/// Builds one mixture per sketched view, ordered by view id.
inline std::vector<ViewMixture> build_view_mixtures(std::span<const Stroke> group) {
  std::map<int, std::vector<Stroke>> by_view;
  for (const auto& s : group) by_view[s.view_id()].push_back(s);
  std::vector<ViewMixture> out;
  for (const auto& [view, strokes] : by_view) out.push_back(ViewMixture::from_strokes(view, strokes));
  return out;
}

inline const CameraView& find_view(std::span<const CameraView> views, int id) {
  for (const auto& v : views)
    if (v.id() == id) return v;
  fail(ErrorCode::UnknownArtifact, "no camera view with id " + std::to_string(id));
}

/// Per-view log-likelihoods, [view][point]. Points that project to infinity in
/// a view get -inf in that view.
inline std::vector<std::vector<double>> view_log_likelihoods(const PointCloud& cloud, std::span<const CameraView> views,
                                                             std::span<const ViewMixture> mixtures) {
  std::vector<std::vector<double>> out(mixtures.size(), std::vector<double>(cloud.size()));
  const std::size_t n = cloud.size();
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers = std::min<std::size_t>(hw, std::max<std::size_t>(1, n / 4096));

  for (std::size_t v = 0; v < mixtures.size(); ++v) {
    const Mat34& P = find_view(views, mixtures[v].view_id()).projection();
    auto eval_range = [&](std::size_t lo, std::size_t hi) {
      for (std::size_t k = lo; k < hi; ++k) {
        auto y = try_project(P, cloud[k]);
        out[v][k] = y ? mixtures[v].logpdf(*y) : -std::numeric_limits<double>::infinity();
      }
    };
    if (workers <= 1) {
      eval_range(0, n);
      continue;
    }
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
      if (lo < hi) pool.emplace_back(eval_range, lo, hi);
    }
  }
  return out;
}

/// Sums per-view log-likelihoods per point in view order.
inline std::vector<double> accumulate_views(const std::vector<std::vector<double>>& per_view, std::size_t n) {
  std::vector<double> total(n, 0.0);
  for (const auto& row : per_view)
    for (std::size_t k = 0; k < n; ++k) total[k] += row[k];
  return total;
}

/// Normalizes unnormalized log-likelihoods over the cloud and keeps the points
/// strictly above the mean probability 1/N.
inline SelectionResult select_from_log_likelihoods(std::span<const double> log_lik) {
  const std::size_t n = log_lik.size();
  if (n == 0) fail(ErrorCode::InvalidArgument, "selection over an empty cloud");
  double hi = -std::numeric_limits<double>::infinity();
  for (double l : log_lik) hi = std::max(hi, l);
  if (!std::isfinite(hi)) fail(ErrorCode::AllPointsAtInfinity, "no cloud point projects finitely into every sketched view");

  std::vector<double> shifted(n);
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    shifted[k] = std::exp(log_lik[k] - hi);
    sum += shifted[k];
  }

  SelectionResult result;
  result.threshold_used = 1.0 / double(n);
  result.probabilities.resize(n);
  // p_k > 1/N  <=>  shifted_k > sum / N; comparing unnormalized values keeps exact ties exact.
  const double mean_shifted = sum / double(n);
  for (std::size_t k = 0; k < n; ++k) {
    result.probabilities[k] = shifted[k] / sum;
    if (shifted[k] > mean_shifted) result.selected_indices.push_back(k);
  }
  return result;
}

/// Probability that each cloud point belongs to the colour group's sketches,
/// treating views as conditionally independent, and the above-mean subset.
inline SelectionResult select_points(const PointCloud& cloud, std::span<const CameraView> views,
                                     std::span<const Stroke> group) {
  if (group.empty()) fail(ErrorCode::EmptyStroke, "selection needs at least one stroke");
  if (cloud.empty()) fail(ErrorCode::InvalidArgument, "selection over an empty cloud");
  const auto mixtures = build_view_mixtures(group);
  const auto per_view = view_log_likelihoods(cloud, views, mixtures);
  const auto total = accumulate_views(per_view, cloud.size());
  return select_from_log_likelihoods(total);
}

}  // namespace primfit
