// Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on failure.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "primfit/primfit.hpp"
#include "primfit/testing/sphere_scene.hpp"

namespace {

using namespace primfit;
namespace pt = primfit::testing;

struct Verdict {
  bool pass = true;
  std::string detail;
};

class Clock {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

std::vector<Stroke> ingest_group(const pt::SphereScene& scene, const SessionScript& script, Rgb colour) {
  std::vector<Stroke> group;
  for (const auto& a : script)
    if (const auto* s = std::get_if<action::AddStroke>(&a); s && s->colour == colour)
      group.push_back(Stroke::ingest(find_view(scene.views, s->view), s->colour, s->width, s->points));
  return group;
}

// 1. select_points agrees with the extended-precision direct product.
Verdict selection_oracle() {
  const auto scene = pt::make_sphere_scene();
  const auto group = ingest_group(scene, pt::ellipsoid_script(scene), pt::kFillColour);

  Clock clock;
  const auto sel = select_points(scene.cloud, scene.views, group);
  const double runtime = clock.seconds();

  std::map<int, Mat34> cams;
  for (const auto& v : scene.views) cams[v.id()] = v.projection();
  std::vector<oracle::OracleStroke> strokes;
  for (const auto& s : group) strokes.push_back({s.view_id(), s.width_px(), s.raw_points()});
  const auto brute = oracle::brute_force_select(scene.cloud.points(), cams, strokes);

  double worst = 0.0;
  for (std::size_t k = 0; k < sel.probabilities.size(); ++k) {
    const auto ref = brute.probabilities[k];
    const double rel = ref == 0 ? std::abs(sel.probabilities[k]) : static_cast<double>(abs((oracle::big(sel.probabilities[k]) - ref) / ref));
    worst = std::max(worst, rel);
  }
  const bool same = sel.selected_indices == brute.selected;
  return {worst <= 1e-6 && same && runtime < 5.0,
          fmt("max rel err %.3g, selected %zu vs oracle %zu (%s), select_points %.3f s", worst, sel.selected_indices.size(),
              brute.selected.size(), same ? "identical" : "DIFFERENT", runtime)};
}

// 2. Scaling every per-view likelihood by 1e3 changes nothing.
Verdict normalization_invariance() {
  const auto scene = pt::make_sphere_scene();
  const auto group = ingest_group(scene, pt::ellipsoid_script(scene), pt::kFillColour);
  const auto mixtures = build_view_mixtures(group);
  auto per_view = view_log_likelihoods(scene.cloud, scene.views, mixtures);
  const auto base = select_from_log_likelihoods(accumulate_views(per_view, scene.cloud.size()));
  for (auto& row : per_view)
    for (auto& l : row) l += std::log(1e3);
  const auto scaled = select_from_log_likelihoods(accumulate_views(per_view, scene.cloud.size()));
  double worst = 0.0;
  for (std::size_t k = 0; k < base.probabilities.size(); ++k)
    worst = std::max(worst, std::abs(base.probabilities[k] - scaled.probabilities[k]));
  const bool same = base.selected_indices == scaled.selected_indices;
  return {worst <= 1e-12 && same, fmt("max |dp| %.3g, selection %s", worst, same ? "unchanged" : "CHANGED")};
}

// 3. Sphere and 1:2:3 ellipsoid recovery.
Verdict quadric_recovery() {
  const auto sphere = oracle::ellipsoid_samples({1, 1, 1}, 1000, 11);
  Clock c1;
  const auto qs = fit_quadric(sphere, 1e-3);
  const auto fs = principal_frame(qs, sphere);
  const double t1 = c1.seconds();
  const Vec3 r = fs.radii();
  const double centre_err = fs.center.norm();
  const double spread = r.maxCoeff() - r.minCoeff();

  const auto ell = oracle::ellipsoid_samples({1, 2, 3}, 1000, 12);
  Clock c2;
  const auto qe = fit_quadric(ell, 10.0);
  const auto fe = principal_frame(qe, ell);
  const double t2 = c2.seconds();
  Vec3 re = fe.radii();
  std::sort(re.data(), re.data() + 3);
  const double ratio_err = std::max(std::abs(re(1) / re(0) - 2.0), std::abs(re(2) / re(0) - 3.0));

  return {centre_err < 1e-6 && spread < 1e-4 && ratio_err < 1e-3 && t1 < 1.0 && t2 < 1.0,
          fmt("sphere centre err %.3g, radius spread %.3g (%.3f s); ellipsoid ratio err %.3g (%.3f s)", centre_err, spread,
              t1, ratio_err, t2)};
}

double off_diagonal_norm(const Mat3& A) {
  return std::sqrt(2.0 * (A(0, 1) * A(0, 1) + A(0, 2) * A(0, 2) + A(1, 2) * A(1, 2)));
}

// 4. Shrinking prior_sigma never grows the off-diagonal part of A.
Verdict sphere_prior_monotonicity() {
  std::mt19937_64 rng(4);
  const Mat3 R = oracle::random_rotation(rng);
  std::normal_distribution<double> noise(0.0, 0.01);
  std::vector<Vec3> pts;
  for (const auto& p : oracle::ellipsoid_samples({1, 2, 3}, 500, 13))
    pts.push_back(R * p + Vec3(0.5, -1.0, 2.0) + Vec3(noise(rng), noise(rng), noise(rng)));
  std::vector<double> norms;
  for (double sigma : {1.0, 1e-2, 1e-4}) norms.push_back(off_diagonal_norm(fit_quadric(pts, sigma).A));
  const bool ok = norms[1] <= norms[0] && norms[2] <= norms[1];
  return {ok, fmt("off-diagonal norm %.4g -> %.4g -> %.4g", norms[0], norms[1], norms[2])};
}

// 5 and 6 share the EM run on the cubic fixture.
struct EmRun {
  double worst_drop = 0.0;
  double worst_colsum = 0.0;
  double rms = 0.0;
  double runtime = 0.0;
};

EmRun em_run() {
  const auto fx = oracle::cubic_fixture();
  Clock clock;
  const PolynomialBasis basis(3, 50);
  CurveModel model = init_pca(fx.noisy, basis);
  EmRun run;
  double prev = e_step(model, fx.noisy).log_likelihood;
  for (int it = 0; it < 50; ++it) {
    const auto e = e_step(model, fx.noisy);
    for (Eigen::Index j = 0; j < e.resp.R.cols(); ++j)
      run.worst_colsum = std::max(run.worst_colsum, std::abs(e.resp.R.col(j).sum() - 1.0));
    auto [next, ll] = em_step(model, fx.noisy);
    run.worst_drop = std::min(run.worst_drop, ll - prev);
    prev = ll;
    model = std::move(next);
  }
  const auto final_e = e_step(model, fx.noisy);
  for (Eigen::Index j = 0; j < final_e.resp.R.cols(); ++j)
    run.worst_colsum = std::max(run.worst_colsum, std::abs(final_e.resp.R.col(j).sum() - 1.0));
  model = trim_ends(model, final_e.resp);
  run.runtime = clock.seconds();
  run.rms = oracle::rms_distance(fx.held_out, sample_curve(model));
  return run;
}

Verdict gtm_monotonicity(const EmRun& run) {
  return {run.worst_drop >= -1e-8 && run.rms < 0.05 && run.runtime < 10.0,
          fmt("largest log-likelihood decrease %.3g, RMS to cubic %.4f, %.3f s", -run.worst_drop, run.rms, run.runtime)};
}

Verdict responsibility_stochasticity(const EmRun& run) {
  return {run.worst_colsum <= 1e-9, fmt("max |column sum - 1| %.3g", run.worst_colsum)};
}

// 7. Surface boundary rows and sweep difference identities.
Verdict surface_formulas() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::uniform_int_distribution<int> len(2, 40);
  auto random_curve = [&] {
    CurveSamples c(static_cast<std::size_t>(len(rng)));
    for (auto& p : c) p = Vec3(u(rng), u(rng), u(rng));
    return c;
  };
  bool boundaries = true;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto q = random_curve(), p = random_curve();
    const auto grid = interpolation_grid(q, p);
    const auto qr = resample_polyline(q, grid.rows), pr = resample_polyline(p, grid.rows);
    for (std::size_t k = 0; k < grid.rows; ++k)
      boundaries = boundaries && grid.at(k, 0) == pr[k] && grid.at(k, grid.cols - 1) == qr[k];
    boundaries = boundaries && grid.at(0, 0) == p.front() && grid.at(grid.rows - 1, grid.cols - 1) == q.back();

    const auto sweep = extrusion_grid(q, p);
    for (std::size_t k = 0; k < q.size(); ++k)
      for (std::size_t j = 0; j + 1 < p.size(); ++j)
        worst = std::max(worst, ((sweep.at(k, j + 1) - sweep.at(k, j)) - (p[j + 1] - p[j])).cwiseAbs().maxCoeff());
    for (std::size_t k = 0; k + 1 < q.size(); ++k)
      for (std::size_t j = 0; j < p.size(); ++j)
        worst = std::max(worst, ((sweep.at(k + 1, j) - sweep.at(k, j)) - (q[k + 1] - q[k])).cwiseAbs().maxCoeff());
  }
  return {boundaries && worst <= 1e-12,
          fmt("interpolation boundaries %s, max sweep identity residual %.3g over 100 pairs", boundaries ? "exact" : "INEXACT", worst)};
}

// 8. Hemisphere trim matches the per-vertex oracle; trimming is idempotent.
Verdict trimming() {
  const Vec3 radii(1.0, 1.5, 2.0);
  std::vector<Vec3> data;
  for (const auto& p : oracle::ellipsoid_samples(radii, 2000, 21))
    if (p.z() >= 0.0) data.push_back(p);
  const auto frame = principal_frame(fit_quadric(data, 10.0), data);
  const auto mesh = ellipsoid_mesh(frame, {32, 16});
  const auto trimmed = trim_mesh(mesh, frame, 0.0);

  // Oracle: project the data onto the frame axes directly and test each vertex.
  Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
  for (const auto& z : data) {
    const Vec3 p = frame.axes.transpose() * (z - frame.center);
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  std::vector<Vec3> expected_vertices;
  std::vector<bool> keep(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3 p = frame.axes.transpose() * (mesh.vertices[i] - frame.center);
    keep[i] = (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
    if (keep[i]) expected_vertices.push_back(mesh.vertices[i]);
  }
  std::vector<oracle::Triangle> expected_faces;
  for (const auto& f : mesh.faces)
    if (keep[f[0]] && keep[f[1]] && keep[f[2]]) expected_faces.push_back(oracle::triangle_of(mesh, f));
  bool hemisphere = true;
  const double ring = std::numbers::pi / 16.0 * radii.maxCoeff();
  for (const auto& v : trimmed.vertices) hemisphere = hemisphere && v.z() >= -ring;
  const bool per_vertex = trimmed.vertices == expected_vertices && oracle::triangles(trimmed) == expected_faces;

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> margin(0.0, 0.1);
  int idempotent = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = oracle::random_mesh(rng, 0.0);
    PrincipalFrame f;
    f.axes = oracle::random_rotation(rng);
    f.center = m.vertices[m.vertices.size() / 2];
    std::vector<Vec3> support(m.vertices.begin(), m.vertices.begin() + static_cast<std::ptrdiff_t>(m.vertices.size() / 2 + 1));
    f.compute_extents(support);
    try {
      const double mg = margin(rng);
      const auto once = trim_mesh(m, f, mg);
      const auto twice = trim_mesh(once, f, mg);
      if (twice.vertices == once.vertices && twice.faces == once.faces && twice.normals == once.normals) ++idempotent;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::EmptyAfterTrim) ++idempotent;  // nothing to re-trim
    }
  }
  return {per_vertex && hemisphere && idempotent == 100,
          fmt("per-vertex oracle %s (%zu of %zu vertices kept), hemisphere %s, idempotent %d/100", per_vertex ? "match" : "MISMATCH",
              trimmed.vertices.size(), mesh.vertices.size(), hemisphere ? "ok" : "VIOLATED", idempotent)};
}

// 9. Long-edge removal equals the per-face filter and is idempotent.
Verdict long_edges() {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> factor(0.8, 6.0);
  int matches = 0, idempotent = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = oracle::random_mesh(rng, 0.15);
    const double t = factor(rng) * median_edge_length(m);
    const auto expected = oracle::faces_within(m, t);
    try {
      const auto once = remove_long_edges(m, t);
      if (oracle::triangles(once) == expected) ++matches;
      const auto twice = remove_long_edges(once, t);
      if (twice.vertices == once.vertices && twice.faces == once.faces) ++idempotent;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::EmptyAfterFilter && expected.empty()) ++matches, ++idempotent;
    }
  }
  return {matches == 100 && idempotent == 100, fmt("oracle match %d/100, idempotent %d/100", matches, idempotent)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// 10. Replaying the full synthetic script twice gives byte-identical PLY files.
Verdict replay_determinism(const fs::path& work) {
  fs::remove_all(work);
  const auto files = pt::write_sphere_scene(pt::make_sphere_scene(), work / "scene");
  Clock clock;
  std::vector<std::string> exports;
  std::size_t mesh_count = 0;
  for (int run = 0; run < 2; ++run) {
    const fs::path out = work / ("run" + std::to_string(run));
    const auto project = load_project(files.cloud, files.cameras);
    const auto store = replay(project, load_script(files.script), {out, true});
    std::string bytes = slurp(out / "scene.ply");
    for (const auto& [id, m] : store.meshes) bytes += meshes_to_string({m}, MeshFormat::Ply);
    mesh_count = store.meshes.size();
    exports.push_back(std::move(bytes));
  }
  const double runtime = clock.seconds();
  const bool same = exports[0] == exports[1] && !exports[0].empty();
  return {same && mesh_count > 0 && runtime < 30.0,
          fmt("%zu meshes, %zu bytes, %s, %.2f s for two replays", mesh_count, exports[0].size(),
              same ? "byte-identical" : "DIFFERENT", runtime)};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "primfit_acceptance";
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Verdict()>& check) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << v.detail << std::endl;
    failures += v.pass ? 0 : 1;
  };

  report(1, "selection oracle equivalence", selection_oracle);
  report(2, "selection normalization invariance", normalization_invariance);
  report(3, "quadric recovery", quadric_recovery);
  report(4, "sphere-prior monotonicity", sphere_prior_monotonicity);
  std::optional<EmRun> em;
  report(5, "GTM likelihood monotonicity", [&] {
    em = em_run();
    return gtm_monotonicity(*em);
  });
  report(6, "responsibility stochasticity", [&] {
    return em ? responsibility_stochasticity(*em) : Verdict{false, "EM run did not complete"};
  });
  report(7, "surface formula checks", surface_formulas);
  report(8, "trimming correctness", trimming);
  report(9, "long-edge removal", long_edges);
  report(10, "end-to-end replay determinism", [&] { return replay_determinism(work); });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
