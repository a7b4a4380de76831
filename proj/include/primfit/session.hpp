#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "primfit/core.hpp"
#include "primfit/curve.hpp"
#include "primfit/io.hpp"
#include "primfit/meshing.hpp"
#include "primfit/quadric.hpp"
#include "primfit/select.hpp"
#include "primfit/serialize.hpp"

namespace primfit {

// ---------------------------------------------------------------------------
// Project

/// The scene under edit: point cloud, calibrated views, resolved image paths.
struct Project {
  PointCloud cloud;
  std::vector<CameraView> views;
  fs::path workspace;
  std::map<int, fs::path> image_paths;

  const CameraView& view(int id) const { return find_view(views, id); }
};

struct LoadOptions {
  // Directory that relative image references resolve against; defaults to
  // the directory holding the camera file.
  std::optional<fs::path> images_dir;
  bool require_images = true;
};

inline Project make_project(PointCloud cloud, std::vector<CameraView> views, fs::path workspace = {}) {
  std::set<int> ids;
  for (const auto& v : views)
    if (!ids.insert(v.id()).second) fail(ErrorCode::ParseError, "duplicate camera id " + std::to_string(v.id()));
  Project p{std::move(cloud), std::move(views), std::move(workspace), {}};
  for (const auto& v : p.views) {
    fs::path img(v.image_ref());
    p.image_paths[v.id()] = img.is_absolute() || p.workspace.empty() ? img : p.workspace / img;
  }
  return p;
}

inline Project load_project(const fs::path& cloud_path, const fs::path& cameras_path, const LoadOptions& opts = {}) {
  auto cloud = load_point_cloud(cloud_path);
  auto views = load_cameras(cameras_path);
  const fs::path base = opts.images_dir ? *opts.images_dir : cameras_path.parent_path();
  Project p = make_project(std::move(cloud), std::move(views), base);
  if (opts.require_images) {
    for (const auto& [id, path] : p.image_paths)
      if (!fs::exists(path))
        fail(ErrorCode::MissingImage, "camera " + std::to_string(id) + ": image '" + path.string() + "' does not exist");
  }
  return p;
}

// ---------------------------------------------------------------------------
// Session script actions

enum class QuadricKind { Ellipsoid, Cylinder };
enum class SurfaceMode { Interpolate, Extrude };

namespace action {

struct AddStroke {
  int view = 0;
  Rgb colour;
  double width = 4.0;
  std::vector<Vec2> points;
  bool operator==(const AddStroke&) const = default;
};

struct Select {
  std::string id;
  Rgb colour;
  bool operator==(const Select&) const = default;
};

struct FitQuadric {
  std::string id;
  QuadricKind kind = QuadricKind::Ellipsoid;
  std::string selection;
  double prior_sigma = 1.0;
  int resolution_a = 64;  // n_theta
  int resolution_b = 32;  // n_phi (ellipsoid) or n_len (cylinder)
  bool operator==(const FitQuadric&) const = default;
};

struct FitCurve {
  std::string id;
  Rgb colour;
  int degree = 3;
  int samples = 50;
  int max_iters = 300;
  double tol = 1e-7;
  bool operator==(const FitCurve&) const = default;
};

struct Surface {
  std::string id;
  SurfaceMode mode = SurfaceMode::Interpolate;
  std::string a;  // interpolate: first curve; extrude: profile
  std::string b;  // interpolate: second curve; extrude: path
  bool operator==(const Surface&) const = default;
};

struct Trim {
  std::string mesh;
  double margin = kDefaultTrimMargin;
  bool operator==(const Trim&) const = default;
};

struct Export {
  std::string file;
  MeshFormat format = MeshFormat::Ply;
  std::vector<std::string> meshes;  // empty: every live mesh
  bool operator==(const Export&) const = default;
};

struct DeleteMesh {
  std::string mesh;
  bool operator==(const DeleteMesh&) const = default;
};

}  // namespace action

using Action = std::variant<action::AddStroke, action::Select, action::FitQuadric, action::FitCurve, action::Surface,
                            action::Trim, action::Export, action::DeleteMesh>;

using SessionScript = std::vector<Action>;

namespace detail {

template <typename T>
T field(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

inline std::string required_id(const json& j, const char* key) {
  auto s = j.at(key).get<std::string>();
  if (s.empty()) fail(ErrorCode::InvalidScript, std::string("'") + key + "' must be a non-empty string");
  return s;
}

}  // namespace detail

inline json action_to_json(const Action& a) {
  return std::visit(
      [](const auto& x) -> json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, action::AddStroke>) {
          json pts = json::array();
          for (const auto& p : x.points) pts.push_back(json::array({p.x(), p.y()}));
          return {{"op", "add_stroke"}, {"view", x.view}, {"colour", colour_to_string(x.colour)}, {"width", x.width}, {"points", pts}};
        } else if constexpr (std::is_same_v<T, action::Select>) {
          return {{"op", "select"}, {"id", x.id}, {"colour", colour_to_string(x.colour)}};
        } else if constexpr (std::is_same_v<T, action::FitQuadric>) {
          return {{"op", x.kind == QuadricKind::Ellipsoid ? "fit_ellipsoid" : "fit_cylinder"},
                  {"id", x.id},
                  {"selection", x.selection},
                  {"prior_sigma", x.prior_sigma},
                  {"resolution", json::array({x.resolution_a, x.resolution_b})}};
        } else if constexpr (std::is_same_v<T, action::FitCurve>) {
          return {{"op", "fit_curve"}, {"id", x.id}, {"colour", colour_to_string(x.colour)}, {"L", x.degree},
                  {"D", x.samples}, {"max_iters", x.max_iters}, {"tol", x.tol}};
        } else if constexpr (std::is_same_v<T, action::Surface>) {
          if (x.mode == SurfaceMode::Interpolate) return {{"op", "surface_interpolate"}, {"id", x.id}, {"a", x.a}, {"b", x.b}};
          return {{"op", "surface_extrude"}, {"id", x.id}, {"profile", x.a}, {"path", x.b}};
        } else if constexpr (std::is_same_v<T, action::Trim>) {
          return {{"op", "trim"}, {"mesh", x.mesh}, {"margin", x.margin}};
        } else if constexpr (std::is_same_v<T, action::Export>) {
          return {{"op", "export"}, {"file", x.file}, {"format", extension(x.format)}, {"meshes", x.meshes}};
        } else {
          return {{"op", "delete_mesh"}, {"mesh", x.mesh}};
        }
      },
      a);
}

inline Action action_from_json(const json& j) {
  try {
    if (!j.is_object()) fail(ErrorCode::InvalidScript, "action must be a JSON object");
    const auto op = j.at("op").get<std::string>();
    if (op == "add_stroke") {
      action::AddStroke a;
      a.view = j.at("view").get<int>();
      a.colour = colour_from_string(j.at("colour").get<std::string>());
      a.width = j.at("width").get<double>();
      if (!(a.width > 0.0)) fail(ErrorCode::InvalidScript, "stroke width must be positive");
      for (const auto& p : j.at("points")) {
        if (!p.is_array() || p.size() != 2) fail(ErrorCode::InvalidScript, "stroke points must be [x, y] pairs");
        a.points.emplace_back(p[0].get<double>(), p[1].get<double>());
      }
      if (a.points.empty()) fail(ErrorCode::InvalidScript, "stroke has no points");
      return a;
    }
    if (op == "select") return action::Select{detail::required_id(j, "id"), colour_from_string(j.at("colour").get<std::string>())};
    if (op == "fit_ellipsoid" || op == "fit_cylinder") {
      action::FitQuadric a;
      a.id = detail::required_id(j, "id");
      a.kind = op == "fit_ellipsoid" ? QuadricKind::Ellipsoid : QuadricKind::Cylinder;
      a.selection = detail::required_id(j, "selection");
      a.prior_sigma = detail::field(j, "prior_sigma", a.prior_sigma);
      if (j.contains("resolution")) {
        a.resolution_a = j.at("resolution").at(0).get<int>();
        a.resolution_b = j.at("resolution").at(1).get<int>();
      }
      return a;
    }
    if (op == "fit_curve") {
      action::FitCurve a;
      a.id = detail::required_id(j, "id");
      a.colour = colour_from_string(j.at("colour").get<std::string>());
      a.degree = detail::field(j, "L", a.degree);
      a.samples = detail::field(j, "D", a.samples);
      a.max_iters = detail::field(j, "max_iters", a.max_iters);
      a.tol = detail::field(j, "tol", a.tol);
      return a;
    }
    if (op == "surface_interpolate")
      return action::Surface{detail::required_id(j, "id"), SurfaceMode::Interpolate, detail::required_id(j, "a"), detail::required_id(j, "b")};
    if (op == "surface_extrude")
      return action::Surface{detail::required_id(j, "id"), SurfaceMode::Extrude, detail::required_id(j, "profile"),
                             detail::required_id(j, "path")};
    if (op == "trim") return action::Trim{detail::required_id(j, "mesh"), detail::field(j, "margin", kDefaultTrimMargin)};
    if (op == "export") {
      action::Export a;
      a.file = j.at("file").get<std::string>();
      if (a.file.empty() || fs::path(a.file).is_absolute() || a.file.find("..") != std::string::npos)
        fail(ErrorCode::InvalidScript, "export file must be a relative name inside the output directory");
      a.format = parse_mesh_format(detail::field<std::string>(j, "format", "ply"));
      a.meshes = detail::field<std::vector<std::string>>(j, "meshes", {});
      return a;
    }
    if (op == "delete_mesh") return action::DeleteMesh{detail::required_id(j, "mesh")};
    fail(ErrorCode::InvalidScript, "unknown op '" + op + "'");
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidScript, e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidScript) throw;
    fail(ErrorCode::InvalidScript, e.what());
  }
}

/// One compact JSON object per line.
inline std::string serialize_script(const SessionScript& script) {
  std::string out;
  for (const auto& a : script) out += action_to_json(a).dump() + "\n";
  return out;
}

inline SessionScript parse_script(std::istream& in, const std::string& source = "<script>") {
  SessionScript script;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      script.push_back(action_from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      fail(ErrorCode::InvalidScript, source + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      fail(ErrorCode::InvalidScript, source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return script;
}

inline SessionScript parse_script(const std::string& text) {
  std::istringstream in(text);
  return parse_script(in);
}

inline SessionScript load_script(const fs::path& path) {
  auto in = detail::open_in(path, false);
  return parse_script(in, path.string());
}

// ---------------------------------------------------------------------------
// Artifact store

struct SelectionArtifact {
  Rgb colour;
  SelectionResult result;
  std::vector<int> views;  // sketched views, ascending
};

struct QuadricArtifact {
  QuadricKind kind;
  Quadric quadric;
  PrincipalFrame frame;  // trimming frame
  std::string selection;
};

struct CurveArtifact {
  Rgb colour;
  CurveModel model;
  CurveSamples samples;
  std::vector<int> views;
};

/// Everything produced by a session, keyed by the ids named in the script.
struct ArtifactStore {
  SketchSet sketches;
  std::map<std::string, SelectionArtifact> selections;
  std::map<std::string, QuadricArtifact> quadrics;
  std::map<std::string, CurveArtifact> curves;
  std::vector<std::pair<std::string, SurfaceMesh>> meshes;  // creation order
  std::vector<fs::path> exports;

  bool id_in_use(const std::string& id) const {
    return selections.count(id) || quadrics.count(id) || curves.count(id) || find_mesh(id) != nullptr;
  }

  const SurfaceMesh* find_mesh(const std::string& id) const {
    for (const auto& [mid, m] : meshes)
      if (mid == id) return &m;
    return nullptr;
  }

  SurfaceMesh& mesh(const std::string& id) {
    for (auto& [mid, m] : meshes)
      if (mid == id) return m;
    fail(ErrorCode::UnknownArtifact, "no mesh '" + id + "'");
  }

  std::vector<SurfaceMesh> mesh_list(const std::vector<std::string>& ids = {}) const {
    std::vector<SurfaceMesh> out;
    if (ids.empty()) {
      for (const auto& [id, m] : meshes) out.push_back(m);
      return out;
    }
    for (const auto& id : ids) {
      const auto* m = find_mesh(id);
      if (!m) fail(ErrorCode::UnknownArtifact, "no mesh '" + id + "'");
      out.push_back(*m);
    }
    return out;
  }
};

struct ReplayOptions {
  fs::path out_dir;             // export actions write here
  bool write_exports = true;
};

namespace detail {

inline std::vector<int> sketched_views(const std::vector<Stroke>& group) {
  std::set<int> ids;
  for (const auto& s : group) ids.insert(s.view_id());
  return {ids.begin(), ids.end()};
}

template <typename Map>
const typename Map::mapped_type& lookup(const Map& m, const std::string& id, const char* kind) {
  auto it = m.find(id);
  if (it == m.end()) fail(ErrorCode::UnknownArtifact, std::string("no ") + kind + " '" + id + "'");
  return it->second;
}

inline void require_new_id(const ArtifactStore& store, const std::string& id) {
  if (store.id_in_use(id)) fail(ErrorCode::InvalidScript, "id '" + id + "' is already in use");
}

/// Orients a mesh toward the first sketched view's optical centre.
inline SurfaceMesh face_candidate_camera(SurfaceMesh mesh, const Project& project, const std::vector<int>& views) {
  if (views.empty() || mesh.faces.empty()) return mesh;
  return orient_normals(std::move(mesh), camera_center(project.view(views.front()).projection()));
}

inline SelectionArtifact run_selection(const Project& project, const ArtifactStore& store, Rgb colour) {
  const auto group = store.sketches.group(colour);
  if (group.empty()) fail(ErrorCode::EmptyStroke, "no strokes with colour " + colour_to_string(colour));
  SelectionArtifact sel;
  sel.colour = colour;
  sel.views = sketched_views(group);
  sel.result = select_points(project.cloud, project.views, group);
  return sel;
}

}  // namespace detail

/// Executes one action against the store and returns its JSON result.
inline json apply_action(const Project& project, ArtifactStore& store, const Action& act, const ReplayOptions& opts = {}) {
  return std::visit(
      [&](const auto& x) -> json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, action::AddStroke>) {
          const auto& view = project.view(x.view);
          store.sketches.strokes.push_back(Stroke::ingest(view, x.colour, x.width, x.points));
          return {{"stroke", store.sketches.strokes.size() - 1}, {"view", x.view}, {"colour", colour_to_string(x.colour)}};
        } else if constexpr (std::is_same_v<T, action::Select>) {
          detail::require_new_id(store, x.id);
          auto sel = detail::run_selection(project, store, x.colour);
          json out = to_json(sel.result);
          out["id"] = x.id;
          store.selections.emplace(x.id, std::move(sel));
          return out;
        } else if constexpr (std::is_same_v<T, action::FitQuadric>) {
          detail::require_new_id(store, x.id);
          const auto& sel = detail::lookup(store.selections, x.selection, "selection");
          const auto points = project.cloud.subset(sel.result.selected_indices);
          const Quadric q = fit_quadric(points, x.prior_sigma);
          QuadricArtifact art{x.kind, q, {}, x.selection};
          SurfaceMesh mesh;
          json extra;
          if (x.kind == QuadricKind::Ellipsoid) {
            art.frame = principal_frame(q, points);
            mesh = ellipsoid_mesh(art.frame, {x.resolution_a, x.resolution_b});
            extra = {{"center", vec_to_json(art.frame.center)}, {"radii", vec_to_json(art.frame.radii())}};
          } else {
            const auto cyl = cylinder_frame(q, points);
            art.frame = cyl.trimming_frame(points);
            mesh = cylinder_mesh(cyl, {x.resolution_a, x.resolution_b});
            extra = {{"center", vec_to_json(cyl.center)}, {"axis", vec_to_json(cyl.axis)},
                     {"radii", json::array({cyl.radius_u, cyl.radius_v})}, {"length", cyl.t_max - cyl.t_min}};
          }
          mesh = detail::face_candidate_camera(std::move(mesh), project, sel.views);
          json out = {{"id", x.id}, {"type", x.kind == QuadricKind::Ellipsoid ? "ellipsoid" : "cylinder"},
                      {"quadric", to_json(q)}, {"mesh", mesh_summary(mesh)}};
          out.update(extra);
          store.quadrics.emplace(x.id, std::move(art));
          store.meshes.emplace_back(x.id, std::move(mesh));
          return out;
        } else if constexpr (std::is_same_v<T, action::FitCurve>) {
          detail::require_new_id(store, x.id);
          const auto sel = detail::run_selection(project, store, x.colour);
          const auto points = project.cloud.subset(sel.result.selected_indices);
          CurveArtifact art;
          art.colour = x.colour;
          art.views = sel.views;
          art.model = fit_curve(points, {x.degree, x.samples, x.max_iters, x.tol});
          art.samples = sample_curve(art.model);
          json out = {{"id", x.id}, {"curve", to_json(art.model)}, {"samples", to_json(art.samples)},
                      {"points", points.size()}};
          store.curves.emplace(x.id, std::move(art));
          return out;
        } else if constexpr (std::is_same_v<T, action::Surface>) {
          detail::require_new_id(store, x.id);
          const auto& a = detail::lookup(store.curves, x.a, "curve");
          const auto& b = detail::lookup(store.curves, x.b, "curve");
          auto [q, p] = orient_pair(a.samples, b.samples);
          SurfaceMesh mesh = x.mode == SurfaceMode::Interpolate ? interpolate_surface(q, p) : extrude_surface(q, p);
          mesh = detail::face_candidate_camera(std::move(mesh), project, a.views);
          json out = {{"id", x.id}, {"mesh", mesh_summary(mesh)}};
          store.meshes.emplace_back(x.id, std::move(mesh));
          return out;
        } else if constexpr (std::is_same_v<T, action::Trim>) {
          const auto& art = detail::lookup(store.quadrics, x.mesh, "quadric mesh");
          SurfaceMesh& mesh = store.mesh(x.mesh);
          mesh = trim_mesh(mesh, art.frame, x.margin);
          return {{"mesh", x.mesh}, {"summary", mesh_summary(mesh)}};
        } else if constexpr (std::is_same_v<T, action::Export>) {
          const auto meshes = store.mesh_list(x.meshes);
          const fs::path target = opts.out_dir / x.file;
          if (opts.write_exports) {
            if (target.has_parent_path()) fs::create_directories(target.parent_path());
            export_mesh(meshes, x.format, target);
          }
          store.exports.push_back(target);
          return {{"file", x.file}, {"meshes", meshes.size()}};
        } else {
          auto it = std::find_if(store.meshes.begin(), store.meshes.end(), [&](const auto& e) { return e.first == x.mesh; });
          if (it == store.meshes.end()) fail(ErrorCode::UnknownArtifact, "no mesh '" + x.mesh + "'");
          store.meshes.erase(it);
          store.quadrics.erase(x.mesh);
          return {{"deleted", x.mesh}};
        }
      },
      act);
}

/// Checks that every action references only artifacts created earlier and
/// that ids are unique. Throws ActionError naming the offending action.
inline void validate_script(const SessionScript& script) {
  std::set<std::string> selections, curves, quadric_meshes, meshes, used;
  auto fresh = [&](std::size_t i, const std::string& id) {
    if (!used.insert(id).second) throw ActionError(i, Error(ErrorCode::InvalidScript, "id '" + id + "' is already in use"));
  };
  auto need = [&](std::size_t i, const std::set<std::string>& pool, const std::string& id, const char* kind) {
    if (!pool.count(id)) throw ActionError(i, Error(ErrorCode::InvalidScript, std::string("no earlier ") + kind + " '" + id + "'"));
  };
  for (std::size_t i = 0; i < script.size(); ++i) {
    std::visit(
        [&](const auto& x) {
          using T = std::decay_t<decltype(x)>;
          if constexpr (std::is_same_v<T, action::Select>) {
            fresh(i, x.id);
            selections.insert(x.id);
          } else if constexpr (std::is_same_v<T, action::FitQuadric>) {
            need(i, selections, x.selection, "selection");
            fresh(i, x.id);
            quadric_meshes.insert(x.id);
            meshes.insert(x.id);
          } else if constexpr (std::is_same_v<T, action::FitCurve>) {
            fresh(i, x.id);
            curves.insert(x.id);
          } else if constexpr (std::is_same_v<T, action::Surface>) {
            need(i, curves, x.a, "curve");
            need(i, curves, x.b, "curve");
            fresh(i, x.id);
            meshes.insert(x.id);
          } else if constexpr (std::is_same_v<T, action::Trim>) {
            need(i, quadric_meshes, x.mesh, "quadric mesh");
          } else if constexpr (std::is_same_v<T, action::Export>) {
            for (const auto& m : x.meshes) need(i, meshes, m, "mesh");
          } else if constexpr (std::is_same_v<T, action::DeleteMesh>) {
            need(i, meshes, x.mesh, "mesh");
            meshes.erase(x.mesh);
            quadric_meshes.erase(x.mesh);
          }
        },
        script[i]);
  }
}

/// Runs a script from an empty store. Errors carry the failing action index.
inline ArtifactStore replay(const Project& project, const SessionScript& script, const ReplayOptions& opts = {}) {
  validate_script(script);
  ArtifactStore store;
  for (std::size_t i = 0; i < script.size(); ++i) {
    try {
      apply_action(project, store, script[i], opts);
    } catch (const ActionError&) {
      throw;
    } catch (const Error& e) {
      throw ActionError(i, e);
    } catch (const fs::filesystem_error& e) {
      throw ActionError(i, Error(ErrorCode::IOFailure, e.what()));
    }
  }
  return store;
}

}  // namespace primfit
