#include <csignal>
#include <fstream>
#include <iostream>

#include "primfit/primfit.hpp"
#include "primfit/service.hpp"
#include "primfit/testing/sphere_scene.hpp"

#include <CLI11.hpp>

namespace {

using namespace primfit;

int exit_code(const Error& e) {
  switch (e.category()) {
    case ErrorCategory::Numerical:
      return 3;
    case ErrorCategory::IO:
      return 4;
    default:
      return 2;
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) fail(ErrorCode::IOFailure, "cannot write '" + path.string() + "'");
}

int run_replay(const fs::path& cloud, const fs::path& cameras, const fs::path& script_path, const fs::path& out_dir,
               const std::optional<fs::path>& images, MeshFormat format) {
  const auto script = load_script(script_path);
  const auto project = load_project(cloud, cameras, {images, true});
  fs::create_directories(out_dir);
  const auto store = replay(project, script, {out_dir, true});

  json summary = {{"actions", script.size()}, {"points", project.cloud.size()}, {"views", project.views.size()}};
  json meshes = json::array();
  for (const auto& [id, m] : store.meshes) {
    const auto file = id + "." + extension(format);
    export_mesh({m}, format, out_dir / file);
    json s = mesh_summary(m);
    s["id"] = id;
    s["file"] = file;
    meshes.push_back(s);
  }
  const auto scene_file = std::string("scene.") + extension(format);
  export_mesh(store.mesh_list(), format, out_dir / scene_file);
  summary["meshes"] = meshes;
  json sels = json::object();
  for (const auto& [id, s] : store.selections) sels[id] = to_json(s.result, false);
  summary["selections"] = sels;
  json curves = json::object();
  for (const auto& [id, c] : store.curves) curves[id] = to_json(c.model);
  summary["curves"] = curves;
  write_text(out_dir / "summary.json", summary.dump(2) + "\n");
  std::cout << "replayed " << script.size() << " actions, " << store.meshes.size() << " meshes -> " << out_dir.string() << '\n';
  return 0;
}

int run_info(const fs::path& cloud_path, const std::optional<fs::path>& cameras) {
  const auto cloud = load_point_cloud(cloud_path);
  Vec3 lo = cloud[0], hi = cloud[0];
  for (const auto& p : cloud.points()) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  json info = {{"points", cloud.size()}, {"colours", cloud.has_colours()}, {"min", vec_to_json(lo)}, {"max", vec_to_json(hi)}};
  if (cameras) info["views"] = load_cameras(*cameras).size();
  std::cout << info.dump(2) << '\n';
  return 0;
}

int run_clean(const fs::path& in, const fs::path& out, std::optional<double> threshold, MeshFormat format) {
  auto meshes = import_meshes(in);
  for (auto& m : meshes) {
    const auto tag = m.source_tag;
    m = remove_long_edges(m, threshold);
    m.source_tag = tag;
  }
  export_mesh(meshes, format, out);
  return 0;
}

Service* g_service = nullptr;

int run_serve(const fs::path& cloud, const fs::path& cameras, const std::optional<fs::path>& images,
              const std::optional<fs::path>& resume, const std::string& host, int port) {
  ServiceOptions opts;
  if (resume) opts.resume = load_script(*resume);
  Service service(load_project(cloud, cameras, {images, true}), std::move(opts));
  const int bound = service.bind(host, port);
  std::cout << "serving on http://" << host << ":" << bound << std::endl;
  g_service = &service;
  std::signal(SIGINT, [](int) {
    if (g_service) g_service->stop();
  });
  service.listen();
  g_service = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"primfit: sketch-guided primitive fitting on point clouds"};
  app.require_subcommand(1);

  const std::map<std::string, MeshFormat> formats{{"ply", MeshFormat::Ply}, {"obj", MeshFormat::Obj}};

  std::string cloud, cameras, script, out_dir, images, resume, input, output;
  MeshFormat format = MeshFormat::Ply;

  auto* rep = app.add_subcommand("replay", "Run a session script and export every mesh");
  rep->add_option("--cloud", cloud, "Point cloud (PLY)")->required()->check(CLI::ExistingFile);
  rep->add_option("--cameras", cameras, "Camera file (JSON)")->required()->check(CLI::ExistingFile);
  rep->add_option("--script", script, "Session script (JSON lines)")->required()->check(CLI::ExistingFile);
  rep->add_option("--out", out_dir, "Output directory")->required();
  rep->add_option("--images", images, "Directory holding the view images");
  rep->add_option("--format", format, "Mesh format")->transform(CLI::CheckedTransformer(formats, CLI::ignore_case));

  auto* val = app.add_subcommand("validate", "Check that a script parses and references only earlier artifacts");
  val->add_option("script", script, "Session script")->required()->check(CLI::ExistingFile);

  auto* inf = app.add_subcommand("info", "Summarize a point cloud");
  inf->add_option("--cloud", cloud, "Point cloud (PLY)")->required()->check(CLI::ExistingFile);
  inf->add_option("--cameras", cameras, "Camera file (JSON)")->check(CLI::ExistingFile);

  int port = 8080;
  std::string host = "127.0.0.1";
  auto* srv = app.add_subcommand("serve", "Serve the HTTP API");
  srv->add_option("--cloud", cloud, "Point cloud (PLY)")->required()->check(CLI::ExistingFile);
  srv->add_option("--cameras", cameras, "Camera file (JSON)")->required()->check(CLI::ExistingFile);
  srv->add_option("--images", images, "Directory holding the view images");
  srv->add_option("--resume", resume, "Script to replay before serving")->check(CLI::ExistingFile);
  srv->add_option("--host", host, "Bind address");
  srv->add_option("--port", port, "Port (0 picks a free one)");

  std::optional<double> threshold;
  auto* cln = app.add_subcommand("clean", "Remove faces with overlong edges from a mesh file");
  cln->add_option("input", input, "Mesh (PLY or OBJ)")->required()->check(CLI::ExistingFile);
  cln->add_option("output", output, "Output mesh")->required();
  cln->add_option("--threshold", threshold, "Edge length limit (default: 5x median)");
  cln->add_option("--format", format, "Mesh format")->transform(CLI::CheckedTransformer(formats, CLI::ignore_case));

  auto* scn = app.add_subcommand("scene", "Write the synthetic sphere scene and its script");
  scn->add_option("dir", out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  auto opt_path = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<fs::path>(s); };

  try {
    if (*rep) return run_replay(cloud, cameras, script, out_dir, opt_path(images), format);
    if (*val) {
      const auto s = load_script(script);
      validate_script(s);
      std::cout << "ok: " << s.size() << " actions\n";
      return 0;
    }
    if (*inf) return run_info(cloud, opt_path(cameras));
    if (*srv) return run_serve(cloud, cameras, opt_path(images), opt_path(resume), host, port);
    if (*cln) return run_clean(input, output, threshold, format);
    if (*scn) {
      const auto files = testing::write_sphere_scene(testing::make_sphere_scene(), out_dir);
      std::cout << files.cloud.string() << '\n' << files.cameras.string() << '\n' << files.script.string() << '\n';
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
