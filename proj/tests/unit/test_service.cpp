#include "primfit/service.hpp"

#include <unistd.h>

#include <cstring>
#include <fstream>

#include <gtest/gtest.h>

#include "primfit/testing/sphere_scene.hpp"

using namespace primfit;
namespace scene = primfit::testing;

namespace {

Project three_point_project(const fs::path& workspace = {}) {
  Mat34 P = Mat34::Zero();
  P.leftCols<3>() = Mat3::Identity();
  P(0, 2) = 4;
  P(1, 2) = 4;
  return make_project(PointCloud({{0, 0, 1}, {1, 2, 3}, {-0.5, 0.25, 2}}), {CameraView(0, P, "view0.png", {8, 8})},
                      workspace);
}

const scene::SphereScene& sphere() {
  static const auto s = scene::make_sphere_scene();
  return s;
}

// A running service on an ephemeral port plus a client bound to it.
struct Running {
  explicit Running(Project p, ServiceOptions opts = {}) : service(std::move(p), std::move(opts)) {
    port = service.bind("127.0.0.1", 0);
    service.start();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(60, 0);
    return c;
  }

  Service service;
  int port = 0;
};

json stroke_body(const action::AddStroke& s) {
  json pts = json::array();
  for (const auto& p : s.points) pts.push_back({p.x(), p.y()});
  return {{"view", s.view}, {"colour", colour_to_string(s.colour)}, {"width_px", s.width}, {"points", pts}};
}

json post(httplib::Client& c, const std::string& path, const json& body, int expected = 200) {
  auto res = c.Post(path, body.dump(), "application/json");
  EXPECT_TRUE(res);
  if (!res) return {};
  EXPECT_EQ(res->status, expected) << path << ": " << res->body;
  return json::parse(res->body);
}

void post_fill_strokes(httplib::Client& c) {
  for (const auto& v : sphere().views)
    for (const auto& s : scene::fill_strokes(sphere().config, v)) post(c, "/api/strokes", stroke_body(s));
}

}  // namespace

TEST(HttpStatus, Mapping) {
  EXPECT_EQ(http_status(Error(ErrorCode::UnknownArtifact, "")), 404);
  EXPECT_EQ(http_status(Error(ErrorCode::InvalidArgument, "")), 400);
  EXPECT_EQ(http_status(Error(ErrorCode::InvalidScript, "")), 400);
  EXPECT_EQ(http_status(Error(ErrorCode::SingularSystem, "")), 422);
  EXPECT_EQ(http_status(Error(ErrorCode::IOFailure, "")), 500);
  EXPECT_EQ(http_status(Error(ErrorCode::MissingImage, "")), 500);
}

TEST(ViewerStride, CapsThePointCount) {
  EXPECT_EQ(detail::viewer_stride(10, 0), 1u);
  EXPECT_EQ(detail::viewer_stride(10, 10), 1u);
  EXPECT_EQ(detail::viewer_stride(11, 10), 2u);
  EXPECT_EQ(detail::viewer_stride(1'000'001, 500'000), 3u);
}

TEST(Service, PointCloudJsonAndBinary) {
  Running r(three_point_project());
  auto c = r.client();
  auto res = c.Get("/api/pointcloud?format=json");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200);
  const auto j = json::parse(res->body);
  EXPECT_EQ(j.at("count"), 3);
  EXPECT_EQ(j.at("points").size(), 3u);
  EXPECT_EQ(j.at("points")[1], json::array({1.0, 2.0, 3.0}));

  res = c.Get("/api/pointcloud");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->body.size(), 36u);
  EXPECT_EQ(res->get_header_value("X-Point-Stride"), "1");
  float xyz[9];
  std::memcpy(xyz, res->body.data(), sizeof(xyz));  // the test host is little-endian
  EXPECT_EQ(xyz[3], 1.0f);
  EXPECT_EQ(xyz[7], 0.25f);
}

TEST(Service, StrideHeaderFollowsTheCap) {
  Running r(three_point_project(), {.async_after = std::chrono::milliseconds(100), .max_viewer_points = 2, .resume = {}});
  auto c = r.client();
  auto res = c.Get("/api/pointcloud");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->get_header_value("X-Point-Stride"), "2");
  EXPECT_EQ(res->body.size(), 24u);
}

TEST(Service, ProjectViewsAndImages) {
  const auto dir = fs::temp_directory_path() / ("primfit_svc_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  std::ofstream(dir / "view0.png", std::ios::binary)
      .write(reinterpret_cast<const char*>(scene::kTinyPng), sizeof(scene::kTinyPng));
  Running r(three_point_project(dir));
  auto c = r.client();

  auto res = c.Get("/api/project");
  ASSERT_TRUE(res);
  EXPECT_EQ(json::parse(res->body).at("points"), 3);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");

  res = c.Get("/api/views");
  ASSERT_TRUE(res);
  EXPECT_EQ(json::parse(res->body)[0].at("width"), 8);

  res = c.Get("/api/views/0/image");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(res->body.size(), sizeof(scene::kTinyPng));

  res = c.Get("/api/views/5/image");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);

  res = c.Options("/api/select");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 204);
  EXPECT_NE(res->get_header_value("Access-Control-Allow-Methods").find("POST"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Service, SelectMatchesTheLibrary) {
  Running r(sphere().project());
  auto c = r.client();
  post_fill_strokes(c);
  const auto body = post(c, "/api/select", {{"colour", "#ff0000"}});
  EXPECT_EQ(body.at("id"), "sel1");

  SketchSet sketches;
  for (const auto& v : sphere().views)
    for (const auto& s : scene::fill_strokes(sphere().config, v)) sketches.strokes.push_back(Stroke::ingest(v, s.colour, s.width, s.points));
  const auto expected = select_points(sphere().cloud, sphere().views, sketches.group(scene::kFillColour));
  EXPECT_EQ(body.at("selected_indices").get<std::vector<std::size_t>>(), expected.selected_indices);
  EXPECT_EQ(body.at("probabilities").get<std::vector<double>>(), expected.probabilities);
}

TEST(Service, RecordedSessionReplaysByteIdentically) {
  Running r(sphere().project());
  auto c = r.client();
  post_fill_strokes(c);
  post(c, "/api/select", {{"colour", "#ff0000"}, {"id", "sel"}});
  const auto fit = post(c, "/api/fit/quadric", {{"type", "ellipsoid"}, {"selection_id", "sel"}, {"resolution", {24, 12}}});
  const std::string id = fit.at("id");
  EXPECT_EQ(id, "ellipsoid1");
  post(c, "/api/trim", {{"mesh", id}});

  auto res = c.Get("/api/session");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->get_header_value("Content-Type"), "application/x-ndjson");
  const auto script = parse_script(res->body);
  ASSERT_EQ(script.size(), r.service.session().script().size());

  res = c.Get("/api/meshes/" + id + ".ply");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200);
  const auto offline = replay(sphere().project(), script, {.out_dir = {}, .write_exports = false});
  EXPECT_EQ(res->body, meshes_to_string(offline.mesh_list({id}), MeshFormat::Ply));

  res = c.Get("/api/meshes");
  ASSERT_TRUE(res);
  const auto list = json::parse(res->body);
  ASSERT_EQ(list.size(), 1u);
  EXPECT_EQ(list[0].at("id"), id);
}

TEST(Service, ErrorsCarryTheActionIndex) {
  Running r(sphere().project());
  auto c = r.client();
  post(c, "/api/strokes", stroke_body(scene::fill_strokes(sphere().config, sphere().views[0])[0]));

  auto body = post(c, "/api/fit/quadric", {{"selection_id", "nope"}}, 404);
  EXPECT_EQ(body.at("action_index"), 1);
  EXPECT_NE(body.at("error").get<std::string>().find("UnknownArtifact"), std::string::npos);

  body = post(c, "/api/select", {{"colour", "#123456"}}, 422);
  EXPECT_EQ(body.at("action_index"), 1);

  post(c, "/api/select", {{"colour", "not-a-colour"}}, 400);
  post(c, "/api/surface", {{"mode", "sideways"}, {"a", "x"}, {"b", "y"}}, 400);

  auto res = c.Post("/api/select", "{broken", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);

  res = c.Get("/api/meshes/ghost.ply");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);

  // Failed actions are not recorded.
  EXPECT_EQ(r.service.session().script().size(), 1u);
}

TEST(Service, SlowActionsArePolled) {
  Running r(sphere().project(), {.async_after = std::chrono::milliseconds(0), .max_viewer_points = 500'000, .resume = {}});
  auto c = r.client();
  // Strokes are cheap but may still outrun a zero window; accept either answer.
  for (const auto& v : sphere().views)
    for (const auto& s : scene::fill_strokes(sphere().config, v)) {
      auto res = c.Post("/api/strokes", stroke_body(s).dump(), "application/json");
      ASSERT_TRUE(res);
      EXPECT_TRUE(res->status == 200 || res->status == 202);
    }
  auto res = c.Post("/api/select", json{{"colour", "#ff0000"}}.dump(), "application/json");
  ASSERT_TRUE(res);
  json final;
  if (res->status == 202) {
    const auto job = json::parse(res->body).at("job").get<std::uint64_t>();
    for (int attempt = 0; attempt < 600; ++attempt) {
      auto poll = c.Get("/api/jobs/" + std::to_string(job));
      ASSERT_TRUE(poll);
      final = json::parse(poll->body);
      if (final.at("status") != "pending") break;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ASSERT_EQ(final.at("status"), "done");
    final = final.at("result");
  } else {
    ASSERT_EQ(res->status, 200);
    final = json::parse(res->body);
  }
  EXPECT_GT(final.at("count").get<int>(), 0);

  res = c.Get("/api/jobs/999999");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);
}

TEST(Service, DeleteMesh) {
  Running r(sphere().project(), {.async_after = std::chrono::milliseconds(100), .max_viewer_points = 500'000,
                                 .resume = scene::ellipsoid_script(sphere())});
  auto c = r.client();
  auto res = c.Delete("/api/meshes/sphere");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  res = c.Delete("/api/meshes/sphere");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);
  res = c.Get("/api/meshes");
  ASSERT_TRUE(res);
  EXPECT_TRUE(json::parse(res->body).empty());
}

TEST(Service, ResumeReplaysTheScript) {
  Session session(sphere().project(), {.async_after = std::chrono::milliseconds(100), .max_viewer_points = 500'000,
                                       .resume = scene::ellipsoid_script(sphere())});
  EXPECT_EQ(session.script(), scene::ellipsoid_script(sphere()));
  const bool has_mesh = session.read([](const ArtifactStore& s, const SessionScript&) { return s.find_mesh("sphere") != nullptr; });
  EXPECT_TRUE(has_mesh);
  SessionScript bad{action::Select{"x", Rgb{9, 9, 9}}};
  try {
    Session broken(sphere().project(), {.async_after = std::chrono::milliseconds(100), .max_viewer_points = 1, .resume = bad});
    FAIL();
  } catch (const ActionError& e) {
    EXPECT_EQ(e.action_index(), 0u);
  }
}

TEST(Service, PortInUse) {
  Running r(three_point_project());
  Service other(three_point_project());
  try {
    other.bind("127.0.0.1", r.port);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PortInUse);
  }
}

TEST(Service, ConcurrentReadsDuringWrites) {
  Running r(sphere().project());
  std::atomic<bool> done{false};
  std::atomic<int> reads{0};
  std::thread reader([&] {
    auto c = r.client();
    while (!done) {
      auto res = c.Get("/api/meshes");
      if (res && res->status == 200) ++reads;
    }
  });
  auto c = r.client();
  post_fill_strokes(c);
  post(c, "/api/select", {{"colour", "#ff0000"}});
  post(c, "/api/fit/quadric", {{"selection_id", "sel1"}, {"resolution", {16, 8}}});
  done = true;
  reader.join();
  EXPECT_GT(reads.load(), 0);
  EXPECT_EQ(r.service.session().script().size(), scene::ellipsoid_script(sphere()).size());
}
