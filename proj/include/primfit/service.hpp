#pragma once

#include <bit>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <future>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>

// Eigen must precede httplib: <resolv.h> defines a `_res` macro that
// collides with Eigen parameter names.
#include "primfit/session.hpp"

#include <httplib.h>

namespace primfit {

struct ServiceOptions {
  // Mutating requests that finish within this window answer inline;
  // slower ones answer { "job": id } and are polled.
  std::chrono::milliseconds async_after{100};
  std::size_t max_viewer_points = 500'000;
  SessionScript resume;  // replayed before serving
};

inline int http_status(const Error& e) {
  switch (e.code()) {
    case ErrorCode::UnknownArtifact:
      return 404;
    case ErrorCode::IOFailure:
    case ErrorCode::PortInUse:
      return 500;
    default:
      break;
  }
  switch (e.category()) {
    case ErrorCategory::Numerical:
      return 422;
    case ErrorCategory::IO:
      return 500;
    default:
      return 400;
  }
}

inline json error_body(const std::string& what, std::optional<std::size_t> action_index = std::nullopt) {
  json j = {{"error", what}};
  if (action_index) j["action_index"] = *action_index;
  return j;
}

/// Engine state behind the HTTP API. Reads run concurrently; every mutation
/// goes through one worker thread in submission order, and only actions that
/// succeed are appended to the script.
class Session {
 public:
  explicit Session(Project project, ServiceOptions opts = {}) : project_(std::move(project)), opts_(std::move(opts)) {
    for (const auto& a : opts_.resume) {
      Action act = a;
      assign_id(act);
      try {
        apply_action(project_, store_, act, {.out_dir = {}, .write_exports = false});
      } catch (const Error& e) {
        throw ActionError(script_.size(), e);
      }
      script_.push_back(std::move(act));
    }
    worker_ = std::jthread([this](std::stop_token st) { run(st); });
  }

  ~Session() {
    worker_.request_stop();
    queue_cv_.notify_all();
  }

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  const Project& project() const { return project_; }
  const ServiceOptions& options() const { return opts_; }

  struct Outcome {
    std::uint64_t job = 0;
    std::optional<json> result;  // set when finished successfully
    std::optional<Error> error;
    std::optional<std::size_t> action_index;
    bool finished() const { return result || error; }
  };

  /// Queues an action and waits up to the async window for it.
  Outcome submit(Action act) {
    auto [id, fut] = enqueue(std::move(act));
    if (fut.wait_for(opts_.async_after) == std::future_status::ready) return fut.get();
    Outcome pending;
    pending.job = id;
    return pending;
  }

  /// Queues an action and blocks until it has run.
  Outcome submit_and_wait(Action act) { return enqueue(std::move(act)).second.get(); }

  std::optional<Outcome> job(std::uint64_t id) const {
    std::lock_guard lock(jobs_mutex_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
  }

  template <typename F>
  auto read(F&& f) const {
    std::shared_lock lock(store_mutex_);
    return f(store_, script_);
  }

  SessionScript script() const {
    std::shared_lock lock(store_mutex_);
    return script_;
  }

 private:
  struct Pending {
    std::uint64_t id;
    Action action;
    std::promise<Outcome> done;
  };

  std::pair<std::uint64_t, std::future<Outcome>> enqueue(Action act) {
    std::lock_guard lock(queue_mutex_);
    const auto id = next_job_++;
    {
      std::lock_guard jl(jobs_mutex_);
      jobs_[id].job = id;
    }
    queue_.push_back(Pending{id, std::move(act), {}});
    auto fut = queue_.back().done.get_future();
    queue_cv_.notify_one();
    return {id, std::move(fut)};
  }

  void run(std::stop_token st) {
    while (true) {
      Pending p;
      {
        std::unique_lock lock(queue_mutex_);
        if (!queue_cv_.wait(lock, st, [&] { return !queue_.empty(); })) return;
        p = std::move(queue_.front());
        queue_.pop_front();
      }
      Outcome out;
      out.job = p.id;
      {
        std::unique_lock lock(store_mutex_);
        assign_id(p.action);
        try {
          out.result = apply_action(project_, store_, p.action, {.out_dir = {}, .write_exports = false});
          script_.push_back(p.action);
        } catch (const Error& e) {
          out.error = e;
          out.action_index = script_.size();
        } catch (const std::exception& e) {
          out.error = Error(ErrorCode::IOFailure, e.what());
          out.action_index = script_.size();
        }
      }
      {
        std::lock_guard jl(jobs_mutex_);
        jobs_[p.id] = out;
      }
      p.done.set_value(std::move(out));
    }
  }

  // Requests may omit artifact ids; the worker fills them in so the recorded
  // script is explicit and replays without the service.
  void assign_id(Action& act) {
    auto fresh = [&](const std::string& prefix) {
      for (int k = 1;; ++k) {
        auto id = prefix + std::to_string(k);
        if (!store_.id_in_use(id)) return id;
      }
    };
    std::visit(
        [&](auto& x) {
          using T = std::decay_t<decltype(x)>;
          if constexpr (std::is_same_v<T, action::Select>) {
            if (x.id.empty()) x.id = fresh("sel");
          } else if constexpr (std::is_same_v<T, action::FitQuadric>) {
            if (x.id.empty()) x.id = fresh(x.kind == QuadricKind::Ellipsoid ? "ellipsoid" : "cylinder");
          } else if constexpr (std::is_same_v<T, action::FitCurve>) {
            if (x.id.empty()) x.id = fresh("curve");
          } else if constexpr (std::is_same_v<T, action::Surface>) {
            if (x.id.empty()) x.id = fresh(x.mode == SurfaceMode::Interpolate ? "interp" : "extrude");
          }
        },
        act);
  }

  Project project_;
  ServiceOptions opts_;

  mutable std::shared_mutex store_mutex_;
  ArtifactStore store_;
  SessionScript script_;

  std::mutex queue_mutex_;
  std::condition_variable_any queue_cv_;
  std::deque<Pending> queue_;
  std::uint64_t next_job_ = 1;

  mutable std::mutex jobs_mutex_;
  std::map<std::uint64_t, Outcome> jobs_;

  std::jthread worker_;  // last: joins before the members it uses go away
};

// ---------------------------------------------------------------------------
// Request decoding. Bodies mirror the script actions, with ids optional.

namespace detail {

inline json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::InvalidArgument, std::string("malformed JSON body: ") + e.what());
  }
}

template <typename F>
auto decode(F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, e.what());
  }
}

inline action::AddStroke stroke_request(const json& j) {
  return decode([&] {
    json a = j;
    a["op"] = "add_stroke";
    if (!a.contains("width") && a.contains("width_px")) a["width"] = a["width_px"];
    return std::get<action::AddStroke>(action_from_json(a));
  });
}

inline action::FitQuadric quadric_request(const json& j) {
  return decode([&] {
    action::FitQuadric a;
    const auto type = j.value("type", std::string("ellipsoid"));
    if (type == "ellipsoid")
      a.kind = QuadricKind::Ellipsoid;
    else if (type == "cylinder")
      a.kind = QuadricKind::Cylinder;
    else
      fail(ErrorCode::InvalidArgument, "type must be 'ellipsoid' or 'cylinder'");
    a.id = j.value("id", std::string());
    a.selection = j.at("selection_id").get<std::string>();
    a.prior_sigma = j.value("prior_sigma", a.prior_sigma);
    if (j.contains("resolution")) {
      a.resolution_a = j.at("resolution").at(0).get<int>();
      a.resolution_b = j.at("resolution").at(1).get<int>();
    }
    return a;
  });
}

inline action::FitCurve curve_request(const json& j) {
  return decode([&] {
    action::FitCurve a;
    a.id = j.value("id", std::string());
    a.colour = colour_from_string(j.at("colour").get<std::string>());
    a.degree = j.value("L", a.degree);
    a.samples = j.value("D", a.samples);
    a.max_iters = j.value("max_iters", a.max_iters);
    a.tol = j.value("tol", a.tol);
    return a;
  });
}

inline action::Surface surface_request(const json& j) {
  return decode([&] {
    action::Surface a;
    const auto mode = j.at("mode").get<std::string>();
    if (mode == "interpolate")
      a.mode = SurfaceMode::Interpolate;
    else if (mode == "extrude")
      a.mode = SurfaceMode::Extrude;
    else
      fail(ErrorCode::InvalidArgument, "mode must be 'interpolate' or 'extrude'");
    a.id = j.value("id", std::string());
    a.a = j.at("a").get<std::string>();
    a.b = j.at("b").get<std::string>();
    return a;
  });
}

inline std::string image_content_type(const fs::path& p) {
  auto ext = p.extension().string();
  for (auto& c : ext) c = char(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  return "application/octet-stream";
}

inline std::string read_file(const fs::path& p) {
  auto in = open_in(p, true);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::size_t viewer_stride(std::size_t n, std::size_t cap) { return cap == 0 || n <= cap ? 1 : (n + cap - 1) / cap; }

}  // namespace detail

/// HTTP front end over a Session. Handlers only translate; every number in a
/// response comes from the library call the action maps to.
class Service {
 public:
  explicit Service(Project project, ServiceOptions opts = {}) : session_(std::move(project), std::move(opts)) {
    // SO_REUSEADDR only: httplib's default SO_REUSEPORT would let a second server share the port.
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    routes();
  }

  ~Service() { stop(); }

  Session& session() { return session_; }

  /// Binds the port (0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port) {
    int bound = port;
    if (port == 0)
      bound = server_.bind_to_any_port(host);
    else if (!server_.bind_to_port(host, port))
      bound = -1;
    if (bound <= 0) fail(ErrorCode::PortInUse, "cannot bind " + host + ":" + std::to_string(port));
    return bound;
  }

  /// Serves on the calling thread until stop().
  void listen() { server_.listen_after_bind(); }

  /// Serves on a background thread.
  void start() {
    thread_ = std::thread([this] { listen(); });
    server_.wait_until_ready();
  }

  void stop() {
    if (server_.is_running()) server_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  using Req = httplib::Request;
  using Res = httplib::Response;

  static void send_json(Res& res, const json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(Res& res, const Error& e, std::optional<std::size_t> index = std::nullopt) {
    send_json(res, error_body(e.what(), index), http_status(e));
  }

  void send_outcome(Res& res, const Session::Outcome& out) {
    if (out.error)
      send_error(res, *out.error, out.action_index);
    else if (out.result)
      send_json(res, *out.result);
    else
      send_json(res, {{"job", out.job}}, 202);
  }

  template <typename Decode>
  httplib::Server::Handler mutation(Decode decode) {
    return [this, decode](const Req& req, Res& res) {
      try {
        send_outcome(res, session_.submit(Action{decode(detail::parse_body(req))}));
      } catch (const Error& e) {
        send_error(res, e);
      }
    };
  }

  template <typename F>
  static httplib::Server::Handler guarded(F f) {
    return [f](const Req& req, Res& res) {
      try {
        f(req, res);
      } catch (const Error& e) {
        send_error(res, e);
      } catch (const std::exception& e) {
        send_json(res, error_body(e.what()), 500);
      }
    };
  }

  void routes() {
    server_.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                 {"Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS"},
                                 {"Access-Control-Allow-Headers", "Content-Type"}});
    server_.Options(R"(/api/.*)", [](const Req&, Res& res) { res.status = 204; });

    server_.Get("/api/project", guarded([this](const Req&, Res& res) {
      const auto& p = session_.project();
      const auto len = session_.read([](const ArtifactStore&, const SessionScript& s) { return s.size(); });
      send_json(res, {{"points", p.cloud.size()}, {"views", p.views.size()}, {"workspace", p.workspace.string()},
                      {"script_length", len}});
    }));

    server_.Get("/api/views", guarded([this](const Req&, Res& res) { send_json(res, cameras_to_json(session_.project().views)); }));

    server_.Get(R"(/api/views/(-?\d+)/image)", guarded([this](const Req& req, Res& res) {
      const int id = std::stoi(req.matches[1]);
      const auto& paths = session_.project().image_paths;
      auto it = paths.find(id);
      if (it == paths.end()) fail(ErrorCode::UnknownArtifact, "no view " + std::to_string(id));
      if (!fs::exists(it->second)) fail(ErrorCode::MissingImage, "image for view " + std::to_string(id) + " is missing");
      res.set_content(detail::read_file(it->second), detail::image_content_type(it->second));
    }));

    server_.Get("/api/pointcloud", guarded([this](const Req& req, Res& res) {
      const auto& pts = session_.project().cloud.points();
      const auto stride = detail::viewer_stride(pts.size(), session_.options().max_viewer_points);
      res.set_header("X-Point-Stride", std::to_string(stride));
      if (req.get_param_value("format") == "json") {
        json arr = json::array();
        for (std::size_t k = 0; k < pts.size(); k += stride) arr.push_back(vec_to_json(pts[k]));
        send_json(res, {{"stride", stride}, {"count", arr.size()}, {"points", arr}});
        return;
      }
      std::string body;
      body.reserve((pts.size() / stride + 1) * 12);
      for (std::size_t k = 0; k < pts.size(); k += stride) {
        for (int c = 0; c < 3; ++c) {
          const float v = static_cast<float>(pts[k][c]);
          char raw[4];
          std::memcpy(raw, &v, 4);
          if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + 4);
          body.append(raw, 4);
        }
      }
      res.set_content(std::move(body), "application/octet-stream");
    }));

    server_.Post("/api/strokes", mutation([](const json& j) { return detail::stroke_request(j); }));
    server_.Post("/api/select", mutation([](const json& j) {
      return detail::decode([&] {
        return action::Select{j.value("id", std::string()), colour_from_string(j.at("colour").get<std::string>())};
      });
    }));
    server_.Post("/api/fit/quadric", mutation([](const json& j) { return detail::quadric_request(j); }));
    server_.Post("/api/fit/curve", mutation([](const json& j) { return detail::curve_request(j); }));
    server_.Post("/api/surface", mutation([](const json& j) { return detail::surface_request(j); }));
    server_.Post("/api/trim", mutation([](const json& j) {
      return detail::decode([&] { return action::Trim{j.at("mesh").get<std::string>(), j.value("margin", kDefaultTrimMargin)}; });
    }));
    server_.Delete(R"(/api/meshes/([^/]+))", guarded([this](const Req& req, Res& res) {
      send_outcome(res, session_.submit(action::DeleteMesh{req.matches[1]}));
    }));

    server_.Get("/api/meshes", guarded([this](const Req&, Res& res) {
      send_json(res, session_.read([](const ArtifactStore& store, const SessionScript&) {
        json list = json::array();
        for (const auto& [id, m] : store.meshes) {
          json s = mesh_summary(m);
          s["id"] = id;
          list.push_back(s);
        }
        return list;
      }));
    }));

    server_.Get(R"(/api/meshes/([^/]+)\.ply)", guarded([this](const Req& req, Res& res) {
      const std::string id = req.matches[1];
      auto body = session_.read([&](const ArtifactStore& store, const SessionScript&) {
        return meshes_to_string(store.mesh_list({id}), MeshFormat::Ply);
      });
      res.set_content(std::move(body), "application/octet-stream");
    }));

    server_.Get("/api/session", guarded([this](const Req&, Res& res) {
      res.set_content(serialize_script(session_.script()), "application/x-ndjson");
    }));

    server_.Get(R"(/api/jobs/(\d+))", guarded([this](const Req& req, Res& res) {
      const auto out = session_.job(std::stoull(req.matches[1]));
      if (!out) fail(ErrorCode::UnknownArtifact, "no job " + std::string(req.matches[1]));
      if (out->result)
        send_json(res, {{"status", "done"}, {"result", *out->result}});
      else if (out->error) {
        json body = error_body(out->error->what(), out->action_index);
        body["status"] = "error";
        send_json(res, body);
      } else
        send_json(res, {{"status", "pending"}});
    }));
  }

  Session session_;
  httplib::Server server_;
  std::thread thread_;
};

}  // namespace primfit
