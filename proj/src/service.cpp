#include "geoecon/service.hpp"

#include <httplib.h>

#include <condition_variable>
#include <deque>
#include <regex>
#include <thread>

#include "geoecon/error.hpp"
#include "geoecon/synth.hpp"

namespace geoecon {

namespace {

const std::vector<std::string> kStages = {"read", "score", "reduce", "aggregate"};

struct HttpError {
  ApiError error;
};

[[noreturn]] void fail(int status, const std::string& code, const std::string& message) {
  throw HttpError{{status, code, message}};
}

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

std::vector<double> parse_numbers(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      return {};
    }
    if (used != item.size() || !std::isfinite(v)) return {};
    out.push_back(v);
  }
  return out;
}

bool valid_period(const std::string& p) {
  static const std::regex re(R"(^[0-9]{4}(-[0-9]{2})?$)");
  return std::regex_match(p, re);
}

nlohmann::json cell_json(const FineGrainedRow& r) {
  return {{"cell", r.cell}, {"lat", r.lat}, {"lon", r.lon}, {"score", r.score}, {"pair_count", r.pair_count}};
}

}  // namespace

struct Service::Impl {
  Store& store;
  const ModelRegistry& models;
  ServiceConfig config;
  httplib::Server server;
  std::thread server_thread;
  int bound_port = -1;

  std::mutex create_mu;
  std::mutex queue_mu;
  std::condition_variable queue_cv;
  std::deque<std::string> queue;
  bool busy = false;
  bool stopping = false;
  std::thread executor;

  Impl(Store& s, const ModelRegistry& m, ServiceConfig c) : store(s), models(m), config(std::move(c)) {
    recover_tasks();
    executor = std::thread([this] { executor_loop(); });
    routes();
  }

  ~Impl() {
    server.stop();
    if (server_thread.joinable()) server_thread.join();
    {
      std::lock_guard lock(queue_mu);
      stopping = true;
    }
    queue_cv.notify_all();
    if (executor.joinable()) executor.join();
  }

  // Tasks interrupted by a previous shutdown: running ones are marked failed,
  // pending ones are rescheduled.
  void recover_tasks() {
    for (auto t : store.tasks()) {
      if (t.status == TaskStatus::kRunning) {
        Transaction tx;
        tx.clear_task_results(t.task_id);
        t.status = TaskStatus::kFailed;
        t.message = "interrupted by service restart";
        t.updated_at = utc_timestamp();
        tx.put_task(t);
        store.commit(tx);
      } else if (t.status == TaskStatus::kPending) {
        queue.push_back(t.task_id);
      }
    }
  }

  void executor_loop() {
    for (;;) {
      std::string id;
      {
        std::unique_lock lock(queue_mu);
        queue_cv.wait(lock, [&] { return stopping || !queue.empty(); });
        if (stopping) return;
        id = queue.front();
        queue.pop_front();
        busy = true;
      }
      try {
        const auto task = store.get_task(id);
        run_task(TaskSpec::from_json(task.spec), store, models);
      } catch (const std::exception& e) {
        std::fprintf(stderr, "%s\n",
                     nlohmann::json({{"level", "error"}, {"task_id", id}, {"message", e.what()}}).dump().c_str());
      }
      {
        std::lock_guard lock(queue_mu);
        busy = false;
      }
      queue_cv.notify_all();
    }
  }

  void enqueue(const std::string& id) {
    {
      std::lock_guard lock(queue_mu);
      queue.push_back(id);
    }
    queue_cv.notify_all();
  }

  template <class F>
  httplib::Server::Handler wrap(F f) {
    return [this, f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const HttpError& e) {
        send_json(res, e.error.status, e.error.to_json());
      } catch (const NotFoundError& e) {
        send_json(res, 404, ApiError{404, "NOT_FOUND", e.what()}.to_json());
      } catch (const ParameterError& e) {
        send_json(res, 400, ApiError{400, "INVALID_ARGUMENT", e.what()}.to_json());
      } catch (const ConstraintError& e) {
        send_json(res, 409, ApiError{409, "CONFLICT", e.what()}.to_json());
      } catch (const std::exception& e) {
        send_json(res, 500, ApiError{500, "INTERNAL", e.what()}.to_json());
      }
    };
  }

  std::vector<CountyPolygon> corpus_counties() const {
    const CorpusPaths paths{config.corpus};
    if (config.corpus.empty() || !std::filesystem::exists(paths.counties())) return {};
    return read_counties(paths.counties());
  }

  bool county_known(const std::string& id) const {
    if (store.has_county(id)) return true;
    for (const auto& c : corpus_counties())
      if (c.county_id == id) return true;
    return false;
  }

  std::string fresh_task_id() const {
    for (std::size_t n = store.tasks().size() + 1;; ++n) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "task-%06zu", n);
      if (!store.find_task(buf)) return buf;
    }
  }

  nlohmann::json task_json(const TaskRecord& t) const {
    std::map<std::string, double> stage_progress;
    for (const auto& s : kStages) stage_progress[s] = 0.0;
    std::string stage = "read";
    for (const auto& e : store.events(t.task_id)) {
      stage_progress[e.stage] = std::max(stage_progress[e.stage], e.progress);
      stage = e.stage;
    }
    if (t.status == TaskStatus::kSucceeded)
      for (auto& [s, p] : stage_progress) p = 1.0;
    double progress = 0.0;
    for (const auto& [s, p] : stage_progress) progress += p;
    progress /= static_cast<double>(kStages.size());
    return {{"task_id", t.task_id},       {"status", to_string(t.status)}, {"stage", stage},
            {"progress", progress},       {"stages", stage_progress},      {"message", t.message},
            {"created_at", t.created_at}, {"updated_at", t.updated_at},    {"spec", t.spec}};
  }

  void create_task(const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
      fail(400, "INVALID_JSON", "request body is not valid JSON");
    }
    if (!body.is_object()) fail(400, "INVALID_JSON", "request body must be a JSON object");
    for (const char* forbidden : {"task_id", "corpus"})
      if (body.contains(forbidden)) fail(400, "INVALID_ARGUMENT", std::string(forbidden) + " is assigned by the server");

    const std::string key = req.get_header_value("Idempotency-Key");
    std::lock_guard lock(create_mu);
    if (auto prior = store.find_task_by_idempotency_key(key)) {
      send_json(res, 200, {{"task_id", prior->task_id}});
      return;
    }

    body["task_id"] = "pending";
    body["corpus"] = config.corpus.string();
    if (!body.contains("worker_count")) body["worker_count"] = config.default_workers;
    if (!body.contains("period") || !body["period"].is_string() || !valid_period(body["period"]))
      fail(400, "INVALID_PERIOD", "period must be a string of the form YYYY or YYYY-MM");
    if (!body.contains("region") || !body["region"].is_object() || body["region"].empty())
      fail(400, "INVALID_REGION", "region must hold a bbox or county_ids");
    TaskSpec spec;
    try {
      spec = TaskSpec::from_json(body);
    } catch (const ParameterError& e) {
      fail(400, "INVALID_ARGUMENT", e.what());
    }
    if (spec.bbox && !spec.bbox->valid()) fail(400, "INVALID_REGION", "bbox is invalid");
    if (!spec.bbox && spec.county_ids.empty()) fail(400, "INVALID_REGION", "region is empty");
    try {
      spec.validate();
    } catch (const ParameterError& e) {
      fail(400, "INVALID_ARGUMENT", e.what());
    }
    const auto counties = corpus_counties();
    for (const auto& id : spec.county_ids)
      if (std::none_of(counties.begin(), counties.end(), [&](const CountyPolygon& c) { return c.county_id == id; }))
        fail(400, "INVALID_REGION", "unknown county '" + id + "'");
    if (!models.contains(spec.model)) fail(404, "UNKNOWN_MODEL", "unknown model '" + spec.model + "'");

    spec.task_id = fresh_task_id();
    TaskRecord r;
    r.task_id = spec.task_id;
    r.spec = spec.to_json();
    r.idempotency_key = key;
    store.create_task(r);
    enqueue(spec.task_id);
    send_json(res, 201, {{"task_id", spec.task_id}});
  }

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", config.cors_origin},
                                {"Access-Control-Allow-Headers", "Content-Type, Idempotency-Key"},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty())
        send_json(res, res.status, ApiError{res.status, res.status == 404 ? "NOT_FOUND" : "HTTP_ERROR",
                                            "no route for this request"}
                                       .to_json());
    });

    server.Get("/api/health", wrap([](const httplib::Request&, httplib::Response& res) {
                 send_json(res, 200, {{"status", "ok"}});
               }));

    server.Get("/api/models", wrap([this](const httplib::Request&, httplib::Response& res) {
                 send_json(res, 200, {{"models", models.names()}});
               }));

    server.Post("/api/tasks", wrap([this](const httplib::Request& req, httplib::Response& res) {
                  create_task(req, res);
                }));

    server.Get(R"(/api/tasks/([^/]+))", wrap([this](const httplib::Request& req, httplib::Response& res) {
                 const auto t = store.find_task(req.matches[1]);
                 if (!t) fail(404, "NOT_FOUND", "no task '" + std::string(req.matches[1]) + "'");
                 send_json(res, 200, task_json(*t));
               }));

    server.Get(R"(/api/tasks/([^/]+)/events)", wrap([this](const httplib::Request& req, httplib::Response& res) {
                 const std::string id = req.matches[1];
                 if (!store.find_task(id)) fail(404, "NOT_FOUND", "no task '" + id + "'");
                 std::int64_t after = 0;
                 int wait_ms = 0;
                 try {
                   if (req.has_param("after")) after = std::stoll(req.get_param_value("after"));
                   if (req.has_param("wait_ms")) wait_ms = std::stoi(req.get_param_value("wait_ms"));
                 } catch (const std::exception&) {
                   fail(400, "INVALID_ARGUMENT", "after and wait_ms must be integers");
                 }
                 if (after < 0 || wait_ms < 0) fail(400, "INVALID_ARGUMENT", "after and wait_ms must be >= 0");
                 wait_ms = std::min(wait_ms, config.max_long_poll_ms);
                 const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(wait_ms);
                 auto events = store.events(id, after);
                 while (events.empty() && std::chrono::steady_clock::now() < deadline &&
                        !is_terminal(store.get_task(id).status)) {
                   std::this_thread::sleep_for(std::chrono::milliseconds(20));
                   events = store.events(id, after);
                 }
                 nlohmann::json list = nlohmann::json::array();
                 std::int64_t next = after;
                 for (const auto& e : events) {
                   list.push_back(e.to_json());
                   next = e.seq;
                 }
                 send_json(res, 200,
                           {{"task_id", id}, {"status", to_string(store.get_task(id).status)},
                            {"events", list}, {"next", next}});
               }));

    server.Get("/api/heatmap", wrap([this](const httplib::Request& req, httplib::Response& res) {
                 if (!req.has_param("bbox")) fail(400, "INVALID_BBOX", "bbox is required");
                 const auto v = parse_numbers(req.get_param_value("bbox"));
                 if (v.size() != 4) fail(400, "INVALID_BBOX", "bbox must be min_lat,min_lon,max_lat,max_lon");
                 const BBox bbox{{v[0], v[1]}, {v[2], v[3]}};
                 if (!bbox.valid()) fail(400, "INVALID_BBOX", "bbox corners are out of range or inverted");
                 const std::string period = req.get_param_value("period");
                 if (!valid_period(period)) fail(400, "INVALID_PERIOD", "period must be YYYY or YYYY-MM");
                 nlohmann::json cells = nlohmann::json::array();
                 for (const auto& r : store.query_heatmap(bbox, period)) cells.push_back(cell_json(r));
                 send_json(res, 200, {{"period", period}, {"bbox", v}, {"cells", cells}});
               }));

    server.Get(R"(/api/counties/([^/]+))", wrap([this](const httplib::Request& req, httplib::Response& res) {
                 const std::string id = req.matches[1];
                 const std::string period = req.get_param_value("period");
                 if (!valid_period(period)) fail(400, "INVALID_PERIOD", "period must be YYYY or YYYY-MM");
                 if (!county_known(id)) fail(404, "NOT_FOUND", "unknown county '" + id + "'");
                 const auto row = store.get_county(id, period);
                 if (!row) fail(404, "NO_DATA", "county '" + id + "' has no result for " + period);
                 send_json(res, 200, row->to_json());
               }));

    server.Get(R"(/api/counties/([^/]+)/trend)", wrap([this](const httplib::Request& req, httplib::Response& res) {
                 const std::string id = req.matches[1];
                 const std::string from = req.has_param("from") ? req.get_param_value("from") : "0000";
                 const std::string to = req.has_param("to") ? req.get_param_value("to") : "9999-99";
                 if (!valid_period(from) || !valid_period(to) || from > to)
                   fail(400, "INVALID_PERIOD", "from/to must be YYYY or YYYY-MM with from <= to");
                 if (!county_known(id)) fail(404, "NOT_FOUND", "unknown county '" + id + "'");
                 nlohmann::json series = nlohmann::json::array();
                 // "to" covers the whole year when given as YYYY.
                 const std::string upper = to.size() == 4 ? to + "-99" : to;
                 for (const auto& r : store.query_trend(id, from, upper))
                   series.push_back({{"period", r.period}, {"value", r.value}, {"cell_count", r.cell_count}});
                 send_json(res, 200, {{"county_id", id}, {"from", from}, {"to", to}, {"series", series}});
               }));
  }
};

Service::Service(Store& store, const ModelRegistry& models, ServiceConfig config)
    : impl_(std::make_unique<Impl>(store, models, std::move(config))) {}

Service::~Service() = default;

int Service::start() {
  auto& s = impl_->server;
  if (impl_->config.port == 0) {
    impl_->bound_port = s.bind_to_any_port(impl_->config.host);
  } else {
    impl_->bound_port = s.bind_to_port(impl_->config.host, impl_->config.port) ? impl_->config.port : -1;
  }
  if (impl_->bound_port < 0)
    throw IoError("cannot bind " + impl_->config.host + ":" + std::to_string(impl_->config.port));
  impl_->server_thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->bound_port;
}

void Service::run_until_stopped() {
  if (impl_->server_thread.joinable()) impl_->server_thread.join();
}

void Service::stop() { impl_->server.stop(); }

int Service::port() const { return impl_->bound_port; }

void Service::wait_idle() {
  std::unique_lock lock(impl_->queue_mu);
  impl_->queue_cv.wait(lock, [&] { return impl_->queue.empty() && !impl_->busy; });
}

}  // namespace geoecon
