#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include <json.hpp>

#include "geoecon/pipeline.hpp"
#include "geoecon/store.hpp"

namespace geoecon {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path corpus;  // corpus tasks run against
  int default_workers = 1;
  std::string cors_origin = "*";
  int max_long_poll_ms = 30000;
};

struct ApiError {
  int status = 500;
  std::string code;
  std::string message;
  nlohmann::json to_json() const { return {{"status", status}, {"code", code}, {"message", message}}; }
};

// REST front end over a store and a model registry. Tasks run one at a time
// on a background executor.
class Service {
 public:
  Service(Store& store, const ModelRegistry& models, ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds and serves on a background thread; returns the bound port.
  int start();
  // Blocks until stop() is called.
  void run_until_stopped();
  void stop();
  int port() const;

  // Blocks until the executor queue is empty and no task is running.
  void wait_idle();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace geoecon
