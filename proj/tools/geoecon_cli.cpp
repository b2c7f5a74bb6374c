// geoecon: corpus generation, alignment, training, batch prediction, serving.
#include <CLI11.hpp>

#include <charconv>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>

#include "geoecon/align.hpp"
#include "geoecon/checkpoint.hpp"
#include "geoecon/dataset.hpp"
#include "geoecon/error.hpp"
#include "geoecon/pipeline.hpp"
#include "geoecon/raster.hpp"
#include "geoecon/service.hpp"
#include "geoecon/store.hpp"
#include "geoecon/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace geoecon;

namespace {

void log_line(const std::string& level, json fields) {
  fields["level"] = level;
  std::cerr << fields.dump() << "\n";
}

std::string shortest(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, end);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

BBox parse_bbox(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(std::stod(item));
  if (v.size() != 4) throw ParameterError("bbox must be min_lat,min_lon,max_lat,max_lon");
  BBox b{{v[0], v[1]}, {v[2], v[3]}};
  if (!b.valid()) throw ParameterError("bbox is invalid");
  return b;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

struct Common {
  std::uint64_t seed = 0;
  bool seed_set = false;
  int workers = 1;
  bool workers_set = false;
  std::string store;
  std::string checkpoint;
  std::string config;

  json config_json() const { return config.empty() ? json::object() : read_json_file(config); }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Seed for every random choice")->each([&c](const std::string&) { c.seed_set = true; });
  app->add_option("--workers", c.workers, "Worker count")->check(CLI::PositiveNumber)->each([&c](const std::string&) {
    c.workers_set = true;
  });
  app->add_option("--store", c.store, "Store directory");
  app->add_option("--checkpoint", c.checkpoint, "Model checkpoint directory")->check(CLI::ExistingDirectory);
  app->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
}

// ---- synth

struct SynthArgs {
  std::string out;
  int pairs = 512;
  bool pairs_set = false;
  std::string periods;
  std::string region;
  bool complementary = false;
};

int run_synth(const Common& c, const SynthArgs& a) {
  const json cfg = c.config_json();
  SynthOptions o = SynthOptions::from_json(cfg.value("synth", json::object()));
  if (c.seed_set) o.seed = c.seed;
  if (a.pairs_set) o.n_pairs = a.pairs;
  if (!a.periods.empty()) o.periods = split_list(a.periods);
  if (!a.region.empty()) o.region = parse_bbox(a.region);
  if (a.complementary) o.complementary = true;
  const auto corpus = synth_corpus(o, a.out);
  log_line("info", {{"event", "synth"},
                    {"out", a.out},
                    {"satellites", corpus.satellites.size()},
                    {"streetviews", corpus.streetviews.size()},
                    {"counties", corpus.counties.size()}});
  return 0;
}

// ---- align

struct AlignArgs {
  std::string corpus;
  std::string out;
  std::string period;
  std::string heading = "0";
  bool heading_set = false;
  double max_distance_km = 5.0;
  double window_km = 5.0;
  bool max_distance_set = false;
  bool window_set = false;
};

int run_align(const Common& c, const AlignArgs& a) {
  const json cfg = c.config_json().value("pairing", json::object());
  PairingOptions opt;
  opt.max_distance_km = a.max_distance_set ? a.max_distance_km : cfg.value("max_distance_km", a.max_distance_km);
  opt.label_window_km = a.window_set ? a.window_km : cfg.value("label_window_km", a.window_km);
  std::string heading = a.heading;
  if (!a.heading_set && cfg.contains("heading"))
    heading = cfg["heading"].is_null() ? "all" : std::to_string(cfg["heading"].get<int>());
  if (heading == "all") {
    opt.heading.reset();
  } else {
    try {
      opt.heading = std::stoi(heading);
    } catch (const std::exception&) {
      throw ParameterError("heading must be an integer or all: " + heading);
    }
  }
  const CorpusPaths paths{a.corpus};
  auto keep = [&](const ImageRecord& r) { return r.period.empty() || r.period == a.period; };
  std::vector<ImageRecord> sats, svs;
  for (auto& r : read_manifest(paths.satellites()))
    if (keep(r)) sats.push_back(std::move(r));
  for (auto& r : read_manifest(paths.streetviews()))
    if (keep(r)) svs.push_back(std::move(r));
  const auto raster = load_nightlight_raster(paths.raster(a.period));
  PairingStats stats;
  const auto pairs = build_pairs(sats, svs, raster, opt, &stats);
  write_pairs(a.out, pairs);
  log_line("info", {{"event", "align"},
                    {"pairs", pairs.size()},
                    {"candidates", stats.candidates},
                    {"dropped_no_streetview", stats.dropped_no_streetview},
                    {"dropped_distance", stats.dropped_distance},
                    {"dropped_empty_window", stats.dropped_empty_window}});
  return 0;
}

// ---- train

struct TrainArgs {
  std::string corpus;
  std::string pairs;
  std::string out;
  int epochs = 0;
  std::string modality;
};

int run_train(const Common& c, const TrainArgs& a) {
  const json cfg = c.config_json();
  FitOptions opt = FitOptions::from_json(cfg);
  if (c.seed_set) opt.train.seed = c.seed;
  if (a.epochs > 0) opt.train.epochs = a.epochs;
  if (!a.modality.empty()) opt.model.modality = modality_from_string(a.modality);
  opt.model.validate();
  const auto pairs = read_pairs(a.pairs);
  const auto images = load_pair_images(pairs, CorpusPaths{a.corpus}, opt.model.image_side);
  log_line("info", {{"event", "train_start"}, {"pairs", pairs.size()}, {"options", opt.to_json()}});
  auto result = fit(images, opt, [](const EpochStats& s) {
    json j = s.to_json();
    j["event"] = "epoch";
    log_line("info", j);
  });
  json history = json::array();
  for (const auto& s : result.history) history.push_back(s.to_json());
  const json meta = {{"fit_options", opt.to_json()},
                     {"train_ids", result.train_ids},
                     {"val_ids", result.val_ids},
                     {"val_r2", result.val_r2},
                     {"history", history}};
  save_checkpoint(a.out, result.model.to_checkpoint(meta));
  write_json_file(fs::path(a.out) / "history.json", history);
  log_line("info", {{"event", "train_done"}, {"checkpoint", a.out}, {"val_r2", result.val_r2}});
  return 0;
}

// ---- eval

struct EvalArgs {
  std::string corpus;
  std::string pairs;
  std::string predictions;
  std::string subset = "val";
  std::string write_predictions;
};

int run_eval(const Common& c, const EvalArgs& a) {
  const auto pairs = read_pairs(a.pairs);
  std::vector<double> yhat, y;
  if (!a.predictions.empty()) {
    std::map<std::string, double> pred;
    std::ifstream in(a.predictions);
    if (!in) throw IoError("cannot read " + a.predictions);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      pred[j.at("sat_id").get<std::string>()] = j.at("prediction").get<double>();
    }
    for (const auto& p : pairs) {
      auto it = pred.find(p.sat_id);
      if (it == pred.end()) throw NotFoundError("no prediction for " + p.sat_id);
      yhat.push_back(it->second);
      y.push_back(p.label);
    }
  } else {
    if (c.checkpoint.empty()) throw ParameterError("eval needs --checkpoint or --predictions");
    if (a.corpus.empty()) throw ParameterError("eval with --checkpoint needs --corpus");
    const auto ckpt = load_checkpoint(c.checkpoint);
    const auto model = ScoringModel::from_checkpoint(ckpt);
    std::set<std::string> wanted;
    if (a.subset == "val" || a.subset == "train") {
      const auto key = a.subset == "val" ? "val_ids" : "train_ids";
      if (!ckpt.meta.contains(key)) throw ParameterError("checkpoint records no " + std::string(key));
      for (const auto& id : ckpt.meta[key]) wanted.insert(id.get<std::string>());
    } else if (a.subset != "all") {
      throw ParameterError("--subset must be val, train or all");
    }
    std::vector<AlignedPair> chosen;
    for (const auto& p : pairs)
      if (wanted.empty() || wanted.count(p.sat_id)) chosen.push_back(p);
    const auto images = load_pair_images(chosen, CorpusPaths{a.corpus}, model.model.config.image_side);
    std::vector<std::size_t> idx(chosen.size());
    std::iota(idx.begin(), idx.end(), 0);
    yhat = score_pairs(model, images, idx);
    for (const auto& p : chosen) y.push_back(p.label);
    if (!a.write_predictions.empty()) {
      std::ofstream out(a.write_predictions);
      for (std::size_t i = 0; i < chosen.size(); ++i)
        out << json{{"sat_id", chosen[i].sat_id}, {"label", y[i]}, {"prediction", yhat[i]}}.dump() << "\n";
    }
  }
  const double r2 = r_squared(yhat, y);
  std::cout << "r2=" << shortest(r2) << "\n";
  log_line("info", {{"event", "eval"}, {"n", y.size()}, {"r2", r2}});
  return 0;
}

// ---- predict

struct PredictArgs {
  std::string spec;
  std::string corpus;
  std::string bbox;
  std::string counties;
  std::string period;
  std::string task_id = "task-cli";
  std::string aggregation;
};

int run_predict(const Common& c, const PredictArgs& a) {
  if (c.store.empty()) throw ParameterError("predict needs --store");
  if (c.checkpoint.empty()) throw ParameterError("predict needs --checkpoint");
  json j = a.spec.empty() ? json::object() : read_json_file(a.spec);
  if (!a.task_id.empty() && (a.spec.empty() || !j.contains("task_id"))) j["task_id"] = a.task_id;
  if (!a.corpus.empty()) j["corpus"] = a.corpus;
  if (!a.period.empty()) j["period"] = a.period;
  if (!a.aggregation.empty()) j["aggregation"] = a.aggregation;
  if (!a.bbox.empty() || !a.counties.empty()) {
    json region = json::object();
    if (!a.bbox.empty()) {
      const BBox b = parse_bbox(a.bbox);
      region["bbox"] = {b.min.lat, b.min.lon, b.max.lat, b.max.lon};
    }
    if (!a.counties.empty()) region["county_ids"] = split_list(a.counties);
    j["region"] = region;
  }
  if (c.workers_set) j["worker_count"] = c.workers;
  if (c.seed_set) j["seed"] = c.seed;
  TaskSpec spec = TaskSpec::from_json(j);
  spec.validate();
  ModelRegistry models;
  models.add(spec.model, c.checkpoint);
  auto store = Store::open(c.store);
  RunStats stats;
  const TaskRecord t = run_task(spec, *store, models, &stats);
  json out = t.to_json();
  out["stats"] = {{"pairs", stats.pairs}, {"skipped", stats.skipped}, {"cells", stats.cells},
                  {"counties", stats.counties}, {"score_seconds", stats.score_seconds}};
  std::cout << out.dump() << "\n";
  if (t.status != TaskStatus::kSucceeded) {
    log_line("error", {{"code", "TASK_FAILED"}, {"message", t.message}});
    return 1;
  }
  return 0;
}

// ---- serve

struct ServeArgs {
  std::string corpus;
  std::string host = "127.0.0.1";
  int port = 8080;
  bool host_set = false;
  bool port_set = false;
};

Service* g_service = nullptr;

int run_serve(const Common& c, const ServeArgs& a) {
  if (c.store.empty()) throw ParameterError("serve needs --store");
  const json cfg = c.config_json().value("service", json::object());
  ModelRegistry models;
  if (!c.checkpoint.empty()) models.add("default", c.checkpoint);
  const json extra = cfg.value("models", json::object());
  for (const auto& item : extra.items()) models.add(item.key(), item.value().get<std::string>());
  ServiceConfig sc;
  // Flags and environment win over the config file.
  sc.host = a.host_set ? a.host : cfg.value("host", a.host);
  sc.port = a.port_set ? a.port : cfg.value("port", a.port);
  sc.corpus = a.corpus.empty() ? cfg.value("corpus", std::string()) : a.corpus;
  sc.default_workers = c.workers_set ? c.workers : cfg.value("default_workers", c.workers);
  sc.cors_origin = cfg.value("cors_origin", sc.cors_origin);
  auto store = Store::open(c.store);
  Service service(*store, models, sc);
  g_service = &service;
  std::signal(SIGINT, [](int) {
    if (g_service) g_service->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_service) g_service->stop();
  });
  const int port = service.start();
  log_line("info", {{"event", "serve"}, {"host", sc.host}, {"port", port}, {"store", c.store}});
  service.run_until_stopped();
  g_service = nullptr;
  return 0;
}

std::string error_code(const std::exception& e) {
  if (auto* ge = dynamic_cast<const Error*>(&e)) return ge->code();
  return "RUNTIME";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geoecon: multimodal economic-activity estimation from satellite and street-view imagery"};
  app.require_subcommand(1);
  Common common;

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
  add_common(synth, common);
  synth->add_option("--out", synth_args.out, "Output directory")->required();
  synth->add_option("--pairs", synth_args.pairs, "Number of satellite tiles")->each([&](const std::string&) {
    synth_args.pairs_set = true;
  });
  synth->add_option("--periods", synth_args.periods, "Comma-separated period labels, e.g. 2019,2020");
  synth->add_option("--region", synth_args.region, "min_lat,min_lon,max_lat,max_lon");
  synth->add_flag("--complementary", synth_args.complementary, "Street views carry an independent signal");

  AlignArgs align_args;
  auto* align = app.add_subcommand("align", "Pair satellites with street views and attach labels");
  add_common(align, common);
  align->add_option("--corpus", align_args.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  align->add_option("--out", align_args.out, "Output pair file (JSON lines)")->required();
  align->add_option("--period", align_args.period, "Period label of a multi-period corpus");
  align->add_option("--heading", align_args.heading, "Street-view heading (0, 90, 180, 270 or all)");
  align->add_option("--max-distance-km", align_args.max_distance_km, "Maximum pair distance");
  align->add_option("--window-km", align_args.window_km, "Label window side");

  TrainArgs train_args;
  auto* trn = app.add_subcommand("train", "Fit the fusion model and write a checkpoint");
  add_common(trn, common);
  trn->add_option("--corpus", train_args.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  trn->add_option("--pairs", train_args.pairs, "Pair file from align")->required()->check(CLI::ExistingFile);
  trn->add_option("--out", train_args.out, "Checkpoint directory")->required();
  trn->add_option("--epochs", train_args.epochs, "Override the configured epoch count");
  trn->add_option("--modality", train_args.modality, "fusion, satellite_only or streetview_only");

  EvalArgs eval_args;
  auto* evl = app.add_subcommand("eval", "Compute R^2 on a labelled pair file");
  add_common(evl, common);
  evl->add_option("--pairs", eval_args.pairs, "Labelled pair file")->required()->check(CLI::ExistingFile);
  evl->add_option("--corpus", eval_args.corpus, "Corpus directory (with --checkpoint)")->check(CLI::ExistingDirectory);
  evl->add_option("--predictions", eval_args.predictions, "JSON lines of {sat_id, prediction}")->check(CLI::ExistingFile);
  evl->add_option("--subset", eval_args.subset, "val, train or all (with --checkpoint)");
  evl->add_option("--write-predictions", eval_args.write_predictions, "Write per-pair predictions here");

  PredictArgs predict_args;
  auto* pred = app.add_subcommand("predict", "Run a scoring task headlessly into a store");
  add_common(pred, common);
  pred->add_option("--spec", predict_args.spec, "TaskSpec JSON file")->check(CLI::ExistingFile);
  pred->add_option("--corpus", predict_args.corpus, "Corpus directory")->check(CLI::ExistingDirectory);
  pred->add_option("--bbox", predict_args.bbox, "min_lat,min_lon,max_lat,max_lon");
  pred->add_option("--counties", predict_args.counties, "Comma-separated county ids");
  pred->add_option("--period", predict_args.period, "Period label");
  pred->add_option("--task-id", predict_args.task_id, "Task id");
  pred->add_option("--aggregation", predict_args.aggregation, "mean, max or sum");

  ServeArgs serve_args;
  auto* srv = app.add_subcommand("serve", "Start the REST service");
  add_common(srv, common);
  srv->add_option("--corpus", serve_args.corpus, "Corpus directory tasks run against")->check(CLI::ExistingDirectory);
  srv->add_option("--host", serve_args.host, "Listen address")->envname("GEOECON_HOST");
  srv->add_option("--port", serve_args.port, "Listen port (0 picks a free one)")->envname("GEOECON_PORT");
  srv->get_option("--store")->envname("GEOECON_STORE");
  srv->get_option("--checkpoint")->envname("GEOECON_CHECKPOINT");
  srv->get_option("--workers")->envname("GEOECON_WORKERS");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    log_line("error", {{"code", "USAGE"}, {"message", e.what()}});
    return 2;
  }

  align_args.heading_set = align->count("--heading") > 0;
  align_args.max_distance_set = align->count("--max-distance-km") > 0;
  align_args.window_set = align->count("--window-km") > 0;
  serve_args.host_set = srv->count("--host") > 0;
  serve_args.port_set = srv->count("--port") > 0;
  if (srv->parsed() && srv->count("--workers") > 0) common.workers_set = true;

  try {
    if (synth->parsed()) return run_synth(common, synth_args);
    if (align->parsed()) return run_align(common, align_args);
    if (trn->parsed()) return run_train(common, train_args);
    if (evl->parsed()) return run_eval(common, eval_args);
    if (pred->parsed()) return run_predict(common, predict_args);
    if (srv->parsed()) return run_serve(common, serve_args);
  } catch (const ParameterError& e) {
    log_line("error", {{"code", "USAGE"}, {"message", e.what()}});
    return 2;
  } catch (const std::exception& e) {
    log_line("error", {{"code", error_code(e)}, {"message", e.what()}});
    return 1;
  }
  return 2;
}
