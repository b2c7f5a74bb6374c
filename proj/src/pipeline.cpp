#include "geoecon/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <set>
#include <thread>

#include "geoecon/error.hpp"
#include "geoecon/synth.hpp"

namespace geoecon {

namespace fs = std::filesystem;

double ScoringModel::score(const Image8& satellite, const Image8& streetview) const {
  const double z = predict(model, preprocess(satellite, satellite_policy),
                           preprocess(streetview, streetview_policy));
  return scaler.from_standard(z);
}

Checkpoint ScoringModel::to_checkpoint(nlohmann::json extra_meta) const {
  if (!extra_meta.is_object()) extra_meta = nlohmann::json::object();
  extra_meta["satellite_policy"] = satellite_policy.to_json();
  extra_meta["streetview_policy"] = streetview_policy.to_json();
  extra_meta["label_scaler"] = scaler.to_json();
  return model.to_checkpoint(std::move(extra_meta));
}

ScoringModel ScoringModel::from_checkpoint(const Checkpoint& ckpt) {
  ScoringModel m{FusionModel::from_checkpoint(ckpt), {}, {}, {}};
  const auto& meta = ckpt.meta;
  if (meta.contains("satellite_policy")) m.satellite_policy = PreprocessPolicy::from_json(meta["satellite_policy"]);
  if (meta.contains("streetview_policy")) m.streetview_policy = PreprocessPolicy::from_json(meta["streetview_policy"]);
  if (meta.contains("label_scaler")) m.scaler = LabelScaler::from_json(meta["label_scaler"]);
  m.satellite_policy.target_side = m.model.config.image_side;
  m.streetview_policy.target_side = m.model.config.image_side;
  return m;
}

void ModelRegistry::add(const std::string& name, const fs::path& checkpoint_dir) {
  std::lock_guard lock(mu_);
  paths_[name] = checkpoint_dir;
  cache_.erase(name);
}

bool ModelRegistry::contains(const std::string& name) const {
  std::lock_guard lock(mu_);
  return paths_.count(name) > 0;
}

std::vector<std::string> ModelRegistry::names() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [n, p] : paths_) out.push_back(n);
  return out;
}

std::shared_ptr<const ScoringModel> ModelRegistry::load(const std::string& name) const {
  std::lock_guard lock(mu_);
  auto it = paths_.find(name);
  if (it == paths_.end()) throw NotFoundError("unknown model '" + name + "'");
  auto c = cache_.find(name);
  if (c != cache_.end()) return c->second;
  auto m = std::make_shared<const ScoringModel>(ScoringModel::from_checkpoint(load_checkpoint(it->second)));
  cache_[name] = m;
  return m;
}

std::string to_string(Aggregation a) {
  switch (a) {
    case Aggregation::kMean: return "mean";
    case Aggregation::kMax: return "max";
    case Aggregation::kSum: return "sum";
  }
  return "mean";
}

Aggregation aggregation_from_string(const std::string& s) {
  if (s == "mean") return Aggregation::kMean;
  if (s == "max") return Aggregation::kMax;
  if (s == "sum") return Aggregation::kSum;
  throw ParameterError("aggregation must be mean, max or sum, got '" + s + "'");
}

void TaskSpec::validate() const {
  if (task_id.empty()) throw ParameterError("task_id must be non-empty");
  if (!bbox && county_ids.empty()) throw ParameterError("region must be a bbox or a non-empty county list");
  if (bbox && !bbox->valid()) throw ParameterError("region bbox is invalid");
  if (worker_count < 1) throw ParameterError("worker_count must be >= 1");
  if (model.empty()) throw ParameterError("model must be non-empty");
  if (!(max_distance_km > 0)) throw ParameterError("max_distance_km must be positive");
}

nlohmann::json TaskSpec::to_json() const {
  nlohmann::json region = nlohmann::json::object();
  if (bbox)
    region["bbox"] = nlohmann::json::array({bbox->min.lat, bbox->min.lon, bbox->max.lat, bbox->max.lon});
  if (!county_ids.empty()) region["county_ids"] = county_ids;
  nlohmann::json j = {{"task_id", task_id},
                      {"region", region},
                      {"period", period},
                      {"model", model},
                      {"worker_count", worker_count},
                      {"seed", seed},
                      {"corpus", corpus.string()},
                      {"aggregation", to_string(aggregation)},
                      {"max_distance_km", max_distance_km}};
  j["heading"] = heading ? nlohmann::json(*heading) : nlohmann::json(nullptr);
  return j;
}

TaskSpec TaskSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParameterError("task spec must be a JSON object");
  TaskSpec s;
  try {
    s.task_id = j.value("task_id", "");
    if (!j.contains("region") || !j["region"].is_object()) throw ParameterError("region is required");
    const auto& r = j["region"];
    if (r.contains("bbox")) {
      const auto& b = r["bbox"];
      if (!b.is_array() || b.size() != 4) throw ParameterError("region.bbox must be [min_lat, min_lon, max_lat, max_lon]");
      s.bbox = BBox{{b[0].get<double>(), b[1].get<double>()}, {b[2].get<double>(), b[3].get<double>()}};
    }
    if (r.contains("county_ids")) s.county_ids = r["county_ids"].get<std::vector<std::string>>();
    if (j.contains("period")) {
      if (!j["period"].is_string()) throw ParameterError("period must be a string");
      s.period = j["period"].get<std::string>();
    }
    s.model = j.value("model", std::string("default"));
    s.worker_count = j.value("worker_count", 1);
    s.seed = j.value("seed", std::uint64_t{0});
    s.corpus = j.value("corpus", std::string());
    s.aggregation = aggregation_from_string(j.value("aggregation", std::string("mean")));
    if (j.contains("heading")) s.heading = j["heading"].is_null() ? std::nullopt : std::optional<int>(j["heading"].get<int>());
    s.max_distance_km = j.value("max_distance_km", 5.0);
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("malformed task spec: ") + e.what());
  }
  return s;
}

namespace {

void emit(const EventSink& sink, const std::string& stage, const std::string& level,
          const std::string& message, double progress) {
  if (sink) sink(stage, level, message, progress);
}

BBox bounds_union(const BBox& a, const BBox& b) {
  return {{std::min(a.min.lat, b.min.lat), std::min(a.min.lon, b.min.lon)},
          {std::max(a.max.lat, b.max.lat), std::max(a.max.lon, b.max.lon)}};
}

}  // namespace

BBox task_region(const TaskSpec& spec, const std::vector<CountyPolygon>& all_counties) {
  std::optional<BBox> region = spec.bbox;
  if (!spec.county_ids.empty()) {
    std::optional<BBox> u;
    for (const auto& id : spec.county_ids) {
      auto it = std::find_if(all_counties.begin(), all_counties.end(),
                             [&](const CountyPolygon& c) { return c.county_id == id; });
      if (it == all_counties.end()) throw NotFoundError("unknown county '" + id + "'");
      u = u ? bounds_union(*u, it->bounds()) : it->bounds();
    }
    if (region) {
      region = BBox{{std::max(region->min.lat, u->min.lat), std::max(region->min.lon, u->min.lon)},
                    {std::min(region->max.lat, u->max.lat), std::min(region->max.lon, u->max.lon)}};
    } else {
      region = u;
    }
  }
  return *region;
}

ReadResult stage_read(const TaskSpec& spec, const EventSink& sink) {
  const CorpusPaths paths{spec.corpus};
  for (const auto& p : {paths.satellites(), paths.streetviews(), paths.counties()})
    if (!fs::exists(p)) throw IoError("missing manifest " + p.string());
  emit(sink, "read", "info", "reading manifests from " + spec.corpus.string(), 0.0);

  ReadResult out;
  const auto counties = read_counties(paths.counties());
  out.region = task_region(spec, counties);
  if (spec.county_ids.empty()) {
    out.counties = counties;
  } else {
    for (const auto& c : counties)
      if (std::find(spec.county_ids.begin(), spec.county_ids.end(), c.county_id) != spec.county_ids.end())
        out.counties.push_back(c);
  }
  auto keep = [&](const ImageRecord& r) {
    return out.region.valid() && out.region.contains(r.location) && (r.period.empty() || r.period == spec.period);
  };
  for (auto& r : read_manifest(paths.satellites()))
    if (keep(r)) out.satellites.push_back(std::move(r));
  emit(sink, "read", "info", std::to_string(out.satellites.size()) + " satellite records in region", 0.5);
  // Street views just outside the region can still be a satellite's nearest.
  for (auto& r : read_manifest(paths.streetviews()))
    if (r.period.empty() || r.period == spec.period) out.streetviews.push_back(std::move(r));
  emit(sink, "read", "info", std::to_string(out.streetviews.size()) + " street-view records for period", 1.0);
  return out;
}

std::vector<ScoringPair> stage_pair(const ReadResult& read, const TaskSpec& spec, const EventSink& sink) {
  std::vector<ImageRecord> candidates;
  for (const auto& r : read.streetviews)
    if (!spec.heading || r.heading == spec.heading) candidates.push_back(r);
  std::map<std::string, const ImageRecord*> by_id;
  for (const auto& r : candidates) by_id[r.id] = &r;
  const auto index = SpatialGridIndex::build(candidates);

  std::vector<const ImageRecord*> sats;
  for (const auto& s : read.satellites) sats.push_back(&s);
  std::sort(sats.begin(), sats.end(), [](auto a, auto b) { return a->id < b->id; });

  std::vector<ScoringPair> out;
  std::size_t dropped = 0;
  for (const ImageRecord* s : sats) {
    const auto n = index.nearest(s->location);
    if (!n || n->distance_km > spec.max_distance_km) {
      ++dropped;
      continue;
    }
    out.push_back({*s, *by_id.at(n->sv_id), n->distance_km, latlon_to_tile(s->location, kPairingZoom).key()});
  }
  emit(sink, "score", "info",
       std::to_string(out.size()) + " pairs aligned, " + std::to_string(dropped) + " satellites unpaired", 0.0);
  return out;
}

ScoreResult stage_score(std::span<const ScoringPair> pairs, const ScoringModel& model, int worker_count,
                        const EventSink& sink) {
  if (worker_count < 1) throw ParameterError("worker_count must be >= 1");
  const std::size_t n = pairs.size();
  std::vector<std::optional<double>> scores(n);
  std::vector<std::string> errors(n);
  constexpr std::size_t kChunk = 4;
  std::atomic<std::size_t> next{0};
  std::mutex sink_mu;
  std::size_t done = 0;
  std::size_t next_report = std::max<std::size_t>(1, n / 10);

  auto work = [&] {
    for (;;) {
      const std::size_t begin = next.fetch_add(kChunk);
      if (begin >= n) return;
      const std::size_t end = std::min(n, begin + kChunk);
      for (std::size_t i = begin; i < end; ++i) {
        try {
          scores[i] = model.score(decode_image(pairs[i].satellite.path), decode_image(pairs[i].streetview.path));
        } catch (const DecodeError& e) {
          errors[i] = e.what();
        } catch (const IoError& e) {
          errors[i] = e.what();
        }
      }
      std::lock_guard lock(sink_mu);
      done += end - begin;
      for (std::size_t i = begin; i < end; ++i)
        if (!errors[i].empty()) emit(sink, "score", "warn", "skipped pair " + pairs[i].id() + ": " + errors[i], 
                                     static_cast<double>(done) / static_cast<double>(n));
      if (done >= next_report && done < n) {
        emit(sink, "score", "info", "scored " + std::to_string(done) + "/" + std::to_string(n),
             static_cast<double>(done) / static_cast<double>(n));
        next_report = done + std::max<std::size_t>(1, n / 10);
      }
    }
  };
  const int threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(worker_count), std::max<std::size_t>(n, 1)));
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  ScoreResult out;
  for (std::size_t i = 0; i < n; ++i) {
    if (scores[i]) {
      out.scored.push_back({pairs[i].id(), pairs[i].cell, pairs[i].satellite.location, *scores[i]});
    } else {
      out.skipped.push_back(pairs[i].id());
    }
  }
  std::sort(out.scored.begin(), out.scored.end(),
            [](const ScoredPair& a, const ScoredPair& b) { return a.pair_id < b.pair_id; });
  std::sort(out.skipped.begin(), out.skipped.end());
  emit(sink, "score", "info",
       "scored " + std::to_string(out.scored.size()) + " pairs, skipped " + std::to_string(out.skipped.size()), 1.0);
  return out;
}

std::vector<CellScore> stage_reduce_max(std::span<const ScoredPair> scored) {
  std::map<std::string, CellScore> cells;
  for (const auto& p : scored) {
    auto [it, fresh] = cells.try_emplace(p.cell);
    CellScore& c = it->second;
    if (fresh) {
      const auto tile = TileId::parse(p.cell);
      c.cell = p.cell;
      c.center = tile_center(tile);
      c.score = p.score;
    } else {
      c.score = std::max(c.score, p.score);
    }
    ++c.pair_count;
  }
  std::vector<CellScore> out;
  out.reserve(cells.size());
  for (auto& [k, c] : cells) out.push_back(std::move(c));
  return out;
}

std::vector<CountyScore> stage_aggregate(std::span<const CellScore> cells, std::span<const CountyPolygon> counties,
                                         const std::string& period, Aggregation aggregation,
                                         const EventSink& sink) {
  std::vector<const CountyPolygon*> order;
  for (const auto& c : counties) order.push_back(&c);
  std::sort(order.begin(), order.end(), [](auto a, auto b) { return a->county_id < b->county_id; });
  std::vector<CountyScore> out;
  for (const CountyPolygon* county : order) {
    const BBox b = county->bounds();
    double acc = aggregation == Aggregation::kMax ? -INFINITY : 0.0;
    std::int64_t count = 0;
    for (const auto& cell : cells) {
      if (!b.contains(cell.center) || !point_in_polygon(cell.center, *county)) continue;
      acc = aggregation == Aggregation::kMax ? std::max(acc, cell.score) : acc + cell.score;
      ++count;
    }
    if (count == 0) {
      emit(sink, "aggregate", "warn", "county " + county->county_id + " has no scored cells", 0.0);
      continue;
    }
    if (aggregation == Aggregation::kMean) acc /= static_cast<double>(count);
    out.push_back({county->county_id, period, acc, count});
  }
  emit(sink, "aggregate", "info", std::to_string(out.size()) + " counties aggregated", 1.0);
  return out;
}

TaskRecord run_task(const TaskSpec& spec, Store& store, const ModelRegistry& models, RunStats* stats) {
  spec.validate();
  {
    auto existing = store.find_task(spec.task_id);
    if (!existing) {
      TaskRecord r;
      r.task_id = spec.task_id;
      r.spec = spec.to_json();
      store.create_task(r);
    } else if (is_terminal(existing->status)) {
      existing->status = TaskStatus::kPending;
      existing->spec = spec.to_json();
      existing->message.clear();
      existing->result_tx = 0;
      existing->updated_at = utc_timestamp();
      store.update_task(*existing);
    } else if (existing->status == TaskStatus::kRunning) {
      throw ConstraintError("task '" + spec.task_id + "' is already running");
    }
  }
  TaskRecord task = store.get_task(spec.task_id);
  task.status = TaskStatus::kRunning;
  task.updated_at = utc_timestamp();
  store.update_task(task);

  std::string current_stage = "read";
  double current_progress = 0.0;
  EventSink sink = [&](const std::string& stage, const std::string& level, const std::string& message,
                       double progress) {
    if (stage != current_stage) current_progress = 0.0;
    current_stage = stage;
    current_progress = std::max(current_progress, progress);
    TaskEvent e;
    e.task_id = spec.task_id;
    e.stage = stage;
    e.level = level;
    e.message = message;
    e.progress = progress;
    store.append_event(std::move(e));
  };

  Transaction tx;
  tx.clear_task_results(spec.task_id);
  try {
    auto model = models.load(spec.model);
    ReadResult read = stage_read(spec, sink);
    const auto pairs = stage_pair(read, spec, sink);
    const auto t0 = std::chrono::steady_clock::now();
    ScoreResult scored = stage_score(pairs, *model, spec.worker_count, sink);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto cells = stage_reduce_max(scored.scored);
    sink("reduce", "info", std::to_string(cells.size()) + " cells", 1.0);
    const auto counties = stage_aggregate(cells, read.counties, spec.period, spec.aggregation, sink);

    std::map<std::string, std::int64_t> per_frame;
    std::set<std::string> skipped(scored.skipped.begin(), scored.skipped.end());
    std::map<std::string, bool> frame_ok;
    for (const auto& p : pairs) {
      frame_ok.try_emplace(p.cell, false);
      if (!skipped.count(p.id())) {
        ++per_frame[p.cell];
        frame_ok[p.cell] = true;
      }
    }
    for (const auto& s : read.satellites)
      frame_ok.try_emplace(latlon_to_tile(s.location, kPairingZoom).key(), false);
    for (const auto& [frame, ok] : frame_ok)
      tx.put_frame({spec.task_id, frame, ok ? "scored" : "skipped", per_frame[frame]});
    for (const auto& c : cells)
      tx.put_fine({spec.task_id, c.cell, c.center.lat, c.center.lon, c.score, c.pair_count});
    for (const auto& c : counties) tx.put_county({c.county_id, c.period, c.value, c.cell_count, spec.task_id});
    task.status = TaskStatus::kSucceeded;
    task.updated_at = utc_timestamp();
    tx.put_task(task);
    store.commit(tx);
    if (stats) *stats = {pairs.size(), scored.skipped.size(), cells.size(), counties.size(), secs};
  } catch (const std::exception& e) {
    try {
      sink(current_stage, "error", std::string("task failed: ") + e.what(), current_progress);
    } catch (...) {
    }
    Transaction fail;
    fail.clear_task_results(spec.task_id);
    task.status = TaskStatus::kFailed;
    task.message = e.what();
    task.updated_at = utc_timestamp();
    fail.put_task(task);
    store.commit(fail);
  }
  return store.get_task(spec.task_id);
}

}  // namespace geoecon
