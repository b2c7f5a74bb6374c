#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "geoecon/align.hpp"
#include "geoecon/checkpoint.hpp"
#include "geoecon/geo.hpp"
#include "geoecon/image.hpp"
#include "geoecon/manifest.hpp"
#include "geoecon/model.hpp"
#include "geoecon/store.hpp"
#include "geoecon/train.hpp"

namespace geoecon {

// A frozen model plus everything needed to turn images into a label-scale score.
struct ScoringModel {
  FusionModel model;
  PreprocessPolicy satellite_policy;
  PreprocessPolicy streetview_policy;
  LabelScaler scaler;

  // Inference preprocessing (no augmentation).
  double score(const Image8& satellite, const Image8& streetview) const;

  Checkpoint to_checkpoint(nlohmann::json extra_meta = {}) const;
  static ScoringModel from_checkpoint(const Checkpoint& ckpt);
};

// Name -> checkpoint directory, with a cache of loaded models.
class ModelRegistry {
 public:
  void add(const std::string& name, const std::filesystem::path& checkpoint_dir);
  bool contains(const std::string& name) const;
  std::vector<std::string> names() const;
  // NotFoundError for unknown names.
  std::shared_ptr<const ScoringModel> load(const std::string& name) const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::filesystem::path> paths_;
  mutable std::map<std::string, std::shared_ptr<const ScoringModel>> cache_;
};

enum class Aggregation { kMean, kMax, kSum };
std::string to_string(Aggregation a);
Aggregation aggregation_from_string(const std::string& s);

struct TaskSpec {
  std::string task_id;
  std::optional<BBox> bbox;             // either a bbox ...
  std::vector<std::string> county_ids;  // ... or a list of counties (or both)
  std::string period;                   // matches ImageRecord::period; "" = untagged corpus
  std::string model = "default";
  int worker_count = 1;
  std::uint64_t seed = 0;
  std::filesystem::path corpus;  // directory in the synth corpus layout
  Aggregation aggregation = Aggregation::kMean;
  std::optional<int> heading = 0;
  double max_distance_km = 5.0;

  void validate() const;  // ParameterError
  nlohmann::json to_json() const;
  static TaskSpec from_json(const nlohmann::json& j);  // ParameterError on bad fields
};

struct CellScore {
  std::string cell;
  GeoPoint center;
  double score = 0.0;
  std::int64_t pair_count = 0;
  friend bool operator==(const CellScore&, const CellScore&) = default;
};

struct CountyScore {
  std::string county_id;
  std::string period;
  double value = 0.0;
  std::int64_t cell_count = 0;
  friend bool operator==(const CountyScore&, const CountyScore&) = default;
};

// (stage, level, message, progress)
using EventSink = std::function<void(const std::string&, const std::string&, const std::string&, double)>;

struct ReadResult {
  std::vector<ImageRecord> satellites;
  std::vector<ImageRecord> streetviews;
  std::vector<CountyPolygon> counties;  // restricted to spec.county_ids when given
  BBox region;
};

struct ScoringPair {
  ImageRecord satellite;
  ImageRecord streetview;
  double distance_km = 0.0;
  std::string cell;
  std::string id() const { return satellite.id + "|" + streetview.id; }
};

struct ScoredPair {
  std::string pair_id;
  std::string cell;
  GeoPoint center;
  double score = 0.0;
};

struct ScoreResult {
  std::vector<ScoredPair> scored;  // sorted by pair_id
  std::vector<std::string> skipped;  // pair ids whose images failed to decode
};

// Effective region: the bbox, the union of the counties' bounds, or their
// intersection when both are given.
BBox task_region(const TaskSpec& spec, const std::vector<CountyPolygon>& all_counties);

ReadResult stage_read(const TaskSpec& spec, const EventSink& sink = {});

// Nearest street view (heading-filtered) within max_distance_km for every
// satellite in the slice; sorted by satellite id.
std::vector<ScoringPair> stage_pair(const ReadResult& read, const TaskSpec& spec,
                                    const EventSink& sink = {});

ScoreResult stage_score(std::span<const ScoringPair> pairs, const ScoringModel& model,
                        int worker_count, const EventSink& sink = {});

// Max score per cell, sorted by cell key.
std::vector<CellScore> stage_reduce_max(std::span<const ScoredPair> scored);

// Cells whose centres fall inside each county (boundary inclusive); counties
// without cells are omitted with a warn event.
std::vector<CountyScore> stage_aggregate(std::span<const CellScore> cells,
                                         std::span<const CountyPolygon> counties,
                                         const std::string& period,
                                         Aggregation aggregation = Aggregation::kMean,
                                         const EventSink& sink = {});

struct RunStats {
  std::size_t pairs = 0;
  std::size_t skipped = 0;
  std::size_t cells = 0;
  std::size_t counties = 0;
  double score_seconds = 0.0;
};

// Creates the task when absent (or re-queues a finished one), runs every
// stage and commits frames, fine rows, county rows and the terminal status
// in one transaction. Stage failures mark the task failed with no results.
TaskRecord run_task(const TaskSpec& spec, Store& store, const ModelRegistry& models,
                    RunStats* stats = nullptr);

}  // namespace geoecon
