#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "geoecon/align.hpp"
#include "geoecon/pipeline.hpp"
#include "geoecon/synth.hpp"
#include "geoecon/train.hpp"

namespace geoecon {

// Decoded pair images resized to a square side, pixel values in [0, 255].
struct PairImages {
  std::vector<AlignedPair> pairs;
  std::vector<Tensor> satellite;
  std::vector<Tensor> streetview;
};

// Resolves pair ids against the corpus manifests. Throws NotFoundError for
// ids missing from the manifests.
PairImages load_pair_images(std::span<const AlignedPair> pairs, const CorpusPaths& corpus, int side);

std::vector<Sample> make_samples(const PairImages& images, std::span<const std::size_t> indices,
                                 const PreprocessPolicy& satellite_policy,
                                 const PreprocessPolicy& streetview_policy);

struct FitOptions {
  ModelConfig model;
  TrainConfig train;
  // Augmentation switches (applied identically to both branches).
  PreprocessPolicy augmentation;

  nlohmann::json to_json() const;
  static FitOptions from_json(const nlohmann::json& j);
};

struct FitResult {
  ScoringModel model;
  std::vector<EpochStats> history;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  double val_r2 = 0.0;  // on label-scale predictions
};

// Seeded split, channel statistics from the training split, Adam training.
FitResult fit(const PairImages& images, const FitOptions& options, const EpochCallback& on_epoch = {});

// Label-scale scores for the selected pairs.
std::vector<double> score_pairs(const ScoringModel& model, const PairImages& images,
                                std::span<const std::size_t> indices);

}  // namespace geoecon
