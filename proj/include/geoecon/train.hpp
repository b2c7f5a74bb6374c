#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "geoecon/adam.hpp"
#include "geoecon/model.hpp"

namespace geoecon {

// 1 - sum (yhat - y)^2 / sum (mean(y) - y)^2. Throws ShapeError on length
// mismatch or n < 2 and ContractError when y is constant.
double r_squared(std::span<const double> yhat, std::span<const double> y);

// One preprocessed training example.
struct Sample {
  std::string id;
  Tensor satellite;   // [C x side x side], normalised
  Tensor streetview;  // [C x side x side], normalised
  double label = 0.0;
};

// z-scores labels with statistics of the training split.
struct LabelScaler {
  double mean = 0.0;
  double std = 1.0;

  static LabelScaler fit(std::span<const double> labels);
  double to_standard(double y) const { return (y - mean) / std; }
  double from_standard(double z) const { return z * std + mean; }
  nlohmann::json to_json() const { return {{"mean", mean}, {"std", std}}; }
  static LabelScaler from_json(const nlohmann::json& j);
};

struct TrainConfig {
  int batch_size = 256;
  int epochs = 40;
  double lr = 1e-4;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochStats {
  int epoch = 0;
  double train_mse = 0.0;  // mean batch loss in standardised label space
  double val_r2 = 0.0;
  double val_mse = 0.0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch}, {"train_mse", train_mse}, {"val_r2", val_r2}};
  }
};

// Seeded shuffle of [0, n) split into (train, validation); validation gets
// round(n * val_fraction) items, at least one of each when n >= 2.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, double val_fraction, std::uint64_t seed);

using AugmentFn = std::function<Tensor(const Tensor& image, Rng& rng)>;
using EpochCallback = std::function<void(const EpochStats&)>;

struct TrainResult {
  FusionModel model;
  LabelScaler scaler;
  std::vector<EpochStats> history;
};

// Adam on MSE in standardised label space. Deterministic for a fixed seed.
// Throws ContractError on an empty training set.
TrainResult train(FusionModel model, std::span<const Sample> train_set,
                  std::span<const Sample> val_set, const TrainConfig& config,
                  const AugmentFn& augment = {}, const EpochCallback& on_epoch = {});

// Raw (standardised-space) head outputs, inference mode.
std::vector<double> predict_all(const FusionModel& model, std::span<const Sample> samples);

}  // namespace geoecon
