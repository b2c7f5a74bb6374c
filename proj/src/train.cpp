#include "geoecon/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "geoecon/error.hpp"
#include "geoecon/ops.hpp"

namespace geoecon {

double r_squared(std::span<const double> yhat, std::span<const double> y) {
  if (yhat.size() != y.size())
    throw ShapeError("r_squared: " + std::to_string(yhat.size()) + " predictions vs " +
                     std::to_string(y.size()) + " targets");
  if (y.size() < 2) throw ShapeError("r_squared needs at least two points");
  const double ybar = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_res += (yhat[i] - y[i]) * (yhat[i] - y[i]);
    ss_tot += (ybar - y[i]) * (ybar - y[i]);
  }
  if (ss_tot == 0.0) throw ContractError("r_squared undefined for constant targets");
  return 1.0 - ss_res / ss_tot;
}

LabelScaler LabelScaler::fit(std::span<const double> labels) {
  LabelScaler s;
  if (labels.empty()) return s;
  const double n = static_cast<double>(labels.size());
  s.mean = std::accumulate(labels.begin(), labels.end(), 0.0) / n;
  double var = 0.0;
  for (double v : labels) var += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(var / n);
  if (!(s.std > 1e-12)) s.std = 1.0;
  return s;
}

LabelScaler LabelScaler::from_json(const nlohmann::json& j) {
  LabelScaler s;
  s.mean = j.at("mean").get<double>();
  s.std = j.at("std").get<double>();
  if (!(s.std > 0.0)) throw FormatError("label scaler std must be positive");
  return s;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"epochs", epochs},
          {"lr", lr},
          {"val_fraction", val_fraction},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.seed = j.value("seed", c.seed);
  if (c.batch_size < 1 || c.epochs < 1 || !(c.lr > 0.0) ||
      !(c.val_fraction >= 0.0 && c.val_fraction < 1.0))
    throw ParameterError("invalid training config " + j.dump());
  return c;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_fraction));
  if (n >= 2 && val_fraction > 0.0) n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  std::vector<std::size_t> val(idx.end() - static_cast<std::ptrdiff_t>(n_val), idx.end());
  idx.resize(n - n_val);
  return {idx, val};
}

std::vector<double> predict_all(const FusionModel& model, std::span<const Sample> samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(predict(model, s.satellite, s.streetview));
  return out;
}

TrainResult train(FusionModel model, std::span<const Sample> train_set,
                  std::span<const Sample> val_set, const TrainConfig& config,
                  const AugmentFn& augment, const EpochCallback& on_epoch) {
  if (train_set.empty()) throw ContractError("train: empty training set");
  if (config.batch_size < 1 || config.epochs < 1)
    throw ParameterError("train: batch_size and epochs must be >= 1");

  TrainResult result;
  {
    std::vector<double> labels;
    for (const auto& s : train_set) labels.push_back(s.label);
    result.scaler = LabelScaler::fit(labels);
  }

  AdamState adam;
  adam.config.lr = config.lr;
  auto params = model.parameters();
  std::vector<Tensor*> param_ptrs;
  for (auto& [name, t] : params) param_ptrs.push_back(t);

  Rng rng(config.seed);
  Rng shuffle_rng = rng.fork(1);
  Rng dropout_rng = rng.fork(2);
  Rng augment_rng = rng.fork(3);

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      Tape tape;
      ForwardContext ctx(tape, true, &dropout_rng);
      std::vector<Var> preds;
      std::vector<double> targets;
      for (std::size_t k = start; k < end; ++k) {
        const Sample& s = train_set[order[k]];
        if (augment) {
          Tensor sat = augment(s.satellite, augment_rng);
          Tensor sv = augment(s.streetview, augment_rng);
          preds.push_back(forward(ctx, model, sat, sv));
        } else {
          preds.push_back(forward(ctx, model, s.satellite, s.streetview));
        }
        targets.push_back(result.scaler.to_standard(s.label));
      }
      const std::size_t b = targets.size();
      Var yhat = preds.size() == 1 ? preds.front() : ops::concat_rows(preds);
      Var y = tape.constant(Tensor({b, 1}, std::move(targets)));
      Var loss = ops::mse(yhat, y);
      tape.backward(loss);

      std::vector<Tensor> grads;
      grads.reserve(params.size());
      for (auto& [name, t] : params) grads.push_back(ctx.grad(*t));
      std::vector<const Tensor*> grad_ptrs;
      for (const auto& g : grads) grad_ptrs.push_back(&g);
      adam_step(param_ptrs, grad_ptrs, adam);

      loss_sum += loss.value().item();
      ++batches;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_mse = loss_sum / static_cast<double>(batches);
    if (val_set.size() >= 2) {
      std::vector<double> yhat = predict_all(model, val_set);
      std::vector<double> y;
      for (const auto& s : val_set) y.push_back(result.scaler.to_standard(s.label));
      double se = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) se += (yhat[i] - y[i]) * (yhat[i] - y[i]);
      stats.val_mse = se / static_cast<double>(y.size());
      try {
        stats.val_r2 = r_squared(yhat, y);
      } catch (const ContractError&) {
        stats.val_r2 = std::nan("");
      }
    }
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  result.model = std::move(model);
  return result;
}

}  // namespace geoecon
