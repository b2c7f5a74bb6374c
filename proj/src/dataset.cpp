#include "geoecon/dataset.hpp"

#include <map>
#include <numeric>

#include "geoecon/error.hpp"

namespace geoecon {

PairImages load_pair_images(std::span<const AlignedPair> pairs, const CorpusPaths& corpus, int side) {
  std::map<std::string, ImageRecord> sats, svs;
  for (auto& r : read_manifest(corpus.satellites())) sats.emplace(r.id, std::move(r));
  for (auto& r : read_manifest(corpus.streetviews())) svs.emplace(r.id, std::move(r));
  PairImages out;
  for (const auto& p : pairs) {
    auto s = sats.find(p.sat_id);
    if (s == sats.end()) throw NotFoundError("satellite '" + p.sat_id + "' not in manifest");
    auto v = svs.find(p.sv_id);
    if (v == svs.end()) throw NotFoundError("street view '" + p.sv_id + "' not in manifest");
    out.pairs.push_back(p);
    out.satellite.push_back(resize_bilinear(to_tensor(decode_image(s->second.path)), side, side));
    out.streetview.push_back(resize_bilinear(to_tensor(decode_image(v->second.path)), side, side));
  }
  return out;
}

std::vector<Sample> make_samples(const PairImages& images, std::span<const std::size_t> indices,
                                 const PreprocessPolicy& satellite_policy,
                                 const PreprocessPolicy& streetview_policy) {
  std::vector<Sample> out;
  out.reserve(indices.size());
  for (std::size_t i : indices)
    out.push_back({images.pairs[i].sat_id, z_normalize(images.satellite[i], satellite_policy),
                   z_normalize(images.streetview[i], streetview_policy), images.pairs[i].label});
  return out;
}

nlohmann::json FitOptions::to_json() const {
  return {{"model", model.to_json()}, {"train", train.to_json()}, {"augmentation", augmentation.to_json()}};
}

FitOptions FitOptions::from_json(const nlohmann::json& j) {
  FitOptions o;
  if (j.contains("model")) o.model = ModelConfig::from_json(j["model"]);
  if (j.contains("train")) o.train = TrainConfig::from_json(j["train"]);
  if (j.contains("augmentation")) o.augmentation = PreprocessPolicy::from_json(j["augmentation"]);
  return o;
}

FitResult fit(const PairImages& images, const FitOptions& options, const EpochCallback& on_epoch) {
  options.model.validate();
  const std::size_t n = images.pairs.size();
  if (n < 2) throw ContractError("fit needs at least two pairs");
  const auto [train_idx, val_idx] = split_indices(n, options.train.val_fraction, options.train.seed);

  FitResult result;
  PreprocessPolicy sat_policy, sv_policy;
  sat_policy.target_side = sv_policy.target_side = options.model.image_side;
  {
    std::vector<Tensor> sat, sv;
    for (std::size_t i : train_idx) {
      sat.push_back(images.satellite[i]);
      sv.push_back(images.streetview[i]);
    }
    std::tie(sat_policy.mean, sat_policy.std) = channel_stats(sat);
    std::tie(sv_policy.mean, sv_policy.std) = channel_stats(sv);
  }
  const auto train_set = make_samples(images, train_idx, sat_policy, sv_policy);
  const auto val_set = make_samples(images, val_idx, sat_policy, sv_policy);

  Rng init_rng(options.train.seed);
  FusionModel model = FusionModel::initialize(options.model, init_rng);
  const PreprocessPolicy aug = options.augmentation;
  const bool augmenting = aug.hflip || aug.vflip || aug.rotate90 || aug.crop_fraction < 1.0;
  AugmentFn augment_fn;
  if (augmenting) augment_fn = [aug](const Tensor& img, Rng& rng) { return augment(img, aug, rng); };

  TrainResult trained = train(std::move(model), train_set, val_set, options.train, augment_fn, on_epoch);
  result.model = {std::move(trained.model), sat_policy, sv_policy, trained.scaler};
  result.history = std::move(trained.history);
  for (std::size_t i : train_idx) result.train_ids.push_back(images.pairs[i].sat_id);
  for (std::size_t i : val_idx) result.val_ids.push_back(images.pairs[i].sat_id);
  if (val_idx.size() >= 2) {
    const auto yhat = score_pairs(result.model, images, val_idx);
    std::vector<double> y;
    for (std::size_t i : val_idx) y.push_back(images.pairs[i].label);
    result.val_r2 = r_squared(yhat, y);
  }
  return result;
}

std::vector<double> score_pairs(const ScoringModel& model, const PairImages& images,
                                std::span<const std::size_t> indices) {
  const auto samples = make_samples(images, indices, model.satellite_policy, model.streetview_policy);
  std::vector<double> out = predict_all(model.model, samples);
  for (double& v : out) v = model.scaler.from_standard(v);
  return out;
}

}  // namespace geoecon
