#include "geoecon/model.hpp"

#include <cmath>

#include "geoecon/error.hpp"
#include "geoecon/ops.hpp"

namespace geoecon {

std::string to_string(Modality m) {
  switch (m) {
    case Modality::kFusion: return "fusion";
    case Modality::kSatelliteOnly: return "satellite_only";
    case Modality::kStreetViewOnly: return "streetview_only";
  }
  return "fusion";
}

Modality modality_from_string(const std::string& s) {
  if (s == "fusion") return Modality::kFusion;
  if (s == "satellite_only") return Modality::kSatelliteOnly;
  if (s == "streetview_only") return Modality::kStreetViewOnly;
  throw ParameterError("unknown modality '" + s + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ParameterError("model config: " + m); };
  if (image_side <= 0 || patch_side <= 0) fail("image_side and patch_side must be positive");
  if (image_side % patch_side != 0) fail("image_side must be divisible by patch_side");
  if (hidden_dim <= 0 || num_heads <= 0) fail("hidden_dim and num_heads must be positive");
  if (hidden_dim % num_heads != 0) fail("hidden_dim must be divisible by num_heads");
  if (channels <= 0 || num_encoder_layers < 0 || mlp_ratio <= 0 || head_hidden <= 0)
    fail("channels, mlp_ratio and head_hidden must be positive");
  if (fusion_rounds < 1) fail("fusion_rounds must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must be in [0, 1)");
  if (!(ln_eps > 0.0)) fail("ln_eps must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"image_side", image_side},   {"patch_side", patch_side},
          {"channels", channels},       {"hidden_dim", hidden_dim},
          {"num_encoder_layers", num_encoder_layers},
          {"num_heads", num_heads},     {"mlp_ratio", mlp_ratio},
          {"head_hidden", head_hidden}, {"dropout_rate", dropout_rate},
          {"fusion_rounds", fusion_rounds},
          {"ln_eps", ln_eps},           {"modality", to_string(modality)}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.image_side = j.value("image_side", c.image_side);
  c.patch_side = j.value("patch_side", c.patch_side);
  c.channels = j.value("channels", c.channels);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.num_encoder_layers = j.value("num_encoder_layers", c.num_encoder_layers);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.head_hidden = j.value("head_hidden", c.head_hidden);
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  c.fusion_rounds = j.value("fusion_rounds", c.fusion_rounds);
  c.ln_eps = j.value("ln_eps", c.ln_eps);
  c.modality = modality_from_string(j.value("modality", to_string(c.modality)));
  c.validate();
  return c;
}

namespace {

Tensor trunc_normal(Shape shape, double std, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.vec()) {
    double z;
    do z = rng.normal();
    while (std::abs(z) > 2.0);
    v = z * std;
  }
  return t;
}

LinearParams make_linear(std::size_t in, std::size_t out, Rng* rng) {
  LinearParams p;
  p.w = rng ? trunc_normal({in, out}, 0.02, *rng) : Tensor({in, out}, 0.0);
  p.b = Tensor({out}, 0.0);
  return p;
}

NormParams make_norm(std::size_t d) { return {Tensor({d}, 1.0), Tensor({d}, 0.0)}; }

AttentionParams make_attention(std::size_t d, Rng* rng) {
  return {make_linear(d, d, rng), make_linear(d, d, rng), make_linear(d, d, rng),
          make_linear(d, d, rng)};
}

BranchParams make_branch(const ModelConfig& c, Rng* rng) {
  const auto d = static_cast<std::size_t>(c.hidden_dim);
  BranchParams b;
  b.patch_norm = make_norm(c.patch_dim());
  b.patch_proj = make_linear(c.patch_dim(), d, rng);
  b.cls = rng ? trunc_normal({1, d}, 0.02, *rng) : Tensor({1, d}, 0.0);
  b.pos = Tensor({c.seq_len(), d}, 0.0);
  for (int i = 0; i < c.num_encoder_layers; ++i) {
    EncoderLayerParams l;
    l.ln1 = make_norm(d);
    l.attn = make_attention(d, rng);
    l.ln2 = make_norm(d);
    l.fc1 = make_linear(d, d * static_cast<std::size_t>(c.mlp_ratio), rng);
    l.fc2 = make_linear(d * static_cast<std::size_t>(c.mlp_ratio), d, rng);
    b.layers.push_back(std::move(l));
  }
  return b;
}

FusionModel make_model(const ModelConfig& config, Rng* rng) {
  config.validate();
  FusionModel m;
  m.config = config;
  const auto d = static_cast<std::size_t>(config.hidden_dim);
  m.satellite = make_branch(config, rng);
  m.streetview = make_branch(config, rng);
  for (int r = 0; r < config.fusion_rounds; ++r) {
    m.fuse_satellite.push_back(make_attention(d, rng));
    m.fuse_streetview.push_back(make_attention(d, rng));
  }
  m.head.fc1 = make_linear(d, static_cast<std::size_t>(config.head_hidden), rng);
  m.head.fc2 = make_linear(static_cast<std::size_t>(config.head_hidden), 1, rng);
  return m;
}

template <class Self, class Out>
void collect(Self& m, Out& out) {
  auto lin = [&](const std::string& n, auto& l) {
    out.emplace_back(n + ".w", &l.w);
    out.emplace_back(n + ".b", &l.b);
  };
  auto norm = [&](const std::string& n, auto& p) {
    out.emplace_back(n + ".gamma", &p.gamma);
    out.emplace_back(n + ".beta", &p.beta);
  };
  auto attn = [&](const std::string& n, auto& a) {
    lin(n + ".q", a.q);
    lin(n + ".k", a.k);
    lin(n + ".v", a.v);
    lin(n + ".o", a.o);
  };
  auto branch = [&](const std::string& n, auto& b) {
    norm(n + ".patch_norm", b.patch_norm);
    lin(n + ".patch_proj", b.patch_proj);
    out.emplace_back(n + ".cls", &b.cls);
    out.emplace_back(n + ".pos", &b.pos);
    for (std::size_t i = 0; i < b.layers.size(); ++i) {
      const std::string p = n + ".layers." + std::to_string(i);
      norm(p + ".ln1", b.layers[i].ln1);
      attn(p + ".attn", b.layers[i].attn);
      norm(p + ".ln2", b.layers[i].ln2);
      lin(p + ".fc1", b.layers[i].fc1);
      lin(p + ".fc2", b.layers[i].fc2);
    }
  };
  branch("satellite", m.satellite);
  branch("streetview", m.streetview);
  for (std::size_t r = 0; r < m.fuse_satellite.size(); ++r) {
    attn("fuse." + std::to_string(r) + ".satellite", m.fuse_satellite[r]);
    attn("fuse." + std::to_string(r) + ".streetview", m.fuse_streetview[r]);
  }
  lin("head.fc1", m.head.fc1);
  lin("head.fc2", m.head.fc2);
}

}  // namespace

FusionModel FusionModel::initialize(const ModelConfig& config, Rng& rng) {
  return make_model(config, &rng);
}

FusionModel FusionModel::zeros(const ModelConfig& config) { return make_model(config, nullptr); }

std::vector<std::pair<std::string, Tensor*>> FusionModel::parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  collect(*this, out);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> FusionModel::parameters() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  collect(*this, out);
  return out;
}

std::size_t FusionModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : parameters()) n += t->size();
  return n;
}

Checkpoint FusionModel::to_checkpoint(nlohmann::json extra_meta) const {
  Checkpoint ckpt;
  ckpt.meta = extra_meta.is_object() ? std::move(extra_meta) : nlohmann::json::object();
  ckpt.meta["model_config"] = config.to_json();
  for (const auto& [name, t] : parameters()) ckpt.params.emplace_back(name, *t);
  return ckpt;
}

FusionModel FusionModel::from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("model_config")) throw FormatError("checkpoint lacks model_config");
  FusionModel m = zeros(ModelConfig::from_json(ckpt.meta.at("model_config")));
  auto params = m.parameters();
  if (params.size() != ckpt.params.size())
    throw FormatError("checkpoint has " + std::to_string(ckpt.params.size()) +
                      " parameters, config implies " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, stored] = ckpt.params[i];
    if (name != params[i].first || stored.shape() != params[i].second->shape())
      throw FormatError("checkpoint parameter '" + name + "' does not match model layout");
    *params[i].second = stored;
  }
  return m;
}

ForwardContext::ForwardContext(Tape& tape, bool training, Rng* rng, AttentionProbe* probe)
    : tape_(&tape), training_(training), rng_(rng), probe_(probe) {
  if (training_ && !rng_) throw ContractError("training-mode forward needs an Rng");
}

Var ForwardContext::bind(const Tensor& param) {
  auto it = bound_.find(&param);
  if (it != bound_.end()) return it->second;
  Var v = tape_->param(param, true);
  bound_.emplace(&param, v);
  return v;
}

Tensor ForwardContext::grad(const Tensor& param) const {
  auto it = bound_.find(&param);
  if (it == bound_.end()) return Tensor(param.shape(), 0.0);
  return tape_->grad(it->second);
}

Tensor extract_patches(const Tensor& image, int patch_side) {
  if (image.rank() != 3 || image.dim(1) != image.dim(2))
    throw ShapeError("expected a square [C x H x W] image, got " + shape_str(image.shape()));
  const std::size_t c = image.dim(0), side = image.dim(1);
  const auto ps = static_cast<std::size_t>(patch_side);
  if (ps == 0 || side % ps != 0)
    throw ShapeError("image side " + std::to_string(side) + " not divisible by patch " +
                     std::to_string(ps));
  const std::size_t g = side / ps;
  Tensor out({g * g, ps * ps * c});
  std::size_t k = 0;
  for (std::size_t gy = 0; gy < g; ++gy)
    for (std::size_t gx = 0; gx < g; ++gx)
      for (std::size_t py = 0; py < ps; ++py)
        for (std::size_t px = 0; px < ps; ++px)
          for (std::size_t ch = 0; ch < c; ++ch)
            out[k++] = image[(ch * side + gy * ps + py) * side + gx * ps + px];
  return out;
}

namespace {

Var lin(ForwardContext& ctx, const Var& x, const LinearParams& p) {
  return ops::linear(x, ctx.bind(p.w), ctx.bind(p.b));
}

Var norm(ForwardContext& ctx, const Var& x, const NormParams& p, double eps) {
  return ops::layer_norm(x, ctx.bind(p.gamma), ctx.bind(p.beta), eps);
}

Var maybe_dropout(ForwardContext& ctx, const Var& x, double rate) {
  if (!ctx.training() || rate == 0.0) return x;
  return ops::apply_mask(x, ops::dropout_mask(x.shape(), rate, *ctx.rng()));
}

}  // namespace

Var patch_embed(ForwardContext& ctx, const Tensor& image, const BranchParams& branch,
                const ModelConfig& config) {
  const auto side = static_cast<std::size_t>(config.image_side);
  if (image.shape() != Shape{static_cast<std::size_t>(config.channels), side, side})
    throw ShapeError("patch_embed: expected image [" + std::to_string(config.channels) + "x" +
                     std::to_string(side) + "x" + std::to_string(side) + "], got " +
                     shape_str(image.shape()));
  Tape& tape = ctx.tape();
  Var patches = tape.constant(extract_patches(image, config.patch_side));
  Var tokens = lin(ctx, norm(ctx, patches, branch.patch_norm, config.ln_eps), branch.patch_proj);
  Var seq = ops::concat_rows({ctx.bind(branch.cls), tokens});
  return ops::add(seq, ctx.bind(branch.pos));
}

Var multi_head_attention(ForwardContext& ctx, const Var& query_seq, const Var& kv_seq,
                         const AttentionParams& p, const ModelConfig& config) {
  const auto d = static_cast<std::size_t>(config.hidden_dim);
  if (query_seq.shape().size() != 2 || kv_seq.shape().size() != 2 || query_seq.shape()[1] != d ||
      kv_seq.shape()[1] != d)
    throw ShapeError("attention: expected [n x " + std::to_string(d) + "] sequences, got " +
                     shape_str(query_seq.shape()) + " and " + shape_str(kv_seq.shape()));
  const std::size_t hd = config.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  Var q = lin(ctx, query_seq, p.q);
  Var k = lin(ctx, kv_seq, p.k);
  Var v = lin(ctx, kv_seq, p.v);
  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(config.num_heads));
  for (int h = 0; h < config.num_heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * hd;
    Var scores = ops::scale(ops::matmul_nt(ops::slice_cols(q, off, hd), ops::slice_cols(k, off, hd)),
                            inv_sqrt);
    Var weights = ops::softmax_rows(scores);
    if (ctx.probe()) ctx.probe()->distributions.push_back(weights.value());
    weights = maybe_dropout(ctx, weights, config.dropout_rate);
    heads.push_back(ops::matmul(weights, ops::slice_cols(v, off, hd)));
  }
  Var merged = heads.size() == 1 ? heads.front() : ops::concat_cols(heads);
  return lin(ctx, merged, p.o);
}

Var cross_attention(ForwardContext& ctx, const Var& query_seq, const Var& kv_seq,
                    const AttentionParams& p, const ModelConfig& config) {
  return ops::add(query_seq, multi_head_attention(ctx, query_seq, kv_seq, p, config));
}

Var self_attention(ForwardContext& ctx, const Var& seq, const AttentionParams& p,
                   const ModelConfig& config) {
  return cross_attention(ctx, seq, seq, p, config);
}

Var encoder_layer(ForwardContext& ctx, const Var& seq, const EncoderLayerParams& layer,
                  const ModelConfig& config) {
  Var h = norm(ctx, seq, layer.ln1, config.ln_eps);
  Var s = ops::add(seq, multi_head_attention(ctx, h, h, layer.attn, config));
  Var m = lin(ctx, ops::gelu(lin(ctx, norm(ctx, s, layer.ln2, config.ln_eps), layer.fc1)), layer.fc2);
  return ops::add(s, maybe_dropout(ctx, m, config.dropout_rate));
}

Var vit_encode(ForwardContext& ctx, const Tensor& image, const BranchParams& branch,
               const ModelConfig& config) {
  Var s = patch_embed(ctx, image, branch, config);
  for (const auto& layer : branch.layers) s = encoder_layer(ctx, s, layer, config);
  return s;
}

Var fuse(ForwardContext& ctx, const Var& satellite_repr, const Var& streetview_repr,
         const FusionModel& model) {
  if (satellite_repr.shape() != streetview_repr.shape())
    throw ShapeError("fuse: branch shapes differ " + shape_str(satellite_repr.shape()) + " vs " +
                     shape_str(streetview_repr.shape()));
  Var sat = satellite_repr;
  Var sv = streetview_repr;
  for (std::size_t r = 0; r < model.fuse_satellite.size(); ++r) {
    sat = cross_attention(ctx, sat, sv, model.fuse_satellite[r], model.config);
    sv = cross_attention(ctx, sv, sat, model.fuse_streetview[r], model.config);
  }
  return sv;
}

Var fitting_head(ForwardContext& ctx, const Var& fused, const HeadParams& head) {
  Var cls = ops::slice_rows(fused, 0, 1);
  return lin(ctx, ops::relu(lin(ctx, cls, head.fc1)), head.fc2);
}

Var forward(ForwardContext& ctx, const FusionModel& model, const Tensor& satellite_image,
            const Tensor& streetview_image) {
  const ModelConfig& c = model.config;
  switch (c.modality) {
    case Modality::kSatelliteOnly:
      return fitting_head(ctx, vit_encode(ctx, satellite_image, model.satellite, c), model.head);
    case Modality::kStreetViewOnly:
      return fitting_head(ctx, vit_encode(ctx, streetview_image, model.streetview, c), model.head);
    case Modality::kFusion:
      break;
  }
  Var sat = vit_encode(ctx, satellite_image, model.satellite, c);
  Var sv = vit_encode(ctx, streetview_image, model.streetview, c);
  return fitting_head(ctx, fuse(ctx, sat, sv, model), model.head);
}

double predict(const FusionModel& model, const Tensor& satellite_image,
               const Tensor& streetview_image) {
  Tape tape(false);
  ForwardContext ctx(tape);
  return forward(ctx, model, satellite_image, streetview_image).value().item();
}

}  // namespace geoecon
