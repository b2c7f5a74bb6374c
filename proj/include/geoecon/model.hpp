#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "geoecon/checkpoint.hpp"
#include "geoecon/tape.hpp"
#include "geoecon/tensor.hpp"

namespace geoecon {

// Which inputs feed the fitting head. Single-branch variants exist for the
// multimodal-vs-unimodal comparison.
enum class Modality { kFusion, kSatelliteOnly, kStreetViewOnly };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

struct ModelConfig {
  int image_side = 224;
  int patch_side = 32;
  int channels = 3;
  int hidden_dim = 256;
  int num_encoder_layers = 2;
  int num_heads = 8;
  int mlp_ratio = 4;
  int head_hidden = 64;
  double dropout_rate = 0.2;
  int fusion_rounds = 1;  // one round = satellite attends street view, then the reverse
  double ln_eps = 1e-5;
  Modality modality = Modality::kFusion;

  std::size_t grid() const { return static_cast<std::size_t>(image_side / patch_side); }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t seq_len() const { return num_patches() + 1; }
  std::size_t patch_dim() const {
    return static_cast<std::size_t>(patch_side * patch_side * channels);
  }
  std::size_t head_dim() const { return static_cast<std::size_t>(hidden_dim / num_heads); }

  void validate() const;  // throws ParameterError
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

struct LinearParams {
  Tensor w;  // [in x out]
  Tensor b;  // [out]
};

struct NormParams {
  Tensor gamma;
  Tensor beta;
};

struct AttentionParams {
  LinearParams q, k, v, o;
};

struct EncoderLayerParams {
  NormParams ln1;
  AttentionParams attn;
  NormParams ln2;
  LinearParams fc1;  // hidden -> mlp_ratio * hidden
  LinearParams fc2;
};

struct BranchParams {
  NormParams patch_norm;
  LinearParams patch_proj;
  Tensor cls;  // [1 x hidden]
  Tensor pos;  // [seq_len x hidden]
  std::vector<EncoderLayerParams> layers;
};

struct HeadParams {
  LinearParams fc1;  // hidden -> head_hidden
  LinearParams fc2;  // head_hidden -> 1
};

class FusionModel {
 public:
  ModelConfig config;
  BranchParams satellite;
  BranchParams streetview;
  std::vector<AttentionParams> fuse_satellite;   // satellite queries, street-view keys/values
  std::vector<AttentionParams> fuse_streetview;  // street-view queries, fused-satellite keys/values
  HeadParams head;

  // Truncated-normal(0.02) projections and CLS token, zero biases and
  // positional embeddings, unit LayerNorm scales.
  static FusionModel initialize(const ModelConfig& config, Rng& rng);
  // Every parameter zero except LayerNorm gammas (one).
  static FusionModel zeros(const ModelConfig& config);

  std::vector<std::pair<std::string, Tensor*>> parameters();
  std::vector<std::pair<std::string, const Tensor*>> parameters() const;
  std::size_t parameter_count() const;

  Checkpoint to_checkpoint(nlohmann::json extra_meta = {}) const;
  static FusionModel from_checkpoint(const Checkpoint& ckpt);
};

// Collects every attention distribution computed during a forward pass.
struct AttentionProbe {
  std::vector<Tensor> distributions;  // one [queries x keys] matrix per head
};

// Binds parameters to a tape once per forward/backward unit so each tensor
// has a single leaf node that accumulates its gradient.
class ForwardContext {
 public:
  ForwardContext(Tape& tape, bool training = false, Rng* rng = nullptr,
                 AttentionProbe* probe = nullptr);

  Tape& tape() const { return *tape_; }
  bool training() const { return training_; }
  Rng* rng() const { return rng_; }
  AttentionProbe* probe() const { return probe_; }

  Var bind(const Tensor& param);
  // Gradient of the last backward() for a bound parameter; zeros if unbound.
  Tensor grad(const Tensor& param) const;

 private:
  Tape* tape_;
  bool training_;
  Rng* rng_;
  AttentionProbe* probe_;
  std::unordered_map<const Tensor*, Var> bound_;
};

// Image [channels x side x side] to patches [P x patch_side*patch_side*channels];
// each patch is flattened in (row, col, channel) order.
Tensor extract_patches(const Tensor& image, int patch_side);

Var patch_embed(ForwardContext& ctx, const Tensor& image, const BranchParams& branch,
                const ModelConfig& config);

// Multi-head attention without residual: softmax(QK^T / sqrt(head_dim)) V,
// heads concatenated then projected by `o`.
Var multi_head_attention(ForwardContext& ctx, const Var& query_seq, const Var& kv_seq,
                         const AttentionParams& p, const ModelConfig& config);

// query_seq + MHA(query_seq, kv_seq).
Var cross_attention(ForwardContext& ctx, const Var& query_seq, const Var& kv_seq,
                    const AttentionParams& p, const ModelConfig& config);
Var self_attention(ForwardContext& ctx, const Var& seq, const AttentionParams& p,
                   const ModelConfig& config);

Var encoder_layer(ForwardContext& ctx, const Var& seq, const EncoderLayerParams& layer,
                  const ModelConfig& config);

Var vit_encode(ForwardContext& ctx, const Tensor& image, const BranchParams& branch,
               const ModelConfig& config);

// Alternating fusion; returns the street-view sequence after it has attended
// to the satellite sequence that already attended to it.
Var fuse(ForwardContext& ctx, const Var& satellite_repr, const Var& streetview_repr,
         const FusionModel& model);

// CLS row -> Linear -> ReLU -> Linear -> [1 x 1].
Var fitting_head(ForwardContext& ctx, const Var& fused, const HeadParams& head);

Var forward(ForwardContext& ctx, const FusionModel& model, const Tensor& satellite_image,
            const Tensor& streetview_image);

// Inference-mode score (no dropout, no tape recording).
double predict(const FusionModel& model, const Tensor& satellite_image,
               const Tensor& streetview_image);

}  // namespace geoecon
