#include <doctest.h>

#include <cmath>

#include "geoecon/error.hpp"
#include "geoecon/model.hpp"
#include "geoecon/ops.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace geoecon;
using testsupport::check_gradients;
using testsupport::project;
using testsupport::random_tensor;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.image_side = 8;
  c.patch_side = 4;
  c.hidden_dim = 8;
  c.num_heads = 2;
  c.num_encoder_layers = 1;
  c.mlp_ratio = 2;
  c.head_hidden = 4;
  c.dropout_rate = 0.2;
  return c;
}

// Random non-trivial values everywhere so no gradient path is dead.
FusionModel randomized(const ModelConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  FusionModel m = FusionModel::initialize(c, rng);
  for (auto& [name, t] : m.parameters())
    for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] += rng.normal() * 0.3;
  return m;
}

std::vector<std::pair<std::string, Tensor*>> params_with_prefix(FusionModel& m, const std::string& prefix) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& p : m.parameters())
    if (p.first.rfind(prefix, 0) == 0) out.push_back(p);
  return out;
}

constexpr double kTol = 1e-4;

}  // namespace

TEST_CASE("reference configuration shapes") {
  const ModelConfig c;  // 224 / 32 / 256 / 8 heads
  CHECK(c.num_patches() == 49);
  CHECK(c.patch_dim() == 3072);
  CHECK(c.seq_len() == 50);
  Rng rng(1);
  FusionModel m = FusionModel::initialize(c, rng);
  const Tensor sat = random_tensor({3, 224, 224}, rng);
  const Tensor sv = random_tensor({3, 224, 224}, rng);
  CHECK(extract_patches(sat, 32).shape() == Shape{49, 3072});

  Tape tape(false);
  AttentionProbe probe;
  ForwardContext ctx(tape, false, nullptr, &probe);
  const Var rs = vit_encode(ctx, sat, m.satellite, c);
  const Var rv = vit_encode(ctx, sv, m.streetview, c);
  CHECK(rs.shape() == Shape{50, 256});
  CHECK(rv.shape() == Shape{50, 256});
  const Var fused = fuse(ctx, rs, rv, m);
  CHECK(fused.shape() == Shape{50, 256});
  const Var y = fitting_head(ctx, fused, m.head);
  CHECK(y.value().size() == 1);
  REQUIRE_FALSE(probe.distributions.empty());
  for (const auto& d : probe.distributions)
    for (std::size_t r = 0; r < d.rows(); ++r) {
      double s = 0;
      for (std::size_t col = 0; col < d.cols(); ++col) {
        CHECK(d.at(r, col) >= 0.0);
        s += d.at(r, col);
      }
      CHECK(std::abs(s - 1.0) <= 1e-9);
    }
}

TEST_CASE("patch extraction order is row, column, channel") {
  Tensor img({3, 4, 4});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) img[(c * 4 + y) * 4 + x] = 100.0 * c + 10.0 * y + x;
  const Tensor p = extract_patches(img, 2);
  CHECK(p.shape() == Shape{4, 12});
  // Patch 1 is the top-right block; its first pixel is (y=0, x=2).
  CHECK(p.at(1, 0) == 2.0);
  CHECK(p.at(1, 1) == 102.0);
  CHECK(p.at(1, 2) == 202.0);
  CHECK(p.at(1, 3) == 3.0);
  CHECK(p.at(2, 0) == 20.0);
  CHECK_THROWS(extract_patches(img, 3));
}

TEST_CASE("zeroed output projection makes fusion an identity on the street view") {
  const ModelConfig c = tiny_config();
  FusionModel m = randomized(c, 3);
  for (auto& a : m.fuse_streetview) {
    a.o.w.fill(0.0);
    a.o.b.fill(0.0);
  }
  Rng rng(4);
  Tape tape(false);
  ForwardContext ctx(tape);
  const Var r1 = tape.constant(random_tensor({c.seq_len(), 8}, rng));
  const Var r2 = tape.constant(random_tensor({c.seq_len(), 8}, rng));
  CHECK(fuse(ctx, r1, r2, m).value() == r2.value());
}

TEST_CASE("cross attention of a sequence with itself is self-attention") {
  const ModelConfig c = tiny_config();
  FusionModel m = randomized(c, 5);
  Rng rng(6);
  Tape tape(false);
  ForwardContext ctx(tape);
  const Var s = tape.constant(random_tensor({c.seq_len(), 8}, rng));
  const auto& p = m.fuse_satellite[0];
  CHECK(cross_attention(ctx, s, s, p, c).value() == self_attention(ctx, s, p, c).value());
  // Written out: s + MHA(s, s).
  const Tensor manual = ops::add(s, multi_head_attention(ctx, s, s, p, c)).value();
  CHECK(cross_attention(ctx, s, s, p, c).value() == manual);
}

TEST_CASE("layer gradients match central differences") {
  const ModelConfig c = tiny_config();
  for (std::uint64_t trial = 0; trial < 3; ++trial) {
    FusionModel m = randomized(c, 100 + trial);
    Rng rng(200 + trial);
    const std::size_t L = c.seq_len(), d = 8;
    Tensor img = random_tensor({3, 8, 8}, rng);
    Tensor seq_a = random_tensor({L, d}, rng);
    Tensor seq_b = random_tensor({L, d}, rng);
    const Tensor w_seq = random_tensor({L, d}, rng);
    const Tensor w_head = random_tensor({1, 1}, rng);

    SUBCASE("patch_embed") {
      auto targets = params_with_prefix(m, "satellite.patch");
      targets.emplace_back("cls", &m.satellite.cls);
      targets.emplace_back("pos", &m.satellite.pos);
      const auto r = check_gradients(targets, [&](ForwardContext& ctx) {
        return project(ctx, patch_embed(ctx, img, m.satellite, c), w_seq);
      });
      INFO(r.worst);
      CHECK(r.max_rel_err <= kTol);
    }
    SUBCASE("multi_head_attention") {
      auto targets = params_with_prefix(m, "fuse.0.satellite");
      targets.emplace_back("q_in", &seq_a);
      targets.emplace_back("kv_in", &seq_b);
      const auto r = check_gradients(targets, [&](ForwardContext& ctx) {
        return project(ctx, multi_head_attention(ctx, ctx.bind(seq_a), ctx.bind(seq_b), m.fuse_satellite[0], c), w_seq);
      });
      INFO(r.worst);
      CHECK(r.max_rel_err <= kTol);
    }
    SUBCASE("cross_attention") {
      auto targets = params_with_prefix(m, "fuse.0.streetview");
      targets.emplace_back("q_in", &seq_a);
      targets.emplace_back("kv_in", &seq_b);
      const auto r = check_gradients(targets, [&](ForwardContext& ctx) {
        return project(ctx, cross_attention(ctx, ctx.bind(seq_a), ctx.bind(seq_b), m.fuse_streetview[0], c), w_seq);
      });
      INFO(r.worst);
      CHECK(r.max_rel_err <= kTol);
    }
    SUBCASE("encoder_layer") {
      auto targets = params_with_prefix(m, "streetview.layers.0");
      targets.emplace_back("x", &seq_a);
      const auto r = check_gradients(targets, [&](ForwardContext& ctx) {
        return project(ctx, encoder_layer(ctx, ctx.bind(seq_a), m.streetview.layers[0], c), w_seq);
      });
      INFO(r.worst);
      CHECK(r.max_rel_err <= kTol);
    }
    SUBCASE("vit_encode") {
      auto targets = params_with_prefix(m, "satellite.");
      const auto r = check_gradients(targets, [&](ForwardContext& ctx) {
        return project(ctx, vit_encode(ctx, img, m.satellite, c), w_seq);
      });
      INFO(r.worst);
      CHECK(r.max_rel_err <= kTol);
    }
    SUBCASE("fuse") {
      auto targets = params_with_prefix(m, "fuse.");
      targets.emplace_back("sat", &seq_a);
      targets.emplace_back("sv", &seq_b);
      const auto r = check_gradients(targets, [&](ForwardContext& ctx) {
        return project(ctx, fuse(ctx, ctx.bind(seq_a), ctx.bind(seq_b), m), w_seq);
      });
      INFO(r.worst);
      CHECK(r.max_rel_err <= kTol);
    }
    SUBCASE("fitting_head") {
      auto targets = params_with_prefix(m, "head.");
      targets.emplace_back("fused", &seq_a);
      const auto r = check_gradients(targets, [&](ForwardContext& ctx) {
        return project(ctx, fitting_head(ctx, ctx.bind(seq_a), m.head), w_head);
      });
      INFO(r.worst);
      CHECK(r.max_rel_err <= kTol);
    }
  }
}

TEST_CASE("full model gradients match central differences") {
  const ModelConfig c = tiny_config();
  FusionModel m = randomized(c, 7);
  Rng rng(8);
  const Tensor sat = random_tensor({3, 8, 8}, rng);
  const Tensor sv = random_tensor({3, 8, 8}, rng);
  const Tensor target = Tensor::matrix(1, 1, {0.3});
  auto loss = [&](ForwardContext& ctx) { return ops::mse(forward(ctx, m, sat, sv), ctx.tape().constant(target)); };
  const auto eval_mode = check_gradients(m.parameters(), loss);
  INFO(eval_mode.worst);
  CHECK(eval_mode.max_rel_err <= kTol);
  const auto train_mode = check_gradients(m.parameters(), loss, 1e-5, 99);
  INFO(train_mode.worst);
  CHECK(train_mode.max_rel_err <= kTol);
}

TEST_CASE("inference is deterministic and dropout only acts in training") {
  const ModelConfig c = tiny_config();
  FusionModel m = randomized(c, 9);
  Rng rng(10);
  const Tensor sat = random_tensor({3, 8, 8}, rng);
  const Tensor sv = random_tensor({3, 8, 8}, rng);
  CHECK(predict(m, sat, sv) == predict(m, sat, sv));
  Tape t1, t2;
  Rng r1(1), r2(2);
  ForwardContext train1(t1, true, &r1), train2(t2, true, &r2);
  CHECK(forward(train1, m, sat, sv).value().item() != forward(train2, m, sat, sv).value().item());
  Tape t3;
  ForwardContext no_train(t3, false);
  CHECK(forward(no_train, m, sat, sv).value().item() == predict(m, sat, sv));
}

TEST_CASE("modalities route through the expected branches") {
  ModelConfig c = tiny_config();
  FusionModel m = randomized(c, 11);
  Rng rng(12);
  const Tensor sat = random_tensor({3, 8, 8}, rng);
  const Tensor sv = random_tensor({3, 8, 8}, rng);
  const Tensor other = random_tensor({3, 8, 8}, rng);
  m.config.modality = Modality::kSatelliteOnly;
  CHECK(predict(m, sat, sv) == predict(m, sat, other));
  m.config.modality = Modality::kStreetViewOnly;
  CHECK(predict(m, sat, sv) == predict(m, other, sv));
  m.config.modality = Modality::kFusion;
  CHECK(predict(m, sat, sv) != predict(m, sat, other));
  CHECK(modality_from_string(to_string(Modality::kStreetViewOnly)) == Modality::kStreetViewOnly);
}

TEST_CASE("config validation") {
  ModelConfig c = tiny_config();
  c.patch_side = 3;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = tiny_config();
  c.num_heads = 3;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = tiny_config();
  CHECK(ModelConfig::from_json(c.to_json()).to_json() == c.to_json());
}

TEST_CASE("initialisation") {
  const ModelConfig c = tiny_config();
  Rng rng(13);
  const FusionModel m = FusionModel::initialize(c, rng);
  for (double v : m.satellite.pos.data()) CHECK(v == 0.0);
  for (double v : m.satellite.patch_proj.b.data()) CHECK(v == 0.0);
  for (double v : m.satellite.patch_norm.gamma.data()) CHECK(v == 1.0);
  bool cls_nonzero = false;
  for (double v : m.satellite.cls.data()) {
    CHECK(std::abs(v) <= 0.04 + 1e-12);
    cls_nonzero = cls_nonzero || v != 0.0;
  }
  CHECK(cls_nonzero);
  for (double v : m.head.fc1.w.data()) CHECK(std::abs(v) <= 0.04 + 1e-12);
}

TEST_CASE("model checkpoint round trip preserves predictions") {
  testsupport::TempDir dir("model");
  const ModelConfig c = tiny_config();
  const FusionModel m = randomized(c, 14);
  save_checkpoint(dir / "ck", m.to_checkpoint());
  const FusionModel back = FusionModel::from_checkpoint(load_checkpoint(dir / "ck"));
  Rng rng(15);
  const Tensor sat = random_tensor({3, 8, 8}, rng);
  const Tensor sv = random_tensor({3, 8, 8}, rng);
  CHECK(predict(back, sat, sv) == predict(m, sat, sv));
  CHECK(back.parameter_count() == m.parameter_count());
}
