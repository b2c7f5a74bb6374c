// Acceptance harness: one PASS/FAIL line per criterion.
//   geoecon_acceptance                       run every criterion
//   geoecon_acceptance --criterion <name>    run one
//   geoecon_acceptance --list                print the names
// Exit status is 0 only when every selected criterion passes.

#include <httplib.h>

#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <spawn.h>
#include <string>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>
#include <vector>

#include "geoecon/align.hpp"
#include "geoecon/dataset.hpp"
#include "geoecon/error.hpp"
#include "geoecon/geo.hpp"
#include "geoecon/image.hpp"
#include "geoecon/manifest.hpp"
#include "geoecon/ops.hpp"
#include "geoecon/pipeline.hpp"
#include "geoecon/raster.hpp"
#include "geoecon/store.hpp"
#include "geoecon/synth.hpp"
#include "geoecon/train.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace geoecon;
using testsupport::TempDir;
namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

// Thrown by expect(); the message becomes the FAIL detail.
struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void expect(bool ok, const std::string& what) {
  if (!ok) throw Failure(what);
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<std::pair<std::string, Tensor*>> with_prefix(FusionModel& m, const std::string& prefix) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& p : m.parameters())
    if (p.first.rfind(prefix, 0) == 0) out.push_back(p);
  return out;
}

FusionModel perturbed(const ModelConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  FusionModel m = FusionModel::initialize(c, rng);
  for (auto& [name, t] : m.parameters())
    for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] += rng.normal() * 0.3;
  return m;
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.image_side = 16;
  c.patch_side = 8;
  c.hidden_dim = 8;
  c.num_heads = 2;
  c.num_encoder_layers = 1;
  return c;
}

ModelConfig desk_model() {
  ModelConfig c;
  c.image_side = 64;
  c.patch_side = 16;
  c.hidden_dim = 64;
  c.num_encoder_layers = 2;
  c.num_heads = 4;
  return c;
}

// Random-weight checkpoint for pipeline and service runs.
void save_random_checkpoint(const fs::path& dir, const ModelConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  ScoringModel m{FusionModel::initialize(c, rng), {}, {}, {3.0, 1.5}};
  m.satellite_policy.target_side = m.streetview_policy.target_side = c.image_side;
  save_checkpoint(dir, m.to_checkpoint());
}

// ---- CLI runner

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

CliRun cli(const std::vector<std::string>& args, const fs::path& scratch) {
  static int n = 0;
  const fs::path out = scratch / ("cli-" + std::to_string(n) + ".out");
  const fs::path err = scratch / ("cli-" + std::to_string(n++) + ".err");
  std::string cmd = quote(testsupport::cli_path().string());
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " >" + quote(out.string()) + " 2>" + quote(err.string());
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = testsupport::read_file(out);
  r.err = testsupport::read_file(err);
  return r;
}

CliRun cli_ok(const std::vector<std::string>& args, const fs::path& scratch) {
  CliRun r = cli(args, scratch);
  if (r.code != 0) throw Failure("geoecon " + args.at(0) + " exited " + std::to_string(r.code) + ": " + r.err);
  return r;
}

double parse_r2(const CliRun& r) {
  if (r.out.rfind("r2=", 0) != 0) throw Failure("eval printed '" + r.out + "'");
  return std::stod(r.out.substr(3));
}

// ---- criteria

struct Outcome {
  bool pass;
  std::string detail;
};

Outcome gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_where;
  std::size_t checked = 0;
  auto record = [&](const std::string& name, const testsupport::GradReport& r) {
    checked += r.checked;
    if (r.max_rel_err > worst) worst = r.max_rel_err, worst_where = name + " " + r.worst;
  };

  // Primitives.
  using Op = std::function<Var(const std::vector<Var>&)>;
  Rng mask_rng(9);
  const Tensor mask = ops::dropout_mask({3, 4}, 0.3, mask_rng);
  const std::vector<std::tuple<std::string, std::vector<Shape>, Shape, Op, double>> prims{
      {"matmul", {{3, 4}, {4, 5}}, {3, 5}, [](auto& v) { return ops::matmul(v[0], v[1]); }, 1.0},
      {"matmul_nt", {{3, 4}, {5, 4}}, {3, 5}, [](auto& v) { return ops::matmul_nt(v[0], v[1]); }, 1.0},
      {"add_bias", {{3, 4}, {4}}, {3, 4}, [](auto& v) { return ops::add_bias(v[0], v[1]); }, 1.0},
      {"relu", {{3, 4}}, {3, 4}, [](auto& v) { return ops::relu(v[0]); }, 1.0},
      {"gelu", {{3, 4}}, {3, 4}, [](auto& v) { return ops::gelu(v[0]); }, 1.0},
      {"softmax_rows", {{3, 6}}, {3, 6}, [](auto& v) { return ops::softmax_rows(v[0]); }, 2.0},
      {"layer_norm", {{3, 6}, {6}, {6}}, {3, 6}, [](auto& v) { return ops::layer_norm(v[0], v[1], v[2]); }, 1.0},
      {"concat_cols", {{3, 2}, {3, 4}}, {3, 6}, [](auto& v) { return ops::concat_cols({v[0], v[1]}); }, 1.0},
      {"mse", {{4, 1}, {4, 1}}, {1}, [](auto& v) { return ops::mse(v[0], v[1]); }, 1.0},
      {"apply_mask", {{3, 4}}, {3, 4}, [&](auto& v) { return ops::apply_mask(v[0], mask); }, 1.0}};
  for (const auto& [name, shapes, out_shape, op, scale] : prims) {
    Rng rng(std::hash<std::string>{}(name));
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<Tensor> inputs;
      for (const auto& s : shapes) inputs.push_back(testsupport::random_tensor(s, rng, scale));
      const Tensor w = testsupport::random_tensor(out_shape, rng);
      std::vector<std::pair<std::string, Tensor*>> targets;
      for (std::size_t i = 0; i < inputs.size(); ++i) targets.emplace_back("in" + std::to_string(i), &inputs[i]);
      record(name, testsupport::check_gradients(targets, [&](ForwardContext& ctx) {
               std::vector<Var> vars;
               for (auto& t : inputs) vars.push_back(ctx.bind(t));
               return testsupport::project(ctx, op(vars), w);
             }));
    }
  }

  // Layers.
  const ModelConfig c = tiny_model();
  FusionModel m = perturbed(c, 100);
  Rng rng(200);
  const std::size_t L = c.seq_len(), d = static_cast<std::size_t>(c.hidden_dim);
  const auto side = static_cast<std::size_t>(c.image_side);
  Tensor img = testsupport::random_tensor({3, side, side}, rng);
  Tensor img2 = testsupport::random_tensor({3, side, side}, rng);
  Tensor a = testsupport::random_tensor({L, d}, rng);
  Tensor b = testsupport::random_tensor({L, d}, rng);
  const Tensor w_seq = testsupport::random_tensor({L, d}, rng);
  const Tensor w_head = testsupport::random_tensor({1, 1}, rng);
  auto targets_plus = [&](const std::string& prefix, std::vector<std::pair<std::string, Tensor*>> extra) {
    auto t = with_prefix(m, prefix);
    t.insert(t.end(), extra.begin(), extra.end());
    return t;
  };
  using testsupport::check_gradients;
  using testsupport::project;
  record("patch_embed", check_gradients(targets_plus("satellite.patch", {{"cls", &m.satellite.cls}, {"pos", &m.satellite.pos}}),
                                        [&](ForwardContext& ctx) { return project(ctx, patch_embed(ctx, img, m.satellite, c), w_seq); }));
  record("multi_head_attention",
         check_gradients(targets_plus("fuse.0.satellite", {{"q", &a}, {"kv", &b}}), [&](ForwardContext& ctx) {
           return project(ctx, multi_head_attention(ctx, ctx.bind(a), ctx.bind(b), m.fuse_satellite[0], c), w_seq);
         }));
  record("cross_attention",
         check_gradients(targets_plus("fuse.0.streetview", {{"q", &a}, {"kv", &b}}), [&](ForwardContext& ctx) {
           return project(ctx, cross_attention(ctx, ctx.bind(a), ctx.bind(b), m.fuse_streetview[0], c), w_seq);
         }));
  record("encoder_layer", check_gradients(targets_plus("streetview.layers.0", {{"x", &a}}), [&](ForwardContext& ctx) {
           return project(ctx, encoder_layer(ctx, ctx.bind(a), m.streetview.layers[0], c), w_seq);
         }));
  record("vit_encode", check_gradients(with_prefix(m, "satellite."), [&](ForwardContext& ctx) {
           return project(ctx, vit_encode(ctx, img, m.satellite, c), w_seq);
         }));
  record("fuse", check_gradients(targets_plus("fuse.", {{"sat", &a}, {"sv", &b}}), [&](ForwardContext& ctx) {
           return project(ctx, fuse(ctx, ctx.bind(a), ctx.bind(b), m), w_seq);
         }));
  record("fitting_head", check_gradients(targets_plus("head.", {{"fused", &a}}), [&](ForwardContext& ctx) {
           return project(ctx, fitting_head(ctx, ctx.bind(a), m.head), w_head);
         }));

  // Full model, inference and dropout modes.
  const Tensor target = Tensor::matrix(1, 1, {0.3});
  auto loss = [&](ForwardContext& ctx) { return ops::mse(forward(ctx, m, img, img2), ctx.tape().constant(target)); };
  record("model", check_gradients(m.parameters(), loss));
  record("model(dropout)", check_gradients(m.parameters(), loss, 1e-5, 99));

  const double secs = seconds_since(t0);
  const bool ok = worst <= 1e-4 && secs < 60.0;
  return {ok, "max_rel_err=" + fmt(worst, 3) + " over " + std::to_string(checked) + " entries in " + fmt(secs, 3) +
                  " s" + (worst > 1e-4 ? " worst: " + worst_where : "")};
}

Outcome shapes() {
  const ModelConfig c;  // 224 / 32 / 256 / 8 heads
  Rng rng(1);
  FusionModel m = FusionModel::initialize(c, rng);
  const Tensor sat = testsupport::random_tensor({3, 224, 224}, rng);
  const Tensor sv = testsupport::random_tensor({3, 224, 224}, rng);
  Tape tape(false);
  AttentionProbe probe;
  ForwardContext ctx(tape, false, nullptr, &probe);
  const Var rs = vit_encode(ctx, sat, m.satellite, c);
  const Var rv = vit_encode(ctx, sv, m.streetview, c);
  expect(rs.shape() == Shape{50, 256}, "satellite branch shape");
  expect(rv.shape() == Shape{50, 256}, "street-view branch shape");
  const Var fused = fuse(ctx, rs, rv, m);
  expect(fused.shape() == Shape{50, 256}, "fused shape");
  const Var y = fitting_head(ctx, fused, m.head);
  expect(y.value().size() == 1, "head output is not a scalar");
  double worst = 0.0;
  std::size_t rows = 0;
  for (const auto& dist : probe.distributions)
    for (std::size_t r = 0; r < dist.rows(); ++r, ++rows) {
      double s = 0;
      for (std::size_t k = 0; k < dist.cols(); ++k) {
        expect(dist.at(r, k) >= 0.0, "negative attention weight");
        s += dist.at(r, k);
      }
      worst = std::max(worst, std::abs(s - 1.0));
    }
  expect(rows > 0, "no attention distributions recorded");
  return {worst <= 1e-9, "branches 50x256, fused 50x256, head 1x1; " + std::to_string(rows) +
                             " attention rows, max |row sum - 1| = " + fmt(worst, 3)};
}

Outcome fusion_structure() {
  ModelConfig c = tiny_model();
  FusionModel m = perturbed(c, 3);
  for (auto& p : m.fuse_streetview) {
    p.o.w.fill(0.0);
    p.o.b.fill(0.0);
  }
  Rng rng(4);
  Tape tape(false);
  ForwardContext ctx(tape);
  const std::size_t L = c.seq_len(), d = static_cast<std::size_t>(c.hidden_dim);
  const Var r1 = tape.constant(testsupport::random_tensor({L, d}, rng));
  const Var r2 = tape.constant(testsupport::random_tensor({L, d}, rng));
  const bool identity = fuse(ctx, r1, r2, m).value() == r2.value();
  const FusionModel fresh = perturbed(c, 5);
  const Var s = tape.constant(testsupport::random_tensor({L, d}, rng));
  const auto& p = fresh.fuse_satellite[0];
  const bool self = cross_attention(ctx, s, s, p, c).value() == self_attention(ctx, s, p, c).value();
  return {identity && self, std::string("fuse(r1, r2) == r2 with zeroed projection: ") + (identity ? "yes" : "no") +
                                "; cross_attention(s, s) == self_attention(s): " + (self ? "yes" : "no")};
}

double mean_brightness(const Image8& img) {
  double s = 0;
  for (auto px : img.data) s += px;
  return s / static_cast<double>(img.data.size());
}

// Least squares of label on mean satellite brightness, fitted on `train`,
// scored on `test`.
double brightness_oracle_r2(const fs::path& corpus, const std::vector<AlignedPair>& pairs,
                            const std::set<std::string>& train, const std::set<std::string>& test) {
  std::map<std::string, fs::path> where;
  for (const auto& r : read_manifest(CorpusPaths{corpus}.satellites())) where[r.id] = r.path;
  std::vector<double> xt, yt, xs, ys;
  for (const auto& p : pairs) {
    const double x = mean_brightness(decode_image(where.at(p.sat_id)));
    if (train.count(p.sat_id)) xt.push_back(x), yt.push_back(p.label);
    if (test.count(p.sat_id)) xs.push_back(x), ys.push_back(p.label);
  }
  const double n = static_cast<double>(xt.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xt.size(); ++i) mx += xt[i] / n, my += yt[i] / n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xt.size(); ++i) sxx += (xt[i] - mx) * (xt[i] - mx), sxy += (xt[i] - mx) * (yt[i] - my);
  const double slope = sxy / sxx, icpt = my - slope * mx;
  double ys_mean = 0;
  for (double y : ys) ys_mean += y / static_cast<double>(ys.size());
  double res = 0, tot = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    res += std::pow(ys[i] - (icpt + slope * xs[i]), 2);
    tot += std::pow(ys[i] - ys_mean, 2);
  }
  return 1 - res / tot;
}

std::set<std::string> id_set(const json& ids) {
  std::set<std::string> s;
  for (const auto& id : ids) s.insert(id.get<std::string>());
  return s;
}

Outcome synthetic_training() {
  TempDir dir("acceptance-train");
  const fs::path scratch = dir.path();
  const std::string config = (testsupport::source_dir() / "configs" / "desk.json").string();

  // Held-out R2 of the desk configuration on the seed-7 corpus.
  const std::string corpus = (dir / "corpus").string(), pairs = (dir / "pairs.jsonl").string();
  cli_ok({"synth", "--seed", "7", "--pairs", "512", "--out", corpus}, scratch);
  cli_ok({"align", "--corpus", corpus, "--out", pairs}, scratch);
  const auto t0 = Clock::now();
  cli_ok({"train", "--seed", "0", "--config", config, "--corpus", corpus, "--pairs", pairs, "--out",
          (dir / "ckpt").string()},
         scratch);
  const double train_secs = seconds_since(t0);
  const double r2 = parse_r2(cli_ok({"eval", "--checkpoint", (dir / "ckpt").string(), "--corpus", corpus, "--pairs",
                                     pairs, "--subset", "val"},
                                    scratch));
  const json meta = load_checkpoint(dir / "ckpt").meta;
  const int epochs = static_cast<int>(meta.at("history").size());
  const double oracle =
      brightness_oracle_r2(corpus, read_pairs(pairs), id_set(meta.at("train_ids")), id_set(meta.at("val_ids")));

  // Fusion against satellite-only where street views carry their own signal.
  const std::string comp = (dir / "comp").string(), comp_pairs = (dir / "comp.jsonl").string();
  cli_ok({"synth", "--seed", "7", "--pairs", "512", "--complementary", "--out", comp}, scratch);
  cli_ok({"align", "--corpus", comp, "--out", comp_pairs}, scratch);
  std::map<std::string, double> by_modality;
  for (const std::string modality : {"fusion", "satellite_only"}) {
    const std::string ckpt = (dir / ("comp-" + modality)).string();
    cli_ok({"train", "--seed", "0", "--config", config, "--modality", modality, "--corpus", comp, "--pairs", comp_pairs,
            "--out", ckpt},
           scratch);
    by_modality[modality] = parse_r2(
        cli_ok({"eval", "--checkpoint", ckpt, "--corpus", comp, "--pairs", comp_pairs, "--subset", "val"}, scratch));
  }

  const bool ok = r2 >= 0.8 && epochs <= 40 && train_secs <= 600 && oracle >= 0.9 &&
                  by_modality["fusion"] >= by_modality["satellite_only"] - 0.02;
  return {ok, "held-out r2=" + fmt(r2) + " after " + std::to_string(epochs) + " epochs in " + fmt(train_secs, 3) +
                  " s (" + std::to_string(std::thread::hardware_concurrency()) + " cores); brightness oracle r2=" +
                  fmt(oracle) + "; complementary corpus fusion r2=" + fmt(by_modality["fusion"]) +
                  " vs satellite-only r2=" + fmt(by_modality["satellite_only"])};
}

Outcome r2_formula() {
  const std::vector<double> y{1, 2, 3};
  const double a = r_squared(std::vector<double>{1.5, 2, 2.5}, y);
  const double perfect = r_squared(y, y);
  const double mean = r_squared(std::vector<double>{2, 2, 2}, y);
  const bool ok = a == 0.75 && perfect == 1.0 && mean == 0.0;
  return {ok, "r2([1.5,2,2.5])=" + fmt(a, 17) + " perfect=" + fmt(perfect, 17) + " mean=" + fmt(mean, 17)};
}

Outcome alignment() {
  Rng rng(2024);
  std::vector<ImageRecord> svs;
  for (int i = 0; i < 1000; ++i) {
    ImageRecord r;
    char id[16];
    std::snprintf(id, sizeof id, "sv%04d", i);
    r.id = id;
    r.kind = ImageKind::kStreetView;
    r.location = {28 + rng.uniform() * 4, 108 + rng.uniform() * 4};
    r.heading = 0;
    svs.push_back(r);
  }
  const auto idx = SpatialGridIndex::build(svs);
  int mismatches = 0;
  for (int q = 0; q < 200; ++q) {
    const bool far = q % 4 == 0;
    const GeoPoint p = far ? GeoPoint{20 + rng.uniform() * 20, 100 + rng.uniform() * 20}
                           : GeoPoint{28 + rng.uniform() * 4, 108 + rng.uniform() * 4};
    std::string best_id;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : svs) {
      const double d = haversine_km(p, r.location);
      if (d < best || (d == best && r.id < best_id)) best = d, best_id = r.id;
    }
    const auto got = idx.nearest(p);
    if (!got || got->sv_id != best_id || got->distance_km != best) ++mismatches;
  }

  TempDir dir("acceptance-align");
  SynthOptions o;
  o.seed = 7;
  o.n_pairs = 300;
  o.satellite_side = 32;
  o.streetview_width = 48;
  o.streetview_height = 32;
  synth_corpus(o, dir.path());
  const CorpusPaths paths{dir.path()};
  const auto pairs = build_pairs(read_manifest(paths.satellites()), read_manifest(paths.streetviews()),
                                 load_nightlight_raster(paths.raster()));
  double max_km = 0;
  for (const auto& p : pairs) max_km = std::max(max_km, p.distance_km);
  return {mismatches == 0 && max_km <= 5.0 && !pairs.empty(),
          std::to_string(mismatches) + " of 200 queries differ from brute force over 1000 street views; " +
              std::to_string(pairs.size()) + " corpus pairs, max distance " + fmt(max_km) + " km"};
}

Outcome geo() {
  Rng rng(11);
  int round_trip_failures = 0;
  for (int i = 0; i < 10000; ++i) {
    const TileId t{12, static_cast<std::int64_t>(rng.below(4096)), static_cast<std::int64_t>(rng.below(4096))};
    if (!(latlon_to_tile(tile_center(t), 12) == t)) ++round_trip_failures;
  }
  const TileId origin = latlon_to_tile({0.0, 0.0}, 12);
  const double km = haversine_km({0, 0}, {0, 1});

  NightlightRaster r;
  r.meta = {31.0, 114.0, kNightlightStepDeg, 240, 240};
  for (int i = 0; i < 240 * 240; ++i)
    r.values.push_back(rng.uniform() < 0.02 ? std::numeric_limits<float>::quiet_NaN()
                                            : static_cast<float>(rng.uniform() * 50));
  double worst = 0;
  for (int k = 0; k < 50; ++k) {
    const GeoPoint c{30.1 + rng.uniform() * 0.8, 114.1 + rng.uniform() * 0.8};
    const double side = 1.0 + rng.uniform() * 9.0;
    const double dlat = side / 111.195 / 2, dlon = side / (111.195 * std::cos(c.lat * M_PI / 180)) / 2;
    double sum = 0;
    long n = 0;
    for (std::int64_t row = 0; row < r.meta.rows; ++row)
      for (std::int64_t col = 0; col < r.meta.cols; ++col) {
        const double lat = r.meta.origin_lat - (row + 0.5) * r.meta.step;
        const double lon = r.meta.origin_lon + (col + 0.5) * r.meta.step;
        const float v = r.at(row, col);
        if (!std::isnan(v) && std::abs(lat - c.lat) <= dlat && std::abs(lon - c.lon) <= dlon) sum += v, ++n;
      }
    const double brute = sum / static_cast<double>(n);
    worst = std::max(worst, std::abs(nightlight_window_mean(r, c, side) - brute) / std::max(1.0, std::abs(brute)));
  }
  const bool ok = round_trip_failures == 0 && origin.x == 2048 && origin.y == 2048 && std::abs(km - 111.195) <= 0.001 &&
                  worst <= 1e-12;
  return {ok, std::to_string(round_trip_failures) + " round-trip failures in 10000 tiles; (0,0) -> (" +
                  std::to_string(origin.x) + "," + std::to_string(origin.y) + "); haversine " + fmt(km, 9) +
                  " km; window mean max rel diff " + fmt(worst, 3) + " over 50 windows"};
}

Outcome pipeline() {
  TempDir dir("acceptance-pipeline");

  // Determinism of the persisted output.
  SynthOptions small;
  small.seed = 31;
  small.n_pairs = 200;
  small.satellite_side = 48;
  small.streetview_width = 72;
  small.streetview_height = 48;
  const SynthCorpus sc = synth_corpus(small, dir / "small");
  ModelConfig tiny;
  tiny.image_side = 32;
  tiny.patch_side = 16;
  tiny.hidden_dim = 16;
  tiny.num_encoder_layers = 1;
  tiny.num_heads = 2;
  save_random_checkpoint(dir / "tiny", tiny, 5);
  ModelRegistry models;
  models.add("default", dir / "tiny");
  std::vector<std::string> exports;
  for (int w : {1, 2, 8}) {
    auto store = Store::open(dir / ("store-w" + std::to_string(w)));
    TaskSpec spec;
    spec.task_id = "determinism";
    spec.bbox = sc.region;
    spec.corpus = dir / "small";
    spec.worker_count = w;
    expect(run_task(spec, *store, models).status == TaskStatus::kSucceeded, "task failed at workers=" + std::to_string(w));
    exports.push_back(store->export_task_results("determinism"));
  }
  const bool identical = exports[0] == exports[1] && exports[0] == exports[2] && !exports[0].empty();

  // Scoring wall clock at 1 and 4 workers on a large corpus.
  SynthOptions big;
  big.seed = 32;
  big.n_pairs = 2000;
  big.satellite_side = 64;
  big.streetview_width = 96;
  big.streetview_height = 64;
  const SynthCorpus bc = synth_corpus(big, dir / "big");
  save_random_checkpoint(dir / "desk", desk_model(), 6);
  const ScoringModel model = ScoringModel::from_checkpoint(load_checkpoint(dir / "desk"));
  TaskSpec spec;
  spec.task_id = "speed";
  spec.bbox = bc.region;
  spec.corpus = dir / "big";
  const auto pairs = stage_pair(stage_read(spec), spec);
  expect(pairs.size() >= 2000, "only " + std::to_string(pairs.size()) + " scoring pairs");
  auto timed = [&](int workers) {
    const auto t0 = Clock::now();
    const auto r = stage_score(pairs, model, workers);
    expect(r.scored.size() == pairs.size(), "scoring dropped pairs");
    return seconds_since(t0);
  };
  timed(1);  // warm the page cache
  const double one = timed(1), four = timed(4);
  const double ratio = four / one;
  return {identical && ratio <= 0.67,
          std::string("exports for workers {1,2,8} ") + (identical ? "identical" : "differ") + " (" +
              std::to_string(exports[0].size()) + " bytes); stage_score on " + std::to_string(pairs.size()) +
              " pairs: 1 worker " + fmt(one, 3) + " s, 4 workers " + fmt(four, 3) + " s, ratio " + fmt(ratio, 3) +
              " (limit 0.67, " + std::to_string(std::thread::hardware_concurrency()) + " cores available)"};
}

std::size_t journal_lines(const fs::path& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".jsonl") {
      const std::string s = testsupport::read_file(e.path());
      n += static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
    }
  return n;
}

// Everything a reader can observe about committed results.
std::string results_view(const Store& s, const std::string& period, const BBox& region) {
  json j;
  for (const auto& t : s.tasks()) {
    j["fine"][t.task_id] = s.export_task_results(t.task_id);
    j["frames"][t.task_id] = s.frames(t.task_id).size();
  }
  for (const auto& c : s.county_rows()) j["county"].push_back(c.to_json());
  for (const auto& r : s.query_heatmap(region, period)) j["heatmap"].push_back(r.to_json());
  return j.dump();
}

Outcome store_crash() {
  TempDir dir("acceptance-store");
  SynthOptions o;
  o.seed = 41;
  o.n_pairs = 60;
  o.satellite_side = 32;
  o.streetview_width = 48;
  o.streetview_height = 32;
  const SynthCorpus corpus = synth_corpus(o, dir / "corpus");
  ModelConfig c;
  c.image_side = 32;
  c.patch_side = 16;
  c.hidden_dim = 16;
  c.num_encoder_layers = 1;
  c.num_heads = 2;
  save_random_checkpoint(dir / "ckpt", c, 7);
  ModelRegistry models;
  models.add("default", dir / "ckpt");
  auto spec = [&](const std::string& id, std::uint64_t seed) {
    TaskSpec s;
    s.task_id = id;
    s.bbox = corpus.region;
    s.corpus = dir / "corpus";
    s.seed = seed;
    return s;
  };

  // Committed state: one finished task.
  const fs::path pristine = dir / "pristine";
  std::string committed;
  {
    auto s = Store::open(pristine);
    expect(run_task(spec("first", 1), *s, models).status == TaskStatus::kSucceeded, "first task failed");
    committed = results_view(*s, "", corpus.region);
  }
  // Reference run of the doomed task without a crash.
  const std::size_t before = journal_lines(pristine);
  fs::copy(pristine, dir / "reference", fs::copy_options::recursive);
  std::string reference_export;
  {
    auto s = Store::open(dir / "reference");
    expect(run_task(spec("second", 2), *s, models).status == TaskStatus::kSucceeded, "reference task failed");
    reference_export = s->export_task_results("second");
  }
  const std::size_t total = journal_lines(dir / "reference") - before;

  // Crash after every journal line the second task writes.
  int runs = 0, violations = 0;
  std::string first_violation;
  for (std::size_t cut = 0; cut < total; ++cut, ++runs) {
    const fs::path work = dir / "work";
    fs::remove_all(work);
    fs::copy(pristine, work, fs::copy_options::recursive);
    const pid_t pid = fork();
    expect(pid >= 0, "fork failed");
    if (pid == 0) {
      auto s = Store::open(work);
      s->set_crash_after_lines(static_cast<long>(cut));
      run_task(spec("second", 2), *s, models);
      std::_Exit(0);
    }
    int status = 0;
    waitpid(pid, &status, 0);
    std::string problem;
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 86) problem = "child did not crash";
    auto s = Store::open(work);
    const auto t = s->find_task("second");
    if (t && t->status == TaskStatus::kSucceeded) problem = "task reported success";
    if (!s->fine_rows("second").empty() || !s->frames("second").empty()) problem = "partial rows visible";
    // Requery must equal the pre-crash committed state (the doomed task
    // contributes an empty export when its record exists).
    auto without_second = [&](const std::string& view) {
      json j = json::parse(view);
      if (j.contains("fine")) j["fine"].erase("second");
      if (j.contains("frames")) j["frames"].erase("second");
      return j.dump();
    };
    if (without_second(results_view(*s, "", corpus.region)) != committed) problem = "committed state changed";
    if (problem.empty() && t) {
      // The recovered store runs the task to the reference result.
      TaskRecord r = *t;
      if (r.status == TaskStatus::kRunning) {
        r.status = TaskStatus::kFailed;
        s->update_task(r);
      }
      if (run_task(spec("second", 2), *s, models).status != TaskStatus::kSucceeded ||
          s->export_task_results("second") != reference_export)
        problem = "re-run after recovery differs from the reference";
    }
    if (!problem.empty() && violations++ == 0) first_violation = "cut " + std::to_string(cut) + ": " + problem;
  }
  return {violations == 0 && runs > 0, std::to_string(runs) + " crash points across a " + std::to_string(total) +
                                           "-line task run, " + std::to_string(violations) + " violations" +
                                           (violations ? " (" + first_violation + ")" : "")};
}

// ---- service over HTTP against the real CLI server

struct ServerProcess {
  pid_t pid = -1;
  int err_fd = -1;
  int port = 0;

  ServerProcess(const fs::path& store, const fs::path& ckpt, const fs::path& corpus) {
    int fds[2];
    expect(::pipe(fds) == 0, "pipe failed");
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, fds[1], STDERR_FILENO);
    posix_spawn_file_actions_addclose(&actions, fds[0]);
    const std::string bin = testsupport::cli_path().string();
    std::vector<std::string> args{bin, "serve", "--port", "0", "--store", store.string(), "--checkpoint",
                                  ckpt.string(), "--corpus", corpus.string()};
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    char* envp[] = {nullptr};
    const int rc = posix_spawn(&pid, bin.c_str(), &actions, nullptr, argv.data(), envp);
    posix_spawn_file_actions_destroy(&actions);
    ::close(fds[1]);
    err_fd = fds[0];
    expect(rc == 0, "cannot start " + bin);
    while (port == 0) {
      std::string line;
      char ch;
      while (::read(err_fd, &ch, 1) == 1 && ch != '\n') line += ch;
      expect(!line.empty(), "server exited before announcing its port");
      const json j = json::parse(line);
      if (j.value("event", "") == "serve") port = j.at("port").get<int>();
    }
  }

  int stop() {
    if (pid <= 0) return -1;
    ::kill(pid, SIGTERM);
    int status = 0;
    ::waitpid(pid, &status, 0);
    pid = -1;
    ::close(err_fd);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  ~ServerProcess() { stop(); }
};

Outcome service() {
  TempDir dir("acceptance-service");
  const std::vector<std::string> periods{"2021", "2022", "2023"};
  SynthOptions o;
  o.seed = 51;
  o.n_pairs = 60;
  o.periods = periods;
  o.satellite_side = 32;
  o.streetview_width = 48;
  o.streetview_height = 32;
  o.county_rows = 2;
  o.county_cols = 2;
  const SynthCorpus corpus = synth_corpus(o, dir / "corpus");
  ModelConfig c;
  c.image_side = 32;
  c.patch_side = 16;
  c.hidden_dim = 16;
  c.num_encoder_layers = 1;
  c.num_heads = 2;
  save_random_checkpoint(dir / "ckpt", c, 8);

  const json schema = testsupport::load_schema("api.schema.json");
  int responses = 0;
  std::vector<std::string> violations;
  auto check = [&](const httplib::Result& res, int status, const std::string& definition, const std::string& what) {
    expect(static_cast<bool>(res), what + ": no response");
    ++responses;
    if (res->status != status)
      violations.push_back(what + ": status " + std::to_string(res->status) + " body " + res->body);
    if (res->get_header_value("Content-Type") != "application/json") violations.push_back(what + ": content type");
    const json body = json::parse(res->body);
    const std::string err = testsupport::schema_violation(schema["definitions"][definition], body, schema);
    if (!err.empty()) violations.push_back(what + ": " + err);
    return body;
  };

  std::map<std::string, json> heatmaps, counties, trends;
  std::map<std::string, std::string> task_ids;
  const BBox r = corpus.region;
  const std::string bbox = fmt(r.min.lat, 17) + "," + fmt(r.min.lon, 17) + "," + fmt(r.max.lat, 17) + "," +
                           fmt(r.max.lon, 17);
  {
    ServerProcess server(dir / "store", dir / "ckpt", dir / "corpus");
    httplib::Client client("127.0.0.1", server.port);
    client.set_read_timeout(120, 0);
    check(client.Get("/api/health"), 200, "Health", "health");
    check(client.Get("/api/models"), 200, "Models", "models");
    check(client.Get("/api/tasks/missing"), 404, "ApiError", "unknown task");
    check(client.Get("/api/heatmap?bbox=1,2,3&period=2021"), 400, "ApiError", "bad bbox");

    for (const auto& period : periods) {
      const json request{{"region", {{"bbox", {r.min.lat, r.min.lon, r.max.lat, r.max.lon}}}}, {"period", period}};
      const std::string req_err = testsupport::schema_violation(schema["definitions"]["TaskCreateRequest"], request, schema);
      expect(req_err.empty(), "request does not validate: " + req_err);
      const json created =
          check(client.Post("/api/tasks", request.dump(), "application/json"), 201, "TaskCreated", "create " + period);
      const std::string id = created.at("task_id");
      task_ids[period] = id;
      std::int64_t after = 0;
      std::string status = "pending";
      for (int i = 0; i < 600 && (status == "pending" || status == "running"); ++i) {
        const json page = check(
            client.Get("/api/tasks/" + id + "/events?after=" + std::to_string(after) + "&wait_ms=500"), 200,
            "EventPage", "events " + period);
        after = page.at("next");
        status = page.at("status");
      }
      const json task = check(client.Get("/api/tasks/" + id), 200, "Task", "task " + period);
      expect(task.at("status") == "succeeded", "task for " + period + " ended " + task.at("status").dump());
      heatmaps[period] = check(client.Get("/api/heatmap?bbox=" + bbox + "&period=" + period), 200, "Heatmap",
                               "heatmap " + period);
    }
    for (const auto& county : corpus.counties) {
      for (const auto& period : periods) {
        const auto res = client.Get("/api/counties/" + county.county_id + "?period=" + period);
        if (res && res->status == 404) {
          check(res, 404, "ApiError", "county " + county.county_id);
          continue;
        }
        counties[county.county_id + "/" + period] = check(res, 200, "CountyScore", "county " + county.county_id);
      }
      trends[county.county_id] = check(client.Get("/api/counties/" + county.county_id + "/trend?from=2021&to=2023"),
                                       200, "Trend", "trend " + county.county_id);
    }
    expect(server.stop() == 0, "server did not shut down cleanly");
  }

  // Served values equal the persisted rows.
  auto store = Store::open(dir / "store");
  int mismatches = 0;
  for (const auto& period : periods) {
    const auto fine = store->fine_rows(task_ids[period]);
    const json& cells = heatmaps[period]["cells"];
    if (cells.size() != fine.size() || fine.empty()) ++mismatches;
    for (std::size_t i = 0; i < std::min<std::size_t>(cells.size(), fine.size()); ++i)
      if (cells[i]["cell"] != fine[i].cell || cells[i]["score"].get<double>() != fine[i].score) ++mismatches;
  }
  std::size_t county_rows = 0;
  for (const auto& row : store->county_rows()) {
    ++county_rows;
    const auto it = counties.find(row.county_id + "/" + row.period);
    if (it == counties.end() || it->second["value"].get<double>() != row.value) ++mismatches;
    bool in_trend = false;
    for (const auto& p : trends[row.county_id]["series"])
      in_trend = in_trend || (p["period"] == row.period && p["value"].get<double>() == row.value);
    if (!in_trend) ++mismatches;
  }
  if (county_rows != counties.size() || county_rows == 0) ++mismatches;

  const bool ok = violations.empty() && mismatches == 0;
  return {ok, std::to_string(responses) + " responses validated, " + std::to_string(violations.size()) +
                  " schema or status violations" + (violations.empty() ? "" : " (" + violations.front() + ")") + ", " +
                  std::to_string(mismatches) + " served values differing from the store; " +
                  std::to_string(county_rows) + " county rows over " + std::to_string(periods.size()) + " periods"};
}

const std::vector<std::pair<std::string, std::function<Outcome()>>>& criteria() {
  static const std::vector<std::pair<std::string, std::function<Outcome()>>> all{
      {"gradients", gradients},
      {"shapes", shapes},
      {"fusion_structure", fusion_structure},
      {"synthetic_training", synthetic_training},
      {"r2_formula", r2_formula},
      {"alignment", alignment},
      {"geo", geo},
      {"pipeline", pipeline},
      {"store_crash", store_crash},
      {"service", service}};
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  std::string only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--list") {
      for (const auto& [name, fn] : criteria()) std::cout << name << "\n";
      return 0;
    }
    if (arg == "--criterion" && i + 1 < argc) {
      only = argv[++i];
    } else {
      std::cerr << "usage: geoecon_acceptance [--list] [--criterion <name>]\n";
      return 2;
    }
  }
  int failed = 0, ran = 0;
  for (const auto& [name, fn] : criteria()) {
    if (!only.empty() && name != only) continue;
    ++ran;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << " (" << fmt(seconds_since(t0), 3) << " s): " << o.detail
              << std::endl;
    failed += !o.pass;
  }
  if (ran == 0) {
    std::cerr << "unknown criterion '" << only << "'\n";
    return 2;
  }
  return failed == 0 ? 0 : 1;
}
