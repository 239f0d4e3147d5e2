// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [criterion ...]    run all criteria, or only the listed ones
//
// Training criteria use configs/desk.json from the source tree.

#include "grad_check.hpp"
#include "metric_oracle.hpp"

#include "lgnet/config.hpp"
#include "lgnet/hungarian.hpp"
#include "lgnet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace lgnet;
namespace fs = std::filesystem;
using V = Var<double>;
using M = Matrix<double>;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

const fs::path kWork = fs::temp_directory_path() / "lgnet_acceptance";

ExperimentConfig desk_config() { return load_config(std::string(LGNET_SOURCE_DIR) + "/configs/desk.json"); }

struct DeskData {
  std::vector<Sample> train;
  std::vector<Sample> val;
};

const DeskData& desk_data() {
  static const DeskData d = [] {
    const ExperimentConfig c = desk_config();
    return DeskData{generate_dataset(c.data.scene, split_seed(c.data, "train"), c.data.train_count, "train_"),
                    generate_dataset(c.data.scene, split_seed(c.data, "val"), c.data.val_count, "val_")};
  }();
  return d;
}

struct DeskRun {
  double iou = 0.0;
  double seconds = 0.0;
  TrainResult result;
};

DeskRun desk_run(const std::string& variant, std::uint64_t seed, const std::string& dir) {
  ExperimentConfig c = desk_config();
  c.variant = variant;
  c.seed = seed;
  const auto& data = desk_data();
  Model model(resolved_model(c), parse_variant(variant));
  TrainOptions opts;
  opts.out_dir = (kWork / dir).string();
  fs::remove_all(opts.out_dir);
  opts.meta = {{"config_hash", config_hash(c)}, {"seed", seed}, {"variant", variant}};
  const auto t0 = std::chrono::steady_clock::now();
  DeskRun r;
  r.result = train(model, data.train, data.val, resolved_train(c), c.metrics, opts);
  r.seconds = seconds_since(t0);
  r.iou = r.result.final_val.iou;
  std::cout << "  [desk] " << variant << " seed " << seed << " val IoU " << fmt("%.4f", r.iou) << " best "
            << fmt("%.4f", r.result.best_val_iou) << " (epoch " << r.result.best_epoch << ") in "
            << fmt("%.1f", r.seconds) << " s" << std::endl;
  return r;
}

// Runs shared by several criteria, computed on first use.
std::map<std::string, DeskRun>& run_cache() {
  static std::map<std::string, DeskRun> cache;
  return cache;
}

const DeskRun& cached_run(const std::string& variant, std::uint64_t seed) {
  const std::string key = variant + "_seed" + std::to_string(seed);
  auto& cache = run_cache();
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, desk_run(variant, seed, key)).first;
  return it->second;
}

const std::vector<std::uint64_t> kSeeds{1, 2, 3};

std::vector<double> variant_ious(const std::string& variant) {
  std::vector<double> v;
  for (auto s : kSeeds) v.push_back(cached_run(variant, s).iou);
  return v;
}

std::string list(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + fmt("%.4f", x);
  return s;
}

// 1
Outcome channel_mid_rule() {
  const auto t0 = std::chrono::steady_clock::now();
  int checked = 0;
  for (int c_in = 1; c_in <= 4096; ++c_in) {
    for (int c_out = 1; c_out <= c_in; c_out += (c_in > 512 ? 37 : 1)) {
      const int m = channel_mid(c_in, c_out);
      const int expect = std::max(c_in / 2, c_out);
      if (m != expect || m < c_out || m > c_in)
        return {false, "channel_mid(" + std::to_string(c_in) + "," + std::to_string(c_out) + ") = " + std::to_string(m)};
      ++checked;
    }
  }
  const bool spots = channel_mid(1792, 768) == 896 && channel_mid(512, 768) == 768;
  const double secs = seconds_since(t0);
  return {spots && secs < 1.0, std::to_string(checked) + " pairs, spot values " + (spots ? "ok" : "wrong") + ", " +
                                   fmt("%.3f", secs) + " s"};
}

// 2
Outcome metric_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  CounterRng rng(2024, 2);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const BinaryMask pred = testing::random_mask(16, 16, rng);
    const BinaryMask gt = testing::random_mask(16, 16, rng);
    const auto o = testing::oracle_scores(pred, gt, 0.3);
    const auto c = confusion(pred, gt);
    if (c.tp != o.tp || c.fp != o.fp || c.tn != o.tn || c.fn != o.fn)
      return {false, "confusion counts differ at trial " + std::to_string(trial)};
    worst = std::max({worst, std::abs(iou(c) - o.iou), std::abs(f_beta(c, 0.3) - o.f_beta),
                      std::abs(mae(pred, gt) - o.mae), std::abs(ber(c) - o.ber)});
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-12 && secs < 10.0, "1000 pairs, max |diff| " + fmt("%.2e", worst) + ", " + fmt("%.3f", secs) + " s"};
}

// 3
Outcome f_identity() {
  double worst = 0.0;
  int n = 0;
  for (int total = 1; total <= 40; ++total) {
    for (int tp = 0; tp <= total; ++tp) {
      // tp / (tp + fp) = tp / (tp + fn) = tp / total.
      const auto miss = static_cast<std::uint64_t>(total - tp);
      const ConfusionCounts c{static_cast<std::uint64_t>(tp), miss, 7, miss};
      const double x = static_cast<double>(tp) / total;
      for (double b2 : {0.3, 0.5, 1.0, 2.0}) {
        worst = std::max(worst, std::abs(f_beta(c, b2) - x));
        ++n;
      }
    }
  }
  return {worst <= 1e-12, std::to_string(n) + " cases, max |F - x| " + fmt("%.2e", worst)};
}

// 4
Outcome gradient_checks() {
  const auto t0 = std::chrono::steady_clock::now();
  std::ostringstream detail;
  bool ok = true;

  {  // channel-reduction block
    ParameterStore<double> store;
    CounterRng rng(41, 0);
    FusionConfig cfg;
    cfg.se.reduction_ratio = 2;
    SEChannelReduction<double> block(store, "r", 24, 8, cfg, rng);
    CounterRng xr(42, 0);
    const FeatureMap<double> x{V(init::normal<double>(24, 36, 1.0, xr)), 6, 6, 8};
    const M w = init::normal<double>(8, 36, 1.0, xr);
    const auto r = testing::check_parameter_gradients(
        store, [&](Binding<double>& b) { return sum(mul(block(x, b).data, V(w))); }, 20, 43, 1e-5);
    ok = ok && r.max_rel_error <= 1e-3;
    detail << "reduction " << fmt("%.1e", r.max_rel_error);
  }
  {  // pixel decoder
    ParameterStore<double> store;
    CounterRng rng(44, 0);
    const std::array<int, 4> ch{6, 8, 10, 12};
    PixelDecoder<double> pd(store, ch, 8, rng);
    MultiScaleFeatures<double> p;
    for (std::size_t i = 0; i < 4; ++i) {
      const int s = MultiScaleFeatures<double>::kScales[i];
      p.levels[i] = {V(init::normal<double>(ch[i], (64 / s) * (64 / s), 1.0, rng)), 64 / s, 64 / s, s};
    }
    const M w = init::normal<double>(8, 256, 1.0, rng);
    const auto r = testing::check_parameter_gradients(
        store, [&](Binding<double>& b) { return sum(mul(pd(p, b).pixel_embedding.data, V(w))); }, 20, 45, 1e-5);
    ok = ok && r.max_rel_error <= 1e-3;
    detail << ", pixel decoder " << fmt("%.1e", r.max_rel_error);
  }
  {  // whole model with the matched loss at 32 x 32
    const ExperimentConfig c = desk_config();
    GlassSegmenter<double> model(resolved_model(c), Variant::full);
    SceneSpec spec = c.data.scene;
    spec.seed = 46;
    const Sample s = resize_pair(generate_scene(spec), 32);
    const auto image = to_tensor<double>(s.image, model.config().normalization);
    const LossWeights w = c.train.loss;
    const auto r = testing::check_parameter_gradients(
        model.parameters(),
        [&](Binding<double>& b) {
          const auto out = model.forward(image, b);
          const BinaryMask gt = resize_mask_nearest(s.mask, out.mask_h, out.mask_w);
          return match_and_loss(out.queries.class_logits, out.mask_logits, gt, w).total;
        },
        20, 47, 1e-5);
    ok = ok && r.max_rel_error <= 1e-3;
    detail << ", full model " << fmt("%.1e", r.max_rel_error) << " (" << r.checked << " entries)";
  }
  const double secs = seconds_since(t0);
  detail << ", " << fmt("%.1f", secs) << " s";
  return {ok && secs < 120.0, detail.str()};
}

// 5
Outcome frozen_backbone() {
  const ExperimentConfig c = desk_config();
  Model model(resolved_model(c), Variant::full);
  const auto general_before = snapshot(model.parameters(), "general.");
  const auto learned_before = snapshot(model.parameters(), "learned.");
  TrainOptions opts;
  opts.out_dir = (kWork / "frozen").string();
  fs::remove_all(opts.out_dir);
  opts.max_steps = 100;
  const auto r = train(model, desk_data().train, {}, resolved_train(c), c.metrics, opts);
  const bool frozen = freeze_check(general_before, snapshot(model.parameters(), "general."));
  const bool learned_moved = !freeze_check(learned_before, snapshot(model.parameters(), "learned."));
  const Checkpoint ck = load_checkpoint(r.last_checkpoint);
  std::size_t state = 0;
  std::size_t general_state = 0;
  for (const auto& e : ck.index.at("optimizer").at("state")) {
    ++state;
    general_state += e.at("name").get<std::string>().rfind("general.", 0) == 0;
  }
  std::size_t trainable = 0;
  for (std::size_t i = 0; i < model.parameters().size(); ++i) trainable += !model.parameters()[i].frozen;
  const bool ok = r.steps == 100 && frozen && learned_moved && general_state == 0 && state == trainable;
  return {ok, std::to_string(r.steps) + " steps, general " + (frozen ? "bitwise unchanged" : "CHANGED") +
                  ", learned " + (learned_moved ? "updated" : "unchanged") + ", optimizer state " +
                  std::to_string(state) + "/" + std::to_string(trainable) + " trainable, " +
                  std::to_string(general_state) + " frozen"};
}

// 6
Outcome shapes() {
  const ExperimentConfig c = desk_config();
  const ModelConfig mc = resolved_model(c);
  const Model model(mc, Variant::full);
  ParameterStore<float> store;
  CounterRng rng(60, 0);
  LearnedBackbone<float> learned(store, mc.learned, rng);
  std::ostringstream detail;
  bool ok = true;
  for (int side : {64, 128, 512}) {
    CounterRng ir(static_cast<std::uint64_t>(side), 0);
    RgbImage img = RgbImage::zeros(side, side);
    for (Eigen::Index i = 0; i < img.pixels.size(); ++i) img.pixels(i) = static_cast<float>(ir.uniform());
    const auto tensor = to_tensor<float>(img, mc.normalization);
    NoGradGuard guard;
    Binding<float> b(false);
    const auto levels = learned.forward(tensor, b);
    const auto fused = model.pyramid(tensor, b);
    for (std::size_t i = 0; i < 4; ++i) {
      const int stride = MultiScaleFeatures<float>::kScales[i];
      ok = ok && levels.levels[i].scale == stride && levels.levels[i].height == side / stride &&
           levels.levels[i].width == side / stride && levels.levels[i].channels() == mc.learned.stage_channels[i];
      ok = ok && fused.levels[i].scale == stride && fused.levels[i].height == side / stride &&
           fused.levels[i].channels() == mc.learned.stage_channels[i];
    }
    const ConfidenceMap conf = model.predict(img);
    const bool sized = conf.height == side && conf.width == side;
    const bool ranged = conf.values.minCoeff() >= 0.0 && conf.values.maxCoeff() <= 1.0;
    ok = ok && sized && ranged;
    detail << side << ":" << (sized && ranged ? "ok" : "bad") << " ";
  }
  detail << "strides 4/8/16/32, fused channels";
  for (int ch : mc.learned.stage_channels) detail << " " << ch;
  return {ok, detail.str()};
}

// Cheapest assignment by enumerating every permutation, as sorted (row, col) pairs.
std::vector<std::pair<int, int>> brute_force_match(const Eigen::MatrixXd& cost) {
  const bool transpose = cost.rows() > cost.cols();
  const Eigen::MatrixXd c = transpose ? Eigen::MatrixXd(cost.transpose()) : cost;
  std::vector<int> cols(static_cast<std::size_t>(c.cols()));
  std::iota(cols.begin(), cols.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> best_cols;
  do {
    double s = 0.0;
    for (Eigen::Index r = 0; r < c.rows(); ++r) s += c(r, cols[static_cast<std::size_t>(r)]);
    if (s < best) {
      best = s;
      best_cols = cols;
    }
  } while (std::next_permutation(cols.begin(), cols.end()));
  std::vector<std::pair<int, int>> pairs;
  for (int r = 0; r < c.rows(); ++r) {
    const int col = best_cols[static_cast<std::size_t>(r)];
    pairs.emplace_back(transpose ? col : r, transpose ? r : col);
  }
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

// 7
Outcome hungarian() {
  CounterRng rng(70, 0);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int rows = rng.uniform_int(1, 6);
    const int cols = rng.uniform_int(1, 6);
    Eigen::MatrixXd cost(rows, cols);
    for (Eigen::Index i = 0; i < cost.size(); ++i) cost(i) = rng.uniform(-5.0, 5.0);
    auto pairs = hungarian_match(cost);
    std::sort(pairs.begin(), pairs.end());
    const auto expect = brute_force_match(cost);
    if (pairs != expect) return {false, "trial " + std::to_string(trial) + " picks a different assignment"};
    worst = std::max(worst, std::abs(assignment_cost(cost, pairs) - assignment_cost(cost, expect)));
  }
  return {worst == 0.0, "200 trials up to 6x6 queries, every assignment equals brute force"};
}

// 8
Outcome desk_training() {
  const auto ious = variant_ious("full");
  double secs = 0.0;
  for (auto s : kSeeds) secs += cached_run("full", s).seconds;
  const double med = median3(ious);
  return {med >= 0.85, "full variant val IoU seeds 1-3: " + list(ious) + ", median " + fmt("%.4f", med) +
                           ", mean run " + fmt("%.0f", secs / 3.0) + " s"};
}

// 9
Outcome ablation_direction() {
  const double full = median3(variant_ious("full"));
  const auto lo = variant_ious("learned_only");
  const double learned = median3(lo);
  return {full >= learned - 0.01, "median full " + fmt("%.4f", full) + " vs learned_only " + fmt("%.4f", learned) +
                                      " (seeds: " + list(lo) + ")"};
}

// 10
Outcome lr_schedule() {
  const TrainConfig t;
  const int total = total_steps(t, 512);
  const double base = t.base_lr;
  const int w = t.warmup_steps;
  const bool ends = lr_at(w, base, w, total) == 1e-4 && lr_at(total, base, w, total) == 0.0;
  CounterRng rng(100, 0);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const int s = rng.uniform_int(0, total);
    const double expect = s < w ? base * s / w : base * (total - s) / (total - w);
    worst = std::max(worst, std::abs(lr_at(s, base, w, total) - expect));
  }
  return {ends && worst <= 1e-18, "warmup " + std::to_string(w) + ", total " + std::to_string(total) +
                                      ", endpoints " + (ends ? "exact" : "wrong") + ", 100 samples max |diff| " +
                                      fmt("%.1e", worst)};
}

// 11
Outcome determinism() {
  const DeskRun& first = cached_run("full", 1);
  const DeskRun again = desk_run("full", 1, "rerun_full_seed1");
  bool same_files = true;
  for (const auto& [a, b] : {std::pair{first.result.last_checkpoint, again.result.last_checkpoint},
                             std::pair{first.result.best_checkpoint, again.result.best_checkpoint}})
    same_files = same_files && file_hash(a) == file_hash(b);
  const bool same_iou = first.iou == again.iou;
  return {same_iou && same_files, "final IoU " + fmt("%.6f", first.iou) + " vs " + fmt("%.6f", again.iou) +
                                      ", checkpoint hashes " + (same_files ? "identical" : "DIFFER") + " (" +
                                      file_hash(first.result.last_checkpoint) + ")"};
}

// 12
Outcome bench() {
  const ExperimentConfig c;
  const Model model(resolved_model(c), parse_variant(c.variant));
  int timed = 0;
  int warm = 0;
  const SpeedReport r = benchmark_speed(model, c.bench.passes, c.train.image_side, c.bench.warmup,
                                        [&](bool t) { (t ? timed : warm)++; });
  const double product = r.fps * r.mean_latency;
  const bool ok = timed == 1000 && r.n_passes == 1000 && warm == c.bench.warmup && std::abs(product - 1.0) <= 1e-9;
  return {ok, std::to_string(timed) + " timed passes, " + std::to_string(warm) + " warm-up, " +
                  fmt("%.2f", r.fps) + " fps at " + std::to_string(r.image_side) + " px, |fps*latency - 1| " +
                  fmt("%.1e", std::abs(product - 1.0))};
}

// 13
Outcome calibration() {
  std::vector<ConfidenceMap> confs;
  std::vector<BinaryMask> gts;
  for (int k = 0; k < 10; ++k) {
    // Bin k: 200 pixels at confidence (k + 0.5) / 10, a matching share of them glass.
    confs.push_back({10, 20, Eigen::ArrayXd::Constant(200, (k + 0.5) / 10.0)});
    BinaryMask g = BinaryMask::zeros(10, 20);
    for (int i = 0; i < 20 * k + 10; ++i) g.values[static_cast<std::size_t>((i * 7) % 200)] = 1;
    gts.push_back(g);
  }
  const auto curve = calibration_curve(confs, gts, 10);
  double worst = 0.0;
  std::uint64_t n = 0;
  for (const auto& b : curve.bins) {
    worst = std::max(worst, std::abs(b.frequency - b.mean_confidence));
    n += b.count;
  }
  const bool ok = curve.bins.size() == 10 && worst <= 1e-9 && n == 2000 && curve.total == 2000;
  return {ok, "max |freq - conf| " + fmt("%.1e", worst) + ", bin counts sum " + std::to_string(n) + "/2000"};
}

// 14
Outcome overlay() {
  const ExperimentConfig c = desk_config();
  CounterRng rng(140, 0);
  std::size_t pixels = 0;
  for (int trial = 0; trial < 50; ++trial) {
    SceneSpec spec = c.data.scene;
    spec.canvas_size = 32 + 8 * rng.uniform_int(0, 4);
    spec.seed = static_cast<std::uint64_t>(1400 + trial);
    const Sample s = generate_scene(spec);
    const BinaryMask pred = testing::random_mask(s.mask.height, s.mask.width, rng);
    const RgbImage out = render_overlay(s.image, pred, s.mask);
    for (int y = 0; y < s.mask.height; ++y) {
      for (int x = 0; x < s.mask.width; ++x) {
        const auto i = s.image.index(y, x);
        std::array<float, 3> tint{};
        bool tinted = true;
        switch (categorize(pred.at(y, x), s.mask.at(y, x))) {
          case PixelCategory::true_positive: tint = {0, 1, 0}; break;
          case PixelCategory::false_positive: tint = {1, 0, 0}; break;
          case PixelCategory::false_negative: tint = {0, 0, 1}; break;
          case PixelCategory::true_negative: tinted = false; break;
        }
        for (int ch = 0; ch < 3; ++ch) {
          const float src = s.image.pixels(ch, i);
          const float expect = tinted ? 0.5f * src + 0.5f * tint[static_cast<std::size_t>(ch)] : src;
          if (std::abs(out.pixels(ch, i) - expect) > 1e-6f)
            return {false, "sample " + std::to_string(trial) + " pixel " + std::to_string(y) + "," + std::to_string(x)};
        }
        ++pixels;
      }
    }
  }
  return {true, "50 samples, " + std::to_string(pixels) + " pixels match their category colour"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"channel_mid rule", channel_mid_rule},
      {"metrics match pixel oracle", metric_oracle},
      {"F-measure identity", f_identity},
      {"gradient checks", gradient_checks},
      {"frozen general backbone", frozen_backbone},
      {"feature and output shapes", shapes},
      {"Hungarian vs brute force", hungarian},
      {"desk training IoU >= 0.85", desk_training},
      {"ablation direction", ablation_direction},
      {"learning-rate schedule", lr_schedule},
      {"determinism", determinism},
      {"speed harness", bench},
      {"calibration fixture", calibration},
      {"error overlay", overlay},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoi(argv[i]));
  fs::create_directories(kWork);

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2d %-28s %s  %s\n", id, criteria[k].first.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
