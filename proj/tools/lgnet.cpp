// Command-line driver: generate, train, eval, bench, ablate.
//
// Exit codes: 0 success, 1 finished with a warning, 2 invalid input or
// configuration, 3 runtime failure.

#include "lgnet/config.hpp"
#include "lgnet/data.hpp"
#include "lgnet/image_io.hpp"
#include "lgnet/metrics.hpp"
#include "lgnet/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using lgnet::ExperimentConfig;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kWarning = 1;
constexpr int kInvalid = 2;
constexpr int kFailure = 3;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> variant;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "experiment config (JSON)");
  cmd->add_option("--seed", f.seed, "experiment seed (overrides config)");
  cmd->add_option("--out", f.out, "output directory (overrides config)");
  cmd->add_option("--variant", f.variant, "full|learned_only|general_only|general_small|no_se");
}

ExperimentConfig resolve(const CommonFlags& f) {
  ExperimentConfig c = f.config.empty() ? ExperimentConfig{} : lgnet::load_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.out) c.out_dir = *f.out;
  if (f.variant) c.variant = *f.variant;
  c.validate();
  return c;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setw(2) << j << '\n';
}

void prepare_out(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir.string());
}

json stamp(const ExperimentConfig& c) {
  return {{"config_hash", lgnet::config_hash(c)}, {"seed", c.seed}, {"variant", c.variant}};
}

std::vector<lgnet::Sample> load_split(const ExperimentConfig& c, const std::string& split) {
  const auto& dirs = split == "train" ? c.data.train_dirs : c.data.val_dirs;
  if (!dirs.empty()) {
    for (const auto& d : dirs)
      if (!fs::is_directory(d)) throw std::runtime_error("dataset directory missing: " + d);
    return lgnet::load_datasets(dirs);
  }
  const int count = split == "train" ? c.data.train_count : c.data.val_count;
  return lgnet::generate_dataset(c.data.scene, lgnet::split_seed(c.data, split), count, split + "_");
}

int cmd_generate(const ExperimentConfig& c, int count, const std::string& split) {
  if (count < 0) throw std::invalid_argument("--count must be non-negative");
  const fs::path out(c.out_dir);
  prepare_out(out);
  const std::uint64_t seed = lgnet::split_seed(c.data, split);
  const auto samples = lgnet::generate_dataset(c.data.scene, seed, count, split + "_");
  lgnet::write_samples(out.string(), samples);
  json manifest = lgnet::dataset_manifest(c.data.scene, seed, split, samples);
  manifest["config_hash"] = lgnet::config_hash(c);
  manifest["seed"] = c.seed;
  write_json(out / "manifest.json", manifest);
  std::cout << "wrote " << samples.size() << " samples to " << out.string() << '\n';
  if (count == 0) {
    std::cerr << "warning: count is 0, wrote an empty manifest\n";
    return kWarning;
  }
  return kOk;
}

lgnet::TrainResult run_training(const ExperimentConfig& c, lgnet::Model& model, const fs::path& out,
                                const std::optional<std::string>& resume, int max_steps) {
  const auto train_set = load_split(c, "train");
  const auto val_set = load_split(c, "val");
  if (train_set.empty()) throw std::runtime_error("training set is empty");
  lgnet::TrainOptions opts;
  opts.out_dir = out.string();
  opts.meta = stamp(c);
  opts.resume = resume;
  opts.max_steps = max_steps;
  opts.log = [](const std::string& s) { std::cout << s << std::endl; };
  return lgnet::train(model, train_set, val_set, lgnet::resolved_train(c), c.metrics, opts);
}

int cmd_train(const ExperimentConfig& c, const std::optional<std::string>& resume, int max_steps) {
  const fs::path out(c.out_dir);
  prepare_out(out);
  write_json(out / "config.json", lgnet::to_json(c));
  lgnet::Model model(lgnet::resolved_model(c), lgnet::parse_variant(c.variant));
  const auto result = run_training(c, model, out, resume, max_steps);
  json report = result.has_final_val ? lgnet::to_json(result.final_val) : json::object();
  report.update(stamp(c));
  report["steps"] = result.steps;
  report["best_val_iou"] = result.best_val_iou;
  report["best_epoch"] = result.best_epoch;
  write_json(out / "val_report.json", report);
  std::cout << "final val iou " << (result.has_final_val ? result.final_val.iou : 0.0) << ", best "
            << result.best_val_iou << " (epoch " << result.best_epoch << ")\n";
  return kOk;
}

lgnet::Model load_model(const ExperimentConfig& c, const std::string& checkpoint) {
  const lgnet::Checkpoint ckpt = lgnet::load_checkpoint(checkpoint);
  const std::string expected = lgnet::config_hash(c);
  const std::string found = ckpt.index.value("config_hash", std::string{});
  if (found != expected)
    throw std::invalid_argument("checkpoint " + checkpoint + " was trained with config " + found +
                                ", current config hashes to " + expected);
  lgnet::Model model(lgnet::resolved_model(c), lgnet::parse_variant(c.variant));
  lgnet::restore_checkpoint(ckpt, model, nullptr);
  return model;
}

int cmd_eval(const ExperimentConfig& c, const std::string& checkpoint, const std::vector<std::string>& data,
             bool overlays, bool calibration) {
  const lgnet::Model model = load_model(c, checkpoint);
  std::vector<lgnet::Sample> dataset;
  if (!data.empty()) {
    for (const auto& d : data)
      if (!fs::is_directory(d)) throw std::runtime_error("dataset directory missing: " + d);
    dataset = lgnet::load_datasets(data);
  } else {
    dataset = load_split(c, "val");
  }
  if (dataset.empty()) throw std::invalid_argument("evaluation dataset is empty");
  const fs::path out(c.out_dir);
  prepare_out(out);
  const int side = c.train.image_side;
  const bool native = c.data.native_eval;

  std::vector<lgnet::ConfidenceMap> confs;
  std::vector<lgnet::BinaryMask> gts;
  std::vector<lgnet::ImageMetrics> per_image;
  if (overlays) prepare_out(out / "overlays");
  for (const auto& original : dataset) {
    const lgnet::Sample s = native ? original : lgnet::resize_pair(original, side);
    lgnet::ConfidenceMap conf = lgnet::predict_sample(model, s, side, native);
    lgnet::ImageMetrics m = lgnet::score_image(conf, s.mask, c.metrics);
    m.id = s.id;
    per_image.push_back(m);
    if (overlays) {
      const auto pred = lgnet::binarize(conf, c.metrics.threshold);
      lgnet::write_png((out / "overlays" / (s.id + ".png")).string(), lgnet::render_overlay(s.image, pred, s.mask));
    }
    if (calibration) {
      confs.push_back(std::move(conf));
      gts.push_back(s.mask);
    }
  }
  const lgnet::MetricReport report = lgnet::aggregate(std::move(per_image), c.metrics);
  json j = lgnet::to_json(report);
  j.update(stamp(c));
  j["checkpoint"] = checkpoint;
  j["image_side"] = side;
  j["native_eval"] = native;
  write_json(out / "report.json", j);
  if (calibration) {
    const auto curve = lgnet::calibration_curve(confs, gts, c.calibration_bins);
    lgnet::write_calibration_csv((out / "calibration.csv").string(), curve);
    lgnet::write_png((out / "calibration.png").string(), lgnet::render_calibration_plot(curve));
  }
  std::cout << "iou " << report.iou << " f_beta " << report.f_beta << " mae " << report.mae << " ber " << report.ber
            << " over " << report.n_images << " images\n";
  return kOk;
}

int cmd_bench(const ExperimentConfig& c, const std::string& checkpoint, std::optional<int> passes,
              std::optional<int> side) {
  const lgnet::Model model = checkpoint.empty() ? lgnet::Model(lgnet::resolved_model(c), lgnet::parse_variant(c.variant))
                                                : load_model(c, checkpoint);
  const lgnet::SpeedReport r =
      lgnet::benchmark_speed(model, passes.value_or(c.bench.passes), side.value_or(c.train.image_side), c.bench.warmup);
  json j = lgnet::to_json(r);
  j.update(stamp(c));
  const auto counts = lgnet::count_params(model);
  j["params_total"] = counts.total;
  j["params_trainable"] = counts.trainable;
  const fs::path out(c.out_dir);
  prepare_out(out);
  write_json(out / "speed.json", j);
  std::cout << std::setw(2) << j << '\n';
  return kOk;
}

int cmd_ablate(const ExperimentConfig& base, const std::vector<std::string>& variants) {
  const fs::path out(base.out_dir);
  prepare_out(out);
  const auto names = variants.empty() ? base.ablate_variants : variants;
  for (const auto& v : names) (void)lgnet::parse_variant(v);
  std::ofstream csv(out / "ablation.csv");
  if (!csv) throw std::runtime_error("cannot write ablation.csv");
  csv << "variant,iou,f_beta,mae,ber,params_total,params_trainable,seed,config_hash\n" << std::setprecision(10);
  json meta = {{"seed", base.seed}, {"variants", json::array()}};
  for (const auto& v : names) {
    ExperimentConfig c = base;
    c.variant = v;
    lgnet::Model model(lgnet::resolved_model(c), lgnet::parse_variant(v));
    const auto result = run_training(c, model, out / v, std::nullopt, -1);
    if (!result.has_final_val) throw std::runtime_error("ablation needs a validation set");
    const auto& r = result.final_val;
    const auto counts = lgnet::count_params(model);
    csv << v << ',' << r.iou << ',' << r.f_beta << ',' << r.mae << ',' << r.ber << ',' << counts.total << ','
        << counts.trainable << ',' << c.seed << ',' << lgnet::config_hash(c) << '\n';
    meta["variants"].push_back({{"variant", v}, {"config_hash", lgnet::config_hash(c)}, {"seed", c.seed}});
    std::cout << v << ": iou " << r.iou << '\n';
  }
  write_json(out / "ablation.json", meta);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-backbone glass segmentation: data, training, evaluation and benchmarks"};
  app.require_subcommand(1);

  CommonFlags gen_flags, train_flags, eval_flags, bench_flags, ablate_flags;
  int count = 512;
  std::string split = "train";
  auto* gen = app.add_subcommand("generate", "write a synthetic dataset split");
  add_common(gen, gen_flags);
  gen->add_option("--count", count, "number of samples");
  gen->add_option("--split", split, "split name (train, val, test)");

  std::optional<std::string> resume;
  int max_steps = -1;
  std::optional<int> epochs;
  auto* tr = app.add_subcommand("train", "train a model");
  add_common(tr, train_flags);
  tr->add_option("--resume", resume, "checkpoint to continue from");
  tr->add_option("--max-steps", max_steps, "stop after this many optimizer steps");
  tr->add_option("--epochs", epochs, "epochs (overrides config)");

  std::string checkpoint;
  std::vector<std::string> data;
  bool overlays = false;
  bool calibration = false;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev, eval_flags);
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ev->add_option("--data", data, "dataset directories (default: the config's validation split)");
  ev->add_flag("--overlays", overlays, "write TP/FP/FN overlay PNGs");
  ev->add_flag("--calibration", calibration, "write reliability-diagram CSV and plot");

  std::string bench_checkpoint;
  std::optional<int> passes;
  std::optional<int> side;
  auto* be = app.add_subcommand("bench", "time single-image forward passes");
  add_common(be, bench_flags);
  be->add_option("--checkpoint", bench_checkpoint, "checkpoint file (default: freshly initialized weights)");
  be->add_option("--passes", passes, "timed passes (overrides config)");
  be->add_option("--side", side, "input side in pixels");

  std::vector<std::string> variants;
  std::optional<int> ablate_epochs;
  auto* ab = app.add_subcommand("ablate", "train and evaluate several variants under one seed");
  add_common(ab, ablate_flags);
  ab->add_option("--variants", variants, "variants to run")->delimiter(',');
  ab->add_option("--epochs", ablate_epochs, "epochs (overrides config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInvalid;
  }

  try {
    if (gen->parsed()) return cmd_generate(resolve(gen_flags), count, split);
    if (tr->parsed()) {
      ExperimentConfig c = resolve(train_flags);
      if (epochs) c.train.epochs = *epochs;
      return cmd_train(c, resume, max_steps);
    }
    if (ev->parsed()) return cmd_eval(resolve(eval_flags), checkpoint, data, overlays, calibration);
    if (be->parsed()) return cmd_bench(resolve(bench_flags), bench_checkpoint, passes, side);
    if (ab->parsed()) {
      ExperimentConfig c = resolve(ablate_flags);
      if (ablate_epochs) c.train.epochs = *ablate_epochs;
      return cmd_ablate(c, variants);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << '\n';
    return kFailure;
  }
  return kInvalid;
}
