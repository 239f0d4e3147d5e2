#pragma once

// Optimization loop, learning-rate schedule, AdamW, checkpoints and the
// inference-speed benchmark.

#include "lgnet/data.hpp"
#include "lgnet/decoder.hpp"
#include "lgnet/metrics.hpp"
#include "lgnet/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lgnet {

using Model = GlassSegmenter<float>;

struct TrainConfig {
  int epochs = 30;
  int batch_size = 8;
  double base_lr = 1e-4;
  double weight_decay = 1e-4;
  int warmup_steps = 50;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;  // global gradient-norm clip, 0 disables
  int image_side = 128;
  bool flips = true;
  int val_every = 1;  // epochs between validation passes; the last epoch is always validated
  std::uint64_t seed = 0;
  LossWeights loss;

  void validate(int n_train) const;
};

/// epochs * ceil(n_train / batch_size).
int total_steps(const TrainConfig& cfg, int n_train);

/// Linear ramp 0 -> base_lr over the warmup, then linear decay to 0 at
/// total_steps.
double lr_at(int step, double base_lr, int warmup_steps, int total_steps);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Adam with decoupled weight decay. Holds moments only for trainable
/// parameters.
class AdamW {
 public:
  struct Moments {
    Matrix<float> m;
    Matrix<float> v;
  };

  AdamW() = default;
  AdamW(const ParameterStore<float>& store, double beta1, double beta2, double eps, double weight_decay);

  /// One update; `grads[i]` belongs to the i-th trainable parameter in store
  /// order.
  void step(ParameterStore<float>& store, const std::vector<Matrix<float>>& grads, double lr);

  std::size_t state_size() const { return moments_.size(); }
  std::int64_t step_count() const { return t_; }
  const std::vector<std::size_t>& param_indices() const { return indices_; }
  std::vector<Moments>& moments() { return moments_; }
  const std::vector<Moments>& moments() const { return moments_; }
  void set_step_count(std::int64_t t) { t_ = t; }

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8, weight_decay_ = 0.0;
  std::int64_t t_ = 0;
  std::vector<std::size_t> indices_;  // store index of each trainable parameter
  std::vector<Moments> moments_;
};

struct StepRecord {
  int step = 0;  // 1-based optimizer step
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  bool validated = false;
  double val_iou = 0.0;
  double val_f_beta = 0.0;
  double val_mae = 0.0;
  double val_ber = 0.0;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
};

void write_history_csv(const std::string& path, const TrainHistory& h);
void write_epochs_csv(const std::string& path, const TrainHistory& h);

/// Flat binary checkpoint: magic, JSON index length, JSON index, then
/// float32 arrays (parameters, then optimizer moments) at the offsets the
/// index records.
struct Checkpoint {
  nlohmann::json index;
  std::vector<float> data;
};

Checkpoint make_checkpoint(const Model& model, const AdamW* optimizer, nlohmann::json meta);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Copies checkpoint parameters (and moments when `optimizer` is given) into
/// place; throws on any name or shape disagreement.
void restore_checkpoint(const Checkpoint& ckpt, Model& model, AdamW* optimizer);

/// FNV-1a over a file's bytes, as hex.
std::string file_hash(const std::string& path);

/// FNV-1a over every parameter name and value in store order.
std::uint64_t parameter_hash(const ParameterStore<float>& store, bool include_frozen = true);

struct TrainOptions {
  std::string out_dir;               // empty: no files written
  nlohmann::json meta;               // embedded in every checkpoint (config hash, seed, ...)
  std::optional<std::string> resume;  // checkpoint to continue from
  int max_steps = -1;                // stop after this many optimizer steps (-1: full schedule)
  std::function<void(const std::string&)> log;
};

struct TrainResult {
  TrainHistory history;
  double best_val_iou = -1.0;
  int best_epoch = 0;
  MetricReport final_val;
  bool has_final_val = false;
  std::int64_t steps = 0;
  std::string best_checkpoint;
  std::string last_checkpoint;
};

/// Mean loss over a batch plus per-parameter gradients (trainable parameters,
/// store order), averaged over the batch.
struct BatchGradients {
  double loss = 0.0;
  std::vector<Matrix<float>> grads;
};

BatchGradients batch_gradients(const Model& model, const std::vector<const Sample*>& batch, const LossWeights& w);

TrainResult train(Model& model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const TrainConfig& cfg, const MetricConfig& metric_cfg, const TrainOptions& opts = {});

/// Predicts at side x side; with `native` the confidence map is resized back
/// to the sample's own size and compared to the original mask.
MetricReport evaluate_model(const Model& model, const std::vector<Sample>& dataset, int side, const MetricConfig& cfg,
                            bool native = false);

/// Model confidence for one sample at the evaluation side.
ConfidenceMap predict_sample(const Model& model, const Sample& s, int side, bool native = false);

struct SpeedReport {
  int n_passes = 0;
  int warmup_passes = 0;
  double mean_latency = 0.0;  // seconds
  double fps = 0.0;
  int image_side = 0;
  std::string variant;
};

/// Mean latency over `n_passes` timed predictions after untimed warm-up
/// passes. `on_pass` is told about every pass, timed or not.
SpeedReport benchmark_speed(const Model& model, int n_passes = 1000, int image_side = 96, int warmup_passes = 10,
                            const std::function<void(bool timed)>& on_pass = {});

nlohmann::json to_json(const SpeedReport& r);

}  // namespace lgnet
