#include "lgnet/config.hpp"

#include "lgnet/hash.hpp"

#include <fstream>
#include <set>

namespace lgnet {

using nlohmann::json;

namespace {

/// Reads known keys from one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  Section& get(const std::string& key, T& out) {
    if (!j_.contains(key)) return *this;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
    return *this;
  }

  const json* child(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  std::string path(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (seen_.count(key) == 0) throw ConfigError("unknown config key '" + path_ + "." + key + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

ReductionMode parse_reduction(const std::string& s) {
  if (s == "on") return ReductionMode::squeeze_excitation;
  if (s == "conv1x1") return ReductionMode::pointwise;
  throw ConfigError("fusion.se_reduction must be 'on' or 'conv1x1', got '" + s + "'");
}

void read_backbones(const json& j, ModelConfig& m) {
  Section s(j, "backbones");
  if (const json* l = s.child("learned")) {
    Section sl(*l, s.path("learned"));
    sl.get("stage_channels", m.learned.stage_channels).get("blocks_per_stage", m.learned.blocks_per_stage).finish();
  }
  if (const json* g = s.child("general")) {
    Section sg(*g, s.path("general"));
    bool taps_given = g->contains("tap_indices");
    sg.get("patch_size", m.general.patch_size)
        .get("embed_dim", m.general.embed_dim)
        .get("num_blocks", m.general.num_blocks)
        .get("num_heads", m.general.num_heads)
        .get("mlp_ratio", m.general.mlp_ratio)
        .get("tap_indices", m.general.tap_indices)
        .get("seed", m.general.seed)
        .finish();
    if (!taps_given && g->contains("num_blocks")) m.general.tap_indices = default_taps(m.general.num_blocks);
  }
  if (const json* n = s.child("normalization")) {
    Section sn(*n, s.path("normalization"));
    sn.get("mean", m.normalization.mean).get("std", m.normalization.stddev).finish();
  }
  s.finish();
}

void read_fusion(const json& j, FusionConfig& f) {
  Section s(j, "fusion");
  std::string mode = f.mode == ReductionMode::pointwise ? "conv1x1" : "on";
  s.get("reduction_ratio", f.se.reduction_ratio)
      .get("se_reduction", mode)
      .get("kernel_size", f.kernel_size)
      .get("use_norm", f.use_norm)
      .get("final_activation", f.final_activation)
      .finish();
  f.mode = parse_reduction(mode);
}

void read_decoder(const json& j, DecoderConfig& d, LossWeights& w) {
  Section s(j, "decoder");
  s.get("embed_dim", d.embed_dim)
      .get("n_queries", d.n_queries)
      .get("n_layers", d.n_layers)
      .get("n_heads", d.n_heads)
      .get("ffn_dim", d.ffn_dim);
  if (const json* lw = s.child("loss_weights")) {
    Section sw(*lw, s.path("loss_weights"));
    sw.get("cls", w.cls).get("bce", w.bce).get("dice", w.dice).get("no_object", w.no_object).finish();
  }
  s.finish();
}

void read_data(const json& j, DataConfig& d) {
  Section s(j, "data");
  s.get("train_dirs", d.train_dirs)
      .get("val_dirs", d.val_dirs)
      .get("train_count", d.train_count)
      .get("val_count", d.val_count)
      .get("dataset_seed", d.dataset_seed)
      .get("native_eval", d.native_eval);
  if (const json* sc = s.child("scene")) {
    try {
      d.scene = sc->get<SceneSpec>();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("data.") + e.what());
    } catch (const json::exception& e) {
      throw ConfigError(std::string("data.scene: ") + e.what());
    }
  }
  s.finish();
}

void read_train(const json& j, TrainConfig& t) {
  Section s(j, "train");
  s.get("epochs", t.epochs)
      .get("batch_size", t.batch_size)
      .get("base_lr", t.base_lr)
      .get("weight_decay", t.weight_decay)
      .get("warmup_steps", t.warmup_steps)
      .get("beta1", t.beta1)
      .get("beta2", t.beta2)
      .get("adam_eps", t.adam_eps)
      .get("grad_clip", t.grad_clip)
      .get("image_side", t.image_side)
      .get("flips", t.flips)
      .get("val_every", t.val_every)
      .finish();
}

void read_metrics(const json& j, MetricConfig& m, int& bins) {
  Section s(j, "metrics");
  std::string mode = to_string(m.mae_mode);
  s.get("beta_sq", m.beta_sq)
      .get("threshold", m.threshold)
      .get("mae_mode", mode)
      .get("global_pooling", m.global_pooling)
      .get("calibration_bins", bins)
      .finish();
  try {
    m.mae_mode = parse_mae_mode(mode);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("metrics.") + e.what());
  }
}

json backbones_json(const ModelConfig& m) {
  return {{"learned", {{"stage_channels", m.learned.stage_channels}, {"blocks_per_stage", m.learned.blocks_per_stage}}},
          {"general",
           {{"patch_size", m.general.patch_size},
            {"embed_dim", m.general.embed_dim},
            {"num_blocks", m.general.num_blocks},
            {"num_heads", m.general.num_heads},
            {"mlp_ratio", m.general.mlp_ratio},
            {"tap_indices", m.general.tap_indices},
            {"seed", m.general.seed}}},
          {"normalization", {{"mean", m.normalization.mean}, {"std", m.normalization.stddev}}}};
}

json fusion_json(const FusionConfig& f) {
  return {{"reduction_ratio", f.se.reduction_ratio},
          {"se_reduction", f.mode == ReductionMode::pointwise ? "conv1x1" : "on"},
          {"kernel_size", f.kernel_size},
          {"use_norm", f.use_norm},
          {"final_activation", f.final_activation}};
}

json decoder_json(const DecoderConfig& d, const LossWeights& w) {
  return {{"embed_dim", d.embed_dim},
          {"n_queries", d.n_queries},
          {"n_layers", d.n_layers},
          {"n_heads", d.n_heads},
          {"ffn_dim", d.ffn_dim},
          {"loss_weights", {{"cls", w.cls}, {"bce", w.bce}, {"dice", w.dice}, {"no_object", w.no_object}}}};
}

json train_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},         {"batch_size", t.batch_size}, {"base_lr", t.base_lr},
          {"weight_decay", t.weight_decay}, {"warmup_steps", t.warmup_steps}, {"beta1", t.beta1},
          {"beta2", t.beta2},           {"adam_eps", t.adam_eps},     {"grad_clip", t.grad_clip},
          {"image_side", t.image_side}, {"flips", t.flips},           {"val_every", t.val_every}};
}

}  // namespace

void ExperimentConfig::validate() const {
  try {
    model.learned.validate();
    model.general.validate();
    model.decoder.validate();
    data.scene.validate();
    metrics.validate();
  } catch (const std::logic_error& e) {
    throw ConfigError(e.what());
  }
  (void)parse_variant(variant);
  for (const auto& v : ablate_variants) (void)parse_variant(v);
  if (model.fusion.kernel_size <= 0 || model.fusion.kernel_size % 2 == 0)
    throw ConfigError("fusion.kernel_size must be a positive odd number");
  if (model.fusion.se.reduction_ratio <= 0) throw ConfigError("fusion.reduction_ratio must be positive");
  if (train.image_side <= 0 || train.image_side % 32 != 0 || train.image_side % model.general.patch_size != 0)
    throw ConfigError("train.image_side must be a positive multiple of 32 and of the patch size");
  if (data.train_count < 0 || data.val_count < 0) throw ConfigError("data counts must be non-negative");
  if (bench.passes <= 0 || bench.warmup < 0) throw ConfigError("bench.passes must be positive, bench.warmup non-negative");
  if (calibration_bins <= 0) throw ConfigError("metrics.calibration_bins must be positive");
  if (train.epochs <= 0 || train.batch_size <= 0 || !(train.base_lr > 0.0) || train.warmup_steps < 0 || train.val_every <= 0)
    throw ConfigError("train: epochs, batch_size, base_lr and val_every must be positive");
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Section s(j, "config");
  if (const json* b = s.child("backbones")) read_backbones(*b, c.model);
  if (const json* f = s.child("fusion")) read_fusion(*f, c.model.fusion);
  if (const json* d = s.child("decoder")) read_decoder(*d, c.model.decoder, c.train.loss);
  if (const json* d = s.child("data")) read_data(*d, c.data);
  if (const json* t = s.child("train")) read_train(*t, c.train);
  if (const json* m = s.child("metrics")) read_metrics(*m, c.metrics, c.calibration_bins);
  if (const json* b = s.child("bench")) {
    Section sb(*b, "bench");
    sb.get("passes", c.bench.passes).get("warmup", c.bench.warmup).finish();
  }
  if (const json* a = s.child("ablate")) {
    Section sa(*a, "ablate");
    sa.get("variants", c.ablate_variants).finish();
  }
  s.get("variant", c.variant).get("out_dir", c.out_dir).get("seed", c.seed).finish();
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

json to_json(const ExperimentConfig& c) {
  return {{"backbones", backbones_json(c.model)},
          {"fusion", fusion_json(c.model.fusion)},
          {"decoder", decoder_json(c.model.decoder, c.train.loss)},
          {"data",
           {{"train_dirs", c.data.train_dirs},
            {"val_dirs", c.data.val_dirs},
            {"train_count", c.data.train_count},
            {"val_count", c.data.val_count},
            {"dataset_seed", c.data.dataset_seed},
            {"native_eval", c.data.native_eval},
            {"scene", c.data.scene}}},
          {"train", train_json(c.train)},
          {"metrics",
           {{"beta_sq", c.metrics.beta_sq},
            {"threshold", c.metrics.threshold},
            {"mae_mode", to_string(c.metrics.mae_mode)},
            {"global_pooling", c.metrics.global_pooling},
            {"calibration_bins", c.calibration_bins}}},
          {"bench", {{"passes", c.bench.passes}, {"warmup", c.bench.warmup}}},
          {"ablate", {{"variants", c.ablate_variants}}},
          {"variant", c.variant},
          {"out_dir", c.out_dir},
          {"seed", c.seed}};
}

std::string config_hash(const ExperimentConfig& c) {
  const json key = {{"backbones", backbones_json(c.model)},
                    {"fusion", fusion_json(c.model.fusion)},
                    {"decoder", decoder_json(c.model.decoder, c.train.loss)},
                    {"train", train_json(c.train)},
                    {"variant", c.variant},
                    {"seed", c.seed}};
  return to_hex(fnv1a(key.dump()));
}

ModelConfig resolved_model(const ExperimentConfig& c) {
  ModelConfig m = c.model;
  m.init_seed = c.seed;
  return m;
}

TrainConfig resolved_train(const ExperimentConfig& c) {
  TrainConfig t = c.train;
  t.seed = c.seed;
  return t;
}

std::uint64_t split_seed(const DataConfig& d, const std::string& split) {
  if (split == "train") return derive_seed(d.dataset_seed, 0);
  if (split == "val") return derive_seed(d.dataset_seed, 1);
  if (split == "test") return derive_seed(d.dataset_seed, 2);
  return derive_seed(d.dataset_seed, fnv1a(split));
}

}  // namespace lgnet
