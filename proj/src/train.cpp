#include "lgnet/train.hpp"

#include "lgnet/hash.hpp"
#include "lgnet/resample.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace lgnet {

namespace fs = std::filesystem;

std::string to_hex(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

void TrainConfig::validate(int n_train) const {
  if (epochs <= 0 || batch_size <= 0 || image_side <= 0 || val_every <= 0)
    throw std::invalid_argument("train: epochs, batch_size, image_side and val_every must be positive");
  if (!(base_lr > 0.0) || weight_decay < 0.0 || warmup_steps < 0)
    throw std::invalid_argument("train: base_lr must be positive, weight_decay and warmup_steps non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0))
    throw std::invalid_argument("train: invalid Adam coefficients");
  if (image_side % 32 != 0) throw std::invalid_argument("train: image_side must be a multiple of 32");
  if (n_train <= 0) throw std::invalid_argument("train: empty training set");
  if (warmup_steps >= total_steps(*this, n_train))
    throw std::invalid_argument("train: warmup_steps must be smaller than the total step count");
}

int total_steps(const TrainConfig& cfg, int n_train) {
  return cfg.epochs * ((n_train + cfg.batch_size - 1) / cfg.batch_size);
}

double lr_at(int step, double base_lr, int warmup_steps, int total) {
  if (step < 0 || step > total) throw std::out_of_range("lr_at: step outside [0, total_steps]");
  if (warmup_steps >= total) throw std::invalid_argument("lr_at: warmup must end before total_steps");
  if (step < warmup_steps) return base_lr * (static_cast<double>(step) / warmup_steps);
  return base_lr * (static_cast<double>(total - step) / (total - warmup_steps));
}

AdamW::AdamW(const ParameterStore<float>& store, double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store[i].frozen) continue;
    indices_.push_back(i);
    const auto& v = store[i].value;
    moments_.push_back({Matrix<float>::Zero(v.rows(), v.cols()), Matrix<float>::Zero(v.rows(), v.cols())});
  }
}

void AdamW::step(ParameterStore<float>& store, const std::vector<Matrix<float>>& grads, double lr) {
  if (grads.size() != indices_.size()) throw std::invalid_argument("AdamW: gradient count mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const auto b1 = static_cast<float>(beta1_);
  const auto b2 = static_cast<float>(beta2_);
  const auto step_size = static_cast<float>(lr / c1);
  const auto inv_sqrt_c2 = static_cast<float>(1.0 / std::sqrt(c2));
  const auto eps = static_cast<float>(eps_);
  const auto decay = static_cast<float>(1.0 - lr * weight_decay_);
  for (std::size_t k = 0; k < indices_.size(); ++k) {
    auto& p = store[indices_[k]].value;
    auto& [m, v] = moments_[k];
    const auto& g = grads[k];
    m = b1 * m + (1.0f - b1) * g;
    v = b2 * v + (1.0f - b2) * g.cwiseProduct(g);
    p *= decay;
    p.array() -= step_size * m.array() / (v.array().sqrt() * inv_sqrt_c2 + eps);
  }
}

void write_history_csv(const std::string& path, const TrainHistory& h) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "step,epoch,loss,lr\n" << std::setprecision(10);
  for (const auto& s : h.steps) out << s.step << ',' << s.epoch << ',' << s.loss << ',' << s.lr << '\n';
}

void write_epochs_csv(const std::string& path, const TrainHistory& h) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "epoch,train_loss,val_iou,val_f_beta,val_mae,val_ber\n" << std::setprecision(10);
  for (const auto& e : h.epochs) {
    out << e.epoch << ',' << e.train_loss;
    if (e.validated) out << ',' << e.val_iou << ',' << e.val_f_beta << ',' << e.val_mae << ',' << e.val_ber;
    else out << ",,,,";
    out << '\n';
  }
}

namespace {

constexpr char kMagic[8] = {'L', 'G', 'N', 'E', 'T', 'C', 'K', '1'};

void append(std::vector<float>& data, const Matrix<float>& m) {
  data.insert(data.end(), m.data(), m.data() + m.size());
}

void copy_block(const std::vector<float>& data, std::size_t offset, Matrix<float>& dst) {
  if (offset + static_cast<std::size_t>(dst.size()) > data.size()) throw std::runtime_error("checkpoint: truncated data");
  std::memcpy(dst.data(), data.data() + offset, static_cast<std::size_t>(dst.size()) * sizeof(float));
}

}  // namespace

std::uint64_t parameter_hash(const ParameterStore<float>& store, bool include_frozen) {
  std::uint64_t h = fnv1a("");
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = store[i];
    if (p.frozen && !include_frozen) continue;
    h = fnv1a(p.name, h);
    const std::int64_t shape[2] = {p.value.rows(), p.value.cols()};
    h = fnv1a(shape, sizeof shape, h);
    h = fnv1a(p.value.data(), static_cast<std::size_t>(p.value.size()) * sizeof(float), h);
  }
  return h;
}

Checkpoint make_checkpoint(const Model& model, const AdamW* optimizer, nlohmann::json meta) {
  Checkpoint ckpt;
  ckpt.index = std::move(meta);
  ckpt.index["format"] = "lgnet-checkpoint-v1";
  ckpt.index["variant"] = to_string(model.variant());
  ckpt.index["parameter_hash"] = to_hex(parameter_hash(model.parameters()));
  nlohmann::json params = nlohmann::json::array();
  const auto& store = model.parameters();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = store[i];
    params.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}, {"offset", ckpt.data.size()},
                      {"frozen", p.frozen}});
    append(ckpt.data, p.value);
  }
  ckpt.index["params"] = params;
  if (optimizer) {
    nlohmann::json entries = nlohmann::json::array();
    for (std::size_t k = 0; k < optimizer->state_size(); ++k) {
      const auto& mo = optimizer->moments()[k];
      const std::size_t m_off = ckpt.data.size();
      append(ckpt.data, mo.m);
      const std::size_t v_off = ckpt.data.size();
      append(ckpt.data, mo.v);
      entries.push_back({{"name", store[optimizer->param_indices()[k]].name}, {"m_offset", m_off}, {"v_offset", v_off}});
    }
    ckpt.index["optimizer"] = {{"step", optimizer->step_count()}, {"state", entries}};
  }
  ckpt.index["n_floats"] = ckpt.data.size();
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string idx = ckpt.index.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  const std::uint64_t len = idx.size();
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(idx.data(), static_cast<std::streamsize>(idx.size()));
  out.write(reinterpret_cast<const char*>(ckpt.data.data()), static_cast<std::streamsize>(ckpt.data.size() * sizeof(float)));
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw std::runtime_error("not a checkpoint file: " + path);
  std::string idx(len, '\0');
  in.read(idx.data(), static_cast<std::streamsize>(len));
  Checkpoint ckpt;
  ckpt.index = nlohmann::json::parse(idx);
  const auto n = ckpt.index.at("n_floats").get<std::size_t>();
  ckpt.data.resize(n);
  in.read(reinterpret_cast<char*>(ckpt.data.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!in) throw std::runtime_error("checkpoint truncated: " + path);
  return ckpt;
}

void restore_checkpoint(const Checkpoint& ckpt, Model& model, AdamW* optimizer) {
  auto& store = model.parameters();
  const auto& params = ckpt.index.at("params");
  if (params.size() != store.size()) throw std::runtime_error("checkpoint: parameter count does not match the model");
  for (const auto& e : params) {
    Parameter<float>* p = store.find(e.at("name").get<std::string>());
    if (!p) throw std::runtime_error("checkpoint: unknown parameter " + e.at("name").get<std::string>());
    if (e.at("rows").get<Eigen::Index>() != p->value.rows() || e.at("cols").get<Eigen::Index>() != p->value.cols())
      throw std::runtime_error("checkpoint: shape mismatch for " + p->name);
    copy_block(ckpt.data, e.at("offset").get<std::size_t>(), p->value);
  }
  if (!optimizer) return;
  if (!ckpt.index.contains("optimizer")) throw std::runtime_error("checkpoint has no optimizer state");
  const auto& opt = ckpt.index.at("optimizer");
  const auto& state = opt.at("state");
  if (state.size() != optimizer->state_size()) throw std::runtime_error("checkpoint: optimizer state size mismatch");
  for (std::size_t k = 0; k < state.size(); ++k) {
    if (state[k].at("name").get<std::string>() != store[optimizer->param_indices()[k]].name)
      throw std::runtime_error("checkpoint: optimizer state order mismatch");
    copy_block(ckpt.data, state[k].at("m_offset").get<std::size_t>(), optimizer->moments()[k].m);
    copy_block(ckpt.data, state[k].at("v_offset").get<std::size_t>(), optimizer->moments()[k].v);
  }
  optimizer->set_step_count(opt.at("step").get<std::int64_t>());
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<char> buf(1 << 16);
  std::uint64_t h = fnv1a("");
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h = fnv1a(buf.data(), static_cast<std::size_t>(in.gcount()), h);
  }
  return to_hex(h);
}

BatchGradients batch_gradients(const Model& model, const std::vector<const Sample*>& batch, const LossWeights& w) {
  if (batch.empty()) throw std::invalid_argument("batch_gradients: empty batch");
  const auto& store = model.parameters();
  BatchGradients out;
  std::vector<int> slot(store.size(), -1);
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store[i].frozen) continue;
    slot[i] = static_cast<int>(out.grads.size());
    out.grads.push_back(Matrix<float>::Zero(store[i].value.rows(), store[i].value.cols()));
  }
  for (const Sample* s : batch) {
    Binding<float> b(true);
    const auto result = model.forward(to_tensor<float>(s->image, model.config().normalization), b);
    const BinaryMask gt = resize_mask_nearest(s->mask, result.mask_h, result.mask_w);
    const auto terms = match_and_loss(result.queries.class_logits, result.mask_logits, gt, w);
    const double loss = terms.total.item();
    if (!std::isfinite(loss)) throw TrainingError("non-finite loss on sample '" + s->id + "'");
    out.loss += loss;
    backward(terms.total);
    b.for_each_grad([&](const Parameter<float>& p, const Matrix<float>& g) {
      out.grads[static_cast<std::size_t>(slot[store.index_of(&p)])] += g;
    });
  }
  const auto n = static_cast<float>(batch.size());
  for (auto& g : out.grads) g /= n;
  out.loss /= static_cast<double>(batch.size());
  return out;
}

namespace {

ConfidenceMap resize_confidence(const ConfidenceMap& c, int out_h, int out_w) {
  if (c.height == out_h && c.width == out_w) return c;
  const auto ty = linear_taps(c.height, out_h);
  const auto tx = linear_taps(c.width, out_w);
  ConfidenceMap out{out_h, out_w, Eigen::ArrayXd(static_cast<Eigen::Index>(out_h) * out_w)};
  for (int y = 0; y < out_h; ++y) {
    const auto& a = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < out_w; ++x) {
      const auto& b = tx[static_cast<std::size_t>(x)];
      const double top = (1 - b.frac) * c.at(a.lo, b.lo) + b.frac * c.at(a.lo, b.hi);
      const double bot = (1 - b.frac) * c.at(a.hi, b.lo) + b.frac * c.at(a.hi, b.hi);
      out.values(static_cast<Eigen::Index>(y) * out_w + x) = (1 - a.frac) * top + a.frac * bot;
    }
  }
  return out;
}

std::vector<std::size_t> shuffled(std::size_t n, CounterRng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

}  // namespace

ConfidenceMap predict_sample(const Model& model, const Sample& s, int side, bool native) {
  const RgbImage input = resize_image(s.image, side, side);
  ConfidenceMap conf = model.predict(input);
  return native ? resize_confidence(conf, s.image.height, s.image.width) : conf;
}

MetricReport evaluate_model(const Model& model, const std::vector<Sample>& dataset, int side, const MetricConfig& cfg,
                            bool native) {
  if (native) return evaluate_dataset([&](const Sample& s) { return predict_sample(model, s, side, true); }, dataset, cfg);
  std::vector<Sample> resized;
  resized.reserve(dataset.size());
  for (const auto& s : dataset) resized.push_back(resize_pair(s, side));
  return evaluate_dataset([&](const Sample& s) { return model.predict(s.image); }, resized, cfg);
}

TrainResult train(Model& model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const TrainConfig& cfg, const MetricConfig& metric_cfg, const TrainOptions& opts) {
  const int n = static_cast<int>(train_set.size());
  cfg.validate(n);
  const int per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int total = total_steps(cfg, n);
  auto log = [&](const std::string& msg) {
    if (opts.log) opts.log(msg);
  };

  std::vector<Sample> prepared;
  prepared.reserve(train_set.size());
  for (const auto& s : train_set) prepared.push_back(resize_pair(s, cfg.image_side));

  AdamW opt(model.parameters(), cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
  TrainResult result;
  if (opts.resume) {
    const Checkpoint ckpt = load_checkpoint(*opts.resume);
    restore_checkpoint(ckpt, model, &opt);
    if (ckpt.index.contains("best_val_iou")) result.best_val_iou = ckpt.index.at("best_val_iou").get<double>();
    if (ckpt.index.contains("best_epoch")) result.best_epoch = ckpt.index.at("best_epoch").get<int>();
    log("resumed at optimizer step " + std::to_string(opt.step_count()));
  }
  if (opt.step_count() % per_epoch != 0) throw TrainingError("resume: checkpoint is not at an epoch boundary");
  const int start_epoch = static_cast<int>(opt.step_count() / per_epoch);

  const bool write = !opts.out_dir.empty();
  if (write) fs::create_directories(opts.out_dir);
  auto checkpoint_meta = [&](int epoch) {
    nlohmann::json meta = opts.meta;
    meta["step"] = opt.step_count();
    meta["epoch"] = epoch;
    meta["best_val_iou"] = result.best_val_iou;
    meta["best_epoch"] = result.best_epoch;
    return meta;
  };

  bool stop = false;
  for (int epoch = start_epoch; epoch < cfg.epochs && !stop; ++epoch) {
    CounterRng order_rng(cfg.seed, 0x10000 + static_cast<std::uint64_t>(epoch));
    CounterRng flip_rng(cfg.seed, 0x20000 + static_cast<std::uint64_t>(epoch));
    const auto order = shuffled(prepared.size(), order_rng);
    double loss_sum = 0.0;
    int loss_count = 0;
    for (int bi = 0; bi < per_epoch; ++bi) {
      if (opts.max_steps >= 0 && opt.step_count() >= opts.max_steps) {
        stop = true;
        break;
      }
      std::vector<Sample> batch;
      const std::size_t lo = static_cast<std::size_t>(bi) * static_cast<std::size_t>(cfg.batch_size);
      const std::size_t hi = std::min(prepared.size(), lo + static_cast<std::size_t>(cfg.batch_size));
      for (std::size_t k = lo; k < hi; ++k)
        batch.push_back(cfg.flips ? augment_flip(prepared[order[k]], flip_rng) : prepared[order[k]]);
      std::vector<const Sample*> ptrs;
      for (const auto& s : batch) ptrs.push_back(&s);

      BatchGradients bg = batch_gradients(model, ptrs, cfg.loss);
      if (cfg.grad_clip > 0.0) {
        double sq = 0.0;
        for (const auto& g : bg.grads) sq += static_cast<double>(g.squaredNorm());
        const double norm = std::sqrt(sq);
        if (norm > cfg.grad_clip)
          for (auto& g : bg.grads) g *= static_cast<float>(cfg.grad_clip / norm);
      }
      const double lr = lr_at(static_cast<int>(opt.step_count()), cfg.base_lr, cfg.warmup_steps, total);
      opt.step(model.parameters(), bg.grads, lr);
      result.history.steps.push_back({static_cast<int>(opt.step_count()), epoch + 1, bg.loss, lr});
      loss_sum += bg.loss;
      ++loss_count;
    }
    if (loss_count == 0) break;

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = loss_sum / loss_count;
    const bool last = epoch + 1 == cfg.epochs || stop;
    if (!val_set.empty() && ((epoch + 1) % cfg.val_every == 0 || last)) {
      const MetricReport r = evaluate_model(model, val_set, cfg.image_side, metric_cfg);
      rec.validated = true;
      rec.val_iou = r.iou;
      rec.val_f_beta = r.f_beta;
      rec.val_mae = r.mae;
      rec.val_ber = r.ber;
      if (r.iou > result.best_val_iou) {
        result.best_val_iou = r.iou;
        result.best_epoch = epoch + 1;
        if (write) {
          result.best_checkpoint = (fs::path(opts.out_dir) / "best.ckpt").string();
          save_checkpoint(result.best_checkpoint, make_checkpoint(model, &opt, checkpoint_meta(epoch + 1)));
        }
      }
      if (last) {
        result.final_val = r;
        result.has_final_val = true;
      }
    }
    result.history.epochs.push_back(rec);
    std::ostringstream msg;
    msg << "epoch " << rec.epoch << " step " << opt.step_count() << " loss " << rec.train_loss;
    if (rec.validated) msg << " val_iou " << rec.val_iou;
    log(msg.str());
    if (write) {
      result.last_checkpoint = (fs::path(opts.out_dir) / "last.ckpt").string();
      save_checkpoint(result.last_checkpoint, make_checkpoint(model, &opt, checkpoint_meta(epoch + 1)));
    }
  }
  result.steps = opt.step_count();
  if (write) {
    write_history_csv((fs::path(opts.out_dir) / "history.csv").string(), result.history);
    write_epochs_csv((fs::path(opts.out_dir) / "epochs.csv").string(), result.history);
  }
  return result;
}

SpeedReport benchmark_speed(const Model& model, int n_passes, int image_side, int warmup_passes,
                            const std::function<void(bool timed)>& on_pass) {
  if (n_passes <= 0 || warmup_passes < 0) throw std::invalid_argument("benchmark_speed: invalid pass counts");
  CounterRng rng(0x5eed, 0);
  const ImageTensor<float> input{image_side, image_side,
                                 init::normal<float>(3, static_cast<Eigen::Index>(image_side) * image_side, 1.0, rng)};
  for (int i = 0; i < warmup_passes; ++i) {
    (void)model.predict(input);
    if (on_pass) on_pass(false);
  }
  double total = 0.0;
  int timed = 0;
  for (int i = 0; i < n_passes; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const ConfidenceMap c = model.predict(input);
    const auto t1 = std::chrono::steady_clock::now();
    if (c.values.size() == 0) throw std::runtime_error("benchmark_speed: empty prediction");
    total += std::chrono::duration<double>(t1 - t0).count();
    ++timed;
    if (on_pass) on_pass(true);
  }
  SpeedReport r;
  r.n_passes = timed;
  r.warmup_passes = warmup_passes;
  r.mean_latency = total / timed;
  r.fps = 1.0 / r.mean_latency;
  r.image_side = image_side;
  r.variant = to_string(model.variant());
  return r;
}

nlohmann::json to_json(const SpeedReport& r) {
  return {{"n_passes", r.n_passes}, {"warmup_passes", r.warmup_passes}, {"mean_latency_s", r.mean_latency},
          {"fps", r.fps},           {"image_side", r.image_side},       {"variant", r.variant}};
}

}  // namespace lgnet
