#include "lgnet/data.hpp"

#include "lgnet/decoder.hpp"
#include "lgnet/image_io.hpp"
#include "lgnet/resample.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

namespace lgnet {

namespace fs = std::filesystem;

void SceneSpec::validate() const {
  if (canvas_size < 8) throw std::invalid_argument("scene: canvas_size must be at least 8");
  if (min_panels < 0 || max_panels < min_panels) throw std::invalid_argument("scene: panel count range is not ordered");
  if (!(transparency_min >= 0.0 && transparency_min <= transparency_max && transparency_max <= 1.0))
    throw std::invalid_argument("scene: transparency range must be ordered inside [0, 1]");
  if (!(reflection_prob >= 0.0 && reflection_prob <= 1.0) || !(frame_prob >= 0.0 && frame_prob <= 1.0) ||
      !(rotated_prob >= 0.0 && rotated_prob <= 1.0))
    throw std::invalid_argument("scene: probabilities must lie in [0, 1]");
  if (background < -1 || background > 3) throw std::invalid_argument("scene: unknown background texture");
  if (!(panel_min_frac > 0.0 && panel_min_frac <= panel_max_frac && panel_max_frac <= 1.0))
    throw std::invalid_argument("scene: panel size range must be ordered inside (0, 1]");
  if (max_clutter < 0) throw std::invalid_argument("scene: max_clutter must be non-negative");
}

void to_json(nlohmann::json& j, const SceneSpec& s) {
  j = {{"canvas_size", s.canvas_size},         {"min_panels", s.min_panels},
       {"max_panels", s.max_panels},           {"transparency_min", s.transparency_min},
       {"transparency_max", s.transparency_max}, {"reflection_prob", s.reflection_prob},
       {"frame_prob", s.frame_prob},           {"background", s.background},
       {"rotated_prob", s.rotated_prob},       {"panel_min_frac", s.panel_min_frac},
       {"panel_max_frac", s.panel_max_frac},   {"max_clutter", s.max_clutter},
       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SceneSpec& s) {
  for (const auto& [key, value] : j.items()) {
    if (key == "canvas_size") value.get_to(s.canvas_size);
    else if (key == "min_panels") value.get_to(s.min_panels);
    else if (key == "max_panels") value.get_to(s.max_panels);
    else if (key == "transparency_min") value.get_to(s.transparency_min);
    else if (key == "transparency_max") value.get_to(s.transparency_max);
    else if (key == "reflection_prob") value.get_to(s.reflection_prob);
    else if (key == "frame_prob") value.get_to(s.frame_prob);
    else if (key == "background") value.get_to(s.background);
    else if (key == "rotated_prob") value.get_to(s.rotated_prob);
    else if (key == "panel_min_frac") value.get_to(s.panel_min_frac);
    else if (key == "panel_max_frac") value.get_to(s.panel_max_frac);
    else if (key == "max_clutter") value.get_to(s.max_clutter);
    else if (key == "seed") value.get_to(s.seed);
    else throw std::invalid_argument("scene: unknown key '" + key + "'");
  }
}

namespace {

using Color = Eigen::Array3f;

Color random_color(CounterRng& rng, double lo, double hi) {
  Color c;
  for (int i = 0; i < 3; ++i) c(i) = static_cast<float>(rng.uniform(lo, hi));
  return c;
}

RgbImage render_background(int s, int texture, CounterRng& rng) {
  RgbImage img = RgbImage::zeros(s, s);
  const Color a = random_color(rng, 0.05, 0.95);
  const Color b = random_color(rng, 0.05, 0.95);
  switch (texture) {
    case 0: {
      const double angle = rng.uniform(0.0, 6.283185307179586);
      const double gx = std::cos(angle);
      const double gy = std::sin(angle);
      struct Blob {
        double x, y, r;
        Color c;
      };
      std::vector<Blob> blobs(6);
      for (auto& bl : blobs) bl = {rng.uniform(0, s), rng.uniform(0, s), rng.uniform(0.05, 0.25) * s, random_color(rng, 0.0, 1.0)};
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          const double t = std::clamp(0.5 + ((x + 0.5) / s - 0.5) * gx + ((y + 0.5) / s - 0.5) * gy, 0.0, 1.0);
          Color c = a * static_cast<float>(1.0 - t) + b * static_cast<float>(t);
          for (const auto& bl : blobs) {
            const double d2 = ((x + 0.5 - bl.x) * (x + 0.5 - bl.x) + (y + 0.5 - bl.y) * (y + 0.5 - bl.y)) / (bl.r * bl.r);
            const auto w = static_cast<float>(0.8 * std::exp(-d2));
            c = c * (1.0f - w) + bl.c * w;
          }
          img.pixels.col(img.index(y, x)) = c;
        }
      break;
    }
    case 1: {
      const double angle = rng.uniform(0.0, 3.141592653589793);
      const double period = rng.uniform(6.0, 20.0);
      const double phase = rng.uniform(0.0, 6.283185307179586);
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          const double p = (x * std::cos(angle) + y * std::sin(angle)) * 6.283185307179586 / period + phase;
          const auto t = static_cast<float>(0.5 + 0.5 * std::sin(p));
          img.pixels.col(img.index(y, x)) = a * (1.0f - t) + b * t;
        }
      break;
    }
    case 2: {
      const int cell = rng.uniform_int(6, 16);
      const int ox = rng.uniform_int(0, cell - 1);
      const int oy = rng.uniform_int(0, cell - 1);
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) img.pixels.col(img.index(y, x)) = (((x + ox) / cell + (y + oy) / cell) % 2 == 0) ? a : b;
      break;
    }
    default: {
      const int cell = rng.uniform_int(8, 24);
      const int g = s / cell + 2;
      std::vector<Color> grid(static_cast<std::size_t>(g * g));
      for (auto& c : grid) c = random_color(rng, 0.0, 1.0);
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          const double fx = (x + 0.5) / cell;
          const double fy = (y + 0.5) / cell;
          const int ix = static_cast<int>(fx);
          const int iy = static_cast<int>(fy);
          const auto tx = static_cast<float>(fx - ix);
          const auto ty = static_cast<float>(fy - iy);
          auto at = [&](int yy, int xx) { return grid[static_cast<std::size_t>(yy * g + xx)]; };
          img.pixels.col(img.index(y, x)) = (at(iy, ix) * (1 - tx) + at(iy, ix + 1) * tx) * (1 - ty) +
                                            (at(iy + 1, ix) * (1 - tx) + at(iy + 1, ix + 1) * tx) * ty;
        }
      break;
    }
  }
  return img;
}

/// Bilinear sample with border clamping at continuous pixel coordinates
/// (integer coordinates hit pixel centres exactly).
Color sample_at(const RgbImage& img, double x, double y) {
  x = std::clamp(x, 0.0, img.width - 1.0);
  y = std::clamp(y, 0.0, img.height - 1.0);
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const auto tx = static_cast<float>(x - x0);
  const auto ty = static_cast<float>(y - y0);
  if (tx == 0.0f && ty == 0.0f) return img.pixels.col(img.index(y0, x0));
  const Color top = img.pixels.col(img.index(y0, x0)) * (1 - tx) + img.pixels.col(img.index(y0, x1)) * tx;
  const Color bot = img.pixels.col(img.index(y1, x0)) * (1 - tx) + img.pixels.col(img.index(y1, x1)) * tx;
  return top * (1 - ty) + bot * ty;
}

struct Panel {
  double cx, cy, half_w, half_h, cos_a, sin_a;
  double alpha;
  Color tint;
  double shift_x, shift_y;
  bool reflection;
  double refl_strength, refl_offset, refl_width, refl_slope;
  bool frame;
  double frame_width;
  Color frame_color;
};

Panel draw_panel(const SceneSpec& spec, CounterRng& rng) {
  const double s = spec.canvas_size;
  Panel p{};
  p.half_w = 0.5 * rng.uniform(spec.panel_min_frac, spec.panel_max_frac) * s;
  p.half_h = 0.5 * rng.uniform(spec.panel_min_frac, spec.panel_max_frac) * s;
  p.cx = rng.uniform(p.half_w, s - p.half_w);
  p.cy = rng.uniform(p.half_h, s - p.half_h);
  const double angle = rng.bernoulli(spec.rotated_prob) ? rng.uniform(-0.5, 0.5) : 0.0;
  p.cos_a = std::cos(angle);
  p.sin_a = std::sin(angle);
  p.alpha = rng.uniform(spec.transparency_min, spec.transparency_max);
  p.tint << static_cast<float>(rng.uniform(0.45, 0.75)), static_cast<float>(rng.uniform(0.7, 0.95)),
      static_cast<float>(rng.uniform(0.75, 1.0));
  // Refraction displaces the scene seen through the panel; it vanishes for a
  // fully transparent panel.
  const double dir = rng.uniform(0.0, 6.283185307179586);
  const double magnitude = 16.0 * (1.0 - p.alpha);
  p.shift_x = magnitude * std::cos(dir);
  p.shift_y = magnitude * std::sin(dir);
  p.reflection = rng.bernoulli(spec.reflection_prob);
  p.refl_strength = rng.uniform(0.25, 0.5);
  p.refl_offset = rng.uniform(-0.5, 0.5) * p.half_w;
  p.refl_width = rng.uniform(0.1, 0.25) * std::min(p.half_w, p.half_h) * 2.0;
  p.refl_slope = rng.bernoulli(0.5) ? 1.0 : -1.0;
  p.frame = rng.bernoulli(spec.frame_prob);
  p.frame_width = rng.uniform_int(2, 4);
  p.frame_color = random_color(rng, 0.05, 0.4);
  return p;
}

void composite_panel(const Panel& p, RgbImage& img, BinaryMask& mask) {
  const RgbImage behind = img;
  const auto a = static_cast<float>(p.alpha);
  const auto haze = static_cast<float>(1.0 - p.alpha);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double dx = x + 0.5 - p.cx;
      const double dy = y + 0.5 - p.cy;
      const double u = p.cos_a * dx + p.sin_a * dy;
      const double v = -p.sin_a * dx + p.cos_a * dy;
      const double du = p.half_w - std::abs(u);
      const double dv = p.half_h - std::abs(v);
      const Eigen::Index i = img.index(y, x);
      if (du >= 0.0 && dv >= 0.0) {
        Color c = a * sample_at(behind, x + p.shift_x, y + p.shift_y) + haze * p.tint;
        // Bright rim along the panel edge, scaled like the haze.
        const double edge = std::min(du, dv);
        if (edge < 2.5) c += static_cast<float>(4.0 * (1.0 - p.alpha) * (1.0 - edge / 2.5));
        if (p.reflection) {
          const double d = std::abs(u - p.refl_offset - p.refl_slope * v) / p.refl_width;
          if (d < 1.0) c += static_cast<float>(p.refl_strength * (1.0 - d));
        }
        img.pixels.col(i) = c;
        mask.values[static_cast<std::size_t>(i)] = 1;
      } else if (p.frame && du >= -p.frame_width && dv >= -p.frame_width) {
        img.pixels.col(i) = p.frame_color;
        mask.values[static_cast<std::size_t>(i)] = 0;
      }
    }
}

}  // namespace

Sample generate_scene(const SceneSpec& spec) {
  spec.validate();
  CounterRng rng(spec.seed, 0);
  const int s = spec.canvas_size;
  const int texture = spec.background < 0 ? rng.uniform_int(0, 3) : spec.background;
  Sample out{render_background(s, texture, rng), BinaryMask::zeros(s, s), "", spec.seed};

  const int clutter = rng.uniform_int(0, spec.max_clutter);
  for (int k = 0; k < clutter; ++k) {
    const int w = static_cast<int>(rng.uniform(0.1, 0.3) * s);
    const int h = static_cast<int>(rng.uniform(0.1, 0.3) * s);
    const int x0 = rng.uniform_int(0, s - w);
    const int y0 = rng.uniform_int(0, s - h);
    const Color c = random_color(rng, 0.0, 1.0);
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x) out.image.pixels.col(out.image.index(y, x)) = c;
  }

  const int n_panels = rng.uniform_int(spec.min_panels, spec.max_panels);
  for (int k = 0; k < n_panels; ++k) composite_panel(draw_panel(spec, rng), out.image, out.mask);

  out.image.pixels = (out.image.pixels.max(0.0f).min(1.0f) * 255.0f).round() / 255.0f;
  return out;
}

std::vector<Sample> generate_dataset(SceneSpec spec, std::uint64_t dataset_seed, int count, const std::string& id_prefix) {
  if (count < 0) throw std::invalid_argument("generate_dataset: negative count");
  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    spec.seed = derive_seed(dataset_seed, static_cast<std::uint64_t>(i));
    Sample s = generate_scene(spec);
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06d", i);
    s.id = id_prefix + buf;
    samples.push_back(std::move(s));
  }
  return samples;
}

Sample load_sample(const std::string& image_path, const std::string& mask_path) {
  if (!fs::exists(image_path)) throw std::runtime_error("missing image file: " + image_path);
  if (!fs::exists(mask_path)) throw std::runtime_error("missing mask file: " + mask_path);
  Sample s;
  s.image = read_rgb(image_path);
  const GrayImage g = read_gray_png(mask_path);
  if (g.height != s.image.height || g.width != s.image.width)
    throw std::runtime_error("image/mask size mismatch: " + image_path + " is " + std::to_string(s.image.height) + "x" +
                             std::to_string(s.image.width) + ", mask is " + std::to_string(g.height) + "x" +
                             std::to_string(g.width));
  s.mask = BinaryMask::zeros(g.height, g.width);
  std::transform(g.values.begin(), g.values.end(), s.mask.values.begin(), [](std::uint8_t v) { return v >= 128 ? 1 : 0; });
  s.id = fs::path(image_path).stem().string();
  return s;
}

std::vector<Sample> load_dataset(const std::string& dir) {
  const fs::path images = fs::path(dir) / "images";
  const fs::path masks = fs::path(dir) / "masks";
  if (!fs::is_directory(images)) throw std::runtime_error("dataset has no images/ directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(images)) {
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (entry.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Sample> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(load_sample(f.string(), (masks / (f.stem().string() + ".png")).string()));
  return out;
}

std::vector<Sample> load_datasets(const std::vector<std::string>& dirs) {
  std::vector<Sample> out;
  for (const auto& d : dirs) {
    auto part = load_dataset(d);
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  return out;
}

void write_samples(const std::string& dir, const std::vector<Sample>& samples) {
  const fs::path images = fs::path(dir) / "images";
  const fs::path masks = fs::path(dir) / "masks";
  std::error_code ec;
  fs::create_directories(images, ec);
  fs::create_directories(masks, ec);
  if (!fs::is_directory(images) || !fs::is_directory(masks)) throw std::runtime_error("cannot create dataset directory: " + dir);
  for (const auto& s : samples) {
    write_png((images / (s.id + ".png")).string(), s.image);
    write_mask_png((masks / (s.id + ".png")).string(), s.mask);
  }
}

nlohmann::json dataset_manifest(const SceneSpec& spec, std::uint64_t dataset_seed, const std::string& split,
                                const std::vector<Sample>& samples) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& s : samples) list.push_back({{"id", s.id}, {"seed", s.seed}});
  SceneSpec shown = spec;
  shown.seed = dataset_seed;
  return {{"format", "lgnet-synthetic-v1"},
          {"rng", CounterRng::kAlgorithm},
          {"split", split},
          {"dataset_seed", dataset_seed},
          {"count", samples.size()},
          {"scene_spec", shown},
          {"samples", list}};
}

Sample flip(const Sample& s, bool horizontal, bool vertical) {
  if (!horizontal && !vertical) return s;
  Sample out = s;
  const int h = s.mask.height;
  const int w = s.mask.width;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int sy = vertical ? h - 1 - y : y;
      const int sx = horizontal ? w - 1 - x : x;
      out.image.pixels.col(out.image.index(y, x)) = s.image.pixels.col(s.image.index(sy, sx));
      out.mask.at(y, x) = s.mask.at(sy, sx);
    }
  return out;
}

Sample augment_flip(const Sample& s, CounterRng& rng) {
  const bool horizontal = rng.bernoulli(0.5);
  const bool vertical = rng.bernoulli(0.5);
  return flip(s, horizontal, vertical);
}

RgbImage resize_image(const RgbImage& image, int out_h, int out_w) {
  if (image.height == out_h && image.width == out_w) return image;
  const auto ty = linear_taps(image.height, out_h);
  const auto tx = linear_taps(image.width, out_w);
  RgbImage out = RgbImage::zeros(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const auto& a = ty[static_cast<std::size_t>(y)];
    const auto fy = static_cast<float>(a.frac);
    for (int x = 0; x < out_w; ++x) {
      const auto& b = tx[static_cast<std::size_t>(x)];
      const auto fx = static_cast<float>(b.frac);
      const Color top = image.pixels.col(image.index(a.lo, b.lo)) * (1 - fx) + image.pixels.col(image.index(a.lo, b.hi)) * fx;
      const Color bot = image.pixels.col(image.index(a.hi, b.lo)) * (1 - fx) + image.pixels.col(image.index(a.hi, b.hi)) * fx;
      out.pixels.col(out.index(y, x)) = top * (1 - fy) + bot * fy;
    }
  }
  return out;
}

Sample resize_pair(const Sample& s, int side) {
  if (side <= 0 || side % 32 != 0) throw std::invalid_argument("resize_pair: side must be a positive multiple of 32");
  Sample out;
  out.image = resize_image(s.image, side, side);
  out.mask = resize_mask_nearest(s.mask, side, side);
  out.id = s.id;
  out.seed = s.seed;
  return out;
}

}  // namespace lgnet
