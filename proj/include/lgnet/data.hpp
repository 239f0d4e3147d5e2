#pragma once

// Procedural glass scenes, the images/ + masks/ dataset layout, and the
// flip / resize transforms applied to image and mask in lockstep.

#include "lgnet/image.hpp"
#include "lgnet/rng.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace lgnet {

struct Sample {
  RgbImage image;
  BinaryMask mask;
  std::string id;
  std::uint64_t seed = 0;  // generator seed; 0 for loaded files
};

/// Background texture families.
enum class Texture { gradient_blobs = 0, stripes = 1, checker = 2, value_noise = 3 };

struct SceneSpec {
  int canvas_size = 128;
  int min_panels = 1;
  int max_panels = 2;
  double transparency_min = 0.55;  // alpha: share of the scene seen through the panel
  double transparency_max = 0.95;
  double reflection_prob = 0.5;
  double frame_prob = 0.5;
  int background = -1;  // texture family id, or -1 to draw one per scene
  double rotated_prob = 0.3;
  double panel_min_frac = 0.3;  // panel side as a fraction of the canvas
  double panel_max_frac = 0.7;
  int max_clutter = 3;  // opaque non-glass rectangles painted into the background
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const SceneSpec& s);
void from_json(const nlohmann::json& j, SceneSpec& s);

/// Renders one scene. Pixel values are quantized to 8-bit levels so that a
/// PNG round trip is lossless.
Sample generate_scene(const SceneSpec& spec);

/// Scenes for indices [0, count) with seeds derive_seed(dataset_seed, i).
std::vector<Sample> generate_dataset(SceneSpec spec, std::uint64_t dataset_seed, int count, const std::string& id_prefix);

/// Image (PNG or JPEG) plus 8-bit mask PNG; mask values >= 128 are glass.
Sample load_sample(const std::string& image_path, const std::string& mask_path);

/// Pairs images/<id>.<ext> with masks/<id>.png for every image, sorted by id.
std::vector<Sample> load_dataset(const std::string& dir);

/// Concatenation of several dataset directories, in argument order.
std::vector<Sample> load_datasets(const std::vector<std::string>& dirs);

/// Writes images/<id>.png and masks/<id>.png.
void write_samples(const std::string& dir, const std::vector<Sample>& samples);

Sample flip(const Sample& s, bool horizontal, bool vertical);

/// Independent horizontal and vertical flips, each with probability 0.5.
Sample augment_flip(const Sample& s, CounterRng& rng);

/// Bilinear image / nearest-neighbour mask resize to side x side.
Sample resize_pair(const Sample& s, int side);

RgbImage resize_image(const RgbImage& image, int out_h, int out_w);

/// Manifest of a generated split: ids, per-sample seeds and the scene spec.
nlohmann::json dataset_manifest(const SceneSpec& spec, std::uint64_t dataset_seed, const std::string& split,
                                const std::vector<Sample>& samples);

}  // namespace lgnet
