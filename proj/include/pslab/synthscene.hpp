#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pslab/box.hpp"
#include "pslab/rng.hpp"

namespace pslab {

/// Per-identity appearance variation knobs.
struct Variation {
  double noise_std = 0.08;
  double lighting_min = 0.4;
  double lighting_max = 1.6;
  double occlusion_probability = 0.1;
  double low_res_probability = 0.1;

  void validate() const;
};

struct IdentityPrototype {
  int id = 0;
  std::vector<double> prototype;
  Variation variation;
};

struct IdentitySet {
  std::vector<IdentityPrototype> identities;
  double min_pairwise_distance = 0.0;
};

/// Prototypes drawn i.i.d. N(0, 1) per coordinate from the seeded stream.
IdentitySet generate_identities(int count, int prototype_dim,
                                std::uint64_t seed,
                                const Variation& variation = {});

/// Grayscale 8-bit image, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}
  std::uint8_t& at(int x, int y) {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  std::uint8_t at(int x, int y) const {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  double value(int x, int y) const { return at(x, y) / 255.0; }
};

std::uint8_t quantize_pixel(double v);

/// Frozen random linear map from prototype space to patch pixels, squashed
/// through a logistic so every pixel lands in (0, 1).
class PatchDecoder {
 public:
  PatchDecoder() = default;
  PatchDecoder(int prototype_dim, int patch_width, int patch_height,
               std::uint64_t seed);

  int patch_width() const { return patch_w_; }
  int patch_height() const { return patch_h_; }
  int prototype_dim() const { return proto_dim_; }
  std::vector<double> decode(std::span<const double> prototype) const;

 private:
  int proto_dim_ = 0;
  int patch_w_ = 0;
  int patch_h_ = 0;
  std::vector<double> weights_;  // pixels x prototype_dim
  std::vector<double> bias_;
};

struct SceneConfig {
  int canvas_width = 128;
  int canvas_height = 128;
  int min_persons = 2;
  int max_persons = 4;
  double unknown_person_rate = 0.1;
  // person boxes are w x 2w with w in [min_box_width, max_box_width]
  int min_box_width = 16;
  int max_box_width = 32;
  int min_distractors = 1;
  int max_distractors = 3;
  double background_noise = 0.05;
  int placement_attempts = 20;

  void validate() const;
};

struct PersonInstance {
  BoundingBox box;  // box.label is the identity or kUnknownLabel
  Image patch;      // decoder-resolution rendering before pasting
  bool occluded = false;
  bool low_res = false;
  // zeroed sub-rectangle in patch pixels, valid when occluded
  int occlusion_x = 0, occlusion_y = 0, occlusion_w = 0, occlusion_h = 0;
};

struct Scene {
  int id = 0;
  int site = 0;
  Image canvas;
  std::vector<PersonInstance> instances;
  std::vector<BoundingBox> proposals;

  int width() const { return canvas.width; }
  int height() const { return canvas.height; }
  std::vector<BoundingBox> gt_boxes() const;
};

/// Everything the renderer needs that stays fixed across a dataset.
struct World {
  IdentitySet identities;
  PatchDecoder decoder;
  int prototype_dim = 16;
};

/// Renders the given identities into a patch: decoder output scaled by a
/// lighting draw plus Gaussian noise, optionally low-res and occluded.
PersonInstance render_person(const PatchDecoder& decoder,
                             std::span<const double> prototype, int label,
                             const Variation& variation, Rng& rng);

/// Places persons drawn from `identity_pool` onto a cluttered canvas.
/// Boxes may overlap. Throws ValidationError when a person cannot be placed.
Scene render_scene(const World& world, std::span<const int> identity_pool,
                   const SceneConfig& config, std::uint64_t seed);

struct ProposalConfig {
  double jitter_std = 0.5;
  double miss_rate = 0.1;
  double false_alarms_per_scene = 3.0;
  int min_box_width = 16;
  int max_box_width = 32;

  void validate() const;
};

/// Stand-in for a region proposal network: keeps, jitters and drops GT
/// boxes and adds background false alarms. Kept proposals carry the label
/// of their source box.
std::vector<BoundingBox> simulate_proposals(const Scene& scene,
                                            const ProposalConfig& config,
                                            Rng& rng);
Scene with_proposals(Scene scene, const ProposalConfig& config,
                     std::uint64_t seed);

struct QueryRecord {
  int scene = 0;         // index into the dataset scene list
  int instance = 0;      // probe instance within that scene
  int identity = 0;
  bool occluded = false;
  bool low_res = false;
};

struct DatasetSplit {
  std::vector<int> train_scenes;
  std::vector<int> test_scenes;
  std::vector<QueryRecord> queries;
};

/// Groups scenes into identity-connected components, assigns whole
/// components to the test side until `test_fraction` of scenes is reached,
/// then draws `query_count` probe boxes among test identities seen in at
/// least two test scenes.
DatasetSplit make_splits(std::span<const Scene> scenes, int query_count,
                         std::uint64_t seed, double test_fraction = 0.4);

/// Scenes of `scene_pool` grouped so that no labelled identity spans two
/// groups. Groups are ordered by their smallest scene index.
std::vector<std::vector<int>> identity_components(std::span<const Scene> scenes,
                                                  std::span<const int> scene_pool);

/// Query candidates restricted to `scene_pool`; used for validation folds.
std::vector<QueryRecord> draw_queries(std::span<const Scene> scenes,
                                      std::span<const int> scene_pool,
                                      int query_count, std::uint64_t seed);

}  // namespace pslab
