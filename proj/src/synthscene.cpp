#include "pslab/synthscene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "pslab/errors.hpp"

namespace pslab {

void Variation::validate() const {
  if (noise_std < 0.0) throw ConfigError("noise_std must be >= 0");
  if (!(lighting_min > 0.0 && lighting_max >= lighting_min)) {
    throw ConfigError("lighting range must be a positive interval");
  }
  for (double p : {occlusion_probability, low_res_probability})
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("probability outside [0,1]");
}

void SceneConfig::validate() const {
  if (canvas_width < 8 || canvas_height < 8) throw ConfigError("canvas too small");
  if (min_persons < 1 || max_persons < min_persons) {
    throw ConfigError("person count range is empty");
  }
  if (!(unknown_person_rate >= 0.0 && unknown_person_rate <= 1.0)) {
    throw ConfigError("unknown_person_rate outside [0,1]");
  }
  if (min_box_width < 2 || max_box_width < min_box_width) {
    throw ConfigError("box width range is empty");
  }
  if (min_distractors < 0 || max_distractors < min_distractors) {
    throw ConfigError("distractor count range is empty");
  }
  if (background_noise < 0.0) throw ConfigError("background_noise must be >= 0");
  if (placement_attempts < 1) throw ConfigError("placement_attempts must be >= 1");
}

void ProposalConfig::validate() const {
  if (jitter_std < 0.0) throw ConfigError("jitter_std must be >= 0");
  if (!(miss_rate >= 0.0 && miss_rate <= 1.0)) {
    throw ConfigError("miss_rate outside [0,1]");
  }
  if (false_alarms_per_scene < 0.0) {
    throw ConfigError("false_alarms_per_scene must be >= 0");
  }
  if (min_box_width < 1 || max_box_width < min_box_width) {
    throw ConfigError("false alarm width range is empty");
  }
}

IdentitySet generate_identities(int count, int prototype_dim,
                                std::uint64_t seed,
                                const Variation& variation) {
  if (count < 2) throw ConfigError("need at least two identities");
  if (prototype_dim < 1) throw ConfigError("prototype_dim must be positive");
  variation.validate();
  Rng rng(derive_seed(seed, "identities"));
  IdentitySet set;
  for (int i = 0; i < count; ++i) {
    IdentityPrototype p;
    p.id = i;
    p.variation = variation;
    p.prototype.resize(static_cast<std::size_t>(prototype_dim));
    for (double& v : p.prototype) v = rng.normal();
    set.identities.push_back(std::move(p));
  }
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < set.identities.size(); ++i)
    for (std::size_t j = i + 1; j < set.identities.size(); ++j)
      best = std::min(best, std::sqrt(squared_distance(
                                set.identities[i].prototype,
                                set.identities[j].prototype)));
  set.min_pairwise_distance = best;
  return set;
}

std::uint8_t quantize_pixel(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

PatchDecoder::PatchDecoder(int prototype_dim, int patch_width,
                           int patch_height, std::uint64_t seed)
    : proto_dim_(prototype_dim), patch_w_(patch_width), patch_h_(patch_height) {
  if (prototype_dim < 1 || patch_width < 1 || patch_height < 1) {
    throw ConfigError("decoder dimensions must be positive");
  }
  Rng rng(derive_seed(seed, "decoder"));
  const std::size_t pixels = static_cast<std::size_t>(patch_w_) * patch_h_;
  weights_.resize(pixels * static_cast<std::size_t>(proto_dim_));
  const double scale = 1.5 / std::sqrt(static_cast<double>(proto_dim_));
  for (double& w : weights_) w = rng.normal(0.0, scale);
  bias_.resize(pixels);
  for (double& b : bias_) b = rng.normal(0.0, 0.3);
}

std::vector<double> PatchDecoder::decode(
    std::span<const double> prototype) const {
  if (static_cast<int>(prototype.size()) != proto_dim_) {
    throw ShapeError("prototype dimension does not match decoder");
  }
  std::vector<double> out(bias_.size());
  for (std::size_t p = 0; p < out.size(); ++p) {
    double acc = bias_[p];
    const double* w = weights_.data() + p * static_cast<std::size_t>(proto_dim_);
    for (int k = 0; k < proto_dim_; ++k) acc += w[k] * prototype[k];
    out[p] = 1.0 / (1.0 + std::exp(-acc));
  }
  return out;
}

std::vector<BoundingBox> Scene::gt_boxes() const {
  std::vector<BoundingBox> boxes;
  boxes.reserve(instances.size());
  for (const auto& inst : instances) boxes.push_back(inst.box);
  return boxes;
}

PersonInstance render_person(const PatchDecoder& decoder,
                             std::span<const double> prototype, int label,
                             const Variation& variation, Rng& rng) {
  const int pw = decoder.patch_width();
  const int ph = decoder.patch_height();
  PersonInstance inst;
  inst.box.label = label;
  // Fixed draw order keeps a patch a pure function of (prototype, stream).
  const double lighting =
      variation.lighting_max > variation.lighting_min
          ? rng.uniform(variation.lighting_min, variation.lighting_max)
          : variation.lighting_min;
  inst.low_res = rng.bernoulli(variation.low_res_probability);
  inst.occluded = rng.bernoulli(variation.occlusion_probability);

  std::vector<double> pixels = decoder.decode(prototype);
  for (double& v : pixels) {
    v *= lighting;
    if (variation.noise_std > 0.0) v += rng.normal(0.0, variation.noise_std);
    v = std::clamp(v, 0.0, 1.0);
  }
  if (inst.low_res) {
    // 4x block average then nearest-neighbour upsampling
    std::vector<double> coarse = pixels;
    for (int by = 0; by < ph; by += 4) {
      for (int bx = 0; bx < pw; bx += 4) {
        double sum = 0.0;
        int n = 0;
        for (int y = by; y < std::min(by + 4, ph); ++y)
          for (int x = bx; x < std::min(bx + 4, pw); ++x, ++n)
            sum += pixels[static_cast<std::size_t>(y) * pw + x];
        for (int y = by; y < std::min(by + 4, ph); ++y)
          for (int x = bx; x < std::min(bx + 4, pw); ++x)
            coarse[static_cast<std::size_t>(y) * pw + x] = sum / n;
      }
    }
    pixels = std::move(coarse);
  }
  if (inst.occluded) {
    inst.occlusion_w = std::max(1, rng.uniform_int(pw * 2 / 5, pw * 3 / 5));
    inst.occlusion_h = std::max(1, rng.uniform_int(ph * 2 / 5, ph * 3 / 5));
    inst.occlusion_x = rng.uniform_int(0, pw - inst.occlusion_w);
    inst.occlusion_y = rng.uniform_int(0, ph - inst.occlusion_h);
    for (int y = inst.occlusion_y; y < inst.occlusion_y + inst.occlusion_h; ++y)
      for (int x = inst.occlusion_x; x < inst.occlusion_x + inst.occlusion_w; ++x)
        pixels[static_cast<std::size_t>(y) * pw + x] = 0.0;
  }
  inst.patch = Image(pw, ph);
  for (std::size_t i = 0; i < pixels.size(); ++i)
    inst.patch.pixels[i] = quantize_pixel(pixels[i]);
  return inst;
}

namespace {

void paste_nearest(Image& canvas, const Image& patch, const BoundingBox& box) {
  const int x0 = static_cast<int>(box.x);
  const int y0 = static_cast<int>(box.y);
  const int w = static_cast<int>(box.w);
  const int h = static_cast<int>(box.h);
  for (int y = 0; y < h; ++y) {
    const int sy = std::min(patch.height - 1, y * patch.height / h);
    for (int x = 0; x < w; ++x) {
      const int sx = std::min(patch.width - 1, x * patch.width / w);
      canvas.at(x0 + x, y0 + y) = patch.at(sx, sy);
    }
  }
}

void paint_background(Image& canvas, const SceneConfig& config, Rng& rng) {
  const double base = rng.uniform(0.3, 0.7);
  const double gx = rng.uniform(-0.2, 0.2);
  const double gy = rng.uniform(-0.2, 0.2);
  for (int y = 0; y < canvas.height; ++y) {
    for (int x = 0; x < canvas.width; ++x) {
      double v = base + gx * (x / double(canvas.width) - 0.5) +
                 gy * (y / double(canvas.height) - 0.5);
      if (config.background_noise > 0.0) {
        v += rng.normal(0.0, config.background_noise);
      }
      canvas.at(x, y) = quantize_pixel(v);
    }
  }
  // rectangular clutter with a coarse block texture
  const int distractors =
      rng.uniform_int(config.min_distractors, config.max_distractors);
  for (int d = 0; d < distractors; ++d) {
    const int w = rng.uniform_int(config.min_box_width, config.max_box_width * 2);
    const int h = rng.uniform_int(config.min_box_width, config.max_box_width * 2);
    const int bw = std::min(w, canvas.width);
    const int bh = std::min(h, canvas.height);
    const int x0 = rng.uniform_int(0, canvas.width - bw);
    const int y0 = rng.uniform_int(0, canvas.height - bh);
    const int block = rng.uniform_int(2, 6);
    const int nbx = (bw + block - 1) / block;
    const int nby = (bh + block - 1) / block;
    std::vector<double> tex(static_cast<std::size_t>(nbx) * nby);
    for (double& t : tex) t = rng.uniform(0.05, 0.95);
    for (int y = 0; y < bh; ++y)
      for (int x = 0; x < bw; ++x)
        canvas.at(x0 + x, y0 + y) = quantize_pixel(
            tex[static_cast<std::size_t>(y / block) * nbx + x / block]);
  }
}

}  // namespace

Scene render_scene(const World& world, std::span<const int> identity_pool,
                   const SceneConfig& config, std::uint64_t seed) {
  config.validate();
  if (identity_pool.empty()) throw ConfigError("scene identity pool is empty");
  Rng rng(seed);
  Scene scene;
  scene.canvas = Image(config.canvas_width, config.canvas_height);
  paint_background(scene.canvas, config, rng);

  const int persons = rng.uniform_int(config.min_persons, config.max_persons);
  std::vector<int> pool(identity_pool.begin(), identity_pool.end());
  for (int p = 0; p < persons; ++p) {
    int label = kUnknownLabel;
    std::vector<double> prototype;
    Variation variation;
    const bool unknown = rng.bernoulli(config.unknown_person_rate);
    if (!unknown && !pool.empty()) {
      // each identity appears at most once per scene
      const std::size_t k = rng.uniform_index(pool.size());
      label = pool[k];
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(k));
      const auto& ident = world.identities.identities.at(static_cast<std::size_t>(label));
      prototype = ident.prototype;
      variation = ident.variation;
    } else {
      prototype.resize(static_cast<std::size_t>(world.decoder.prototype_dim()));
      for (double& v : prototype) v = rng.normal();
      if (!world.identities.identities.empty()) {
        variation = world.identities.identities.front().variation;
      }
    }
    PersonInstance inst =
        render_person(world.decoder, prototype, label, variation, rng);

    bool placed = false;
    for (int attempt = 0; attempt < config.placement_attempts && !placed;
         ++attempt) {
      const int w = rng.uniform_int(config.min_box_width, config.max_box_width);
      const int h = 2 * w;
      if (w > config.canvas_width || h > config.canvas_height) continue;
      inst.box.x = rng.uniform_int(0, config.canvas_width - w);
      inst.box.y = rng.uniform_int(0, config.canvas_height - h);
      inst.box.w = w;
      inst.box.h = h;
      placed = true;
    }
    if (!placed) {
      throw ValidationError("person box does not fit a " +
                            std::to_string(config.canvas_width) + "x" +
                            std::to_string(config.canvas_height) + " canvas");
    }
    paste_nearest(scene.canvas, inst.patch, inst.box);
    scene.instances.push_back(std::move(inst));
  }
  return scene;
}

std::vector<BoundingBox> simulate_proposals(const Scene& scene,
                                            const ProposalConfig& config,
                                            Rng& rng) {
  std::vector<BoundingBox> proposals;
  for (const auto& inst : scene.instances) {
    if (rng.bernoulli(config.miss_rate)) continue;
    BoundingBox b = inst.box;
    if (config.jitter_std > 0.0) {
      b.x += rng.normal(0.0, config.jitter_std);
      b.y += rng.normal(0.0, config.jitter_std);
      b.w += rng.normal(0.0, config.jitter_std);
      b.h += rng.normal(0.0, config.jitter_std);
      b.w = std::max(b.w, 2.0);
      b.h = std::max(b.h, 2.0);
      b = clamp_to_canvas(b, scene.width(), scene.height());
    }
    proposals.push_back(b);
  }
  const int alarms = rng.poisson(config.false_alarms_per_scene);
  for (int a = 0; a < alarms; ++a) {
    const int w = std::min(rng.uniform_int(config.min_box_width, config.max_box_width),
                           scene.width());
    const int h = std::min(2 * w, scene.height());
    BoundingBox b;
    b.x = rng.uniform_int(0, scene.width() - w);
    b.y = rng.uniform_int(0, scene.height() - h);
    b.w = w;
    b.h = h;
    b.label = kBackgroundLabel;
    proposals.push_back(b);
  }
  return proposals;
}

Scene with_proposals(Scene scene, const ProposalConfig& config,
                     std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  scene.proposals = simulate_proposals(scene, config, rng);
  return scene;
}

namespace {

int find_root(std::vector<int>& parent, int x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

}  // namespace

std::vector<QueryRecord> draw_queries(std::span<const Scene> scenes,
                                      std::span<const int> scene_pool,
                                      int query_count, std::uint64_t seed) {
  std::map<int, std::set<int>> appearances;
  for (int s : scene_pool)
    for (const auto& inst : scenes[static_cast<std::size_t>(s)].instances)
      if (inst.box.label >= 0) appearances[inst.box.label].insert(s);

  std::vector<QueryRecord> candidates;
  for (int s : scene_pool) {
    const auto& scene = scenes[static_cast<std::size_t>(s)];
    for (std::size_t i = 0; i < scene.instances.size(); ++i) {
      const auto& inst = scene.instances[i];
      if (inst.box.label < 0 || appearances[inst.box.label].size() < 2) continue;
      candidates.push_back({s, static_cast<int>(i), inst.box.label,
                            inst.occluded, inst.low_res});
    }
  }
  if (static_cast<int>(candidates.size()) < query_count) {
    throw ConfigError("only " + std::to_string(candidates.size()) +
                      " probe boxes belong to identities seen in two or more "
                      "scenes; " + std::to_string(query_count) +
                      " queries requested (shortfall " +
                      std::to_string(query_count - static_cast<int>(candidates.size())) +
                      ")");
  }
  Rng rng(derive_seed(seed, "queries"));
  for (std::size_t i = 0; i < static_cast<std::size_t>(query_count); ++i) {
    const std::size_t j = i + rng.uniform_index(candidates.size() - i);
    std::swap(candidates[i], candidates[j]);
  }
  candidates.resize(static_cast<std::size_t>(query_count));
  std::sort(candidates.begin(), candidates.end(),
            [](const QueryRecord& a, const QueryRecord& b) {
              return std::tie(a.scene, a.instance) < std::tie(b.scene, b.instance);
            });
  return candidates;
}

std::vector<std::vector<int>> identity_components(std::span<const Scene> scenes,
                                                  std::span<const int> scene_pool) {
  const int n = static_cast<int>(scene_pool.size());
  std::vector<int> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  std::map<int, int> first_seen;
  for (int k = 0; k < n; ++k) {
    for (const auto& inst : scenes[static_cast<std::size_t>(scene_pool[k])].instances) {
      if (inst.box.label < 0) continue;
      auto [it, fresh] = first_seen.emplace(inst.box.label, k);
      if (!fresh) parent[find_root(parent, k)] = find_root(parent, it->second);
    }
  }
  std::map<int, std::vector<int>> groups;
  for (int k = 0; k < n; ++k) groups[find_root(parent, k)].push_back(scene_pool[k]);
  std::vector<std::vector<int>> out;
  for (auto& [root, members] : groups) {
    std::sort(members.begin(), members.end());
    out.push_back(std::move(members));
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return out;
}

DatasetSplit make_splits(std::span<const Scene> scenes, int query_count,
                         std::uint64_t seed, double test_fraction) {
  if (query_count < 1) throw ConfigError("query_count must be positive");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("test_fraction must lie in (0, 1)");
  }
  std::vector<int> all(scenes.size());
  std::iota(all.begin(), all.end(), 0);
  auto groups = identity_components(scenes, all);
  if (groups.size() < 2) {
    throw ConfigError("scenes form a single identity-connected group; no "
                      "identity-disjoint split exists");
  }
  Rng rng(derive_seed(seed, "split"));
  for (std::size_t i = groups.size(); i > 1; --i)
    std::swap(groups[i - 1], groups[rng.uniform_index(i)]);

  DatasetSplit split;
  const double target = test_fraction * static_cast<double>(scenes.size());
  std::size_t g = 0;
  for (; g + 1 < groups.size() && static_cast<double>(split.test_scenes.size()) < target; ++g)
    split.test_scenes.insert(split.test_scenes.end(), groups[g].begin(),
                             groups[g].end());
  for (; g < groups.size(); ++g)
    split.train_scenes.insert(split.train_scenes.end(), groups[g].begin(),
                              groups[g].end());
  std::sort(split.test_scenes.begin(), split.test_scenes.end());
  std::sort(split.train_scenes.begin(), split.train_scenes.end());
  split.queries = draw_queries(scenes, split.test_scenes, query_count, seed);
  return split;
}

}  // namespace pslab
