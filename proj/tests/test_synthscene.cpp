#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "pslab/dataset.hpp"
#include "pslab/errors.hpp"

using namespace pslab;

namespace {

World small_world(const Variation& v, int identities = 10, std::uint64_t seed = 3) {
  DatasetConfig c;
  c.seed = seed;
  c.identities = identities;
  c.variation = v;
  return make_world(c);
}

Variation no_variation() {
  Variation v;
  v.noise_std = 0.0;
  v.lighting_min = v.lighting_max = 1.0;
  v.occlusion_probability = 0.0;
  v.low_res_probability = 0.0;
  return v;
}

Scene single_box_scene(const BoundingBox& box) {
  Scene s;
  s.canvas = Image(128, 128, 100);
  PersonInstance p;
  p.box = box;
  s.instances.push_back(p);
  return s;
}

}  // namespace

TEST(Identities, Deterministic) {
  const auto a = generate_identities(12, 8, 99);
  const auto b = generate_identities(12, 8, 99);
  ASSERT_EQ(a.identities.size(), b.identities.size());
  for (std::size_t i = 0; i < a.identities.size(); ++i)
    EXPECT_EQ(a.identities[i].prototype, b.identities[i].prototype);
  EXPECT_EQ(a.min_pairwise_distance, b.min_pairwise_distance);
}

TEST(Identities, TwoDistinct) {
  const auto s = generate_identities(2, 8, 5);
  ASSERT_EQ(s.identities.size(), 2u);
  EXPECT_EQ(s.identities[0].prototype.size(), 8u);
  EXPECT_NE(s.identities[0].prototype, s.identities[1].prototype);
  EXPECT_NE(s.identities[0].id, s.identities[1].id);
}

TEST(Identities, MinPairwiseDistanceScan) {
  const auto s = generate_identities(50, 16, 17);
  const auto again = generate_identities(50, 16, 17);
  double best = INFINITY;
  for (std::size_t i = 0; i < again.identities.size(); ++i)
    for (std::size_t j = i + 1; j < again.identities.size(); ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < 16; ++k) {
        const double e = again.identities[i].prototype[k] - again.identities[j].prototype[k];
        d += e * e;
      }
      best = std::min(best, std::sqrt(d));
    }
  EXPECT_GT(s.min_pairwise_distance, 0.0);
  EXPECT_NEAR(s.min_pairwise_distance, best, 1e-12);
}

TEST(Identities, CountTooSmall) {
  EXPECT_THROW(generate_identities(1, 8, 1), ConfigError);
}

TEST(Render, NoUnknownWhenRateZero) {
  const World w = small_world(Variation{});
  SceneConfig sc;
  sc.unknown_person_rate = 0.0;
  const std::vector<int> pool = {0, 1, 2, 3, 4, 5};
  for (std::uint64_t seed = 0; seed < 30; ++seed)
    for (const auto& inst : render_scene(w, pool, sc, seed).instances)
      EXPECT_GE(inst.box.label, 0);
}

TEST(Render, VariationDisabledGivesIdenticalPatches) {
  const World w = small_world(no_variation());
  Rng a(1), b(2);
  const auto& proto = w.identities.identities[3].prototype;
  const auto p1 = render_person(w.decoder, proto, 3, no_variation(), a);
  const auto p2 = render_person(w.decoder, proto, 3, no_variation(), b);
  EXPECT_EQ(p1.patch.pixels, p2.patch.pixels);
}

TEST(Render, FullOcclusionPixelScan) {
  Variation v;
  v.occlusion_probability = 1.0;
  const World w = small_world(v);
  SceneConfig sc;
  const std::vector<int> pool = {0, 1, 2, 3};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (const auto& inst : render_scene(w, pool, sc, seed).instances) {
      EXPECT_TRUE(inst.occluded);
      ASSERT_GT(inst.occlusion_w, 0);
      ASSERT_GT(inst.occlusion_h, 0);
      for (int y = inst.occlusion_y; y < inst.occlusion_y + inst.occlusion_h; ++y)
        for (int x = inst.occlusion_x; x < inst.occlusion_x + inst.occlusion_w; ++x)
          EXPECT_EQ(inst.patch.at(x, y), 0);
    }
  }
}

TEST(Render, LowResIsBlockConstant) {
  Variation v = no_variation();
  v.low_res_probability = 1.0;
  const World w = small_world(v);
  Rng rng(4);
  const auto p = render_person(w.decoder, w.identities.identities[0].prototype, 0, v, rng);
  EXPECT_TRUE(p.low_res);
  for (int y = 0; y < p.patch.height; ++y)
    for (int x = 0; x < p.patch.width; ++x)
      EXPECT_EQ(p.patch.at(x, y), p.patch.at(x / 4 * 4, y / 4 * 4));
}

TEST(Render, BoxesInsideCanvas) {
  const World w = small_world(Variation{});
  SceneConfig sc;
  const std::vector<int> pool = {0, 1, 2, 3, 4};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Scene s = render_scene(w, pool, sc, seed);
    for (const auto& inst : s.instances) {
      EXPECT_GE(inst.box.x, 0);
      EXPECT_GE(inst.box.y, 0);
      EXPECT_LE(inst.box.x + inst.box.w, s.width());
      EXPECT_LE(inst.box.y + inst.box.h, s.height());
      EXPECT_TRUE(inst.box.label >= 0 || inst.box.label == kUnknownLabel);
    }
  }
}

TEST(Render, PersonTooLargeIsRejected) {
  const World w = small_world(Variation{});
  SceneConfig sc;
  sc.canvas_width = sc.canvas_height = 40;
  sc.min_box_width = sc.max_box_width = 30;
  const std::vector<int> pool = {0};
  EXPECT_THROW(render_scene(w, pool, sc, 1), ValidationError);
}

TEST(Render, UnknownRateWithinBinomialBounds) {
  const World w = small_world(Variation{}, 40);
  SceneConfig sc;
  sc.unknown_person_rate = 0.25;
  std::vector<int> pool(40);
  for (int i = 0; i < 40; ++i) pool[static_cast<std::size_t>(i)] = i;
  long n = 0, unknown = 0;
  for (std::uint64_t seed = 0; seed < 600; ++seed)
    for (const auto& inst : render_scene(w, pool, sc, seed).instances) {
      ++n;
      unknown += inst.box.label == kUnknownLabel;
    }
  const double p = 0.25, sd = std::sqrt(p * (1 - p) / n);
  EXPECT_NEAR(double(unknown) / n, p, 4 * sd);
}

TEST(Render, NearestPrototypeSeparability) {
  Variation v = no_variation();
  const World w = small_world(v, 30);
  std::vector<std::vector<double>> templates;
  for (const auto& id : w.identities.identities) {
    std::vector<double> t;
    for (double px : w.decoder.decode(id.prototype)) t.push_back(quantize_pixel(px));
    templates.push_back(t);
  }
  Rng rng(8);
  int correct = 0, total = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int label = static_cast<int>(rng.uniform_index(30));
    const auto p = render_person(w.decoder, w.identities.identities[label].prototype, label,
                                 v, rng);
    int best = -1;
    double best_d = INFINITY;
    for (std::size_t k = 0; k < templates.size(); ++k) {
      double d = 0.0;
      for (std::size_t i = 0; i < templates[k].size(); ++i) {
        const double e = templates[k][i] - p.patch.pixels[i];
        d += e * e;
      }
      if (d < best_d) best_d = d, best = static_cast<int>(k);
    }
    correct += best == label;
    ++total;
  }
  EXPECT_EQ(correct, total);
}

TEST(Proposals, AllMissedNoAlarms) {
  const Scene s = single_box_scene({10, 10, 20, 40, 3});
  ProposalConfig pc;
  pc.miss_rate = 1.0;
  pc.false_alarms_per_scene = 0.0;
  EXPECT_TRUE(with_proposals(s, pc, 1).proposals.empty());
}

TEST(Proposals, IdentitySimulator) {
  const World w = small_world(Variation{});
  const std::vector<int> pool = {0, 1, 2, 3};
  ProposalConfig pc;
  pc.jitter_std = 0.0;
  pc.miss_rate = 0.0;
  pc.false_alarms_per_scene = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Scene s = with_proposals(render_scene(w, pool, SceneConfig{}, seed), pc, seed);
    EXPECT_EQ(s.proposals, s.gt_boxes());
  }
}

TEST(Proposals, JitterMonteCarloIou) {
  const BoundingBox gt{40, 30, 32, 64, 1};
  const Scene s = single_box_scene(gt);
  ProposalConfig pc;
  pc.jitter_std = 2.0;
  pc.miss_rate = 0.0;
  pc.false_alarms_per_scene = 0.0;
  Rng rng(9);
  double sum = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto p = simulate_proposals(s, pc, rng);
    ASSERT_EQ(p.size(), 1u);
    EXPECT_EQ(p[0].label, 1);
    sum += iou(p[0], gt);
  }
  const double mean = sum / n;
  EXPECT_GT(mean, 0.5);
  EXPECT_LT(mean, 1.0);
}

TEST(Proposals, FalseAlarmsAreBackground) {
  const Scene s = single_box_scene({10, 10, 20, 40, 3});
  ProposalConfig pc;
  pc.miss_rate = 1.0;
  pc.false_alarms_per_scene = 5.0;
  Rng rng(10);
  long count = 0;
  for (int i = 0; i < 2000; ++i)
    for (const auto& b : simulate_proposals(s, pc, rng)) {
      EXPECT_EQ(b.label, kBackgroundLabel);
      EXPECT_LE(b.x + b.w, 128);
      ++count;
    }
  EXPECT_NEAR(count / 2000.0, 5.0, 0.25);
}

class SplitTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    DatasetConfig c;
    c.query_count = 20;
    dataset_ = new Dataset(generate_dataset(c));
  }
  static void TearDownTestSuite() { delete dataset_; }
  static Dataset* dataset_;
};
Dataset* SplitTest::dataset_ = nullptr;

TEST_F(SplitTest, IdentityDisjoint) {
  std::set<int> train, test;
  for (int s : dataset_->split.train_scenes)
    for (const auto& i : dataset_->scenes[s].instances)
      if (i.box.label >= 0) train.insert(i.box.label);
  for (int s : dataset_->split.test_scenes)
    for (const auto& i : dataset_->scenes[s].instances)
      if (i.box.label >= 0) test.insert(i.box.label);
  for (int id : test) EXPECT_EQ(train.count(id), 0u) << id;
  std::set<int> scenes(dataset_->split.train_scenes.begin(), dataset_->split.train_scenes.end());
  for (int s : dataset_->split.test_scenes) EXPECT_EQ(scenes.count(s), 0u);
  EXPECT_EQ(dataset_->split.train_scenes.size() + dataset_->split.test_scenes.size(), 500u);
}

TEST_F(SplitTest, QueriesHaveGalleryMatches) {
  ASSERT_EQ(dataset_->split.queries.size(), 20u);
  for (const auto& q : dataset_->split.queries) {
    const auto& probe = dataset_->scenes[q.scene].instances.at(q.instance);
    EXPECT_EQ(probe.box.label, q.identity);
    int scenes_with = 0, other = 0;
    for (int s : dataset_->split.test_scenes) {
      bool has = false;
      for (const auto& i : dataset_->scenes[s].instances) has |= i.box.label == q.identity;
      scenes_with += has;
      other += has && s != q.scene;
    }
    EXPECT_GE(scenes_with, 2);
    EXPECT_GE(other, 1);
  }
}

TEST_F(SplitTest, ShortfallIsConfigError) {
  try {
    make_splits(dataset_->scenes, 100000, 1);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("shortfall"), std::string::npos);
  }
}

TEST(Dataset, SeedDeterminism) {
  DatasetConfig c;
  c.scenes = 60;
  c.query_count = 5;
  const Dataset a = generate_dataset(c), b = generate_dataset(c);
  ASSERT_EQ(a.scenes.size(), b.scenes.size());
  for (std::size_t i = 0; i < a.scenes.size(); ++i) {
    EXPECT_EQ(a.scenes[i].canvas.pixels, b.scenes[i].canvas.pixels);
    EXPECT_EQ(a.scenes[i].proposals, b.scenes[i].proposals);
  }
  EXPECT_EQ(a.split.test_scenes, b.split.test_scenes);
}
