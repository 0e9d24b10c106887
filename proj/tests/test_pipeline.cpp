#include <gtest/gtest.h>

#include <cmath>

#include "pslab/dataset.hpp"
#include "pslab/errors.hpp"
#include "pslab/gradcheck.hpp"
#include "pslab/pipeline.hpp"

using namespace pslab;

namespace {

// independent bilinear sampler over a dense value grid
double bilinear_ref(const std::vector<double>& g, int w, int h, double fx, double fy) {
  fx = std::min(std::max(fx, 0.0), w - 1.0);
  fy = std::min(std::max(fy, 0.0), h - 1.0);
  const int x0 = int(std::floor(fx)), y0 = int(std::floor(fy));
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double ax = fx - x0, ay = fy - y0;
  auto v = [&](int x, int y) { return g[std::size_t(y) * w + x]; };
  return v(x0, y0) * (1 - ax) * (1 - ay) + v(x1, y0) * ax * (1 - ay) +
         v(x0, y1) * (1 - ax) * ay + v(x1, y1) * ax * ay;
}

DatasetConfig tiny_config() {
  DatasetConfig c;
  c.identities = 12;
  c.sites = 4;
  c.scenes = 80;
  c.query_count = 10;
  return c;
}

TrainSchedule short_schedule() {
  TrainSchedule s;
  s.step1 = {30, 0.05};
  s.step2 = {40, 0.02};
  s.step2_decay_after = 30;
  s.step3 = {40, 0.01};
  return s;
}

}  // namespace

TEST(LabelCandidates, IdenticalProposal) {
  const BoundingBox gt{10, 10, 20, 40, 7};
  const BoundingBox props[] = {{10, 10, 20, 40, kBackgroundLabel}};
  const auto c = label_candidates(props, std::span<const BoundingBox>(&gt, 1));
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].assigned_label, 7);
  EXPECT_EQ(c[0].source, CandidateSource::kProposal);
  EXPECT_EQ(*c[0].regression_target, (BoxDeltas{0, 0, 0, 0}));
  EXPECT_EQ(c[1].source, CandidateSource::kGroundTruth);
  EXPECT_EQ(c[1].assigned_label, 7);
  EXPECT_EQ(*c[1].regression_target, (BoxDeltas{0, 0, 0, 0}));
}

TEST(LabelCandidates, DisjointIsBackground) {
  const BoundingBox gt{10, 10, 20, 40, 7};
  const BoundingBox props[] = {{80, 60, 20, 40}};
  const auto c = label_candidates(props, std::span<const BoundingBox>(&gt, 1));
  EXPECT_EQ(c[0].assigned_label, kBackgroundLabel);
  EXPECT_FALSE(c[0].regression_target.has_value());
}

TEST(LabelCandidates, EmptyGtAllBackground) {
  const BoundingBox props[] = {{1, 1, 5, 5}, {20, 20, 9, 9}};
  const auto c = label_candidates(props, {});
  for (const auto& x : c) EXPECT_EQ(x.assigned_label, kBackgroundLabel);
}

TEST(LabelCandidates, MaxIouScanOracle) {
  Rng rng(41);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<BoundingBox> gt, props;
    for (int k = 0; k < 4; ++k)
      gt.push_back({rng.uniform(0, 60), rng.uniform(0, 60), rng.uniform(8, 30),
                    rng.uniform(8, 30), k * 3});
    for (int k = 0; k < 6; ++k)
      props.push_back({rng.uniform(0, 60), rng.uniform(0, 60), rng.uniform(8, 30),
                       rng.uniform(8, 30)});
    const auto c = label_candidates(props, gt);
    for (std::size_t p = 0; p < props.size(); ++p) {
      double best = 0.0;
      int label = kBackgroundLabel;
      for (const auto& g : gt) {
        const double v = iou(props[p], g);
        if (v > best) best = v, label = g.label;
      }
      EXPECT_EQ(c[p].assigned_label, best > 0.5 ? label : kBackgroundLabel);
    }
  }
}

TEST(LabelCandidates, PicksHigherOverlap) {
  // IoU 9/11 against A and 3/7 against B
  const BoundingBox a{0, 0, 10, 10, 3};
  const BoundingBox b{5, 0, 10, 10, 9};
  const BoundingBox p{1, 0, 10, 10};
  const BoundingBox gt[] = {a, b};
  ASSERT_GT(iou(p, a), 0.5);
  ASSERT_LT(iou(p, b), 0.5);
  const auto c = label_candidates(std::span<const BoundingBox>(&p, 1), gt);
  EXPECT_EQ(c[0].assigned_label, 3);
  EXPECT_THROW(label_candidates(std::span<const BoundingBox>(&p, 1), gt, 1.0), ConfigError);
}

TEST(ExtractRoi, IdentityCopy) {
  Image img(6, 4);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = std::uint8_t(i * 9);
  const auto out = extract_roi(img, {0, 0, 6, 4}, 6, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 6; ++x) EXPECT_DOUBLE_EQ(out[std::size_t(y) * 6 + x], img.value(x, y));
}

TEST(ExtractRoi, UniformField) {
  Image img(40, 40, 77);
  Rng rng(42);
  for (int i = 0; i < 50; ++i) {
    const BoundingBox b{rng.uniform(-5, 30), rng.uniform(-5, 30), rng.uniform(2, 20),
                        rng.uniform(2, 20)};
    for (double v : extract_roi(img, b, 5, 7)) EXPECT_NEAR(v, 77 / 255.0, 1e-12);
  }
}

TEST(ExtractRoi, CheckerboardDownscale) {
  const int n = 16;
  Image img(n, n);
  std::vector<double> grid;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) img.at(x, y) = ((x + y) % 2) ? 255 : 0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) grid.push_back(img.value(x, y));
  const auto out = extract_roi(img, {0, 0, n, n}, n / 2, n / 2);
  for (int r = 0; r < n / 2; ++r)
    for (int c = 0; c < n / 2; ++c)
      EXPECT_NEAR(out[std::size_t(r) * (n / 2) + c],
                  bilinear_ref(grid, n, n, (c + 0.5) * 2 - 0.5, (r + 0.5) * 2 - 0.5), 1e-12);
}

TEST(ExtractRoi, OutsideCanvas) {
  Image img(10, 10);
  EXPECT_THROW(extract_roi(img, {20, 20, 5, 5}, 2, 2), ValidationError);
  EXPECT_THROW(extract_roi(img, {-8, 0, 5, 5}, 2, 2), ValidationError);
}

TEST(Model, InferenceRepeatable) {
  ModelConfig mc;
  mc.dropout_site = DropoutSite::kBeforeFeatHead;
  PersonSearchModel m(mc, {0, 1, 2}, 5);
  Tensor x({3, std::size_t(mc.input_dim())}, 0.3);
  x[5] = 0.9;
  EXPECT_EQ(m.embed(x).values(), m.embed(x).values());
  EXPECT_EQ(m.infer(x).feat.values(), m.embed(x).values());
  EXPECT_THROW(m.embed(Tensor({1, 7}, 0.0)), ShapeError);
}

TEST(Model, ZeroPatchZeroBiasGivesZeroFeat) {
  ModelConfig mc;
  PersonSearchModel m(mc, {0, 1}, 6);
  for (const auto& p : m.parameters())
    if (p.name.find("bias") != std::string::npos)
      for (double& v : p.tensor->values()) v = 0.0;
  const Tensor f = m.embed(Tensor({2, std::size_t(mc.input_dim())}, 0.0));
  for (double v : f.values()) EXPECT_EQ(v, 0.0);
}

TEST(Model, DropoutDrawsDiffer) {
  ModelConfig mc;
  mc.dropout_site = DropoutSite::kBeforeFeatHead;
  PersonSearchModel m(mc, {0, 1}, 7);
  Rng rng(8);
  std::vector<double> v(std::size_t(mc.input_dim()));
  for (double& e : v) e = rng.uniform();
  const Tensor x({1, v.size()}, v);
  int equal = 0;
  std::vector<double> prev = m.forward(x, Mode::kTraining, &rng).feat.values();
  for (int i = 0; i < 1000; ++i) {
    auto cur = m.forward(x, Mode::kTraining, &rng).feat.values();
    equal += cur == prev;
    prev = std::move(cur);
  }
  EXPECT_LE(equal, 1);
}

TEST(Model, FullBackwardMatchesFiniteDifferences) {
  ModelConfig mc;
  mc.roi_width = 3;
  mc.roi_height = 4;
  mc.hidden = {7, 6};
  mc.feat_dim = 5;
  mc.dropout_site = DropoutSite::kBeforeFeatHead;
  PersonSearchModel m(mc, {0, 1, 2}, 9);
  Rng rng(10);
  std::vector<double> v(4 * std::size_t(mc.input_dim()));
  for (double& e : v) e = rng.uniform();
  const Tensor x({4, std::size_t(mc.input_dim())}, v);
  // freeze the dropout mask, one entry per batch row and hidden unit
  std::vector<double> mask(4 * 6);
  for (double& e : mask) e = rng.bernoulli(0.5) ? 1.0 : 0.0;
  int frozen = 0;
  for (auto& layer : m.feat_branch().layers())
    if (auto* d = std::get_if<DropoutLayer>(&layer)) {
      d->frozen_mask = mask;
      ++frozen;
    }
  ASSERT_EQ(frozen, 1);
  std::vector<double> gf(4 * 5), gl(4 * 4), gb(4 * 4);
  for (double& e : gf) e = rng.normal();
  for (double& e : gl) e = rng.normal();
  for (double& e : gb) e = rng.normal();
  auto loss = [&] {
    const ForwardOutput o = m.forward(x, Mode::kTraining, &rng);
    double s = 0.0;
    for (std::size_t i = 0; i < gf.size(); ++i) s += gf[i] * o.feat[i];
    for (std::size_t i = 0; i < gl.size(); ++i) s += gl[i] * o.logits[i];
    for (std::size_t i = 0; i < gb.size(); ++i) s += gb[i] * o.bbox[i];
    return s;
  };
  m.zero_grad();
  m.forward(x, Mode::kTraining, &rng);
  m.backward(Tensor({4, 5}, gf), Tensor({4, 4}, gl), Tensor({4, 4}, gb));
  const auto r = finite_diff_check(loss, m.parameters());
  EXPECT_LE(r.max_relative_error, 1e-5);
}

class TrainingTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { dataset_ = new Dataset(generate_dataset(tiny_config())); }
  static void TearDownTestSuite() { delete dataset_; }
  static Dataset* dataset_;
};
Dataset* TrainingTest::dataset_ = nullptr;

TEST_F(TrainingTest, UnknownOnlyBatchIsSkipped) {
  const auto& d = *dataset_;
  PersonSearchModel m(ModelConfig{}, identities_in(d, d.split.train_scenes), 1);
  CenterBank bank(32, 0.5);
  TrainingBatch b;
  const Scene& s = d.scenes[d.split.train_scenes[0]];
  CandidateBox c;
  c.box = s.instances[0].box;
  c.source = CandidateSource::kGroundTruth;
  c.assigned_label = kUnknownLabel;
  b.candidates = {c, c};
  const BoundingBox boxes[] = {c.box, c.box};
  b.patches = extract_batch(s, boxes, m.config());
  Rng rng(2);
  RoutingAudit audit;
  StepConfig sc;
  sc.lambda = 0.5;
  const auto r = train_step(m, bank, b, sc, rng, &audit);
  EXPECT_TRUE(r.skipped);
  EXPECT_FALSE(r.diagnostic.empty());
  EXPECT_EQ(audit.skipped_steps, 1);
  EXPECT_TRUE(bank.empty());
}

TEST_F(TrainingTest, LambdaZeroMatchesCenterDisabled) {
  const auto& d = *dataset_;
  const auto ids = identities_in(d, d.split.train_scenes);
  PersonSearchModel a(ModelConfig{}, ids, 3), b = a;
  CenterBank bank(32, 0.5);
  Rng batch_rng(4);
  StepConfig sc;
  sc.lambda = 0.0;
  sc.learning_rate = 0.02;
  for (int i = 0; i < 10; ++i) {
    const Scene* scenes[] = {&d.scenes[d.split.train_scenes[i]]};
    const auto batch = make_scene_batch(scenes, ProposalConfig{}, a.config(), batch_rng);
    Rng ra(100 + i), rb(100 + i);
    RoutingAudit audit;
    train_step(a, bank, batch, sc, ra, &audit);
    EXPECT_EQ(audit.center_rows, 0);

    // the same step written out with only the identification and box terms
    const ForwardOutput f = b.forward(batch.patches, Mode::kTraining, &rb);
    std::vector<std::size_t> rows, reg;
    std::vector<int> labels;
    for (std::size_t k = 0; k < batch.candidates.size(); ++k) {
      const auto& c = batch.candidates[k];
      if (c.assigned_label != kUnknownLabel) {
        rows.push_back(k);
        labels.push_back(b.class_index(c.assigned_label));
      }
      if (c.regression_target) reg.push_back(k);
    }
    const auto set = sample_rss_classes(labels, b.class_count(), sc.rss_negatives, rb);
    const auto id = rss_loss(f.logits.gather_rows(rows), labels, set);
    Tensor gl(f.logits.shape()), gb(f.bbox.shape());
    for (std::size_t k = 0; k < rows.size(); ++k)
      for (std::size_t j = 0; j < gl.cols(); ++j) gl.at(rows[k], j) = id.grad.at(k, j);
    Tensor target({reg.size(), 4});
    for (std::size_t k = 0; k < reg.size(); ++k)
      for (std::size_t j = 0; j < 4; ++j)
        target.at(k, j) = (*batch.candidates[reg[k]].regression_target)[j];
    const auto box = smoothed_l1(f.bbox.gather_rows(reg), target);
    for (std::size_t k = 0; k < reg.size(); ++k)
      for (std::size_t j = 0; j < 4; ++j) gb.at(reg[k], j) = box.grad.at(k, j);
    b.zero_grad();
    b.backward(Tensor(f.feat.shape()), gl, gb);
    sgd_step(b.parameters(), sc.learning_rate);
  }
  EXPECT_TRUE(bank.empty());
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    EXPECT_EQ(pa[i].tensor->values(), pb[i].tensor->values()) << pa[i].name;
}

TEST_F(TrainingTest, RoutingAuditCountsOnlyAllowedRows) {
  const auto& d = *dataset_;
  Trainer t(d, d.split.train_scenes, ModelConfig{}, short_schedule(), 5);
  t.run();
  const auto& a = t.audit();
  EXPECT_GT(a.rss_rows, 0);
  EXPECT_GT(a.center_rows, 0);
  EXPECT_EQ(a.rss_unknown, 0);
  EXPECT_EQ(a.center_unknown, 0);
  EXPECT_EQ(a.center_background, 0);
  EXPECT_EQ(a.center_non_gt, 0);
}

TEST_F(TrainingTest, AllBoxesModeAdmitsProposals) {
  const auto& d = *dataset_;
  TrainSchedule s = short_schedule();
  s.center_input = CenterInputMode::kAllBoxes;
  Trainer t(d, d.split.train_scenes, ModelConfig{}, s, 5);
  t.run();
  EXPECT_GT(t.audit().center_non_gt, 0);
  EXPECT_EQ(t.audit().center_background, 0);
  EXPECT_EQ(t.audit().center_unknown, 0);
}

TEST_F(TrainingTest, ZeroIterationsLeavesModelUntouched) {
  const auto& d = *dataset_;
  TrainSchedule s;
  s.step1.iterations = s.step2.iterations = s.step3.iterations = 0;
  const auto trained = run_schedule(d, d.split.train_scenes, ModelConfig{}, s, 11);
  PersonSearchModel fresh(ModelConfig{}, identities_in(d, d.split.train_scenes), 11);
  auto a = trained.model;
  auto pa = a.parameters();
  auto pb = fresh.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    EXPECT_EQ(pa[i].tensor->values(), pb[i].tensor->values()) << pa[i].name;
}

TEST_F(TrainingTest, DeterministicAndResumable) {
  const auto& d = *dataset_;
  auto params = [](TrainerState& s) {
    std::vector<double> all;
    for (const auto& p : s.model.parameters())
      all.insert(all.end(), p.tensor->values().begin(), p.tensor->values().end());
    for (const auto& [id, c] : s.bank.centers()) all.insert(all.end(), c.begin(), c.end());
    return all;
  };
  Trainer a(d, d.split.train_scenes, ModelConfig{}, short_schedule(), 13);
  a.run();
  Trainer b(d, d.split.train_scenes, ModelConfig{}, short_schedule(), 13);
  b.run(55);
  TrainerState copy = b.state();
  Trainer c(d, d.split.train_scenes, short_schedule(), std::move(copy));
  c.run();
  EXPECT_EQ(params(a.state()), params(c.state()));
  EXPECT_EQ(c.state().global_step, 110);
}

TEST_F(TrainingTest, StepOneSeparableCrops) {
  DatasetConfig dc = tiny_config();
  dc.variation.noise_std = 0.0;
  dc.variation.lighting_min = dc.variation.lighting_max = 1.0;
  dc.variation.occlusion_probability = 0.0;
  dc.variation.low_res_probability = 0.0;
  const Dataset d = generate_dataset(dc);
  TrainSchedule s;
  s.step1 = {1500, 0.05};
  s.step2.iterations = s.step3.iterations = 0;
  Trainer t(d, d.split.train_scenes, ModelConfig{}, s, 1);
  t.run();
  EXPECT_EQ(crop_accuracy(t.state().model, d, d.split.train_scenes), 1.0);
}
