#include "pslab/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "pslab/errors.hpp"

namespace pslab {

std::vector<CandidateBox> label_candidates(std::span<const BoundingBox> proposals,
                                           std::span<const BoundingBox> gt_boxes,
                                           double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("matching threshold must lie in (0, 1)");
  }
  std::vector<CandidateBox> out;
  out.reserve(proposals.size() + gt_boxes.size());
  for (const auto& p : proposals) {
    CandidateBox c;
    c.box = p;
    c.source = CandidateSource::kProposal;
    double best = 0.0;
    const BoundingBox* match = nullptr;
    for (const auto& g : gt_boxes) {
      const double v = iou(p, g);
      if (v > best) {
        best = v;
        match = &g;
      }
    }
    if (match && best > threshold) {
      c.assigned_label = match->label;
      c.regression_target = encode_deltas(p, *match);
    } else {
      c.assigned_label = kBackgroundLabel;
    }
    c.box.label = c.assigned_label;
    out.push_back(c);
  }
  for (const auto& g : gt_boxes) {
    CandidateBox c;
    c.box = g;
    c.source = CandidateSource::kGroundTruth;
    c.assigned_label = g.label;
    c.regression_target = BoxDeltas{0.0, 0.0, 0.0, 0.0};
    out.push_back(c);
  }
  return out;
}

std::vector<double> extract_roi(const Image& canvas, const BoundingBox& box,
                                int out_width, int out_height) {
  if (out_width < 1 || out_height < 1) throw ConfigError("ROI size must be positive");
  if (!(box.w > 0.0 && box.h > 0.0)) {
    throw ValidationError("ROI box needs positive extent");
  }
  const double x0 = std::max(box.x, 0.0);
  const double y0 = std::max(box.y, 0.0);
  const double x1 = std::min(box.x + box.w, double(canvas.width));
  const double y1 = std::min(box.y + box.h, double(canvas.height));
  if (x1 <= x0 || y1 <= y0) {
    throw ValidationError("ROI box lies outside the canvas");
  }
  const double sx = (x1 - x0) / out_width;
  const double sy = (y1 - y0) / out_height;
  std::vector<double> out(static_cast<std::size_t>(out_width) * out_height);
  for (int r = 0; r < out_height; ++r) {
    // pixel centers sit at integer + 0.5
    const double fy = std::clamp(y0 + (r + 0.5) * sy - 0.5, 0.0, canvas.height - 1.0);
    const int ya = static_cast<int>(fy);
    const int yb = std::min(ya + 1, canvas.height - 1);
    const double ty = fy - ya;
    for (int c = 0; c < out_width; ++c) {
      const double fx = std::clamp(x0 + (c + 0.5) * sx - 0.5, 0.0, canvas.width - 1.0);
      const int xa = static_cast<int>(fx);
      const int xb = std::min(xa + 1, canvas.width - 1);
      const double tx = fx - xa;
      const double top = (1.0 - tx) * canvas.value(xa, ya) + tx * canvas.value(xb, ya);
      const double bot = (1.0 - tx) * canvas.value(xa, yb) + tx * canvas.value(xb, yb);
      out[static_cast<std::size_t>(r) * out_width + c] = (1.0 - ty) * top + ty * bot;
    }
  }
  return out;
}

void ModelConfig::validate() const {
  if (roi_width < 1 || roi_height < 1) throw ConfigError("ROI size must be positive");
  if (hidden.empty()) throw ConfigError("model needs at least one hidden layer");
  for (int h : hidden)
    if (h < 1) throw ConfigError("hidden widths must be positive");
  if (feat_dim < 1) throw ConfigError("feat_dim must be positive");
  check_keep_probability(keep_probability);
}

PersonSearchModel::PersonSearchModel(const ModelConfig& config,
                                     std::vector<int> class_identities,
                                     std::uint64_t seed)
    : config_(config), class_ids_(std::move(class_identities)) {
  config_.validate();
  std::sort(class_ids_.begin(), class_ids_.end());
  for (std::size_t i = 0; i < class_ids_.size(); ++i) {
    if (class_ids_[i] < 0) throw ConfigError("class identities must be >= 0");
    class_lookup_[class_ids_[i]] = static_cast<int>(i);
  }
  Rng rng(derive_seed(seed, "model-init"));
  std::size_t width = static_cast<std::size_t>(config_.input_dim());
  for (int h : config_.hidden) {
    LinearLayer lin(width, static_cast<std::size_t>(h));
    lin.init(rng);
    trunk_.add(std::move(lin)).add(ReluLayer{});
    width = static_cast<std::size_t>(h);
  }
  const auto feat = static_cast<std::size_t>(config_.feat_dim);
  const auto classes = static_cast<std::size_t>(class_count());
  LinearLayer feat_head(width, feat), bbox_head(width, 4),
      id_head(feat, classes), crop_head(width, classes);
  feat_head.init(rng);
  bbox_head.init(rng);
  id_head.init(rng);
  crop_head.init(rng);
  // start box refinement at the identity transform
  for (double& w : bbox_head.weights.values()) w *= 0.01;
  feat_branch_.add(std::move(feat_head));
  bbox_branch_.add(std::move(bbox_head));
  id_branch_.add(std::move(id_head));
  crop_branch_.add(std::move(crop_head));
  set_dropout(config_.dropout_site, config_.keep_probability);
}

int PersonSearchModel::class_index(int label) const {
  if (label == kBackgroundLabel) return background_class();
  auto it = class_lookup_.find(label);
  return it == class_lookup_.end() ? -1 : it->second;
}

void PersonSearchModel::set_dropout(DropoutSite site, double keep_probability) {
  check_keep_probability(keep_probability);
  LinearLayer head;
  for (auto& layer : feat_branch_.layers())
    if (auto* lin = std::get_if<LinearLayer>(&layer)) head = *lin;
  Sequential branch;
  if (site == DropoutSite::kBeforeFeatHead) {
    branch.add(DropoutLayer{keep_probability, std::nullopt});
  }
  branch.add(std::move(head));
  feat_branch_ = std::move(branch);
  config_.dropout_site = site;
  config_.keep_probability = keep_probability;
}

ForwardOutput PersonSearchModel::forward(const Tensor& patches, Mode mode,
                                         Rng* rng) {
  if (patches.cols() != static_cast<std::size_t>(config_.input_dim())) {
    throw ShapeError("patch batch " + patches.shape_string() +
                     " does not match model input " +
                     std::to_string(config_.input_dim()));
  }
  ForwardOutput out;
  out.hidden = trunk_.forward(patches, mode, rng);
  out.feat = feat_branch_.forward(out.hidden, mode, rng);
  out.logits = id_branch_.forward(out.feat, mode, rng);
  out.bbox = bbox_branch_.forward(out.hidden, mode, rng);
  return out;
}

Tensor PersonSearchModel::crop_logits(const Tensor& patches, Mode mode, Rng* rng) {
  if (patches.cols() != static_cast<std::size_t>(config_.input_dim())) {
    throw ShapeError("patch batch does not match model input");
  }
  return crop_branch_.forward(trunk_.forward(patches, mode, rng), mode, rng);
}

void PersonSearchModel::backward(const Tensor& grad_feat, const Tensor& grad_logits,
                                 const Tensor& grad_bbox) {
  Tensor g_feat = id_branch_.backward(grad_logits);
  for (std::size_t i = 0; i < g_feat.size(); ++i) g_feat[i] += grad_feat[i];
  Tensor g_hidden = feat_branch_.backward(g_feat);
  const Tensor g_box = bbox_branch_.backward(grad_bbox);
  for (std::size_t i = 0; i < g_hidden.size(); ++i) g_hidden[i] += g_box[i];
  trunk_.backward(g_hidden);
}

void PersonSearchModel::backward_crop(const Tensor& grad_logits) {
  trunk_.backward(crop_branch_.backward(grad_logits));
}

Tensor PersonSearchModel::embed(const Tensor& patches) const {
  if (patches.cols() != static_cast<std::size_t>(config_.input_dim())) {
    throw ShapeError("patch batch does not match model input");
  }
  return feat_branch_.infer(trunk_.infer(patches));
}

ForwardOutput PersonSearchModel::infer(const Tensor& patches) const {
  if (patches.cols() != static_cast<std::size_t>(config_.input_dim())) {
    throw ShapeError("patch batch does not match model input");
  }
  ForwardOutput out;
  out.hidden = trunk_.infer(patches);
  out.feat = feat_branch_.infer(out.hidden);
  out.logits = id_branch_.infer(out.feat);
  out.bbox = bbox_branch_.infer(out.hidden);
  return out;
}

std::vector<ParamRef> PersonSearchModel::parameters() {
  std::vector<ParamRef> all;
  for (auto [name, seq] :
       {std::pair<const char*, Sequential*>{"trunk", &trunk_},
        {"feat", &feat_branch_},
        {"bbox", &bbox_branch_},
        {"id", &id_branch_},
        {"crop", &crop_branch_}}) {
    auto p = seq->parameters(name);
    all.insert(all.end(), p.begin(), p.end());
  }
  return all;
}

void PersonSearchModel::zero_grad() {
  for (auto* seq : {&trunk_, &feat_branch_, &bbox_branch_, &id_branch_, &crop_branch_})
    seq->zero_grad();
}

Tensor extract_batch(const Scene& scene, std::span<const BoundingBox> boxes,
                     const ModelConfig& config) {
  const auto dim = static_cast<std::size_t>(config.input_dim());
  std::vector<double> values;
  values.reserve(boxes.size() * dim);
  for (const auto& b : boxes) {
    auto roi = extract_roi(scene.canvas, b, config.roi_width, config.roi_height);
    values.insert(values.end(), roi.begin(), roi.end());
  }
  return Tensor({boxes.size(), dim}, std::move(values));
}

std::vector<Detection> detect(const PersonSearchModel& model, const Scene& scene,
                              std::span<const BoundingBox> proposals,
                              const DetectOptions& options) {
  std::vector<Detection> out;
  if (proposals.empty()) return out;
  const ForwardOutput f = model.infer(extract_batch(scene, proposals, model.config()));
  const std::size_t bg = static_cast<std::size_t>(model.background_class());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    auto z = f.logits.row_span(i);
    const double top = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - top);
    const double score = 1.0 - std::exp(z[bg] - top) / sum;
    if (score < options.min_person_score) continue;
    BoundingBox box = proposals[i];
    if (options.refine) {
      auto t = f.bbox.row_span(i);
      const BoundingBox r = clamp_to_canvas(decode_deltas(box, {t[0], t[1], t[2], t[3]}),
                                            scene.width(), scene.height());
      if (r.w >= 1.0 && r.h >= 1.0) box = BoundingBox{r.x, r.y, r.w, r.h, box.label};
    }
    out.push_back({box, score});
  }
  return out;
}

TrainingBatch make_scene_batch(std::span<const Scene* const> scenes,
                               const ProposalConfig& proposals,
                               const ModelConfig& model, Rng& rng) {
  TrainingBatch batch;
  std::vector<double> values;
  const auto dim = static_cast<std::size_t>(model.input_dim());
  for (const Scene* scene : scenes) {
    const auto props = simulate_proposals(*scene, proposals, rng);
    const auto gt = scene->gt_boxes();
    auto cands = label_candidates(props, gt);
    for (const auto& c : cands) {
      auto roi = extract_roi(scene->canvas, c.box, model.roi_width, model.roi_height);
      values.insert(values.end(), roi.begin(), roi.end());
    }
    batch.candidates.insert(batch.candidates.end(), cands.begin(), cands.end());
  }
  if (!batch.candidates.empty()) {
    batch.patches = Tensor({batch.candidates.size(), dim}, std::move(values));
  }
  return batch;
}

namespace {

// Refuses an update that would leave non-finite parameters behind.
void require_finite_gradients(const std::vector<ParamRef>& params) {
  for (const auto& p : params) {
    if (!p.tensor->has_grad()) continue;
    for (double g : p.tensor->grad())
      if (!std::isfinite(g)) throw NumericalError("non-finite gradient in " + p.name);
  }
}

bool routed_to_center(const CandidateBox& c, CenterInputMode mode) {
  if (c.assigned_label < 0) return false;
  return mode == CenterInputMode::kAllBoxes ||
         c.source == CandidateSource::kGroundTruth;
}

}  // namespace

StepResult train_step(PersonSearchModel& model, CenterBank& bank,
                      const TrainingBatch& batch, const StepConfig& config,
                      Rng& rng, RoutingAudit* audit) {
  StepResult result;
  const std::size_t m = batch.candidates.size();
  std::vector<std::size_t> rss_rows;
  std::vector<int> rss_labels;
  for (std::size_t i = 0; i < m; ++i) {
    const int label = batch.candidates[i].assigned_label;
    if (label == kUnknownLabel) continue;
    const int cls = model.class_index(label);
    if (cls < 0) {
      throw ContractError("identity " + std::to_string(label) +
                          " is not covered by the classifier");
    }
    rss_rows.push_back(i);
    rss_labels.push_back(cls);
  }
  if (rss_rows.empty()) {
    result.skipped = true;
    result.diagnostic = "no candidate eligible for the identification loss";
    if (audit) ++audit->skipped_steps;
    return result;
  }

  ForwardOutput fwd = model.forward(batch.patches, Mode::kTraining, &rng);
  if (!fwd.feat.all_finite() || !fwd.logits.all_finite()) {
    throw NumericalError("non-finite activations in training forward pass");
  }

  // identification loss over the eligible rows only
  const Tensor rss_logits = fwd.logits.gather_rows(rss_rows);
  const auto classes = sample_rss_classes(rss_labels, model.class_count(),
                                          config.rss_negatives, rng);
  const LossGrad id = rss_loss(rss_logits, rss_labels, classes);
  Tensor grad_logits(fwd.logits.shape());
  for (std::size_t k = 0; k < rss_rows.size(); ++k) {
    auto src = id.grad.row_span(k);
    std::copy(src.begin(), src.end(), grad_logits.row_span(rss_rows[k]).begin());
  }
  if (audit) {
    audit->rss_rows += static_cast<long>(rss_rows.size());
    for (std::size_t r : rss_rows)
      if (batch.candidates[r].assigned_label == kUnknownLabel) ++audit->rss_unknown;
  }

  // box refinement
  std::vector<std::size_t> reg_rows;
  for (std::size_t i = 0; i < m; ++i)
    if (batch.candidates[i].regression_target) reg_rows.push_back(i);
  Tensor grad_bbox(fwd.bbox.shape());
  double bbox_loss = 0.0;
  if (!reg_rows.empty()) {
    Tensor target({reg_rows.size(), 4});
    for (std::size_t k = 0; k < reg_rows.size(); ++k) {
      const auto& t = *batch.candidates[reg_rows[k]].regression_target;
      std::copy(t.begin(), t.end(), target.row_span(k).begin());
    }
    const LossGrad reg = smoothed_l1(fwd.bbox.gather_rows(reg_rows), target);
    bbox_loss = reg.loss;
    for (std::size_t k = 0; k < reg_rows.size(); ++k) {
      auto src = reg.grad.row_span(k);
      std::copy(src.begin(), src.end(), grad_bbox.row_span(reg_rows[k]).begin());
    }
  }

  // center loss on routed identity features
  Tensor grad_feat(fwd.feat.shape());
  double center_value = 0.0;
  std::vector<std::size_t> center_rows;
  std::vector<int> center_labels;
  Tensor center_feats;
  if (config.lambda > 0.0) {
    for (std::size_t i = 0; i < m; ++i) {
      if (!routed_to_center(batch.candidates[i], config.center_input)) continue;
      center_rows.push_back(i);
      center_labels.push_back(batch.candidates[i].assigned_label);
    }
    if (audit) {
      audit->center_rows += static_cast<long>(center_rows.size());
      for (std::size_t r : center_rows) {
        const auto& c = batch.candidates[r];
        if (c.assigned_label == kUnknownLabel) ++audit->center_unknown;
        if (c.assigned_label == kBackgroundLabel) ++audit->center_background;
        if (c.source != CandidateSource::kGroundTruth) ++audit->center_non_gt;
      }
    }
    if (!center_rows.empty()) {
      center_feats = fwd.feat.gather_rows(center_rows);
      bank.ensure_centers(center_feats, center_labels);
      center_value = center_loss_forward(center_feats, center_labels, bank);
      const Tensor g = center_loss_backward(center_feats, center_labels, bank);
      for (std::size_t k = 0; k < center_rows.size(); ++k) {
        auto src = g.row_span(k);
        auto dst = grad_feat.row_span(center_rows[k]);
        for (std::size_t j = 0; j < src.size(); ++j) dst[j] = config.lambda * src[j];
      }
    }
  }

  if (!std::isfinite(id.loss) || !std::isfinite(bbox_loss) ||
      !std::isfinite(center_value)) {
    throw NumericalError("non-finite training loss");
  }
  result.losses = total_loss(id.loss, bbox_loss, center_value, config.lambda);

  model.zero_grad();
  model.backward(grad_feat, grad_logits, grad_bbox);
  const auto params = model.parameters();
  require_finite_gradients(params);
  sgd_step(params, config.learning_rate);
  if (!center_rows.empty()) center_update(bank, center_feats, center_labels);
  return result;
}

void TrainSchedule::validate() const {
  for (const auto* s : {&step1, &step2, &step3}) {
    if (s->iterations < 0) throw ConfigError("iteration counts must be >= 0");
    if (!(s->learning_rate > 0.0)) throw ConfigError("learning rates must be > 0");
  }
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0,1]");
  if (rss_negatives < 1) throw ConfigError("rss_negatives must be >= 1");
  if (step1_batch < 2) throw ConfigError("step1_batch must be >= 2");
  if (scenes_per_batch < 1) throw ConfigError("scenes_per_batch must be >= 1");
  if (!(step2_decay > 0.0)) throw ConfigError("step2_decay must be > 0");
  train_proposals.validate();
}

std::vector<int> identities_in(const Dataset& dataset, std::span<const int> scenes) {
  std::set<int> ids;
  for (int s : scenes)
    for (const auto& inst : dataset.scenes.at(static_cast<std::size_t>(s)).instances)
      if (inst.box.label >= 0) ids.insert(inst.box.label);
  return {ids.begin(), ids.end()};
}

Trainer::Trainer(const Dataset& dataset, std::vector<int> train_scenes,
                 ModelConfig model_config, TrainSchedule schedule,
                 std::uint64_t seed)
    : dataset_(&dataset),
      train_scenes_(std::move(train_scenes)),
      schedule_(std::move(schedule)) {
  schedule_.validate();
  if (train_scenes_.empty()) throw ConfigError("training split is empty");
  state_.model = PersonSearchModel(model_config,
                                   identities_in(dataset, train_scenes_), seed);
  state_.bank = CenterBank(static_cast<std::size_t>(model_config.feat_dim),
                           schedule_.alpha);
  state_.seed = seed;
  state_.stage = 1;
  state_.rng = Rng(derive_seed(seed, std::uint64_t{1}));
  advance_stage();
}

Trainer::Trainer(const Dataset& dataset, std::vector<int> train_scenes,
                 TrainSchedule schedule, TrainerState state)
    : dataset_(&dataset),
      train_scenes_(std::move(train_scenes)),
      schedule_(std::move(schedule)),
      state_(std::move(state)) {
  schedule_.validate();
  if (train_scenes_.empty()) throw ConfigError("training split is empty");
  state_.bank.set_alpha(schedule_.alpha);
  advance_stage();
}

void Trainer::set_schedule(TrainSchedule schedule) {
  schedule.validate();
  schedule_ = std::move(schedule);
  state_.bank.set_alpha(schedule_.alpha);
  advance_stage();
}

void Trainer::reseed(std::uint64_t seed) {
  state_.seed = seed;
  state_.rng = Rng(derive_seed(seed, static_cast<std::uint64_t>(state_.stage)));
}

long Trainer::total_iterations() const {
  return schedule_.step1.iterations + schedule_.step2.iterations +
         schedule_.step3.iterations;
}

bool Trainer::advance_stage() {
  auto stage_length = [&](int stage) {
    switch (stage) {
      case 1: return schedule_.step1.iterations;
      case 2: return schedule_.step2.iterations;
      case 3: return schedule_.step3.iterations;
      default: return 0L;
    }
  };
  while (state_.stage <= 3 && state_.iteration >= stage_length(state_.stage)) {
    ++state_.stage;
    state_.iteration = 0;
    state_.rng = Rng(derive_seed(state_.seed, static_cast<std::uint64_t>(state_.stage)));
  }
  return state_.stage <= 3;
}

CurvePoint Trainer::crop_step() {
  auto& rng = state_.rng;
  auto& model = state_.model;
  const ModelConfig& mc = model.config();
  const int half = schedule_.step1_batch / 2;
  std::vector<double> values;
  std::vector<int> labels;
  // labelled person crops
  for (int k = 0; k < half; ++k) {
    const Scene* s = nullptr;
    std::vector<std::size_t> labelled;
    for (int tries = 0; tries < 100 && labelled.empty(); ++tries) {
      s = &scene(train_scenes_[rng.uniform_index(train_scenes_.size())]);
      for (std::size_t i = 0; i < s->instances.size(); ++i)
        if (s->instances[i].box.label >= 0) labelled.push_back(i);
    }
    if (labelled.empty()) throw ConfigError("training scenes hold no labelled persons");
    const auto& inst = s->instances[labelled[rng.uniform_index(labelled.size())]];
    auto roi = extract_roi(s->canvas, inst.box, mc.roi_width, mc.roi_height);
    values.insert(values.end(), roi.begin(), roi.end());
    labels.push_back(model.class_index(inst.box.label));
  }
  // the same number of background crops
  const auto& tp = schedule_.train_proposals;
  for (int k = 0; k < schedule_.step1_batch - half; ++k) {
    const Scene& s = scene(train_scenes_[rng.uniform_index(train_scenes_.size())]);
    const auto gt = s.gt_boxes();
    BoundingBox b;
    for (int tries = 0; tries < 20; ++tries) {
      const int w = std::min(rng.uniform_int(tp.min_box_width, tp.max_box_width), s.width());
      const int h = std::min(2 * w, s.height());
      b = BoundingBox{double(rng.uniform_int(0, s.width() - w)),
                      double(rng.uniform_int(0, s.height() - h)), double(w),
                      double(h), kBackgroundLabel};
      double worst = 0.0;
      for (const auto& g : gt) worst = std::max(worst, iou(b, g));
      if (worst < 0.3) break;
    }
    auto roi = extract_roi(s.canvas, b, mc.roi_width, mc.roi_height);
    values.insert(values.end(), roi.begin(), roi.end());
    labels.push_back(model.background_class());
  }
  // shuffle crops
  const std::size_t n = labels.size();
  const std::size_t dim = static_cast<std::size_t>(mc.input_dim());
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  std::vector<double> shuffled;
  std::vector<int> shuffled_labels;
  for (std::size_t i : order) {
    shuffled.insert(shuffled.end(), values.begin() + static_cast<std::ptrdiff_t>(i * dim),
                    values.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
    shuffled_labels.push_back(labels[i]);
  }
  const Tensor patches({n, dim}, std::move(shuffled));
  const Tensor logits = model.crop_logits(patches, Mode::kTraining, &rng);
  const LossGrad ce = softmax_ce(logits, shuffled_labels);
  if (!std::isfinite(ce.loss)) throw NumericalError("non-finite crop loss");
  model.zero_grad();
  model.backward_crop(ce.grad);
  const auto params = model.parameters();
  require_finite_gradients(params);
  sgd_step(params, schedule_.step1.learning_rate);
  CurvePoint pt;
  pt.stage = 1;
  pt.losses = total_loss(ce.loss, 0.0, 0.0, 0.0);
  return pt;
}

CurvePoint Trainer::step_once() {
  if (state_.stage == 1) return crop_step();
  auto& rng = state_.rng;
  std::vector<const Scene*> scenes;
  for (int k = 0; k < schedule_.scenes_per_batch; ++k)
    scenes.push_back(&scene(train_scenes_[rng.uniform_index(train_scenes_.size())]));
  const TrainingBatch batch = make_scene_batch(scenes, schedule_.train_proposals,
                                               state_.model.config(), rng);
  StepConfig cfg;
  cfg.rss_negatives = schedule_.rss_negatives;
  cfg.center_input = schedule_.center_input;
  if (state_.stage == 2) {
    cfg.learning_rate = schedule_.step2.learning_rate;
    if (state_.iteration >= schedule_.step2_decay_after) {
      cfg.learning_rate *= schedule_.step2_decay;
    }
    cfg.lambda = 0.0;
  } else {
    cfg.learning_rate = schedule_.step3.learning_rate;
    cfg.lambda = schedule_.lambda;
  }
  CurvePoint pt;
  pt.stage = state_.stage;
  if (batch.candidates.empty()) {
    ++audit_.skipped_steps;
    return pt;
  }
  const StepResult r = train_step(state_.model, state_.bank, batch, cfg, rng, &audit_);
  pt.losses = r.losses;
  return pt;
}

void Trainer::run(std::optional<long> max_steps,
                  const std::function<void(const CurvePoint&)>& on_step) {
  long done = 0;
  while (advance_stage() && (!max_steps || done < *max_steps)) {
    CurvePoint pt = step_once();
    ++state_.iteration;
    ++state_.global_step;
    ++done;
    pt.step = state_.global_step;
    if (on_step) on_step(pt);
  }
}

void Trainer::run_until_stage(int stage,
                              const std::function<void(const CurvePoint&)>& on_step) {
  while (advance_stage() && state_.stage < stage) run(1, on_step);
}

TrainedModel run_schedule(const Dataset& dataset, std::span<const int> train_scenes,
                          const ModelConfig& model_config,
                          const TrainSchedule& schedule, std::uint64_t seed) {
  Trainer trainer(dataset, {train_scenes.begin(), train_scenes.end()}, model_config,
                  schedule, seed);
  trainer.run();
  return {std::move(trainer.state().model), std::move(trainer.state().bank)};
}

double crop_accuracy(PersonSearchModel& model, const Dataset& dataset,
                     std::span<const int> scenes) {
  long correct = 0, total = 0;
  for (int s : scenes) {
    const Scene& sc = dataset.scenes.at(static_cast<std::size_t>(s));
    std::vector<BoundingBox> boxes;
    std::vector<int> labels;
    for (const auto& inst : sc.instances) {
      if (inst.box.label < 0) continue;
      boxes.push_back(inst.box);
      labels.push_back(model.class_index(inst.box.label));
    }
    if (boxes.empty()) continue;
    const Tensor logits =
        model.crop_logits(extract_batch(sc, boxes, model.config()), Mode::kInference, nullptr);
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      auto row = logits.row_span(i);
      const auto best = std::max_element(row.begin(), row.end()) - row.begin();
      correct += (best == labels[i]);
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

}  // namespace pslab
