#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pslab/box.hpp"
#include "pslab/center_bank.hpp"
#include "pslab/dataset.hpp"
#include "pslab/losses.hpp"
#include "pslab/nn.hpp"

namespace pslab {

enum class CandidateSource { kGroundTruth, kProposal };

struct CandidateBox {
  BoundingBox box;
  CandidateSource source = CandidateSource::kProposal;
  int assigned_label = kBackgroundLabel;
  std::optional<BoxDeltas> regression_target;
};

/// Proposals take the identity of their best-overlapping GT box when that
/// IoU exceeds `threshold`, otherwise background. GT boxes are appended as
/// candidates with their own label and zero regression target.
std::vector<CandidateBox> label_candidates(std::span<const BoundingBox> proposals,
                                           std::span<const BoundingBox> gt_boxes,
                                           double threshold = 0.5);

/// Crop-and-resize with bilinear sampling; the crop is clamped to the
/// canvas. Output is out_height x out_width, values in [0, 1].
std::vector<double> extract_roi(const Image& canvas, const BoundingBox& box,
                                int out_width, int out_height);

enum class DropoutSite { kNone, kBeforeFeatHead };

struct ModelConfig {
  int roi_width = 8;
  int roi_height = 16;
  std::vector<int> hidden = {96, 64};
  int feat_dim = 32;
  DropoutSite dropout_site = DropoutSite::kNone;
  double keep_probability = 0.5;

  int input_dim() const { return roi_width * roi_height; }
  void validate() const;
};

struct ForwardOutput {
  Tensor hidden;  // trunk output, batch x hidden.back()
  Tensor feat;    // batch x feat_dim
  Tensor logits;  // batch x classes
  Tensor bbox;    // batch x 4
};

/// Trunk of Linear+ReLU blocks feeding a feature head (optionally behind a
/// dropout site), a box-refinement head and an identity classifier on the
/// feature. A separate crop classifier on the trunk serves the warm-up step.
class PersonSearchModel {
 public:
  PersonSearchModel() = default;
  PersonSearchModel(const ModelConfig& config,
                    std::vector<int> class_identities, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  // identities covered by the classifier; the background class comes last
  const std::vector<int>& class_identities() const { return class_ids_; }
  int class_count() const { return static_cast<int>(class_ids_.size()) + 1; }
  int background_class() const { return static_cast<int>(class_ids_.size()); }
  // class index of an identity or kBackgroundLabel; -1 when not covered
  int class_index(int label) const;

  void set_dropout(DropoutSite site, double keep_probability);

  ForwardOutput forward(const Tensor& patches, Mode mode, Rng* rng);
  Tensor crop_logits(const Tensor& patches, Mode mode, Rng* rng);

  // Backward through the most recent forward(); gradients accumulate.
  void backward(const Tensor& grad_feat, const Tensor& grad_logits,
                const Tensor& grad_bbox);
  void backward_crop(const Tensor& grad_logits);

  // Inference-mode features without touching the training tapes.
  Tensor embed(const Tensor& patches) const;
  // Inference-mode pass through every head.
  ForwardOutput infer(const Tensor& patches) const;

  std::vector<ParamRef> parameters();
  void zero_grad();

  Sequential& trunk() { return trunk_; }
  Sequential& feat_branch() { return feat_branch_; }

 private:
  ModelConfig config_;
  std::vector<int> class_ids_;
  std::map<int, int> class_lookup_;
  Sequential trunk_;
  Sequential feat_branch_;  // [dropout] + linear
  Sequential bbox_branch_;
  Sequential id_branch_;
  Sequential crop_branch_;
  Tensor last_hidden_;
};

/// Extracts every candidate's ROI into a batch x input_dim tensor.
Tensor extract_batch(const Scene& scene, std::span<const BoundingBox> boxes,
                     const ModelConfig& config);

struct DetectOptions {
  bool refine = false;           // apply the box-refinement head
  double min_person_score = 0.0; // 1 - P(background); 0 keeps everything
};

struct Detection {
  BoundingBox box;
  double person_score = 1.0;
};

/// Test-time detection over proposals: scores each proposal, drops those
/// below `min_person_score` and refines the survivors (clamped to canvas).
/// Order follows the proposals.
std::vector<Detection> detect(const PersonSearchModel& model, const Scene& scene,
                              std::span<const BoundingBox> proposals,
                              const DetectOptions& options);

enum class CenterInputMode { kGtOnly, kAllBoxes };

struct TrainingBatch {
  std::vector<CandidateBox> candidates;
  Tensor patches;
};

struct StepConfig {
  double learning_rate = 0.01;
  double lambda = 0.0;  // center loss off when 0
  int rss_negatives = 32;
  CenterInputMode center_input = CenterInputMode::kGtOnly;
};

/// Counters of what reached each loss, for auditing the routing rules.
struct RoutingAudit {
  long rss_rows = 0;
  long rss_unknown = 0;
  long center_rows = 0;
  long center_unknown = 0;
  long center_background = 0;
  long center_non_gt = 0;
  long skipped_steps = 0;
};

struct StepResult {
  bool skipped = false;
  std::string diagnostic;
  LossBundle losses;
};

/// One SGD step over a batch of candidates: sampled softmax over every
/// candidate except unknown persons, smoothed-L1 over candidates with a
/// regression target, and (when lambda > 0) center loss over the routed
/// identity features followed by one center update.
StepResult train_step(PersonSearchModel& model, CenterBank& bank,
                      const TrainingBatch& batch, const StepConfig& config,
                      Rng& rng, RoutingAudit* audit = nullptr);

/// Builds a step-2/3 batch from scenes: fresh simulated proposals, labels,
/// GT candidates and extracted patches.
TrainingBatch make_scene_batch(std::span<const Scene* const> scenes,
                               const ProposalConfig& proposals,
                               const ModelConfig& model, Rng& rng);

struct StageSchedule {
  long iterations = 0;
  double learning_rate = 0.01;
};

struct TrainSchedule {
  StageSchedule step1{500, 0.05};
  StageSchedule step2{2000, 0.02};
  // step-2 rate is multiplied by `step2_decay` after this many iterations
  long step2_decay_after = 1500;
  double step2_decay = 0.1;
  StageSchedule step3{1000, 0.01};
  double lambda = 0.032;
  double alpha = 0.5;
  int rss_negatives = 32;
  int step1_batch = 8;
  int scenes_per_batch = 2;
  CenterInputMode center_input = CenterInputMode::kGtOnly;
  ProposalConfig train_proposals;

  void validate() const;
};

/// Training state that can be checkpointed and resumed mid-schedule.
struct TrainerState {
  PersonSearchModel model;
  CenterBank bank;
  Rng rng;
  // each stage restarts its stream from derive_seed(seed, stage)
  std::uint64_t seed = 0;
  int stage = 1;       // 1, 2, 3; 4 when finished
  long iteration = 0;  // within the current stage
  long global_step = 0;
};

struct CurvePoint {
  long step = 0;
  int stage = 0;
  LossBundle losses;
};

/// Runs the three-stage schedule over `train_scenes`.
class Trainer {
 public:
  Trainer(const Dataset& dataset, std::vector<int> train_scenes,
          ModelConfig model_config, TrainSchedule schedule,
          std::uint64_t seed);
  Trainer(const Dataset& dataset, std::vector<int> train_scenes,
          TrainSchedule schedule, TrainerState state);

  // Advances until the schedule ends, or after `max_steps` more steps.
  // The callback sees every executed step. Throws NumericalError on a
  // non-finite loss; the state is left at the last finite step.
  void run(std::optional<long> max_steps = std::nullopt,
           const std::function<void(const CurvePoint&)>& on_step = {});
  // Runs only until the given stage is reached (e.g. 3 stops after step 2).
  void run_until_stage(int stage,
                       const std::function<void(const CurvePoint&)>& on_step = {});

  bool finished() const { return state_.stage > 3; }
  TrainerState& state() { return state_; }
  const TrainerState& state() const { return state_; }
  const TrainSchedule& schedule() const { return schedule_; }
  void set_schedule(TrainSchedule schedule);
  // Restarts the current stage's random stream under a new run seed.
  void reseed(std::uint64_t seed);
  const RoutingAudit& audit() const { return audit_; }
  long total_iterations() const;

 private:
  bool advance_stage();
  CurvePoint step_once();
  CurvePoint crop_step();
  const Scene& scene(int idx) const {
    return dataset_->scenes[static_cast<std::size_t>(idx)];
  }

  const Dataset* dataset_;
  std::vector<int> train_scenes_;
  TrainSchedule schedule_;
  TrainerState state_;
  RoutingAudit audit_;
};

/// Identities that appear labelled in the given scenes, sorted.
std::vector<int> identities_in(const Dataset& dataset,
                               std::span<const int> scenes);

struct TrainedModel {
  PersonSearchModel model;
  CenterBank bank;
};

TrainedModel run_schedule(const Dataset& dataset, std::span<const int> train_scenes,
                          const ModelConfig& model_config,
                          const TrainSchedule& schedule, std::uint64_t seed);

/// Step-1 style accuracy of the crop classifier on every labelled GT crop.
double crop_accuracy(PersonSearchModel& model, const Dataset& dataset,
                     std::span<const int> scenes);

}  // namespace pslab
