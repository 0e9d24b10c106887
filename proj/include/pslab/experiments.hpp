#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pslab/checkpoint.hpp"
#include "pslab/config.hpp"
#include "pslab/eval.hpp"

namespace pslab {

/// One measurement. Rows are append-only and carry the hash of the config
/// that produced them.
struct ResultRow {
  std::string experiment;
  std::uint64_t seed = 0;
  std::string variant;
  std::string metric;
  double value = 0.0;
  std::string axis;  // "step", "gallery_size", "lambda" or empty
  double axis_value = 0.0;
  std::string config_hash;
};

inline constexpr const char* kResultsSchema = "# pslab-results v1";
inline constexpr const char* kCurveSchema = "# pslab-curve v1";
inline constexpr const char* kEvalSchema = "# pslab-eval v1";

std::string rows_to_csv(const std::vector<ResultRow>& rows);
std::string curve_to_csv(const std::vector<CurvePoint>& curve);
// Shortest text that parses back to the same double.
std::string format_double(double v);
void write_text(const std::filesystem::path& path, const std::string& text);

Dataset cmd_generate(const ExperimentConfig& config, const std::filesystem::path& out_dir);

struct TrainOutcome {
  Checkpoint checkpoint;
  std::vector<CurvePoint> curve;  // logged rows only
  RoutingAudit audit;
};

struct TrainOptions {
  std::optional<std::filesystem::path> resume;
  std::optional<long> max_steps;  // stop early (the run stays resumable)
  std::optional<std::uint64_t> seed;
};

/// Trains through the schedule, writing `checkpoint.bin` every
/// checkpoint_every steps and at the end, `step2.bin` when step 3 begins
/// and the logged curve to `curve.csv`. A non-finite loss aborts with
/// NumericalError and leaves the last good checkpoint in place.
TrainOutcome cmd_train(const ExperimentConfig& config, const Dataset& dataset,
                       const std::filesystem::path& out_dir,
                       const TrainOptions& options = {});

std::string report_to_json(const EvalReport& report);
std::string report_to_csv(const EvalReport& report);
std::vector<ResultRow> report_rows(const EvalReport& report, const std::string& experiment,
                                   std::uint64_t seed, const std::string& variant,
                                   const std::string& hash);

/// Evaluates a model on the test split and writes report.json, report.csv
/// and rows.csv into `out_dir`.
EvalReport cmd_eval(const ExperimentConfig& config, const Dataset& dataset,
                    const PersonSearchModel& model, const std::filesystem::path& out_dir);

/// Trains every lambda per seed on fold-held-out training scenes and emits
/// validation mAP/top-1 averaged over folds. Steps 1-2 are shared across
/// lambdas since they do not depend on it.
std::vector<ResultRow> cmd_sweep_lambda(const ExperimentConfig& config,
                                        const Dataset& dataset);

/// One report per gallery size per seed for a fixed model.
std::vector<ResultRow> cmd_sweep_gallery(const ExperimentConfig& config,
                                         const Dataset& dataset,
                                         const PersonSearchModel& model);

/// Fine-tunes a step-2 checkpoint with center loss, with and without the
/// dropout site, logging test mAP and mean feature norm every
/// study_interval steps.
std::vector<ResultRow> cmd_dropout_study(const ExperimentConfig& config,
                                         const Dataset& dataset,
                                         const Checkpoint& step2);

/// Per seed: shared steps 1-2, then step 3 in gt-only and all-boxes mode.
std::vector<ResultRow> cmd_centerinput_study(const ExperimentConfig& config,
                                             const Dataset& dataset);

/// Splits `train_scenes` into identity-disjoint folds (whole components,
/// dealt round-robin).
std::vector<std::vector<int>> make_folds(const Dataset& dataset,
                                         std::span<const int> train_scenes, int folds);

/// Step-3 fine-tune of a copied state; returns the trained state.
TrainerState fine_tune(const Dataset& dataset, std::span<const int> train_scenes,
                       TrainerState start, const TrainSchedule& schedule,
                       std::optional<std::uint64_t> reseed = std::nullopt);

}  // namespace pslab
