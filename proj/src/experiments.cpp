#include "pslab/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pslab/errors.hpp"

namespace pslab {

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

std::string rows_to_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream os;
  os << kResultsSchema << '\n'
     << "experiment,seed,variant,metric,value,axis,axis_value,config_hash\n";
  for (const auto& r : rows) {
    os << r.experiment << ',' << r.seed << ',' << r.variant << ',' << r.metric << ','
       << format_double(r.value) << ',' << r.axis << ','
       << (r.axis.empty() ? std::string() : format_double(r.axis_value)) << ','
       << r.config_hash << '\n';
  }
  return os.str();
}

std::string curve_to_csv(const std::vector<CurvePoint>& curve) {
  std::ostringstream os;
  os << kCurveSchema << '\n' << "step,stage,id_loss,bbox_loss,center_loss,lambda,total\n";
  for (const auto& p : curve) {
    os << p.step << ',' << p.stage << ',' << format_double(p.losses.id_loss) << ','
       << format_double(p.losses.bbox_loss) << ',' << format_double(p.losses.center_loss)
       << ',' << format_double(p.losses.lambda) << ',' << format_double(p.losses.total)
       << '\n';
  }
  return os.str();
}

Dataset cmd_generate(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
  Dataset dataset = generate_dataset(config.dataset);
  dataset.source_hash = config_hash(config);
  save_dataset(dataset, out_dir);
  return dataset;
}

TrainOutcome cmd_train(const ExperimentConfig& config, const Dataset& dataset,
                       const std::filesystem::path& out_dir, const TrainOptions& options) {
  const std::string hash = config_hash(config);
  if (dataset.split.train_scenes.empty()) throw ConfigError("dataset has no train split");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  std::optional<Trainer> trainer;
  if (options.resume) {
    Checkpoint ck = load_checkpoint(*options.resume);
    if (ck.config_hash != hash) {
      throw ConfigError("checkpoint " + options.resume->string() +
                        " was written under config " + ck.config_hash +
                        ", current config is " + hash);
    }
    trainer.emplace(dataset, dataset.split.train_scenes, config.schedule, std::move(ck.state));
  } else {
    trainer.emplace(dataset, dataset.split.train_scenes, config.effective_model(),
                    config.schedule, options.seed.value_or(config.model_seed));
  }

  const auto ckpt_path = out_dir / "checkpoint.bin";
  const auto curve_path = out_dir / "curve.csv";
  TrainOutcome outcome;
  // a resumed run appends to the curve it left behind
  if (options.resume && std::filesystem::exists(curve_path)) {
    std::ifstream in(curve_path);
    std::string line;
    int header = 0;
    while (std::getline(in, line)) {
      if (header < 2) {
        ++header;
        continue;
      }
      std::stringstream ss(line);
      std::string cell;
      std::vector<std::string> cells;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      if (cells.size() != 7) continue;
      CurvePoint p;
      p.step = std::stol(cells[0]);
      if (p.step > trainer->state().global_step) break;
      p.stage = std::stoi(cells[1]);
      p.losses = {std::stod(cells[2]), std::stod(cells[4]), std::stod(cells[3]),
                  std::stod(cells[5]), std::stod(cells[6])};
      outcome.curve.push_back(p);
    }
  }

  auto snapshot = [&] { return Checkpoint{hash, trainer->state()}; };
  bool step2_written = trainer->state().stage > 3 ||
                       (trainer->state().stage == 3 && trainer->state().iteration > 0);
  auto maybe_step2 = [&] {
    if (!step2_written && trainer->state().stage == 3 && trainer->state().iteration == 0) {
      save_checkpoint(snapshot(), out_dir / "step2.bin");
      step2_written = true;
    }
  };
  try {
    long remaining = options.max_steps.value_or(trainer->total_iterations());
    while (!trainer->finished() && remaining > 0) {
      maybe_step2();
      trainer->run(1, [&](const CurvePoint& p) {
        if (p.step % config.log_stride == 0) outcome.curve.push_back(p);
      });
      --remaining;
      if (trainer->state().global_step % config.checkpoint_every == 0) {
        save_checkpoint(snapshot(), ckpt_path);
      }
    }
    maybe_step2();
  } catch (const NumericalError&) {
    write_text(curve_path, curve_to_csv(outcome.curve));
    throw;
  }
  outcome.checkpoint = snapshot();
  outcome.audit = trainer->audit();
  save_checkpoint(outcome.checkpoint, ckpt_path);
  write_text(curve_path, curve_to_csv(outcome.curve));
  return outcome;
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["format"] = "pslab-eval";
  j["version"] = 1;
  j["map"] = report.map;
  j["top1"] = report.top1;
  j["gallery_size"] = report.gallery_size;
  j["mean_feat_norm"] = report.mean_feat_norm;
  nlohmann::json per = nlohmann::json::array();
  for (const auto& q : report.per_query) {
    per.push_back({{"query", q.query},
                   {"identity", q.identity},
                   {"ap", q.ap},
                   {"top1", q.top1},
                   {"occluded", q.occluded},
                   {"low_res", q.low_res},
                   {"gallery_scenes", q.gallery_scenes}});
  }
  j["per_query"] = std::move(per);
  nlohmann::json subsets = nlohmann::json::object();
  for (const auto& [name, s] : report.subsets)
    subsets[name] = {{"map", s.map}, {"top1", s.top1}, {"queries", s.queries}};
  j["subsets"] = std::move(subsets);
  j["notes"] = report.notes;
  return j.dump(1) + "\n";
}

std::string report_to_csv(const EvalReport& report) {
  std::ostringstream os;
  os << kEvalSchema << '\n' << "query,identity,ap,top1,occluded,low_res,gallery_size\n";
  for (const auto& q : report.per_query) {
    os << q.query << ',' << q.identity << ',' << format_double(q.ap) << ','
       << (q.top1 ? 1 : 0) << ',' << (q.occluded ? 1 : 0) << ',' << (q.low_res ? 1 : 0)
       << ',' << report.gallery_size << '\n';
  }
  return os.str();
}

std::vector<ResultRow> report_rows(const EvalReport& report, const std::string& experiment,
                                   std::uint64_t seed, const std::string& variant,
                                   const std::string& hash) {
  std::vector<ResultRow> rows;
  auto add = [&](const std::string& metric, double v) {
    rows.push_back({experiment, seed, variant, metric, v, "gallery_size",
                    double(report.gallery_size), hash});
  };
  add("map", report.map);
  add("top1", report.top1);
  add("mean_feat_norm", report.mean_feat_norm);
  for (const auto& [name, s] : report.subsets) {
    add(name + ".map", s.map);
    add(name + ".top1", s.top1);
  }
  return rows;
}

EvalReport cmd_eval(const ExperimentConfig& config, const Dataset& dataset,
                    const PersonSearchModel& model, const std::filesystem::path& out_dir) {
  const ModelExtractor extractor(model);
  EvalOptions opts;
  opts.gallery_size = config.gallery_size;
  opts.seed = config.eval_seed;
  EvalReport report = evaluate(extractor, dataset.scenes, dataset.split.test_scenes,
                               dataset.split.queries, opts);
  const std::string hash = config_hash(config);
  write_text(out_dir / "report.json", report_to_json(report));
  write_text(out_dir / "report.csv", report_to_csv(report));
  write_text(out_dir / "rows.csv",
             rows_to_csv(report_rows(report, "eval", config.eval_seed, "model", hash)));
  return report;
}

std::vector<std::vector<int>> make_folds(const Dataset& dataset,
                                         std::span<const int> train_scenes, int folds) {
  auto groups = identity_components(dataset.scenes, train_scenes);
  if (static_cast<int>(groups.size()) < folds) {
    throw ConfigError("only " + std::to_string(groups.size()) +
                      " identity-disjoint scene groups for " + std::to_string(folds) +
                      " folds");
  }
  std::vector<std::vector<int>> out(static_cast<std::size_t>(folds));
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& f = out[g % out.size()];
    f.insert(f.end(), groups[g].begin(), groups[g].end());
  }
  for (auto& f : out) std::sort(f.begin(), f.end());
  return out;
}

TrainerState fine_tune(const Dataset& dataset, std::span<const int> train_scenes,
                       TrainerState start, const TrainSchedule& schedule,
                       std::optional<std::uint64_t> reseed) {
  Trainer trainer(dataset, {train_scenes.begin(), train_scenes.end()}, schedule,
                  std::move(start));
  if (reseed) trainer.reseed(*reseed);
  trainer.run();
  return std::move(trainer.state());
}

namespace {

std::string lambda_variant(double lambda) { return "lambda=" + format_double(lambda); }

// Trains steps 1-2 and returns the state at the start of step 3.
TrainerState train_to_step3(const ExperimentConfig& config, const Dataset& dataset,
                            std::span<const int> train_scenes, std::uint64_t seed) {
  Trainer trainer(dataset, {train_scenes.begin(), train_scenes.end()},
                  config.effective_model(), config.schedule, seed);
  trainer.run_until_stage(3);
  return std::move(trainer.state());
}

}  // namespace

std::vector<ResultRow> cmd_sweep_lambda(const ExperimentConfig& config,
                                        const Dataset& dataset) {
  const std::string hash = config_hash(config);
  const auto folds = make_folds(dataset, dataset.split.train_scenes, config.folds);
  std::vector<ResultRow> rows;
  for (std::uint64_t seed : config.seeds) {
    std::vector<double> map_sum(config.lambdas.size(), 0.0);
    std::vector<double> top1_sum(config.lambdas.size(), 0.0);
    for (std::size_t f = 0; f < folds.size(); ++f) {
      std::vector<int> train;
      for (std::size_t g = 0; g < folds.size(); ++g)
        if (g != f) train.insert(train.end(), folds[g].begin(), folds[g].end());
      std::sort(train.begin(), train.end());
      const auto& val = folds[f];
      const TrainerState start = train_to_step3(config, dataset, train, seed);

      std::vector<QueryRecord> queries;
      for (int want = config.dataset.query_count; want > 0 && queries.empty();) {
        try {
          queries = draw_queries(dataset.scenes, val, want, derive_seed(config.eval_seed, f));
        } catch (const ConfigError&) {
          want /= 2;
        }
      }
      if (queries.empty()) throw ConfigError("validation fold has no usable queries");
      EvalOptions opts;
      opts.gallery_size = std::min(config.gallery_size, static_cast<int>(val.size()) - 1);
      opts.seed = config.eval_seed;

      for (std::size_t li = 0; li < config.lambdas.size(); ++li) {
        TrainSchedule sched = config.schedule;
        sched.lambda = config.lambdas[li];
        const TrainerState done = fine_tune(dataset, train, start, sched);
        const ModelExtractor extractor(done.model);
        const EvalReport rep = evaluate(extractor, dataset.scenes, val, queries, opts);
        map_sum[li] += rep.map;
        top1_sum[li] += rep.top1;
      }
    }
    for (std::size_t li = 0; li < config.lambdas.size(); ++li) {
      const double n = static_cast<double>(folds.size());
      rows.push_back({"sweep-lambda", seed, lambda_variant(config.lambdas[li]), "val_map",
                      map_sum[li] / n, "lambda", config.lambdas[li], hash});
      rows.push_back({"sweep-lambda", seed, lambda_variant(config.lambdas[li]), "val_top1",
                      top1_sum[li] / n, "lambda", config.lambdas[li], hash});
    }
  }
  return rows;
}

std::vector<ResultRow> cmd_sweep_gallery(const ExperimentConfig& config,
                                         const Dataset& dataset,
                                         const PersonSearchModel& model) {
  const std::string hash = config_hash(config);
  const ModelExtractor extractor(model);
  std::vector<ResultRow> rows;
  for (std::uint64_t seed : config.seeds) {
    const auto reports = evaluate_sizes(extractor, dataset.scenes, dataset.split.test_scenes,
                                        dataset.split.queries, config.gallery_sizes,
                                        derive_seed(config.eval_seed, seed));
    for (const auto& rep : reports) {
      rows.push_back({"sweep-gallery", seed, "model", "map", rep.map, "gallery_size",
                      double(rep.gallery_size), hash});
    }
  }
  return rows;
}

std::vector<ResultRow> cmd_dropout_study(const ExperimentConfig& config,
                                         const Dataset& dataset, const Checkpoint& step2) {
  if (step2.state.stage != 3 || step2.state.iteration != 0) {
    throw ConfigError("dropout study needs a checkpoint taken at the start of step 3 "
                      "(step2.bin from train)");
  }
  const std::string hash = config_hash(config);
  std::vector<ResultRow> rows;
  EvalOptions opts;
  opts.gallery_size = config.gallery_size;
  opts.seed = config.eval_seed;
  for (std::uint64_t seed : config.seeds) {
    for (bool dropout : {false, true}) {
      const std::string variant = dropout ? "dropout" : "no-dropout";
      TrainerState state = step2.state;
      state.model.set_dropout(dropout ? DropoutSite::kBeforeFeatHead : DropoutSite::kNone,
                              config.model.keep_probability);
      Trainer trainer(dataset, dataset.split.train_scenes, config.schedule, std::move(state));
      trainer.reseed(seed);
      auto log = [&](long step) {
        const ModelExtractor extractor(trainer.state().model);
        const EvalReport rep = evaluate(extractor, dataset.scenes, dataset.split.test_scenes,
                                        dataset.split.queries, opts);
        rows.push_back({"dropout-study", seed, variant, "map", rep.map, "step", double(step), hash});
        rows.push_back({"dropout-study", seed, variant, "mean_feat_norm", rep.mean_feat_norm,
                        "step", double(step), hash});
      };
      long step = 0;
      log(step);
      while (!trainer.finished()) {
        const long chunk = std::min<long>(config.study_interval,
                                          config.schedule.step3.iterations - step);
        trainer.run(chunk);
        step += chunk;
        log(step);
      }
    }
  }
  return rows;
}

std::vector<ResultRow> cmd_centerinput_study(const ExperimentConfig& config,
                                             const Dataset& dataset) {
  const std::string hash = config_hash(config);
  std::vector<ResultRow> rows;
  EvalOptions opts;
  opts.gallery_size = config.gallery_size;
  opts.seed = config.eval_seed;
  for (std::uint64_t seed : config.seeds) {
    const TrainerState start =
        train_to_step3(config, dataset, dataset.split.train_scenes, seed);
    for (CenterInputMode mode : {CenterInputMode::kGtOnly, CenterInputMode::kAllBoxes}) {
      TrainSchedule sched = config.schedule;
      sched.center_input = mode;
      const TrainerState done = fine_tune(dataset, dataset.split.train_scenes, start, sched);
      const ModelExtractor extractor(done.model);
      const EvalReport rep = evaluate(extractor, dataset.scenes, dataset.split.test_scenes,
                                      dataset.split.queries, opts);
      rows.push_back({"centerinput-study", seed, to_string(mode), "map", rep.map, "", 0.0, hash});
      rows.push_back({"centerinput-study", seed, to_string(mode), "top1", rep.top1, "", 0.0, hash});
    }
  }
  return rows;
}

}  // namespace pslab
