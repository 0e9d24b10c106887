// pslab: command-line front end for the person-search lab.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pslab/checkpoint.hpp"
#include "pslab/config.hpp"
#include "pslab/errors.hpp"
#include "pslab/experiments.hpp"

namespace fs = std::filesystem;
using namespace pslab;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kIo = 3, kNumerical = 4 };

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string checkpoint;
  std::string data;
  std::optional<long> max_steps;
  std::string resume;
};

ExperimentConfig load(const Options& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (o.seed) {
    c.model_seed = *o.seed;
    c.seeds = {*o.seed};
  }
  c.validate();
  return c;
}

Dataset dataset_for(const Options& o) {
  const fs::path dir = o.data.empty() ? fs::path(o.out) / "data" : fs::path(o.data);
  return load_dataset(dir);
}

Checkpoint checkpoint_for(const Options& o, const ExperimentConfig& c) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  if (!fs::exists(o.checkpoint)) throw IoError("checkpoint not found: " + o.checkpoint);
  Checkpoint ck = load_checkpoint(o.checkpoint);
  if (ck.config_hash != config_hash(c)) {
    std::cerr << "warning: checkpoint config " << ck.config_hash << " differs from "
              << config_hash(c) << "\n";
  }
  return ck;
}

void write_rows(const Options& o, const std::string& name, const std::vector<ResultRow>& rows) {
  const fs::path path = fs::path(o.out) / name;
  write_text(path, rows_to_csv(rows));
  std::cout << "wrote " << rows.size() << " rows to " << path.string() << "\n";
}

int run_guarded(const std::function<void()>& fn) {
  try {
    fn();
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"person-search lab"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "key=value config file");
    sub->add_option("--seed", o.seed, "override the model seed and the seed list");
    sub->add_option("--out", o.out, "output directory");
  };
  auto with_data = [&](CLI::App* sub) {
    sub->add_option("--data", o.data, "dataset directory (default OUT/data)");
  };

  auto* gen = app.add_subcommand("generate", "write the synthetic dataset");
  common(gen);
  auto* train = app.add_subcommand("train", "run the three-step schedule");
  common(train);
  with_data(train);
  train->add_option("--checkpoint", o.resume, "resume from this checkpoint");
  train->add_option("--max-steps", o.max_steps, "stop after this many steps");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  common(eval);
  with_data(eval);
  eval->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required();
  auto* lam = app.add_subcommand("sweep-lambda", "cross-validated center-loss weight sweep");
  common(lam);
  with_data(lam);
  auto* gal = app.add_subcommand("sweep-gallery", "mAP against gallery size");
  common(gal);
  with_data(gal);
  gal->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required();
  auto* drop = app.add_subcommand("dropout-study", "step-3 fine-tune with and without dropout");
  common(drop);
  with_data(drop);
  drop->add_option("--checkpoint", o.checkpoint, "step-2 checkpoint")->required();
  auto* ci = app.add_subcommand("centerinput-study", "gt-only against all-boxes center input");
  common(ci);
  with_data(ci);

  CLI11_PARSE(app, argc, argv);

  return run_guarded([&] {
    const ExperimentConfig c = load(o);
    if (*gen) {
      const fs::path dir = o.data.empty() ? fs::path(o.out) / "data" : fs::path(o.data);
      const Dataset d = cmd_generate(c, dir);
      std::cout << "generated " << d.scenes.size() << " scenes into " << dir.string() << "\n";
    } else if (*train) {
      const Dataset d = dataset_for(o);
      TrainOptions t;
      if (!o.resume.empty()) t.resume = o.resume;
      t.max_steps = o.max_steps;
      const TrainOutcome r = cmd_train(c, d, o.out, t);
      std::cout << "step " << r.checkpoint.state.global_step << ", checkpoint in " << o.out
                << "\n";
    } else if (*eval) {
      const Dataset d = dataset_for(o);
      const Checkpoint ck = checkpoint_for(o, c);
      const EvalReport rep = cmd_eval(c, d, ck.state.model, o.out);
      std::printf("mAP %.4f  top-1 %.4f  gallery %d\n", rep.map, rep.top1, rep.gallery_size);
      for (const auto& n : rep.notes) std::cout << "note: " << n << "\n";
    } else if (*lam) {
      write_rows(o, "sweep_lambda.csv", cmd_sweep_lambda(c, dataset_for(o)));
    } else if (*gal) {
      const Dataset d = dataset_for(o);
      const Checkpoint ck = checkpoint_for(o, c);
      write_rows(o, "sweep_gallery.csv", cmd_sweep_gallery(c, d, ck.state.model));
    } else if (*drop) {
      const Dataset d = dataset_for(o);
      write_rows(o, "dropout_study.csv", cmd_dropout_study(c, d, checkpoint_for(o, c)));
    } else if (*ci) {
      write_rows(o, "centerinput_study.csv", cmd_centerinput_study(c, dataset_for(o)));
    }
  });
}
