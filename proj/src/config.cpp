#include "pslab/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "pslab/errors.hpp"

namespace pslab {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out = 0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T, typename Fmt>
std::string join(const std::vector<T>& xs, Fmt fmt) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += fmt(xs[i]);
  }
  return out;
}

struct Entry {
  std::string description;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
};

// Accessors for a field reached through a projection.
template <typename Proj>
Entry real(std::string desc, Proj proj) {
  return {std::move(desc),
          [proj](const ExperimentConfig& c) {
            return fmt_double(proj(const_cast<ExperimentConfig&>(c)));
          },
          [proj](ExperimentConfig& c, const std::string& k, const std::string& v) {
            proj(c) = parse_double(k, v);
          }};
}

template <typename Proj>
Entry integer(std::string desc, Proj proj) {
  return {std::move(desc),
          [proj](const ExperimentConfig& c) {
            return std::to_string(proj(const_cast<ExperimentConfig&>(c)));
          },
          [proj](ExperimentConfig& c, const std::string& k, const std::string& v) {
            using T = std::remove_reference_t<decltype(proj(c))>;
            proj(c) = parse_int<T>(k, v);
          }};
}

template <typename Proj>
Entry boolean(std::string desc, Proj proj) {
  return {std::move(desc),
          [proj](const ExperimentConfig& c) {
            return std::string(proj(const_cast<ExperimentConfig&>(c)) ? "true" : "false");
          },
          [proj](ExperimentConfig& c, const std::string& k, const std::string& v) {
            proj(c) = parse_bool(k, v);
          }};
}

template <typename Proj>
Entry int_list(std::string desc, Proj proj) {
  return {std::move(desc),
          [proj](const ExperimentConfig& c) {
            return join(proj(const_cast<ExperimentConfig&>(c)),
                        [](auto x) { return std::to_string(x); });
          },
          [proj](ExperimentConfig& c, const std::string& k, const std::string& v) {
            auto& dst = proj(c);
            using T = typename std::remove_reference_t<decltype(dst)>::value_type;
            dst.clear();
            for (const auto& item : split_list(v)) dst.push_back(parse_int<T>(k, item));
          }};
}

const std::map<std::string, Entry>& entries() {
  static const std::map<std::string, Entry> table = [] {
    std::map<std::string, Entry> t;
    // dataset
    t["dataset.seed"] = integer("dataset generator seed", [](ExperimentConfig& c) -> auto& { return c.dataset.seed; });
    t["dataset.identities"] = integer("number of identities", [](ExperimentConfig& c) -> auto& { return c.dataset.identities; });
    t["dataset.prototype_dim"] = integer("identity prototype dimension", [](ExperimentConfig& c) -> auto& { return c.dataset.prototype_dim; });
    t["dataset.sites"] = integer("identity groups; scenes draw persons from one site", [](ExperimentConfig& c) -> auto& { return c.dataset.sites; });
    t["dataset.scenes"] = integer("number of scenes", [](ExperimentConfig& c) -> auto& { return c.dataset.scenes; });
    t["dataset.patch_width"] = integer("decoder patch width", [](ExperimentConfig& c) -> auto& { return c.dataset.patch_width; });
    t["dataset.patch_height"] = integer("decoder patch height", [](ExperimentConfig& c) -> auto& { return c.dataset.patch_height; });
    t["dataset.test_fraction"] = real("target fraction of test scenes", [](ExperimentConfig& c) -> auto& { return c.dataset.test_fraction; });
    t["dataset.query_count"] = integer("number of test queries", [](ExperimentConfig& c) -> auto& { return c.dataset.query_count; });
    // variation
    t["variation.noise_std"] = real("pixel noise std", [](ExperimentConfig& c) -> auto& { return c.dataset.variation.noise_std; });
    t["variation.lighting_min"] = real("lower lighting scale", [](ExperimentConfig& c) -> auto& { return c.dataset.variation.lighting_min; });
    t["variation.lighting_max"] = real("upper lighting scale", [](ExperimentConfig& c) -> auto& { return c.dataset.variation.lighting_max; });
    t["variation.occlusion_probability"] = real("probability a person is occluded", [](ExperimentConfig& c) -> auto& { return c.dataset.variation.occlusion_probability; });
    t["variation.low_res_probability"] = real("probability a person is low resolution", [](ExperimentConfig& c) -> auto& { return c.dataset.variation.low_res_probability; });
    // scene
    t["scene.canvas_width"] = integer("canvas width", [](ExperimentConfig& c) -> auto& { return c.dataset.scene.canvas_width; });
    t["scene.canvas_height"] = integer("canvas height", [](ExperimentConfig& c) -> auto& { return c.dataset.scene.canvas_height; });
    t["scene.min_persons"] = integer("fewest persons per scene", [](ExperimentConfig& c) -> auto& { return c.dataset.scene.min_persons; });
    t["scene.max_persons"] = integer("most persons per scene", [](ExperimentConfig& c) -> auto& { return c.dataset.scene.max_persons; });
    t["scene.unknown_person_rate"] = real("fraction of unlabelled persons", [](ExperimentConfig& c) -> auto& { return c.dataset.scene.unknown_person_rate; });
    t["scene.min_box_width"] = integer("smallest person box width", [](ExperimentConfig& c) -> auto& { return c.dataset.scene.min_box_width; });
    t["scene.max_box_width"] = integer("largest person box width", [](ExperimentConfig& c) -> auto& { return c.dataset.scene.max_box_width; });
    t["scene.min_distractors"] = integer("fewest clutter rectangles", [](ExperimentConfig& c) -> auto& { return c.dataset.scene.min_distractors; });
    t["scene.max_distractors"] = integer("most clutter rectangles", [](ExperimentConfig& c) -> auto& { return c.dataset.scene.max_distractors; });
    t["scene.background_noise"] = real("background pixel noise std", [](ExperimentConfig& c) -> auto& { return c.dataset.scene.background_noise; });
    // stored proposals (gallery side)
    t["proposals.jitter_std"] = real("gallery proposal jitter (pixels)", [](ExperimentConfig& c) -> auto& { return c.dataset.proposals.jitter_std; });
    t["proposals.miss_rate"] = real("gallery proposal miss rate", [](ExperimentConfig& c) -> auto& { return c.dataset.proposals.miss_rate; });
    t["proposals.false_alarms"] = real("gallery false alarms per scene (Poisson mean)", [](ExperimentConfig& c) -> auto& { return c.dataset.proposals.false_alarms_per_scene; });
    // model
    t["model.seed"] = integer("model initialisation and training seed", [](ExperimentConfig& c) -> auto& { return c.model_seed; });
    t["model.hidden"] = int_list("trunk hidden widths", [](ExperimentConfig& c) -> auto& { return c.model.hidden; });
    t["model.feat_dim"] = integer("feature dimension d", [](ExperimentConfig& c) -> auto& { return c.model.feat_dim; });
    t["model.roi_width"] = integer("ROI width", [](ExperimentConfig& c) -> auto& { return c.model.roi_width; });
    t["model.roi_height"] = integer("ROI height", [](ExperimentConfig& c) -> auto& { return c.model.roi_height; });
    // schedule
    t["train.step1_iterations"] = integer("crop warm-up iterations", [](ExperimentConfig& c) -> auto& { return c.schedule.step1.iterations; });
    t["train.step1_lr"] = real("crop warm-up learning rate", [](ExperimentConfig& c) -> auto& { return c.schedule.step1.learning_rate; });
    t["train.step1_batch"] = integer("crops per warm-up batch (half background)", [](ExperimentConfig& c) -> auto& { return c.schedule.step1_batch; });
    t["train.step2_iterations"] = integer("iterations without center loss", [](ExperimentConfig& c) -> auto& { return c.schedule.step2.iterations; });
    t["train.step2_lr"] = real("step-2 learning rate", [](ExperimentConfig& c) -> auto& { return c.schedule.step2.learning_rate; });
    t["train.step2_decay_after"] = integer("step-2 iteration where the rate decays", [](ExperimentConfig& c) -> auto& { return c.schedule.step2_decay_after; });
    t["train.step2_decay"] = real("step-2 rate multiplier after decay", [](ExperimentConfig& c) -> auto& { return c.schedule.step2_decay; });
    t["train.step3_iterations"] = integer("iterations with center loss", [](ExperimentConfig& c) -> auto& { return c.schedule.step3.iterations; });
    t["train.step3_lr"] = real("step-3 learning rate", [](ExperimentConfig& c) -> auto& { return c.schedule.step3.learning_rate; });
    t["train.scenes_per_batch"] = integer("scenes per step-2/3 batch", [](ExperimentConfig& c) -> auto& { return c.schedule.scenes_per_batch; });
    t["train.jitter_std"] = real("training proposal jitter (pixels)", [](ExperimentConfig& c) -> auto& { return c.schedule.train_proposals.jitter_std; });
    t["train.miss_rate"] = real("training proposal miss rate", [](ExperimentConfig& c) -> auto& { return c.schedule.train_proposals.miss_rate; });
    t["train.false_alarms"] = real("training false alarms per scene", [](ExperimentConfig& c) -> auto& { return c.schedule.train_proposals.false_alarms_per_scene; });
    t["train.log_stride"] = integer("steps between curve rows", [](ExperimentConfig& c) -> auto& { return c.log_stride; });
    t["train.checkpoint_every"] = integer("steps between checkpoints", [](ExperimentConfig& c) -> auto& { return c.checkpoint_every; });
    // losses
    t["loss.lambda"] = real("center loss weight", [](ExperimentConfig& c) -> auto& { return c.schedule.lambda; });
    t["loss.alpha"] = real("center learning rate", [](ExperimentConfig& c) -> auto& { return c.schedule.alpha; });
    t["loss.rss_negatives"] = integer("sampled negative classes per batch", [](ExperimentConfig& c) -> auto& { return c.schedule.rss_negatives; });
    t["center.input_mode"] = {
        "gt-only or all-boxes",
        [](const ExperimentConfig& c) { return to_string(c.schedule.center_input); },
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {
          if (v == "gt-only") c.schedule.center_input = CenterInputMode::kGtOnly;
          else if (v == "all-boxes") c.schedule.center_input = CenterInputMode::kAllBoxes;
          else throw ConfigError(k + ": expected gt-only or all-boxes");
        }};
    // dropout
    t["dropout.enabled"] = boolean("insert the dropout site", [](ExperimentConfig& c) -> auto& { return c.dropout_enabled; });
    t["dropout.keep_probability"] = real("dropout keep probability p", [](ExperimentConfig& c) -> auto& { return c.model.keep_probability; });
    t["dropout.site"] = {
        "none or before-feat-head",
        [](const ExperimentConfig& c) { return to_string(c.model.dropout_site); },
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {
          if (v == "none") c.model.dropout_site = DropoutSite::kNone;
          else if (v == "before-feat-head") c.model.dropout_site = DropoutSite::kBeforeFeatHead;
          else throw ConfigError(k + ": expected none or before-feat-head");
        }};
    // evaluation and experiments
    t["eval.gallery_size"] = integer("gallery scenes per query", [](ExperimentConfig& c) -> auto& { return c.gallery_size; });
    t["eval.gallery_sizes"] = int_list("gallery sizes for the sweep", [](ExperimentConfig& c) -> auto& { return c.gallery_sizes; });
    t["eval.seed"] = integer("gallery sampling seed", [](ExperimentConfig& c) -> auto& { return c.eval_seed; });
    t["experiment.seeds"] = int_list("replicate seeds", [](ExperimentConfig& c) -> auto& { return c.seeds; });
    t["experiment.folds"] = integer("validation folds for the lambda sweep", [](ExperimentConfig& c) -> auto& { return c.folds; });
    t["experiment.lambdas"] = {
        "lambda values for the sweep",
        [](const ExperimentConfig& c) { return join(c.lambdas, fmt_double); },
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {
          c.lambdas.clear();
          for (const auto& item : split_list(v)) c.lambdas.push_back(parse_double(k, item));
        }};
    t["experiment.study_interval"] = integer("steps between dropout-study evaluations", [](ExperimentConfig& c) -> auto& { return c.study_interval; });
    return t;
  }();
  return table;
}

}  // namespace

std::string to_string(CenterInputMode mode) {
  return mode == CenterInputMode::kGtOnly ? "gt-only" : "all-boxes";
}

std::string to_string(DropoutSite site) {
  return site == DropoutSite::kNone ? "none" : "before-feat-head";
}

void ExperimentConfig::validate() const {
  dataset.validate();
  model.validate();
  schedule.validate();
  if (log_stride < 1) throw ConfigError("train.log_stride must be >= 1");
  if (checkpoint_every < 1) throw ConfigError("train.checkpoint_every must be >= 1");
  if (gallery_size < 1) throw ConfigError("eval.gallery_size must be >= 1");
  for (int g : gallery_sizes)
    if (g < 1) throw ConfigError("eval.gallery_sizes must be >= 1");
  if (seeds.empty()) throw ConfigError("experiment.seeds must not be empty");
  if (folds < 2) throw ConfigError("experiment.folds must be >= 2");
  for (double l : lambdas)
    if (!(l >= 0.0)) throw ConfigError("experiment.lambdas must be >= 0");
  if (study_interval < 1) throw ConfigError("experiment.study_interval must be >= 1");
  if (dropout_enabled && model.dropout_site == DropoutSite::kNone) {
    throw ConfigError("dropout.enabled needs dropout.site = before-feat-head");
  }
  if (model.roi_width * model.roi_height < 1) throw ConfigError("empty ROI");
}

ModelConfig ExperimentConfig::effective_model() const {
  ModelConfig m = model;
  if (!dropout_enabled) m.dropout_site = DropoutSite::kNone;
  return m;
}

const std::vector<ConfigKey>& config_registry() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& [name, e] : entries()) out.push_back({name, e.description});
    return out;
  }();
  return keys;
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = entries().find(key);
    if (it == entries().end()) {
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    it->second.set(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const ExperimentConfig& config) {
  std::string out;
  for (const auto& [name, e] : entries()) out += name + " = " + e.get(config) + "\n";
  return out;
}

std::string fnv1a_hex(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const ExperimentConfig& config) {
  return fnv1a_hex(to_text(config));
}

}  // namespace pslab
