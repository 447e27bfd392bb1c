// SPDX-License-Identifier: Apache-2.0
#include "diffquant/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "diffquant/errors.hpp"

namespace diffquant {

namespace {

using nlohmann::json;

// Typed field access with ConfigError diagnostics naming the field path.
template <typename T>
T require_field(const json& obj, const std::string& path) {
  const json* cur = &obj;
  std::string walked;
  std::istringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '.')) {
    walked = walked.empty() ? part : walked + "." + part;
    if (!cur->is_object() || !cur->contains(part))
      throw ConfigError("config: missing required field '" + walked + "'");
    cur = &(*cur)[part];
  }
  try {
    return cur->get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: field '" + path + "' has the wrong type");
  }
}

template <typename T>
T optional_field(const json& obj, const std::string& path, T fallback) {
  const json* cur = &obj;
  std::istringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (!cur->is_object() || !cur->contains(part)) return fallback;
    cur = &(*cur)[part];
  }
  try {
    return cur->get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: field '" + path + "' has the wrong type");
  }
}

void reject_unknown_keys(const json& obj, const std::string& scope,
                         const std::set<std::string>& known) {
  if (!obj.is_object()) return;
  for (const auto& item : obj.items())
    if (!known.count(item.key()))
      throw ConfigError("config: unknown field '" +
                        (scope.empty() ? item.key() : scope + "." + item.key()) +
                        "'");
}

} // namespace

ExperimentConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: JSON parse error: ") + e.what());
  }

  reject_unknown_keys(j, "", {"version", "dataset", "schedule", "model",
                              "training", "quantization", "relaxation",
                              "evaluation", "probe"});

  ExperimentConfig cfg;
  cfg.version = require_field<int>(j, "version");
  if (cfg.version != 1)
    throw ConfigError("config: unsupported version " + std::to_string(cfg.version));

  reject_unknown_keys(j["dataset"], "dataset",
                      {"modes", "radius", "std", "phase", "seed"});
  cfg.dataset.num_modes = require_field<int>(j, "dataset.modes");
  cfg.dataset.radius = require_field<double>(j, "dataset.radius");
  cfg.dataset.mode_std = require_field<double>(j, "dataset.std");
  cfg.dataset.phase = optional_field<double>(j, "dataset.phase", 0.0);
  cfg.dataset.seed = require_field<std::uint64_t>(j, "dataset.seed");

  reject_unknown_keys(j["schedule"], "schedule", {"T", "beta_start", "beta_end"});
  cfg.T = require_field<int>(j, "schedule.T");
  cfg.beta_start = require_field<double>(j, "schedule.beta_start");
  cfg.beta_end = require_field<double>(j, "schedule.beta_end");

  reject_unknown_keys(j["model"], "model",
                      {"hidden_width", "time_features", "cond_embed", "init_seed"});
  cfg.model.data_dim = 2;
  cfg.model.hidden_width = require_field<int>(j, "model.hidden_width");
  cfg.model.time_feat_dim = require_field<int>(j, "model.time_features");
  cfg.model.cond_emb_dim = require_field<int>(j, "model.cond_embed");
  cfg.model.init_seed = require_field<std::uint64_t>(j, "model.init_seed");
  cfg.model.num_labels = cfg.dataset.num_modes;

  reject_unknown_keys(j["training"], "training",
                      {"steps", "batch", "lr", "rms_decay", "seed", "log_every"});
  cfg.training.steps = require_field<int>(j, "training.steps");
  cfg.training.batch_size = require_field<int>(j, "training.batch");
  cfg.training.learning_rate = require_field<double>(j, "training.lr");
  cfg.training.rms_decay = optional_field<double>(j, "training.rms_decay", 0.99);
  cfg.training.seed = require_field<std::uint64_t>(j, "training.seed");
  cfg.training.log_every = optional_field<int>(j, "training.log_every", 50);

  reject_unknown_keys(j["quantization"], "quantization",
                      {"weight_bits", "act_bits", "calib_method", "mse_grid",
                       "weight_adaround", "weight_scale_grid",
                       "calib_conditions", "samples_per_condition",
                       "calib_labels", "calib_seed"});
  cfg.weight_bits = require_field<int>(j, "quantization.weight_bits");
  cfg.act_bits = require_field<int>(j, "quantization.act_bits");
  cfg.calib_method =
      optional_field<std::string>(j, "quantization.calib_method", "mse");
  if (cfg.calib_method != "mse" && cfg.calib_method != "minmax")
    throw ConfigError("config: quantization.calib_method must be 'mse' or 'minmax'");
  cfg.mse_grid_points = optional_field<int>(j, "quantization.mse_grid", 80);
  cfg.weight_adaround =
      optional_field<bool>(j, "quantization.weight_adaround", true);
  cfg.weight_scale_grid =
      optional_field<int>(j, "quantization.weight_scale_grid", 80);
  cfg.calib_conditions =
      require_field<int>(j, "quantization.calib_conditions");
  cfg.samples_per_condition =
      require_field<int>(j, "quantization.samples_per_condition");
  cfg.calib_labels =
      require_field<std::vector<int>>(j, "quantization.calib_labels");
  cfg.calib_seed = require_field<std::uint64_t>(j, "quantization.calib_seed");

  reject_unknown_keys(j["relaxation"], "relaxation", {"tau", "end", "high_bits"});
  cfg.tau = optional_field<double>(j, "relaxation.tau", 0.0);
  cfg.relax_end = optional_field<std::string>(j, "relaxation.end", "near_x0");
  parse_relax_end(cfg.relax_end); // validate
  cfg.high_bits = optional_field<int>(j, "relaxation.high_bits", 10);

  reject_unknown_keys(j["evaluation"], "evaluation",
                      {"n_samples", "seed_groups", "seed", "holdout_labels",
                       "feature_dim"});
  cfg.eval_samples = require_field<int>(j, "evaluation.n_samples");
  cfg.eval_seed_groups = optional_field<int>(j, "evaluation.seed_groups", 5);
  cfg.eval_seed = require_field<std::uint64_t>(j, "evaluation.seed");
  cfg.holdout_labels =
      require_field<std::vector<int>>(j, "evaluation.holdout_labels");
  cfg.feature_dim = optional_field<int>(j, "evaluation.feature_dim", 0);

  reject_unknown_keys(j["probe"], "probe", {"seed", "samples", "seed_groups"});
  cfg.probe_seed = optional_field<std::uint64_t>(j, "probe.seed", 23);
  cfg.probe_samples = optional_field<int>(j, "probe.samples", 256);
  cfg.probe_seed_groups = optional_field<int>(j, "probe.seed_groups", 10);

  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return config_from_json_text(ss.str());
}

std::string config_to_json_text(const ExperimentConfig& cfg) {
  json j;
  j["version"] = cfg.version;
  j["dataset"] = {{"modes", cfg.dataset.num_modes},
                  {"radius", cfg.dataset.radius},
                  {"std", cfg.dataset.mode_std},
                  {"phase", cfg.dataset.phase},
                  {"seed", cfg.dataset.seed}};
  j["schedule"] = {{"T", cfg.T},
                   {"beta_start", cfg.beta_start},
                   {"beta_end", cfg.beta_end}};
  j["model"] = {{"hidden_width", cfg.model.hidden_width},
                {"time_features", cfg.model.time_feat_dim},
                {"cond_embed", cfg.model.cond_emb_dim},
                {"init_seed", cfg.model.init_seed}};
  j["training"] = {{"steps", cfg.training.steps},
                   {"batch", cfg.training.batch_size},
                   {"lr", cfg.training.learning_rate},
                   {"rms_decay", cfg.training.rms_decay},
                   {"seed", cfg.training.seed},
                   {"log_every", cfg.training.log_every}};
  j["quantization"] = {{"weight_bits", cfg.weight_bits},
                       {"act_bits", cfg.act_bits},
                       {"calib_method", cfg.calib_method},
                       {"mse_grid", cfg.mse_grid_points},
                       {"weight_adaround", cfg.weight_adaround},
                       {"weight_scale_grid", cfg.weight_scale_grid},
                       {"calib_conditions", cfg.calib_conditions},
                       {"samples_per_condition", cfg.samples_per_condition},
                       {"calib_labels", cfg.calib_labels},
                       {"calib_seed", cfg.calib_seed}};
  j["relaxation"] = {{"tau", cfg.tau},
                     {"end", cfg.relax_end},
                     {"high_bits", cfg.high_bits}};
  j["evaluation"] = {{"n_samples", cfg.eval_samples},
                     {"seed_groups", cfg.eval_seed_groups},
                     {"seed", cfg.eval_seed},
                     {"holdout_labels", cfg.holdout_labels},
                     {"feature_dim", cfg.feature_dim}};
  j["probe"] = {{"seed", cfg.probe_seed},
                {"samples", cfg.probe_samples},
                {"seed_groups", cfg.probe_seed_groups}};
  return j.dump(2) + "\n";
}

void save_config(const std::string& path, const ExperimentConfig& cfg) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_config: cannot open " + path);
  f << config_to_json_text(cfg);
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string text = config_to_json_text(cfg);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

CalibrationSpec make_calibration_spec(const ExperimentConfig& cfg) {
  if (cfg.calib_labels.empty())
    throw ConfigError("config: quantization.calib_labels must be non-empty");
  CalibrationSpec spec;
  spec.conditions.reserve(static_cast<std::size_t>(cfg.calib_conditions));
  for (int i = 0; i < cfg.calib_conditions; ++i)
    spec.conditions.push_back(
        cfg.calib_labels[static_cast<std::size_t>(i) % cfg.calib_labels.size()]);
  spec.samples_per_condition = cfg.samples_per_condition;
  spec.seed = cfg.calib_seed;
  spec.act_calib_method = cfg.calib_method == "minmax" ? ActCalibMethod::kMinMax
                                                       : ActCalibMethod::kMse;
  spec.weight_bits = cfg.weight_bits;
  spec.act_bits = cfg.act_bits;
  spec.mse_grid_points = cfg.mse_grid_points;
  return spec;
}

EvalSpec make_eval_spec(const ExperimentConfig& cfg) {
  EvalSpec spec;
  spec.n_samples = cfg.eval_samples;
  spec.n_seed_groups = cfg.eval_seed_groups;
  spec.seed = cfg.eval_seed;
  spec.calib_labels = cfg.calib_labels;
  spec.holdout_labels = cfg.holdout_labels;
  spec.dataset = cfg.dataset;
  spec.feature_dim = cfg.feature_dim;
  return spec;
}

RelaxationPolicy make_relaxation_policy(const ExperimentConfig& cfg) {
  RelaxationPolicy policy;
  policy.tau = cfg.tau;
  policy.end = parse_relax_end(cfg.relax_end);
  policy.base_bits = cfg.act_bits;
  policy.high_bits = cfg.high_bits;
  return policy;
}

ProbeSpec make_probe_spec(const ExperimentConfig& cfg) {
  ProbeSpec spec;
  spec.conditions.clear();
  for (int k = 0; k < cfg.dataset.num_modes; ++k) spec.conditions.push_back(k);
  spec.samples_per_group = cfg.probe_samples;
  spec.seed = cfg.probe_seed;
  spec.dataset = cfg.dataset;
  return spec;
}

NoiseSchedule make_config_schedule(const ExperimentConfig& cfg) {
  return make_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
}

} // namespace diffquant
