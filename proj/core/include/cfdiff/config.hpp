// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cfdiff/camae.hpp"
#include "cfdiff/dataset.hpp"
#include "cfdiff/schedule.hpp"

namespace cfdiff {

/// Every tunable of a run. Keys in the text form use dashes
/// (e.g. `batch-size = 64`); see config_schema().
struct RunConfig {
  // data
  std::string format = "auto";
  std::optional<double> min_rating;
  data::SplitRatios split_ratios;
  std::uint64_t split_seed = 2024;
  int hops = 3;

  // model
  std::size_t k = 500;
  std::size_t d = 16;
  std::size_t layers = 2;
  std::string alpha = "0.7";
  std::size_t hidden = 0;
  bool t_embed = true;
  bool residual = false;
  std::string activation = "relu";
  bool no_cross_attn = false;
  bool self_attn = false;
  bool no_ae = false;

  // diffusion
  int steps = 100;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  std::string schedule = "linear";

  // training
  std::size_t batch_size = 64;
  int epochs = 30;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  int eval_every = 1;
  int patience = 5;
  std::string loss_weighting = "vlb";
  double time_budget = 0.0;  // seconds; 0 disables

  // evaluation
  int infer_steps = 10;
  std::string ks = "10,20";
  bool exclude_val = true;
  std::string recall = "truncated";
  bool stochastic = false;
  std::size_t eval_batch = 256;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<ConfigKey>& config_schema();

/// Throws ContractError for unknown keys or unparseable values.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& config, const std::string& key);

/// `key = value` lines; blank lines and `#` comments ignored. Errors carry
/// the 1-based line number.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// Every key in schema order, one `key = value` per line.
std::string canonical_text(const RunConfig& config);
std::uint64_t config_digest(const RunConfig& config);

camae::CamAeConfig model_config(const RunConfig& config, std::size_t num_users, std::size_t num_items);
diffusion::NoiseSchedule make_schedule(const RunConfig& config);
std::vector<std::size_t> parse_ks(const std::string& text);

}  // namespace cfdiff
