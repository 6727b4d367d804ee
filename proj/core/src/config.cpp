// SPDX-License-Identifier: Apache-2.0
#include "cfdiff/config.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

#include "cfdiff/binary_io.hpp"
#include "cfdiff/errors.hpp"

namespace cfdiff {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ContractError(key + ": expected an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ContractError(key + ": expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ContractError(key + ": expected true/false, got '" + v + "'");
}

// Shortest text that parses back to the same double.
std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

template <class Int>
ConfigKey int_key(std::string name, std::string help, Int RunConfig::*field, Int min_value) {
  return {name, std::move(help), [field](const RunConfig& c) { return std::to_string(c.*field); },
          [name, field, min_value](RunConfig& c, const std::string& v) {
            const auto x = parse_int<Int>(name, v);
            if (x < min_value) throw ContractError(name + " must be >= " + std::to_string(min_value));
            c.*field = x;
          }};
}

ConfigKey double_key(std::string name, std::string help, double RunConfig::*field) {
  return {name, std::move(help), [field](const RunConfig& c) { return fmt_double(c.*field); },
          [name, field](RunConfig& c, const std::string& v) { c.*field = parse_double(name, v); }};
}

ConfigKey bool_key(std::string name, std::string help, bool RunConfig::*field) {
  return {name, std::move(help), [field](const RunConfig& c) { return fmt_bool(c.*field); },
          [name, field](RunConfig& c, const std::string& v) { c.*field = parse_bool(name, v); }};
}

ConfigKey choice_key(std::string name, std::string help, std::string RunConfig::*field,
                     std::vector<std::string> choices) {
  return {name, std::move(help), [field](const RunConfig& c) { return c.*field; },
          [name, field, choices](RunConfig& c, const std::string& v) {
            if (!choices.empty() && std::find(choices.begin(), choices.end(), v) == choices.end()) {
              std::string all;
              for (const auto& s : choices) all += (all.empty() ? "" : "|") + s;
              throw ContractError(name + ": expected one of " + all + ", got '" + v + "'");
            }
            c.*field = v;
          }};
}

std::vector<ConfigKey> make_schema() {
  std::vector<ConfigKey> s;
  s.push_back(choice_key("format", "input format: auto|tsv|csv|movielens-dat", &RunConfig::format,
                         {"auto", "tsv", "csv", "movielens-dat"}));
  s.push_back({"min-rating", "keep records with rating >= value; 'none' keeps all",
               [](const RunConfig& c) { return c.min_rating ? fmt_double(*c.min_rating) : std::string("none"); },
               [](RunConfig& c, const std::string& v) {
                 if (v == "none") c.min_rating.reset();
                 else c.min_rating = parse_double("min-rating", v);
               }});
  s.push_back({"split-ratios", "train,val,test fractions",
               [](const RunConfig& c) {
                 return fmt_double(c.split_ratios.train) + "," + fmt_double(c.split_ratios.val) + "," +
                        fmt_double(c.split_ratios.test);
               },
               [](RunConfig& c, const std::string& v) { c.split_ratios = data::parse_ratios(v); }});
  s.push_back(int_key<std::uint64_t>("split-seed", "seed of the per-user holdout", &RunConfig::split_seed, 0));
  s.push_back(int_key<int>("hops", "maximum hop H (tuning range 2..4)", &RunConfig::hops, 2));

  s.push_back(int_key<std::size_t>("k", "latent dimension (tuning range 512, 1024, 2048)", &RunConfig::k, 1));
  s.push_back(int_key<std::size_t>("d", "expanded dimension (tuning range 16..128)", &RunConfig::d, 1));
  s.push_back(int_key<std::size_t>("layers", "stacked attention layers N (tuning range 1..4)", &RunConfig::layers, 1));
  s.push_back({"alpha", "hop weights: alpha_2 (0.3, 0.5, 0.7) or a full comma list",
               [](const RunConfig& c) { return c.alpha; },
               [](RunConfig& c, const std::string& v) {
                 camae::parse_alpha(v, 2);  // syntax only; arity is checked against hops later
                 c.alpha = v;
               }});
  s.push_back(int_key<std::size_t>("hidden", "feedforward width; 0 means 4d", &RunConfig::hidden, 0));
  s.push_back(bool_key("t-embed", "add a sinusoidal timestep embedding", &RunConfig::t_embed));
  s.push_back(bool_key("residual", "residual connections across layers", &RunConfig::residual));
  s.push_back(choice_key("activation", "feedforward nonlinearity: relu|tanh", &RunConfig::activation,
                         {"relu", "tanh"}));
  s.push_back(bool_key("no-cross-attn", "ablation: drop attention", &RunConfig::no_cross_attn));
  s.push_back(bool_key("self-attn", "ablation: queries from v_t", &RunConfig::self_attn));
  s.push_back(bool_key("no-ae", "ablation: attention over full-length vectors", &RunConfig::no_ae));

  s.push_back(int_key<int>("steps", "diffusion steps T", &RunConfig::steps, 1));
  s.push_back(double_key("beta-min", "smallest noise scale", &RunConfig::beta_min));
  s.push_back(double_key("beta-max", "largest noise scale", &RunConfig::beta_max));
  s.push_back(choice_key("schedule", "noise schedule: linear|linear-scaled", &RunConfig::schedule,
                         {"linear", "linear-scaled"}));

  s.push_back(int_key<std::size_t>("batch-size", "users per step (tuning range 32..256)", &RunConfig::batch_size, 1));
  s.push_back(int_key<int>("epochs", "maximum epochs", &RunConfig::epochs, 0));
  s.push_back(double_key("lr", "Adam learning rate", &RunConfig::lr));
  s.push_back(int_key<std::uint64_t>("seed", "training seed", &RunConfig::seed, 0));
  s.push_back(int_key<int>("eval-every", "epochs between validation runs", &RunConfig::eval_every, 1));
  s.push_back(int_key<int>("patience", "non-improving validations before stopping", &RunConfig::patience, 1));
  s.push_back(choice_key("loss-weighting", "vlb (1/(2 beta_t) per step) or simple", &RunConfig::loss_weighting,
                         {"vlb", "simple"}));
  s.push_back(double_key("time-budget", "training wall-clock limit in seconds; 0 disables",
                         &RunConfig::time_budget));

  s.push_back(int_key<int>("infer-steps", "corruption depth T' at inference", &RunConfig::infer_steps, 0));
  s.push_back({"ks", "comma list of cutoffs K", [](const RunConfig& c) { return c.ks; },
               [](RunConfig& c, const std::string& v) {
                 parse_ks(v);
                 c.ks = v;
               }});
  s.push_back(bool_key("exclude-val", "drop validation items from test candidates", &RunConfig::exclude_val));
  s.push_back(choice_key("recall", "recall denominator: truncated|full", &RunConfig::recall, {"truncated", "full"}));
  s.push_back(bool_key("stochastic", "re-inject noise during reverse steps", &RunConfig::stochastic));
  s.push_back(int_key<std::size_t>("eval-batch", "users per inference batch", &RunConfig::eval_batch, 1));
  return s;
}

const ConfigKey& find_key(const std::string& key) {
  for (const auto& k : config_schema()) {
    if (k.name == key) return k;
  }
  throw ContractError("unknown config key '" + key + "'");
}

}  // namespace

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = make_schema();
  return schema;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  find_key(key).set(config, value);
}

std::string get_config_value(const RunConfig& config, const std::string& key) { return find_key(key).get(config); }

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "expected 'key = value'");
    try {
      set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ContractError& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  return parse_config(io::read_file(path), std::move(base));
}

std::string canonical_text(const RunConfig& config) {
  std::string out;
  for (const auto& k : config_schema()) out += k.name + " = " + k.get(config) + "\n";
  return out;
}

std::uint64_t config_digest(const RunConfig& config) { return io::fnv1a(canonical_text(config)); }

camae::CamAeConfig model_config(const RunConfig& config, std::size_t num_users, std::size_t num_items) {
  if (config.self_attn && config.no_cross_attn) {
    throw ContractError("self-attn and no-cross-attn are mutually exclusive");
  }
  camae::CamAeConfig m;
  m.num_users = num_users;
  m.num_items = num_items;
  m.k = config.k;
  m.d = config.d;
  m.layers = config.layers;
  m.hops = config.hops;
  m.alpha = camae::parse_alpha(config.alpha, config.hops);
  m.hidden = config.hidden;
  m.t_embed = config.t_embed;
  m.residual = config.residual;
  m.activation = camae::parse_activation(config.activation);
  m.variant = config.self_attn       ? camae::Variant::self_attn
              : config.no_cross_attn ? camae::Variant::no_cross_attn
                                     : camae::Variant::full;
  m.no_ae = config.no_ae;
  m.validate();
  return m;
}

diffusion::NoiseSchedule make_schedule(const RunConfig& config) {
  return diffusion::build_schedule(config.steps, config.beta_min, config.beta_max,
                                   diffusion::parse_schedule_kind(config.schedule));
}

std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const auto k = parse_int<std::size_t>("ks", trim(part));
    if (k == 0) throw ContractError("ks: cutoffs must be >= 1");
    out.push_back(k);
  }
  if (out.empty()) throw ContractError("ks: at least one cutoff required");
  return out;
}

}  // namespace cfdiff
