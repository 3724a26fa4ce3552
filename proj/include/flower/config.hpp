#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "flower/experiment.hpp"
#include "flower/session.hpp"
#include "flower/tensor.hpp"

namespace flower {

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double out = std::stod(v, &used);
    FLOWER_CHECK(used == v.size(), "trailing characters");
    return out;
  } catch (const std::exception&) {
    throw Error("config: key '" + key + "': expected a number, got '" + v + "'");
  }
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    long long out = std::stoll(v, &used);
    FLOWER_CHECK(used == v.size() && out >= 0, "not a non-negative integer");
    return static_cast<std::size_t>(out);
  } catch (const std::exception&) {
    throw Error("config: key '" + key + "': expected a non-negative integer, got '" +
                v + "'");
  }
}

inline std::vector<std::size_t> parse_size_list(const std::string& key,
                                                const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string cell;
  while (std::getline(ss, cell, ','))
    out.push_back(parse_size(key, trim(cell)));
  return out;
}

}  // namespace detail

/// Parses the flat sectioned key=value config format. Unknown sections and
/// unknown keys are errors (typo protection); `#` starts a comment.
inline HarnessConfig parse_config_text(const std::string& text) {
  HarnessConfig config;
  config.config_echo = text;
  bool transform_widths_set = false;

  static const std::map<std::string, std::set<std::string>> known = {
      {"run",
       {"method", "base-epochs", "session-epochs", "batch-size", "lambda1",
        "hidden-widths", "embedding-dim", "distance"}},
      {"noise",
       {"mode", "bound", "trials", "target-layers", "beta-low", "beta-high",
        "reduction-factor"}},
      {"ball", {"synthetic-per-class", "margin", "lambda2", "transform-widths"}},
      {"pmas", {"lambda3", "lambda4"}},
      {"schedule", {"base-lr", "base-gamma", "base-gamma-frac", "session-lr"}},
      {"stream",
       {"source", "input-dim", "base-classes", "base-samples-per-class",
        "sessions", "ways", "shots", "test-samples-per-class", "cluster-spread",
        "csv-path", "class-order", "test-fraction"}},
  };

  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      FLOWER_CHECK(line.back() == ']', "config: line " + std::to_string(line_no) +
                                           ": malformed section header");
      section = line.substr(1, line.size() - 2);
      FLOWER_CHECK(known.count(section), "config: unknown section [" + section +
                                             "] at line " + std::to_string(line_no));
      continue;
    }

    std::size_t eq = line.find('=');
    FLOWER_CHECK(eq != std::string::npos, "config: line " + std::to_string(line_no) +
                                              ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    FLOWER_CHECK(!section.empty(),
                 "config: line " + std::to_string(line_no) + ": key outside a section");
    FLOWER_CHECK(known.at(section).count(key),
                 "config: unknown key '" + key + "' in section [" + section + "]");

    RunnerConfig& r = config.runner;
    if (section == "run") {
      if (key == "method") r.method = method_from_string(value);
      else if (key == "base-epochs") r.base_epochs = detail::parse_size(key, value);
      else if (key == "session-epochs") r.session_epochs = detail::parse_size(key, value);
      else if (key == "batch-size") r.batch_size = detail::parse_size(key, value);
      else if (key == "lambda1") r.lambda1 = detail::parse_double(key, value);
      else if (key == "hidden-widths") r.model.hidden_widths = detail::parse_size_list(key, value);
      else if (key == "embedding-dim") r.model.embedding_dim = detail::parse_size(key, value);
      else if (key == "distance") {
        if (value == "euclidean") r.model.distance = Distance::euclidean;
        else if (value == "squared-euclidean") r.model.distance = Distance::squared_euclidean;
        else throw Error("config: distance must be euclidean or squared-euclidean");
      }
    } else if (section == "noise") {
      if (key == "mode") {
        if (value == "uniform") r.noise.mode = NoiseSpec::Mode::uniform;
        else if (value == "discrete-beta") r.noise.mode = NoiseSpec::Mode::discrete_beta;
        else throw Error("config: noise mode must be uniform or discrete-beta");
      } else if (key == "bound") r.noise.bound = detail::parse_double(key, value);
      else if (key == "trials") r.noise.trials = detail::parse_size(key, value);
      else if (key == "target-layers") r.noise.target_layers = detail::parse_size(key, value);
      else if (key == "beta-low") r.noise.beta_low = detail::parse_double(key, value);
      else if (key == "beta-high") r.noise.beta_high = detail::parse_double(key, value);
      else if (key == "reduction-factor") r.noise.reduction_factor = detail::parse_double(key, value);
    } else if (section == "ball") {
      if (key == "synthetic-per-class") r.ball.synthetic_per_class = detail::parse_size(key, value);
      else if (key == "margin") r.ball.margin = detail::parse_double(key, value);
      else if (key == "lambda2") r.ball.lambda2 = detail::parse_double(key, value);
      else if (key == "transform-widths") {
        std::vector<std::size_t> w = detail::parse_size_list(key, value);
        FLOWER_CHECK(w.size() == 3, "config: transform-widths needs three entries");
        r.ball.transform_widths = {w[0], w[1], w[2]};
        transform_widths_set = true;
      }
    } else if (section == "pmas") {
      if (key == "lambda3") r.lambda3 = detail::parse_double(key, value);
      else if (key == "lambda4") r.lambda4 = detail::parse_double(key, value);
    } else if (section == "schedule") {
      if (key == "base-lr") r.base_lr = detail::parse_double(key, value);
      else if (key == "base-gamma") r.base_gamma = detail::parse_double(key, value);
      else if (key == "base-gamma-frac") r.base_gamma_frac = detail::parse_double(key, value);
      else if (key == "session-lr") r.session_lr = detail::parse_double(key, value);
    } else if (section == "stream") {
      if (key == "source") {
        if (value == "synthetic") config.csv_source = false;
        else if (value == "csv") config.csv_source = true;
        else throw Error("config: stream source must be synthetic or csv");
      } else if (key == "input-dim") config.stream.input_dim = detail::parse_size(key, value);
      else if (key == "base-classes") {
        config.stream.base_classes = detail::parse_size(key, value);
        config.csv.base_classes = config.stream.base_classes;
      } else if (key == "base-samples-per-class")
        config.stream.base_samples_per_class = detail::parse_size(key, value);
      else if (key == "sessions") {
        config.stream.session_count = detail::parse_size(key, value);
        config.csv.session_count = config.stream.session_count;
      } else if (key == "ways") {
        config.stream.ways = detail::parse_size(key, value);
        config.csv.ways = config.stream.ways;
      } else if (key == "shots") {
        config.stream.shots = detail::parse_size(key, value);
        config.csv.shots = config.stream.shots;
      } else if (key == "test-samples-per-class")
        config.stream.test_samples_per_class = detail::parse_size(key, value);
      else if (key == "cluster-spread")
        config.stream.cluster_spread = detail::parse_double(key, value);
      else if (key == "csv-path") config.csv_path = value;
      else if (key == "class-order") config.csv.class_order_path = value;
      else if (key == "test-fraction")
        config.csv.test_fraction = detail::parse_double(key, value);
    }
  }

  config.runner.model.input_dim = config.stream.input_dim;
  if (!transform_widths_set) {
    std::size_t d = config.runner.model.feature_dim();
    config.runner.ball.transform_widths = {d, d, d};
  }
  if (config.csv_source)
    FLOWER_CHECK(!config.csv_path.empty(), "config: csv source needs csv-path");
  config.runner.validate();
  if (!config.csv_source) config.stream.validate();
  return config;
}

inline HarnessConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  FLOWER_CHECK(in.good(), "config: cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

}  // namespace flower
