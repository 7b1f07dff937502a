/*
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "irrcnn/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace irrcnn {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string unquote(std::string s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                        (s.front() == '\'' && s.back() == '\''))) {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: " + key + " expects an integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: " + key + " expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config: " + key + " expects a boolean, got '" + v + "'");
}

void expect_choice(const std::string& key, const std::string& v,
                   std::initializer_list<const char*> choices) {
  for (const char* c : choices) {
    if (v == c) return;
  }
  std::string msg = "config: " + key + " must be one of {";
  bool first = true;
  for (const char* c : choices) {
    if (!first) msg += "|";
    msg += c;
    first = false;
  }
  throw std::invalid_argument(msg + "}, got '" + v + "'");
}

}  // namespace

std::vector<Index> parse_index_list(const std::string& s) {
  std::vector<Index> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(static_cast<Index>(to_int("list", item)));
  }
  if (out.empty()) throw std::invalid_argument("config: empty width list '" + s + "'");
  return out;
}

Index RunConfig::resolve_classes() const {
  if (dataset == "cifar10") return 10;
  if (dataset == "cifar100") return 100;
  if (dataset == "synthetic") return synth_classes;
  throw std::invalid_argument("config: unknown dataset '" + dataset + "'");
}

ArchSpec RunConfig::to_arch(Index classes) const {
  ArchSpec a;
  a.variant = parse_variant(arch);
  a.in_c = 3;
  if (dataset == "synthetic") {
    a.in_h = a.in_w = synth_size;
  } else {
    a.in_h = a.in_w = 32;
  }
  a.stem = stem;
  a.stages = stages;
  a.final_width = final_width;
  a.k = k;
  a.classes = classes;
  a.width_mult = width_mult;
  a.activation = parse_activation(activation);
  return a;
}

void config_set(RunConfig& cfg, const std::string& key, const std::string& value) {
  const std::string v = unquote(trim(value));
  if (key == "arch") {
    expect_choice(key, v, {"irrcnn", "ircnn", "ein", "eirn"});
    cfg.arch = v;
  } else if (key == "k") {
    cfg.k = static_cast<int>(to_int(key, v));
  } else if (key == "stem") {
    cfg.stem = parse_index_list(v);
  } else if (key == "stages") {
    cfg.stages = parse_index_list(v);
  } else if (key == "final_width") {
    cfg.final_width = to_int(key, v);
  } else if (key == "width_mult") {
    cfg.width_mult = v == "auto" ? 0.0 : to_double(key, v);
  } else if (key == "activation") {
    expect_choice(key, v, {"relu", "elu"});
    cfg.activation = v;
  } else if (key == "precision") {
    expect_choice(key, v, {"standard", "wide"});
    cfg.precision = v;
  } else if (key == "dataset") {
    expect_choice(key, v, {"cifar10", "cifar100", "synthetic"});
    cfg.dataset = v;
  } else if (key == "data_dir") {
    cfg.data_dir = v;
  } else if (key == "augment") {
    cfg.augment = to_bool(key, v);
  } else if (key == "train_limit") {
    cfg.train_limit = to_int(key, v);
  } else if (key == "test_limit") {
    cfg.test_limit = to_int(key, v);
  } else if (key == "synth_train") {
    cfg.synth_train = to_int(key, v);
  } else if (key == "synth_test") {
    cfg.synth_test = to_int(key, v);
  } else if (key == "synth_classes") {
    cfg.synth_classes = static_cast<int>(to_int(key, v));
  } else if (key == "synth_size") {
    cfg.synth_size = to_int(key, v);
  } else if (key == "optimizer") {
    expect_choice(key, v, {"sgd", "eve"});
    cfg.optimizer = v;
  } else if (key == "lr") {
    cfg.lr = to_double(key, v);
  } else if (key == "momentum") {
    cfg.momentum = to_double(key, v);
  } else if (key == "decay") {
    cfg.decay = to_double(key, v);
  } else if (key == "eve_lr") {
    cfg.eve_lr = to_double(key, v);
  } else if (key == "eve_decay") {
    cfg.eve_decay = to_double(key, v);
  } else if (key == "eve_beta1") {
    cfg.eve_beta1 = to_double(key, v);
  } else if (key == "eve_beta2") {
    cfg.eve_beta2 = to_double(key, v);
  } else if (key == "eve_beta3") {
    cfg.eve_beta3 = to_double(key, v);
  } else if (key == "eve_kappa") {
    cfg.eve_kappa = to_double(key, v);
  } else if (key == "eve_big_k") {
    cfg.eve_big_k = to_double(key, v);
  } else if (key == "eve_eps") {
    cfg.eve_eps = to_double(key, v);
  } else if (key == "l2") {
    cfg.l2 = to_double(key, v);
  } else if (key == "l2_scope") {
    expect_choice(key, v, {"blocks", "all"});
    cfg.l2_scope = v;
  } else if (key == "init") {
    expect_choice(key, v, {"scaled", "lsuv"});
    cfg.init = v;
  } else if (key == "lsuv_tol") {
    cfg.lsuv_tol = to_double(key, v);
  } else if (key == "lsuv_max_iter") {
    cfg.lsuv_max_iter = static_cast<int>(to_int(key, v));
  } else if (key == "lsuv_probe") {
    cfg.lsuv_probe = to_int(key, v);
  } else if (key == "epochs") {
    cfg.epochs = static_cast<int>(to_int(key, v));
  } else if (key == "batch_size") {
    cfg.batch_size = to_int(key, v);
  } else if (key == "seed") {
    cfg.seed = static_cast<std::uint64_t>(to_int(key, v));
  } else if (key == "out") {
    cfg.out_dir = v;
  } else if (key == "checkpoint") {
    cfg.checkpoint = v;
  } else {
    throw std::invalid_argument("config: unknown key '" + key + "'");
  }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // Strip comments that are not inside quotes.
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"' || line[i] == '\'') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line = line.substr(0, i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " is not 'key = value': " + line);
    }
    try {
      config_set(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(std::string(e.what()) + " (line " +
                                  std::to_string(lineno) + ")");
    }
  }
}

RunConfig parse_config_file(const std::filesystem::path& path) {
  RunConfig cfg;
  apply_config_file(cfg, path);
  return cfg;
}

}  // namespace irrcnn
