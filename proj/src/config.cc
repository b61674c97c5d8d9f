// config.cc

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "dln/config.h"

#include <filesystem>
#include <fstream>
#include <initializer_list>

#include <json.hpp>

#include "stack_json.h"

namespace dln {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!j.is_object()) fail(where + " must be a JSON object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        known = true;
        break;
      }
    if (!known) fail("unknown key \"" + item.key() + "\" in " + where);
  }
}

template <typename T>
void read_field(const json& j, const char* key, T* out) {
  if (j.contains(key)) *out = j.at(key).get<T>();
}

}  // namespace

namespace internal {

json stack_config_to_json(const StackConfig& cfg) {
  json j;
  j["num_layers"] = cfg.num_layers;
  j["cell_size"] = cfg.cell_size;
  j["proj_size"] = cfg.proj_size;
  j["input_dim"] = cfg.input_dim;
  j["num_classes"] = cfg.num_classes;
  j["dln"] = cfg.dln;
  j["summary_size"] = cfg.summary_size;
  j["dln_cell_state"] = cfg.dln_cell_state;
  j["lambda"] = cfg.lambda;
  j["eps"] = cfg.eps;
  return j;
}

StackConfig stack_config_from_json(const json& j, const std::string& where) {
  check_keys(j,
             {"num_layers", "cell_size", "proj_size", "input_dim",
              "num_classes", "dln", "summary_size", "dln_cell_state", "lambda",
              "eps"},
             where);
  StackConfig cfg;
  try {
    read_field(j, "num_layers", &cfg.num_layers);
    read_field(j, "cell_size", &cfg.cell_size);
    read_field(j, "proj_size", &cfg.proj_size);
    read_field(j, "input_dim", &cfg.input_dim);
    read_field(j, "num_classes", &cfg.num_classes);
    read_field(j, "dln", &cfg.dln);
    read_field(j, "summary_size", &cfg.summary_size);
    read_field(j, "dln_cell_state", &cfg.dln_cell_state);
    read_field(j, "lambda", &cfg.lambda);
    read_field(j, "eps", &cfg.eps);
  } catch (const json::exception& e) {
    fail("bad value in " + where + ": " + e.what());
  }
  cfg.validate();
  return cfg;
}

}  // namespace internal

namespace {

TrainConfig train_config_from_json(const json& j, double model_lambda,
                                   const std::string& where) {
  check_keys(j,
             {"batch_size", "epochs", "seed", "lambda", "grad_clip", "lr",
              "beta1", "beta2", "eps_opt"},
             where);
  TrainConfig cfg;
  cfg.lambda = model_lambda;
  try {
    read_field(j, "batch_size", &cfg.batch_size);
    read_field(j, "epochs", &cfg.epochs);
    read_field(j, "seed", &cfg.seed);
    read_field(j, "lambda", &cfg.lambda);
    read_field(j, "grad_clip", &cfg.grad_clip);
    read_field(j, "lr", &cfg.adam.lr);
    read_field(j, "beta1", &cfg.adam.beta1);
    read_field(j, "beta2", &cfg.adam.beta2);
    read_field(j, "eps_opt", &cfg.adam.eps);
  } catch (const json::exception& e) {
    fail("bad value in " + where + ": " + e.what());
  }
  if (cfg.batch_size < 1) fail(where + ": batch_size must be >= 1");
  if (cfg.epochs < 0) fail(where + ": epochs must be >= 0");
  if (cfg.lambda < 0.0) fail(where + ": lambda must be >= 0");
  return cfg;
}

}  // namespace

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"wsj-baseline", "wsj-dln",
                                                 "ted-baseline", "ted-dln"};
  return names;
}

bool is_preset(const std::string& name) {
  for (const std::string& n : preset_names())
    if (n == name) return true;
  return false;
}

RunConfig preset(const std::string& name) {
  // StackConfig's defaults are already the WSJ baseline geometry
  // (3 layers, 512 cells, 256 projection, 123-dim input, 3436 classes).
  RunConfig rc;
  if (name == "wsj-baseline") {
  } else if (name == "wsj-dln") {
    rc.model.dln = true;  // the WSJ recipe keeps lambda at 0
  } else if (name == "ted-baseline") {
    rc.model.num_classes = 4174;
  } else if (name == "ted-dln") {
    rc.model.num_classes = 4174;
    rc.model.dln = true;
    rc.model.lambda = 10.0;
  } else {
    std::string known;
    for (const std::string& n : preset_names()) known += " " + n;
    fail("unknown preset \"" + name + "\"; known presets:" + known);
  }
  rc.train.lambda = rc.model.lambda;
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open configuration file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail("malformed JSON in " + path + ": " + e.what());
  }
  check_keys(j, {"model", "train", "data"}, path);
  RunConfig rc;
  if (j.contains("model"))
    rc.model = internal::stack_config_from_json(j.at("model"),
                                                path + " (model section)");
  rc.train = j.contains("train")
                 ? train_config_from_json(j.at("train"), rc.model.lambda,
                                          path + " (train section)")
                 : [&] {
                     TrainConfig t;
                     t.lambda = rc.model.lambda;
                     return t;
                   }();
  rc.model.lambda = rc.train.lambda;
  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, {"train", "dev", "test"}, path + " (data section)");
    try {
      read_field(d, "train", &rc.train_data);
      read_field(d, "dev", &rc.dev_data);
      read_field(d, "test", &rc.test_data);
    } catch (const json::exception& e) {
      fail("bad value in " + path + " (data section): " + e.what());
    }
  }
  return rc;
}

RunConfig resolve_run_config(const std::string& name_or_path) {
  if (is_preset(name_or_path)) return preset(name_or_path);
  if (std::filesystem::exists(name_or_path))
    return load_run_config(name_or_path);
  std::string known;
  for (const std::string& n : preset_names()) known += " " + n;
  fail("--config value \"" + name_or_path +
       "\" is neither a preset nor an existing file; presets:" + known);
}

}  // namespace dln
