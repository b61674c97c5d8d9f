// dln/config.h

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

#ifndef DLN_CONFIG_H_
#define DLN_CONFIG_H_

#include <string>
#include <vector>

#include "dln/recurrent.h"
#include "dln/train.h"

namespace dln {

// One run configuration document (JSON): {"model": {...}, "train": {...},
// "data": {"train": ..., "dev": ..., "test": ...}}. Every field has a
// default; unknown keys are rejected. "lambda" may be given under either
// section; the training value wins and the two are kept in sync.
struct RunConfig {
  StackConfig model;
  TrainConfig train;
  std::string train_data, dev_data, test_data;
};

// Built-in configurations reproducing the published model sizes:
//   wsj-baseline, wsj-dln   (123-dim input, 3436 classes; lambda 0)
//   ted-baseline, ted-dln   (123-dim input, 4174 classes; dln lambda 10)
const std::vector<std::string>& preset_names();
bool is_preset(const std::string& name);
RunConfig preset(const std::string& name);

RunConfig load_run_config(const std::string& path);

// Accepts either a preset name or a path to a JSON configuration file.
RunConfig resolve_run_config(const std::string& name_or_path);

}  // namespace dln

#endif  // DLN_CONFIG_H_
