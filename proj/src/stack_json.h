// stack_json.h

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

// Internal JSON (de)serialization of StackConfig, shared by the checkpoint
// and configuration readers. Not part of the installed API.

#ifndef DLN_SRC_STACK_JSON_H_
#define DLN_SRC_STACK_JSON_H_

#include <json.hpp>

#include "dln/recurrent.h"

namespace dln {
namespace internal {

nlohmann::json stack_config_to_json(const StackConfig& cfg);

// Strict reader: every key is optional (defaults apply) but unknown keys are
// rejected. `where` names the source in error messages.
StackConfig stack_config_from_json(const nlohmann::json& j,
                                   const std::string& where);

}  // namespace internal
}  // namespace dln

#endif  // DLN_SRC_STACK_JSON_H_
