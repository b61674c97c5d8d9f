// dln/checkpoint.h

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

#ifndef DLN_CHECKPOINT_H_
#define DLN_CHECKPOINT_H_

#include <string>

#include "dln/recurrent.h"

namespace dln {

// Checkpoint container: a directory holding
//   manifest.json  - the model configuration plus one {name, shape, offset,
//                    dtype} entry per parameter, in canonical order
//   params.f32     - all parameter values as little-endian float32, laid out
//                    back to back at the manifest offsets (element offsets)
//
// Training runs in 64-bit floats; checkpoints quantize to 32-bit.
void save_checkpoint(const Model& model, const std::string& dir);

// Errors on malformed manifests, name/shape/offset mismatches against the
// stored configuration, and truncated blobs.
Model load_checkpoint(const std::string& dir);

}  // namespace dln

#endif  // DLN_CHECKPOINT_H_
