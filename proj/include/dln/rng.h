// dln/rng.h

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

#ifndef DLN_RNG_H_
#define DLN_RNG_H_

#include <cstdint>
#include <random>
#include <vector>

namespace dln {

// Seeded random source. Normal/uniform draws and shuffles are implemented
// by hand on top of mt19937_64 so that a given seed produces the same
// stream on every platform (std::normal_distribution and std::shuffle are
// implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t raw() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); n must be positive.
  std::uint64_t uniform_int(std::uint64_t n);

  // Standard normal via Box-Muller (caches the second draw).
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Deterministic Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>* v) {
    if (v->size() < 2) return;
    for (std::size_t i = v->size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i + 1));
      std::swap((*v)[i], (*v)[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace dln

#endif  // DLN_RNG_H_
