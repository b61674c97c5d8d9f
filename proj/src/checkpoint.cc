// checkpoint.cc

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

#include "dln/checkpoint.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stack_json.h"

namespace dln {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void append_f32(std::string* blob, double v) {
  const float f = static_cast<float>(v);
  std::uint32_t u;
  std::memcpy(&u, &f, sizeof(u));
  blob->push_back(static_cast<char>(u & 0xff));
  blob->push_back(static_cast<char>((u >> 8) & 0xff));
  blob->push_back(static_cast<char>((u >> 16) & 0xff));
  blob->push_back(static_cast<char>((u >> 24) & 0xff));
}

double read_f32(const std::string& blob, Index element) {
  const auto* p =
      reinterpret_cast<const unsigned char*>(blob.data()) + 4 * element;
  const std::uint32_t u = static_cast<std::uint32_t>(p[0]) |
                          (static_cast<std::uint32_t>(p[1]) << 8) |
                          (static_cast<std::uint32_t>(p[2]) << 16) |
                          (static_cast<std::uint32_t>(p[3]) << 24);
  float f;
  std::memcpy(&f, &u, sizeof(f));
  return static_cast<double>(f);
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "dln-checkpoint";
  manifest["version"] = 1;
  manifest["config"] = internal::stack_config_to_json(model.cfg);

  json params = json::array();
  std::string blob;
  Index offset = 0;
  for_each_param(model, [&](const std::string& name, const Array& a) {
    json entry;
    entry["name"] = name;
    entry["shape"] = a.shape();
    entry["offset"] = offset;
    entry["dtype"] = "f32";
    params.push_back(std::move(entry));
    for (Index i = 0; i < a.size(); ++i) append_f32(&blob, a[i]);
    offset += a.size();
  });
  manifest["params"] = std::move(params);

  {
    std::ofstream out(fs::path(dir) / "manifest.json", std::ios::trunc);
    if (!out) fail("save_checkpoint: cannot write manifest in " + dir);
    out << manifest.dump(2) << '\n';
    if (!out) fail("save_checkpoint: failed writing manifest in " + dir);
  }
  {
    std::ofstream out(fs::path(dir) / "params.f32",
                      std::ios::binary | std::ios::trunc);
    if (!out) fail("save_checkpoint: cannot write params.f32 in " + dir);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) fail("save_checkpoint: failed writing params.f32 in " + dir);
  }
}

Model load_checkpoint(const std::string& dir) {
  std::ifstream min(fs::path(dir) / "manifest.json");
  if (!min) fail("load_checkpoint: cannot open manifest in " + dir);
  json manifest;
  try {
    manifest = json::parse(min);
  } catch (const json::exception& e) {
    fail("load_checkpoint: malformed manifest in " + dir + ": " + e.what());
  }

  std::ifstream bin(fs::path(dir) / "params.f32", std::ios::binary);
  if (!bin) fail("load_checkpoint: cannot open params.f32 in " + dir);
  std::string blob((std::istreambuf_iterator<char>(bin)),
                   std::istreambuf_iterator<char>());
  if (blob.size() % 4 != 0)
    fail("load_checkpoint: params.f32 in " + dir +
         " is not a whole number of float32 values");
  const Index num_values = static_cast<Index>(blob.size() / 4);

  Model model;
  try {
    if (manifest.at("format").get<std::string>() != "dln-checkpoint")
      fail("load_checkpoint: " + dir + " is not a checkpoint container");
    model = build_model(internal::stack_config_from_json(
        manifest.at("config"), dir + "/manifest.json"));

    const json& params = manifest.at("params");
    std::size_t k = 0;
    Index total = 0;
    for_each_param(&model, [&](const std::string& name, Array* a) {
      if (k >= params.size())
        fail("load_checkpoint: manifest in " + dir +
             " lists too few parameters (missing " + name + ")");
      const json& entry = params.at(k);
      if (entry.at("name").get<std::string>() != name)
        fail("load_checkpoint: parameter " + std::to_string(k) + " in " + dir +
             " is named " + entry.at("name").get<std::string>() +
             ", expected " + name);
      if (entry.at("shape").get<Shape>() != a->shape())
        fail("load_checkpoint: shape mismatch for " + name + " in " + dir);
      if (entry.at("dtype").get<std::string>() != "f32")
        fail("load_checkpoint: unsupported dtype for " + name + " in " + dir);
      const Index offset = entry.at("offset").get<Index>();
      if (offset < 0 || offset + a->size() > num_values)
        fail("load_checkpoint: params.f32 in " + dir +
             " is truncated: parameter " + name + " needs elements [" +
             std::to_string(offset) + ", " +
             std::to_string(offset + a->size()) + ") of " +
             std::to_string(num_values));
      for (Index i = 0; i < a->size(); ++i)
        (*a)[i] = read_f32(blob, offset + i);
      if (!a->all_finite())
        fail("load_checkpoint: non-finite values in " + name + " in " + dir);
      total += a->size();
      ++k;
    });
    if (k != params.size())
      fail("load_checkpoint: manifest in " + dir + " lists " +
           std::to_string(params.size()) + " parameters, expected " +
           std::to_string(k));
    if (total != num_values)
      fail("load_checkpoint: params.f32 in " + dir + " holds " +
           std::to_string(num_values) + " values, expected " +
           std::to_string(total));
  } catch (const json::exception& e) {
    fail("load_checkpoint: malformed manifest in " + dir + ": " + e.what());
  }
  return model;
}

}  // namespace dln
