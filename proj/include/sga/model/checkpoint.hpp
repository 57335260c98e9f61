// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <map>

#include "json.hpp"
#include "sga/model/weights.hpp"
#include "sga/numerics/sgat.hpp"

namespace sga {

// Checkpoint layout: <dir>/manifest.json plus one SGAT file per parameter.
inline void save_checkpoint(const std::filesystem::path& dir, const ModelWeights<float>& w) {
  std::filesystem::create_directories(dir);
  nlohmann::json params = nlohmann::json::object();
  w.for_each([&](const std::string& name, const DenseArray& a) {
    const std::string file = name + ".sgat";
    write_sgat(dir / file, a);
    params[name] = file;
  });
  nlohmann::json manifest = {{"config", model_config_to_json(w.config)},
                             {"grid", grid_to_json(w.grid)},
                             {"params", params}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

inline ModelWeights<float> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("no checkpoint manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad checkpoint manifest: " + std::string(e.what()));
  }
  ModelWeights<float> w;
  w.config = model_config_from_json(manifest.at("config"));
  w.grid = grid_from_json(manifest.at("grid"));
  // Shapes come from a fresh init; every file must match.
  ModelWeights<float> ref = init_weights<float>(w.config, w.grid, 0);
  w.p = ref.p;
  const auto& params = manifest.at("params");
  w.for_each([&](const std::string& name, DenseArray& a) {
    if (!params.contains(name)) throw IoError("checkpoint missing parameter " + name);
    DenseArray loaded = read_sgat(dir / params.at(name).get<std::string>());
    if (loaded.shape() != a.shape()) {
      throw ConfigError("checkpoint parameter " + name + " has shape " +
                        shape_string(loaded.shape()) + ", expected " + shape_string(a.shape()));
    }
    a = std::move(loaded);
  });
  if (!w.all_finite()) throw NumericalError("checkpoint contains non-finite values");
  return w;
}

}  // namespace sga
