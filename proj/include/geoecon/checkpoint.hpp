#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "geoecon/tensor.hpp"

namespace geoecon {

using NamedTensor = std::pair<std::string, Tensor>;

// On-disk layout:
//   <dir>/manifest.json   {"format": "geoecon-ckpt", "version": 1, "meta": {...},
//                          "params": [{"name", "shape", "dtype": "f64le", "file"}]}
//   <dir>/<file>          raw little-endian IEEE-754 doubles, row-major
struct Checkpoint {
  nlohmann::json meta;
  std::vector<NamedTensor> params;

  const Tensor& get(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace geoecon
