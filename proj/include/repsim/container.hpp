#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "repsim/tensor.hpp"

namespace repsim {

/// Named tensors plus free-form metadata, stored as
///
///   "RSTC" | u32 version = 1 | u64 header_bytes | header JSON | f64 payloads
///
/// The header holds {"meta": ..., "tensors": [{"name", "shape", "offset"}]}
/// where offsets count bytes from the start of the payload section. All
/// integers and payloads are little-endian.
struct TensorContainer {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& get(std::string_view name) const;
};

std::string encode_container(const TensorContainer& container);
TensorContainer decode_container(std::string_view bytes);

void write_container(const TensorContainer& container, const std::filesystem::path& path);
TensorContainer read_container(const std::filesystem::path& path);

/// Write to a sibling temporary file, then rename over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace repsim
