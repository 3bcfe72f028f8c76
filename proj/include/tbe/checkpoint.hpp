#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "tbe/tensor.hpp"

namespace tbe {

// Weight file layout (all integers little-endian uint32):
//   "TBEW1"
//   repeated until EOF:
//     name_len, name bytes, rank, dims[rank], float32 payload (LE)
// Records are written in name order, so equal maps give equal bytes.
inline constexpr char kWeightMagic[] = "TBEW1";

using NamedTensors = std::map<std::string, Tensor>;

void write_weights(std::ostream& out, const NamedTensors& tensors);
NamedTensors read_weights(std::istream& in);

void save_weights(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_weights(const std::filesystem::path& path);

}  // namespace tbe
