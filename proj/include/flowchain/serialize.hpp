#pragma once

#include <filesystem>

#include "flowchain/numcore.hpp"

namespace flowchain {

// Parameter container layout:
//   8 bytes   magic "FCPARAMS"
//   8 bytes   little-endian uint64 header length H
//   H bytes   UTF-8 JSON: {"version":1,"data_bytes":N,
//                          "params":[{"name":..,"shape":[r,c],"offset":o},..]}
//   N bytes   little-endian float64 values, row-major, at the listed offsets
inline constexpr int kParamFormatVersion = 1;

void save_parameters(const ParameterSet& params, const std::filesystem::path& path);

/// Loads values into an existing set whose names and shapes must match exactly.
void load_parameters(ParameterSet& params, const std::filesystem::path& path);

/// Reads a container into a fresh set (names and shapes taken from the file).
ParameterSet read_parameters(const std::filesystem::path& path);

}  // namespace flowchain
