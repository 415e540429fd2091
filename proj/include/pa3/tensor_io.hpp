#pragma once

#include <filesystem>
#include <iosfwd>

#include "pa3/tensor.hpp"

namespace pa3 {

// Binary layout, all little-endian:
//   "PA3T" | u32 rank | rank x u64 dims | numel x f64 payload
void write_tensor(std::ostream& out, const Tensor& tensor);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace pa3
