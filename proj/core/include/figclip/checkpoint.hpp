#pragma once

#include <map>
#include <string>

#include "figclip/tensor.hpp"

namespace figclip {

// FGCKPT1 tensor archive. Little-endian throughout:
//   magic "FGCKPT1" | u32 count | per tensor:
//     u16 name length | UTF-8 name | u8 ndim | u32 dims[ndim] | f32 data
// Entries are written sorted by name; round-trips are bit-exact.
void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> load_checkpoint(const std::string& path);

}  // namespace figclip
