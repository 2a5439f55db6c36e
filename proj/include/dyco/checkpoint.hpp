#pragma once

// Flat binary parameter container. Layout (little-endian):
//   char[4]  magic "DYC1"
//   u32      meta count, then per entry: u32 key len, key bytes,
//            u32 value len, value bytes
//   u32      parameter count, then per record: u32 name len, name bytes,
//            u32 rank, u64 dims[rank], f64 values[prod(dims)],
//            u8 has_opt_state, and if set: u64 step, f64 m[], f64 v[]
// Full byte-level description in docs/formats.md.

#include <map>
#include <string>
#include <vector>

#include "dyco/tensor.hpp"

namespace dyco {

struct Checkpoint {
    std::map<std::string, std::string> meta;
    std::vector<ad::Parameter> params;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dyco
