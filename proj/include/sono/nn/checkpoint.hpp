#pragma once

// Flat binary parameter checkpoints.  Layout (all little-endian):
//   magic "SNCP" | u32 version | u32 count
//   per tensor: u32 name length | name bytes | u32 rank | u64 dims... | f64 values...

#include <map>
#include <string>
#include <vector>

#include "sono/nn/tensor.hpp"

namespace sono::nn {

void write_checkpoint(const std::string& path, const std::vector<std::pair<std::string, const Tensor*>>& tensors);
std::map<std::string, Tensor> read_checkpoint(const std::string& path);

// Convenience wrappers for a live parameter set; extras (e.g. a pose basis)
// ride along in the same file.
void save_params(const std::string& path, const ParamSet& params,
                 const std::vector<std::pair<std::string, const Tensor*>>& extras = {});
// Every registered parameter must be present with a matching shape.
void load_params(const std::string& path, ParamSet& params);

}  // namespace sono::nn
