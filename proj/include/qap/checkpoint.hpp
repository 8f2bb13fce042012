#pragma once

#include <map>
#include <stdexcept>
#include <string>

#include "qap/optim.hpp"
#include "qap/params.hpp"

namespace qap {

class checkpoint_error : public std::runtime_error {
 public:
  explicit checkpoint_error(const std::string& what) : std::runtime_error(what) {}
};

// On-disk snapshot of the trainable state: parameters plus optimizer
// moments. File layout: magic "QAPC", u32 version, u32 header length, JSON
// header (config hash, step, tensor names/shapes/offsets), then raw
// little-endian 32-bit float payloads.
struct Checkpoint {
  ParameterStore<float> params;
  std::map<std::string, AdamW<float>::Moments> moments;
  std::uint64_t opt_step = 0;
};

void save_checkpoint(const ParameterStore<float>& params, const AdamW<float>* opt,
                     const std::string& path);

// expected_config_hash 0 skips the compatibility check.
Checkpoint load_checkpoint(const std::string& path, std::uint64_t expected_config_hash = 0);

}  // namespace qap
