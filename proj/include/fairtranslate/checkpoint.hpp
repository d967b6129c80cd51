#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace fairtranslate {

// Versioned binary container for model and training-state snapshots.
// Layout: magic "FTCP", u32 version, role string, key/value metadata,
// then named tensors stored as raw little-endian bytes. Raw bytes make
// save -> load -> save round trips bit-identical.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string role;
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  bool has_tensor(const std::string& name) const;
  torch::Tensor tensor(const std::string& name) const;  // throws FormatError if absent

  std::string meta_str(const std::string& key) const;
  std::int64_t meta_int(const std::string& key) const;
  double meta_double(const std::string& key) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);

// Throws FormatError on bad magic, version mismatch, or truncation. When
// `expected_role` is nonempty the stored role must match.
Checkpoint load_checkpoint(const std::string& path, const std::string& expected_role = "");

// Copies a module's parameters (and buffers) into/outof a checkpoint under
// `prefix`. Loading copies by name and throws FormatError on missing names or
// shape mismatches.
void pack_module(Checkpoint& ckpt, const std::string& prefix, const torch::nn::Module& module);
void unpack_module(const Checkpoint& ckpt, const std::string& prefix, torch::nn::Module& module);

// FNV-1a hash over a module's parameter bytes; used by tests to assert that
// frozen models stay untouched.
std::uint64_t parameter_fingerprint(const torch::nn::Module& module);

}  // namespace fairtranslate
