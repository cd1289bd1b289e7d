#pragma once

// Binary checkpoint: "ADLP", u32 version, then repeated records of
// (u32 name length, name bytes, u32 rank, u32 dims..., f32 data...), all
// little-endian, until end of file.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adloop/policy.hpp"

namespace adloop {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

void write_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(const std::string& path);

const NamedTensor* find_tensor(const std::vector<NamedTensor>& tensors,
                               const std::string& name);

// Tensors named "<prefix><tensor name>".
void append_policy(std::vector<NamedTensor>& out, const PolicyParams& params,
                   const std::string& prefix = "policy.");
bool has_policy(const std::vector<NamedTensor>& tensors, const std::string& prefix = "policy.");
// Dimensions come from the stored shapes; sigma is a run setting.
PolicyParams extract_policy(const std::vector<NamedTensor>& tensors, double sigma,
                            const std::string& prefix = "policy.");

void append_scalar(std::vector<NamedTensor>& out, const std::string& name, double value);
std::optional<double> extract_scalar(const std::vector<NamedTensor>& tensors,
                                     const std::string& name);

void save_policy(const std::string& path, const PolicyParams& params);
PolicyParams load_policy(const std::string& path, double sigma);

}  // namespace adloop
