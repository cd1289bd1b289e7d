#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adloop/checkpoint.hpp"
#include "adloop/policy.hpp"

namespace adloop {

enum class OptimizerKind { kAdam, kSgd };

OptimizerKind parse_optimizer(const std::string& name);

// Adam (or plain SGD) whose parameters and moments live at float32 storage
// precision, so a checkpoint reload resumes bit-exactly.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, const PolicyConfig& cfg);

  void step(PolicyParams& params, const PolicyParams& grad, double lr);

  std::int64_t steps_taken() const { return t_; }

  void save(std::vector<NamedTensor>& out) const;
  void load(const std::vector<NamedTensor>& in);

 private:
  OptimizerKind kind_;
  PolicyParams m_;
  PolicyParams v_;
  std::int64_t t_ = 0;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
};

}  // namespace adloop
