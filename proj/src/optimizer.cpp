#include "adloop/optimizer.hpp"

#include <cmath>

#include "adloop/error.hpp"

namespace adloop {

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "sgd") return OptimizerKind::kSgd;
  throw Error(ErrorCode::kInvalidInput, "unknown optimizer '" + name + "'");
}

Optimizer::Optimizer(OptimizerKind kind, const PolicyConfig& cfg)
    : kind_(kind), m_(PolicyParams::zeros(cfg)), v_(PolicyParams::zeros(cfg)) {}

void Optimizer::step(PolicyParams& params, const PolicyParams& grad, double lr) {
  ++t_;
  if (kind_ == OptimizerKind::kSgd) {
    params.add_scaled(grad, -lr);
    params.round_to_storage();
    return;
  }
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < PolicyParams::kNumTensors; ++i) {
    auto& p = params.tensors()[i].data;
    const auto& g = grad.tensors()[i].data;
    auto& m = m_.tensors()[i].data;
    auto& v = v_.tensors()[i].data;
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = static_cast<float>(beta1_ * m[k] + (1.0 - beta1_) * g[k]);
      v[k] = static_cast<float>(beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k]);
      p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
  params.round_to_storage();
}

void Optimizer::save(std::vector<NamedTensor>& out) const {
  append_policy(out, m_, "adam.m.");
  append_policy(out, v_, "adam.v.");
  append_scalar(out, "adam.t", static_cast<double>(t_));
}

void Optimizer::load(const std::vector<NamedTensor>& in) {
  if (!has_policy(in, "adam.m.")) return;
  const double sigma = m_.config().sigma;
  m_ = extract_policy(in, sigma, "adam.m.");
  v_ = extract_policy(in, sigma, "adam.v.");
  const auto t = extract_scalar(in, "adam.t");
  if (!t) throw Error(ErrorCode::kParse, "checkpoint lacks adam.t");
  t_ = static_cast<std::int64_t>(*t);
}

}  // namespace adloop
