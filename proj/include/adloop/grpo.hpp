#pragma once

// Hybrid two-group GRPO: every query is rolled out G/2 times with visual
// thoughts forced on and G/2 times with them masked out; pooled group
// normalisation turns intra- and inter-group rewards into advantages that
// drive a clipped, KL-regularised surrogate.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "adloop/optimizer.hpp"
#include "adloop/policy.hpp"
#include "adloop/reward.hpp"
#include "adloop/tasks.hpp"

namespace adloop {

struct RLConfig {
  int group_size = 8;
  double gamma = 1.0;
  double beta = 0.001;
  double epsilon = 0.5;
  double lambda = 1.0;
  double delta = 0.2;
  double sigma = 0.1;
  double learning_rate = 2e-6;
  int batch_size = 64;
  std::uint64_t seed = 42;
  double std_guard = 1e-8;
  int steps = 100;
  // Old policy is re-synchronised every this many optimizer steps.
  int refresh_every = 1;
  int checkpoint_every = 50;
  double format_weight = 0.5;
  double draft_threshold = 0.5;
  std::size_t budget_k = 16;
  std::size_t max_len = 96;
  OptimizerKind optimizer = OptimizerKind::kAdam;

  void validate() const;
  RewardConfig reward() const {
    return RewardConfig{format_weight, draft_threshold, lambda, delta};
  }
};

struct GroupBatch {
  std::string query_id;
  std::vector<RolloutSample> v_plus;
  std::vector<RolloutSample> v_minus;

  std::size_t size() const { return v_plus.size() + v_minus.size(); }
  // Pooled order: v+ then v-.
  const RolloutSample& at(std::size_t i) const {
    return i < v_plus.size() ? v_plus[i] : v_minus[i - v_plus.size()];
  }
};

// RNG stream is keyed by (seed, query id, extra).
GroupBatch sample_groups(const PolicyParams& policy_old, const PolicyContext& ctx,
                         const std::string& query_id, int group_size, std::uint64_t seed,
                         std::uint64_t extra = 0);

GroupRewards score_group(const GroupBatch& batch, const TaskInstance& task,
                         const PolicyContext& ctx, const StateEncoder& encoder,
                         const RewardConfig& cfg);

struct AdvantageVector {
  std::vector<double> advantage;
  std::vector<double> intra;
  std::vector<double> inter;
  double gamma = 1.0;
  bool intra_degenerate = false;
  bool inter_degenerate = false;
};

// Pooled mean / population std over all G trajectories.
std::vector<double> group_normalize(const std::vector<double>& values, double std_guard,
                                    bool* degenerate = nullptr);

AdvantageVector compute_advantages(const GroupRewards& group, double gamma, double std_guard);

struct SurrogateResult {
  double loss = 0.0;
  double surrogate = 0.0;  // (1/G) sum_i token-mean clipped objective
  double kl = 0.0;         // (1/G) sum_i token-mean KL estimate
  double clip_fraction = 0.0;
  std::size_t tokens = 0;
  std::size_t clipped = 0;
};

// Per-token KL estimate r - log r - 1 with log r = logp_ref - logp_new.
double kl_estimate(double logp_new, double logp_ref);

// Old log-probabilities are the ones recorded in the batch at sampling time.
// Adds d loss / d theta_new (scaled by grad_scale) into `grad` when given.
SurrogateResult surrogate_loss(const PolicyParams& policy_new, const PolicyParams& policy_ref,
                               const PolicyContext& ctx, const GroupBatch& batch,
                               const AdvantageVector& adv, double epsilon, double beta,
                               PolicyParams* grad, double grad_scale = 1.0);

struct Stage2Metrics {
  int step = 0;
  double loss = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
  double mean_reward_vplus = 0.0;
  double mean_reward_vminus = 0.0;
  double vplus_usage_rate = 0.0;
  double success_rate = 0.0;
  // Reward components averaged over every sampled trajectory of the step.
  double mean_format = 0.0;
  double mean_content = 0.0;
  double mean_bonus = 0.0;
};

std::string metrics_json(const Stage2Metrics& m);

struct Stage2Options {
  // Stop (after checkpointing) once this many steps have run in this call.
  std::optional<int> stop_after;
  bool resume = true;
};

struct Stage2Result {
  PolicyParams policy;
  std::vector<Stage2Metrics> metrics;
  int steps_completed = 0;
};

// Writes <out_dir>/checkpoint.adlp and <out_dir>/metrics.jsonl. Resumes from
// an existing checkpoint in out_dir when options.resume is set.
Stage2Result train_stage2(const RLConfig& cfg, const std::vector<TaskInstance>& dataset,
                          const PolicyParams& init, const StateEncoder& encoder,
                          const std::string& out_dir, const Stage2Options& options = {});

}  // namespace adloop
