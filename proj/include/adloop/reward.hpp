#pragma once

// Per-trajectory rewards for one query: format + content base reward, the
// margin bonus for v+ trajectories that beat the strongest v- candidate, and
// the inter-/intra-group signals.

#include <string>
#include <vector>

#include "adloop/tasks.hpp"
#include "adloop/trace.hpp"

namespace adloop {

struct RewardConfig {
  double format_weight = 0.5;     // w_f
  double draft_threshold = 0.5;   // tau
  double lambda = 1.0;
  double delta = 0.2;
};

struct RewardBreakdown {
  double r_format = 0.0;
  double r_content = 0.0;
  double r_base = 0.0;
  double bonus = 0.0;
  double r_final = 0.0;
  bool correct = false;
  bool used_adloop = false;
};

struct GroupRewards {
  std::string query_id;
  std::vector<RewardBreakdown> v_plus;
  std::vector<RewardBreakdown> v_minus;
  // Pooled order: all v+ trajectories, then all v-.
  std::vector<double> r_inter;
  std::vector<double> r_intra;

  std::size_t size() const { return v_plus.size() + v_minus.size(); }
};

// Content judge for the instance's family.
double judge_content(const TraceStream& stream, const TaskInstance& task,
                     const TraceFormat& format, const StateEncoder& encoder);

// r_final is set to r_base; the bonus is applied by margin_bonus.
RewardBreakdown base_reward(const TraceStream& stream, const TaskInstance& task,
                            const TraceFormat& format, const StateEncoder& encoder,
                            const RewardConfig& cfg);

// Builds a breakdown from already-judged components.
RewardBreakdown make_breakdown(bool format_ok, double content, bool correct, bool used_adloop,
                               const RewardConfig& cfg);

std::vector<RewardBreakdown> margin_bonus(std::vector<RewardBreakdown> v_plus,
                                          const std::vector<RewardBreakdown>& v_minus,
                                          double lambda, double delta);

// r_inter per trajectory in pooled order (v+ first).
std::vector<double> inter_group(const std::vector<double>& v_plus_finals,
                                const std::vector<double>& v_minus_finals);

GroupRewards assemble_group(const std::string& query_id, std::vector<RewardBreakdown> v_plus,
                            std::vector<RewardBreakdown> v_minus, double lambda, double delta);

}  // namespace adloop
