#include "adloop/reward.hpp"

#include <algorithm>

#include "adloop/error.hpp"

namespace adloop {

double judge_content(const TraceStream& stream, const TaskInstance& task,
                     const TraceFormat& format, const StateEncoder& encoder) {
  const ExtractedAnswer answer = extract_answer(stream, format.vocab);
  if (!answer.found) return 0.0;
  if (task.family == TaskFamily::kNavigation) {
    if (!answer.vectors.empty()) return 0.0;
    return judge_navigation_tokens(task.map, answer.tokens);
  }
  const TokenGrid& target = task.target_grid;
  if (!answer.tokens.empty() || answer.vectors.size() != target.size()) return 0.0;
  for (const Vec& v : answer.vectors) {
    if (v.size() != target.dim()) return 0.0;
  }
  return judge_drafting(TokenGrid(target.height(), target.width(), answer.vectors), target,
                        encoder);
}

RewardBreakdown make_breakdown(bool format_ok, double content, bool correct, bool used_adloop,
                               const RewardConfig& cfg) {
  RewardBreakdown r;
  r.r_format = format_ok ? cfg.format_weight : 0.0;
  r.r_content = content;
  r.r_base = r.r_format + r.r_content;
  r.r_final = r.r_base;
  r.correct = correct;
  r.used_adloop = used_adloop;
  return r;
}

RewardBreakdown base_reward(const TraceStream& stream, const TaskInstance& task,
                            const TraceFormat& format, const StateEncoder& encoder,
                            const RewardConfig& cfg) {
  const double content = judge_content(stream, task, format, encoder);
  const bool correct = task.family == TaskFamily::kNavigation ? content == 1.0
                                                              : content >= cfg.draft_threshold;
  return make_breakdown(validate_format(stream, format), content, correct,
                        uses_visual_thoughts(stream, format.vocab), cfg);
}

std::vector<RewardBreakdown> margin_bonus(std::vector<RewardBreakdown> v_plus,
                                          const std::vector<RewardBreakdown>& v_minus,
                                          double lambda, double delta) {
  if (v_minus.empty()) throw Error(ErrorCode::kInvalidInput, "margin bonus needs a v- group");
  if (lambda < 0.0 || delta < 0.0) {
    throw Error(ErrorCode::kInvalidInput, "lambda and delta must be non-negative");
  }
  double strongest = v_minus.front().r_base;
  for (const RewardBreakdown& r : v_minus) strongest = std::max(strongest, r.r_base);
  for (RewardBreakdown& r : v_plus) {
    const bool gate = r.correct && r.used_adloop;
    r.bonus = gate ? lambda * std::max(0.0, r.r_base - strongest - delta) : 0.0;
    r.r_final = r.r_base + r.bonus;
  }
  return v_plus;
}

std::vector<double> inter_group(const std::vector<double>& v_plus_finals,
                                const std::vector<double>& v_minus_finals) {
  if (v_plus_finals.empty() || v_minus_finals.empty()) {
    throw Error(ErrorCode::kInvalidInput, "inter-group reward needs both modes");
  }
  const double best_plus = *std::max_element(v_plus_finals.begin(), v_plus_finals.end());
  const double best_minus = *std::max_element(v_minus_finals.begin(), v_minus_finals.end());
  const double plus = best_plus >= best_minus ? 1.0 : 0.0;
  const double minus = best_minus >= best_plus ? 1.0 : 0.0;
  std::vector<double> out(v_plus_finals.size(), plus);
  out.insert(out.end(), v_minus_finals.size(), minus);
  return out;
}

GroupRewards assemble_group(const std::string& query_id, std::vector<RewardBreakdown> v_plus,
                            std::vector<RewardBreakdown> v_minus, double lambda, double delta) {
  if (v_plus.size() != v_minus.size() || v_plus.empty()) {
    throw Error(ErrorCode::kInvalidInput, "groups must be non-empty and of equal size");
  }
  GroupRewards g;
  g.query_id = query_id;
  for (RewardBreakdown& r : v_minus) {
    r.bonus = 0.0;
    r.r_final = r.r_base;
  }
  g.v_plus = margin_bonus(std::move(v_plus), v_minus, lambda, delta);
  g.v_minus = std::move(v_minus);
  std::vector<double> plus_finals, minus_finals;
  for (const RewardBreakdown& r : g.v_plus) plus_finals.push_back(r.r_final);
  for (const RewardBreakdown& r : g.v_minus) minus_finals.push_back(r.r_final);
  g.r_inter = inter_group(plus_finals, minus_finals);
  g.r_intra = plus_finals;
  g.r_intra.insert(g.r_intra.end(), minus_finals.begin(), minus_finals.end());
  return g;
}

}  // namespace adloop
