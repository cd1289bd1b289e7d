#pragma once

// Run configuration, greedy evaluation, plot export and the end-to-end
// gen-data -> init -> stage 1 -> stage 2 -> evaluate pipeline.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adloop/grpo.hpp"
#include "adloop/policy.hpp"
#include "adloop/stage1.hpp"
#include "adloop/tasks.hpp"

namespace adloop {

struct RunConfig {
  std::uint64_t seed = 42;
  std::size_t budget_k = 4;
  std::size_t knn_k = 0;
  std::size_t max_len = 96;
  DatasetSpec data{TaskFamily::kNavigation, 200, 5, {3, 6}, 42};
  PolicyConfig policy;
  double position_scale = 0.25;
  Stage1Config stage1;
  RLConfig stage2;

  RunConfig();
  void validate() const;

  // Sub-configs with the shared fields and derived seeds filled in.
  DatasetSpec dataset_spec() const;
  std::uint64_t init_seed() const;
  Stage1Config stage1_config() const;
  RLConfig stage2_config() const;
  StateEncoder encoder() const;
};

// "key = value" lines; '#' starts a comment. Unknown keys and bad values are
// parse errors carrying the line number.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
// Every field, sorted by key, one per line.
std::string config_text(const RunConfig& cfg);
std::string config_fingerprint(const RunConfig& cfg);

enum class EvalMode { kForcedVPlus, kForcedVMinus, kAdaptive };
std::string_view to_string(EvalMode m);
EvalMode parse_eval_mode(const std::string& s);
DecodeMode decode_mode(EvalMode m);

struct LevelStats {
  int level = 0;
  int count = 0;
  double success_rate = 0.0;
  double vplus_usage_rate = 0.0;
};

struct EvalReport {
  EvalMode mode = EvalMode::kAdaptive;
  std::uint64_t seed = 0;
  std::string fingerprint;
  int instances = 0;
  double success_rate = 0.0;
  double vplus_usage_rate = 0.0;
  std::vector<LevelStats> levels;
  // Mean base reward of greedy traces that did / did not open a visual thought.
  double mean_reward_vplus = 0.0;
  double mean_reward_vminus = 0.0;
  int traces_vplus = 0;
  int traces_vminus = 0;
  double mean_length = 0.0;
  int min_length = 0;
  int max_length = 0;

  const LevelStats* level(int l) const;
};

std::string eval_report_json(const EvalReport& r);

EvalReport evaluate(const PolicyParams& policy, const std::vector<TaskInstance>& dataset,
                    EvalMode mode, const RunConfig& cfg);
// Loads the policy from a checkpoint; incompatible versions raise kVersion.
EvalReport evaluate(const std::string& checkpoint, const std::vector<TaskInstance>& dataset,
                    EvalMode mode, const RunConfig& cfg);

// Series exported by emit_plots, in file order.
const std::vector<std::string>& plot_series();
// Writes <out_dir>/<series>.csv with header "step,value" for each series and
// returns the paths written.
std::vector<std::string> emit_plots(const std::string& metrics_jsonl, const std::string& out_dir);

struct PipelineOptions {
  // Halt stage 2 after this many updates in this call (for interruption tests).
  std::optional<int> stage2_stop_after;
};

struct PipelineResult {
  bool completed = false;
  EvalReport stage1_report;
  EvalReport final_report;
};

// Stage outputs live in out_dir/{data,init,stage1,stage2,eval,plots}; each
// stage resumes from whatever a previous run left behind. A stage failure is
// rethrown with the stage name prefixed.
PipelineResult run_pipeline(const RunConfig& cfg, const std::string& out_dir,
                            const PipelineOptions& options = {});

// Reads ADLOOP_LOG_LEVEL (error, info, debug); unset means info.
void configure_logging();

}  // namespace adloop
