#pragma once

// Supervised warm-up on synthesized interleaved traces. Gold visual thoughts
// are compressed encodings of the board after each oracle move.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adloop/latent_thoughts.hpp"
#include "adloop/optimizer.hpp"
#include "adloop/policy.hpp"
#include "adloop/tasks.hpp"
#include "adloop/trace.hpp"

namespace adloop {

struct Stage1Config {
  double alpha = 1.0;
  double learning_rate = 1e-3;
  int batch_size = 32;
  int epochs = 20;
  std::size_t budget_k = 16;
  std::size_t knn_k = 0;  // 0 = min(8, N-1)
  std::uint64_t seed = 42;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  bool cosine = false;
  std::size_t max_len = 96;
  // Share of navigation instances trained on text-only traces.
  double text_only_fraction = 0.0;

  void validate() const;
  CompressionConfig compression() const { return CompressionConfig{budget_k, knn_k}; }
};

// Navigation: one text step per oracle move, each followed by a visual
// thought of the board after the move. Drafting: the target classes as text,
// one visual thought of the target, and the target grid as the answer.
ThoughtTrace build_gold_trace(const TaskInstance& inst, const Stage1Config& cfg,
                              const StateEncoder& encoder);

// Same reasoning narrated without any visual thought.
ThoughtTrace build_text_only_trace(const TaskInstance& inst);

struct Stage1Metrics {
  int epoch = 0;
  double loss = 0.0;
  double ce = 0.0;
  double mse = 0.0;
  double out = 0.0;
  int updates = 0;
};

std::string metrics_json(const Stage1Metrics& m);

struct Stage1Result {
  PolicyParams policy;
  std::vector<Stage1Metrics> metrics;
  int epochs_completed = 0;
};

// Writes <out_dir>/checkpoint.adlp (after every epoch) and metrics.jsonl.
Stage1Result train_stage1(const Stage1Config& cfg, const std::vector<TaskInstance>& dataset,
                          const PolicyParams& init, const StateEncoder& encoder,
                          const std::string& out_dir, bool resume = true);

}  // namespace adloop
