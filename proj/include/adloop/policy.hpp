#pragma once

// Tiny autoregressive policy over discrete trace tokens and continuous latent
// vectors. One tanh recurrent layer conditioned on the task context:
//
//   h_t = tanh(W_h h_{t-1} + C c + b + E[x_{t-1}] + [x_{t-1} = VEC] P v_{t-1})
//
// A categorical head scores the next token under a grammar mask, and two
// Gaussian heads (thought vectors, answer vectors) with fixed sigma score the
// continuous payload of every VEC placeholder.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "adloop/latent_thoughts.hpp"
#include "adloop/tasks.hpp"
#include "adloop/trace.hpp"

namespace adloop {

enum class DecodeMode { kVPlus, kVMinus, kAdaptive };

std::string_view to_string(DecodeMode m);
std::optional<Mode> declared_mode(DecodeMode m);

struct PolicyConfig {
  int vocab_size = Vocabulary::standard().size();
  int d_model = 32;
  int latent_dim = 8;
  // Largest board edge the context encoding can hold.
  int max_grid = 5;
  double sigma = 0.1;

  int context_dim() const { return max_grid * max_grid * kNumCellTypes + 2; }
  void validate() const;
};

enum class ParamId : std::size_t {
  kEmbed,      // vocab x d_model
  kVecIn,      // d_model x latent_dim
  kContext,    // d_model x context_dim
  kRecurrent,  // d_model x d_model
  kBias,       // d_model
  kOutW,       // vocab x d_model
  kOutB,       // vocab
  kThoughtW,   // latent_dim x d_model
  kThoughtB,   // latent_dim
  kAnswerW,    // latent_dim x d_model
  kAnswerB,    // latent_dim
  kCount,
};

struct Tensor {
  std::string name;
  std::vector<std::size_t> dims;
  std::vector<double> data;

  std::size_t rows() const { return dims.empty() ? 0 : dims[0]; }
  std::size_t cols() const { return dims.size() < 2 ? 1 : dims[1]; }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
};

class PolicyParams {
 public:
  static constexpr std::size_t kNumTensors = static_cast<std::size_t>(ParamId::kCount);

  PolicyParams() = default;
  static PolicyParams zeros(const PolicyConfig& cfg);
  static PolicyParams init(const PolicyConfig& cfg, std::uint64_t seed);

  const PolicyConfig& config() const { return config_; }
  Tensor& operator[](ParamId id) { return tensors_[static_cast<std::size_t>(id)]; }
  const Tensor& operator[](ParamId id) const { return tensors_[static_cast<std::size_t>(id)]; }
  std::array<Tensor, kNumTensors>& tensors() { return tensors_; }
  const std::array<Tensor, kNumTensors>& tensors() const { return tensors_; }

  std::size_t num_parameters() const;
  // Flat view across all tensors in ParamId order.
  double& flat(std::size_t i);
  double flat(std::size_t i) const;

  void fill(double value);
  void add_scaled(const PolicyParams& other, double scale);
  // Rounds every value to float32, the checkpoint storage precision.
  void round_to_storage();
  bool all_finite() const;

  bool operator==(const PolicyParams& other) const;

 private:
  PolicyConfig config_;
  std::array<Tensor, kNumTensors> tensors_;
};

struct DecodeSpec {
  std::size_t budget_k = 16;
  std::optional<GridShape> answer_grid;
  std::size_t max_len = 96;
  std::size_t max_answer_len = 12;

  std::size_t answer_min() const { return answer_grid ? answer_grid->cells() : 1; }
  void validate() const;
};

struct PolicyContext {
  Vec features;
  DecodeSpec spec;
};

// One-hot cell classes of the prompt board plus a family flag.
PolicyContext make_context(const TaskInstance& inst, const PolicyConfig& cfg,
                           std::size_t budget_k, std::size_t max_len);

TraceFormat trace_format_for(const PolicyContext& ctx);

// Token-level grammar shared by sampling and teacher-forced scoring.
class Grammar {
 public:
  enum class Phase { kStart, kThink, kVisual, kAfterThink, kAnswer, kDone };

  Grammar(const Vocabulary& vocab, const DecodeSpec& spec, DecodeMode mode);

  // Mask over the full vocabulary for the next position.
  void allowed(std::vector<char>& mask) const;
  bool is_allowed(TokenId t) const;
  void advance(TokenId t);

  Phase phase() const { return phase_; }
  std::size_t position() const { return pos_; }
  bool done() const { return phase_ == Phase::kDone; }
  bool truncated() const { return truncated_; }

 private:
  Vocabulary vocab_;
  DecodeSpec spec_;
  DecodeMode mode_;
  Phase phase_ = Phase::kStart;
  std::size_t pos_ = 0;
  std::size_t visual_segments_ = 0;
  std::size_t vecs_in_segment_ = 0;
  std::size_t answer_len_ = 0;
  bool truncated_ = false;
};

struct StepLogProb {
  double discrete = 0.0;
  double continuous = 0.0;
  // Number of tokens the grammar allowed at this step.
  std::size_t options = 0;
  // The step involved a choice (more than one allowed token or a vector).
  bool scored = false;
  Grammar::Phase phase = Grammar::Phase::kStart;

  double total() const { return discrete + continuous; }
};

struct ForwardResult {
  std::vector<StepLogProb> steps;
  // Masked next-token distribution at every step.
  std::vector<Vec> probs;
  double total = 0.0;
  bool truncated = false;
};

struct RolloutSample {
  TraceStream stream;
  DecodeMode mode = DecodeMode::kAdaptive;
  std::vector<StepLogProb> steps;
  double total_logprob = 0.0;
  bool truncated = false;
};

// Teacher-forced scoring. Throws kStructural when the stream leaves the grammar.
ForwardResult forward_logprob(const PolicyParams& params, const TraceStream& stream,
                              const PolicyContext& ctx, DecodeMode mode);

// grad += d/dtheta sum_t (w_disc[t] * discrete_t + w_cont[t] * continuous_t)
void accumulate_grad(const PolicyParams& params, const TraceStream& stream,
                     const PolicyContext& ctx, DecodeMode mode,
                     std::span<const double> w_disc, std::span<const double> w_cont,
                     PolicyParams& grad);

// Gradient of forward_logprob(...).total.
PolicyParams grad_logprob(const PolicyParams& params, const TraceStream& stream,
                          const PolicyContext& ctx, DecodeMode mode);

RolloutSample sample_rollout(const PolicyParams& params, const PolicyContext& ctx,
                             DecodeMode mode, std::mt19937_64& rng);

// Argmax tokens (ties to the lowest id) and mean vectors.
RolloutSample greedy_decode(const PolicyParams& params, const PolicyContext& ctx,
                            DecodeMode mode);

struct Stage1Loss {
  double total = 0.0;
  double ce = 0.0;   // discrete decisions inside <think>
  double mse = 0.0;  // latent visual thoughts
  double out = 0.0;  // answer: CE for token answers, MSE for grid answers
};

// total = ce + alpha * mse + out. Adds d total / d theta into `grad` when given.
Stage1Loss stage1_loss(const PolicyParams& params, const TraceStream& gold,
                       const PolicyContext& ctx, double alpha, PolicyParams* grad);

}  // namespace adloop
