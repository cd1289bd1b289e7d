#include "adloop/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "adloop/error.hpp"
#include "adloop/rng.hpp"

namespace adloop {

namespace {

constexpr std::array<const char*, PolicyParams::kNumTensors> kTensorNames = {
    "embed", "vec_in", "context", "recurrent", "bias", "out_w",
    "out_b", "thought_w", "thought_b", "answer_w", "answer_b"};

enum class Head { kNone, kThought, kAnswer };

// Activations of one unrolled trace, kept for the backward pass.
struct Unroll {
  TraceStream stream;
  Vec context_drive;           // C c + b
  std::vector<Vec> hidden;     // h_t
  std::vector<Vec> probs;      // masked softmax, zero outside the mask
  std::vector<Head> heads;
  std::vector<Vec> means;      // empty when the step emits no vector
  std::vector<std::size_t> vec_index;
  std::vector<StepLogProb> steps;
  bool truncated = false;
};

void matvec_add(const Tensor& w, std::span<const double> x, std::span<double> y) {
  const std::size_t rows = w.rows(), cols = w.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &w.data[r * cols];
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] += acc;
  }
}

// y += W^T x
void matvec_t_add(const Tensor& w, std::span<const double> x, std::span<double> y) {
  const std::size_t rows = w.rows(), cols = w.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    const double* row = &w.data[r * cols];
    for (std::size_t c = 0; c < cols; ++c) y[c] += row[c] * xr;
  }
}

// G += x y^T
void outer_add(Tensor& g, std::span<const double> x, std::span<const double> y) {
  const std::size_t cols = g.cols();
  for (std::size_t r = 0; r < x.size(); ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    double* row = &g.data[r * cols];
    for (std::size_t c = 0; c < cols; ++c) row[c] += xr * y[c];
  }
}

double gaussian_logpdf(const Vec& x, const Vec& mean, double sigma) {
  const double var = sigma * sigma;
  double sq = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double d = x[k] - mean[k];
    sq += d * d;
  }
  return -sq / (2.0 * var) -
         0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi * var);
}

// Drives the recurrence; `pick_token` and `pick_vector` decide the emitted
// items (teacher forcing reads them from a stream, sampling draws them).
template <class PickToken, class PickVector>
Unroll unroll(const PolicyParams& params, const PolicyContext& ctx, DecodeMode mode,
              PickToken&& pick_token, PickVector&& pick_vector) {
  const PolicyConfig& cfg = params.config();
  if (ctx.features.size() != static_cast<std::size_t>(cfg.context_dim())) {
    throw Error(ErrorCode::kInvalidInput, "context size does not match the policy");
  }
  const Vocabulary vocab = Vocabulary::standard();
  if (vocab.size() != cfg.vocab_size) {
    throw Error(ErrorCode::kInvalidInput, "policy vocabulary size mismatch");
  }
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto vocab_n = static_cast<std::size_t>(cfg.vocab_size);

  Unroll u;
  u.stream.mode = declared_mode(mode);
  u.context_drive = params[ParamId::kBias].data;
  matvec_add(params[ParamId::kContext], ctx.features, u.context_drive);

  Grammar grammar(vocab, ctx.spec, mode);
  std::vector<char> mask(vocab_n);
  Vec pre(d), logits(vocab_n);
  while (!grammar.done()) {
    const std::size_t t = grammar.position();
    // Pre-activation.
    pre = u.context_drive;
    if (t > 0) {
      matvec_add(params[ParamId::kRecurrent], u.hidden[t - 1], pre);
      const TokenId prev = u.stream.tokens[t - 1];
      const Tensor& embed = params[ParamId::kEmbed];
      for (std::size_t k = 0; k < d; ++k) pre[k] += embed(static_cast<std::size_t>(prev), k);
      if (prev == vocab.vec) {
        matvec_add(params[ParamId::kVecIn], u.stream.vectors.back(), pre);
      }
    }
    Vec h(d);
    for (std::size_t k = 0; k < d; ++k) h[k] = std::tanh(pre[k]);

    // Masked softmax.
    grammar.allowed(mask);
    std::fill(logits.begin(), logits.end(), 0.0);
    std::copy(params[ParamId::kOutB].data.begin(), params[ParamId::kOutB].data.end(),
              logits.begin());
    matvec_add(params[ParamId::kOutW], h, logits);
    double max_logit = -INFINITY;
    std::size_t n_allowed = 0;
    for (std::size_t v = 0; v < vocab_n; ++v) {
      if (mask[v]) {
        max_logit = std::max(max_logit, logits[v]);
        ++n_allowed;
      }
    }
    if (n_allowed == 0) throw Error(ErrorCode::kInternal, "grammar allows no token");
    double z = 0.0;
    Vec probs(vocab_n, 0.0);
    for (std::size_t v = 0; v < vocab_n; ++v) {
      if (mask[v]) {
        probs[v] = std::exp(logits[v] - max_logit);
        z += probs[v];
      }
    }
    for (double& p : probs) p /= z;

    const TokenId tok = pick_token(t, probs, mask);
    if (tok < 0 || static_cast<std::size_t>(tok) >= vocab_n || !mask[static_cast<std::size_t>(tok)]) {
      throw Error(ErrorCode::kStructural,
                  "token " + std::to_string(tok) + " not allowed at position " + std::to_string(t));
    }
    StepLogProb step;
    step.phase = grammar.phase();
    step.discrete = logits[static_cast<std::size_t>(tok)] - max_logit - std::log(z);
    step.options = n_allowed;
    step.scored = n_allowed > 1;

    Head head = Head::kNone;
    Vec mean;
    if (tok == vocab.vec) {
      head = grammar.phase() == Grammar::Phase::kVisual ? Head::kThought : Head::kAnswer;
      const bool thought = head == Head::kThought;
      mean = params[thought ? ParamId::kThoughtB : ParamId::kAnswerB].data;
      matvec_add(params[thought ? ParamId::kThoughtW : ParamId::kAnswerW], h, mean);
      Vec x = pick_vector(u.stream.vectors.size(), mean);
      if (x.size() != mean.size()) {
        throw Error(ErrorCode::kStructural, "vector payload has the wrong dimension");
      }
      step.continuous = gaussian_logpdf(x, mean, cfg.sigma);
      step.scored = true;
      u.vec_index.push_back(u.stream.vectors.size());
      u.stream.vectors.push_back(std::move(x));
    } else {
      u.vec_index.push_back(SIZE_MAX);
    }
    u.stream.tokens.push_back(tok);
    u.hidden.push_back(std::move(h));
    u.probs.push_back(std::move(probs));
    u.heads.push_back(head);
    u.means.push_back(std::move(mean));
    u.steps.push_back(step);
    grammar.advance(tok);
  }
  u.truncated = grammar.truncated();
  return u;
}

Unroll teacher_force(const PolicyParams& params, const TraceStream& stream,
                     const PolicyContext& ctx, DecodeMode mode) {
  Unroll u = unroll(
      params, ctx, mode,
      [&](std::size_t t, const Vec&, const std::vector<char>&) -> TokenId {
        if (t >= stream.tokens.size()) {
          throw Error(ErrorCode::kStructural, "stream ends before the grammar completes");
        }
        return stream.tokens[t];
      },
      [&](std::size_t i, const Vec&) -> Vec {
        if (i >= stream.vectors.size()) {
          throw Error(ErrorCode::kStructural, "missing vector payload");
        }
        return stream.vectors[i];
      });
  if (u.stream.tokens.size() != stream.tokens.size() ||
      u.stream.vectors.size() != stream.vectors.size()) {
    throw Error(ErrorCode::kStructural, "stream continues past END");
  }
  return u;
}

void backward(const PolicyParams& params, const Unroll& u, const PolicyContext& ctx,
              std::span<const double> w_disc, std::span<const double> w_cont,
              PolicyParams& grad) {
  const std::size_t steps = u.steps.size();
  if (w_disc.size() != steps || w_cont.size() != steps) {
    throw Error(ErrorCode::kInternal, "gradient weights do not match the trace length");
  }
  const PolicyConfig& cfg = params.config();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto vocab_n = static_cast<std::size_t>(cfg.vocab_size);
  const TokenId vec_token = Vocabulary::standard().vec;
  const double inv_var = 1.0 / (cfg.sigma * cfg.sigma);

  Vec dh_next(d, 0.0);  // W_h^T da_{t+1}
  Vec dh(d), da(d), dlogits(vocab_n), dmean;
  Vec da_sum(d, 0.0);   // accumulates da_t over all t for the bias/context
  for (std::size_t t = steps; t-- > 0;) {
    const Vec& h = u.hidden[t];
    dh = dh_next;
    const TokenId tok = u.stream.tokens[t];
    if (w_disc[t] != 0.0) {
      for (std::size_t v = 0; v < vocab_n; ++v) {
        dlogits[v] = -w_disc[t] * u.probs[t][v];
      }
      dlogits[static_cast<std::size_t>(tok)] += w_disc[t];
      outer_add(grad[ParamId::kOutW], dlogits, h);
      for (std::size_t v = 0; v < vocab_n; ++v) grad[ParamId::kOutB].data[v] += dlogits[v];
      matvec_t_add(params[ParamId::kOutW], dlogits, dh);
    }
    if (u.heads[t] != Head::kNone && w_cont[t] != 0.0) {
      const Vec& x = u.stream.vectors[u.vec_index[t]];
      const Vec& mean = u.means[t];
      dmean.assign(mean.size(), 0.0);
      for (std::size_t k = 0; k < mean.size(); ++k) {
        dmean[k] = w_cont[t] * (x[k] - mean[k]) * inv_var;
      }
      const bool thought = u.heads[t] == Head::kThought;
      outer_add(grad[thought ? ParamId::kThoughtW : ParamId::kAnswerW], dmean, h);
      auto& b = grad[thought ? ParamId::kThoughtB : ParamId::kAnswerB].data;
      for (std::size_t k = 0; k < dmean.size(); ++k) b[k] += dmean[k];
      matvec_t_add(params[thought ? ParamId::kThoughtW : ParamId::kAnswerW], dmean, dh);
    }
    for (std::size_t k = 0; k < d; ++k) da[k] = dh[k] * (1.0 - h[k] * h[k]);
    for (std::size_t k = 0; k < d; ++k) da_sum[k] += da[k];
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    if (t > 0) {
      outer_add(grad[ParamId::kRecurrent], da, u.hidden[t - 1]);
      matvec_t_add(params[ParamId::kRecurrent], da, dh_next);
      const TokenId prev = u.stream.tokens[t - 1];
      Tensor& embed = grad[ParamId::kEmbed];
      for (std::size_t k = 0; k < d; ++k) embed(static_cast<std::size_t>(prev), k) += da[k];
      if (prev == vec_token) {
        outer_add(grad[ParamId::kVecIn], da, u.stream.vectors[u.vec_index[t - 1]]);
      }
    }
  }
  for (std::size_t k = 0; k < d; ++k) grad[ParamId::kBias].data[k] += da_sum[k];
  outer_add(grad[ParamId::kContext], da_sum, ctx.features);
}

RolloutSample to_sample(Unroll&& u, DecodeMode mode) {
  RolloutSample s;
  s.mode = mode;
  s.stream = std::move(u.stream);
  s.steps = std::move(u.steps);
  s.truncated = u.truncated;
  for (const StepLogProb& step : s.steps) s.total_logprob += step.total();
  return s;
}

}  // namespace

std::string_view to_string(DecodeMode m) {
  switch (m) {
    case DecodeMode::kVPlus: return "v+";
    case DecodeMode::kVMinus: return "v-";
    case DecodeMode::kAdaptive: return "adaptive";
  }
  return "?";
}

std::optional<Mode> declared_mode(DecodeMode m) {
  if (m == DecodeMode::kVPlus) return Mode::kVPlus;
  if (m == DecodeMode::kVMinus) return Mode::kVMinus;
  return std::nullopt;
}

void PolicyConfig::validate() const {
  if (d_model < 1 || d_model > 64) throw Error(ErrorCode::kInvalidInput, "d_model must lie in [1, 64]");
  if (latent_dim < 1 || max_grid < 1 || vocab_size < 1) {
    throw Error(ErrorCode::kInvalidInput, "policy dimensions must be positive");
  }
  if (!(sigma > 0.0)) throw Error(ErrorCode::kInvalidInput, "sigma must be positive");
}

PolicyParams PolicyParams::zeros(const PolicyConfig& cfg) {
  cfg.validate();
  PolicyParams p;
  p.config_ = cfg;
  const auto v = static_cast<std::size_t>(cfg.vocab_size);
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto z = static_cast<std::size_t>(cfg.latent_dim);
  const auto c = static_cast<std::size_t>(cfg.context_dim());
  const std::array<std::vector<std::size_t>, kNumTensors> dims = {{
      {v, d}, {d, z}, {d, c}, {d, d}, {d}, {v, d}, {v}, {z, d}, {z}, {z, d}, {z}}};
  for (std::size_t i = 0; i < kNumTensors; ++i) {
    Tensor& t = p.tensors_[i];
    t.name = kTensorNames[i];
    t.dims = dims[i];
    std::size_t n = 1;
    for (std::size_t k : t.dims) n *= k;
    t.data.assign(n, 0.0);
  }
  return p;
}

PolicyParams PolicyParams::init(const PolicyConfig& cfg, std::uint64_t seed) {
  PolicyParams p = zeros(cfg);
  auto rng = make_rng(seed, "init");
  const double d = cfg.d_model;
  const double active_context = cfg.max_grid * cfg.max_grid + 1.0;
  const std::array<double, kNumTensors> scale = {
      0.5,                                   // embed
      1.0 / std::sqrt(cfg.latent_dim),       // vec_in
      1.0 / std::sqrt(active_context),       // context
      0.5 / std::sqrt(d),                    // recurrent
      0.0,                                   // bias
      0.1,                                   // out_w
      0.0,                                   // out_b
      0.1 / std::sqrt(d),                    // thought_w
      0.0,                                   // thought_b
      0.1 / std::sqrt(d),                    // answer_w
      0.0};                                  // answer_b
  for (std::size_t i = 0; i < kNumTensors; ++i) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& x : p.tensors_[i].data) x = scale[i] * normal(rng);
  }
  p.round_to_storage();
  return p;
}

std::size_t PolicyParams::num_parameters() const {
  std::size_t n = 0;
  for (const Tensor& t : tensors_) n += t.data.size();
  return n;
}

double& PolicyParams::flat(std::size_t i) {
  for (Tensor& t : tensors_) {
    if (i < t.data.size()) return t.data[i];
    i -= t.data.size();
  }
  throw Error(ErrorCode::kInvalidInput, "flat parameter index out of range");
}

double PolicyParams::flat(std::size_t i) const {
  return const_cast<PolicyParams*>(this)->flat(i);
}

void PolicyParams::fill(double value) {
  for (Tensor& t : tensors_) std::fill(t.data.begin(), t.data.end(), value);
}

void PolicyParams::add_scaled(const PolicyParams& other, double scale) {
  for (std::size_t i = 0; i < kNumTensors; ++i) {
    auto& a = tensors_[i].data;
    const auto& b = other.tensors_[i].data;
    if (a.size() != b.size()) throw Error(ErrorCode::kInternal, "parameter shape mismatch");
    for (std::size_t k = 0; k < a.size(); ++k) a[k] += scale * b[k];
  }
}

void PolicyParams::round_to_storage() {
  for (Tensor& t : tensors_) {
    for (double& x : t.data) x = static_cast<double>(static_cast<float>(x));
  }
}

bool PolicyParams::all_finite() const {
  for (const Tensor& t : tensors_) {
    for (double x : t.data) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

bool PolicyParams::operator==(const PolicyParams& other) const {
  for (std::size_t i = 0; i < kNumTensors; ++i) {
    if (tensors_[i].dims != other.tensors_[i].dims ||
        tensors_[i].data != other.tensors_[i].data) {
      return false;
    }
  }
  return true;
}

void DecodeSpec::validate() const {
  if (budget_k < 1) throw Error(ErrorCode::kInvalidInput, "budget_k must be >= 1");
  if (max_answer_len < 1) throw Error(ErrorCode::kInvalidInput, "max_answer_len must be >= 1");
  if (max_len < answer_min() + 7) {
    throw Error(ErrorCode::kInvalidInput, "max_len cannot fit a minimal v+ trace");
  }
}

PolicyContext make_context(const TaskInstance& inst, const PolicyConfig& cfg,
                           std::size_t budget_k, std::size_t max_len) {
  if (inst.size > cfg.max_grid) {
    throw Error(ErrorCode::kInvalidInput, "board larger than the policy context");
  }
  PolicyContext ctx;
  ctx.features.assign(static_cast<std::size_t>(cfg.context_dim()), 0.0);
  const std::vector<CellType> cells = inst.family == TaskFamily::kNavigation
                                          ? map_cells(inst.map, inst.map.start)
                                          : inst.target_cells;
  for (int r = 0; r < inst.size; ++r) {
    for (int c = 0; c < inst.size; ++c) {
      const auto type = static_cast<int>(cells[static_cast<std::size_t>(r * inst.size + c)]);
      ctx.features[static_cast<std::size_t>((r * cfg.max_grid + c) * kNumCellTypes + type)] = 1.0;
    }
  }
  const bool nav = inst.family == TaskFamily::kNavigation;
  ctx.features[ctx.features.size() - (nav ? 2 : 1)] = 1.0;
  ctx.spec.budget_k = budget_k;
  ctx.spec.max_len = max_len;
  ctx.spec.max_answer_len = static_cast<std::size_t>(4 * inst.size);
  if (!nav) {
    const auto n = static_cast<std::size_t>(inst.size);
    ctx.spec.answer_grid = GridShape{n, n};
  }
  ctx.spec.validate();
  return ctx;
}

TraceFormat trace_format_for(const PolicyContext& ctx) {
  TraceFormat f;
  f.budget_k = ctx.spec.budget_k;
  f.answer_grid = ctx.spec.answer_grid;
  return f;
}

Grammar::Grammar(const Vocabulary& vocab, const DecodeSpec& spec, DecodeMode mode)
    : vocab_(vocab), spec_(spec), mode_(mode) {
  spec_.validate();
}

void Grammar::allowed(std::vector<char>& mask) const {
  mask.assign(static_cast<std::size_t>(vocab_.size()), 0);
  auto allow = [&](TokenId t) { mask[static_cast<std::size_t>(t)] = 1; };
  if (phase_ == Phase::kDone) return;
  // The last slot can only terminate.
  if (pos_ + 1 >= spec_.max_len) {
    allow(vocab_.end);
    return;
  }
  const std::size_t remaining = spec_.max_len - pos_;
  switch (phase_) {
    case Phase::kStart:
      allow(vocab_.think_open);
      break;
    case Phase::kThink: {
      const bool need_visual = mode_ == DecodeMode::kVPlus && visual_segments_ == 0;
      if (need_visual && remaining <= spec_.answer_min() + 6) {
        allow(vocab_.vt_open);
        break;
      }
      for (TokenId t = 0; t < vocab_.text_size; ++t) allow(t);
      if (mode_ != DecodeMode::kVMinus) allow(vocab_.vt_open);
      if (!need_visual) allow(vocab_.think_close);
      break;
    }
    case Phase::kVisual:
      if (vecs_in_segment_ < spec_.budget_k) allow(vocab_.vec);
      if (vecs_in_segment_ >= 1) allow(vocab_.vt_close);
      break;
    case Phase::kAfterThink:
      allow(vocab_.answer_sep);
      break;
    case Phase::kAnswer:
      if (spec_.answer_grid) {
        allow(answer_len_ < spec_.answer_grid->cells() ? vocab_.vec : vocab_.end);
      } else {
        if (answer_len_ < spec_.max_answer_len) {
          for (TokenId t = 0; t < vocab_.text_size; ++t) allow(t);
        }
        if (answer_len_ >= 1) allow(vocab_.end);
      }
      break;
    case Phase::kDone:
      break;
  }
}

bool Grammar::is_allowed(TokenId t) const {
  std::vector<char> mask;
  allowed(mask);
  return t >= 0 && static_cast<std::size_t>(t) < mask.size() && mask[static_cast<std::size_t>(t)];
}

void Grammar::advance(TokenId t) {
  if (!is_allowed(t)) {
    throw Error(ErrorCode::kStructural, "token " + std::to_string(t) + " violates the grammar");
  }
  ++pos_;
  if (t == vocab_.end) {
    const bool natural = phase_ == Phase::kAnswer &&
                         (spec_.answer_grid ? answer_len_ == spec_.answer_grid->cells()
                                            : answer_len_ >= 1);
    truncated_ = !natural;
    phase_ = Phase::kDone;
    return;
  }
  switch (phase_) {
    case Phase::kStart:
      phase_ = Phase::kThink;
      break;
    case Phase::kThink:
      if (t == vocab_.vt_open) {
        phase_ = Phase::kVisual;
        vecs_in_segment_ = 0;
        ++visual_segments_;
      } else if (t == vocab_.think_close) {
        phase_ = Phase::kAfterThink;
      }
      break;
    case Phase::kVisual:
      if (t == vocab_.vec) {
        ++vecs_in_segment_;
      } else {
        phase_ = Phase::kThink;
      }
      break;
    case Phase::kAfterThink:
      phase_ = Phase::kAnswer;
      break;
    case Phase::kAnswer:
      ++answer_len_;
      break;
    case Phase::kDone:
      break;
  }
}

ForwardResult forward_logprob(const PolicyParams& params, const TraceStream& stream,
                              const PolicyContext& ctx, DecodeMode mode) {
  Unroll u = teacher_force(params, stream, ctx, mode);
  ForwardResult r;
  r.steps = std::move(u.steps);
  r.probs = std::move(u.probs);
  r.truncated = u.truncated;
  for (const StepLogProb& s : r.steps) r.total += s.total();
  return r;
}

void accumulate_grad(const PolicyParams& params, const TraceStream& stream,
                     const PolicyContext& ctx, DecodeMode mode,
                     std::span<const double> w_disc, std::span<const double> w_cont,
                     PolicyParams& grad) {
  const Unroll u = teacher_force(params, stream, ctx, mode);
  backward(params, u, ctx, w_disc, w_cont, grad);
}

PolicyParams grad_logprob(const PolicyParams& params, const TraceStream& stream,
                          const PolicyContext& ctx, DecodeMode mode) {
  const Unroll u = teacher_force(params, stream, ctx, mode);
  PolicyParams grad = PolicyParams::zeros(params.config());
  const std::vector<double> ones(u.steps.size(), 1.0);
  backward(params, u, ctx, ones, ones, grad);
  return grad;
}

RolloutSample sample_rollout(const PolicyParams& params, const PolicyContext& ctx,
                             DecodeMode mode, std::mt19937_64& rng) {
  const double sigma = params.config().sigma;
  Unroll u = unroll(
      params, ctx, mode,
      [&](std::size_t, const Vec& probs, const std::vector<char>& mask) -> TokenId {
        std::uniform_real_distribution<double> uniform(0.0, 1.0);
        const double r = uniform(rng);
        double acc = 0.0;
        TokenId last = -1;
        for (std::size_t v = 0; v < probs.size(); ++v) {
          if (!mask[v]) continue;
          last = static_cast<TokenId>(v);
          acc += probs[v];
          if (r < acc) return last;
        }
        return last;
      },
      [&](std::size_t, const Vec& mean) -> Vec {
        std::normal_distribution<double> normal(0.0, sigma);
        Vec x(mean.size());
        for (std::size_t k = 0; k < x.size(); ++k) x[k] = mean[k] + normal(rng);
        return x;
      });
  return to_sample(std::move(u), mode);
}

RolloutSample greedy_decode(const PolicyParams& params, const PolicyContext& ctx,
                            DecodeMode mode) {
  Unroll u = unroll(
      params, ctx, mode,
      [&](std::size_t, const Vec& probs, const std::vector<char>& mask) -> TokenId {
        TokenId best = -1;
        for (std::size_t v = 0; v < probs.size(); ++v) {
          if (mask[v] && (best < 0 || probs[v] > probs[static_cast<std::size_t>(best)])) {
            best = static_cast<TokenId>(v);
          }
        }
        return best;
      },
      [&](std::size_t, const Vec& mean) -> Vec { return mean; });
  return to_sample(std::move(u), mode);
}

Stage1Loss stage1_loss(const PolicyParams& params, const TraceStream& gold,
                       const PolicyContext& ctx, double alpha, PolicyParams* grad) {
  const Unroll u = teacher_force(params, gold, ctx, DecodeMode::kAdaptive);
  const std::size_t steps = u.steps.size();
  const double d = params.config().latent_dim;
  const double var = params.config().sigma * params.config().sigma;

  auto in_think = [](Grammar::Phase p) {
    return p == Grammar::Phase::kThink || p == Grammar::Phase::kVisual;
  };
  std::size_t n_think = 0, n_vis = 0, n_out_tok = 0, n_out_vec = 0;
  for (std::size_t t = 0; t < steps; ++t) {
    const StepLogProb& s = u.steps[t];
    if (u.heads[t] == Head::kThought) ++n_vis;
    if (u.heads[t] == Head::kAnswer) ++n_out_vec;
    if (s.options < 2) continue;
    if (in_think(s.phase)) ++n_think;
    if (s.phase == Grammar::Phase::kAnswer) ++n_out_tok;
  }

  Stage1Loss loss;
  std::vector<double> w_disc(steps, 0.0), w_cont(steps, 0.0);
  const bool grid_answer = ctx.spec.answer_grid.has_value();
  for (std::size_t t = 0; t < steps; ++t) {
    const StepLogProb& s = u.steps[t];
    if (in_think(s.phase) && s.options > 1) {
      loss.ce -= s.discrete / static_cast<double>(n_think);
      w_disc[t] = -1.0 / static_cast<double>(n_think);
    }
    if (u.heads[t] != Head::kNone) {
      const Vec& x = u.stream.vectors[u.vec_index[t]];
      double sq = 0.0;
      for (std::size_t k = 0; k < x.size(); ++k) {
        const double e = x[k] - u.means[t][k];
        sq += e * e;
      }
      // MSE gradient expressed through the Gaussian log-density weight.
      if (u.heads[t] == Head::kThought) {
        loss.mse += sq / d / static_cast<double>(n_vis);
        w_cont[t] = -alpha * 2.0 * var / (d * static_cast<double>(n_vis));
      } else {
        loss.out += sq / d / static_cast<double>(n_out_vec);
        w_cont[t] = -2.0 * var / (d * static_cast<double>(n_out_vec));
      }
    } else if (s.phase == Grammar::Phase::kAnswer && !grid_answer && s.options > 1) {
      loss.out -= s.discrete / static_cast<double>(n_out_tok);
      w_disc[t] = -1.0 / static_cast<double>(n_out_tok);
    }
  }
  loss.total = loss.ce + alpha * loss.mse + loss.out;
  if (grad != nullptr) backward(params, u, ctx, w_disc, w_cont, *grad);
  return loss;
}

}  // namespace adloop
