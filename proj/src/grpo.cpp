#include "adloop/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include <spdlog/spdlog.h>

#include "adloop/error.hpp"
#include "adloop/rng.hpp"

namespace adloop {

namespace {

// Query order for global batch position p: a fresh permutation per epoch.
class QuerySchedule {
 public:
  QuerySchedule(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}

  std::size_t at(std::uint64_t position) {
    const std::uint64_t epoch = position / n_;
    if (epoch != cached_epoch_ || perm_.empty()) {
      perm_.resize(n_);
      std::iota(perm_.begin(), perm_.end(), std::size_t{0});
      auto rng = make_rng(seed_, "stage2-order", {epoch});
      std::shuffle(perm_.begin(), perm_.end(), rng);
      cached_epoch_ = epoch;
    }
    return perm_[position % n_];
  }

 private:
  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t cached_epoch_ = 0;
  std::vector<std::size_t> perm_;
};

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

void write_checkpoint_state(const std::string& path, const PolicyParams& policy,
                            const PolicyParams& old, const Optimizer& opt, int step) {
  std::vector<NamedTensor> tensors;
  append_policy(tensors, policy, "policy.");
  append_policy(tensors, old, "old.");
  opt.save(tensors);
  append_scalar(tensors, "stage2.step", step);
  const std::string tmp = path + ".tmp";
  write_checkpoint(tmp, tensors);
  std::filesystem::rename(tmp, path);
}

}  // namespace

void RLConfig::validate() const {
  if (group_size < 2 || group_size % 2 != 0) {
    throw Error(ErrorCode::kInvalidInput, "group size must be even and >= 2");
  }
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw Error(ErrorCode::kInvalidInput, "epsilon must lie in (0,1)");
  if (beta < 0.0) throw Error(ErrorCode::kInvalidInput, "beta must be >= 0");
  if (batch_size < 1 || steps < 0 || refresh_every < 1 || checkpoint_every < 1) {
    throw Error(ErrorCode::kInvalidInput, "batch size, steps and intervals must be positive");
  }
  if (!(std_guard > 0.0)) throw Error(ErrorCode::kInvalidInput, "std_guard must be positive");
}

GroupBatch sample_groups(const PolicyParams& policy_old, const PolicyContext& ctx,
                         const std::string& query_id, int group_size, std::uint64_t seed,
                         std::uint64_t extra) {
  if (group_size < 2 || group_size % 2 != 0) {
    throw Error(ErrorCode::kInvalidInput, "group size must be even and >= 2");
  }
  auto rng = make_rng(seed, "rollout", {fnv1a64(query_id), extra});
  GroupBatch batch;
  batch.query_id = query_id;
  for (int i = 0; i < group_size / 2; ++i) {
    batch.v_plus.push_back(sample_rollout(policy_old, ctx, DecodeMode::kVPlus, rng));
  }
  for (int i = 0; i < group_size / 2; ++i) {
    batch.v_minus.push_back(sample_rollout(policy_old, ctx, DecodeMode::kVMinus, rng));
  }
  return batch;
}

GroupRewards score_group(const GroupBatch& batch, const TaskInstance& task,
                         const PolicyContext& ctx, const StateEncoder& encoder,
                         const RewardConfig& cfg) {
  const TraceFormat format = trace_format_for(ctx);
  std::vector<RewardBreakdown> plus, minus;
  for (const RolloutSample& s : batch.v_plus) {
    plus.push_back(base_reward(s.stream, task, format, encoder, cfg));
  }
  for (const RolloutSample& s : batch.v_minus) {
    minus.push_back(base_reward(s.stream, task, format, encoder, cfg));
  }
  return assemble_group(batch.query_id, std::move(plus), std::move(minus), cfg.lambda, cfg.delta);
}

std::vector<double> group_normalize(const std::vector<double>& values, double std_guard,
                                    bool* degenerate) {
  const double n = static_cast<double>(values.size());
  const double mean = mean_of(values);
  double var = 0.0;
  for (double x : values) var += (x - mean) * (x - mean);
  const double stdev = values.empty() ? 0.0 : std::sqrt(var / n);
  std::vector<double> out(values.size(), 0.0);
  const bool zero = !(stdev >= std_guard);
  if (degenerate != nullptr) *degenerate = zero;
  if (zero) return out;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - mean) / stdev;
  return out;
}

AdvantageVector compute_advantages(const GroupRewards& group, double gamma, double std_guard) {
  if (group.r_intra.size() != group.size() || group.r_inter.size() != group.size()) {
    throw Error(ErrorCode::kInvalidInput, "group rewards are not populated");
  }
  AdvantageVector adv;
  adv.gamma = gamma;
  adv.intra = group_normalize(group.r_intra, std_guard, &adv.intra_degenerate);
  adv.inter = group_normalize(group.r_inter, std_guard, &adv.inter_degenerate);
  adv.advantage.resize(adv.intra.size());
  for (std::size_t i = 0; i < adv.intra.size(); ++i) {
    adv.advantage[i] = adv.intra[i] + gamma * adv.inter[i];
  }
  return adv;
}

double kl_estimate(double logp_new, double logp_ref) {
  const double log_r = logp_ref - logp_new;
  return std::exp(log_r) - log_r - 1.0;
}

SurrogateResult surrogate_loss(const PolicyParams& policy_new, const PolicyParams& policy_ref,
                               const PolicyContext& ctx, const GroupBatch& batch,
                               const AdvantageVector& adv, double epsilon, double beta,
                               PolicyParams* grad, double grad_scale) {
  const std::size_t g = batch.size();
  if (adv.advantage.size() != g || g == 0) {
    throw Error(ErrorCode::kInvalidInput, "advantages do not match the batch");
  }
  SurrogateResult res;
  const double inv_g = 1.0 / static_cast<double>(g);
  double surrogate_sum = 0.0, kl_sum = 0.0;
  for (std::size_t i = 0; i < g; ++i) {
    const RolloutSample& sample = batch.at(i);
    const double a = adv.advantage[i];
    const ForwardResult fresh = forward_logprob(policy_new, sample.stream, ctx, sample.mode);
    const ForwardResult ref = forward_logprob(policy_ref, sample.stream, ctx, sample.mode);
    if (fresh.steps.size() != sample.steps.size() || ref.steps.size() != sample.steps.size()) {
      throw Error(ErrorCode::kInternal, "token misalignment between policy evaluations");
    }
    std::size_t tokens = 0;
    for (const StepLogProb& s : sample.steps) tokens += s.scored ? 1 : 0;
    if (tokens == 0) continue;
    const double inv_t = 1.0 / static_cast<double>(tokens);

    std::vector<double> weights(sample.steps.size(), 0.0);
    double ratio_sum = 0.0, kl_traj = 0.0;
    for (std::size_t t = 0; t < sample.steps.size(); ++t) {
      if (!sample.steps[t].scored) continue;
      const double lp_new = fresh.steps[t].total();
      const double ratio = std::exp(lp_new - sample.steps[t].total());
      const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
      // min(r A, clip(r) A) == A * (A >= 0 ? min : max)(r, clip(r)).
      const bool clip_active = (a > 0.0 && ratio > 1.0 + epsilon) ||
                               (a < 0.0 && ratio < 1.0 - epsilon);
      ratio_sum += clip_active ? clipped : ratio;
      res.clipped += clip_active ? 1 : 0;
      const double kl = kl_estimate(lp_new, ref.steps[t].total());
      kl_traj += kl;
      const double r_ref = std::exp(ref.steps[t].total() - lp_new);
      double w = beta * inv_g * inv_t * (1.0 - r_ref);
      if (!clip_active) w -= inv_g * inv_t * a * ratio;
      weights[t] = w * grad_scale;
    }
    res.tokens += tokens;
    surrogate_sum += a * (ratio_sum / static_cast<double>(tokens));
    kl_sum += kl_traj * inv_t;
    if (grad != nullptr) {
      accumulate_grad(policy_new, sample.stream, ctx, sample.mode, weights, weights, *grad);
    }
  }
  res.surrogate = surrogate_sum / static_cast<double>(g);
  res.kl = kl_sum * inv_g;
  res.loss = -res.surrogate + beta * res.kl;
  res.clip_fraction =
      res.tokens ? static_cast<double>(res.clipped) / static_cast<double>(res.tokens) : 0.0;
  return res;
}

std::string metrics_json(const Stage2Metrics& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["loss"] = m.loss;
  j["kl"] = m.kl;
  j["clip_fraction"] = m.clip_fraction;
  j["mean_reward_vplus"] = m.mean_reward_vplus;
  j["mean_reward_vminus"] = m.mean_reward_vminus;
  j["vplus_usage_rate"] = m.vplus_usage_rate;
  j["success_rate"] = m.success_rate;
  j["mean_format"] = m.mean_format;
  j["mean_content"] = m.mean_content;
  j["mean_bonus"] = m.mean_bonus;
  return j.dump();
}

Stage2Result train_stage2(const RLConfig& cfg, const std::vector<TaskInstance>& dataset,
                          const PolicyParams& init, const StateEncoder& encoder,
                          const std::string& out_dir, const Stage2Options& options) {
  cfg.validate();
  if (dataset.empty()) throw Error(ErrorCode::kInvalidInput, "stage-2 dataset is empty");
  std::filesystem::create_directories(out_dir);
  const std::string ckpt_path = out_dir + "/checkpoint.adlp";
  const std::string metrics_path = out_dir + "/metrics.jsonl";

  PolicyConfig pcfg = init.config();
  pcfg.sigma = cfg.sigma;
  const PolicyParams ref = [&] {
    PolicyParams r = PolicyParams::zeros(pcfg);
    for (std::size_t i = 0; i < PolicyParams::kNumTensors; ++i) {
      r.tensors()[i].data = init.tensors()[i].data;
    }
    return r;
  }();
  PolicyParams policy = ref;
  PolicyParams old = ref;
  Optimizer opt(cfg.optimizer, pcfg);
  int start_step = 0;

  std::vector<std::string> kept_lines;
  if (options.resume && std::filesystem::exists(ckpt_path)) {
    const auto tensors = read_checkpoint(ckpt_path);
    policy = extract_policy(tensors, cfg.sigma, "policy.");
    old = extract_policy(tensors, cfg.sigma, "old.");
    opt.load(tensors);
    start_step = static_cast<int>(extract_scalar(tensors, "stage2.step").value_or(0.0));
    std::ifstream in(metrics_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (j.contains("step") && j["step"].get<int>() < start_step) kept_lines.push_back(line);
    }
    spdlog::info("stage-2 resuming at step {}", start_step);
  }
  {
    std::ofstream out(metrics_path, std::ios::trunc);
    for (const std::string& l : kept_lines) out << l << '\n';
  }
  std::ofstream metrics_out(metrics_path, std::ios::app);

  std::vector<PolicyContext> contexts;
  contexts.reserve(dataset.size());
  for (const TaskInstance& inst : dataset) {
    contexts.push_back(make_context(inst, pcfg, cfg.budget_k, cfg.max_len));
  }
  QuerySchedule schedule(dataset.size(), cfg.seed);
  const RewardConfig rcfg = cfg.reward();

  Stage2Result result;
  int ran = 0;
  int step = start_step;
  for (; step < cfg.steps; ++step) {
    if (options.stop_after && ran >= *options.stop_after) break;
    if (step % cfg.refresh_every == 0) old = policy;

    PolicyParams grad = PolicyParams::zeros(pcfg);
    Stage2Metrics m;
    m.step = step;
    std::vector<double> plus_rewards, minus_rewards;
    double used = 0.0, solved = 0.0;
    const double scale = 1.0 / cfg.batch_size;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const std::uint64_t position = static_cast<std::uint64_t>(step) * cfg.batch_size + b;
      const std::size_t q = schedule.at(position);
      const TaskInstance& task = dataset[q];
      const PolicyContext& ctx = contexts[q];

      const RolloutSample greedy = greedy_decode(policy, ctx, DecodeMode::kAdaptive);
      used += uses_visual_thoughts(greedy.stream, Vocabulary::standard()) ? 1.0 : 0.0;
      const RewardBreakdown gr = base_reward(greedy.stream, task, trace_format_for(ctx), encoder, rcfg);
      solved += gr.correct ? 1.0 : 0.0;

      const GroupBatch batch = sample_groups(old, ctx, task.id, cfg.group_size, cfg.seed,
                                             static_cast<std::uint64_t>(step));
      const GroupRewards rewards = score_group(batch, task, ctx, encoder, rcfg);
      for (const auto& r : rewards.v_plus) plus_rewards.push_back(r.r_final);
      for (const auto& r : rewards.v_minus) minus_rewards.push_back(r.r_final);
      for (const auto* group : {&rewards.v_plus, &rewards.v_minus}) {
        for (const RewardBreakdown& r : *group) {
          m.mean_format += r.r_format;
          m.mean_content += r.r_content;
          m.mean_bonus += r.bonus;
        }
      }
      const AdvantageVector adv = compute_advantages(rewards, cfg.gamma, cfg.std_guard);
      const SurrogateResult s =
          surrogate_loss(policy, ref, ctx, batch, adv, cfg.epsilon, cfg.beta, &grad, scale);
      m.loss += s.loss * scale;
      m.kl += s.kl * scale;
      m.clip_fraction += s.clip_fraction * scale;
    }
    m.mean_reward_vplus = mean_of(plus_rewards);
    m.mean_reward_vminus = mean_of(minus_rewards);
    m.vplus_usage_rate = used / cfg.batch_size;
    m.success_rate = solved / cfg.batch_size;
    const double trajectories = static_cast<double>(cfg.batch_size) * cfg.group_size;
    m.mean_format /= trajectories;
    m.mean_content /= trajectories;
    m.mean_bonus /= trajectories;

    if (!std::isfinite(m.loss) || !grad.all_finite()) {
      nlohmann::ordered_json diag;
      diag["step"] = step;
      diag["error"] = "non-finite loss or gradient";
      diag["loss"] = std::isfinite(m.loss) ? nlohmann::json(m.loss) : nlohmann::json(nullptr);
      diag["kl"] = std::isfinite(m.kl) ? nlohmann::json(m.kl) : nlohmann::json(nullptr);
      metrics_out << diag.dump() << '\n';
      throw Error(ErrorCode::kNumeric, "stage-2 step " + std::to_string(step) +
                                           " produced a non-finite loss");
    }
    opt.step(policy, grad, cfg.learning_rate);
    metrics_out << metrics_json(m) << '\n';
    metrics_out.flush();
    result.metrics.push_back(m);
    ++ran;
    if ((step + 1) % cfg.checkpoint_every == 0) {
      write_checkpoint_state(ckpt_path, policy, old, opt, step + 1);
    }
    spdlog::debug("stage-2 step {} loss {:.4f} kl {:.5f} success {:.3f} usage {:.3f}", step,
                  m.loss, m.kl, m.success_rate, m.vplus_usage_rate);
  }
  write_checkpoint_state(ckpt_path, policy, old, opt, step);
  result.policy = std::move(policy);
  result.steps_completed = step;
  return result;
}

}  // namespace adloop
