#include "adloop/stage1.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>

#include <spdlog/spdlog.h>

#include "adloop/checkpoint.hpp"
#include "adloop/error.hpp"
#include "adloop/rng.hpp"
#include "json.hpp"

namespace adloop {

namespace {

std::vector<TokenId> action_tokens(const std::vector<Action>& actions) {
  std::vector<TokenId> out;
  out.reserve(actions.size());
  for (Action a : actions) out.push_back(action_token(a));
  return out;
}

Segment compressed_thought(const TokenGrid& grid, const Stage1Config& cfg) {
  ClusterSet clusters = compress(grid, cfg.compression());
  return Segment::visual(std::move(clusters.representatives));
}

bool text_only_instance(const TaskInstance& inst, const Stage1Config& cfg) {
  if (inst.family != TaskFamily::kNavigation || cfg.text_only_fraction <= 0.0) return false;
  const std::uint64_t h = derive_seed(cfg.seed, "stage1-text-only", {fnv1a64(inst.id)});
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return u < cfg.text_only_fraction;
}

void save_state(const std::string& path, const PolicyParams& policy, const Optimizer& opt,
                int epoch) {
  std::vector<NamedTensor> tensors;
  append_policy(tensors, policy, "policy.");
  opt.save(tensors);
  append_scalar(tensors, "stage1.epoch", epoch);
  const std::string tmp = path + ".tmp";
  write_checkpoint(tmp, tensors);
  std::filesystem::rename(tmp, path);
}

}  // namespace

void Stage1Config::validate() const {
  if (!(alpha >= 0.0)) throw Error(ErrorCode::kInvalidInput, "alpha must be >= 0");
  if (batch_size < 1) throw Error(ErrorCode::kInvalidInput, "batch size must be >= 1");
  if (epochs < 0) throw Error(ErrorCode::kInvalidInput, "epochs must be >= 0");
  if (!(learning_rate >= 0.0)) throw Error(ErrorCode::kInvalidInput, "learning rate must be >= 0");
  if (!(text_only_fraction >= 0.0 && text_only_fraction <= 1.0)) {
    throw Error(ErrorCode::kInvalidInput, "text-only fraction must lie in [0,1]");
  }
  compression().validate();
}

ThoughtTrace build_gold_trace(const TaskInstance& inst, const Stage1Config& cfg,
                              const StateEncoder& encoder) {
  ThoughtTrace trace;
  trace.mode = Mode::kVPlus;
  if (inst.family == TaskFamily::kNavigation) {
    const std::vector<Action> path = oracle_shortest_path(inst.map);
    Cell pos = inst.map.start;
    for (Action a : path) {
      pos = step(pos, a);
      trace.segments.push_back(Segment::text({action_token(a)}));
      trace.segments.push_back(compressed_thought(encode_state(inst.map, pos, encoder), cfg));
    }
    if (path.empty()) throw Error(ErrorCode::kInvalidInput, "start already on destination");
    trace.answer = action_tokens(path);
  } else {
    std::vector<TokenId> classes;
    classes.reserve(inst.target_cells.size());
    for (CellType c : inst.target_cells) classes.push_back(cell_token(c));
    trace.segments.push_back(Segment::text(std::move(classes)));
    trace.segments.push_back(compressed_thought(inst.target_grid, cfg));
    trace.answer = inst.target_grid;
  }
  return trace;
}

ThoughtTrace build_text_only_trace(const TaskInstance& inst) {
  ThoughtTrace trace;
  trace.mode = Mode::kVMinus;
  if (inst.family == TaskFamily::kNavigation) {
    const std::vector<TokenId> tokens = action_tokens(oracle_shortest_path(inst.map));
    trace.segments.push_back(Segment::text(tokens));
    trace.answer = tokens;
  } else {
    std::vector<TokenId> classes;
    for (CellType c : inst.target_cells) classes.push_back(cell_token(c));
    trace.segments.push_back(Segment::text(std::move(classes)));
    trace.answer = inst.target_grid;
  }
  return trace;
}

std::string metrics_json(const Stage1Metrics& m) {
  nlohmann::ordered_json j;
  j["epoch"] = m.epoch;
  j["loss"] = m.loss;
  j["ce"] = m.ce;
  j["mse"] = m.mse;
  j["out"] = m.out;
  j["updates"] = m.updates;
  return j.dump();
}

Stage1Result train_stage1(const Stage1Config& cfg, const std::vector<TaskInstance>& dataset,
                          const PolicyParams& init, const StateEncoder& encoder,
                          const std::string& out_dir, bool resume) {
  cfg.validate();
  if (dataset.empty()) throw Error(ErrorCode::kInvalidInput, "stage-1 dataset is empty");
  if (encoder.dim() != static_cast<std::size_t>(init.config().latent_dim)) {
    throw Error(ErrorCode::kInvalidInput, "encoder dim differs from the policy latent dim");
  }
  std::filesystem::create_directories(out_dir);
  const std::string ckpt_path = out_dir + "/checkpoint.adlp";
  const std::string metrics_path = out_dir + "/metrics.jsonl";
  const PolicyConfig& pcfg = init.config();

  std::vector<PolicyContext> contexts;
  std::vector<TraceStream> gold;
  for (const TaskInstance& inst : dataset) {
    contexts.push_back(make_context(inst, pcfg, cfg.budget_k, cfg.max_len));
    const ThoughtTrace trace = text_only_instance(inst, cfg) ? build_text_only_trace(inst)
                                                             : build_gold_trace(inst, cfg, encoder);
    TraceStream stream = render_trace(trace, trace_format_for(contexts.back()));
    if (stream.tokens.size() > cfg.max_len) {
      throw Error(ErrorCode::kInvalidInput,
                  "gold trace for " + inst.id + " exceeds max_len (" +
                      std::to_string(stream.tokens.size()) + " tokens)");
    }
    gold.push_back(std::move(stream));
  }

  PolicyParams policy = init;
  Optimizer opt(cfg.optimizer, pcfg);
  int start_epoch = 0;
  std::vector<std::string> kept;
  if (resume && std::filesystem::exists(ckpt_path)) {
    const auto tensors = read_checkpoint(ckpt_path);
    policy = extract_policy(tensors, pcfg.sigma, "policy.");
    opt.load(tensors);
    start_epoch = static_cast<int>(extract_scalar(tensors, "stage1.epoch").value_or(0.0));
    std::ifstream in(metrics_path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (j.contains("epoch") && j["epoch"].get<int>() < start_epoch) kept.push_back(line);
    }
    spdlog::info("stage-1 resuming at epoch {}", start_epoch);
  }
  {
    std::ofstream out(metrics_path, std::ios::trunc);
    for (const std::string& l : kept) out << l << '\n';
  }
  std::ofstream metrics_out(metrics_path, std::ios::app);

  const std::size_t n = dataset.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t batches_per_epoch = (n + batch - 1) / batch;
  const double total_updates = static_cast<double>(batches_per_epoch) * cfg.epochs;

  Stage1Result result;
  int epoch = start_epoch;
  for (; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = make_rng(cfg.seed, "stage1-order", {static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), rng);

    Stage1Metrics m;
    m.epoch = epoch;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      const std::size_t lo = b * batch;
      const std::size_t hi = std::min(n, lo + batch);
      const double scale = 1.0 / static_cast<double>(hi - lo);
      PolicyParams grad = PolicyParams::zeros(pcfg);
      PolicyParams g = PolicyParams::zeros(pcfg);
      for (std::size_t i = lo; i < hi; ++i) {
        const std::size_t q = order[i];
        g.fill(0.0);
        const Stage1Loss l = stage1_loss(policy, gold[q], contexts[q], cfg.alpha, &g);
        grad.add_scaled(g, scale);
        m.loss += l.total / static_cast<double>(n);
        m.ce += l.ce / static_cast<double>(n);
        m.mse += l.mse / static_cast<double>(n);
        m.out += l.out / static_cast<double>(n);
      }
      if (!std::isfinite(m.loss) || !grad.all_finite()) {
        nlohmann::ordered_json diag;
        diag["epoch"] = epoch;
        diag["batch"] = b;
        diag["error"] = "non-finite loss or gradient";
        metrics_out << diag.dump() << '\n';
        throw Error(ErrorCode::kNumeric, "stage-1 epoch " + std::to_string(epoch) +
                                             " produced a non-finite loss");
      }
      double lr = cfg.learning_rate;
      if (cfg.cosine && total_updates > 0) {
        const double t = static_cast<double>(epoch) * batches_per_epoch + b;
        lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * t / total_updates));
      }
      opt.step(policy, grad, lr);
      ++m.updates;
    }
    metrics_out << metrics_json(m) << '\n';
    metrics_out.flush();
    result.metrics.push_back(m);
    save_state(ckpt_path, policy, opt, epoch + 1);
    spdlog::debug("stage-1 epoch {} loss {:.4f} ce {:.4f} mse {:.5f} out {:.4f}", epoch, m.loss,
                  m.ce, m.mse, m.out);
  }
  if (epoch == start_epoch && !std::filesystem::exists(ckpt_path)) {
    save_state(ckpt_path, policy, opt, epoch);
  }
  result.policy = std::move(policy);
  result.epochs_completed = epoch;
  return result;
}

}  // namespace adloop
