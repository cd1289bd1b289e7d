#include "adloop/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "adloop/checkpoint.hpp"
#include "adloop/error.hpp"
#include "adloop/reward.hpp"
#include "adloop/rng.hpp"
#include "json.hpp"

namespace adloop {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& s) {
  T value{};
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc() || ptr != end || s.empty()) {
    throw std::invalid_argument("not a number: '" + s + "'");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) throw std::invalid_argument("not finite: '" + s + "'");
  }
  return value;
}

std::size_t parse_size(const std::string& s) {
  return static_cast<std::size_t>(parse_number<std::uint64_t>(s));
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("not a boolean: '" + s + "'");
}

std::vector<int> parse_levels(const std::string& s) {
  std::vector<int> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_number<int>(trim(item)));
  if (out.empty()) throw std::invalid_argument("empty level list");
  return out;
}

TaskFamily parse_family(const std::string& s) {
  if (s == "nav") return TaskFamily::kNavigation;
  if (s == "draft") return TaskFamily::kDrafting;
  throw std::invalid_argument("unknown family '" + s + "'");
}

std::string opt_name(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "sgd"; }

// Shortest decimal that round-trips.
std::string num(double v) { return fmt::format("{}", v); }

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define ADLOOP_FIELD(key, member, to_text, from_text)                                   \
  Field {                                                                               \
    key, [](const RunConfig& c) { return to_text(c.member); },                          \
        [](RunConfig& c, const std::string& v) { c.member = from_text(v); }             \
  }

std::string int_text(long long v) { return std::to_string(v); }
std::string bool_text(bool v) { return v ? "true" : "false"; }
std::string levels_text(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}
std::string family_text(TaskFamily f) { return std::string(to_string(f)); }
OptimizerKind optimizer_from(const std::string& s) { return parse_optimizer(s); }
int int_from(const std::string& s) { return parse_number<int>(s); }
double double_from(const std::string& s) { return parse_number<double>(s); }
std::uint64_t u64_from(const std::string& s) { return parse_number<std::uint64_t>(s); }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f{
        ADLOOP_FIELD("seed", seed, int_text, u64_from),
        ADLOOP_FIELD("budget_k", budget_k, int_text, parse_size),
        ADLOOP_FIELD("knn_k", knn_k, int_text, parse_size),
        ADLOOP_FIELD("max_len", max_len, int_text, parse_size),
        ADLOOP_FIELD("data.family", data.family, family_text, parse_family),
        ADLOOP_FIELD("data.count", data.count, int_text, int_from),
        ADLOOP_FIELD("data.size", data.size, int_text, int_from),
        ADLOOP_FIELD("data.levels", data.levels, levels_text, parse_levels),
        ADLOOP_FIELD("policy.d_model", policy.d_model, int_text, int_from),
        ADLOOP_FIELD("policy.latent_dim", policy.latent_dim, int_text, int_from),
        ADLOOP_FIELD("policy.max_grid", policy.max_grid, int_text, int_from),
        ADLOOP_FIELD("policy.sigma", policy.sigma, num, double_from),
        ADLOOP_FIELD("encoder.position_scale", position_scale, num, double_from),
        ADLOOP_FIELD("stage1.alpha", stage1.alpha, num, double_from),
        ADLOOP_FIELD("stage1.learning_rate", stage1.learning_rate, num, double_from),
        ADLOOP_FIELD("stage1.batch_size", stage1.batch_size, int_text, int_from),
        ADLOOP_FIELD("stage1.epochs", stage1.epochs, int_text, int_from),
        ADLOOP_FIELD("stage1.optimizer", stage1.optimizer, opt_name, optimizer_from),
        ADLOOP_FIELD("stage1.cosine", stage1.cosine, bool_text, parse_bool),
        ADLOOP_FIELD("stage1.text_only_fraction", stage1.text_only_fraction, num, double_from),
        ADLOOP_FIELD("stage2.group_size", stage2.group_size, int_text, int_from),
        ADLOOP_FIELD("stage2.gamma", stage2.gamma, num, double_from),
        ADLOOP_FIELD("stage2.beta", stage2.beta, num, double_from),
        ADLOOP_FIELD("stage2.epsilon", stage2.epsilon, num, double_from),
        ADLOOP_FIELD("stage2.lambda", stage2.lambda, num, double_from),
        ADLOOP_FIELD("stage2.delta", stage2.delta, num, double_from),
        ADLOOP_FIELD("stage2.learning_rate", stage2.learning_rate, num, double_from),
        ADLOOP_FIELD("stage2.batch_size", stage2.batch_size, int_text, int_from),
        ADLOOP_FIELD("stage2.std_guard", stage2.std_guard, num, double_from),
        ADLOOP_FIELD("stage2.steps", stage2.steps, int_text, int_from),
        ADLOOP_FIELD("stage2.refresh_every", stage2.refresh_every, int_text, int_from),
        ADLOOP_FIELD("stage2.checkpoint_every", stage2.checkpoint_every, int_text, int_from),
        ADLOOP_FIELD("stage2.format_weight", stage2.format_weight, num, double_from),
        ADLOOP_FIELD("stage2.draft_threshold", stage2.draft_threshold, num, double_from),
        ADLOOP_FIELD("stage2.optimizer", stage2.optimizer, opt_name, optimizer_from),
    };
    std::sort(f.begin(), f.end(), [](const Field& a, const Field& b) { return a.key < b.key; });
    return f;
  }();
  return table;
}

#undef ADLOOP_FIELD

void write_text(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
    out << text;
  }
  fs::rename(tmp, path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename F>
auto run_stage(const std::string& name, F&& body) -> decltype(body()) {
  spdlog::info("stage {}", name);
  try {
    return body();
  } catch (const Error& e) {
    throw Error(e.code(), "stage '" + name + "' failed: " + e.what());
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kInternal, "stage '" + name + "' failed: " + e.what());
  }
}

}  // namespace

RunConfig::RunConfig() {
  stage1.epochs = 100;
  stage1.learning_rate = 1e-3;
  stage1.batch_size = 32;
  stage2.learning_rate = 1e-3;
  stage2.batch_size = 32;
  stage2.steps = 300;
}

void RunConfig::validate() const {
  policy.validate();
  if (data.count < 1) throw Error(ErrorCode::kInvalidInput, "data.count must be >= 1");
  if (data.size > policy.max_grid) {
    throw Error(ErrorCode::kInvalidInput, "data.size exceeds policy.max_grid");
  }
  stage1_config().validate();
  stage2_config().validate();
  encoder();
}

DatasetSpec RunConfig::dataset_spec() const {
  DatasetSpec spec = data;
  spec.seed = seed;
  return spec;
}

std::uint64_t RunConfig::init_seed() const { return derive_seed(seed, "init"); }

Stage1Config RunConfig::stage1_config() const {
  Stage1Config c = stage1;
  c.budget_k = budget_k;
  c.knn_k = knn_k;
  c.max_len = max_len;
  c.seed = derive_seed(seed, "stage1");
  return c;
}

RLConfig RunConfig::stage2_config() const {
  RLConfig c = stage2;
  c.budget_k = budget_k;
  c.max_len = max_len;
  c.sigma = policy.sigma;
  c.seed = derive_seed(seed, "stage2");
  return c;
}

StateEncoder RunConfig::encoder() const {
  return StateEncoder(static_cast<std::size_t>(policy.latent_dim), position_scale);
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::map<std::string, const Field*> by_key;
  for (const Field& f : fields()) by_key[f.key] = &f;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kParse, "config line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = by_key.find(key);
    if (it == by_key.end()) {
      throw Error(ErrorCode::kParse,
                  "config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    try {
      it->second->set(cfg, value);
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kParse, "config line " + std::to_string(line_no) + " (" + key +
                                         "): " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) { return parse_config(read_text(path)); }

std::string config_text(const RunConfig& cfg) {
  std::string out;
  for (const Field& f : fields()) out += f.key + "=" + f.get(cfg) + "\n";
  return out;
}

std::string config_fingerprint(const RunConfig& cfg) {
  return fmt::format("{:016x}", fnv1a64(config_text(cfg)));
}

std::string_view to_string(EvalMode m) {
  switch (m) {
    case EvalMode::kForcedVPlus: return "forced_vplus";
    case EvalMode::kForcedVMinus: return "forced_vminus";
    case EvalMode::kAdaptive: return "adaptive";
  }
  return "?";
}

EvalMode parse_eval_mode(const std::string& s) {
  if (s == "forced_vplus" || s == "vplus") return EvalMode::kForcedVPlus;
  if (s == "forced_vminus" || s == "vminus") return EvalMode::kForcedVMinus;
  if (s == "adaptive") return EvalMode::kAdaptive;
  throw Error(ErrorCode::kInvalidInput, "unknown evaluation mode '" + s + "'");
}

DecodeMode decode_mode(EvalMode m) {
  switch (m) {
    case EvalMode::kForcedVPlus: return DecodeMode::kVPlus;
    case EvalMode::kForcedVMinus: return DecodeMode::kVMinus;
    case EvalMode::kAdaptive: return DecodeMode::kAdaptive;
  }
  return DecodeMode::kAdaptive;
}

const LevelStats* EvalReport::level(int l) const {
  for (const LevelStats& s : levels) {
    if (s.level == l) return &s;
  }
  return nullptr;
}

std::string eval_report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["mode"] = std::string(to_string(r.mode));
  j["seed"] = r.seed;
  j["fingerprint"] = r.fingerprint;
  j["instances"] = r.instances;
  j["success_rate"] = r.success_rate;
  j["vplus_usage_rate"] = r.vplus_usage_rate;
  auto levels = nlohmann::ordered_json::array();
  for (const LevelStats& s : r.levels) {
    nlohmann::ordered_json l;
    l["level"] = s.level;
    l["count"] = s.count;
    l["success_rate"] = s.success_rate;
    l["vplus_usage_rate"] = s.vplus_usage_rate;
    levels.push_back(l);
  }
  j["levels"] = levels;
  j["mean_reward_vplus"] = r.mean_reward_vplus;
  j["mean_reward_vminus"] = r.mean_reward_vminus;
  j["traces_vplus"] = r.traces_vplus;
  j["traces_vminus"] = r.traces_vminus;
  j["length"] = {{"mean", r.mean_length}, {"min", r.min_length}, {"max", r.max_length}};
  return j.dump(2) + "\n";
}

EvalReport evaluate(const PolicyParams& policy, const std::vector<TaskInstance>& dataset,
                    EvalMode mode, const RunConfig& cfg) {
  const StateEncoder encoder = cfg.encoder();
  const RewardConfig rcfg = cfg.stage2_config().reward();
  EvalReport r;
  r.mode = mode;
  r.seed = cfg.seed;
  r.fingerprint = config_fingerprint(cfg);
  r.instances = static_cast<int>(dataset.size());

  std::map<int, LevelStats> levels;
  double reward_plus = 0.0, reward_minus = 0.0, total_len = 0.0;
  int solved = 0, used = 0;
  for (const TaskInstance& inst : dataset) {
    const PolicyContext ctx = make_context(inst, policy.config(), cfg.budget_k, cfg.max_len);
    const RolloutSample s = greedy_decode(policy, ctx, decode_mode(mode));
    const RewardBreakdown b = base_reward(s.stream, inst, trace_format_for(ctx), encoder, rcfg);
    const bool uses = uses_visual_thoughts(s.stream, Vocabulary::standard());
    LevelStats& ls = levels[inst.difficulty];
    ls.level = inst.difficulty;
    ++ls.count;
    ls.success_rate += b.correct ? 1.0 : 0.0;
    ls.vplus_usage_rate += uses ? 1.0 : 0.0;
    solved += b.correct ? 1 : 0;
    used += uses ? 1 : 0;
    (uses ? reward_plus : reward_minus) += b.r_base;
    (uses ? r.traces_vplus : r.traces_vminus) += 1;
    const int len = static_cast<int>(s.stream.tokens.size());
    total_len += len;
    r.min_length = r.min_length == 0 ? len : std::min(r.min_length, len);
    r.max_length = std::max(r.max_length, len);
  }
  for (auto& [level, ls] : levels) {
    ls.success_rate /= ls.count;
    ls.vplus_usage_rate /= ls.count;
    r.levels.push_back(ls);
  }
  if (!dataset.empty()) {
    const double n = static_cast<double>(dataset.size());
    r.success_rate = solved / n;
    r.vplus_usage_rate = used / n;
    r.mean_length = total_len / n;
  }
  if (r.traces_vplus > 0) r.mean_reward_vplus = reward_plus / r.traces_vplus;
  if (r.traces_vminus > 0) r.mean_reward_vminus = reward_minus / r.traces_vminus;
  return r;
}

EvalReport evaluate(const std::string& checkpoint, const std::vector<TaskInstance>& dataset,
                    EvalMode mode, const RunConfig& cfg) {
  return evaluate(load_policy(checkpoint, cfg.policy.sigma), dataset, mode, cfg);
}

const std::vector<std::string>& plot_series() {
  static const std::vector<std::string> series{
      "loss", "kl", "clip_fraction", "mean_reward_vplus", "mean_reward_vminus",
      "vplus_usage_rate", "success_rate"};
  return series;
}

std::vector<std::string> emit_plots(const std::string& metrics_jsonl, const std::string& out_dir) {
  std::ifstream in(metrics_jsonl);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + metrics_jsonl);
  const auto& series = plot_series();
  std::vector<std::string> bodies(series.size(), "step,value\n");
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto where = metrics_jsonl + ":" + std::to_string(line_no) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParse, where + e.what());
    }
    if (!j.is_object() || !j.contains("step") || !j["step"].is_number_integer()) {
      throw Error(ErrorCode::kParse, where + "record has no integer step");
    }
    const std::string step = j["step"].dump();
    for (std::size_t s = 0; s < series.size(); ++s) {
      if (!j.contains(series[s]) || !j[series[s]].is_number()) {
        throw Error(ErrorCode::kParse, where + "missing numeric field '" + series[s] + "'");
      }
      bodies[s] += step + "," + j[series[s]].dump() + "\n";
    }
  }
  fs::create_directories(out_dir);
  std::vector<std::string> paths;
  for (std::size_t s = 0; s < series.size(); ++s) {
    const std::string path = out_dir + "/" + series[s] + ".csv";
    write_text(path, bodies[s]);
    paths.push_back(path);
  }
  return paths;
}

PipelineResult run_pipeline(const RunConfig& cfg, const std::string& out_dir,
                            const PipelineOptions& options) {
  cfg.validate();
  fs::create_directories(out_dir);
  const std::string cfg_path = out_dir + "/config.txt";
  const std::string resolved = config_text(cfg);
  if (fs::exists(cfg_path) && read_text(cfg_path) != resolved) {
    throw Error(ErrorCode::kInvalidInput,
                out_dir + " holds a run with a different config; use a fresh directory");
  }
  write_text(cfg_path, resolved);
  const StateEncoder encoder = cfg.encoder();

  const std::vector<TaskInstance> data = run_stage("gen-data", [&] {
    const std::string dir = out_dir + "/data";
    if (fs::exists(dir + "/instances.txt")) return load_dataset(dir, encoder);
    auto generated = generate_dataset(cfg.dataset_spec(), encoder);
    save_dataset(dir, generated);
    return generated;
  });

  const PolicyParams init = run_stage("init-policy", [&] {
    const std::string path = out_dir + "/init/policy.adlp";
    if (fs::exists(path)) return load_policy(path, cfg.policy.sigma);
    fs::create_directories(out_dir + "/init");
    PolicyParams p = PolicyParams::init(cfg.policy, cfg.init_seed());
    save_policy(path, p);
    return p;
  });

  const PolicyParams stage1 = run_stage("train-stage1", [&] {
    return train_stage1(cfg.stage1_config(), data, init, encoder, out_dir + "/stage1").policy;
  });

  fs::create_directories(out_dir + "/eval");
  PipelineResult result;
  result.stage1_report = run_stage("evaluate-stage1", [&] {
    EvalReport r = evaluate(stage1, data, EvalMode::kAdaptive, cfg);
    write_text(out_dir + "/eval/stage1_adaptive.json", eval_report_json(r));
    return r;
  });

  const Stage2Result s2 = run_stage("train-stage2", [&] {
    Stage2Options o;
    o.stop_after = options.stage2_stop_after;
    return train_stage2(cfg.stage2_config(), data, stage1, encoder, out_dir + "/stage2", o);
  });
  if (s2.steps_completed < cfg.stage2.steps) {
    spdlog::info("stage 2 halted at step {} of {}", s2.steps_completed, cfg.stage2.steps);
    return result;
  }

  run_stage("evaluate", [&] {
    for (EvalMode m : {EvalMode::kForcedVPlus, EvalMode::kForcedVMinus, EvalMode::kAdaptive}) {
      EvalReport r = evaluate(s2.policy, data, m, cfg);
      write_text(out_dir + "/eval/final_" + std::string(to_string(m)) + ".json",
                 eval_report_json(r));
      if (m == EvalMode::kAdaptive) {
        write_text(out_dir + "/report.json", eval_report_json(r));
        result.final_report = r;
      }
    }
  });

  run_stage("emit-plots", [&] {
    emit_plots(out_dir + "/stage2/metrics.jsonl", out_dir + "/plots");
  });
  result.completed = true;
  return result;
}

void configure_logging() {
  const char* env = std::getenv("ADLOOP_LOG_LEVEL");
  const std::string level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "info") {
    spdlog::set_level(spdlog::level::info);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    throw Error(ErrorCode::kInvalidInput,
                "ADLOOP_LOG_LEVEL must be error, info or debug (got '" + level + "')");
  }
}

}  // namespace adloop
