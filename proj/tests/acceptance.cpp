// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on failure.
// Usage: acceptance [work_dir] [--only N]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include <spdlog/spdlog.h>

#include "adloop/grpo.hpp"
#include "adloop/harness.hpp"
#include "adloop/stage1.hpp"
#include "oracles.hpp"
#include "trace_gen.hpp"

using namespace adloop;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt_double(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

Outcome clustering_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1001);
  int mismatches = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const TokenGrid g = oracle::random_grid(rng, 8, 8);
    const std::size_t n = g.size();
    const std::size_t budget = std::uniform_int_distribution<std::size_t>(1, 24)(rng);
    std::size_t knn = 0;
    if (n > 1 && trial % 2 == 0) knn = std::uniform_int_distribution<std::size_t>(1, n - 1)(rng);
    const CompressionConfig cfg{budget, knn};
    const ClusterSet c = compress(g, cfg);
    const auto ref = oracle::brute_compress(g, budget, n > 1 ? cfg.resolved_knn(n) : 0);
    bool ok = c.centers == ref.centers && c.assignment == ref.assignment &&
              c.representatives.size() == ref.representatives.size();
    for (std::size_t j = 0; ok && j < c.representatives.size(); ++j) {
      for (std::size_t k = 0; k < g.dim(); ++k) {
        ok &= std::abs(c.representatives[j][k] - ref.representatives[j][k]) <= 1e-6;
      }
    }
    mismatches += ok ? 0 : 1;
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 10.0,
          "500 grids, " + std::to_string(mismatches) + " mismatches, " + fmt_double(secs) + " s"};
}

GroupRewards random_group(std::mt19937_64& rng, std::size_t half) {
  std::uniform_real_distribution<double> u(0.0, 2.5);
  std::bernoulli_distribution coin(0.5);
  GroupRewards g;
  g.v_plus.resize(half);
  g.v_minus.resize(half);
  for (std::size_t i = 0; i < 2 * half; ++i) g.r_intra.push_back(coin(rng) && i % 5 == 0 ? 1.0 : u(rng));
  if (coin(rng)) std::fill(g.r_intra.begin(), g.r_intra.end(), 0.75);
  const double plus = coin(rng) ? 1.0 : 0.0, minus = coin(rng) ? 1.0 : 0.0;
  for (std::size_t i = 0; i < 2 * half; ++i) g.r_inter.push_back(i < half ? plus : minus);
  return g;
}

bool normalized_ok(const std::vector<double>& v, bool degenerate) {
  if (degenerate) {
    for (double x : v) {
      if (x != 0.0) return false;
    }
    return true;
  }
  long double mean = 0, var = 0;
  for (double x : v) mean += x;
  mean /= v.size();
  for (double x : v) var += (x - mean) * (x - mean);
  var /= v.size();
  return std::abs(static_cast<double>(mean)) < 1e-6 && std::abs(std::sqrt(static_cast<double>(var)) - 1.0) < 1e-6;
}

Outcome advantage_normalization() {
  std::mt19937_64 rng(1002);
  int bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const GroupRewards g = random_group(rng, 1 + static_cast<std::size_t>(trial % 8));
    const AdvantageVector a = compute_advantages(g, 1.0, 1e-8);
    bad += normalized_ok(a.intra, a.intra_degenerate) && normalized_ok(a.inter, a.inter_degenerate) ? 0 : 1;
  }
  GroupRewards hand;
  hand.v_plus.resize(2);
  hand.v_minus.resize(2);
  hand.r_intra = {2, 0, 1, 1};
  hand.r_inter = {1, 1, 0, 0};
  const AdvantageVector h = compute_advantages(hand, 0.0, 1e-8);
  const std::vector<double> expect{1.4142, -1.4142, 0.0, 0.0};
  bool hand_ok = true;
  for (std::size_t i = 0; i < 4; ++i) hand_ok &= std::abs(h.advantage[i] - expect[i]) < 1e-4;
  return {bad == 0 && hand_ok, "1000 groups, " + std::to_string(bad) + " violations; hand case " +
                                   (hand_ok ? "ok" : "wrong")};
}

RewardBreakdown breakdown(double base, bool correct, bool used) {
  RewardBreakdown r;
  r.r_base = r.r_final = base;
  r.correct = correct;
  r.used_adloop = used;
  return r;
}

Outcome reward_algebra() {
  const auto worked = assemble_group("q", {breakdown(0.9, true, true), breakdown(0.5, true, true)},
                                     {breakdown(0.6, true, false), breakdown(0.4, true, false)}, 1.0, 0.2);
  const bool worked_ok = worked.v_plus[0].r_final == 1.0 && worked.v_plus[1].r_final == 0.5;

  // Dyadic rewards, margins and shifts keep every comparison exact.
  std::mt19937_64 rng(1003);
  std::uniform_int_distribution<int> eighths(0, 12), sixteenths(-40, 40);
  std::bernoulli_distribution coin(0.7);
  int bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t half = 1 + static_cast<std::size_t>(trial % 4);
    std::vector<RewardBreakdown> vp, vm;
    for (std::size_t i = 0; i < half; ++i) {
      vp.push_back(breakdown(eighths(rng) / 8.0, coin(rng), coin(rng)));
      vm.push_back(breakdown(eighths(rng) / 8.0, coin(rng), false));
    }
    const GroupRewards base = assemble_group("q", vp, vm, 1.0, 0.25);
    for (int s = 0; s < 100; ++s) {
      const double c = sixteenths(rng) / 16.0;
      auto sp = vp, sm = vm;
      for (auto& r : sp) r.r_base += c;
      for (auto& r : sm) r.r_base += c;
      const GroupRewards shifted = assemble_group("q", sp, sm, 1.0, 0.25);
      bool ok = shifted.r_inter == base.r_inter;
      for (std::size_t i = 0; i < half; ++i) ok &= shifted.v_plus[i].bonus == base.v_plus[i].bonus;
      bad += ok ? 0 : 1;
    }
  }
  return {worked_ok && bad == 0, std::string("worked case ") + (worked_ok ? "exact" : "wrong") +
                                     "; 1000x100 shifts, " + std::to_string(bad) + " violations"};
}

std::vector<std::size_t> coords_for(const PolicyParams& p, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, p.num_parameters() - 1);
  std::vector<std::size_t> out(n);
  for (auto& c : out) c = pick(rng);
  return out;
}

PolicyParams jitter(const PolicyParams& p, double scale, std::uint64_t seed) {
  PolicyParams q = p;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (std::size_t i = 0; i < q.num_parameters(); ++i) q.flat(i) += n(rng);
  return q;
}

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  const PolicyConfig pcfg;
  const StateEncoder enc;
  const PolicyParams p = PolicyParams::init(pcfg, 1004);
  Stage1Config s1;
  s1.budget_k = 4;

  const TaskInstance nav = make_navigation_instance("n", generate_map(4, 5, 4));
  const PolicyContext ctx = make_context(nav, pcfg, 4, 96);
  const TraceStream gold = render_trace(build_gold_trace(nav, s1, enc), trace_format_for(ctx));
  PolicyParams g1 = PolicyParams::zeros(pcfg);
  stage1_loss(p, gold, ctx, 1.0, &g1);
  const double e1 = oracle::fd_max_rel_error(
      [&](const PolicyParams& q) { return stage1_loss(q, gold, ctx, 1.0, nullptr).total; }, p, g1,
      coords_for(p, 150, 1));

  const GroupBatch batch = sample_groups(p, ctx, nav.id, 8, 1004);
  const GroupRewards rewards = score_group(batch, nav, ctx, enc, RewardConfig{});
  AdvantageVector adv = compute_advantages(rewards, 1.0, 1e-8);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  for (double& a : adv.advantage) a += normal(rng);
  const PolicyParams cur = jitter(p, 0.02, 2), ref = jitter(p, 0.02, 3);
  PolicyParams g2 = PolicyParams::zeros(pcfg);
  surrogate_loss(cur, ref, ctx, batch, adv, 0.5, 0.1, &g2);
  const double e2 = oracle::fd_max_rel_error(
      [&](const PolicyParams& q) { return surrogate_loss(q, ref, ctx, batch, adv, 0.5, 0.1, nullptr).loss; },
      cur, g2, coords_for(cur, 150, 2));

  const double secs = seconds_since(t0);
  return {e1 < 1e-4 && e2 < 1e-4 && secs < 60.0,
          "stage-1 max rel " + fmt_double(e1) + ", surrogate max rel " + fmt_double(e2) + ", " +
              fmt_double(secs) + " s"};
}

Outcome surrogate_contracts() {
  const PolicyConfig pcfg;
  const StateEncoder enc;
  const PolicyParams p = PolicyParams::init(pcfg, 1005);
  int bad_unit = 0, bad_kl = 0;
  for (std::uint64_t q = 0; q < 10; ++q) {
    const TaskInstance nav =
        make_navigation_instance("q" + std::to_string(q), generate_map(q, 5, 3 + static_cast<int>(q % 4)));
    const PolicyContext ctx = make_context(nav, pcfg, 4, 96);
    const GroupBatch batch = sample_groups(p, ctx, nav.id, 8, 1005);
    AdvantageVector adv;
    std::mt19937_64 rng(q);
    std::uniform_real_distribution<double> u(-2, 2);
    double sum = 0.0;
    for (int i = 0; i < 8; ++i) {
      adv.advantage.push_back(u(rng));
      sum += adv.advantage.back();
    }
    const SurrogateResult r = surrogate_loss(p, p, ctx, batch, adv, 0.5, 0.001, nullptr);
    bad_unit += r.surrogate == sum / 8.0 && r.clipped == 0 ? 0 : 1;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const ForwardResult f = forward_logprob(p, batch.at(i).stream, ctx, batch.at(i).mode);
      for (const StepLogProb& s : f.steps) bad_kl += kl_estimate(s.total(), s.total()) == 0.0 ? 0 : 1;
    }
    bad_kl += r.kl == 0.0 ? 0 : 1;
  }
  std::mt19937_64 rng(1005);
  std::uniform_real_distribution<double> u(-30.0, 5.0);
  int negative = 0;
  for (int i = 0; i < 100000; ++i) negative += kl_estimate(u(rng), u(rng)) >= 0.0 ? 0 : 1;
  return {bad_unit == 0 && bad_kl == 0 && negative == 0,
          "unit-ratio mismatches " + std::to_string(bad_unit) + ", identical-policy KL nonzero " +
              std::to_string(bad_kl) + ", negative KL " + std::to_string(negative) + "/100000"};
}

struct PipelineRun {
  PipelineResult result;
  double seconds = 0.0;
};

PipelineRun run_default_pipeline(const fs::path& dir) {
  fs::remove_all(dir);
  const auto t0 = Clock::now();
  RunConfig cfg;
  PipelineRun r{run_pipeline(cfg, dir.string()), 0.0};
  r.seconds = seconds_since(t0);
  return r;
}

Outcome end_to_end(const PipelineRun& run) {
  const EvalReport& s1 = run.result.stage1_report;
  const EvalReport& fin = run.result.final_report;
  const LevelStats* l3 = fin.level(3);
  const LevelStats* l6 = fin.level(6);
  if (!run.result.completed || l3 == nullptr || l6 == nullptr) return {false, "pipeline incomplete"};
  const bool a = fin.success_rate > s1.success_rate;
  const bool b = l6->vplus_usage_rate >= l3->vplus_usage_rate;
  std::ostringstream d;
  d << "(a) success " << s1.success_rate << " -> " << fin.success_rate << (a ? " ok" : " FAIL")
    << "; (b) V+ usage level3 " << l3->vplus_usage_rate << " level6 " << l6->vplus_usage_rate
    << (b ? " ok" : " FAIL") << "; per-level success " << l3->success_rate << "/" << l6->success_rate
    << "; " << run.seconds << " s";
  return {a && b && run.seconds < 1800.0, d.str()};
}

Outcome determinism(const fs::path& first, const fs::path& second) {
  std::size_t compared = 0, differing = 0;
  for (const auto& entry : fs::recursive_directory_iterator(first)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), first);
    ++compared;
    if (!fs::exists(second / rel) || slurp(entry.path()) != slurp(second / rel)) ++differing;
  }
  const bool has_core = fs::exists(first / "stage2" / "metrics.jsonl") &&
                        fs::exists(first / "stage2" / "checkpoint.adlp") &&
                        fs::exists(first / "stage1" / "checkpoint.adlp");
  return {has_core && differing == 0 && compared > 0,
          std::to_string(compared) + " files compared, " + std::to_string(differing) + " differ"};
}

Outcome format_suite() {
  std::mt19937_64 rng(1008);
  int round_trip_bad = 0, agree_bad = 0, mutation_bad = 0;
  for (int i = 0; i < 10000; ++i) {
    const TraceFormat f = gen::random_format(rng);
    const ThoughtTrace t = gen::random_trace(rng, f);
    const TraceStream s = render_trace(t, f);
    bool ok = false;
    try {
      ok = parse_trace(s, f) == t && render_trace(parse_trace(s, f), f) == s;
    } catch (const Error&) {
      ok = false;
    }
    round_trip_bad += ok ? 0 : 1;
    agree_bad += validate_format(s, f) == ok ? 0 : 1;
  }
  for (int i = 0; i < 1000; ++i) {
    const TraceFormat f = gen::random_format(rng);
    const gen::Mutation m = gen::mutate(rng, gen::random_trace(rng, f), f);
    bool parsed = true;
    ErrorCode code = ErrorCode::kInternal;
    try {
      parse_trace(m.stream, f);
    } catch (const Error& e) {
      parsed = false;
      code = e.code();
    }
    mutation_bad += !parsed && code == m.expected ? 0 : 1;
    agree_bad += validate_format(m.stream, f) == parsed ? 0 : 1;
  }
  return {round_trip_bad == 0 && mutation_bad == 0 && agree_bad == 0,
          "round-trip failures " + std::to_string(round_trip_bad) + "/10000, mutation misses " +
              std::to_string(mutation_bad) + "/1000, validate disagreements " + std::to_string(agree_bad)};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "adloop_acceptance";
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      work = arg;
    }
  }
  spdlog::set_level(spdlog::level::warn);

  int failures = 0;
  const auto report = [&](int id, const char* name, const std::function<Outcome()>& run) {
    if (only != 0 && only != id) return;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::printf("[%s] criterion %d: %s -- %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  };

  report(1, "clustering oracle equivalence", clustering_oracle);
  report(2, "advantage normalization", advantage_normalization);
  report(3, "reward algebra", reward_algebra);
  report(4, "gradient correctness", gradient_correctness);
  report(5, "surrogate and KL contracts", surrogate_contracts);

  std::optional<PipelineRun> first;
  report(6, "end-to-end learning", [&] {
    first = run_default_pipeline(work / "run_a");
    return end_to_end(*first);
  });
  report(7, "pipeline determinism", [&] {
    if (!first) first = run_default_pipeline(work / "run_a");
    run_default_pipeline(work / "run_b");
    return determinism(work / "run_a", work / "run_b");
  });
  report(8, "format suite", format_suite);

  return failures == 0 ? 0 : 1;
}
