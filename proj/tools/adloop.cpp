// Command-line front end for data generation, compression, both training
// stages, evaluation, plot export and the full pipeline.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "adloop/checkpoint.hpp"
#include "adloop/error.hpp"
#include "adloop/harness.hpp"
#include "adloop/latent_thoughts.hpp"

namespace {

adloop::RunConfig config_or_default(const std::string& path) {
  return path.empty() ? adloop::RunConfig{} : adloop::load_config(path);
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw adloop::Error(adloop::ErrorCode::kIo, "cannot write " + path);
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adloop: adaptive interleaved latent visual reasoning at desk scale"};
  app.require_subcommand(1);

  std::string config, data, out, init, in, checkpoint, mode = "adaptive", metrics;
  std::size_t k = 16, knn = 0;
  std::optional<int> stop_after, count, size;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> family;
  std::vector<int> levels;

  auto* gen = app.add_subcommand("gen-data", "Generate a task dataset");
  gen->add_option("--config", config, "key=value run config");
  gen->add_option("--family", family, "nav | draft");
  gen->add_option("--n", count, "Number of instances");
  gen->add_option("--size", size, "Board edge length");
  gen->add_option("--level", levels, "Level(s), cycled over the instances")->delimiter(',');
  gen->add_option("--seed", seed, "Root seed");
  gen->add_option("--out", out, "Output directory")->required();

  auto* initp = app.add_subcommand("init-policy", "Write a freshly initialised policy");
  initp->add_option("--config", config, "key=value run config");
  initp->add_option("--seed", seed, "Root seed");
  initp->add_option("--out", out, "Checkpoint path")->required();

  auto* comp = app.add_subcommand("compress", "Density-peaks compression of a token grid");
  comp->add_option("--in", in, "TGRID v1 file")->required();
  comp->add_option("--k", k, "Representative budget");
  comp->add_option("--knn", knn, "Density neighbour count (0 = min(8, N-1))");
  comp->add_option("--out", out, "Output file (stdout when omitted)");

  auto* s1 = app.add_subcommand("train-stage1", "Supervised training on gold traces");
  s1->add_option("--config", config, "key=value run config");
  s1->add_option("--data", data, "Dataset directory")->required();
  s1->add_option("--init", init, "Initial policy checkpoint (fresh init when omitted)");
  s1->add_option("--out", out, "Output directory")->required();

  auto* s2 = app.add_subcommand("train-stage2", "Two-group policy optimisation");
  s2->add_option("--config", config, "key=value run config");
  s2->add_option("--data", data, "Dataset directory")->required();
  s2->add_option("--init", init, "Stage-1 checkpoint")->required();
  s2->add_option("--out", out, "Output directory")->required();
  s2->add_option("--stop-after", stop_after, "Halt after this many updates");

  auto* ev = app.add_subcommand("evaluate", "Greedy evaluation of a checkpoint");
  ev->add_option("--config", config, "key=value run config");
  ev->add_option("--checkpoint", checkpoint, "Policy checkpoint")->required();
  ev->add_option("--data", data, "Dataset directory")->required();
  ev->add_option("--mode", mode, "forced_vplus | forced_vminus | adaptive");
  ev->add_option("--out", out, "Report path (stdout when omitted)");

  auto* plots = app.add_subcommand("emit-plots", "Export metrics series as CSV");
  plots->add_option("--metrics", metrics, "metrics.jsonl")->required();
  plots->add_option("--out", out, "Output directory")->required();

  auto* pipe = app.add_subcommand("run-pipeline", "gen-data, init, stage 1, stage 2, evaluate");
  pipe->add_option("--config", config, "key=value run config");
  pipe->add_option("--out", out, "Run directory")->required();

  gen->get_option("--family")->check(CLI::IsMember({"nav", "draft"}));

  CLI11_PARSE(app, argc, argv);

  try {
    adloop::configure_logging();
    if (gen->parsed()) {
      auto cfg = config_or_default(config);
      if (family) cfg.data.family = *family == "draft" ? adloop::TaskFamily::kDrafting
                                                      : adloop::TaskFamily::kNavigation;
      if (count) cfg.data.count = *count;
      if (size) cfg.data.size = *size;
      if (!levels.empty()) cfg.data.levels = levels;
      if (seed) cfg.seed = *seed;
      const auto encoder = cfg.encoder();
      adloop::save_dataset(out, adloop::generate_dataset(cfg.dataset_spec(), encoder));
    } else if (initp->parsed()) {
      auto cfg = config_or_default(config);
      if (seed) cfg.seed = *seed;
      adloop::save_policy(out, adloop::PolicyParams::init(cfg.policy, cfg.init_seed()));
    } else if (comp->parsed()) {
      const auto grid = adloop::load_token_grid(in);
      const auto clusters = adloop::compress(grid, adloop::CompressionConfig{k, knn});
      if (out.empty()) {
        adloop::write_cluster_set(std::cout, clusters);
      } else {
        std::ofstream f(out);
        adloop::write_cluster_set(f, clusters);
      }
    } else if (s1->parsed()) {
      const auto cfg = config_or_default(config);
      const auto encoder = cfg.encoder();
      const auto dataset = adloop::load_dataset(data, encoder);
      const auto start = init.empty() ? adloop::PolicyParams::init(cfg.policy, cfg.init_seed())
                                      : adloop::load_policy(init, cfg.policy.sigma);
      adloop::train_stage1(cfg.stage1_config(), dataset, start, encoder, out);
    } else if (s2->parsed()) {
      const auto cfg = config_or_default(config);
      const auto encoder = cfg.encoder();
      const auto dataset = adloop::load_dataset(data, encoder);
      adloop::Stage2Options opts;
      opts.stop_after = stop_after;
      adloop::train_stage2(cfg.stage2_config(), dataset,
                           adloop::load_policy(init, cfg.policy.sigma), encoder, out, opts);
    } else if (ev->parsed()) {
      const auto cfg = config_or_default(config);
      const auto dataset = adloop::load_dataset(data, cfg.encoder());
      const auto report =
          adloop::evaluate(checkpoint, dataset, adloop::parse_eval_mode(mode), cfg);
      const std::string json = adloop::eval_report_json(report);
      if (out.empty()) {
        std::cout << json;
      } else {
        write_file(out, json);
      }
    } else if (plots->parsed()) {
      for (const auto& path : adloop::emit_plots(metrics, out)) spdlog::info("wrote {}", path);
    } else if (pipe->parsed()) {
      const auto result = adloop::run_pipeline(config_or_default(config), out);
      std::cout << adloop::eval_report_json(result.final_report);
    }
  } catch (const adloop::Error& e) {
    spdlog::error("{} ({})", e.what(), adloop::to_string(e.code()));
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
