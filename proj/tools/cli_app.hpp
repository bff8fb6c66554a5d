#pragma once

// Command implementations behind the `hts` executable. Kept in a header so
// tests can drive them in-process.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hts/hts.hpp"

namespace hts::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

inline void write_text(const fs::path& path, const std::string& text) { io::write_file_atomic(path, text); }

inline std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

inline void prepare_output_dir(const fs::path& dir, bool overwrite) {
  if (fs::exists(dir) && !fs::is_empty(dir) && !overwrite)
    throw ConfigError("output_dir: " + dir.string() + " already exists and is not empty (use --overwrite)");
  fs::create_directories(dir);
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  bool overwrite = false;
  bool resume = false;
};

inline int cmd_train(const TrainArgs& args, std::ostream& out) {
  RunConfig cfg = load_config(args.config);
  const fs::path dir = resolve_output_dir(cfg);
  const fs::path ckpt_path = dir / "checkpoint.bin", best_path = dir / "best.bin", log_path = dir / "train_log.jsonl";

  std::vector<std::string> log_lines;
  std::vector<double> losses;
  std::optional<Trainer> trainer;
  if (args.resume) {
    if (!fs::exists(ckpt_path)) throw ConfigError("--resume: no checkpoint at " + ckpt_path.string());
    Checkpoint ck = load_checkpoint(ckpt_path);
    if (to_text(ck.config) != to_text(cfg))
      throw ConfigError("--resume: " + args.config + " differs from the checkpoint's config snapshot");
    std::optional<Model> best;
    if (fs::exists(best_path)) best = load_checkpoint(best_path).model;
    // Keep only log records up to the checkpointed iteration.
    if (fs::exists(log_path)) {
      std::istringstream in(io::read_file(log_path));
      std::string line;
      while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        if (j.at("iteration").get<std::size_t>() > ck.state.iteration) break;
        if (j.contains("loss")) losses.push_back(j.at("loss").get<double>());
        log_lines.push_back(line);
      }
    }
    trainer.emplace(std::move(ck), load_datasets(cfg), std::move(best));
  } else {
    prepare_output_dir(dir, args.overwrite);
    trainer.emplace(cfg, load_datasets(cfg));
  }
  write_text(dir / "config.cfg", to_text(cfg));

  trainer->set_log_sink([&](const nlohmann::ordered_json& j) {
    log_lines.push_back(j.dump());
    if (j.contains("loss")) losses.push_back(j.at("loss").get<double>());
  });
  trainer->set_validation_hook([&](const Trainer& t, bool improved) {
    out << "episodes " << t.state().episodes << ": val " << log_lines.back() << "\n";
    if (improved) t.save_best(best_path);
    t.save(ckpt_path);
    write_text(log_path, join_lines(log_lines));
  });
  trainer->run();

  trainer->save(ckpt_path);
  if (!trainer->has_best() || !fs::exists(best_path)) trainer->save_best(best_path);
  write_text(log_path, join_lines(log_lines));
  io::write_image_atomic(dir / "loss.png", plot::loss_curve(losses));
  out << "trained " << trainer->state().episodes << " episodes; artifacts in " << dir.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- init

inline int cmd_init(const TrainArgs& args, std::ostream& out) {
  const RunConfig cfg = load_config(args.config);
  const fs::path dir = resolve_output_dir(cfg);
  prepare_output_dir(dir, args.overwrite);
  const Model model = init_model(cfg.model_config());
  TrainerState state;
  state.rng = Rng(derive_seed(cfg.train.seed, kTrainStream));
  Adam adam;
  save_checkpoint(dir / "checkpoint.bin", cfg, model, state, adam);
  write_text(dir / "config.cfg", to_text(cfg));
  out << "wrote untrained checkpoint to " << (dir / "checkpoint.bin").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::optional<std::size_t> episodes;
  std::optional<std::uint64_t> seed;
  std::string split = "test";
  std::string cross_domain;
  std::string encoder;
  std::string out;
};

// "synthetic:SEED", "noise:SEED" or a CSV manifest path.
inline Dataset load_target(const RunConfig& cfg, const std::string& target) {
  auto seed_of = [&](const std::string& prefix) {
    return config_detail::parse_uint("--cross-domain", target.substr(prefix.size()));
  };
  if (target.rfind("synthetic:", 0) == 0)
    return make_synthetic_dataset(cfg.data.synthetic_classes, cfg.data.synthetic_per_class,
                                  cfg.data.resolution, seed_of("synthetic:"));
  if (target.rfind("noise:", 0) == 0)
    return make_noise_dataset(std::max<std::size_t>(cfg.data.synthetic_classes, cfg.train.episode.n_way),
                              cfg.data.synthetic_per_class, cfg.data.resolution, seed_of("noise:"));
  if (!fs::exists(target)) throw ConfigError("--cross-domain: no such manifest " + target);
  return load_split(target, cfg.data.resolution);
}

inline Dataset split_of(const RunConfig& cfg, const std::string& split) {
  if (split != "train" && split != "val" && split != "test")
    throw ConfigError("--split: expected train, val or test, got '" + split + "'");
  Datasets d = load_datasets(cfg);
  return split == "train" ? std::move(d.train) : split == "val" ? std::move(d.val) : std::move(d.test);
}

inline int cmd_eval(const EvalArgs& args, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(args.checkpoint);
  const RunConfig& cfg = ck.config;
  if (!args.encoder.empty() && parse_architecture(args.encoder) != cfg.train.encoder)
    throw ConfigError("--encoder: checkpoint was trained with " + to_string(cfg.train.encoder) +
                      ", not " + args.encoder);
  const std::size_t episodes = args.episodes.value_or(cfg.test_episodes);
  const std::uint64_t seed = args.seed.value_or(cfg.test_seed);
  if (episodes < 1) throw ConfigError("--episodes: must be >= 1");

  MetricsReport report;
  if (!args.cross_domain.empty()) {
    report = cross_domain_evaluate(ck.model, train_split_name(cfg), load_target(cfg, args.cross_domain),
                                   cfg.train.episode, episodes, seed);
  } else {
    report = evaluate(ck.model, split_of(cfg, args.split), cfg.train.episode, episodes, seed);
    report.source = train_split_name(cfg);
    report.label = args.split;
  }
  report.config_snapshot = to_text(cfg);

  fs::path path = args.out;
  if (path.empty())
    path = fs::path(args.checkpoint).parent_path() /
           ("eval_" + report.target + "_" + std::to_string(episodes) + "_" + std::to_string(seed) + ".json");
  write_text(path, report.to_json().dump(2) + "\n");
  out << report.label << " " << report.target << ": " << report.summary() << " (" << episodes
      << " episodes) -> " << path.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- inspect

struct InspectArgs {
  std::string checkpoint;
  bool gates = false;
  std::size_t episodes = 3;
  std::uint64_t seed = 0;
  std::string split = "test";
  std::string out;
};

inline std::string gates_csv(const GateMatrix& g) {
  std::string csv = "root";
  for (const auto& label : g.child_labels) csv += "," + label;
  csv += "\n";
  char buf[32];
  for (std::size_t r = 0; r < g.values.size(); ++r) {
    csv += std::to_string(r);
    for (double v : g.values[r]) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      csv += buf;
    }
    csv += "\n";
  }
  return csv;
}

inline int cmd_inspect(const InspectArgs& args, std::ostream& out) {
  if (!args.gates) throw ConfigError("inspect: nothing to do (pass --gates)");
  const Checkpoint ck = load_checkpoint(args.checkpoint);
  if (ck.model.depth() == 0) throw ConfigError("inspect --gates: the checkpoint has no pretext tasks, so no children to inspect");
  const Dataset data = split_of(ck.config, args.split);
  const fs::path dir = args.out.empty() ? fs::path(args.checkpoint).parent_path() / "gates" : fs::path(args.out);
  for (std::size_t e = 0; e < args.episodes; ++e) {
    Rng rng(derive_seed(args.seed, e));
    const Episode ep = sample_episode(data, ck.config.train.episode, rng);
    const GateMatrix g = inspect_gates(ck.model, ep);
    const std::string stem = "gates_episode" + std::to_string(e);
    write_text(dir / (stem + ".csv"), gates_csv(g));
    io::write_image_atomic(dir / (stem + ".png"), plot::heatmap16(g.values));
  }
  out << "wrote " << args.episodes << " gate matrices to " << dir.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- report

inline int cmd_report(const std::string& dir, const std::string& out_path, std::ostream& out) {
  const auto entries = collect_reports(dir);
  if (entries.empty()) throw ConfigError("report: no evaluation reports under " + dir);
  const std::string table = render_comparison(entries);
  write_text(out_path.empty() ? fs::path(dir) / "comparison.md" : fs::path(out_path), table);
  out << table;
  return kExitOk;
}

// ---------------------------------------------------------------- entry

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Few-shot classification with pretext-task trees"};
  app.require_subcommand(1);
  app.footer("Config keys:\n" + config_help());

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "meta-train from a config file");
  train->add_option("config", train_args.config, "run config")->required();
  train->add_flag("--overwrite", train_args.overwrite, "reuse a non-empty output directory");
  train->add_flag("--resume", train_args.resume, "continue from the output directory's checkpoint");

  TrainArgs init_args;
  auto* init = app.add_subcommand("init", "write an untrained checkpoint for a config");
  init->add_option("config", init_args.config, "run config")->required();
  init->add_flag("--overwrite", init_args.overwrite, "reuse a non-empty output directory");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on test episodes");
  eval->add_option("checkpoint", eval_args.checkpoint, "checkpoint file")->required();
  eval->add_option("--episodes", eval_args.episodes, "number of episodes (default: test_episodes)");
  eval->add_option("--seed", eval_args.seed, "episode seed (default: test_seed)");
  eval->add_option("--split", eval_args.split, "train | val | test");
  eval->add_option("--cross-domain", eval_args.cross_domain, "manifest CSV, synthetic:SEED or noise:SEED");
  eval->add_option("--encoder", eval_args.encoder, "expected encoder architecture");
  eval->add_option("--out", eval_args.out, "report path");

  InspectArgs inspect_args;
  auto* inspect = app.add_subcommand("inspect", "dump forget-gate activations");
  inspect->add_option("checkpoint", inspect_args.checkpoint, "checkpoint file")->required();
  inspect->add_flag("--gates", inspect_args.gates, "write gate CSVs and heatmaps");
  inspect->add_option("--episodes", inspect_args.episodes, "episodes to inspect");
  inspect->add_option("--seed", inspect_args.seed, "episode seed");
  inspect->add_option("--split", inspect_args.split, "train | val | test");
  inspect->add_option("--out", inspect_args.out, "output directory");

  std::string report_dir, report_out;
  auto* report = app.add_subcommand("report", "tabulate evaluation reports");
  report->add_option("dir", report_dir, "directory searched for report JSON files")->required();
  report->add_option("--out", report_out, "table path (default: <dir>/comparison.md)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (*train) return cmd_train(train_args, out);
    if (*init) return cmd_init(init_args, out);
    if (*eval) return cmd_eval(eval_args, out);
    if (*inspect) return cmd_inspect(inspect_args, out);
    if (*report) return cmd_report(report_dir, report_out, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace hts::cli
