#include <gtest/gtest.h>

#include <numeric>

#include "support/testing.hpp"

using namespace hts;
using namespace hts::testing;
using nlohmann::ordered_json;

namespace {

RunConfig small_config(ObjectiveMode mode = ObjectiveMode::baseline, std::vector<std::string> tasks = {}) {
  RunConfig c;
  c.data.resolution = 8;
  c.train.embedding_dim = 16;
  c.train.mlp_hidden = 16;
  c.train.episode = {5, 1, 5, 0};
  c.train.mode = mode;
  c.train.pretext_tasks = std::move(tasks);
  c.train.episodes_total = 80;
  c.train.val_every = 40;
  c.train.val_episodes = 10;
  c.train.seed = 3;
  validate(c);
  return c;
}

std::vector<double> losses_of(const std::vector<ordered_json>& log) {
  std::vector<double> out;
  for (const auto& rec : log)
    if (rec.contains("loss")) out.push_back(rec["loss"].get<double>());
  return out;
}

struct Recorded {
  std::vector<ordered_json> log;
  std::string checkpoint;
  std::uint64_t best_fingerprint = 0;
};

Recorded run_recorded(const RunConfig& cfg) {
  Trainer trainer(cfg, load_datasets(cfg));
  Recorded r;
  trainer.set_log_sink([&](const ordered_json& rec) { r.log.push_back(rec); });
  trainer.run();
  r.checkpoint = trainer.checkpoint_bytes();
  r.best_fingerprint = trainer.best().fingerprint();
  return r;
}

}  // namespace

TEST(Trainer, BaselineLossDropsBetweenTheFirstTwoHundredEpisodeWindows) {
  RunConfig cfg;  // synthetic 5-way 1-shot at the shipped defaults
  cfg.train.episodes_total = 200;
  cfg.train.val_every = 0;
  Trainer trainer(cfg, load_datasets(cfg));
  std::vector<double> losses;
  trainer.set_log_sink([&](const ordered_json& rec) { losses.push_back(rec["loss"].get<double>()); });
  trainer.run();
  ASSERT_EQ(losses.size(), 50u);  // batches of four episodes
  const double first = std::accumulate(losses.begin(), losses.begin() + 25, 0.0) / 25.0;
  const double second = std::accumulate(losses.begin() + 25, losses.end(), 0.0) / 25.0;
  EXPECT_LT(second, first);
}

TEST(Trainer, SameSeedGivesIdenticalLogsAndCheckpoints) {
  const RunConfig cfg = small_config(ObjectiveMode::hts_ssl, {"rotation2"});
  const Recorded a = run_recorded(cfg), b = run_recorded(cfg);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].dump(), b.log[i].dump());
  EXPECT_EQ(a.checkpoint, b.checkpoint);
  EXPECT_EQ(a.best_fingerprint, b.best_fingerprint);
  RunConfig other = cfg;
  other.train.seed = 4;
  EXPECT_NE(run_recorded(other).checkpoint, a.checkpoint);
}

TEST(Trainer, ValidationRunsAtEachBoundaryAndKeepsTheBest) {
  const RunConfig cfg = small_config();
  Trainer trainer(cfg, load_datasets(cfg));
  std::vector<std::pair<std::size_t, bool>> calls;
  trainer.set_validation_hook([&](const Trainer& t, bool improved) { calls.emplace_back(t.state().episodes, improved); });
  EXPECT_FALSE(trainer.has_best());
  trainer.run();
  ASSERT_EQ(calls.size(), 2u);
  EXPECT_EQ(calls[0], (std::pair<std::size_t, bool>{40, true}));
  EXPECT_EQ(calls[1].first, 80u);
  EXPECT_TRUE(trainer.has_best());
  EXPECT_GE(trainer.state().best_val, 0.0);
  EXPECT_NEAR(trainer.best().fingerprint() == trainer.model().fingerprint() ? 1.0 : 0.0,
              calls[1].second ? 1.0 : 0.0, 0.0);
}

TEST(Trainer, ResumedRunFollowsTheUninterruptedTrajectory) {
  const RunConfig cfg = small_config(ObjectiveMode::hts_ssl, {"rotation2"});
  const Recorded full = run_recorded(cfg);

  const Datasets data = load_datasets(cfg);
  std::vector<ordered_json> log;
  std::string midway, midway_best;
  {
    Trainer first(cfg, data);
    first.set_log_sink([&](const ordered_json& rec) { log.push_back(rec); });
    first.run(40);
    midway = first.checkpoint_bytes();
    midway_best = serialize_checkpoint(first.config(), first.best(), first.state(), first.optimizer());
  }
  Checkpoint ck = parse_checkpoint(midway);
  EXPECT_EQ(ck.state.episodes, 40u);
  Trainer second(std::move(ck), data, parse_checkpoint(midway_best).model);
  second.set_log_sink([&](const ordered_json& rec) { log.push_back(rec); });
  second.run();

  EXPECT_EQ(second.checkpoint_bytes(), full.checkpoint);
  EXPECT_EQ(second.best().fingerprint(), full.best_fingerprint);
  ASSERT_EQ(log.size(), full.log.size());
  for (std::size_t i = 0; i < log.size(); ++i) EXPECT_EQ(log[i].dump(), full.log[i].dump());
}

TEST(Trainer, CheckpointFileRoundTripsEveryTensor) {
  const RunConfig cfg = small_config(ObjectiveMode::ssl, {"color_perm2"});
  Trainer trainer(cfg, load_datasets(cfg));
  trainer.run(8);
  const auto path = scratch_dir("trainer_ckpt") / "ck.bin";
  trainer.save(path);
  const Checkpoint ck = load_checkpoint(path);
  EXPECT_EQ(ck.model.fingerprint(), trainer.model().fingerprint());
  EXPECT_EQ(to_text(ck.config), to_text(cfg));
  EXPECT_EQ(ck.state.iteration, 2u);
  EXPECT_EQ(serialize_checkpoint(ck.config, ck.model, ck.state, ck.optimizer), trainer.checkpoint_bytes());
}

TEST(Trainer, CorruptCheckpointsAreDataErrors) {
  const RunConfig cfg = small_config();
  Trainer trainer(cfg, load_datasets(cfg));
  const std::string bytes = trainer.checkpoint_bytes();
  EXPECT_THROW(parse_checkpoint("not a checkpoint"), DataError);
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 8)), DataError);
  EXPECT_THROW(load_checkpoint(scratch_dir("missing_ckpt") / "none.bin"), DataError);
}

TEST(Trainer, HtsDaLeavesSslHeadsUntouched) {
  const RunConfig cfg = small_config(ObjectiveMode::hts_da, {"rotation2"});
  Trainer trainer(cfg, load_datasets(cfg));
  const auto ssl = trainer.model().ssl.store.fingerprint();
  const auto agg = trainer.model().aggregator.store.fingerprint();
  const auto enc = trainer.model().encoder.store.fingerprint();
  trainer.run(12);
  EXPECT_EQ(trainer.model().ssl.store.fingerprint(), ssl);
  EXPECT_NE(trainer.model().aggregator.store.fingerprint(), agg);
  EXPECT_NE(trainer.model().encoder.store.fingerprint(), enc);

  const RunConfig base_cfg = small_config();
  Trainer base(base_cfg, load_datasets(base_cfg));
  const auto base_agg = base.model().aggregator.store.fingerprint();
  base.run(12);
  EXPECT_EQ(base.model().aggregator.store.fingerprint(), base_agg);
}

TEST(Trainer, HtsDaWithoutTasksReproducesBaselineLosses) {
  RunConfig base = small_config(), hts = small_config(ObjectiveMode::hts_da);
  base.train.val_every = hts.train.val_every = 0;
  const auto a = losses_of(run_recorded(base).log), b = losses_of(run_recorded(hts).log);
  ASSERT_EQ(a.size(), 20u);
  EXPECT_EQ(a, b);
}

TEST(Trainer, NonFiniteLossAbortsNamingTheIteration) {
  const RunConfig cfg = small_config();
  Trainer trainer(cfg, load_datasets(cfg));
  trainer.run(8);
  trainer.model().encoder.store.param("fc1.bias").mutable_data()[0] = std::nan("");
  try {
    trainer.step();
    FAIL() << "expected RuntimeFault";
  } catch (const RuntimeFault& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 3"), std::string::npos) << e.what();
  }
}

TEST(Trainer, LearningRateDecaysStepwise) {
  TrainConfig t;
  EXPECT_DOUBLE_EQ(learning_rate_at(t, 0), 1e-3);
  EXPECT_DOUBLE_EQ(learning_rate_at(t, 14999), 1e-3);
  EXPECT_DOUBLE_EQ(learning_rate_at(t, 15000), 1e-4);
  EXPECT_NEAR(learning_rate_at(t, 45000), 1e-6, 1e-20);
  t.lr_decay_every = 0;
  EXPECT_DOUBLE_EQ(learning_rate_at(t, 1000000), 1e-3);

  RunConfig cfg = small_config();
  cfg.train.lr_decay_every = 8;
  cfg.train.val_every = 0;
  const auto rec = run_recorded(cfg);
  EXPECT_DOUBLE_EQ(rec.log[0]["lr"].get<double>(), 1e-3);
  EXPECT_DOUBLE_EQ(rec.log[1]["lr"].get<double>(), 1e-3);
  EXPECT_NEAR(rec.log[2]["lr"].get<double>(), 1e-4, 1e-18);
  EXPECT_NEAR(rec.log[4]["lr"].get<double>(), 1e-5, 1e-18);
}

// ---------------------------------------------------------------- config

TEST(Config, ParsesKeysCommentsAndListsAndRoundTrips) {
  const RunConfig c = parse_config(
      "# comment\n"
      "n_way = 3\n"
      "k_shot=2\n"
      "  pretext_tasks = rotation3, color_perm2\n"
      "mode = hts-ssl\n"
      "beta = 0.1, 0.25\n"
      "encoder = conv4\n"
      "classifier = gnn\n"
      "\n"
      "learning_rate = 5e-4\n");
  EXPECT_EQ(c.train.episode.n_way, 3u);
  EXPECT_EQ(c.train.episode.k_shot, 2u);
  EXPECT_EQ(c.train.pretext_tasks, (std::vector<std::string>{"rotation3", "color_perm2"}));
  EXPECT_EQ(c.train.mode, ObjectiveMode::hts_ssl);
  EXPECT_EQ(c.train.task_beta(), (std::vector<double>{0.1, 0.25}));
  EXPECT_EQ(c.train.encoder, Architecture::conv4);
  EXPECT_EQ(c.train.classifier, ClassifierKind::gnn);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 5e-4);
  EXPECT_EQ(to_text(parse_config(to_text(c))), to_text(c));
  EXPECT_EQ(parse_config("pretext_tasks = rotation2, rotation3\n").train.task_beta(),
            (std::vector<double>{0.1, 0.1}));
}

TEST(Config, ErrorsNameTheOffendingKey) {
  auto message = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("<no error>");
  };
  EXPECT_EQ(message("colour = red\n").rfind("colour", 0), 0u);
  EXPECT_EQ(message("n_way = 5\nn_way = 3\n").rfind("n_way", 0), 0u);
  EXPECT_EQ(message("n_way = five\n").rfind("n_way", 0), 0u);
  EXPECT_EQ(message("n_way = 0\n").rfind("n_way", 0), 0u);
  EXPECT_EQ(message("mode = fancy\n").find("fancy") != std::string::npos, true);
  EXPECT_EQ(message("pretext_tasks = rotation9\n").find("rotation9") != std::string::npos, true);
  EXPECT_EQ(message("pretext_tasks = rotation2, rotation3\nbeta = 0.1, 0.2, 0.3\n").rfind("beta", 0), 0u);
  EXPECT_EQ(message("mode = ssl\n").rfind("pretext_tasks", 0), 0u);
  EXPECT_EQ(message("learning_rate = -1\n").rfind("learning_rate", 0), 0u);
  EXPECT_EQ(message("just words\n").rfind("line 1", 0), 0u);
  EXPECT_EQ(message("dataset = csv\ntrain_manifest = a.csv\nval_manifest = b.csv\n").rfind("test_manifest", 0), 0u);
}

TEST(Config, MissingManifestFileIsAConfigErrorNamingTheKey) {
  const auto dir = scratch_dir("config_manifests");
  const RunConfig c = parse_config("dataset = csv\ntrain_manifest = " + (dir / "t.csv").string() +
                                   "\nval_manifest = v.csv\ntest_manifest = x.csv\n");
  try {
    load_datasets(c);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("train_manifest", 0), 0u);
  }
}

TEST(Config, ShippedPresetsParse) {
  const std::filesystem::path configs = std::filesystem::path(HTS_SOURCE_DIR) / "configs";
  std::size_t count = 0;
  for (const auto& entry : std::filesystem::directory_iterator(configs)) {
    if (entry.path().extension() != ".cfg") continue;
    EXPECT_NO_THROW(load_config(entry.path())) << entry.path();
    ++count;
  }
  EXPECT_GE(count, 6u);
  const RunConfig mini = load_config(configs / "miniimagenet-conv4-1shot-hts-ssl.cfg");
  EXPECT_EQ(mini.train.episodes_total, 60000u);
  EXPECT_EQ(mini.train.episodes_per_batch, 4u);
  EXPECT_EQ(mini.data.resolution, 84u);
}
