#include <gtest/gtest.h>

#include <fstream>

#include "support/testing.hpp"

using namespace hts;
using namespace hts::testing;

namespace {

ModelConfig small_model(ObjectiveMode mode, std::vector<std::string> tasks, std::size_t res = 8) {
  ModelConfig c;
  c.input_shape = {res, res, 3};
  c.mode = mode;
  c.beta.assign(tasks.size(), 0.1);
  c.pretext_tasks = std::move(tasks);
  c.encoder.embedding_dim = 12;
  c.encoder.mlp_hidden = 12;
  c.seed = 5;
  return c;
}

// Every class is several copies of one random image.
Dataset duplicated_classes(std::size_t classes, std::size_t copies, std::size_t res, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LabeledImage> items;
  for (std::size_t c = 0; c < classes; ++c) {
    const Image img = random_image(res, res, rng);
    for (std::size_t i = 0; i < copies; ++i) items.push_back({img, static_cast<int>(c)});
  }
  return Dataset("duplicates", res, items);
}

Dataset solid_classes(std::size_t classes, std::size_t per_class, std::size_t res) {
  std::vector<LabeledImage> items;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      Image img(res, res, 3);
      for (std::size_t p = 0; p < res * res; ++p)
        for (std::size_t ch = 0; ch < 3; ++ch)
          img.pixels[p * 3 + ch] = 0.1 + 0.15 * static_cast<double>(c) + 0.02 * static_cast<double>(i) + 0.05 * ch;
      items.push_back({img, static_cast<int>(c)});
    }
  return Dataset("solid", res, items);
}

RunConfig snapshot(ClassifierKind kind, ObjectiveMode mode) {
  RunConfig c;
  c.train.classifier = kind;
  c.train.mode = mode;
  if (mode != ObjectiveMode::baseline && mode != ObjectiveMode::hts_da) c.train.pretext_tasks = {"rotation3"};
  return c;
}

MetricsReport fake_report(const std::string& target, std::size_t k, std::vector<double> accs,
                          ClassifierKind kind, ObjectiveMode mode) {
  MetricsReport r;
  r.target = r.source = target;
  r.spec = {5, k, 15, 0};
  r.accuracies = std::move(accs);
  r.finalize();
  r.config_snapshot = to_text(snapshot(kind, mode));
  return r;
}

}  // namespace

// ---------------------------------------------------------------- metrics

TEST(Metrics, CiMatchesDirectFormula) {
  Rng rng(0);
  std::vector<double> v(137);
  for (double& x : v) x = rng.uniform();
  double mean = 0.0;
  for (double x : v) mean += x / 137.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  EXPECT_NEAR(ci95(v), 1.96 * std::sqrt(ss / 137.0) / std::sqrt(137.0), 1e-12);
  EXPECT_EQ(ci95({}), 0.0);
  EXPECT_NEAR(ci95({0.0, 1.0}), 1.96 * 0.5 / std::sqrt(2.0), 1e-15);
}

TEST(Metrics, ConstantAccuracyHasZeroInterval) {
  MetricsReport r;
  r.accuracies.assign(100, 0.8);
  r.finalize();
  EXPECT_NEAR(r.mean_accuracy, 80.0, 1e-12);
  EXPECT_NEAR(r.ci95, 0.0, 1e-12);
  EXPECT_EQ(r.summary(), "80.00 \xC2\xB1 0.00");
}

TEST(Metrics, JsonRoundTrip) {
  const MetricsReport r = fake_report("synthetic-2", 1, {0.2, 0.6, 1.0}, ClassifierKind::gnn, ObjectiveMode::ssl);
  const MetricsReport back = MetricsReport::from_json(nlohmann::json::parse(r.to_json().dump()));
  EXPECT_EQ(back.accuracies, r.accuracies);
  EXPECT_EQ(back.mean_accuracy, r.mean_accuracy);
  EXPECT_EQ(back.ci95, r.ci95);
  EXPECT_EQ(back.config_snapshot, r.config_snapshot);
  EXPECT_EQ(back.spec.k_shot, 1u);
}

// ---------------------------------------------------------------- predict

TEST(PredictQuery, WithoutTasksIsNearestRawPrototype) {
  const Model model = init_model(small_model(ObjectiveMode::hts_ssl, {}));
  const Dataset d = make_synthetic_dataset(6, 10, 8, 1);
  Rng rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    const Episode ep = sample_episode(d, {5, 2, 3, 0}, rng);
    std::vector<Image> s, q;
    for (const auto& it : ep.support) s.push_back(it.image);
    for (const auto& it : ep.query) q.push_back(it.image);
    const Matrix protos = prototypes_oracle(to_matrix(encode_eval(model.encoder, stack_images(s))),
                                            ep.support_labels(), 5);
    const Matrix neg = neg_sqdist_oracle(to_matrix(encode_eval(model.encoder, stack_images(q))), protos);
    const auto predicted = predict_query(model, ep);
    for (std::size_t i = 0; i < q.size(); ++i) {
      const auto best = std::max_element(neg[i].begin(), neg[i].end()) - neg[i].begin();
      EXPECT_EQ(predicted[i], ep.classes[best]);
    }
  }
}

TEST(PredictQuery, QueryEqualToASupportImageGetsThatClass) {
  const Model model = init_model(small_model(ObjectiveMode::hts_ssl, {"rotation3", "color_perm2"}));
  const Dataset d = make_noise_dataset(5, 4, 8, 2);
  Rng rng(2);
  Episode ep = sample_episode(d, {5, 1, 1, 0}, rng);
  for (std::size_t i = 0; i < 5; ++i) ep.query[i].image = ep.support[i].image;
  const auto predicted = predict_query(model, ep);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(predicted[i], ep.classes[i]);
}

TEST(PredictQuery, OneLabelPerQueryFromTheEpisodeAndDeterministic) {
  const Model model = init_model(small_model(ObjectiveMode::hts_da, {"rotation2"}));
  const Dataset d = make_synthetic_dataset(8, 20, 8, 3);
  Rng rng(3);
  const Episode ep = sample_episode(d, {5, 1, 15, 0}, rng);
  const auto a = predict_query(model, ep);
  ASSERT_EQ(a.size(), 75u);
  for (int y : a) EXPECT_NE(std::find(ep.classes.begin(), ep.classes.end(), y), ep.classes.end());
  EXPECT_EQ(predict_query(model, ep), a);
}

TEST(PredictQuery, GnnWayMismatchIsAnError) {
  ModelConfig c = small_model(ObjectiveMode::baseline, {});
  c.classifier = ClassifierKind::gnn;
  const Model model = init_model(c);
  Rng rng(4);
  const Episode ep = sample_episode(make_synthetic_dataset(5, 5, 8, 0), {3, 1, 1, 0}, rng);
  EXPECT_THROW(predict_query(model, ep), ShapeError);
}

// ---------------------------------------------------------------- evaluate

TEST(Evaluate, DuplicatedSingleImageClassesScorePerfectly) {
  const Model model = init_model(small_model(ObjectiveMode::hts_ssl, {"rotation3"}));
  const MetricsReport r = evaluate(model, duplicated_classes(6, 4, 8, 5), {5, 1, 3, 0}, 30, 0);
  EXPECT_EQ(r.episodes(), 30u);
  EXPECT_DOUBLE_EQ(r.mean_accuracy, 100.0);
  EXPECT_DOUBLE_EQ(r.ci95, 0.0);
}

TEST(Evaluate, UntrainedModelOnNoiseIsNearChance) {
  const Model model = init_model(small_model(ObjectiveMode::baseline, {}));
  const MetricsReport r = evaluate(model, make_noise_dataset(10, 20, 8, 6), {5, 1, 15, 0}, 300, 6);
  EXPECT_LT(std::abs(r.mean_accuracy - 20.0), 3.0 * r.ci95) << r.summary();
}

TEST(Evaluate, DeterministicAndReadOnly) {
  const Model model = init_model(small_model(ObjectiveMode::hts_ssl, {"rotation2"}));
  const auto before = model.fingerprint();
  const Dataset d = make_synthetic_dataset(6, 20, 8, 7);
  const MetricsReport a = evaluate(model, d, {5, 1, 5, 0}, 20, 9), b = evaluate(model, d, {5, 1, 5, 0}, 20, 9);
  EXPECT_EQ(a.accuracies, b.accuracies);
  EXPECT_EQ(model.fingerprint(), before);
  EXPECT_NE(evaluate(model, d, {5, 1, 5, 0}, 20, 10).accuracies, a.accuracies);
}

TEST(Evaluate, TooFewClassesIsADataError) {
  const Model model = init_model(small_model(ObjectiveMode::baseline, {}));
  EXPECT_THROW(evaluate(model, make_synthetic_dataset(3, 5, 8, 0), {5, 1, 1, 0}, 1, 0), DataError);
}

TEST(CrossDomain, SameDatasetMatchesEvaluateAndTargetsAreIndependent) {
  const Model model = init_model(small_model(ObjectiveMode::hts_da, {"rotation3"}));
  const Dataset src = make_synthetic_dataset(6, 10, 8, 11), other = make_noise_dataset(6, 10, 8, 12);
  const EpisodeSpec spec{5, 1, 3, 0};
  const MetricsReport plain = evaluate(model, src, spec, 15, 4);
  const MetricsReport same = cross_domain_evaluate(model, src.name(), src, spec, 15, 4);
  EXPECT_EQ(same.accuracies, plain.accuracies);
  EXPECT_EQ(same.mean_accuracy, plain.mean_accuracy);
  EXPECT_EQ(same.label, "synthetic-11->synthetic-11");
  const MetricsReport foreign = cross_domain_evaluate(model, src.name(), other, spec, 15, 4);
  EXPECT_EQ(foreign.target, "noise-12");
  EXPECT_EQ(cross_domain_evaluate(model, src.name(), src, spec, 15, 4).accuracies, plain.accuracies);
  EXPECT_THROW(cross_domain_evaluate(model, src.name(), make_synthetic_dataset(6, 10, 16, 0), spec, 1, 0),
               ShapeError);
}

// ---------------------------------------------------------------- gates

TEST(Gates, ShapeRangeAndLabels) {
  const Model model = init_model(small_model(ObjectiveMode::hts_ssl, {"rotation3", "color_perm2"}));
  Rng rng(13);
  const Episode ep = sample_episode(make_synthetic_dataset(5, 10, 8, 13), {5, 1, 2, 0}, rng);
  const GateMatrix g = inspect_gates(model, ep);
  ASSERT_EQ(g.values.size(), 15u);
  EXPECT_EQ(g.child_labels, (std::vector<std::string>{"rotation3:90", "rotation3:180", "rotation3:270"}));
  for (const auto& row : g.values) {
    ASSERT_EQ(row.size(), 3u);
    for (double v : row) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(Gates, IdenticalChildFeaturesGiveEqualMeans) {
  // Solid-color images are unchanged by rotation, so all children coincide.
  const Model model = init_model(small_model(ObjectiveMode::hts_ssl, {"rotation3"}));
  Rng rng(14);
  const Episode ep = sample_episode(solid_classes(5, 3, 8), {5, 1, 1, 0}, rng);
  const GateMatrix g = inspect_gates(model, ep);
  for (const auto& row : g.values)
    for (double v : row) EXPECT_EQ(v, row.front());
}

TEST(Gates, NoTasksMeansNothingToInspect) {
  const Model model = init_model(small_model(ObjectiveMode::hts_ssl, {}));
  Rng rng(15);
  const Episode ep = sample_episode(make_synthetic_dataset(5, 5, 8, 0), {5, 1, 1, 0}, rng);
  try {
    inspect_gates(model, ep);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("no children to inspect"), std::string::npos);
  }
}

// ---------------------------------------------------------------- report

TEST(Report, ComparisonTableHasDeltasAgainstBaseline) {
  const auto dir = scratch_dir("report_table");
  auto write = [&](const std::string& name, const MetricsReport& r) {
    std::ofstream(dir / name) << r.to_json().dump(2);
  };
  write("a.json", fake_report("synthetic-2", 1, {0.5, 0.5}, ClassifierKind::protonet, ObjectiveMode::baseline));
  write("b.json", fake_report("synthetic-2", 1, {0.75, 0.75}, ClassifierKind::protonet, ObjectiveMode::hts_ssl));
  write("c.json", fake_report("synthetic-2", 5, {0.9, 0.9}, ClassifierKind::protonet, ObjectiveMode::baseline));
  std::ofstream(dir / "not_a_report.json") << "{\"hello\": 1}";
  std::ofstream(dir / "notes.txt") << "ignored";

  const auto entries = collect_reports(dir);
  ASSERT_EQ(entries.size(), 3u);
  const std::string table = render_comparison(entries);
  EXPECT_NE(table.find("| classifier | objective | synthetic-2 1-shot | synthetic-2 5-shot |"), std::string::npos)
      << table;
  EXPECT_NE(table.find("| protonet | baseline | 50.00 \xC2\xB1 0.00 | 90.00 \xC2\xB1 0.00 |"), std::string::npos)
      << table;
  EXPECT_NE(table.find("| protonet | +HTS_SSL | 75.00 \xC2\xB1 0.00 (+25.00) | - |"), std::string::npos) << table;
  EXPECT_THROW(collect_reports(dir / "missing"), ConfigError);
}

TEST(Report, HeatmapStoresValuesAtSixteenBits) {
  const std::vector<std::vector<double>> v{{0.0, 0.25}, {0.5, 1.0}, {0.123456, 0.999}};
  const cv::Mat img = plot::heatmap16(v, 4);
  EXPECT_EQ(img.rows, 12);
  EXPECT_EQ(img.cols, 8);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c) EXPECT_NEAR(plot::heatmap_value(img, r, c, 4), v[r][c], 0.5 / 65535.0 + 1e-12);
}
