// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <memory>
#include <random>

#include "fg3d/error.hpp"
#include "fg3d/train.hpp"
#include "test_util.hpp"

using namespace fg3d;
using fg3d::testing::TempDir;

namespace {

std::vector<double> flat(const ParamStore& s) {
  std::vector<double> out;
  for (const auto& [name, t] : s) {
    const auto v = t.to_vector();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

Prediction pred(std::size_t t, std::size_t p) { return {"s", t, p, {}}; }

}  // namespace

TEST(Report, ImbalancedNineToOneAllPredictedZero) {
  std::vector<Prediction> ps;
  for (int i = 0; i < 9; ++i) ps.push_back(pred(0, 0));
  ps.push_back(pred(1, 0));
  const EvalReport r = make_report(ps, 2);
  EXPECT_DOUBLE_EQ(r.instance_accuracy, 0.9);
  EXPECT_DOUBLE_EQ(r.class_accuracy, 0.5);
  EXPECT_EQ(r.confusion, (std::vector<std::vector<std::size_t>>{{9, 0}, {1, 0}}));
}

TEST(Report, AllCorrectIsDiagonal) {
  std::vector<Prediction> ps{pred(0, 0), pred(1, 1), pred(2, 2), pred(2, 2)};
  const EvalReport r = make_report(ps, 3);
  EXPECT_EQ(r.instance_accuracy, 1.0);
  EXPECT_EQ(r.class_accuracy, 1.0);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      if (i != j) EXPECT_EQ(r.confusion[i][j], 0u);
    }
  }
}

TEST(Report, ConfusionIsConsistentWithAccuracies) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t C = 2 + rng() % 4;
    std::vector<std::size_t> counts(C, 0);
    std::vector<Prediction> ps;
    const std::size_t n = 1 + rng() % 40;
    for (std::size_t i = 0; i < n; ++i) {
      ps.push_back(pred(rng() % C, rng() % C));
      ++counts[ps.back().true_label];
    }
    const EvalReport r = make_report(ps, C);
    std::size_t trace = 0, total = 0;
    double class_sum = 0;
    std::size_t present = 0;
    for (std::size_t i = 0; i < C; ++i) {
      std::size_t row = 0;
      for (auto x : r.confusion[i]) row += x;
      EXPECT_EQ(row, counts[i]);
      trace += r.confusion[i][i];
      total += row;
      if (row) {
        class_sum += static_cast<double>(r.confusion[i][i]) / static_cast<double>(row);
        ++present;
      }
    }
    EXPECT_EQ(r.instance_accuracy, static_cast<double>(trace) / static_cast<double>(total));
    EXPECT_DOUBLE_EQ(r.class_accuracy, class_sum / static_cast<double>(present));
  }
}

TEST(Report, EmptySplitIsDataError) { EXPECT_THROW(make_report({}, 3), DataError); }

TEST(Report, ArgmaxTiesGoToLowestIndex) {
  EXPECT_EQ(argmax_lowest({0.2, 0.4, 0.4}), 1u);
  EXPECT_EQ(argmax_lowest({0.5, 0.5}), 0u);
  EXPECT_EQ(argmax_lowest({0.1, 0.2, 0.7}), 2u);
}

TEST(ParallelFor, VisitsEveryIndexOnceAndRethrowsLowestFailure) {
  for (std::size_t threads : {1, 3, 8}) {
    std::vector<int> seen(50, 0);
    parallel_for(seen.size(), threads, [&](std::size_t i) { ++seen[i]; });
    for (int s : seen) EXPECT_EQ(s, 1);
    try {
      parallel_for(20, threads, [&](std::size_t i) {
        if (i == 7 || i == 13) throw DataError("fail " + std::to_string(i));
      });
      FAIL();
    } catch (const DataError& e) {
      EXPECT_STREQ(e.what(), "fail 7");
    }
  }
}

TEST(MetricsCsv, RoundTripIsExact) {
  std::vector<MetricRow> rows{{1, "detector", 1, 0.1 + 0.2}, {1, "total", 2, 1.0 / 3.0}, {2, "classifier", 4, 1e-300}};
  TempDir dir("metrics");
  write_metrics_csv(rows, dir / "m.csv");
  std::ifstream in(dir / "m.csv");
  const std::string text(std::istreambuf_iterator<char>(in), {});
  EXPECT_EQ(text.substr(0, text.find('\n')), "round,phase,epoch,mean_loss");
  EXPECT_EQ(parse_metrics_csv(text), rows);
}

TEST(Csv, ConfusionPredictionsAndAblationLayouts) {
  TempDir dir("csv");
  std::vector<Prediction> ps{{"a", 0, 1, {0.25, 0.75}}, {"b", 1, 1, {0.5, 0.5}}};
  const EvalReport r = make_report(ps, 2);
  write_confusion_csv(r, {"x", "y"}, dir / "c.csv");
  write_predictions_csv(r, dir / "p.csv");
  write_ablation_csv({{AttentionMode::kNa, r}}, dir / "a.csv");
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(dir / "c.csv"), "x,y\n0,1\n0,1\n");
  EXPECT_EQ(slurp(dir / "p.csv"), "shape_id,true_label,pred_label,p_1,p_2\na,0,1,0.25,0.75\nb,1,1,0.5,0.5\n");
  EXPECT_EQ(slurp(dir / "a.csv"), "mode,class_acc,instance_acc\nna,0.5,0.5\n");
}

// --- pipeline on a tiny generated dataset ----------------------------------

class TinyPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = std::make_unique<TempDir>("train");
    Config c = base_config();
    GenerateOptions g;
    g.family = c.family;
    g.shapes_per_subcategory = c.shapes_per_subcategory;
    g.test_per_subcategory = c.test_per_subcategory;
    g.seed = c.seed;
    dataset_ = std::make_unique<Dataset>(generate_dataset(g, c.dataset_root));
    ensure_view_cache(c, *dataset_);
    build_ground_truth(c, *dataset_);
  }
  static void TearDownTestSuite() {
    dataset_.reset();
    dir_.reset();
  }

  static Config base_config() {
    Config c;
    c.dataset_root = (*dir_ / "data").string();
    c.out_dir = (*dir_ / "out").string();
    c.shapes_per_subcategory = 3;
    c.test_per_subcategory = 1;
    c.views = 2;
    c.image_size = 16;
    c.backbone_channels = {4};
    c.feature_channels = 6;
    c.anchor_scales = {1, 2, 4};
    c.head_hidden = 8;
    c.anchor_batch = 16;
    c.k_parts = 2;
    c.hidden_dim = 4;
    c.rounds = 2;
    c.epochs_per_phase = 1;
    c.lr = 1e-3;
    c.validate();
    return c;
  }

  static std::unique_ptr<TempDir> dir_;
  static std::unique_ptr<Dataset> dataset_;
};

std::unique_ptr<TempDir> TinyPipeline::dir_;
std::unique_ptr<Dataset> TinyPipeline::dataset_;

TEST_F(TinyPipeline, ViewCacheHoldsOnePpmPerViewAndIsReused) {
  const Config c = base_config();
  for (const auto& e : dataset_->train) {
    for (std::size_t v = 0; v < c.views; ++v) {
      char name[16];
      std::snprintf(name, sizeof(name), "v%02zu.ppm", v);
      EXPECT_TRUE(std::filesystem::exists(view_cache_dir(c) / e.subcategory / e.shape_id / name));
    }
  }
  EXPECT_EQ(ensure_view_cache(c, *dataset_), 0u);
}

TEST_F(TinyPipeline, EditedMeshInvalidatesItsCachedViews) {
  Config c = base_config();
  TempDir local("cache");
  c.dataset_root = (local / "data").string();
  GenerateOptions g;
  g.shapes_per_subcategory = c.shapes_per_subcategory;
  g.test_per_subcategory = c.test_per_subcategory;
  const Dataset d = generate_dataset(g, c.dataset_root);
  EXPECT_EQ(ensure_view_cache(c, d), d.train.size() + d.test.size());
  const Mesh m = rotate_y(load_off(d.path_of(d.train[0])), 30.0);
  write_off(m, d.path_of(d.train[0]));
  EXPECT_EQ(ensure_view_cache(c, d), 1u);
}

TEST_F(TinyPipeline, MissingGroundTruthIsDataError) {
  Config c = base_config();
  TempDir local("nogt");
  c.dataset_root = (local / "data").string();
  GenerateOptions g;
  g.shapes_per_subcategory = c.shapes_per_subcategory;
  g.test_per_subcategory = c.test_per_subcategory;
  Pipeline p(c, generate_dataset(g, c.dataset_root));
  TrainState s = p.init_state();
  try {
    p.train_detector_epoch(s);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("gsp-gt"), std::string::npos) << e.what();
  }
}

TEST_F(TinyPipeline, DetectorEpochIsDeterministic) {
  Pipeline p(base_config(), *dataset_);
  TrainState a = p.init_state(), b = p.init_state();
  const double la = p.train_detector_epoch(a);
  const double lb = p.train_detector_epoch(b);
  EXPECT_EQ(la, lb);
  EXPECT_TRUE(bit_equal(flat(a.det), flat(b.det)));
}

TEST_F(TinyPipeline, ZeroLambdaLeavesRegressionGradientsExactlyZero) {
  Config c = base_config();
  c.lambda = 0.0;
  Pipeline p(c, *dataset_);
  TrainState s = p.init_state();
  s.det.zero_grad();
  backward(p.shape_detection_loss(s.det, dataset_->train[0], s.rng));
  for (const char* name : {"det.reg.w", "det.reg.b"}) {
    for (double g : s.det.get(name).grad()) EXPECT_EQ(g, 0.0) << name;
  }
  double score_grad = 0.0;
  for (double g : s.det.get("det.score.w").grad()) score_grad += std::fabs(g);
  EXPECT_GT(score_grad, 0.0);
}

TEST_F(TinyPipeline, PhasesLeaveTheOtherBranchBitIdentical) {
  Pipeline p(base_config(), *dataset_);
  TrainState s = p.init_state();
  const auto att_before = flat(s.att);
  const auto det_before = flat(s.det);
  p.train_detector_epoch(s);
  EXPECT_TRUE(bit_equal(flat(s.att), att_before));
  EXPECT_FALSE(bit_equal(flat(s.det), det_before));

  const auto det_mid = flat(s.det);
  const GspCache cache = p.gsp_features(s.det, dataset_->train);
  p.train_classifier_epoch(s.att, s.att_adam, s.rng, cache, dataset_->train, AttentionMode::kFull);
  EXPECT_TRUE(bit_equal(flat(s.det), det_mid));
  EXPECT_FALSE(bit_equal(flat(s.att), att_before));
}

TEST_F(TinyPipeline, GspFeaturesHaveKRowsPerViewAndDoNotDependOnThreads) {
  Config c = base_config();
  Pipeline p1(c, *dataset_);
  c.threads = 3;
  Pipeline p3(c, *dataset_);
  const TrainState s = p1.init_state();
  const GspCache a = p1.gsp_features(s.det, dataset_->train);
  const GspCache b = p3.gsp_features(s.det, dataset_->train);
  ASSERT_EQ(a.size(), dataset_->train.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].size(), c.views);
    for (std::size_t v = 0; v < c.views; ++v) {
      EXPECT_EQ(a[i][v].shape(), (Shape{c.k_parts, c.feature_channels}));
      EXPECT_TRUE(bit_equal(a[i][v].to_vector(), b[i][v].to_vector()));
    }
  }
}

TEST_F(TinyPipeline, OneRoundRunsOneDetectorAndOneClassifierPhase) {
  Config c = base_config();
  c.rounds = 1;
  c.epochs_per_phase = 2;
  Pipeline p(c, *dataset_);
  TrainState s = p.init_state();
  int callbacks = 0;
  p.alternate_train(s, [&](const TrainState& st) {
    ++callbacks;
    EXPECT_EQ(st.rounds_done, 1u);
  });
  EXPECT_EQ(callbacks, 1);
  std::vector<std::pair<std::string, std::size_t>> trained;
  for (const auto& m : s.metrics) {
    EXPECT_EQ(m.round, 1u);
    if (m.phase == "detector" || m.phase == "classifier") trained.emplace_back(m.phase, m.epoch);
  }
  EXPECT_EQ(trained, (std::vector<std::pair<std::string, std::size_t>>{
                         {"detector", 1}, {"detector", 2}, {"classifier", 3}, {"classifier", 4}}));
}

TEST_F(TinyPipeline, LoggedTotalIsTheSumOfComponentsWithUnitPsi) {
  Pipeline p(base_config(), *dataset_);
  TrainState s = p.init_state();
  p.alternate_train(s);
  std::size_t totals = 0;
  for (std::size_t i = 0; i + 2 < s.metrics.size(); i += 3) {
    const auto& a = s.metrics[i];
    const auto& b = s.metrics[i + 1];
    const auto& t = s.metrics[i + 2];
    ASSERT_EQ(t.phase, "total");
    EXPECT_EQ(a.epoch, t.epoch);
    EXPECT_EQ(b.epoch, t.epoch);
    EXPECT_EQ(t.mean_loss, a.mean_loss + b.mean_loss);
    ++totals;
  }
  EXPECT_EQ(totals, 2 * base_config().rounds * base_config().epochs_per_phase);
}

TEST_F(TinyPipeline, TwoRunsGiveIdenticalMetrics) {
  Pipeline p(base_config(), *dataset_);
  TrainState a = p.init_state(), b = p.init_state();
  p.alternate_train(a);
  p.alternate_train(b);
  EXPECT_EQ(a.metrics, b.metrics);
  EXPECT_TRUE(bit_equal(flat(a.det), flat(b.det)));
  EXPECT_TRUE(bit_equal(flat(a.att), flat(b.att)));
}

TEST_F(TinyPipeline, ResumeFromRoundCheckpointMatchesUnbrokenRun) {
  const Config c = base_config();
  Pipeline p(c, *dataset_);
  TrainState unbroken = p.init_state();
  TempDir local("resume");
  p.alternate_train(unbroken, [&](const TrainState& st) {
    if (st.rounds_done == 1) save_checkpoint(to_checkpoint(c, *dataset_, st), local / "r1.fgpv");
  });

  const Checkpoint ck = load_checkpoint(local / "r1.fgpv");
  EXPECT_EQ(checkpoint_config(ck), c);
  TrainState resumed = from_checkpoint(p, ck);
  EXPECT_EQ(resumed.rounds_done, 1u);
  p.alternate_train(resumed);
  EXPECT_EQ(resumed.metrics, unbroken.metrics);
  EXPECT_TRUE(bit_equal(flat(resumed.det), flat(unbroken.det)));
  EXPECT_TRUE(bit_equal(flat(resumed.att), flat(unbroken.att)));
  EXPECT_EQ(resumed.det_adam.step, unbroken.det_adam.step);
  EXPECT_EQ(resumed.att_adam.m, unbroken.att_adam.m);
  EXPECT_EQ(resumed.rng, unbroken.rng);
}

TEST_F(TinyPipeline, CheckpointForOtherClassesIsRejected) {
  const Config c = base_config();
  Pipeline p(c, *dataset_);
  Dataset other = *dataset_;
  other.classes.back() += "_x";
  const Checkpoint ck = to_checkpoint(c, other, p.init_state());
  EXPECT_THROW(from_checkpoint(p, ck), DataError);
}

TEST_F(TinyPipeline, EveryModeTrainsAndGivesValidProbabilities) {
  Pipeline p(base_config(), *dataset_);
  TrainState s = p.init_state();
  const GspCache cache = p.gsp_features(s.det, dataset_->train);
  for (AttentionMode mode : all_attention_modes()) {
    ParamStore att;
    p.init_attention(att);
    AdamState adam;
    std::mt19937_64 rng(1);
    const double loss = p.train_classifier_epoch(att, adam, rng, cache, dataset_->train, mode);
    EXPECT_TRUE(std::isfinite(loss)) << attention_mode_name(mode);
    const EvalReport r = p.evaluate(att, cache, dataset_->train, mode);
    for (const auto& pr : r.predictions) {
      double sum = 0;
      for (double q : pr.probs) {
        EXPECT_GE(q, 0.0);
        sum += q;
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST_F(TinyPipeline, AblationGivesOneReportPerModeAndRepeats) {
  Pipeline p(base_config(), *dataset_);
  const TrainState s = p.init_state();
  const std::vector<AttentionMode> modes{AttentionMode::kOpa, AttentionMode::kOva, AttentionMode::kNa,
                                         AttentionMode::kNr};
  const auto a = p.run_ablation(s.det, modes);
  const auto b = p.run_ablation(s.det, modes);
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, modes[i]);
    EXPECT_EQ(a[i].second.confusion, b[i].second.confusion);
    EXPECT_EQ(a[i].second.instance_accuracy, b[i].second.instance_accuracy);
    for (std::size_t k = 0; k < a[i].second.predictions.size(); ++k) {
      EXPECT_TRUE(bit_equal(a[i].second.predictions[k].probs, b[i].second.predictions[k].probs));
    }
  }
}

TEST_F(TinyPipeline, RecallIsAFraction) {
  Pipeline p(base_config(), *dataset_);
  const TrainState s = p.init_state();
  const double r = p.detector_recall(s.det, dataset_->train);
  EXPECT_GE(r, 0.0);
  EXPECT_LE(r, 1.0);
}

TEST_F(TinyPipeline, EvaluateEmptySplitIsDataError) {
  Config c = base_config();
  Pipeline p(c, *dataset_);
  EXPECT_THROW(p.evaluate(p.init_state(), "val"), DataError);
}

TEST_F(TinyPipeline, ValidationFractionCarvesPerClass) {
  Config c = base_config();
  c.val_fraction = 0.5;
  Pipeline p(c, *dataset_);
  // two training shapes per class, half of each held out
  EXPECT_EQ(p.dataset().val.size(), p.classes());
  EXPECT_EQ(p.dataset().train.size(), dataset_->train.size() - p.classes());
  for (const auto& v : p.dataset().val) {
    for (const auto& t : p.dataset().train) EXPECT_NE(v.rel_path, t.rel_path);
  }
}
