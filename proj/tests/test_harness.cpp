#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "tinybox/harness.hpp"

using namespace tinybox;

TEST(Scene, EmptyAndDeterministic) {
  SceneSpec spec;
  spec.n_objects = 0;
  EXPECT_TRUE(gen_synthetic_scene(spec).empty());
  spec.n_objects = 300;
  spec.seed = 17;
  EXPECT_EQ(gen_synthetic_scene(spec), gen_synthetic_scene(spec));
  const Scene a = gen_scene_with_detections(spec, DetectionNoise{}), b = gen_scene_with_detections(spec, DetectionNoise{});
  EXPECT_EQ(a.detections, b.detections);
  spec.seed = 18;
  EXPECT_NE(gen_synthetic_scene(spec), a.objects);
}

TEST(Scene, SmallObjectFraction) {
  SceneSpec spec;
  spec.n_objects = 10000;
  const auto g = gen_synthetic_scene(spec);
  std::size_t small = 0;
  for (const auto& o : g) {
    const double area_px = o.box.area() * spec.image_size * spec.image_size;
    small += area_px < 32.0 * 32.0;
    EXPECT_GE(o.box.cx - o.box.w / 2, -1e-12);
    EXPECT_LE(o.box.cx + o.box.w / 2, 1 + 1e-12);
    EXPECT_GE(o.class_id, 0);
    EXPECT_LT(o.class_id, spec.class_count);
  }
  const double frac = static_cast<double>(small) / static_cast<double>(g.size());
  EXPECT_GE(frac, 0.66);
  EXPECT_LE(frac, 0.70);
}

TEST(Scene, JitterProducesScoredNearbyDetections) {
  SceneSpec spec;
  spec.n_objects = 200;
  const Scene s = gen_scene_with_detections(spec, DetectionNoise{});
  ASSERT_EQ(s.detections.size(), s.objects.size());
  for (const auto& d : s.detections) {
    EXPECT_GE(d.score, 0.0);
    EXPECT_LE(d.score, 1.0);
  }
}

TEST(CrowdedScene, TighterNmsWins) {
  const Scene s = gen_crowded_duplicate_scene(0);
  const auto cells = grid_search_nms(s.detections, s.objects, {0.001, 0.005, 0.010, 0.050}, {0.4, 0.5, 0.6, 0.7});
  EXPECT_LE(cells.front().iou, 0.5);
  // neighbouring objects barely overlap; duplicates overlap their primary at ~0.52
  EXPECT_LT(iou(s.objects[0].box, s.objects[1].box), 0.4);
  EXPECT_NEAR(iou(s.detections[0].box, s.detections[1].box), 0.52, 0.01);
}

TEST(ToyTrain, StartOnTargetIsZero) {
  TrainSpec spec;
  spec.start_on_target = true;
  spec.steps = 5;
  const TrainTrace t = toy_train(spec);
  EXPECT_EQ(t.steps_to_zero_loss, 0);
  EXPECT_EQ(t.loss.front(), 0.0);
  EXPECT_EQ(t.final_center_error, 0.0);
}

TEST(ToyTrain, PlainIouIsFlatWhenDisjoint) {
  TrainSpec spec;
  spec.loss = TrainLoss::iou;
  const TrainTrace t = toy_train(spec);
  for (double v : t.loss) EXPECT_EQ(v, t.loss.front());
  for (double v : t.center_error) EXPECT_EQ(v, t.center_error.front());
  EXPECT_EQ(t.final_center_error, spec.distant_offset);
}

TEST(ToyTrain, HybridConverges) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    TrainSpec spec;
    spec.seed = seed;
    const TrainTrace t = toy_train(spec);
    EXPECT_LT(t.final_center_error, 0.5);
    // monotone until the box is within half a pixel
    for (std::size_t i = 1; i < t.center_error.size() && t.center_error[i - 1] >= 0.5; ++i)
      EXPECT_LE(t.center_error[i], t.center_error[i - 1]) << "step " << i;
  }
}

TEST(ToyTrain, NearbyPlainIouMoves) {
  TrainSpec spec;
  spec.loss = TrainLoss::iou;
  spec.init_offset = InitOffset::nearby;
  const TrainTrace t = toy_train(spec);
  EXPECT_LT(t.loss.back(), t.loss.front());
}

TEST(ToyTrain, DivergenceDetected) {
  TrainSpec spec;
  spec.learning_rate = 1e6;
  spec.init_offset = InitOffset::nearby;
  try {
    toy_train(spec);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DivergenceDetected);
  }
}

TEST(LambdaSweep, Semantics) {
  const LambdaSweepResult r = lambda_sweep(LambdaScenario{}, {0.0, 0.25, 0.5, 0.75, 1.0});
  EXPECT_TRUE(r.endpoints_ok);
  EXPECT_GT(r.distant[0], r.nearby[0]);
  EXPECT_LT(r.nearby[4], 0.01 * r.nearby[0]);
  EXPECT_LT(r.max_affinity_error, 1e-12);
  EXPECT_EQ(r.report.rows.size(), 5u);
}

TEST(ThetaSweep, DuplicatedPairsHalve) {
  const SweepReport r = theta_sweep(duplicated_pair_bank({64, 16, 3, 3}, 4), {0.85});
  EXPECT_EQ(std::get<double>(r.rows[0][1]), 50.0);
  EXPECT_EQ(std::get<std::int64_t>(r.rows[0][2]), 32);
}

TEST(ThetaSweep, HighThresholdKeepsRandomBanks) {
  const SweepReport r = theta_sweep_random({64, 16, 3, 3}, {0.85}, 50);
  EXPECT_EQ(std::get<std::int64_t>(r.rows[0][4]), 50);
}

TEST(LazySweep, Checkpoints) {
  const LazySweepResult r = lazy_sweep(DriftSpec{}, {15, 25, 50}, 0);
  ASSERT_EQ(r.report.rows.size(), 4u);
  EXPECT_EQ(std::get<std::int64_t>(r.report.rows[3][0]), 10);
  EXPECT_EQ(std::get<double>(r.report.rows[3][1]), 0.0);
  EXPECT_THROW(lazy_sweep(DriftSpec{}, {51}, 0), Error);
}

TEST(LazySweep, IntervalsAgreeAtTheEnd) {
  const SparsityTrace t = simulate_convergence(DriftSpec{}, 5);
  for (std::size_t k = 0; k + 1 < t.intervals.size(); ++k)
    EXPECT_LE(std::abs(t.sparsity[k].back() - t.sparsity[k + 1].back()), 3.0);
}
