#include <gtest/gtest.h>

#include "motir/trainer.hpp"
#include "test_util.hpp"

namespace motir {
namespace {

using testing::kTinyStreams;
using testing::tiny_corpus;
using testing::tiny_recipe;
using testing::tiny_train_config;

struct LiteralPhase {
  const char* name;
  int steps;
  int warmup;
  double ema;
};

TEST(DefaultRecipe, MatchesTheLiteralTable) {
  const LiteralPhase table[] = {{"single", 10000, 250, 0.990},
                                {"multi", 20000, 250, 0.995},
                                {"high_order", 1500, 250, 0.995},
                                {"unified", 10000, 500, 0.995}};
  const Recipe r = default_recipe();
  ASSERT_EQ(r.phases.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(r.phases[i].name, table[i].name);
    EXPECT_EQ(r.phases[i].steps, table[i].steps);
    EXPECT_EQ(r.phases[i].warmup_steps, table[i].warmup);
    EXPECT_EQ(r.phases[i].ema_ratio, table[i].ema);
    EXPECT_EQ(r.phases[i].lr, 2e-5);
    EXPECT_EQ(r.phases[i].loss_mode, i < 3 ? LossMode::RfOnly : LossMode::Combined);
  }
  EXPECT_EQ(r.optimizer.beta1, 0.9);
  EXPECT_EQ(r.optimizer.beta2, 0.95);
  EXPECT_EQ(r.optimizer.eps, 1e-15);
  EXPECT_EQ(r.optimizer.weight_decay, 0.0);
  EXPECT_EQ(r.optimizer.clip_norm, 1.0);
  EXPECT_EQ(r.loss.lambda, 0.25);
  EXPECT_EQ(r.loss.shift, 4.0);
  EXPECT_EQ(r.loss.drop_text, 0.1);
  EXPECT_EQ(r.loss.drop_vit, 0.1);
  EXPECT_EQ(r.loss.drop_cleanvae, 0.1);
  const MixRatios unified = {{Partition::Iqa, 0.25},
                             {Partition::Single, 0.05},
                             {Partition::Multi, 0.1},
                             {Partition::HighOrder, 0.2},
                             {Partition::Interleaved, 0.4}};
  EXPECT_EQ(r.phases[3].ratios, unified);
  EXPECT_EQ(r.total_steps(), 41500);
}

TEST(DefaultRecipe, StageOneTrainsOnlyTheRestorationPath) {
  const Recipe r = default_recipe();
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(r.phases[i].trainable, (GroupSet{Group::ResExpert, Group::VelocityHead, Group::TimeEmbed}));
    EXPECT_FALSE(r.phases[i].trainable.contains(Group::IqaExpert));
    EXPECT_FALSE(r.phases[i].trainable.contains(Group::VisionEncoder));
  }
  GroupSet expected(kAllGroups.begin(), kAllGroups.end());
  expected.erase(Group::TextEmbed);
  EXPECT_EQ(r.phases[3].trainable, expected);
}

TEST(RecipePhase, ValidationRejectsBadPhases) {
  RecipePhase p = default_recipe().phases[0];
  p.warmup_steps = p.steps + 1;
  EXPECT_THROW(p.validate(), Error);
  p = default_recipe().phases[0];
  p.ratios = {{Partition::Single, 0.7}};
  EXPECT_THROW(p.validate(), Error);
  p = default_recipe().phases[0];
  p.trainable.clear();
  EXPECT_THROW(p.validate(), Error);
}

TEST(AllInOne, OneMixedPhaseWithTheSameBudget) {
  const Recipe src = default_recipe();
  const Recipe one = all_in_one(src);
  ASSERT_EQ(one.phases.size(), 1u);
  const auto& p = one.phases[0];
  EXPECT_EQ(p.name, "all_in_one");
  EXPECT_EQ(p.steps, src.total_steps());
  EXPECT_EQ(p.warmup_steps, 500);
  EXPECT_EQ(p.loss_mode, LossMode::Combined);
  EXPECT_EQ(p.trainable, all_but_token_table());
  double sum = 0.0;
  for (const auto& [part, r] : p.ratios) sum += r;
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_NEAR(p.ratios.at(Partition::Multi), (20000.0 + 0.1 * 10000.0) / 41500.0, 1e-12);
  EXPECT_NO_THROW(one.validate());
}

TEST(LearningRate, WarmupIsMonotoneThenConstant) {
  const RecipePhase p = default_recipe().phases[3];
  double prev = 0.0;
  for (int s = 1; s <= p.steps; s += 7) {
    const double lr = learning_rate(p, s);
    EXPECT_GE(lr, prev);
    if (s >= p.warmup_steps) {
      EXPECT_EQ(lr, p.lr);
    }
    prev = lr;
  }
  EXPECT_DOUBLE_EQ(learning_rate(p, 250), 1e-5);
  EXPECT_EQ(learning_rate(p, 500), 2e-5);
}

TEST(ClipGlobalNorm, ScalesNormTenToOne) {
  auto g = init_params<double>(testing::tiny_config(), 1).zeros_like();
  g[0].value(0, 0) = 6.0;
  g[5].value(0, 0) = 8.0;
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 10.0);
  EXPECT_DOUBLE_EQ(g[0].value(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(g[5].value(0, 0), 0.8);
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 1.0);
}

TEST(EmaUpdate, MatchesHandComputation) {
  auto params = init_params<double>(testing::tiny_config(), 1);
  auto shadow = params;
  for (auto& t : params) t.value.array() += 1.0;
  ema_update(shadow, params, restoration_groups(), 0.99);
  const auto orig = init_params<double>(testing::tiny_config(), 1);
  for (std::size_t i = 0; i < params.size(); ++i)
    for (Eigen::Index k = 0; k < params[i].value.size(); ++k) {
      const double p0 = orig[i].value.data()[k];
      const double expect = restoration_groups().contains(params[i].group) ? 0.99 * p0 + 0.01 * (p0 + 1.0) : p0;
      ASSERT_NEAR(shadow[i].value.data()[k], expect, 1e-15) << params[i].name;
    }
}

TEST(AdamW, FirstStepMovesEachWeightByTheLearningRate) {
  auto params = init_params<double>(testing::tiny_config(), 1);
  const auto before = params;
  auto m = params.zeros_like(), v = params.zeros_like(), g = params.zeros_like();
  CounterRng rng(2);
  for (auto& t : g)
    for (Eigen::Index k = 0; k < t.value.size(); ++k) t.value.data()[k] = rng.normal();
  adamw_update(params, m, v, g, all_but_token_table(), OptimizerSettings{}, 0.01, 1);
  for (std::size_t i = 0; i < params.size(); ++i)
    for (Eigen::Index k = 0; k < params[i].value.size(); ++k) {
      const double delta = params[i].value.data()[k] - before[i].value.data()[k];
      const double gk = g[i].value.data()[k];
      if (params[i].group == Group::TextEmbed) ASSERT_EQ(delta, 0.0);
      else ASSERT_NEAR(delta, -0.01 * gk / std::abs(gk), 1e-12);
    }
}

TEST(TrainStep, FrozenGroupsStayBitwiseIdentical) {
  auto s = init_train_state<double>(tiny_recipe(), tiny_train_config(), 4);
  const auto init = s.params;
  const Corpus corpus = tiny_corpus();
  for (int i = 0; i < 3; ++i) train_step(s, draw_batch(s, corpus, 2, kTinyStreams));
  for (std::size_t i = 0; i < s.params.size(); ++i) {
    const bool frozen = !restoration_groups().contains(s.params[i].group);
    if (frozen) {
      ASSERT_EQ(s.params[i].value, init[i].value) << s.params[i].name;
      ASSERT_EQ(s.ema[i].value, init[i].value) << s.params[i].name;
    }
  }
  double res_delta = 0.0;
  for (std::size_t i = 0; i < s.params.size(); ++i)
    if (s.params[i].group == Group::ResExpert) res_delta += (s.params[i].value - init[i].value).cwiseAbs().sum();
  EXPECT_GT(res_delta, 0.0);
}

TEST(TrainStep, EmaFollowsTheUpdatedParameters) {
  auto s = init_train_state<double>(tiny_recipe(), tiny_train_config(), 4);
  const auto shadow_prev = s.ema;
  train_step(s, draw_batch(s, tiny_corpus(), 2, kTinyStreams));
  const double r = s.current().ema_ratio;
  for (std::size_t i = 0; i < s.params.size(); ++i) {
    if (!s.current().trainable.contains(s.params[i].group)) continue;
    const Mat<double> expect = r * shadow_prev[i].value + (1.0 - r) * s.params[i].value;
    ASSERT_LT((s.ema[i].value - expect).cwiseAbs().maxCoeff(), 1e-15) << s.params[i].name;
  }
}

TEST(TrainStep, NonFiniteLossAbortsWithDiagnostics) {
  auto s = init_train_state<double>(tiny_recipe(), tiny_train_config(), 4);
  s.params.value(s.params.layout().vel_b)(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    train_step(s, draw_batch(s, tiny_corpus(), 2, kTinyStreams));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFinite);
    const std::string msg = e.what();
    for (const char* part : {"step 1", "phase single", "loss_rf=", "loss_ar=", "loss_total="})
      EXPECT_NE(msg.find(part), std::string::npos) << msg;
  }
}

TEST(TrainStep, RefusesToRunPastThePhaseEnd) {
  auto s = init_train_state<double>(tiny_recipe(), tiny_train_config(), 4);
  s.step = s.current().steps;
  EXPECT_THROW(train_step(s, draw_batch(s, tiny_corpus(), 1, kTinyStreams)), Error);
}

TEST(AdvancePhase, ResetsMomentsAndSwitchesPhase) {
  auto s = init_train_state<double>(tiny_recipe(), tiny_train_config(), 4);
  const Corpus corpus = tiny_corpus();
  while (!s.phase_complete()) train_step(s, draw_batch(s, corpus, 2, kTinyStreams));
  EXPECT_EQ(s.current().ema_ratio, 0.990);
  const auto trainable = s.current().trainable;
  advance_phase(s);
  EXPECT_EQ(s.phase, 1);
  EXPECT_EQ(s.step, 0);
  EXPECT_EQ(s.global_step, 3);
  EXPECT_EQ(s.current().name, "multi");
  EXPECT_EQ(s.current().ema_ratio, 0.995);
  EXPECT_EQ(s.current().trainable, trainable);
  EXPECT_EQ(s.data_rng, phase_data_rng(s.seed, 1));
  for (const auto& t : s.m) ASSERT_EQ(t.value.cwiseAbs().maxCoeff(), 0.0);
  for (const auto& t : s.v) ASSERT_EQ(t.value.cwiseAbs().maxCoeff(), 0.0);
  advance_phase(s);
  EXPECT_EQ(s.current().trainable, trainable);
  advance_phase(s);
  EXPECT_EQ(s.current().name, "unified");
  EXPECT_THROW(advance_phase(s), Error);
}

TEST(RunRecipe, VisitsPhasesInOrderWithThePhaseLearningRates) {
  auto s = init_train_state<double>(tiny_recipe(), tiny_train_config(), 5);
  std::vector<StepMetrics> log;
  int checkpoints = 0;
  RunHooks<double> hooks;
  hooks.on_step = [&](const StepMetrics& m) { log.push_back(m); };
  hooks.on_checkpoint = [&](const TrainState<double>&) { ++checkpoints; };
  run_recipe(s, tiny_corpus(), 2, kTinyStreams, hooks);
  ASSERT_EQ(log.size(), 11u);
  const std::vector<std::string> phases = {"single", "single", "single", "multi", "multi", "multi",
                                           "high_order", "high_order", "unified", "unified", "unified"};
  for (std::size_t i = 0; i < log.size(); ++i) {
    EXPECT_EQ(log[i].phase, phases[i]);
    EXPECT_EQ(log[i].step, static_cast<std::int64_t>(i + 1));
  }
  EXPECT_DOUBLE_EQ(log[8].lr, 0.005);
  EXPECT_DOUBLE_EQ(log[9].lr, 0.01);
  EXPECT_EQ(checkpoints, 4);
  EXPECT_TRUE(s.finished());
}

TEST(RunRecipe, IdenticalSeedsGiveIdenticalLossTraces) {
  auto trace = [](std::uint64_t seed) {
    auto s = init_train_state<float>(tiny_recipe(), tiny_train_config(), seed);
    std::vector<std::string> lines;
    RunHooks<float> hooks;
    hooks.on_step = [&](const StepMetrics& m) { lines.push_back(to_json_line(m)); };
    run_recipe(s, tiny_corpus(), 2, kTinyStreams, hooks);
    return lines;
  };
  EXPECT_EQ(trace(8), trace(8));
  EXPECT_NE(trace(8), trace(9));
}

TEST(RunRecipe, UnifiedPhaseTrainsTextHeadButNotTokenTable) {
  Recipe r = tiny_recipe();
  r.phases.erase(r.phases.begin(), r.phases.begin() + 3);
  auto s = init_train_state<double>(r, tiny_train_config(), 6);
  const auto init = s.params;
  run_recipe(s, tiny_corpus(), 4, kTinyStreams);
  for (std::size_t i = 0; i < s.params.size(); ++i) {
    const double delta = (s.params[i].value - init[i].value).cwiseAbs().maxCoeff();
    if (s.params[i].group == Group::TextEmbed) {
      EXPECT_EQ(delta, 0.0);
    }
    if (s.params[i].name == "text_head.w") {
      EXPECT_GT(delta, 0.0);
    }
  }
}

TEST(StepMetrics, JsonLineFieldOrder) {
  const std::string line = to_json_line({7, "multi", 1.5, 0.25, 1.5625, 2e-5, 0.75});
  EXPECT_EQ(line, R"({"step":7,"phase":"multi","loss_rf":1.5,"loss_ar":0.25,"loss_total":1.5625,"lr":2.0000000000000002e-05,"grad_norm":0.75})");
}

}  // namespace
}  // namespace motir
