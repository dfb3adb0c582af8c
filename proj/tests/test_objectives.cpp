#include <gtest/gtest.h>

#include <cmath>

#include "motir/objectives.hpp"
#include "test_util.hpp"

namespace motir {
namespace {

using testing::tiny_config;

const StreamOptions kOpt{4, 128};

TokenStream text_stream(CounterRng& rng, const std::string& answer = "3.5") {
  TrainingSample s = testing::tiny_score(rng);
  s.response = {{answer}};
  return build_stream(s, kOpt);
}

Mat<double> random_logits(CounterRng& rng, int rows) {
  Mat<double> m(rows, vocab::kSize);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 3.0 * rng.normal();
  return m;
}

TEST(ArLoss, UniformLogitsGiveLogVocab) {
  CounterRng rng(1);
  const TokenStream s = text_stream(rng);
  const auto rows = text_positions(s);
  const Mat<double> logits = Mat<double>::Zero(static_cast<Eigen::Index>(rows.size()), vocab::kSize);
  EXPECT_NEAR(ar_loss(logits, rows, s), std::log(static_cast<double>(vocab::kSize)), 1e-12);
}

TEST(ArLoss, SaturatedTargetsGiveNearZero) {
  CounterRng rng(1);
  const TokenStream s = text_stream(rng);
  const auto rows = text_positions(s);
  Mat<double> logits = Mat<double>::Zero(static_cast<Eigen::Index>(rows.size()), vocab::kSize);
  for (const auto& [row, target] : ar_targets(s, rows)) logits(row, target) = 1e4;
  EXPECT_LT(ar_loss(logits, rows, s), 1e-6);
}

TEST(ArLoss, CountsEveryResponseTokenAfterTheFirst) {
  CounterRng rng(1);
  const TokenStream s = text_stream(rng, "abc");
  // BOS a b c EOS: four predictions.
  EXPECT_EQ(ar_targets(s, text_positions(s)).size(), 4u);
}

TEST(ArLoss, RejectsStreamWithoutResponseText) {
  CounterRng rng(1);
  const TokenStream s = build_stream(testing::tiny_restore(rng), kOpt);
  const auto rows = text_positions(s);
  const Mat<double> logits = Mat<double>::Zero(static_cast<Eigen::Index>(rows.size()), vocab::kSize);
  EXPECT_THROW(ar_loss(logits, rows, s), Error);
}

TEST(ArLossProperty, ConditionPositionsContributeExactlyZero) {
  CounterRng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    TokenStream s = trial % 2 ? text_stream(rng, std::string(1 + rng.below(6), 'x'))
                              : build_stream(testing::tiny_interleaved(rng), kOpt);
    const auto rows = text_positions(s);
    Mat<double> logits = random_logits(rng, static_cast<int>(rows.size()));
    const double base = ar_loss(logits, rows, s);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (!s.tokens[rows[k]].is_condition) continue;
      for (Eigen::Index c = 0; c < logits.cols(); ++c) logits(static_cast<Eigen::Index>(k), c) = 50.0 * rng.normal();
      s.tokens[rows[k]].id = static_cast<int>(rng.below(vocab::kSize));
    }
    ASSERT_EQ(ar_loss(logits, rows, s), base) << "trial " << trial;
  }
}

TEST(SampleT, ShiftOneIsIdentity) {
  for (double u : {0.0, 0.1, 0.37, 0.5, 0.99}) EXPECT_DOUBLE_EQ(shift_timestep(u, 1.0), u);
}

TEST(SampleT, HalfWithShiftFourIsOneFifth) { EXPECT_DOUBLE_EQ(shift_timestep(0.5, 4.0), 0.2); }

TEST(SampleT, EmpiricalMeanMatchesQuadrature) {
  // Composite Simpson on [0,1] with 2000 panels.
  const int n = 2000;
  double integral = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double u = static_cast<double>(i) / n;
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    integral += w * shift_timestep(u, 4.0);
  }
  integral /= 3.0 * n;
  CounterRng rng(3);
  double sum = 0.0;
  for (int i = 0; i < 100000; ++i) sum += sample_t(rng, 4.0);
  EXPECT_NEAR(sum / 100000.0, integral, 0.01);
  EXPECT_LT(integral, 0.5);
}

TEST(SampleT, RejectsShiftBelowOne) {
  CounterRng rng(1);
  EXPECT_THROW(sample_t(rng, 0.5), Error);
}

TEST(FlowState, InterpolationEndpointsAreExact) {
  CounterRng rng(4);
  Mat<double> x(5, 48);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1, 1);
  CounterRng a(9), b(9);
  EXPECT_EQ(make_flow_state(x, 1.0, a).zt, x);
  const FlowState zero = make_flow_state(x, 0.0, b);
  EXPECT_EQ(zero.zt, zero.z0);
}

TEST(RfLoss, OracleVelocityGivesZero) {
  CounterRng data(5);
  const TokenStream s = build_stream(testing::tiny_restore(data), kOpt);
  const Mat<double> x = response_latents(s);
  VelocityModel oracle = [&](const TokenStream& noised, double t) -> Mat<double> {
    return (x - response_latents(noised)) / (1.0 - t);
  };
  CounterRng rng(6);
  EXPECT_LT(rf_loss(oracle, s, rng, LossConfig{}), 1e-20);
}

TEST(RfLoss, ZeroVelocityMatchesDirectRecomputation) {
  CounterRng data(5);
  const TokenStream s = build_stream(testing::tiny_restore(data), kOpt);
  VelocityModel zero = [](const TokenStream& noised, double) -> Mat<double> {
    return Mat<double>::Zero(static_cast<Eigen::Index>(noised.response_latents().size()), 48);
  };
  CounterRng rng(6), replay(6);
  const double loss = rf_loss(zero, s, rng, LossConfig{});
  (void)replay.uniform();
  double total = 0.0;
  const auto rows = s.response_latents();
  for (int pos : rows) {
    double sq = 0.0;
    for (double xv : s.tokens[pos].vec) {
      const double d = xv - replay.normal();
      sq += d * d;
    }
    total += sq;
  }
  EXPECT_NEAR(loss, total / static_cast<double>(rows.size()), 1e-12);
}

TEST(RfLoss, RejectsStreamWithoutLatents) {
  CounterRng data(5);
  const auto params = init_params<double>(tiny_config(), 1);
  CounterRng rng(1);
  EXPECT_THROW(rf_loss(params, text_stream(data), rng, LossConfig{}), Error);
}

TEST(CombinedLoss, WeightedSumAndStageOneMode) {
  EXPECT_DOUBLE_EQ(combine_losses(1.0, 2.0, true, true, 0.25, LossMode::Combined), 1.5);
  EXPECT_DOUBLE_EQ(combine_losses(1.0, 2.0, true, true, 0.25, LossMode::RfOnly), 1.0);
  EXPECT_DOUBLE_EQ(combine_losses(0.0, 2.0, false, true, 0.25, LossMode::Combined), 0.5);
}

TEST(CombinedLoss, IqaOnlyBatchIsWeightedArLoss) {
  auto params = init_params<double>(tiny_config(), 1);
  testing::scramble(params, 2);
  CounterRng data(7);
  const std::vector<TokenStream> batch = {text_stream(data, "1.25"), text_stream(data, "4.5")};
  CounterRng rng(1);
  const auto b = combined_loss(params, batch, LossConfig{}, LossMode::Combined, rng);
  double direct = 0.0;
  for (const auto& s : batch) direct += ar_loss(forward(params, s, build_mask(s), std::nullopt).logits, text_positions(s), s);
  direct /= 2.0;
  EXPECT_EQ(b.n_rf, 0);
  EXPECT_EQ(b.n_ar, 2);
  EXPECT_NEAR(b.ar, direct, 1e-12);
  EXPECT_NEAR(b.total, 0.25 * direct, 1e-12);
}

TEST(CombinedLoss, InterleavedSampleFeedsBothTermsAndRfOnlyDropsText) {
  auto params = init_params<double>(tiny_config(), 1);
  CounterRng data(7);
  const std::vector<TokenStream> batch = {build_stream(testing::tiny_interleaved(data), kOpt)};
  CounterRng r1(1), r2(1);
  const auto both = combined_loss(params, batch, LossConfig{}, LossMode::Combined, r1);
  const auto rf = combined_loss(params, batch, LossConfig{}, LossMode::RfOnly, r2);
  EXPECT_EQ(both.n_rf, 1);
  EXPECT_EQ(both.n_ar, 1);
  EXPECT_NEAR(both.total, both.rf + 0.25 * both.ar, 1e-12);
  EXPECT_EQ(rf.total, rf.rf);
  EXPECT_EQ(rf.rf, both.rf);
  EXPECT_THROW(combined_loss(params, std::vector<TokenStream>{}, LossConfig{}, LossMode::Combined, r1), Error);
}

TEST(CombinedLoss, ZeroLambdaLeavesTextHeadWithoutGradient) {
  auto params = init_params<double>(tiny_config(), 1);
  testing::scramble(params, 3);
  CounterRng data(7);
  const std::vector<TokenStream> batch = {build_stream(testing::tiny_interleaved(data), kOpt),
                                          build_stream(testing::tiny_restore(data), kOpt)};
  LossConfig cfg;
  cfg.lambda = 0.0;
  auto grads = params.zeros_like();
  CounterRng rng(2);
  combined_loss(params, batch, cfg, LossMode::Combined, rng, &grads);
  for (const auto& t : grads)
    if (t.group == Group::TextHead) {
      EXPECT_EQ(t.value.cwiseAbs().maxCoeff(), 0.0) << t.name;
    }
}

TokenStream stream_with_clean_latents(CounterRng& rng) {
  StreamBuilder b(kOpt);
  b.text("fix", true);
  b.input_image(testing::random_image(rng, 8, 8));
  b.latents(encode(testing::random_image(rng, 8, 8), 4), true);
  b.latents(encode(testing::random_image(rng, 8, 8), 4), false);
  return b.finish();
}

TEST(CfgDropout, ZeroProbabilityLeavesStreamUnchanged) {
  CounterRng rng(8);
  TokenStream s = stream_with_clean_latents(rng);
  LossConfig cfg;
  cfg.drop_text = cfg.drop_vit = cfg.drop_cleanvae = 0.0;
  const auto d = cfg_dropout(s, cfg, rng);
  EXPECT_FALSE(d.text || d.vit || d.cleanvae);
  for (const auto& t : s.tokens) EXPECT_FALSE(t.nulled);
}

TEST(CfgDropout, FullProbabilityNullsEveryConditionGroupOnly) {
  CounterRng rng(8);
  TokenStream s = stream_with_clean_latents(rng);
  LossConfig cfg;
  cfg.drop_text = cfg.drop_vit = cfg.drop_cleanvae = 1.0;
  cfg_dropout(s, cfg, rng);
  std::set<DropGroup> nulled;
  for (const auto& t : s.tokens) {
    if (!t.is_condition) {
      EXPECT_FALSE(t.nulled);
    }
    if (t.nulled) nulled.insert(t.group);
    if (t.is_condition && t.group != DropGroup::None) {
      EXPECT_TRUE(t.nulled);
    }
  }
  EXPECT_EQ(nulled, (std::set<DropGroup>{DropGroup::Instruction, DropGroup::Vit, DropGroup::CleanVae}));
}

TEST(CfgDropout, EmpiricalRatesNearTenPercent) {
  CounterRng rng(10), data(11);
  const TokenStream base = stream_with_clean_latents(data);
  const LossConfig cfg;
  int text = 0, vit = 0, clean = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    TokenStream s = base;
    const auto d = cfg_dropout(s, cfg, rng);
    text += d.text;
    vit += d.vit;
    clean += d.cleanvae;
  }
  for (int c : {text, vit, clean}) {
    EXPECT_GE(c / static_cast<double>(n), 0.08);
    EXPECT_LE(c / static_cast<double>(n), 0.12);
  }
}

TEST(CfgDropout, NulledTokensIgnoreTheirPayload) {
  const auto params = init_params<double>(tiny_config(), 1);
  CounterRng rng(12);
  TokenStream a = build_stream(testing::tiny_restore(rng), kOpt);
  null_groups(a, {true, true, true});
  TokenStream b = a;
  for (auto& t : b.tokens)
    if (t.nulled && t.modality == Modality::UndVision) t.vec.assign(t.vec.size(), 0.9);
  EXPECT_EQ(forward(params, a, build_mask(a), 0.5).velocity, forward(params, b, build_mask(b), 0.5).velocity);
}

TEST(LossConfig, ValidatesRanges) {
  LossConfig c;
  c.drop_vit = 1.5;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.lambda = -1;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.shift = 0.5;
  EXPECT_THROW(c.validate(), Error);
}

}  // namespace
}  // namespace motir
