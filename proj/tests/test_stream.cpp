#include <gtest/gtest.h>

#include "motir/stream.hpp"
#include "motir/texture.hpp"
#include "test_util.hpp"

namespace motir {
namespace {

using testing::random_image;

int count(const TokenStream& s, Modality m, bool condition) {
  int n = 0;
  for (const auto& t : s.tokens) n += t.modality == m && t.is_condition == condition;
  return n;
}

TrainingSample sample_of(Partition p, int index = 0) { return synthesize_sample(CorpusConfig{}, p, index); }

TrainingSample score_sample() {
  for (int i = 0;; ++i)
    if (auto s = sample_of(Partition::Iqa, i); s.task == Task::IqaScore) return s;
}

TEST(BuildStream, ScoreSampleShape) {
  const TokenStream s = build_stream(score_sample());
  EXPECT_EQ(count(s, Modality::UndVision, true), 64);
  EXPECT_EQ(count(s, Modality::GenLatent, false), 0);
  EXPECT_GT(count(s, Modality::Text, false), 0);
  EXPECT_FALSE(s.has_latents());
}

TEST(BuildStream, RestoreResponseIsExactly64Latents) {
  const TokenStream s = build_stream(sample_of(Partition::Single));
  EXPECT_EQ(s.l_res, 64);
  EXPECT_EQ(count(s, Modality::GenLatent, false), 64);
  EXPECT_FALSE(s.has_response_text());
  EXPECT_EQ(s.latent_grid(), (std::pair<int, int>{8, 8}));
}

TEST(BuildStream, InterleavedTextPrecedesLatents) {
  const TokenStream s = build_stream(sample_of(Partition::Interleaved));
  bool seen_latent = false;
  for (int i = s.l_con; i < s.length(); ++i) {
    if (s.tokens[i].modality == Modality::GenLatent) seen_latent = true;
    else EXPECT_FALSE(seen_latent) << "text after latents at " << i;
  }
  EXPECT_TRUE(seen_latent);
  EXPECT_EQ(s.tokens[s.l_con].id, vocab::kBos);
}

TEST(BuildStream, TextIsBosBytesEos) {
  CounterRng rng(1);
  const TokenStream s = build_stream(testing::tiny_score(rng));
  std::vector<int> ids;
  for (int i = s.l_con; i < s.length(); ++i) ids.push_back(s.tokens[i].id);
  ASSERT_GE(ids.size(), 2u);
  EXPECT_EQ(ids.front(), vocab::kBos);
  EXPECT_EQ(ids.back(), vocab::kEos);
  EXPECT_EQ(detokenize({ids.begin() + 1, ids.end() - 1}), "3.5");
}

TEST(BuildStream, VisionTokensAreBracketedAndPointAtTheirStart) {
  const TokenStream s = build_stream(sample_of(Partition::Multi));
  for (int i = 0; i < s.length(); ++i) {
    const Token& t = s.tokens[i];
    if (t.modality != Modality::UndVision) continue;
    EXPECT_EQ(s.tokens[t.image_base].id, vocab::kImgStart);
    EXPECT_EQ(static_cast<int>(t.vec.size()), 48);
    EXPECT_EQ(t.group, DropGroup::Vit);
  }
  int starts = 0, ends = 0;
  for (const auto& t : s.tokens) {
    if (t.modality != Modality::Text) continue;
    starts += t.id == vocab::kImgStart;
    ends += t.id == vocab::kImgEnd;
  }
  EXPECT_EQ(starts, 1);
  EXPECT_EQ(ends, 1);
}

TEST(BuildStream, OversizedSequenceReportsTheCap) {
  try {
    build_stream(sample_of(Partition::Single), {4, 50});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::OutOfRange);
    EXPECT_NE(std::string(e.what()).find("50"), std::string::npos);
  }
}

TEST(BuildStream, ComparisonHasTwoImages) {
  TrainingSample c;
  for (int i = 0;; ++i)
    if (c = sample_of(Partition::Iqa, i); c.task == Task::IqaCompare) break;
  EXPECT_EQ(count(build_stream(c), Modality::UndVision, true), 128);
}

TEST(StreamProperty, LengthsAddUpAndConditionPrecedesResponse) {
  CorpusConfig cfg;
  cfg.image_size = 16;
  for (int i = 0; i < 40; ++i)
    for (auto p : kAllPartitions) {
      const TokenStream s = build_stream(synthesize_sample(cfg, p, i));
      EXPECT_EQ(s.l_con + s.l_res, s.length());
      EXPECT_GE(s.l_con, 1);
      EXPECT_NO_THROW(s.check_invariants());
      for (const auto& t : s.tokens) {
        if (t.modality == Modality::Text) {
          EXPECT_GE(t.id, 0);
          EXPECT_LT(t.id, vocab::kSize);
        } else {
          EXPECT_EQ(static_cast<int>(t.vec.size()), 3 * s.patch * s.patch);
        }
      }
    }
}

TEST(BuildMask, PrefixLmWithoutLatents) {
  const TokenStream s = build_stream(score_sample());
  const AttentionMask m = build_mask(s);
  for (int i = 0; i < s.length(); ++i)
    for (int j = 0; j < s.length(); ++j) {
      const bool expected = i < s.l_con ? j < s.l_con : j <= i;
      EXPECT_EQ(m(i, j), expected) << i << "," << j;
    }
}

TEST(BuildMask, FirstResponseTextRowSeesConditionAndItself) {
  const TokenStream s = build_stream(sample_of(Partition::Interleaved));
  const AttentionMask m = build_mask(s);
  const int r = s.l_con;
  for (int j = 0; j < s.length(); ++j) EXPECT_EQ(m(r, j), j < s.l_con || j == r) << j;
}

TEST(BuildMask, LatentRowsSeeEverything) {
  const TokenStream s = build_stream(sample_of(Partition::Interleaved));
  const AttentionMask m = build_mask(s);
  for (int i : s.response_latents())
    for (int j = 0; j < s.length(); ++j) EXPECT_TRUE(m(i, j));
}

TEST(BuildMask, TextNeverSeesResponseLatentsAndConditionNeverSeesResponse) {
  const TokenStream s = build_stream(sample_of(Partition::Interleaved));
  const AttentionMask m = build_mask(s);
  const auto lat = s.response_latents();
  for (int i = 0; i < s.length(); ++i) {
    if (s.tokens[i].modality == Modality::GenLatent) continue;
    for (int j : lat) EXPECT_FALSE(m(i, j));
    if (i < s.l_con) {
      for (int j = s.l_con; j < s.length(); ++j) EXPECT_FALSE(m(i, j));
    }
  }
}

TEST(IdentityMask, Diagonal) {
  const AttentionMask m = identity_mask(5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) EXPECT_EQ(m(i, j), i == j);
}

}  // namespace
}  // namespace motir
