#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "dcav/inference.hpp"

using namespace dcav;
using namespace dcav::inference;

namespace {

model::ModelConfig tiny() {
  model::ModelConfig c;
  c.hidden = 6;
  c.embed = 5;
  c.video_dim = 7;
  c.audio_dim = 4;
  c.audio_proj = 3;
  c.vocab_size = 12;
  c.mutan_rank = 4;
  c.mutan_out_rank = 3;
  c.mutan_out = 5;
  c.max_caption_len = 8;
  return c;
}

Tensor<float> noise(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n;
  Tensor<float> t(std::move(shape));
  for (auto& x : t.storage()) x = n(rng);
  return t;
}

Proposal at(double c, double l, double score) {
  return Proposal{Segment{c, l}, {}, score};
}

data::Vocabulary toy_vocab() {
  return data::Vocabulary({"a", "b", "c", "d", "e", "f", "g", "h"});
}

}  // namespace

TEST(Tiou, Examples) {
  EXPECT_EQ(tiou({0.5, 1.0}, {0.5, 1.0}), 1.0);
  EXPECT_EQ(tiou({0.25, 0.5}, {0.75, 0.5}), 0.0);
  EXPECT_EQ(tiou({0.5, 0.5}, {0.5, 1.0}), 0.5);
}

TEST(Tiou, SymmetricAndAffineInvariant) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.05, 0.5);
  for (int i = 0; i < 50; ++i) {
    const Segment a{u(rng) + 0.2, u(rng)}, b{u(rng) + 0.2, u(rng)};
    EXPECT_EQ(tiou(a, b), tiou(b, a));
    // Halve both intervals about the origin: same ratio.
    const Segment a2{a.center / 2, a.length / 2}, b2{b.center / 2, b.length / 2};
    EXPECT_NEAR(tiou(a2, b2), tiou(a, b), 1e-12);
    EXPECT_GE(tiou(a, b), 0.0);
    EXPECT_LE(tiou(a, b), 1.0);
  }
}

TEST(IouFilter, IdenticalSegmentsLeaveOne) {
  const auto kept = iou_filter({at(0.4, 0.2, -1), at(0.4, 0.2, -0.5), at(0.4, 0.2, -2)});
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].score, -0.5);
}

TEST(IouFilter, DisjointSegmentsBothSurvive) {
  EXPECT_EQ(iou_filter({at(0.2, 0.2, -1), at(0.8, 0.2, -1)}).size(), 2u);
}

TEST(IouFilter, GreedyTrace) {
  // A=[0,0.5], B=[0.05,0.5], C=[0.4,0.9]: pairwise tIoU about {0.9, 0.1, 0.1}.
  const Proposal a = at(0.25, 0.5, -0.1);
  const Proposal b = at(0.275, 0.45, -0.2);
  const Proposal c = at(0.65, 0.5, -0.3);
  ASSERT_NEAR(tiou(a.segment, b.segment), 0.9, 1e-12);
  ASSERT_NEAR(tiou(a.segment, c.segment), 0.1 / 0.9, 1e-12);
  ASSERT_NEAR(tiou(b.segment, c.segment), 0.1 / 0.85, 1e-12);
  // A kept; B suppressed by A; C below threshold against A.
  const auto kept = iou_filter({c, b, a});
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].segment, a.segment);
  EXPECT_EQ(kept[1].segment, c.segment);
}

TEST(IouFilter, OrderIndependentWithDistinctScores) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  std::vector<Proposal> ps;
  for (int i = 0; i < 15; ++i) ps.push_back(at(u(rng), u(rng) * 0.8, -static_cast<double>(i) * 0.1));
  const auto base = iou_filter(ps);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(ps.begin(), ps.end(), rng);
    const auto again = iou_filter(ps);
    ASSERT_EQ(again.size(), base.size());
    for (std::size_t i = 0; i < base.size(); ++i) EXPECT_EQ(again[i].segment, base[i].segment);
  }
}

TEST(RandomProposals, RangesAndDeterminism) {
  const InferenceConfig cfg;
  const auto a = random_proposals(cfg, "video_1");
  ASSERT_EQ(a.size(), 15u);
  EXPECT_EQ(a, random_proposals(cfg, "video_1"));
  EXPECT_NE(a, random_proposals(cfg, "video_2"));
  for (const Segment& s : a) {
    EXPECT_GE(s.center, 0.05);
    EXPECT_LE(s.center, 0.95);
    EXPECT_GE(s.length, 0.1);
    EXPECT_LE(s.length, 0.8);
  }
}

TEST(FixedPoint, CardinalityAndIdempotence) {
  // A zero localizer head sends every caption to the full-video anchor, so
  // (0.5, 1) is a fixed point of the round.
  model::Model<float> m(tiny(), 5);
  for (const auto& n : {"localizer.head.weight", "localizer.head.bias"}) m.parameters().get(n).value().fill(0);
  Tape<float> tape;
  const auto video = noise({10, 7}, 6), audio = noise({10, 4}, 7);
  const auto ctx = m.encode_contexts(tape, &video, &audio);
  const auto segments = random_proposals(InferenceConfig{}, "v");
  const auto out = fixed_point_round(m, ctx, segments);
  EXPECT_EQ(out.size(), 15u);
  for (const auto& p : out) EXPECT_EQ(p.segment, (Segment{0.5, 1.0}));

  const auto fixed = fixed_point_round(m, ctx, {Segment{0.5, 1.0}});
  ASSERT_EQ(fixed.size(), 1u);
  EXPECT_EQ(fixed[0].segment, (Segment{0.5, 1.0}));
  EXPECT_LE(fixed[0].score, 0.0);
}

TEST(DenseCaptions, DeterministicAndBounded) {
  model::Model<float> m(tiny(), 8);
  Tape<float> tape;
  const auto video = noise({10, 7}, 9), audio = noise({10, 4}, 10);
  const auto ctx = m.encode_contexts(tape, &video, &audio);
  const auto vocab = toy_vocab();
  InferenceConfig cfg;
  const auto a = generate_dense_captions(m, ctx, "vid", 120.0, vocab, cfg);
  const auto b = generate_dense_captions(m, ctx, "vid", 120.0, vocab, cfg);
  ASSERT_GE(a.size(), 1u);
  ASSERT_LE(a.size(), 15u);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].start, b[i].start);
    EXPECT_EQ(a[i].end, b[i].end);
    EXPECT_EQ(a[i].sentence, b[i].sentence);
    EXPECT_GE(a[i].start, 0.0);
    EXPECT_LE(a[i].end, 120.0);
    EXPECT_LT(a[i].start, a[i].end);
  }
}

TEST(Predictions, JsonRoundTrip) {
  Predictions p;
  p["v1"] = {{1.5, 3.25, "a man walks"}, {0, 10, "b"}};
  p["v2"] = {};
  const std::string text = predictions_to_json(p);
  const Predictions back = predictions_from_json(text);
  EXPECT_EQ(predictions_to_json(back), text);
  ASSERT_EQ(back.at("v1").size(), 2u);
  EXPECT_EQ(back.at("v1")[0].sentence, "a man walks");
  EXPECT_EQ(back.at("v1")[0].end, 3.25);
  EXPECT_THROW(predictions_from_json(R"({"v": [{"timestamp": [1], "sentence": "x"}]})"), DataError);
}

TEST(Config, Validation) {
  InferenceConfig c;
  c.proposals = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = InferenceConfig{};
  c.iou_threshold = 1.5;
  EXPECT_THROW(c.validate(), InvalidArgument);
}
