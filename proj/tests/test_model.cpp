#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "dcav/data.hpp"
#include "dcav/model.hpp"

using namespace dcav;
using namespace dcav::model;
using T = Tensor<double>;

namespace {

T random_tensor(Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  T t(std::move(shape));
  for (auto& x : t.storage()) x = n(rng);
  return t;
}

void expect_near(const T& got, const T& want, double tol) {
  ASSERT_EQ(got.shape(), want.shape());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "index " << i;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

ModelConfig tiny(Modality m = Modality::both, Fusion f = Fusion::mutan) {
  ModelConfig c;
  c.hidden = 6;
  c.embed = 5;
  c.video_dim = 7;
  c.audio_dim = 4;
  c.audio_proj = 3;
  c.vocab_size = 12;
  c.modality = m;
  c.fusion = f;
  c.mutan_rank = 4;
  c.mutan_out_rank = 3;
  c.mutan_out = 5;
  c.max_caption_len = 8;
  return c;
}

template <typename Real>
Contexts<Real> random_contexts(const Model<Real>& m, Tape<Real>& tape, std::mt19937_64& rng,
                               std::size_t frames = 9) {
  const Tensor<Real> v = random_tensor({frames, m.config().video_dim}, rng).template cast<Real>();
  const Tensor<Real> a = random_tensor({frames, m.config().audio_dim}, rng).template cast<Real>();
  return m.encode_contexts(tape, m.config().uses_video() ? &v : nullptr, m.config().uses_audio() ? &a : nullptr);
}

void zero_all(ParameterStore<double>& store) {
  for (auto& p : store) p->value().fill(0.0);
}

}  // namespace

// --- sequence encoders -----------------------------------------------------

TEST(GruCell, ZeroParametersHalveTheState) {
  ParameterStore<double> store;
  std::mt19937_64 rng(1);
  Gru<double> gru(store, "g", 3, 4, rng);
  zero_all(store);
  Tape<double> tape;
  const auto h = tape.constant(T::row({1, -2, 0.5, 4}));
  const auto next = gru.step(tape, tape.constant(T::row({3, 1, 2})), h);
  expect_near(next.value(), T::row({0.5, -1, 0.25, 2}), 1e-15);
  const auto from_zero = gru.step(tape, tape.constant(T::row({3, 1, 2})), tape.constant(T({1, 4})));
  expect_near(from_zero.value(), T({1, 4}), 0);
}

TEST(GruCell, MatchesHandWrittenEquations) {
  ParameterStore<double> store;
  std::mt19937_64 rng(2);
  const std::size_t d = 3, k = 2;
  Gru<double> gru(store, "g", d, k, rng);
  store.get("g.bias").value() = random_tensor({1, 3 * k}, rng);
  const T x = random_tensor({1, d}, rng), h = random_tensor({1, k}, rng);
  const T& w = store.get("g.w").value();
  const T& ug = store.get("g.u_gates").value();
  const T& uc = store.get("g.u_candidate").value();
  const T& b = store.get("g.bias").value();
  // Pre-activation of column j of gate block g ∈ {0: update, 1: reset, 2: candidate}.
  const auto input_part = [&](std::size_t g, std::size_t j) {
    double s = b[g * k + j];
    for (std::size_t i = 0; i < d; ++i) s += x[i] * w.at(i, g * k + j);
    return s;
  };
  std::vector<double> z(k), r(k);
  for (std::size_t j = 0; j < k; ++j) {
    double zs = input_part(0, j), rs = input_part(1, j);
    for (std::size_t i = 0; i < k; ++i) {
      zs += h[i] * ug.at(i, j);
      rs += h[i] * ug.at(i, k + j);
    }
    z[j] = sig(zs);
    r[j] = sig(rs);
  }
  T expected({1, k});
  for (std::size_t j = 0; j < k; ++j) {
    double c = input_part(2, j);
    for (std::size_t i = 0; i < k; ++i) c += r[i] * h[i] * uc.at(i, j);
    expected[j] = (1 - z[j]) * h[j] + z[j] * std::tanh(c);
  }
  Tape<double> tape;
  expect_near(gru.step(tape, tape.constant(x), tape.constant(h)).value(), expected, 1e-12);
}

TEST(GruEncoder, SingleStepOutputIsFinalState) {
  ParameterStore<double> store;
  std::mt19937_64 rng(3);
  Gru<double> gru(store, "g", 3, 4, rng);
  Tape<double> tape;
  const auto enc = gru.encode(tape, tape.constant(random_tensor({1, 3}, rng)));
  EXPECT_EQ(enc.outputs.shape(), (Shape{1, 4}));
  EXPECT_EQ(enc.outputs.value(), enc.final.value());
}

TEST(GruEncoder, OutputsMatchRepeatedSteps) {
  ParameterStore<double> store;
  std::mt19937_64 rng(4);
  Gru<double> gru(store, "g", 3, 4, rng);
  const T inputs = random_tensor({5, 3}, rng);
  Tape<double> tape;
  const auto enc = gru.encode(tape, tape.constant(inputs));
  Var<double> h = tape.constant(T({1, 4}));
  for (std::size_t t = 0; t < 5; ++t) {
    h = gru.step(tape, tape.constant(inputs.row_at(t)), h);
    expect_near(enc.outputs.value().row_at(t), h.value(), 1e-12);
  }
  expect_near(enc.final.value(), h.value(), 1e-12);
}

TEST(CaptionEncoder, ShapeAndRepeatedIds) {
  Model<double> m(tiny(), 1);
  Tape<double> tape;
  const std::vector<int> ids{1, 2};
  EXPECT_EQ(m.encode_caption(tape, ids).outputs.shape(), (Shape{2, 6}));

  ParameterStore<double> store;
  std::mt19937_64 rng(5);
  Embedding<double> emb(store, "e", 10, 512, rng);
  const std::vector<int> rep{3, 7, 3};
  const T rows = emb(tape, rep).value();
  EXPECT_EQ(rows.shape(), (Shape{3, 512}));
  EXPECT_EQ(rows.row_at(0), rows.row_at(2));
}

// --- attention and localizer ----------------------------------------------

TEST(Attention, SingletonMemoryReturnsItsRow) {
  std::mt19937_64 rng(6);
  Tape<double> tape;
  const T mem = random_tensor({1, 4}, rng);
  const auto out = attend(tape, tape.constant(random_tensor({1, 4}, rng)),
                          tape.constant(random_tensor({4, 4}, rng)), tape.constant(mem));
  expect_near(out.value(), mem, 1e-15);
}

TEST(Attention, ZeroAlphaGivesColumnMean) {
  std::mt19937_64 rng(7);
  Tape<double> tape;
  const T mem = random_tensor({5, 3}, rng);
  Var<double> weights;
  const auto out = attend(tape, tape.constant(random_tensor({1, 3}, rng)), tape.constant(T({3, 3})),
                          tape.constant(mem), &weights);
  T mean({1, 3});
  for (std::size_t t = 0; t < 5; ++t) {
    for (std::size_t j = 0; j < 3; ++j) mean[j] += mem.at(t, j) / 5;
  }
  expect_near(out.value(), mean, 1e-12);
  for (double w : weights.value().data()) EXPECT_NEAR(w, 0.2, 1e-15);
}

TEST(AttentionFusion, ZeroInputsGiveZeroVector) {
  ParameterStore<double> store;
  std::mt19937_64 rng(8);
  Linear<double> fc(store, "fc", 3 * 512, 512, rng);
  Tape<double> tape;
  std::vector<Var<double>> parts(3, tape.constant(T({1, 512})));
  const auto out = attention_feature_fusion<double>(tape, parts, fc);
  EXPECT_EQ(out.shape(), (Shape{1, 1536}));
  for (double v : out.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(AttentionFusion, ZeroPartZeroesProductBlock) {
  ParameterStore<double> store;
  std::mt19937_64 rng(9);
  Linear<double> fc(store, "fc", 9, 3, rng);
  Tape<double> tape;
  std::vector<Var<double>> parts{tape.constant(random_tensor({1, 3}, rng)), tape.constant(T({1, 3})),
                                 tape.constant(random_tensor({1, 3}, rng))};
  const T out = attention_feature_fusion<double>(tape, parts, fc).value();
  for (std::size_t j = 3; j < 6; ++j) EXPECT_EQ(out[j], 0.0);
}

TEST(Anchors, PyramidAndTieBreak) {
  const auto& a = anchors();
  EXPECT_EQ(a[0], (Segment{0.5, 1.0}));
  EXPECT_EQ(a[7], (Segment{0.0625, 0.125}));
  EXPECT_EQ(best_anchor({0.5, 1.0}), 0u);
  EXPECT_EQ(best_anchor({0.0625, 0.125}), 7u);
}

TEST(Localizer, ZeroHeadPicksFirstAnchor) {
  Model<double> m(tiny(), 3);
  for (const auto& n : {"localizer.head.weight", "localizer.head.bias"}) m.parameters().get(n).value().fill(0);
  std::mt19937_64 rng(10);
  Tape<double> tape;
  const auto ctx = random_contexts(m, tape, rng);
  const std::vector<int> cap{1, 5, 6, 2};
  const auto out = m.localize(tape, ctx, cap);
  EXPECT_EQ(out.anchor, 0u);
  EXPECT_EQ(out.value(), (Segment{0.5, 1.0}));
  EXPECT_EQ(out.fused.shape(), (Shape{1, 18}));
}

TEST(Localizer, OffsetIsClampedIntoRange) {
  Model<double> m(tiny(), 3);
  m.parameters().get("localizer.head.weight").value().fill(0);
  T& bias = m.parameters().get("localizer.head.bias").value();
  bias.fill(0);
  bias[7] = 1.0;                       // anchor (0.0625, 0.125)
  bias[kAnchorCount + 2 * 7] = -0.2;   // Δc
  std::mt19937_64 rng(11);
  Tape<double> tape;
  const auto ctx = random_contexts(m, tape, rng);
  const std::vector<int> cap{1, 4, 2};
  const auto out = m.localize(tape, ctx, cap);
  EXPECT_EQ(out.anchor, 7u);
  EXPECT_EQ(out.value().center, 0.0);
  EXPECT_DOUBLE_EQ(out.value().length, 0.125);
}

TEST(Localizer, UnimodalFusesTwoAttentionParts) {
  Model<double> m(tiny(Modality::audio), 3);
  std::mt19937_64 rng(12);
  Tape<double> tape;
  const auto ctx = random_contexts(m, tape, rng);
  EXPECT_FALSE(ctx.video.has_value());
  const std::vector<int> cap{1, 4, 2};
  // sum | product | fc(concat), each k wide.
  EXPECT_EQ(m.localize(tape, ctx, cap).fused.shape(), (Shape{1, 18}));
}

// --- context fusion ----------------------------------------------------------

TEST(MultiplicativeMixture, Arithmetic) {
  Tape<double> tape;
  auto v = tape.constant(T::row({1, 2}));
  auto a = tape.constant(T::row({3, 4}));
  expect_near(multiplicative_mixture(tape, v, a).value(), T::row({4, 6, 1, 2, 3, 4}), 0);
  expect_near(multiplicative_mixture(tape, v, tape.constant(T({1, 2}))).value(), T::row({1, 2, 1, 2, 0, 0}), 0);
  const auto z = tape.constant(T({1, 2}));
  expect_near(multiplicative_mixture(tape, z, z).value(), T({1, 6}), 0);
}

TEST(ContextFusion, Arithmetic) {
  ParameterStore<double> store;
  std::mt19937_64 rng(13);
  Linear<double> fc(store, "fc", 4, 2, rng);
  store.get("fc.weight").value().fill(0);
  Tape<double> tape;
  const auto out = multimodal_context_fusion(tape, tape.constant(T::row({1, 0})), tape.constant(T::row({0, 1})), fc);
  expect_near(out.value(), T::row({1, 1, 0, 0, 0, 0}), 0);
  const auto z = tape.constant(T({1, 2}));
  expect_near(multimodal_context_fusion(tape, z, z, fc).value(), T({1, 6}), 0);
}

namespace {

struct MutanInstance {
  ParameterStore<double> store;
  MutanParams<double> p;
  MutanInstance(std::size_t k, std::size_t dt, std::size_t d_o, std::size_t k_out, std::mt19937_64& rng) {
    p.w_video = &store.create("wv", random_tensor({k, dt}, rng, 0.5));
    p.w_audio = &store.create("wa", random_tensor({k, dt}, rng, 0.5));
    p.core = &store.create("core", random_tensor({dt, dt, d_o}, rng, 0.5));
    p.w_out = &store.create("wo", random_tensor({d_o, k_out}, rng, 0.5));
  }
};

// out_j = Σ_o (Σ_{p,q} core[p,q,o]·v″_p·a″_q)·W_o[o,j]
T mutan_loops(const T& v, const T& a, const MutanParams<double>& p) {
  const T& wv = p.w_video->value();
  const T& wa = p.w_audio->value();
  const T& core = p.core->value();
  const T& wo = p.w_out->value();
  const std::size_t k = wv.rows(), dt = wv.cols(), d_o = core.dim(2), k_out = wo.cols();
  std::vector<double> vv(dt), aa(dt), c(d_o, 0.0);
  for (std::size_t j = 0; j < dt; ++j) {
    double sv = 0, sa = 0;
    for (std::size_t i = 0; i < k; ++i) {
      sv += v[i] * wv.at(i, j);
      sa += a[i] * wa.at(i, j);
    }
    vv[j] = std::tanh(sv);
    aa[j] = std::tanh(sa);
  }
  for (std::size_t p1 = 0; p1 < dt; ++p1) {
    for (std::size_t q = 0; q < dt; ++q) {
      for (std::size_t o = 0; o < d_o; ++o) c[o] += core.at(p1, q, o) * vv[p1] * aa[q];
    }
  }
  T out({1, k_out});
  for (std::size_t j = 0; j < k_out; ++j) {
    for (std::size_t o = 0; o < d_o; ++o) out[j] += c[o] * wo.at(o, j);
  }
  return out;
}

}  // namespace

TEST(Mutan, MatchesTripleLoopContraction) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(1, 6);
    const std::size_t k = dim(rng), dt = dim(rng), d_o = dim(rng), k_out = dim(rng);
    MutanInstance inst(k, dt, d_o, k_out, rng);
    const T v = random_tensor({1, k}, rng), a = random_tensor({1, k}, rng);
    Tape<double> tape;
    const T got = mutan_fusion(tape, tape.constant(v), tape.constant(a), inst.p).value();
    expect_near(got, mutan_loops(v, a, inst.p), 1e-6);
  }
}

TEST(Mutan, ZeroVideoOrCoreGivesZero) {
  std::mt19937_64 rng(15);
  MutanInstance inst(4, 3, 2, 5, rng);
  Tape<double> tape;
  const auto a = tape.constant(random_tensor({1, 4}, rng));
  for (double x : mutan_fusion(tape, tape.constant(T({1, 4})), a, inst.p).value().data()) EXPECT_EQ(x, 0.0);
  inst.p.core->value().fill(0);
  const auto v = tape.constant(random_tensor({1, 4}, rng));
  for (double x : mutan_fusion(tape, v, a, inst.p).value().data()) EXPECT_EQ(x, 0.0);
}

// --- caption generator -------------------------------------------------------

TEST(SoftMask, PeakValueAtCenter) {
  // T = 1 puts the single grid point at t = 0.5 = c.
  Tape<double> tape;
  const auto m = soft_mask(tape.constant(T::row({0.5, 0.5})), 1, 50.0);
  EXPECT_NEAR(m.value()[0], 2 * sig(50 * 0.5 / 2) - 1, 1e-15);
  EXPECT_NEAR(m.value()[0], 0.999993, 1e-6);
}

TEST(SoftMask, SymmetricAboutCenter) {
  Tape<double> tape;
  const std::size_t frames = 64;
  const T m = soft_mask(tape.constant(T::row({0.5, 0.3})), frames, 40.0).value();
  for (std::size_t i = 0; i < frames / 2; ++i) EXPECT_NEAR(m[i], m[frames - 1 - i], 1e-12);
}

TEST(SoftMask, SharpLimitApproachesIndicator) {
  Tape<double> tape;
  const std::size_t frames = 200;
  const Segment s{0.45, 0.4};
  const T m = soft_mask(tape.constant(T::row({s.center, s.length})), frames, 100.0).value();
  for (std::size_t i = 0; i < frames; ++i) {
    const double t = (i + 0.5) / frames;
    if (std::min(std::abs(t - s.start()), std::abs(t - s.end())) < 0.1) continue;
    const double indicator = t > s.start() && t < s.end() ? 1.0 : 0.0;
    EXPECT_NEAR(m[i], indicator, 1e-3) << "t = " << t;
  }
}

TEST(SoftMask, RisesThenFalls) {
  Tape<double> tape;
  const T m = soft_mask(tape.constant(T::row({0.4, 0.5})), 64, 20.0).value();
  std::size_t peak = 0;
  for (std::size_t i = 1; i < 64; ++i) {
    if (m[i] > m[peak]) peak = i;
  }
  for (std::size_t i = 1; i <= peak; ++i) EXPECT_GT(m[i], m[i - 1]);
  for (std::size_t i = peak + 1; i < 64; ++i) EXPECT_LT(m[i], m[i - 1]);
}

TEST(WeightedMean, OnesGiveColumnMeanAndOneHotSelects) {
  std::mt19937_64 rng(16);
  const T rows = random_tensor({4, 3}, rng);
  Tape<double> tape;
  const T mean = weighted_mean(tape.constant(T({1, 4}, 1.0)), tape.constant(rows)).value();
  for (std::size_t j = 0; j < 3; ++j) {
    double want = 0;
    for (std::size_t t = 0; t < 4; ++t) want += rows.at(t, j) / 4;
    EXPECT_NEAR(mean[j], want, 1e-12);
  }
  T hot({1, 4});
  hot[2] = 1;
  EXPECT_EQ(weighted_mean(tape.constant(hot), tape.constant(rows)).value(), rows.row_at(2));
  EXPECT_THROW(weighted_mean(tape.constant(T({1, 4})), tape.constant(rows)), InvalidArgument);
}

TEST(ClipContext, SharpMaskMatchesHardClip) {
  std::mt19937_64 rng(17);
  const T o = random_tensor({64, 5}, rng);
  Tape<double> tape;
  const T clipped = clip_context(tape, tape.constant(T::row({0.5, 0.5})), tape.constant(o), 1000.0).value();
  for (std::size_t j = 0; j < 5; ++j) {
    double want = 0;
    for (std::size_t t = 16; t < 48; ++t) want += o.at(t, j) / 32;
    EXPECT_NEAR(clipped[j], want, 1e-2);
  }
}

TEST(Generator, LogitShapesAndLoss) {
  for (Fusion f : {Fusion::mixture, Fusion::context, Fusion::mutan}) {
    Model<double> m(tiny(Modality::both, f), 4);
    std::mt19937_64 rng(18);
    Tape<double> tape;
    const auto ctx = random_contexts(m, tape, rng);
    const std::vector<int> cap{1, 5, 7, 9, 2};
    Var<double> logits;
    const auto seg = tape.constant(T::row({0.5, 1.0}));
    const auto loss = m.caption_loss(tape, ctx, seg, cap, &logits);
    EXPECT_EQ(logits.shape(), (Shape{4, 12}));
    const std::vector<int> targets(cap.begin() + 1, cap.end());
    EXPECT_NEAR(loss.value()[0], cross_entropy(logits, std::span<const int>(targets)).value()[0] / 4, 1e-12);
  }
}

TEST(Generator, GreedyDecodingIsDeterministic) {
  Model<double> m(tiny(), 5);
  std::mt19937_64 rng(19);
  Tape<double> tape;
  const auto ctx = random_contexts(m, tape, rng);
  const auto a = m.greedy_caption(ctx, {0.3, 0.4});
  const auto b = m.greedy_caption(ctx, {0.3, 0.4});
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.score, b.score);
  EXPECT_EQ(a.tokens.front(), data::Vocabulary::kBos);
  EXPECT_LE(a.tokens.size(), 1 + m.config().max_caption_len);
  EXPECT_LE(a.score, 0.0);
}

TEST(Model, ParameterPartitions) {
  Model<float> m(tiny(), 1);
  const auto gen = m.generator_parameter_names();
  const auto loc = m.localizer_parameter_names();
  EXPECT_EQ(gen.size() + loc.size(), m.all_parameter_names().size());
  for (const auto& n : loc) EXPECT_EQ(n.rfind("localizer.", 0), 0u) << n;
  for (const auto& n : gen) EXPECT_NE(n.rfind("localizer.", 0), 0u) << n;
}

TEST(Model, SameSeedSameWeights) {
  Model<float> a(tiny(), 9), b(tiny(), 9), c(tiny(), 10);
  bool differs = false;
  for (const auto& n : a.all_parameter_names()) {
    EXPECT_EQ(a.parameters().get(n).value(), b.parameters().get(n).value());
    differs |= !(a.parameters().get(n).value() == c.parameters().get(n).value());
  }
  EXPECT_TRUE(differs);
}
