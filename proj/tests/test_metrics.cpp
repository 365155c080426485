#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "dcav/metrics.hpp"

using namespace dcav;
using namespace dcav::metrics;

namespace {

Tokens toks(const std::string& s) { return data::tokenize(s); }

// ---- straight-line oracles: lists instead of maps, no shared helpers ----

std::vector<Tokens> grams(const Tokens& t, std::size_t n) {
  std::vector<Tokens> out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) out.emplace_back(t.begin() + i, t.begin() + i + n);
  return out;
}

double occurrences(const std::vector<Tokens>& list, const Tokens& g) {
  return static_cast<double>(std::count(list.begin(), list.end(), g));
}

double oracle_bleu(const Tokens& cand, const std::vector<Tokens>& refs, int n) {
  double logp = 0;
  for (int k = 1; k <= n; ++k) {
    const auto cg = grams(cand, k);
    std::vector<Tokens> distinct;
    for (const auto& g : cg) {
      if (std::find(distinct.begin(), distinct.end(), g) == distinct.end()) distinct.push_back(g);
    }
    double hit = 0;
    for (const auto& g : distinct) {
      double best = 0;
      for (const auto& r : refs) best = std::max(best, occurrences(grams(r, k), g));
      hit += std::min(occurrences(cg, g), best);
    }
    const double total = cg.empty() ? 1.0 : static_cast<double>(cg.size());
    logp += std::log((hit == 0 ? 1e-9 : hit) / total);
  }
  std::size_t r = refs[0].size();
  for (const auto& ref : refs) {
    const long d = std::labs(static_cast<long>(ref.size()) - static_cast<long>(cand.size()));
    const long bd = std::labs(static_cast<long>(r) - static_cast<long>(cand.size()));
    if (d < bd || (d == bd && ref.size() < r)) r = ref.size();
  }
  const double c = static_cast<double>(cand.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / c);
  return bp * std::exp(logp / n);
}

std::size_t oracle_lcs(const Tokens& a, const Tokens& b) {
  std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = a.size(); i-- > 0;) {
    for (std::size_t j = b.size(); j-- > 0;) {
      t[i][j] = a[i] == b[j] ? 1 + t[i + 1][j + 1] : std::max(t[i + 1][j], t[i][j + 1]);
    }
  }
  return t[0][0];
}

double oracle_rouge(const Tokens& cand, const std::vector<Tokens>& refs) {
  double p = 0, r = 0;
  for (const auto& ref : refs) {
    const double l = static_cast<double>(oracle_lcs(cand, ref));
    p = std::max(p, l / cand.size());
    r = std::max(r, l / ref.size());
  }
  if (p == 0 || r == 0) return 0;
  const double b = 1.2;
  return (1 + b * b) * p * r / (r + b * b * p);
}

std::vector<double> oracle_cider(const std::vector<CiderItem>& items) {
  const double n_docs = static_cast<double>(items.size());
  auto df = [&](const Tokens& g) {
    double d = 0;
    for (const auto& it : items) {
      bool found = false;
      for (const auto& r : it.references) found = found || occurrences(grams(r, g.size()), g) > 0;
      d += found ? 1 : 0;
    }
    return d;
  };
  auto weights = [&](const Tokens& t, std::size_t n, std::vector<Tokens>& keys, std::vector<double>& w) {
    for (const auto& g : grams(t, n)) {
      if (std::find(keys.begin(), keys.end(), g) != keys.end()) continue;
      keys.push_back(g);
      w.push_back(occurrences(grams(t, n), g) * (std::log(n_docs) - std::log(std::max(1.0, df(g)))));
    }
  };
  std::vector<double> out;
  for (const auto& it : items) {
    double total = 0;
    for (const auto& ref : it.references) {
      const double delta = static_cast<double>(it.candidate.size()) - static_cast<double>(ref.size());
      for (std::size_t n = 1; n <= 4; ++n) {
        std::vector<Tokens> ck, rk;
        std::vector<double> cw, rw;
        weights(it.candidate, n, ck, cw);
        weights(ref, n, rk, rw);
        double dot = 0, cn = 0, rn = 0;
        for (std::size_t i = 0; i < ck.size(); ++i) {
          cn += cw[i] * cw[i];
          const auto pos = std::find(rk.begin(), rk.end(), ck[i]);
          if (pos != rk.end()) {
            const double v = rw[static_cast<std::size_t>(pos - rk.begin())];
            dot += std::min(cw[i], v) * v;
          }
        }
        for (double v : rw) rn += v * v;
        double val = dot;
        if (cn != 0 && rn != 0) val /= std::sqrt(cn) * std::sqrt(rn);
        total += val * std::exp(-delta * delta / 72.0) / 4;
      }
    }
    out.push_back(it.references.empty() ? 0.0 : 10 * total / static_cast<double>(it.references.size()));
  }
  return out;
}

std::vector<std::string> kWords{"a", "man", "dog", "runs", "the", "ball", "jumps", "over", "red", "fast"};

Tokens random_sentence(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> len(1, 9), word(0, kWords.size() - 1);
  Tokens t(len(rng));
  for (auto& w : t) w = kWords[word(rng)];
  return t;
}

}  // namespace

TEST(Bleu, Examples) {
  EXPECT_EQ(bleu_n(toks("the cat sat"), {toks("the cat sat")}, 1), 1.0);
  EXPECT_NEAR(bleu_n(toks("dog runs"), {toks("the cat sat")}, 1), 0.0, 1e-8);
  EXPECT_NEAR(bleu_n(toks("the cat sat"), {toks("the cat sat down")}, 1), std::exp(1.0 - 4.0 / 3.0), 1e-12);
  EXPECT_NEAR(std::exp(1.0 - 4.0 / 3.0), 0.7165, 5e-5);
  EXPECT_THROW(bleu_n(toks("a"), {}, 1), InvalidArgument);
}

TEST(Bleu, MonotoneInOrderOnPrefixFamily) {
  const Tokens ref = toks("a man throws the red ball to the dog");
  const Tokens cand = toks("a man throws the ball to a dog");
  for (int n = 2; n <= 4; ++n) EXPECT_LE(bleu_n(cand, {ref}, n), bleu_n(cand, {ref}, n - 1));
}

TEST(Rouge, Examples) {
  EXPECT_EQ(rouge_l(toks("a b c"), {toks("a b c")}), 1.0);
  EXPECT_EQ(rouge_l(toks("a b c"), {toks("x y z")}), 0.0);
  EXPECT_EQ(lcs_length(toks("a b c d"), toks("a c d")), 3u);
  // P = 3/3 (candidate "a c d"), R = 3/4.
  const double p = 1.0, r = 0.75, b2 = 1.44;
  const double want = (1 + b2) * p * r / (r + b2 * p);
  EXPECT_NEAR(rouge_l(toks("a c d"), {toks("a b c d")}), want, 1e-12);
  EXPECT_NEAR(want, 0.8356, 5e-5);
}

TEST(Cider, IdentityAndDisjoint) {
  // Four words so every order 1..4 has n-grams; each is absent from item 1's references.
  const std::vector<CiderItem> items{{toks("red ball jumps over"), {toks("red ball jumps over")}},
                                     {toks("a dog runs"), {toks("a man runs")}}};
  const auto s = cider_d(items);
  EXPECT_NEAR(s[0], 10.0, 1e-12);
  const std::vector<CiderItem> disjoint{{toks("x y z"), {toks("red ball jumps")}},
                                        {toks("a dog runs"), {toks("a man runs")}}};
  EXPECT_EQ(cider_d(disjoint)[0], 0.0);
  EXPECT_THROW(cider_d({items[0]}), InvalidArgument);
}

TEST(DualImplementation, BleuRougeCiderAgree) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> nrefs(1, 3);
  for (int trial = 0; trial < 200; ++trial) {
    const Tokens cand = random_sentence(rng);
    std::vector<Tokens> refs(static_cast<std::size_t>(nrefs(rng)));
    for (auto& r : refs) r = random_sentence(rng);
    for (int n = 1; n <= 4; ++n) EXPECT_NEAR(bleu_n(cand, refs, n), oracle_bleu(cand, refs, n), 1e-6);
    EXPECT_NEAR(rouge_l(cand, refs), oracle_rouge(cand, refs), 1e-6);
  }
  // The toy three-sentence corpus, then random corpora.
  const std::vector<CiderItem> toy{{toks("a man runs fast"), {toks("a man runs")}},
                                   {toks("the dog jumps"), {toks("the dog jumps over the ball")}},
                                   {toks("a red ball"), {toks("the red ball")}}};
  const auto got = cider_d(toy), want = oracle_cider(toy);
  for (std::size_t i = 0; i < toy.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-6);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<CiderItem> items(static_cast<std::size_t>(nrefs(rng) + 1));
    for (auto& it : items) {
      it.candidate = random_sentence(rng);
      it.references.resize(static_cast<std::size_t>(nrefs(rng)));
      for (auto& r : it.references) r = random_sentence(rng);
    }
    const auto a = cider_d(items), b = oracle_cider(items);
    for (std::size_t i = 0; i < items.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
  }
}

TEST(Metrics, ReferenceListOrderDoesNotMatter) {
  const Tokens cand = toks("a man runs over the ball");
  std::vector<Tokens> refs{toks("a man runs"), toks("the dog runs over the red ball"), toks("man runs fast")};
  const double b = bleu_n(cand, refs, 4), r = rouge_l(cand, refs);
  std::reverse(refs.begin(), refs.end());
  EXPECT_EQ(bleu_n(cand, refs, 4), b);
  EXPECT_EQ(rouge_l(cand, refs), r);
}

namespace {

data::DatasetIndex two_video_gt() {
  return data::parse_annotations(
      R"({"v1": {"duration": 10, "timestamps": [[0, 5], [5, 10]], "sentences": ["a man runs", "a dog jumps"]},
          "v2": {"duration": 20, "timestamps": [[0, 20]], "sentences": ["the red ball"]}})",
      data::Split::val);
}

}  // namespace

TEST(EvaluateDense, IdenticalPredictionsAreMaximal) {
  const auto gt = two_video_gt();
  inference::Predictions p;
  for (const auto& v : gt.videos) {
    for (const auto& e : v.events) p[v.id].push_back({e.start, e.end, e.sentence});
  }
  const auto r = evaluate_dense(p, gt);
  EXPECT_EQ(r.miou, 1.0);
  EXPECT_EQ(r.predictions, 3u);
  for (const auto& [t, s] : r.per_threshold) {
    EXPECT_NEAR(s.bleu[0], 1.0, 1e-12) << t;
    EXPECT_NEAR(s.rouge_l, 1.0, 1e-12) << t;
  }
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_EQ(j["mIoU"].get<double>(), 100.0);
  EXPECT_TRUE(j["METEOR"].is_null());
  EXPECT_TRUE(j["SPICE"].is_null());
}

TEST(EvaluateDense, NoPredictionsIsAllZero) {
  const auto r = evaluate_dense({}, two_video_gt());
  EXPECT_EQ(r.miou, 0.0);
  EXPECT_EQ(r.predictions, 0u);
  for (const auto& [t, s] : r.per_threshold) {
    for (double b : s.bleu) EXPECT_EQ(b, 0.0);
    EXPECT_EQ(s.rouge_l, 0.0);
    EXPECT_EQ(s.cider, 0.0);
  }
}

TEST(EvaluateDense, TwoVideoHandTrace) {
  // v1: prediction [0,4] vs GT [0,5] has tIoU 0.8, vs [5,10] 0; sentence "a man runs".
  // v2: prediction [0,5] vs GT [0,20] has tIoU 0.25; sentence "the red ball".
  const auto gt = two_video_gt();
  inference::Predictions p;
  p["v1"] = {{0, 4, "a man runs"}};
  p["v2"] = {{0, 5, "the red ball"}};
  const auto r = evaluate_dense(p, gt, {0.3, 0.5, 0.7, 0.9});
  // mIoU over three GT events: (0.8 + 0 + 0.25) / 3.
  EXPECT_NEAR(r.miou, 1.05 / 3, 1e-12);
  // Thresholds 0.3..0.7: v1's prediction matches, v2's does not; averaged over 2 predictions.
  for (double t : {0.3, 0.5, 0.7}) EXPECT_NEAR(r.per_threshold.at(t).bleu[0], 0.5, 1e-12) << t;
  EXPECT_EQ(r.per_threshold.at(0.9).bleu[0], 0.0);
  EXPECT_NEAR(r.mean.bleu[0], 0.375, 1e-12);
  EXPECT_NEAR(r.mean.rouge_l, 0.375, 1e-12);
}

TEST(EvaluateDense, ZeroThresholdFullVideoIsPlainCaptioning) {
  const auto gt = data::parse_annotations(
      R"({"v1": {"duration": 10, "timestamps": [[0, 10]], "sentences": ["a man runs over the ball"]},
          "v2": {"duration": 10, "timestamps": [[0, 10]], "sentences": ["the dog jumps"]}})",
      data::Split::val);
  inference::Predictions p;
  p["v1"] = {{0, 10, "a man runs"}};
  p["v2"] = {{0, 10, "a dog jumps fast"}};
  const auto r = evaluate_dense(p, gt, {0.0});
  const std::vector<CiderItem> items{{toks("a man runs"), {toks("a man runs over the ball")}},
                                     {toks("a dog jumps fast"), {toks("the dog jumps")}}};
  EXPECT_NEAR(r.mean.cider, cider(items), 1e-12);
  EXPECT_NEAR(r.mean.bleu[3],
              (bleu_n(items[0].candidate, items[0].references, 4) + bleu_n(items[1].candidate, items[1].references, 4)) / 2,
              1e-12);
}

TEST(IntervalIou, Basics) {
  EXPECT_EQ(interval_iou(0, 10, 0, 10), 1.0);
  EXPECT_EQ(interval_iou(0, 5, 5, 10), 0.0);
  EXPECT_NEAR(interval_iou(0, 4, 0, 5), 0.8, 1e-12);
}
