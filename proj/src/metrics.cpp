#include "dcav/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "dcav/error.hpp"

namespace dcav::metrics {

namespace {

using Ngram = std::vector<std::string>;
using NgramCounts = std::map<Ngram, double>;

NgramCounts count_ngrams(const Tokens& tokens, std::size_t n) {
  NgramCounts out;
  if (tokens.size() < n) return out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    out[Ngram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
              tokens.begin() + static_cast<std::ptrdiff_t>(i + n))] += 1;
  }
  return out;
}

}  // namespace

double bleu_n(const Tokens& candidate, const std::vector<Tokens>& references, int n) {
  if (references.empty()) throw InvalidArgument("bleu: empty reference set");
  if (n < 1 || n > 4) throw InvalidArgument("bleu: order must lie in 1..4");
  if (candidate.empty()) return 0.0;
  double log_sum = 0;
  for (int order = 1; order <= n; ++order) {
    const NgramCounts cand = count_ngrams(candidate, static_cast<std::size_t>(order));
    NgramCounts max_ref;
    for (const Tokens& ref : references) {
      for (const auto& [g, c] : count_ngrams(ref, static_cast<std::size_t>(order))) {
        max_ref[g] = std::max(max_ref[g], c);
      }
    }
    double matched = 0;
    double total = 0;
    for (const auto& [g, c] : cand) {
      total += c;
      const auto it = max_ref.find(g);
      if (it != max_ref.end()) matched += std::min(c, it->second);
    }
    if (matched == 0) matched = 1e-9;
    if (total == 0) total = 1;
    log_sum += std::log(matched / total);
  }
  const double c = static_cast<double>(candidate.size());
  double r = static_cast<double>(references.front().size());
  for (const Tokens& ref : references) {
    const double len = static_cast<double>(ref.size());
    const double d = std::abs(len - c), best = std::abs(r - c);
    if (d < best || (d == best && len < r)) r = len;
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / n);
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const Tokens& candidate, const std::vector<Tokens>& references, double beta) {
  if (references.empty()) throw InvalidArgument("rouge_l: empty reference set");
  if (candidate.empty()) return 0.0;
  double prec = 0, rec = 0;
  for (const Tokens& ref : references) {
    if (ref.empty()) continue;
    const double l = static_cast<double>(lcs_length(candidate, ref));
    prec = std::max(prec, l / static_cast<double>(candidate.size()));
    rec = std::max(rec, l / static_cast<double>(ref.size()));
  }
  if (prec == 0 || rec == 0) return 0.0;
  const double b2 = beta * beta;
  return (1 + b2) * prec * rec / (rec + b2 * prec);
}

namespace {

struct TfIdf {
  std::map<Ngram, double> vec[4];
  double norm[4] = {0, 0, 0, 0};
  double length = 0;
};

TfIdf tfidf(const Tokens& tokens, const std::map<Ngram, double>& df, double log_docs) {
  TfIdf out;
  for (std::size_t n = 1; n <= 4; ++n) {
    for (const auto& [g, tf] : count_ngrams(tokens, n)) {
      const auto it = df.find(g);
      const double idf = log_docs - std::log(std::max(1.0, it == df.end() ? 0.0 : it->second));
      const double w = tf * idf;
      out.vec[n - 1][g] = w;
      out.norm[n - 1] += w * w;
    }
  }
  for (double& v : out.norm) v = std::sqrt(v);
  out.length = static_cast<double>(tokens.size());
  return out;
}

}  // namespace

std::vector<double> cider_d(const std::vector<CiderItem>& items, double sigma) {
  if (items.size() < 2) throw InvalidArgument("cider: document frequencies need at least two items");
  std::map<Ngram, double> df;
  for (const CiderItem& item : items) {
    std::set<Ngram> seen;
    for (const Tokens& ref : item.references) {
      for (std::size_t n = 1; n <= 4; ++n) {
        for (const auto& entry : count_ngrams(ref, n)) seen.insert(entry.first);
      }
    }
    for (const Ngram& g : seen) df[g] += 1;
  }
  const double log_docs = std::log(static_cast<double>(items.size()));
  std::vector<double> scores;
  scores.reserve(items.size());
  for (const CiderItem& item : items) {
    if (item.references.empty()) {
      scores.push_back(0.0);
      continue;
    }
    const TfIdf cand = tfidf(item.candidate, df, log_docs);
    double total = 0;
    for (const Tokens& ref_tokens : item.references) {
      const TfIdf ref = tfidf(ref_tokens, df, log_docs);
      const double delta = cand.length - ref.length;
      const double penalty = std::exp(-(delta * delta) / (2 * sigma * sigma));
      for (std::size_t n = 0; n < 4; ++n) {
        double val = 0;
        for (const auto& [g, w] : cand.vec[n]) {
          const auto it = ref.vec[n].find(g);
          if (it != ref.vec[n].end()) val += std::min(w, it->second) * it->second;
        }
        if (cand.norm[n] != 0 && ref.norm[n] != 0) val /= cand.norm[n] * ref.norm[n];
        total += val * penalty / 4.0;
      }
    }
    scores.push_back(10.0 * total / static_cast<double>(item.references.size()));
  }
  return scores;
}

double cider(const std::vector<CiderItem>& items, double sigma) {
  const std::vector<double> s = cider_d(items, sigma);
  double sum = 0;
  for (double v : s) sum += v;
  return sum / static_cast<double>(s.size());
}

double interval_iou(double s0, double e0, double s1, double e1) {
  const double inter = std::max(0.0, std::min(e0, e1) - std::max(s0, s1));
  const double uni = std::max(e0, e1) - std::min(s0, s1);
  return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

double mean_iou(const inference::Predictions& predictions, const data::DatasetIndex& gt) {
  double sum = 0;
  std::size_t count = 0;
  for (const data::VideoEntry& video : gt.videos) {
    const auto it = predictions.find(video.id);
    for (const data::Event& ev : video.events) {
      double best = 0;
      if (it != predictions.end()) {
        for (const inference::DenseCaption& p : it->second) {
          best = std::max(best, interval_iou(ev.start, ev.end, p.start, p.end));
        }
      }
      sum += best;
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

EvalReport evaluate_dense(const inference::Predictions& predictions, const data::DatasetIndex& gt,
                          const std::vector<double>& thresholds) {
  EvalReport report;
  report.thresholds = thresholds;
  report.gt_events = gt.caption_count();
  for (const auto& [id, list] : predictions) {
    if (gt.find(id)) report.predictions += list.size();
  }
  report.miou = mean_iou(predictions, gt);
  if (thresholds.empty()) throw InvalidArgument("evaluate: no tIoU thresholds");

  for (double threshold : thresholds) {
    MetricScores scores;
    std::vector<CiderItem> items;
    std::vector<bool> matched;
    for (const auto& [id, list] : predictions) {
      const data::VideoEntry* video = gt.find(id);
      if (!video) continue;
      for (const inference::DenseCaption& p : list) {
        CiderItem item;
        item.candidate = data::tokenize(p.sentence);
        for (const data::Event& ev : video->events) {
          if (interval_iou(ev.start, ev.end, p.start, p.end) >= threshold) {
            item.references.push_back(data::tokenize(ev.sentence));
          }
        }
        if (!item.references.empty()) {
          for (int n = 1; n <= 4; ++n) scores.bleu[n - 1] += bleu_n(item.candidate, item.references, n);
          scores.rouge_l += rouge_l(item.candidate, item.references);
        }
        items.push_back(std::move(item));
      }
    }
    const double count = static_cast<double>(items.size());
    if (count > 0) {
      for (double& b : scores.bleu) b /= count;
      scores.rouge_l /= count;
    }
    // CIDEr needs at least two documents for its idf; fewer score as 0.
    if (items.size() >= 2) scores.cider = cider(items);
    report.per_threshold[threshold] = scores;
  }
  const double nt = static_cast<double>(thresholds.size());
  for (const auto& [t, s] : report.per_threshold) {
    for (int n = 0; n < 4; ++n) report.mean.bleu[n] += s.bleu[n] / nt;
    report.mean.rouge_l += s.rouge_l / nt;
    report.mean.cider += s.cider / nt;
  }
  return report;
}

namespace {

nlohmann::ordered_json scores_json(const MetricScores& s) {
  nlohmann::ordered_json j;
  for (int n = 0; n < 4; ++n) j["Bleu_" + std::to_string(n + 1)] = 100.0 * s.bleu[n];
  j["METEOR"] = nullptr;
  j["ROUGE_L"] = 100.0 * s.rouge_l;
  j["CIDEr"] = 100.0 * s.cider;
  j["SPICE"] = nullptr;
  return j;
}

}  // namespace

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j = scores_json(mean);
  j["mIoU"] = 100.0 * miou;
  j["predictions"] = predictions;
  j["gt_events"] = gt_events;
  j["thresholds"] = thresholds;
  nlohmann::ordered_json per = nlohmann::ordered_json::object();
  for (const auto& [t, s] : per_threshold) {
    char key[32];
    std::snprintf(key, sizeof key, "%.2f", t);
    per[key] = scores_json(s);
  }
  j["per_threshold"] = per;
  return j.dump(2) + "\n";
}

}  // namespace dcav::metrics
