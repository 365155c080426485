#include "dcav/inference.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "dcav/error.hpp"

namespace dcav::inference {

void InferenceConfig::validate() const {
  if (proposals == 0) throw InvalidArgument("proposal count must be positive");
  if (!(iou_threshold > 0 && iou_threshold <= 1)) throw InvalidArgument("iou threshold must lie in (0, 1]");
  if (!(center_min <= center_max) || !(length_min <= length_max) || !(length_min > 0)) {
    throw InvalidArgument("invalid proposal ranges");
  }
}

std::vector<Segment> random_proposals(const InferenceConfig& config, const std::string& video_id) {
  // FNV-1a of the id keeps per-video streams independent of visiting order.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : video_id) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::mt19937_64 rng(config.seed ^ h);
  std::uniform_real_distribution<double> center(config.center_min, config.center_max);
  std::uniform_real_distribution<double> length(config.length_min, config.length_max);
  std::vector<Segment> out(config.proposals);
  for (Segment& s : out) {
    s.center = center(rng);
    s.length = length(rng);
  }
  return out;
}

template <typename Real>
std::vector<Proposal> fixed_point_round(const model::Model<Real>& model,
                                        const model::Contexts<Real>& contexts,
                                        const std::vector<Segment>& segments) {
  std::vector<Proposal> out;
  out.reserve(segments.size());
  for (const Segment& s : segments) {
    const model::GreedyCaption first = model.greedy_caption(contexts, s);
    Tape<Real> tape;
    const model::Contexts<Real> local = model::detach(contexts, tape);
    const Segment refined = model.localize(tape, local, first.tokens).value();
    model::GreedyCaption second = model.greedy_caption(contexts, refined);
    out.push_back({refined, std::move(second.tokens), second.score});
  }
  return out;
}

template std::vector<Proposal> fixed_point_round(const model::Model<float>&,
                                                 const model::Contexts<float>&,
                                                 const std::vector<Segment>&);
template std::vector<Proposal> fixed_point_round(const model::Model<double>&,
                                                 const model::Contexts<double>&,
                                                 const std::vector<Segment>&);

std::vector<Proposal> iou_filter(const std::vector<Proposal>& proposals, double threshold) {
  std::vector<std::size_t> order(proposals.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return proposals[a].score > proposals[b].score;
  });
  std::vector<Proposal> kept;
  for (std::size_t i : order) {
    const bool clear = std::all_of(kept.begin(), kept.end(), [&](const Proposal& k) {
      return tiou(k.segment, proposals[i].segment) < threshold;
    });
    if (clear) kept.push_back(proposals[i]);
  }
  return kept;
}

template <typename Real>
std::vector<DenseCaption> generate_dense_captions(const model::Model<Real>& model,
                                                  const model::Contexts<Real>& contexts,
                                                  const std::string& video_id, double duration,
                                                  const data::Vocabulary& vocab,
                                                  const InferenceConfig& config) {
  config.validate();
  if (!(duration > 0)) throw InvalidArgument("video '" + video_id + "' has no positive duration");
  const std::vector<Proposal> refined =
      fixed_point_round(model, contexts, random_proposals(config, video_id));
  std::vector<DenseCaption> out;
  for (const Proposal& p : iou_filter(refined, config.iou_threshold)) {
    const auto [start, end] = denormalize_segment(p.segment, duration);
    out.push_back({std::clamp(start, 0.0, duration), std::clamp(end, 0.0, duration),
                   vocab.decode(p.tokens)});
  }
  return out;
}

template std::vector<DenseCaption> generate_dense_captions(
    const model::Model<float>&, const model::Contexts<float>&, const std::string&, double,
    const data::Vocabulary&, const InferenceConfig&);
template std::vector<DenseCaption> generate_dense_captions(
    const model::Model<double>&, const model::Contexts<double>&, const std::string&, double,
    const data::Vocabulary&, const InferenceConfig&);

std::string predictions_to_json(const Predictions& predictions) {
  nlohmann::ordered_json root = nlohmann::ordered_json::object();
  for (const auto& [id, captions] : predictions) {
    nlohmann::ordered_json list = nlohmann::ordered_json::array();
    for (const DenseCaption& c : captions) {
      nlohmann::ordered_json item;
      item["timestamp"] = {c.start, c.end};
      item["sentence"] = c.sentence;
      list.push_back(std::move(item));
    }
    root[id] = std::move(list);
  }
  return root.dump(2) + "\n";
}

Predictions predictions_from_json(const std::string& text) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("predictions: malformed JSON: ") + e.what());
  }
  if (!root.is_object()) throw DataError("predictions: top level must be an object");
  // The official format nests entries under "results"; accept both.
  if (root.contains("results") && root["results"].is_object()) root = root["results"];
  Predictions out;
  for (const auto& [id, list] : root.items()) {
    if (!list.is_array()) throw DataError("predictions: entry for '" + id + "' must be a list");
    auto& dst = out[id];
    for (const auto& item : list) {
      if (!item.is_object() || !item.contains("timestamp") || !item.contains("sentence")) {
        throw DataError("predictions: entry for '" + id + "' needs timestamp and sentence");
      }
      const auto& ts = item["timestamp"];
      if (!ts.is_array() || ts.size() != 2 || !ts[0].is_number() || !ts[1].is_number() ||
          !item["sentence"].is_string()) {
        throw DataError("predictions: malformed entry for '" + id + "'");
      }
      dst.push_back({ts[0].get<double>(), ts[1].get<double>(), item["sentence"].get<std::string>()});
    }
  }
  return out;
}

}  // namespace dcav::inference
