#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dcav/data.hpp"
#include "dcav/model.hpp"

namespace dcav::inference {

struct InferenceConfig {
  std::size_t proposals = 15;
  double iou_threshold = 0.7;
  double center_min = 0.05;
  double center_max = 0.95;
  double length_min = 0.1;
  double length_max = 0.8;
  std::uint64_t seed = 7;

  void validate() const;
};

struct Proposal {
  Segment segment;
  std::vector<int> tokens;
  double score = 0;  // mean token log-probability
};

/// Uniform random segments for one video; the stream depends only on (seed, video id).
std::vector<Segment> random_proposals(const InferenceConfig& config, const std::string& video_id);

/// Caption each segment, re-localize that caption, caption the refined segment.
template <typename Real>
std::vector<Proposal> fixed_point_round(const model::Model<Real>& model,
                                        const model::Contexts<Real>& contexts,
                                        const std::vector<Segment>& segments);

/// Greedy NMS: by descending score (input order on ties), keep a proposal iff
/// its tIoU with every kept proposal is below `threshold`.
std::vector<Proposal> iou_filter(const std::vector<Proposal>& proposals, double threshold = 0.7);

struct DenseCaption {
  double start = 0;  // seconds
  double end = 0;
  std::string sentence;
};

using Predictions = std::map<std::string, std::vector<DenseCaption>>;

/// Random proposals → fixed-point round → IoU filter → captions in seconds.
template <typename Real>
std::vector<DenseCaption> generate_dense_captions(const model::Model<Real>& model,
                                                  const model::Contexts<Real>& contexts,
                                                  const std::string& video_id, double duration,
                                                  const data::Vocabulary& vocab,
                                                  const InferenceConfig& config);

/// {video-id: [{"timestamp": [s, e], "sentence": "..."}]}
std::string predictions_to_json(const Predictions& predictions);
Predictions predictions_from_json(const std::string& text);

}  // namespace dcav::inference
