#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dcav/model.hpp"

namespace dcav::training {

/// One video ready for the model: encoded feature streams plus its captions.
struct VideoSample {
  std::string id;
  double duration = 0;
  Tensor<float> video;  // T_v × video_dim (empty when unused)
  Tensor<float> audio;  // T_a × audio_dim (empty when unused)
  std::vector<std::vector<int>> captions;
  std::vector<Segment> segments;  // ground truth, used only for evaluation
};

struct TrainingConfig {
  double lambda_s = 0.1;
  double lambda_r = 0.1;
  double momentum = 0.8;
  double lr_pretrained = 1e-4;
  double lr_new = 1e-2;
  double lr_audio_unimodal = 1e-4;
  double lr_video_unimodal = 1e-2;
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  std::uint64_t seed = 7;
  /// Pretraining stops once teacher-forced accuracy on the training set reaches
  /// this value (checked every `eval_every` epochs); 0 disables the check.
  double target_accuracy = 0;
  std::size_t eval_every = 5;

  void validate() const;
};

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double l_c = 0;
  double l_s = 0;
  double l_r = 0;
  double total = 0;
};

using StepCallback = std::function<void(const StepLog&)>;

struct CycleStepTrace {
  std::vector<int> caption;
  Segment s1;
  std::size_t s1_anchor = 0;
  std::vector<int> reconstructed;
  Segment s2;
  std::size_t target_anchor = 0;
  double l_c = 0;
  double l_s = 0;
  double l_r = 0;
  double total = 0;
};

template <typename Real>
struct CycleLosses {
  Var<Real> l_c;
  Var<Real> l_s;
  Var<Real> l_r;
  Var<Real> total;
};

/// Records the cycle-consistency objective for one (video, caption) pair on `tape`:
/// caption → S₁ → teacher-forced L_c on S₁ → greedy ĉ → S₂ → L_s = ‖S₁−S₂‖²,
/// L_r = CE(S₂'s anchor logits, best anchor of S₁).
template <typename Real>
CycleLosses<Real> cycle_step(const model::Model<Real>& model, Tape<Real>& tape,
                             const model::Contexts<Real>& contexts, std::span<const int> caption,
                             double lambda_s, double lambda_r, CycleStepTrace* trace = nullptr);

/// Learning rate of the pretraining phase for the model's modality.
double pretrain_rate(const TrainingConfig& config, model::Modality modality);

struct PretrainResult {
  std::size_t epochs_run = 0;
  std::size_t steps = 0;
  double final_accuracy = 0;
};

/// Teacher-forced caption training on the full-video proposal (0.5, 1).
/// Only generator-side parameters are updated.
PretrainResult pretrain(model::Model<float>& model, std::span<const VideoSample> data,
                        const TrainingConfig& config, const StepCallback& on_step = {});

struct JointResult {
  std::size_t epochs_run = 0;
  std::size_t steps = 0;
};

/// Cycle-consistency training of localizer and generator together. Parameters
/// named in `pretrained` use lr_pretrained, every other one lr_new.
JointResult joint_train(model::Model<float>& model, std::span<const VideoSample> data,
                        const TrainingConfig& config, const std::set<std::string>& pretrained,
                        const StepCallback& on_step = {});

/// Fraction of next-token argmax predictions that match, over every
/// (video, caption) pair, with the decoder clipped at `segment`.
double teacher_forced_accuracy(const model::Model<float>& model, std::span<const VideoSample> data,
                               const Segment& segment = {0.5, 1.0});

/// Caption index used for `video` at `epoch`; cycles through all captions.
std::size_t caption_for_epoch(std::size_t video, std::size_t epoch, std::size_t n_captions);

/// Video visiting order for an epoch, a seeded shuffle.
std::vector<std::size_t> epoch_order(std::size_t n_videos, std::uint64_t seed, std::size_t epoch);

model::Contexts<float> encode_sample(const model::Model<float>& model, Tape<float>& tape,
                                     const VideoSample& sample);

std::string step_log_json(const StepLog& log);

}  // namespace dcav::training
