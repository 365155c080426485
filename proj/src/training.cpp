#include "dcav/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "dcav/error.hpp"

namespace dcav::training {

using model::Model;
using model::Modality;

void TrainingConfig::validate() const {
  if (!(lambda_s >= 0) || !(lambda_r >= 0)) throw InvalidArgument("lambda_s and lambda_r must be >= 0");
  if (!(momentum >= 0 && momentum < 1)) throw InvalidArgument("momentum must lie in [0, 1)");
  for (double r : {lr_pretrained, lr_new, lr_audio_unimodal, lr_video_unimodal}) {
    if (!(r > 0)) throw InvalidArgument("learning rates must be positive");
  }
  if (batch_size == 0) throw InvalidArgument("batch size must be positive");
  if (target_accuracy < 0 || target_accuracy > 1) throw InvalidArgument("target accuracy must lie in [0, 1]");
}

std::size_t caption_for_epoch(std::size_t video, std::size_t epoch, std::size_t n_captions) {
  if (n_captions == 0) throw InvalidArgument("video has no captions");
  return (video + epoch) % n_captions;
}

std::vector<std::size_t> epoch_order(std::size_t n_videos, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n_videos);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * (epoch + 1)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

model::Contexts<float> encode_sample(const Model<float>& model, Tape<float>& tape,
                                     const VideoSample& sample) {
  const auto& cfg = model.config();
  if (cfg.uses_video() && sample.video.empty()) {
    throw DataError("video '" + sample.id + "' has no video features");
  }
  if (cfg.uses_audio() && sample.audio.empty()) {
    throw DataError("video '" + sample.id + "' has no audio features");
  }
  return model.encode_contexts(tape, cfg.uses_video() ? &sample.video : nullptr,
                               cfg.uses_audio() ? &sample.audio : nullptr);
}

std::string step_log_json(const StepLog& log) {
  nlohmann::ordered_json j;
  j["step"] = log.step;
  j["L_c"] = log.l_c;
  j["L_s"] = log.l_s;
  j["L_r"] = log.l_r;
  j["total"] = log.total;
  return j.dump();
}

template <typename Real>
CycleLosses<Real> cycle_step(const Model<Real>& model, Tape<Real>& tape,
                             const model::Contexts<Real>& contexts, std::span<const int> caption,
                             double lambda_s, double lambda_r, CycleStepTrace* trace) {
  const model::LocalizerOutput<Real> first = model.localize(tape, contexts, caption);
  CycleLosses<Real> out;
  out.l_c = model.caption_loss(tape, contexts, first.segment, caption);

  // The reconstructed caption is discrete: no gradient reaches the decoder from here.
  const model::GreedyCaption rebuilt = model.greedy_caption(contexts, first.value());
  const model::LocalizerOutput<Real> second = model.localize(tape, contexts, rebuilt.tokens);
  out.l_s = l2(first.segment, second.segment);
  const int target = static_cast<int>(model::best_anchor(first.value()));
  out.l_r = cross_entropy(second.logits, std::span<const int>(&target, 1));
  out.total = add(out.l_c, add(scale(out.l_s, static_cast<Real>(lambda_s)),
                               scale(out.l_r, static_cast<Real>(lambda_r))));
  if (trace) {
    trace->caption.assign(caption.begin(), caption.end());
    trace->s1 = first.value();
    trace->s1_anchor = first.anchor;
    trace->reconstructed = rebuilt.tokens;
    trace->s2 = second.value();
    trace->target_anchor = static_cast<std::size_t>(target);
    trace->l_c = out.l_c.value()[0];
    trace->l_s = out.l_s.value()[0];
    trace->l_r = out.l_r.value()[0];
    trace->total = out.total.value()[0];
  }
  return out;
}

template CycleLosses<float> cycle_step(const Model<float>&, Tape<float>&,
                                       const model::Contexts<float>&, std::span<const int>,
                                       double, double, CycleStepTrace*);
template CycleLosses<double> cycle_step(const Model<double>&, Tape<double>&,
                                        const model::Contexts<double>&, std::span<const int>,
                                        double, double, CycleStepTrace*);

double pretrain_rate(const TrainingConfig& config, Modality modality) {
  switch (modality) {
    case Modality::audio: return config.lr_audio_unimodal;
    case Modality::video: return config.lr_video_unimodal;
    case Modality::both: return config.lr_new;
  }
  return config.lr_new;
}

namespace {

std::vector<std::size_t> captioned_videos(std::span<const VideoSample> data) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!data[i].captions.empty()) out.push_back(i);
  }
  if (out.empty()) throw DataError("training set has no captioned videos");
  return out;
}

// Runs `per_example` over seeded, batched epochs and applies an SGD step after
// each batch. `per_example` records its loss, runs backward scaled by 1/|batch|
// and returns the unscaled components.
template <typename PerExample, typename AfterEpoch>
std::pair<std::size_t, std::size_t> run_epochs(Model<float>& model, std::span<const VideoSample> data,
                                               const TrainingConfig& config,
                                               const std::vector<std::string>& names,
                                               const LearningRates& rates, const StepCallback& on_step,
                                               PerExample&& per_example, AfterEpoch&& after_epoch) {
  const std::vector<std::size_t> videos = captioned_videos(data);
  model.parameters().zero_grad();
  std::size_t step = 0;
  std::size_t epoch = 0;
  for (; epoch < config.epochs; ++epoch) {
    const std::vector<std::size_t> order = epoch_order(videos.size(), config.seed, epoch);
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const float inv = 1.0f / static_cast<float>(end - begin);
      StepLog log;
      log.step = step;
      log.epoch = epoch;
      for (std::size_t b = begin; b < end; ++b) {
        const std::size_t vi = videos[order[b]];
        const VideoSample& sample = data[vi];
        const std::size_t ci = caption_for_epoch(order[b], epoch, sample.captions.size());
        StepLog part;
        try {
          part = per_example(sample, sample.captions[ci], inv);
        } catch (const NonFiniteError& e) {
          throw NonFiniteError(std::string(e.what()) + " [epoch " + std::to_string(epoch) +
                               ", step " + std::to_string(step) + ", video '" + sample.id + "']");
        }
        log.l_c += part.l_c * inv;
        log.l_s += part.l_s * inv;
        log.l_r += part.l_r * inv;
        log.total += part.total * inv;
      }
      try {
        sgd_momentum_step(model.parameters(), names, rates, config.momentum);
      } catch (const NonFiniteError& e) {
        throw NonFiniteError(std::string(e.what()) + " [epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(step) + "]");
      }
      if (on_step) on_step(log);
      spdlog::debug("epoch {} step {} L_c {:.6f} L_s {:.6f} L_r {:.6f} total {:.6f}", epoch, step,
                    log.l_c, log.l_s, log.l_r, log.total);
      ++step;
    }
    if (after_epoch(epoch)) {
      ++epoch;
      break;
    }
  }
  return {epoch, step};
}

}  // namespace

PretrainResult pretrain(Model<float>& model, std::span<const VideoSample> data,
                        const TrainingConfig& config, const StepCallback& on_step) {
  config.validate();
  const LearningRates rates(pretrain_rate(config, model.config().modality));
  const std::vector<std::string> names = model.generator_parameter_names();
  PretrainResult result;
  auto per_example = [&](const VideoSample& sample, const std::vector<int>& caption, float inv) {
    Tape<float> tape;
    const model::Contexts<float> ctx = encode_sample(model, tape, sample);
    const Var<float> full = tape.constant(Tensor<float>({1, 2}, {0.5f, 1.0f}));
    const Var<float> loss = model.caption_loss(tape, ctx, full, caption);
    tape.backward(scale(loss, inv));
    StepLog part;
    part.l_c = loss.value()[0];
    part.total = part.l_c;
    return part;
  };
  auto after_epoch = [&](std::size_t epoch) {
    const bool last = epoch + 1 == config.epochs;
    const bool check = config.target_accuracy > 0 && config.eval_every > 0 &&
                       ((epoch + 1) % config.eval_every == 0 || last);
    if (!check) return false;
    result.final_accuracy = teacher_forced_accuracy(model, data);
    spdlog::info("pretrain epoch {}: teacher-forced accuracy {:.4f}", epoch + 1, result.final_accuracy);
    return result.final_accuracy >= config.target_accuracy;
  };
  const auto [epochs, steps] =
      run_epochs(model, data, config, names, rates, on_step, per_example, after_epoch);
  result.epochs_run = epochs;
  result.steps = steps;
  if (config.target_accuracy <= 0) result.final_accuracy = teacher_forced_accuracy(model, data);
  return result;
}

JointResult joint_train(Model<float>& model, std::span<const VideoSample> data,
                        const TrainingConfig& config, const std::set<std::string>& pretrained,
                        const StepCallback& on_step) {
  config.validate();
  LearningRates rates(config.lr_new);
  const std::vector<std::string> names = model.all_parameter_names();
  for (const std::string& n : names) {
    if (pretrained.count(n)) rates.set(n, config.lr_pretrained);
  }
  auto per_example = [&](const VideoSample& sample, const std::vector<int>& caption, float inv) {
    Tape<float> tape;
    const model::Contexts<float> ctx = encode_sample(model, tape, sample);
    const CycleLosses<float> losses =
        cycle_step(model, tape, ctx, caption, config.lambda_s, config.lambda_r);
    tape.backward(scale(losses.total, inv));
    StepLog part;
    part.l_c = losses.l_c.value()[0];
    part.l_s = losses.l_s.value()[0];
    part.l_r = losses.l_r.value()[0];
    part.total = losses.total.value()[0];
    return part;
  };
  auto after_epoch = [&](std::size_t epoch) {
    spdlog::debug("joint epoch {} done", epoch + 1);
    return false;
  };
  const auto [epochs, steps] =
      run_epochs(model, data, config, names, rates, on_step, per_example, after_epoch);
  return {epochs, steps};
}

double teacher_forced_accuracy(const Model<float>& model, std::span<const VideoSample> data,
                               const Segment& segment) {
  std::size_t correct = 0;
  std::size_t total = 0;
  for (const VideoSample& sample : data) {
    if (sample.captions.empty()) continue;
    Tape<float> tape;
    const model::Contexts<float> ctx = encode_sample(model, tape, sample);
    const Var<float> seg = tape.constant(Tensor<float>(
        {1, 2}, {static_cast<float>(segment.center), static_cast<float>(segment.length)}));
    for (const std::vector<int>& caption : sample.captions) {
      const Tensor<float>& logits = model.caption_logits(tape, ctx, seg, caption).value();
      for (std::size_t t = 0; t < logits.rows(); ++t) {
        const auto row = logits.data().subspan(t * logits.cols(), logits.cols());
        const int best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        correct += best == caption[t + 1];
        ++total;
      }
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace dcav::training
