#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "dcav/audio.hpp"
#include "dcav/data.hpp"
#include "dcav/gradcheck.hpp"
#include "dcav/inference.hpp"
#include "dcav/metrics.hpp"
#include "dcav/model.hpp"
#include "dcav/training.hpp"

namespace dcav::pipeline {

struct ConfigKey {
  const char* key;
  const char* default_value;  // empty: derived from other keys
  const char* help;
};

/// Every recognized key. Config files and command-line flags share these names.
const std::vector<ConfigKey>& config_keys();

inline const std::vector<std::string> kCommands{
    "extract-audio", "synth-data", "build-vocab", "pretrain", "train",
    "infer",         "evaluate",   "gradcheck",   "compare-fusion"};

using KeyValues = std::map<std::string, std::string>;

/// Flat `key = value` lines; blank lines and `#` comments ignored.
KeyValues parse_config(const std::string& text);
KeyValues load_config(const std::filesystem::path& path);

/// Defaults, then the config file, then flags (flags win).
class RunConfig {
 public:
  RunConfig(std::string command, const KeyValues& file, const KeyValues& flags);

  const std::string& command() const { return command_; }
  const KeyValues& values() const { return values_; }
  /// Keys given by the user in the file or on the command line.
  bool is_explicit(const std::string& key) const { return explicit_.count(key) != 0; }

  const std::string& get(const std::string& key) const;
  bool has(const std::string& key) const { return !get(key).empty(); }
  double real(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::uint64_t seed() const;

  std::filesystem::path out_dir() const;
  std::filesystem::path data_dir() const;
  /// The key's value as a path, or `fallback` when the key is empty.
  std::filesystem::path path_or(const std::string& key, const std::filesystem::path& fallback) const;

  /// Same configuration with some keys replaced (values count as explicit).
  RunConfig with(const KeyValues& overrides) const;

  /// Resolved configuration as sorted `key = value` lines.
  std::string to_text() const;

 private:
  std::string command_;
  KeyValues values_;
  std::set<std::string> explicit_;
};

model::ModelConfig model_config(const RunConfig& rc, std::size_t vocab_size);
training::TrainingConfig training_config(const RunConfig& rc, const std::string& stage);
inference::InferenceConfig inference_config(const RunConfig& rc);
data::SyntheticSpec synthetic_spec(const RunConfig& rc);
audio::SpectrogramKind audio_kind(const RunConfig& rc);
data::Split split_from_string(const std::string& s);

// Artifact locations.
std::filesystem::path vocab_path(const RunConfig& rc);
std::filesystem::path audio_features_path(const RunConfig& rc);
std::filesystem::path pretrain_checkpoint_path(const RunConfig& rc);
std::filesystem::path checkpoint_path(const RunConfig& rc);
std::filesystem::path predictions_path(const RunConfig& rc);

/// Writes the selected parameters plus a `<path>.json` sidecar describing
/// the architecture and training stage.
void save_model(const std::filesystem::path& path, const model::Model<float>& model,
                const std::vector<std::string>& names, const std::string& stage,
                audio::SpectrogramKind audio_feature);

struct LoadedModel {
  std::unique_ptr<model::Model<float>> model;
  std::string stage;
  std::vector<std::string> loaded;
};

/// Rebuilds a model from a checkpoint and its sidecar. Architecture keys that
/// `rc` sets explicitly must agree with the checkpoint.
LoadedModel load_model(const std::filesystem::path& path, const RunConfig& rc);

/// Annotations, features and encoded captions of one split.
std::vector<training::VideoSample> load_samples(const RunConfig& rc, data::Split split,
                                                const data::Vocabulary& vocab,
                                                const model::ModelConfig& config);

// Subcommands. Each writes its artifacts under the output directory.
data::SyntheticDataset synth_data(const RunConfig& rc);
void extract_audio(const RunConfig& rc);
data::Vocabulary build_vocab(const RunConfig& rc);
training::PretrainResult pretrain(const RunConfig& rc);
training::JointResult train(const RunConfig& rc);
inference::Predictions infer(const RunConfig& rc);
metrics::EvalReport evaluate(const RunConfig& rc);
gradcheck::SuiteReport gradcheck(const RunConfig& rc);

struct ComparisonRow {
  std::string name;
  model::Modality modality = model::Modality::both;
  model::Fusion fusion = model::Fusion::mutan;
  metrics::MetricScores pretrained;
  metrics::EvalReport final_report;
};

struct FusionComparison {
  std::vector<ComparisonRow> rows;
  std::string to_markdown() const;
  std::string to_json() const;
  /// mIoU of the best multi-modal row minus the video-only row (×100).
  double mutan_margin() const;
};

/// Retrains with every fusion strategy and the video-only baseline on the
/// same data, reporting pretrained and final scores side by side.
FusionComparison compare_fusion(const RunConfig& rc);

/// Pretrained-model protocol: each video gets one random segment, the caption
/// decoded there is scored against one randomly chosen ground-truth sentence.
metrics::MetricScores evaluate_pretrained(const model::Model<float>& model,
                                          const std::vector<training::VideoSample>& samples,
                                          const data::Vocabulary& vocab, std::uint64_t seed);

/// Runs `rc.command()`; returns the process exit status. Errors propagate as
/// exceptions.
int run(const RunConfig& rc);

}  // namespace dcav::pipeline
