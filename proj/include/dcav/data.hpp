#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcav/audio.hpp"
#include "dcav/segment.hpp"
#include "dcav/tensor.hpp"

namespace dcav::data {

enum class Split { train, val };

struct Event {
  double start = 0;  // seconds
  double end = 0;    // seconds
  std::string sentence;
  Segment segment;   // normalized (center, length)
};

struct VideoEntry {
  std::string id;
  double duration = 0;
  std::vector<Event> events;
};

/// One split of an ActivityNet-Captions-style annotation file, ordered by video id.
struct DatasetIndex {
  Split split = Split::train;
  std::vector<VideoEntry> videos;

  const VideoEntry* find(const std::string& id) const;
  std::size_t caption_count() const;
};

/// Parses {video-id: {duration, timestamps: [[s,e]...], sentences: [...]}}.
DatasetIndex parse_annotations(const std::string& json_text, Split split);
DatasetIndex load_annotations(const std::filesystem::path& path, Split split);
std::string annotations_to_json(const DatasetIndex& index);
void save_annotations(const std::filesystem::path& path, const DatasetIndex& index);

// ---------------------------------------------------------------------------
// Vocabulary

std::vector<std::string> tokenize(const std::string& sentence);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr std::size_t kSpecials = 4;

  Vocabulary();
  explicit Vocabulary(std::vector<std::string> words_after_specials);

  std::size_t size() const { return words_.size(); }
  int id(const std::string& word) const;
  const std::string& word(int id) const;
  const std::vector<std::string>& words() const { return words_; }

  /// bos, word ids (unk for unknown), eos.
  std::vector<int> encode(const std::string& sentence) const;
  /// Joins the word ids with spaces, dropping specials and stopping at eos.
  std::string decode(std::span<const int> ids) const;

  std::string to_json() const;
  static Vocabulary from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return words_ == other.words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> ids_;
};

/// Top (max_size − 4) training words by frequency, ties broken lexicographically.
Vocabulary build_vocab(const DatasetIndex& index, std::size_t max_size = 6000);

// ---------------------------------------------------------------------------
// Synthetic data

/// Which visual cue an event leaves in the video feature stream.
enum class VideoCue {
  distinct,  // each template has its own motif
  shared,    // one motif for all templates: events visible, identity audio-only
  none,      // no visual trace of events
};

struct EventTemplate {
  std::string caption;
  std::size_t tone_bin = 0;  // CQT bin of the template's tone
  double tone_hz = 0;
};

struct SyntheticSpec {
  std::uint64_t seed = 7;
  std::size_t n_videos = 20;
  std::size_t n_val = 10;
  std::size_t frames = 64;          // T_f
  std::size_t feature_dim = 500;    // D
  std::size_t n_templates = 8;
  std::size_t min_events = 1;
  std::size_t max_events = 3;
  double min_event_length = 0.15;   // fraction of the video
  double max_event_length = 0.30;
  double feature_noise = 0.1;
  VideoCue video_cue = VideoCue::distinct;
  double tone_amplitude = 0.5;
  double audio_noise = 0.01;
};

struct SyntheticVideo {
  std::string id;
  Split split = Split::train;
  Tensor<float> features;                 // frames × feature_dim
  audio::Waveform audio;                  // 16 kHz
  std::vector<std::size_t> event_templates;  // template index per event, in event order
};

struct SyntheticDataset {
  SyntheticSpec spec;
  std::vector<EventTemplate> templates;
  Tensor<float> motifs;  // n_templates × feature_dim (rows identical under VideoCue::shared)
  DatasetIndex train;
  DatasetIndex val;
  std::vector<SyntheticVideo> videos;
};

std::vector<EventTemplate> default_templates(std::size_t count);
SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

/// Writes train.json, val.json, video_features.bin, templates.json and audio/<id>.wav.
void write_synthetic(const SyntheticDataset& ds, const std::filesystem::path& dir);

/// Audio length (samples) giving exactly `frames` analysis frames.
std::size_t synthetic_audio_length(std::size_t frames);

// ---------------------------------------------------------------------------
// Feature files

using FeatureMap = std::map<std::string, Tensor<float>>;

/// Loads records named `<prefix>/<video-id>`, keyed by video id.
FeatureMap load_features(const std::filesystem::path& path, const std::string& prefix);
void save_features(const std::filesystem::path& path, const std::string& prefix,
                   const FeatureMap& features);

// ---------------------------------------------------------------------------
// Matched filter (non-learned localization ceiling)

/// Longest run of frames whose normalized correlation with `motif` exceeds 0.5.
std::optional<Segment> matched_filter_video(const Tensor<float>& features,
                                            std::span<const float> motif);
/// Longest run of frames whose CQT argmax equals `bin`.
std::optional<Segment> matched_filter_audio(const Tensor<double>& cqt_frames, std::size_t bin);

/// Mean over ground-truth events of tIoU between the event and the matched-filter
/// estimate from its template's tone (0 when nothing is detected).
double matched_filter_miou(const SyntheticDataset& ds, Split split);

std::string to_string(VideoCue cue);
VideoCue video_cue_from_string(const std::string& s);

}  // namespace dcav::data
