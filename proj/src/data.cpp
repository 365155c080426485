#include "dcav/data.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "dcav/error.hpp"
#include "dcav/parameters.hpp"

namespace dcav {

Segment normalize_segment(double start, double end, double duration) {
  if (!(duration > 0)) throw DataError("segment: duration must be positive");
  return {(start + end) / 2.0 / duration, (end - start) / duration};
}

std::pair<double, double> denormalize_segment(const Segment& s, double duration) {
  return {(s.center - s.length / 2.0) * duration, (s.center + s.length / 2.0) * duration};
}

double tiou(const Segment& a, const Segment& b) {
  const double a0 = std::clamp(a.start(), 0.0, 1.0), a1 = std::clamp(a.end(), 0.0, 1.0);
  const double b0 = std::clamp(b.start(), 0.0, 1.0), b1 = std::clamp(b.end(), 0.0, 1.0);
  const double inter = std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
  const double uni = std::max(a1, b1) - std::min(a0, b0);
  if (uni <= 0) return a0 == b0 && a1 == b1 ? 1.0 : 0.0;
  return inter / uni;
}

}  // namespace dcav

namespace dcav::data {

using nlohmann::json;

const VideoEntry* DatasetIndex::find(const std::string& id) const {
  auto it = std::lower_bound(videos.begin(), videos.end(), id,
                             [](const VideoEntry& v, const std::string& key) { return v.id < key; });
  return it != videos.end() && it->id == id ? &*it : nullptr;
}

std::size_t DatasetIndex::caption_count() const {
  std::size_t n = 0;
  for (const auto& v : videos) n += v.events.size();
  return n;
}

DatasetIndex parse_annotations(const std::string& json_text, Split split) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("annotations: malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw DataError("annotations: top level must be an object");
  DatasetIndex index;
  index.split = split;
  for (const auto& [id, entry] : doc.items()) {
    try {
      VideoEntry v;
      v.id = id;
      v.duration = entry.at("duration").get<double>();
      const auto& stamps = entry.at("timestamps");
      const auto& sentences = entry.at("sentences");
      if (stamps.size() != sentences.size()) {
        throw DataError("annotations: video '" + id + "' has " + std::to_string(stamps.size()) +
                        " timestamps but " + std::to_string(sentences.size()) + " sentences");
      }
      if (!(v.duration > 0)) throw DataError("annotations: video '" + id + "' has non-positive duration");
      for (std::size_t i = 0; i < stamps.size(); ++i) {
        Event e;
        e.start = stamps[i].at(0).get<double>();
        e.end = stamps[i].at(1).get<double>();
        if (!(e.end > e.start)) {
          throw DataError("annotations: video '" + id + "' event " + std::to_string(i) +
                          " ends before it starts");
        }
        e.sentence = sentences[i].get<std::string>();
        e.segment = normalize_segment(e.start, e.end, v.duration);
        v.events.push_back(std::move(e));
      }
      index.videos.push_back(std::move(v));
    } catch (const json::exception& e) {
      throw DataError("annotations: video '" + id + "': " + e.what());
    }
  }
  std::sort(index.videos.begin(), index.videos.end(),
            [](const VideoEntry& a, const VideoEntry& b) { return a.id < b.id; });
  return index;
}

DatasetIndex load_annotations(const std::filesystem::path& path, Split split) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open annotations " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_annotations(ss.str(), split);
}

std::string annotations_to_json(const DatasetIndex& index) {
  json doc = json::object();
  for (const auto& v : index.videos) {
    json stamps = json::array(), sentences = json::array();
    for (const auto& e : v.events) {
      stamps.push_back({e.start, e.end});
      sentences.push_back(e.sentence);
    }
    doc[v.id] = {{"duration", v.duration}, {"timestamps", stamps}, {"sentences", sentences}};
  }
  return doc.dump(1);
}

void save_annotations(const std::filesystem::path& path, const DatasetIndex& index) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << annotations_to_json(index) << '\n';
}

// ---------------------------------------------------------------------------

std::vector<std::string> tokenize(const std::string& sentence) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char ch : sentence) {
    if (std::isspace(ch)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else if (!std::ispunct(ch)) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> words_after_specials) {
  words_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
  for (auto& w : words_after_specials) words_.push_back(std::move(w));
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!ids_.emplace(words_[i], static_cast<int>(i)).second) {
      throw DataError("vocabulary: duplicate word '" + words_[i] + "'");
    }
  }
}

int Vocabulary::id(const std::string& word) const {
  auto it = ids_.find(word);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw InvalidArgument("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return words_[id];
}

std::vector<int> Vocabulary::encode(const std::string& sentence) const {
  std::vector<int> ids{kBos};
  for (const auto& w : tokenize(sentence)) ids.push_back(id(w));
  ids.push_back(kEos);
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kBos || id == kPad) continue;
    if (!out.empty()) out.push_back(' ');
    out += word(id);
  }
  return out;
}

std::string Vocabulary::to_json() const {
  return json{{"words", words_}}.dump(1);
}

Vocabulary Vocabulary::from_json(const std::string& text) {
  try {
    auto words = json::parse(text).at("words").get<std::vector<std::string>>();
    if (words.size() < kSpecials || words[kPad] != "<pad>" || words[kBos] != "<bos>" ||
        words[kEos] != "<eos>" || words[kUnk] != "<unk>") {
      throw DataError("vocabulary: specials must occupy ids 0-3");
    }
    return Vocabulary(std::vector<std::string>(words.begin() + kSpecials, words.end()));
  } catch (const json::exception& e) {
    throw DataError(std::string("vocabulary: ") + e.what());
  }
}

void Vocabulary::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << to_json() << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open vocabulary " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return from_json(ss.str());
}

Vocabulary build_vocab(const DatasetIndex& index, std::size_t max_size) {
  if (max_size <= Vocabulary::kSpecials) throw InvalidArgument("build_vocab: max_size must exceed 4");
  std::map<std::string, std::size_t> counts;
  for (const auto& v : index.videos) {
    for (const auto& e : v.events) {
      for (auto& w : tokenize(e.sentence)) ++counts[w];
    }
  }
  if (counts.empty()) throw DataError("build_vocab: empty training corpus");
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t keep = std::min(ranked.size(), max_size - Vocabulary::kSpecials);
  std::vector<std::string> words;
  words.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) words.push_back(ranked[i].first);
  return Vocabulary(std::move(words));
}

// ---------------------------------------------------------------------------
// Synthetic data

namespace {

struct TemplateSeed {
  const char* caption;
  std::size_t tone_bin;
};

// Every caption diverges from the others at its second word.
constexpr TemplateSeed kTemplates[] = {
    {"a man is playing the drums on a stage while the crowd cheers for the band", 21},
    {"a woman is singing into a microphone while the band plays music on the stage", 26},
    {"a dog is barking at the door while a man walks into the room", 31},
    {"a child is laughing on a swing in the park while the wind blows", 36},
    {"a car engine starts and the car drives slowly down the street", 41},
    {"a person is chopping vegetables in the kitchen while water boils on the stove", 46},
    {"a bird is chirping on a branch in the park in the morning", 51},
    {"a phone is ringing on the table and a woman walks into the room", 56},
};

std::string video_id(Split split, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%03zu", split == Split::train ? "train" : "val", i);
  return buf;
}

}  // namespace

std::vector<EventTemplate> default_templates(std::size_t count) {
  constexpr std::size_t available = std::size(kTemplates);
  if (count == 0 || count > available) {
    throw InvalidArgument("synthetic: between 1 and " + std::to_string(available) +
                          " templates are available");
  }
  const audio::CqtOptions cqt;
  const auto centers = audio::cqt_center_frequencies(cqt);
  std::vector<EventTemplate> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back({kTemplates[i].caption, kTemplates[i].tone_bin, centers[kTemplates[i].tone_bin]});
  }
  return out;
}

std::size_t synthetic_audio_length(std::size_t frames) {
  const audio::CqtOptions cqt;
  return cqt.window + (frames - 1) * cqt.hop;
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.frames < 8 || spec.feature_dim == 0) throw InvalidArgument("synthetic: frames ≥ 8 and feature_dim > 0 required");
  if (spec.min_events == 0 || spec.min_events > spec.max_events) {
    throw InvalidArgument("synthetic: need 1 ≤ min_events ≤ max_events");
  }
  if (!(spec.min_event_length > 0) || spec.min_event_length > spec.max_event_length) {
    throw InvalidArgument("synthetic: need 0 < min_event_length ≤ max_event_length");
  }
  if (spec.max_event_length > 1.0 ||
      static_cast<double>(spec.max_events) * spec.min_event_length > 1.0 ||
      spec.max_events > spec.n_templates) {
    throw InvalidArgument("synthetic: templates exceed feasible packing");
  }

  SyntheticDataset ds;
  ds.spec = spec;
  ds.templates = default_templates(spec.n_templates);
  ds.train.split = Split::train;
  ds.val.split = Split::val;

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  ds.motifs = Tensor<float>({spec.n_templates, spec.feature_dim});
  for (std::size_t k = 0; k < spec.n_templates; ++k) {
    for (std::size_t d = 0; d < spec.feature_dim; ++d) {
      const bool reuse = spec.video_cue == VideoCue::shared && k > 0;
      ds.motifs.at(k, d) = reuse ? ds.motifs.at(0, d) : static_cast<float>(gauss(rng));
    }
  }

  const std::size_t n_samples = synthetic_audio_length(spec.frames);
  const double duration = static_cast<double>(n_samples) / audio::kModelSampleRate;
  const auto min_len = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(spec.min_event_length * spec.frames)));
  const auto max_len = std::max(min_len, static_cast<std::size_t>(std::lround(spec.max_event_length * spec.frames)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const std::size_t total = spec.n_videos + spec.n_val;
  for (std::size_t vi = 0; vi < total; ++vi) {
    const Split split = vi < spec.n_videos ? Split::train : Split::val;
    SyntheticVideo video;
    video.split = split;
    video.id = video_id(split, split == Split::train ? vi : vi - spec.n_videos);

    const std::size_t n_events =
        std::uniform_int_distribution<std::size_t>(spec.min_events, spec.max_events)(rng);
    std::vector<std::size_t> order(spec.n_templates);
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::size_t> lengths(n_events);
    std::size_t used = 0;
    for (auto& l : lengths) {
      l = std::uniform_int_distribution<std::size_t>(min_len, max_len)(rng);
      used += l;
    }
    if (used > spec.frames) throw InvalidArgument("synthetic: templates exceed feasible packing");
    // Spread the free frames over the n+1 gaps with random weights.
    const std::size_t free_frames = spec.frames - used;
    std::vector<double> weights(n_events + 1);
    double wsum = 0;
    for (auto& w : weights) {
      w = unit(rng) + 1e-3;
      wsum += w;
    }
    std::vector<std::size_t> gaps(n_events + 1);
    std::size_t assigned = 0;
    for (std::size_t g = 0; g < gaps.size(); ++g) {
      gaps[g] = static_cast<std::size_t>(std::floor(weights[g] / wsum * static_cast<double>(free_frames)));
      assigned += gaps[g];
    }
    gaps.back() += free_frames - assigned;

    video.features = Tensor<float>({spec.frames, spec.feature_dim});
    for (auto& v : video.features.data()) v = static_cast<float>(spec.feature_noise * gauss(rng));

    video.audio.sample_rate = audio::kModelSampleRate;
    video.audio.samples.resize(n_samples);
    for (auto& s : video.audio.samples) s = spec.audio_noise * (2.0 * unit(rng) - 1.0);

    VideoEntry entry;
    entry.id = video.id;
    entry.duration = duration;
    std::size_t cursor = gaps[0];
    for (std::size_t e = 0; e < n_events; ++e) {
      const std::size_t k = order[e];
      const std::size_t first = cursor, last = cursor + lengths[e];
      cursor = last + gaps[e + 1];

      if (spec.video_cue != VideoCue::none) {
        for (std::size_t t = first; t < last; ++t) {
          for (std::size_t d = 0; d < spec.feature_dim; ++d) video.features.at(t, d) += ds.motifs.at(k, d);
        }
      }
      const double start_frac = static_cast<double>(first) / static_cast<double>(spec.frames);
      const double end_frac = static_cast<double>(last) / static_cast<double>(spec.frames);
      const auto s0 = static_cast<std::size_t>(std::lround(start_frac * static_cast<double>(n_samples)));
      const auto s1 = static_cast<std::size_t>(std::lround(end_frac * static_cast<double>(n_samples)));
      const double omega = 2.0 * std::numbers::pi * ds.templates[k].tone_hz / audio::kModelSampleRate;
      for (std::size_t n = s0; n < s1; ++n) {
        video.audio.samples[n] += spec.tone_amplitude * std::sin(omega * static_cast<double>(n - s0));
      }

      Event ev;
      ev.start = start_frac * duration;
      ev.end = end_frac * duration;
      ev.sentence = ds.templates[k].caption;
      ev.segment = normalize_segment(ev.start, ev.end, duration);
      entry.events.push_back(std::move(ev));
      video.event_templates.push_back(k);
    }
    (split == Split::train ? ds.train : ds.val).videos.push_back(std::move(entry));
    ds.videos.push_back(std::move(video));
  }
  return ds;
}

void write_synthetic(const SyntheticDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "audio");
  save_annotations(dir / "train.json", ds.train);
  save_annotations(dir / "val.json", ds.val);
  FeatureMap feats;
  for (const auto& v : ds.videos) feats.emplace(v.id, v.features);
  save_features(dir / "video_features.bin", "video", feats);
  for (const auto& v : ds.videos) audio::write_wav(dir / "audio" / (v.id + ".wav"), v.audio);

  json meta = json::object();
  meta["seed"] = ds.spec.seed;
  meta["video_cue"] = to_string(ds.spec.video_cue);
  json templates = json::array();
  for (const auto& t : ds.templates) {
    templates.push_back({{"caption", t.caption}, {"tone_bin", t.tone_bin}, {"tone_hz", t.tone_hz}});
  }
  meta["templates"] = templates;
  json events = json::object();
  for (const auto& v : ds.videos) events[v.id] = v.event_templates;
  meta["event_templates"] = events;
  std::ofstream os(dir / "templates.json", std::ios::trunc);
  os << meta.dump(1) << '\n';
  write_records(dir / "motifs.bin", {{"motifs", ds.motifs}});
}

FeatureMap load_features(const std::filesystem::path& path, const std::string& prefix) {
  FeatureMap out;
  const std::string head = prefix + "/";
  for (auto& rec : read_records(path)) {
    if (rec.name.compare(0, head.size(), head) != 0) continue;
    if (rec.value.rank() != 2) throw DataError("feature record '" + rec.name + "' is not a matrix");
    out.emplace(rec.name.substr(head.size()), std::move(rec.value));
  }
  return out;
}

void save_features(const std::filesystem::path& path, const std::string& prefix,
                   const FeatureMap& features) {
  std::vector<TensorRecord> records;
  records.reserve(features.size());
  for (const auto& [id, t] : features) records.push_back({prefix + "/" + id, t});
  write_records(path, records);
}

// ---------------------------------------------------------------------------

namespace {

std::optional<Segment> longest_run(const std::vector<char>& hit) {
  std::size_t best_start = 0, best_len = 0, start = 0;
  for (std::size_t t = 0; t <= hit.size(); ++t) {
    if (t < hit.size() && hit[t]) continue;
    if (t - start > best_len) {
      best_len = t - start;
      best_start = start;
    }
    start = t + 1;
  }
  if (best_len == 0) return std::nullopt;
  const double n = static_cast<double>(hit.size());
  return Segment{(static_cast<double>(best_start) + static_cast<double>(best_len) / 2.0) / n,
                 static_cast<double>(best_len) / n};
}

}  // namespace

std::optional<Segment> matched_filter_video(const Tensor<float>& features,
                                            std::span<const float> motif) {
  if (features.cols() != motif.size()) throw ShapeError("matched_filter_video: motif dimension mismatch");
  double energy = 0;
  for (float m : motif) energy += static_cast<double>(m) * m;
  if (energy <= 0) return std::nullopt;
  std::vector<char> hit(features.rows());
  for (std::size_t t = 0; t < features.rows(); ++t) {
    double dot = 0;
    for (std::size_t d = 0; d < motif.size(); ++d) dot += static_cast<double>(features.at(t, d)) * motif[d];
    hit[t] = dot / energy > 0.5;
  }
  return longest_run(hit);
}

std::optional<Segment> matched_filter_audio(const Tensor<double>& cqt_frames, std::size_t bin) {
  std::vector<char> hit(cqt_frames.rows());
  for (std::size_t t = 0; t < cqt_frames.rows(); ++t) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < cqt_frames.cols(); ++k) {
      if (cqt_frames.at(t, k) > cqt_frames.at(t, best)) best = k;
    }
    hit[t] = best == bin;
  }
  return longest_run(hit);
}

double matched_filter_miou(const SyntheticDataset& ds, Split split) {
  const DatasetIndex& index = split == Split::train ? ds.train : ds.val;
  double total = 0;
  std::size_t n = 0;
  for (const auto& v : ds.videos) {
    if (v.split != split) continue;
    const VideoEntry* entry = index.find(v.id);
    const auto spec = audio::cqt(v.audio);
    for (std::size_t e = 0; e < entry->events.size(); ++e) {
      const auto est = matched_filter_audio(spec.frames, ds.templates[v.event_templates[e]].tone_bin);
      total += est ? tiou(*est, entry->events[e].segment) : 0.0;
      ++n;
    }
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

std::string to_string(VideoCue cue) {
  switch (cue) {
    case VideoCue::distinct: return "distinct";
    case VideoCue::shared: return "shared";
    case VideoCue::none: return "none";
  }
  return "distinct";
}

VideoCue video_cue_from_string(const std::string& s) {
  if (s == "distinct") return VideoCue::distinct;
  if (s == "shared") return VideoCue::shared;
  if (s == "none") return VideoCue::none;
  throw InvalidArgument("unknown video cue '" + s + "' (distinct|shared|none)");
}

}  // namespace dcav::data
