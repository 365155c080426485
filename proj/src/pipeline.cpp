#include "dcav/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "dcav/error.hpp"
#include "dcav/parameters.hpp"

namespace dcav::pipeline {

namespace fs = std::filesystem;
using model::Model;

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      {"out-dir", "out", "directory receiving every artifact"},
      {"data-dir", "", "dataset directory (default: out-dir)"},
      {"seed", "7", "seed for data synthesis, initialization, shuffling and proposals"},
      {"fusion", "mutan", "context fusion: mixture, context or mutan"},
      {"modality", "both", "context streams: audio, video or both"},
      {"audio-feature", "mfcc", "audio representation: mfcc or cqt"},
      {"mask-scale", "50", "soft mask sharpness L"},
      {"iou-threshold", "0.7", "NMS threshold for proposal filtering"},
      {"epochs", "", "epochs for the running training stage"},
      {"pretrain-epochs", "200", "pretraining epochs when --epochs is not given"},
      {"train-epochs", "30", "joint training epochs when --epochs is not given"},
      {"batch-size", "8", "videos per SGD step"},
      {"hidden", "512", "GRU hidden size k"},
      {"embed", "512", "word vector size"},
      {"audio-proj", "512", "projected audio feature size"},
      {"mutan-rank", "160", "MUTAN projection size d_t"},
      {"mutan-out-rank", "160", "MUTAN core output size d_o"},
      {"mutan-out", "512", "MUTAN output size k_out"},
      {"max-caption-len", "30", "greedy decoding length limit"},
      {"vocab-size", "6000", "vocabulary size including the 4 special tokens"},
      {"lambda-s", "0.1", "segment reconstruction weight"},
      {"lambda-r", "0.1", "anchor classification weight"},
      {"momentum", "0.8", "SGD momentum"},
      {"lr-pretrained", "0.0001", "joint-training rate for parameters loaded from pretraining"},
      {"lr-new", "0.01", "rate for freshly initialized parameters"},
      {"lr-audio-unimodal", "0.0001", "pretraining rate of audio-only models"},
      {"lr-video-unimodal", "0.01", "pretraining rate of video-only models"},
      {"target-accuracy", "0", "stop pretraining at this teacher-forced accuracy (0: off)"},
      {"eval-every", "5", "epochs between accuracy checks during pretraining"},
      {"proposals", "15", "random segments per video at inference"},
      {"split", "val", "split used by infer: train or val"},
      {"checkpoint", "", "final model checkpoint (default: out-dir/model.ckpt)"},
      {"pretrain-checkpoint", "", "pretrained checkpoint (default: out-dir/pretrain.ckpt)"},
      {"vocab", "", "vocabulary file (default: out-dir/vocab.json)"},
      {"audio-features", "", "extracted audio features (default: data-dir/audio_<feature>.bin)"},
      {"audio-dir", "", "directory of .wav files (default: data-dir/audio)"},
      {"pred", "", "predictions to evaluate (default: out-dir/predictions_<split>.json)"},
      {"gt", "", "ground truth annotations (default: data-dir/<split>.json)"},
      {"out", "", "evaluation report path (default: out-dir/report.json)"},
      {"synth-videos", "20", "synthetic training videos"},
      {"synth-val-videos", "10", "synthetic validation videos"},
      {"synth-frames", "64", "frames per synthetic video"},
      {"synth-templates", "8", "distinct synthetic event templates"},
      {"synth-min-events", "1", "fewest events per synthetic video"},
      {"synth-max-events", "3", "most events per synthetic video"},
      {"video-cue", "distinct", "visual trace of synthetic events: distinct, shared or none"},
      {"feature-noise", "0.1", "synthetic video feature noise"},
      {"audio-noise", "0.01", "synthetic audio noise amplitude"},
      {"tone-amplitude", "0.5", "synthetic event tone amplitude"},
  };
  return keys;
}

namespace {

const ConfigKey* find_key(const std::string& key) {
  for (const ConfigKey& k : config_keys()) {
    if (key == k.key) return &k;
  }
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("write failed for " + path.string());
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) throw IoError("missing " + what + ": " + path.string());
}

}  // namespace

KeyValues parse_config(const std::string& text) {
  KeyValues out;
  std::istringstream is(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(is, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidArgument("config line " + std::to_string(number) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (!find_key(key)) {
      throw InvalidArgument("config line " + std::to_string(number) + ": unknown key '" + key + "'");
    }
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

KeyValues load_config(const fs::path& path) {
  require_file(path, "config file");
  return parse_config(read_text(path));
}

RunConfig::RunConfig(std::string command, const KeyValues& file, const KeyValues& flags)
    : command_(std::move(command)) {
  if (std::find(kCommands.begin(), kCommands.end(), command_) == kCommands.end()) {
    throw InvalidArgument("unknown subcommand '" + command_ + "'");
  }
  for (const ConfigKey& k : config_keys()) values_[k.key] = k.default_value;
  for (const KeyValues* layer : {&file, &flags}) {
    for (const auto& [key, value] : *layer) {
      if (!find_key(key)) throw InvalidArgument("unknown option '" + key + "'");
      values_[key] = value;
      explicit_.insert(key);
    }
  }
  // Parse eagerly so bad values fail before any work starts.
  (void)seed();
  (void)model::fusion_from_string(get("fusion"));
  (void)model::modality_from_string(get("modality"));
  (void)audio_kind(*this);
  (void)split_from_string(get("split"));
  (void)data::video_cue_from_string(get("video-cue"));
  for (const char* key : {"mask-scale", "iou-threshold", "lambda-s", "lambda-r", "momentum",
                          "lr-pretrained", "lr-new", "lr-audio-unimodal", "lr-video-unimodal",
                          "target-accuracy", "feature-noise", "audio-noise", "tone-amplitude"}) {
    (void)real(key);
  }
  for (const char* key : {"pretrain-epochs", "train-epochs", "batch-size", "hidden", "embed",
                          "audio-proj", "mutan-rank", "mutan-out-rank", "mutan-out",
                          "max-caption-len", "vocab-size", "eval-every", "proposals",
                          "synth-videos", "synth-val-videos", "synth-frames", "synth-templates",
                          "synth-min-events", "synth-max-events"}) {
    (void)count(key);
  }
  if (has("epochs")) (void)count("epochs");
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw InvalidArgument("unknown option '" + key + "'");
  return it->second;
}

double RunConfig::real(const std::string& key) const {
  const std::string& v = get(key);
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw InvalidArgument("option '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

std::size_t RunConfig::count(const std::string& key) const {
  const std::string& v = get(key);
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw InvalidArgument("option '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool RunConfig::flag(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no" || v.empty()) return false;
  throw InvalidArgument("option '" + key + "' expects true or false, got '" + v + "'");
}

std::uint64_t RunConfig::seed() const {
  const std::string& v = get("seed");
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw InvalidArgument("option 'seed' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

fs::path RunConfig::out_dir() const { return fs::path(get("out-dir")); }

fs::path RunConfig::data_dir() const { return has("data-dir") ? fs::path(get("data-dir")) : out_dir(); }

fs::path RunConfig::path_or(const std::string& key, const fs::path& fallback) const {
  return has(key) ? fs::path(get(key)) : fallback;
}

RunConfig RunConfig::with(const KeyValues& overrides) const {
  RunConfig out = *this;
  for (const auto& [key, value] : overrides) {
    if (!find_key(key)) throw InvalidArgument("unknown option '" + key + "'");
    out.values_[key] = value;
    out.explicit_.insert(key);
  }
  return out;
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "# " << command_ << "\n";
  for (const auto& [key, value] : values_) os << key << " = " << value << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------

audio::SpectrogramKind audio_kind(const RunConfig& rc) {
  const std::string& v = rc.get("audio-feature");
  if (v == "mfcc") return audio::SpectrogramKind::mfcc;
  if (v == "cqt") return audio::SpectrogramKind::cqt;
  throw InvalidArgument("unknown audio feature '" + v + "' (expected mfcc or cqt)");
}

namespace {

std::string to_string(audio::SpectrogramKind k) { return k == audio::SpectrogramKind::cqt ? "cqt" : "mfcc"; }

std::size_t audio_dim(audio::SpectrogramKind k) {
  return k == audio::SpectrogramKind::cqt ? audio::CqtOptions{}.n_bins : audio::MfccOptions{}.n_coeffs;
}

std::string split_name(data::Split s) { return s == data::Split::train ? "train" : "val"; }

}  // namespace

data::Split split_from_string(const std::string& s) {
  if (s == "train") return data::Split::train;
  if (s == "val") return data::Split::val;
  throw InvalidArgument("unknown split '" + s + "' (expected train or val)");
}

model::ModelConfig model_config(const RunConfig& rc, std::size_t vocab_size) {
  model::ModelConfig c;
  c.hidden = rc.count("hidden");
  c.embed = rc.count("embed");
  c.audio_dim = audio_dim(audio_kind(rc));
  c.audio_proj = rc.count("audio-proj");
  c.vocab_size = vocab_size;
  c.modality = model::modality_from_string(rc.get("modality"));
  c.fusion = model::fusion_from_string(rc.get("fusion"));
  c.mutan_rank = rc.count("mutan-rank");
  c.mutan_out_rank = rc.count("mutan-out-rank");
  c.mutan_out = rc.count("mutan-out");
  c.mask_scale = rc.real("mask-scale");
  c.max_caption_len = rc.count("max-caption-len");
  if (!(c.mask_scale > 0)) throw InvalidArgument("mask-scale must be positive");
  if (c.max_caption_len == 0) throw InvalidArgument("max-caption-len must be positive");
  return c;
}

training::TrainingConfig training_config(const RunConfig& rc, const std::string& stage) {
  training::TrainingConfig c;
  c.lambda_s = rc.real("lambda-s");
  c.lambda_r = rc.real("lambda-r");
  c.momentum = rc.real("momentum");
  c.lr_pretrained = rc.real("lr-pretrained");
  c.lr_new = rc.real("lr-new");
  c.lr_audio_unimodal = rc.real("lr-audio-unimodal");
  c.lr_video_unimodal = rc.real("lr-video-unimodal");
  c.epochs = rc.has("epochs") ? rc.count("epochs") : rc.count(stage == "pretrain" ? "pretrain-epochs" : "train-epochs");
  c.batch_size = rc.count("batch-size");
  c.seed = rc.seed();
  c.target_accuracy = rc.real("target-accuracy");
  c.eval_every = rc.count("eval-every");
  c.validate();
  return c;
}

inference::InferenceConfig inference_config(const RunConfig& rc) {
  inference::InferenceConfig c;
  c.proposals = rc.count("proposals");
  c.iou_threshold = rc.real("iou-threshold");
  c.seed = rc.seed();
  c.validate();
  return c;
}

data::SyntheticSpec synthetic_spec(const RunConfig& rc) {
  data::SyntheticSpec s;
  s.seed = rc.seed();
  s.n_videos = rc.count("synth-videos");
  s.n_val = rc.count("synth-val-videos");
  s.frames = rc.count("synth-frames");
  s.n_templates = rc.count("synth-templates");
  s.min_events = rc.count("synth-min-events");
  s.max_events = rc.count("synth-max-events");
  s.video_cue = data::video_cue_from_string(rc.get("video-cue"));
  s.feature_noise = rc.real("feature-noise");
  s.audio_noise = rc.real("audio-noise");
  s.tone_amplitude = rc.real("tone-amplitude");
  return s;
}

fs::path vocab_path(const RunConfig& rc) { return rc.path_or("vocab", rc.out_dir() / "vocab.json"); }

fs::path audio_features_path(const RunConfig& rc) {
  return rc.path_or("audio-features", rc.data_dir() / ("audio_" + to_string(audio_kind(rc)) + ".bin"));
}

fs::path pretrain_checkpoint_path(const RunConfig& rc) {
  return rc.path_or("pretrain-checkpoint", rc.out_dir() / "pretrain.ckpt");
}

fs::path checkpoint_path(const RunConfig& rc) { return rc.path_or("checkpoint", rc.out_dir() / "model.ckpt"); }

fs::path predictions_path(const RunConfig& rc) {
  return rc.path_or("pred", rc.out_dir() / ("predictions_" + rc.get("split") + ".json"));
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_model(const fs::path& path, const Model<float>& model, const std::vector<std::string>& names,
                const std::string& stage, audio::SpectrogramKind audio_feature) {
  std::vector<TensorRecord> records;
  for (const std::string& n : names) records.push_back({n, model.parameters().get(n).value()});
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_records(path, records);
  const model::ModelConfig& c = model.config();
  nlohmann::ordered_json j;
  j["stage"] = stage;
  j["hidden"] = c.hidden;
  j["embed"] = c.embed;
  j["video_dim"] = c.video_dim;
  j["audio_dim"] = c.audio_dim;
  j["audio_proj"] = c.audio_proj;
  j["vocab_size"] = c.vocab_size;
  j["modality"] = model::to_string(c.modality);
  j["fusion"] = model::to_string(c.fusion);
  j["audio_feature"] = to_string(audio_feature);
  j["mutan_rank"] = c.mutan_rank;
  j["mutan_out_rank"] = c.mutan_out_rank;
  j["mutan_out"] = c.mutan_out;
  j["mask_scale"] = c.mask_scale;
  j["max_caption_len"] = c.max_caption_len;
  write_text(fs::path(path.string() + ".json"), j.dump(2) + "\n");
}

LoadedModel load_model(const fs::path& path, const RunConfig& rc) {
  require_file(path, "checkpoint");
  const fs::path sidecar(path.string() + ".json");
  require_file(sidecar, "checkpoint description");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(sidecar));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint description " + sidecar.string() + ": " + e.what());
  }
  const auto conflict = [&](const std::string& key, const std::string& stored) {
    if (rc.is_explicit(key) && rc.get(key) != stored) {
      throw InvalidArgument("config conflict: " + path.string() + " was trained with " + key + " = " +
                            stored + " but this run requests " + rc.get(key));
    }
  };
  model::ModelConfig c;
  try {
    c.hidden = j.at("hidden").get<std::size_t>();
    c.embed = j.at("embed").get<std::size_t>();
    c.video_dim = j.at("video_dim").get<std::size_t>();
    c.audio_dim = j.at("audio_dim").get<std::size_t>();
    c.audio_proj = j.at("audio_proj").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.modality = model::modality_from_string(j.at("modality").get<std::string>());
    c.fusion = model::fusion_from_string(j.at("fusion").get<std::string>());
    c.mutan_rank = j.at("mutan_rank").get<std::size_t>();
    c.mutan_out_rank = j.at("mutan_out_rank").get<std::size_t>();
    c.mutan_out = j.at("mutan_out").get<std::size_t>();
    c.mask_scale = j.at("mask_scale").get<double>();
    c.max_caption_len = j.at("max_caption_len").get<std::size_t>();
    conflict("modality", j.at("modality").get<std::string>());
    conflict("fusion", j.at("fusion").get<std::string>());
    conflict("audio-feature", j.at("audio_feature").get<std::string>());
    for (const auto& [key, field] : {std::pair{"hidden", "hidden"}, {"embed", "embed"},
                                     {"audio-proj", "audio_proj"}, {"mutan-rank", "mutan_rank"},
                                     {"mutan-out-rank", "mutan_out_rank"}, {"mutan-out", "mutan_out"}}) {
      conflict(key, std::to_string(j.at(field).get<std::size_t>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("incomplete checkpoint description " + sidecar.string() + ": " + e.what());
  }
  // The soft mask sharpness is an inference-time knob.
  if (rc.is_explicit("mask-scale")) c.mask_scale = rc.real("mask-scale");
  if (rc.is_explicit("max-caption-len")) c.max_caption_len = rc.count("max-caption-len");

  LoadedModel out;
  out.stage = j.value("stage", "");
  out.model = std::make_unique<Model<float>>(c, rc.seed());
  out.loaded = load_checkpoint(path, out.model->parameters());
  return out;
}

// ---------------------------------------------------------------------------
// Data

namespace {

// Audio statistics come from the training split's clips so every split is
// normalized the same way; all clips are used when no training index exists.
audio::FeatureNormalizer fit_normalizer(const RunConfig& rc, const data::FeatureMap& features,
                                        audio::SpectrogramKind kind) {
  std::set<std::string> train_ids;
  const fs::path train_path = rc.data_dir() / "train.json";
  if (fs::exists(train_path)) {
    for (const data::VideoEntry& v : data::load_annotations(train_path, data::Split::train).videos) {
      train_ids.insert(v.id);
    }
  }
  std::vector<audio::Spectrogram> corpus;
  for (const auto& [id, frames] : features) {
    if (!train_ids.empty() && !train_ids.count(id)) continue;
    audio::Spectrogram s;
    s.kind = kind;
    s.frames = frames.cast<double>();
    corpus.push_back(std::move(s));
  }
  if (corpus.empty()) throw DataError("no training-split audio features to normalize with");
  return audio::FeatureNormalizer::fit(corpus);
}

}  // namespace

std::vector<training::VideoSample> load_samples(const RunConfig& rc, data::Split split,
                                                const data::Vocabulary& vocab,
                                                const model::ModelConfig& config) {
  const fs::path ann_path = rc.data_dir() / (split_name(split) + ".json");
  require_file(ann_path, "annotations");
  const data::DatasetIndex index = data::load_annotations(ann_path, split);

  data::FeatureMap video;
  if (config.uses_video()) {
    const fs::path vp = rc.data_dir() / "video_features.bin";
    require_file(vp, "video features");
    video = data::load_features(vp, "video");
  }
  data::FeatureMap audio_feats;
  const audio::SpectrogramKind kind = audio_kind(rc);
  if (config.uses_audio()) {
    const fs::path ap = audio_features_path(rc);
    require_file(ap, "audio features (run extract-audio)");
    audio_feats = data::load_features(ap, to_string(kind));
  }
  const audio::FeatureNormalizer normalizer = config.uses_audio() ? fit_normalizer(rc, audio_feats, kind)
                                                                  : audio::FeatureNormalizer{};

  std::vector<training::VideoSample> out;
  for (const data::VideoEntry& v : index.videos) {
    training::VideoSample s;
    s.id = v.id;
    s.duration = v.duration;
    for (const data::Event& e : v.events) {
      s.captions.push_back(vocab.encode(e.sentence));
      s.segments.push_back(e.segment);
    }
    if (config.uses_video()) {
      const auto it = video.find(v.id);
      if (it == video.end()) throw DataError("no video features for '" + v.id + "'");
      if (it->second.rank() != 2 || it->second.cols() != config.video_dim) {
        throw DataError("video features for '" + v.id + "' have shape " +
                        shape_string(it->second.shape()) + ", expected T×" +
                        std::to_string(config.video_dim));
      }
      s.video = it->second;
    }
    if (config.uses_audio()) {
      const auto it = audio_feats.find(v.id);
      if (it == audio_feats.end()) {
        // Missing audio is treated as silence-free zero features.
        const std::size_t rows = s.video.empty() ? 1 : s.video.rows();
        spdlog::warn("no audio features for '{}'; using zeros", v.id);
        s.audio = Tensor<float>({rows, config.audio_dim}, 0.0f);
      } else {
        if (it->second.rank() != 2 || it->second.cols() != config.audio_dim) {
          throw DataError("audio features for '" + v.id + "' have shape " +
                          shape_string(it->second.shape()) + ", expected T×" +
                          std::to_string(config.audio_dim));
        }
        audio::Spectrogram spec;
        spec.kind = kind;
        spec.frames = it->second.cast<double>();
        s.audio = normalizer.apply(spec).cast<float>();
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

data::SyntheticDataset synth_data(const RunConfig& rc) {
  data::SyntheticDataset ds = data::generate_synthetic(synthetic_spec(rc));
  data::write_synthetic(ds, rc.out_dir());
  spdlog::info("wrote {} train and {} val videos to {}", ds.train.videos.size(), ds.val.videos.size(),
               rc.out_dir().string());
  return ds;
}

void extract_audio(const RunConfig& rc) {
  const fs::path dir = rc.path_or("audio-dir", rc.data_dir() / "audio");
  if (!fs::is_directory(dir)) throw IoError("missing audio directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".wav") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .wav files in " + dir.string());
  const audio::SpectrogramKind kind = audio_kind(rc);
  data::FeatureMap features;
  for (const fs::path& f : files) {
    audio::Waveform w = audio::read_wav(f);
    if (w.sample_rate != audio::kModelSampleRate) w = audio::resample(w, audio::kModelSampleRate);
    const audio::Spectrogram s = kind == audio::SpectrogramKind::cqt ? audio::cqt(w) : audio::mfcc(w);
    if (s.frames.empty()) throw DataError(f.string() + " is shorter than one analysis window");
    features[f.stem().string()] = s.frames.cast<float>();
  }
  const fs::path out = rc.out_dir() / ("audio_" + to_string(kind) + ".bin");
  fs::create_directories(rc.out_dir());
  data::save_features(out, to_string(kind), features);
  spdlog::info("extracted {} features for {} clips into {}", to_string(kind), features.size(), out.string());
}

data::Vocabulary build_vocab(const RunConfig& rc) {
  const fs::path ann = rc.data_dir() / "train.json";
  require_file(ann, "training annotations");
  const data::Vocabulary vocab = data::build_vocab(data::load_annotations(ann, data::Split::train),
                                                   rc.count("vocab-size"));
  const fs::path out = rc.out_dir() / "vocab.json";
  fs::create_directories(rc.out_dir());
  vocab.save(out);
  spdlog::info("vocabulary of {} entries written to {}", vocab.size(), out.string());
  return vocab;
}

namespace {

data::Vocabulary load_vocab(const RunConfig& rc) {
  const fs::path p = vocab_path(rc);
  require_file(p, "vocabulary (run build-vocab)");
  return data::Vocabulary::load(p);
}

training::StepCallback jsonl_writer(std::ofstream& os) {
  return [&os](const training::StepLog& log) { os << training::step_log_json(log) << "\n"; };
}

}  // namespace

training::PretrainResult pretrain(const RunConfig& rc) {
  const data::Vocabulary vocab = load_vocab(rc);
  const model::ModelConfig mc = model_config(rc, vocab.size());
  const auto samples = load_samples(rc, data::Split::train, vocab, mc);
  Model<float> m(mc, rc.seed());
  fs::create_directories(rc.out_dir());
  std::ofstream log(rc.out_dir() / "pretrain_log.jsonl", std::ios::trunc);
  const training::PretrainResult result =
      training::pretrain(m, samples, training_config(rc, "pretrain"), jsonl_writer(log));
  save_model(pretrain_checkpoint_path(rc), m, m.generator_parameter_names(), "pretrain", audio_kind(rc));
  spdlog::info("pretrained {} epochs ({} steps), teacher-forced accuracy {:.4f}", result.epochs_run,
               result.steps, result.final_accuracy);
  return result;
}

training::JointResult train(const RunConfig& rc) {
  LoadedModel lm = load_model(pretrain_checkpoint_path(rc), rc);
  const data::Vocabulary vocab = load_vocab(rc);
  if (lm.model->config().vocab_size != vocab.size()) {
    throw InvalidArgument("config conflict: checkpoint vocabulary has " +
                          std::to_string(lm.model->config().vocab_size) + " entries, vocabulary file " +
                          std::to_string(vocab.size()));
  }
  const auto samples = load_samples(rc, data::Split::train, vocab, lm.model->config());
  const std::set<std::string> pretrained(lm.loaded.begin(), lm.loaded.end());
  fs::create_directories(rc.out_dir());
  std::ofstream log(rc.out_dir() / "train_log.jsonl", std::ios::trunc);
  const training::JointResult result =
      training::joint_train(*lm.model, samples, training_config(rc, "train"), pretrained, jsonl_writer(log));
  save_model(checkpoint_path(rc), *lm.model, lm.model->all_parameter_names(), "final", audio_kind(rc));
  spdlog::info("joint training finished after {} epochs ({} steps)", result.epochs_run, result.steps);
  return result;
}

inference::Predictions infer(const RunConfig& rc) {
  LoadedModel lm = load_model(checkpoint_path(rc), rc);
  const data::Vocabulary vocab = load_vocab(rc);
  const data::Split split = split_from_string(rc.get("split"));
  const auto samples = load_samples(rc, split, vocab, lm.model->config());
  const inference::InferenceConfig ic = inference_config(rc);
  inference::Predictions predictions;
  for (const training::VideoSample& s : samples) {
    Tape<float> tape;
    const auto ctx = training::encode_sample(*lm.model, tape, s);
    predictions[s.id] = inference::generate_dense_captions(*lm.model, ctx, s.id, s.duration, vocab, ic);
  }
  const fs::path out = rc.out_dir() / ("predictions_" + rc.get("split") + ".json");
  write_text(out, inference::predictions_to_json(predictions));
  spdlog::info("predictions for {} videos written to {}", predictions.size(), out.string());
  return predictions;
}

metrics::EvalReport evaluate(const RunConfig& rc) {
  const fs::path pred = predictions_path(rc);
  const fs::path gt = rc.path_or("gt", rc.data_dir() / (rc.get("split") + ".json"));
  require_file(pred, "predictions");
  require_file(gt, "ground truth");
  const metrics::EvalReport report = metrics::evaluate_dense(
      inference::predictions_from_json(read_text(pred)),
      data::load_annotations(gt, split_from_string(rc.get("split"))));
  const fs::path out = rc.path_or("out", rc.out_dir() / "report.json");
  write_text(out, report.to_json());
  spdlog::info("report written to {} (mIoU {:.2f})", out.string(), 100 * report.miou);
  return report;
}

gradcheck::SuiteReport gradcheck(const RunConfig& rc) {
  const gradcheck::SuiteReport report = gradcheck::run_suite(rc.seed());
  nlohmann::ordered_json j;
  j["tolerance"] = report.tolerance;
  j["passed"] = report.passed();
  nlohmann::ordered_json checks = nlohmann::ordered_json::array();
  for (const auto& r : report.results) {
    checks.push_back({{"name", r.name}, {"rel_error", r.rel_error}, {"passed", r.passed}});
    if (!r.passed) spdlog::error("gradient check {} failed: rel error {:.3e}", r.name, r.rel_error);
  }
  j["checks"] = checks;
  write_text(rc.out_dir() / "gradcheck.json", j.dump(2) + "\n");
  return report;
}

// ---------------------------------------------------------------------------
// Pretrained protocol and fusion comparison

metrics::MetricScores evaluate_pretrained(const Model<float>& model,
                                          const std::vector<training::VideoSample>& samples,
                                          const data::Vocabulary& vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> center(0.05, 0.95), length(0.1, 0.8);
  std::vector<metrics::CiderItem> items;
  metrics::MetricScores scores;
  for (const training::VideoSample& s : samples) {
    if (s.captions.empty()) continue;
    const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, s.captions.size() - 1)(rng);
    const Segment seg{center(rng), length(rng)};
    Tape<float> tape;
    const auto ctx = training::encode_sample(model, tape, s);
    const model::GreedyCaption g = model.greedy_caption(ctx, seg);
    metrics::CiderItem item;
    item.candidate = data::tokenize(vocab.decode(g.tokens));
    item.references.push_back(data::tokenize(vocab.decode(s.captions[pick])));
    for (int n = 1; n <= 4; ++n) scores.bleu[n - 1] += metrics::bleu_n(item.candidate, item.references, n);
    scores.rouge_l += metrics::rouge_l(item.candidate, item.references);
    items.push_back(std::move(item));
  }
  if (items.empty()) return scores;
  const double n = static_cast<double>(items.size());
  for (double& b : scores.bleu) b /= n;
  scores.rouge_l /= n;
  if (items.size() >= 2) scores.cider = metrics::cider(items);
  return scores;
}

double FusionComparison::mutan_margin() const {
  double mutan = -1, video = -1;
  for (const ComparisonRow& r : rows) {
    if (r.modality == model::Modality::video) video = r.final_report.miou;
    if (r.modality == model::Modality::both && r.fusion == model::Fusion::mutan) mutan = r.final_report.miou;
  }
  if (mutan < 0 || video < 0) throw InvalidArgument("comparison lacks the mutan or video-only row");
  return 100.0 * (mutan - video);
}

namespace {

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string score_cells(const metrics::MetricScores& s) {
  std::string out = "| - | " + fmt2(100 * s.cider) + " | " + fmt2(100 * s.rouge_l);
  for (double b : s.bleu) out += " | " + fmt2(100 * b);
  return out + " | - |";
}

}  // namespace

std::string FusionComparison::to_markdown() const {
  std::ostringstream os;
  os << "| Model | M | C | R | B@1 | B@2 | B@3 | B@4 | S | mIoU |\n";
  os << "|---|---|---|---|---|---|---|---|---|---|\n";
  os << "| **Pretrained model** | | | | | | | | | |\n";
  for (const ComparisonRow& r : rows) os << "| " << r.name << " " << score_cells(r.pretrained) << " - |\n";
  os << "| **Final model** | | | | | | | | | |\n";
  for (const ComparisonRow& r : rows) {
    os << "| " << r.name << " " << score_cells(r.final_report.mean) << " " << fmt2(100 * r.final_report.miou)
       << " |\n";
  }
  return os.str();
}

std::string FusionComparison::to_json() const {
  const auto scores = [](const metrics::MetricScores& s) {
    nlohmann::ordered_json j;
    j["METEOR"] = nullptr;
    j["CIDEr"] = 100 * s.cider;
    j["ROUGE_L"] = 100 * s.rouge_l;
    for (int n = 0; n < 4; ++n) j["Bleu_" + std::to_string(n + 1)] = 100 * s.bleu[n];
    j["SPICE"] = nullptr;
    return j;
  };
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const ComparisonRow& r : rows) {
    nlohmann::ordered_json row;
    row["name"] = r.name;
    row["modality"] = model::to_string(r.modality);
    row["fusion"] = model::to_string(r.fusion);
    row["pretrained"] = scores(r.pretrained);
    nlohmann::ordered_json fin = scores(r.final_report.mean);
    fin["mIoU"] = 100 * r.final_report.miou;
    row["final"] = fin;
    j.push_back(row);
  }
  return j.dump(2) + "\n";
}

FusionComparison compare_fusion(const RunConfig& rc) {
  // Shared data: synthesize, extract audio and build the vocabulary when absent.
  const RunConfig base = rc.with({{"data-dir", rc.data_dir().string()}});
  if (!fs::exists(base.data_dir() / "train.json")) synth_data(base.with({{"out-dir", base.data_dir().string()}}));
  if (!fs::exists(audio_features_path(base))) {
    extract_audio(base.with({{"out-dir", base.data_dir().string()}}));
  }
  const fs::path vocab_file = base.data_dir() / "vocab.json";
  if (!rc.has("vocab") && !fs::exists(vocab_file)) build_vocab(base.with({{"out-dir", base.data_dir().string()}}));
  const RunConfig shared = base.with({{"vocab", rc.has("vocab") ? rc.get("vocab") : vocab_file.string()}});

  struct Variant {
    std::string name;
    std::string modality;
    std::string fusion;
  };
  const std::vector<Variant> variants{
      {"Unimodal (video)", "video", "mutan"},
      {"Multiplicative mixture fusion", "both", "mixture"},
      {"Multi-modal context fusion", "both", "context"},
      {"MUTAN fusion", "both", "mutan"},
  };
  FusionComparison out;
  for (const Variant& v : variants) {
    const std::string tag = v.modality == "video" ? "video_only" : v.fusion;
    const RunConfig run = shared.with({{"modality", v.modality},
                                       {"fusion", v.fusion},
                                       {"out-dir", (rc.out_dir() / tag).string()},
                                       {"checkpoint", ""},
                                       {"pretrain-checkpoint", ""},
                                       {"pred", ""},
                                       {"out", ""},
                                       {"split", "val"}});
    spdlog::info("compare-fusion: {}", v.name);
    write_text(run.out_dir() / "compare-fusion.config", run.to_text());
    pretrain(run);
    ComparisonRow row;
    row.name = v.name;
    row.modality = model::modality_from_string(v.modality);
    row.fusion = model::fusion_from_string(v.fusion);
    {
      const data::Vocabulary vocab = load_vocab(run);
      LoadedModel pre = load_model(pretrain_checkpoint_path(run), run);
      const auto val = load_samples(run, data::Split::val, vocab, pre.model->config());
      row.pretrained = evaluate_pretrained(*pre.model, val, vocab, run.seed());
    }
    train(run);
    infer(run);
    row.final_report = evaluate(run);
    out.rows.push_back(std::move(row));
  }
  write_text(rc.out_dir() / "fusion_comparison.md", out.to_markdown());
  write_text(rc.out_dir() / "fusion_comparison.json", out.to_json());
  spdlog::info("MUTAN minus video-only mIoU: {:+.2f} points", out.mutan_margin());
  return out;
}

// ---------------------------------------------------------------------------

int run(const RunConfig& rc) {
  fs::create_directories(rc.out_dir());
  write_text(rc.out_dir() / (rc.command() + ".config"), rc.to_text());
  spdlog::info("resolved configuration:\n{}", rc.to_text());
  const std::string& cmd = rc.command();
  if (cmd == "synth-data") {
    synth_data(rc);
  } else if (cmd == "extract-audio") {
    extract_audio(rc);
  } else if (cmd == "build-vocab") {
    build_vocab(rc);
  } else if (cmd == "pretrain") {
    pretrain(rc);
  } else if (cmd == "train") {
    train(rc);
  } else if (cmd == "infer") {
    infer(rc);
  } else if (cmd == "evaluate") {
    evaluate(rc);
  } else if (cmd == "gradcheck") {
    const gradcheck::SuiteReport report = gradcheck(rc);
    spdlog::info("gradient checks: {} of {} passed",
                 std::count_if(report.results.begin(), report.results.end(),
                               [](const gradcheck::CheckResult& r) { return r.passed; }),
                 report.results.size());
    return report.passed() ? 0 : 1;
  } else if (cmd == "compare-fusion") {
    compare_fusion(rc);
  }
  return 0;
}

}  // namespace dcav::pipeline
