#include "dcav/model.hpp"

#include <algorithm>
#include <cmath>

#include "dcav/error.hpp"

namespace dcav::model {

std::string to_string(Modality m) {
  switch (m) {
    case Modality::audio: return "audio";
    case Modality::video: return "video";
    case Modality::both: return "both";
  }
  return "both";
}

std::string to_string(Fusion f) {
  switch (f) {
    case Fusion::mixture: return "mixture";
    case Fusion::context: return "context";
    case Fusion::mutan: return "mutan";
  }
  return "mutan";
}

Modality modality_from_string(const std::string& s) {
  if (s == "audio") return Modality::audio;
  if (s == "video") return Modality::video;
  if (s == "both") return Modality::both;
  throw InvalidArgument("unknown modality '" + s + "' (expected audio, video or both)");
}

Fusion fusion_from_string(const std::string& s) {
  if (s == "mixture") return Fusion::mixture;
  if (s == "context") return Fusion::context;
  if (s == "mutan") return Fusion::mutan;
  throw InvalidArgument("unknown fusion '" + s + "' (expected mixture, context or mutan)");
}

std::size_t ModelConfig::fused_dim() const {
  if (modality != Modality::both) return hidden;
  return fusion == Fusion::mutan ? mutan_out : 3 * hidden;
}

const std::array<Segment, kAnchorCount>& anchors() {
  static const std::array<Segment, kAnchorCount> table = [] {
    std::array<Segment, kAnchorCount> a{};
    std::size_t i = 0;
    for (std::size_t level = 0; level < 4; ++level) {
      const std::size_t count = std::size_t{1} << level;
      const double len = 1.0 / static_cast<double>(count);
      for (std::size_t j = 0; j < count; ++j) a[i++] = {(static_cast<double>(j) + 0.5) * len, len};
    }
    return a;
  }();
  return table;
}

std::size_t best_anchor(const Segment& s) {
  std::size_t best = 0;
  double best_iou = -1;
  for (std::size_t j = 0; j < kAnchorCount; ++j) {
    const double v = tiou(anchors()[j], s);
    if (v > best_iou) {
      best_iou = v;
      best = j;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------

template <typename Real>
Linear<Real>::Linear(ParameterStore<Real>& store, const std::string& prefix, std::size_t in,
                     std::size_t out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = &store.create(prefix + ".weight", uniform_tensor<Real>({in, out}, bound, rng));
  bias_ = &store.create(prefix + ".bias", Tensor<Real>({1, out}, Real(0)));
}

template <typename Real>
Var<Real> Linear<Real>::operator()(Tape<Real>& tape, const Var<Real>& x) const {
  return add_row(matmul(x, tape.param(*weight_)), tape.param(*bias_));
}

template <typename Real>
Gru<Real>::Gru(ParameterStore<Real>& store, const std::string& prefix, std::size_t input_dim,
               std::size_t hidden, std::mt19937_64& rng)
    : input_dim_(input_dim), hidden_(hidden) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  w_ = &store.create(prefix + ".w", uniform_tensor<Real>({input_dim, 3 * hidden}, bound, rng));
  u_gates_ = &store.create(prefix + ".u_gates", uniform_tensor<Real>({hidden, 2 * hidden}, bound, rng));
  u_cand_ = &store.create(prefix + ".u_candidate", uniform_tensor<Real>({hidden, hidden}, bound, rng));
  bias_ = &store.create(prefix + ".bias", Tensor<Real>({1, 3 * hidden}, Real(0)));
}

template <typename Real>
Var<Real> Gru<Real>::step_projected(Tape<Real>& tape, const Var<Real>& xw,
                                    const Var<Real>& h) const {
  const std::size_t k = hidden_;
  const Var<Real> gates = sigmoid(add(slice_cols(xw, 0, 2 * k), matmul(h, tape.param(*u_gates_))));
  const Var<Real> z = slice_cols(gates, 0, k);
  const Var<Real> r = slice_cols(gates, k, 2 * k);
  const Var<Real> cand =
      tanh(add(slice_cols(xw, 2 * k, 3 * k), matmul(mul(r, h), tape.param(*u_cand_))));
  return add(h, mul(z, sub(cand, h)));
}

template <typename Real>
Var<Real> Gru<Real>::step(Tape<Real>& tape, const Var<Real>& x, const Var<Real>& h) const {
  const Var<Real> xw = add_row(matmul(x, tape.param(*w_)), tape.param(*bias_));
  return step_projected(tape, xw, h);
}

template <typename Real>
Var<Real> Gru<Real>::run(Tape<Real>& tape, const Var<Real>& inputs, const Var<Real>& h0) const {
  const std::size_t steps = inputs.value().rows();
  if (steps == 0) throw ShapeError("gru: empty input sequence");
  if (inputs.value().cols() != input_dim_) {
    throw ShapeError("gru: input width " + std::to_string(inputs.value().cols()) +
                     " != " + std::to_string(input_dim_));
  }
  // Input projections for every step in one product.
  const Var<Real> xw = add_row(matmul(inputs, tape.param(*w_)), tape.param(*bias_));
  std::vector<Var<Real>> states;
  states.reserve(steps);
  Var<Real> h = h0;
  for (std::size_t t = 0; t < steps; ++t) {
    h = step_projected(tape, slice_rows(xw, t, t + 1), h);
    states.push_back(h);
  }
  return concat<Real>(states, 0);
}

template <typename Real>
EncodedContext<Real> Gru<Real>::encode(Tape<Real>& tape, const Var<Real>& inputs) const {
  const Var<Real> h0 = tape.constant(Tensor<Real>({1, hidden_}, Real(0)));
  const Var<Real> outputs = run(tape, inputs, h0);
  const std::size_t steps = outputs.value().rows();
  return {outputs, slice_rows(outputs, steps - 1, steps)};
}

template <typename Real>
Embedding<Real>::Embedding(ParameterStore<Real>& store, const std::string& name, std::size_t vocab,
                           std::size_t dim, std::mt19937_64& rng) {
  if (vocab == 0) throw InvalidArgument("embedding: empty vocabulary");
  table_ = &store.create(name, uniform_tensor<Real>({vocab, dim}, 0.1, rng));
}

template <typename Real>
Var<Real> Embedding<Real>::operator()(Tape<Real>& tape, std::span<const int> ids) const {
  return gather_rows(tape.param(*table_), ids);
}

template <typename Real>
Var<Real> attend(Tape<Real>& tape, const Var<Real>& query, const Var<Real>& alpha,
                 const Var<Real>& memory, Var<Real>* weights) {
  (void)tape;
  const Var<Real> scores = matmul(matmul(query, alpha), transpose(memory));
  const Var<Real> w = softmax(scores, 1);
  if (weights) *weights = w;
  return matmul(w, memory);
}

template <typename Real>
Var<Real> attention_feature_fusion(Tape<Real>& tape, std::span<const Var<Real>> parts,
                                   const Linear<Real>& fc) {
  if (parts.size() < 2) throw InvalidArgument("attention fusion needs at least two inputs");
  Var<Real> total = parts[0];
  Var<Real> product = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) {
    total = add(total, parts[i]);
    product = mul(product, parts[i]);
  }
  const Var<Real> projected = fc(tape, concat(parts, 1));
  const std::vector<Var<Real>> out{total, product, projected};
  return concat<Real>(out, 1);
}

template <typename Real>
Var<Real> multiplicative_mixture(Tape<Real>& tape, const Var<Real>& v, const Var<Real>& a) {
  (void)tape;
  const std::vector<Var<Real>> out{add(v, a), v, a};
  return concat<Real>(out, 1);
}

template <typename Real>
Var<Real> multimodal_context_fusion(Tape<Real>& tape, const Var<Real>& v, const Var<Real>& a,
                                    const Linear<Real>& fc) {
  const std::vector<Var<Real>> both{v, a};
  const std::vector<Var<Real>> out{add(v, a), mul(v, a), fc(tape, concat<Real>(both, 1))};
  return concat<Real>(out, 1);
}

template <typename Real>
Var<Real> mutan_fusion(Tape<Real>& tape, const Var<Real>& v, const Var<Real>& a,
                       const MutanParams<Real>& p) {
  const Var<Real> vt = tanh(matmul(v, tape.param(*p.w_video)));
  const Var<Real> at = tanh(matmul(a, tape.param(*p.w_audio)));
  const Var<Real> core = tape.param(*p.core);
  const Var<Real> mixed = mode_product(mode_product(core, vt, 1), at, 2);
  const std::size_t d_o = mixed.value().dim(2);
  return matmul(reshape(mixed, {1, d_o}), tape.param(*p.w_out));
}

template <typename Real>
Var<Real> clip_context(Tape<Real>& tape, const Var<Real>& segment, const Var<Real>& outputs,
                       Real mask_scale) {
  (void)tape;
  const Var<Real> mask = soft_mask(segment, outputs.value().rows(), mask_scale);
  return weighted_mean(mask, outputs);
}

template <typename Real>
Contexts<Real> detach(const Contexts<Real>& contexts, Tape<Real>& tape) {
  Contexts<Real> out;
  const auto copy = [&](const EncodedContext<Real>& c) {
    const Var<Real> o = tape.constant(c.outputs.value());
    const std::size_t steps = o.value().rows();
    return EncodedContext<Real>{o, slice_rows(o, steps - 1, steps)};
  };
  if (contexts.video) out.video = copy(*contexts.video);
  if (contexts.audio) out.audio = copy(*contexts.audio);
  return out;
}

// ---------------------------------------------------------------------------

template <typename Real>
Model<Real>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  if (config_.vocab_size <= 4) throw InvalidArgument("model: vocabulary must contain words");
  if (config_.hidden == 0 || config_.embed == 0) throw InvalidArgument("model: zero width");
  std::mt19937_64 rng(seed);
  const std::size_t k = config_.hidden;

  if (config_.uses_audio()) {
    audio_projection_ = Linear<Real>(store_, "audio_projection", config_.audio_dim,
                                     config_.audio_proj, rng);
    audio_encoder_ = Gru<Real>(store_, "audio_encoder", config_.audio_proj, k, rng);
  }
  if (config_.uses_video()) {
    video_encoder_ = Gru<Real>(store_, "video_encoder", config_.video_dim, k, rng);
  }

  // Caption generator.
  if (config_.modality == Modality::both) {
    if (config_.fusion == Fusion::context) {
      context_fc_ = Linear<Real>(store_, "generator.fusion.fc", 2 * k, k, rng);
    } else if (config_.fusion == Fusion::mutan) {
      const std::size_t dt = config_.mutan_rank;
      const std::size_t d_o = config_.mutan_out_rank;
      const double kb = 1.0 / std::sqrt(static_cast<double>(k));
      mutan_.w_video = &store_.create("generator.fusion.w_video", uniform_tensor<Real>({k, dt}, kb, rng));
      mutan_.w_audio = &store_.create("generator.fusion.w_audio", uniform_tensor<Real>({k, dt}, kb, rng));
      mutan_.core = &store_.create("generator.fusion.core",
                                   uniform_tensor<Real>({dt, dt, d_o}, 1.0 / static_cast<double>(dt), rng));
      mutan_.w_out = &store_.create("generator.fusion.w_out",
                                    uniform_tensor<Real>({d_o, config_.mutan_out},
                                                         1.0 / std::sqrt(static_cast<double>(d_o)), rng));
    }
  }
  bridge_ = Linear<Real>(store_, "generator.bridge", config_.fused_dim(), k, rng);
  gen_embedding_ = Embedding<Real>(store_, "generator.embedding", config_.vocab_size, config_.embed, rng);
  decoder_ = Gru<Real>(store_, "generator.decoder", config_.embed, k, rng);
  output_ = Linear<Real>(store_, "generator.output", k, config_.vocab_size, rng);

  // Sentence localizer.
  const double kb = 1.0 / std::sqrt(static_cast<double>(k));
  loc_embedding_ = Embedding<Real>(store_, "localizer.embedding", config_.vocab_size, config_.embed, rng);
  caption_encoder_ = Gru<Real>(store_, "localizer.caption_encoder", config_.embed, k, rng);
  alpha_caption_ = &store_.create("localizer.alpha_caption", uniform_tensor<Real>({k, k}, kb, rng));
  if (config_.uses_video()) {
    alpha_video_ = &store_.create("localizer.alpha_video", uniform_tensor<Real>({k, k}, kb, rng));
  }
  if (config_.uses_audio()) {
    alpha_audio_ = &store_.create("localizer.alpha_audio", uniform_tensor<Real>({k, k}, kb, rng));
  }
  const std::size_t n_parts = config_.modality == Modality::both ? 3 : 2;
  attention_fc_ = Linear<Real>(store_, "localizer.fusion_fc", n_parts * k, k, rng);
  head_ = Linear<Real>(store_, "localizer.head", 3 * k, 3 * kAnchorCount, rng);
}

template <typename Real>
std::vector<std::string> Model<Real>::all_parameter_names() const {
  std::vector<std::string> names;
  for (const auto& p : store_) names.push_back(p->name());
  return names;
}

template <typename Real>
std::vector<std::string> Model<Real>::generator_parameter_names() const {
  std::vector<std::string> names;
  for (const auto& p : store_) {
    if (!p->name().starts_with("localizer.")) names.push_back(p->name());
  }
  return names;
}

template <typename Real>
std::vector<std::string> Model<Real>::localizer_parameter_names() const {
  std::vector<std::string> names;
  for (const auto& p : store_) {
    if (p->name().starts_with("localizer.")) names.push_back(p->name());
  }
  return names;
}

template <typename Real>
Var<Real> Model<Real>::project_audio(Tape<Real>& tape, const Var<Real>& spectrogram) const {
  return tanh(audio_projection_(tape, spectrogram));
}

template <typename Real>
Contexts<Real> Model<Real>::encode_contexts(Tape<Real>& tape, const Tensor<Real>* video_features,
                                            const Tensor<Real>* audio_features) const {
  Contexts<Real> out;
  if (config_.uses_video()) {
    if (!video_features) throw InvalidArgument("model: video features required");
    out.video = video_encoder_.encode(tape, tape.constant(*video_features));
  }
  if (config_.uses_audio()) {
    if (!audio_features) throw InvalidArgument("model: audio features required");
    out.audio = audio_encoder_.encode(tape, project_audio(tape, tape.constant(*audio_features)));
  }
  return out;
}

template <typename Real>
EncodedContext<Real> Model<Real>::encode_caption(Tape<Real>& tape, std::span<const int> ids) const {
  if (ids.empty()) throw InvalidArgument("localizer: empty caption");
  return caption_encoder_.encode(tape, loc_embedding_(tape, ids));
}

template <typename Real>
LocalizerOutput<Real> Model<Real>::localize(Tape<Real>& tape, const Contexts<Real>& contexts,
                                            std::span<const int> caption) const {
  const EncodedContext<Real> c = encode_caption(tape, caption);
  // The caption is attended by the primary context's final state.
  const EncodedContext<Real>& primary = contexts.video ? *contexts.video : *contexts.audio;
  std::vector<Var<Real>> parts;
  parts.push_back(attend(tape, primary.final, tape.param(*alpha_caption_), c.outputs));
  if (contexts.video) {
    parts.push_back(attend(tape, c.final, tape.param(*alpha_video_), contexts.video->outputs));
  }
  if (contexts.audio) {
    parts.push_back(attend(tape, c.final, tape.param(*alpha_audio_), contexts.audio->outputs));
  }
  LocalizerOutput<Real> out;
  out.fused = attention_feature_fusion<Real>(tape, parts, attention_fc_);
  const Var<Real> head = head_(tape, out.fused);
  out.logits = slice_cols(head, 0, kAnchorCount);
  out.offsets = slice_cols(head, kAnchorCount, 3 * kAnchorCount);

  const auto logits = out.logits.value().data();
  out.anchor = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  const Segment& anchor = anchors()[out.anchor];
  const Var<Real> base = tape.constant(
      Tensor<Real>({1, 2}, {static_cast<Real>(anchor.center), static_cast<Real>(anchor.length)}));
  const Var<Real> raw = add(base, slice_cols(out.offsets, 2 * out.anchor, 2 * out.anchor + 2));
  const Tensor<Real> lo({1, 2}, {Real(0), static_cast<Real>(kMinSegmentLength)});
  const Tensor<Real> hi({1, 2}, {Real(1), Real(1)});
  out.segment = clamp(raw, lo, hi);
  return out;
}

template <typename Real>
Var<Real> Model<Real>::fused_context(Tape<Real>& tape, const Contexts<Real>& contexts,
                                     const Var<Real>& segment) const {
  const Real scale = static_cast<Real>(config_.mask_scale);
  if (config_.modality != Modality::both) {
    const EncodedContext<Real>& only = contexts.video ? *contexts.video : *contexts.audio;
    return clip_context(tape, segment, only.outputs, scale);
  }
  const Var<Real> v = clip_context(tape, segment, contexts.video->outputs, scale);
  const Var<Real> a = clip_context(tape, segment, contexts.audio->outputs, scale);
  switch (config_.fusion) {
    case Fusion::mixture: return multiplicative_mixture(tape, v, a);
    case Fusion::context: return multimodal_context_fusion(tape, v, a, context_fc_);
    case Fusion::mutan: return mutan_fusion(tape, v, a, mutan_);
  }
  throw InvalidArgument("model: unknown fusion");
}

template <typename Real>
Var<Real> Model<Real>::caption_logits(Tape<Real>& tape, const Contexts<Real>& contexts,
                                      const Var<Real>& segment, std::span<const int> target) const {
  if (target.size() < 2) throw InvalidArgument("caption: target needs at least bos and one token");
  const Var<Real> h0 = bridge_(tape, fused_context(tape, contexts, segment));
  const Var<Real> inputs = gen_embedding_(tape, target.first(target.size() - 1));
  const Var<Real> states = decoder_.run(tape, inputs, h0);
  return output_(tape, states);
}

template <typename Real>
Var<Real> Model<Real>::caption_loss(Tape<Real>& tape, const Contexts<Real>& contexts,
                                    const Var<Real>& segment, std::span<const int> target,
                                    Var<Real>* logits_out) const {
  const Var<Real> logits = caption_logits(tape, contexts, segment, target);
  if (logits_out) *logits_out = logits;
  const Real n = static_cast<Real>(target.size() - 1);
  return scale(cross_entropy(logits, target.subspan(1)), Real(1) / n);
}

template <typename Real>
GreedyCaption Model<Real>::greedy_caption(const Contexts<Real>& contexts,
                                          const Segment& segment) const {
  constexpr int kBos = 1;
  constexpr int kEos = 2;
  Tape<Real> tape;
  const Contexts<Real> local = detach(contexts, tape);
  const Var<Real> seg = tape.constant(Tensor<Real>(
      {1, 2}, {static_cast<Real>(segment.center), static_cast<Real>(segment.length)}));
  Var<Real> h = bridge_(tape, fused_context(tape, local, seg));

  GreedyCaption out;
  out.tokens.push_back(kBos);
  double log_prob = 0;
  std::size_t emitted = 0;
  while (emitted < config_.max_caption_len) {
    const int prev = out.tokens.back();
    h = decoder_.step(tape, gen_embedding_(tape, std::span<const int>(&prev, 1)), h);
    const auto logits = output_(tape, h).value().data();
    const auto best = std::max_element(logits.begin(), logits.end());
    double norm = 0;
    for (Real v : logits) norm += std::exp(static_cast<double>(v - *best));
    log_prob += -std::log(norm);
    const int token = static_cast<int>(best - logits.begin());
    out.tokens.push_back(token);
    ++emitted;
    if (token == kEos) break;
  }
  out.score = log_prob / static_cast<double>(emitted);
  return out;
}

#define DCAV_MODEL_INSTANTIATE(R)                                                               \
  template class Linear<R>;                                                                     \
  template class Gru<R>;                                                                        \
  template class Embedding<R>;                                                                  \
  template class Model<R>;                                                                      \
  template Var<R> attend(Tape<R>&, const Var<R>&, const Var<R>&, const Var<R>&, Var<R>*);      \
  template Var<R> attention_feature_fusion(Tape<R>&, std::span<const Var<R>>, const Linear<R>&); \
  template Var<R> multiplicative_mixture(Tape<R>&, const Var<R>&, const Var<R>&);              \
  template Var<R> multimodal_context_fusion(Tape<R>&, const Var<R>&, const Var<R>&,            \
                                            const Linear<R>&);                                  \
  template Var<R> mutan_fusion(Tape<R>&, const Var<R>&, const Var<R>&, const MutanParams<R>&); \
  template Var<R> clip_context(Tape<R>&, const Var<R>&, const Var<R>&, R);                     \
  template Contexts<R> detach(const Contexts<R>&, Tape<R>&);

DCAV_MODEL_INSTANTIATE(float)
DCAV_MODEL_INSTANTIATE(double)

}  // namespace dcav::model
