#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dcav/autodiff.hpp"
#include "dcav/parameters.hpp"
#include "dcav/segment.hpp"

namespace dcav::model {

enum class Modality { audio, video, both };
enum class Fusion { mixture, context, mutan };

std::string to_string(Modality m);
std::string to_string(Fusion f);
Modality modality_from_string(const std::string& s);
Fusion fusion_from_string(const std::string& s);

struct ModelConfig {
  std::size_t hidden = 512;          // k, every GRU
  std::size_t embed = 512;           // word vector size
  std::size_t video_dim = 500;
  std::size_t audio_dim = 128;       // spectrogram bins fed to the projection
  std::size_t audio_proj = 512;      // projected audio feature size
  std::size_t vocab_size = 0;
  Modality modality = Modality::both;
  Fusion fusion = Fusion::mutan;
  std::size_t mutan_rank = 160;      // d_t
  std::size_t mutan_out_rank = 160;  // d_o
  std::size_t mutan_out = 512;       // k_out
  double mask_scale = 50.0;          // L in the soft mask
  std::size_t max_caption_len = 30;

  bool uses_video() const { return modality != Modality::audio; }
  bool uses_audio() const { return modality != Modality::video; }
  /// Width of the fused clipped context fed to the decoder bridge.
  std::size_t fused_dim() const;
};

inline constexpr std::size_t kAnchorCount = 15;
inline constexpr double kMinSegmentLength = 1.0 / 64.0;

/// Binary temporal pyramid: lengths 1, 1/2, 1/4, 1/8 tiling [0, 1].
const std::array<Segment, kAnchorCount>& anchors();

/// Index of the anchor with the highest tIoU against `s` (lowest index on ties).
std::size_t best_anchor(const Segment& s);

// ---------------------------------------------------------------------------
// Building blocks

template <typename Real>
struct EncodedContext {
  Var<Real> outputs;  // T×k, row t is the state after input t
  Var<Real> final;    // 1×k, equals the last row of outputs
};

template <typename Real>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore<Real>& store, const std::string& prefix, std::size_t in, std::size_t out,
         std::mt19937_64& rng);
  Var<Real> operator()(Tape<Real>& tape, const Var<Real>& x) const;
  std::size_t in_dim() const { return weight_->value().rows(); }
  std::size_t out_dim() const { return weight_->value().cols(); }

 private:
  Parameter<Real>* weight_ = nullptr;
  Parameter<Real>* bias_ = nullptr;
};

/// Single-layer GRU. Gate layout in the stacked matrices: [update | reset | candidate].
template <typename Real>
class Gru {
 public:
  Gru() = default;
  Gru(ParameterStore<Real>& store, const std::string& prefix, std::size_t input_dim,
      std::size_t hidden, std::mt19937_64& rng);

  /// z=σ(W_z x+U_z h+b_z); r=σ(W_r x+U_r h+b_r); h̃=tanh(W_h x+U_h(r∘h)+b_h); h′=(1−z)∘h+z∘h̃
  Var<Real> step(Tape<Real>& tape, const Var<Real>& x, const Var<Real>& h) const;
  /// Runs from h₀ = 0 over the rows of `inputs` (T×d_in, T ≥ 1).
  EncodedContext<Real> encode(Tape<Real>& tape, const Var<Real>& inputs) const;
  /// As encode() but from a given initial state; returns only the stacked outputs.
  Var<Real> run(Tape<Real>& tape, const Var<Real>& inputs, const Var<Real>& h0) const;

  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden() const { return hidden_; }

 private:
  Var<Real> step_projected(Tape<Real>& tape, const Var<Real>& xw, const Var<Real>& h) const;

  std::size_t input_dim_ = 0;
  std::size_t hidden_ = 0;
  Parameter<Real>* w_ = nullptr;        // d_in × 3k
  Parameter<Real>* u_gates_ = nullptr;  // k × 2k
  Parameter<Real>* u_cand_ = nullptr;   // k × k
  Parameter<Real>* bias_ = nullptr;     // 1 × 3k
};

template <typename Real>
class Embedding {
 public:
  Embedding() = default;
  Embedding(ParameterStore<Real>& store, const std::string& name, std::size_t vocab,
            std::size_t dim, std::mt19937_64& rng);
  Var<Real> operator()(Tape<Real>& tape, std::span<const int> ids) const;

 private:
  Parameter<Real>* table_ = nullptr;
};

/// softmax(query·α·Mᵀ)·M for a 1×k query and T×k memory. `weights`, when
/// given, receives the 1×T attention distribution.
template <typename Real>
Var<Real> attend(Tape<Real>& tape, const Var<Real>& query, const Var<Real>& alpha,
                 const Var<Real>& memory, Var<Real>* weights = nullptr);

/// sum || product || fc(concat) of 2 or 3 same-width attention vectors.
template <typename Real>
Var<Real> attention_feature_fusion(Tape<Real>& tape, std::span<const Var<Real>> parts,
                                   const Linear<Real>& fc);

// Clipped-context fusion strategies over 1×k rows V′ and A′.
template <typename Real>
Var<Real> multiplicative_mixture(Tape<Real>& tape, const Var<Real>& v, const Var<Real>& a);
template <typename Real>
Var<Real> multimodal_context_fusion(Tape<Real>& tape, const Var<Real>& v, const Var<Real>& a,
                                    const Linear<Real>& fc);

template <typename Real>
struct MutanParams {
  Parameter<Real>* w_video = nullptr;  // k × d_t
  Parameter<Real>* w_audio = nullptr;  // k × d_t
  Parameter<Real>* core = nullptr;     // d_t × d_t × d_o
  Parameter<Real>* w_out = nullptr;    // d_o × k_out
};

/// V″=tanh(V′W_v), A″=tanh(A′W_a), C̃=(core ×₁ V″) ×₂ A″, out = squeeze(C̃)·W_o.
template <typename Real>
Var<Real> mutan_fusion(Tape<Real>& tape, const Var<Real>& v, const Var<Real>& a,
                       const MutanParams<Real>& p);

/// (Σ mask_i·O_i) / Σ mask_i with the soft mask of `segment` over O's rows.
template <typename Real>
Var<Real> clip_context(Tape<Real>& tape, const Var<Real>& segment, const Var<Real>& outputs,
                       Real mask_scale);

// ---------------------------------------------------------------------------
// Full model

template <typename Real>
struct Contexts {
  std::optional<EncodedContext<Real>> video;
  std::optional<EncodedContext<Real>> audio;
};

template <typename Real>
struct LocalizerOutput {
  Var<Real> logits;   // 1×15
  Var<Real> offsets;  // 1×30, (Δc, Δl) per anchor
  Var<Real> fused;    // 1×3k attention fusion vector
  std::size_t anchor = 0;
  Var<Real> segment;  // 1×2 clamped (c, l)

  Segment value() const { return {segment.value()[0], segment.value()[1]}; }
};

struct GreedyCaption {
  std::vector<int> tokens;  // starts with bos; ends with eos unless max length was hit
  double score = 0;         // mean log-probability of the emitted tokens
};

template <typename Real>
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterStore<Real>& parameters() { return store_; }
  const ParameterStore<Real>& parameters() const { return store_; }

  /// Parameters the caption generator path touches (shared encoders included).
  std::vector<std::string> generator_parameter_names() const;
  std::vector<std::string> localizer_parameter_names() const;
  std::vector<std::string> all_parameter_names() const;

  /// Encodes whichever modalities the configuration uses. `audio_features`
  /// is the T_a × audio_dim spectrogram; it is projected before encoding.
  Contexts<Real> encode_contexts(Tape<Real>& tape, const Tensor<Real>* video_features,
                                 const Tensor<Real>* audio_features) const;

  EncodedContext<Real> encode_caption(Tape<Real>& tape, std::span<const int> ids) const;
  LocalizerOutput<Real> localize(Tape<Real>& tape, const Contexts<Real>& contexts,
                                 std::span<const int> caption) const;

  /// Soft-clips each context with `segment` (1×2) and fuses the clips.
  Var<Real> fused_context(Tape<Real>& tape, const Contexts<Real>& contexts,
                          const Var<Real>& segment) const;
  /// Teacher-forced decoder logits, (len(target) − 1) × |V|.
  Var<Real> caption_logits(Tape<Real>& tape, const Contexts<Real>& contexts,
                           const Var<Real>& segment, std::span<const int> target) const;
  /// Mean per-token cross-entropy of `target` under teacher forcing.
  Var<Real> caption_loss(Tape<Real>& tape, const Contexts<Real>& contexts,
                         const Var<Real>& segment, std::span<const int> target,
                         Var<Real>* logits_out = nullptr) const;
  /// Greedy decoding on a private tape; nothing here receives gradients.
  GreedyCaption greedy_caption(const Contexts<Real>& contexts, const Segment& segment) const;

 private:
  Var<Real> project_audio(Tape<Real>& tape, const Var<Real>& spectrogram) const;

  ModelConfig config_;
  ParameterStore<Real> store_;
  // shared context encoders
  Linear<Real> audio_projection_;
  Gru<Real> video_encoder_;
  Gru<Real> audio_encoder_;
  // sentence localizer
  Embedding<Real> loc_embedding_;
  Gru<Real> caption_encoder_;
  Parameter<Real>* alpha_caption_ = nullptr;
  Parameter<Real>* alpha_video_ = nullptr;
  Parameter<Real>* alpha_audio_ = nullptr;
  Linear<Real> attention_fc_;
  Linear<Real> head_;
  // caption generator
  Linear<Real> context_fc_;
  MutanParams<Real> mutan_;
  Linear<Real> bridge_;
  Embedding<Real> gen_embedding_;
  Gru<Real> decoder_;
  Linear<Real> output_;
};

/// Copies context values onto another tape as constants.
template <typename Real>
Contexts<Real> detach(const Contexts<Real>& contexts, Tape<Real>& tape);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace dcav::model
