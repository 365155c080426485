#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "dcav/tensor.hpp"

namespace dcav::audio {

inline constexpr double kModelSampleRate = 16000.0;

struct Waveform {
  std::vector<double> samples;  // nominally in [−1, 1]
  double sample_rate = kModelSampleRate;
};

enum class SpectrogramKind { mfcc, cqt };

struct Spectrogram {
  Tensor<double> frames;  // T_a × F
  double frame_rate = 0;  // frames per second
  SpectrogramKind kind = SpectrogramKind::mfcc;
};

struct MfccOptions {
  std::size_t n_coeffs = 128;
  std::size_t n_mels = 128;
  std::size_t window = 2048;
  std::size_t hop = 512;
  double log_floor = 1e-10;
};

struct CqtOptions {
  double fmin = 64.0;
  std::size_t n_bins = 60;
  std::size_t bins_per_octave = 12;
  std::size_t window = 2048;
  std::size_t hop = 512;
};

/// 1 + floor((len − window)/hop); zero when the signal is shorter than a window.
std::size_t frame_count(std::size_t length, std::size_t window, std::size_t hop);

/// Linear-interpolation resampling.
Waveform resample(const Waveform& w, double target_rate);

/// Hann → |DFT|² → triangular mel bank (0..Nyquist) → log(x + ε) → DCT-II
/// (orthonormal) → first n_coeffs. Requires a 16 kHz waveform.
Spectrogram mfcc(const Waveform& w, const MfccOptions& opts = {});

/// Magnitudes of Hann-windowed complex kernel inner products, one kernel per
/// geometrically spaced bin, evaluated per hop. Requires a 16 kHz waveform.
Spectrogram cqt(const Waveform& w, const CqtOptions& opts = {});

/// fmin·2^(k/bins_per_octave) for k in [0, n_bins).
std::vector<double> cqt_center_frequencies(const CqtOptions& opts);
/// 1/(2^(1/bins_per_octave) − 1).
double cqt_quality_factor(const CqtOptions& opts);

/// Model-side feature normalization. CQT magnitudes are log-compressed
/// (log(x + 1e-6)); every bin is then standardized with a mean and standard
/// deviation pooled over all frames of a reference corpus, so a clip keeps
/// its level relative to the others.
class FeatureNormalizer {
 public:
  FeatureNormalizer() = default;
  /// Statistics over every frame of `corpus`; all entries share kind and width.
  static FeatureNormalizer fit(std::span<const Spectrogram> corpus);

  Tensor<double> apply(const Spectrogram& s) const;
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& scale() const { return scale_; }

 private:
  SpectrogramKind kind_ = SpectrogramKind::mfcc;
  std::vector<double> mean_;
  std::vector<double> scale_;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);
/// n_mels × (n_fft/2 + 1) triangular weights.
Tensor<double> mel_filterbank(std::size_t n_mels, std::size_t n_fft, double sample_rate);

/// RIFF/WAVE, 16-bit PCM. Stereo is downmixed by averaging channels.
Waveform read_wav(const std::filesystem::path& path);
/// Writes 16-bit PCM mono; samples are clipped to [−1, 1].
void write_wav(const std::filesystem::path& path, const Waveform& w);

}  // namespace dcav::audio
