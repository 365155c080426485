#include "dcav/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <mutex>
#include <numbers>

#include "dcav/error.hpp"

namespace dcav::audio {

namespace {

// The FFTW planner is not re-entrant.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard lock(planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard lock(planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  /// Executes and writes |X_k|² for k in [0, n/2].
  void power(std::vector<double>& out) {
    fftw_execute(plan_);
    out.resize(n_ / 2 + 1);
    for (std::size_t k = 0; k < out.size(); ++k) {
      out[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
    }
  }

 private:
  std::size_t n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

void require_model_rate(const Waveform& w, const char* what) {
  if (w.samples.empty()) throw InvalidArgument(std::string(what) + ": empty waveform");
  if (w.sample_rate != kModelSampleRate) {
    throw InvalidArgument(std::string(what) + ": expected 16000 Hz audio, got " +
                          std::to_string(w.sample_rate) + " Hz (resample first)");
  }
}

}  // namespace

std::size_t frame_count(std::size_t length, std::size_t window, std::size_t hop) {
  if (length < window) return 0;
  return 1 + (length - window) / hop;
}

Waveform resample(const Waveform& w, double target_rate) {
  if (w.samples.empty()) throw InvalidArgument("resample: empty waveform");
  if (!(target_rate > 0) || !(w.sample_rate > 0)) {
    throw InvalidArgument("resample: sample rates must be positive");
  }
  if (target_rate == w.sample_rate) return w;
  const double ratio = w.sample_rate / target_rate;
  const auto n_out = static_cast<std::size_t>(
      std::max<double>(1.0, std::round(static_cast<double>(w.samples.size()) / ratio)));
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(n_out);
  const std::size_t last = w.samples.size() - 1;
  for (std::size_t j = 0; j < n_out; ++j) {
    const double pos = static_cast<double>(j) * ratio;
    const auto i0 = std::min(static_cast<std::size_t>(pos), last);
    const std::size_t i1 = std::min(i0 + 1, last);
    const double frac = std::clamp(pos - static_cast<double>(i0), 0.0, 1.0);
    out.samples[j] = w.samples[i0] * (1.0 - frac) + w.samples[i1] * frac;
  }
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Tensor<double> mel_filterbank(std::size_t n_mels, std::size_t n_fft, double sample_rate) {
  const std::size_t n_bins = n_fft / 2 + 1;
  const double top = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  Tensor<double> bank({n_mels, n_bins});
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
      double w = 0;
      if (f > lo && f <= mid) {
        w = (f - lo) / (mid - lo);
      } else if (f > mid && f < hi) {
        w = (hi - f) / (hi - mid);
      }
      bank.at(m, k) = w;
    }
  }
  return bank;
}

Spectrogram mfcc(const Waveform& w, const MfccOptions& opts) {
  require_model_rate(w, "mfcc");
  if (opts.n_coeffs == 0 || opts.n_coeffs > opts.n_mels) {
    throw InvalidArgument("mfcc: n_coeffs must be in [1, n_mels]");
  }
  const std::size_t frames = frame_count(w.samples.size(), opts.window, opts.hop);
  if (frames == 0) throw InvalidArgument("mfcc: audio shorter than one analysis window");

  const Tensor<double> bank = mel_filterbank(opts.n_mels, opts.window, w.sample_rate);
  const std::size_t n_bins = opts.window / 2 + 1;
  const std::vector<double> window = hann(opts.window);

  // Orthonormal DCT-II basis, n_coeffs × n_mels.
  const double n = static_cast<double>(opts.n_mels);
  std::vector<double> dct(opts.n_coeffs * opts.n_mels);
  for (std::size_t k = 0; k < opts.n_coeffs; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (std::size_t i = 0; i < opts.n_mels; ++i) {
      dct[k * opts.n_mels + i] =
          s * std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * static_cast<double>(i) + 1.0) / (2.0 * n));
    }
  }

  Spectrogram out;
  out.kind = SpectrogramKind::mfcc;
  out.frame_rate = w.sample_rate / static_cast<double>(opts.hop);
  out.frames = Tensor<double>({frames, opts.n_coeffs});

  RealFft fft(opts.window);
  std::vector<double> power;
  std::vector<double> log_mel(opts.n_mels);
  for (std::size_t f = 0; f < frames; ++f) {
    const double* src = w.samples.data() + f * opts.hop;
    double* in = fft.input();
    for (std::size_t i = 0; i < opts.window; ++i) in[i] = src[i] * window[i];
    fft.power(power);
    for (std::size_t m = 0; m < opts.n_mels; ++m) {
      double e = 0;
      for (std::size_t k = 0; k < n_bins; ++k) e += bank.at(m, k) * power[k];
      log_mel[m] = std::log(e + opts.log_floor);
    }
    for (std::size_t k = 0; k < opts.n_coeffs; ++k) {
      double acc = 0;
      for (std::size_t i = 0; i < opts.n_mels; ++i) acc += dct[k * opts.n_mels + i] * log_mel[i];
      out.frames.at(f, k) = acc;
    }
  }
  return out;
}

std::vector<double> cqt_center_frequencies(const CqtOptions& opts) {
  std::vector<double> f(opts.n_bins);
  for (std::size_t k = 0; k < opts.n_bins; ++k) {
    f[k] = opts.fmin * std::exp2(static_cast<double>(k) / static_cast<double>(opts.bins_per_octave));
  }
  return f;
}

double cqt_quality_factor(const CqtOptions& opts) {
  return 1.0 / (std::exp2(1.0 / static_cast<double>(opts.bins_per_octave)) - 1.0);
}

Spectrogram cqt(const Waveform& w, const CqtOptions& opts) {
  require_model_rate(w, "cqt");
  if (opts.n_bins == 0 || opts.bins_per_octave == 0 || !(opts.fmin > 0)) {
    throw InvalidArgument("cqt: fmin, n_bins and bins_per_octave must be positive");
  }
  const std::vector<double> centers = cqt_center_frequencies(opts);
  if (centers.back() >= w.sample_rate / 2.0) {
    throw InvalidArgument("cqt: highest center frequency " + std::to_string(centers.back()) +
                          " Hz is not below Nyquist");
  }
  const std::size_t frames = frame_count(w.samples.size(), opts.window, opts.hop);
  if (frames == 0) throw InvalidArgument("cqt: audio shorter than one analysis window");

  // Kernels longer than the analysis window are truncated to it.
  const double q = cqt_quality_factor(opts);
  struct Kernel {
    std::size_t offset;
    std::vector<std::complex<double>> taps;
  };
  std::vector<Kernel> kernels;
  kernels.reserve(opts.n_bins);
  for (double fk : centers) {
    const auto len = std::min<std::size_t>(
        static_cast<std::size_t>(std::ceil(q * w.sample_rate / fk)), opts.window);
    const std::vector<double> win = hann(len);
    double norm = 0;
    for (double v : win) norm += v;
    Kernel kern{(opts.window - len) / 2, std::vector<std::complex<double>>(len)};
    for (std::size_t n = 0; n < len; ++n) {
      const double phase = -2.0 * std::numbers::pi * fk * static_cast<double>(n) / w.sample_rate;
      kern.taps[n] = std::polar(win[n] / norm, phase);
    }
    kernels.push_back(std::move(kern));
  }

  Spectrogram out;
  out.kind = SpectrogramKind::cqt;
  out.frame_rate = w.sample_rate / static_cast<double>(opts.hop);
  out.frames = Tensor<double>({frames, opts.n_bins});
  for (std::size_t f = 0; f < frames; ++f) {
    const double* src = w.samples.data() + f * opts.hop;
    for (std::size_t k = 0; k < opts.n_bins; ++k) {
      const Kernel& kern = kernels[k];
      double re = 0, im = 0;
      for (std::size_t n = 0; n < kern.taps.size(); ++n) {
        const double x = src[kern.offset + n];
        re += x * kern.taps[n].real();
        im += x * kern.taps[n].imag();
      }
      out.frames.at(f, k) = std::hypot(re, im);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// WAV

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

void write_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u16(std::ostream& os, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const auto bad = [&](const std::string& why) { return DataError(path.string() + ": " + why); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw bad("not a RIFF/WAVE file");
  }
  std::size_t pos = 12;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t len = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) throw bad("truncated chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0 && len >= 16) {
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = len;
    }
    pos = body + len + (len & 1u);
  }
  if (format != 1 || bits != 16) throw bad("only 16-bit PCM is supported");
  if (channels == 0 || rate == 0) throw bad("invalid fmt chunk");
  if (!data) throw bad("missing data chunk");
  const std::size_t frames = data_len / (2u * channels);
  if (frames == 0) throw bad("no samples");
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0;
    for (std::size_t c = 0; c < channels; ++c) {
      const auto v = static_cast<std::int16_t>(read_u16(data + 2 * (i * channels + c)));
      acc += static_cast<double>(v) / 32768.0;
    }
    w.samples[i] = acc / channels;
  }
  return w;
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  if (w.samples.empty()) throw InvalidArgument("write_wav: empty waveform");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  const auto rate = static_cast<std::uint32_t>(std::lround(w.sample_rate));
  const auto data_len = static_cast<std::uint32_t>(w.samples.size() * 2);
  os.write("RIFF", 4);
  write_u32(os, 36 + data_len);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  write_u32(os, 16);
  write_u16(os, 1);
  write_u16(os, 1);
  write_u32(os, rate);
  write_u32(os, rate * 2);
  write_u16(os, 2);
  write_u16(os, 16);
  os.write("data", 4);
  write_u32(os, data_len);
  for (double s : w.samples) {
    const double clipped = std::clamp(s, -1.0, 1.0);
    write_u16(os, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(clipped * 32767.0))));
  }
  if (!os) throw IoError("failed writing " + path.string());
}

namespace {

Tensor<double> compressed(const Spectrogram& s) {
  Tensor<double> out = s.frames;
  if (s.kind == SpectrogramKind::cqt) {
    for (double& v : out.data()) v = std::log(v + 1e-6);
  }
  return out;
}

}  // namespace

FeatureNormalizer FeatureNormalizer::fit(std::span<const Spectrogram> corpus) {
  if (corpus.empty()) throw InvalidArgument("feature normalizer: empty corpus");
  FeatureNormalizer n;
  n.kind_ = corpus.front().kind;
  const std::size_t cols = corpus.front().frames.cols();
  std::vector<double> sum(cols, 0.0), sq(cols, 0.0);
  double count = 0;
  for (const Spectrogram& s : corpus) {
    if (s.kind != n.kind_ || s.frames.cols() != cols) {
      throw InvalidArgument("feature normalizer: corpus mixes feature kinds or widths");
    }
    const Tensor<double> x = compressed(s);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        sum[c] += x.at(r, c);
        sq[c] += x.at(r, c) * x.at(r, c);
      }
    }
    count += static_cast<double>(x.rows());
  }
  if (count == 0) throw InvalidArgument("feature normalizer: corpus has no frames");
  n.mean_.resize(cols);
  n.scale_.resize(cols);
  for (std::size_t c = 0; c < cols; ++c) {
    n.mean_[c] = sum[c] / count;
    const double var = std::max(sq[c] / count - n.mean_[c] * n.mean_[c], 0.0);
    n.scale_[c] = std::max(std::sqrt(var), 1e-5);
  }
  return n;
}

Tensor<double> FeatureNormalizer::apply(const Spectrogram& s) const {
  if (s.kind != kind_ || s.frames.cols() != mean_.size()) {
    throw InvalidArgument("feature normalizer: spectrogram does not match the fitted statistics");
  }
  Tensor<double> out = compressed(s);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) = (out.at(r, c) - mean_[c]) / scale_[c];
  }
  return out;
}

}  // namespace dcav::audio
