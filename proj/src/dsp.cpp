#include "esres/dsp.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "esres/error.hpp"
#include "esres/fft.hpp"

namespace esres::dsp {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kA0 = 0.35875, kA1 = 0.48829, kA2 = 0.14128, kA3 = 0.01168;

constexpr char kCacheMagic[4] = {'E', 'S', 'R', 'S'};
constexpr uint16_t kCacheVersion = 1;

void write_u16(std::ostream& out, uint16_t v) {
  const uint8_t b[2] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

void write_u32(std::ostream& out, uint32_t v) {
  const uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                        static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint16_t read_u16(std::istream& in) {
  uint8_t b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t read_u32(std::istream& in) {
  uint8_t b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

FrontEndConfig FrontEndConfig::from_window(double frame_ms, double overlap,
                                           int sample_rate, int fft_size, int bands,
                                           double epsilon_power) {
  FrontEndConfig cfg;
  cfg.sample_rate = sample_rate;
  cfg.frame_len = static_cast<int>(std::llround(frame_ms * 1e-3 * sample_rate));
  cfg.hop = cfg.frame_len - static_cast<int>(std::llround(overlap * cfg.frame_len));
  if (fft_size == 0) {
    fft_size = 1;
    while (fft_size < cfg.frame_len) fft_size <<= 1;
  }
  cfg.fft_size = fft_size;
  cfg.bands = bands;
  cfg.epsilon_power = epsilon_power;
  cfg.validate();
  return cfg;
}

void FrontEndConfig::validate() const {
  if (sample_rate <= 0) throw ConfigError("front-end: sample rate must be positive");
  if (frame_len <= 0) throw ConfigError("front-end: frame length must be positive");
  if (hop <= 0 || hop > frame_len)
    throw ConfigError("front-end: hop must be in (0, frame_len]");
  if (fft_size < frame_len)
    throw ConfigError("front-end: fft size smaller than frame length");
  if ((fft_size & (fft_size - 1)) != 0)
    throw ConfigError("front-end: fft size must be a power of two");
  // Reflection padding needs pad < frame_len on each side.
  if (fft_size - frame_len >= 2 * (frame_len - 1))
    throw ConfigError("front-end: fft size too large for reflection padding");
  if (bands < 1) throw ConfigError("front-end: bands must be >= 1");
  if (band_rows() < 1) throw ConfigError("front-end: too many bands for spectrum");
  if (epsilon_power <= 0) throw ConfigError("front-end: epsilon_power must be > 0");
}

int FrontEndConfig::band_rows() const {
  return static_cast<int>(std::llround(static_cast<double>(fft_size / 2) / bands));
}

int64_t FrontEndConfig::frame_count(int64_t num_samples) const {
  if (num_samples < frame_len)
    throw ShapeError("front-end: signal of " + std::to_string(num_samples) +
                     " samples is shorter than one frame (" +
                     std::to_string(frame_len) + ")");
  return (num_samples - frame_len) / hop + 1;
}

double blackman_harris(int k, int n) {
  if (k < 0 || k > n - 1) throw ConfigError("window: index out of range");
  // Mirror around n/2 so w[k] == w[n-k] is exact.
  if (2 * k > n) k = n - k;
  const double x = 2.0 * kPi * k / n;
  return kA0 - kA1 * std::cos(x) + kA2 * std::cos(2.0 * x) - kA3 * std::cos(3.0 * x);
}

std::vector<double> blackman_harris_window(int n) {
  std::vector<double> w(n);
  for (int k = 0; k <= n / 2; ++k) {
    const double x = 2.0 * kPi * k / n;
    w[k] = kA0 - kA1 * std::cos(x) + kA2 * std::cos(2.0 * x) - kA3 * std::cos(3.0 * x);
    if (k > 0 && n - k < n) w[n - k] = w[k];
  }
  return w;
}

std::vector<std::vector<float>> frame_signal(std::span<const float> samples,
                                             const FrontEndConfig& cfg) {
  const int64_t count = cfg.frame_count(static_cast<int64_t>(samples.size()));
  std::vector<std::vector<float>> frames(count);
  for (int64_t i = 0; i < count; ++i) {
    const float* start = samples.data() + i * cfg.hop;
    frames[i].assign(start, start + cfg.frame_len);
  }
  return frames;
}

StftMatrix stft(std::span<const float> samples, const FrontEndConfig& cfg) {
  const int64_t frames = cfg.frame_count(static_cast<int64_t>(samples.size()));
  const int n = cfg.fft_size;
  const int bins = cfg.spectrum_bins();
  const int pad_left = (n - cfg.frame_len) / 2;
  const int pad_right = n - cfg.frame_len - pad_left;

  const std::vector<double> window = blackman_harris_window(cfg.frame_len);
  const FftPlan plan(n);

  StftMatrix out;
  out.bins = bins;
  out.frames = static_cast<int>(frames);
  out.values.resize(static_cast<size_t>(bins) * frames);

  std::vector<double> windowed(cfg.frame_len);
  std::vector<std::complex<double>> buf(n);
  for (int64_t f = 0; f < frames; ++f) {
    const float* frame = samples.data() + f * cfg.hop;
    for (int i = 0; i < cfg.frame_len; ++i)
      windowed[i] = static_cast<double>(frame[i]) * window[i];
    // Reflection excludes the edge sample on both sides.
    for (int i = 0; i < pad_left; ++i) buf[i] = windowed[pad_left - i];
    for (int i = 0; i < cfg.frame_len; ++i) buf[pad_left + i] = windowed[i];
    for (int i = 0; i < pad_right; ++i)
      buf[pad_left + cfg.frame_len + i] = windowed[cfg.frame_len - 2 - i];
    plan.forward(buf.data());
    for (int b = 0; b < bins; ++b)
      out.values[static_cast<size_t>(b) * frames + f] = buf[b];
  }
  return out;
}

std::vector<float> log_power(const StftMatrix& x, double epsilon_power) {
  if (epsilon_power <= 0) throw ConfigError("log_power: epsilon must be > 0");
  std::vector<float> s(x.values.size());
  for (size_t i = 0; i < x.values.size(); ++i) {
    const double p = std::norm(x.values[i]);
    s[i] = static_cast<float>(10.0 * std::log10(std::max(p, epsilon_power)));
  }
  return s;
}

Spectrogram band_split(const std::vector<float>& s, int bins, int frames,
                       const FrontEndConfig& cfg) {
  if (bins != cfg.spectrum_bins())
    throw ShapeError("band_split: expected " + std::to_string(cfg.spectrum_bins()) +
                     " rows, got " + std::to_string(bins));
  if (s.size() != static_cast<size_t>(bins) * frames)
    throw ShapeError("band_split: value count does not match bins x frames");
  const int rows = cfg.band_rows();
  Spectrogram spec;
  spec.bands = cfg.bands;
  spec.bins = rows;
  spec.frames = frames;
  spec.values.resize(static_cast<size_t>(cfg.bands) * rows * frames);
  for (int b = 0; b < cfg.bands; ++b) {
    const size_t src = static_cast<size_t>(b) * rows * frames;
    std::memcpy(spec.values.data() + src, s.data() + src, sizeof(float) * rows * frames);
  }
  return spec;
}

std::vector<Spectrogram> extract_features(const audio::AudioClip& clip,
                                          const FrontEndConfig& cfg) {
  if (clip.sample_rate != cfg.sample_rate)
    throw ConfigError("extract_features: clip rate " + std::to_string(clip.sample_rate) +
                      " != front-end rate " + std::to_string(cfg.sample_rate));
  std::vector<Spectrogram> out;
  out.reserve(clip.channels);
  for (int c = 0; c < clip.channels; ++c) {
    std::span<const float> ch(clip.channel(c), static_cast<size_t>(clip.length));
    const StftMatrix x = stft(ch, cfg);
    const std::vector<float> s = log_power(x, cfg.epsilon_power);
    out.push_back(band_split(s, x.bins, x.frames, cfg));
  }
  return out;
}

void write_spectrogram(const std::string& path, const Spectrogram& spec) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("spectrogram cache: cannot open " + path + " for writing");
  out.write(kCacheMagic, 4);
  write_u16(out, kCacheVersion);
  write_u32(out, static_cast<uint32_t>(spec.bands));
  write_u32(out, static_cast<uint32_t>(spec.bins));
  write_u32(out, static_cast<uint32_t>(spec.frames));
  out.write(reinterpret_cast<const char*>(spec.values.data()),
            static_cast<std::streamsize>(spec.values.size() * sizeof(float)));
  if (!out) throw FormatError("spectrogram cache: write failed for " + path);
}

Spectrogram read_spectrogram(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("spectrogram cache: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCacheMagic, 4) != 0)
    throw FormatError("spectrogram cache: bad magic in " + path);
  const uint16_t version = read_u16(in);
  if (version != kCacheVersion)
    throw FormatError("spectrogram cache: unsupported version " + std::to_string(version));
  Spectrogram spec;
  spec.bands = static_cast<int>(read_u32(in));
  spec.bins = static_cast<int>(read_u32(in));
  spec.frames = static_cast<int>(read_u32(in));
  if (!in || spec.bands <= 0 || spec.bins <= 0 || spec.frames <= 0)
    throw FormatError("spectrogram cache: bad shape in " + path);
  spec.values.resize(static_cast<size_t>(spec.bands) * spec.bins * spec.frames);
  in.read(reinterpret_cast<char*>(spec.values.data()),
          static_cast<std::streamsize>(spec.values.size() * sizeof(float)));
  if (!in) throw FormatError("spectrogram cache: truncated values in " + path);
  return spec;
}

}  // namespace esres::dsp
