#include "esres/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "esres/error.hpp"

namespace esres::audio {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Half-width of the interpolation kernel in output-side zero crossings;
// 64 taps per output sample at unity rate.
constexpr int kKernelHalfWidth = 32;

uint32_t read_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t read_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

float read_f32(const uint8_t* p) {
  uint32_t bits = read_u32(p);
  float out;
  std::memcpy(&out, &bits, 4);
  return out;
}

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = kPi * x;
  return std::sin(px) / px;
}

// 4-term Blackman-Harris taper over u in [-1, 1].
double kernel_window(double u) {
  const double t = 0.5 * (u + 1.0);
  return 0.35875 - 0.48829 * std::cos(2.0 * kPi * t) +
         0.14128 * std::cos(4.0 * kPi * t) - 0.01168 * std::cos(6.0 * kPi * t);
}

// Windowed-sinc interpolation of n_out samples at input positions
// i / ratio. The kernel is stretched by 1/cutoff when decimating. The sinc
// and taper trig terms advance by fixed steps across taps, so each is seeded
// once per output sample and rotated instead of recomputed.
void resample_channel(const float* in, int64_t n_in, float* out, int64_t n_out,
                      double ratio) {
  const double cutoff = std::min(1.0, ratio);
  const double support = kKernelHalfWidth / cutoff;

  const double sin_step = kPi * cutoff;                  // arg step of sin(pi*cutoff*d)
  const double u_step = 0.5 / support;                   // taper arg step per tap
  const double cs = std::cos(sin_step), ss = std::sin(sin_step);
  double cw[3], sw[3];
  for (int h = 0; h < 3; ++h) {
    cw[h] = std::cos(2.0 * kPi * (h + 1) * u_step);
    sw[h] = std::sin(2.0 * kPi * (h + 1) * u_step);
  }
  const double a[3] = {-0.48829, 0.14128, -0.01168};

  for (int64_t i = 0; i < n_out; ++i) {
    const double t = static_cast<double>(i) / ratio;
    const int64_t k_lo = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(t - support)));
    const int64_t k_hi = std::min<int64_t>(n_in - 1, static_cast<int64_t>(std::floor(t + support)));
    if (k_lo > k_hi) {
      out[i] = 0.0f;
      continue;
    }

    // seed at the first tap, then rotate; d decreases by 1 per tap
    const double d0 = t - static_cast<double>(k_lo);
    double sv = std::sin(kPi * cutoff * d0), cv = std::cos(kPi * cutoff * d0);
    double swv[3], cwv[3];
    const double t0 = 0.5 * (d0 / support + 1.0);
    for (int h = 0; h < 3; ++h) {
      swv[h] = std::sin(2.0 * kPi * (h + 1) * t0);
      cwv[h] = std::cos(2.0 * kPi * (h + 1) * t0);
    }

    double acc = 0.0;
    double d = d0;
    for (int64_t k = k_lo; k <= k_hi; ++k) {
      const double x = cutoff * d;
      const double sinc_v = std::abs(x) < 1e-12 ? 1.0 : sv / (kPi * x);
      double win = 0.35875;
      for (int h = 0; h < 3; ++h) win += a[h] * cwv[h];
      acc += static_cast<double>(in[k]) * cutoff * sinc_v * win;

      const double nsv = sv * cs - cv * ss, ncv = cv * cs + sv * ss;
      sv = nsv;
      cv = ncv;
      for (int h = 0; h < 3; ++h) {
        const double ns = swv[h] * cw[h] - cwv[h] * sw[h];
        cwv[h] = cwv[h] * cw[h] + swv[h] * sw[h];
        swv[h] = ns;
      }
      d -= 1.0;
    }
    out[i] = static_cast<float>(acc);
  }
}

}  // namespace

AudioClip AudioClip::make(int channels, int64_t length, int sample_rate) {
  AudioClip clip;
  clip.channels = channels;
  clip.length = length;
  clip.sample_rate = sample_rate;
  clip.samples.assign(static_cast<size_t>(channels) * length, 0.0f);
  return clip;
}

AudioClip decode_wav(std::span<const uint8_t> bytes) {
  if (bytes.size() < 12) throw DecodeError("wav: truncated RIFF header");
  if (std::memcmp(bytes.data(), "RIFF", 4) != 0)
    throw DecodeError("wav: missing RIFF chunk");
  if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw DecodeError("wav: missing WAVE tag");

  bool have_fmt = false;
  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  const uint8_t* data = nullptr;
  uint32_t data_size = 0;

  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const uint8_t* hdr = bytes.data() + pos;
    const uint32_t chunk_size = read_u32(hdr + 4);
    const size_t body = pos + 8;
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (body + 16 > bytes.size() || chunk_size < 16)
        throw DecodeError("wav: truncated fmt chunk");
      const uint8_t* f = bytes.data() + body;
      format = read_u16(f);
      channels = read_u16(f + 2);
      rate = read_u32(f + 4);
      bits = read_u16(f + 14);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      if (body + chunk_size > bytes.size())
        throw DecodeError("wav: truncated data chunk");
      data = bytes.data() + body;
      data_size = chunk_size;
    }
    pos = body + chunk_size + (chunk_size & 1);  // chunks are word-aligned
  }

  if (!have_fmt) throw DecodeError("wav: missing fmt chunk");
  if (data == nullptr) throw DecodeError("wav: missing data chunk");
  if (channels < 1 || channels > 2)
    throw DecodeError("wav: unsupported channel count " + std::to_string(channels));
  if (rate == 0) throw DecodeError("wav: zero sample rate");

  const bool pcm16 = (format == 1 && bits == 16);
  const bool float32 = (format == 3 && bits == 32);
  if (!pcm16 && !float32)
    throw DecodeError("wav: unsupported encoding (format " + std::to_string(format) +
                      ", " + std::to_string(bits) + "-bit)");

  const uint32_t bytes_per_sample = bits / 8;
  const uint32_t frame_bytes = bytes_per_sample * channels;
  if (data_size < frame_bytes) throw DecodeError("wav: empty data chunk");
  const int64_t length = data_size / frame_bytes;

  AudioClip clip = AudioClip::make(channels, length, static_cast<int>(rate));
  for (int64_t i = 0; i < length; ++i) {
    for (int c = 0; c < channels; ++c) {
      const uint8_t* p = data + (static_cast<size_t>(i) * channels + c) * bytes_per_sample;
      float v;
      if (pcm16) {
        const int16_t s = static_cast<int16_t>(read_u16(p));
        v = static_cast<float>(s) / 32768.0f;
      } else {
        v = read_f32(p);
      }
      clip.channel(c)[i] = v;
    }
  }
  return clip;
}

AudioClip decode_wav_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError("wav: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return decode_wav(bytes);
}

AudioClip resample(const AudioClip& clip, int target_rate) {
  if (target_rate <= 0) throw ConfigError("resample: target rate must be positive");
  if (clip.sample_rate == target_rate) return clip;
  const double ratio = static_cast<double>(target_rate) / clip.sample_rate;
  const int64_t out_len = std::llround(static_cast<double>(clip.length) * target_rate /
                                       clip.sample_rate);
  AudioClip out = AudioClip::make(clip.channels, out_len, target_rate);
  for (int c = 0; c < clip.channels; ++c)
    resample_channel(clip.channel(c), clip.length, out.channel(c), out_len, ratio);
  return out;
}

AudioClip resample_by_factor(const AudioClip& clip, double factor) {
  if (factor <= 0.0) throw ConfigError("resample: factor must be positive");
  const int64_t out_len = std::llround(static_cast<double>(clip.length) * factor);
  AudioClip out = AudioClip::make(clip.channels, out_len, clip.sample_rate);
  for (int c = 0; c < clip.channels; ++c)
    resample_channel(clip.channel(c), clip.length, out.channel(c), out_len, factor);
  return out;
}

AudioClip to_mono(const AudioClip& clip) {
  if (clip.channels == 1) return clip;
  AudioClip out = AudioClip::make(1, clip.length, clip.sample_rate);
  const float* l = clip.channel(0);
  const float* r = clip.channel(1);
  for (int64_t i = 0; i < clip.length; ++i) out.samples[i] = 0.5f * (l[i] + r[i]);
  return out;
}

AudioClip to_stereo(const AudioClip& clip) {
  if (clip.channels == 2) return clip;
  AudioClip out = AudioClip::make(2, clip.length, clip.sample_rate);
  std::copy(clip.samples.begin(), clip.samples.end(), out.channel(0));
  std::copy(clip.samples.begin(), clip.samples.end(), out.channel(1));
  return out;
}

AudioClip fit_length(const AudioClip& clip, int64_t target_samples) {
  if (target_samples <= 0) throw ConfigError("fit_length: target must be positive");
  if (clip.length == target_samples) return clip;
  AudioClip out = AudioClip::make(clip.channels, target_samples, clip.sample_rate);
  if (clip.length > target_samples) {
    const int64_t start = (clip.length - target_samples) / 2;
    for (int c = 0; c < clip.channels; ++c)
      std::copy_n(clip.channel(c) + start, target_samples, out.channel(c));
  } else {
    const int64_t pad_left = (target_samples - clip.length) / 2;
    for (int c = 0; c < clip.channels; ++c)
      std::copy_n(clip.channel(c), clip.length, out.channel(c) + pad_left);
  }
  return out;
}

}  // namespace esres::audio
