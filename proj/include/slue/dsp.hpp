#pragma once

// Log-mel filterbank front-end: framing, Hamming window, radix-2 FFT,
// triangular mel filters, natural log with energy floor. Also owns the
// FBNK binary feature-file format and a minimal mono 16-bit PCM WAV reader.

#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "slue/common.hpp"

namespace slue {

struct FrontendConfig {
  int sample_rate_hz = 8000;  // telephone-band default, configurable to 16k
  double window_ms = 25.0;
  double hop_ms = 10.0;
  int n_mels = 40;
  int fft_size = 256;
  double log_floor = 1e-10;

  int win_samples() const {
    return static_cast<int>(window_ms * sample_rate_hz / 1000.0);
  }
  int hop_samples() const {
    return static_cast<int>(hop_ms * sample_rate_hz / 1000.0);
  }

  void validate() const {
    if (sample_rate_hz <= 0) throw ConfigError("frontend: sample_rate_hz must be positive");
    if (!(window_ms > hop_ms && hop_ms > 0))
      throw ConfigError("frontend: require window_ms > hop_ms > 0");
    if (n_mels < 2) throw ConfigError("frontend: n_mels must be >= 2");
    if (log_floor <= 0) throw ConfigError("frontend: log_floor must be positive");
    if (fft_size < win_samples())
      throw ConfigError("frontend: fft_size " + std::to_string(fft_size) +
                        " < window of " + std::to_string(win_samples()) + " samples");
    if ((fft_size & (fft_size - 1)) != 0 || fft_size <= 0)
      throw ConfigError("frontend: fft_size must be a power of two");
  }
};

struct FeatureMatrix {
  int n_mels = 0;
  float frame_rate_hz = 100.0f;
  std::vector<float> data;  // frames() x n_mels, row-major

  int frames() const {
    return n_mels == 0 ? 0 : static_cast<int>(data.size()) / n_mels;
  }
  float at(int t, int m) const { return data[static_cast<std::size_t>(t) * n_mels + m]; }
  float& at(int t, int m) { return data[static_cast<std::size_t>(t) * n_mels + m]; }
};

inline std::vector<double> hamming(int n) {
  if (n < 2) throw std::invalid_argument("hamming: window length must be >= 2");
  std::vector<double> w(n);
  for (int k = 0; k < n; ++k)
    w[k] = 0.54 - 0.46 * std::cos(2.0 * M_PI * k / (n - 1));
  return w;
}

inline double hz_to_mel(double f) {
  if (f < 0) throw std::invalid_argument("hz_to_mel: negative frequency");
  return 2595.0 * std::log10(1.0 + f / 700.0);
}

inline double mel_to_hz(double m) {
  return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0);
}

// in-place iterative radix-2 FFT; size must be a power of two
inline void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft: size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

// Triangular mel filterbank as a dense [n_mels x (fft/2+1)] weight matrix.
// Weights are computed on the mel axis, so adjacent filters sum to one at
// every interior bin between the first and last centers.
inline std::vector<std::vector<double>> mel_filterbank(const FrontendConfig& cfg) {
  const int n_bins = cfg.fft_size / 2 + 1;
  const double nyquist = cfg.sample_rate_hz / 2.0;
  const double mel_lo = 0.0, mel_hi = hz_to_mel(nyquist);
  std::vector<double> centers(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    centers[i] = mel_lo + (mel_hi - mel_lo) * i / (cfg.n_mels + 1);
  std::vector<std::vector<double>> fb(cfg.n_mels, std::vector<double>(n_bins, 0.0));
  for (int b = 0; b < n_bins; ++b) {
    const double mel =
        hz_to_mel(static_cast<double>(b) * cfg.sample_rate_hz / cfg.fft_size);
    for (int k = 0; k < cfg.n_mels; ++k) {
      const double left = centers[k], mid = centers[k + 1], right = centers[k + 2];
      if (mel > left && mel < right)
        fb[k][b] = mel <= mid ? (mel - left) / (mid - left)
                              : (right - mel) / (right - mid);
    }
  }
  return fb;
}

// center frequency (Hz) of mel filter k under cfg
inline double mel_filter_center_hz(const FrontendConfig& cfg, int k) {
  const double mel_hi = hz_to_mel(cfg.sample_rate_hz / 2.0);
  return mel_to_hz(mel_hi * (k + 1) / (cfg.n_mels + 1));
}

inline FeatureMatrix extract_fbank(const std::vector<double>& samples,
                                   const FrontendConfig& cfg) {
  cfg.validate();
  const int win = cfg.win_samples(), hop = cfg.hop_samples();
  if (static_cast<int>(samples.size()) < win)
    throw DataError("extract_fbank: signal of " + std::to_string(samples.size()) +
                    " samples shorter than one " + std::to_string(win) +
                    "-sample window");
  const int t_x = 1 + (static_cast<int>(samples.size()) - win) / hop;
  const auto window = hamming(win);
  const auto fb = mel_filterbank(cfg);
  const int n_bins = cfg.fft_size / 2 + 1;

  FeatureMatrix out;
  out.n_mels = cfg.n_mels;
  out.frame_rate_hz = static_cast<float>(1000.0 / cfg.hop_ms);
  out.data.resize(static_cast<std::size_t>(t_x) * cfg.n_mels);

  std::vector<std::complex<double>> buf(cfg.fft_size);
  std::vector<double> power(n_bins);
  for (int t = 0; t < t_x; ++t) {
    for (int i = 0; i < cfg.fft_size; ++i) buf[i] = 0.0;
    for (int i = 0; i < win; ++i)
      buf[i] = samples[static_cast<std::size_t>(t) * hop + i] * window[i];
    fft_radix2(buf);
    for (int b = 0; b < n_bins; ++b) power[b] = std::norm(buf[b]);
    for (int k = 0; k < cfg.n_mels; ++k) {
      double e = 0.0;
      for (int b = 0; b < n_bins; ++b) e += fb[k][b] * power[b];
      out.at(t, k) = static_cast<float>(std::log(std::max(e, cfg.log_floor)));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// FBNK feature file: magic "FBNK", version u32, T u32, n_mels u32,
// hop_ms f32, then T*n_mels f32 row-major. Little-endian.

inline void save_fbank(const FeatureMatrix& m, const std::string& path,
                       float hop_ms = 10.0f) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("fbank: cannot write " + path);
  f.write("FBNK", 4);
  const std::uint32_t version = 1, t = static_cast<std::uint32_t>(m.frames()),
                      nm = static_cast<std::uint32_t>(m.n_mels);
  f.write(reinterpret_cast<const char*>(&version), 4);
  f.write(reinterpret_cast<const char*>(&t), 4);
  f.write(reinterpret_cast<const char*>(&nm), 4);
  f.write(reinterpret_cast<const char*>(&hop_ms), 4);
  f.write(reinterpret_cast<const char*>(m.data.data()),
          static_cast<std::streamsize>(m.data.size() * sizeof(float)));
  if (!f) throw DataError("fbank: write failed for " + path);
}

inline FeatureMatrix load_fbank(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("fbank: cannot read " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "FBNK", 4) != 0)
    throw DataError("fbank: bad magic in " + path);
  std::uint32_t version = 0, t = 0, nm = 0;
  float hop_ms = 0;
  f.read(reinterpret_cast<char*>(&version), 4);
  f.read(reinterpret_cast<char*>(&t), 4);
  f.read(reinterpret_cast<char*>(&nm), 4);
  f.read(reinterpret_cast<char*>(&hop_ms), 4);
  if (!f || version != 1) throw DataError("fbank: bad header in " + path);
  FeatureMatrix m;
  m.n_mels = static_cast<int>(nm);
  m.frame_rate_hz = hop_ms > 0 ? 1000.0f / hop_ms : 100.0f;
  m.data.resize(static_cast<std::size_t>(t) * nm);
  f.read(reinterpret_cast<char*>(m.data.data()),
         static_cast<std::streamsize>(m.data.size() * sizeof(float)));
  if (!f) throw DataError("fbank: truncated file " + path);
  return m;
}

// ---------------------------------------------------------------------------
// mono 16-bit PCM WAV

inline std::vector<double> load_wav_mono16(const std::string& path,
                                           int* sample_rate_out = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("wav: cannot read " + path);
  auto read_u32 = [&]() {
    std::uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  auto read_u16 = [&]() {
    std::uint16_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 2);
    return v;
  };
  char tag[4];
  f.read(tag, 4);
  if (!f || std::memcmp(tag, "RIFF", 4) != 0) throw DataError("wav: not RIFF: " + path);
  read_u32();  // riff size
  f.read(tag, 4);
  if (std::memcmp(tag, "WAVE", 4) != 0) throw DataError("wav: not WAVE: " + path);
  std::uint16_t channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::vector<double> samples;
  while (f.read(tag, 4)) {
    std::uint32_t chunk_size = read_u32();
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      const std::uint16_t fmt = read_u16();
      channels = read_u16();
      rate = read_u32();
      read_u32();  // byte rate
      read_u16();  // block align
      bits = read_u16();
      if (chunk_size > 16) f.seekg(chunk_size - 16, std::ios::cur);
      if (fmt != 1 || channels != 1 || bits != 16)
        throw DataError("wav: expected mono 16-bit PCM: " + path);
    } else if (std::memcmp(tag, "data", 4) == 0) {
      const std::size_t n = chunk_size / 2;
      samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::int16_t s = 0;
        f.read(reinterpret_cast<char*>(&s), 2);
        samples[i] = static_cast<double>(s) / 32768.0;
      }
      break;
    } else {
      f.seekg(chunk_size + (chunk_size & 1), std::ios::cur);
    }
  }
  if (samples.empty()) throw DataError("wav: no data chunk in " + path);
  if (sample_rate_out) *sample_rate_out = static_cast<int>(rate);
  return samples;
}

inline void save_wav_mono16(const std::vector<double>& samples, int sample_rate,
                            const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("wav: cannot write " + path);
  auto write_u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<char*>(&v), 4); };
  auto write_u16 = [&](std::uint16_t v) { f.write(reinterpret_cast<char*>(&v), 2); };
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  f.write("RIFF", 4);
  write_u32(36 + data_bytes);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  write_u32(16);
  write_u16(1);
  write_u16(1);
  write_u32(static_cast<std::uint32_t>(sample_rate));
  write_u32(static_cast<std::uint32_t>(sample_rate * 2));
  write_u16(2);
  write_u16(16);
  f.write("data", 4);
  write_u32(data_bytes);
  for (double s : samples) {
    const double c = std::max(-1.0, std::min(1.0, s));
    const std::int16_t v = static_cast<std::int16_t>(std::lround(c * 32767.0));
    f.write(reinterpret_cast<const char*>(&v), 2);
  }
}

}  // namespace slue
