// Filterbank front-end: window/mel oracles, framing arithmetic, filterbank
// partition of unity, an O(N^2) DFT cross-check, and file-format round trips.

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "slue/dsp.hpp"

using slue::FrontendConfig;

TEST(Hamming, EndpointAndCenterValues) {
  auto w2 = slue::hamming(2);
  ASSERT_EQ(w2.size(), 2u);
  EXPECT_NEAR(w2[0], 0.08, 1e-12);
  EXPECT_NEAR(w2[1], 0.08, 1e-12);
  auto w9 = slue::hamming(9);
  EXPECT_NEAR(w9[4], 1.0, 1e-12);  // odd n, center k=(n-1)/2
  EXPECT_THROW(slue::hamming(1), std::invalid_argument);
}

TEST(Hamming, Symmetry) {
  for (int n : {2, 3, 16, 200, 201}) {
    auto w = slue::hamming(n);
    for (int k = 0; k < n; ++k) EXPECT_NEAR(w[k], w[n - 1 - k], 1e-12) << "n=" << n;
  }
}

TEST(MelScale, KnownValuesAndMonotonicity) {
  EXPECT_DOUBLE_EQ(slue::hz_to_mel(0.0), 0.0);
  // 2595 * log10(2), evaluated independently
  EXPECT_NEAR(slue::hz_to_mel(700.0), 781.1728387480312, 1e-9);
  EXPECT_GT(slue::hz_to_mel(1000.0), slue::hz_to_mel(700.0));
  EXPECT_THROW(slue::hz_to_mel(-1.0), std::invalid_argument);
  for (double f : {17.0, 700.0, 3999.0})
    EXPECT_NEAR(slue::mel_to_hz(slue::hz_to_mel(f)), f, 1e-9);
}

TEST(Framing, CountFormula) {
  FrontendConfig cfg;  // 8 kHz, 25/10 ms
  EXPECT_EQ(cfg.win_samples(), 200);
  EXPECT_EQ(cfg.hop_samples(), 80);
  std::vector<double> sig(8000, 0.0);
  EXPECT_EQ(slue::extract_fbank(sig, cfg).frames(), 98);
}

TEST(Framing, CountFormulaPropertyRandomSizes) {
  slue::Rng rng(11);
  FrontendConfig cfg;
  for (int it = 0; it < 30; ++it) {
    const int n = 200 + static_cast<int>(rng.uniform_int(4000));
    std::vector<double> sig(n, 0.0);
    const int expect = 1 + (n - cfg.win_samples()) / cfg.hop_samples();
    EXPECT_EQ(slue::extract_fbank(sig, cfg).frames(), expect) << "n=" << n;
  }
}

TEST(Framing, TooShortSignal) {
  FrontendConfig cfg;
  std::vector<double> sig(199, 0.0);
  EXPECT_THROW(slue::extract_fbank(sig, cfg), slue::DataError);
}

TEST(Fbank, AllZeroSignalHitsLogFloor) {
  FrontendConfig cfg;
  std::vector<double> sig(1000, 0.0);
  auto m = slue::extract_fbank(sig, cfg);
  const float floor = static_cast<float>(std::log(cfg.log_floor));
  for (float v : m.data) EXPECT_FLOAT_EQ(v, floor);
}

TEST(Fbank, MelFiltersPartitionOfUnity) {
  FrontendConfig cfg;
  auto fb = slue::mel_filterbank(cfg);
  const int n_bins = cfg.fft_size / 2 + 1;
  const double first_center = slue::mel_filter_center_hz(cfg, 0);
  const double last_center = slue::mel_filter_center_hz(cfg, cfg.n_mels - 1);
  for (int b = 0; b < n_bins; ++b) {
    const double hz = static_cast<double>(b) * cfg.sample_rate_hz / cfg.fft_size;
    if (hz <= first_center || hz >= last_center) continue;
    double s = 0;
    for (int k = 0; k < cfg.n_mels; ++k) s += fb[k][b];
    EXPECT_NEAR(s, 1.0, 1e-9) << "bin " << b;
  }
}

namespace {

// independent front end: direct O(N^2) DFT instead of the radix-2 FFT
slue::FeatureMatrix fbank_dft_oracle(const std::vector<double>& sig,
                                     const FrontendConfig& cfg) {
  const int win = cfg.win_samples(), hop = cfg.hop_samples();
  const int t_x = 1 + (static_cast<int>(sig.size()) - win) / hop;
  const auto window = slue::hamming(win);
  const auto fb = slue::mel_filterbank(cfg);
  const int n_bins = cfg.fft_size / 2 + 1;
  slue::FeatureMatrix out;
  out.n_mels = cfg.n_mels;
  out.data.resize(static_cast<std::size_t>(t_x) * cfg.n_mels);
  for (int t = 0; t < t_x; ++t) {
    std::vector<double> frame(cfg.fft_size, 0.0);
    for (int i = 0; i < win; ++i) frame[i] = sig[t * hop + i] * window[i];
    std::vector<double> power(n_bins);
    for (int b = 0; b < n_bins; ++b) {
      double re = 0, im = 0;
      for (int n = 0; n < cfg.fft_size; ++n) {
        const double ang = -2.0 * M_PI * b * n / cfg.fft_size;
        re += frame[n] * std::cos(ang);
        im += frame[n] * std::sin(ang);
      }
      power[b] = re * re + im * im;
    }
    for (int k = 0; k < cfg.n_mels; ++k) {
      double e = 0.0;
      for (int b = 0; b < n_bins; ++b) e += fb[k][b] * power[b];
      out.at(t, k) = static_cast<float>(std::log(std::max(e, cfg.log_floor)));
    }
  }
  return out;
}

}  // namespace

TEST(Fbank, SineAtFilterCenterVsDftOracle) {
  FrontendConfig cfg;
  for (int k : {12, 20, 30}) {
    const double f0 = slue::mel_filter_center_hz(cfg, k);
    std::vector<double> sig(1200);
    for (std::size_t i = 0; i < sig.size(); ++i)
      sig[i] = std::sin(2.0 * M_PI * f0 * i / cfg.sample_rate_hz);
    auto fast = slue::extract_fbank(sig, cfg);
    auto slow = fbank_dft_oracle(sig, cfg);
    ASSERT_EQ(fast.frames(), slow.frames());
    for (int t = 0; t < fast.frames(); ++t)
      for (int m = 0; m < cfg.n_mels; ++m)
        EXPECT_NEAR(fast.at(t, m), slow.at(t, m), 1e-4) << "t=" << t << " m=" << m;
    // mean energy peaks at (or next to) the target filter
    std::vector<double> mean(cfg.n_mels, 0.0);
    for (int t = 0; t < fast.frames(); ++t)
      for (int m = 0; m < cfg.n_mels; ++m) mean[m] += fast.at(t, m);
    const int argmax = static_cast<int>(
        std::max_element(mean.begin(), mean.end()) - mean.begin());
    EXPECT_LE(std::abs(argmax - k), 1) << "filter " << k << " center " << f0;
  }
}

TEST(Fbank, Deterministic) {
  slue::Rng rng(12);
  std::vector<double> sig(2000);
  for (auto& s : sig) s = rng.normal() * 0.1;
  FrontendConfig cfg;
  auto a = slue::extract_fbank(sig, cfg);
  auto b = slue::extract_fbank(sig, cfg);
  EXPECT_EQ(a.data, b.data);
}

TEST(Fbank, ConfigValidation) {
  FrontendConfig cfg;
  cfg.fft_size = 100;  // not power of two and < window
  EXPECT_THROW(cfg.validate(), slue::ConfigError);
  cfg = FrontendConfig{};
  cfg.hop_ms = 30;  // hop >= window
  EXPECT_THROW(cfg.validate(), slue::ConfigError);
  cfg = FrontendConfig{};
  cfg.n_mels = 1;
  EXPECT_THROW(cfg.validate(), slue::ConfigError);
}

TEST(FbnkFile, BitExactRoundTrip) {
  slue::Rng rng(13);
  slue::FeatureMatrix m;
  m.n_mels = 40;
  m.data.resize(40 * 17);
  for (auto& v : m.data) v = static_cast<float>(rng.normal());
  const auto path = std::filesystem::temp_directory_path() / "roundtrip.fbnk";
  slue::save_fbank(m, path.string());
  auto back = slue::load_fbank(path.string());
  EXPECT_EQ(back.n_mels, m.n_mels);
  EXPECT_EQ(back.data, m.data);  // bit-exact
  std::filesystem::remove(path);
  EXPECT_THROW(slue::load_fbank(path.string()), slue::DataError);
}

TEST(WavFile, RoundTrip) {
  std::vector<double> sig(500);
  for (std::size_t i = 0; i < sig.size(); ++i)
    sig[i] = 0.5 * std::sin(2.0 * M_PI * 440.0 * i / 8000.0);
  const auto path = std::filesystem::temp_directory_path() / "roundtrip.wav";
  slue::save_wav_mono16(sig, 8000, path.string());
  int rate = 0;
  auto back = slue::load_wav_mono16(path.string(), &rate);
  EXPECT_EQ(rate, 8000);
  ASSERT_EQ(back.size(), sig.size());
  for (std::size_t i = 0; i < sig.size(); ++i)
    EXPECT_NEAR(back[i], sig[i], 1.0 / 32768.0);
  std::filesystem::remove(path);
}
