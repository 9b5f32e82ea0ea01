#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vqmae/wav.hpp"

namespace vqmae {

struct DspError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// in-place iterative radix-2 FFT; n must be a power of two
inline void fft_radix2(std::vector<double>& re, std::vector<double>& im) {
  const size_t n = re.size();
  if (n == 0 || (n & (n - 1)) != 0) throw DspError("fft size must be a power of two");
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -6.283185307179586476925286766559 / static_cast<double>(len);
    const double wr = std::cos(ang), wi = std::sin(ang);
    for (size_t i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (size_t k = 0; k < len / 2; ++k) {
        const double ur = re[i + k], ui = im[i + k];
        const double vr = re[i + k + len / 2] * cr - im[i + k + len / 2] * ci;
        const double vi = re[i + k + len / 2] * ci + im[i + k + len / 2] * cr;
        re[i + k] = ur + vr;
        im[i + k] = ui + vi;
        re[i + k + len / 2] = ur - vr;
        im[i + k + len / 2] = ui - vi;
        const double nr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = nr;
      }
    }
  }
}

// periodic Hann window
inline std::vector<double> hann_window(std::int64_t n) {
  std::vector<double> w(static_cast<size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    w[static_cast<size_t>(i)] =
        0.5 * (1.0 - std::cos(6.283185307179586476925286766559 * static_cast<double>(i) /
                              static_cast<double>(n)));
  return w;
}

// Nonnegative time-frequency matrix, row t = squared DFT magnitudes of
// windowed frame t, bins 0..fft/2.
struct PowerSpectrogram {
  std::int64_t num_frames = 0;
  std::int64_t num_bins = 0;
  std::int64_t hop = 0;
  std::vector<double> power;  // row-major [num_frames, num_bins]

  double at(std::int64_t t, std::int64_t b) const {
    return power[static_cast<size_t>(t * num_bins + b)];
  }
  const double* frame(std::int64_t t) const { return power.data() + t * num_bins; }
};

inline std::int64_t stft_hop(std::int64_t fft_size, double overlap) {
  return static_cast<std::int64_t>(std::floor((1.0 - overlap) * static_cast<double>(fft_size)));
}

inline std::int64_t stft_num_frames(std::int64_t num_samples, std::int64_t fft_size,
                                    std::int64_t hop) {
  if (num_samples < fft_size) return 0;
  return (num_samples - fft_size) / hop + 1;
}

// Hann-windowed power STFT. No padding: frame t covers samples
// [t*hop, t*hop + fft_size).
inline PowerSpectrogram stft_power(const Waveform& w, std::int64_t fft_size = 1024,
                                   double overlap = 0.7) {
  const std::int64_t n = static_cast<std::int64_t>(w.samples.size());
  if (n < fft_size)
    throw DspError("stft: signal of " + std::to_string(n) + " samples is shorter than the " +
                   std::to_string(fft_size) + "-sample window (minimum length " +
                   std::to_string(fft_size) + ")");
  const std::int64_t hop = stft_hop(fft_size, overlap);
  const std::int64_t frames = stft_num_frames(n, fft_size, hop);
  const std::int64_t bins = fft_size / 2 + 1;
  const std::vector<double> window = hann_window(fft_size);

  PowerSpectrogram s;
  s.num_frames = frames;
  s.num_bins = bins;
  s.hop = hop;
  s.power.resize(static_cast<size_t>(frames * bins));
  std::vector<double> re(static_cast<size_t>(fft_size)), im(static_cast<size_t>(fft_size));
  for (std::int64_t t = 0; t < frames; ++t) {
    const std::int64_t start = t * hop;
    for (std::int64_t i = 0; i < fft_size; ++i) {
      re[static_cast<size_t>(i)] =
          w.samples[static_cast<size_t>(start + i)] * window[static_cast<size_t>(i)];
      im[static_cast<size_t>(i)] = 0.0;
    }
    fft_radix2(re, im);
    double* row = s.power.data() + t * bins;
    for (std::int64_t b = 0; b < bins; ++b)
      row[b] = re[static_cast<size_t>(b)] * re[static_cast<size_t>(b)] +
               im[static_cast<size_t>(b)] * im[static_cast<size_t>(b)];
  }
  return s;
}

}  // namespace vqmae
