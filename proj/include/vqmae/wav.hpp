#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vqmae {

struct WavError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Waveform {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = 16000;

  double duration() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }
};

namespace detail {

inline std::uint32_t rd_u32(const std::vector<char>& b, size_t off) {
  std::uint32_t v;
  std::memcpy(&v, b.data() + off, 4);
  return v;
}

inline std::uint16_t rd_u16(const std::vector<char>& b, size_t off) {
  std::uint16_t v;
  std::memcpy(&v, b.data() + off, 2);
  return v;
}

}  // namespace detail

// linear-interpolation resampler; a signal of N samples at rate r maps to
// floor((N-1)*target/r) + 1 samples at the target rate
inline std::vector<double> resample_linear(const std::vector<double>& x, int from_rate,
                                           int to_rate) {
  if (from_rate == to_rate || x.empty()) return x;
  const std::int64_t n = static_cast<std::int64_t>(x.size());
  const std::int64_t m =
      static_cast<std::int64_t>((n - 1) * static_cast<std::int64_t>(to_rate) / from_rate) + 1;
  std::vector<double> y(static_cast<size_t>(m));
  const double step = static_cast<double>(from_rate) / static_cast<double>(to_rate);
  for (std::int64_t j = 0; j < m; ++j) {
    const double p = static_cast<double>(j) * step;
    const std::int64_t i = static_cast<std::int64_t>(p);
    const double frac = p - static_cast<double>(i);
    if (i + 1 < n)
      y[static_cast<size_t>(j)] = x[static_cast<size_t>(i)] * (1.0 - frac) +
                                  x[static_cast<size_t>(i + 1)] * frac;
    else
      y[static_cast<size_t>(j)] = x[static_cast<size_t>(n - 1)];
  }
  return y;
}

// Reads a PCM 16-bit WAV (mono, or stereo averaged to mono), scales samples to
// [-1, 1] and resamples to 16 kHz when needed. Malformed input errors name the
// byte offset of the problem.
inline Waveform load_wav(const std::string& path, int target_rate = 16000) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WavError("cannot open " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  auto fail = [&](size_t off, const std::string& what) {
    throw WavError(path + ": " + what + " at byte offset " + std::to_string(off));
  };
  if (bytes.size() < 12) fail(0, "file too short for RIFF header");
  if (std::memcmp(bytes.data(), "RIFF", 4) != 0) fail(0, "missing RIFF tag");
  if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) fail(8, "missing WAVE tag");

  int channels = 0, sample_rate = 0, bits = 0, audio_format = 0;
  size_t data_off = 0, data_len = 0;
  size_t off = 12;
  while (off + 8 <= bytes.size()) {
    const char* id = bytes.data() + off;
    const std::uint32_t sz = detail::rd_u32(bytes, off + 4);
    const size_t body = off + 8;
    if (body + sz > bytes.size()) fail(off, "chunk overruns file");
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (sz < 16) fail(off, "fmt chunk too small");
      audio_format = detail::rd_u16(bytes, body);
      channels = detail::rd_u16(bytes, body + 2);
      sample_rate = static_cast<int>(detail::rd_u32(bytes, body + 4));
      bits = detail::rd_u16(bytes, body + 14);
    } else if (std::memcmp(id, "data", 4) == 0) {
      data_off = body;
      data_len = sz;
    }
    off = body + sz + (sz & 1);  // chunks are word-aligned
  }
  if (channels == 0) fail(12, "no fmt chunk");
  if (data_off == 0) fail(12, "no data chunk");
  if (audio_format != 1) fail(data_off, "unsupported encoding (need PCM), format=" +
                                            std::to_string(audio_format));
  if (bits != 16) fail(data_off, "unsupported bit depth " + std::to_string(bits) + " (need 16)");
  if (channels != 1 && channels != 2) fail(data_off, "unsupported channel count");
  if (sample_rate <= 0) fail(data_off, "bad sample rate");

  const size_t frame_bytes = static_cast<size_t>(channels) * 2;
  const size_t n = data_len / frame_bytes;
  std::vector<double> mono(n);
  for (size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      std::int16_t s;
      std::memcpy(&s, bytes.data() + data_off + i * frame_bytes + c * 2, 2);
      acc += static_cast<double>(s) / 32768.0;
    }
    mono[i] = acc / channels;
  }

  Waveform w;
  w.sample_rate = target_rate;
  w.samples = resample_linear(mono, sample_rate, target_rate);
  return w;
}

inline void save_wav(const std::string& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw WavError("cannot write " + path);
  const std::uint32_t n = static_cast<std::uint32_t>(w.samples.size());
  const std::uint32_t data_len = n * 2;
  const std::uint32_t riff_len = 36 + data_len;
  auto w_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  auto w_u16 = [&](std::uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); };
  out.write("RIFF", 4);
  w_u32(riff_len);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  w_u32(16);
  w_u16(1);  // PCM
  w_u16(1);  // mono
  w_u32(static_cast<std::uint32_t>(w.sample_rate));
  w_u32(static_cast<std::uint32_t>(w.sample_rate) * 2);
  w_u16(2);
  w_u16(16);
  out.write("data", 4);
  w_u32(data_len);
  for (double x : w.samples) {
    double c = x < -1.0 ? -1.0 : (x > 1.0 ? 1.0 : x);
    std::int16_t s = static_cast<std::int16_t>(std::lrint(c * 32767.0));
    out.write(reinterpret_cast<const char*>(&s), 2);
  }
}

}  // namespace vqmae
