#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vqmae/rng.hpp"
#include "vqmae/tensor.hpp"
#include "vqmae/wav.hpp"

namespace vqmae {

// Deterministic synthetic emotional-speech stand-in. Speakers carry the base
// pitch; classes carry the prosody dynamics (pitch contour, amplitude
// modulation, harmonic tilt). Pitch ranges overlap across classes so class
// identity is dominated by contour dynamics rather than absolute pitch.
struct SyntheticSpec {
  std::int64_t classes = 4;
  std::int64_t speakers = 20;
  std::int64_t utterances_per_speaker = 50;
  double min_seconds = 1.5;
  double max_seconds = 2.5;
  int sample_rate = 16000;
  std::int64_t partials = 9;  // fundamental + 8 harmonics

  void validate() const {
    if (classes < 2) throw TensorError("synthetic corpus: need at least 2 classes");
    if (speakers < 5)
      throw TensorError("synthetic corpus: need at least 5 speakers for 5-fold "
                        "speaker-disjoint evaluation, got " +
                        std::to_string(speakers));
    if (utterances_per_speaker < 1 || min_seconds <= 0 || max_seconds < min_seconds)
      throw TensorError("synthetic corpus: bad spec");
  }
};

// per-class prosody template
struct ProsodyTemplate {
  double am_rate_hz;      // amplitude modulation rate
  double am_depth;        // modulation depth in [0,1]
  double tilt_db_oct;     // harmonic rolloff
  int contour_kind;       // 0 fall, 1 rise, 2 dip, 3 vibrato
  double contour_amount;  // relative pitch excursion
  double vibrato_hz;      // used by the vibrato contour
};

inline ProsodyTemplate class_template(std::int64_t label) {
  ProsodyTemplate t;
  t.contour_kind = static_cast<int>(label % 4);
  t.am_rate_hz = 2.0 + 1.7 * static_cast<double>(label % 4);
  t.am_depth = 0.5;
  t.tilt_db_oct = -5.0 - 2.0 * static_cast<double>(label % 4);
  t.contour_amount = 0.16;
  t.vibrato_hz = 5.5;
  // extra classes beyond four reuse contour kinds at shifted rates
  if (label >= 4) {
    t.am_rate_hz += 0.85;
    t.tilt_db_oct -= 1.0;
  }
  return t;
}

// base pitch per speaker: geometric grid over [110, 280] Hz plus a small
// deterministic jitter, so medians stay pairwise distinct
inline double speaker_base_pitch(const SyntheticSpec& spec, std::int64_t speaker,
                                 std::uint64_t seed) {
  const double lo = 110.0, hi = 280.0;
  const double frac = spec.speakers > 1
                          ? static_cast<double>(speaker) / static_cast<double>(spec.speakers - 1)
                          : 0.5;
  Rng rng(derive_seed(seed, 0x5eed5eedULL, static_cast<std::uint64_t>(speaker)));
  const double jitter = 1.0 + 0.01 * (2.0 * rng.uniform() - 1.0);
  return lo * std::pow(hi / lo, frac) * jitter;
}

// relative pitch multiplier at time t (seconds) for a given contour
inline double contour_multiplier(const ProsodyTemplate& tpl, double t, double duration) {
  const double u = duration > 0.0 ? t / duration : 0.0;
  switch (tpl.contour_kind) {
    case 0: return 1.0 + tpl.contour_amount * (0.5 - u);               // falling
    case 1: return 1.0 + tpl.contour_amount * (u - 0.5);               // rising
    case 2: return 1.0 + tpl.contour_amount * (0.5 - std::sin(M_PI * u));  // dip
    default: return 1.0 + 0.35 * tpl.contour_amount * std::sin(2.0 * M_PI * tpl.vibrato_hz * t);
  }
}

// Additive harmonic synthesis by per-block complex rotation (no per-sample
// trig). The fundamental follows the class contour around the speaker base
// pitch; per-utterance jitters keep classes overlapping.
inline Waveform synthesize_utterance(const SyntheticSpec& spec, std::uint64_t seed,
                                     std::int64_t speaker, std::int64_t utt_index,
                                     std::int64_t label) {
  Rng rng(derive_seed(seed, 0x017e7a9ceULL,
                      static_cast<std::uint64_t>(speaker * 1000003 + utt_index)));
  const ProsodyTemplate tpl = class_template(label);
  const double base = speaker_base_pitch(spec, speaker, seed);
  const double duration = rng.uniform(spec.min_seconds, spec.max_seconds);
  const double am_rate = tpl.am_rate_hz * (1.0 + 0.15 * (2.0 * rng.uniform() - 1.0));
  const double am_depth = tpl.am_depth * (1.0 + 0.1 * (2.0 * rng.uniform() - 1.0));
  const double tilt = tpl.tilt_db_oct + 2.5 * (2.0 * rng.uniform() - 1.0);
  const double am_phase = rng.uniform(0.0, 2.0 * M_PI);
  const double pitch_jitter = 1.0 + 0.03 * (2.0 * rng.uniform() - 1.0);

  const int fs = spec.sample_rate;
  const std::int64_t n = static_cast<std::int64_t>(duration * fs);
  const std::int64_t p = spec.partials;

  std::vector<double> amp(static_cast<size_t>(p));
  double amp_sum = 0.0;
  for (std::int64_t h = 0; h < p; ++h) {
    amp[static_cast<size_t>(h)] =
        std::pow(10.0, tilt * std::log2(static_cast<double>(h + 1)) / 20.0);
    amp_sum += amp[static_cast<size_t>(h)];
  }
  for (auto& a : amp) a /= amp_sum;

  std::vector<double> zr(static_cast<size_t>(p)), zi(static_cast<size_t>(p));
  for (std::int64_t h = 0; h < p; ++h) {
    const double ph = rng.uniform(0.0, 2.0 * M_PI);
    zr[static_cast<size_t>(h)] = std::cos(ph);
    zi[static_cast<size_t>(h)] = std::sin(ph);
  }

  Waveform w;
  w.sample_rate = fs;
  w.samples.assign(static_cast<size_t>(n), 0.0);
  const std::int64_t block = 64;
  for (std::int64_t start = 0; start < n; start += block) {
    const std::int64_t stop = std::min(n, start + block);
    const double t_block = static_cast<double>(start) / fs;
    const double f0 = base * pitch_jitter * contour_multiplier(tpl, t_block, duration);
    // per-partial rotation for this block
    for (std::int64_t h = 0; h < p; ++h) {
      const double f_h = f0 * static_cast<double>(h + 1);
      if (f_h >= 0.475 * fs) {  // drop partials near Nyquist
        continue;
      }
      const double dphi = 2.0 * M_PI * f_h / fs;
      const double cr = std::cos(dphi), ci = std::sin(dphi);
      double r = zr[static_cast<size_t>(h)], im = zi[static_cast<size_t>(h)];
      const double a = amp[static_cast<size_t>(h)];
      for (std::int64_t i = start; i < stop; ++i) {
        const double nr = r * cr - im * ci;
        im = r * ci + im * cr;
        r = nr;
        w.samples[static_cast<size_t>(i)] += a * im;
      }
      // renormalize against rotation drift
      const double norm = 1.0 / std::sqrt(r * r + im * im);
      zr[static_cast<size_t>(h)] = r * norm;
      zi[static_cast<size_t>(h)] = im * norm;
    }
  }

  // amplitude modulation, attack/release envelope, low noise floor
  const double attack = 0.04 * fs, release = 0.08 * fs;
  for (std::int64_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    double env = 1.0 - 0.5 * am_depth * (1.0 + std::sin(2.0 * M_PI * am_rate * t + am_phase));
    env = 1.0 - am_depth + (env - (1.0 - am_depth));  // keep within [1-depth, 1]
    if (i < attack) env *= static_cast<double>(i) / attack;
    const double tail = static_cast<double>(n - 1 - i);
    if (tail < release) env *= tail / release;
    w.samples[static_cast<size_t>(i)] =
        0.45 * env * w.samples[static_cast<size_t>(i)] + 0.0015 * rng.normal();
  }
  return w;
}

}  // namespace vqmae
