#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vqmae/nn.hpp"
#include "vqmae/ops.hpp"
#include "vqmae/rng.hpp"
#include "vqmae/stft.hpp"
#include "vqmae/tensor.hpp"

namespace vqmae {

// integer codebook indices on the (frames x latent positions) grid
struct QuantizedGrid {
  std::int64_t num_frames = 0;
  std::int64_t positions = 0;
  std::vector<std::int64_t> indices;  // row-major [num_frames, positions]

  std::int64_t at(std::int64_t t, std::int64_t p) const {
    return indices[static_cast<size_t>(t * positions + p)];
  }
};

// reconstruction + codebook + beta * commitment, with gradient stops matching
// the quantizer training rule: the codebook term moves codes toward stopped
// encoder outputs, the commitment term moves encoder outputs toward stopped
// codes
inline Tensor vq_objective(const Tensor& recon, const Tensor& target, const Tensor& z_e,
                           const Tensor& z_q, double beta) {
  Tensor loss = mse(recon, target);
  loss = add(loss, mse(z_e.detach(), z_q));
  return add(loss, scale(mse(z_e, z_q.detach()), beta));
}

// nearest code by squared Euclidean distance; ties resolve to the lowest index
inline std::int64_t nearest_code(const double* v, const Tensor& codebook) {
  const std::int64_t k = codebook.dim(0), e = codebook.dim(1);
  std::int64_t best = 0;
  double best_d = 0.0;
  for (std::int64_t j = 0; j < k; ++j) {
    const double* c = codebook.data() + j * e;
    double d = 0.0;
    for (std::int64_t i = 0; i < e; ++i) {
      const double diff = v[i] - c[i];
      d += diff * diff;
    }
    if (j == 0 || d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

struct VqVaeConfig {
  std::int64_t input_bins = 513;      // spectrogram bins per frame
  std::int64_t latent_positions = 64; // positions per frame after compression
  std::int64_t codebook_size = 256;
  std::int64_t code_dim = 8;
  double beta = 0.25;  // commitment weight

  // three stride-2 kernel-4 valid convolutions need 8*positions + 14 inputs
  std::int64_t padded_bins() const { return 8 * latent_positions + 14; }
  std::int64_t pad_left() const { return (padded_bins() - input_bins) / 2; }
  std::int64_t pad_right() const { return padded_bins() - input_bins - pad_left(); }

  void validate() const {
    if (padded_bins() < input_bins)
      throw TensorError("vqvae: latent_positions " + std::to_string(latent_positions) +
                        " too small for " + std::to_string(input_bins) + " input bins");
    if (codebook_size < 2 || code_dim < 1) throw TensorError("vqvae: bad codebook config");
  }
};

// Frame-wise VQ-VAE, fully convolutional along the frequency axis. Every frame
// is processed independently; compression is input_bins -> latent_positions
// with code_dim channels. The model operates in the log1p(power) domain.
class VqVae {
 public:
  VqVaeConfig cfg;

  // encoder
  Tensor enc1_w, enc1_b, enc2_w, enc2_b, enc3_w, enc3_b;
  Tensor enc_res1_w, enc_res1_b, enc_res2_w, enc_res2_b;
  // decoder
  Tensor dec_res1_w, dec_res1_b, dec_res2_w, dec_res2_b;
  Tensor dec1_w, dec1_b, dec2_w, dec2_b, dec3_w, dec3_b;
  Tensor codebook;  // [k, e]
  std::vector<std::int64_t> usage_counts;

  VqVae() = default;

  VqVae(VqVaeConfig config, Rng& rng) : cfg(config) {
    cfg.validate();
    const std::int64_t e = cfg.code_dim;
    auto conv_init = [&rng](std::int64_t cout, std::int64_t cin, std::int64_t k) {
      Tensor w = Tensor::zeros({cout, cin, k}, true);
      const double s = 1.0 / std::sqrt(static_cast<double>(cin * k));
      for (auto& v : w.values()) v = rng.normal(0.0, s);
      return w;
    };
    enc1_w = conv_init(32, 1, 4);
    enc1_b = Tensor::zeros({32}, true);
    enc2_w = conv_init(64, 32, 4);
    enc2_b = Tensor::zeros({64}, true);
    enc3_w = conv_init(e, 64, 4);
    enc3_b = Tensor::zeros({e}, true);
    enc_res1_w = conv_init(32, e, 3);
    enc_res1_b = Tensor::zeros({32}, true);
    enc_res2_w = conv_init(e, 32, 3);
    enc_res2_b = Tensor::zeros({e}, true);

    dec_res1_w = conv_init(32, e, 3);
    dec_res1_b = Tensor::zeros({32}, true);
    dec_res2_w = conv_init(e, 32, 3);
    dec_res2_b = Tensor::zeros({e}, true);
    // transposed conv weights are [cin, cout, k]
    auto convt_init = [&rng](std::int64_t cin, std::int64_t cout, std::int64_t k) {
      Tensor w = Tensor::zeros({cin, cout, k}, true);
      const double s = 1.0 / std::sqrt(static_cast<double>(cin * k));
      for (auto& v : w.values()) v = rng.normal(0.0, s);
      return w;
    };
    dec1_w = convt_init(e, 64, 4);
    dec1_b = Tensor::zeros({64}, true);
    dec2_w = convt_init(64, 32, 4);
    dec2_b = Tensor::zeros({32}, true);
    dec3_w = convt_init(32, 1, 4);
    dec3_b = Tensor::zeros({1}, true);

    codebook = Tensor::randn({cfg.codebook_size, e}, rng, 1.0, true);
    usage_counts.assign(static_cast<size_t>(cfg.codebook_size), 0);
  }

  void register_params(ParamMap& pm) const {
    pm.add("vqvae.enc1.w", enc1_w);
    pm.add("vqvae.enc1.b", enc1_b);
    pm.add("vqvae.enc2.w", enc2_w);
    pm.add("vqvae.enc2.b", enc2_b);
    pm.add("vqvae.enc3.w", enc3_w);
    pm.add("vqvae.enc3.b", enc3_b);
    pm.add("vqvae.enc_res1.w", enc_res1_w);
    pm.add("vqvae.enc_res1.b", enc_res1_b);
    pm.add("vqvae.enc_res2.w", enc_res2_w);
    pm.add("vqvae.enc_res2.b", enc_res2_b);
    pm.add("vqvae.dec_res1.w", dec_res1_w);
    pm.add("vqvae.dec_res1.b", dec_res1_b);
    pm.add("vqvae.dec_res2.w", dec_res2_w);
    pm.add("vqvae.dec_res2.b", dec_res2_b);
    pm.add("vqvae.dec1.w", dec1_w);
    pm.add("vqvae.dec1.b", dec1_b);
    pm.add("vqvae.dec2.w", dec2_w);
    pm.add("vqvae.dec2.b", dec2_b);
    pm.add("vqvae.dec3.w", dec3_w);
    pm.add("vqvae.dec3.b", dec3_b);
    pm.add("vqvae.codebook", codebook);
  }

  // log1p-compressed, reflect-padded frame as a [1, padded_bins] tensor
  Tensor prepare_frame(const double* frame) const {
    const std::int64_t pl = cfg.pad_left(), pr = cfg.pad_right(), d = cfg.input_bins;
    std::vector<double> padded(static_cast<size_t>(cfg.padded_bins()));
    for (std::int64_t i = 0; i < pl; ++i) padded[static_cast<size_t>(i)] = std::log1p(frame[pl - i]);
    for (std::int64_t i = 0; i < d; ++i)
      padded[static_cast<size_t>(pl + i)] = std::log1p(frame[i]);
    for (std::int64_t j = 0; j < pr; ++j)
      padded[static_cast<size_t>(pl + d + j)] = std::log1p(frame[d - 2 - j]);
    return Tensor::from({1, cfg.padded_bins()}, std::move(padded));
  }

  // one frame -> latent field [latent_positions, code_dim]
  Tensor encode_frame(const Tensor& padded_frame) const {
    if (padded_frame.ndim() != 2 || padded_frame.dim(0) != 1 ||
        padded_frame.dim(1) != cfg.padded_bins())
      throw TensorError("vqvae encode: expected [1," + std::to_string(cfg.padded_bins()) +
                        "] frame, got " + shape_str(padded_frame.shape()));
    Tensor h = gelu(conv1d(padded_frame, enc1_w, enc1_b, 2, 0));
    h = gelu(conv1d(h, enc2_w, enc2_b, 2, 0));
    h = conv1d(h, enc3_w, enc3_b, 2, 0);
    Tensor r = conv1d(gelu(conv1d(h, enc_res1_w, enc_res1_b, 1, 1)), enc_res2_w, enc_res2_b, 1, 1);
    return transpose(add(h, r));
  }

  // latent rows -> codebook indices (optionally updating usage counters)
  std::vector<std::int64_t> quantize_rows(const Tensor& z_e, bool count_usage = false) {
    const std::int64_t n = z_e.dim(0);
    if (z_e.ndim() != 2 || z_e.dim(1) != cfg.code_dim)
      throw TensorError("vqvae quantize: latent width " + shape_str(z_e.shape()) +
                        " does not match code dim " + std::to_string(cfg.code_dim));
    check_finite("quantize", z_e);
    std::vector<std::int64_t> idx(static_cast<size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      idx[static_cast<size_t>(i)] = nearest_code(z_e.data() + i * cfg.code_dim, codebook);
      if (count_usage) ++usage_counts[static_cast<size_t>(idx[static_cast<size_t>(i)])];
    }
    return idx;
  }

  // quantized latent rows -> log-domain frame [1, input_bins]
  Tensor decode_frame(const Tensor& z_q) const {
    if (z_q.ndim() != 2 || z_q.dim(0) != cfg.latent_positions || z_q.dim(1) != cfg.code_dim)
      throw TensorError("vqvae decode: expected [" + std::to_string(cfg.latent_positions) + "," +
                        std::to_string(cfg.code_dim) + "], got " + shape_str(z_q.shape()));
    Tensor h = transpose(z_q);
    Tensor r = conv1d(gelu(conv1d(h, dec_res1_w, dec_res1_b, 1, 1)), dec_res2_w, dec_res2_b, 1, 1);
    h = add(h, r);
    h = gelu(conv_transpose1d(h, dec1_w, dec1_b, 2, 0));
    h = gelu(conv_transpose1d(h, dec2_w, dec2_b, 2, 0));
    h = conv_transpose1d(h, dec3_w, dec3_b, 2, 0);
    return cols(h, cfg.pad_left(), cfg.pad_left() + cfg.input_bins);
  }

  // Training loss for one frame: reconstruction in the log domain, codebook
  // term on stopped encoder outputs, and the beta-weighted commitment term.
  // The decoder input takes quantized values forward and passes its gradient
  // straight through to the encoder output.
  Tensor frame_loss(const double* frame, bool count_usage = true) {
    Tensor padded = prepare_frame(frame);
    Tensor target = cols(padded, cfg.pad_left(), cfg.pad_left() + cfg.input_bins).detach();
    Tensor z_e = encode_frame(padded);
    auto idx = quantize_rows(z_e, count_usage);
    Tensor z_q = embedding(codebook, idx);
    Tensor st = straight_through(z_e, z_q);
    Tensor recon = decode_frame(st);
    return vq_objective(recon, target, z_e, z_q, cfg.beta);
  }

  // frozen-path encode of a whole spectrogram to the index grid
  QuantizedGrid encode_grid(const PowerSpectrogram& spec) {
    if (spec.num_bins != cfg.input_bins)
      throw TensorError("vqvae: spectrogram has " + std::to_string(spec.num_bins) +
                        " bins, model expects " + std::to_string(cfg.input_bins));
    QuantizedGrid grid;
    grid.num_frames = spec.num_frames;
    grid.positions = cfg.latent_positions;
    grid.indices.reserve(static_cast<size_t>(spec.num_frames * cfg.latent_positions));
    for (std::int64_t t = 0; t < spec.num_frames; ++t) {
      Tensor z_e = encode_frame(prepare_frame(spec.frame(t)));
      auto idx = quantize_rows(z_e);
      grid.indices.insert(grid.indices.end(), idx.begin(), idx.end());
    }
    return grid;
  }

  // index grid -> power-domain spectrogram (expm1 of the log-domain decode,
  // clamped to keep power nonnegative)
  PowerSpectrogram decode_grid(const QuantizedGrid& grid) {
    PowerSpectrogram out;
    out.num_frames = grid.num_frames;
    out.num_bins = cfg.input_bins;
    out.power.resize(static_cast<size_t>(grid.num_frames * cfg.input_bins));
    for (std::int64_t t = 0; t < grid.num_frames; ++t) {
      std::vector<std::int64_t> idx(grid.indices.begin() + t * grid.positions,
                                    grid.indices.begin() + (t + 1) * grid.positions);
      Tensor z_q = embedding(codebook, idx);
      Tensor rec = decode_frame(z_q);
      for (std::int64_t b = 0; b < cfg.input_bins; ++b) {
        const double y = std::min(rec.values()[static_cast<size_t>(b)], 64.0);
        out.power[static_cast<size_t>(t * cfg.input_bins + b)] = std::max(std::expm1(y), 0.0);
      }
    }
    return out;
  }

  // Re-seed codes unused since the last reset to random rows of the given
  // encoder-output sample, then clear the counters. Returns how many codes
  // were re-seeded.
  std::int64_t reseed_dead_codes(const Tensor& z_e_sample, Rng& rng) {
    const std::int64_t e = cfg.code_dim;
    if (z_e_sample.ndim() != 2 || z_e_sample.dim(1) != e || z_e_sample.dim(0) == 0)
      throw TensorError("reseed: need a nonempty [n, code_dim] sample");
    std::int64_t reseeded = 0;
    for (std::int64_t j = 0; j < cfg.codebook_size; ++j) {
      if (usage_counts[static_cast<size_t>(j)] == 0) {
        const std::int64_t r =
            static_cast<std::int64_t>(rng.bounded(static_cast<std::uint64_t>(z_e_sample.dim(0))));
        for (std::int64_t i = 0; i < e; ++i)
          codebook.values()[static_cast<size_t>(j * e + i)] =
              z_e_sample.values()[static_cast<size_t>(r * e + i)];
        ++reseeded;
      }
    }
    reset_usage();
    return reseeded;
  }

  void reset_usage() { usage_counts.assign(static_cast<size_t>(cfg.codebook_size), 0); }

  // entropy (nats) of the usage distribution since the last reset
  double usage_entropy() const {
    std::int64_t total = 0;
    for (auto c : usage_counts) total += c;
    if (total == 0) return 0.0;
    double h = 0.0;
    for (auto c : usage_counts) {
      if (c > 0) {
        const double p = static_cast<double>(c) / static_cast<double>(total);
        h -= p * std::log(p);
      }
    }
    return h;
  }
};

}  // namespace vqmae
