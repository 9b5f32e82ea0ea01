#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "vqmae/grad_check.hpp"
#include "vqmae/vqvae.hpp"

using namespace vqmae;

namespace {

PowerSpectrogram random_spec(std::int64_t frames, Rng& rng, double peak = 100.0) {
  PowerSpectrogram s;
  s.num_frames = frames;
  s.num_bins = 513;
  s.power.resize(static_cast<size_t>(frames * 513));
  for (auto& p : s.power) p = peak * rng.uniform();
  return s;
}

// independent exhaustive nearest-neighbor scan, the quantizer oracle
std::int64_t brute_force_nearest(const double* v, const Tensor& cb) {
  std::int64_t best = -1;
  double best_d = 1e300;
  for (std::int64_t j = 0; j < cb.dim(0); ++j) {
    double d = 0.0;
    for (std::int64_t i = 0; i < cb.dim(1); ++i) {
      double diff = v[i] - cb.at(j, i);
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("encode: (7,513) spectrogram gives a (7,64) grid of valid indices") {
  Rng rng(5);
  VqVae model(VqVaeConfig{}, rng);
  PowerSpectrogram spec = random_spec(7, rng);
  Tensor z = model.encode_frame(model.prepare_frame(spec.frame(0)));
  REQUIRE(z.shape() == Shape{64, 8});
  REQUIRE(all_finite(z.values()));
  QuantizedGrid grid = model.encode_grid(spec);
  REQUIRE(grid.num_frames == 7);
  REQUIRE(grid.positions == 64);
  for (auto i : grid.indices) {
    REQUIRE(i >= 0);
    REQUIRE(i < 256);
  }
}

TEST_CASE("frame independence: identical frames give identical rows, permutations permute") {
  Rng rng(6);
  VqVae model(VqVaeConfig{}, rng);
  PowerSpectrogram spec = random_spec(4, rng);
  // frame 2 := frame 0
  std::copy(spec.power.begin(), spec.power.begin() + 513, spec.power.begin() + 2 * 513);
  QuantizedGrid grid = model.encode_grid(spec);
  for (int p = 0; p < 64; ++p) REQUIRE(grid.at(0, p) == grid.at(2, p));

  PowerSpectrogram permuted = spec;
  // swap frames 1 and 3
  for (int b = 0; b < 513; ++b)
    std::swap(permuted.power[1 * 513 + b], permuted.power[3 * 513 + b]);
  QuantizedGrid g2 = model.encode_grid(permuted);
  for (int p = 0; p < 64; ++p) {
    REQUIRE(g2.at(1, p) == grid.at(3, p));
    REQUIRE(g2.at(3, p) == grid.at(1, p));
  }
}

TEST_CASE("decode shape roundtrip and frame independence of decode") {
  Rng rng(7);
  VqVae model(VqVaeConfig{}, rng);
  PowerSpectrogram spec = random_spec(3, rng);
  QuantizedGrid grid = model.encode_grid(spec);
  PowerSpectrogram rec = model.decode_grid(grid);
  REQUIRE(rec.num_frames == 3);
  REQUIRE(rec.num_bins == 513);
  for (double p : rec.power) REQUIRE(p >= 0.0);

  QuantizedGrid row;
  row.num_frames = 1;
  row.positions = 64;
  row.indices.assign(grid.indices.begin() + 64, grid.indices.begin() + 128);
  PowerSpectrogram rec_row = model.decode_grid(row);
  for (int b = 0; b < 513; ++b) REQUIRE(rec_row.power[b] == rec.power[513 + b]);
}

TEST_CASE("decode rejects wrong latent shape") {
  Rng rng(8);
  VqVae model(VqVaeConfig{}, rng);
  REQUIRE_THROWS_AS(model.decode_frame(Tensor::zeros({32, 8})), TensorError);
  PowerSpectrogram bad;
  bad.num_frames = 1;
  bad.num_bins = 257;
  bad.power.assign(257, 0.0);
  REQUIRE_THROWS_AS(model.encode_grid(bad), TensorError);
}

TEST_CASE("quantize: nearest neighbor with lowest-index ties") {
  Tensor cb = Tensor::from({2, 2}, {0, 0, 1, 1});
  double v[2] = {0.1, 0.2};
  REQUIRE(nearest_code(v, cb) == 0);
  double w[2] = {0.9, 0.8};
  REQUIRE(nearest_code(w, cb) == 1);
  // exact tie: equidistant from both codes
  double t[2] = {0.5, 0.5};
  REQUIRE(nearest_code(t, cb) == 0);
}

TEST_CASE("quantize idempotence: every code maps to its own index") {
  Rng rng(9);
  Tensor cb = Tensor::randn({256, 8}, rng);
  for (std::int64_t j = 0; j < 256; ++j) REQUIRE(nearest_code(cb.data() + j * 8, cb) == j);
}

TEST_CASE("quantize matches exhaustive scan on random vectors") {
  Rng rng(10);
  Tensor cb = Tensor::randn({256, 8}, rng);
  VqVae model;
  model.cfg.codebook_size = 256;
  model.cfg.code_dim = 8;
  model.codebook = cb;
  model.usage_counts.assign(256, 0);
  Tensor z = Tensor::randn({500, 8}, rng);
  auto idx = model.quantize_rows(z);
  for (std::int64_t i = 0; i < 500; ++i)
    REQUIRE(idx[static_cast<size_t>(i)] == brute_force_nearest(z.data() + i * 8, cb));
}

TEST_CASE("straight-through: encoder gradient equals quantized-side gradient exactly") {
  Rng rng(11);
  Tensor z_e = Tensor::randn({6, 4}, rng, 1.0, true);
  Tensor z_q = Tensor::randn({6, 4}, rng);
  Tensor r = Tensor::randn({6, 4}, rng);
  Tape tape;
  tape.backward(sum_all(mul(straight_through(z_e, z_q), r)));
  for (int i = 0; i < 24; ++i) REQUIRE(z_e.grad()[i] == r.values()[i]);
}

TEST_CASE("vq objective: zero when reconstruction is exact and latents sit on codes") {
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor z = Tensor::from({2, 2}, {0.5, 0.5, -0.5, -0.5});
  Tensor loss = vq_objective(x, x, z, z, 0.25);
  REQUIRE(loss.item() == 0.0);
}

TEST_CASE("vq objective: beta=0 drops the commitment term") {
  Tensor x = Tensor::from({1, 2}, {1, 2});
  Tensor xr = Tensor::from({1, 2}, {1.5, 2.5});
  Tensor ze = Tensor::from({1, 2}, {0.2, 0.0});
  Tensor zq = Tensor::from({1, 2}, {0.0, 0.0});
  double recon = 0.25;     // mean((0.5)^2, (0.5)^2)
  double codebook = 0.02;  // mean(0.2^2, 0)
  REQUIRE(vq_objective(xr, x, ze, zq, 0.0).item() == Catch::Approx(recon + codebook));
}

TEST_CASE("vq objective: hand-computed scalar case") {
  // one frame, two positions, k=2, e=1
  Tensor target = Tensor::from({1, 2}, {2.0, -1.0});
  Tensor recon = Tensor::from({1, 2}, {1.0, 0.0});
  Tensor z_e = Tensor::from({2, 1}, {0.3, 0.9});
  Tensor z_q = Tensor::from({2, 1}, {0.0, 1.0});
  const double beta = 0.25;
  // recon mse: ((2-1)^2 + (-1-0)^2)/2 = 1
  // codebook: ((0.3)^2 + (0.1)^2)/2 = 0.05
  // commit:   beta * 0.05 = 0.0125
  REQUIRE(vq_objective(recon, target, z_e, z_q, beta).item() == Catch::Approx(1.0625));
}

TEST_CASE("frame loss backward: straight-through and codebook gradients flow") {
  Rng rng(12);
  VqVae model(VqVaeConfig{}, rng);
  PowerSpectrogram spec = random_spec(1, rng);
  Tape tape;
  Tensor loss = model.frame_loss(spec.frame(0));
  REQUIRE(loss.item() > 0.0);
  tape.backward(loss);
  // encoder weights and the codebook both receive nonzero gradients
  double enc_norm = 0.0, cb_norm = 0.0;
  for (double g : model.enc1_w.grad()) enc_norm += g * g;
  for (double g : model.codebook.grad()) cb_norm += g * g;
  REQUIRE(enc_norm > 0.0);
  REQUIRE(cb_norm > 0.0);
}

// Gradient check through the straight-through path: the quantizer assignment
// and the stop-gradient values are frozen at the base point, so the surrogate
// is the exact function whose true gradient the training rule computes.
TEST_CASE("vqvae stack passes finite-difference check on the straight-through surrogate") {
  Rng rng(13);
  VqVae model(VqVaeConfig{}, rng);
  PowerSpectrogram spec = random_spec(1, rng);
  Tensor padded = model.prepare_frame(spec.frame(0));
  Tensor target = cols(padded, model.cfg.pad_left(), model.cfg.pad_left() + 513).detach();

  // Freeze the quantizer assignment and every stop-gradient value at the base
  // point. The straight-through rule treats the decoder input as
  // z_e + (z_q - z_e)|base, so the surrogate uses that constant offset; its
  // true gradient is exactly the gradient the training step computes.
  Tensor z_e0 = model.encode_frame(padded);
  auto idx0 = model.quantize_rows(z_e0);
  Tensor z_e0_const = z_e0.detach();
  Tensor z_q0_const = embedding(model.codebook, idx0).detach();
  Tensor offset0 = sub(z_q0_const, z_e0_const).detach();

  auto f = [&]() {
    Tensor z_e = model.encode_frame(padded);
    Tensor st = add(z_e, offset0);
    Tensor recon = model.decode_frame(st);
    Tensor loss = mse(recon, target);
    loss = add(loss, mse(z_e0_const, embedding(model.codebook, idx0)));
    loss = add(loss, scale(mse(z_e, z_q0_const), model.cfg.beta));
    return loss;
  };
  ParamMap pm;
  model.register_params(pm);
  auto report = grad_check(f, pm.items, 1e-5, 6, 99);
  INFO("max rel err " << report.max_rel_err);
  REQUIRE(report.pass(1e-3));
}

TEST_CASE("dead code reseeding and usage entropy") {
  Rng rng(14);
  VqVaeConfig cfg;
  cfg.codebook_size = 8;
  cfg.code_dim = 4;
  VqVae model(cfg, rng);
  Tensor sample = Tensor::randn({5, 4}, rng);
  // mark codes 0 and 3 as used
  model.usage_counts[0] = 10;
  model.usage_counts[3] = 2;
  Tensor before = model.codebook.detach();
  std::int64_t n = model.reseed_dead_codes(sample, rng);
  REQUIRE(n == 6);
  for (int i = 0; i < 4; ++i) {
    REQUIRE(model.codebook.at(0, i) == before.at(0, i));
    REQUIRE(model.codebook.at(3, i) == before.at(3, i));
  }
  REQUIRE(model.usage_entropy() == 0.0);  // counters reset
  model.usage_counts[1] = 1;
  model.usage_counts[2] = 1;
  REQUIRE(model.usage_entropy() == Catch::Approx(std::log(2.0)));
}
