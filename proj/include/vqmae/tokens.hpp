#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vqmae/ops.hpp"
#include "vqmae/rng.hpp"
#include "vqmae/tensor.hpp"
#include "vqmae/vqvae.hpp"

namespace vqmae {

enum class MaskStrategy { PatchTF, PatchT, PatchF, Frame };

inline const char* mask_strategy_name(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::PatchTF: return "patch-tf";
    case MaskStrategy::PatchT: return "patch-t";
    case MaskStrategy::PatchF: return "patch-f";
    case MaskStrategy::Frame: return "frame";
  }
  return "?";
}

inline MaskStrategy parse_mask_strategy(const std::string& s) {
  if (s == "patch-tf") return MaskStrategy::PatchTF;
  if (s == "patch-t") return MaskStrategy::PatchT;
  if (s == "patch-f") return MaskStrategy::PatchF;
  if (s == "frame") return MaskStrategy::Frame;
  throw TensorError("unknown masking strategy '" + s +
                    "' (expected patch-tf, patch-t, patch-f, or frame)");
}

// Non-overlapping (t x d) patch grid over a (frames x positions) index grid.
// Trailing frames that do not fill a whole patch row are cropped; d must
// divide the latent position count.
struct TokenGeometry {
  std::int64_t t = 10;         // frames per token
  std::int64_t d = 4;          // latent positions per token
  std::int64_t n_t = 0;        // token rows (time)
  std::int64_t n_d = 0;        // token columns (frequency)
  std::int64_t positions = 0;  // latent positions per frame (D')

  std::int64_t num_tokens() const { return n_t * n_d; }
  std::int64_t token_width() const { return t * d; }
  std::int64_t frames_used() const { return n_t * t; }

  static TokenGeometry make(std::int64_t frames, std::int64_t positions, std::int64_t t,
                            std::int64_t d) {
    if (t <= 0 || d <= 0)
      throw TensorError("token geometry: t and d must be positive, got t=" + std::to_string(t) +
                        " d=" + std::to_string(d));
    if (frames < t)
      throw TensorError("token geometry: " + std::to_string(frames) +
                        " frames cannot fill one patch of t=" + std::to_string(t));
    if (positions % d != 0)
      throw TensorError("token geometry: d=" + std::to_string(d) + " does not divide " +
                        std::to_string(positions) + " latent positions");
    TokenGeometry g;
    g.t = t;
    g.d = d;
    g.n_t = frames / t;  // crop trailing frames
    g.n_d = positions / d;
    g.positions = positions;
    return g;
  }
};

// patch contents as flat codebook indices, one row per token
struct DiscreteTokens {
  TokenGeometry geom;
  std::vector<std::int64_t> tokens;  // [num_tokens, t*d] row-major

  std::int64_t at(std::int64_t token, std::int64_t slot) const {
    return tokens[static_cast<size_t>(token * geom.token_width() + slot)];
  }
};

// Token (i, j) covers frames [i*t, (i+1)*t) x positions [j*d, (j+1)*d),
// flattened time-major within the token; token order is row-major over the
// (n_t x n_d) grid.
inline DiscreteTokens patchify(const QuantizedGrid& grid, std::int64_t t, std::int64_t d) {
  TokenGeometry g = TokenGeometry::make(grid.num_frames, grid.positions, t, d);
  DiscreteTokens out;
  out.geom = g;
  out.tokens.resize(static_cast<size_t>(g.num_tokens() * g.token_width()));
  std::int64_t w = g.token_width();
  for (std::int64_t i = 0; i < g.n_t; ++i)
    for (std::int64_t j = 0; j < g.n_d; ++j) {
      std::int64_t* tok = out.tokens.data() + (i * g.n_d + j) * w;
      for (std::int64_t fr = 0; fr < t; ++fr)
        for (std::int64_t p = 0; p < d; ++p)
          tok[fr * d + p] = grid.at(i * t + fr, j * d + p);
    }
  return out;
}

inline QuantizedGrid unpatchify(const DiscreteTokens& toks) {
  const TokenGeometry& g = toks.geom;
  QuantizedGrid grid;
  grid.num_frames = g.frames_used();
  grid.positions = g.positions;
  grid.indices.assign(static_cast<size_t>(grid.num_frames * grid.positions), 0);
  const std::int64_t w = g.token_width();
  for (std::int64_t i = 0; i < g.n_t; ++i)
    for (std::int64_t j = 0; j < g.n_d; ++j) {
      const std::int64_t* tok = toks.tokens.data() + (i * g.n_d + j) * w;
      for (std::int64_t fr = 0; fr < g.t; ++fr)
        for (std::int64_t p = 0; p < g.d; ++p)
          grid.indices[static_cast<size_t>((i * g.t + fr) * g.positions + j * g.d + p)] =
              tok[fr * g.d + p];
    }
  return grid;
}

// half-away-from-zero rounding for mask unit counts
inline std::int64_t mask_round(double x) { return std::llround(x); }

struct MaskPlan {
  MaskStrategy strategy = MaskStrategy::PatchTF;
  double ratio = 0.8;
  std::uint64_t seed = 0;
  std::int64_t num_tokens = 0;
  std::vector<std::int64_t> masked;  // sorted ascending
  std::vector<char> is_masked;       // size num_tokens

  std::vector<std::int64_t> visible() const {
    std::vector<std::int64_t> v;
    v.reserve(static_cast<size_t>(num_tokens) - masked.size());
    for (std::int64_t i = 0; i < num_tokens; ++i)
      if (!is_masked[static_cast<size_t>(i)]) v.push_back(i);
    return v;
  }
};

namespace detail {

// uniform sample of m distinct values from [0, n) by partial Fisher-Yates
inline std::vector<std::int64_t> sample_without_replacement(std::int64_t n, std::int64_t m,
                                                            Rng& rng) {
  std::vector<std::int64_t> pool(static_cast<size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
  for (std::int64_t i = 0; i < m; ++i) {
    const std::int64_t j =
        i + static_cast<std::int64_t>(rng.bounded(static_cast<std::uint64_t>(n - i)));
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
  }
  pool.resize(static_cast<size_t>(m));
  return pool;
}

}  // namespace detail

// Masked-token set for one training step. Counts are exact:
//   patch-tf: round(r * n_t * n_d) tokens, uniform over the grid
//   patch-t:  round(r * n_t) time columns, every token in each
//   patch-f:  round(r * n_d) frequency rows, every token in each
//   frame:    round(r * n_t) whole frames; requires one-frame tokens
//             (t=1, d=positions)
inline MaskPlan make_mask(const TokenGeometry& g, MaskStrategy strategy, double ratio,
                          std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio < 1.0))
    throw TensorError("mask ratio must lie in [0,1), got " + std::to_string(ratio));
  MaskPlan plan;
  plan.strategy = strategy;
  plan.ratio = ratio;
  plan.seed = seed;
  plan.num_tokens = g.num_tokens();
  plan.is_masked.assign(static_cast<size_t>(plan.num_tokens), 0);
  Rng rng(seed);

  switch (strategy) {
    case MaskStrategy::PatchTF: {
      const std::int64_t m = mask_round(ratio * static_cast<double>(g.num_tokens()));
      plan.masked = detail::sample_without_replacement(g.num_tokens(), m, rng);
      break;
    }
    case MaskStrategy::PatchT: {
      const std::int64_t m = mask_round(ratio * static_cast<double>(g.n_t));
      for (auto col : detail::sample_without_replacement(g.n_t, m, rng))
        for (std::int64_t j = 0; j < g.n_d; ++j) plan.masked.push_back(col * g.n_d + j);
      break;
    }
    case MaskStrategy::PatchF: {
      const std::int64_t m = mask_round(ratio * static_cast<double>(g.n_d));
      for (auto row : detail::sample_without_replacement(g.n_d, m, rng))
        for (std::int64_t i = 0; i < g.n_t; ++i) plan.masked.push_back(i * g.n_d + row);
      break;
    }
    case MaskStrategy::Frame: {
      if (g.t != 1 || g.d != g.positions)
        throw TensorError(
            "frame masking masks whole discrete frames, which requires one token per frame: "
            "set token geometry to t=1, d=" +
            std::to_string(g.positions) + " (got t=" + std::to_string(g.t) +
            ", d=" + std::to_string(g.d) + ")");
      const std::int64_t m = mask_round(ratio * static_cast<double>(g.n_t));
      plan.masked = detail::sample_without_replacement(g.n_t, m, rng);
      break;
    }
  }
  std::sort(plan.masked.begin(), plan.masked.end());
  for (auto i : plan.masked) plan.is_masked[static_cast<size_t>(i)] = 1;
  return plan;
}

// closed-form |masked| for a strategy/ratio/geometry, for census checks
inline std::int64_t expected_mask_count(const TokenGeometry& g, MaskStrategy strategy,
                                        double ratio) {
  switch (strategy) {
    case MaskStrategy::PatchTF: return mask_round(ratio * static_cast<double>(g.num_tokens()));
    case MaskStrategy::PatchT: return mask_round(ratio * static_cast<double>(g.n_t)) * g.n_d;
    case MaskStrategy::PatchF: return mask_round(ratio * static_cast<double>(g.n_d)) * g.n_t;
    case MaskStrategy::Frame: return mask_round(ratio * static_cast<double>(g.n_t));
  }
  return 0;
}

// Trainable embedding table for discrete tokens, initialized from the frozen
// quantizer codebook so that an index embeds to exactly its code vector.
struct EmbeddingTable {
  Tensor codes;  // [k, e]
  bool trainable = true;

  static EmbeddingTable from_codebook(const Tensor& codebook, bool trainable) {
    EmbeddingTable t;
    t.codes = codebook.detach();
    t.codes.set_requires_grad(trainable);
    t.trainable = trainable;
    return t;
  }

  std::int64_t code_dim() const { return codes.dim(1); }
  std::int64_t size() const { return codes.dim(0); }
};

// tokens [N, t*d] of indices -> continuous tokens [N, t*d*e]; slot order in
// the embedded row matches the flatten order of the discrete token
inline Tensor embed_tokens(const DiscreteTokens& toks, const EmbeddingTable& table) {
  const std::int64_t n = toks.geom.num_tokens();
  const std::int64_t w = toks.geom.token_width();
  Tensor flat = embedding(table.codes, toks.tokens);  // [n*w, e]
  return reshape(flat, {n, w * table.code_dim()});
}

}  // namespace vqmae
