#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vqmae/nn.hpp"
#include "vqmae/ops.hpp"

namespace vqmae {

// argmax with lowest-index tie-break
inline std::int64_t argmax_index(const std::vector<double>& v) {
  std::int64_t best = 0;
  for (std::int64_t i = 1; i < static_cast<std::int64_t>(v.size()); ++i)
    if (v[static_cast<size_t>(i)] > v[static_cast<size_t>(best)]) best = i;
  return best;
}

// linear classifier on the CLS latent (row 0 of the encoder output)
struct ClsLinearHead {
  Linear lin;
  std::int64_t classes = 0;

  ClsLinearHead() = default;
  ClsLinearHead(std::int64_t width, std::int64_t n_classes, Rng& rng)
      : lin(width, n_classes, rng), classes(n_classes) {}

  Tensor operator()(const Tensor& encoder_out) const {
    return reshape(lin(take_rows(encoder_out, {0})), {classes});
  }

  void register_params(ParamMap& pm, const std::string& prefix) const {
    lin.register_params(pm, prefix + ".lin");
  }
};

// Class-query head: trainable per-class embeddings attend over the token
// sequence (one self-attention block on the sequence, one cross-attention
// block with the class queries), then a per-class scalar projection. The head
// adds no positional terms, so its logits are invariant to token order.
struct Query2EmoHead {
  Tensor class_queries;  // [classes, width]
  AttentionBlock self_block;
  AttentionBlock cross_block;
  Tensor proj_w;  // [classes, width]
  Tensor proj_b;  // [classes]
  std::int64_t classes = 0;

  Query2EmoHead() = default;
  Query2EmoHead(std::int64_t width, std::int64_t n_classes, int heads, Rng& rng)
      : class_queries(trunc_normal({n_classes, width}, rng)),
        self_block(width, heads, rng),
        cross_block(width, heads, rng),
        proj_w(trunc_normal({n_classes, width}, rng)),
        proj_b(Tensor::zeros({n_classes}, true)),
        classes(n_classes) {}

  Tensor operator()(const Tensor& token_latents) const {
    if (token_latents.dim(0) < 1) throw TensorError("query2emo: empty token sequence");
    Tensor kv = self_block(token_latents);
    Tensor q = cross_block.cross(class_queries, kv);
    return add(row_dot(proj_w, q), proj_b);
  }

  void register_params(ParamMap& pm, const std::string& prefix) const {
    pm.add(prefix + ".queries", class_queries);
    self_block.register_params(pm, prefix + ".self");
    cross_block.register_params(pm, prefix + ".cross", /*with_kv_norm=*/true);
    pm.add(prefix + ".proj_w", proj_w);
    pm.add(prefix + ".proj_b", proj_b);
  }
};

struct AslConfig {
  double gamma_pos = 0.0;  // positive focusing exponent
  double gamma_neg = 4.0;  // negative focusing exponent
  double margin = 0.05;    // probability margin clipped off negatives

  void validate() const {
    if (gamma_pos < 0.0 || gamma_neg < 0.0)
      throw TensorError("asl: focusing exponents must be nonnegative");
    if (!(margin >= 0.0 && margin < 1.0))
      throw TensorError("asl: margin must lie in [0,1)");
  }
};

// Asymmetric loss over per-class sigmoid probabilities with a one-hot target:
//   p   = sigmoid(logits), p_m = max(p - margin, 0)
//   loss = -sum_c [ y_c (1-p_c)^g+ log p_c + (1-y_c) p_m_c^g- log(1-p_m_c) ]
// log p is computed as -softplus(-logit) so saturated logits stay finite.
inline Tensor asymmetric_loss(const Tensor& logits, std::int64_t label, const AslConfig& cfg) {
  cfg.validate();
  if (logits.ndim() != 1) throw TensorError("asl: logits must be a 1-D class vector");
  const std::int64_t c = logits.dim(0);
  if (label < 0 || label >= c)
    throw TensorError("asl: label " + std::to_string(label) + " out of range [0," +
                      std::to_string(c) + ")");
  std::vector<double> y(static_cast<size_t>(c), 0.0), ny(static_cast<size_t>(c), 1.0);
  y[static_cast<size_t>(label)] = 1.0;
  ny[static_cast<size_t>(label)] = 0.0;
  Tensor y_t = Tensor::from({c}, std::move(y));
  Tensor ny_t = Tensor::from({c}, std::move(ny));

  Tensor p = sigmoid(logits);
  Tensor log_p = scale(softplus(scale(logits, -1.0)), -1.0);
  Tensor pos = mul(pow_const(affine_const(p, -1.0, 1.0), cfg.gamma_pos), log_p);

  Tensor p_m = relu(add_const(p, -cfg.margin));
  // cap at 1 - 1e-12 so log1p(-p_m) stays finite when margin is zero and a
  // logit saturates: min(x, cap) = cap - relu(cap - x)
  const double cap = 1.0 - 1e-12;
  p_m = affine_const(relu(affine_const(p_m, -1.0, cap)), -1.0, cap);
  Tensor log_1m = log1p_of(scale(p_m, -1.0));
  Tensor neg = mul(pow_const(p_m, cfg.gamma_neg), log_1m);

  Tensor loss = add(mul(y_t, pos), mul(ny_t, neg));
  return scale(sum_all(loss), -1.0);
}

}  // namespace vqmae
