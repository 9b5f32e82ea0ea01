#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "vqmae/ops.hpp"
#include "vqmae/rng.hpp"
#include "vqmae/tensor.hpp"

namespace vqmae {

// Ordered name -> tensor registry. Iteration order is registration order,
// which fixes the optimizer update order and the checkpoint layout.
struct ParamMap {
  std::vector<std::pair<std::string, Tensor>> items;

  void add(const std::string& name, const Tensor& t) {
    for (auto& [n, _] : items)
      if (n == name) throw TensorError("duplicate parameter name: " + name);
    items.emplace_back(name, t);
  }

  void merge(const ParamMap& other, const std::string& prefix) {
    for (auto& [n, t] : other.items) add(prefix + n, t);
  }

  Tensor find(const std::string& name) const {
    for (auto& [n, t] : items)
      if (n == name) return t;
    throw TensorError("no parameter named " + name);
  }

  std::int64_t total_size() const {
    std::int64_t s = 0;
    for (auto& [n, t] : items) s += t.size();
    return s;
  }

  void zero_grad() {
    for (auto& [n, t] : items) t.zero_grad();
  }
};

inline Tensor trunc_normal(Shape shape, Rng& rng, double stddev = 0.02) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (auto& x : t.values()) {
    double v;
    do {
      v = rng.normal(0.0, stddev);
    } while (std::abs(v) > 2.0 * stddev);
    x = v;
  }
  return t;
}

struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [out]

  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, Rng& rng, double stddev = 0.02) {
    w = trunc_normal({in, out}, rng, stddev);
    b = Tensor::zeros({out}, true);
  }

  Tensor operator()(const Tensor& x) const { return add_bias(matmul(x, w), b); }

  void register_params(ParamMap& pm, const std::string& prefix) const {
    pm.add(prefix + ".w", w);
    pm.add(prefix + ".b", b);
  }
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-10;

  LayerNorm() = default;
  explicit LayerNorm(std::int64_t width) {
    gamma = Tensor::full({width}, 1.0, true);
    beta = Tensor::zeros({width}, true);
  }

  Tensor operator()(const Tensor& x) const { return layer_norm_rows(x, gamma, beta, eps); }

  void register_params(ParamMap& pm, const std::string& prefix) const {
    pm.add(prefix + ".gamma", gamma);
    pm.add(prefix + ".beta", beta);
  }
};

// Multi-head scaled dot-product attention assembled from matmul/softmax
// primitives. queries: [nq, w], keys/values: [nk, w].
inline Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in, int heads,
                                   const Linear& wq, const Linear& wk, const Linear& wv,
                                   const Linear& wo) {
  const std::int64_t w = q_in.dim(1);
  if (w % heads != 0)
    throw TensorError("attention: width " + std::to_string(w) + " not divisible by " +
                      std::to_string(heads) + " heads");
  const std::int64_t dh = w / heads;
  Tensor q = wq(q_in), k = wk(kv_in), v = wv(kv_in);
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  outs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = cols(q, h * dh, (h + 1) * dh);
    Tensor kh = cols(k, h * dh, (h + 1) * dh);
    Tensor vh = cols(v, h * dh, (h + 1) * dh);
    Tensor attn = softmax_rows(scale(matmul(qh, transpose(kh)), scl));
    outs.push_back(matmul(attn, vh));
  }
  return wo(hcat(outs));
}

// Pre-norm transformer block: x += attn(ln1(x)); x += mlp(ln2(x)).
// With a distinct kv sequence the attention part becomes cross-attention
// (queries from x, keys/values from kv), as used by the query-based head.
struct AttentionBlock {
  int heads = 4;
  Linear wq, wk, wv, wo;
  LayerNorm ln1, ln_kv, ln2;
  Linear fc1, fc2;

  AttentionBlock() = default;
  AttentionBlock(std::int64_t width, int n_heads, Rng& rng, std::int64_t mlp_hidden = 0)
      : heads(n_heads),
        wq(width, width, rng),
        wk(width, width, rng),
        wv(width, width, rng),
        wo(width, width, rng),
        ln1(width),
        ln_kv(width),
        ln2(width),
        fc1(width, mlp_hidden > 0 ? mlp_hidden : 4 * width, rng),
        fc2(mlp_hidden > 0 ? mlp_hidden : 4 * width, width, rng) {}

  Tensor operator()(const Tensor& x) const {
    Tensor h = ln1(x);
    Tensor a = multi_head_attention(h, h, heads, wq, wk, wv, wo);
    Tensor y = add(x, a);
    Tensor m = ln2(y);
    return add(y, fc2(gelu(fc1(m))));
  }

  Tensor cross(const Tensor& q_seq, const Tensor& kv_seq) const {
    Tensor a = multi_head_attention(ln1(q_seq), ln_kv(kv_seq), heads, wq, wk, wv, wo);
    Tensor y = add(q_seq, a);
    Tensor m = ln2(y);
    return add(y, fc2(gelu(fc1(m))));
  }

  void register_params(ParamMap& pm, const std::string& prefix, bool with_kv_norm = false) const {
    wq.register_params(pm, prefix + ".wq");
    wk.register_params(pm, prefix + ".wk");
    wv.register_params(pm, prefix + ".wv");
    wo.register_params(pm, prefix + ".wo");
    ln1.register_params(pm, prefix + ".ln1");
    if (with_kv_norm) ln_kv.register_params(pm, prefix + ".lnkv");
    ln2.register_params(pm, prefix + ".ln2");
    fc1.register_params(pm, prefix + ".fc1");
    fc2.register_params(pm, prefix + ".fc2");
  }
};

}  // namespace vqmae
