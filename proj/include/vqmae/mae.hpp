#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vqmae/nn.hpp"
#include "vqmae/ops.hpp"
#include "vqmae/rng.hpp"
#include "vqmae/tokens.hpp"

namespace vqmae {

struct MaeConfig {
  std::int64_t width = 320;        // t*d*e
  std::int64_t token_slots = 40;   // t*d index slots per token
  std::int64_t codebook_size = 256;
  std::int64_t max_tokens = 160;   // position-table capacity
  int encoder_depth = 12;          // L
  int decoder_depth = 4;           // L'
  int heads = 4;
  std::int64_t mlp_hidden = 0;     // 0 -> 4*width

  void validate() const {
    if (encoder_depth <= decoder_depth)
      throw TensorError("mae: encoder depth " + std::to_string(encoder_depth) +
                        " must exceed decoder depth " + std::to_string(decoder_depth));
    if (width <= 0 || width % heads != 0)
      throw TensorError("mae: width " + std::to_string(width) + " must be divisible by " +
                        std::to_string(heads) + " heads");
    if (token_slots <= 0 || codebook_size < 2 || max_tokens <= 0)
      throw TensorError("mae: bad token configuration");
  }
};

// Masked autoencoder over continuous embedding tokens: a deep encoder that
// sees only the visible tokens plus a CLS token, and a shallow decoder over
// the full assembled sequence that emits per-slot codebook logits.
class MaskedAutoencoder {
 public:
  MaeConfig cfg;
  EmbeddingTable table;  // trainable or frozen; initialized from the quantizer codebook

  Tensor cls_token;  // [1, width]
  Tensor cls_pos;    // [1, width]
  Tensor mask_vec;   // [1, width], decoder fill for masked slots
  Tensor enc_pos;    // [max_tokens, width]
  Tensor dec_pos;    // [max_tokens, width]
  std::vector<AttentionBlock> enc_blocks;
  std::vector<AttentionBlock> dec_blocks;
  LayerNorm enc_norm, dec_norm;
  Linear head;  // width -> token_slots * codebook_size

  MaskedAutoencoder() = default;

  MaskedAutoencoder(MaeConfig config, const Tensor& codebook, bool table_trainable, Rng& rng)
      : cfg(config) {
    cfg.validate();
    if (codebook.dim(0) != cfg.codebook_size)
      throw TensorError("mae: codebook has " + std::to_string(codebook.dim(0)) +
                        " codes, config says " + std::to_string(cfg.codebook_size));
    if (cfg.token_slots * codebook.dim(1) != cfg.width)
      throw TensorError("mae: width " + std::to_string(cfg.width) + " != token_slots " +
                        std::to_string(cfg.token_slots) + " x code dim " +
                        std::to_string(codebook.dim(1)));
    table = EmbeddingTable::from_codebook(codebook, table_trainable);
    cls_token = trunc_normal({1, cfg.width}, rng);
    cls_pos = trunc_normal({1, cfg.width}, rng);
    mask_vec = trunc_normal({1, cfg.width}, rng);
    enc_pos = trunc_normal({cfg.max_tokens, cfg.width}, rng);
    dec_pos = trunc_normal({cfg.max_tokens, cfg.width}, rng);
    for (int i = 0; i < cfg.encoder_depth; ++i)
      enc_blocks.emplace_back(cfg.width, cfg.heads, rng, cfg.mlp_hidden);
    for (int i = 0; i < cfg.decoder_depth; ++i)
      dec_blocks.emplace_back(cfg.width, cfg.heads, rng, cfg.mlp_hidden);
    enc_norm = LayerNorm(cfg.width);
    dec_norm = LayerNorm(cfg.width);
    head = Linear(cfg.width, cfg.token_slots * cfg.codebook_size, rng);
  }

  void register_params(ParamMap& pm) const {
    pm.add("mae.table", table.codes);
    pm.add("mae.cls", cls_token);
    pm.add("mae.cls_pos", cls_pos);
    pm.add("mae.mask_vec", mask_vec);
    pm.add("mae.enc_pos", enc_pos);
    pm.add("mae.dec_pos", dec_pos);
    for (size_t i = 0; i < enc_blocks.size(); ++i)
      enc_blocks[i].register_params(pm, "mae.enc" + std::to_string(i));
    for (size_t i = 0; i < dec_blocks.size(); ++i)
      dec_blocks[i].register_params(pm, "mae.dec" + std::to_string(i));
    enc_norm.register_params(pm, "mae.enc_norm");
    dec_norm.register_params(pm, "mae.dec_norm");
    head.register_params(pm, "mae.head");
  }

  // parameters the encoder-only fine-tuning path trains (decoder excluded)
  void register_encoder_params(ParamMap& pm) const {
    pm.add("mae.table", table.codes);
    pm.add("mae.cls", cls_token);
    pm.add("mae.cls_pos", cls_pos);
    pm.add("mae.enc_pos", enc_pos);
    for (size_t i = 0; i < enc_blocks.size(); ++i)
      enc_blocks[i].register_params(pm, "mae.enc" + std::to_string(i));
    enc_norm.register_params(pm, "mae.enc_norm");
  }

  // Visible tokens (original order) with position embeddings added by grid
  // index, CLS prepended. Output: [|visible|+1, width]; masked tokens are
  // dropped before any computation touches them.
  Tensor encode_visible(const Tensor& embedded, const MaskPlan& plan) const {
    if (embedded.ndim() != 2 || embedded.dim(1) != cfg.width)
      throw TensorError("mae encode: token width " + shape_str(embedded.shape()) +
                        " does not match model width " + std::to_string(cfg.width));
    const std::int64_t n = embedded.dim(0);
    if (plan.num_tokens != n)
      throw TensorError("mae encode: mask plan covers " + std::to_string(plan.num_tokens) +
                        " tokens, sequence has " + std::to_string(n));
    if (n > cfg.max_tokens)
      throw TensorError("mae encode: " + std::to_string(n) + " tokens exceed position table (" +
                        std::to_string(cfg.max_tokens) + ")");
    std::vector<std::int64_t> all(static_cast<size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
    Tensor x = add(embedded, take_rows(enc_pos, all));
    Tensor vis = take_rows(x, plan.visible());
    Tensor cls = add(cls_token, cls_pos);
    Tensor seq = vcat({cls, vis});
    for (const auto& block : enc_blocks) seq = block(seq);
    return enc_norm(seq);
  }

  // fine-tuning path: the full token sequence is visible
  Tensor encode_all(const Tensor& embedded) const {
    MaskPlan none;
    none.num_tokens = embedded.dim(0);
    none.is_masked.assign(static_cast<size_t>(none.num_tokens), 0);
    return encode_visible(embedded, none);
  }

  // Full-sequence decode: encoder outputs (CLS dropped) scattered back to
  // their grid positions, masked slots filled with the trainable mask vector,
  // decoder position embeddings added. Output: [N, token_slots*codebook_size].
  Tensor decode_full(const Tensor& encoder_out, const MaskPlan& plan) const {
    const std::int64_t n = plan.num_tokens;
    const std::int64_t n_visible = n - static_cast<std::int64_t>(plan.masked.size());
    if (encoder_out.ndim() != 2 || encoder_out.dim(0) != n_visible + 1)
      throw TensorError("mae decode: encoder output " + shape_str(encoder_out.shape()) +
                        " misaligned with plan (" + std::to_string(n_visible) + " visible + CLS)");
    std::vector<std::int64_t> body(static_cast<size_t>(n_visible));
    for (std::int64_t i = 0; i < n_visible; ++i) body[static_cast<size_t>(i)] = i + 1;
    Tensor vis = take_rows(encoder_out, body);
    Tensor full = assemble_rows(n, plan.visible(), vis, mask_vec);
    std::vector<std::int64_t> all(static_cast<size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
    Tensor x = add(full, take_rows(dec_pos, all));
    for (const auto& block : dec_blocks) x = block(x);
    return head(dec_norm(x));
  }

  // Mean cross-entropy over every index slot of the masked tokens only.
  // Visible-slot logits are never read, so their gradients are exactly zero.
  Tensor pretrain_loss(const Tensor& logits, const DiscreteTokens& toks,
                       const MaskPlan& plan) const {
    if (plan.masked.empty())
      throw TensorError("pretrain loss: empty mask set (a zero ratio is not trainable)");
    const std::int64_t slots = cfg.token_slots;
    if (logits.ndim() != 2 || logits.dim(0) != plan.num_tokens ||
        logits.dim(1) != slots * cfg.codebook_size)
      throw TensorError("pretrain loss: logits " + shape_str(logits.shape()) +
                        " misaligned with plan/config");
    Tensor masked = take_rows(logits, plan.masked);
    const std::int64_t m = static_cast<std::int64_t>(plan.masked.size());
    Tensor rows = reshape(masked, {m * slots, cfg.codebook_size});
    std::vector<std::int64_t> targets;
    targets.reserve(static_cast<size_t>(m * slots));
    for (auto tok : plan.masked)
      for (std::int64_t s = 0; s < slots; ++s) targets.push_back(toks.at(tok, s));
    return cross_entropy_rows(rows, targets);
  }

  // argmax over the codebook at masked slots, original indices at visible
  // slots, assembled back into an index grid
  QuantizedGrid reconstruct(const Tensor& logits, const DiscreteTokens& toks,
                            const MaskPlan& plan) const {
    DiscreteTokens rec = toks;
    const std::int64_t slots = cfg.token_slots, k = cfg.codebook_size;
    for (auto tok : plan.masked) {
      const double* row = logits.data() + tok * slots * k;
      for (std::int64_t s = 0; s < slots; ++s) {
        const double* l = row + s * k;
        std::int64_t best = 0;
        for (std::int64_t j = 1; j < k; ++j)
          if (l[j] > l[best]) best = j;
        rec.tokens[static_cast<size_t>(tok * slots + s)] = best;
      }
    }
    return unpatchify(rec);
  }

  // fraction of masked slots whose argmax equals the target index
  double masked_accuracy(const Tensor& logits, const DiscreteTokens& toks,
                         const MaskPlan& plan) const {
    if (plan.masked.empty()) return 0.0;
    const std::int64_t slots = cfg.token_slots, k = cfg.codebook_size;
    std::int64_t hits = 0, total = 0;
    for (auto tok : plan.masked) {
      const double* row = logits.data() + tok * slots * k;
      for (std::int64_t s = 0; s < slots; ++s) {
        const double* l = row + s * k;
        std::int64_t best = 0;
        for (std::int64_t j = 1; j < k; ++j)
          if (l[j] > l[best]) best = j;
        hits += (best == toks.at(tok, s));
        ++total;
      }
    }
    return static_cast<double>(hits) / static_cast<double>(total);
  }
};

}  // namespace vqmae
