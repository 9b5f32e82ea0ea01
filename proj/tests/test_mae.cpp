#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "vqmae/grad_check.hpp"
#include "vqmae/mae.hpp"

using namespace vqmae;

namespace {

struct MiniSetup {
  MaskedAutoencoder model;
  DiscreteTokens toks;
  MaskPlan plan;
};

// miniature model: N=8 tokens, width 16 (t=2, d=2, e=4), k=6, L=2, L'=1
MiniSetup mini(std::uint64_t seed, double ratio = 0.5) {
  Rng rng(seed);
  MaeConfig cfg;
  cfg.width = 16;
  cfg.token_slots = 4;
  cfg.codebook_size = 6;
  cfg.max_tokens = 8;
  cfg.encoder_depth = 2;
  cfg.decoder_depth = 1;
  cfg.heads = 4;
  Tensor cb = Tensor::randn({6, 4}, rng);
  MiniSetup s{MaskedAutoencoder(cfg, cb, true, rng), {}, {}};
  QuantizedGrid grid;
  grid.num_frames = 8;
  grid.positions = 4;
  grid.indices.resize(32);
  for (auto& i : grid.indices) i = static_cast<std::int64_t>(rng.bounded(6));
  s.toks = patchify(grid, 2, 2);  // 4x2 grid -> 8 tokens of 4 slots
  s.plan = make_mask(s.toks.geom, MaskStrategy::PatchTF, ratio, seed + 1);
  return s;
}

}  // namespace

TEST_CASE("encoder sequence length is visible count plus CLS") {
  auto s = mini(3, 0.5);
  REQUIRE(s.toks.geom.num_tokens() == 8);
  REQUIRE(static_cast<std::int64_t>(s.plan.masked.size()) == 4);
  Tensor emb = embed_tokens(s.toks, s.model.table);
  Tensor enc = s.model.encode_visible(emb, s.plan);
  REQUIRE(enc.shape() == Shape{5, 16});  // 4 visible + CLS

  Tensor all = s.model.encode_all(emb);
  REQUIRE(all.shape() == Shape{9, 16});  // r=0 keeps N+1
}

TEST_CASE("masked tokens never reach the encoder") {
  auto s = mini(4, 0.5);
  Tensor emb = embed_tokens(s.toks, s.model.table);
  Tensor out1 = s.model.encode_visible(emb, s.plan);
  // perturb an embedded token inside the mask set
  Tensor perturbed = emb.detach();
  const std::int64_t victim = s.plan.masked[0];
  for (std::int64_t j = 0; j < 16; ++j)
    perturbed.values()[static_cast<size_t>(victim * 16 + j)] += 123.0;
  Tensor out2 = s.model.encode_visible(perturbed, s.plan);
  REQUIRE(out1.values() == out2.values());  // bit-identical
}

TEST_CASE("decode_full shapes and plan misalignment errors") {
  auto s = mini(5, 0.5);
  Tensor emb = embed_tokens(s.toks, s.model.table);
  Tensor enc = s.model.encode_visible(emb, s.plan);
  Tensor logits = s.model.decode_full(enc, s.plan);
  REQUIRE(logits.shape() == Shape{8, 4 * 6});
  REQUIRE(all_finite(logits.values()));

  MaskPlan other = make_mask(s.toks.geom, MaskStrategy::PatchTF, 0.8, 99);
  REQUIRE_THROWS_AS(s.model.decode_full(enc, other), TensorError);
}

TEST_CASE("pretrain loss: uniform logits give ln k, masked-only support") {
  auto s = mini(6, 0.5);
  SECTION("uniform logits") {
    Tensor logits = Tensor::full({8, 24}, 1.25);
    Tensor loss = s.model.pretrain_loss(logits, s.toks, s.plan);
    REQUIRE(std::abs(loss.item() - std::log(6.0)) < 1e-12);
  }
  SECTION("visible-slot logits do not affect the loss or gradients") {
    Rng rng(61);
    Tensor logits = Tensor::randn({8, 24}, rng, 1.0, true);
    double base;
    {
      Tape tape;
      Tensor loss = s.model.pretrain_loss(logits, s.toks, s.plan);
      base = loss.item();
      tape.backward(loss);
    }
    // gradients at visible rows are exactly zero
    for (std::int64_t tok = 0; tok < 8; ++tok) {
      if (s.plan.is_masked[static_cast<size_t>(tok)]) continue;
      for (std::int64_t j = 0; j < 24; ++j)
        REQUIRE(logits.grad()[static_cast<size_t>(tok * 24 + j)] == 0.0);
    }
    // randomizing visible rows changes the loss by exactly zero
    for (auto v : s.plan.visible())
      for (std::int64_t j = 0; j < 24; ++j)
        logits.values()[static_cast<size_t>(v * 24 + j)] = rng.normal() * 50.0;
    REQUIRE(s.model.pretrain_loss(logits, s.toks, s.plan).item() == base);
  }
  SECTION("strong correct logits drive the loss toward zero") {
    Tensor logits = Tensor::zeros({8, 24});
    for (auto tok : s.plan.masked)
      for (std::int64_t sl = 0; sl < 4; ++sl)
        logits.values()[static_cast<size_t>(tok * 24 + sl * 6 + s.toks.at(tok, sl))] = 200.0;
    REQUIRE(s.model.pretrain_loss(logits, s.toks, s.plan).item() < 1e-12);
  }
  SECTION("empty mask set is an error") {
    MaskPlan none = make_mask(s.toks.geom, MaskStrategy::PatchTF, 0.0, 1);
    Tensor logits = Tensor::zeros({8, 24});
    REQUIRE_THROWS_WITH(s.model.pretrain_loss(logits, s.toks, none),
                        Catch::Matchers::ContainsSubstring("zero ratio"));
  }
}

TEST_CASE("reconstruct: empty mask copies the input, one-hot logits recover targets") {
  auto s = mini(7, 0.5);
  SECTION("empty mask set returns the original grid") {
    MaskPlan none = make_mask(s.toks.geom, MaskStrategy::PatchTF, 0.0, 1);
    Tensor logits = Tensor::zeros({8, 24});
    QuantizedGrid rec = s.model.reconstruct(logits, s.toks, none);
    REQUIRE(rec.indices == unpatchify(s.toks).indices);
  }
  SECTION("one-hot logits matching the targets recover exactly") {
    Tensor logits = Tensor::zeros({8, 24});
    for (std::int64_t tok = 0; tok < 8; ++tok)
      for (std::int64_t sl = 0; sl < 4; ++sl)
        logits.values()[static_cast<size_t>(tok * 24 + sl * 6 + s.toks.at(tok, sl))] = 1.0;
    QuantizedGrid rec = s.model.reconstruct(logits, s.toks, s.plan);
    REQUIRE(rec.indices == unpatchify(s.toks).indices);
    REQUIRE(s.model.masked_accuracy(logits, s.toks, s.plan) == 1.0);
  }
}

TEST_CASE("untrained model: mean cross-entropy within 5% of ln k") {
  Rng rng(8);
  MaeConfig cfg;
  cfg.width = 64;
  cfg.token_slots = 8;
  cfg.codebook_size = 256;
  cfg.max_tokens = 24;
  cfg.encoder_depth = 2;
  cfg.decoder_depth = 1;
  Tensor cb = Tensor::randn({256, 8}, rng);
  MaskedAutoencoder model(cfg, cb, true, rng);
  QuantizedGrid grid;
  grid.num_frames = 12;
  grid.positions = 16;
  grid.indices.resize(192);
  for (auto& i : grid.indices) i = static_cast<std::int64_t>(rng.bounded(256));
  DiscreteTokens toks = patchify(grid, 2, 4);  // 6x4 = 24 tokens of 8 slots
  MaskPlan plan = make_mask(toks.geom, MaskStrategy::PatchTF, 0.75, 5);
  Tensor emb = embed_tokens(toks, model.table);
  Tensor logits = model.decode_full(model.encode_visible(emb, plan), plan);
  const double ce = model.pretrain_loss(logits, toks, plan).item();
  REQUIRE(std::abs(ce - std::log(256.0)) < 0.05 * std::log(256.0));
}

TEST_CASE("permutation consistency: relabeling tokens with their positions permutes logits") {
  auto s = mini(9, 0.5);
  Tensor emb = embed_tokens(s.toks, s.model.table).detach();
  Tensor logits = s.model.decode_full(s.model.encode_visible(emb, s.plan), s.plan);

  // permutation of token order: rotate by 3
  const std::int64_t n = 8;
  std::vector<std::int64_t> perm(n);
  for (std::int64_t i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = (i + 3) % n;
  // permuted inputs: row perm[i] of the new sequence = row i of the old
  Tensor emb_p = Tensor::zeros({n, 16});
  Tensor enc_pos_p = Tensor::zeros({n, 16});
  Tensor dec_pos_p = Tensor::zeros({n, 16});
  MaskPlan plan_p;
  plan_p.num_tokens = n;
  plan_p.is_masked.assign(static_cast<size_t>(n), 0);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < 16; ++j) {
      emb_p.values()[static_cast<size_t>(perm[i] * 16 + j)] = emb.at(i, j);
      enc_pos_p.values()[static_cast<size_t>(perm[i] * 16 + j)] = s.model.enc_pos.at(i, j);
      dec_pos_p.values()[static_cast<size_t>(perm[i] * 16 + j)] = s.model.dec_pos.at(i, j);
    }
    if (s.plan.is_masked[static_cast<size_t>(i)]) {
      plan_p.is_masked[static_cast<size_t>(perm[i])] = 1;
      plan_p.masked.push_back(perm[i]);
    }
  }
  std::sort(plan_p.masked.begin(), plan_p.masked.end());

  MaskedAutoencoder permuted = s.model;  // shares all weights
  permuted.enc_pos = enc_pos_p;
  permuted.dec_pos = dec_pos_p;
  Tensor logits_p = permuted.decode_full(permuted.encode_visible(emb_p, plan_p), plan_p);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < 24; ++j)
      REQUIRE(logits_p.at(perm[i], j) == Catch::Approx(logits.at(i, j)).margin(1e-9));
}

TEST_CASE("miniature end-to-end gradient check at tol 1e-3") {
  auto s = mini(10, 0.5);
  Tensor emb_frozen = embed_tokens(s.toks, s.model.table).detach();
  (void)emb_frozen;
  auto f = [&] {
    Tensor emb = embed_tokens(s.toks, s.model.table);
    Tensor enc = s.model.encode_visible(emb, s.plan);
    Tensor logits = s.model.decode_full(enc, s.plan);
    return s.model.pretrain_loss(logits, s.toks, s.plan);
  };
  ParamMap pm;
  s.model.register_params(pm);
  auto report = grad_check(f, pm.items, 1e-5, 4, 77);
  INFO("max rel err " << report.max_rel_err);
  REQUIRE(report.pass(1e-3));
}

TEST_CASE("config validation: depth asymmetry and width divisibility") {
  Rng rng(11);
  Tensor cb = Tensor::randn({6, 4}, rng);
  MaeConfig cfg;
  cfg.width = 16;
  cfg.token_slots = 4;
  cfg.codebook_size = 6;
  cfg.max_tokens = 8;
  cfg.encoder_depth = 2;
  cfg.decoder_depth = 2;  // L must exceed L'
  REQUIRE_THROWS_AS(MaskedAutoencoder(cfg, cb, true, rng), TensorError);
  cfg.decoder_depth = 1;
  cfg.width = 18;  // not divisible by 4 heads
  REQUIRE_THROWS_AS(MaskedAutoencoder(cfg, cb, true, rng), TensorError);
}
