#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "vqmae/grad_check.hpp"
#include "vqmae/heads.hpp"

using namespace vqmae;

TEST_CASE("cls head with zero weights gives uniform logits, prediction class 0") {
  Rng rng(1);
  ClsLinearHead head(8, 4, rng);
  for (auto& v : head.lin.w.values()) v = 0.0;
  Tensor latents = Tensor::randn({5, 8}, rng);
  Tensor logits = head(latents);
  REQUIRE(logits.shape() == Shape{4});
  for (double l : logits.values()) REQUIRE(l == 0.0);
  REQUIRE(argmax_index(logits.values()) == 0);
}

TEST_CASE("cls head reads only the CLS row") {
  Rng rng(2);
  ClsLinearHead head(8, 3, rng);
  Tensor latents = Tensor::randn({5, 8}, rng);
  Tensor logits1 = head(latents);
  Tensor other = latents.detach();
  for (std::int64_t i = 8; i < 40; ++i) other.values()[static_cast<size_t>(i)] += 7.0;
  Tensor logits2 = head(other);
  REQUIRE(logits1.values() == logits2.values());
}

TEST_CASE("argmax prediction invariant under constant logit shifts") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor logits = Tensor::randn({6}, rng);
    auto base = argmax_index(logits.values());
    std::vector<double> shifted = logits.values();
    const double c = rng.normal(0.0, 10.0);
    for (auto& v : shifted) v += c;
    REQUIRE(argmax_index(shifted) == base);
  }
}

TEST_CASE("query2emo emits one logit per class") {
  Rng rng(4);
  Query2EmoHead head(16, 8, 4, rng);
  Tensor latents = Tensor::randn({12, 16}, rng);
  Tensor logits = head(latents);
  REQUIRE(logits.shape() == Shape{8});
  REQUIRE(all_finite(logits.values()));
}

TEST_CASE("softmax over a single key is exactly one") {
  Tensor scores = Tensor::from({3, 1}, {0.7, -2.0, 14.0});
  Tensor attn = softmax_rows(scores);
  for (double a : attn.values()) REQUIRE(a == 1.0);
  Rng rng(5);
  Query2EmoHead head(16, 4, 4, rng);
  Tensor single = Tensor::randn({1, 16}, rng);
  REQUIRE(all_finite(head(single).values()));
}

TEST_CASE("query2emo logits are invariant to token order") {
  Rng rng(6);
  Query2EmoHead head(16, 4, 4, rng);
  Tensor latents = Tensor::randn({9, 16}, rng);
  Tensor logits = head(latents);
  // reverse the token order
  std::vector<std::int64_t> rev;
  for (std::int64_t i = 8; i >= 0; --i) rev.push_back(i);
  Tensor logits_rev = head(take_rows(latents, rev));
  for (int i = 0; i < 4; ++i)
    REQUIRE(logits_rev.values()[i] == Catch::Approx(logits.values()[i]).margin(1e-12));
}

TEST_CASE("query2emo head-only gradient check at W=16 C=4 passes 1e-4") {
  Rng rng(7);
  Query2EmoHead head(16, 4, 4, rng);
  Tensor latents = Tensor::randn({6, 16}, rng);
  AslConfig asl;
  auto f = [&] { return asymmetric_loss(head(latents), 2, asl); };
  ParamMap pm;
  head.register_params(pm, "q2e");
  auto report = grad_check(f, pm.items, 1e-5, 8, 55);
  INFO("max rel err " << report.max_rel_err);
  REQUIRE(report.pass(1e-4));
}

TEST_CASE("asl with zero focusing and margin reduces to summed binary cross-entropy") {
  Rng rng(8);
  AslConfig cfg;
  cfg.gamma_pos = 0.0;
  cfg.gamma_neg = 0.0;
  cfg.margin = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    Tensor logits = Tensor::randn({5}, rng, 2.0);
    const std::int64_t label = static_cast<std::int64_t>(rng.bounded(5));
    double expected = 0.0;
    for (std::int64_t c = 0; c < 5; ++c) {
      const double p = 1.0 / (1.0 + std::exp(-logits.values()[static_cast<size_t>(c)]));
      expected -= (c == label) ? std::log(p) : std::log(1.0 - p);
    }
    REQUIRE(asymmetric_loss(logits, label, cfg).item() ==
            Catch::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("asl vanishes for a perfectly confident correct prediction") {
  AslConfig cfg;
  Tensor logits = Tensor::from({3}, {500.0, -500.0, -500.0});
  REQUIRE(asymmetric_loss(logits, 0, cfg).item() < 1e-12);
}

TEST_CASE("asl hand-computed case: C=2, p=(0.7,0.3), gamma-=4, m=0.05") {
  // logits chosen so sigmoid gives exactly the target probabilities
  const double l0 = std::log(0.7 / 0.3), l1 = std::log(0.3 / 0.7);
  Tensor logits = Tensor::from({2}, {l0, l1});
  AslConfig cfg;
  cfg.gamma_pos = 0.0;
  cfg.gamma_neg = 4.0;
  cfg.margin = 0.05;
  // independent scalar computation
  const double p0 = 1.0 / (1.0 + std::exp(-l0));
  const double p1 = 1.0 / (1.0 + std::exp(-l1));
  const double pm1 = std::max(p1 - 0.05, 0.0);
  const double expected = -std::log(p0) - std::pow(pm1, 4.0) * std::log(1.0 - pm1);
  REQUIRE(asymmetric_loss(logits, 0, cfg).item() == Catch::Approx(expected).epsilon(1e-12));
  REQUIRE(expected == Catch::Approx(0.3577989).margin(2e-7));
}

TEST_CASE("asl rejects out-of-range labels and bad config") {
  Tensor logits = Tensor::zeros({4});
  AslConfig cfg;
  REQUIRE_THROWS_AS(asymmetric_loss(logits, 4, cfg), TensorError);
  REQUIRE_THROWS_AS(asymmetric_loss(logits, -1, cfg), TensorError);
  AslConfig bad;
  bad.margin = 1.0;
  REQUIRE_THROWS_AS(asymmetric_loss(logits, 0, bad), TensorError);
}

TEST_CASE("asl gradient passes finite differences away from the clip point") {
  Rng rng(9);
  AslConfig cfg;  // gamma- = 4, margin 0.05
  for (int trial = 0; trial < 5; ++trial) {
    Tensor logits = Tensor::randn({6}, rng, 1.5, true);
    // keep probabilities away from the p == margin kink
    bool near_kink = false;
    for (double l : logits.values()) {
      const double p = 1.0 / (1.0 + std::exp(-l));
      if (std::abs(p - cfg.margin) < 1e-3) near_kink = true;
    }
    if (near_kink) continue;
    auto f = [&] { return asymmetric_loss(logits, 1, cfg); };
    auto report = grad_check(f, {{"logits", logits}});
    INFO("max rel err " << report.max_rel_err);
    REQUIRE(report.pass(1e-4));
  }
}

TEST_CASE("cls head trains to perfect accuracy on separable latents") {
  Rng rng(10);
  // two classes of CLS latents separated along one direction
  ClsLinearHead head(8, 2, rng);
  AslConfig asl;
  std::vector<Tensor> latents;
  std::vector<std::int64_t> labels;
  for (int i = 0; i < 16; ++i) {
    Tensor l = Tensor::randn({3, 8}, rng);
    const std::int64_t y = i % 2;
    l.values()[0] += (y == 0) ? 3.0 : -3.0;
    latents.push_back(l);
    labels.push_back(y);
  }
  ParamMap pm;
  head.register_params(pm, "head");
  for (int step = 0; step < 200; ++step) {
    pm.zero_grad();
    Tape tape;
    Tensor loss = asymmetric_loss(head(latents[step % 16]), labels[step % 16], asl);
    tape.backward(loss);
    for (auto& [name, t] : pm.items) {
      Tensor p = t;
      for (size_t i = 0; i < p.values().size(); ++i) p.values()[i] -= 0.05 * p.grad()[i];
    }
  }
  int correct = 0;
  for (int i = 0; i < 16; ++i)
    correct += argmax_index(head(latents[i]).values()) == labels[i];
  REQUIRE(correct == 16);
}
