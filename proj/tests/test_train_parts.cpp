#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "vqmae/checkpoint.hpp"
#include "vqmae/metrics.hpp"
#include "vqmae/optim.hpp"

using namespace vqmae;

TEST_CASE("adamw: zero gradient and zero decay leaves parameters unchanged") {
  ParamMap pm;
  Tensor p = Tensor::from({2}, {1.0, -2.0}, true);
  pm.add("p", p);
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg);
  opt.bind(pm);
  p.zero_grad();
  REQUIRE(opt.step(pm, 0.1));
  REQUIRE(p.values()[0] == 1.0);
  REQUIRE(p.values()[1] == -2.0);
}

TEST_CASE("adamw: first step on p=1 g=1 lr=0.1 wd=0 moves to about 0.9") {
  ParamMap pm;
  Tensor p = Tensor::scalar(1.0, true);
  pm.add("p", p);
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg);
  opt.bind(pm);
  p.grad()[0] = 1.0;
  opt.step(pm, 0.1);
  // bias-corrected first step: mhat = 1, vhat = 1 -> p - 0.1/(1+eps)
  REQUIRE(p.values()[0] == Catch::Approx(0.9).margin(1e-6));
}

TEST_CASE("adamw: decoupled decay shrinks by (1 - lr*wd) when gradient is zero") {
  ParamMap pm;
  Tensor p = Tensor::scalar(2.0, true);
  pm.add("p", p);
  AdamWConfig cfg;
  cfg.weight_decay = 0.05;
  AdamW opt(cfg);
  opt.bind(pm);
  p.zero_grad();
  opt.step(pm, 0.1);
  REQUIRE(p.values()[0] == Catch::Approx(2.0 * (1.0 - 0.005)).epsilon(1e-12));
}

TEST_CASE("adamw: non-finite gradient skips the step and counts it") {
  ParamMap pm;
  Tensor p = Tensor::scalar(1.0, true);
  pm.add("p", p);
  AdamW opt;
  opt.bind(pm);
  p.grad()[0] = std::nan("");
  REQUIRE(!opt.step(pm, 0.1));
  REQUIRE(opt.skipped_steps == 1);
  REQUIRE(opt.step_count == 0);
  REQUIRE(p.values()[0] == 1.0);
}

TEST_CASE("adamw: frozen parameters are held") {
  ParamMap pm;
  Tensor p = Tensor::scalar(1.0, true);
  Tensor frozen = Tensor::scalar(5.0, false);
  pm.add("p", p);
  pm.add("frozen", frozen);
  AdamW opt;
  opt.bind(pm);
  p.grad()[0] = 1.0;
  opt.step(pm, 0.1);
  REQUIRE(frozen.values()[0] == 5.0);
  REQUIRE(p.values()[0] < 1.0);
}

TEST_CASE("schedule: paper configuration peaks at 2e-3") {
  ScheduleConfig cfg;
  cfg.base_lr = 1e-3;
  cfg.batch_size = 512;
  REQUIRE(cfg.peak_lr() == Catch::Approx(2e-3).epsilon(1e-15));
}

TEST_CASE("schedule: ramp, junction continuity, midpoint, clamp") {
  ScheduleConfig cfg;
  cfg.base_lr = 1e-3;
  cfg.batch_size = 512;
  cfg.warmup_steps = 100;
  cfg.total_steps = 1100;
  cfg.min_lr = 1e-5;
  const double peak = cfg.peak_lr();
  REQUIRE(lr_at(0, cfg) == 0.0);
  REQUIRE(lr_at(1, cfg) == Catch::Approx(peak / 100.0));
  // continuity at the warmup/cosine junction
  const double before = peak * 99.0 / 100.0;
  REQUIRE(std::abs(lr_at(99, cfg) - before) < 1e-15);
  REQUIRE(std::abs(lr_at(100, cfg) - peak) < 1e-12);
  // cosine midpoint
  REQUIRE(std::abs(lr_at(600, cfg) - 0.5 * (peak + cfg.min_lr)) < 1e-12);
  // end and beyond clamp to min_lr
  REQUIRE(lr_at(1100, cfg) == cfg.min_lr);
  REQUIRE(lr_at(5000, cfg) == cfg.min_lr);
  REQUIRE_THROWS_AS(lr_at(-1, cfg), TensorError);
}

TEST_CASE("checkpoint roundtrip is bit-exact including optimizer state") {
  Rng rng(3);
  ParamMap pm;
  Tensor a = Tensor::randn({4, 3}, rng, 1.0, true);
  Tensor b = Tensor::randn({7}, rng, 1.0, true);
  pm.add("model.a", a);
  pm.add("model.b", b);
  AdamW opt;
  opt.bind(pm);
  for (auto& g : a.grad()) g = rng.normal();
  for (auto& g : b.grad()) g = rng.normal();
  opt.step(pm, 1e-3);

  CheckpointMeta meta;
  meta.config_fingerprint = fnv1a64("some config");
  meta.master_seed = 42;
  meta.epoch = 3;
  meta.step = 17;
  auto path = (std::filesystem::temp_directory_path() / "ckpt_test.bin").string();
  save_checkpoint(path, pm, &opt, meta);

  // fresh model with different values
  ParamMap pm2;
  Tensor a2 = Tensor::randn({4, 3}, rng, 1.0, true);
  Tensor b2 = Tensor::randn({7}, rng, 1.0, true);
  pm2.add("model.a", a2);
  pm2.add("model.b", b2);
  AdamW opt2;
  opt2.bind(pm2);
  CheckpointMeta back = load_checkpoint(path, pm2, &opt2, meta.config_fingerprint);
  REQUIRE(back.epoch == 3);
  REQUIRE(back.step == 17);
  REQUIRE(back.master_seed == 42);
  REQUIRE(a2.values() == a.values());
  REQUIRE(b2.values() == b.values());
  REQUIRE(opt2.step_count == opt.step_count);
  REQUIRE(opt2.first_moments() == opt.first_moments());
  REQUIRE(opt2.second_moments() == opt.second_moments());
  std::remove(path.c_str());
}

TEST_CASE("checkpoint refuses fingerprint mismatch unless forced") {
  Rng rng(4);
  ParamMap pm;
  Tensor a = Tensor::randn({2}, rng, 1.0, true);
  pm.add("a", a);
  CheckpointMeta meta;
  meta.config_fingerprint = 111;
  auto path = (std::filesystem::temp_directory_path() / "ckpt_fp.bin").string();
  save_checkpoint(path, pm, nullptr, meta);
  REQUIRE_THROWS_WITH(load_checkpoint(path, pm, nullptr, 222),
                      Catch::Matchers::ContainsSubstring("fingerprint mismatch"));
  REQUIRE_NOTHROW(load_checkpoint(path, pm, nullptr, 222, /*force=*/true));
  std::remove(path.c_str());
}

TEST_CASE("checkpoint rejects shape and name mismatches") {
  Rng rng(5);
  ParamMap pm;
  Tensor a = Tensor::randn({2, 2}, rng, 1.0, true);
  pm.add("a", a);
  auto path = (std::filesystem::temp_directory_path() / "ckpt_shape.bin").string();
  save_checkpoint(path, pm, nullptr, {});
  ParamMap wrong_shape;
  wrong_shape.add("a", Tensor::zeros({4}, true));
  REQUIRE_THROWS_WITH(load_checkpoint(path, wrong_shape, nullptr),
                      Catch::Matchers::ContainsSubstring("shape mismatch"));
  ParamMap wrong_name;
  wrong_name.add("b", Tensor::zeros({2, 2}, true));
  REQUIRE_THROWS_AS(load_checkpoint(path, wrong_name, nullptr), CheckpointError);
  std::remove(path.c_str());
}

TEST_CASE("confusion matrix: constant predictor on a balanced set scores 1/C") {
  ConfusionMatrix cm(4);
  for (std::int64_t truth = 0; truth < 4; ++truth)
    for (int i = 0; i < 10; ++i) cm.add(truth, 0);
  REQUIRE(cm.accuracy() == Catch::Approx(0.25));
}

TEST_CASE("macro f1 of perfect predictions is 1") {
  ConfusionMatrix cm(3);
  for (std::int64_t c = 0; c < 3; ++c)
    for (int i = 0; i < 5; ++i) cm.add(c, c);
  REQUIRE(cm.macro_f1() == Catch::Approx(1.0));
  REQUIRE(cm.accuracy() == Catch::Approx(1.0));
}

TEST_CASE("metrics log renders acc/f1 as empty when not applicable") {
  MetricsLog log;
  log.add(0, "train", 1.5);
  log.add(1, "test", 0.75, 0.8, 0.79);
  const std::string csv = log.to_csv();
  REQUIRE(csv.find("epoch,split,loss,acc,f1\n") == 0);
  REQUIRE(csv.find("0,train,1.5,,\n") != std::string::npos);
  REQUIRE(csv.find("1,test,0.75,0.8") != std::string::npos);
}
