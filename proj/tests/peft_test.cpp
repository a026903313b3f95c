#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "hatetiny/model.hpp"
#include "hatetiny/peft.hpp"
#include "test_util.hpp"

using namespace hatetiny;
using testutil::random_tensor;

namespace {

Tensor<float> micro_logits(const ClassifierModel<float>& m, int seed_byte) {
  TokenMatrix toks(1, 5);
  toks << kBosId, 65 + seed_byte % 20, 66, 90, 110;
  MaskMatrix mask(1, 5);
  mask.setConstant(true);
  return forward_logits(m, toks, mask, false);
}

}  // namespace

TEST_CASE("freeze_base leaves only head and adapters trainable, idempotently") {
  auto m = init_model(preset_config("micro"), 1);
  freeze_base(m);
  TrainableCount c = count_trainable(m);
  CHECK(c.trainable == 64 * 2 + 2);  // the head alone
  CHECK(count_trainable(m, false).trainable == 0);
  freeze_base(m);  // second call changes nothing
  CHECK(count_trainable(m).trainable == c.trainable);

  // backward accumulates nothing into frozen tensors
  TokenMatrix toks(1, 3);
  toks << kBosId, 65, 66;
  MaskMatrix mask(1, 3);
  mask.setConstant(true);
  Tape<float> tape;
  {
    Tape<float>::Scope scope(tape);
    backward(nll_loss(forward_logits(m, toks, mask, false), {0}));
  }
  CHECK_FALSE(m.blocks[0].q_proj.weight.has_grad());
  CHECK_FALSE(m.tok_embedding.has_grad());
  CHECK(m.head_weight.has_grad());
}

TEST_CASE("attach_lora: default targets give 8 adapter pairs and 2048 params") {
  auto m = init_model(preset_config("micro"), 2);
  attach_lora(m, LoraConfig{}, 2);
  CHECK(m.attached == PeftMethod::lora);

  int pairs = 0;
  std::set<std::string> lora_names;
  for_each_parameter(m, [&](const std::string& n, const Tensor<float>&) {
    if (n.starts_with("lora.")) lora_names.insert(n);
  });
  CHECK(lora_names.size() == 16);  // 4 layers x {k,v} x {A,B}
  for (const auto& b : m.blocks) {
    CHECK_FALSE(b.q_proj.lora.has_value());
    CHECK(b.k_proj.lora.has_value());
    CHECK(b.v_proj.lora.has_value());
    CHECK_FALSE(b.o_proj.lora.has_value());
    pairs += 2;
  }
  CHECK(pairs == 8);

  // 8 pairs x (2*64 + 64*2) parameters, plus the head stays trainable
  CHECK(count_trainable(m, false).trainable == 2048);
  CHECK(count_trainable(m, true).trainable == 2048 + 130);
  CHECK(m.blocks[0].k_proj.lora->scaling == 8.0);  // alpha 16 over r 2

  // trainable parameter list covers lora tensors plus head
  CHECK(trainable_parameters(m).size() == 16 + 2);
}

TEST_CASE("attach_lora with custom targets and validation") {
  auto m = init_model(preset_config("micro"), 3);
  LoraConfig cfg;
  cfg.target_modules = {"q_proj"};
  cfg.r = 4;
  cfg.alpha = 8.0;
  attach_lora(m, cfg, 3);
  CHECK(m.blocks[0].q_proj.lora.has_value());
  CHECK_FALSE(m.blocks[0].k_proj.lora.has_value());
  CHECK(m.blocks[0].q_proj.lora->scaling == 2.0);
  CHECK(count_trainable(m, false).trainable == 4 * (4 * 64 + 64 * 4));

  auto m2 = init_model(preset_config("micro"), 3);
  LoraConfig bad;
  bad.target_modules = {"ffn"};
  CHECK_THROWS_AS(attach_lora(m2, bad, 3), ConfigError);
  bad.target_modules = {"k_proj", "k_proj"};
  CHECK_THROWS_AS(attach_lora(m2, bad, 3), ConfigError);
  bad = LoraConfig{};
  bad.r = 0;
  CHECK_THROWS_AS(attach_lora(m2, bad, 3), ConfigError);
  bad = LoraConfig{};
  bad.dropout = 1.0;
  CHECK_THROWS_AS(attach_lora(m2, bad, 3), ConfigError);
}

TEST_CASE("attaching twice or mixing methods raises StateError") {
  auto m = init_model(preset_config("micro"), 4);
  attach_lora(m, LoraConfig{}, 4);
  CHECK_THROWS_AS(attach_lora(m, LoraConfig{}, 4), StateError);
  CHECK_THROWS_AS(attach_adapters(m, AdapterConfig{}, 4), StateError);
}

TEST_CASE("fresh LoRA leaves the function unchanged (B starts at zero)") {
  auto m = init_model(preset_config("micro"), 5);
  Tensor<float> before = micro_logits(m, 0);
  attach_lora(m, LoraConfig{}, 5);
  Tensor<float> after = micro_logits(m, 0);
  CHECK((before.value() - after.value()).cwiseAbs().maxCoeff() <= 1e-6f);
}

TEST_CASE("fresh adapters are the identity (up-projection starts at zero)") {
  auto m = init_model(preset_config("micro"), 6);
  Tensor<float> before = micro_logits(m, 1);
  attach_adapters(m, AdapterConfig{}, 6);
  Tensor<float> after = micro_logits(m, 1);
  CHECK((before.value() - after.value()).cwiseAbs().maxCoeff() <= 1e-6f);
}

TEST_CASE("attach_adapters installs two bottlenecks per block") {
  auto m = init_model(preset_config("micro"), 7);
  attach_adapters(m, AdapterConfig{}, 7);
  CHECK(m.attached == PeftMethod::adapter);
  int slots = 0;
  for (const auto& b : m.blocks) {
    CHECK(b.post_attn_adapter.has_value());
    CHECK(b.post_mlp_adapter.has_value());
    slots += 2;
    // derived bottleneck: max(4, 64/16) = 4
    CHECK(b.post_attn_adapter->w_down.shape() == Shape{64, 4});
    CHECK(b.post_attn_adapter->w_up.shape() == Shape{4, 64});
  }
  CHECK(slots == 8);
  // per slot: 64*4 + 4 + 4*64 + 64 = 580; two slots per block, four blocks
  CHECK(count_trainable(m, false).trainable == 4 * 2 * 580);
}

TEST_CASE("adapter config validation") {
  AdapterConfig c;
  c.positions_per_block = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = AdapterConfig{};
  c.bottleneck_dim = -2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = AdapterConfig{};
  c.bottleneck_dim = 16;
  CHECK(c.resolve_bottleneck(64) == 16);
  c.bottleneck_dim = 0;
  CHECK(c.resolve_bottleneck(64) == 4);     // floor at 4
  CHECK(c.resolve_bottleneck(2048) == 128);  // 2048/16
}

TEST_CASE("LoRA delta is linear in B at the projection output") {
  Rng rng(55);
  Projection<float> p;
  p.weight = random_tensor({8, 8}, rng, -0.5f, 0.5f);
  p.bias = random_tensor({8}, rng, -0.1f, 0.1f);
  LoraAdapter<float> ad;
  ad.A = random_tensor({2, 8}, rng);
  ad.B = random_tensor({8, 2}, rng);
  ad.scaling = 8.0;
  ad.dropout = 0.0;
  Tensor<float> x = random_tensor({4, 8}, rng);

  Tensor<float> b0 = ad.B.clone();
  ad.B.value().setZero();
  p.lora = ad;
  Tensor<float> y_zero = detail::proj_forward(p, x, false, nullptr);
  p.lora->B.value() = b0.value();
  Tensor<float> y_one = detail::proj_forward(p, x, false, nullptr);
  p.lora->B.value() = 2.0f * b0.value();
  Tensor<float> y_two = detail::proj_forward(p, x, false, nullptr);

  MatX<float> d1 = y_one.mat() - y_zero.mat();
  MatX<float> d2 = y_two.mat() - y_zero.mat();
  CHECK((d2 - 2.0f * d1).cwiseAbs().maxCoeff() <= 1e-5f * d2.cwiseAbs().maxCoeff() + 1e-6f);
}

TEST_CASE("merge_lora reproduces the adapted function and strips adapters") {
  auto m = init_model(preset_config("micro"), 8);
  attach_lora(m, LoraConfig{}, 8);
  // simulate training: give every adapter a non-zero B
  Rng rng(88);
  for (auto& b : m.blocks) {
    for (Projection<float>* pr : {&b.k_proj, &b.v_proj}) {
      for (Index i = 0; i < pr->lora->B.numel(); ++i)
        pr->lora->B.value()[i] = static_cast<float>(rng.uniform(-0.05, 0.05));
    }
  }
  std::vector<Tensor<float>> adapted;
  for (int t = 0; t < 10; ++t) adapted.push_back(micro_logits(m, t));

  merge_lora(m);
  CHECK(m.attached == PeftMethod::none);
  int lora_tensors = 0;
  for_each_parameter(m, [&](const std::string& n, const Tensor<float>&) {
    if (n.starts_with("lora.")) ++lora_tensors;
  });
  CHECK(lora_tensors == 0);

  for (int t = 0; t < 10; ++t) {
    Tensor<float> merged = micro_logits(m, t);
    CHECK((merged.value() - adapted[static_cast<std::size_t>(t)].value())
              .cwiseAbs()
              .maxCoeff() <= 1e-5f);
  }
  CHECK_THROWS_AS(merge_lora(m), StateError);
}

TEST_CASE("merging an untouched LoRA leaves weights bitwise unchanged") {
  auto m = init_model(preset_config("micro"), 9);
  VecX<float> w_before = m.blocks[1].k_proj.weight.value();
  attach_lora(m, LoraConfig{}, 9);
  merge_lora(m);
  CHECK(m.blocks[1].k_proj.weight.value() == w_before);
}

TEST_CASE("merge_lora on the wrong method raises StateError") {
  auto plain = init_model(preset_config("micro"), 10);
  CHECK_THROWS_AS(merge_lora(plain), StateError);
  auto adapted = init_model(preset_config("micro"), 10);
  attach_adapters(adapted, AdapterConfig{}, 10);
  CHECK_THROWS_AS(merge_lora(adapted), StateError);
}

TEST_CASE("tinyllama LoRA trainable count matches the closed form") {
  ModelConfig cfg = preset_config("tinyllama");
  LoraConfig lora;  // r=2 on k_proj and v_proj
  TrainableCount c = count_trainable_shapes(cfg, PeftMethod::lora, &lora, nullptr, false);
  // 22 layers x 2 targets x (2*2048 + 2048*2)
  CHECK(c.trainable == 22 * 2 * (2 * 2048 + 2048 * 2));
  CHECK(c.trainable == 360448);

  // the total matches independent arithmetic over all shapes
  const std::int64_t block = 2 * 2048 + 4 * (2048 * 2048 + 2048) +
                             (2048 * 8192 + 8192) + (8192 * 2048 + 2048);
  const std::int64_t base = 259 * 2048 + 2048 * 2048 + 22 * block + 2048 + (2048 * 2 + 2);
  CHECK(c.total == base + 360448);
  CHECK(c.fraction == doctest::Approx(360448.0 / static_cast<double>(base + 360448)));

  // with the head included the count grows by d_model*2 + 2
  TrainableCount ch = count_trainable_shapes(cfg, PeftMethod::lora, &lora, nullptr, true);
  CHECK(ch.trainable == 360448 + 2048 * 2 + 2);
}

TEST_CASE("adapter shape counts agree between walk and arithmetic") {
  ModelConfig cfg = preset_config("tinyllama");
  AdapterConfig ad;  // derived bottleneck 128
  TrainableCount c = count_trainable_shapes(cfg, PeftMethod::adapter, nullptr, &ad, false);
  const std::int64_t per_slot = 2048 * 128 + 128 + 128 * 2048 + 2048;
  CHECK(c.trainable == 22 * 2 * per_slot);
}

TEST_CASE("shape-based and concrete counts agree on micro") {
  for (PeftMethod method : {PeftMethod::none, PeftMethod::lora, PeftMethod::adapter}) {
    auto m = init_model(preset_config("micro"), 11);
    LoraConfig lc;
    AdapterConfig ac;
    if (method == PeftMethod::lora) attach_lora(m, lc, 11);
    if (method == PeftMethod::adapter) attach_adapters(m, ac, 11);
    if (method == PeftMethod::none) freeze_base(m);
    TrainableCount real = count_trainable(m);
    TrainableCount shaped = count_trainable_shapes(m.config, method, &lc, &ac);
    CHECK(real.trainable == shaped.trainable);
    CHECK(real.total == shaped.total);
  }
}
