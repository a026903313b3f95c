#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <set>
#include <type_traits>

#include "hatetiny/gradcheck.hpp"
#include "hatetiny/model.hpp"
#include "hatetiny/peft.hpp"
#include "test_util.hpp"

using namespace hatetiny;
using testutil::random_tensor;

namespace {

TokenMatrix tokens_of(const std::vector<std::vector<int>>& rows) {
  TokenMatrix t(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()));
  for (Index i = 0; i < t.rows(); ++i)
    for (Index j = 0; j < t.cols(); ++j)
      t(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return t;
}

MaskMatrix mask_of(const std::vector<std::vector<bool>>& rows) {
  MaskMatrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j)
      m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

}  // namespace

TEST_CASE("presets carry the published dimensions") {
  ModelConfig t = preset_config("tinyllama");
  CHECK(t.n_layers == 22);
  CHECK(t.n_heads == 16);
  CHECK(t.d_model == 2048);
  CHECK(t.d_ff == 8192);
  CHECK(t.max_seq_len == 2048);
  CHECK(t.head_dim() == 128);

  ModelConfig p = preset_config("phi2");
  CHECK(p.n_layers == 24);
  CHECK(p.n_heads == 32);
  CHECK(p.d_model == 1024);  // 32 heads of dimension 32
  CHECK(p.d_ff == 4096);
  CHECK(p.max_seq_len == 2048);
  CHECK(p.head_dim() == 32);

  ModelConfig o = preset_config("opt13b");
  CHECK(o.n_layers == 24);
  CHECK(o.n_heads == 32);
  CHECK(o.d_model == 2048);
  CHECK(o.d_ff == 8192);

  ModelConfig m = preset_config("micro");
  CHECK(m.n_layers == 4);
  CHECK(m.n_heads == 4);
  CHECK(m.d_model == 64);
  CHECK(m.d_ff == 256);
  CHECK(m.max_seq_len == 128);
  CHECK(m.n_classes == 2);

  CHECK_THROWS_AS(preset_config("gpt4"), ConfigError);
}

TEST_CASE("config validation rejects inconsistent dimensions") {
  ModelConfig bad = preset_config("micro");
  bad.n_heads = 3;  // 64 % 3 != 0
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = preset_config("micro");
  bad.vocab_size = 100;  // cannot hold the byte vocabulary
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = preset_config("micro");
  bad.n_layers = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("micro parameter total matches independent arithmetic") {
  // counted by hand from the shapes:
  //   tok 259*64, pos 128*64
  //   per block: norm1 64, four projections 4*(64*64+64), norm2 64,
  //              mlp 64*256+256 + 256*64+64
  //   final norm 64, head 64*2+2
  const std::int64_t tok = 259 * 64;
  const std::int64_t pos = 128 * 64;
  const std::int64_t block = 64 + 4 * (64 * 64 + 64) + 64 + (64 * 256 + 256) + (256 * 64 + 64);
  const std::int64_t expected = tok + pos + 4 * block + 64 + (64 * 2 + 2);
  CHECK(expected == 224386);

  auto m = init_model(preset_config("micro"), 1);
  CHECK(count_trainable(m).total == expected);
  CHECK(count_trainable(m).trainable == expected);  // everything starts trainable
  CHECK(count_trainable(m).fraction == 1.0);
}

TEST_CASE("enumeration yields unique names and matches the shape walk") {
  auto m = init_model(preset_config("micro"), 3);
  LoraConfig lc;
  attach_lora(m, lc, 3);

  std::vector<std::pair<std::string, Shape>> from_model;
  for_each_parameter(m, [&](const std::string& n, const Tensor<float>& t) {
    from_model.emplace_back(n, t.shape());
  });
  std::set<std::string> names;
  for (auto& [n, s] : from_model) names.insert(n);
  CHECK(names.size() == from_model.size());

  std::vector<std::pair<std::string, Shape>> from_shapes;
  for_each_parameter_shape(m.config, PeftMethod::lora, &lc, nullptr,
                           [&](const std::string& n, const Shape& s) {
                             from_shapes.emplace_back(n, s);
                           });
  REQUIRE(from_model.size() == from_shapes.size());
  for (std::size_t i = 0; i < from_model.size(); ++i) {
    CHECK(from_model[i].first == from_shapes[i].first);
    CHECK(from_model[i].second == from_shapes[i].second);
  }
  CHECK(names.count("blocks.3.attn.k_proj.weight") == 1);
  CHECK(names.count("lora.3.v_proj.A") == 1);
}

TEST_CASE("initialization is seed-deterministic, bitwise") {
  auto a = init_model(preset_config("micro"), 42);
  auto b = init_model(preset_config("micro"), 42);
  auto c = init_model(preset_config("micro"), 43);
  bool same = true, different = false;
  for_each_parameter(a, [&](const std::string& name, const Tensor<float>& ta) {
    for_each_parameter(b, [&](const std::string& nb, const Tensor<float>& tb) {
      if (nb == name && ta.value() != tb.value()) same = false;
    });
    for_each_parameter(c, [&](const std::string& nc, const Tensor<float>& tc) {
      if (nc == name && ta.value() != tc.value()) different = true;
    });
  });
  CHECK(same);
  CHECK(different);
}

TEST_CASE("initial statistics: zero biases, unit norms, small weights") {
  auto m = init_model(preset_config("micro"), 9);
  CHECK(m.head_bias.value().cwiseAbs().maxCoeff() == 0.0f);
  CHECK(m.blocks[0].q_proj.bias.value().cwiseAbs().maxCoeff() == 0.0f);
  CHECK(m.blocks[2].norm1_weight.value().minCoeff() == 1.0f);
  CHECK(m.final_norm_weight.value().maxCoeff() == 1.0f);
  // sample standard deviation of a big weight tensor should sit near 0.02
  const auto& w = m.tok_embedding.value();
  float mean = w.mean();
  float var = (w.array() - mean).square().mean();
  CHECK(std::abs(mean) < 0.001f);
  CHECK(std::sqrt(var) > 0.018f);
  CHECK(std::sqrt(var) < 0.022f);
}

TEST_CASE("causal_mask shape and lower-triangular structure") {
  MaskMatrix one = causal_mask(1);
  CHECK(one(0, 0));
  MaskMatrix m = causal_mask(3);
  int allowed = 0;
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) {
      if (m(i, j)) ++allowed;
      CHECK(m(i, j) == (j <= i));
    }
  CHECK(allowed == 6);
  CHECK_THROWS_AS(causal_mask(0), ContractError);
}

TEST_CASE("forward produces one logit row per example") {
  auto m = init_model(preset_config("micro"), 11);
  TokenMatrix toks = tokens_of({{kBosId, 65, 66, kPadId}, {kBosId, 70, kPadId, kPadId}});
  MaskMatrix mask = mask_of({{true, true, true, false}, {true, true, false, false}});
  Tensor<float> logits = forward_logits(m, toks, mask, false);
  CHECK(logits.shape() == Shape{2, 2});
  CHECK(logits.all_finite());

  // repeated evaluation is bitwise identical
  Tensor<float> again = forward_logits(m, toks, mask, false);
  CHECK(logits.value() == again.value());
}

TEST_CASE("appended pad positions do not change the logits") {
  auto m = init_model(preset_config("micro"), 13);
  TokenMatrix a = tokens_of({{kBosId, 72, 73, 74}});
  MaskMatrix am = mask_of({{true, true, true, true}});
  TokenMatrix b = tokens_of({{kBosId, 72, 73, 74, kPadId, kPadId, kPadId}});
  MaskMatrix bm = mask_of({{true, true, true, true, false, false, false}});
  Tensor<float> la = forward_logits(m, a, am, false);
  Tensor<float> lb = forward_logits(m, b, bm, false);
  CHECK((la.value() - lb.value()).cwiseAbs().maxCoeff() <= 1e-5f);
}

TEST_CASE("causality: perturbing a token leaves earlier positions intact") {
  auto m = init_model(preset_config("micro"), 17);
  std::vector<int> ids{kBosId, 65, 66, 67, 68, 69};
  std::vector<bool> real(6, true);
  std::vector<Tensor<float>> blocks_a, blocks_b;
  forward_hidden(m, ids, real, false, nullptr, &blocks_a);
  std::vector<int> ids2 = ids;
  ids2[3] = 90;  // change position 3 only
  forward_hidden(m, ids2, real, false, nullptr, &blocks_b);
  REQUIRE(blocks_a.size() == 4);
  for (std::size_t l = 0; l < blocks_a.size(); ++l) {
    auto da = blocks_a[l].mat();
    auto db = blocks_b[l].mat();
    for (Index row = 0; row < 3; ++row)
      CHECK((da.row(row) - db.row(row)).cwiseAbs().maxCoeff() == 0.0f);
    // and the perturbed position itself must differ somewhere
    if (l == 0) CHECK((da.row(3) - db.row(3)).cwiseAbs().maxCoeff() > 0.0f);
  }
}

TEST_CASE("permuting a batch permutes the logit rows identically") {
  auto m = init_model(preset_config("micro"), 19);
  TokenMatrix toks = tokens_of({{kBosId, 65, 66}, {kBosId, 80, 81}, {kBosId, 99, kPadId}});
  MaskMatrix mask = mask_of({{true, true, true}, {true, true, true}, {true, true, false}});
  Tensor<float> l1 = forward_logits(m, toks, mask, false);
  TokenMatrix perm = tokens_of({{kBosId, 99, kPadId}, {kBosId, 65, 66}, {kBosId, 80, 81}});
  MaskMatrix pmask = mask_of({{true, true, false}, {true, true, true}, {true, true, true}});
  Tensor<float> l2 = forward_logits(m, perm, pmask, false);
  CHECK((l2.mat().row(0) - l1.mat().row(2)).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((l2.mat().row(1) - l1.mat().row(0)).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((l2.mat().row(2) - l1.mat().row(1)).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("forward input validation") {
  auto m = init_model(preset_config("micro"), 23);
  TokenMatrix toks = tokens_of({{kBosId, 300}});
  MaskMatrix mask = mask_of({{true, true}});
  CHECK_THROWS_AS(forward_logits(m, toks, mask, false), IndexError);

  TokenMatrix long_toks(1, 129);
  long_toks.setConstant(65);
  MaskMatrix long_mask(1, 129);
  long_mask.setConstant(true);
  CHECK_THROWS_AS(forward_logits(m, long_toks, long_mask, false), DimensionError);

  TokenMatrix padonly = tokens_of({{kPadId, kPadId}});
  MaskMatrix nomask = mask_of({{false, false}});
  CHECK_THROWS_AS(forward_logits(m, padonly, nomask, false), ContractError);

  MaskMatrix wrong(2, 2);
  wrong.setConstant(true);
  CHECK_THROWS_AS(forward_logits(m, toks, wrong, false), DimensionError);
}

TEST_CASE("backward reaches every trainable parameter") {
  auto m = init_model(preset_config("micro"), 29);
  TokenMatrix toks = tokens_of({{kBosId, 65, 66, 67}});
  MaskMatrix mask = mask_of({{true, true, true, true}});
  Tape<float> tape;
  {
    Tape<float>::Scope scope(tape);
    Tensor<float> logits = forward_logits(m, toks, mask, false);
    backward(nll_loss(logits, {1}));
  }
  int with_grad = 0, total = 0;
  for_each_parameter(m, [&](const std::string& name, const Tensor<float>& t) {
    ++total;
    if (t.has_grad()) {
      ++with_grad;
      CHECK(t.grad().allFinite());
    } else {
      FAIL_CHECK("no gradient reached ", name);
    }
  });
  CHECK(with_grad == total);
}

TEST_CASE("predict_classes breaks ties toward class 0") {
  Tensor<float> logits = Tensor<float>::from_values({3, 2}, {1.f, 2.f, 2.f, 2.f, 5.f, -1.f});
  auto pred = predict_classes(logits);
  CHECK(pred == std::vector<int>{1, 0, 0});
}

TEST_CASE("grad_check through a whole transformer block") {
  ModelConfig cfg = preset_config("micro");
  auto mf = init_model<float>(cfg, 31);
  auto md = init_model<double>(cfg, 31);
  const Index len = 5;
  Rng rng(37);
  Tensor<float> x = random_tensor({len, cfg.d_model}, rng, -1.f, 1.f);

  auto f = [&]<class S>(const Tensor<S>& t) {
    const ClassifierModel<S>* m;
    if constexpr (std::is_same_v<S, float>)
      m = &mf;
    else
      m = &md;
    Tensor<S> mask_add(Shape{len, len});
    for (Index i = 0; i < len; ++i)
      for (Index j = 0; j < len; ++j)
        mask_add.mat()(i, j) = j <= i ? S(0) : S(kMaskValue);
    Tensor<S> h =
        detail::block_forward(m->blocks[0], t, mask_add, cfg.n_heads, false, nullptr);
    Tensor<S> logits = add_bias(matmul(slice_rows(h, len - 1, 1), m->head_weight), m->head_bias);
    return nll_loss(logits, {1});
  };
  CHECK(grad_check(f, x, 1e-3, 24) <= 1e-2);
}
