#include "hatetiny/gradcheck_suite.hpp"

#include "hatetiny/gradcheck.hpp"
#include "hatetiny/model.hpp"

namespace hatetiny {

namespace {

Tensor<float> random_tensor(Shape shape, Rng& rng, float lo = -1.5f, float hi = 1.5f) {
  Tensor<float> t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i)
    t.value()[i] = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed) {
  std::vector<GradCheckResult> results;
  Rng rng = named_stream(seed, "grad_check.inputs");
  auto check = [&](const char* name, auto&& f, const Tensor<float>& point, int samples) {
    results.push_back({name, grad_check(f, point, 1e-3, samples, seed)});
  };

  Tensor<float> x45 = random_tensor({4, 5}, rng);
  Tensor<float> x46 = random_tensor({4, 6}, rng);
  Tensor<float> w53 = random_tensor({5, 3}, rng);
  Tensor<float> w64 = random_tensor({6, 4}, rng);
  Tensor<float> bias5 = random_tensor({5}, rng);
  Tensor<float> norm_w = random_tensor({6}, rng, 0.6f, 1.4f);
  Tensor<float> table = random_tensor({7, 4}, rng);

  check("sum", []<class S>(const Tensor<S>& t) { return sum(t); }, x45, 20);
  check("scale", []<class S>(const Tensor<S>& t) { return sum(scale(t, S(1.7))); }, x45, 20);
  check("add", []<class S>(const Tensor<S>& t) { return sum(add(t, t)); }, x45, 20);
  check(
      "matmul",
      [&]<class S>(const Tensor<S>& t) {
        return add(sum(matmul(t, tensor_cast<S>(w53))),
                   sum(matmul(tensor_cast<S>(w64), t)));
      },
      x45, 20);
  check(
      "add_bias",
      [&]<class S>(const Tensor<S>& t) { return sum(add_bias(t, tensor_cast<S>(bias5))); },
      x45, 20);
  check("transpose", []<class S>(const Tensor<S>& t) { return sum(transpose(t)); }, x45, 20);
  check(
      "slice_rows",
      []<class S>(const Tensor<S>& t) {
        return sum(add(slice_rows(t, 0, 2), slice_rows(t, 2, 2)));
      },
      x45, 20);
  check(
      "slice_cols",
      []<class S>(const Tensor<S>& t) {
        return sum(add(slice_cols(t, 0, 2), scale(slice_cols(t, 2, 2), S(2))));
      },
      x45, 20);
  check(
      "concat_rows",
      []<class S>(const Tensor<S>& t) {
        return sum(concat_rows<S>({slice_rows(t, 2, 2), slice_rows(t, 0, 2)}));
      },
      x45, 20);
  check(
      "concat_cols",
      []<class S>(const Tensor<S>& t) {
        return sum(concat_cols<S>({slice_cols(t, 3, 2), slice_cols(t, 0, 3)}));
      },
      x45, 20);
  check(
      "softmax",
      []<class S>(const Tensor<S>& t) {
        Tensor<S> r = softmax(t, 1);
        Tensor<S> c = softmax(t, 0);
        return add(sum(matmul(r, transpose(r))), sum(matmul(transpose(c), c)));
      },
      x46, 24);
  check(
      "rms_norm",
      [&]<class S>(const Tensor<S>& t) {
        return sum(rms_norm(t, tensor_cast<S>(norm_w), S(1e-5)));
      },
      x46, 24);
  check("gelu", []<class S>(const Tensor<S>& t) { return sum(gelu(t)); }, x46, 24);
  check(
      "embedding_lookup",
      []<class S>(const Tensor<S>& t) {
        return sum(gelu(embedding_lookup(t, {0, 3, 3, 6})));
      },
      table, 28);
  check(
      "nll_loss", []<class S>(const Tensor<S>& t) { return nll_loss(t, {0, 1, 1, 0}); },
      x46, 24);
  check(
      "dropout",
      []<class S>(const Tensor<S>& t) {
        Rng r(555);  // mask depends only on numel, so every evaluation at
                     // either precision sees the same pattern
        return sum(dropout(t, 0.3, r));
      },
      x45, 20);

  // one full pre-norm block with attention, adapters off, plus the head
  {
    ModelConfig cfg = preset_config("micro");
    auto mf = init_model<float>(cfg, seed + 1);
    auto md = init_model<double>(cfg, seed + 1);
    const Index len = 5;
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
      Tensor<S> logits =
          add_bias(matmul(slice_rows(h, len - 1, 1), m->head_weight), m->head_bias);
      return nll_loss(logits, {1});
    };
    check("micro_block", f, x, 24);
  }

  return results;
}

bool gradcheck_suite_passed(const std::vector<GradCheckResult>& results) {
  for (const GradCheckResult& r : results)
    if (!(r.max_rel_err <= kGradCheckThreshold)) return false;
  return !results.empty();
}

}  // namespace hatetiny
