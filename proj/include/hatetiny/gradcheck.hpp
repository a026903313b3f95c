#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include "hatetiny/ops.hpp"
#include "hatetiny/rng.hpp"
#include "hatetiny/tensor.hpp"

namespace hatetiny {

template <class To, class From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  Tensor<To> out(t.shape());
  out.value() = t.value().template cast<To>();
  return out;
}

// Compares the reverse-mode gradient of a scalar-valued function against
// central differences and returns the worst relative error over a random
// sample of coordinates:
//
//   err = |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)
//
// The reverse-mode pass runs at float precision; the finite differences are
// evaluated in double so that truncation error stays far below the
// tolerance being tested. f must therefore be callable on both
// Tensor<float> and Tensor<double>.
template <class F>
double grad_check(F&& f, const Tensor<float>& point, double eps = 1e-3, int samples = 20,
                  std::uint64_t seed = 0) {
  if (!(eps > 0.0) || eps > 0.1)
    throw ContractError("grad_check: eps must lie in (0, 0.1]");
  if (samples < 1) throw ContractError("grad_check: need at least one sample coordinate");

  Tensor<float> x = point.clone();
  x.set_requires_grad(true);
  Tape<float> tape;
  {
    typename Tape<float>::Scope scope(tape);
    Tensor<float> loss = f(x);
    if (loss.numel() != 1)
      throw ContractError("grad_check: f must return a scalar, got shape " +
                          shape_str(loss.shape()));
    tape.backward(loss);
  }
  VecX<float> g_ad =
      x.has_grad() ? x.grad() : VecX<float>(VecX<float>::Zero(x.numel()));

  Tensor<double> xd = tensor_cast<double>(point);
  std::vector<Index> coords(static_cast<std::size_t>(point.numel()));
  std::iota(coords.begin(), coords.end(), Index{0});
  Rng rng = named_stream(seed, "grad_check.coords");
  rng.shuffle(coords);
  const Index n = std::min<Index>(samples, point.numel());

  double worst = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Index c = coords[static_cast<std::size_t>(i)];
    const double orig = xd.value()[c];
    xd.value()[c] = orig + eps;
    const double fp = f(xd).scalar();
    xd.value()[c] = orig - eps;
    const double fm = f(xd).scalar();
    xd.value()[c] = orig;
    const double g_fd = (fp - fm) / (2.0 * eps);
    const double g = static_cast<double>(g_ad[c]);
    const double err = std::abs(g - g_fd) / std::max(1e-8, std::abs(g) + std::abs(g_fd));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace hatetiny
