#pragma once

#include <string>

#include "hatetiny/rng.hpp"
#include "hatetiny/tensor.hpp"

namespace hatetiny::testutil {

inline Tensor<float> random_tensor(Shape shape, Rng& rng, float lo = -2.0f, float hi = 2.0f) {
  Tensor<float> t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i)
    t.value()[i] = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

inline std::string fixtures_dir() { return HATETINY_FIXTURES_DIR; }
inline std::string configs_dir() { return HATETINY_CONFIGS_DIR; }
inline std::string cli_path() { return HATETINY_CLI_PATH; }

}  // namespace hatetiny::testutil
