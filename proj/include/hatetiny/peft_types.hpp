#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "hatetiny/errors.hpp"
#include "hatetiny/tensor.hpp"

namespace hatetiny {

enum class PeftMethod { none, lora, adapter };

inline std::string to_string(PeftMethod m) {
  switch (m) {
    case PeftMethod::none: return "none";
    case PeftMethod::lora: return "lora";
    case PeftMethod::adapter: return "adapter";
  }
  return "none";
}

inline PeftMethod peft_method_from_string(const std::string& s) {
  if (s == "none") return PeftMethod::none;
  if (s == "lora") return PeftMethod::lora;
  if (s == "adapter") return PeftMethod::adapter;
  throw ConfigError("unknown method '" + s + "' (expected none, lora or adapter)");
}

struct LoraConfig {
  int r = 2;
  double alpha = 16.0;
  double dropout = 0.05;
  std::vector<std::string> target_modules{"k_proj", "v_proj"};

  double scaling() const { return alpha / static_cast<double>(r); }

  void validate() const {
    if (r < 1) throw ConfigError("lora.r must be at least 1, got " + std::to_string(r));
    if (!(alpha > 0)) throw ConfigError("lora.alpha must be positive");
    if (dropout < 0.0 || dropout >= 1.0)
      throw ConfigError("lora.dropout must lie in [0, 1), got " + std::to_string(dropout));
    if (target_modules.empty()) throw ConfigError("lora.target_modules must not be empty");
    static const std::vector<std::string> known{"q_proj", "k_proj", "v_proj", "o_proj"};
    for (const auto& t : target_modules) {
      if (std::find(known.begin(), known.end(), t) == known.end())
        throw ConfigError("lora.target_modules: unknown module '" + t +
                          "' (expected q_proj, k_proj, v_proj or o_proj)");
      if (std::count(target_modules.begin(), target_modules.end(), t) != 1)
        throw ConfigError("lora.target_modules: duplicate module '" + t + "'");
    }
  }

  friend bool operator==(const LoraConfig&, const LoraConfig&) = default;
};

struct AdapterConfig {
  // 0 means "derive from the model width as max(4, d_model/16)"
  int bottleneck_dim = 0;
  int positions_per_block = 2;

  int resolve_bottleneck(int d_model) const {
    int m = bottleneck_dim != 0 ? bottleneck_dim : std::max(4, d_model / 16);
    if (m < 1)
      throw ConfigError("adapter.bottleneck_dim must be at least 1, got " + std::to_string(m));
    return m;
  }

  void validate() const {
    if (bottleneck_dim < 0)
      throw ConfigError("adapter.bottleneck_dim must not be negative, got " +
                        std::to_string(bottleneck_dim));
    if (positions_per_block != 2)
      throw ConfigError("adapter.positions_per_block is fixed at 2, got " +
                        std::to_string(positions_per_block));
  }

  friend bool operator==(const AdapterConfig&, const AdapterConfig&) = default;
};

// Low-rank delta attached to one projection: the effective weight becomes
// W + scaling * A^T B^T with A (r x d_in) and B (d_out x r).
template <class S>
struct LoraAdapter {
  Tensor<S> A;
  Tensor<S> B;
  double scaling = 0.0;
  double dropout = 0.0;
};

// Bottleneck residual block: h + W_up^T gelu(W_down^T h) in column notation,
// stored row-major as w_down (d x m) and w_up (m x d).
template <class S>
struct BottleneckAdapter {
  Tensor<S> w_down, b_down;
  Tensor<S> w_up, b_up;
};

}  // namespace hatetiny
