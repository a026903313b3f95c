#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "hatetiny/ops.hpp"
#include "hatetiny/peft_types.hpp"
#include "hatetiny/rng.hpp"
#include "hatetiny/vocab.hpp"

namespace hatetiny {

using TokenMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MaskMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr float kNormEps = 1e-5f;
inline constexpr float kMaskValue = -1e9f;

struct ModelConfig {
  int n_layers = 0;
  int n_heads = 0;
  int d_model = 0;
  int d_ff = 0;
  int vocab_size = kVocabSize;
  int max_seq_len = 0;
  int n_classes = 2;

  int head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (n_layers < 1) throw ConfigError("model.n_layers must be at least 1");
    if (n_heads < 1) throw ConfigError("model.n_heads must be at least 1");
    if (d_model < 1) throw ConfigError("model.d_model must be at least 1");
    if (d_model % n_heads != 0)
      throw ConfigError("model.d_model (" + std::to_string(d_model) +
                        ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
    if (d_ff < 1) throw ConfigError("model.d_ff must be at least 1");
    if (vocab_size < kVocabSize)
      throw ConfigError("model.vocab_size must cover the byte vocabulary (at least " +
                        std::to_string(kVocabSize) + ")");
    if (max_seq_len < 1) throw ConfigError("model.max_seq_len must be at least 1");
    if (n_classes < 2) throw ConfigError("model.n_classes must be at least 2");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Named presets. The three published sizes keep their cited layer, head and
// width counts; d_ff defaults to 4*d_model. micro is small enough to train
// on one CPU core.
inline ModelConfig preset_config(const std::string& name) {
  if (name == "tinyllama") return ModelConfig{22, 16, 2048, 8192, kVocabSize, 2048, 2};
  if (name == "phi2") return ModelConfig{24, 32, 1024, 4096, kVocabSize, 2048, 2};
  if (name == "opt13b") return ModelConfig{24, 32, 2048, 8192, kVocabSize, 2048, 2};
  if (name == "micro") return ModelConfig{4, 4, 64, 256, kVocabSize, 128, 2};
  throw ConfigError("unknown model preset '" + name +
                    "' (expected tinyllama, phi2, opt13b or micro)");
}

template <class S>
struct Projection {
  Tensor<S> weight;  // d_in x d_out
  Tensor<S> bias;    // d_out
  std::optional<LoraAdapter<S>> lora;
};

template <class S>
struct TransformerBlock {
  Tensor<S> norm1_weight;
  Projection<S> q_proj, k_proj, v_proj, o_proj;
  Tensor<S> norm2_weight;
  Tensor<S> mlp_in_weight, mlp_in_bias;
  Tensor<S> mlp_out_weight, mlp_out_bias;
  std::optional<BottleneckAdapter<S>> post_attn_adapter, post_mlp_adapter;
};

// Decoder-only pre-norm transformer with a linear classification head read
// from the last non-pad position.
template <class S>
struct ClassifierModel {
  ModelConfig config;
  Tensor<S> tok_embedding;  // vocab_size x d_model
  Tensor<S> pos_embedding;  // max_seq_len x d_model
  std::vector<TransformerBlock<S>> blocks;
  Tensor<S> final_norm_weight;
  Tensor<S> head_weight;  // d_model x n_classes
  Tensor<S> head_bias;    // n_classes
  PeftMethod attached = PeftMethod::none;
};

namespace detail {
inline const char* proj_names[4] = {"q_proj", "k_proj", "v_proj", "o_proj"};
}

// Visits every parameter as (canonical name, tensor) in a fixed order:
// embeddings, blocks in depth order, final norm, head, then any attached
// LoRA and adapter tensors. Checkpoints, optimizers and counters all rely
// on this order.
template <class S, class Fn>
void for_each_parameter(ClassifierModel<S>& m, Fn&& fn) {
  fn("tok_emb.weight", m.tok_embedding);
  fn("pos_emb.weight", m.pos_embedding);
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    auto& b = m.blocks[i];
    const std::string p = "blocks." + std::to_string(i) + ".";
    fn(p + "norm1.weight", b.norm1_weight);
    Projection<S>* projs[4] = {&b.q_proj, &b.k_proj, &b.v_proj, &b.o_proj};
    for (int j = 0; j < 4; ++j) {
      fn(p + "attn." + detail::proj_names[j] + ".weight", projs[j]->weight);
      fn(p + "attn." + detail::proj_names[j] + ".bias", projs[j]->bias);
    }
    fn(p + "norm2.weight", b.norm2_weight);
    fn(p + "mlp.in_proj.weight", b.mlp_in_weight);
    fn(p + "mlp.in_proj.bias", b.mlp_in_bias);
    fn(p + "mlp.out_proj.weight", b.mlp_out_weight);
    fn(p + "mlp.out_proj.bias", b.mlp_out_bias);
  }
  fn("final_norm.weight", m.final_norm_weight);
  fn("head.weight", m.head_weight);
  fn("head.bias", m.head_bias);
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    auto& b = m.blocks[i];
    const std::string p = "lora." + std::to_string(i) + ".";
    Projection<S>* projs[4] = {&b.q_proj, &b.k_proj, &b.v_proj, &b.o_proj};
    for (int j = 0; j < 4; ++j) {
      if (!projs[j]->lora) continue;
      fn(p + detail::proj_names[j] + ".A", projs[j]->lora->A);
      fn(p + detail::proj_names[j] + ".B", projs[j]->lora->B);
    }
  }
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    auto& b = m.blocks[i];
    const std::string p = "adapter." + std::to_string(i) + ".";
    BottleneckAdapter<S>* slots[2] = {
        b.post_attn_adapter ? &*b.post_attn_adapter : nullptr,
        b.post_mlp_adapter ? &*b.post_mlp_adapter : nullptr};
    const char* slot_names[2] = {"post_attn", "post_mlp"};
    for (int j = 0; j < 2; ++j) {
      if (!slots[j]) continue;
      fn(p + slot_names[j] + ".down.weight", slots[j]->w_down);
      fn(p + slot_names[j] + ".down.bias", slots[j]->b_down);
      fn(p + slot_names[j] + ".up.weight", slots[j]->w_up);
      fn(p + slot_names[j] + ".up.bias", slots[j]->b_up);
    }
  }
}

template <class S, class Fn>
void for_each_parameter(const ClassifierModel<S>& m, Fn&& fn) {
  for_each_parameter(const_cast<ClassifierModel<S>&>(m),
                     [&](const std::string& name, Tensor<S>& t) {
                       fn(name, static_cast<const Tensor<S>&>(t));
                     });
}

// Shape-only walk in the same order, so parameter counts for the large
// presets never require allocating them.
template <class Fn>
void for_each_parameter_shape(const ModelConfig& cfg, PeftMethod method,
                              const LoraConfig* lora, const AdapterConfig* adapter, Fn&& fn) {
  cfg.validate();
  const Index d = cfg.d_model, ff = cfg.d_ff;
  fn("tok_emb.weight", Shape{cfg.vocab_size, d});
  fn("pos_emb.weight", Shape{cfg.max_seq_len, d});
  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    fn(p + "norm1.weight", Shape{d});
    for (const char* proj : detail::proj_names) {
      fn(p + "attn." + proj + ".weight", Shape{d, d});
      fn(p + "attn." + proj + ".bias", Shape{d});
    }
    fn(p + "norm2.weight", Shape{d});
    fn(p + "mlp.in_proj.weight", Shape{d, ff});
    fn(p + "mlp.in_proj.bias", Shape{ff});
    fn(p + "mlp.out_proj.weight", Shape{ff, d});
    fn(p + "mlp.out_proj.bias", Shape{d});
  }
  fn("final_norm.weight", Shape{d});
  fn("head.weight", Shape{d, cfg.n_classes});
  fn("head.bias", Shape{cfg.n_classes});
  if (method == PeftMethod::lora) {
    if (!lora) throw ContractError("for_each_parameter_shape: lora config missing");
    lora->validate();
    for (int i = 0; i < cfg.n_layers; ++i) {
      const std::string p = "lora." + std::to_string(i) + ".";
      for (const char* proj : detail::proj_names) {
        if (std::find(lora->target_modules.begin(), lora->target_modules.end(), proj) ==
            lora->target_modules.end())
          continue;
        fn(p + proj + ".A", Shape{lora->r, d});
        fn(p + proj + ".B", Shape{d, lora->r});
      }
    }
  }
  if (method == PeftMethod::adapter) {
    if (!adapter) throw ContractError("for_each_parameter_shape: adapter config missing");
    adapter->validate();
    const Index m = adapter->resolve_bottleneck(cfg.d_model);
    for (int i = 0; i < cfg.n_layers; ++i) {
      const std::string p = "adapter." + std::to_string(i) + ".";
      for (const char* slot : {"post_attn", "post_mlp"}) {
        fn(p + slot + ".down.weight", Shape{d, m});
        fn(p + slot + ".down.bias", Shape{m});
        fn(p + slot + ".up.weight", Shape{m, d});
        fn(p + slot + ".up.bias", Shape{d});
      }
    }
  }
}

// Fresh model with N(0, 0.02^2) weights, zero biases and unit norm scales.
// Every tensor draws from its own named stream, so initialization does not
// depend on enumeration order, and all parameters start trainable.
template <class S = float>
ClassifierModel<S> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ClassifierModel<S> m;
  m.config = cfg;
  const Index d = cfg.d_model, ff = cfg.d_ff;
  m.tok_embedding = Tensor<S>(Shape{cfg.vocab_size, d});
  m.pos_embedding = Tensor<S>(Shape{cfg.max_seq_len, d});
  m.blocks.resize(static_cast<std::size_t>(cfg.n_layers));
  for (auto& b : m.blocks) {
    b.norm1_weight = Tensor<S>(Shape{d});
    for (Projection<S>* pr : {&b.q_proj, &b.k_proj, &b.v_proj, &b.o_proj}) {
      pr->weight = Tensor<S>(Shape{d, d});
      pr->bias = Tensor<S>(Shape{d});
    }
    b.norm2_weight = Tensor<S>(Shape{d});
    b.mlp_in_weight = Tensor<S>(Shape{d, ff});
    b.mlp_in_bias = Tensor<S>(Shape{ff});
    b.mlp_out_weight = Tensor<S>(Shape{ff, d});
    b.mlp_out_bias = Tensor<S>(Shape{d});
  }
  m.final_norm_weight = Tensor<S>(Shape{d});
  m.head_weight = Tensor<S>(Shape{d, cfg.n_classes});
  m.head_bias = Tensor<S>(Shape{cfg.n_classes});

  for_each_parameter(m, [&](const std::string& name, Tensor<S>& t) {
    t.set_requires_grad(true);
    if (name.ends_with(".bias")) return;  // stays zero
    if (name.find("norm") != std::string::npos) {
      t.value().setConstant(S(1));
      return;
    }
    Rng rng = named_stream(seed, "init." + name);
    for (Index i = 0; i < t.numel(); ++i)
      t.value()[i] = static_cast<S>(rng.normal() * 0.02);
  });
  return m;
}

// L x L lower-triangular mask: entry (i, j) is true when position i may
// attend to position j.
inline MaskMatrix causal_mask(Index len) {
  if (len < 1) throw ContractError("causal_mask: length must be at least 1");
  MaskMatrix m(len, len);
  for (Index i = 0; i < len; ++i)
    for (Index j = 0; j < len; ++j) m(i, j) = j <= i;
  return m;
}

namespace detail {

// Linear layer plus the low-rank delta when LoRA is attached. Dropout only
// applies to the delta path and only in train mode.
template <class S>
Tensor<S> proj_forward(const Projection<S>& p, const Tensor<S>& x, bool train_mode,
                       Rng* dropout_rng) {
  Tensor<S> y = add_bias(matmul(x, p.weight), p.bias);
  if (p.lora) {
    Tensor<S> in = x;
    if (train_mode && p.lora->dropout > 0.0) {
      if (dropout_rng == nullptr)
        throw ContractError("forward: train mode with LoRA dropout needs an RNG");
      in = dropout(x, p.lora->dropout, *dropout_rng);
    }
    Tensor<S> delta = matmul(matmul(in, transpose(p.lora->A)), transpose(p.lora->B));
    y = add(y, scale(delta, static_cast<S>(p.lora->scaling)));
  }
  return y;
}

template <class S>
Tensor<S> adapter_forward(const BottleneckAdapter<S>& a, const Tensor<S>& h) {
  Tensor<S> z = gelu(add_bias(matmul(h, a.w_down), a.b_down));
  return add(h, add_bias(matmul(z, a.w_up), a.b_up));
}

template <class S>
Tensor<S> attention_forward(const TransformerBlock<S>& b, const Tensor<S>& x,
                            const Tensor<S>& mask_add, int n_heads, bool train_mode,
                            Rng* dropout_rng) {
  const Index d = x.dim(1);
  const Index hd = d / n_heads;
  Tensor<S> q = proj_forward(b.q_proj, x, train_mode, dropout_rng);
  Tensor<S> k = proj_forward(b.k_proj, x, train_mode, dropout_rng);
  Tensor<S> v = proj_forward(b.v_proj, x, train_mode, dropout_rng);
  const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(hd));
  std::vector<Tensor<S>> parts;
  parts.reserve(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    Tensor<S> qh = slice_cols(q, h * hd, hd);
    Tensor<S> kh = slice_cols(k, h * hd, hd);
    Tensor<S> vh = slice_cols(v, h * hd, hd);
    Tensor<S> scores = add(scale(matmul(qh, transpose(kh)), inv_sqrt), mask_add);
    Tensor<S> weights = softmax(scores, 1);
    parts.push_back(matmul(weights, vh));
  }
  Tensor<S> ctx = concat_cols(parts);
  return proj_forward(b.o_proj, ctx, train_mode, dropout_rng);
}

template <class S>
Tensor<S> block_forward(const TransformerBlock<S>& b, const Tensor<S>& h_in,
                        const Tensor<S>& mask_add, int n_heads, bool train_mode,
                        Rng* dropout_rng) {
  Tensor<S> h = h_in;
  Tensor<S> attn_in = rms_norm(h, b.norm1_weight, S(kNormEps));
  h = add(h, attention_forward(b, attn_in, mask_add, n_heads, train_mode, dropout_rng));
  if (b.post_attn_adapter) h = adapter_forward(*b.post_attn_adapter, h);
  Tensor<S> mlp_in = rms_norm(h, b.norm2_weight, S(kNormEps));
  Tensor<S> z = gelu(add_bias(matmul(mlp_in, b.mlp_in_weight), b.mlp_in_bias));
  Tensor<S> mlp_out = add_bias(matmul(z, b.mlp_out_weight), b.mlp_out_bias);
  h = add(h, mlp_out);
  if (b.post_mlp_adapter) h = adapter_forward(*b.post_mlp_adapter, h);
  return h;
}

}  // namespace detail

// Runs one sequence through the stack and returns the hidden states after
// the final norm (L x d_model). real[t] marks non-pad positions: they feed
// the attention mask, and block_outputs (when given) receives each block's
// output for inspection.
template <class S>
Tensor<S> forward_hidden(const ClassifierModel<S>& m, const std::vector<int>& ids,
                         const std::vector<bool>& real, bool train_mode,
                         Rng* dropout_rng = nullptr,
                         std::vector<Tensor<S>>* block_outputs = nullptr) {
  const Index len = static_cast<Index>(ids.size());
  if (len < 1 || len > m.config.max_seq_len)
    throw DimensionError("forward: sequence length " + std::to_string(len) +
                         " outside [1, " + std::to_string(m.config.max_seq_len) + "]");
  if (real.size() != ids.size())
    throw DimensionError("forward: pad mask length does not match sequence length");
  if (std::find(real.begin(), real.end(), true) == real.end())
    throw ContractError("forward: every sequence needs at least one non-pad position");
  for (std::size_t t = 0; t < ids.size(); ++t)
    if (ids[t] < 0 || ids[t] >= m.config.vocab_size)
      throw IndexError("forward: token id " + std::to_string(ids[t]) + " at position " +
                       std::to_string(t) + " out of range [0, " +
                       std::to_string(m.config.vocab_size) + ")");

  // additive attention mask: position i sees position j only when j <= i
  // and j is a real token
  Tensor<S> mask_add(Shape{len, len});
  auto mm = mask_add.mat();
  for (Index i = 0; i < len; ++i)
    for (Index j = 0; j < len; ++j)
      mm(i, j) = (j <= i && real[static_cast<std::size_t>(j)]) ? S(0) : S(kMaskValue);

  Tensor<S> h = add(embedding_lookup(m.tok_embedding, ids),
                    slice_rows(m.pos_embedding, 0, len));
  for (const auto& b : m.blocks) {
    h = detail::block_forward(b, h, mask_add, m.config.n_heads, train_mode, dropout_rng);
    if (block_outputs) block_outputs->push_back(h);
  }
  return rms_norm(h, m.final_norm_weight, S(kNormEps));
}

// Batched forward producing one logit row per example, read at the last
// non-pad position. pad_mask(b, t) is true for real tokens.
template <class S>
Tensor<S> forward_logits(const ClassifierModel<S>& m, const TokenMatrix& tokens,
                         const MaskMatrix& pad_mask, bool train_mode,
                         Rng* dropout_rng = nullptr) {
  if (tokens.rows() < 1 || tokens.cols() < 1)
    throw DimensionError("forward: empty token batch");
  if (pad_mask.rows() != tokens.rows() || pad_mask.cols() != tokens.cols())
    throw DimensionError("forward: pad mask shape does not match token shape");
  const Index bsz = tokens.rows(), len = tokens.cols();
  std::vector<Tensor<S>> rows;
  rows.reserve(static_cast<std::size_t>(bsz));
  for (Index b = 0; b < bsz; ++b) {
    std::vector<int> ids(static_cast<std::size_t>(len));
    std::vector<bool> real(static_cast<std::size_t>(len));
    Index last = -1;
    for (Index t = 0; t < len; ++t) {
      ids[static_cast<std::size_t>(t)] = tokens(b, t);
      real[static_cast<std::size_t>(t)] = pad_mask(b, t);
      if (pad_mask(b, t)) last = t;
    }
    Tensor<S> h = forward_hidden(m, ids, real, train_mode, dropout_rng);
    Tensor<S> pooled = slice_rows(h, last, 1);
    rows.push_back(add_bias(matmul(pooled, m.head_weight), m.head_bias));
  }
  return concat_rows(rows);
}

// Class prediction per logit row; ties resolve to the lower class index.
template <class S>
std::vector<int> predict_classes(const Tensor<S>& logits) {
  if (logits.rank() != 2)
    throw DimensionError("predict_classes: logits must be rank 2, got " +
                         shape_str(logits.shape()));
  std::vector<int> out(static_cast<std::size_t>(logits.dim(0)));
  for (Index i = 0; i < logits.dim(0); ++i) {
    Index best = 0;
    for (Index j = 1; j < logits.dim(1); ++j)
      if (logits.mat()(i, j) > logits.mat()(i, best)) best = j;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace hatetiny
