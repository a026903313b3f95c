#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hatetiny/model.hpp"

namespace hatetiny {

// Marks every backbone parameter non-trainable. The classification head and
// any attached adapters stay trainable. Idempotent.
template <class S>
void freeze_base(ClassifierModel<S>& m) {
  for_each_parameter(m, [](const std::string& name, Tensor<S>& t) {
    if (name.starts_with("head.") || name.starts_with("lora.") ||
        name.starts_with("adapter."))
      return;
    t.set_requires_grad(false);
  });
}

// Attaches low-rank adapters to the configured attention projections and
// freezes the backbone. A starts at N(0, 0.02^2), B at zero, so the model's
// function is unchanged until training moves B.
template <class S>
void attach_lora(ClassifierModel<S>& m, const LoraConfig& cfg, std::uint64_t seed) {
  if (m.attached != PeftMethod::none)
    throw StateError("attach_lora: model already has " + to_string(m.attached) +
                     " parameters attached");
  cfg.validate();
  freeze_base(m);
  const Index d = m.config.d_model;
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    auto& b = m.blocks[i];
    Projection<S>* projs[4] = {&b.q_proj, &b.k_proj, &b.v_proj, &b.o_proj};
    for (int j = 0; j < 4; ++j) {
      if (std::find(cfg.target_modules.begin(), cfg.target_modules.end(),
                    detail::proj_names[j]) == cfg.target_modules.end())
        continue;
      LoraAdapter<S> ad;
      ad.A = Tensor<S>(Shape{cfg.r, d});
      Rng rng = named_stream(seed, "lora." + std::to_string(i) + "." +
                                       detail::proj_names[j] + ".A");
      for (Index n = 0; n < ad.A.numel(); ++n)
        ad.A.value()[n] = static_cast<S>(rng.normal() * 0.02);
      ad.A.set_requires_grad(true);
      ad.B = Tensor<S>(Shape{d, cfg.r});
      ad.B.set_requires_grad(true);
      ad.scaling = cfg.scaling();
      ad.dropout = cfg.dropout;
      projs[j]->lora = std::move(ad);
    }
  }
  m.attached = PeftMethod::lora;
}

// Inserts two bottleneck adapters per block (after the attention residual
// and after the MLP residual) and freezes the backbone. The up-projection
// starts at zero, so each adapter begins as the identity.
template <class S>
void attach_adapters(ClassifierModel<S>& m, const AdapterConfig& cfg, std::uint64_t seed) {
  if (m.attached != PeftMethod::none)
    throw StateError("attach_adapters: model already has " + to_string(m.attached) +
                     " parameters attached");
  cfg.validate();
  freeze_base(m);
  const Index d = m.config.d_model;
  const Index mdim = cfg.resolve_bottleneck(m.config.d_model);
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    auto& b = m.blocks[i];
    BottleneckAdapter<S>* slots[2] = {nullptr, nullptr};
    b.post_attn_adapter.emplace();
    b.post_mlp_adapter.emplace();
    slots[0] = &*b.post_attn_adapter;
    slots[1] = &*b.post_mlp_adapter;
    const char* slot_names[2] = {"post_attn", "post_mlp"};
    for (int j = 0; j < 2; ++j) {
      auto& a = *slots[j];
      a.w_down = Tensor<S>(Shape{d, mdim});
      Rng rng = named_stream(seed, "adapter." + std::to_string(i) + "." + slot_names[j] +
                                       ".down.weight");
      for (Index n = 0; n < a.w_down.numel(); ++n)
        a.w_down.value()[n] = static_cast<S>(rng.normal() * 0.02);
      a.b_down = Tensor<S>(Shape{mdim});
      a.w_up = Tensor<S>(Shape{mdim, d});
      a.b_up = Tensor<S>(Shape{d});
      for (Tensor<S>* t : {&a.w_down, &a.b_down, &a.w_up, &a.b_up})
        t->set_requires_grad(true);
    }
  }
  m.attached = PeftMethod::adapter;
}

// Folds every low-rank delta into its frozen weight (W += scaling * A^T B^T)
// and removes the adapters. The result is a plain frozen model whose
// function matches the adapted one up to float rounding.
template <class S>
void merge_lora(ClassifierModel<S>& m) {
  if (m.attached != PeftMethod::lora)
    throw StateError("merge_lora: no LoRA parameters attached (model has " +
                     to_string(m.attached) + ")");
  for (auto& b : m.blocks) {
    for (Projection<S>* pr : {&b.q_proj, &b.k_proj, &b.v_proj, &b.o_proj}) {
      if (!pr->lora) continue;
      MatX<S> delta = pr->lora->A.mat().transpose() * pr->lora->B.mat().transpose();
      pr->weight.mat() += delta * static_cast<S>(pr->lora->scaling);
      pr->lora.reset();
    }
  }
  m.attached = PeftMethod::none;
}

struct TrainableCount {
  std::int64_t trainable = 0;
  std::int64_t total = 0;
  double fraction = 0.0;
};

// Counts parameters by the requires_grad flags on a concrete model.
// include_head=false leaves the classification head out of the trainable
// tally (the total always covers everything).
template <class S>
TrainableCount count_trainable(const ClassifierModel<S>& m, bool include_head = true) {
  TrainableCount c;
  for_each_parameter(m, [&](const std::string& name, const Tensor<S>& t) {
    c.total += t.numel();
    if (!t.requires_grad()) return;
    if (!include_head && name.starts_with("head.")) return;
    c.trainable += t.numel();
  });
  c.fraction = c.total > 0 ? static_cast<double>(c.trainable) / static_cast<double>(c.total)
                           : 0.0;
  return c;
}

// Closed-form variant computed from shapes alone, so the billion-parameter
// presets never need to be allocated. Reflects the post-attach state: the
// backbone is frozen and the adapters plus head are trainable (for
// method=none only the head is).
inline TrainableCount count_trainable_shapes(const ModelConfig& cfg, PeftMethod method,
                                             const LoraConfig* lora,
                                             const AdapterConfig* adapter,
                                             bool include_head = true) {
  TrainableCount c;
  for_each_parameter_shape(cfg, method, lora, adapter,
                           [&](const std::string& name, const Shape& shape) {
                             const std::int64_t n = shape_numel(shape);
                             c.total += n;
                             const bool head = name.starts_with("head.");
                             const bool peft =
                                 name.starts_with("lora.") || name.starts_with("adapter.");
                             if (peft || (head && include_head)) c.trainable += n;
                           });
  c.fraction = c.total > 0 ? static_cast<double>(c.trainable) / static_cast<double>(c.total)
                           : 0.0;
  return c;
}

// Trainable tensors in canonical order, for the optimizer.
template <class S>
std::vector<Tensor<S>*> trainable_parameters(ClassifierModel<S>& m) {
  std::vector<Tensor<S>*> out;
  for_each_parameter(m, [&](const std::string&, Tensor<S>& t) {
    if (t.requires_grad()) out.push_back(&t);
  });
  return out;
}

}  // namespace hatetiny
