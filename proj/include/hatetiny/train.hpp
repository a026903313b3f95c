#pragma once

#include <cstdint>
#include <vector>

#include "hatetiny/data.hpp"
#include "hatetiny/model.hpp"
#include "hatetiny/peft.hpp"

namespace hatetiny {

struct TrainConfig {
  PeftMethod method = PeftMethod::none;
  int epochs = 3;
  int batch_size = 8;
  double learning_rate = 1e-3;
  double weight_decay = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int max_seq_len = 128;
  std::uint64_t seed = 0;

  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Per-method defaults: LoRA runs 3 epochs, adapters 5, and both share
// batch size 8 with decoupled weight decay 0.001.
TrainConfig train_preset(PeftMethod method);

struct Batch {
  TokenMatrix tokens;
  MaskMatrix pad_mask;
  std::vector<int> labels;
};

// Tokenizes the selected examples and pads them to the longest sequence in
// the selection.
Batch pack_batch(const Dataset& ds, const std::vector<std::size_t>& idx, int max_seq_len);

// Shuffles with a stream derived from (seed, epoch) and chunks into batches;
// a short final batch is kept.
std::vector<Batch> make_batches(const Dataset& ds, int batch_size, std::uint64_t seed,
                                int epoch, int max_seq_len);

// AdamW with decoupled weight decay. Moment slots are keyed by position, so
// every step must receive the same parameter list; gradients are consumed
// and cleared by the step.
class AdamW {
 public:
  explicit AdamW(const TrainConfig& cfg);
  void step(const std::vector<Tensor<float>*>& params);
  std::int64_t step_count() const { return t_; }

 private:
  struct Slot {
    VecX<float> m, v;
  };
  std::vector<Slot> slots_;
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  std::int64_t t_ = 0;
};

struct TrainReport {
  std::vector<double> epoch_loss;      // mean training loss per epoch
  std::vector<double> epoch_accuracy;  // training accuracy per epoch
  std::int64_t steps = 0;
  TrainableCount trainable;
  double wall_seconds = 0.0;
};

// Full training loop: shuffled batches, forward in train mode, reverse-mode
// backward, one AdamW step per batch. The model must already be prepared
// for cfg.method (attach_lora / attach_adapters / freeze for head-only).
TrainReport train(ClassifierModel<float>& model, const Dataset& ds, const TrainConfig& cfg);

}  // namespace hatetiny
