#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hatetiny/model.hpp"
#include "hatetiny/peft_types.hpp"
#include "hatetiny/train.hpp"

namespace hatetiny {

// One experiment description: which model, which fine-tuning method, how to
// train it. Parsed from JSON; unknown keys are rejected so typos fail loudly.
//
// Schema (all fields optional unless noted):
//   model    preset name ("tinyllama", "phi2", "opt13b", "micro", default
//            "micro") or an inline object with all of n_layers, n_heads,
//            d_model, d_ff, vocab_size, max_seq_len, n_classes
//   method   "none" | "lora" | "adapter" (default "none")
//   seed     non-negative integer (default 0)
//   lora     r, alpha, dropout, target_modules (defaults 2 / 16.0 / 0.05 /
//            ["k_proj","v_proj"])
//   adapter  bottleneck_dim (default 0 = derive max(4, d_model/16)),
//            positions_per_block (fixed at 2)
//   train    epochs, batch_size, learning_rate, weight_decay, beta1, beta2,
//            eps, max_seq_len; defaults come from train_preset(method),
//            max_seq_len defaults to the model's max_seq_len
struct RunConfig {
  ModelConfig model;
  std::string model_preset;  // empty when the model was given inline
  PeftMethod method = PeftMethod::none;
  std::uint64_t seed = 0;
  LoraConfig lora;
  AdapterConfig adapter;
  TrainConfig train;

  // which optional sections the source text actually contained
  bool lora_section_present = false;
  bool adapter_section_present = false;

  void validate() const;
};

RunConfig parse_run_config(const std::string& json_text, const std::string& origin);
RunConfig load_run_config(const std::filesystem::path& path);

// Canonical form: fixed key order, only the active method's section emitted.
// parse(serialize(parse(x))) == parse(x) and the bytes are stable, which is
// what config hashing and checkpoint embedding rely on.
std::string serialize_run_config(const RunConfig& cfg);

// 16 hex digits over the canonical serialization.
std::string config_hash(const RunConfig& cfg);

// Human-readable notes about sections that are present but ignored under the
// chosen method. Callers print these to stderr.
std::vector<std::string> config_warnings(const RunConfig& cfg);

}  // namespace hatetiny
