#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hatetiny/data.hpp"
#include "hatetiny/metrics.hpp"
#include "hatetiny/runconfig.hpp"

namespace hatetiny {

struct CompareRow {
  PeftMethod method = PeftMethod::none;
  Metrics test;                // held-out metrics
  double train_accuracy = 0.0; // final-epoch training accuracy
  std::int64_t trainable = 0;  // parameters actually updated
  std::string hash;            // config hash of the row's effective run config
};

// Side-by-side fine-tuning comparison. All rows share one stratified
// 0.8/0.1/0.1 split and the base config's model and seed. The "none" row is
// the frozen, untrained base model (its train_accuracy is just its score on
// the train part); lora and adapter rows train with their per-method preset
// schedules, inheriting only seed and max_seq_len from the base config.
std::vector<CompareRow> compare_runs(const RunConfig& base, const Dataset& ds,
                                     const std::vector<PeftMethod>& methods);

std::string format_compare_table(const std::vector<CompareRow>& rows);

}  // namespace hatetiny
