#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hatetiny/data.hpp"
#include "hatetiny/model.hpp"

namespace hatetiny {

// Binary classification scores with hate as the positive class. Ratios with
// a zero denominator are reported as 0.
struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double macro_f1 = 0.0;
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

Metrics metrics_from_confusion(std::int64_t tp, std::int64_t fp, std::int64_t tn,
                               std::int64_t fn);
Metrics compute_metrics(const std::vector<int>& predicted, const std::vector<int>& actual);

// Fixed key set, deterministic serialization.
std::string metrics_to_json(const Metrics& m);

// Runs the model over the dataset in order (eval mode, chunks of
// batch_size) and scores the predictions.
Metrics evaluate(const ClassifierModel<float>& model, const Dataset& ds, int max_seq_len,
                 int batch_size = 64);

}  // namespace hatetiny
