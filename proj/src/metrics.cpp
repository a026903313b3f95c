#include "hatetiny/metrics.hpp"

#include <json.hpp>
#include <numeric>

#include "hatetiny/train.hpp"

namespace hatetiny {

namespace {

double ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double f1_of(double precision, double recall) {
  return precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

}  // namespace

Metrics metrics_from_confusion(std::int64_t tp, std::int64_t fp, std::int64_t tn,
                               std::int64_t fn) {
  if (tp < 0 || fp < 0 || tn < 0 || fn < 0)
    throw ContractError("metrics_from_confusion: negative counts");
  const std::int64_t total = tp + fp + tn + fn;
  if (total == 0) throw ContractError("metrics_from_confusion: no observations");
  Metrics m;
  m.tp = tp;
  m.fp = fp;
  m.tn = tn;
  m.fn = fn;
  m.accuracy = ratio(tp + tn, total);
  m.precision = ratio(tp, tp + fp);
  m.recall = ratio(tp, tp + fn);
  m.f1 = f1_of(m.precision, m.recall);
  // macro-F1 averages the hate F1 with the nothate F1 (roles swapped)
  const double neg_precision = ratio(tn, tn + fn);
  const double neg_recall = ratio(tn, tn + fp);
  m.macro_f1 = 0.5 * (m.f1 + f1_of(neg_precision, neg_recall));
  return m;
}

Metrics compute_metrics(const std::vector<int>& predicted, const std::vector<int>& actual) {
  if (predicted.size() != actual.size())
    throw DimensionError("compute_metrics: " + std::to_string(predicted.size()) +
                         " predictions for " + std::to_string(actual.size()) + " labels");
  if (predicted.empty()) throw ContractError("compute_metrics: empty input");
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const int p = predicted[i], a = actual[i];
    if ((p != 0 && p != 1) || (a != 0 && a != 1))
      throw IndexError("compute_metrics: labels must be 0 or 1, got prediction " +
                       std::to_string(p) + " / label " + std::to_string(a) + " at index " +
                       std::to_string(i));
    if (a == 1)
      p == 1 ? ++tp : ++fn;
    else
      p == 1 ? ++fp : ++tn;
  }
  return metrics_from_confusion(tp, fp, tn, fn);
}

std::string metrics_to_json(const Metrics& m) {
  nlohmann::ordered_json j;
  j["accuracy"] = m.accuracy;
  j["precision"] = m.precision;
  j["recall"] = m.recall;
  j["f1"] = m.f1;
  j["macro_f1"] = m.macro_f1;
  j["tp"] = m.tp;
  j["fp"] = m.fp;
  j["tn"] = m.tn;
  j["fn"] = m.fn;
  return j.dump();
}

Metrics evaluate(const ClassifierModel<float>& model, const Dataset& ds, int max_seq_len,
                 int batch_size) {
  if (ds.examples.empty()) throw DataError("evaluate: empty dataset");
  if (batch_size < 1) throw ContractError("evaluate: batch_size must be at least 1");
  std::vector<int> preds, labels;
  preds.reserve(ds.examples.size());
  labels.reserve(ds.examples.size());
  for (std::size_t at = 0; at < ds.examples.size();
       at += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(ds.examples.size(), at + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> idx(end - at);
    std::iota(idx.begin(), idx.end(), at);
    Batch b = pack_batch(ds, idx, max_seq_len);
    Tensor<float> logits = forward_logits(model, b.tokens, b.pad_mask, false);
    std::vector<int> p = predict_classes(logits);
    preds.insert(preds.end(), p.begin(), p.end());
    labels.insert(labels.end(), b.labels.begin(), b.labels.end());
  }
  return compute_metrics(preds, labels);
}

}  // namespace hatetiny
