#include "hatetiny/compare.hpp"

#include <cstdio>

#include "hatetiny/peft.hpp"
#include "hatetiny/train.hpp"

namespace hatetiny {

std::vector<CompareRow> compare_runs(const RunConfig& base, const Dataset& ds,
                                     const std::vector<PeftMethod>& methods) {
  if (methods.empty()) throw ConfigError("compare: the method list is empty");
  base.validate();
  DatasetSplit split = stratified_split(ds, SplitFractions{}, base.seed);

  std::vector<CompareRow> rows;
  for (PeftMethod m : methods) {
    RunConfig rc = base;
    rc.method = m;
    rc.train = train_preset(m);
    rc.train.seed = rc.seed;
    rc.train.max_seq_len = base.train.max_seq_len;
    rc.lora_section_present = m == PeftMethod::lora;
    rc.adapter_section_present = m == PeftMethod::adapter;
    rc.validate();

    ClassifierModel<float> model = init_model(rc.model, rc.seed);
    CompareRow row;
    row.method = m;
    row.hash = config_hash(rc);
    if (m == PeftMethod::none) {
      row.trainable = 0;
      row.train_accuracy =
          evaluate(model, split.train, rc.train.max_seq_len).accuracy;
    } else {
      if (m == PeftMethod::lora)
        attach_lora(model, rc.lora, rc.seed);
      else
        attach_adapters(model, rc.adapter, rc.seed);
      TrainReport rep = train(model, split.train, rc.train);
      row.train_accuracy = rep.epoch_accuracy.back();
      row.trainable = rep.trainable.trainable;
    }
    row.test = evaluate(model, split.test, rc.train.max_seq_len);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_compare_table(const std::vector<CompareRow>& rows) {
  std::string out =
      "method    test_acc  precision  recall      f1  macro_f1  train_acc  trainable  "
      "config\n";
  char line[256];
  for (const CompareRow& r : rows) {
    std::snprintf(line, sizeof(line),
                  "%-8s  %8.4f  %9.4f  %6.4f  %6.4f  %8.4f  %9.4f  %9lld  %s\n",
                  to_string(r.method).c_str(), r.test.accuracy, r.test.precision,
                  r.test.recall, r.test.f1, r.test.macro_f1, r.train_accuracy,
                  static_cast<long long>(r.trainable), r.hash.c_str());
    out += line;
  }
  return out;
}

}  // namespace hatetiny
