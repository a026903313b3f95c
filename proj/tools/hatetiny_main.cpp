// hatetiny: train and evaluate a small byte-level transformer classifier
// with optional LoRA or bottleneck-adapter fine-tuning.
//
// Exit codes: 0 success, 1 usage or config problem, 2 data or file problem,
// 3 numeric failure. Timing goes to stderr so stdout stays byte-stable for
// identical inputs and seed.
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hatetiny/checkpoint.hpp"
#include "hatetiny/compare.hpp"
#include "hatetiny/gradcheck_suite.hpp"
#include "hatetiny/metrics.hpp"
#include "hatetiny/peft.hpp"
#include "hatetiny/train.hpp"

namespace {

using namespace hatetiny;

struct IoPaths {
  std::string data;
  int synthetic = 0;
  std::string config;
  std::string ckpt;
  std::string out;
  std::uint64_t seed = 0;
  bool json = false;
};

void add_dataset_flags(CLI::App* cmd, IoPaths& io) {
  auto* data = cmd->add_option("--data", io.data, "CSV file with columns text,label");
  auto* synth = cmd->add_option("--synthetic", io.synthetic,
                                "generate a balanced synthetic dataset of this size");
  data->excludes(synth);
  synth->excludes(data);
}

Dataset open_dataset(const IoPaths& io, std::uint64_t seed) {
  if (!io.data.empty()) return load_csv(io.data);
  if (io.synthetic > 0) return make_synthetic(io.synthetic, seed);
  throw ConfigError("either --data or --synthetic is required");
}

ClassifierModel<float> build_model(const RunConfig& rc) {
  ClassifierModel<float> model = init_model(rc.model, rc.seed);
  if (rc.method == PeftMethod::lora) attach_lora(model, rc.lora, rc.seed);
  if (rc.method == PeftMethod::adapter) attach_adapters(model, rc.adapter, rc.seed);
  return model;
}

void print_metrics_text(const Metrics& m) {
  std::printf("accuracy  %.4f\n", m.accuracy);
  std::printf("precision %.4f\n", m.precision);
  std::printf("recall    %.4f\n", m.recall);
  std::printf("f1        %.4f\n", m.f1);
  std::printf("macro_f1  %.4f\n", m.macro_f1);
  std::printf("tp %lld  fp %lld  tn %lld  fn %lld\n", static_cast<long long>(m.tp),
              static_cast<long long>(m.fp), static_cast<long long>(m.tn),
              static_cast<long long>(m.fn));
}

int cmd_stats(const IoPaths& io) {
  DatasetStats st = dataset_stats(load_csv(io.data));
  if (io.json) {
    nlohmann::ordered_json j{{"hate", st.hate},
                             {"nothate", st.nothate},
                             {"total", st.total()},
                             {"hate_fraction", st.hate_fraction},
                             {"nothate_fraction", st.nothate_fraction}};
    std::printf("%s\n", j.dump().c_str());
  } else {
    std::printf("hate %lld %.4f\n", static_cast<long long>(st.hate), st.hate_fraction);
    std::printf("nothate %lld %.4f\n", static_cast<long long>(st.nothate),
                st.nothate_fraction);
    std::printf("total %lld\n", static_cast<long long>(st.total()));
  }
  return 0;
}

int cmd_train(const IoPaths& io) {
  RunConfig rc = load_run_config(io.config);
  for (const std::string& w : config_warnings(rc)) std::fprintf(stderr, "%s\n", w.c_str());
  Dataset ds = open_dataset(io, rc.seed);
  ClassifierModel<float> model = build_model(rc);

  TrainReport rep = train(model, ds, rc.train);
  for (std::size_t e = 0; e < rep.epoch_loss.size(); ++e)
    std::printf("epoch %zu: loss %.4f accuracy %.4f\n", e, rep.epoch_loss[e],
                rep.epoch_accuracy[e]);
  std::printf("steps %lld\n", static_cast<long long>(rep.steps));
  std::printf("trainable %lld / %lld (%.4f%%)\n",
              static_cast<long long>(rep.trainable.trainable),
              static_cast<long long>(rep.trainable.total), 100.0 * rep.trainable.fraction);
  std::fprintf(stderr, "wall time %.1fs\n", rep.wall_seconds);

  save_checkpoint(model, rc, io.out);
  std::printf("wrote %s\n", io.out.c_str());
  return 0;
}

int cmd_eval(const IoPaths& io) {
  LoadedCheckpoint lc = load_checkpoint(io.ckpt);
  Dataset ds = load_csv(io.data);
  Metrics m = evaluate(lc.model, ds, lc.config.train.max_seq_len);
  if (io.json)
    std::printf("%s\n", metrics_to_json(m).c_str());
  else
    print_metrics_text(m);
  return 0;
}

int cmd_merge(const IoPaths& io) {
  LoadedCheckpoint lc = load_checkpoint(io.ckpt);
  if (lc.config.method != PeftMethod::lora)
    throw ConfigError("merge: checkpoint method is '" + to_string(lc.config.method) +
                      "', only lora checkpoints can be merged");
  merge_lora(lc.model);
  RunConfig rc = lc.config;
  rc.method = PeftMethod::none;
  rc.train.method = PeftMethod::none;
  rc.lora_section_present = false;
  save_checkpoint(lc.model, rc, io.out);
  std::printf("wrote %s\n", io.out.c_str());
  return 0;
}

int cmd_compare(const IoPaths& io) {
  RunConfig rc = load_run_config(io.config);
  Dataset ds = open_dataset(io, rc.seed);
  const auto start = std::chrono::steady_clock::now();
  std::vector<CompareRow> rows = compare_runs(
      rc, ds, {PeftMethod::none, PeftMethod::adapter, PeftMethod::lora});
  std::fputs(format_compare_table(rows).c_str(), stdout);
  std::fprintf(stderr, "wall time %.1fs\n",
               std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                   .count());
  return 0;
}

int cmd_gradcheck(const IoPaths& io) {
  std::vector<GradCheckResult> results = run_gradcheck_suite(io.seed);
  for (const GradCheckResult& r : results)
    std::printf("%-16s %.3e\n", r.name.c_str(), r.max_rel_err);
  if (!gradcheck_suite_passed(results))
    throw NumericError("gradient check exceeded the 1e-2 threshold");
  std::printf("all gradients within 1e-2\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tiny transformer hate-speech classifier with LoRA and adapter fine-tuning"};
  app.require_subcommand(1);
  IoPaths io;

  CLI::App* stats = app.add_subcommand("stats", "print per-class counts for a dataset");
  stats->add_option("--data", io.data, "CSV file with columns text,label")->required();
  stats->add_flag("--json", io.json, "machine-readable output");

  CLI::App* train = app.add_subcommand("train", "fine-tune a model and write a checkpoint");
  add_dataset_flags(train, io);
  train->add_option("--config", io.config, "run config JSON")->required();
  train->add_option("--out", io.out, "checkpoint output path")->required();

  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint against a dataset");
  eval->add_option("--data", io.data, "CSV file with columns text,label")->required();
  eval->add_option("--ckpt", io.ckpt, "checkpoint to evaluate")->required();
  eval->add_flag("--json", io.json, "machine-readable output");

  CLI::App* merge = app.add_subcommand("merge", "fold LoRA weights into the base model");
  merge->add_option("--ckpt", io.ckpt, "lora checkpoint to merge")->required();
  merge->add_option("--out", io.out, "merged checkpoint output path")->required();

  CLI::App* compare =
      app.add_subcommand("compare", "train none/adapter/lora side by side and score them");
  add_dataset_flags(compare, io);
  compare->add_option("--config", io.config, "run config JSON")->required();

  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "verify gradients against finite differences");
  gradcheck->add_option("--seed", io.seed, "sampling seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (stats->parsed()) return cmd_stats(io);
    if (train->parsed()) return cmd_train(io);
    if (eval->parsed()) return cmd_eval(io);
    if (merge->parsed()) return cmd_merge(io);
    if (compare->parsed()) return cmd_compare(io);
    if (gradcheck->parsed()) return cmd_gradcheck(io);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 1;
  }
  return 1;
}
