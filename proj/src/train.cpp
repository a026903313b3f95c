#include "hatetiny/train.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include "hatetiny/ops.hpp"
#include "hatetiny/rng.hpp"

namespace hatetiny {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (!(learning_rate > 0)) throw ConfigError("train.learning_rate must be positive");
  if (weight_decay < 0) throw ConfigError("train.weight_decay must not be negative");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    throw ConfigError("train.beta1 and train.beta2 must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("train.eps must be positive");
  if (max_seq_len < 1) throw ConfigError("train.max_seq_len must be at least 1");
}

TrainConfig train_preset(PeftMethod method) {
  TrainConfig cfg;
  cfg.method = method;
  switch (method) {
    case PeftMethod::lora:
      cfg.epochs = 3;
      cfg.learning_rate = 2e-4;
      break;
    case PeftMethod::adapter:
      cfg.epochs = 5;
      cfg.learning_rate = 1e-4;
      break;
    case PeftMethod::none:
      cfg.epochs = 3;
      cfg.learning_rate = 1e-3;
      break;
  }
  return cfg;
}

Batch pack_batch(const Dataset& ds, const std::vector<std::size_t>& idx, int max_seq_len) {
  if (idx.empty()) throw ContractError("pack_batch: empty selection");
  std::vector<std::vector<int>> toks(idx.size());
  Index longest = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= ds.examples.size())
      throw IndexError("pack_batch: example index " + std::to_string(idx[i]) +
                       " out of range");
    toks[i] = tokenize(ds.examples[idx[i]].text, max_seq_len);
    longest = std::max(longest, static_cast<Index>(toks[i].size()));
  }
  Batch b;
  b.tokens = TokenMatrix::Constant(static_cast<Index>(idx.size()), longest, kPadId);
  b.pad_mask = MaskMatrix::Constant(static_cast<Index>(idx.size()), longest, false);
  b.labels.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (std::size_t t = 0; t < toks[i].size(); ++t) {
      b.tokens(static_cast<Index>(i), static_cast<Index>(t)) = toks[i][t];
      b.pad_mask(static_cast<Index>(i), static_cast<Index>(t)) = true;
    }
    b.labels[i] = ds.examples[idx[i]].label;
  }
  return b;
}

std::vector<Batch> make_batches(const Dataset& ds, int batch_size, std::uint64_t seed,
                                int epoch, int max_seq_len) {
  if (batch_size < 1) throw ContractError("make_batches: batch_size must be at least 1");
  if (epoch < 0) throw ContractError("make_batches: epoch must not be negative");
  if (ds.examples.empty()) throw DataError("make_batches: empty dataset");
  std::vector<std::size_t> order(ds.examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = named_stream(seed, "batches.epoch." + std::to_string(epoch));
  rng.shuffle(order);
  std::vector<Batch> out;
  for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(at),
                                 order.begin() + static_cast<std::ptrdiff_t>(end));
    out.push_back(pack_batch(ds, idx, max_seq_len));
  }
  return out;
}

AdamW::AdamW(const TrainConfig& cfg)
    : lr_(cfg.learning_rate),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.eps),
      weight_decay_(cfg.weight_decay) {
  cfg.validate();
}

void AdamW::step(const std::vector<Tensor<float>*>& params) {
  if (slots_.empty()) {
    slots_.resize(params.size());
  } else if (slots_.size() != params.size()) {
    throw ContractError("adamw: parameter list changed size between steps");
  }
  ++t_;
  // bias corrections are scalar, computed once per step in double
  const float c1 = static_cast<float>(1.0 / (1.0 - std::pow(beta1_, static_cast<double>(t_))));
  const float c2 = static_cast<float>(1.0 / (1.0 - std::pow(beta2_, static_cast<double>(t_))));
  const float b1 = static_cast<float>(beta1_);
  const float b2 = static_cast<float>(beta2_);
  const float lr = static_cast<float>(lr_);
  const float eps = static_cast<float>(eps_);
  const float decay_keep = static_cast<float>(1.0 - lr_ * weight_decay_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<float>& p = *params[i];
    if (!p.has_grad())
      throw ContractError("adamw: trainable parameter " + std::to_string(i) +
                          " has no gradient; run backward first");
    const VecX<float>& g = p.grad();
    Slot& s = slots_[i];
    if (s.m.size() == 0) {
      s.m = VecX<float>::Zero(p.numel());
      s.v = VecX<float>::Zero(p.numel());
    }
    s.m = b1 * s.m + (1.0f - b1) * g;
    s.v = (b2 * s.v.array() + (1.0f - b2) * g.array().square()).matrix();
    // theta <- theta*(1 - lr*wd) - lr * mhat / (sqrt(vhat) + eps)
    p.value() = decay_keep * p.value() -
                lr * ((s.m * c1).array() / ((s.v * c2).array().sqrt() + eps)).matrix();
  }
  for (Tensor<float>* p : params) p->clear_grad();
}

TrainReport train(ClassifierModel<float>& model, const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.method != model.attached)
    throw ConfigError("train: config asks for method '" + to_string(cfg.method) +
                      "' but the model has '" + to_string(model.attached) + "' attached");
  if (cfg.max_seq_len > model.config.max_seq_len)
    throw ConfigError("train.max_seq_len (" + std::to_string(cfg.max_seq_len) +
                      ") exceeds the model's max_seq_len (" +
                      std::to_string(model.config.max_seq_len) + ")");
  if (ds.examples.empty()) throw DataError("train: empty dataset");

  std::vector<Tensor<float>*> params = trainable_parameters(model);
  if (params.empty()) throw ConfigError("train: no trainable parameters");
  for (Tensor<float>* p : params) p->clear_grad();

  AdamW opt(cfg);
  Rng dropout_rng = named_stream(cfg.seed, "dropout");
  TrainReport report;
  const auto start = std::chrono::steady_clock::now();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<Batch> batches =
        make_batches(ds, cfg.batch_size, cfg.seed, epoch, cfg.max_seq_len);
    double loss_sum = 0.0;
    std::int64_t correct = 0, seen = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Batch& batch = batches[bi];
      try {
        Tape<float> tape;
        typename Tape<float>::Scope scope(tape);
        Tensor<float> logits =
            forward_logits(model, batch.tokens, batch.pad_mask, true, &dropout_rng);
        Tensor<float> loss = nll_loss(logits, batch.labels);
        loss_sum += static_cast<double>(loss.scalar()) * static_cast<double>(batch.labels.size());
        std::vector<int> preds = predict_classes(logits);
        for (std::size_t i = 0; i < preds.size(); ++i)
          if (preds[i] == batch.labels[i]) ++correct;
        seen += static_cast<std::int64_t>(batch.labels.size());
        backward(loss);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(bi) + ")");
      }
      opt.step(params);
    }
    report.epoch_loss.push_back(loss_sum / static_cast<double>(seen));
    report.epoch_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(seen));
  }

  report.steps = opt.step_count();
  report.trainable = count_trainable(model);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace hatetiny
