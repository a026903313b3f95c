#include "hatetiny/runconfig.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hatetiny/rng.hpp"

namespace hatetiny {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& origin, const std::string& what) {
  throw ConfigError(origin + ": " + what);
}

void reject_unknown_keys(const json& obj, const std::vector<std::string>& known,
                         const std::string& origin, const std::string& section) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      fail(origin, "unknown key '" + it.key() + "' in " + section);
  }
}

int get_int(const json& obj, const char* key, int fallback, const std::string& origin,
            const std::string& section) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer())
    fail(origin, section + "." + key + " must be an integer");
  return v.get<int>();
}

double get_double(const json& obj, const char* key, double fallback,
                  const std::string& origin, const std::string& section) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number())
    fail(origin, section + "." + key + " must be a number");
  return v.get<double>();
}

ModelConfig parse_model(const json& v, std::string& preset_out, const std::string& origin) {
  if (v.is_string()) {
    preset_out = v.get<std::string>();
    return preset_config(preset_out);
  }
  if (!v.is_object()) fail(origin, "model must be a preset name or an object");
  preset_out.clear();
  const std::vector<std::string> keys{"n_layers", "n_heads",     "d_model",  "d_ff",
                                      "vocab_size", "max_seq_len", "n_classes"};
  reject_unknown_keys(v, keys, origin, "model");
  for (const auto& k : keys)
    if (!v.contains(k)) fail(origin, "inline model is missing '" + k + "'");
  ModelConfig m;
  m.n_layers = get_int(v, "n_layers", 0, origin, "model");
  m.n_heads = get_int(v, "n_heads", 0, origin, "model");
  m.d_model = get_int(v, "d_model", 0, origin, "model");
  m.d_ff = get_int(v, "d_ff", 0, origin, "model");
  m.vocab_size = get_int(v, "vocab_size", 0, origin, "model");
  m.max_seq_len = get_int(v, "max_seq_len", 0, origin, "model");
  m.n_classes = get_int(v, "n_classes", 0, origin, "model");
  return m;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (method == PeftMethod::lora) lora.validate();
  if (method == PeftMethod::adapter) adapter.validate();
  train.validate();
  if (train.method != method)
    throw ContractError("runconfig: train.method out of sync with method");
  if (train.max_seq_len > model.max_seq_len)
    throw ConfigError("train.max_seq_len (" + std::to_string(train.max_seq_len) +
                      ") exceeds model.max_seq_len (" + std::to_string(model.max_seq_len) +
                      ")");
}

RunConfig parse_run_config(const std::string& json_text, const std::string& origin) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(origin, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) fail(origin, "top level must be an object");
  reject_unknown_keys(j, {"model", "method", "seed", "lora", "adapter", "train"}, origin,
                      "the top level");

  RunConfig cfg;
  if (j.contains("model")) {
    cfg.model = parse_model(j.at("model"), cfg.model_preset, origin);
  } else {
    cfg.model_preset = "micro";
    cfg.model = preset_config("micro");
  }

  if (j.contains("method")) {
    if (!j.at("method").is_string()) fail(origin, "method must be a string");
    cfg.method = peft_method_from_string(j.at("method").get<std::string>());
  }

  if (j.contains("seed")) {
    const json& s = j.at("seed");
    if (!s.is_number_integer() || (s.is_number_integer() && !s.is_number_unsigned() &&
                                   s.get<std::int64_t>() < 0))
      fail(origin, "seed must be a non-negative integer");
    cfg.seed = s.get<std::uint64_t>();
  }

  if (j.contains("lora")) {
    cfg.lora_section_present = true;
    const json& l = j.at("lora");
    if (!l.is_object()) fail(origin, "lora must be an object");
    reject_unknown_keys(l, {"r", "alpha", "dropout", "target_modules"}, origin, "lora");
    LoraConfig defaults;
    cfg.lora.r = get_int(l, "r", defaults.r, origin, "lora");
    cfg.lora.alpha = get_double(l, "alpha", defaults.alpha, origin, "lora");
    cfg.lora.dropout = get_double(l, "dropout", defaults.dropout, origin, "lora");
    if (l.contains("target_modules")) {
      const json& t = l.at("target_modules");
      if (!t.is_array()) fail(origin, "lora.target_modules must be an array of strings");
      cfg.lora.target_modules.clear();
      for (const json& e : t) {
        if (!e.is_string()) fail(origin, "lora.target_modules must be an array of strings");
        cfg.lora.target_modules.push_back(e.get<std::string>());
      }
    }
  }

  if (j.contains("adapter")) {
    cfg.adapter_section_present = true;
    const json& a = j.at("adapter");
    if (!a.is_object()) fail(origin, "adapter must be an object");
    reject_unknown_keys(a, {"bottleneck_dim", "positions_per_block"}, origin, "adapter");
    AdapterConfig defaults;
    cfg.adapter.bottleneck_dim =
        get_int(a, "bottleneck_dim", defaults.bottleneck_dim, origin, "adapter");
    cfg.adapter.positions_per_block =
        get_int(a, "positions_per_block", defaults.positions_per_block, origin, "adapter");
  }

  cfg.train = train_preset(cfg.method);
  cfg.train.seed = cfg.seed;
  cfg.train.max_seq_len = cfg.model.max_seq_len;
  if (j.contains("train")) {
    const json& t = j.at("train");
    if (!t.is_object()) fail(origin, "train must be an object");
    reject_unknown_keys(t,
                        {"epochs", "batch_size", "learning_rate", "weight_decay", "beta1",
                         "beta2", "eps", "max_seq_len"},
                        origin, "train");
    cfg.train.epochs = get_int(t, "epochs", cfg.train.epochs, origin, "train");
    cfg.train.batch_size = get_int(t, "batch_size", cfg.train.batch_size, origin, "train");
    cfg.train.learning_rate =
        get_double(t, "learning_rate", cfg.train.learning_rate, origin, "train");
    cfg.train.weight_decay =
        get_double(t, "weight_decay", cfg.train.weight_decay, origin, "train");
    cfg.train.beta1 = get_double(t, "beta1", cfg.train.beta1, origin, "train");
    cfg.train.beta2 = get_double(t, "beta2", cfg.train.beta2, origin, "train");
    cfg.train.eps = get_double(t, "eps", cfg.train.eps, origin, "train");
    cfg.train.max_seq_len = get_int(t, "max_seq_len", cfg.train.max_seq_len, origin, "train");
  }

  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    fail(origin, e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open config file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path.filename().string());
}

std::string serialize_run_config(const RunConfig& cfg) {
  ordered_json j;
  if (!cfg.model_preset.empty()) {
    j["model"] = cfg.model_preset;
  } else {
    j["model"] = ordered_json{{"n_layers", cfg.model.n_layers},
                              {"n_heads", cfg.model.n_heads},
                              {"d_model", cfg.model.d_model},
                              {"d_ff", cfg.model.d_ff},
                              {"vocab_size", cfg.model.vocab_size},
                              {"max_seq_len", cfg.model.max_seq_len},
                              {"n_classes", cfg.model.n_classes}};
  }
  j["method"] = to_string(cfg.method);
  j["seed"] = cfg.seed;
  if (cfg.method == PeftMethod::lora) {
    j["lora"] = ordered_json{{"r", cfg.lora.r},
                             {"alpha", cfg.lora.alpha},
                             {"dropout", cfg.lora.dropout},
                             {"target_modules", cfg.lora.target_modules}};
  }
  if (cfg.method == PeftMethod::adapter) {
    j["adapter"] = ordered_json{{"bottleneck_dim", cfg.adapter.bottleneck_dim},
                                {"positions_per_block", cfg.adapter.positions_per_block}};
  }
  j["train"] = ordered_json{{"epochs", cfg.train.epochs},
                            {"batch_size", cfg.train.batch_size},
                            {"learning_rate", cfg.train.learning_rate},
                            {"weight_decay", cfg.train.weight_decay},
                            {"beta1", cfg.train.beta1},
                            {"beta2", cfg.train.beta2},
                            {"eps", cfg.train.eps},
                            {"max_seq_len", cfg.train.max_seq_len}};
  return j.dump(2) + "\n";
}

std::string config_hash(const RunConfig& cfg) {
  const std::uint64_t h = fnv1a64(serialize_run_config(cfg));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

std::vector<std::string> config_warnings(const RunConfig& cfg) {
  std::vector<std::string> out;
  if (cfg.lora_section_present && cfg.method != PeftMethod::lora)
    out.push_back("config: 'lora' section is ignored with method '" + to_string(cfg.method) +
                  "'");
  if (cfg.adapter_section_present && cfg.method != PeftMethod::adapter)
    out.push_back("config: 'adapter' section is ignored with method '" +
                  to_string(cfg.method) + "'");
  return out;
}

}  // namespace hatetiny
