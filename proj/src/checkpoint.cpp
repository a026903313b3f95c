#include "hatetiny/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "hatetiny/peft.hpp"

namespace hatetiny {

static_assert(std::endian::native == std::endian::little,
              "the checkpoint format stores raw little-endian floats");

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::uint64_t align_up(std::uint64_t v) {
  return (v + kCheckpointAlign - 1) / kCheckpointAlign * kCheckpointAlign;
}

[[noreturn]] void bad_format(const std::filesystem::path& path, const std::string& what) {
  throw FormatError(path.string() + ": " + what);
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

CheckpointHeader parse_header(const std::string& bytes, const std::filesystem::path& path,
                              std::uint64_t* data_start_out) {
  if (bytes.size() < 16) bad_format(path, "truncated file (shorter than the fixed prefix)");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    bad_format(path, "bad magic bytes (expected HTINYLM1)");
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + 8, sizeof(header_len));
  if (16 + header_len > bytes.size())
    bad_format(path, "truncated file (header length exceeds the file)");
  const std::uint64_t data_start = 16 + header_len;
  if (data_start % kCheckpointAlign != 0)
    bad_format(path, "data section is not 64-byte aligned");

  json j;
  try {
    j = json::parse(bytes.substr(16, header_len));
  } catch (const json::parse_error& e) {
    bad_format(path, std::string("invalid header JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("format_version") || !j.contains("config") ||
      !j.contains("tensors"))
    bad_format(path, "header must contain format_version, config and tensors");
  if (!j.at("format_version").is_number_integer() ||
      j.at("format_version").get<int>() != kCheckpointVersion)
    bad_format(path, "unsupported format_version (expected 1)");

  CheckpointHeader h;
  h.format_version = kCheckpointVersion;
  try {
    h.config = parse_run_config(j.at("config").dump(), path.string() + " header");
  } catch (const ConfigError& e) {
    bad_format(path, std::string("embedded config rejected: ") + e.what());
  }

  const json& tensors = j.at("tensors");
  if (!tensors.is_array()) bad_format(path, "tensors must be an array");
  std::uint64_t prev_end = 0;
  bool first = true;
  for (const json& t : tensors) {
    TensorRecord rec;
    if (!t.is_object() || !t.contains("name") || !t.contains("shape") ||
        !t.contains("dtype") || !t.contains("offset") || !t.contains("byte_len"))
      bad_format(path, "each tensor record needs name, shape, dtype, offset, byte_len");
    rec.name = t.at("name").get<std::string>();
    for (const json& d : t.at("shape")) rec.shape.push_back(d.get<Index>());
    rec.dtype = t.at("dtype").get<std::string>();
    rec.offset = t.at("offset").get<std::uint64_t>();
    rec.byte_len = t.at("byte_len").get<std::uint64_t>();

    if (rec.dtype != "f32")
      bad_format(path, "tensor " + rec.name + ": unsupported dtype '" + rec.dtype + "'");
    if (rec.offset % kCheckpointAlign != 0)
      bad_format(path, "tensor " + rec.name + ": offset is not 64-byte aligned");
    if (!first && rec.offset < prev_end)
      bad_format(path, "tensor " + rec.name + ": offset overlaps the previous tensor");
    if (rec.byte_len != shape_numel(rec.shape) * sizeof(float))
      bad_format(path, "tensor " + rec.name + ": byte_len does not match its shape");
    prev_end = rec.offset + rec.byte_len;
    first = false;
    h.tensors.push_back(std::move(rec));
  }
  if (data_start_out) *data_start_out = data_start;
  return h;
}

ClassifierModel<float> build_from_config(const RunConfig& cfg) {
  ClassifierModel<float> model = init_model(cfg.model, cfg.seed);
  switch (cfg.method) {
    case PeftMethod::lora:
      attach_lora(model, cfg.lora, cfg.seed);
      break;
    case PeftMethod::adapter:
      attach_adapters(model, cfg.adapter, cfg.seed);
      break;
    case PeftMethod::none:
      break;
  }
  return model;
}

}  // namespace

void save_checkpoint(const ClassifierModel<float>& model, const RunConfig& cfg,
                     const std::filesystem::path& path) {
  if (cfg.method != model.attached)
    throw ContractError("save_checkpoint: config method '" + to_string(cfg.method) +
                        "' does not match the attached method '" +
                        to_string(model.attached) + "'");

  struct Entry {
    std::string name;
    const Tensor<float>* tensor;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  std::uint64_t at = 0;
  for_each_parameter(model, [&](const std::string& name, const Tensor<float>& t) {
    entries.push_back({name, &t, at});
    at = align_up(at + t.numel() * sizeof(float));
  });

  ordered_json header;
  header["format_version"] = kCheckpointVersion;
  header["config"] = ordered_json::parse(serialize_run_config(cfg));
  ordered_json tensors = ordered_json::array();
  for (const Entry& e : entries) {
    tensors.push_back(ordered_json{{"name", e.name},
                                   {"shape", e.tensor->shape()},
                                   {"dtype", "f32"},
                                   {"offset", e.offset},
                                   {"byte_len", e.tensor->numel() * sizeof(float)}});
  }
  header["tensors"] = std::move(tensors);

  std::string htext = header.dump();
  htext.append(align_up(16 + htext.size()) - (16 + htext.size()), '\n');
  const std::uint64_t header_len = htext.size();

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint: " + tmp.string());
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    std::uint64_t written = 0;
    for (const Entry& e : entries) {
      static const char zeros[kCheckpointAlign] = {};
      out.write(zeros, static_cast<std::streamsize>(e.offset - written));
      const std::uint64_t len = e.tensor->numel() * sizeof(float);
      out.write(reinterpret_cast<const char*>(e.tensor->value().data()),
                static_cast<std::streamsize>(len));
      written = e.offset + len;
    }
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw DataError("cannot write checkpoint: " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw DataError("cannot move checkpoint into place: " + path.string());
  }
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  return parse_header(read_all(path), path, nullptr);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_all(path);
  std::uint64_t data_start = 0;
  CheckpointHeader h = parse_header(bytes, path, &data_start);

  LoadedCheckpoint out{h.config, build_from_config(h.config)};

  std::map<std::string, Tensor<float>*> params;
  for_each_parameter(out.model, [&](const std::string& name, Tensor<float>& t) {
    params.emplace(name, &t);
  });

  std::map<std::string, const TensorRecord*> records;
  for (const TensorRecord& rec : h.tensors) {
    if (!records.emplace(rec.name, &rec).second)
      bad_format(path, "tensor " + rec.name + " appears twice");
  }
  for (const auto& [name, rec] : records)
    if (params.find(name) == params.end())
      bad_format(path, "tensor " + name + " is not a parameter of the configured model");
  for (const auto& [name, tensor] : params)
    if (records.find(name) == records.end())
      bad_format(path, "parameter " + name + " is missing from the file");

  for (const auto& [name, rec] : records) {
    Tensor<float>* t = params.at(name);
    if (rec->shape != t->shape())
      bad_format(path, "tensor " + name + ": shape " + shape_str(rec->shape) +
                           " does not match the model's " + shape_str(t->shape()));
    if (data_start + rec->offset + rec->byte_len > bytes.size())
      bad_format(path, "tensor " + name + ": data lies beyond the end of the file");
    std::memcpy(t->value().data(), bytes.data() + data_start + rec->offset, rec->byte_len);
  }
  return out;
}

}  // namespace hatetiny
