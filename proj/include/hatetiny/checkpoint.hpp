#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hatetiny/model.hpp"
#include "hatetiny/runconfig.hpp"

namespace hatetiny {

// Binary weight file layout:
//   bytes 0..7   magic "HTINYLM1"
//   bytes 8..15  u64 little-endian header length H
//   bytes 16..   UTF-8 JSON header, whitespace-padded so the data section
//                starts on a 64-byte file boundary
//   data         raw little-endian f32 payloads, one per tensor, each offset
//                (relative to the data section) a multiple of 64
//
// The header object is {"format_version": 1, "config": <run config>,
// "tensors": [{"name", "shape", "dtype": "f32", "offset", "byte_len"}, ...]}
// with tensors listed in canonical enumeration order.
inline constexpr char kCheckpointMagic[8] = {'H', 'T', 'I', 'N', 'Y', 'L', 'M', '1'};
inline constexpr int kCheckpointVersion = 1;
inline constexpr std::uint64_t kCheckpointAlign = 64;

struct TensorRecord {
  std::string name;
  Shape shape;
  std::string dtype;
  std::uint64_t offset = 0;
  std::uint64_t byte_len = 0;
};

struct CheckpointHeader {
  int format_version = 0;
  RunConfig config;
  std::vector<TensorRecord> tensors;
};

struct LoadedCheckpoint {
  RunConfig config;
  ClassifierModel<float> model;
};

// Atomic write (temp file + rename); the saved method section must match
// what is attached to the model.
void save_checkpoint(const ClassifierModel<float>& model, const RunConfig& cfg,
                     const std::filesystem::path& path);

// Header only: validates magic, version, alignment and offset monotonicity
// but does not touch the data section.
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

// Rebuilds the model from the embedded config (re-attaching LoRA or
// adapters) and fills every parameter from the data section. The file's
// tensor list must match the model's enumeration exactly.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hatetiny
