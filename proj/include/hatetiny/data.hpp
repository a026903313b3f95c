#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "hatetiny/errors.hpp"
#include "hatetiny/vocab.hpp"

namespace hatetiny {

inline constexpr int kNothateClass = 0;
inline constexpr int kHateClass = 1;

struct Example {
  std::string text;
  int label = kNothateClass;

  friend bool operator==(const Example&, const Example&) = default;
};

struct Dataset {
  std::string name;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
};

// CSV format: header exactly "text,label", RFC-4180 quoting, labels "hate"
// and "nothate" (case-insensitive on input, canonical lowercase on output).
Dataset load_csv(const std::filesystem::path& path);
Dataset parse_csv(const std::string& content, const std::string& origin);
std::string serialize_csv(const Dataset& ds);
void save_csv(const Dataset& ds, const std::filesystem::path& path);

// Writes via a temp file plus rename, so failures never leave partial files.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

struct DatasetStats {
  std::int64_t hate = 0;
  std::int64_t nothate = 0;
  double hate_fraction = 0.0;
  double nothate_fraction = 0.0;

  std::int64_t total() const { return hate + nothate; }
};
DatasetStats dataset_stats(const Dataset& ds);

// Byte-level ids: BOS followed by the raw UTF-8 bytes, truncated to
// max_seq_len ids in total.
std::vector<int> tokenize(std::string_view text, int max_seq_len);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  Dataset train, val, test;
};

// Shuffles each class with its own seeded stream and cuts at cumulative
// floors, so class balance carries into every part.
DatasetSplit stratified_split(const Dataset& ds, const SplitFractions& fractions,
                              std::uint64_t seed);

// Balanced keyword-separable corpus: hostile-pattern texts contain (and end
// with) a word from the hostile pool and no benign-pool word; benign texts
// are the mirror image. n must be even and at least 16.
Dataset make_synthetic(int n, std::uint64_t seed);
const std::vector<std::string>& synthetic_hostile_words();
const std::vector<std::string>& synthetic_benign_words();

}  // namespace hatetiny
