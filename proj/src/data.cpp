#include "hatetiny/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hatetiny/rng.hpp"

namespace hatetiny {

namespace {

std::string lower_trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out(s.substr(b, e - b));
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(),
                     [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

[[noreturn]] void fail(const std::string& origin, int row, const std::string& what) {
  throw DataError(origin + " row " + std::to_string(row) + ": " + what);
}

// RFC-4180 record reader over an in-memory buffer. Tracks the line each
// record starts on so errors point at the right row.
class CsvReader {
 public:
  CsvReader(const std::string& s, const std::string& origin) : s_(s), origin_(origin) {}

  bool next_record(std::vector<std::string>& fields, int& record_row) {
    fields.clear();
    if (pos_ >= s_.size()) return false;
    record_row = row_;
    std::string field;
    for (;;) {
      field.clear();
      if (pos_ < s_.size() && s_[pos_] == '"') {
        read_quoted(field, record_row);
      } else {
        read_bare(field, record_row);
      }
      fields.push_back(field);
      if (pos_ >= s_.size()) {
        ++row_;
        return true;
      }
      char c = s_[pos_];
      if (c == ',') {
        ++pos_;
        continue;
      }
      consume_newline(record_row);
      return true;
    }
  }

 private:
  void consume_newline(int record_row) {
    if (s_[pos_] == '\r') {
      if (pos_ + 1 >= s_.size() || s_[pos_ + 1] != '\n')
        fail(origin_, record_row, "stray carriage return");
      pos_ += 2;
    } else {
      ++pos_;  // '\n'
    }
    ++row_;
  }

  void read_quoted(std::string& out, int record_row) {
    ++pos_;  // opening quote
    for (;;) {
      if (pos_ >= s_.size()) fail(origin_, record_row, "unterminated quoted field");
      char c = s_[pos_++];
      if (c == '"') {
        if (pos_ < s_.size() && s_[pos_] == '"') {
          out.push_back('"');
          ++pos_;
          continue;
        }
        break;
      }
      if (c == '\n') ++row_;
      out.push_back(c);
    }
    if (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != '\n' && s_[pos_] != '\r')
      fail(origin_, record_row, "unexpected character after closing quote");
  }

  void read_bare(std::string& out, int record_row) {
    while (pos_ < s_.size()) {
      char c = s_[pos_];
      if (c == ',' || c == '\n' || c == '\r') break;
      if (c == '"') fail(origin_, record_row, "bare quote inside unquoted field");
      out.push_back(c);
      ++pos_;
    }
  }

  const std::string& s_;
  std::string origin_;
  std::size_t pos_ = 0;
  int row_ = 1;
};

bool needs_quoting(std::string_view s) {
  return s.find_first_of(",\"\n\r") != std::string_view::npos;
}

void append_field(std::string& out, std::string_view s) {
  if (!needs_quoting(s)) {
    out.append(s);
    return;
  }
  out.push_back('"');
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
}

}  // namespace

Dataset parse_csv(const std::string& content, const std::string& origin) {
  std::string_view body = content;
  // tolerate a UTF-8 byte order mark in front of the header
  if (body.starts_with("\xEF\xBB\xBF")) body.remove_prefix(3);
  std::string buf(body);
  CsvReader reader(buf, origin);

  std::vector<std::string> fields;
  int row = 0;
  if (!reader.next_record(fields, row))
    throw DataError(origin + ": empty file, expected a 'text,label' header");
  if (fields.size() != 2 || fields[0] != "text" || fields[1] != "label")
    fail(origin, row, "header must be exactly 'text,label'");

  Dataset ds;
  ds.name = origin;
  while (reader.next_record(fields, row)) {
    if (fields.size() != 2)
      fail(origin, row, "expected 2 fields, got " + std::to_string(fields.size()));
    if (blank(fields[0])) fail(origin, row, "empty text");
    const std::string label = lower_trim(fields[1]);
    Example e;
    e.text = std::move(fields[0]);
    if (label == "hate")
      e.label = kHateClass;
    else if (label == "nothate")
      e.label = kNothateClass;
    else
      fail(origin, row, "unknown label '" + fields[1] + "' (expected hate or nothate)");
    ds.examples.push_back(std::move(e));
  }
  return ds;
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  Dataset ds = parse_csv(ss.str(), path.string());
  ds.name = path.stem().string();
  return ds;
}

std::string serialize_csv(const Dataset& ds) {
  std::string out = "text,label\n";
  for (const auto& e : ds.examples) {
    append_field(out, e.text);
    out.push_back(',');
    out.append(e.label == kHateClass ? "hate" : "nothate");
    out.push_back('\n');
  }
  return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw DataError("failed writing " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw DataError("cannot move " + tmp.string() + " into place: " + ec.message());
  }
}

void save_csv(const Dataset& ds, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_csv(ds));
}

DatasetStats dataset_stats(const Dataset& ds) {
  DatasetStats st;
  for (const auto& e : ds.examples) {
    if (e.label == kHateClass)
      ++st.hate;
    else
      ++st.nothate;
  }
  if (st.total() > 0) {
    st.hate_fraction = static_cast<double>(st.hate) / static_cast<double>(st.total());
    st.nothate_fraction = static_cast<double>(st.nothate) / static_cast<double>(st.total());
  }
  return st;
}

std::vector<int> tokenize(std::string_view text, int max_seq_len) {
  if (max_seq_len < 1)
    throw ContractError("tokenize: max_seq_len must be at least 1, got " +
                        std::to_string(max_seq_len));
  std::vector<int> ids;
  ids.reserve(std::min<std::size_t>(text.size() + 1, static_cast<std::size_t>(max_seq_len)));
  ids.push_back(kBosId);
  for (unsigned char c : text) {
    if (ids.size() >= static_cast<std::size_t>(max_seq_len)) break;
    ids.push_back(static_cast<int>(c));
  }
  return ids;
}

DatasetSplit stratified_split(const Dataset& ds, const SplitFractions& fractions,
                              std::uint64_t seed) {
  const double sum = fractions.train + fractions.val + fractions.test;
  if (fractions.train <= 0 || fractions.val <= 0 || fractions.test <= 0 ||
      std::abs(sum - 1.0) > 1e-9)
    throw ConfigError("split fractions must be positive and sum to 1, got " +
                      std::to_string(fractions.train) + "/" + std::to_string(fractions.val) +
                      "/" + std::to_string(fractions.test));

  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < ds.examples.size(); ++i)
    by_class[ds.examples[i].label == kHateClass ? 1 : 0].push_back(i);
  const char* class_names[2] = {"nothate", "hate"};
  for (int c = 0; c < 2; ++c)
    if (by_class[c].size() < 3)
      throw DataError("class " + std::string(class_names[c]) + " has " +
                      std::to_string(by_class[c].size()) +
                      " examples; a stratified split needs at least 3");

  DatasetSplit out;
  out.train.name = ds.name + "/train";
  out.val.name = ds.name + "/val";
  out.test.name = ds.name + "/test";
  for (int c = 0; c < 2; ++c) {
    auto idx = by_class[c];
    Rng rng = named_stream(seed, std::string("split.") + class_names[c]);
    rng.shuffle(idx);
    const auto n = static_cast<double>(idx.size());
    const auto cut1 = static_cast<std::size_t>(std::floor(fractions.train * n));
    const auto cut2 =
        static_cast<std::size_t>(std::floor((fractions.train + fractions.val) * n));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      Dataset& part = i < cut1 ? out.train : (i < cut2 ? out.val : out.test);
      part.examples.push_back(ds.examples[idx[i]]);
    }
  }
  return out;
}

namespace {

const std::vector<std::string> kHostileWords{
    "vermin", "worthless", "despicable", "vile", "loathsome", "repulsive", "pathetic",
    "dreadful"};

const std::vector<std::string> kBenignWords{
    "garden", "sunrise", "picnic", "melody", "harvest", "bicycle", "lantern", "orchard"};

const std::vector<std::string> kSubjects{
    "that crew",  "those folks", "this lot",    "the council",
    "our rivals", "that bunch",  "the tenants", "their club"};

}  // namespace

const std::vector<std::string>& synthetic_hostile_words() { return kHostileWords; }
const std::vector<std::string>& synthetic_benign_words() { return kBenignWords; }

Dataset make_synthetic(int n, std::uint64_t seed) {
  if (n < 16 || n % 2 != 0)
    throw ConfigError("synthetic size must be an even number of at least 16, got " +
                      std::to_string(n));
  Rng rng = named_stream(seed, "synthetic");
  Dataset ds;
  ds.name = "synthetic";
  ds.examples.reserve(static_cast<std::size_t>(n));
  // the class keyword is always the final word, so the signal survives any
  // truncation that keeps the tail visible from the last position
  for (int i = 0; i < n; ++i) {
    const bool hate = i % 2 == 0;
    const auto& subject = kSubjects[rng.below(kSubjects.size())];
    Example e;
    if (hate) {
      const auto& word = kHostileWords[rng.below(kHostileWords.size())];
      switch (rng.below(3)) {
        case 0: e.text = subject + " are " + word; break;
        case 1: e.text = subject + " seem utterly " + word; break;
        default: e.text = "honestly " + subject + " are " + word; break;
      }
      e.label = kHateClass;
    } else {
      const auto& word = kBenignWords[rng.below(kBenignWords.size())];
      switch (rng.below(3)) {
        case 0: e.text = subject + " enjoyed the " + word; break;
        case 1: e.text = subject + " admired the quiet " + word; break;
        default: e.text = "honestly " + subject + " loved the " + word; break;
      }
      e.label = kNothateClass;
    }
    ds.examples.push_back(std::move(e));
  }
  return ds;
}

}  // namespace hatetiny
