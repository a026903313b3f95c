#pragma once

namespace hatetiny {

// Byte-level vocabulary: ids 0..255 are raw UTF-8 bytes, followed by three
// special ids. EOS is reserved but never emitted by the tokenizer.
inline constexpr int kPadId = 256;
inline constexpr int kBosId = 257;
inline constexpr int kEosId = 258;
inline constexpr int kVocabSize = 259;

}  // namespace hatetiny
