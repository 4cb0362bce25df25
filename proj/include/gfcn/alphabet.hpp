#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gfcn/ctc.hpp"

namespace gfcn {

/// UTF-8 helpers. Invalid sequences throw ContractViolation.
std::u32string utf8_decode(std::string_view s);
std::string utf8_encode(std::u32string_view s);

/// Bijection between transcript symbols and class indices [0, A). The CTC blank is A.
class AlphabetCodec {
 public:
  AlphabetCodec() = default;
  /// `symbols` is UTF-8; duplicates and an empty set throw ConfigError.
  explicit AlphabetCodec(std::string_view symbols);

  static AlphabetCodec digits() { return AlphabetCodec("0123456789"); }

  int size() const { return static_cast<int>(symbols_.size()); }
  int blank() const { return size(); }
  std::string symbols() const { return utf8_encode(symbols_); }

  bool contains(char32_t c) const { return index_.count(c) != 0; }
  /// Throws ContractViolation naming the first symbol outside the alphabet.
  LabelSeq encode(std::string_view text) const;
  /// Throws ContractViolation on indices outside [0, A).
  std::string decode(const LabelSeq& labels) const;
  /// Symbols of `text` that are not in the alphabet, in order of first appearance.
  std::u32string unknown_symbols(std::string_view text) const;

  bool operator==(const AlphabetCodec& other) const { return symbols_ == other.symbols_; }

 private:
  std::u32string symbols_;
  std::unordered_map<char32_t, int> index_;
};

}  // namespace gfcn
