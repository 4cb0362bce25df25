#include "gfcn/alphabet.hpp"

namespace gfcn {

std::u32string utf8_decode(std::string_view s) {
  std::u32string out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto lead = static_cast<unsigned char>(s[i]);
    int extra = 0;
    char32_t cp = 0;
    if (lead < 0x80) {
      cp = lead;
    } else if ((lead & 0xE0) == 0xC0) {
      extra = 1;
      cp = lead & 0x1F;
    } else if ((lead & 0xF0) == 0xE0) {
      extra = 2;
      cp = lead & 0x0F;
    } else if ((lead & 0xF8) == 0xF0) {
      extra = 3;
      cp = lead & 0x07;
    } else {
      throw ContractViolation("utf8_decode: invalid lead byte at offset " + std::to_string(i));
    }
    if (i + static_cast<std::size_t>(extra) >= s.size() && extra > 0) {
      throw ContractViolation("utf8_decode: truncated sequence at offset " + std::to_string(i));
    }
    for (int k = 1; k <= extra; ++k) {
      const auto b = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
      if ((b & 0xC0) != 0x80) throw ContractViolation("utf8_decode: invalid continuation byte at offset " + std::to_string(i + k));
      cp = (cp << 6) | (b & 0x3F);
    }
    out.push_back(cp);
    i += static_cast<std::size_t>(extra) + 1;
  }
  return out;
}

std::string utf8_encode(std::u32string_view s) {
  std::string out;
  for (char32_t cp : s) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }
  return out;
}

AlphabetCodec::AlphabetCodec(std::string_view symbols) : symbols_(utf8_decode(symbols)) {
  if (symbols_.empty()) throw ConfigError("alphabet must contain at least one symbol");
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    if (!index_.emplace(symbols_[i], static_cast<int>(i)).second) {
      throw ConfigError("alphabet lists symbol '" + utf8_encode(std::u32string(1, symbols_[i])) + "' twice");
    }
  }
}

LabelSeq AlphabetCodec::encode(std::string_view text) const {
  LabelSeq out;
  for (char32_t c : utf8_decode(text)) {
    const auto it = index_.find(c);
    if (it == index_.end()) {
      throw ContractViolation("symbol '" + utf8_encode(std::u32string(1, c)) + "' is not in the alphabet");
    }
    out.push_back(it->second);
  }
  return out;
}

std::string AlphabetCodec::decode(const LabelSeq& labels) const {
  std::u32string out;
  for (int l : labels) {
    if (l < 0 || l >= size()) throw ContractViolation("label " + std::to_string(l) + " outside the alphabet");
    out.push_back(symbols_[static_cast<std::size_t>(l)]);
  }
  return utf8_encode(out);
}

std::u32string AlphabetCodec::unknown_symbols(std::string_view text) const {
  std::u32string out;
  for (char32_t c : utf8_decode(text))
    if (!contains(c) && out.find(c) == std::u32string::npos) out.push_back(c);
  return out;
}

}  // namespace gfcn
