#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace docgen {

// Length of the longest prefix of `s` that is at most `max_bytes` long and
// ends on a UTF-8 codepoint boundary. Assumes `s` is valid UTF-8.
inline size_t utf8_truncate_len(std::string_view s, size_t max_bytes) {
  if (s.size() <= max_bytes) return s.size();
  size_t n = max_bytes;
  // back off continuation bytes (10xxxxxx)
  while (n > 0 && (static_cast<uint8_t>(s[n]) & 0xC0) == 0x80) --n;
  return n;
}

// Decodes a byte stream into valid UTF-8, replacing each byte that does not
// participate in a well-formed sequence with U+FFFD. Never fails: generated
// byte streams must always render.
inline std::string utf8_repair(const std::vector<uint8_t>& bytes) {
  static const char kReplacement[] = "\xEF\xBF\xBD";
  std::string out;
  out.reserve(bytes.size());
  size_t i = 0;
  const size_t n = bytes.size();
  while (i < n) {
    const uint8_t b0 = bytes[i];
    size_t len = 0;
    uint32_t cp = 0;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      out += kReplacement;
      ++i;
      continue;
    }
    if (i + len > n) {
      out += kReplacement;
      ++i;
      continue;
    }
    bool ok = true;
    for (size_t k = 1; k < len; ++k) {
      const uint8_t bk = bytes[i + k];
      if ((bk & 0xC0) != 0x80) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (bk & 0x3F);
    }
    // reject overlongs, surrogates, and out-of-range codepoints
    if (ok) {
      if (len == 2 && cp < 0x80) ok = false;
      if (len == 3 && cp < 0x800) ok = false;
      if (len == 4 && cp < 0x10000) ok = false;
      if (cp >= 0xD800 && cp <= 0xDFFF) ok = false;
      if (cp > 0x10FFFF) ok = false;
    }
    if (!ok) {
      out += kReplacement;
      ++i;
      continue;
    }
    for (size_t k = 0; k < len; ++k) out += static_cast<char>(bytes[i + k]);
    i += len;
  }
  return out;
}

}  // namespace docgen
