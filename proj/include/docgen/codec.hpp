#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "docgen/doc.hpp"
#include "docgen/error.hpp"

namespace docgen {

// Token kinds. Every id in [0, V) maps to exactly one kind.
enum class TokenKind : uint8_t { Pad, Sos, Eos, Null, Eot, Cat, Coord, Style, TextByte };

const char* token_kind_name(TokenKind k);

// Fixed token-id layout:
//   0=PAD 1=SOS 2=EOS 3=NULL 4=EOT
//   [5, 5+C)                categories
//   [5+C, 5+C+256)          coordinate bins
//   [5+C+256, 5+C+256+Sty)  styles
//   [5+C+256+Sty, +256)     text bytes
// Total V = 517 + C + Sty.
class Vocabulary {
 public:
  static constexpr int kPad = 0, kSos = 1, kEos = 2, kNull = 3, kEot = 4;

  Vocabulary() = default;
  Vocabulary(CategorySet categories, std::vector<std::string> styles, bool style_enabled);

  int size() const { return byte_offset_ + 256; }
  int category_count() const { return categories_.size(); }
  int style_count() const { return static_cast<int>(styles_.size()); }
  bool style_enabled() const { return style_enabled_; }
  const CategorySet& categories() const { return categories_; }
  const std::vector<std::string>& styles() const { return styles_; }

  int cat_offset() const { return 5; }
  int coord_offset() const { return coord_offset_; }
  int style_offset() const { return style_offset_; }
  int byte_offset() const { return byte_offset_; }

 private:
  CategorySet categories_;
  std::vector<std::string> styles_;
  bool style_enabled_ = false;
  int coord_offset_ = 5, style_offset_ = 261, byte_offset_ = 261;
};

Vocabulary build_vocab(CategorySet categories, std::vector<std::string> styles = {},
                       bool style_enabled = false);

// (kind, value) -> id and its inverse. Mutually inverse bijection over [0, V).
int token_of(const Vocabulary& vocab, TokenKind kind, int value);
std::pair<TokenKind, int> kind_of(const Vocabulary& vocab, int id);

struct TokenSequence {
  std::vector<int32_t> ids;
  size_t size() const { return ids.size(); }
  bool operator==(const TokenSequence&) const = default;
};

struct CodecConfig {
  int t_max = 64;           // max text bytes per element
  bool include_text = true; // false: layout-only ablation, text slot emits NULL
  int context_limit = 0;    // 0 = unchecked; otherwise encode errors past this
  bool operator==(const CodecConfig&) const = default;
};

// Grammar violation during decode: position of the offending token and the
// kinds that were legal there.
class ParseError : public Error {
 public:
  ParseError(size_t position, std::vector<TokenKind> expected);
  size_t position() const { return position_; }
  const std::vector<TokenKind>& expected() const { return expected_; }

 private:
  size_t position_;
  std::vector<TokenKind> expected_;
};

// Per-token state of the element structure. `text_count` counts the text
// bytes consumed for the current element; `text_null` is set once NULL
// fills the text slot, after which only EOT is legal.
struct GrammarState {
  enum class Phase : uint8_t {
    ExpectCatOrEos,
    ExpectX,
    ExpectY,
    ExpectW,
    ExpectH,
    ExpectStyle,
    ExpectTextOrEot,
    Done,
    Reject,
  };
  Phase phase = Phase::ExpectCatOrEos;
  int text_count = 0;
  bool text_null = false;

  bool rejected() const { return phase == Phase::Reject; }
  bool done() const { return phase == Phase::Done; }
  bool operator==(const GrammarState&) const = default;
};

// State after consuming SOS.
GrammarState grammar_initial();

// Total transition function; illegal tokens land in Phase::Reject.
GrammarState grammar_step(const GrammarState& state, int token_id, const Vocabulary& vocab,
                          const CodecConfig& cfg);

// True exactly for ids legal in `state`. Never all-false for non-terminal
// states. Done/Reject are out of domain.
std::vector<uint8_t> allowed_mask(const GrammarState& state, const Vocabulary& vocab,
                                  const CodecConfig& cfg);

// Token kinds legal in `state` (for diagnostics).
std::vector<TokenKind> expected_kinds(const GrammarState& state, const Vocabulary& vocab,
                                      const CodecConfig& cfg);

// Serializes a validated, canonically ordered document:
//   SOS, then per element CAT x y w h [STYLE|NULL] (TEXTBYTE* | NULL) EOT, then EOS.
// Text is UTF-8 bytes truncated at a codepoint boundary to <= t_max.
TokenSequence encode(const Document& doc, const Vocabulary& vocab,
                     const CodecConfig& cfg = {});

struct DecodeResult {
  Document doc;
  bool truncated = false;  // EOS missing but the prefix parses
};

// Parses under the grammar; reconstructs dequantized bboxes and repaired
// UTF-8 text. Throws ParseError on grammar violations.
DecodeResult decode(const TokenSequence& tokens, const Vocabulary& vocab, double canvas_w,
                    double canvas_h, const CodecConfig& cfg = {});

// The document encode/decode actually round-trips: canonical order, bboxes
// snapped to the quantization grid, text truncated (empty normalized to
// absent), style dropped when styles are disabled.
Document quantized_canonical(const Document& doc, const Vocabulary& vocab,
                             const CodecConfig& cfg = {});

// Debug text format: one integer per line.
std::string tokens_to_lines(const TokenSequence& tokens);
TokenSequence tokens_from_lines(const std::string& text);

bool operator==(const BBox& a, const BBox& b);
bool operator==(const Element& a, const Element& b);
bool operator==(const Document& a, const Document& b);

}  // namespace docgen
