#include "docgen/codec.hpp"

#include <algorithm>
#include <sstream>

#include "docgen/utf8.hpp"

namespace docgen {

const char* token_kind_name(TokenKind k) {
  switch (k) {
    case TokenKind::Pad: return "PAD";
    case TokenKind::Sos: return "SOS";
    case TokenKind::Eos: return "EOS";
    case TokenKind::Null: return "NULL";
    case TokenKind::Eot: return "EOT";
    case TokenKind::Cat: return "CAT";
    case TokenKind::Coord: return "COORD";
    case TokenKind::Style: return "STYLE";
    case TokenKind::TextByte: return "TEXTBYTE";
  }
  return "?";
}

Vocabulary::Vocabulary(CategorySet categories, std::vector<std::string> styles,
                       bool style_enabled)
    : categories_(std::move(categories)),
      styles_(std::move(styles)),
      style_enabled_(style_enabled) {
  const int c = categories_.size();
  const int sty = static_cast<int>(styles_.size());
  if (c < 1 || c > 64)
    throw ConfigError("category count must be in [1, 64]; got " + std::to_string(c));
  if (sty > 64)
    throw ConfigError("style count must be in [0, 64]; got " + std::to_string(sty));
  if (style_enabled_ && sty < 1)
    throw ConfigError("style_enabled requires at least one style");
  for (size_t i = 0; i < styles_.size(); ++i)
    for (size_t j = i + 1; j < styles_.size(); ++j)
      if (styles_[i] == styles_[j]) throw ConfigError("duplicate style name: " + styles_[i]);
  coord_offset_ = 5 + c;
  style_offset_ = coord_offset_ + 256;
  byte_offset_ = style_offset_ + sty;
}

Vocabulary build_vocab(CategorySet categories, std::vector<std::string> styles,
                       bool style_enabled) {
  return Vocabulary(std::move(categories), std::move(styles), style_enabled);
}

int token_of(const Vocabulary& vocab, TokenKind kind, int value) {
  auto check = [&](int lo, int hi) {
    if (value < lo || value >= hi)
      throw InvalidInput(std::string("token_of: value out of range for ") +
                         token_kind_name(kind) + ": " + std::to_string(value));
  };
  switch (kind) {
    case TokenKind::Pad: check(0, 1); return Vocabulary::kPad;
    case TokenKind::Sos: check(0, 1); return Vocabulary::kSos;
    case TokenKind::Eos: check(0, 1); return Vocabulary::kEos;
    case TokenKind::Null: check(0, 1); return Vocabulary::kNull;
    case TokenKind::Eot: check(0, 1); return Vocabulary::kEot;
    case TokenKind::Cat:
      check(0, vocab.category_count());
      return vocab.cat_offset() + value;
    case TokenKind::Coord:
      check(0, 256);
      return vocab.coord_offset() + value;
    case TokenKind::Style:
      check(0, vocab.style_count());
      return vocab.style_offset() + value;
    case TokenKind::TextByte:
      check(0, 256);
      return vocab.byte_offset() + value;
  }
  throw InvalidInput("token_of: bad kind");
}

std::pair<TokenKind, int> kind_of(const Vocabulary& vocab, int id) {
  if (id < 0 || id >= vocab.size())
    throw InvalidInput("kind_of: id out of range: " + std::to_string(id));
  switch (id) {
    case Vocabulary::kPad: return {TokenKind::Pad, 0};
    case Vocabulary::kSos: return {TokenKind::Sos, 0};
    case Vocabulary::kEos: return {TokenKind::Eos, 0};
    case Vocabulary::kNull: return {TokenKind::Null, 0};
    case Vocabulary::kEot: return {TokenKind::Eot, 0};
    default: break;
  }
  if (id < vocab.coord_offset()) return {TokenKind::Cat, id - vocab.cat_offset()};
  if (id < vocab.style_offset()) return {TokenKind::Coord, id - vocab.coord_offset()};
  if (id < vocab.byte_offset()) return {TokenKind::Style, id - vocab.style_offset()};
  return {TokenKind::TextByte, id - vocab.byte_offset()};
}

ParseError::ParseError(size_t position, std::vector<TokenKind> expected)
    : Error([&] {
        std::string msg = "parse error at position " + std::to_string(position) + ", expected {";
        for (size_t i = 0; i < expected.size(); ++i) {
          if (i) msg += ", ";
          msg += token_kind_name(expected[i]);
        }
        msg += "}";
        return msg;
      }()),
      position_(position),
      expected_(std::move(expected)) {}

GrammarState grammar_initial() { return GrammarState{}; }

GrammarState grammar_step(const GrammarState& state, int token_id, const Vocabulary& vocab,
                          const CodecConfig& cfg) {
  using Phase = GrammarState::Phase;
  GrammarState reject{Phase::Reject, 0, false};
  if (token_id < 0 || token_id >= vocab.size()) return reject;
  const auto [kind, value] = kind_of(vocab, token_id);
  (void)value;
  GrammarState next = state;
  switch (state.phase) {
    case Phase::Reject:
      return reject;
    case Phase::Done:
      return kind == TokenKind::Pad ? state : reject;
    case Phase::ExpectCatOrEos:
      if (kind == TokenKind::Cat) {
        next.phase = Phase::ExpectX;
        return next;
      }
      if (kind == TokenKind::Eos) {
        next.phase = Phase::Done;
        return next;
      }
      return reject;
    case Phase::ExpectX:
    case Phase::ExpectY:
    case Phase::ExpectW:
      if (kind != TokenKind::Coord) return reject;
      next.phase = static_cast<Phase>(static_cast<uint8_t>(state.phase) + 1);
      return next;
    case Phase::ExpectH:
      if (kind != TokenKind::Coord) return reject;
      next.phase = vocab.style_enabled() ? Phase::ExpectStyle : Phase::ExpectTextOrEot;
      next.text_count = 0;
      next.text_null = false;
      return next;
    case Phase::ExpectStyle:
      if (kind != TokenKind::Style && kind != TokenKind::Null) return reject;
      next.phase = Phase::ExpectTextOrEot;
      next.text_count = 0;
      next.text_null = false;
      return next;
    case Phase::ExpectTextOrEot:
      if (state.text_null) {
        if (kind != TokenKind::Eot) return reject;
        return GrammarState{Phase::ExpectCatOrEos, 0, false};
      }
      if (state.text_count == 0) {
        if (kind == TokenKind::TextByte) {
          next.text_count = 1;
          return next;
        }
        if (kind == TokenKind::Null) {
          next.text_null = true;
          return next;
        }
        return reject;
      }
      if (kind == TokenKind::Eot) return GrammarState{Phase::ExpectCatOrEos, 0, false};
      if (kind == TokenKind::TextByte && state.text_count < cfg.t_max) {
        next.text_count = state.text_count + 1;
        return next;
      }
      return reject;
  }
  return reject;
}

std::vector<TokenKind> expected_kinds(const GrammarState& state, const Vocabulary& vocab,
                                      const CodecConfig& cfg) {
  using Phase = GrammarState::Phase;
  switch (state.phase) {
    case Phase::ExpectCatOrEos: return {TokenKind::Cat, TokenKind::Eos};
    case Phase::ExpectX:
    case Phase::ExpectY:
    case Phase::ExpectW:
    case Phase::ExpectH: return {TokenKind::Coord};
    case Phase::ExpectStyle: return {TokenKind::Style, TokenKind::Null};
    case Phase::ExpectTextOrEot:
      if (state.text_null) return {TokenKind::Eot};
      if (state.text_count == 0) return {TokenKind::TextByte, TokenKind::Null};
      if (state.text_count >= cfg.t_max) return {TokenKind::Eot};
      return {TokenKind::TextByte, TokenKind::Eot};
    case Phase::Done: return {TokenKind::Pad};
    case Phase::Reject: return {};
  }
  (void)vocab;
  return {};
}

std::vector<uint8_t> allowed_mask(const GrammarState& state, const Vocabulary& vocab,
                                  const CodecConfig& cfg) {
  using Phase = GrammarState::Phase;
  if (state.phase == Phase::Done || state.phase == Phase::Reject)
    throw InvalidInput("allowed_mask: state is terminal");
  std::vector<uint8_t> mask(static_cast<size_t>(vocab.size()), 0);
  auto set_range = [&](int lo, int n) {
    std::fill(mask.begin() + lo, mask.begin() + lo + n, uint8_t{1});
  };
  switch (state.phase) {
    case Phase::ExpectCatOrEos:
      set_range(vocab.cat_offset(), vocab.category_count());
      mask[Vocabulary::kEos] = 1;
      break;
    case Phase::ExpectX:
    case Phase::ExpectY:
    case Phase::ExpectW:
    case Phase::ExpectH:
      set_range(vocab.coord_offset(), 256);
      break;
    case Phase::ExpectStyle:
      set_range(vocab.style_offset(), vocab.style_count());
      mask[Vocabulary::kNull] = 1;
      break;
    case Phase::ExpectTextOrEot:
      if (state.text_null) {
        mask[Vocabulary::kEot] = 1;
      } else if (state.text_count == 0) {
        set_range(vocab.byte_offset(), 256);
        mask[Vocabulary::kNull] = 1;
      } else if (state.text_count >= cfg.t_max) {
        mask[Vocabulary::kEot] = 1;
      } else {
        set_range(vocab.byte_offset(), 256);
        mask[Vocabulary::kEot] = 1;
      }
      break;
    default:
      break;
  }
  return mask;
}

TokenSequence encode(const Document& doc, const Vocabulary& vocab, const CodecConfig& cfg) {
  TokenSequence seq;
  seq.ids.push_back(Vocabulary::kSos);
  for (size_t i = 0; i < doc.elements.size(); ++i) {
    const auto& e = doc.elements[i];
    if (e.category < 0 || e.category >= vocab.category_count())
      throw InvalidInput("encode: element " + std::to_string(i) +
                         " has unencodable category id " + std::to_string(e.category));
    const QuantBBox q = quantize_bbox(e.bbox, doc.canvas_w, doc.canvas_h);
    seq.ids.push_back(token_of(vocab, TokenKind::Cat, e.category));
    seq.ids.push_back(token_of(vocab, TokenKind::Coord, q.xq));
    seq.ids.push_back(token_of(vocab, TokenKind::Coord, q.yq));
    seq.ids.push_back(token_of(vocab, TokenKind::Coord, q.wq));
    seq.ids.push_back(token_of(vocab, TokenKind::Coord, q.hq));
    if (vocab.style_enabled()) {
      if (e.style.has_value()) {
        if (*e.style < 0 || *e.style >= vocab.style_count())
          throw InvalidInput("encode: element " + std::to_string(i) +
                             " has unencodable style id " + std::to_string(*e.style));
        seq.ids.push_back(token_of(vocab, TokenKind::Style, *e.style));
      } else {
        seq.ids.push_back(Vocabulary::kNull);
      }
    }
    std::string_view text;
    if (cfg.include_text && e.text.has_value()) {
      text = *e.text;
      text = text.substr(0, utf8_truncate_len(text, static_cast<size_t>(cfg.t_max)));
    }
    if (text.empty()) {
      seq.ids.push_back(Vocabulary::kNull);
    } else {
      for (char c : text)
        seq.ids.push_back(token_of(vocab, TokenKind::TextByte, static_cast<uint8_t>(c)));
    }
    seq.ids.push_back(Vocabulary::kEot);
  }
  seq.ids.push_back(Vocabulary::kEos);
  if (cfg.context_limit > 0 && static_cast<int>(seq.ids.size()) > cfg.context_limit)
    throw InvalidInput("encode: sequence too long: " + std::to_string(seq.ids.size()) +
                       " tokens exceeds context " + std::to_string(cfg.context_limit));
  return seq;
}

DecodeResult decode(const TokenSequence& tokens, const Vocabulary& vocab, double canvas_w,
                    double canvas_h, const CodecConfig& cfg) {
  DecodeResult out;
  out.doc.canvas_w = canvas_w;
  out.doc.canvas_h = canvas_h;
  if (tokens.ids.empty() || tokens.ids[0] != Vocabulary::kSos)
    throw ParseError(0, {TokenKind::Sos});

  GrammarState state = grammar_initial();
  Element cur;
  QuantBBox q;
  std::vector<uint8_t> bytes;
  bool text_null = false;
  int coord_slot = 0;

  for (size_t p = 1; p < tokens.ids.size(); ++p) {
    const int id = tokens.ids[p];
    const GrammarState prev = state;
    state = grammar_step(state, id, vocab, cfg);
    if (state.rejected()) throw ParseError(p, expected_kinds(prev, vocab, cfg));
    if (prev.done()) continue;  // trailing PAD
    const auto [kind, value] = kind_of(vocab, id);
    switch (kind) {
      case TokenKind::Cat:
        cur = Element{};
        cur.category = value;
        bytes.clear();
        text_null = false;
        coord_slot = 0;
        break;
      case TokenKind::Coord:
        switch (coord_slot++) {
          case 0: q.xq = value; break;
          case 1: q.yq = value; break;
          case 2: q.wq = value; break;
          default: q.hq = value; break;
        }
        break;
      case TokenKind::Style:
        cur.style = value;
        break;
      case TokenKind::Null:
        if (prev.phase == GrammarState::Phase::ExpectTextOrEot) text_null = true;
        break;
      case TokenKind::TextByte:
        bytes.push_back(static_cast<uint8_t>(value));
        break;
      case TokenKind::Eot:
        cur.bbox = dequantize_bbox(q, canvas_w, canvas_h);
        if (!text_null && !bytes.empty()) cur.text = utf8_repair(bytes);
        out.doc.elements.push_back(cur);
        break;
      default:
        break;  // EOS handled by grammar; PAD unreachable here
    }
  }
  out.truncated = !state.done();
  return out;
}

Document quantized_canonical(const Document& doc, const Vocabulary& vocab,
                             const CodecConfig& cfg) {
  Document out = canonical_order(doc);
  for (auto& e : out.elements) {
    const QuantBBox q = quantize_bbox(e.bbox, out.canvas_w, out.canvas_h);
    e.bbox = dequantize_bbox(q, out.canvas_w, out.canvas_h);
    if (!vocab.style_enabled()) e.style.reset();
    if (cfg.include_text && e.text.has_value()) {
      const size_t n = utf8_truncate_len(*e.text, static_cast<size_t>(cfg.t_max));
      if (n == 0)
        e.text.reset();
      else
        e.text = e.text->substr(0, n);
    } else {
      e.text.reset();
    }
  }
  return out;
}

std::string tokens_to_lines(const TokenSequence& tokens) {
  std::string out;
  for (int32_t id : tokens.ids) {
    out += std::to_string(id);
    out += '\n';
  }
  return out;
}

TokenSequence tokens_from_lines(const std::string& text) {
  TokenSequence seq;
  std::istringstream in(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      size_t pos = 0;
      const int v = std::stoi(line, &pos);
      if (pos != line.size()) throw std::invalid_argument("trailing");
      seq.ids.push_back(v);
    } catch (const std::exception&) {
      throw InvalidInput("tokens_from_lines: bad integer at line " + std::to_string(lineno));
    }
  }
  return seq;
}

bool operator==(const BBox& a, const BBox& b) {
  return a.x == b.x && a.y == b.y && a.w == b.w && a.h == b.h;
}

bool operator==(const Element& a, const Element& b) {
  return a.category == b.category && a.bbox == b.bbox && a.style == b.style && a.text == b.text;
}

bool operator==(const Document& a, const Document& b) {
  return a.id == b.id && a.canvas_w == b.canvas_w && a.canvas_h == b.canvas_h &&
         a.elements == b.elements;
}

}  // namespace docgen
