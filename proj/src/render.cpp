#include "docgen/render.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <vector>

#include "docgen/error.hpp"

namespace docgen {

namespace {

std::string fmt3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char ch : s) {
    switch (ch) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        // C0 controls other than tab/newline/cr are not legal XML 1.0
        if (static_cast<unsigned char>(ch) < 0x20 && ch != '\t' && ch != '\n' && ch != '\r')
          out += ' ';
        else
          out += ch;
    }
  }
  return out;
}

// Wraps at codepoint boundaries; explicit newlines also break.
std::vector<std::string> wrap_text(const std::string& text, size_t max_chars) {
  std::vector<std::string> lines;
  std::string cur;
  size_t chars = 0;
  auto flush = [&] {
    lines.push_back(cur);
    cur.clear();
    chars = 0;
  };
  for (size_t i = 0; i < text.size();) {
    if (text[i] == '\n') {
      flush();
      ++i;
      continue;
    }
    size_t len = 1;
    while (i + len < text.size() &&
           (static_cast<unsigned char>(text[i + len]) & 0xC0) == 0x80)
      ++len;
    if (chars == max_chars) flush();
    cur.append(text, i, len);
    ++chars;
    i += len;
  }
  if (!cur.empty()) lines.push_back(cur);
  return lines;
}

}  // namespace

std::string category_color(const std::string& name) {
  static const char* kPalette[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
                                   "#edc949", "#af7aa1", "#ff9da7", "#9c755f", "#bab0ac"};
  return kPalette[fnv1a(name) % 10];
}

std::string render_svg(const CorpusRecord& rec, const RenderOptions& opts) {
  if (!(rec.canvas_w > 0) || !(rec.canvas_h > 0))
    throw InvalidInput("render: canvas extents must be positive");
  if (!(opts.font_size > 0)) throw InvalidInput("render: font_size must be positive");

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << fmt3(rec.canvas_w)
      << ' ' << fmt3(rec.canvas_h) << "\" width=\"" << fmt3(rec.canvas_w) << "\" height=\""
      << fmt3(rec.canvas_h) << "\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"" << fmt3(rec.canvas_w) << "\" height=\""
      << fmt3(rec.canvas_h) << "\" fill=\"#ffffff\"/>\n";

  for (size_t i = 0; i < rec.elements.size(); ++i) {
    const CorpusElement& e = rec.elements[i];
    const std::string color = category_color(e.category);
    const double x = e.bbox[0], y = e.bbox[1], w = e.bbox[2], h = e.bbox[3];
    svg << "<rect x=\"" << fmt3(x) << "\" y=\"" << fmt3(y) << "\" width=\"" << fmt3(w)
        << "\" height=\"" << fmt3(h) << "\" fill=\"" << color
        << "\" fill-opacity=\"0.25\" stroke=\"" << color << "\" stroke-width=\"1\"/>\n";
    if (!opts.show_text || !e.text.has_value() || e.text->empty()) continue;

    svg << "<clipPath id=\"c" << i << "\"><rect x=\"" << fmt3(x) << "\" y=\"" << fmt3(y)
        << "\" width=\"" << fmt3(w) << "\" height=\"" << fmt3(h) << "\"/></clipPath>\n"
        << "<g clip-path=\"url(#c" << i << ")\" font-family=\"monospace\" font-size=\""
        << fmt3(opts.font_size) << "\" fill=\"#202020\">\n";
    const double fs = opts.font_size;
    const size_t per_line = static_cast<size_t>(std::max(1.0, w / (0.6 * fs)));
    const std::vector<std::string> lines = wrap_text(*e.text, per_line);
    double baseline = y + fs;
    for (const std::string& line : lines) {
      if (baseline - fs > y + h) break;  // fully below the clip window
      svg << "<text x=\"" << fmt3(x + 2.0) << "\" y=\"" << fmt3(baseline) << "\">"
          << xml_escape(line) << "</text>\n";
      baseline += 1.2 * fs;
    }
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace docgen
