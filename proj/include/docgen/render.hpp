#pragma once

#include <string>

#include "docgen/corpus.hpp"

namespace docgen {

struct RenderOptions {
  bool show_text = false;
  double font_size = 10.0;
  bool operator==(const RenderOptions&) const = default;
};

// Stable fill color for a category name (name hash into a fixed palette), so
// a category keeps its color across documents and corpora.
std::string category_color(const std::string& name);

// Deterministic SVG 1.1: white canvas rect, one rect per element, optional
// text runs wrapped and clipped to their boxes. Every coordinate is printed
// with fixed 3-decimal precision, so identical records render to identical
// bytes. Throws InvalidInput on a non-positive canvas.
std::string render_svg(const CorpusRecord& rec, const RenderOptions& opts = {});

}  // namespace docgen
