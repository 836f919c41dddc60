#pragma once

#include <optional>
#include <string>
#include <vector>

#include "docgen/error.hpp"

namespace docgen {

// One layout category (title, paragraph, table, ...). `textual` marks whether
// elements of this category may carry raw text.
struct ElementCategory {
  int id = 0;
  std::string name;
  bool textual = true;
};

// Dense, validated category registry. Ids are the element indices 0..C-1.
class CategorySet {
 public:
  CategorySet() = default;
  explicit CategorySet(std::vector<ElementCategory> categories);

  // Convenience: names with ids assigned by position, all textual flags set.
  static CategorySet from_names(const std::vector<std::string>& names,
                                const std::vector<bool>& textual = {});

  int size() const { return static_cast<int>(categories_.size()); }
  const ElementCategory& at(int id) const;
  std::optional<int> find(std::string_view name) const;
  const std::vector<ElementCategory>& all() const { return categories_; }

 private:
  std::vector<ElementCategory> categories_;
};

// Axis-aligned box in canvas units, top-left anchored.
struct BBox {
  double x = 0, y = 0, w = 0, h = 0;
};

// 8-bit quantized box; each bin in [0, 255].
struct QuantBBox {
  int xq = 0, yq = 0, wq = 0, hq = 0;
};

// Per-element attribute slots in serialization order.
enum class AttributeKind { Category, X, Y, W, H, Style, Text };

struct Element {
  int category = 0;
  BBox bbox;
  std::optional<int> style;
  std::optional<std::string> text;
};

struct Document {
  std::string id;
  double canvas_w = 0, canvas_h = 0;
  std::vector<Element> elements;
};

struct DocLimits {
  int max_elements = 128;
};

// bin = clamp(floor(v / extent * 256), 0, 255)
int quantize_coord(double v, double extent);

// bin-center convention: v = (bin + 0.5) / 256 * extent
double dequantize_coord(int bin, double extent);

// x,w against canvas_w; y,h against canvas_h; wq/hq floored at 1 bin so no
// visible element quantizes to zero extent.
QuantBBox quantize_bbox(const BBox& bbox, double canvas_w, double canvas_h);
BBox dequantize_bbox(const QuantBBox& q, double canvas_w, double canvas_h);

// Reading order: elements sorted by (yq, xq, category id, original index),
// ascending. Stable and idempotent.
Document canonical_order(const Document& doc);

// The permutation canonical_order applies: result[pos] is the original index
// of the element at reading-order position pos.
std::vector<size_t> canonical_permutation(const Document& doc);

struct Violation {
  enum class Code {
    NonPositiveExtent,
    NegativeOrigin,
    OutOfCanvas,
    NonFiniteBBox,
    TooManyElements,
    TextOnNonTextual,
    UnknownCategory,
    BadCanvas,
  };
  Code code;
  int element = -1;  // -1 for document-level violations
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

ValidationReport validate(const Document& doc, const CategorySet& categories,
                          const DocLimits& limits = {});

}  // namespace docgen
