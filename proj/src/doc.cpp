#include "docgen/doc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace docgen {

CategorySet::CategorySet(std::vector<ElementCategory> categories)
    : categories_(std::move(categories)) {
  std::set<std::string> names;
  for (size_t i = 0; i < categories_.size(); ++i) {
    const auto& c = categories_[i];
    if (c.id != static_cast<int>(i))
      throw ConfigError("category ids must be dense 0..C-1; got id " +
                        std::to_string(c.id) + " at position " + std::to_string(i));
    if (c.name.empty()) throw ConfigError("category name must be non-empty");
    if (!names.insert(c.name).second)
      throw ConfigError("duplicate category name: " + c.name);
  }
}

CategorySet CategorySet::from_names(const std::vector<std::string>& names,
                                    const std::vector<bool>& textual) {
  std::vector<ElementCategory> cats;
  cats.reserve(names.size());
  for (size_t i = 0; i < names.size(); ++i) {
    bool t = textual.empty() ? true : textual.at(i);
    cats.push_back({static_cast<int>(i), names[i], t});
  }
  return CategorySet(std::move(cats));
}

const ElementCategory& CategorySet::at(int id) const {
  if (id < 0 || id >= size())
    throw InvalidInput("category id out of range: " + std::to_string(id));
  return categories_[static_cast<size_t>(id)];
}

std::optional<int> CategorySet::find(std::string_view name) const {
  for (const auto& c : categories_)
    if (c.name == name) return c.id;
  return std::nullopt;
}

int quantize_coord(double v, double extent) {
  if (!std::isfinite(v)) throw InvalidInput("quantize_coord: non-finite value");
  if (!(extent > 0)) throw InvalidInput("quantize_coord: non-positive extent");
  const double bin = std::floor(v / extent * 256.0);
  if (bin < 0) return 0;
  if (bin > 255) return 255;
  return static_cast<int>(bin);
}

double dequantize_coord(int bin, double extent) {
  if (bin < 0 || bin > 255)
    throw InvalidInput("dequantize_coord: bin out of range: " + std::to_string(bin));
  if (!(extent > 0)) throw InvalidInput("dequantize_coord: non-positive extent");
  return (static_cast<double>(bin) + 0.5) / 256.0 * extent;
}

QuantBBox quantize_bbox(const BBox& bbox, double canvas_w, double canvas_h) {
  if (!std::isfinite(bbox.x) || !std::isfinite(bbox.y) || !std::isfinite(bbox.w) ||
      !std::isfinite(bbox.h))
    throw InvalidInput("quantize_bbox: non-finite bbox");
  if (!(bbox.w > 0) || !(bbox.h > 0))
    throw InvalidInput("quantize_bbox: non-positive extent");
  QuantBBox q;
  q.xq = quantize_coord(bbox.x, canvas_w);
  q.yq = quantize_coord(bbox.y, canvas_h);
  q.wq = std::max(1, quantize_coord(bbox.w, canvas_w));
  q.hq = std::max(1, quantize_coord(bbox.h, canvas_h));
  return q;
}

BBox dequantize_bbox(const QuantBBox& q, double canvas_w, double canvas_h) {
  return BBox{dequantize_coord(q.xq, canvas_w), dequantize_coord(q.yq, canvas_h),
              dequantize_coord(q.wq, canvas_w), dequantize_coord(q.hq, canvas_h)};
}

std::vector<size_t> canonical_permutation(const Document& doc) {
  struct Key {
    int yq, xq, cat;
    size_t idx;
  };
  std::vector<Key> keys(doc.elements.size());
  for (size_t i = 0; i < doc.elements.size(); ++i) {
    const auto& e = doc.elements[i];
    keys[i] = {quantize_coord(e.bbox.y, doc.canvas_h),
               quantize_coord(e.bbox.x, doc.canvas_w), e.category, i};
  }
  std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
    if (a.yq != b.yq) return a.yq < b.yq;
    if (a.xq != b.xq) return a.xq < b.xq;
    if (a.cat != b.cat) return a.cat < b.cat;
    return a.idx < b.idx;
  });
  std::vector<size_t> perm(keys.size());
  for (size_t i = 0; i < keys.size(); ++i) perm[i] = keys[i].idx;
  return perm;
}

Document canonical_order(const Document& doc) {
  const std::vector<size_t> perm = canonical_permutation(doc);
  Document out;
  out.id = doc.id;
  out.canvas_w = doc.canvas_w;
  out.canvas_h = doc.canvas_h;
  out.elements.reserve(doc.elements.size());
  for (size_t idx : perm) out.elements.push_back(doc.elements[idx]);
  return out;
}

ValidationReport validate(const Document& doc, const CategorySet& categories,
                          const DocLimits& limits) {
  ValidationReport report;
  auto add = [&](Violation::Code code, int elem, std::string msg) {
    report.violations.push_back({code, elem, std::move(msg)});
  };

  if (!(doc.canvas_w > 0) || !(doc.canvas_h > 0) || !std::isfinite(doc.canvas_w) ||
      !std::isfinite(doc.canvas_h)) {
    add(Violation::Code::BadCanvas, -1, "canvas extents must be positive and finite");
    return report;
  }
  if (static_cast<int>(doc.elements.size()) > limits.max_elements)
    add(Violation::Code::TooManyElements, -1,
        "element count " + std::to_string(doc.elements.size()) + " exceeds maximum " +
            std::to_string(limits.max_elements));

  const double eps_x = 1e-6 * doc.canvas_w;
  const double eps_y = 1e-6 * doc.canvas_h;
  for (size_t i = 0; i < doc.elements.size(); ++i) {
    const auto& e = doc.elements[i];
    const int idx = static_cast<int>(i);
    const auto& b = e.bbox;
    if (!std::isfinite(b.x) || !std::isfinite(b.y) || !std::isfinite(b.w) ||
        !std::isfinite(b.h)) {
      add(Violation::Code::NonFiniteBBox, idx, "non-finite bbox");
      continue;
    }
    if (!(b.w > 0) || !(b.h > 0))
      add(Violation::Code::NonPositiveExtent, idx, "non-positive extent");
    if (b.x < 0 || b.y < 0)
      add(Violation::Code::NegativeOrigin, idx, "negative origin");
    if (b.x + b.w > doc.canvas_w + eps_x || b.y + b.h > doc.canvas_h + eps_y)
      add(Violation::Code::OutOfCanvas, idx, "bbox exceeds canvas");
    if (e.category < 0 || e.category >= categories.size()) {
      add(Violation::Code::UnknownCategory, idx,
          "unknown category id " + std::to_string(e.category));
      continue;
    }
    if (e.text.has_value() && !e.text->empty() && !categories.at(e.category).textual)
      add(Violation::Code::TextOnNonTextual, idx,
          "text on non-textual category '" + categories.at(e.category).name + "'");
  }
  return report;
}

}  // namespace docgen
