#include "docgen/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "docgen/rng.hpp"

namespace docgen {

using json = nlohmann::json;

Document to_document(const CorpusRecord& rec, const CategorySet& categories,
                     const std::vector<std::string>& styles, bool strict) {
  Document doc;
  doc.id = rec.id;
  doc.canvas_w = rec.canvas_w;
  doc.canvas_h = rec.canvas_h;
  doc.elements.reserve(rec.elements.size());
  for (size_t i = 0; i < rec.elements.size(); ++i) {
    const auto& re = rec.elements[i];
    const auto cat = categories.find(re.category);
    if (!cat)
      throw IngestError("record '" + rec.id + "': unknown category '" + re.category +
                        "' at element " + std::to_string(i));
    Element e;
    e.category = *cat;
    e.bbox = {re.bbox[0], re.bbox[1], re.bbox[2], re.bbox[3]};
    if (re.style.has_value()) {
      const auto it = std::find(styles.begin(), styles.end(), *re.style);
      if (it != styles.end()) {
        e.style = static_cast<int>(it - styles.begin());
      } else if (strict) {
        throw IngestError("record '" + rec.id + "': unknown style '" + *re.style + "'");
      }
    }
    if (re.text.has_value() && !re.text->empty()) e.text = *re.text;
    doc.elements.push_back(std::move(e));
  }
  if (strict) {
    const ValidationReport report = validate(doc, categories);
    if (!report.ok()) {
      std::string msg = "record '" + rec.id + "' fails validation:";
      for (const auto& v : report.violations) {
        msg += " [";
        if (v.element >= 0) msg += "element " + std::to_string(v.element) + ": ";
        msg += v.message + "]";
      }
      throw IngestError(msg);
    }
  }
  return doc;
}

CorpusRecord to_record(const Document& doc, const CategorySet& categories,
                       const std::vector<std::string>& styles) {
  CorpusRecord rec;
  rec.id = doc.id;
  rec.canvas_w = doc.canvas_w;
  rec.canvas_h = doc.canvas_h;
  rec.elements.reserve(doc.elements.size());
  for (const auto& e : doc.elements) {
    CorpusElement re;
    re.category = categories.at(e.category).name;
    re.bbox = {e.bbox.x, e.bbox.y, e.bbox.w, e.bbox.h};
    if (e.style.has_value()) {
      if (*e.style < 0 || static_cast<size_t>(*e.style) >= styles.size())
        throw InvalidInput("to_record: style id " + std::to_string(*e.style) +
                           " has no name");
      re.style = styles[static_cast<size_t>(*e.style)];
    }
    if (e.text.has_value()) re.text = *e.text;
    rec.elements.push_back(std::move(re));
  }
  return rec;
}

namespace {

json record_to_json_obj(const CorpusRecord& rec) {
  json jels = json::array();
  for (const auto& e : rec.elements) {
    json je;
    je["bbox"] = {e.bbox[0], e.bbox[1], e.bbox[2], e.bbox[3]};
    je["category"] = e.category;
    if (e.style.has_value()) je["style"] = *e.style;
    if (e.text.has_value()) je["text"] = *e.text;
    jels.push_back(std::move(je));
  }
  json j;
  j["canvas"] = {{"h", rec.canvas_h}, {"w", rec.canvas_w}};
  j["elements"] = std::move(jels);
  j["id"] = rec.id;
  if (!rec.targets.empty()) j["targets"] = rec.targets;
  return j;
}

CorpusRecord record_from_json_obj(const json& j) {
  CorpusRecord rec;
  rec.id = j.at("id").get<std::string>();
  const json& jc = j.at("canvas");
  rec.canvas_w = jc.at("w").get<double>();
  rec.canvas_h = jc.at("h").get<double>();
  if (!(rec.canvas_w > 0) || !(rec.canvas_h > 0))
    throw InvalidInput("canvas extents must be positive");
  for (const json& je : j.at("elements")) {
    CorpusElement e;
    e.category = je.at("category").get<std::string>();
    const json& jb = je.at("bbox");
    if (!jb.is_array() || jb.size() != 4)
      throw InvalidInput("bbox must be a 4-element array");
    for (size_t k = 0; k < 4; ++k) e.bbox[k] = jb[k].get<double>();
    if (je.contains("style")) e.style = je.at("style").get<std::string>();
    if (je.contains("text")) e.text = je.at("text").get<std::string>();
    rec.elements.push_back(std::move(e));
  }
  if (j.contains("targets")) rec.targets = j.at("targets").get<std::vector<int>>();
  return rec;
}

}  // namespace

std::string record_to_json(const CorpusRecord& rec) { return record_to_json_obj(rec).dump(); }

CorpusRecord record_from_json(const std::string& line) {
  return record_from_json_obj(json::parse(line));
}

std::vector<CorpusRecord> read_jsonl(const std::string& path, bool strict,
                                     std::vector<JsonlDiagnostic>* diagnostics) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open corpus: " + path);
  std::vector<CorpusRecord> records;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      records.push_back(record_from_json(line));
    } catch (const std::exception& e) {
      if (strict)
        throw IngestError(path + ":" + std::to_string(lineno) + ": " + e.what());
      if (diagnostics) diagnostics->push_back({lineno, e.what()});
    }
  }
  return records;
}

void write_jsonl(const std::string& path, const std::vector<CorpusRecord>& records) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open corpus for writing: " + path);
  for (const auto& rec : records) os << record_to_json(rec) << '\n';
  os.flush();
  if (!os) throw IoError("write failed: " + path);
}

std::vector<CorpusRecord> ingest_coco(const std::string& coco_path,
                                      const std::string& sidecar_path,
                                      const std::map<std::string, std::string>& category_map,
                                      IngestStats* stats) {
  std::ifstream is(coco_path);
  if (!is) throw IoError("cannot open COCO file: " + coco_path);
  json coco;
  try {
    is >> coco;
  } catch (const json::exception& e) {
    throw IngestError(std::string("bad COCO JSON: ") + e.what());
  }

  json sidecar = json::object();
  if (!sidecar_path.empty()) {
    std::ifstream ss(sidecar_path);
    if (!ss) throw IoError("cannot open sidecar: " + sidecar_path);
    try {
      ss >> sidecar;
    } catch (const json::exception& e) {
      throw IngestError(std::string("bad sidecar JSON: ") + e.what());
    }
  }

  IngestStats local;
  IngestStats& st = stats ? *stats : local;

  // COCO category id -> mapped artifact category name
  std::map<int64_t, std::string> cat_name;
  std::vector<std::string> unmapped;
  for (const json& jc : coco.value("categories", json::array())) {
    const int64_t cid = jc.at("id").get<int64_t>();
    const std::string name = jc.at("name").get<std::string>();
    const auto it = category_map.find(name);
    if (it == category_map.end())
      unmapped.push_back(name + " (id " + std::to_string(cid) + ")");
    else
      cat_name[cid] = it->second;
  }

  struct ImageInfo {
    double w = 0, h = 0;
  };
  std::map<int64_t, ImageInfo> images;
  for (const json& ji : coco.value("images", json::array())) {
    const int64_t iid = ji.at("id").get<int64_t>();
    images[iid] = {ji.at("width").get<double>(), ji.at("height").get<double>()};
    ++st.images;
  }

  struct Ann {
    int64_t id;
    int64_t category;
    std::array<double, 4> bbox;
  };
  std::map<int64_t, std::vector<Ann>> by_image;
  std::vector<int64_t> bad_category_ids;
  for (const json& ja : coco.value("annotations", json::array())) {
    ++st.annotations;
    const int64_t image_id = ja.at("image_id").get<int64_t>();
    if (!images.count(image_id)) {
      ++st.skipped_annotations;
      st.diagnostics.push_back("annotation " + std::to_string(ja.at("id").get<int64_t>()) +
                               ": no images entry for image_id " + std::to_string(image_id));
      continue;
    }
    Ann a;
    a.id = ja.at("id").get<int64_t>();
    a.category = ja.at("category_id").get<int64_t>();
    const json& jb = ja.at("bbox");
    for (size_t k = 0; k < 4; ++k) a.bbox[k] = jb.at(k).get<double>();
    if (!cat_name.count(a.category)) bad_category_ids.push_back(a.category);
    by_image[image_id].push_back(a);
  }
  if (!unmapped.empty() && !bad_category_ids.empty()) {
    std::string msg = "unmapped COCO categories in use:";
    for (const auto& u : unmapped) msg += " " + u;
    throw IngestError(msg);
  }
  if (!bad_category_ids.empty()) {
    std::sort(bad_category_ids.begin(), bad_category_ids.end());
    bad_category_ids.erase(std::unique(bad_category_ids.begin(), bad_category_ids.end()),
                           bad_category_ids.end());
    std::string msg = "annotations reference unknown category ids:";
    for (int64_t id : bad_category_ids) msg += " " + std::to_string(id);
    throw IngestError(msg);
  }

  std::vector<CorpusRecord> records;
  for (const auto& [image_id, info] : images) {
    CorpusRecord rec;
    rec.id = std::to_string(image_id);
    rec.canvas_w = info.w;
    rec.canvas_h = info.h;
    auto it = by_image.find(image_id);
    if (it != by_image.end()) {
      std::sort(it->second.begin(), it->second.end(),
                [](const Ann& a, const Ann& b) { return a.id < b.id; });
      for (const Ann& a : it->second) {
        double x = a.bbox[0], y = a.bbox[1], w = a.bbox[2], h = a.bbox[3];
        const bool inside = x >= 0 && y >= 0 && x + w <= info.w && y + h <= info.h;
        if (!inside) {
          const double x2 = std::clamp(x + w, 0.0, info.w);
          const double y2 = std::clamp(y + h, 0.0, info.h);
          x = std::clamp(x, 0.0, info.w);
          y = std::clamp(y, 0.0, info.h);
          w = x2 - x;
          h = y2 - y;
          ++st.clamped_boxes;
        }
        if (!(w > 0) || !(h > 0)) {
          ++st.dropped_elements;
          st.diagnostics.push_back("annotation " + std::to_string(a.id) +
                                   ": degenerate box after clamping, dropped");
          continue;
        }
        CorpusElement e;
        e.category = cat_name.at(a.category);
        e.bbox = {x, y, w, h};
        const std::string key = std::to_string(a.id);
        if (sidecar.contains(key)) {
          const json& js = sidecar.at(key);
          if (js.contains("text")) e.text = js.at("text").get<std::string>();
          if (js.contains("font")) e.style = js.at("font").get<std::string>();
        }
        rec.elements.push_back(std::move(e));
      }
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void SynthConfig::validate() const {
  if (n_docs < 0) throw ConfigError("synth: n_docs must be >= 0");
  if (category_weights.size() != 5)
    throw ConfigError("synth: category_weights must have 5 entries "
                      "(title, paragraph, figure, caption, table)");
  int positive = 0;
  for (int w : category_weights) {
    if (w < 0) throw ConfigError("synth: weights must be >= 0");
    if (w > 0) ++positive;
  }
  if (positive == 0) throw ConfigError("synth: at least one weight must be positive");
  if (category_weights[1] <= 0)
    throw ConfigError("synth: paragraph weight must be positive (columns need body text)");
  if (columns < 0 || columns > 2) throw ConfigError("synth: columns must be 0, 1, or 2");
  if (min_paragraphs < 1 || max_paragraphs < min_paragraphs)
    throw ConfigError("synth: paragraph range invalid");
}

CategorySet synth_categories() {
  return CategorySet::from_names({"title", "paragraph", "figure", "caption", "table"},
                                 {true, true, false, true, false});
}

namespace {

const std::vector<std::string>& builtin_words() {
  static const std::vector<std::string> words = {
      "the",      "model",   "data",     "layout",  "page",    "results", "method",
      "table",    "figure",  "shows",    "analysis", "of",     "a",       "structure",
      "document", "text",    "content",  "section", "values",  "measured", "baseline",
      "over",     "tokens",  "sequence", "order",   "reading", "columns", "grid",
      "study",    "sample",  "training", "error",   "final",   "report",  "design",
      "system",   "input",   "output",   "test",    "index"};
  return words;
}

std::string make_words(Rng& rng, const std::vector<std::string>& words, int count,
                       bool capitalize) {
  std::string out;
  for (int i = 0; i < count; ++i) {
    std::string w = words[static_cast<size_t>(rng.below(words.size()))];
    if (capitalize && i == 0 && !w.empty())
      w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
    if (i) out += ' ';
    out += w;
  }
  return out;
}

}  // namespace

std::vector<CorpusRecord> synth_generate(const SynthConfig& config) {
  config.validate();
  const std::vector<std::string>& words =
      config.words.empty() ? builtin_words() : config.words;
  const int w_title = config.category_weights[0];
  const int w_para = config.category_weights[1];
  const int w_fig = config.category_weights[2];
  const int w_capt = config.category_weights[3];
  const int w_table = config.category_weights[4];

  // US-letter page in points; all geometry on an integer grid
  constexpr int kW = 612, kH = 792, kMargin = 36, kGutter = 18;

  std::vector<CorpusRecord> records;
  records.reserve(static_cast<size_t>(config.n_docs));
  for (int d = 0; d < config.n_docs; ++d) {
    Rng rng = Rng::fork(config.seed, static_cast<uint64_t>(d));
    CorpusRecord rec;
    {
      std::ostringstream id;
      id << "synth-" << std::setw(5) << std::setfill('0') << d;
      rec.id = id.str();
    }
    rec.canvas_w = kW;
    rec.canvas_h = kH;

    int top = kMargin;
    if (w_title > 0 && rng.chance(4, 5)) {
      const int th = 24 + static_cast<int>(rng.below(17));  // 24..40
      CorpusElement e;
      e.category = "title";
      e.bbox = {static_cast<double>(kMargin), static_cast<double>(top),
                static_cast<double>(kW - 2 * kMargin), static_cast<double>(th)};
      e.text = make_words(rng, words, 3 + static_cast<int>(rng.below(4)), true);
      rec.elements.push_back(std::move(e));
      top += th + 12 + static_cast<int>(rng.below(9));
    }

    const int cols =
        config.columns != 0 ? config.columns : 1 + static_cast<int>(rng.below(2));
    const int cw = (kW - 2 * kMargin - kGutter * (cols - 1)) / cols;
    const int bottom = kH - kMargin;
    const int block_total = w_para + w_fig + w_table;

    for (int c = 0; c < cols; ++c) {
      const int cx = kMargin + c * (cw + kGutter);
      int y = top;
      int paragraphs_left =
          config.min_paragraphs +
          static_cast<int>(rng.below(
              static_cast<uint64_t>(config.max_paragraphs - config.min_paragraphs + 1)));
      while (y + 40 <= bottom) {
        int pick = static_cast<int>(rng.below(static_cast<uint64_t>(block_total)));
        int kind;  // 0 paragraph, 1 figure, 2 table
        if (pick < w_para)
          kind = 0;
        else if (pick < w_para + w_fig)
          kind = 1;
        else
          kind = 2;
        if (kind == 0 && paragraphs_left <= 0) break;

        if (kind == 0) {
          const int h = 40 + static_cast<int>(rng.below(81));  // 40..120
          if (y + h > bottom) break;
          CorpusElement e;
          e.category = "paragraph";
          e.bbox = {static_cast<double>(cx), static_cast<double>(y),
                    static_cast<double>(cw), static_cast<double>(h)};
          e.text = make_words(rng, words, 8 + static_cast<int>(rng.below(25)), false);
          rec.elements.push_back(std::move(e));
          y += h;
          --paragraphs_left;
        } else if (kind == 1) {
          const int fh = 90 + static_cast<int>(rng.below(91));  // 90..180
          const int ch = 14 + static_cast<int>(rng.below(7));   // caption 14..20
          const bool with_caption = w_capt > 0;
          const int need = fh + (with_caption ? 4 + ch : 0);
          if (y + need > bottom) break;
          CorpusElement f;
          f.category = "figure";
          f.bbox = {static_cast<double>(cx), static_cast<double>(y),
                    static_cast<double>(cw), static_cast<double>(fh)};
          rec.elements.push_back(std::move(f));
          y += fh;
          if (with_caption) {
            y += 4;
            CorpusElement cap;
            cap.category = "caption";
            cap.bbox = {static_cast<double>(cx), static_cast<double>(y),
                        static_cast<double>(cw), static_cast<double>(ch)};
            cap.text = make_words(rng, words, 4 + static_cast<int>(rng.below(7)), true);
            rec.elements.push_back(std::move(cap));
            y += ch;
          }
        } else {
          const int h = 60 + static_cast<int>(rng.below(101));  // 60..160
          if (y + h > bottom) break;
          CorpusElement e;
          e.category = "table";
          e.bbox = {static_cast<double>(cx), static_cast<double>(y),
                    static_cast<double>(cw), static_cast<double>(h)};
          rec.elements.push_back(std::move(e));
          y += h;
        }
        y += 8 + static_cast<int>(rng.below(9));  // block gap 8..16
      }
    }
    records.push_back(std::move(rec));
  }
  return records;
}

SplitResult split(const std::vector<CorpusRecord>& records, const std::array<double, 3>& ratios,
                  uint64_t seed) {
  double sum = 0;
  for (double r : ratios) {
    if (r < 0) throw InvalidInput("split: ratios must be >= 0");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw InvalidInput("split: ratios must sum to 1");
  {
    std::vector<std::string> ids;
    for (const auto& r : records) ids.push_back(r.id);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
      throw IngestError("split: duplicate record ids");
  }

  const size_t n = records.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (size_t i = n; i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.below(i));
    std::swap(order[i - 1], order[j]);
  }

  // largest-remainder apportionment
  std::array<size_t, 3> counts{};
  std::array<double, 3> frac{};
  size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = ratios[static_cast<size_t>(k)] * static_cast<double>(n);
    counts[static_cast<size_t>(k)] = static_cast<size_t>(std::floor(exact));
    frac[static_cast<size_t>(k)] = exact - std::floor(exact);
    assigned += counts[static_cast<size_t>(k)];
  }
  while (assigned < n) {
    int best = 0;
    for (int k = 1; k < 3; ++k)
      if (frac[static_cast<size_t>(k)] > frac[static_cast<size_t>(best)]) best = k;
    ++counts[static_cast<size_t>(best)];
    frac[static_cast<size_t>(best)] = -1;
    ++assigned;
  }

  SplitResult out;
  size_t pos = 0;
  for (size_t i = 0; i < counts[0]; ++i) out.train.push_back(records[order[pos++]]);
  for (size_t i = 0; i < counts[1]; ++i) out.val.push_back(records[order[pos++]]);
  for (size_t i = 0; i < counts[2]; ++i) out.test.push_back(records[order[pos++]]);
  return out;
}

CorpusStats corpus_stats(const std::vector<CorpusRecord>& records) {
  CorpusStats st;
  st.docs = static_cast<int64_t>(records.size());
  for (const auto& r : records) {
    st.elements += static_cast<int64_t>(r.elements.size());
    for (const auto& e : r.elements) ++st.per_category[e.category];
  }
  st.mean_elements = st.docs > 0 ? static_cast<double>(st.elements) /
                                       static_cast<double>(st.docs)
                                 : 0.0;
  return st;
}

}  // namespace docgen
