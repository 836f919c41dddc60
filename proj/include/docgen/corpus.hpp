#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "docgen/doc.hpp"

namespace docgen {

struct CorpusElement {
  std::string category;                 // category name, resolved via CategorySet
  std::array<double, 4> bbox{};         // [x, y, w, h] in canvas units
  std::optional<std::string> style;
  std::optional<std::string> text;
  bool operator==(const CorpusElement&) const = default;
};

// One JSONL document record. `targets` marks reading-order element positions
// that were model-placed (written by placement runs, consumed by evaluation).
struct CorpusRecord {
  std::string id;
  double canvas_w = 0, canvas_h = 0;
  std::vector<CorpusElement> elements;
  std::vector<int> targets;
  bool operator==(const CorpusRecord&) const = default;
};

// Record <-> Document conversion. Strict mode validates the document and
// throws IngestError on any violation; lenient mode only resolves names
// (generated geometry may legitimately spill past the canvas).
Document to_document(const CorpusRecord& rec, const CategorySet& categories,
                     const std::vector<std::string>& styles = {}, bool strict = true);
CorpusRecord to_record(const Document& doc, const CategorySet& categories,
                       const std::vector<std::string>& styles = {});

struct JsonlDiagnostic {
  size_t line = 0;
  std::string message;
};

// JSON-lines corpus I/O with a canonical field layout (alphabetical keys),
// so write(read(write(x))) is byte-identical. Lenient mode collects
// line-addressed diagnostics and keeps the good lines; strict mode throws.
std::vector<CorpusRecord> read_jsonl(const std::string& path, bool strict = false,
                                     std::vector<JsonlDiagnostic>* diagnostics = nullptr);
void write_jsonl(const std::string& path, const std::vector<CorpusRecord>& records);
std::string record_to_json(const CorpusRecord& rec);
CorpusRecord record_from_json(const std::string& line);

struct IngestStats {
  int64_t images = 0;
  int64_t annotations = 0;
  int64_t clamped_boxes = 0;
  int64_t dropped_elements = 0;
  int64_t skipped_annotations = 0;  // annotations without an images entry
  std::vector<std::string> diagnostics;
};

// COCO-style ingestion: one record per image, annotations grouped by
// image_id, categories mapped by name through category_map, text/style
// joined from an optional sidecar {annotation_id: {text, font}}.
std::vector<CorpusRecord> ingest_coco(const std::string& coco_path,
                                      const std::string& sidecar_path,
                                      const std::map<std::string, std::string>& category_map,
                                      IngestStats* stats = nullptr);

// The synthetic page grammar: title band, 1-2 text columns of paragraph
// blocks with optional figure+caption and table blocks, words drawn from a
// seeded list. Control flow is integer-only so output is identical across
// platforms.
struct SynthConfig {
  uint64_t seed = 0;
  int n_docs = 100;
  // relative block weights: title, paragraph, figure, caption, table
  std::vector<int> category_weights = {8, 60, 10, 10, 12};
  int columns = 0;  // 1 or 2; 0 draws per document
  int min_paragraphs = 2, max_paragraphs = 5;  // per column
  std::vector<std::string> words;  // empty = builtin list

  void validate() const;
  bool operator==(const SynthConfig&) const = default;
};

// Category set the synthesizer emits (title, paragraph, figure, caption,
// table; figure and table are non-textual).
CategorySet synth_categories();

std::vector<CorpusRecord> synth_generate(const SynthConfig& config);

struct SplitResult {
  std::vector<CorpusRecord> train, val, test;
};

// Deterministic shuffle then largest-remainder partition; sizes within 1 of
// exact proportions. Ratios must sum to 1 (1e-9), ids must be unique.
SplitResult split(const std::vector<CorpusRecord>& records,
                  const std::array<double, 3>& ratios, uint64_t seed);

struct CorpusStats {
  int64_t docs = 0;
  int64_t elements = 0;
  double mean_elements = 0;
  std::map<std::string, int64_t> per_category;
};
CorpusStats corpus_stats(const std::vector<CorpusRecord>& records);

}  // namespace docgen
