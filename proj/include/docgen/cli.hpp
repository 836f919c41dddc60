#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "docgen/corpus.hpp"
#include "docgen/metrics.hpp"
#include "docgen/net.hpp"
#include "docgen/sample.hpp"
#include "docgen/train.hpp"

namespace docgen {

// Stable process exit codes, one per failure domain.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitIngest = 3,
  kExitTrain = 4,
  kExitGenerate = 5,
  kExitEval = 6,
};

// Single JSON config carrying every module's settings; flags override
// individual fields. Serialized into checkpoints, reports, and .meta.json
// siblings of JSONL outputs so every artifact records how it was made.
struct RunConfig {
  ModelConfig model;    // vocab_size 0 = derived from the vocabulary
  TrainConfig train;
  SampleConfig sample;
  CodecConfig codec;
  VocabDesc vocab;      // empty category list = inferred from the corpus
  SynthConfig synth;

  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::string& path);  // "" = all defaults
  bool operator==(const RunConfig&) const = default;
};

// Categories/styles observed in a corpus, alphabetical; a category is
// textual iff any of its elements carries text.
VocabDesc infer_vocab(const std::vector<CorpusRecord>& records);

struct SynthArgs {
  std::string config;
  std::string out;
  std::optional<uint64_t> seed;
  std::optional<int> n;
};
int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream& err);

struct IngestArgs {
  std::string coco;
  std::string sidecar;  // optional {annotation_id: {text, font}} join file
  std::string map;      // JSON {coco_name: category_name}; "" = identity
  std::string out;
};
int cmd_ingest(const IngestArgs& args, std::ostream& out, std::ostream& err);

struct TrainArgs {
  std::string config;
  std::string corpus;
  std::string out_checkpoint;
  std::string resume;  // checkpoint path; "" = fresh run
  std::string log;     // metrics JSONL; "" = <out_checkpoint>.log.jsonl
};
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);

struct CompleteArgs {
  std::string checkpoint;
  std::string doc;  // JSONL; every record is completed
  int k = -1;       // prefix length; negative = half of each document
  std::string out;
  std::optional<double> temperature;
  std::optional<int> top_k;
  std::optional<double> top_p;
  std::optional<uint64_t> seed;
};
int cmd_complete(const CompleteArgs& args, std::ostream& out, std::ostream& err);

struct PlaceArgs {
  std::string checkpoint;
  std::string doc;
  std::vector<int> targets;  // element indices; empty = record's own targets
  PlacementMode mode = PlacementMode::Single;
  std::string out;
  std::optional<double> temperature;
  std::optional<int> top_k;
  std::optional<double> top_p;
  std::optional<uint64_t> seed;
};
int cmd_place(const PlaceArgs& args, std::ostream& out, std::ostream& err);

struct EvalArgs {
  std::string generated;
  std::string reference;
  EvalTask task = EvalTask::Completion;
  std::string out;  // report JSON path; "" = stdout only
};
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);

struct RenderArgs {
  std::string doc;
  std::string out;
  bool show_text = false;
  int index = 0;  // record index within the JSONL file
};
int cmd_render(const RenderArgs& args, std::ostream& out, std::ostream& err);

// Full argv dispatch; returns the process exit code.
int run_cli(int argc, const char* const* argv);

}  // namespace docgen
