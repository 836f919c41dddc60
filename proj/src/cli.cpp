#include "docgen/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "docgen/doc.hpp"
#include "docgen/render.hpp"

namespace docgen {

using json = nlohmann::json;

namespace {

// Maps library errors onto the documented exit codes. `fallback` is the
// command's own failure domain, used for I/O and unexpected errors.
template <typename F>
int guard(int fallback, std::ostream& err, F&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IngestError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIngest;
  } catch (const TrainError& e) {
    err << "error: " << e.what() << '\n';
    return kExitTrain;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitGenerate;
  } catch (const GenerateError& e) {
    err << "error: " << e.what() << '\n';
    return kExitGenerate;
  } catch (const EvalError& e) {
    err << "error: " << e.what() << '\n';
    return kExitEval;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return fallback;
  }
}

void check_keys(const json& j, const std::string& scope,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config: '" + scope + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find_if(allowed.begin(), allowed.end(),
                     [&](const char* a) { return key == a; }) == allowed.end())
      throw ConfigError("config: unknown key '" + scope + "." + key + "'");
  }
}

json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config: " + path);
  try {
    json j;
    is >> j;
    return j;
  } catch (const json::exception& e) {
    throw ConfigError("bad JSON in " + path + ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << text;
  os.flush();
  if (!os) throw IoError("write failed: " + path);
}

// Every JSONL artifact gets a .meta.json sibling recording how it was made.
void write_meta(const std::string& artifact_path, json meta) {
  write_text_file(artifact_path + ".meta.json", meta.dump(2) + "\n");
}

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

SampleConfig apply_sample_flags(SampleConfig sc, const std::optional<double>& temperature,
                                const std::optional<int>& top_k,
                                const std::optional<double>& top_p,
                                const std::optional<uint64_t>& seed) {
  if (temperature) sc.temperature = *temperature;
  if (top_k) sc.top_k = *top_k;
  if (top_p) sc.top_p = *top_p;
  if (seed) sc.seed = *seed;
  sc.validate();
  return sc;
}

}  // namespace

std::string RunConfig::to_json() const {
  json j;
  j["codec"] = {{"context_limit", codec.context_limit},
                {"include_text", codec.include_text},
                {"t_max", codec.t_max}};
  j["model"] = {{"context", model.context}, {"d_ff", model.d_ff},
                {"d_model", model.d_model}, {"dropout", model.dropout},
                {"n_heads", model.n_heads}, {"n_layers", model.n_layers},
                {"vocab_size", model.vocab_size}};
  j["sample"] = {{"max_new_tokens", sample.max_new_tokens},
                 {"seed", sample.seed},
                 {"temperature", sample.temperature},
                 {"top_k", sample.top_k},
                 {"top_p", sample.top_p}};
  j["synth"] = {{"category_weights", synth.category_weights},
                {"columns", synth.columns},
                {"max_paragraphs", synth.max_paragraphs},
                {"min_paragraphs", synth.min_paragraphs},
                {"n_docs", synth.n_docs},
                {"seed", synth.seed},
                {"words", synth.words}};
  j["train"] = {{"batch_size", train.batch_size},
                {"grad_clip_norm", train.grad_clip_norm},
                {"label_smoothing", train.label_smoothing},
                {"lr", train.lr},
                {"seed", train.seed},
                {"total_steps", train.total_steps},
                {"warmup_steps", train.warmup_steps}};
  j["vocab"] = {{"categories", vocab.category_names},
                {"style_enabled", vocab.style_enabled},
                {"styles", vocab.styles},
                {"textual", vocab.category_textual}};
  return j.dump();
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config JSON: ") + e.what());
  }
  RunConfig rc;
  check_keys(j, "", {"codec", "model", "sample", "synth", "train", "vocab"});
  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m, "model",
               {"context", "d_ff", "d_model", "dropout", "n_heads", "n_layers", "vocab_size"});
    rc.model.context = m.value("context", rc.model.context);
    rc.model.d_ff = m.value("d_ff", rc.model.d_ff);
    rc.model.d_model = m.value("d_model", rc.model.d_model);
    rc.model.dropout = m.value("dropout", rc.model.dropout);
    rc.model.n_heads = m.value("n_heads", rc.model.n_heads);
    rc.model.n_layers = m.value("n_layers", rc.model.n_layers);
    rc.model.vocab_size = m.value("vocab_size", rc.model.vocab_size);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    check_keys(t, "train",
               {"batch_size", "grad_clip_norm", "label_smoothing", "lr", "seed",
                "total_steps", "warmup_steps"});
    rc.train.batch_size = t.value("batch_size", rc.train.batch_size);
    rc.train.grad_clip_norm = t.value("grad_clip_norm", rc.train.grad_clip_norm);
    rc.train.label_smoothing = t.value("label_smoothing", rc.train.label_smoothing);
    rc.train.lr = t.value("lr", rc.train.lr);
    rc.train.seed = t.value("seed", rc.train.seed);
    rc.train.total_steps = t.value("total_steps", rc.train.total_steps);
    rc.train.warmup_steps = t.value("warmup_steps", rc.train.warmup_steps);
  }
  if (j.contains("sample")) {
    const json& s = j["sample"];
    check_keys(s, "sample", {"max_new_tokens", "seed", "temperature", "top_k", "top_p"});
    rc.sample.max_new_tokens = s.value("max_new_tokens", rc.sample.max_new_tokens);
    rc.sample.seed = s.value("seed", rc.sample.seed);
    rc.sample.temperature = s.value("temperature", rc.sample.temperature);
    rc.sample.top_k = s.value("top_k", rc.sample.top_k);
    rc.sample.top_p = s.value("top_p", rc.sample.top_p);
  }
  if (j.contains("codec")) {
    const json& c = j["codec"];
    check_keys(c, "codec", {"context_limit", "include_text", "t_max"});
    rc.codec.context_limit = c.value("context_limit", rc.codec.context_limit);
    rc.codec.include_text = c.value("include_text", rc.codec.include_text);
    rc.codec.t_max = c.value("t_max", rc.codec.t_max);
  }
  if (j.contains("vocab")) {
    const json& v = j["vocab"];
    check_keys(v, "vocab", {"categories", "style_enabled", "styles", "textual"});
    rc.vocab.category_names = v.value("categories", rc.vocab.category_names);
    rc.vocab.style_enabled = v.value("style_enabled", rc.vocab.style_enabled);
    rc.vocab.styles = v.value("styles", rc.vocab.styles);
    if (v.contains("textual"))
      rc.vocab.category_textual = v["textual"].get<std::vector<bool>>();
    if (!rc.vocab.category_textual.empty() &&
        rc.vocab.category_textual.size() != rc.vocab.category_names.size())
      throw ConfigError("config: vocab.textual length must match vocab.categories");
    if (rc.vocab.category_textual.empty())
      rc.vocab.category_textual.assign(rc.vocab.category_names.size(), true);
  }
  if (j.contains("synth")) {
    const json& s = j["synth"];
    check_keys(s, "synth",
               {"category_weights", "columns", "max_paragraphs", "min_paragraphs", "n_docs",
                "seed", "words"});
    rc.synth.category_weights = s.value("category_weights", rc.synth.category_weights);
    rc.synth.columns = s.value("columns", rc.synth.columns);
    rc.synth.max_paragraphs = s.value("max_paragraphs", rc.synth.max_paragraphs);
    rc.synth.min_paragraphs = s.value("min_paragraphs", rc.synth.min_paragraphs);
    rc.synth.n_docs = s.value("n_docs", rc.synth.n_docs);
    rc.synth.seed = s.value("seed", rc.synth.seed);
    rc.synth.words = s.value("words", rc.synth.words);
  }
  return rc;
}

RunConfig RunConfig::load(const std::string& path) {
  if (path.empty()) return {};
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return from_json(buf.str());
}

VocabDesc infer_vocab(const std::vector<CorpusRecord>& records) {
  std::map<std::string, bool> textual;  // name -> has text anywhere
  std::set<std::string> styles;
  for (const auto& rec : records)
    for (const auto& e : rec.elements) {
      auto [it, inserted] = textual.try_emplace(e.category, false);
      (void)inserted;
      if (e.text.has_value() && !e.text->empty()) it->second = true;
      if (e.style.has_value()) styles.insert(*e.style);
    }
  VocabDesc vd;
  for (const auto& [name, has_text] : textual) {
    vd.category_names.push_back(name);
    vd.category_textual.push_back(has_text);
  }
  vd.styles.assign(styles.begin(), styles.end());
  vd.style_enabled = !vd.styles.empty();
  return vd;
}

int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream& err) {
  return guard(kExitConfig, err, [&]() -> int {
    RunConfig rc = RunConfig::load(args.config);
    if (args.seed) rc.synth.seed = *args.seed;
    if (args.n) rc.synth.n_docs = *args.n;
    if (args.out.empty()) throw ConfigError("synth: --out is required");

    const std::vector<CorpusRecord> records = synth_generate(rc.synth);
    write_jsonl(args.out, records);

    const CorpusStats st = corpus_stats(records);
    out << "wrote " << st.docs << " documents, " << st.elements << " elements (mean "
        << fmt(st.mean_elements, 2) << "/doc) -> " << args.out << '\n';
    for (const auto& [name, count] : st.per_category)
      out << "  " << name << ": " << count << '\n';

    write_meta(args.out, json{{"command", "synth"},
                              {"run_config", json::parse(rc.to_json())}});
    return kExitOk;
  });
}

int cmd_ingest(const IngestArgs& args, std::ostream& out, std::ostream& err) {
  return guard(kExitIngest, err, [&]() -> int {
    if (args.coco.empty() || args.out.empty())
      throw ConfigError("ingest: --coco and --out are required");

    std::map<std::string, std::string> category_map;
    if (!args.map.empty()) {
      const json jm = read_json_file(args.map);
      if (!jm.is_object()) throw ConfigError("category map must be a JSON object");
      for (const auto& [name, mapped] : jm.items())
        category_map[name] = mapped.get<std::string>();
    } else {
      // identity map over the file's own category names
      const json coco = read_json_file(args.coco);
      for (const json& jc : coco.value("categories", json::array())) {
        const std::string name = jc.at("name").get<std::string>();
        category_map[name] = name;
      }
    }

    IngestStats stats;
    const std::vector<CorpusRecord> records =
        ingest_coco(args.coco, args.sidecar, category_map, &stats);
    write_jsonl(args.out, records);

    out << "ingested " << stats.images << " images, " << stats.annotations
        << " annotations -> " << records.size() << " records (" << stats.clamped_boxes
        << " boxes clamped, " << stats.dropped_elements << " dropped, "
        << stats.skipped_annotations << " skipped)\n";
    for (const auto& d : stats.diagnostics) err << "warning: " << d << '\n';

    write_meta(args.out,
               json{{"command", "ingest"},
                    {"coco", args.coco},
                    {"sidecar", args.sidecar},
                    {"stats",
                     {{"annotations", stats.annotations},
                      {"clamped_boxes", stats.clamped_boxes},
                      {"dropped_elements", stats.dropped_elements},
                      {"images", stats.images},
                      {"skipped_annotations", stats.skipped_annotations}}}});
    return kExitOk;
  });
}

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  return guard(kExitTrain, err, [&]() -> int {
    if (args.corpus.empty() || args.out_checkpoint.empty())
      throw ConfigError("train: --corpus and --out-checkpoint are required");
    RunConfig rc = RunConfig::load(args.config);

    const std::vector<CorpusRecord> records = read_jsonl(args.corpus, /*strict=*/true);
    if (records.empty()) throw TrainError("corpus is empty: " + args.corpus);

    int64_t start_step = 0;
    Checkpoint prev;
    const bool resume = !args.resume.empty();
    if (resume) {
      prev = load_checkpoint(args.resume);
      if (!prev.has_opt)
        throw ConfigError("resume: checkpoint has no optimizer state");
      TrainConfig t = rc.train;
      t.total_steps = prev.train.total_steps;
      if (!(t == prev.train))
        throw ConfigError(
            "resume: training hyperparameters differ from the checkpoint "
            "(only total_steps may change)");
      start_step = prev.step;
      rc.model = prev.model;
      rc.codec = prev.codec;
      rc.vocab = prev.vocab;
    }

    VocabDesc vd = rc.vocab.category_names.empty() ? infer_vocab(records) : rc.vocab;
    const Vocabulary vocab = vd.build();
    rc.vocab = vd;

    if (rc.model.vocab_size == 0)
      rc.model.vocab_size = vocab.size();
    else if (rc.model.vocab_size != vocab.size())
      throw ConfigError("model.vocab_size " + std::to_string(rc.model.vocab_size) +
                        " does not match the vocabulary (" + std::to_string(vocab.size()) +
                        ")");
    rc.model.validate();
    rc.train.validate();
    if (rc.train.total_steps <= start_step)
      throw ConfigError("train.total_steps must exceed the resume step " +
                        std::to_string(start_step));

    std::vector<TokenSequence> seqs;
    seqs.reserve(records.size());
    for (const auto& rec : records) {
      const Document doc =
          canonical_order(to_document(rec, vocab.categories(), vd.styles, /*strict=*/true));
      seqs.push_back(encode(doc, vocab, rc.codec));
    }

    ModelParams<float> params;
    AdamState<float> opt;
    if (resume) {
      params = std::move(prev.params);
      opt = std::move(prev.opt);
    } else {
      params = init_params<float>(rc.model, rc.train.seed);
      opt = AdamState<float>::init(params);
    }

    const std::string log_path =
        args.log.empty() ? args.out_checkpoint + ".log.jsonl" : args.log;
    std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot open metrics log: " + log_path);

    const int64_t total = rc.train.total_steps;
    const TrainResult result = train_loop<float>(
        params, opt, seqs, rc.train, start_step, [&](const TrainLogEntry& e) {
          json j;
          j["loss"] = e.loss;
          j["lr"] = e.lr;
          j["step"] = e.step;
          j["tokens_per_sec"] = e.tokens_per_sec;
          log << j.dump() << '\n';
          if (e.step % 100 == 0 || e.step == total)
            out << "step " << e.step << "/" << total << " loss " << fmt(e.loss) << " lr "
                << fmt(e.lr, 6) << '\n';
        });
    log.flush();
    if (!log) throw IoError("write failed: " + log_path);
    if (result.skipped_sequences > 0)
      err << "warning: " << result.skipped_sequences
          << " sequences exceed the model context and were skipped\n";

    Checkpoint ckpt;
    ckpt.model = rc.model;
    ckpt.train = rc.train;
    ckpt.codec = rc.codec;
    ckpt.vocab = vd;
    ckpt.step = total;
    ckpt.run_config_json = rc.to_json();
    ckpt.params = std::move(params);
    ckpt.has_opt = true;
    ckpt.opt = std::move(opt);
    save_checkpoint(args.out_checkpoint, ckpt);
    out << "saved checkpoint (" << ckpt.params.parameter_count() << " parameters) -> "
        << args.out_checkpoint << '\n';
    return kExitOk;
  });
}

int cmd_complete(const CompleteArgs& args, std::ostream& out, std::ostream& err) {
  return guard(kExitGenerate, err, [&]() -> int {
    if (args.checkpoint.empty() || args.doc.empty() || args.out.empty())
      throw ConfigError("complete: --checkpoint, --doc and --out are required");
    const Checkpoint ckpt = load_checkpoint(args.checkpoint);
    const Vocabulary vocab = ckpt.vocab.build();
    const RunConfig rc =
        ckpt.run_config_json.empty() ? RunConfig{} : RunConfig::from_json(ckpt.run_config_json);
    const SampleConfig sc =
        apply_sample_flags(rc.sample, args.temperature, args.top_k, args.top_p, args.seed);

    const std::vector<CorpusRecord> records = read_jsonl(args.doc, /*strict=*/true);
    if (records.empty()) throw GenerateError("no documents in " + args.doc);

    std::vector<CorpusRecord> outs;
    outs.reserve(records.size());
    for (size_t i = 0; i < records.size(); ++i) {
      const Document doc =
          to_document(records[i], vocab.categories(), ckpt.vocab.styles, /*strict=*/true);
      const int k =
          args.k >= 0 ? args.k : static_cast<int>(doc.elements.size()) / 2;
      SampleConfig si = sc;
      si.seed = sc.seed + i;  // one stream per record
      const Document done = complete_document(ckpt.params, doc, k, vocab, si, ckpt.codec);
      outs.push_back(to_record(done, vocab.categories(), ckpt.vocab.styles));
    }
    write_jsonl(args.out, outs);
    out << "completed " << outs.size() << " documents -> " << args.out << '\n';

    write_meta(args.out, json{{"command", "complete"},
                              {"checkpoint", args.checkpoint},
                              {"k", args.k},
                              {"sample",
                               {{"max_new_tokens", sc.max_new_tokens},
                                {"seed", sc.seed},
                                {"temperature", sc.temperature},
                                {"top_k", sc.top_k},
                                {"top_p", sc.top_p}}},
                              {"run_config", json::parse(rc.to_json())}});
    return kExitOk;
  });
}

int cmd_place(const PlaceArgs& args, std::ostream& out, std::ostream& err) {
  return guard(kExitGenerate, err, [&]() -> int {
    if (args.checkpoint.empty() || args.doc.empty() || args.out.empty())
      throw ConfigError("place: --checkpoint, --doc and --out are required");
    const Checkpoint ckpt = load_checkpoint(args.checkpoint);
    const Vocabulary vocab = ckpt.vocab.build();
    const RunConfig rc =
        ckpt.run_config_json.empty() ? RunConfig{} : RunConfig::from_json(ckpt.run_config_json);
    const SampleConfig sc =
        apply_sample_flags(rc.sample, args.temperature, args.top_k, args.top_p, args.seed);

    const std::vector<CorpusRecord> records = read_jsonl(args.doc, /*strict=*/true);
    if (records.empty()) throw GenerateError("no documents in " + args.doc);

    std::vector<CorpusRecord> outs;
    outs.reserve(records.size());
    double iou_sum = 0, bde_sum = 0;
    int64_t n_targets = 0;
    for (size_t i = 0; i < records.size(); ++i) {
      const CorpusRecord& rec = records[i];
      const std::vector<int>& targets = args.targets.empty() ? rec.targets : args.targets;
      if (targets.empty())
        throw GenerateError("record '" + rec.id +
                            "': no targets (pass --targets or set the record field)");
      const Document doc =
          to_document(rec, vocab.categories(), ckpt.vocab.styles, /*strict=*/true);
      SampleConfig si = sc;
      si.seed = sc.seed + i;
      const Document placed =
          place_text_boxes(ckpt.params, doc, targets, args.mode, vocab, si, ckpt.codec);

      // reading-order positions of the placed elements, for evaluation
      const std::vector<size_t> perm = canonical_permutation(doc);
      std::vector<int> positions;
      for (int t : targets)
        for (size_t pos = 0; pos < perm.size(); ++pos)
          if (perm[pos] == static_cast<size_t>(t)) {
            positions.push_back(static_cast<int>(pos));
            break;
          }
      std::sort(positions.begin(), positions.end());

      const Document ref = canonical_order(doc);
      for (int pos : positions) {
        const NormBox got =
            norm_box(placed.elements[static_cast<size_t>(pos)].bbox, doc.canvas_w, doc.canvas_h);
        const NormBox want =
            norm_box(ref.elements[static_cast<size_t>(pos)].bbox, doc.canvas_w, doc.canvas_h);
        const double i_ = iou(got, want), b_ = bde(got, want);
        out << rec.id << " pos " << pos << " iou " << fmt(i_) << " bde " << fmt(b_) << '\n';
        iou_sum += i_;
        bde_sum += b_;
        ++n_targets;
      }

      CorpusRecord placed_rec = to_record(placed, vocab.categories(), ckpt.vocab.styles);
      placed_rec.targets = positions;
      outs.push_back(std::move(placed_rec));
    }
    if (n_targets > 0)
      out << "mean iou " << fmt(iou_sum / static_cast<double>(n_targets)) << " mean bde "
          << fmt(bde_sum / static_cast<double>(n_targets)) << " over " << n_targets
          << " targets\n";
    write_jsonl(args.out, outs);
    out << "placed " << outs.size() << " documents -> " << args.out << '\n';

    write_meta(args.out,
               json{{"command", "place"},
                    {"checkpoint", args.checkpoint},
                    {"mode", args.mode == PlacementMode::Single ? "single" : "multiple"},
                    {"sample",
                     {{"max_new_tokens", sc.max_new_tokens},
                      {"seed", sc.seed},
                      {"temperature", sc.temperature},
                      {"top_k", sc.top_k},
                      {"top_p", sc.top_p}}},
                    {"run_config", json::parse(rc.to_json())}});
    return kExitOk;
  });
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  return guard(kExitEval, err, [&]() -> int {
    if (args.generated.empty() || args.reference.empty())
      throw ConfigError("eval: --generated and --reference are required");
    const std::vector<CorpusRecord> gen_records = read_jsonl(args.generated, /*strict=*/true);
    const std::vector<CorpusRecord> ref_records = read_jsonl(args.reference, /*strict=*/true);

    // shared name table across both corpora; generated geometry may spill
    // past the canvas, so conversion is lenient and metrics clamp
    std::set<std::string> names, style_names;
    for (const auto* corpus : {&gen_records, &ref_records})
      for (const auto& rec : *corpus)
        for (const auto& e : rec.elements) {
          names.insert(e.category);
          if (e.style.has_value()) style_names.insert(*e.style);
        }
    const CategorySet cats =
        CategorySet::from_names(std::vector<std::string>(names.begin(), names.end()));
    const std::vector<std::string> styles(style_names.begin(), style_names.end());

    std::vector<Document> gen, ref;
    gen.reserve(gen_records.size());
    ref.reserve(ref_records.size());
    for (const auto& rec : gen_records)
      gen.push_back(to_document(rec, cats, styles, /*strict=*/false));
    for (const auto& rec : ref_records)
      ref.push_back(to_document(rec, cats, styles, /*strict=*/false));

    std::vector<PlacementTargets> targets;
    if (args.task == EvalTask::Placement)
      for (const auto& rec : gen_records)
        if (!rec.targets.empty()) targets.push_back({rec.id, rec.targets});

    const MetricsReport report = evaluate(gen, ref, args.task, cats.size(), targets);

    json jr = json::parse(report.to_json());
    jr["invocation"] = {{"generated", args.generated},
                        {"reference", args.reference},
                        {"task", args.task == EvalTask::Completion ? "completion" : "placement"}};
    if (!args.out.empty()) write_text_file(args.out, jr.dump(2) + "\n");

    if (args.task == EvalTask::Completion) {
      out << "          mIoU      FID*     Align      Over\n";
      out << "      " << fmt(report.m_iou.value_or(0)) << "  " << fmt(report.frechet_star.value_or(0))
          << "  " << fmt(report.alignment.value_or(0)) << "  " << fmt(report.overlap.value_or(0))
          << "\n";
    } else {
      out << "               IoU       BDE   targets\n";
      out << "single      " << fmt(report.iou_single.value_or(0)) << "  "
          << fmt(report.bde_single.value_or(0)) << "  " << report.n_targets_single << '\n';
      out << "multiple    " << fmt(report.iou_multiple.value_or(0)) << "  "
          << fmt(report.bde_multiple.value_or(0)) << "  " << report.n_targets_multiple << '\n';
    }
    out << report.n_pairs << " document pairs";
    if (!args.out.empty()) out << " -> " << args.out;
    out << '\n';
    (void)err;
    return kExitOk;
  });
}

int cmd_render(const RenderArgs& args, std::ostream& out, std::ostream& err) {
  return guard(kExitConfig, err, [&]() -> int {
    if (args.doc.empty() || args.out.empty())
      throw ConfigError("render: --doc and --out are required");
    const std::vector<CorpusRecord> records = read_jsonl(args.doc, /*strict=*/true);
    if (args.index < 0 || static_cast<size_t>(args.index) >= records.size())
      throw ConfigError("render: record index " + std::to_string(args.index) +
                        " out of range (file has " + std::to_string(records.size()) +
                        " records)");
    const CorpusRecord& rec = records[static_cast<size_t>(args.index)];
    RenderOptions opts;
    opts.show_text = args.show_text;
    write_text_file(args.out, render_svg(rec, opts));
    out << "rendered '" << rec.id << "' (" << rec.elements.size() << " elements) -> "
        << args.out << '\n';
    return kExitOk;
  });
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"autoregressive structured document generation"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  synth->add_option("--config", synth_args.config, "JSON config file");
  synth->add_option("--out", synth_args.out, "output corpus JSONL")->required();
  synth->add_option("--seed", synth_args.seed, "generator seed");
  synth->add_option("--n", synth_args.n, "document count");

  IngestArgs ingest_args;
  CLI::App* ingest = app.add_subcommand("ingest", "ingest a COCO-style annotation file");
  ingest->add_option("--coco", ingest_args.coco, "COCO annotations JSON")->required();
  ingest->add_option("--sidecar", ingest_args.sidecar, "text/style sidecar JSON");
  ingest->add_option("--map", ingest_args.map, "category map JSON (default: identity)");
  ingest->add_option("--out", ingest_args.out, "output corpus JSONL")->required();

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "train a model on a corpus");
  train->add_option("--config", train_args.config, "JSON config file");
  train->add_option("--corpus", train_args.corpus, "training corpus JSONL")->required();
  train->add_option("--out-checkpoint", train_args.out_checkpoint, "checkpoint path")
      ->required();
  train->add_option("--resume", train_args.resume, "checkpoint to resume from");
  train->add_option("--log", train_args.log, "metrics log path (default: <checkpoint>.log.jsonl)");

  CompleteArgs complete_args;
  CLI::App* complete = app.add_subcommand("complete", "complete documents from a prefix");
  complete->add_option("--checkpoint", complete_args.checkpoint, "model checkpoint")->required();
  complete->add_option("--doc", complete_args.doc, "input documents JSONL")->required();
  complete->add_option("--k", complete_args.k, "prefix element count (negative = half)");
  complete->add_option("--out", complete_args.out, "output JSONL")->required();
  complete->add_option("--temperature", complete_args.temperature, "sampling temperature");
  complete->add_option("--top-k", complete_args.top_k, "top-k filter (0 = off)");
  complete->add_option("--top-p", complete_args.top_p, "nucleus filter (1 = off)");
  complete->add_option("--seed", complete_args.seed, "sampling seed");

  PlaceArgs place_args;
  std::string place_mode = "single";
  CLI::App* place = app.add_subcommand("place", "re-place elements within documents");
  place->add_option("--checkpoint", place_args.checkpoint, "model checkpoint")->required();
  place->add_option("--doc", place_args.doc, "input documents JSONL")->required();
  place->add_option("--targets", place_args.targets, "element indices to place")
      ->delimiter(',');
  place->add_option("--mode", place_mode, "single|multiple")
      ->check(CLI::IsMember({"single", "multiple"}));
  place->add_option("--out", place_args.out, "output JSONL")->required();
  place->add_option("--temperature", place_args.temperature, "sampling temperature");
  place->add_option("--top-k", place_args.top_k, "top-k filter (0 = off)");
  place->add_option("--top-p", place_args.top_p, "nucleus filter (1 = off)");
  place->add_option("--seed", place_args.seed, "sampling seed");

  EvalArgs eval_args;
  std::string eval_task = "completion";
  CLI::App* eval = app.add_subcommand("eval", "score generated documents against references");
  eval->add_option("--generated", eval_args.generated, "generated corpus JSONL")->required();
  eval->add_option("--reference", eval_args.reference, "reference corpus JSONL")->required();
  eval->add_option("--task", eval_task, "completion|placement")
      ->check(CLI::IsMember({"completion", "placement"}));
  eval->add_option("--out", eval_args.out, "report JSON path");

  RenderArgs render_args;
  CLI::App* render = app.add_subcommand("render", "render a document record to SVG");
  render->add_option("--doc", render_args.doc, "documents JSONL")->required();
  render->add_option("--out", render_args.out, "output SVG path")->required();
  render->add_flag("--show-text", render_args.show_text, "draw element text");
  render->add_option("--index", render_args.index, "record index (default 0)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  place_args.mode = place_mode == "single" ? PlacementMode::Single : PlacementMode::Multiple;
  eval_args.task = eval_task == "completion" ? EvalTask::Completion : EvalTask::Placement;

  if (synth->parsed()) return cmd_synth(synth_args, std::cout, std::cerr);
  if (ingest->parsed()) return cmd_ingest(ingest_args, std::cout, std::cerr);
  if (train->parsed()) return cmd_train(train_args, std::cout, std::cerr);
  if (complete->parsed()) return cmd_complete(complete_args, std::cout, std::cerr);
  if (place->parsed()) return cmd_place(place_args, std::cout, std::cerr);
  if (eval->parsed()) return cmd_eval(eval_args, std::cout, std::cerr);
  if (render->parsed()) return cmd_render(render_args, std::cout, std::cerr);
  return kExitConfig;
}

}  // namespace docgen
