#include <doctest/doctest.h>

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "docgen/cli.hpp"
#include "docgen/codec.hpp"
#include "docgen/corpus.hpp"
#include "docgen/train.hpp"
#include "helpers.hpp"

using namespace docgen;

namespace {

// One tiny trained checkpoint shared by the command tests.
struct CliFixture {
  testutil::TempDir dir;
  std::string corpus_path, config_path, ckpt_path, log_path;
  std::string hand_path, place_path;
  int train_exit = -1;
  std::string train_stdout;

  static const CliFixture& get() {
    static CliFixture f;
    return f;
  }

 private:
  CliFixture() {
    SynthConfig sc;
    sc.seed = 9;
    sc.n_docs = 4;
    corpus_path = dir.file("train.jsonl");
    write_jsonl(corpus_path, synth_generate(sc));

    config_path = dir.file("config.json");
    testutil::spew(config_path, R"({
      "model": {"context": 256, "d_ff": 32, "d_model": 16, "n_heads": 2, "n_layers": 1},
      "train": {"batch_size": 2, "lr": 0.001, "seed": 1, "total_steps": 5, "warmup_steps": 2},
      "codec": {"include_text": false, "t_max": 8}
    })");

    ckpt_path = dir.file("model.ckpt");
    log_path = dir.file("train.log.jsonl");
    std::ostringstream out, err;
    train_exit = cmd_train({config_path, corpus_path, ckpt_path, "", log_path}, out, err);
    train_stdout = out.str();

    // Two hand-written documents for complete/place/eval/render tests.
    std::vector<CorpusRecord> hand;
    for (int d = 0; d < 2; ++d) {
      CorpusRecord rec;
      rec.id = "h" + std::to_string(d);
      rec.canvas_w = 1000;
      rec.canvas_h = 1000;
      for (int i = 0; i < 3; ++i)
        rec.elements.push_back(
            {"paragraph", {100.0 + 10 * d, 100.0 + 300 * i, 800, 200}, {}, {}});
      hand.push_back(std::move(rec));
    }
    hand_path = dir.file("hand.jsonl");
    write_jsonl(hand_path, hand);
    for (auto& rec : hand) rec.targets = {1};
    place_path = dir.file("place_in.jsonl");
    write_jsonl(place_path, hand);
  }
};

// run_cli writes through std::cout/std::cerr; keep test output clean.
struct StreamCapture {
  std::ostringstream out, err;
  std::streambuf* old_out;
  std::streambuf* old_err;
  StreamCapture()
      : old_out(std::cout.rdbuf(out.rdbuf())), old_err(std::cerr.rdbuf(err.rdbuf())) {}
  ~StreamCapture() {
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
  }
};

size_t line_count(const std::string& path) {
  std::ifstream is(path);
  size_t n = 0;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) ++n;
  return n;
}

}  // namespace

TEST_CASE("RunConfig: JSON round trip and validation") {
  RunConfig rc;
  rc.model.d_model = 48;
  rc.model.vocab_size = 522;
  rc.train.lr = 0.0005;
  rc.train.total_steps = 77;
  rc.sample.temperature = 0.7;
  rc.sample.top_k = 12;
  rc.codec.include_text = false;
  rc.codec.t_max = 9;
  rc.vocab.category_names = {"figure", "paragraph"};
  rc.vocab.category_textual = {false, true};
  rc.vocab.styles = {"bold"};
  rc.vocab.style_enabled = true;
  rc.synth.seed = 11;
  rc.synth.columns = 2;

  const RunConfig back = RunConfig::from_json(rc.to_json());
  CHECK(back == rc);

  CHECK(RunConfig::load("") == RunConfig{});
  CHECK_THROWS_AS(RunConfig::load("/nonexistent/config.json"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json("not json"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(R"({"model": {"bogus": 1}})"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(R"({"mdoel": {}})"), ConfigError);
  CHECK_THROWS_AS(
      RunConfig::from_json(R"({"vocab": {"categories": ["a", "b"], "textual": [true]}})"),
      ConfigError);

  // Partial configs keep defaults elsewhere; textual defaults to all-true.
  const RunConfig partial = RunConfig::from_json(R"({"vocab": {"categories": ["a", "b"]}})");
  CHECK(partial.vocab.category_textual == std::vector<bool>{true, true});
  CHECK(partial.model.d_model == RunConfig{}.model.d_model);
}

TEST_CASE("infer_vocab: alphabetical categories, text-derived flags, sorted styles") {
  std::vector<CorpusRecord> records(2);
  records[0].elements.push_back({"title", {0, 0, 1, 1}, {}, std::string("T")});
  records[0].elements.push_back({"figure", {0, 0, 1, 1}, std::string("wide"), {}});
  records[1].elements.push_back({"caption", {0, 0, 1, 1}, std::string("bold"), std::string("c")});
  records[1].elements.push_back({"title", {0, 0, 1, 1}, {}, {}});

  const VocabDesc vd = infer_vocab(records);
  CHECK(vd.category_names == std::vector<std::string>{"caption", "figure", "title"});
  CHECK(vd.category_textual == std::vector<bool>{true, false, true});
  CHECK(vd.styles == std::vector<std::string>{"bold", "wide"});
  CHECK(vd.style_enabled);

  const VocabDesc empty = infer_vocab({});
  CHECK(empty.category_names.empty());
  CHECK_FALSE(empty.style_enabled);
}

TEST_CASE("cmd_synth: writes corpus, stats and meta sibling") {
  testutil::TempDir dir;
  const std::string out_path = dir.file("synth.jsonl");
  std::ostringstream out, err;
  const int code = cmd_synth({"", out_path, uint64_t{5}, 3}, out, err);
  CHECK(code == kExitOk);
  CHECK(out.str().find("wrote 3 documents") != std::string::npos);
  CHECK(read_jsonl(out_path, true).size() == 3);

  const auto meta = nlohmann::json::parse(testutil::slurp(out_path + ".meta.json"));
  CHECK(meta.at("command") == "synth");
  CHECK(meta.at("run_config").at("synth").at("n_docs") == 3);
  CHECK(meta.at("run_config").at("synth").at("seed") == 5);

  SUBCASE("same seed reproduces the corpus byte-for-byte") {
    const std::string again = dir.file("synth2.jsonl");
    std::ostringstream o2, e2;
    REQUIRE(cmd_synth({"", again, uint64_t{5}, 3}, o2, e2) == kExitOk);
    CHECK(testutil::slurp(again) == testutil::slurp(out_path));
  }
  SUBCASE("bad settings map to the config exit code") {
    std::ostringstream o2, e2;
    CHECK(cmd_synth({"", dir.file("x.jsonl"), uint64_t{5}, -2}, o2, e2) == kExitConfig);
    CHECK(cmd_synth({"", "", {}, {}}, o2, e2) == kExitConfig);
    CHECK(e2.str().find("error:") != std::string::npos);
  }
}

TEST_CASE("cmd_ingest: COCO to corpus with identity map") {
  testutil::TempDir dir;
  const nlohmann::json coco = {
      {"images", {{{"id", 1}, {"width", 100}, {"height", 100}}}},
      {"annotations",
       {{{"id", 1}, {"image_id", 1}, {"category_id", 1}, {"bbox", {10, 10, 30, 20}}}}},
      {"categories", {{{"id", 1}, {"name", "text"}}}}};
  const std::string coco_path = dir.file("coco.json");
  testutil::spew(coco_path, coco.dump());

  const std::string out_path = dir.file("ingested.jsonl");
  std::ostringstream out, err;
  CHECK(cmd_ingest({coco_path, "", "", out_path}, out, err) == kExitOk);
  const auto records = read_jsonl(out_path, true);
  REQUIRE(records.size() == 1);
  CHECK(records[0].elements[0].category == "text");
  CHECK(out.str().find("ingested 1 images") != std::string::npos);
  CHECK(nlohmann::json::parse(testutil::slurp(out_path + ".meta.json")).at("command") ==
        "ingest");

  SUBCASE("missing input with an explicit map is an ingest failure") {
    const std::string map_path = dir.file("map.json");
    testutil::spew(map_path, R"({"text": "text"})");
    std::ostringstream o2, e2;
    CHECK(cmd_ingest({dir.file("absent.json"), "", map_path, out_path}, o2, e2) == kExitIngest);
  }
}

TEST_CASE("cmd_train: trains, logs and saves a resumable checkpoint") {
  const CliFixture& f = CliFixture::get();
  REQUIRE(f.train_exit == kExitOk);
  CHECK(f.train_stdout.find("saved checkpoint") != std::string::npos);

  const Checkpoint ckpt = load_checkpoint(f.ckpt_path);
  CHECK(ckpt.step == 5);
  CHECK(ckpt.has_opt);
  CHECK(ckpt.model.d_model == 16);
  CHECK_FALSE(ckpt.codec.include_text);
  // Vocabulary inferred from the synthetic corpus.
  CHECK(ckpt.vocab.category_names ==
        std::vector<std::string>{"caption", "figure", "paragraph", "table", "title"});
  CHECK(ckpt.model.vocab_size == ckpt.vocab.build().size());

  REQUIRE(line_count(f.log_path) == 5);
  std::ifstream log(f.log_path);
  std::string first_line;
  std::getline(log, first_line);
  const auto j = nlohmann::json::parse(first_line);
  CHECK(j.at("step") == 1);
  CHECK(j.contains("loss"));
  CHECK(j.contains("lr"));
  CHECK(j.contains("tokens_per_sec"));

  SUBCASE("resume continues from the stored step") {
    testutil::TempDir dir;
    const std::string cfg2 = dir.file("resume.json");
    testutil::spew(cfg2, R"({
      "model": {"context": 256, "d_ff": 32, "d_model": 16, "n_heads": 2, "n_layers": 1},
      "train": {"batch_size": 2, "lr": 0.001, "seed": 1, "total_steps": 8, "warmup_steps": 2},
      "codec": {"include_text": false, "t_max": 8}
    })");
    const std::string ck2 = dir.file("resumed.ckpt");
    const std::string log2 = dir.file("resumed.log.jsonl");
    std::ostringstream out, err;
    REQUIRE(cmd_train({cfg2, f.corpus_path, ck2, f.ckpt_path, log2}, out, err) == kExitOk);
    CHECK(load_checkpoint(ck2).step == 8);
    REQUIRE(line_count(log2) == 3);
    std::ifstream l2(log2);
    std::string line;
    std::getline(l2, line);
    CHECK(nlohmann::json::parse(line).at("step") == 6);
  }
  SUBCASE("resume rejects changed hyperparameters") {
    testutil::TempDir dir;
    const std::string cfg2 = dir.file("bad_resume.json");
    testutil::spew(cfg2, R"({
      "model": {"context": 256, "d_ff": 32, "d_model": 16, "n_heads": 2, "n_layers": 1},
      "train": {"batch_size": 2, "lr": 0.005, "seed": 1, "total_steps": 8, "warmup_steps": 2},
      "codec": {"include_text": false, "t_max": 8}
    })");
    std::ostringstream out, err;
    CHECK(cmd_train({cfg2, f.corpus_path, dir.file("x.ckpt"), f.ckpt_path, ""}, out, err) ==
          kExitConfig);
  }
  SUBCASE("failure exit codes by domain") {
    testutil::TempDir dir;
    std::ostringstream out, err;
    const std::string empty = dir.file("empty.jsonl");
    testutil::spew(empty, "");
    CHECK(cmd_train({"", empty, dir.file("a.ckpt"), "", ""}, out, err) == kExitTrain);
    CHECK(err.str().find("corpus is empty") != std::string::npos);

    const std::string broken = dir.file("broken.jsonl");
    testutil::spew(broken, "{bad\n");
    CHECK(cmd_train({"", broken, dir.file("b.ckpt"), "", ""}, out, err) == kExitIngest);

    CHECK(cmd_train({dir.file("absent.json"), f.corpus_path, dir.file("c.ckpt"), "", ""}, out,
                    err) == kExitConfig);

    const std::string mismatch = dir.file("mismatch.json");
    testutil::spew(mismatch, R"({"model": {"vocab_size": 7}})");
    CHECK(cmd_train({mismatch, f.corpus_path, dir.file("d.ckpt"), "", ""}, out, err) ==
          kExitConfig);
  }
}

TEST_CASE("cmd_complete: preserves the prefix and records metadata") {
  const CliFixture& f = CliFixture::get();
  REQUIRE(f.train_exit == kExitOk);
  testutil::TempDir dir;
  const std::string out_path = dir.file("completed.jsonl");

  CompleteArgs args;
  args.checkpoint = f.ckpt_path;
  args.doc = f.hand_path;
  args.k = 1;
  args.out = out_path;
  args.seed = uint64_t{3};
  std::ostringstream out, err;
  REQUIRE(cmd_complete(args, out, err) == kExitOk);
  CHECK(out.str().find("completed 2 documents") != std::string::npos);

  const Checkpoint ckpt = load_checkpoint(f.ckpt_path);
  const Vocabulary vocab = ckpt.vocab.build();
  const auto inputs = read_jsonl(f.hand_path, true);
  const auto outputs = read_jsonl(out_path, true);
  REQUIRE(outputs.size() == 2);
  for (size_t i = 0; i < outputs.size(); ++i) {
    CHECK(outputs[i].id == inputs[i].id);
    REQUIRE(!outputs[i].elements.empty());
    const Document orig = to_document(inputs[i], vocab.categories(), ckpt.vocab.styles);
    const Document qc = quantized_canonical(orig, vocab, ckpt.codec);
    const CorpusRecord want = to_record(qc, vocab.categories(), ckpt.vocab.styles);
    CHECK(outputs[i].elements[0] == want.elements[0]);
  }

  const auto meta = nlohmann::json::parse(testutil::slurp(out_path + ".meta.json"));
  CHECK(meta.at("command") == "complete");
  CHECK(meta.at("k") == 1);
  CHECK(meta.at("sample").at("seed") == 3);

  SUBCASE("failure exit codes") {
    std::ostringstream o2, e2;
    CompleteArgs bad = args;
    bad.checkpoint = dir.file("absent.ckpt");
    CHECK(cmd_complete(bad, o2, e2) == kExitGenerate);
    bad = args;
    bad.temperature = -1.0;
    CHECK(cmd_complete(bad, o2, e2) == kExitConfig);
    bad = args;
    bad.doc = "";
    CHECK(cmd_complete(bad, o2, e2) == kExitConfig);
  }
}

TEST_CASE("cmd_place: re-places targets and reports per-target scores") {
  const CliFixture& f = CliFixture::get();
  REQUIRE(f.train_exit == kExitOk);
  testutil::TempDir dir;
  const std::string out_path = dir.file("placed.jsonl");

  PlaceArgs args;
  args.checkpoint = f.ckpt_path;
  args.doc = f.place_path;
  args.out = out_path;
  args.seed = uint64_t{4};
  std::ostringstream out, err;
  REQUIRE(cmd_place(args, out, err) == kExitOk);
  CHECK(out.str().find("pos 1 iou") != std::string::npos);
  CHECK(out.str().find("mean iou") != std::string::npos);
  CHECK(out.str().find("placed 2 documents") != std::string::npos);

  const auto outputs = read_jsonl(out_path, true);
  REQUIRE(outputs.size() == 2);
  for (const auto& rec : outputs) {
    CHECK(rec.targets == std::vector<int>{1});
    CHECK(rec.elements.size() == 3);
    for (const auto& e : rec.elements) CHECK(e.category == "paragraph");
  }
  CHECK(nlohmann::json::parse(testutil::slurp(out_path + ".meta.json")).at("mode") == "single");

  SUBCASE("records without targets fail in the generate domain") {
    PlaceArgs bad = args;
    bad.doc = f.hand_path;  // no targets field, no --targets
    std::ostringstream o2, e2;
    CHECK(cmd_place(bad, o2, e2) == kExitGenerate);
    CHECK(e2.str().find("no targets") != std::string::npos);
  }
  SUBCASE("evaluating the placed output against its input") {
    EvalArgs ev;
    ev.generated = out_path;
    ev.reference = f.place_path;
    ev.task = EvalTask::Placement;
    ev.out = dir.file("placement_report.json");
    std::ostringstream o2, e2;
    REQUIRE(cmd_eval(ev, o2, e2) == kExitOk);
    CHECK(o2.str().find("single") != std::string::npos);
    const auto jr = nlohmann::json::parse(testutil::slurp(ev.out));
    CHECK(jr.at("task") == "placement");
    CHECK_FALSE(jr.at("iou").at("single").is_null());
  }
}

TEST_CASE("cmd_eval: completion report with invocation block") {
  const CliFixture& f = CliFixture::get();
  testutil::TempDir dir;
  EvalArgs args;
  args.generated = f.hand_path;
  args.reference = f.hand_path;
  args.out = dir.file("report.json");
  std::ostringstream out, err;
  REQUIRE(cmd_eval(args, out, err) == kExitOk);
  CHECK(out.str().find("mIoU") != std::string::npos);
  CHECK(out.str().find("2 document pairs") != std::string::npos);

  const auto jr = nlohmann::json::parse(testutil::slurp(args.out));
  CHECK(jr.at("task") == "completion");
  CHECK(jr.at("n_pairs") == 2);
  CHECK(jr.at("m_iou").get<double>() == doctest::Approx(1.0));
  CHECK(std::abs(jr.at("frechet_star").get<double>()) <= 1e-6);
  CHECK(jr.at("invocation").at("generated") == f.hand_path);
  CHECK(jr.at("invocation").at("task") == "completion");

  SUBCASE("unpaired ids fail in the eval domain") {
    auto other = read_jsonl(f.hand_path, true);
    for (size_t i = 0; i < other.size(); ++i) other[i].id = "x" + std::to_string(i);
    const std::string other_path = dir.file("other.jsonl");
    write_jsonl(other_path, other);
    EvalArgs bad = args;
    bad.generated = other_path;
    std::ostringstream o2, e2;
    CHECK(cmd_eval(bad, o2, e2) == kExitEval);
    CHECK(e2.str().find("unpaired") != std::string::npos);
  }
}

TEST_CASE("cmd_render: SVG output and index bounds") {
  const CliFixture& f = CliFixture::get();
  testutil::TempDir dir;
  RenderArgs args;
  args.doc = f.hand_path;
  args.out = dir.file("page.svg");
  args.index = 1;
  std::ostringstream out, err;
  REQUIRE(cmd_render(args, out, err) == kExitOk);
  CHECK(out.str().find("rendered 'h1'") != std::string::npos);
  const std::string svg = testutil::slurp(args.out);
  CHECK(svg.rfind("<?xml", 0) == 0);
  CHECK(svg.find("<rect") != std::string::npos);

  std::ostringstream o2, e2;
  RenderArgs bad = args;
  bad.index = 7;
  CHECK(cmd_render(bad, o2, e2) == kExitConfig);
  CHECK(e2.str().find("out of range") != std::string::npos);
  bad.index = -1;
  CHECK(cmd_render(bad, o2, e2) == kExitConfig);
}

TEST_CASE("run_cli: dispatch and argument errors") {
  const CliFixture& f = CliFixture::get();
  testutil::TempDir dir;

  SUBCASE("no subcommand is a usage error") {
    StreamCapture cap;
    const char* argv[] = {"docgen"};
    CHECK(run_cli(1, argv) == kExitConfig);
  }
  SUBCASE("--help succeeds") {
    StreamCapture cap;
    const char* argv[] = {"docgen", "--help"};
    CHECK(run_cli(2, argv) == kExitOk);
    CHECK(cap.out.str().find("synth") != std::string::npos);
  }
  SUBCASE("unknown subcommand is a usage error") {
    StreamCapture cap;
    const char* argv[] = {"docgen", "bogus"};
    CHECK(run_cli(2, argv) == kExitConfig);
  }
  SUBCASE("enum options are validated by the parser") {
    StreamCapture cap;
    const char* argv[] = {"docgen", "eval",   "--generated", f.hand_path.c_str(),
                          "--reference", f.hand_path.c_str(), "--task", "bogus"};
    CHECK(run_cli(8, argv) == kExitConfig);
  }
  SUBCASE("full synth round trip through argv") {
    StreamCapture cap;
    const std::string out_path = dir.file("cli.jsonl");
    const char* argv[] = {"docgen", "synth", "--out", out_path.c_str(),
                          "--n",    "2",     "--seed", "1"};
    CHECK(run_cli(8, argv) == kExitOk);
    CHECK(read_jsonl(out_path, true).size() == 2);
  }
  SUBCASE("missing required option surfaces as config error") {
    StreamCapture cap;
    const char* argv[] = {"docgen", "render", "--doc", f.hand_path.c_str()};
    CHECK(run_cli(4, argv) == kExitConfig);
  }
}
