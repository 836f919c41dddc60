#include <doctest/doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <vector>

#include "docgen/rng.hpp"
#include "docgen/train.hpp"
#include "helpers.hpp"

using namespace docgen;

namespace {

ModelConfig tiny_config(int vocab = 11) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.context = 16;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  return c;
}

// A handful of short grammar-shaped sequences over a tiny id range.
std::vector<TokenSequence> toy_corpus(int n, int vocab, uint64_t seed) {
  Rng rng(seed);
  std::vector<TokenSequence> out;
  for (int i = 0; i < n; ++i) {
    TokenSequence seq;
    seq.ids.push_back(1);
    const int len = 4 + static_cast<int>(rng.below(8));
    for (int t = 0; t < len; ++t)
      seq.ids.push_back(static_cast<int32_t>(3 + rng.below(static_cast<uint64_t>(vocab - 3))));
    seq.ids.push_back(2);
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace

TEST_CASE("smoothed_target: formula and normalization") {
  const auto onehot = smoothed_target(2, 5, 0.0);
  CHECK(onehot == std::vector<double>{0, 0, 1, 0, 0});

  const auto two = smoothed_target(0, 2, 0.1);
  CHECK(two[0] == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(two[1] == doctest::Approx(0.1).epsilon(1e-12));

  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const int v = 2 + static_cast<int>(rng.below(60));
    const double eps = rng.next_double() * 0.9;
    const int tok = static_cast<int>(rng.below(static_cast<uint64_t>(v)));
    const auto q = smoothed_target(tok, v, eps);
    CHECK(std::accumulate(q.begin(), q.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(q[static_cast<size_t>(tok)] == doctest::Approx(1.0 - eps).epsilon(1e-12));
  }
  CHECK_THROWS_AS(smoothed_target(5, 5, 0.0), InvalidInput);
}

TEST_CASE("loss_kl: epsilon 0 equals direct cross-entropy") {
  const int T = 4, V = 7;
  Rng rng(11);
  Tensor<double> logits = Tensor<double>::zeros({T, V});
  for (auto& v : logits.data) v = rng.next_double() * 4 - 2;
  std::vector<int32_t> targets{3, 0, 6, 2};

  const auto res = loss_kl<double>(logits, targets, 0.0, /*pad_id=*/0 - 1);
  double ce = 0;
  for (int t = 0; t < T; ++t) {
    std::vector<double> row(logits.data.begin() + t * V, logits.data.begin() + (t + 1) * V);
    const auto p = softmax(row);
    ce += -std::log(p[static_cast<size_t>(targets[static_cast<size_t>(t)])]);
  }
  ce /= T;
  CHECK(res.loss == doctest::Approx(ce).epsilon(1e-9));
  CHECK(res.n_tokens == T);
}

TEST_CASE("loss_kl: smoothed case matches a direct KL computation") {
  const int T = 3, V = 6;
  const double eps = 0.1;
  Rng rng(13);
  Tensor<double> logits = Tensor<double>::zeros({T, V});
  for (auto& v : logits.data) v = rng.next_double() * 2 - 1;
  std::vector<int32_t> targets{1, 5, 0};

  double want = 0;
  for (int t = 0; t < T; ++t) {
    std::vector<double> row(logits.data.begin() + t * V, logits.data.begin() + (t + 1) * V);
    const auto p = softmax(row);
    const auto q = smoothed_target(targets[static_cast<size_t>(t)], V, eps);
    for (int v = 0; v < V; ++v)
      if (q[static_cast<size_t>(v)] > 0)
        want += q[static_cast<size_t>(v)] *
                (std::log(q[static_cast<size_t>(v)]) - std::log(p[static_cast<size_t>(v)]));
  }
  want /= T;
  const auto res = loss_kl<double>(logits, targets, eps, -1);
  CHECK(res.loss == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("loss_kl: uniform logits give ln V, PAD rows contribute nothing") {
  const int T = 5, V = 13;
  Tensor<double> logits = Tensor<double>::zeros({T, V});
  std::vector<int32_t> targets{1, 2, 0, 0, 4};  // 0 is PAD here
  const auto res = loss_kl<double>(logits, targets, 0.0, 0);
  CHECK(res.n_tokens == 3);
  CHECK(res.loss == doctest::Approx(std::log(static_cast<double>(V))).epsilon(1e-12));
  for (int v = 0; v < V; ++v) {
    CHECK(res.d_logits.data[2 * V + v] == 0.0);  // PAD target rows exactly zero
    CHECK(res.d_logits.data[3 * V + v] == 0.0);
  }
  // Non-PAD rows: gradient sums to zero (softmax minus target).
  double rowsum = 0;
  for (int v = 0; v < V; ++v) rowsum += res.d_logits.data[v];
  CHECK(std::abs(rowsum) <= 1e-12);

  CHECK_THROWS_AS(loss_kl<double>(logits, {0, 0, 0, 0, 0}, 0.0, 0), TrainError);
}

TEST_CASE("loss_kl: padded and unpadded single sequence agree") {
  const int V = 9;
  Rng rng(21);
  Tensor<double> short_logits = Tensor<double>::zeros({3, V});
  for (auto& v : short_logits.data) v = rng.next_double();
  Tensor<double> padded = Tensor<double>::zeros({5, V});
  std::copy(short_logits.data.begin(), short_logits.data.end(), padded.data.begin());
  // Rows 3-4 hold garbage logits; their PAD targets must neutralize them.
  for (size_t i = 3 * V; i < padded.data.size(); ++i) padded.data[i] = 1e3;

  const auto a = loss_kl<double>(short_logits, {4, 2, 7}, 0.1, 0);
  const auto b = loss_kl<double>(padded, {4, 2, 7, 0, 0}, 0.1, 0);
  CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-9));
  CHECK(a.n_tokens == b.n_tokens);
}

TEST_CASE("lr_schedule: linear warmup then constant") {
  TrainConfig cfg;
  cfg.lr = 3e-4;
  cfg.warmup_steps = 100;
  CHECK(lr_schedule(50, cfg) == doctest::Approx(1.5e-4).epsilon(1e-12));
  CHECK(lr_schedule(100, cfg) == doctest::Approx(3e-4).epsilon(1e-12));
  CHECK(lr_schedule(5000, cfg) == doctest::Approx(3e-4).epsilon(1e-12));
  cfg.warmup_steps = 0;
  CHECK(lr_schedule(1, cfg) == doctest::Approx(3e-4).epsilon(1e-12));
  CHECK_THROWS_AS(lr_schedule(0, cfg), InvalidInput);
}

TEST_CASE("adam_update: zero gradient leaves parameters unchanged") {
  const ModelConfig c = tiny_config();
  auto params = init_params<double>(c, 3);
  const auto before = params;
  const auto grads = ModelParams<double>::zeros(c);
  auto state = AdamState<double>::init(params);
  const double norm = adam_update(params, grads, state, 1e-3, 1.0);
  CHECK(norm == 0.0);
  CHECK(state.step == 1);
  CHECK(testutil::bitwise_param_diff(params, before) == 0);
}

TEST_CASE("adam_update: first-step magnitude approaches lr") {
  const ModelConfig c = tiny_config();
  for (const double g : {1e-3, 0.01, 0.5, -0.02}) {
    auto params = ModelParams<double>::zeros(c);
    auto grads = ModelParams<double>::zeros(c);
    grads.wte.data[5] = g;
    auto state = AdamState<double>::init(params);
    const double lr = 3e-4;
    const double norm = adam_update(params, grads, state, lr, /*clip=*/0.0);
    CHECK(norm == doctest::Approx(std::abs(g)).epsilon(1e-12));
    // Bias-corrected first step: lr * g / (|g| + eps') ~= lr * sign(g).
    CHECK(std::abs(std::abs(params.wte.data[5]) - lr) <= 1e-6);
    CHECK((params.wte.data[5] < 0) == (g > 0));
    // Every other parameter untouched.
    CHECK(params.wte.data[4] == 0.0);
    CHECK(params.head_w.data[0] == 0.0);
  }
}

TEST_CASE("adam_update: global-norm clipping matches a brute-force norm") {
  const ModelConfig c = tiny_config();
  Rng rng(6);
  auto grads = ModelParams<double>::zeros(c);
  double sumsq = 0;
  grads.for_each_tensor([&](const std::string&, Tensor<double>& t) {
    for (auto& v : t.data) {
      v = rng.next_double() * 2 - 1;
      sumsq += v * v;
    }
  });
  const double brute_norm = std::sqrt(sumsq);
  REQUIRE(brute_norm > 1.0);

  auto params = ModelParams<double>::zeros(c);
  auto state = AdamState<double>::init(params);
  auto p_clipped = params;
  auto s_clipped = state;
  const double reported = adam_update(p_clipped, grads, s_clipped, 1e-3, 1.0);
  CHECK(reported == doctest::Approx(brute_norm).epsilon(1e-9));

  // Clipping at norm scales gradients by 1/norm: identical update to feeding
  // pre-scaled gradients with clipping off.
  auto scaled = grads;
  scaled.for_each_tensor([&](const std::string&, Tensor<double>& t) {
    for (auto& v : t.data) v /= brute_norm;
  });
  auto p_manual = params;
  auto s_manual = state;
  adam_update(p_manual, scaled, s_manual, 1e-3, 0.0);
  std::vector<const Tensor<double>*> a, b;
  p_clipped.for_each_tensor(
      [&](const std::string&, const Tensor<double>& t) { a.push_back(&t); });
  p_manual.for_each_tensor(
      [&](const std::string&, const Tensor<double>& t) { b.push_back(&t); });
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < a[i]->data.size(); ++j)
      REQUIRE(a[i]->data[j] == doctest::Approx(b[i]->data[j]).epsilon(1e-9).scale(1e-6));
}

TEST_CASE("adam_update: non-finite gradients abort with the tensor name") {
  const ModelConfig c = tiny_config();
  auto params = init_params<double>(c, 3);
  auto grads = ModelParams<double>::zeros(c);
  grads.head_w.data[0] = std::numeric_limits<double>::quiet_NaN();
  auto state = AdamState<double>::init(params);
  try {
    adam_update(params, grads, state, 1e-3, 1.0);
    FAIL("expected TrainError");
  } catch (const TrainError& e) {
    CHECK(std::string(e.what()).find("head_w") != std::string::npos);
  }
}

TEST_CASE("pack_batch: teacher-forcing shift and padding") {
  TokenSequence a;
  a.ids = {1, 10, 11, 2};
  TokenSequence b;
  b.ids = {1, 20, 21, 22, 23, 2};
  const PackedBatch pb = pack_batch({a, b}, 0);
  CHECK(pb.batch == 2);
  CHECK(pb.seq_len == 5);  // longest m=6 gives 5 input/target columns
  CHECK(pb.inputs == std::vector<int32_t>{1, 10, 11, 0, 0, 1, 20, 21, 22, 23});
  CHECK(pb.targets == std::vector<int32_t>{10, 11, 2, 0, 0, 20, 21, 22, 23, 2});
  CHECK_THROWS_AS(pack_batch({}, 0), InvalidInput);
  TokenSequence tiny;
  tiny.ids = {1};
  CHECK_THROWS_AS(pack_batch({tiny}, 0), InvalidInput);
}

TEST_CASE("train_step: initial loss near ln V and loss decreases on a fixed batch") {
  const int V = 11;
  const ModelConfig c = tiny_config(V);
  auto params = init_params<float>(c, 9);
  auto state = AdamState<float>::init(params);
  TrainConfig cfg;
  cfg.lr = 3e-3;
  cfg.warmup_steps = 10;
  cfg.total_steps = 150;
  cfg.batch_size = 4;
  cfg.label_smoothing = 0.0;
  const auto corpus = toy_corpus(4, V, 5);

  const StepStats first = train_step(params, state, corpus, cfg, 1);
  CHECK(std::abs(first.loss - std::log(static_cast<double>(V))) <=
        0.05 * std::log(static_cast<double>(V)));

  double last = first.loss;
  for (int64_t s = 2; s <= 150; ++s) last = train_step(params, state, corpus, cfg, s).loss;
  CHECK(last < first.loss * 0.5);
}

TEST_CASE("train_step: over-length sequences are skipped, empty remainder throws") {
  const ModelConfig c = tiny_config();
  auto params = init_params<float>(c, 1);
  auto state = AdamState<float>::init(params);
  TrainConfig cfg;
  cfg.total_steps = 1;

  TokenSequence giant;
  giant.ids.assign(static_cast<size_t>(c.context) + 2, 3);
  giant.ids.front() = 1;
  giant.ids.back() = 2;
  TokenSequence ok;
  ok.ids = {1, 5, 6, 2};

  const StepStats st = train_step(params, state, {giant, ok}, cfg, 1);
  CHECK(st.tokens == 3);  // only the short sequence contributes
  CHECK_THROWS_AS(train_step(params, state, {giant}, cfg, 1), TrainError);
}

TEST_CASE("train_loop: deterministic loss curve across reruns") {
  const int V = 11;
  const ModelConfig c = tiny_config(V);
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.warmup_steps = 5;
  cfg.total_steps = 30;
  cfg.batch_size = 3;
  cfg.seed = 42;
  const auto corpus = toy_corpus(10, V, 77);

  auto run = [&]() {
    auto params = init_params<float>(c, 100);
    auto state = AdamState<float>::init(params);
    const TrainResult r = train_loop(params, state, corpus, cfg);
    std::vector<double> losses;
    for (const auto& e : r.log) losses.push_back(e.loss);
    return losses;
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.size() == 30);
  for (size_t i = 0; i < a.size(); ++i) REQUIRE(std::abs(a[i] - b[i]) <= 1e-6);
}

TEST_CASE("train_loop: resume reproduces the uninterrupted run bitwise") {
  const int V = 11;
  const ModelConfig c = tiny_config(V);
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.warmup_steps = 5;
  cfg.total_steps = 24;
  cfg.batch_size = 3;
  cfg.seed = 9;
  const auto corpus = toy_corpus(8, V, 31);

  auto full_params = init_params<float>(c, 50);
  auto full_state = AdamState<float>::init(full_params);
  train_loop(full_params, full_state, corpus, cfg);

  auto part_params = init_params<float>(c, 50);
  auto part_state = AdamState<float>::init(part_params);
  TrainConfig half = cfg;
  half.total_steps = 12;
  train_loop(part_params, part_state, corpus, half);
  train_loop(part_params, part_state, corpus, cfg, /*start_step=*/12);

  CHECK(testutil::bitwise_param_diff(full_params, part_params) == 0);
}

TEST_CASE("checkpoint: save/load round trip is bitwise") {
  testutil::TempDir dir;
  const ModelConfig mc = tiny_config();
  Checkpoint ck;
  ck.model = mc;
  ck.train.total_steps = 123;
  ck.train.seed = 7;
  ck.codec.t_max = 32;
  ck.codec.include_text = false;
  ck.vocab.category_names = {"text", "title"};
  ck.vocab.category_textual = {true, true};
  ck.vocab.styles = {"b"};
  ck.vocab.style_enabled = true;
  ck.step = 55;
  ck.run_config_json = "{\"note\":\"prov\"}";
  ck.params = init_params<float>(mc, 77);
  ck.has_opt = true;
  ck.opt = AdamState<float>::init(ck.params);
  ck.opt.step = 55;
  Rng rng(8);
  for (auto& t : ck.opt.m)
    for (auto& v : t.data) v = static_cast<float>(rng.next_double());
  for (auto& t : ck.opt.v)
    for (auto& v : t.data) v = static_cast<float>(rng.next_double());

  const std::string path = dir.file("model.ckpt");
  save_checkpoint(path, ck);
  const Checkpoint back = load_checkpoint(path);

  CHECK(back.model == ck.model);
  CHECK(back.train == ck.train);
  CHECK(back.codec.t_max == ck.codec.t_max);
  CHECK(back.codec.include_text == ck.codec.include_text);
  CHECK(back.vocab == ck.vocab);
  CHECK(back.step == 55);
  CHECK(back.run_config_json == ck.run_config_json);
  CHECK(back.has_opt);
  CHECK(back.opt.step == 55);
  CHECK(testutil::bitwise_param_diff(back.params, ck.params) == 0);
  for (size_t i = 0; i < ck.opt.m.size(); ++i) {
    REQUIRE(std::memcmp(back.opt.m[i].data.data(), ck.opt.m[i].data.data(),
                        ck.opt.m[i].data.size() * sizeof(float)) == 0);
    REQUIRE(std::memcmp(back.opt.v[i].data.data(), ck.opt.v[i].data.data(),
                        ck.opt.v[i].data.size() * sizeof(float)) == 0);
  }

  // Saving the loaded checkpoint reproduces the file byte-for-byte.
  const std::string second = dir.file("model2.ckpt");
  save_checkpoint(second, back);
  CHECK(testutil::slurp(path) == testutil::slurp(second));
}

TEST_CASE("checkpoint: corruption maps to distinct error codes") {
  testutil::TempDir dir;
  const ModelConfig mc = tiny_config();
  Checkpoint ck;
  ck.model = mc;
  ck.train.total_steps = 1;
  ck.vocab.category_names = {"a"};
  ck.vocab.category_textual = {true};
  ck.params = init_params<float>(mc, 1);
  const std::string path = dir.file("ok.ckpt");
  save_checkpoint(path, ck);
  std::string bytes = testutil::slurp(path);

  auto expect_code = [&](const std::string& mutated, CheckpointError::Code code) {
    const std::string p = dir.file("bad.ckpt");
    testutil::spew(p, mutated);
    try {
      load_checkpoint(p);
      FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
      CHECK(e.code == code);
    }
  };

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  expect_code(bad_magic, CheckpointError::Code::BadMagic);

  std::string future = bytes;
  future[4] = 9;  // version LE low byte
  expect_code(future, CheckpointError::Code::UnsupportedVersion);

  expect_code(bytes.substr(0, bytes.size() / 2), CheckpointError::Code::Truncated);
  expect_code(bytes.substr(0, 6), CheckpointError::Code::Truncated);

  // Corrupt the JSON blob: replace its first byte '{' with 'x'.
  std::string malformed = bytes;
  malformed[16] = 'x';
  expect_code(malformed, CheckpointError::Code::Malformed);

  CHECK_THROWS_AS(load_checkpoint(dir.file("missing.ckpt")), IoError);
}

TEST_CASE("vocab description round trip") {
  const auto cats = testutil::test_categories();
  const Vocabulary v = build_vocab(cats, {"b", "i"}, true);
  const VocabDesc desc = VocabDesc::describe(v);
  const Vocabulary back = desc.build();
  CHECK(back.size() == v.size());
  CHECK(back.style_enabled() == v.style_enabled());
  CHECK(back.categories().at(3).textual == false);
  CHECK(VocabDesc::describe(back) == desc);
}
