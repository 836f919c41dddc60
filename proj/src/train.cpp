#include "docgen/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "docgen/rng.hpp"

namespace docgen {

using json = nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("train: lr must be positive");
  if (label_smoothing < 0 || label_smoothing >= 1)
    throw ConfigError("train: label_smoothing must be in [0, 1)");
  if (warmup_steps < 0) throw ConfigError("train: warmup_steps must be >= 0");
  if (total_steps < 0) throw ConfigError("train: total_steps must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
}

std::vector<double> smoothed_target(int token, int vocab_size, double eps) {
  if (token < 0 || token >= vocab_size)
    throw InvalidInput("smoothed_target: token out of range");
  const double off = vocab_size > 1 ? eps / (vocab_size - 1) : 0.0;
  std::vector<double> p(static_cast<size_t>(vocab_size), off);
  p[static_cast<size_t>(token)] = 1.0 - eps;
  return p;
}

template <typename Real>
LossResult<Real> loss_kl(const Tensor<Real>& logits, const std::vector<int32_t>& targets,
                         double eps, int32_t pad_id) {
  if (logits.shape.size() != 2) throw InvalidInput("loss_kl: logits must be [T, V]");
  const int64_t rows = logits.shape[0], v = logits.shape[1];
  if (static_cast<int64_t>(targets.size()) != rows)
    throw InvalidInput("loss_kl: targets length does not match logits rows");

  LossResult<Real> out;
  out.d_logits = Tensor<Real>::zeros({rows, v});
  for (int32_t t : targets)
    if (t != pad_id) ++out.n_tokens;
  if (out.n_tokens == 0) throw TrainError("loss_kl: every target is PAD");

  const double inv_n = 1.0 / static_cast<double>(out.n_tokens);
  const double off = v > 1 ? eps / static_cast<double>(v - 1) : 0.0;
  // sum_i p_i log p_i is constant across positions
  double p_logp = 0.0;
  if (1.0 - eps > 0) p_logp += (1.0 - eps) * std::log(1.0 - eps);
  if (off > 0) p_logp += static_cast<double>(v - 1) * off * std::log(off);

  double total = 0.0;
  std::vector<double> q(static_cast<size_t>(v));
  for (int64_t r = 0; r < rows; ++r) {
    const int32_t tgt = targets[static_cast<size_t>(r)];
    if (tgt == pad_id) continue;
    if (tgt < 0 || tgt >= v) throw InvalidInput("loss_kl: target id out of range");
    const Real* lp = logits.ptr() + r * v;
    double mx = static_cast<double>(lp[0]);
    for (int64_t i = 1; i < v; ++i) mx = std::max(mx, static_cast<double>(lp[i]));
    double sum_exp = 0.0, sum_logits = 0.0;
    for (int64_t i = 0; i < v; ++i) {
      const double x = static_cast<double>(lp[i]);
      sum_exp += std::exp(x - mx);
      sum_logits += x;
    }
    const double lse = mx + std::log(sum_exp);
    // sum_i p_i log q_i = (1-eps) log q_t + off * (sum_i log q_i - log q_t)
    const double logq_t = static_cast<double>(lp[tgt]) - lse;
    const double sum_logq = sum_logits - static_cast<double>(v) * lse;
    const double p_logq = (1.0 - eps) * logq_t + off * (sum_logq - logq_t);
    total += p_logp - p_logq;

    Real* dp = out.d_logits.ptr() + r * v;
    const double inv_sum = 1.0 / sum_exp;
    for (int64_t i = 0; i < v; ++i) {
      const double qi = std::exp(static_cast<double>(lp[i]) - mx) * inv_sum;
      const double pi = (i == tgt) ? 1.0 - eps : off;
      dp[i] = static_cast<Real>((qi - pi) * inv_n);
    }
  }
  out.loss = total * inv_n;
  return out;
}

double lr_schedule(int64_t step, const TrainConfig& config) {
  if (step < 1) throw InvalidInput("lr_schedule: step must be >= 1");
  if (config.warmup_steps <= 0 || step >= config.warmup_steps) return config.lr;
  return config.lr * static_cast<double>(step) / static_cast<double>(config.warmup_steps);
}

namespace {

template <typename Real>
std::vector<std::pair<std::string, Tensor<Real>*>> tensor_list(ModelParams<Real>& p) {
  std::vector<std::pair<std::string, Tensor<Real>*>> out;
  p.for_each_tensor([&](const std::string& name, Tensor<Real>& t) {
    out.emplace_back(name, &t);
  });
  return out;
}

template <typename Real>
std::vector<std::pair<std::string, const Tensor<Real>*>> tensor_list(
    const ModelParams<Real>& p) {
  std::vector<std::pair<std::string, const Tensor<Real>*>> out;
  p.for_each_tensor([&](const std::string& name, const Tensor<Real>& t) {
    out.emplace_back(name, &t);
  });
  return out;
}

}  // namespace

template <typename Real>
AdamState<Real> AdamState<Real>::init(const ModelParams<Real>& params) {
  AdamState<Real> st;
  params.for_each_tensor([&](const std::string&, const Tensor<Real>& t) {
    st.m.push_back(Tensor<Real>::zeros(t.shape));
    st.v.push_back(Tensor<Real>::zeros(t.shape));
  });
  return st;
}

template <typename Real>
double adam_update(ModelParams<Real>& params, const ModelParams<Real>& grads,
                   AdamState<Real>& state, double lr, double clip_norm) {
  auto ps = tensor_list(params);
  auto gs = tensor_list(grads);
  if (ps.size() != gs.size() || state.m.size() != ps.size() || state.v.size() != ps.size())
    throw InvalidInput("adam_update: parameter/gradient/state tensor count mismatch");

  double sq = 0.0;
  for (size_t i = 0; i < gs.size(); ++i) {
    double local = 0.0;
    for (Real g : gs[i].second->data) local += static_cast<double>(g) * static_cast<double>(g);
    if (!std::isfinite(local))
      throw TrainError("adam_update: non-finite gradient in tensor " + gs[i].first);
    sq += local;
  }
  const double norm = std::sqrt(sq);
  const double scale = (clip_norm > 0 && norm > clip_norm) ? clip_norm / norm : 1.0;

  ++state.step;
  const double b1 = AdamState<Real>::kBeta1, b2 = AdamState<Real>::kBeta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (size_t i = 0; i < ps.size(); ++i) {
    Tensor<Real>& p = *ps[i].second;
    const Tensor<Real>& g = *gs[i].second;
    Tensor<Real>& m = state.m[i];
    Tensor<Real>& v = state.v[i];
    if (p.shape != g.shape || p.shape != m.shape)
      throw InvalidInput("adam_update: shape mismatch in tensor " + ps[i].first);
    const size_t n = p.data.size();
    for (size_t k = 0; k < n; ++k) {
      const double gk = static_cast<double>(g.data[k]) * scale;
      const double mk = b1 * static_cast<double>(m.data[k]) + (1.0 - b1) * gk;
      const double vk = b2 * static_cast<double>(v.data[k]) + (1.0 - b2) * gk * gk;
      m.data[k] = static_cast<Real>(mk);
      v.data[k] = static_cast<Real>(vk);
      const double mhat = mk / bc1;
      const double vhat = vk / bc2;
      p.data[k] = static_cast<Real>(static_cast<double>(p.data[k]) -
                                    lr * mhat / (std::sqrt(vhat) + AdamState<Real>::kEps));
    }
  }
  return norm;
}

PackedBatch pack_batch(const std::vector<TokenSequence>& seqs, int32_t pad_id) {
  if (seqs.empty()) throw InvalidInput("pack_batch: empty batch");
  size_t max_m = 0;
  for (const auto& s : seqs) max_m = std::max(max_m, s.ids.size());
  if (max_m < 2) throw InvalidInput("pack_batch: sequences must have >= 2 tokens");
  PackedBatch b;
  b.batch = static_cast<int>(seqs.size());
  b.seq_len = static_cast<int>(max_m - 1);
  b.inputs.assign(static_cast<size_t>(b.batch) * b.seq_len, pad_id);
  b.targets.assign(static_cast<size_t>(b.batch) * b.seq_len, pad_id);
  for (size_t i = 0; i < seqs.size(); ++i) {
    const auto& ids = seqs[i].ids;
    const size_t row = i * static_cast<size_t>(b.seq_len);
    for (size_t t = 0; t + 1 < ids.size(); ++t) {
      b.inputs[row + t] = ids[t];
      b.targets[row + t] = ids[t + 1];
    }
  }
  return b;
}

template <typename Real>
StepStats train_step(ModelParams<Real>& params, AdamState<Real>& state,
                     const std::vector<TokenSequence>& batch, const TrainConfig& cfg,
                     int64_t step) {
  std::vector<TokenSequence> usable;
  usable.reserve(batch.size());
  for (const auto& s : batch)
    if (static_cast<int>(s.ids.size()) <= params.config.context + 1 && s.ids.size() >= 2)
      usable.push_back(s);
  if (usable.empty()) throw TrainError("train_step: no usable sequences in batch");

  PackedBatch pb = pack_batch(usable, Vocabulary::kPad);
  Tape<Real> tape = forward(params, pb.inputs, pb.batch, pb.seq_len);
  LossResult<Real> lr_res =
      loss_kl(tape.logits, pb.targets, cfg.label_smoothing, Vocabulary::kPad);
  ModelParams<Real> grads = backward(params, tape, lr_res.d_logits);
  const double lr = lr_schedule(step, cfg);
  const double gnorm = adam_update(params, grads, state, lr, cfg.grad_clip_norm);

  StepStats st;
  st.loss = lr_res.loss;
  st.lr = lr;
  st.tokens = lr_res.n_tokens;
  st.grad_norm = gnorm;
  return st;
}

template <typename Real>
TrainResult train_loop(ModelParams<Real>& params, AdamState<Real>& state,
                       const std::vector<TokenSequence>& corpus, const TrainConfig& cfg,
                       int64_t start_step,
                       const std::function<void(const TrainLogEntry&)>& on_step) {
  cfg.validate();
  TrainResult result;
  std::vector<TokenSequence> usable;
  usable.reserve(corpus.size());
  for (const auto& s : corpus) {
    if (static_cast<int>(s.ids.size()) <= params.config.context + 1 && s.ids.size() >= 2)
      usable.push_back(s);
    else
      ++result.skipped_sequences;
  }
  if (usable.empty()) throw TrainError("train_loop: no usable sequences in corpus");

  const int64_t n = static_cast<int64_t>(usable.size());
  const int64_t bsz = cfg.batch_size;
  const int64_t batches_per_epoch = (n + bsz - 1) / bsz;

  std::vector<int32_t> perm(static_cast<size_t>(n));
  int64_t perm_epoch = -1;
  auto reshuffle = [&](int64_t epoch) {
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng = Rng::fork(cfg.seed, static_cast<uint64_t>(epoch) + 0x5b5ad4UL);
    for (int64_t i = n - 1; i > 0; --i) {
      const int64_t j = static_cast<int64_t>(rng.below(static_cast<uint64_t>(i + 1)));
      std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
    }
    perm_epoch = epoch;
  };

  std::vector<TokenSequence> batch;
  for (int64_t step = start_step; step < cfg.total_steps; ++step) {
    const int64_t epoch = step / batches_per_epoch;
    const int64_t slot = step % batches_per_epoch;
    if (epoch != perm_epoch) reshuffle(epoch);
    batch.clear();
    const int64_t lo = slot * bsz, hi = std::min(lo + bsz, n);
    for (int64_t i = lo; i < hi; ++i)
      batch.push_back(usable[static_cast<size_t>(perm[static_cast<size_t>(i)])]);

    const auto t0 = std::chrono::steady_clock::now();
    StepStats st = train_step(params, state, batch, cfg, step + 1);
    const auto t1 = std::chrono::steady_clock::now();
    const double secs = std::chrono::duration<double>(t1 - t0).count();

    TrainLogEntry entry;
    entry.step = step + 1;
    entry.loss = st.loss;
    entry.lr = st.lr;
    entry.tokens_per_sec = secs > 0 ? static_cast<double>(st.tokens) / secs : 0.0;
    result.log.push_back(entry);
    if (on_step) on_step(entry);
    ++result.steps_done;
  }
  return result;
}

VocabDesc VocabDesc::describe(const Vocabulary& vocab) {
  VocabDesc d;
  for (const auto& c : vocab.categories().all()) {
    d.category_names.push_back(c.name);
    d.category_textual.push_back(c.textual);
  }
  d.styles = vocab.styles();
  d.style_enabled = vocab.style_enabled();
  return d;
}

Vocabulary VocabDesc::build() const {
  if (category_textual.size() != category_names.size())
    throw ConfigError("vocab description: textual flags do not match category names");
  return build_vocab(CategorySet::from_names(category_names, category_textual), styles,
                     style_enabled);
}

namespace {

json model_config_to_json(const ModelConfig& m) {
  return json{{"vocab_size", m.vocab_size}, {"context", m.context},
              {"d_model", m.d_model},       {"n_layers", m.n_layers},
              {"n_heads", m.n_heads},       {"d_ff", m.d_ff},
              {"dropout", m.dropout}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig m;
  m.vocab_size = j.at("vocab_size").get<int>();
  m.context = j.at("context").get<int>();
  m.d_model = j.at("d_model").get<int>();
  m.n_layers = j.at("n_layers").get<int>();
  m.n_heads = j.at("n_heads").get<int>();
  m.d_ff = j.at("d_ff").get<int>();
  m.dropout = j.at("dropout").get<double>();
  return m;
}

json train_config_to_json(const TrainConfig& t) {
  return json{{"lr", t.lr},
              {"warmup_steps", t.warmup_steps},
              {"total_steps", t.total_steps},
              {"batch_size", t.batch_size},
              {"label_smoothing", t.label_smoothing},
              {"grad_clip_norm", t.grad_clip_norm},
              {"seed", t.seed}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig t;
  t.lr = j.at("lr").get<double>();
  t.warmup_steps = j.at("warmup_steps").get<int>();
  t.total_steps = j.at("total_steps").get<int64_t>();
  t.batch_size = j.at("batch_size").get<int>();
  t.label_smoothing = j.at("label_smoothing").get<double>();
  t.grad_clip_norm = j.at("grad_clip_norm").get<double>();
  t.seed = j.at("seed").get<uint64_t>();
  return t;
}

constexpr char kMagic[4] = {'D', 'S', 'V', '2'};
constexpr uint32_t kVersion = 1;

void write_raw(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void write_tensor(std::ostream& os, const std::string& name, const Tensor<float>& t) {
  const uint32_t name_len = static_cast<uint32_t>(name.size());
  write_raw(os, &name_len, 4);
  write_raw(os, name.data(), name.size());
  const uint32_t rank = static_cast<uint32_t>(t.shape.size());
  write_raw(os, &rank, 4);
  for (int64_t d : t.shape) {
    const uint64_t u = static_cast<uint64_t>(d);
    write_raw(os, &u, 8);
  }
  write_raw(os, t.data.data(), t.data.size() * sizeof(float));
}

void read_raw(std::istream& is, void* p, size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n)
    throw CheckpointError(CheckpointError::Code::Truncated,
                          std::string("checkpoint truncated while reading ") + what);
}

void read_tensor(std::istream& is, const std::string& want_name, Tensor<float>& t) {
  uint32_t name_len = 0;
  read_raw(is, &name_len, 4, "tensor name length");
  if (name_len > 4096)
    throw CheckpointError(CheckpointError::Code::Malformed, "tensor name too long");
  std::string name(name_len, '\0');
  read_raw(is, name.data(), name_len, "tensor name");
  if (name != want_name)
    throw CheckpointError(CheckpointError::Code::Malformed,
                          "unexpected tensor '" + name + "', wanted '" + want_name + "'");
  uint32_t rank = 0;
  read_raw(is, &rank, 4, "tensor rank");
  if (rank != t.shape.size())
    throw CheckpointError(CheckpointError::Code::Malformed,
                          "tensor '" + name + "' rank mismatch");
  for (size_t i = 0; i < rank; ++i) {
    uint64_t d = 0;
    read_raw(is, &d, 8, "tensor dim");
    if (static_cast<int64_t>(d) != t.shape[i])
      throw CheckpointError(CheckpointError::Code::Malformed,
                            "tensor '" + name + "' dim mismatch");
  }
  read_raw(is, t.data.data(), t.data.size() * sizeof(float), name.c_str());
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  json meta;
  meta["model"] = model_config_to_json(ckpt.model);
  meta["train"] = train_config_to_json(ckpt.train);
  meta["codec"] = {{"t_max", ckpt.codec.t_max},
                   {"include_text", ckpt.codec.include_text},
                   {"context_limit", ckpt.codec.context_limit}};
  meta["vocab"] = {{"category_names", ckpt.vocab.category_names},
                   {"category_textual", ckpt.vocab.category_textual},
                   {"styles", ckpt.vocab.styles},
                   {"style_enabled", ckpt.vocab.style_enabled}};
  meta["step"] = ckpt.step;
  meta["has_opt"] = ckpt.has_opt;
  if (ckpt.has_opt) meta["adam_step"] = ckpt.opt.step;
  if (!ckpt.run_config_json.empty())
    meta["run_config"] = json::parse(ckpt.run_config_json);

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  write_raw(os, kMagic, 4);
  write_raw(os, &kVersion, 4);
  const std::string blob = meta.dump();
  const uint64_t blob_len = blob.size();
  write_raw(os, &blob_len, 8);
  write_raw(os, blob.data(), blob.size());
  ckpt.params.for_each_tensor([&](const std::string& name, const Tensor<float>& t) {
    write_tensor(os, name, t);
  });
  if (ckpt.has_opt) {
    auto names = tensor_list(ckpt.params);
    for (size_t i = 0; i < names.size(); ++i)
      write_tensor(os, "opt.m." + names[i].first, ckpt.opt.m[i]);
    for (size_t i = 0; i < names.size(); ++i)
      write_tensor(os, "opt.v." + names[i].first, ckpt.opt.v[i]);
  }
  os.flush();
  if (!os) throw IoError("write failed for checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  read_raw(is, magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw CheckpointError(CheckpointError::Code::BadMagic, "not a checkpoint: " + path);
  uint32_t version = 0;
  read_raw(is, &version, 4, "version");
  if (version != kVersion)
    throw CheckpointError(CheckpointError::Code::UnsupportedVersion,
                          "unsupported checkpoint version " + std::to_string(version));
  uint64_t blob_len = 0;
  read_raw(is, &blob_len, 8, "metadata length");
  if (blob_len > (1ull << 30))
    throw CheckpointError(CheckpointError::Code::Malformed, "metadata blob too large");
  std::string blob(static_cast<size_t>(blob_len), '\0');
  read_raw(is, blob.data(), blob.size(), "metadata");

  Checkpoint ckpt;
  try {
    const json meta = json::parse(blob);
    ckpt.model = model_config_from_json(meta.at("model"));
    ckpt.train = train_config_from_json(meta.at("train"));
    const json& jc = meta.at("codec");
    ckpt.codec.t_max = jc.at("t_max").get<int>();
    ckpt.codec.include_text = jc.at("include_text").get<bool>();
    ckpt.codec.context_limit = jc.at("context_limit").get<int>();
    const json& jv = meta.at("vocab");
    ckpt.vocab.category_names = jv.at("category_names").get<std::vector<std::string>>();
    ckpt.vocab.category_textual = jv.at("category_textual").get<std::vector<bool>>();
    ckpt.vocab.styles = jv.at("styles").get<std::vector<std::string>>();
    ckpt.vocab.style_enabled = jv.at("style_enabled").get<bool>();
    ckpt.step = meta.at("step").get<int64_t>();
    ckpt.has_opt = meta.at("has_opt").get<bool>();
    if (meta.contains("run_config")) ckpt.run_config_json = meta.at("run_config").dump();
    if (ckpt.has_opt) ckpt.opt.step = meta.at("adam_step").get<int64_t>();
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointError::Code::Malformed,
                          std::string("bad checkpoint metadata: ") + e.what());
  }

  ckpt.params = ModelParams<float>::zeros(ckpt.model);
  ckpt.params.for_each_tensor(
      [&](const std::string& name, Tensor<float>& t) { read_tensor(is, name, t); });
  if (ckpt.has_opt) {
    ckpt.opt.m.clear();
    ckpt.opt.v.clear();
    auto names = tensor_list(ckpt.params);
    for (auto& [name, t] : names) {
      Tensor<float> m = Tensor<float>::zeros(t->shape);
      read_tensor(is, "opt.m." + name, m);
      ckpt.opt.m.push_back(std::move(m));
    }
    for (auto& [name, t] : names) {
      Tensor<float> v = Tensor<float>::zeros(t->shape);
      read_tensor(is, "opt.v." + name, v);
      ckpt.opt.v.push_back(std::move(v));
    }
  }
  return ckpt;
}

template struct AdamState<float>;
template struct AdamState<double>;
template LossResult<float> loss_kl<float>(const Tensor<float>&, const std::vector<int32_t>&,
                                          double, int32_t);
template LossResult<double> loss_kl<double>(const Tensor<double>&, const std::vector<int32_t>&,
                                            double, int32_t);
template double adam_update<float>(ModelParams<float>&, const ModelParams<float>&,
                                   AdamState<float>&, double, double);
template double adam_update<double>(ModelParams<double>&, const ModelParams<double>&,
                                    AdamState<double>&, double, double);
template StepStats train_step<float>(ModelParams<float>&, AdamState<float>&,
                                     const std::vector<TokenSequence>&, const TrainConfig&,
                                     int64_t);
template StepStats train_step<double>(ModelParams<double>&, AdamState<double>&,
                                      const std::vector<TokenSequence>&, const TrainConfig&,
                                      int64_t);
template TrainResult train_loop<float>(ModelParams<float>&, AdamState<float>&,
                                       const std::vector<TokenSequence>&, const TrainConfig&,
                                       int64_t,
                                       const std::function<void(const TrainLogEntry&)>&);
template TrainResult train_loop<double>(ModelParams<double>&, AdamState<double>&,
                                        const std::vector<TokenSequence>&, const TrainConfig&,
                                        int64_t,
                                        const std::function<void(const TrainLogEntry&)>&);

}  // namespace docgen
