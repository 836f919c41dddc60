#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "docgen/codec.hpp"
#include "docgen/net.hpp"

namespace docgen {

struct TrainConfig {
  double lr = 3e-4;
  int warmup_steps = 100;        // linear warmup, then constant
  int64_t total_steps = 0;
  int batch_size = 8;
  double label_smoothing = 0.1;  // epsilon on the target distribution
  double grad_clip_norm = 1.0;   // global norm; <= 0 disables clipping
  uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// 1-eps on the true token, eps/(V-1) on every other id; sums to 1.
std::vector<double> smoothed_target(int token, int vocab_size, double eps);

template <typename Real>
struct LossResult {
  double loss = 0;        // mean KL over non-PAD target positions
  int64_t n_tokens = 0;   // non-PAD target count
  Tensor<Real> d_logits;  // gradient of the mean loss; zero rows at PAD targets
};

// KL(smoothed_target || softmax(logits)) averaged over positions whose target
// is not pad_id. Throws TrainError when every target is PAD.
template <typename Real>
LossResult<Real> loss_kl(const Tensor<Real>& logits, const std::vector<int32_t>& targets,
                         double eps, int32_t pad_id);

// step is 1-based. Linear ramp 0 -> lr over warmup_steps, constant after.
double lr_schedule(int64_t step, const TrainConfig& config);

template <typename Real>
struct AdamState {
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  int64_t step = 0;
  std::vector<Tensor<Real>> m, v;  // first/second moments, for_each_tensor order

  static AdamState init(const ModelParams<Real>& params);
};

// Bias-corrected Adam with global-norm clipping applied to the gradients
// first. Returns the pre-clip global norm. Throws TrainError on non-finite
// gradients (names the offending tensor).
template <typename Real>
double adam_update(ModelParams<Real>& params, const ModelParams<Real>& grads,
                   AdamState<Real>& state, double lr, double clip_norm);

// Teacher-forcing batch: inputs are tokens[0..m-1), targets tokens[1..m),
// both padded to the batch maximum with pad_id.
struct PackedBatch {
  std::vector<int32_t> inputs;   // [batch, seq_len]
  std::vector<int32_t> targets;  // [batch, seq_len]
  int batch = 0;
  int seq_len = 0;
};
PackedBatch pack_batch(const std::vector<TokenSequence>& seqs, int32_t pad_id);

struct StepStats {
  double loss = 0;
  double lr = 0;
  int64_t tokens = 0;     // non-PAD targets in the step
  double grad_norm = 0;   // pre-clip global norm
};

// One forward/backward/update. `step` is the 1-based schedule step. Sequences
// longer than context+1 are skipped; an empty remainder throws TrainError.
template <typename Real>
StepStats train_step(ModelParams<Real>& params, AdamState<Real>& state,
                     const std::vector<TokenSequence>& batch, const TrainConfig& cfg,
                     int64_t step);

struct TrainLogEntry {
  int64_t step = 0;  // 1-based
  double loss = 0;
  double lr = 0;
  double tokens_per_sec = 0;
};

struct TrainResult {
  int64_t steps_done = 0;
  int64_t skipped_sequences = 0;  // over-length, dropped before the loop
  std::vector<TrainLogEntry> log;
};

// Runs steps start_step+1 .. total_steps over the corpus. Batch order is a
// deterministic per-epoch shuffle keyed by (seed, epoch), so resuming from
// start_step reproduces the uninterrupted run exactly.
template <typename Real>
TrainResult train_loop(ModelParams<Real>& params, AdamState<Real>& state,
                       const std::vector<TokenSequence>& corpus, const TrainConfig& cfg,
                       int64_t start_step = 0,
                       const std::function<void(const TrainLogEntry&)>& on_step = {});

// Everything needed to rebuild the vocabulary a model was trained against.
struct VocabDesc {
  std::vector<std::string> category_names;
  std::vector<bool> category_textual;
  std::vector<std::string> styles;
  bool style_enabled = false;

  static VocabDesc describe(const Vocabulary& vocab);
  Vocabulary build() const;
  bool operator==(const VocabDesc&) const = default;
};

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  CodecConfig codec;
  VocabDesc vocab;
  int64_t step = 0;
  std::string run_config_json;  // provenance blob, carried verbatim
  ModelParams<float> params;
  bool has_opt = false;
  AdamState<float> opt;
};

struct CheckpointError : IoError {
  enum class Code { BadMagic, UnsupportedVersion, Truncated, Malformed };
  CheckpointError(Code code, const std::string& what) : IoError(what), code(code) {}
  Code code;
};

// Binary format: magic "DSV2", u32 LE version=1, u64 LE JSON length, JSON
// blob (configs, vocab, step), then per tensor: u32 name length, name,
// u32 rank, u64 dims, raw little-endian float32 data. Round trip is bitwise.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

extern template struct AdamState<float>;
extern template struct AdamState<double>;
extern template LossResult<float> loss_kl<float>(const Tensor<float>&,
                                                 const std::vector<int32_t>&, double, int32_t);
extern template LossResult<double> loss_kl<double>(const Tensor<double>&,
                                                   const std::vector<int32_t>&, double,
                                                   int32_t);
extern template double adam_update<float>(ModelParams<float>&, const ModelParams<float>&,
                                          AdamState<float>&, double, double);
extern template double adam_update<double>(ModelParams<double>&, const ModelParams<double>&,
                                           AdamState<double>&, double, double);
extern template StepStats train_step<float>(ModelParams<float>&, AdamState<float>&,
                                            const std::vector<TokenSequence>&,
                                            const TrainConfig&, int64_t);
extern template StepStats train_step<double>(ModelParams<double>&, AdamState<double>&,
                                             const std::vector<TokenSequence>&,
                                             const TrainConfig&, int64_t);
extern template TrainResult train_loop<float>(
    ModelParams<float>&, AdamState<float>&, const std::vector<TokenSequence>&,
    const TrainConfig&, int64_t, const std::function<void(const TrainLogEntry&)>&);
extern template TrainResult train_loop<double>(
    ModelParams<double>&, AdamState<double>&, const std::vector<TokenSequence>&,
    const TrainConfig&, int64_t, const std::function<void(const TrainLogEntry&)>&);

}  // namespace docgen
