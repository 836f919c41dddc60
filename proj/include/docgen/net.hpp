#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <new>
#include <string>
#include <vector>

#include "docgen/error.hpp"

namespace docgen {

// Pins every tensor buffer to cache-line alignment. Eigen picks kernel
// prologues from the runtime alignment of mapped pointers, so uniform
// alignment keeps reduction orders — and training — bitwise reproducible
// across allocations.
template <typename T>
struct CacheAlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  CacheAlignedAllocator() noexcept = default;
  template <typename U>
  CacheAlignedAllocator(const CacheAlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, std::size_t n) noexcept {
    ::operator delete(p, n * sizeof(T), kAlign);
  }
  template <typename U>
  bool operator==(const CacheAlignedAllocator<U>&) const noexcept {
    return true;
  }
};

// Dense row-major tensor. 64-bit scalars in gradient checks, 32-bit in
// training.
template <typename Real>
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<Real, CacheAlignedAllocator<Real>> data;

  Tensor() = default;
  static Tensor zeros(std::vector<int64_t> shape);
  int64_t numel() const;
  Real* ptr() { return data.data(); }
  const Real* ptr() const { return data.data(); }
  bool finite() const;
};

struct ModelConfig {
  int vocab_size = 0;
  int context = 1024;   // L
  int d_model = 256;
  int n_layers = 4;
  int n_heads = 4;
  int d_ff = 0;         // 0 resolves to 4*d_model
  double dropout = 0.0; // knob exists; 0 disables (the only supported value today)

  int ff_dim() const { return d_ff > 0 ? d_ff : 4 * d_model; }
  int head_dim() const { return d_model / n_heads; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

template <typename Real>
struct LayerParams {
  Tensor<Real> ln1_g, ln1_b;
  Tensor<Real> qkv_w, qkv_b;    // [d, 3d], [3d]
  Tensor<Real> attn_w, attn_b;  // [d, d], [d]
  Tensor<Real> ln2_g, ln2_b;
  Tensor<Real> fc1_w, fc1_b;    // [d, f], [f]
  Tensor<Real> fc2_w, fc2_b;    // [f, d], [d]
};

// Full parameter set. Also reused as the gradient container (same shapes).
template <typename Real>
struct ModelParams {
  ModelConfig config;
  Tensor<Real> wte;   // [V, d]
  Tensor<Real> wpe;   // [L, d]
  std::vector<LayerParams<Real>> layers;
  Tensor<Real> lnf_g, lnf_b;
  Tensor<Real> head_w;  // [d, V], untied

  static ModelParams zeros(const ModelConfig& config);
  int64_t parameter_count() const;

  // Visits every tensor in a fixed order under a stable name; the order
  // defines checkpoint layout and optimizer-state pairing.
  void for_each_tensor(const std::function<void(const std::string&, Tensor<Real>&)>& fn);
  void for_each_tensor(
      const std::function<void(const std::string&, const Tensor<Real>&)>& fn) const;
};

// Weights ~ Normal(0, 0.02), biases/norm shifts 0, norm scales 1.
// Deterministic for a given seed (splitmix64-seeded xoshiro256**).
template <typename Real>
ModelParams<Real> init_params(const ModelConfig& config, uint64_t seed);

// Numerically stable softmax (max subtraction).
template <typename Real>
void softmax_inplace(Real* row, int n);
template <typename Real>
std::vector<Real> softmax(const std::vector<Real>& row);

// Recorded forward pass: every intermediate needed to run the reverse sweep.
template <typename Real>
struct Tape {
  int batch = 0, seq_len = 0;
  std::vector<int32_t> ids;     // [batch*seq_len]
  Tensor<Real> x_emb;           // [N, d], N = batch*seq_len
  struct LayerTape {
    std::vector<Real> ln1_mean, ln1_rstd;  // [N]
    Tensor<Real> ln1_out, qkv;             // [N, d], [N, 3d]
    Tensor<Real> att_p;                    // [B*H*T*T] softmax probabilities
    Tensor<Real> att_out;                  // [N, d] pre-projection
    Tensor<Real> res1;                     // [N, d] residual after attention
    std::vector<Real> ln2_mean, ln2_rstd;
    Tensor<Real> ln2_out;                  // [N, d]
    Tensor<Real> fc1, gelu;                // [N, f]
    Tensor<Real> res2;                     // [N, d] residual after FFN
  };
  std::vector<LayerTape> layers;
  std::vector<Real> lnf_mean, lnf_rstd;
  Tensor<Real> lnf_out;  // [N, d]
  Tensor<Real> logits;   // [N, V]
};

// Pre-norm decoder forward over a padded [batch, seq_len] id block.
// Row t of each sequence depends only on ids[0..t] (strict causal mask).
template <typename Real>
Tape<Real> forward(const ModelParams<Real>& params, const std::vector<int32_t>& ids,
                   int batch, int seq_len);

// Exact reverse-mode gradients of the recorded computation.
template <typename Real>
ModelParams<Real> backward(const ModelParams<Real>& params, const Tape<Real>& tape,
                           const Tensor<Real>& d_logits);

// Incremental single-sequence decoding with per-layer K/V caches.
template <typename Real>
class DecodeSession {
 public:
  explicit DecodeSession(const ModelParams<Real>& params);

  // Feeds one token; returns logits over the next token.
  const std::vector<Real>& step(int32_t token_id);
  int pos() const { return pos_; }
  int context() const { return params_->config.context; }

 private:
  const ModelParams<Real>* params_;
  int pos_ = 0;
  std::vector<Tensor<Real>> k_cache_, v_cache_;  // per layer [L, d]
  std::vector<Real> logits_;
  std::vector<Real> x_, ln_, qkv_, att_, proj_, ff_, scores_;
};

extern template struct Tensor<float>;
extern template struct Tensor<double>;
extern template struct ModelParams<float>;
extern template struct ModelParams<double>;
extern template struct Tape<float>;
extern template struct Tape<double>;
extern template ModelParams<float> init_params<float>(const ModelConfig&, uint64_t);
extern template ModelParams<double> init_params<double>(const ModelConfig&, uint64_t);
extern template Tape<float> forward<float>(const ModelParams<float>&,
                                           const std::vector<int32_t>&, int, int);
extern template Tape<double> forward<double>(const ModelParams<double>&,
                                             const std::vector<int32_t>&, int, int);
extern template ModelParams<float> backward<float>(const ModelParams<float>&,
                                                   const Tape<float>&, const Tensor<float>&);
extern template ModelParams<double> backward<double>(const ModelParams<double>&,
                                                     const Tape<double>&,
                                                     const Tensor<double>&);
extern template class DecodeSession<float>;
extern template class DecodeSession<double>;

}  // namespace docgen
