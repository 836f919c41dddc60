#pragma once

// Shared test utilities: randomized document generation, independent
// quantization/metric oracles, finite-difference gradient checks, and
// temp-file plumbing. Everything here is test-side code kept deliberately
// independent of the library internals it checks.

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "docgen/codec.hpp"
#include "docgen/doc.hpp"
#include "docgen/metrics.hpp"
#include "docgen/net.hpp"
#include "docgen/rng.hpp"

namespace testutil {

// ---------------------------------------------------------------------------
// Independent quantization oracle.
//
// For v on the half-unit lattice (v = n/2) and integer extent E, the exact
// value of floor(v / E * 256) is floor(n * 128 / E), computable in integer
// arithmetic with no rounding at all.
inline int quantize_oracle_halfstep(int64_t n, int64_t extent) {
  int64_t bin = (n * 128) / extent;
  if (bin < 0) bin = 0;
  if (bin > 255) bin = 255;
  return static_cast<int>(bin);
}

// ---------------------------------------------------------------------------
// Randomized documents.

struct DocGenOptions {
  int min_elements = 0;
  int max_elements = 12;
  bool with_text = true;
  bool with_style = false;
  int style_count = 0;
  int long_text_per_mille = 100;  // chance of text longer than a typical t_max
};

inline std::string random_text(docgen::Rng& rng, bool allow_long, int long_per_mille) {
  static const char* kWords[] = {"alpha", "beta",  "gamma", "delta", "page",
                                 "table", "title", "note",  "text",  "box"};
  static const char* kMulti[] = {"\xc3\xa9", "\xe2\x82\xac", "\xe4\xb8\xad",
                                 "\xf0\x9f\x98\x80"};  // é € 中 😀
  std::string s;
  const bool go_long = allow_long && rng.chance(static_cast<uint32_t>(long_per_mille), 1000);
  const int words = go_long ? static_cast<int>(20 + rng.below(20))
                            : static_cast<int>(1 + rng.below(6));
  for (int w = 0; w < words; ++w) {
    if (w) s += ' ';
    if (rng.chance(1, 8)) s += kMulti[rng.below(4)];
    s += kWords[rng.below(10)];
  }
  return s;
}

inline docgen::Document random_document(docgen::Rng& rng, const docgen::CategorySet& cats,
                                        const DocGenOptions& opt = {}) {
  docgen::Document doc;
  doc.id = "rand-" + std::to_string(rng.below(1u << 30));
  const double canvases[4][2] = {{612, 792}, {1000, 1000}, {256, 256}, {320, 200}};
  const auto& cv = canvases[rng.below(4)];
  doc.canvas_w = cv[0];
  doc.canvas_h = cv[1];
  const int n = opt.min_elements +
                static_cast<int>(rng.below(
                    static_cast<uint64_t>(opt.max_elements - opt.min_elements + 1)));
  for (int i = 0; i < n; ++i) {
    docgen::Element e;
    e.category = static_cast<int>(rng.below(static_cast<uint64_t>(cats.size())));
    const double W = doc.canvas_w, H = doc.canvas_h;
    e.bbox.x = rng.next_double() * W * 0.8;
    e.bbox.y = rng.next_double() * H * 0.8;
    e.bbox.w = W * 0.01 + rng.next_double() * (W - e.bbox.x - W * 0.01);
    e.bbox.h = H * 0.01 + rng.next_double() * (H - e.bbox.y - H * 0.01);
    if (opt.with_text && cats.at(e.category).textual && rng.chance(3, 4))
      e.text = random_text(rng, true, opt.long_text_per_mille);
    if (opt.with_style && opt.style_count > 0 && rng.chance(1, 2))
      e.style = static_cast<int>(rng.below(static_cast<uint64_t>(opt.style_count)));
    doc.elements.push_back(std::move(e));
  }
  return doc;
}

inline docgen::CategorySet test_categories() {
  return docgen::CategorySet({{0, "text", true},
                              {1, "title", true},
                              {2, "list", true},
                              {3, "table", false},
                              {4, "figure", false}});
}

// ---------------------------------------------------------------------------
// Grid rasterization oracles for IoU / overlap. Sampling at cell centers is
// exact when box edges sit on the 1/cells lattice, so callers snap inputs.

inline double snap3(double v) { return std::round(v * 1000.0) / 1000.0; }

inline docgen::NormBox snapped_box(docgen::Rng& rng) {
  docgen::NormBox b;
  b.x = snap3(rng.next_double() * 0.7);
  b.y = snap3(rng.next_double() * 0.7);
  b.w = snap3(0.05 + rng.next_double() * (1.0 - b.x - 0.05));
  b.h = snap3(0.05 + rng.next_double() * (1.0 - b.y - 0.05));
  if (b.w < 0.002) b.w = 0.002;
  if (b.h < 0.002) b.h = 0.002;
  return b;
}

inline double grid_iou(const docgen::NormBox& a, const docgen::NormBox& b, int cells = 1000) {
  int64_t ia = 0, ib = 0, both = 0;
  for (int r = 0; r < cells; ++r) {
    const double y = (r + 0.5) / cells;
    const bool ay = y > a.y && y < a.y + a.h;
    const bool by = y > b.y && y < b.y + b.h;
    if (!ay && !by) continue;
    for (int c = 0; c < cells; ++c) {
      const double x = (c + 0.5) / cells;
      const bool ina = ay && x > a.x && x < a.x + a.w;
      const bool inb = by && x > b.x && x < b.x + b.w;
      ia += ina;
      ib += inb;
      both += ina && inb;
    }
  }
  const int64_t uni = ia + ib - both;
  return uni == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(uni);
}

// overlap numerator/denominator via one coverage pass: sum over cells of
// C(k,2) counts every pairwise intersection exactly once.
inline double grid_overlap(const std::vector<docgen::NormBox>& boxes, int cells = 1000) {
  int64_t pair_cells = 0, area_cells = 0;
  for (int r = 0; r < cells; ++r) {
    const double y = (r + 0.5) / cells;
    for (int c = 0; c < cells; ++c) {
      const double x = (c + 0.5) / cells;
      int k = 0;
      for (const auto& b : boxes)
        k += x > b.x && x < b.x + b.w && y > b.y && y < b.y + b.h;
      area_cells += k;
      pair_cells += k * (k - 1) / 2;
    }
  }
  return area_cells == 0 ? 0.0
                         : static_cast<double>(pair_cells) / static_cast<double>(area_cells);
}

// ---------------------------------------------------------------------------
// Brute-force assignment oracle: first lexicographically-smallest minimum
// over all permutations (next_permutation enumerates in lexicographic order).
inline std::pair<std::vector<int>, double> brute_force_assignment(
    const std::vector<double>& cost, int n) {
  std::vector<int> perm(n), best;
  for (int i = 0; i < n; ++i) perm[i] = i;
  double best_cost = 0;
  std::vector<int> p = perm;
  do {
    double c = 0;
    for (int i = 0; i < n; ++i) c += cost[i * n + p[i]];
    if (best.empty() || c < best_cost - 1e-12) {
      best = p;
      best_cost = c;
    }
  } while (std::next_permutation(p.begin(), p.end()));
  return {best, best_cost};
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check. Scalar objective L = sum(d_logits *
// logits) with a fixed random weighting; central differences h on n_samples
// parameters spread uniformly over all tensors. Returns max relative error.
inline double fd_gradient_check(const docgen::ModelConfig& config, uint64_t seed,
                                int n_samples, double h, int* checked = nullptr) {
  using docgen::Tensor;
  auto params = docgen::init_params<double>(config, seed);
  docgen::Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);

  const int T = std::min(config.context, 6);
  std::vector<int32_t> ids(static_cast<size_t>(T));
  for (auto& id : ids)
    id = static_cast<int32_t>(rng.below(static_cast<uint64_t>(config.vocab_size)));

  auto tape = docgen::forward<double>(params, ids, 1, T);
  Tensor<double> d_logits = Tensor<double>::zeros({T, config.vocab_size});
  for (auto& v : d_logits.data) v = rng.next_double() * 2.0 - 1.0;

  const auto grads = docgen::backward<double>(params, tape, d_logits);

  auto objective = [&](const docgen::ModelParams<double>& p) {
    auto t = docgen::forward<double>(p, ids, 1, T);
    double s = 0;
    for (size_t i = 0; i < t.logits.data.size(); ++i) s += t.logits.data[i] * d_logits.data[i];
    return s;
  };

  // Collect (param tensor, grad tensor) pairs in a fixed order.
  std::vector<std::pair<Tensor<double>*, const Tensor<double>*>> slots;
  {
    std::vector<Tensor<double>*> ptensors;
    params.for_each_tensor([&](const std::string&, Tensor<double>& t) {
      ptensors.push_back(&t);
    });
    std::vector<const Tensor<double>*> gtensors;
    grads.for_each_tensor([&](const std::string&, const Tensor<double>& t) {
      gtensors.push_back(&t);
    });
    for (size_t i = 0; i < ptensors.size(); ++i)
      slots.emplace_back(ptensors[i], gtensors[i]);
  }
  int64_t total = 0;
  for (auto& s : slots) total += static_cast<int64_t>(s.first->data.size());

  double max_rel = 0;
  int n_checked = 0;
  for (int s = 0; s < n_samples; ++s) {
    int64_t flat = static_cast<int64_t>(rng.below(static_cast<uint64_t>(total)));
    size_t slot = 0;
    while (flat >= static_cast<int64_t>(slots[slot].first->data.size())) {
      flat -= static_cast<int64_t>(slots[slot].first->data.size());
      ++slot;
    }
    double& pv = slots[slot].first->data[static_cast<size_t>(flat)];
    const double analytic = slots[slot].second->data[static_cast<size_t>(flat)];
    const double saved = pv;
    pv = saved + h;
    const double lp = objective(params);
    pv = saved - h;
    const double lm = objective(params);
    pv = saved;
    const double fd = (lp - lm) / (2 * h);
    const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-8});
    if (std::abs(analytic) < 1e-9 && std::abs(fd) < 1e-9) {
      ++n_checked;
      continue;  // both zero: position-embedding rows past T, etc.
    }
    max_rel = std::max(max_rel, std::abs(analytic - fd) / denom);
    ++n_checked;
  }
  if (checked) *checked = n_checked;
  return max_rel;
}

// ---------------------------------------------------------------------------
// Filesystem helpers.

class TempDir {
 public:
  TempDir() {
    auto base = std::filesystem::temp_directory_path();
    for (int i = 0; i < 1000; ++i) {
      auto candidate = base / ("docgen-test-" + std::to_string(::getpid()) + "-" +
                               std::to_string(counter_++));
      std::error_code ec;
      if (std::filesystem::create_directory(candidate, ec)) {
        path_ = candidate;
        return;
      }
    }
    throw std::runtime_error("could not create temp dir");
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  static inline int counter_ = 0;
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void spew(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  os << content;
}

// Bitwise float comparison across two parameter sets; returns the count of
// differing scalars.
template <typename Real>
inline int64_t bitwise_param_diff(const docgen::ModelParams<Real>& a,
                                  const docgen::ModelParams<Real>& b) {
  std::vector<const docgen::Tensor<Real>*> ta, tb;
  a.for_each_tensor(
      [&](const std::string&, const docgen::Tensor<Real>& t) { ta.push_back(&t); });
  b.for_each_tensor(
      [&](const std::string&, const docgen::Tensor<Real>& t) { tb.push_back(&t); });
  if (ta.size() != tb.size()) return -1;
  int64_t diff = 0;
  for (size_t i = 0; i < ta.size(); ++i) {
    if (ta[i]->data.size() != tb[i]->data.size()) return -1;
    for (size_t j = 0; j < ta[i]->data.size(); ++j)
      if (std::memcmp(&ta[i]->data[j], &tb[i]->data[j], sizeof(Real)) != 0) ++diff;
  }
  return diff;
}

}  // namespace testutil
