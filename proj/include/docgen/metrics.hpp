#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "docgen/doc.hpp"

namespace docgen {

// Box normalized by canvas extents, clamped into the unit square (generated
// geometry may spill past the canvas; metrics score the visible part).
struct NormBox {
  double x = 0, y = 0, w = 0, h = 0;
};

NormBox norm_box(const BBox& b, double canvas_w, double canvas_h);

// Intersection over union; 0 for disjoint boxes, 1 iff identical.
double iou(const NormBox& a, const NormBox& b);

// Mean absolute displacement of the four box edges (left/right/top/bottom).
double bde(const NormBox& pred, const NormBox& gt);

// Exact min-cost assignment over a square cost matrix (row-major, n*n).
// Returns row -> column. Among cost-optimal assignments the lexicographically
// smallest one is returned (ties detected at 1e-9 relative).
std::vector<int> hungarian(const std::vector<double>& cost, int n);

// Per-category optimal matching maximizing summed IoU; unmatched elements
// score 0; result = matched IoU total / max(element counts). Empty vs empty
// is 1, empty vs non-empty 0.
double m_iou(const Document& generated, const Document& reference);

// Mean over elements of the distance to the nearest matching anchor line
// (left/center-x/right/top/center-y/bottom) of any other element. Documents
// with fewer than two elements score 0.
double alignment(const Document& doc);

// Total pairwise intersection area over total element area (normalized
// boxes); 0 for empty documents.
double overlap(const Document& doc);

// Fixed-order layout descriptor: per category (count fraction, mean center-x,
// mean center-y, mean area), then global (element count / max_elements, mean
// aspect ratio). Dimension 4*category_count + 2.
std::vector<double> layout_features(const Document& doc, int category_count,
                                    int max_elements = 128);

// Sample mean and unbiased sample covariance (row-major d*d, symmetrized).
// Throws EvalError with fewer than 2 descriptors.
void gaussian_stats(const std::vector<std::vector<double>>& descriptors,
                    std::vector<double>& mean, std::vector<double>& cov);

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major n*n).
// eigvecs is row-major with eigenvector k in column k: A = V diag(vals) V^T.
void jacobi_eigen(const std::vector<double>& a, int n, std::vector<double>& eigvals,
                  std::vector<double>& eigvecs);

// Gaussian Frechet distance |mu1-mu2|^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2),
// negative eigenvalues clamped to zero, result clamped at zero.
double frechet(const std::vector<double>& mu1, const std::vector<double>& cov1,
               const std::vector<double>& mu2, const std::vector<double>& cov2);

enum class EvalTask { Completion, Placement };

// Which reading-order element positions were model-placed in one document.
struct PlacementTargets {
  std::string doc_id;
  std::vector<int> positions;
};

struct MetricsReport {
  EvalTask task = EvalTask::Completion;
  int64_t n_pairs = 0;
  std::optional<double> m_iou, frechet_star, alignment, overlap;  // completion
  std::optional<double> iou_single, iou_multiple;                 // placement
  std::optional<double> bde_single, bde_multiple;
  int64_t n_targets_single = 0, n_targets_multiple = 0;

  // Fixed JSON schema with table-style column aliases (FID* marks the
  // descriptor-based substitute).
  std::string to_json() const;
};

// Pairs corpora by document id (order-independent; reduction over ids
// ascending) and scores the requested task. Placement requires a
// PlacementTargets entry and equal element counts for every pair.
MetricsReport evaluate(const std::vector<Document>& generated,
                       const std::vector<Document>& reference, EvalTask task,
                       int category_count,
                       const std::vector<PlacementTargets>& targets = {},
                       int max_elements = 128);

}  // namespace docgen
