#include "docgen/metrics.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>

#include <nlohmann/json.hpp>

#include "docgen/error.hpp"

namespace docgen {

using json = nlohmann::json;
using MatXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

NormBox norm_box(const BBox& b, double canvas_w, double canvas_h) {
  if (!(canvas_w > 0) || !(canvas_h > 0))
    throw InvalidInput("norm_box: non-positive canvas");
  NormBox n;
  n.x = std::clamp(b.x / canvas_w, 0.0, 1.0);
  n.y = std::clamp(b.y / canvas_h, 0.0, 1.0);
  n.w = std::clamp(b.w / canvas_w, 0.0, 1.0 - n.x);
  n.h = std::clamp(b.h / canvas_h, 0.0, 1.0 - n.y);
  return n;
}

double iou(const NormBox& a, const NormBox& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double bde(const NormBox& pred, const NormBox& gt) {
  const double l = std::abs(pred.x - gt.x);
  const double r = std::abs((pred.x + pred.w) - (gt.x + gt.w));
  const double t = std::abs(pred.y - gt.y);
  const double b = std::abs((pred.y + pred.h) - (gt.y + gt.h));
  return (l + r + t + b) / 4.0;
}

namespace {

// Shortest-augmenting-path assignment with potentials; O(n^3). Returns the
// optimal total cost and fills row_to_col.
double solve_assignment(const std::vector<double>& cost, int n, std::vector<int>& row_to_col) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<size_t>(n) + 1, 0), v(static_cast<size_t>(n) + 1, 0);
  std::vector<int> p(static_cast<size_t>(n) + 1, 0), way(static_cast<size_t>(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(n) + 1, kInf);
    std::vector<char> used(static_cast<size_t>(n) + 1, 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      const int i0 = p[static_cast<size_t>(j0)];
      int j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const double cur = cost[static_cast<size_t>(i0 - 1) * n + (j - 1)] -
                           u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  row_to_col.assign(static_cast<size_t>(n), -1);
  double total = 0;
  for (int j = 1; j <= n; ++j) {
    const int i = p[static_cast<size_t>(j)];
    if (i >= 1) {
      row_to_col[static_cast<size_t>(i - 1)] = j - 1;
      total += cost[static_cast<size_t>(i - 1) * n + (j - 1)];
    }
  }
  return total;
}

}  // namespace

std::vector<int> hungarian(const std::vector<double>& cost, int n) {
  if (n < 0 || static_cast<size_t>(n) * n != cost.size())
    throw InvalidInput("hungarian: cost matrix must be n*n");
  if (n > 256) throw InvalidInput("hungarian: n exceeds 256");
  for (double c : cost)
    if (std::isnan(c)) throw InvalidInput("hungarian: NaN cost");
  if (n == 0) return {};

  std::vector<int> assign;
  const double best = solve_assignment(cost, n, assign);
  const double tol = 1e-9 * std::max(1.0, std::abs(best));

  // Lexicographic refinement: fix rows in order, accepting the smallest
  // column that still reaches the optimal total on the remaining subproblem.
  std::vector<int> result(static_cast<size_t>(n), -1);
  std::vector<char> col_used(static_cast<size_t>(n), 0);
  double fixed = 0;
  for (int r = 0; r < n; ++r) {
    const int m = n - r - 1;  // remaining rows after r
    std::vector<int> free_cols;
    for (int c = 0; c < n; ++c)
      if (!col_used[static_cast<size_t>(c)]) free_cols.push_back(c);
    int chosen = -1;
    double chosen_total = std::numeric_limits<double>::infinity();
    for (int c : free_cols) {
      double sub_cost = 0;
      if (m > 0) {
        std::vector<double> sub(static_cast<size_t>(m) * m);
        int cj = 0;
        for (int col : free_cols) {
          if (col == c) continue;
          for (int i = 0; i < m; ++i)
            sub[static_cast<size_t>(i) * m + cj] =
                cost[static_cast<size_t>(r + 1 + i) * n + col];
          ++cj;
        }
        std::vector<int> tmp;
        sub_cost = solve_assignment(sub, m, tmp);
      }
      const double total = fixed + cost[static_cast<size_t>(r) * n + c] + sub_cost;
      if (total <= best + tol) {
        chosen = c;
        break;
      }
      if (total < chosen_total) {
        chosen_total = total;
        chosen = c;  // fallback; only reachable through accumulated round-off
      }
    }
    result[static_cast<size_t>(r)] = chosen;
    col_used[static_cast<size_t>(chosen)] = 1;
    fixed += cost[static_cast<size_t>(r) * n + chosen];
  }
  return result;
}

double m_iou(const Document& generated, const Document& reference) {
  const size_t ng = generated.elements.size(), nr = reference.elements.size();
  if (ng == 0 && nr == 0) return 1.0;
  if (ng == 0 || nr == 0) return 0.0;

  std::map<int, std::pair<std::vector<NormBox>, std::vector<NormBox>>> by_cat;
  for (const auto& e : generated.elements)
    by_cat[e.category].first.push_back(
        norm_box(e.bbox, generated.canvas_w, generated.canvas_h));
  for (const auto& e : reference.elements)
    by_cat[e.category].second.push_back(
        norm_box(e.bbox, reference.canvas_w, reference.canvas_h));

  double total = 0;
  for (const auto& [cat, boxes] : by_cat) {
    const auto& g = boxes.first;
    const auto& r = boxes.second;
    if (g.empty() || r.empty()) continue;
    const int n = static_cast<int>(std::max(g.size(), r.size()));
    // maximize summed IoU == minimize summed -IoU; dummy slots cost 0
    std::vector<double> cost(static_cast<size_t>(n) * n, 0.0);
    for (size_t i = 0; i < g.size(); ++i)
      for (size_t j = 0; j < r.size(); ++j)
        cost[i * static_cast<size_t>(n) + j] = -iou(g[i], r[j]);
    const std::vector<int> assign = hungarian(cost, n);
    for (size_t i = 0; i < g.size(); ++i) {
      const int j = assign[i];
      if (j >= 0 && static_cast<size_t>(j) < r.size()) total += iou(g[i], r[static_cast<size_t>(j)]);
    }
  }
  return total / static_cast<double>(std::max(ng, nr));
}

double alignment(const Document& doc) {
  const size_t n = doc.elements.size();
  if (n < 2) return 0.0;
  std::vector<std::array<double, 6>> anchors(n);
  for (size_t i = 0; i < n; ++i) {
    const NormBox b = norm_box(doc.elements[i].bbox, doc.canvas_w, doc.canvas_h);
    anchors[i] = {b.x, b.x + b.w / 2, b.x + b.w, b.y, b.y + b.h / 2, b.y + b.h};
  }
  double sum = 0;
  for (size_t i = 0; i < n; ++i) {
    double ai = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      for (int a = 0; a < 6; ++a)
        ai = std::min(ai, std::abs(anchors[i][static_cast<size_t>(a)] -
                                   anchors[j][static_cast<size_t>(a)]));
    }
    sum += ai;
  }
  return sum / static_cast<double>(n);
}

double overlap(const Document& doc) {
  const size_t n = doc.elements.size();
  if (n == 0) return 0.0;
  std::vector<NormBox> boxes(n);
  double area = 0;
  for (size_t i = 0; i < n; ++i) {
    boxes[i] = norm_box(doc.elements[i].bbox, doc.canvas_w, doc.canvas_h);
    area += boxes[i].w * boxes[i].h;
  }
  if (!(area > 0)) return 0.0;
  double inter = 0;
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      const auto& a = boxes[i];
      const auto& b = boxes[j];
      const double ix =
          std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
      const double iy =
          std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
      inter += ix * iy;
    }
  }
  return inter / area;
}

std::vector<double> layout_features(const Document& doc, int category_count,
                                    int max_elements) {
  if (category_count < 1) throw InvalidInput("layout_features: category_count must be >= 1");
  std::vector<double> f(static_cast<size_t>(4 * category_count + 2), 0.0);
  const size_t s = doc.elements.size();
  if (s == 0) return f;

  std::vector<int> count(static_cast<size_t>(category_count), 0);
  std::vector<double> cx(static_cast<size_t>(category_count), 0),
      cy(static_cast<size_t>(category_count), 0), ar(static_cast<size_t>(category_count), 0);
  double aspect = 0;
  for (const auto& e : doc.elements) {
    const NormBox b = norm_box(e.bbox, doc.canvas_w, doc.canvas_h);
    if (e.category >= 0 && e.category < category_count) {
      const auto c = static_cast<size_t>(e.category);
      ++count[c];
      cx[c] += b.x + b.w / 2;
      cy[c] += b.y + b.h / 2;
      ar[c] += b.w * b.h;
    }
    aspect += b.h > 0 ? b.w / b.h : 0.0;
  }
  for (int c = 0; c < category_count; ++c) {
    const auto ci = static_cast<size_t>(c);
    if (count[ci] == 0) continue;
    const double inv = 1.0 / count[ci];
    f[ci * 4 + 0] = static_cast<double>(count[ci]) / static_cast<double>(s);
    f[ci * 4 + 1] = cx[ci] * inv;
    f[ci * 4 + 2] = cy[ci] * inv;
    f[ci * 4 + 3] = ar[ci] * inv;
  }
  f[static_cast<size_t>(4 * category_count)] =
      static_cast<double>(s) / static_cast<double>(max_elements);
  f[static_cast<size_t>(4 * category_count) + 1] = aspect / static_cast<double>(s);
  return f;
}

void gaussian_stats(const std::vector<std::vector<double>>& descriptors,
                    std::vector<double>& mean, std::vector<double>& cov) {
  const size_t n = descriptors.size();
  if (n < 2) throw EvalError("gaussian_stats: need at least 2 descriptors");
  const size_t d = descriptors[0].size();
  for (const auto& x : descriptors)
    if (x.size() != d) throw InvalidInput("gaussian_stats: descriptor dimension mismatch");

  mean.assign(d, 0.0);
  for (const auto& x : descriptors)
    for (size_t i = 0; i < d; ++i) mean[i] += x[i];
  for (double& m : mean) m /= static_cast<double>(n);

  cov.assign(d * d, 0.0);
  std::vector<double> c(d);
  for (const auto& x : descriptors) {
    for (size_t i = 0; i < d; ++i) c[i] = x[i] - mean[i];
    for (size_t i = 0; i < d; ++i)
      for (size_t j = 0; j < d; ++j) cov[i * d + j] += c[i] * c[j];
  }
  const double inv = 1.0 / static_cast<double>(n - 1);
  for (double& v : cov) v *= inv;
  for (size_t i = 0; i < d; ++i)
    for (size_t j = i + 1; j < d; ++j) {
      const double s = 0.5 * (cov[i * d + j] + cov[j * d + i]);
      cov[i * d + j] = s;
      cov[j * d + i] = s;
    }
}

void jacobi_eigen(const std::vector<double>& a_in, int n, std::vector<double>& eigvals,
                  std::vector<double>& eigvecs) {
  if (n < 0 || static_cast<size_t>(n) * n != a_in.size())
    throw InvalidInput("jacobi_eigen: matrix must be n*n");
  std::vector<double> a = a_in;
  eigvecs.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) eigvecs[static_cast<size_t>(i) * n + i] = 1.0;
  eigvals.assign(static_cast<size_t>(n), 0.0);
  if (n == 0) return;

  double scale = 0;
  for (double v : a) scale = std::max(scale, std::abs(v));
  if (scale == 0) return;  // zero matrix: zero eigenvalues, identity vectors
  const double stop = 1e-30 * scale * scale * n * n;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        const double v = a[static_cast<size_t>(i) * n + j];
        off += v * v;
      }
    if (off <= stop) break;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a[static_cast<size_t>(p) * n + q];
        if (std::abs(apq) <= 1e-300) continue;
        const double app = a[static_cast<size_t>(p) * n + p];
        const double aqq = a[static_cast<size_t>(q) * n + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {  // A <- A J
          const double akp = a[static_cast<size_t>(k) * n + p];
          const double akq = a[static_cast<size_t>(k) * n + q];
          a[static_cast<size_t>(k) * n + p] = c * akp - s * akq;
          a[static_cast<size_t>(k) * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {  // A <- J^T A
          const double apk = a[static_cast<size_t>(p) * n + k];
          const double aqk = a[static_cast<size_t>(q) * n + k];
          a[static_cast<size_t>(p) * n + k] = c * apk - s * aqk;
          a[static_cast<size_t>(q) * n + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {  // V <- V J
          const double vkp = eigvecs[static_cast<size_t>(k) * n + p];
          const double vkq = eigvecs[static_cast<size_t>(k) * n + q];
          eigvecs[static_cast<size_t>(k) * n + p] = c * vkp - s * vkq;
          eigvecs[static_cast<size_t>(k) * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  for (int i = 0; i < n; ++i) eigvals[static_cast<size_t>(i)] = a[static_cast<size_t>(i) * n + i];
}

namespace {

// V diag(sqrt(max(0, vals))) V^T
MatXd sqrt_psd(const std::vector<double>& m, int n) {
  std::vector<double> vals, vecs;
  jacobi_eigen(m, n, vals, vecs);
  Eigen::Map<const MatXd> v(vecs.data(), n, n);
  Eigen::VectorXd d(n);
  for (int i = 0; i < n; ++i) d(i) = std::sqrt(std::max(0.0, vals[static_cast<size_t>(i)]));
  return v * d.asDiagonal() * v.transpose();
}

void check_symmetric(const std::vector<double>& m, int n, const char* name) {
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (std::abs(m[static_cast<size_t>(i) * n + j] - m[static_cast<size_t>(j) * n + i]) >
          1e-8)
        throw InvalidInput(std::string("frechet: ") + name + " is not symmetric");
}

}  // namespace

double frechet(const std::vector<double>& mu1, const std::vector<double>& cov1,
               const std::vector<double>& mu2, const std::vector<double>& cov2) {
  const int n = static_cast<int>(mu1.size());
  if (mu2.size() != mu1.size() || cov1.size() != static_cast<size_t>(n) * n ||
      cov2.size() != static_cast<size_t>(n) * n)
    throw InvalidInput("frechet: dimension mismatch");
  check_symmetric(cov1, n, "cov1");
  check_symmetric(cov2, n, "cov2");

  double mu_sq = 0;
  for (int i = 0; i < n; ++i) {
    const double d = mu1[static_cast<size_t>(i)] - mu2[static_cast<size_t>(i)];
    mu_sq += d * d;
  }
  double tr1 = 0, tr2 = 0;
  for (int i = 0; i < n; ++i) {
    tr1 += cov1[static_cast<size_t>(i) * n + i];
    tr2 += cov2[static_cast<size_t>(i) * n + i];
  }

  const MatXd a = sqrt_psd(cov1, n);
  Eigen::Map<const MatXd> s2(cov2.data(), n, n);
  MatXd inner = a * s2 * a;
  inner = 0.5 * (inner + inner.transpose().eval());  // strip numeric asymmetry
  std::vector<double> inner_v(inner.data(), inner.data() + static_cast<size_t>(n) * n);
  std::vector<double> vals, vecs;
  jacobi_eigen(inner_v, n, vals, vecs);
  double tr_sqrt = 0;
  for (double v : vals) tr_sqrt += std::sqrt(std::max(0.0, v));

  return std::max(0.0, mu_sq + tr1 + tr2 - 2.0 * tr_sqrt);
}

namespace {

json opt_json(const std::optional<double>& v) {
  return v.has_value() ? json(*v) : json(nullptr);
}

}  // namespace

std::string MetricsReport::to_json() const {
  json j;
  j["task"] = task == EvalTask::Completion ? "completion" : "placement";
  j["n_pairs"] = n_pairs;
  j["m_iou"] = opt_json(m_iou);
  j["frechet_star"] = opt_json(frechet_star);
  j["alignment"] = opt_json(alignment);
  j["overlap"] = opt_json(overlap);
  j["iou"] = {{"single", opt_json(iou_single)}, {"multiple", opt_json(iou_multiple)}};
  j["bde"] = {{"single", opt_json(bde_single)}, {"multiple", opt_json(bde_multiple)}};
  j["counts"] = {{"targets_single", n_targets_single},
                 {"targets_multiple", n_targets_multiple}};
  if (task == EvalTask::Completion) {
    j["columns"] = {{"mIoU", opt_json(m_iou)},
                    {"FID*", opt_json(frechet_star)},
                    {"Align", opt_json(alignment)},
                    {"Over", opt_json(overlap)}};
  } else {
    j["columns"] = {
        {"IoU", {{"Single", opt_json(iou_single)}, {"Multiple", opt_json(iou_multiple)}}},
        {"BDE", {{"Single", opt_json(bde_single)}, {"Multiple", opt_json(bde_multiple)}}}};
  }
  return j.dump(2);
}

MetricsReport evaluate(const std::vector<Document>& generated,
                       const std::vector<Document>& reference, EvalTask task,
                       int category_count, const std::vector<PlacementTargets>& targets,
                       int max_elements) {
  std::map<std::string, const Document*> ref_by_id;
  for (const auto& d : reference)
    if (!ref_by_id.emplace(d.id, &d).second)
      throw EvalError("evaluate: duplicate reference id '" + d.id + "'");
  std::map<std::string, const Document*> gen_by_id;
  for (const auto& d : generated)
    if (!gen_by_id.emplace(d.id, &d).second)
      throw EvalError("evaluate: duplicate generated id '" + d.id + "'");

  std::vector<std::string> missing;
  for (const auto& [id, doc] : gen_by_id)
    if (!ref_by_id.count(id)) missing.push_back(id);
  for (const auto& [id, doc] : ref_by_id)
    if (!gen_by_id.count(id)) missing.push_back(id);
  if (!missing.empty()) {
    std::string msg = "evaluate: unpaired document ids:";
    for (const auto& id : missing) msg += " " + id;
    throw EvalError(msg);
  }

  MetricsReport rep;
  rep.task = task;
  rep.n_pairs = static_cast<int64_t>(gen_by_id.size());
  if (rep.n_pairs == 0) return rep;

  if (task == EvalTask::Completion) {
    double miou_sum = 0, align_sum = 0, over_sum = 0;
    std::vector<std::vector<double>> gen_desc, ref_desc;
    for (const auto& [id, gen] : gen_by_id) {  // map iteration: ids ascending
      const Document* ref = ref_by_id.at(id);
      miou_sum += m_iou(*gen, *ref);
      align_sum += alignment(*gen);
      over_sum += overlap(*gen);
      gen_desc.push_back(layout_features(*gen, category_count, max_elements));
      ref_desc.push_back(layout_features(*ref, category_count, max_elements));
    }
    const double inv = 1.0 / static_cast<double>(rep.n_pairs);
    rep.m_iou = miou_sum * inv;
    rep.alignment = align_sum * inv;
    rep.overlap = over_sum * inv;
    if (rep.n_pairs >= 2) {
      std::vector<double> mu_g, cov_g, mu_r, cov_r;
      gaussian_stats(gen_desc, mu_g, cov_g);
      gaussian_stats(ref_desc, mu_r, cov_r);
      rep.frechet_star = frechet(mu_g, cov_g, mu_r, cov_r);
    }
    return rep;
  }

  std::map<std::string, const std::vector<int>*> targets_by_id;
  for (const auto& t : targets)
    if (!targets_by_id.emplace(t.doc_id, &t.positions).second)
      throw EvalError("evaluate: duplicate target entry for id '" + t.doc_id + "'");

  double iou_s = 0, iou_m = 0, bde_s = 0, bde_m = 0;
  for (const auto& [id, gen] : gen_by_id) {
    const Document* ref = ref_by_id.at(id);
    auto it = targets_by_id.find(id);
    if (it == targets_by_id.end())
      throw EvalError("evaluate: no placement targets for id '" + id + "'");
    if (gen->elements.size() != ref->elements.size())
      throw EvalError("evaluate: element count mismatch for id '" + id + "'");
    const Document ref_canon = canonical_order(*ref);
    const std::vector<int>& pos = *it->second;
    const bool single = pos.size() == 1;
    for (int p : pos) {
      if (p < 0 || static_cast<size_t>(p) >= gen->elements.size())
        throw EvalError("evaluate: target position out of range for id '" + id + "'");
      const NormBox g =
          norm_box(gen->elements[static_cast<size_t>(p)].bbox, gen->canvas_w, gen->canvas_h);
      const NormBox r = norm_box(ref_canon.elements[static_cast<size_t>(p)].bbox,
                                 ref_canon.canvas_w, ref_canon.canvas_h);
      if (single) {
        iou_s += iou(g, r);
        bde_s += bde(g, r);
        ++rep.n_targets_single;
      } else {
        iou_m += iou(g, r);
        bde_m += bde(g, r);
        ++rep.n_targets_multiple;
      }
    }
  }
  if (rep.n_targets_single > 0) {
    rep.iou_single = iou_s / static_cast<double>(rep.n_targets_single);
    rep.bde_single = bde_s / static_cast<double>(rep.n_targets_single);
  }
  if (rep.n_targets_multiple > 0) {
    rep.iou_multiple = iou_m / static_cast<double>(rep.n_targets_multiple);
    rep.bde_multiple = bde_m / static_cast<double>(rep.n_targets_multiple);
  }
  return rep;
}

}  // namespace docgen
