#pragma once

// Set-prediction training objective: optimal one-to-one assignment between
// predicted and ground-truth map elements, and the weighted composite of
// focal classification, point-to-point, edge-direction and BEV-segmentation
// terms for both the frame-level branch and every unveiler layer.

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mapclip/framenet.hpp"
#include "mapclip/geometry.hpp"

namespace mapclip::losses {

using framenet::FramePrediction;
using geometry::PolylineElement;
using numerics::Graph;
using numerics::Tensor;
using numerics::Var;

struct LossWeights {
  // Unveiler branch
  double cls_m = 2.0;
  double p2p_m = 5.0;
  double dir_m = 0.005;
  double seg_m = 2.0;  // BEV-segmentation auxiliary standing in for the PV term
  // Frame branch
  double cls_f = 2.0;
  double p2p_f = 5.0;
  double dir_f = 0.005;
  double bev_f = 1.0;
  // Retained for completeness but inert: their losses need perspective
  // imagery, which this artifact does not model.
  double depth_f = 3.0;
  double pvseg_f = 2.0;

  double focal_alpha = 0.25;  // focal gamma is fixed at 2
};

struct Assignment {
  std::vector<int> pred_to_gt;               // [Ni], -1 = no object
  std::vector<std::vector<int>> point_perm;  // [Ni], chosen gt ordering per match
  int n_matched = 0;
};

// Minimum-cost assignment of every row to a distinct column (rows <= cols),
// O(n^2 m) shortest-augmenting-path with potentials. Returns the column per
// row; the total equals the sum of the selected entries.
inline std::pair<std::vector<int>, double> hungarian_solve(
    const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  if (n == 0) return {{}, 0.0};
  const int m = static_cast<int>(cost[0].size());
  require(m >= n, "hungarian_solve: need at least as many columns as rows");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<size_t>(n) + 1, 0.0), v(static_cast<size_t>(m) + 1, 0.0);
  std::vector<int> p(static_cast<size_t>(m) + 1, 0), way(static_cast<size_t>(m) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(m) + 1, kInf);
    std::vector<char> used(static_cast<size_t>(m) + 1, 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      const int i0 = p[static_cast<size_t>(j0)];
      double delta = kInf;
      int j1 = -1;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const double cur = cost[static_cast<size_t>(i0 - 1)][static_cast<size_t>(j - 1)] -
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
      for (int j = 0; j <= m; ++j) {
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
  std::vector<int> row_to_col(static_cast<size_t>(n), -1);
  for (int j = 1; j <= m; ++j)
    if (p[static_cast<size_t>(j)] != 0) row_to_col[static_cast<size_t>(p[static_cast<size_t>(j)] - 1)] = j - 1;
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += cost[static_cast<size_t>(i)][static_cast<size_t>(row_to_col[static_cast<size_t>(i)])];
  return {row_to_col, total};
}

// Elements rescaled from ego-frame meters into the unit square used by the
// regression heads: nx = (x + xe/2)/xe, ny = (y + ye/2)/ye.
inline std::vector<PolylineElement> normalize_elements(const std::vector<PolylineElement>& els,
                                                       const geometry::BevGridSpec& grid) {
  std::vector<PolylineElement> out = els;
  for (auto& el : out)
    for (auto& p : el.points)
      p = {(p.x + 0.5 * grid.x_extent) / grid.x_extent,
           (p.y + 0.5 * grid.y_extent) / grid.y_extent};
  return out;
}

inline geometry::Vec2 denormalize_point(geometry::Vec2 p, const geometry::BevGridSpec& grid) {
  return {p.x * grid.x_extent - 0.5 * grid.x_extent, p.y * grid.y_extent - 0.5 * grid.y_extent};
}

// Plain-value view of one prediction set, used to build the matching cost.
struct MatchInputs {
  std::vector<std::vector<double>> probs;            // [Ni][K+1], softmax of the class logits
  std::vector<std::vector<geometry::Vec2>> points;   // [Ni][Np], normalized
};

template <typename R>
MatchInputs extract_match_inputs(const FramePrediction<R>& pred, int ni, int np) {
  MatchInputs mi;
  const Tensor<R>& logits = pred.cls_logits.val();
  const int64_t kc = logits.dim(1);
  mi.probs.resize(static_cast<size_t>(ni));
  for (int i = 0; i < ni; ++i) {
    double mx = -1e300;
    for (int64_t k = 0; k < kc; ++k)
      mx = std::max(mx, static_cast<double>(logits.data[static_cast<size_t>(i * kc + k)]));
    double denom = 0.0;
    std::vector<double> row(static_cast<size_t>(kc));
    for (int64_t k = 0; k < kc; ++k) {
      row[static_cast<size_t>(k)] =
          std::exp(static_cast<double>(logits.data[static_cast<size_t>(i * kc + k)]) - mx);
      denom += row[static_cast<size_t>(k)];
    }
    for (auto& vv : row) vv /= denom;
    mi.probs[static_cast<size_t>(i)] = std::move(row);
  }
  const Tensor<R>& pts = pred.points.val();
  mi.points.resize(static_cast<size_t>(ni));
  for (int i = 0; i < ni; ++i) {
    mi.points[static_cast<size_t>(i)].resize(static_cast<size_t>(np));
    for (int pp = 0; pp < np; ++pp)
      mi.points[static_cast<size_t>(i)][static_cast<size_t>(pp)] = {
          static_cast<double>(pts.data[static_cast<size_t>((i * np + pp) * 2 + 0)]),
          static_cast<double>(pts.data[static_cast<size_t>((i * np + pp) * 2 + 1)])};
  }
  return mi;
}

// One-to-one assignment minimizing lambda_c * (-p_class) + lambda_p *
// permutation-minimized mean L1, over all injections of ground truth into
// prediction slots.
inline Assignment hungarian_match(const MatchInputs& mi,
                                  const std::vector<PolylineElement>& gts_norm,
                                  const LossWeights& w) {
  const int ni = static_cast<int>(mi.probs.size());
  const int ngt = static_cast<int>(gts_norm.size());
  Assignment out;
  out.pred_to_gt.assign(static_cast<size_t>(ni), -1);
  out.point_perm.resize(static_cast<size_t>(ni));
  if (ngt == 0) return out;
  if (ngt > ni)
    throw CapacityError("hungarian_match: " + std::to_string(ngt) + " ground-truth elements exceed " +
                        std::to_string(ni) + " prediction slots");
  std::vector<std::vector<double>> cost(static_cast<size_t>(ngt),
                                        std::vector<double>(static_cast<size_t>(ni), 0.0));
  std::vector<std::vector<geometry::PermutationMatch>> perms(
      static_cast<size_t>(ngt), std::vector<geometry::PermutationMatch>(static_cast<size_t>(ni)));
  for (int gi = 0; gi < ngt; ++gi) {
    const PolylineElement& gt = gts_norm[static_cast<size_t>(gi)];
    for (int pj = 0; pj < ni; ++pj) {
      PolylineElement pred_el;
      pred_el.category = gt.category;
      pred_el.closed = gt.closed;
      pred_el.points = mi.points[static_cast<size_t>(pj)];
      const auto pm = geometry::min_permutation_point_distance(pred_el, gt);
      perms[static_cast<size_t>(gi)][static_cast<size_t>(pj)] = pm;
      const double cls_score = mi.probs[static_cast<size_t>(pj)][static_cast<size_t>(gt.category)];
      cost[static_cast<size_t>(gi)][static_cast<size_t>(pj)] = w.cls_f * (-cls_score) + w.p2p_f * pm.distance;
    }
  }
  auto [row_to_col, total] = hungarian_solve(cost);
  (void)total;
  for (int gi = 0; gi < ngt; ++gi) {
    const int pj = row_to_col[static_cast<size_t>(gi)];
    out.pred_to_gt[static_cast<size_t>(pj)] = gi;
    out.point_perm[static_cast<size_t>(pj)] = perms[static_cast<size_t>(gi)][static_cast<size_t>(pj)].perm;
  }
  out.n_matched = ngt;
  return out;
}

// Focal classification loss (gamma = 2) over categories plus "no object",
// averaged over all prediction slots.
template <typename R>
Var<R> classification_loss(Graph<R>& g, Var<R> cls_logits, const Assignment& assign,
                           const std::vector<PolylineElement>& gts_norm, const LossWeights& w) {
  const int64_t ni = cls_logits.val().dim(0);
  const int64_t kc = cls_logits.val().dim(1);
  Tensor<R> onehot = Tensor<R>::zeros({ni, kc});
  for (int64_t i = 0; i < ni; ++i) {
    const int gi = assign.pred_to_gt[static_cast<size_t>(i)];
    const int64_t target =
        gi < 0 ? kc - 1 : static_cast<int64_t>(gts_norm[static_cast<size_t>(gi)].category);
    onehot.data[static_cast<size_t>(i * kc + target)] = R(1);
  }
  Var<R> p = softmax_rows(cls_logits);
  Var<R> pt = rowsum(mul(p, g.input(std::move(onehot))));      // [Ni]
  Var<R> one_minus = add_const(neg(pt), R(1));
  Var<R> per_pred = mul(vsquare(one_minus), vlog(pt));
  return scale(mean_all(per_pred), static_cast<R>(-w.focal_alpha));
}

// Mean L1 distance over matched pairs under the assignment's point ordering.
template <typename R>
Var<R> p2p_loss(Graph<R>& g, Var<R> points, const Assignment& assign,
                const std::vector<PolylineElement>& gts_norm, int np) {
  std::vector<Var<R>> pred_rows;
  std::vector<R> target;
  const int ni = static_cast<int>(assign.pred_to_gt.size());
  for (int i = 0; i < ni; ++i) {
    const int gi = assign.pred_to_gt[static_cast<size_t>(i)];
    if (gi < 0) continue;
    pred_rows.push_back(slice_rows(points, static_cast<int64_t>(i) * np, np));
    const auto& gt = gts_norm[static_cast<size_t>(gi)];
    const auto& perm = assign.point_perm[static_cast<size_t>(i)];
    for (int pp = 0; pp < np; ++pp) {
      target.push_back(static_cast<R>(gt.points[static_cast<size_t>(perm[static_cast<size_t>(pp)])].x));
      target.push_back(static_cast<R>(gt.points[static_cast<size_t>(perm[static_cast<size_t>(pp)])].y));
    }
  }
  if (pred_rows.empty()) return g.constant(R(0));
  Var<R> pred = concat_rows(pred_rows);
  Tensor<R> tgt({static_cast<int64_t>(pred_rows.size()) * np, 2}, std::move(target));
  return mean_all(rowsum(vabs(sub(pred, g.input(std::move(tgt))))));
}

// Mean (1 - cosine) between predicted and ground-truth edge directions over
// matched edges; degenerate ground-truth edges are excluded.
template <typename R>
Var<R> direction_loss(Graph<R>& g, Var<R> points, const Assignment& assign,
                      const std::vector<PolylineElement>& gts_norm, int np) {
  std::vector<Var<R>> d_parts;
  std::vector<R> gt_dirs;
  const int ni = static_cast<int>(assign.pred_to_gt.size());
  for (int i = 0; i < ni; ++i) {
    const int gi = assign.pred_to_gt[static_cast<size_t>(i)];
    if (gi < 0) continue;
    const auto& gt = gts_norm[static_cast<size_t>(gi)];
    const auto& perm = assign.point_perm[static_cast<size_t>(i)];
    PolylineElement gt_permuted;
    gt_permuted.category = gt.category;
    gt_permuted.closed = gt.closed;
    for (int pp = 0; pp < np; ++pp)
      gt_permuted.points.push_back(gt.points[static_cast<size_t>(perm[static_cast<size_t>(pp)])]);
    const auto dirs = geometry::edge_directions(gt_permuted);
    const int n_edges = static_cast<int>(dirs.dirs.size());
    Var<R> inst = slice_rows(points, static_cast<int64_t>(i) * np, np);  // [Np, 2]
    for (int e = 0; e < n_edges; ++e) {
      if (dirs.degenerate[static_cast<size_t>(e)]) continue;
      Var<R> p0 = slice_rows(inst, e, 1);
      Var<R> p1 = slice_rows(inst, (e + 1) % np, 1);
      d_parts.push_back(sub(p1, p0));
      gt_dirs.push_back(static_cast<R>(dirs.dirs[static_cast<size_t>(e)].x));
      gt_dirs.push_back(static_cast<R>(dirs.dirs[static_cast<size_t>(e)].y));
    }
  }
  if (d_parts.empty()) return g.constant(R(0));
  Var<R> d = concat_rows(d_parts);  // [E, 2]
  const int64_t n_edges = d.val().dim(0);
  Var<R> norm = vsqrt(add_const(rowsum(vsquare(d)), R(1e-12)));
  Var<R> unit = mul_colvec(d, vrecip(norm));
  Tensor<R> gt({n_edges, 2}, std::move(gt_dirs));
  Var<R> cosine = rowsum(mul(unit, g.input(std::move(gt))));
  return mean_all(add_const(neg(cosine), R(1)));
}

// Pixel-wise binary cross entropy between per-category logits and the
// rasterized ground truth.
template <typename R>
Var<R> bev_seg_loss(Graph<R>& g, Var<R> seg_logits, const geometry::CategoryMasks& gt_masks) {
  const int64_t cells = seg_logits.val().dim(0);
  const int64_t kc = seg_logits.val().dim(1);
  require(kc == geometry::kNumCategories, "bev_seg_loss: category count mismatch");
  require(static_cast<int64_t>(gt_masks[0].size()) == cells, "bev_seg_loss: cell count mismatch");
  Tensor<R> target = Tensor<R>::zeros({cells, kc});
  for (int64_t i = 0; i < cells; ++i)
    for (int64_t k = 0; k < kc; ++k)
      target.data[static_cast<size_t>(i * kc + k)] =
          static_cast<R>(gt_masks[static_cast<size_t>(k)][static_cast<size_t>(i)]);
  return bce_with_logits_mean(seg_logits, target);
}

// --- composite --------------------------------------------------------------

struct LossBreakdown {
  double total = 0.0;
  std::map<std::string, double> terms;
};

template <typename R>
struct BranchWeights {
  double cls, p2p, dir;
};

// One-to-one set loss for a single prediction set against one frame's
// normalized ground truth. Matching is recomputed per call (per layer).
template <typename R>
Var<R> set_loss(Graph<R>& g, const FramePrediction<R>& pred,
                const std::vector<PolylineElement>& gts_norm, const LossWeights& w,
                const BranchWeights<R>& bw, int ni, int np, const std::string& prefix,
                LossBreakdown* breakdown) {
  const MatchInputs mi = extract_match_inputs(pred, ni, np);
  const Assignment assign = hungarian_match(mi, gts_norm, w);
  Var<R> cls = classification_loss(g, pred.cls_logits, assign, gts_norm, w);
  Var<R> p2p = p2p_loss(g, pred.points, assign, gts_norm, np);
  Var<R> dir = direction_loss(g, pred.points, assign, gts_norm, np);
  if (breakdown != nullptr) {
    breakdown->terms[prefix + "/cls"] += static_cast<double>(cls.val().data[0]);
    breakdown->terms[prefix + "/p2p"] += static_cast<double>(p2p.val().data[0]);
    breakdown->terms[prefix + "/dir"] += static_cast<double>(dir.val().data[0]);
  }
  return add(add(scale(cls, static_cast<R>(bw.cls)), scale(p2p, static_cast<R>(bw.p2p))),
             scale(dir, static_cast<R>(bw.dir)));
}

template <typename R>
struct TotalLossInputs {
  // Frame branch: [frame][decoder layer] predictions + per-frame seg logits.
  std::vector<std::vector<FramePrediction<R>>> frame_preds;
  std::vector<Var<R>> frame_seg;
  // Unveiler branch: [layer][frame] predictions + per-layer per-frame seg.
  std::vector<std::vector<FramePrediction<R>>> clip_preds;
  std::vector<std::vector<Var<R>>> clip_seg;
  // Ground truth per frame.
  const std::vector<std::vector<PolylineElement>>* gts_norm = nullptr;
  const std::vector<geometry::CategoryMasks>* gt_masks = nullptr;
};

// Weighted sum of the frame branch (every decoder layer + BEV-seg auxiliary)
// and the unveiler branch (every layer, deep supervision), averaged over the
// clip's frames.
template <typename R>
Var<R> total_loss(Graph<R>& g, const TotalLossInputs<R>& in, const LossWeights& w, int ni, int np,
                  LossBreakdown* breakdown) {
  require(in.gts_norm != nullptr && in.gt_masks != nullptr, "total_loss: ground truth missing");
  const int t_frames = static_cast<int>(in.frame_preds.size());
  require(t_frames >= 1, "total_loss: no frames");
  Var<R> acc = g.constant(R(0));
  for (int t = 0; t < t_frames; ++t) {
    const auto& gts = (*in.gts_norm)[static_cast<size_t>(t)];
    for (const auto& pred : in.frame_preds[static_cast<size_t>(t)])
      acc = add(acc, set_loss(g, pred, gts, w,
                              BranchWeights<R>{w.cls_f, w.p2p_f, w.dir_f}, ni, np, "frame",
                              breakdown));
    if (t < static_cast<int>(in.frame_seg.size()) && in.frame_seg[static_cast<size_t>(t)].valid()) {
      Var<R> seg = bev_seg_loss(g, in.frame_seg[static_cast<size_t>(t)], (*in.gt_masks)[static_cast<size_t>(t)]);
      if (breakdown != nullptr) breakdown->terms["frame/bevseg"] += static_cast<double>(seg.val().data[0]);
      acc = add(acc, scale(seg, static_cast<R>(w.bev_f)));
    }
  }
  for (const auto& layer : in.clip_preds) {
    require(static_cast<int>(layer.size()) == t_frames, "total_loss: clip layer frame mismatch");
    for (int t = 0; t < t_frames; ++t)
      acc = add(acc, set_loss(g, layer[static_cast<size_t>(t)], (*in.gts_norm)[static_cast<size_t>(t)], w,
                              BranchWeights<R>{w.cls_m, w.p2p_m, w.dir_m}, ni, np, "clip",
                              breakdown));
  }
  for (const auto& layer_seg : in.clip_seg) {
    for (int t = 0; t < t_frames; ++t) {
      Var<R> seg = bev_seg_loss(g, layer_seg[static_cast<size_t>(t)], (*in.gt_masks)[static_cast<size_t>(t)]);
      if (breakdown != nullptr) breakdown->terms["clip/bevseg"] += static_cast<double>(seg.val().data[0]);
      acc = add(acc, scale(seg, static_cast<R>(w.seg_m)));
    }
  }
  Var<R> total = scale(acc, static_cast<R>(1.0 / t_frames));
  if (breakdown != nullptr) {
    breakdown->total = static_cast<double>(total.val().data[0]);
    for (auto& kv : breakdown->terms) kv.second /= t_frames;
  }
  return total;
}

}  // namespace mapclip::losses
