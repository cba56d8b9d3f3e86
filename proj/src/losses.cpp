// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace fusetrack {

namespace {

void check_box(const BoundingBox& b, const char* what) {
  if (!(b.w > 0.0) || !(b.h > 0.0)) throw DomainError(std::string(what) + ": box must have positive width and height");
}

struct FocalTerms {
  double loss = 0.0;
  std::size_t peaks = 0;
};

// Loss and d(loss)/dp for one sample; gradient is unnormalized.
FocalTerms focal_terms(std::span<const double> p, std::span<const double> t, double* grad) {
  FocalTerms out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = p[i];
    if (!(pi > 0.0 && pi < 1.0)) throw DomainError("focal_loss: predictions must lie in (0, 1)");
    if (t[i] == 1.0) {
      ++out.peaks;
      out.loss -= std::pow(1.0 - pi, kFocalAlpha) * std::log(pi);
      if (grad) grad[i] = 2.0 * (1.0 - pi) * std::log(pi) - (1.0 - pi) * (1.0 - pi) / pi;
    } else {
      const double neg_w = std::pow(1.0 - t[i], kFocalBeta);
      out.loss -= neg_w * std::pow(pi, kFocalAlpha) * std::log(1.0 - pi);
      if (grad) grad[i] = -neg_w * (2.0 * pi * std::log(1.0 - pi) - pi * pi / (1.0 - pi));
    }
  }
  return out;
}

// GIoU loss and its gradient with respect to (cx, cy, w, h) of `p`.
double giou_loss_grad(const BoundingBox& p, const BoundingBox& g, std::array<double, 4>* grad) {
  const double px0 = p.x0(), px1 = p.x1(), py0 = p.y0(), py1 = p.y1();
  const double gx0 = g.x0(), gx1 = g.x1(), gy0 = g.y0(), gy1 = g.y1();
  const double iw_raw = std::min(px1, gx1) - std::max(px0, gx0);
  const double ih_raw = std::min(py1, gy1) - std::max(py0, gy0);
  const double iw = std::max(0.0, iw_raw), ih = std::max(0.0, ih_raw);
  const double inter = iw * ih;
  const double ap = (px1 - px0) * (py1 - py0), ag = (gx1 - gx0) * (gy1 - gy0);
  const double uni = ap + ag - inter;
  const double hw = std::max(px1, gx1) - std::min(px0, gx0);
  const double hh = std::max(py1, gy1) - std::min(py0, gy0);
  const double hull = hw * hh;
  const double loss = 2.0 - inter / uni - uni / hull;
  if (!grad) return loss;

  // Partials with respect to the pred corners x0, x1, y0, y1.
  const double diw_dx0 = iw_raw > 0 && px0 > gx0 ? -1.0 : 0.0;
  const double diw_dx1 = iw_raw > 0 && px1 < gx1 ? 1.0 : 0.0;
  const double dih_dy0 = ih_raw > 0 && py0 > gy0 ? -1.0 : 0.0;
  const double dih_dy1 = ih_raw > 0 && py1 < gy1 ? 1.0 : 0.0;
  const double dhw_dx0 = px0 < gx0 ? -1.0 : 0.0;
  const double dhw_dx1 = px1 > gx1 ? 1.0 : 0.0;
  const double dhh_dy0 = py0 < gy0 ? -1.0 : 0.0;
  const double dhh_dy1 = py1 > gy1 ? 1.0 : 0.0;
  const double pw = px1 - px0, ph = py1 - py0;

  auto dloss = [&](double d_inter, double d_ap, double d_hull) {
    const double d_uni = d_ap - d_inter;
    return -(d_inter * uni - inter * d_uni) / (uni * uni) - (d_uni * hull - uni * d_hull) / (hull * hull);
  };
  const double g_x0 = dloss(diw_dx0 * ih, -ph, dhw_dx0 * hh);
  const double g_x1 = dloss(diw_dx1 * ih, ph, dhw_dx1 * hh);
  const double g_y0 = dloss(dih_dy0 * iw, -pw, dhh_dy0 * hw);
  const double g_y1 = dloss(dih_dy1 * iw, pw, dhh_dy1 * hw);
  (*grad)[0] = g_x0 + g_x1;
  (*grad)[1] = g_y0 + g_y1;
  (*grad)[2] = 0.5 * (g_x1 - g_x0);
  (*grad)[3] = 0.5 * (g_y1 - g_y0);
  return loss;
}

BoundingBox box_row(std::span<const double> d, std::size_t b) { return {d[b * 4], d[b * 4 + 1], d[b * 4 + 2], d[b * 4 + 3]}; }

void check_box_tensor(const Tensor& boxes, std::size_t n, const char* op) {
  if (boxes.ndim() != 2 || boxes.cols() != 4 || boxes.rows() != n) {
    throw ShapeError(std::string(op) + ": expected [" + std::to_string(n) + ", 4] boxes, got " + shape_str(boxes.shape()));
  }
}

}  // namespace

std::pair<std::size_t, std::size_t> center_cell(const BoundingBox& box, std::size_t side) {
  const double s = static_cast<double>(side);
  auto idx = [&](double v) {
    const double f = std::floor(v * s);
    return static_cast<std::size_t>(std::clamp(f, 0.0, s - 1.0));
  };
  return {idx(box.cy), idx(box.cx)};
}

double gaussian_radius(double height, double width, double min_overlap) {
  const double b1 = height + width;
  const double c1 = width * height * (1 - min_overlap) / (1 + min_overlap);
  const double r1 = (b1 + std::sqrt(b1 * b1 - 4 * c1)) / 2;
  const double b2 = 2 * (height + width);
  const double c2 = (1 - min_overlap) * width * height;
  const double r2 = (b2 + std::sqrt(b2 * b2 - 16 * c2)) / 2;
  const double a3 = 4 * min_overlap;
  const double b3 = -2 * min_overlap * (height + width);
  const double c3 = (min_overlap - 1) * width * height;
  const double r3 = (b3 + std::sqrt(b3 * b3 - 4 * a3 * c3)) / 2;
  return std::max(0.0, std::min({r1, r2, r3}));
}

Tensor gaussian_target(const BoundingBox& gt, std::size_t side) {
  check_box(gt, "gaussian_target");
  const double s = static_cast<double>(side);
  const auto [ci, cj] = center_cell(gt, side);
  const double radius = gaussian_radius(gt.h * s, gt.w * s);
  const double sigma = (2.0 * radius + 1.0) / 6.0;
  std::vector<double> out(side * side);
  for (std::size_t i = 0; i < side; ++i)
    for (std::size_t j = 0; j < side; ++j) {
      const double di = static_cast<double>(i) - static_cast<double>(ci);
      const double dj = static_cast<double>(j) - static_cast<double>(cj);
      out[i * side + j] = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
    }
  out[ci * side + cj] = 1.0;
  return Tensor::from({side, side}, std::move(out));
}

double focal_loss(const Tensor& pred, const Tensor& target) {
  if (pred.size() != target.size()) throw ShapeError("focal_loss: prediction and target sizes differ");
  const auto terms = focal_terms(pred.data(), target.data(), nullptr);
  return terms.loss / static_cast<double>(std::max<std::size_t>(1, terms.peaks));
}

double l1_box_loss(const BoundingBox& pred, const BoundingBox& gt) {
  return (std::abs(pred.cx - gt.cx) + std::abs(pred.cy - gt.cy) + std::abs(pred.w - gt.w) + std::abs(pred.h - gt.h)) / 4.0;
}

double giou(const BoundingBox& a, const BoundingBox& b) { return 1.0 - giou_loss(a, b); }

double giou_loss(const BoundingBox& pred, const BoundingBox& gt) {
  check_box(pred, "giou_loss");
  check_box(gt, "giou_loss");
  return giou_loss_grad(pred, gt, nullptr);
}

HeadLossParts head_loss(const PredictionMaps& maps, const BoundingBox& gt, const LossWeights& weights) {
  if (maps.batch != 1) throw ContractError("head_loss: expects single-sample maps");
  const auto s = maps.side;
  HeadLossParts parts;
  parts.cls = focal_loss(maps.score, gaussian_target(gt, s));
  const auto [row, col] = center_cell(gt, s);
  const auto cell = row * s + col;
  const double sd = static_cast<double>(s);
  const BoundingBox pred{(static_cast<double>(col) + maps.offset[cell * 2]) / sd,
                         (static_cast<double>(row) + maps.offset[cell * 2 + 1]) / sd, maps.size[cell * 2],
                         maps.size[cell * 2 + 1]};
  parts.giou = giou_loss(pred, gt);
  parts.l1 = l1_box_loss(pred, gt);
  parts.total = parts.cls + weights.giou * parts.giou + weights.l1 * parts.l1;
  return parts;
}

TotalLoss total_loss(double loss_rgb, double loss_t, double r_rgb, double r_t) {
  if (!std::isfinite(loss_rgb) || !std::isfinite(loss_t)) throw DomainError("total_loss: head losses must be finite");
  const auto [l_rgb, l_t] = reliability_weights(r_rgb, r_t);
  return {l_rgb * loss_rgb + l_t * loss_t, l_rgb, l_t};
}

// --- Recorded forms ----------------------------------------------------------

Tensor focal_loss_op(const Tensor& score, const std::vector<Tensor>& targets) {
  const auto batch = targets.size();
  if (batch == 0 || score.size() % batch != 0) throw ShapeError("focal_loss_op: score does not split into the batch");
  const auto n = score.size() / batch;
  std::vector<double> out(batch), grad(score.size()), norm(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    if (targets[b].size() != n) throw ShapeError("focal_loss_op: target size mismatch");
    const auto terms = focal_terms(score.data().subspan(b * n, n), targets[b].data(), grad.data() + b * n);
    norm[b] = 1.0 / static_cast<double>(std::max<std::size_t>(1, terms.peaks));
    out[b] = terms.loss * norm[b];
  }
  return make_result({batch, 1}, std::move(out), {score},
                     [score, n, grad = std::move(grad), norm = std::move(norm)](std::span<const double> g) {
                       auto gs = score.grad_buffer();
                       for (std::size_t b = 0; b < norm.size(); ++b)
                         for (std::size_t i = 0; i < n; ++i) gs[b * n + i] += g[b] * norm[b] * grad[b * n + i];
                     },
                     "focal_loss");
}

Tensor giou_loss_op(const Tensor& boxes, const std::vector<BoundingBox>& gt) {
  check_box_tensor(boxes, gt.size(), "giou_loss_op");
  std::vector<double> out(gt.size()), grad(gt.size() * 4);
  for (std::size_t b = 0; b < gt.size(); ++b) {
    const auto p = box_row(boxes.data(), b);
    check_box(p, "giou_loss_op");
    check_box(gt[b], "giou_loss_op");
    std::array<double, 4> gb{};
    out[b] = giou_loss_grad(p, gt[b], &gb);
    std::copy(gb.begin(), gb.end(), grad.begin() + b * 4);
  }
  return make_result({gt.size(), 1}, std::move(out), {boxes},
                     [boxes, grad = std::move(grad)](std::span<const double> g) {
                       auto gx = boxes.grad_buffer();
                       for (std::size_t i = 0; i < grad.size(); ++i) gx[i] += g[i / 4] * grad[i];
                     },
                     "giou_loss");
}

Tensor l1_loss_op(const Tensor& boxes, const std::vector<BoundingBox>& gt) {
  check_box_tensor(boxes, gt.size(), "l1_loss_op");
  std::vector<double> out(gt.size()), sign(gt.size() * 4);
  auto d = boxes.data();
  for (std::size_t b = 0; b < gt.size(); ++b) {
    const double ref[4] = {gt[b].cx, gt[b].cy, gt[b].w, gt[b].h};
    for (std::size_t k = 0; k < 4; ++k) {
      const double diff = d[b * 4 + k] - ref[k];
      out[b] += std::abs(diff) / 4.0;
      sign[b * 4 + k] = diff > 0 ? 0.25 : (diff < 0 ? -0.25 : 0.0);
    }
  }
  return make_result({gt.size(), 1}, std::move(out), {boxes},
                     [boxes, sign = std::move(sign)](std::span<const double> g) {
                       auto gx = boxes.grad_buffer();
                       for (std::size_t i = 0; i < sign.size(); ++i) gx[i] += g[i / 4] * sign[i];
                     },
                     "l1_loss");
}

HeadLossTensors head_loss_op(const PredictionMaps& maps, const std::vector<BoundingBox>& gt,
                             const LossWeights& weights) {
  if (gt.size() != maps.batch) throw ShapeError("head_loss_op: one ground-truth box per sample expected");
  std::vector<Tensor> targets;
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  for (const auto& box : gt) {
    targets.push_back(gaussian_target(box, maps.side));
    cells.push_back(center_cell(box, maps.side));
  }
  Tensor cls = focal_loss_op(maps.score, targets);
  Tensor boxes = boxes_at_cells(maps, cells);
  Tensor g = giou_loss_op(boxes, gt);
  Tensor l1 = l1_loss_op(boxes, gt);
  Tensor per_sample = add(add(cls, scale(g, weights.giou)), scale(l1, weights.l1));

  auto avg = [](const Tensor& t) {
    double s = 0.0;
    for (double v : t.data()) s += v;
    return s / static_cast<double>(t.size());
  };
  HeadLossParts parts{avg(cls), avg(g), avg(l1), avg(per_sample)};
  return {per_sample, parts};
}

TotalLossTensors total_loss_op(const Tensor& loss_rgb, const Tensor& loss_t, const Tensor& r_rgb, const Tensor& r_t) {
  const auto batch = loss_rgb.rows();
  if (loss_t.rows() != batch || r_rgb.rows() != batch || r_t.rows() != batch) {
    throw ShapeError("total_loss_op: inputs disagree on batch size");
  }
  Tensor lambdas = softmax_rows(concat_cols({r_rgb, r_t}));
  Tensor total = scale(sum(mul(lambdas, concat_cols({loss_rgb, loss_t}))), 1.0 / static_cast<double>(batch));
  double lr = 0.0, lt = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    lr += lambdas.at(b, 0);
    lt += lambdas.at(b, 1);
  }
  return {total, lr / static_cast<double>(batch), lt / static_cast<double>(batch)};
}

}  // namespace fusetrack
