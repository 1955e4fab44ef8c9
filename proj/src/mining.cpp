#include "mining.hpp"

#include <array>
#include <cmath>
#include <limits>

#include "error.hpp"

namespace dafe {

void Margins::validate() const {
  if (!(alpha1 > alpha2 && alpha2 > 0.0))
    raise(ErrorCode::parameter, "margins must satisfy alpha1 > alpha2 > 0");
}

namespace {

double sq_dist(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

Quadruplet mine_quadruplet(const Tensor& scores, const BatchLabels& labels) {
  const std::size_t n = labels.size();
  if (scores.rank() != 2 || scores.dim(0) != n || scores.dim(1) != n)
    raise(ErrorCode::dimension, "mine_quadruplet: score matrix must be [B,B]");

  // Most dissimilar positive pair; row-major scan gives the lowest-flat-index
  // tie break.
  bool found = false;
  std::size_t bi = 0, bj = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || labels.labels[i] != labels.labels[j]) continue;
      if (!found || scores.at(i, j) < best) {
        found = true;
        best = scores.at(i, j);
        bi = i;
        bj = j;
      }
    }
  if (!found) raise(ErrorCode::data, "mine_quadruplet: no positive pair in batch");

  Quadruplet q;
  q.i = bi;
  q.j = bj;
  q.s_ij = best;

  // Hardest negative of the anchor.
  bool has_neg = false;
  double best_neg = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < n; ++k) {
    if (labels.labels[k] == labels.labels[bi]) continue;
    if (!has_neg || scores.at(bi, k) > best_neg) {
      has_neg = true;
      best_neg = scores.at(bi, k);
      q.k = k;
    }
  }
  if (!has_neg) raise(ErrorCode::data, "mine_quadruplet: anchor has no negative in batch");
  q.s_ik = best_neg;

  // Local hard positive: least similar positive still above the hardest
  // negative; unfiltered argmin if none qualifies.
  bool has_l = false;
  double best_l = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < n; ++l) {
    if (l == bi || labels.labels[l] != labels.labels[bi]) continue;
    if (scores.at(bi, l) <= q.s_ik) continue;
    if (!has_l || scores.at(bi, l) < best_l) {
      has_l = true;
      best_l = scores.at(bi, l);
      q.l = l;
    }
  }
  if (!has_l) {
    q.fallback = true;
    double best_any = std::numeric_limits<double>::infinity();
    bool first = true;
    for (std::size_t l = 0; l < n; ++l) {
      if (l == bi || labels.labels[l] != labels.labels[bi]) continue;
      if (first || scores.at(bi, l) < best_any) {
        first = false;
        best_any = scores.at(bi, l);
        q.l = l;
      }
    }
    best_l = best_any;
  }
  q.s_il = best_l;
  return q;
}

double quadruplet_loss(const Quadruplet& q, const Margins& m) {
  m.validate();
  return std::max(0.0, m.alpha1 + q.s_ik - q.s_ij) +
         std::max(0.0, m.alpha2 + q.s_ik - q.s_il);
}

QuadrupletScoreGrads quadruplet_loss_grad(const Quadruplet& q, const Margins& m) {
  m.validate();
  QuadrupletScoreGrads g;
  if (m.alpha1 + q.s_ik - q.s_ij > 0.0) {
    g.d_s_ik += 1.0;
    g.d_s_ij -= 1.0;
  }
  if (m.alpha2 + q.s_ik - q.s_il > 0.0) {
    g.d_s_ik += 1.0;
    g.d_s_il -= 1.0;
  }
  return g;
}

double triplet_loss(const std::vector<std::array<std::size_t, 3>>& triplets,
                    double alpha, const std::vector<Tensor>& features) {
  if (triplets.empty()) raise(ErrorCode::data, "triplet_loss: no triplets");
  double total = 0.0;
  for (const auto& [i, j, k] : triplets) {
    const double pos = sq_dist(features[i], features[j]);
    const double neg = sq_dist(features[i], features[k]);
    total += std::max(0.0, pos - neg + alpha);
  }
  return total / static_cast<double>(triplets.size());
}

double quadruplet_as_triplets(const Quadruplet& q, double alpha,
                              const std::vector<Tensor>& features) {
  const double d_ik = sq_dist(features[q.i], features[q.k]);
  const double d_il = sq_dist(features[q.i], features[q.l]);
  const double d_ij = sq_dist(features[q.i], features[q.j]);
  return std::max(0.0, d_il + d_ij - 2.0 * d_ik + 2.0 * alpha);
}

NcaResult nca_loss(const std::vector<Tensor>& features, const BatchLabels& labels) {
  const std::size_t n = features.size();
  if (n != labels.size()) raise(ErrorCode::dimension, "nca_loss: label count mismatch");
  bool multi_class = false;
  for (std::size_t i = 1; i < n; ++i)
    if (labels.labels[i] != labels.labels[0]) multi_class = true;
  if (!multi_class) raise(ErrorCode::data, "nca_loss: need at least 2 classes");

  NcaResult out;
  std::size_t counted = 0;
  for (std::size_t a = 0; a < n; ++a) {
    double num = 0.0, den = 0.0;
    bool has_partner = false;
    for (std::size_t b = 0; b < n; ++b) {
      if (b == a) continue;
      const double w = std::exp(-sq_dist(features[a], features[b]));
      den += w;
      if (labels.labels[b] == labels.labels[a]) {
        num += w;
        has_partner = true;
      }
    }
    if (!has_partner) {
      ++out.skipped;
      continue;
    }
    out.loss += -std::log(num / den);
    ++counted;
  }
  if (counted > 0) out.loss /= static_cast<double>(counted);
  return out;
}

}  // namespace dafe
