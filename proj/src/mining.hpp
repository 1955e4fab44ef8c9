#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "tensor.hpp"

namespace dafe {

struct BatchLabels {
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

struct Margins {
  double alpha1 = 1.0;
  double alpha2 = 0.5;
  void validate() const;  // alpha1 > alpha2 > 0
};

/// Mined hard quadruplet: anchor i, most-dissimilar positive j, local hard
/// positive l, hardest negative k, plus the three scores the loss consumes.
/// fallback marks the case where no positive beat the hardest negative and
/// l fell back to the anchor's most-dissimilar positive.
struct Quadruplet {
  std::size_t i = 0, j = 0, l = 0, k = 0;
  double s_ij = 0.0, s_ik = 0.0, s_il = 0.0;
  bool fallback = false;
};

/// Three-step hard-quadruplet selection over a symmetric in-batch score
/// matrix:
///   (i,j) = argmin over positive pairs of S,
///   k     = argmax over the anchor's negatives of S(i,k),
///   l     = argmin over the anchor's positives with S(i,l) > S(i,k),
/// falling back to the unfiltered argmin when the filter is empty.
/// Ties break toward the lowest flat index.
Quadruplet mine_quadruplet(const Tensor& scores, const BatchLabels& labels);

/// Two-hinge margin objective:
/// max(0, a1 + S_ik - S_ij) + max(0, a2 + S_ik - S_il).
double quadruplet_loss(const Quadruplet& q, const Margins& m);

/// Subgradients of the loss with respect to the three scores.
struct QuadrupletScoreGrads {
  double d_s_ij = 0.0, d_s_ik = 0.0, d_s_il = 0.0;
};
QuadrupletScoreGrads quadruplet_loss_grad(const Quadruplet& q, const Margins& m);

/// Mean hinge over (anchor, positive, negative) index triplets on squared
/// Euclidean embedding distances: max(0, ||f_i-f_j||^2 - ||f_i-f_k||^2 + a),
/// demanding the mismatched distance exceed the matched one by the margin.
double triplet_loss(const std::vector<std::array<std::size_t, 3>>& triplets,
                    double alpha, const std::vector<Tensor>& features);

/// Distance form of the quadruplet as a single hinge over the sum of its two
/// triplet terms: max(0, ||f_i-f_l||^2 + ||f_i-f_j||^2 - 2||f_i-f_k||^2 + 2a).
double quadruplet_as_triplets(const Quadruplet& q, double alpha,
                              const std::vector<Tensor>& features);

struct NcaResult {
  double loss = 0.0;
  std::size_t skipped = 0;  // samples without a same-class partner
};

/// Soft-neighbor objective with the self-pair excluded from both sums.
NcaResult nca_loss(const std::vector<Tensor>& features, const BatchLabels& labels);

}  // namespace dafe
