#pragma once

#include <cstddef>

#include "rng.hpp"
#include "tensor.hpp"

namespace dafe {

/// Learned similarity metric over a feature pair: the absolute-difference
/// vector e and mean vector u each pass through a linear layer, ReLU and
/// l2-normalization, are concatenated, and map through one more ReLU layer
/// to a scalar score.
struct SimilarityHead {
  std::size_t dim = 0;  // d
  Tensor w_e, w_u;      // [d,d]
  Tensor b_e, b_u;      // [d]
  Tensor w_c;           // [d,2d], row i maps the concatenation to unit i
  Tensor b_c;           // [d]
  Tensor w_s;           // [d]
  double b_s = 0.0;

  static SimilarityHead create(std::size_t dim);
  /// Zero biases, weights from a zero-mean normal with the given stddev.
  void init_weights(SeededRng& rng, double stddev);

  std::size_t parameter_count() const;
};

/// Intermediate values of one scoring pass, kept for the backward pass.
struct PairFeatures {
  Tensor e, u;            // |f_i - f_j|, (f_i + f_j) / 2
  Tensor ze, zu;          // pre-activations
  Tensor ae, au;          // post-ReLU
  Tensor ebar, ubar;      // post-normalization
  bool e_degenerate = false, u_degenerate = false;
  Tensor zc, c;           // combined layer pre/post activation
  double score = 0.0;
};

/// e/u decomposition of a pair of unit-norm features.
void pair_features(const Tensor& f_i, const Tensor& f_j, Tensor& e, Tensor& u);

PairFeatures similarity_forward(const SimilarityHead& head, const Tensor& f_i,
                                const Tensor& f_j);

double similarity(const SimilarityHead& head, const Tensor& f_i, const Tensor& f_j);

struct HeadGradients {
  Tensor w_e, w_u, b_e, b_u, w_c, b_c, w_s;
  double b_s = 0.0;
  Tensor f_i, f_j;  // gradients with respect to the input features

  static HeadGradients zeros(const SimilarityHead& head);
  void accumulate_scaled(const HeadGradients& other, double scale);
};

/// Exact reverse-mode derivatives of upstream * S with respect to every head
/// parameter and both features. Subgradient conventions: sign(0) = 0,
/// ReLU'(0) = 0, and the normalization Jacobian is zero on degenerate input.
HeadGradients similarity_grad(const SimilarityHead& head, const Tensor& f_i,
                              const Tensor& f_j, double upstream = 1.0);

/// Backward pass reusing a stored forward tape (avoids recomputing the
/// forward when the score is already known).
HeadGradients similarity_backward(const SimilarityHead& head, const Tensor& f_i,
                                  const Tensor& f_j, const PairFeatures& fwd,
                                  double upstream);

}  // namespace dafe
