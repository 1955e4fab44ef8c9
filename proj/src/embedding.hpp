#pragma once

#include <cstddef>
#include <vector>

#include "crbm.hpp"
#include "preproc.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace dafe {

/// Embedding pipeline: image -> visible input stack -> one CDBN (or one per
/// representation) -> optional PCA per stack -> concatenation -> unit norm.
struct EmbeddingSettings {
  InputStackOptions input;
  bool per_representation = false;
  std::vector<std::size_t> filters;
  std::vector<std::size_t> filter_sizes;
  std::vector<std::size_t> pool_sizes;
  double init_stddev = 0.1;
  FeatureMode mode = FeatureMode::third_layer;
  bool pca_enabled = false;
  std::size_t pca_components = 500;
};

struct EmbeddingModel {
  EmbeddingSettings settings;
  std::vector<CdbnStack> stacks;  // one, or one per representation
  std::vector<PcaModel> pcas;     // aligned with stacks when PCA is on
  bool pca_ready = false;

  static EmbeddingModel create(const EmbeddingSettings& settings, SeededRng& rng);

  std::size_t stack_count() const { return stacks.size(); }
  std::size_t layer_count() const { return settings.filters.size(); }

  /// Per-stack channel ranges of the full input stack.
  struct Slice {
    std::size_t begin = 0, count = 0;
  };
  std::vector<Slice> input_slices() const;

  /// Builds the full visible stack for an image, then splits per stack.
  std::vector<Tensor> stack_inputs(const Tensor& image) const;

  /// Deterministic features for one image (mean-field pass, PCA, concat,
  /// l2 normalization).
  Tensor features(const Tensor& image) const;

  /// Dimension of features(); accounts for fitted PCA models.
  std::size_t feature_dim() const;
};

/// Everything the trainable suffix needs from the frozen layers below it.
struct FrozenPrefix {
  std::vector<std::vector<Tensor>> pools;  // per stack, pooled maps of frozen layers
  std::vector<Tensor> suffix_input;        // per stack, first trainable layer's input
};

FrozenPrefix frozen_prefix(const EmbeddingModel& model, const Tensor& image,
                           std::size_t trainable_layers);

/// Forward pass of the trainable suffix with the tape kept for backward.
struct EmbeddingTape {
  std::vector<std::vector<LayerActivation>> acts;  // per stack, suffix layers only
  std::vector<Tensor> raw;                         // per-stack flat features pre-PCA
  std::vector<Tensor> projected;                   // post-PCA (= raw when disabled)
  Tensor concat;                                   // before normalization
  Tensor feature;                                  // unit-norm output
  bool degenerate = false;
};

EmbeddingTape suffix_forward(const EmbeddingModel& model, const FrozenPrefix& prefix,
                             std::size_t trainable_layers);

/// Gradients for the trainable suffix, indexed [stack][suffix layer].
struct EmbeddingGrads {
  std::vector<std::vector<Tensor>> dfilters;
  std::vector<std::vector<std::vector<double>>> dhidden_bias;

  static EmbeddingGrads zeros(const EmbeddingModel& model, std::size_t trainable_layers);
};

/// Reverse pass from d(loss)/d(feature) into filter and hidden-bias
/// gradients of the trainable layers (accumulated into `grads`).
void suffix_backward(const EmbeddingModel& model, const FrozenPrefix& prefix,
                     const EmbeddingTape& tape, const Tensor& dfeature,
                     std::size_t trainable_layers, EmbeddingGrads& grads);

}  // namespace dafe
