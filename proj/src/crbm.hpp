#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace dafe {

/// One convolutional RBM with probabilistic max-pooling: K filters of size
/// NW x NW over C_in input channels, per-filter hidden bias, a scalar bias
/// shared by all visible units, and a C x C pooling block.
struct CrbmLayer {
  std::size_t in_channels = 1;
  std::size_t num_filters = 1;
  std::size_t filter_size = 1;
  std::size_t pool_size = 1;
  Tensor filters;                   // [K, C_in, NW, NW]
  std::vector<double> hidden_bias;  // [K]
  double visible_bias = 0.0;

  static CrbmLayer create(std::size_t in_channels, std::size_t num_filters,
                          std::size_t filter_size, std::size_t pool_size);

  /// Filters from a zero-mean normal with the given standard deviation,
  /// biases zero.
  void init_weights(SeededRng& rng, double stddev);

  Tensor filter(std::size_t k, std::size_t c) const;  // [NW,NW] copy
};

struct LayerGeometry {
  std::size_t visible;         // NV
  std::size_t detect;          // NH = NV - NW + 1
  std::size_t detect_cropped;  // NH rounded down to a pool multiple
  std::size_t pooled;          // detect_cropped / C
};

LayerGeometry layer_geometry(const CrbmLayer& layer, std::size_t visible);

/// Detection and pooling probabilities over a block-softmax layer. The pool
/// entry of each block is the literal sum of its detection entries, so the
/// p = sum(h) identity holds exactly.
struct BlockActivation {
  Tensor detect;  // [K, NH, NH]
  Tensor pool;    // [K, NH/C, NH/C]
  std::size_t pool_size = 1;
};

/// Bottom-up signal I(h^k) = b_k + sum_c conv_valid(v_c, flip180(W_kc)).
/// Output is the uncropped [K, NH, NH] map.
Tensor bottom_up(const Tensor& v, const CrbmLayer& layer);

/// Per-block softmax over the C*C on-states plus the off-state (Eq. 6/7
/// form), stabilized by subtracting each block's max signal. The detection
/// map must already be a multiple of the pool size.
BlockActivation block_probs(const Tensor& signal, std::size_t pool);

/// Same softmax with a per-block top-down term added to every on-state
/// logit; pool_signal is [K, NH/C, NH/C]. Zero top-down reduces to
/// block_probs.
BlockActivation augmented_block_probs(const Tensor& signal, const Tensor& pool_signal,
                                      std::size_t pool);

/// Draws at most one active unit per block, categorically over the block's
/// on-states and the off-state.
Tensor sample_block(const BlockActivation& probs, SeededRng& rng);

/// Gaussian mean of the visible layer given hidden states:
/// mean_c = c_bias + sum_k conv_full(h_k, W_kc). Hidden maps must be at the
/// full [K, NH, NH] size (pad cropped maps with zeros first).
Tensor visible_conditional(const Tensor& h, const CrbmLayer& layer);

/// Eq. 5 energy: quadratic visible term, visible bias, filter interaction,
/// hidden bias. h must satisfy the at-most-one-per-block constraint (with
/// cropped trailing units zero) or a contract error is raised.
double energy(const Tensor& v, const Tensor& h, const CrbmLayer& layer);

/// Pooling samples p_alpha = sum of the block's hidden units.
Tensor pool_from_hidden(const Tensor& h, std::size_t pool);

struct CdHyper {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.002;
  double sparsity_target = 0.01;
  double sparsity_weight = 1.0;
};

struct CdTrainState {
  Tensor vel_filters;
  std::vector<double> vel_hidden_bias;
  double vel_visible_bias = 0.0;
  bool ready = false;
};

struct CdStats {
  double recon_mse = 0.0;
  double mean_detect_prob = 0.0;
};

/// One CD-1 update on a batch of visible tensors. Positive statistics come
/// from the data's block probabilities, the negative phase reconstructs via
/// the Gaussian mean of sampled hiddens and re-derives probabilities.
CdStats cd_update(CrbmLayer& layer, CdTrainState& state,
                  const std::vector<Tensor>& batch, const CdHyper& hyper,
                  SeededRng& rng);

/// Greedily stacked CRBMs; layer l+1 consumes layer l's pooling
/// probabilities.
struct CdbnStack {
  std::vector<CrbmLayer> layers;
  bool initialized = false;  // weights allocated
  bool pretrained = false;

  /// Per-layer bridge weights for block Gibbs sampling: the top-down signal
  /// into layer l's pooling map is built from layer l+1's filters.
};

enum class FeatureMode { third_layer, concat_all };

struct LayerActivation {
  Tensor input;           // visible tensor seen by this layer
  Tensor signal;          // cropped bottom-up signal [K, NHc, NHc]
  BlockActivation probs;  // detection + pooling probabilities
};

/// Deterministic mean-field pass through every layer (no sampling).
std::vector<LayerActivation> stack_forward(const CdbnStack& stack, const Tensor& input);

/// Flattened pooling probabilities (last layer or all layers concatenated),
/// l2-normalized onto the unit hypersphere.
Tensor extract_features(const CdbnStack& stack, const Tensor& input, FeatureMode mode);

/// Row sink for reconstruction curves: (epoch, layer, mse).
using ReconCsvSink = std::function<void(std::size_t, std::size_t, double)>;

struct PretrainOptions {
  std::size_t epochs = 50;
  std::size_t batch_size = 10;
  CdHyper hyper;
};

/// Layer-wise CD pretraining; earlier layers are frozen once trained and
/// their pooling probabilities become the next layer's data.
void pretrain_stack(CdbnStack& stack, const std::vector<Tensor>& dataset,
                    const PretrainOptions& opts, SeededRng& rng,
                    const ReconCsvSink& sink = nullptr);

/// Block Gibbs chain over all hidden layers. Each sweep resamples every
/// hidden layer given its neighbors (the augmented block softmax with the
/// upper layer's filters as bridge weights), then the visible layer from its
/// Gaussian conditional.
class GibbsChain {
 public:
  GibbsChain(const CdbnStack& stack, const Tensor& input, SeededRng& rng);

  void sweep();

  const std::vector<Tensor>& hidden() const { return hidden_; }
  const Tensor& visible() const { return visible_; }
  std::vector<Tensor> pooling() const;

 private:
  const CdbnStack& stack_;
  SeededRng& rng_;
  Tensor input_;
  Tensor visible_;
  std::vector<Tensor> hidden_;
};

/// Runs `steps` Gibbs sweeps and returns the final pooling samples per layer.
std::vector<Tensor> gibbs_sample_all(const CdbnStack& stack, const Tensor& input,
                                     int steps, SeededRng& rng);

/// Gradient of the pooling probabilities with respect to the (cropped)
/// signal: dI_ij = dP_alpha * q_ij * (1 - P_alpha).
Tensor pool_prob_backward(const BlockActivation& probs, const Tensor& dpool);

/// Accumulates parameter gradients (and optionally the input gradient) for
/// the bottom-up map given d(loss)/d(signal) at the full detection size.
void bottom_up_backward(const Tensor& v, const CrbmLayer& layer,
                        const Tensor& dsignal, Tensor* dfilters,
                        std::vector<double>* dhidden_bias, Tensor* dinput);

}  // namespace dafe
