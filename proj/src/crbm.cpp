#include "crbm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "error.hpp"

namespace dafe {

CrbmLayer CrbmLayer::create(std::size_t in_channels, std::size_t num_filters,
                            std::size_t filter_size, std::size_t pool_size) {
  if (in_channels == 0 || num_filters == 0 || filter_size == 0 || pool_size == 0)
    raise(ErrorCode::parameter, "CrbmLayer: all dimensions must be positive");
  CrbmLayer layer;
  layer.in_channels = in_channels;
  layer.num_filters = num_filters;
  layer.filter_size = filter_size;
  layer.pool_size = pool_size;
  layer.filters = Tensor({num_filters, in_channels, filter_size, filter_size});
  layer.hidden_bias.assign(num_filters, 0.0);
  layer.visible_bias = 0.0;
  return layer;
}

void CrbmLayer::init_weights(SeededRng& rng, double stddev) {
  for (double& w : filters.values()) w = stddev * rng.next_gaussian();
  std::fill(hidden_bias.begin(), hidden_bias.end(), 0.0);
  visible_bias = 0.0;
}

Tensor CrbmLayer::filter(std::size_t k, std::size_t c) const {
  Tensor out({filter_size, filter_size});
  const double* src =
      filters.data() + ((k * in_channels + c) * filter_size) * filter_size;
  std::copy(src, src + filter_size * filter_size, out.data());
  return out;
}

LayerGeometry layer_geometry(const CrbmLayer& layer, std::size_t visible) {
  if (visible < layer.filter_size)
    raise(ErrorCode::dimension, "layer_geometry: visible smaller than filter");
  LayerGeometry g;
  g.visible = visible;
  g.detect = visible - layer.filter_size + 1;
  g.detect_cropped = (g.detect / layer.pool_size) * layer.pool_size;
  if (g.detect_cropped == 0)
    raise(ErrorCode::dimension, "layer_geometry: detection map smaller than one pool block");
  g.pooled = g.detect_cropped / layer.pool_size;
  return g;
}

Tensor bottom_up(const Tensor& v, const CrbmLayer& layer) {
  if (v.rank() != 3 || v.dim(0) != layer.in_channels)
    raise(ErrorCode::dimension, "bottom_up: visible must be [C_in,NV,NV]");
  if (v.dim(1) != v.dim(2)) raise(ErrorCode::dimension, "bottom_up: visible must be square");
  const std::size_t nv = v.dim(1);
  if (nv < layer.filter_size)
    raise(ErrorCode::dimension, "bottom_up: filter larger than visible layer");
  const std::size_t nh = nv - layer.filter_size + 1;
  Tensor signal({layer.num_filters, nh, nh});
  for (std::size_t k = 0; k < layer.num_filters; ++k) {
    Tensor acc({nh, nh});
    for (std::size_t c = 0; c < layer.in_channels; ++c) {
      Tensor contrib = conv_valid(v.channel(c), flip180(layer.filter(k, c)));
      axpy(1.0, contrib, acc);
    }
    const double b = layer.hidden_bias[k];
    for (std::size_t i = 0; i < nh * nh; ++i)
      signal[k * nh * nh + i] = acc[i] + b;
  }
  return signal;
}

namespace {

void check_block_shape(const Tensor& signal, std::size_t pool) {
  if (signal.rank() != 3 || signal.dim(1) != signal.dim(2))
    raise(ErrorCode::dimension, "block softmax: signal must be [K,NH,NH]");
  if (pool == 0 || signal.dim(1) % pool != 0)
    raise(ErrorCode::dimension, "block softmax: detection size " +
                                    std::to_string(signal.dim(1)) +
                                    " not divisible by pool " + std::to_string(pool));
}

}  // namespace

BlockActivation block_probs(const Tensor& signal, std::size_t pool) {
  check_block_shape(signal, pool);
  const std::size_t K = signal.dim(0), nh = signal.dim(1), np = nh / pool;
  BlockActivation act;
  act.pool_size = pool;
  act.detect = Tensor({K, nh, nh});
  act.pool = Tensor({K, np, np});
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t bi = 0; bi < np; ++bi) {
      for (std::size_t bj = 0; bj < np; ++bj) {
        double m = 0.0;  // off-state logit
        for (std::size_t di = 0; di < pool; ++di)
          for (std::size_t dj = 0; dj < pool; ++dj)
            m = std::max(m, signal.at(k, bi * pool + di, bj * pool + dj));
        double denom = std::exp(-m);
        for (std::size_t di = 0; di < pool; ++di)
          for (std::size_t dj = 0; dj < pool; ++dj)
            denom += std::exp(signal.at(k, bi * pool + di, bj * pool + dj) - m);
        double on_sum = 0.0;
        for (std::size_t di = 0; di < pool; ++di)
          for (std::size_t dj = 0; dj < pool; ++dj) {
            double p = std::exp(signal.at(k, bi * pool + di, bj * pool + dj) - m) / denom;
            act.detect.at(k, bi * pool + di, bj * pool + dj) = p;
            on_sum += p;
          }
        act.pool.at(k, bi, bj) = on_sum;
      }
    }
  }
  return act;
}

BlockActivation augmented_block_probs(const Tensor& signal, const Tensor& pool_signal,
                                      std::size_t pool) {
  check_block_shape(signal, pool);
  const std::size_t K = signal.dim(0), nh = signal.dim(1), np = nh / pool;
  if (pool_signal.rank() != 3 || pool_signal.dim(0) != K || pool_signal.dim(1) != np ||
      pool_signal.dim(2) != np)
    raise(ErrorCode::dimension, "augmented_block_probs: pool signal must be [K,NP,NP]");
  BlockActivation act;
  act.pool_size = pool;
  act.detect = Tensor({K, nh, nh});
  act.pool = Tensor({K, np, np});
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t bi = 0; bi < np; ++bi) {
      for (std::size_t bj = 0; bj < np; ++bj) {
        const double top = pool_signal.at(k, bi, bj);
        double m = 0.0;
        for (std::size_t di = 0; di < pool; ++di)
          for (std::size_t dj = 0; dj < pool; ++dj)
            m = std::max(m, signal.at(k, bi * pool + di, bj * pool + dj) + top);
        double denom = std::exp(-m);
        for (std::size_t di = 0; di < pool; ++di)
          for (std::size_t dj = 0; dj < pool; ++dj)
            denom += std::exp(signal.at(k, bi * pool + di, bj * pool + dj) + top - m);
        double on_sum = 0.0;
        for (std::size_t di = 0; di < pool; ++di)
          for (std::size_t dj = 0; dj < pool; ++dj) {
            double p =
                std::exp(signal.at(k, bi * pool + di, bj * pool + dj) + top - m) / denom;
            act.detect.at(k, bi * pool + di, bj * pool + dj) = p;
            on_sum += p;
          }
        act.pool.at(k, bi, bj) = on_sum;
      }
    }
  }
  return act;
}

Tensor sample_block(const BlockActivation& probs, SeededRng& rng) {
  const std::size_t K = probs.detect.dim(0), nh = probs.detect.dim(1);
  const std::size_t pool = probs.pool_size, np = nh / pool;
  Tensor h({K, nh, nh});
  std::vector<double> weights(pool * pool + 1);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t bi = 0; bi < np; ++bi) {
      for (std::size_t bj = 0; bj < np; ++bj) {
        double on_sum = 0.0;
        std::size_t idx = 0;
        for (std::size_t di = 0; di < pool; ++di)
          for (std::size_t dj = 0; dj < pool; ++dj) {
            weights[idx++] = probs.detect.at(k, bi * pool + di, bj * pool + dj);
            on_sum += weights[idx - 1];
          }
        weights[idx] = std::max(0.0, 1.0 - on_sum);  // off-state
        std::size_t pick = sample_categorical(weights, rng);
        if (pick < pool * pool) {
          std::size_t di = pick / pool, dj = pick % pool;
          h.at(k, bi * pool + di, bj * pool + dj) = 1.0;
        }
      }
    }
  }
  return h;
}

Tensor visible_conditional(const Tensor& h, const CrbmLayer& layer) {
  if (h.rank() != 3 || h.dim(0) != layer.num_filters || h.dim(1) != h.dim(2))
    raise(ErrorCode::dimension, "visible_conditional: hidden must be [K,NH,NH]");
  const std::size_t nh = h.dim(1);
  const std::size_t nv = nh + layer.filter_size - 1;
  Tensor mean({layer.in_channels, nv, nv});
  mean.fill(layer.visible_bias);
  for (std::size_t k = 0; k < layer.num_filters; ++k) {
    Tensor hk = h.channel(k);
    for (std::size_t c = 0; c < layer.in_channels; ++c) {
      Tensor contrib = conv_full(hk, layer.filter(k, c));
      double* dst = mean.data() + c * nv * nv;
      for (std::size_t i = 0; i < nv * nv; ++i) dst[i] += contrib[i];
    }
  }
  return mean;
}

double energy(const Tensor& v, const Tensor& h, const CrbmLayer& layer) {
  if (v.rank() != 3 || v.dim(0) != layer.in_channels || v.dim(1) != v.dim(2))
    raise(ErrorCode::dimension, "energy: visible must be [C_in,NV,NV]");
  if (h.rank() != 3 || h.dim(0) != layer.num_filters || h.dim(1) != h.dim(2))
    raise(ErrorCode::dimension, "energy: hidden must be [K,NH,NH]");
  const std::size_t nv = v.dim(1), nh = h.dim(1), nw = layer.filter_size;
  if (nh != nv - nw + 1)
    raise(ErrorCode::dimension, "energy: hidden size does not match visible/filter");
  const std::size_t pool = layer.pool_size;
  const std::size_t nhc = (nh / pool) * pool;

  // Block constraint of Eq. 5: at most one active unit per pooling block,
  // cropped trailing units off.
  for (std::size_t k = 0; k < layer.num_filters; ++k) {
    for (std::size_t i = 0; i < nh; ++i)
      for (std::size_t j = 0; j < nh; ++j) {
        double hv = h.at(k, i, j);
        if (hv != 0.0 && hv != 1.0)
          raise(ErrorCode::contract, "energy: hidden units must be binary");
        if ((i >= nhc || j >= nhc) && hv != 0.0)
          raise(ErrorCode::contract, "energy: cropped hidden units must be off");
      }
    for (std::size_t bi = 0; bi < nhc / pool; ++bi)
      for (std::size_t bj = 0; bj < nhc / pool; ++bj) {
        double s = 0.0;
        for (std::size_t di = 0; di < pool; ++di)
          for (std::size_t dj = 0; dj < pool; ++dj)
            s += h.at(k, bi * pool + di, bj * pool + dj);
        if (s > 1.0)
          raise(ErrorCode::contract, "energy: more than one active unit in a block");
      }
  }

  double e = 0.0;
  for (double vv : v.values()) e += 0.5 * vv * vv - layer.visible_bias * vv;
  for (std::size_t k = 0; k < layer.num_filters; ++k) {
    double hsum = 0.0;
    for (std::size_t i = 0; i < nh; ++i)
      for (std::size_t j = 0; j < nh; ++j) {
        const double hv = h.at(k, i, j);
        if (hv == 0.0) continue;
        hsum += hv;
        for (std::size_t c = 0; c < layer.in_channels; ++c)
          for (std::size_t r = 0; r < nw; ++r)
            for (std::size_t s = 0; s < nw; ++s) {
              // interaction uses the flipped filter, matching bottom_up
              const double w = layer.filters.at4(k, c, nw - 1 - r, nw - 1 - s);
              e -= hv * w * v.at(c, i + r, j + s);
            }
      }
    e -= layer.hidden_bias[k] * hsum;
  }
  return e;
}

Tensor pool_from_hidden(const Tensor& h, std::size_t pool) {
  check_block_shape(h, pool);
  const std::size_t K = h.dim(0), nh = h.dim(1), np = nh / pool;
  Tensor p({K, np, np});
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t bi = 0; bi < np; ++bi)
      for (std::size_t bj = 0; bj < np; ++bj) {
        double s = 0.0;
        for (std::size_t di = 0; di < pool; ++di)
          for (std::size_t dj = 0; dj < pool; ++dj)
            s += h.at(k, bi * pool + di, bj * pool + dj);
        p.at(k, bi, bj) = s;
      }
  return p;
}

namespace {

// conv_valid(v_c, kernel) where kernel is a cropped detection map padded back
// to the full size; result is a [NW,NW] gradient block before flipping.
Tensor detection_correlation(const Tensor& v_channel, const Tensor& detect_k,
                             std::size_t nh_full) {
  Tensor padded = pad_trailing(detect_k, nh_full, nh_full);
  return conv_valid(v_channel, padded);
}

}  // namespace

CdStats cd_update(CrbmLayer& layer, CdTrainState& state,
                  const std::vector<Tensor>& batch, const CdHyper& hyper,
                  SeededRng& rng) {
  if (batch.empty()) raise(ErrorCode::data, "cd_update: empty batch");
  if (!state.ready) {
    state.vel_filters = Tensor(layer.filters.shape());
    state.vel_hidden_bias.assign(layer.num_filters, 0.0);
    state.vel_visible_bias = 0.0;
    state.ready = true;
  }
  const std::size_t nv = batch[0].dim(1);
  const LayerGeometry geom = layer_geometry(layer, nv);
  const std::size_t K = layer.num_filters, C = layer.in_channels, nw = layer.filter_size;
  const double hidden_count = static_cast<double>(geom.detect_cropped * geom.detect_cropped);
  const double visible_count = static_cast<double>(C * nv * nv);

  Tensor grad_w(layer.filters.shape());
  std::vector<double> grad_b(K, 0.0);
  double grad_c = 0.0;
  std::vector<double> mean_act(K, 0.0);
  std::vector<Tensor> mean_window(C);  // for the sparsity weight term
  for (std::size_t c = 0; c < C; ++c) mean_window[c] = Tensor({nw, nw});
  double mse = 0.0;

  Tensor ones_kernel = pad_trailing(
      Tensor::full({geom.detect_cropped, geom.detect_cropped}, 1.0), geom.detect,
      geom.detect);

  for (const Tensor& v : batch) {
    if (v.rank() != 3 || v.dim(0) != C || v.dim(1) != nv || v.dim(2) != nv)
      raise(ErrorCode::dimension, "cd_update: inconsistent batch shapes");

    Tensor sig = bottom_up(v, layer);
    Tensor sigc = crop_to_multiple(sig, layer.pool_size);
    BlockActivation pos = block_probs(sigc, layer.pool_size);

    Tensor h = sample_block(pos, rng);
    Tensor h_full = pad_trailing(h, geom.detect, geom.detect);
    Tensor recon = visible_conditional(h_full, layer);

    Tensor sig_r = crop_to_multiple(bottom_up(recon, layer), layer.pool_size);
    BlockActivation neg = block_probs(sig_r, layer.pool_size);

    for (std::size_t k = 0; k < K; ++k) {
      Tensor pd = pos.detect.channel(k);
      Tensor pr = neg.detect.channel(k);
      for (std::size_t c = 0; c < C; ++c) {
        Tensor gpos = detection_correlation(v.channel(c), pd, geom.detect);
        Tensor gneg = detection_correlation(recon.channel(c), pr, geom.detect);
        for (std::size_t r = 0; r < nw; ++r)
          for (std::size_t s = 0; s < nw; ++s)
            grad_w.at4(k, c, nw - 1 - r, nw - 1 - s) += gpos.at(r, s) - gneg.at(r, s);
      }
      double a_pos = 0.0, a_neg = 0.0;
      for (std::size_t i = 0; i < pd.size(); ++i) {
        a_pos += pd[i];
        a_neg += pr[i];
      }
      grad_b[k] += a_pos - a_neg;
      mean_act[k] += a_pos / hidden_count;
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
      grad_c += v[i] - recon[i];
      const double d = v[i] - recon[i];
      mse += d * d;
    }
    for (std::size_t c = 0; c < C; ++c) {
      Tensor win = conv_valid(v.channel(c), ones_kernel);
      axpy(1.0 / hidden_count, win, mean_window[c]);
    }
  }

  const double bsz = static_cast<double>(batch.size());
  mse /= bsz * visible_count;

  // Sparsity: push each filter's mean detection probability toward the
  // target through both its bias and its weights.
  std::vector<double> sparsity_delta(K);
  for (std::size_t k = 0; k < K; ++k) {
    mean_act[k] /= bsz;
    sparsity_delta[k] = hyper.sparsity_weight * (hyper.sparsity_target - mean_act[k]);
  }

  const double lr = hyper.learning_rate;
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t r = 0; r < nw; ++r)
        for (std::size_t s = 0; s < nw; ++s) {
          const double g_cd = grad_w.at4(k, c, r, s) / (bsz * hidden_count);
          const double g_sp =
              sparsity_delta[k] * mean_window[c].at(nw - 1 - r, nw - 1 - s) / bsz;
          double& vel = state.vel_filters.at4(k, c, r, s);
          vel = hyper.momentum * vel + lr * (g_cd + g_sp);
          double& w = layer.filters.at4(k, c, r, s);
          w += vel;
          w -= lr * hyper.weight_decay * w;
        }
    }
    double& velb = state.vel_hidden_bias[k];
    velb = hyper.momentum * velb + lr * (grad_b[k] / (bsz * hidden_count) + sparsity_delta[k]);
    layer.hidden_bias[k] += velb;
  }
  double& velc = state.vel_visible_bias;
  velc = hyper.momentum * velc + lr * (grad_c / (bsz * visible_count));
  layer.visible_bias += velc;

  CdStats stats;
  stats.recon_mse = mse;
  stats.mean_detect_prob =
      std::accumulate(mean_act.begin(), mean_act.end(), 0.0) / static_cast<double>(K);
  return stats;
}

std::vector<LayerActivation> stack_forward(const CdbnStack& stack, const Tensor& input) {
  if (!stack.initialized || stack.layers.empty())
    raise(ErrorCode::contract, "stack_forward: stack has no initialized layers");
  std::vector<LayerActivation> acts;
  acts.reserve(stack.layers.size());
  Tensor current = input;
  for (const CrbmLayer& layer : stack.layers) {
    LayerActivation act;
    act.input = current;
    Tensor sig = bottom_up(current, layer);
    act.signal = crop_to_multiple(sig, layer.pool_size);
    act.probs = block_probs(act.signal, layer.pool_size);
    current = act.probs.pool;
    acts.push_back(std::move(act));
  }
  return acts;
}

Tensor extract_features(const CdbnStack& stack, const Tensor& input, FeatureMode mode) {
  std::vector<LayerActivation> acts = stack_forward(stack, input);
  std::vector<double> flat;
  if (mode == FeatureMode::third_layer) {
    const Tensor& pool = acts.back().probs.pool;
    flat.assign(pool.values().begin(), pool.values().end());
  } else {
    for (const LayerActivation& act : acts)
      flat.insert(flat.end(), act.probs.pool.values().begin(),
                  act.probs.pool.values().end());
  }
  return l2_normalize(Tensor::vector(std::move(flat)));
}

void pretrain_stack(CdbnStack& stack, const std::vector<Tensor>& dataset,
                    const PretrainOptions& opts, SeededRng& rng,
                    const ReconCsvSink& sink) {
  if (dataset.empty()) raise(ErrorCode::data, "pretrain_stack: empty dataset");
  if (!stack.initialized) raise(ErrorCode::contract, "pretrain_stack: uninitialized stack");
  std::vector<Tensor> data = dataset;
  for (std::size_t li = 0; li < stack.layers.size(); ++li) {
    CrbmLayer& layer = stack.layers[li];
    CdTrainState state;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
      // Fisher-Yates with the run's stream
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.next_index(i)]);
      double epoch_mse = 0.0;
      std::size_t seen = 0;
      for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
        std::size_t end = std::min(order.size(), start + opts.batch_size);
        std::vector<Tensor> batch;
        batch.reserve(end - start);
        for (std::size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);
        CdStats stats = cd_update(layer, state, batch, opts.hyper, rng);
        epoch_mse += stats.recon_mse * static_cast<double>(batch.size());
        seen += batch.size();
      }
      if (sink) sink(epoch, li, epoch_mse / static_cast<double>(seen));
    }
    // Frozen layer's pooling probabilities feed the next layer.
    if (li + 1 < stack.layers.size()) {
      for (Tensor& item : data) {
        Tensor sig = crop_to_multiple(bottom_up(item, layer), layer.pool_size);
        item = block_probs(sig, layer.pool_size).pool;
      }
    }
  }
  stack.pretrained = true;
}

GibbsChain::GibbsChain(const CdbnStack& stack, const Tensor& input, SeededRng& rng)
    : stack_(stack), rng_(rng), input_(input), visible_(input) {
  if (!stack.initialized) raise(ErrorCode::contract, "GibbsChain: uninitialized stack");
  const std::size_t L = stack.layers.size();
  hidden_.resize(L);
  // Initialize with one bottom-up sampling pass (no top-down terms yet).
  Tensor below = input_;
  for (std::size_t l = 0; l < L; ++l) {
    Tensor sig = crop_to_multiple(bottom_up(below, stack.layers[l]),
                                  stack.layers[l].pool_size);
    hidden_[l] = sample_block(block_probs(sig, stack.layers[l].pool_size), rng_);
    below = pool_from_hidden(hidden_[l], stack.layers[l].pool_size);
  }
}

void GibbsChain::sweep() {
  const std::size_t L = stack_.layers.size();
  for (std::size_t l = 0; l < L; ++l) {
    const CrbmLayer& layer = stack_.layers[l];
    Tensor below = l == 0 ? visible_
                          : pool_from_hidden(hidden_[l - 1], stack_.layers[l - 1].pool_size);
    Tensor sig = crop_to_multiple(bottom_up(below, layer), layer.pool_size);
    if (l + 1 < L) {
      // Top-down term into this layer's pooling map from the layer above,
      // using the upper layer's filters as the bridge weights.
      const CrbmLayer& upper = stack_.layers[l + 1];
      const LayerGeometry upper_geom =
          layer_geometry(upper, sig.dim(1) / layer.pool_size);
      Tensor h_above = pad_trailing(hidden_[l + 1], upper_geom.detect, upper_geom.detect);
      const std::size_t np = sig.dim(1) / layer.pool_size;
      Tensor topdown({layer.num_filters, np, np});
      for (std::size_t ku = 0; ku < upper.num_filters; ++ku) {
        Tensor hk = h_above.channel(ku);
        for (std::size_t kl = 0; kl < layer.num_filters; ++kl) {
          Tensor contrib = conv_full(hk, upper.filter(ku, kl));
          double* dst = topdown.data() + kl * np * np;
          for (std::size_t i = 0; i < np * np; ++i) dst[i] += contrib[i];
        }
      }
      hidden_[l] = sample_block(augmented_block_probs(sig, topdown, layer.pool_size), rng_);
    } else {
      hidden_[l] = sample_block(block_probs(sig, layer.pool_size), rng_);
    }
  }
  // Visible refresh from its Gaussian conditional.
  const CrbmLayer& first = stack_.layers[0];
  const LayerGeometry g0 = layer_geometry(first, input_.dim(1));
  Tensor h0 = pad_trailing(hidden_[0], g0.detect, g0.detect);
  Tensor mean = visible_conditional(h0, first);
  visible_ = Tensor(mean.shape());
  for (std::size_t i = 0; i < visible_.size(); ++i)
    visible_[i] = sample_gaussian(mean[i], rng_);
}

std::vector<Tensor> GibbsChain::pooling() const {
  std::vector<Tensor> pools(hidden_.size());
  for (std::size_t l = 0; l < hidden_.size(); ++l)
    pools[l] = pool_from_hidden(hidden_[l], stack_.layers[l].pool_size);
  return pools;
}

std::vector<Tensor> gibbs_sample_all(const CdbnStack& stack, const Tensor& input,
                                     int steps, SeededRng& rng) {
  if (steps < 1) raise(ErrorCode::parameter, "gibbs_sample_all: steps must be >= 1");
  GibbsChain chain(stack, input, rng);
  for (int s = 0; s < steps; ++s) chain.sweep();
  return chain.pooling();
}

Tensor pool_prob_backward(const BlockActivation& probs, const Tensor& dpool) {
  const std::size_t K = probs.detect.dim(0), nh = probs.detect.dim(1);
  const std::size_t pool = probs.pool_size, np = nh / pool;
  if (!dpool.same_shape(probs.pool))
    raise(ErrorCode::dimension, "pool_prob_backward: gradient shape mismatch");
  Tensor dsig({K, nh, nh});
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t bi = 0; bi < np; ++bi)
      for (std::size_t bj = 0; bj < np; ++bj) {
        const double dp = dpool.at(k, bi, bj);
        if (dp == 0.0) continue;
        const double p_alpha = probs.pool.at(k, bi, bj);
        for (std::size_t di = 0; di < pool; ++di)
          for (std::size_t dj = 0; dj < pool; ++dj) {
            const double q = probs.detect.at(k, bi * pool + di, bj * pool + dj);
            dsig.at(k, bi * pool + di, bj * pool + dj) = dp * q * (1.0 - p_alpha);
          }
      }
  return dsig;
}

void bottom_up_backward(const Tensor& v, const CrbmLayer& layer,
                        const Tensor& dsignal, Tensor* dfilters,
                        std::vector<double>* dhidden_bias, Tensor* dinput) {
  const std::size_t nv = v.dim(1);
  const std::size_t nh = nv - layer.filter_size + 1;
  if (dsignal.rank() != 3 || dsignal.dim(0) != layer.num_filters ||
      dsignal.dim(1) != nh || dsignal.dim(2) != nh)
    raise(ErrorCode::dimension, "bottom_up_backward: dsignal must be the full [K,NH,NH]");
  const std::size_t nw = layer.filter_size;
  for (std::size_t k = 0; k < layer.num_filters; ++k) {
    Tensor g = dsignal.channel(k);
    if (dhidden_bias) {
      double s = 0.0;
      for (double gv : g.values()) s += gv;
      (*dhidden_bias)[k] += s;
    }
    for (std::size_t c = 0; c < layer.in_channels; ++c) {
      if (dfilters) {
        Tensor gw = conv_valid(v.channel(c), g);  // [NW,NW], indexed by flipped taps
        for (std::size_t r = 0; r < nw; ++r)
          for (std::size_t s = 0; s < nw; ++s)
            dfilters->at4(k, c, nw - 1 - r, nw - 1 - s) += gw.at(r, s);
      }
      if (dinput) {
        Tensor gi = conv_full(g, layer.filter(k, c));
        double* dst = dinput->data() + c * nv * nv;
        for (std::size_t i = 0; i < nv * nv; ++i) dst[i] += gi[i];
      }
    }
  }
}

}  // namespace dafe
