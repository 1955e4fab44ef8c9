#include "embedding.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace dafe {

EmbeddingModel EmbeddingModel::create(const EmbeddingSettings& settings, SeededRng& rng) {
  if (settings.filters.empty() || settings.filters.size() != settings.filter_sizes.size() ||
      settings.filters.size() != settings.pool_sizes.size())
    raise(ErrorCode::config, "embedding: inconsistent layer geometry lists");
  EmbeddingModel model;
  model.settings = settings;

  std::vector<std::size_t> stack_channels;
  if (settings.per_representation) {
    stack_channels.push_back(1);  // intensity
    if (settings.input.use_lbp) stack_channels.push_back(kLbpBins);
    if (settings.input.use_gabor) {
      GaborBank bank = GaborBank::make(settings.input.gabor);
      stack_channels.push_back(bank.kernels.size());
    }
  } else {
    std::size_t total = 1;
    if (settings.input.use_lbp) total += kLbpBins;
    if (settings.input.use_gabor)
      total += GaborBank::make(settings.input.gabor).kernels.size();
    stack_channels.push_back(total);
  }

  for (std::size_t channels : stack_channels) {
    CdbnStack stack;
    std::size_t in = channels;
    for (std::size_t l = 0; l < settings.filters.size(); ++l) {
      stack.layers.push_back(CrbmLayer::create(in, settings.filters[l],
                                               settings.filter_sizes[l],
                                               settings.pool_sizes[l]));
      stack.layers.back().init_weights(rng, settings.init_stddev);
      in = settings.filters[l];
    }
    stack.initialized = true;
    model.stacks.push_back(std::move(stack));
  }
  if (settings.pca_enabled) model.pcas.resize(model.stacks.size());
  return model;
}

std::vector<EmbeddingModel::Slice> EmbeddingModel::input_slices() const {
  std::vector<Slice> slices;
  if (!settings.per_representation) {
    slices.push_back({0, stacks[0].layers[0].in_channels});
    return slices;
  }
  std::size_t offset = 0;
  slices.push_back({offset, 1});
  offset += 1;
  if (settings.input.use_lbp) {
    slices.push_back({offset, kLbpBins});
    offset += kLbpBins;
  }
  if (settings.input.use_gabor) {
    const std::size_t g = GaborBank::make(settings.input.gabor).kernels.size();
    slices.push_back({offset, g});
    offset += g;
  }
  return slices;
}

std::vector<Tensor> EmbeddingModel::stack_inputs(const Tensor& image) const {
  Tensor full = build_input_stack(image, settings.input);
  std::vector<Slice> slices = input_slices();
  std::vector<Tensor> out;
  const std::size_t h = full.dim(1), w = full.dim(2);
  for (const Slice& s : slices) {
    Tensor part({s.count, h, w});
    std::copy(full.data() + s.begin * h * w,
              full.data() + (s.begin + s.count) * h * w, part.data());
    out.push_back(std::move(part));
  }
  return out;
}

namespace {

// Flat per-stack feature from the pooled maps, following the feature mode.
Tensor flatten_pools(const std::vector<Tensor>& pools, FeatureMode mode) {
  std::vector<double> flat;
  if (mode == FeatureMode::third_layer) {
    const Tensor& last = pools.back();
    flat.assign(last.values().begin(), last.values().end());
  } else {
    for (const Tensor& p : pools)
      flat.insert(flat.end(), p.values().begin(), p.values().end());
  }
  return Tensor::vector(std::move(flat));
}

}  // namespace

Tensor EmbeddingModel::features(const Tensor& image) const {
  std::vector<Tensor> inputs = stack_inputs(image);
  std::vector<double> concat;
  for (std::size_t s = 0; s < stacks.size(); ++s) {
    std::vector<LayerActivation> acts = stack_forward(stacks[s], inputs[s]);
    std::vector<Tensor> pools;
    for (const LayerActivation& a : acts) pools.push_back(a.probs.pool);
    Tensor raw = flatten_pools(pools, settings.mode);
    if (pca_ready && s < pcas.size() && pcas[s].components() > 0)
      raw = pca_project(pcas[s], raw);
    concat.insert(concat.end(), raw.values().begin(), raw.values().end());
  }
  return l2_normalize(Tensor::vector(std::move(concat)));
}

std::size_t EmbeddingModel::feature_dim() const {
  std::size_t total = 0;
  for (std::size_t s = 0; s < stacks.size(); ++s) {
    std::size_t visible = settings.input.height;
    std::size_t raw = 0;
    for (std::size_t l = 0; l < stacks[s].layers.size(); ++l) {
      LayerGeometry g = layer_geometry(stacks[s].layers[l], visible);
      const std::size_t pooled = stacks[s].layers[l].num_filters * g.pooled * g.pooled;
      if (settings.mode == FeatureMode::concat_all || l + 1 == stacks[s].layers.size())
        raw += pooled;
      visible = g.pooled;
    }
    if (pca_ready && s < pcas.size() && pcas[s].components() > 0)
      total += pcas[s].components();
    else
      total += raw;
  }
  return total;
}

FrozenPrefix frozen_prefix(const EmbeddingModel& model, const Tensor& image,
                           std::size_t trainable_layers) {
  const std::size_t L = model.layer_count();
  if (trainable_layers > L)
    raise(ErrorCode::parameter, "frozen_prefix: trainable depth exceeds layer count");
  const std::size_t frozen = L - trainable_layers;
  FrozenPrefix out;
  std::vector<Tensor> inputs = model.stack_inputs(image);
  out.pools.resize(model.stack_count());
  for (std::size_t s = 0; s < model.stack_count(); ++s) {
    Tensor current = std::move(inputs[s]);
    for (std::size_t l = 0; l < frozen; ++l) {
      const CrbmLayer& layer = model.stacks[s].layers[l];
      Tensor sig = crop_to_multiple(bottom_up(current, layer), layer.pool_size);
      current = block_probs(sig, layer.pool_size).pool;
      out.pools[s].push_back(current);
    }
    out.suffix_input.push_back(std::move(current));
  }
  return out;
}

EmbeddingTape suffix_forward(const EmbeddingModel& model, const FrozenPrefix& prefix,
                             std::size_t trainable_layers) {
  const std::size_t L = model.layer_count();
  const std::size_t frozen = L - trainable_layers;
  EmbeddingTape tape;
  tape.acts.resize(model.stack_count());
  std::vector<double> concat;
  for (std::size_t s = 0; s < model.stack_count(); ++s) {
    Tensor current = prefix.suffix_input[s];
    std::vector<Tensor> pools = prefix.pools[s];
    for (std::size_t l = frozen; l < L; ++l) {
      const CrbmLayer& layer = model.stacks[s].layers[l];
      LayerActivation act;
      act.input = current;
      act.signal = crop_to_multiple(bottom_up(current, layer), layer.pool_size);
      act.probs = block_probs(act.signal, layer.pool_size);
      current = act.probs.pool;
      pools.push_back(current);
      tape.acts[s].push_back(std::move(act));
    }
    Tensor raw = flatten_pools(pools, model.settings.mode);
    Tensor projected =
        (model.pca_ready && s < model.pcas.size() && model.pcas[s].components() > 0)
            ? pca_project(model.pcas[s], raw)
            : raw;
    concat.insert(concat.end(), projected.values().begin(), projected.values().end());
    tape.raw.push_back(std::move(raw));
    tape.projected.push_back(std::move(projected));
  }
  tape.concat = Tensor::vector(std::move(concat));
  tape.feature = l2_normalize(tape.concat, &tape.degenerate);
  return tape;
}

EmbeddingGrads EmbeddingGrads::zeros(const EmbeddingModel& model,
                                     std::size_t trainable_layers) {
  const std::size_t L = model.layer_count();
  const std::size_t frozen = L - trainable_layers;
  EmbeddingGrads g;
  g.dfilters.resize(model.stack_count());
  g.dhidden_bias.resize(model.stack_count());
  for (std::size_t s = 0; s < model.stack_count(); ++s) {
    for (std::size_t l = frozen; l < L; ++l) {
      const CrbmLayer& layer = model.stacks[s].layers[l];
      g.dfilters[s].push_back(Tensor(layer.filters.shape()));
      g.dhidden_bias[s].push_back(std::vector<double>(layer.num_filters, 0.0));
    }
  }
  return g;
}

void suffix_backward(const EmbeddingModel& model, const FrozenPrefix& prefix,
                     const EmbeddingTape& tape, const Tensor& dfeature,
                     std::size_t trainable_layers, EmbeddingGrads& grads) {
  if (trainable_layers == 0) return;
  const std::size_t L = model.layer_count();
  const std::size_t frozen = L - trainable_layers;

  // through the final l2 normalization
  Tensor dconcat({tape.concat.size()});
  if (!tape.degenerate) {
    double norm = std::sqrt(dot(tape.concat, tape.concat));
    double proj = dot(dfeature, tape.feature);
    for (std::size_t i = 0; i < dconcat.size(); ++i)
      dconcat[i] = (dfeature[i] - proj * tape.feature[i]) / norm;
  }

  std::size_t offset = 0;
  for (std::size_t s = 0; s < model.stack_count(); ++s) {
    const std::size_t proj_dim = tape.projected[s].size();
    Tensor dproj({proj_dim});
    for (std::size_t i = 0; i < proj_dim; ++i) dproj[i] = dconcat[offset + i];
    offset += proj_dim;

    // through PCA (linear: draw = basis * dproj)
    Tensor draw({tape.raw[s].size()});
    if (model.pca_ready && s < model.pcas.size() && model.pcas[s].components() > 0) {
      const PcaModel& pca = model.pcas[s];
      for (std::size_t i = 0; i < draw.size(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < proj_dim; ++j)
          acc += pca.basis.at(i, j) * dproj[j];
        draw[i] = acc;
      }
    } else {
      draw = dproj;
    }

    // per-layer pool gradient slices of the raw feature
    std::vector<Tensor> dpool(trainable_layers);
    for (std::size_t t = 0; t < trainable_layers; ++t)
      dpool[t] = Tensor(tape.acts[s][t].probs.pool.shape());
    if (model.settings.mode == FeatureMode::third_layer) {
      Tensor& top = dpool[trainable_layers - 1];
      for (std::size_t i = 0; i < top.size(); ++i) top[i] = draw[i];
    } else {
      std::size_t pos = 0;
      for (std::size_t l = 0; l < frozen; ++l) pos += prefix.pools[s][l].size();
      for (std::size_t t = 0; t < trainable_layers; ++t) {
        Tensor& d = dpool[t];
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = draw[pos + i];
        pos += d.size();
      }
    }

    // walk the suffix top-down, chaining input gradients into lower pools
    for (std::size_t t = trainable_layers; t-- > 0;) {
      const LayerActivation& act = tape.acts[s][t];
      const CrbmLayer& layer = model.stacks[s].layers[frozen + t];
      Tensor dsig = pool_prob_backward(act.probs, dpool[t]);
      const std::size_t nh_full = act.input.dim(1) - layer.filter_size + 1;
      Tensor dsig_full = pad_trailing(dsig, nh_full, nh_full);
      Tensor* dinput_ptr = nullptr;
      Tensor dinput;
      if (t > 0) {
        dinput = Tensor(act.input.shape());
        dinput_ptr = &dinput;
      }
      bottom_up_backward(act.input, layer, dsig_full, &grads.dfilters[s][t],
                         &grads.dhidden_bias[s][t], dinput_ptr);
      if (t > 0) axpy(1.0, dinput, dpool[t - 1]);
    }
  }
}

}  // namespace dafe
