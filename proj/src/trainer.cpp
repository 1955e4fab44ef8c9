#include "trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>

#include "error.hpp"
#include "mining.hpp"
#include "optim.hpp"

namespace dafe {

std::string csv_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

EmbeddingSettings embedding_settings_from(const Config& config) {
  EmbeddingSettings s;
  const std::size_t size = static_cast<std::size_t>(config.get_int("preproc.image_size"));
  s.input.height = size;
  s.input.width = size;
  s.input.whiten_intensity = config.get_bool("preproc.whiten");
  s.input.use_lbp = config.get_bool("preproc.use_lbp");
  s.input.use_gabor = config.get_bool("preproc.use_gabor");
  s.input.gabor.wavelengths = config.get_double_list("gabor.wavelengths");
  s.input.gabor.orientations = static_cast<std::size_t>(config.get_int("gabor.orientations"));
  s.input.gabor.kernel_size = static_cast<std::size_t>(config.get_int("gabor.kernel_size"));
  s.input.gabor.sigma_ratio = config.get_double("gabor.sigma_ratio");
  s.input.gabor.aspect = config.get_double("gabor.aspect");
  s.input.gabor.phase = config.get_double("gabor.psi");
  s.per_representation = config.get_bool("preproc.per_representation");
  s.filters = config.get_size_list("crbm.filters");
  s.filter_sizes = config.get_size_list("crbm.filter_sizes");
  s.pool_sizes = config.get_size_list("crbm.pool_sizes");
  s.init_stddev = config.get_double("crbm.init_stddev");
  s.mode = config.get_string("features.mode") == "concat_all" ? FeatureMode::concat_all
                                                              : FeatureMode::third_layer;
  s.pca_enabled = config.get_bool("pca.enabled");
  s.pca_components = static_cast<std::size_t>(config.get_int("pca.components"));
  return s;
}

SyntheticSpec synthetic_spec_from(const Config& config) {
  SyntheticSpec spec;
  spec.identities = static_cast<std::size_t>(config.get_int("synth.identities"));
  spec.views = static_cast<std::size_t>(config.get_int("synth.views"));
  spec.images_per_view = static_cast<std::size_t>(config.get_int("synth.images_per_view"));
  spec.image_size = static_cast<std::size_t>(config.get_int("synth.image_size"));
  spec.curvature = config.get_double("synth.curvature");
  spec.noise = config.get_double("synth.noise");
  spec.seed = config.seed();
  return spec;
}

namespace {

// rng stream ids per pipeline stage
constexpr std::uint64_t kStreamInit = 1;
constexpr std::uint64_t kStreamPretrain = 2;
constexpr std::uint64_t kStreamTrain = 3;
constexpr std::uint64_t kStreamEval = 4;
constexpr std::uint64_t kStreamHead = 5;

CdHyper cd_hyper_from(const Config& config) {
  CdHyper h;
  h.learning_rate = config.get_double("crbm.learning_rate");
  h.momentum = config.get_double("crbm.momentum");
  h.weight_decay = config.get_double("crbm.weight_decay");
  h.sparsity_target = config.get_double("crbm.sparsity_target");
  h.sparsity_weight = config.get_double("crbm.sparsity_weight");
  return h;
}

// Flat view over the trainable parameters: the head first, then each
// stack's trainable suffix (filters, hidden biases) bottom-to-top.
class ParamView {
 public:
  ParamView(SimilarityHead& head, EmbeddingModel& model, std::size_t trainable_layers) {
    for (Tensor* t : {&head.w_e, &head.b_e, &head.w_u, &head.b_u, &head.w_c,
                      &head.b_c, &head.w_s})
      for (double& v : t->values()) slots_.push_back(&v);
    slots_.push_back(&head.b_s);
    head_size_ = slots_.size();
    const std::size_t L = model.layer_count();
    for (CdbnStack& stack : model.stacks)
      for (std::size_t l = L - trainable_layers; l < L; ++l) {
        for (double& v : stack.layers[l].filters.values()) slots_.push_back(&v);
        for (double& v : stack.layers[l].hidden_bias) slots_.push_back(&v);
      }
  }

  std::size_t size() const { return slots_.size(); }
  std::size_t head_size() const { return head_size_; }

  std::vector<double> snapshot() const {
    std::vector<double> out(slots_.size());
    for (std::size_t i = 0; i < slots_.size(); ++i) out[i] = *slots_[i];
    return out;
  }
  void assign(const std::vector<double>& w) {
    for (std::size_t i = 0; i < slots_.size(); ++i) *slots_[i] = w[i];
  }
  void add(const std::vector<double>& delta) {
    for (std::size_t i = 0; i < slots_.size(); ++i) *slots_[i] += delta[i];
  }

 private:
  std::vector<double*> slots_;
  std::size_t head_size_ = 0;
};

std::vector<double> flatten_gradient(const SimilarityHead& head,
                                     const HeadGradients& hg,
                                     const EmbeddingGrads& eg, bool head_active) {
  std::vector<double> flat;
  if (head_active) {
    for (const Tensor* t : {&hg.w_e, &hg.b_e, &hg.w_u, &hg.b_u, &hg.w_c, &hg.b_c, &hg.w_s})
      flat.insert(flat.end(), t->values().begin(), t->values().end());
    flat.push_back(hg.b_s);
  } else {
    flat.assign(head.parameter_count(), 0.0);
  }
  for (std::size_t s = 0; s < eg.dfilters.size(); ++s)
    for (std::size_t t = 0; t < eg.dfilters[s].size(); ++t) {
      flat.insert(flat.end(), eg.dfilters[s][t].values().begin(),
                  eg.dfilters[s][t].values().end());
      flat.insert(flat.end(), eg.dhidden_bias[s][t].begin(),
                  eg.dhidden_bias[s][t].end());
    }
  return flat;
}

enum class LossKind { quadruplet, triplet, quadruplet_dist, triplet_dist, nca };

LossKind loss_kind_from(const Config& config) {
  const std::string v = config.get_string("train.loss");
  if (v == "quadruplet") return LossKind::quadruplet;
  if (v == "triplet") return LossKind::triplet;
  if (v == "quadruplet_dist") return LossKind::quadruplet_dist;
  if (v == "triplet_dist") return LossKind::triplet_dist;
  return LossKind::nca;
}

bool loss_uses_head(LossKind kind) {
  return kind == LossKind::quadruplet || kind == LossKind::triplet;
}

double sq_dist(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

struct IterationLog {
  double loss = 0.0;
  double s_ij = 0.0, s_ik = 0.0, s_il = 0.0;
  bool fallback = false;
};

// Loss + gradient of one mini-batch at the current parameters. Returns the
// flat gradient; fills the log with the mined scores.
struct BatchWorkspace {
  const Config* config = nullptr;
  EmbeddingModel* model = nullptr;
  SimilarityHead* head = nullptr;
  std::size_t trainable = 1;
  LossKind kind = LossKind::quadruplet;
  Margins margins;
  double dist_alpha = 0.5;
  bool random_positive = false;
  bool mine_per_identity = false;

  std::vector<double> gradient(const std::vector<const FrozenPrefix*>& batch_prefixes,
                               const std::vector<int>& batch_labels,
                               SeededRng& rng, IterationLog& log) const;
};

std::vector<double> BatchWorkspace::gradient(
    const std::vector<const FrozenPrefix*>& batch_prefixes,
    const std::vector<int>& batch_labels, SeededRng& rng, IterationLog& log) const {
  const std::size_t B = batch_prefixes.size();
  std::vector<EmbeddingTape> tapes(B);
  std::vector<Tensor> feats(B);
  for (std::size_t b = 0; b < B; ++b) {
    tapes[b] = suffix_forward(*model, *batch_prefixes[b], trainable);
    feats[b] = tapes[b].feature;
  }

  const bool with_head = loss_uses_head(kind);
  Tensor scores({B, B});
  std::vector<std::vector<PairFeatures>> pair_tapes;
  if (with_head) {
    pair_tapes.assign(B, std::vector<PairFeatures>(B));
    for (std::size_t a = 0; a < B; ++a)
      for (std::size_t b = a + 1; b < B; ++b) {
        pair_tapes[a][b] = similarity_forward(*head, feats[a], feats[b]);
        scores.at(a, b) = scores.at(b, a) = pair_tapes[a][b].score;
      }
  } else {
    for (std::size_t a = 0; a < B; ++a)
      for (std::size_t b = a + 1; b < B; ++b)
        scores.at(a, b) = scores.at(b, a) = -sq_dist(feats[a], feats[b]);
  }

  BatchLabels labels{batch_labels};
  HeadGradients hg = HeadGradients::zeros(*head);
  std::vector<Tensor> dfeat(B);
  for (std::size_t b = 0; b < B; ++b) dfeat[b] = Tensor({feats[b].size()});

  auto add_score_grad = [&](std::size_t a, std::size_t b, double upstream) {
    // d(loss)/d S_ab through the head into both features
    const PairFeatures& tape = a < b ? pair_tapes[a][b] : pair_tapes[b][a];
    const Tensor& fa = a < b ? feats[a] : feats[b];
    const Tensor& fb = a < b ? feats[b] : feats[a];
    HeadGradients g = similarity_backward(*head, fa, fb, tape, upstream);
    hg.accumulate_scaled(g, 1.0);
    axpy(1.0, g.f_i, dfeat[a < b ? a : b]);
    axpy(1.0, g.f_j, dfeat[a < b ? b : a]);
  };

  double loss = 0.0;
  if (kind == LossKind::nca) {
    NcaResult nca = nca_loss(feats, labels);
    loss = nca.loss;
    // gradient of the mean of -log(num_a / den_a) over counted anchors
    std::size_t counted = 0;
    std::vector<bool> has_partner(B, false);
    for (std::size_t a = 0; a < B; ++a)
      for (std::size_t b = 0; b < B; ++b)
        if (a != b && batch_labels[a] == batch_labels[b]) has_partner[a] = true;
    for (std::size_t a = 0; a < B; ++a)
      if (has_partner[a]) ++counted;
    for (std::size_t a = 0; a < B; ++a) {
      if (!has_partner[a]) continue;
      double num = 0.0, den = 0.0;
      std::vector<double> w(B, 0.0);
      for (std::size_t b = 0; b < B; ++b) {
        if (b == a) continue;
        w[b] = std::exp(-sq_dist(feats[a], feats[b]));
        den += w[b];
        if (batch_labels[b] == batch_labels[a]) num += w[b];
      }
      for (std::size_t b = 0; b < B; ++b) {
        if (b == a) continue;
        const bool same = batch_labels[b] == batch_labels[a];
        // d term / d d2_ab = (same ? w/num : 0) - w/den, term = -log num + log den
        const double dd = ((same ? w[b] / num : 0.0) - w[b] / den) / counted;
        for (std::size_t c = 0; c < feats[a].size(); ++c) {
          const double diff = 2.0 * (feats[a][c] - feats[b][c]);
          dfeat[a][c] += dd * diff;
          dfeat[b][c] -= dd * diff;
        }
      }
    }
  } else {
    std::vector<Quadruplet> quads;
    if (mine_per_identity) {
      std::map<int, std::vector<std::size_t>> by_id;
      for (std::size_t b = 0; b < B; ++b) by_id[batch_labels[b]].push_back(b);
      for (const auto& [id, members] : by_id) {
        if (members.size() < 2) continue;
        // restrict the seed pair to this identity, then mine as usual
        Quadruplet q;
        double best = std::numeric_limits<double>::infinity();
        bool found = false;
        for (std::size_t x : members)
          for (std::size_t y : members) {
            if (x == y) continue;
            if (!found || scores.at(x, y) < best) {
              found = true;
              best = scores.at(x, y);
              q.i = x;
              q.j = y;
            }
          }
        q.s_ij = best;
        // hardest negative and local positive for this anchor
        bool has_neg = false;
        double bneg = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < B; ++k) {
          if (batch_labels[k] == id) continue;
          if (!has_neg || scores.at(q.i, k) > bneg) {
            has_neg = true;
            bneg = scores.at(q.i, k);
            q.k = k;
          }
        }
        if (!has_neg) continue;
        q.s_ik = bneg;
        bool has_l = false;
        double bl = std::numeric_limits<double>::infinity();
        for (std::size_t l : members) {
          if (l == q.i) continue;
          if (scores.at(q.i, l) > q.s_ik && (!has_l || scores.at(q.i, l) < bl)) {
            has_l = true;
            bl = scores.at(q.i, l);
            q.l = l;
          }
        }
        q.fallback = !has_l;
        if (!has_l) {
          bool first = true;
          for (std::size_t l : members) {
            if (l == q.i) continue;
            if (first || scores.at(q.i, l) < bl) {
              first = false;
              bl = scores.at(q.i, l);
              q.l = l;
            }
          }
        }
        q.s_il = bl;
        quads.push_back(q);
      }
    } else {
      quads.push_back(mine_quadruplet(scores, labels));
    }

    if (random_positive) {
      for (Quadruplet& q : quads) {
        std::vector<std::size_t> positives;
        for (std::size_t b = 0; b < B; ++b)
          if (b != q.i && batch_labels[b] == batch_labels[q.i]) positives.push_back(b);
        q.l = positives[rng.next_index(positives.size())];
        q.s_il = scores.at(q.i, q.l);
        q.fallback = false;
      }
    }

    const double inv = 1.0 / static_cast<double>(quads.size());
    for (const Quadruplet& q : quads) {
      switch (kind) {
        case LossKind::quadruplet: {
          loss += inv * quadruplet_loss(q, margins);
          QuadrupletScoreGrads g = quadruplet_loss_grad(q, margins);
          if (g.d_s_ij != 0.0) add_score_grad(q.i, q.j, inv * g.d_s_ij);
          if (g.d_s_ik != 0.0) add_score_grad(q.i, q.k, inv * g.d_s_ik);
          if (g.d_s_il != 0.0) add_score_grad(q.i, q.l, inv * g.d_s_il);
          break;
        }
        case LossKind::triplet: {
          const double margin = margins.alpha1 + q.s_ik - q.s_ij;
          if (margin > 0.0) {
            loss += inv * margin;
            add_score_grad(q.i, q.k, inv);
            add_score_grad(q.i, q.j, -inv);
          }
          break;
        }
        case LossKind::quadruplet_dist: {
          const double value = quadruplet_as_triplets(q, dist_alpha, feats);
          loss += inv * value;
          if (value > 0.0) {
            for (std::size_t c = 0; c < feats[q.i].size(); ++c) {
              const double dij = feats[q.i][c] - feats[q.j][c];
              const double dil = feats[q.i][c] - feats[q.l][c];
              const double dik = feats[q.i][c] - feats[q.k][c];
              dfeat[q.i][c] += inv * (2.0 * dil + 2.0 * dij - 4.0 * dik);
              dfeat[q.j][c] += inv * (-2.0 * dij);
              dfeat[q.l][c] += inv * (-2.0 * dil);
              dfeat[q.k][c] += inv * (4.0 * dik);
            }
          }
          break;
        }
        case LossKind::triplet_dist: {
          const double value =
              triplet_loss({{q.i, q.j, q.k}}, dist_alpha, feats);
          loss += inv * value;
          if (value > 0.0) {
            for (std::size_t c = 0; c < feats[q.i].size(); ++c) {
              const double dij = feats[q.i][c] - feats[q.j][c];
              const double dik = feats[q.i][c] - feats[q.k][c];
              dfeat[q.i][c] += inv * (2.0 * dij - 2.0 * dik);
              dfeat[q.j][c] += inv * (-2.0 * dij);
              dfeat[q.k][c] += inv * (2.0 * dik);
            }
          }
          break;
        }
        case LossKind::nca:
          break;
      }
    }
    const Quadruplet& q0 = quads.front();
    log.s_ij = q0.s_ij;
    log.s_ik = q0.s_ik;
    log.s_il = q0.s_il;
    log.fallback = q0.fallback;
  }
  log.loss = loss;

  EmbeddingGrads eg = EmbeddingGrads::zeros(*model, trainable);
  if (trainable > 0) {
    for (std::size_t b = 0; b < B; ++b) {
      bool nonzero = false;
      for (double v : dfeat[b].values())
        if (v != 0.0) {
          nonzero = true;
          break;
        }
      if (nonzero)
        suffix_backward(*model, *batch_prefixes[b], tapes[b], dfeat[b], trainable, eg);
    }
  }
  return flatten_gradient(*head, hg, eg, with_head);
}

// Random 0..max_crop pixel crop per axis, stretched back to the full size.
Tensor augment_crop_stretch(const Tensor& image, std::size_t max_crop, SeededRng& rng) {
  const std::size_t h = image.dim(0), w = image.dim(1);
  const std::size_t crop_y = rng.next_index(max_crop + 1);
  const std::size_t crop_x = rng.next_index(max_crop + 1);
  const std::size_t off_y = crop_y > 0 ? rng.next_index(crop_y + 1) : 0;
  const std::size_t off_x = crop_x > 0 ? rng.next_index(crop_x + 1) : 0;
  if (crop_y == 0 && crop_x == 0) return image;
  Tensor cropped({h - crop_y, w - crop_x});
  for (std::size_t i = 0; i < h - crop_y; ++i)
    for (std::size_t j = 0; j < w - crop_x; ++j)
      cropped.at(i, j) = image.at(i + off_y, j + off_x);
  return resize_bilinear(cropped, h, w);
}

}  // namespace

Checkpoint run_pretrain(const Config& config, const Dataset& dataset,
                        std::vector<std::string>* recon_csv) {
  config.validate();
  if (dataset.size() == 0) raise(ErrorCode::data, "pretrain: empty dataset");
  const std::uint64_t seed = config.seed();

  SeededRng init_rng(seed, kStreamInit);
  EmbeddingModel model = EmbeddingModel::create(embedding_settings_from(config), init_rng);

  PretrainOptions opts;
  opts.epochs = static_cast<std::size_t>(config.get_int("crbm.epochs"));
  opts.batch_size = static_cast<std::size_t>(config.get_int("crbm.batch_size"));
  opts.hyper = cd_hyper_from(config);

  SeededRng pre_rng(seed, kStreamPretrain);
  for (std::size_t s = 0; s < model.stack_count(); ++s) {
    std::vector<Tensor> data;
    data.reserve(dataset.size());
    for (const Tensor& image : dataset.images)
      data.push_back(model.stack_inputs(image)[s]);
    const std::size_t stack_offset = 100 * s;
    ReconCsvSink sink = nullptr;
    if (recon_csv) {
      sink = [recon_csv, stack_offset](std::size_t epoch, std::size_t layer, double mse) {
        recon_csv->push_back(std::to_string(epoch) + "," +
                             std::to_string(stack_offset + layer) + "," +
                             csv_double(mse));
      };
    }
    pretrain_stack(model.stacks[s], data, opts, pre_rng, sink);
  }

  if (model.settings.pca_enabled) {
    for (std::size_t s = 0; s < model.stack_count(); ++s) {
      std::vector<Tensor> raws;
      for (const Tensor& image : dataset.images) {
        std::vector<Tensor> inputs = model.stack_inputs(image);
        std::vector<LayerActivation> acts = stack_forward(model.stacks[s], inputs[s]);
        std::vector<double> flat;
        if (model.settings.mode == FeatureMode::third_layer) {
          const Tensor& p = acts.back().probs.pool;
          flat.assign(p.values().begin(), p.values().end());
        } else {
          for (const LayerActivation& a : acts)
            flat.insert(flat.end(), a.probs.pool.values().begin(),
                        a.probs.pool.values().end());
        }
        raws.push_back(Tensor::vector(std::move(flat)));
      }
      model.pcas[s] = pca_fit(raws, model.settings.pca_components);
    }
    model.pca_ready = true;
  }

  Checkpoint ckpt;
  ckpt.config_snapshot = config.snapshot();
  ckpt.model = std::move(model);
  SeededRng head_rng(seed, kStreamHead);
  ckpt.head = SimilarityHead::create(ckpt.model.feature_dim());
  ckpt.head.init_weights(head_rng, config.get_double("train.head_init_stddev"));
  ckpt.head_ready = true;
  ckpt.rng = SeededRng(seed, kStreamTrain).state();
  return ckpt;
}

TrainOutputs run_train(const Config& config, const Dataset& dataset,
                       const Checkpoint& warm_start, const Checkpoint* resume,
                       const std::string& checkpoint_dir) {
  config.validate();
  const std::uint64_t seed = config.seed();
  const std::size_t P = static_cast<std::size_t>(config.get_int("train.batch_p"));
  const std::size_t K = static_cast<std::size_t>(config.get_int("train.batch_k"));
  const std::size_t iterations = static_cast<std::size_t>(config.get_int("train.iterations"));
  const std::size_t trainable = static_cast<std::size_t>(config.get_int("train.finetune_layers"));
  const double lr = config.get_double("train.learning_rate");
  const double momentum = config.get_double("train.momentum");
  const double weight_decay = config.get_double("train.weight_decay");
  const double grad_clip = config.get_double("train.grad_clip");
  const std::string optimizer = config.get_string("train.optimizer");
  const std::size_t checkpoint_every =
      static_cast<std::size_t>(config.get_int("train.checkpoint_every"));

  TrainOutputs out;
  out.checkpoint = resume ? *resume : warm_start;
  Checkpoint& ckpt = out.checkpoint;
  ckpt.config_snapshot = config.snapshot();
  if (!ckpt.head_ready)
    raise(ErrorCode::contract, "train: checkpoint has no similarity head");

  // identity -> item indices
  std::map<int, std::vector<std::size_t>> by_identity;
  for (const EvalItem& item : dataset.items)
    by_identity[item.identity].push_back(item.index);
  if (by_identity.size() < std::max<std::size_t>(P, 2))
    raise(ErrorCode::config, "train: dataset too small for the P x K batch layout");
  std::vector<int> identity_list;
  for (const auto& [id, items] : by_identity) identity_list.push_back(id);

  // Frozen layers never change during fine-tuning, so their outputs are
  // cached per image; the suffix is recomputed every pass. Augmentation
  // perturbs the raw image, so it bypasses the cache.
  const bool augment = config.get_bool("train.augment");
  const std::size_t max_crop =
      static_cast<std::size_t>(config.get_int("train.augment_max_crop"));
  std::vector<FrozenPrefix> prefixes;
  if (!augment) {
    prefixes.resize(dataset.size());
    for (std::size_t n = 0; n < dataset.size(); ++n)
      prefixes[n] = frozen_prefix(ckpt.model, dataset.images[n], trainable);
  }

  BatchWorkspace ws;
  ws.config = &config;
  ws.model = &ckpt.model;
  ws.head = &ckpt.head;
  ws.trainable = trainable;
  ws.kind = loss_kind_from(config);
  ws.margins.alpha1 = config.get_double("train.margin_alpha1");
  ws.margins.alpha2 = config.get_double("train.margin_alpha2");
  ws.dist_alpha = config.get_double("train.margin_alpha");
  ws.random_positive = config.get_string("train.positive_mode") == "random";
  ws.mine_per_identity = config.get_bool("train.mine_per_identity");

  ParamView params(ckpt.head, ckpt.model, trainable);
  SeededRng rng = SeededRng::from_state(ckpt.rng);
  std::uint64_t start_iter = ckpt.optimizer.iteration;

  if (ckpt.optimizer.velocity.empty())
    ckpt.optimizer.velocity.assign(params.size(), 0.0);
  if (ckpt.optimizer.velocity.size() != params.size())
    raise(ErrorCode::contract, "train: optimizer state does not match the model");

  auto save_to = [&](const std::string& name) {
    if (checkpoint_dir.empty()) return;
    ckpt.rng = rng.state();
    save_checkpoint((std::filesystem::path(checkpoint_dir) / name).string(), ckpt);
  };

  if (optimizer == "sgd") {
    for (std::uint64_t iter = start_iter; iter < iterations; ++iter) {
      // P identities, K images each
      std::vector<int> ids = identity_list;
      for (std::size_t i = ids.size(); i > 1; --i)
        std::swap(ids[i - 1], ids[rng.next_index(i)]);
      std::vector<std::size_t> batch;
      std::vector<int> labels;
      for (std::size_t p = 0; p < P; ++p) {
        const std::vector<std::size_t>& pool = by_identity[ids[p]];
        std::vector<std::size_t> order(pool.size());
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1], order[rng.next_index(i)]);
        for (std::size_t k = 0; k < K; ++k) {
          const std::size_t pick =
              k < pool.size() ? order[k] : rng.next_index(pool.size());
          batch.push_back(pool[pick]);
          labels.push_back(ids[p]);
        }
      }

      std::vector<FrozenPrefix> augmented;
      std::vector<const FrozenPrefix*> batch_prefixes;
      if (augment) {
        augmented.reserve(batch.size());
        for (std::size_t item : batch)
          augmented.push_back(frozen_prefix(
              ckpt.model, augment_crop_stretch(dataset.images[item], max_crop, rng),
              trainable));
        for (const FrozenPrefix& p : augmented) batch_prefixes.push_back(&p);
      } else {
        for (std::size_t item : batch) batch_prefixes.push_back(&prefixes[item]);
      }

      IterationLog log;
      std::vector<double> grad = ws.gradient(batch_prefixes, labels, rng, log);
      if (grad_clip > 0.0) {
        double norm2 = 0.0;
        for (double g : grad) norm2 += g * g;
        const double norm = std::sqrt(norm2);
        if (norm > grad_clip)
          for (double& g : grad) g *= grad_clip / norm;
      }
      std::vector<double>& vel = ckpt.optimizer.velocity;
      std::vector<double> current = params.snapshot();
      for (std::size_t i = 0; i < grad.size(); ++i) {
        vel[i] = momentum * vel[i] - lr * grad[i];
        // decay keeps the normalize layers from drifting along their flat
        // radial directions
        vel[i] -= lr * weight_decay * current[i];
      }
      params.add(vel);

      ckpt.optimizer.iteration = iter + 1;
      out.csv_rows.push_back(std::to_string(iter + 1) + "," + csv_double(log.loss) +
                             "," + csv_double(log.s_ij) + "," + csv_double(log.s_ik) +
                             "," + csv_double(log.s_il) + "," +
                             (log.fallback ? "1" : "0"));
      out.final_loss = log.loss;
      if (checkpoint_every > 0 && (iter + 1) % checkpoint_every == 0 &&
          iter + 1 < iterations)
        save_to("checkpoint_" + std::to_string(iter + 1) + ".dafe");
    }
  } else {
    // Variance-reduced fine-tuning over a fixed mini-batch partition: each
    // batch is one finite-sum sample; neighborhoods come from the batches'
    // initial mean features.
    if (augment)
      raise(ErrorCode::config,
            "train: augmentation is incompatible with the fixed-batch "
            "variance-reduced path");
    const std::size_t vr_batches =
        std::min<std::size_t>(static_cast<std::size_t>(config.get_int("train.vr_batches")),
                              by_identity.size() / 2);
    if (vr_batches < 2)
      raise(ErrorCode::config, "train: variance-reduced path needs at least 2 batches");
    std::vector<std::vector<std::size_t>> batches(vr_batches);
    std::vector<std::vector<int>> batch_labels(vr_batches);
    {
      std::vector<int> ids = identity_list;
      SeededRng part_rng(seed, 71);
      for (std::size_t i = ids.size(); i > 1; --i)
        std::swap(ids[i - 1], ids[part_rng.next_index(i)]);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        for (std::size_t item : by_identity[ids[i]]) {
          batches[i % vr_batches].push_back(item);
          batch_labels[i % vr_batches].push_back(ids[i]);
        }
      }
    }

    struct VrProblem : optim::FiniteSumProblem {
      const BatchWorkspace* ws;
      ParamView* params;
      const std::vector<std::vector<std::size_t>>* batches;
      const std::vector<std::vector<int>>* labels;
      const std::vector<FrozenPrefix>* prefixes;
      SeededRng* rng;
      double mu_value;
      mutable IterationLog last_log;

      std::size_t count() const override { return batches->size(); }
      std::size_t dim() const override { return params->size(); }
      double mu() const override { return mu_value; }
      std::vector<const FrozenPrefix*> batch_prefixes(std::size_t n) const {
        std::vector<const FrozenPrefix*> out;
        for (std::size_t item : (*batches)[n]) out.push_back(&(*prefixes)[item]);
        return out;
      }
      void sample_grad(std::size_t n, const optim::Vec& w, optim::Vec& out) const override {
        std::vector<double> keep = params->snapshot();
        params->assign(w);
        out = ws->gradient(batch_prefixes(n), (*labels)[n], *rng, last_log);
        params->assign(keep);
      }
      double value(const optim::Vec& w) const override {
        std::vector<double> keep = params->snapshot();
        params->assign(w);
        double total = 0.0;
        IterationLog log;
        SeededRng throwaway(1, 999);
        for (std::size_t n = 0; n < batches->size(); ++n) {
          ws->gradient(batch_prefixes(n), (*labels)[n], throwaway, log);
          total += log.loss;
        }
        params->assign(keep);
        return total / static_cast<double>(batches->size());
      }
    } problem;
    problem.ws = &ws;
    problem.params = &params;
    problem.batches = &batches;
    problem.labels = &batch_labels;
    problem.prefixes = &prefixes;
    problem.rng = &rng;
    problem.mu_value = 1.0;  // no strong-convexity estimate; step size is explicit

    optim::OptimizerOptions opts;
    opts.step_size = lr;
    opts.q = static_cast<std::size_t>(config.get_int("train.vr_q"));
    opts.k = static_cast<std::size_t>(config.get_int("train.vr_k"));
    auto variant = optim::variant_from_name(optimizer);
    opts.variant = variant ? *variant : optim::Variant::saga;

    optim::OptimizerState st;
    st.w = params.snapshot();
    if (ckpt.optimizer.vr_memory.empty()) {
      st.memory.assign(vr_batches, optim::Vec(params.size(), 0.0));
      st.memory_mean.assign(params.size(), 0.0);
    } else {
      st.memory = ckpt.optimizer.vr_memory;
      st.memory_mean = ckpt.optimizer.vr_memory_mean;
    }
    if (opts.variant == optim::Variant::n_saga) {
      if (ckpt.optimizer.vr_neighborhoods.empty()) {
        std::vector<optim::Vec> centers(vr_batches);
        for (std::size_t n = 0; n < vr_batches; ++n) {
          optim::Vec mean;
          for (std::size_t item : batches[n]) {
            EmbeddingTape tape = suffix_forward(ckpt.model, prefixes[item], trainable);
            if (mean.empty()) mean.assign(tape.feature.size(), 0.0);
            for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += tape.feature[i];
          }
          for (double& v : mean) v /= static_cast<double>(batches[n].size());
          centers[n] = std::move(mean);
        }
        optim::NeighborhoodIndex idx = optim::build_neighborhoods(
            centers, std::min<std::size_t>(opts.k, vr_batches));
        st.neighborhoods = idx;
        ckpt.optimizer.vr_neighborhoods = idx.sets;
      } else {
        st.neighborhoods.k = ckpt.optimizer.vr_neighborhoods.front().size();
        st.neighborhoods.sets = ckpt.optimizer.vr_neighborhoods;
      }
    }

    for (std::uint64_t iter = start_iter; iter < iterations; ++iter) {
      const std::size_t n = rng.next_index(vr_batches);
      optim::step(st, problem, n, opts, rng);
      params.assign(st.w);
      ckpt.optimizer.iteration = iter + 1;
      ckpt.optimizer.vr_memory = st.memory;
      ckpt.optimizer.vr_memory_mean = st.memory_mean;
      const IterationLog& log = problem.last_log;
      out.csv_rows.push_back(std::to_string(iter + 1) + "," + csv_double(log.loss) +
                             "," + csv_double(log.s_ij) + "," + csv_double(log.s_ik) +
                             "," + csv_double(log.s_il) + "," +
                             (log.fallback ? "1" : "0"));
      out.final_loss = log.loss;
      if (checkpoint_every > 0 && (iter + 1) % checkpoint_every == 0 &&
          iter + 1 < iterations)
        save_to("checkpoint_" + std::to_string(iter + 1) + ".dafe");
    }
  }

  ckpt.rng = rng.state();
  return out;
}

std::vector<Tensor> extract_all_features(const Checkpoint& checkpoint,
                                         const Dataset& dataset) {
  std::vector<Tensor> feats;
  feats.reserve(dataset.size());
  for (const Tensor& image : dataset.images)
    feats.push_back(checkpoint.model.features(image));
  return feats;
}

namespace {

struct FeatureScorer : ScoreMatrixFn {
  const std::vector<Tensor>* features = nullptr;
  const SimilarityHead* head = nullptr;  // null: negative squared distance
  Tensor operator()(const std::vector<std::size_t>& probe,
                    const std::vector<std::size_t>& gallery) const override {
    Tensor out({probe.size(), gallery.size()});
    for (std::size_t p = 0; p < probe.size(); ++p)
      for (std::size_t g = 0; g < gallery.size(); ++g) {
        const Tensor& fp = (*features)[probe[p]];
        const Tensor& fg = (*features)[gallery[g]];
        out.at(p, g) = head ? similarity(*head, fp, fg) : -sq_dist(fp, fg);
      }
    return out;
  }
};

}  // namespace

EvalOutputs run_eval(const Config& config, const Checkpoint& checkpoint,
                     const Dataset& dataset, std::size_t trials, bool multi_query) {
  config.validate();
  std::vector<Tensor> feats = extract_all_features(checkpoint, dataset);

  FeatureScorer scorer;
  scorer.features = &feats;
  const bool use_head = config.get_string("eval.scorer") == "head";
  if (use_head) {
    if (!checkpoint.head_ready)
      raise(ErrorCode::contract, "eval: checkpoint has no similarity head");
    scorer.head = &checkpoint.head;
  }

  SeededRng rng(config.seed(), kStreamEval);
  SplitStats stats;
  const int gallery_view = static_cast<int>(config.get_int("data.gallery_view"));
  std::vector<EvalSplit> splits =
      make_splits(dataset.items, trials, gallery_view, rng, &stats);
  EvalOutputs out;
  out.report = evaluate_splits(dataset.items, splits, scorer, multi_query);
  out.report.excluded_identities = stats.excluded_identities;

  for (std::size_t t = 0; t < out.report.per_trial_cmc.size(); ++t)
    for (std::size_t r = 0; r < out.report.per_trial_cmc[t].size(); ++r)
      out.cmc_csv.push_back(std::to_string(t) + "," + std::to_string(r + 1) + "," +
                            csv_double(out.report.per_trial_cmc[t][r]));

  auto metric = [&](const std::string& name, double value) {
    out.report_csv.push_back(name + "," + csv_double(value));
  };
  metric("trials", static_cast<double>(out.report.trials));
  for (std::size_t r : {std::size_t{1}, std::size_t{5}, std::size_t{10}, std::size_t{20}})
    if (r <= out.report.cmc.size())
      metric("rank" + std::to_string(r), out.report.cmc[r - 1]);
  metric("map", out.report.map);
  metric("excluded_identities", static_cast<double>(out.report.excluded_identities));
  metric("excluded_probes", static_cast<double>(out.report.excluded_probes));
  return out;
}

}  // namespace dafe
