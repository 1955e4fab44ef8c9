#include <cmath>
#include <map>

#include "crbm.hpp"
#include "doctest.h"
#include "error.hpp"
#include "rng.hpp"
#include "tensor.hpp"

using namespace dafe;

namespace {

Tensor random_visible(std::size_t channels, std::size_t nv, SeededRng& rng,
                      double scale = 1.0) {
  Tensor v({channels, nv, nv});
  for (double& x : v.values()) x = scale * rng.next_gaussian();
  return v;
}

CrbmLayer random_layer(std::size_t cin, std::size_t k, std::size_t nw,
                       std::size_t pool, SeededRng& rng, double stddev = 0.5) {
  CrbmLayer layer = CrbmLayer::create(cin, k, nw, pool);
  layer.init_weights(rng, stddev);
  for (double& b : layer.hidden_bias) b = 0.3 * rng.next_gaussian();
  layer.visible_bias = 0.3 * rng.next_gaussian();
  return layer;
}

// Hidden state with exactly one unit on.
Tensor unit_hidden(std::size_t k_count, std::size_t nh, std::size_t k,
                   std::size_t i, std::size_t j) {
  Tensor h({k_count, nh, nh});
  h.at(k, i, j) = 1.0;
  return h;
}

}  // namespace

TEST_CASE("bottom_up trivial signals") {
  CrbmLayer layer = CrbmLayer::create(2, 3, 2, 2);
  SeededRng rng(1);
  Tensor v = random_visible(2, 5, rng);

  Tensor zero_sig = bottom_up(v, layer);
  for (double s : zero_sig.values()) CHECK(s == 0.0);

  layer.hidden_bias = {3.0, -1.0, 0.5};
  Tensor biased = bottom_up(v, layer);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        CHECK(biased.at(k, i, j) == layer.hidden_bias[k]);
}

TEST_CASE("bottom_up matches the energy-derivative oracle") {
  SeededRng rng(2);
  // Geometry without cropping so every detection unit is a legal single-on
  // configuration: NV=5, NW=2 -> NH=4, pool 2.
  CrbmLayer layer = random_layer(2, 2, 2, 2, rng);
  Tensor v = random_visible(2, 5, rng);
  Tensor sig = bottom_up(v, layer);
  Tensor h_off({2, 4, 4});
  const double e_off = energy(v, h_off, layer);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        Tensor h_on = unit_hidden(2, 4, k, i, j);
        const double oracle = e_off - energy(v, h_on, layer);
        CHECK(sig.at(k, i, j) == doctest::Approx(oracle).epsilon(1e-10));
      }
}

TEST_CASE("block_probs uniform and saturated cases") {
  Tensor zero_sig({1, 2, 2});
  BlockActivation act = block_probs(zero_sig, 2);
  for (double p : act.detect.values()) CHECK(p == doctest::Approx(0.2));
  CHECK(act.pool.at(0, 0, 0) == doctest::Approx(0.8));

  Tensor hot({1, 2, 2});
  hot.at(0, 1, 0) = 50.0;
  BlockActivation sat = block_probs(hot, 2);
  CHECK(sat.detect.at(0, 1, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sat.pool.at(0, 0, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("block normalization and the Eq-7 identity") {
  SeededRng rng(3);
  Tensor sig({3, 6, 6});
  for (double& s : sig.values()) s = 3.0 * rng.next_gaussian();
  BlockActivation act = block_probs(sig, 2);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t bi = 0; bi < 3; ++bi)
      for (std::size_t bj = 0; bj < 3; ++bj) {
        double on = 0.0;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj)
            on += act.detect.at(k, bi * 2 + di, bj * 2 + dj);
        const double off = 1.0 - act.pool.at(k, bi, bj);
        CHECK(std::abs(on + off - 1.0) < 1e-12);
        // pooling probability is the literal sum of its block
        CHECK(act.pool.at(k, bi, bj) == on);
      }
  for (double p : act.detect.values()) {
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
}

TEST_CASE("block_probs rejects non-divisible maps") {
  Tensor sig({1, 3, 3});
  CHECK_THROWS_AS(block_probs(sig, 2), Error);
}

TEST_CASE("conditionals equal Boltzmann ratios on an enumerable instance") {
  SeededRng rng(4);
  // NV=4, NW=3 -> NH=2, one 2x2 block per filter, K=2, two input channels.
  CrbmLayer layer = random_layer(2, 2, 3, 2, rng);
  Tensor v = random_visible(2, 4, rng, 0.7);

  // Enumerate all block-constrained hidden configurations: per filter
  // 5 states (4 on-positions + off), 25 joint states.
  std::vector<double> weights;
  std::vector<std::pair<int, int>> states;  // (state of k=0, state of k=1); 4 = off
  for (int s0 = 0; s0 < 5; ++s0)
    for (int s1 = 0; s1 < 5; ++s1) {
      Tensor h({2, 2, 2});
      if (s0 < 4) h.at(0, s0 / 2, s0 % 2) = 1.0;
      if (s1 < 4) h.at(1, s1 / 2, s1 % 2) = 1.0;
      weights.push_back(std::exp(-energy(v, h, layer)));
      states.emplace_back(s0, s1);
    }
  double z = 0.0;
  for (double w : weights) z += w;

  BlockActivation act = block_probs(crop_to_multiple(bottom_up(v, layer), 2), 2);
  for (int k = 0; k < 2; ++k) {
    double p_on_total = 0.0;
    for (int pos = 0; pos < 4; ++pos) {
      double p = 0.0;
      for (std::size_t s = 0; s < states.size(); ++s) {
        int mine = k == 0 ? states[s].first : states[s].second;
        if (mine == pos) p += weights[s];
      }
      p /= z;
      CHECK(act.detect.at(k, pos / 2, pos % 2) == doctest::Approx(p).epsilon(1e-8));
      p_on_total += p;
    }
    CHECK(act.pool.at(k, 0, 0) == doctest::Approx(p_on_total).epsilon(1e-8));
  }
}

TEST_CASE("sample_block honors the constraint and the probabilities") {
  SeededRng rng(5);
  Tensor sig({2, 4, 4});
  for (double& s : sig.values()) s = rng.next_gaussian();
  BlockActivation act = block_probs(sig, 2);

  std::map<std::size_t, std::size_t> on_counts;
  const int draws = 100000;
  for (int t = 0; t < draws; ++t) {
    Tensor h = sample_block(act, rng);
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t bi = 0; bi < 2; ++bi)
        for (std::size_t bj = 0; bj < 2; ++bj) {
          double s = 0.0;
          for (std::size_t di = 0; di < 2; ++di)
            for (std::size_t dj = 0; dj < 2; ++dj)
              s += h.at(k, bi * 2 + di, bj * 2 + dj);
          REQUIRE(s <= 1.0);
        }
    for (std::size_t i = 0; i < h.size(); ++i)
      if (h[i] == 1.0) ++on_counts[i];
  }
  for (std::size_t i = 0; i < act.detect.size(); ++i) {
    const double freq = static_cast<double>(on_counts[i]) / draws;
    CHECK(std::abs(freq - act.detect[i]) < 0.01);
  }

  // all-off block stays off
  BlockActivation off;
  off.pool_size = 2;
  off.detect = Tensor({1, 2, 2});
  off.pool = Tensor({1, 1, 1});
  Tensor h = sample_block(off, rng);
  for (double v : h.values()) CHECK(v == 0.0);
}

TEST_CASE("visible_conditional trivial cases and energy-gradient oracle") {
  SeededRng rng(6);
  CrbmLayer layer = CrbmLayer::create(1, 2, 2, 2);
  layer.visible_bias = 0.4;
  Tensor h({2, 4, 4});
  h.at(0, 1, 1) = 1.0;
  Tensor mean0 = visible_conditional(h, layer);
  for (double m : mean0.values()) CHECK(m == doctest::Approx(0.4));

  Tensor hz({2, 4, 4});
  CrbmLayer layer2 = random_layer(1, 2, 2, 2, rng);
  layer2.visible_bias = -0.2;
  Tensor meanz = visible_conditional(hz, layer2);
  for (double m : meanz.values()) CHECK(m == doctest::Approx(-0.2));

  // mean_s = v_s - dE/dv_s at any v (the energy is quadratic in v)
  Tensor hs({2, 4, 4});
  hs.at(0, 0, 3) = 1.0;
  hs.at(1, 2, 0) = 1.0;
  Tensor v = random_visible(1, 5, rng);
  Tensor mean = visible_conditional(hs, layer2);
  const double eps = 1e-5;
  for (std::size_t s = 0; s < v.size(); ++s) {
    Tensor vp = v, vm = v;
    vp[s] += eps;
    vm[s] -= eps;
    const double de = (energy(vp, hs, layer2) - energy(vm, hs, layer2)) / (2 * eps);
    CHECK(mean[s] == doctest::Approx(v[s] - de).epsilon(1e-6));
  }
}

TEST_CASE("energy closed-form cases and constraint checks") {
  CrbmLayer layer = CrbmLayer::create(1, 1, 1, 1);
  Tensor v = Tensor::full({1, 2, 2}, 1.0);
  Tensor h({1, 2, 2});
  CHECK(energy(v, h, layer) == doctest::Approx(2.0));

  Tensor v0({1, 2, 2});
  CHECK(energy(v0, h, layer) == 0.0);

  CrbmLayer pooled = CrbmLayer::create(1, 1, 2, 2);
  Tensor vv({1, 5, 5});
  Tensor bad({1, 4, 4});
  bad.at(0, 0, 0) = 1.0;
  bad.at(0, 0, 1) = 1.0;  // two in one block
  CHECK_THROWS_AS(energy(vv, bad, pooled), Error);
  Tensor nonbinary({1, 4, 4});
  nonbinary.at(0, 0, 0) = 0.5;
  CHECK_THROWS_AS(energy(vv, nonbinary, pooled), Error);
}

TEST_CASE("weight initialization variance matches the configured 0.01") {
  SeededRng rng(7);
  CrbmLayer layer = CrbmLayer::create(3, 10, 8, 2);
  layer.init_weights(rng, 0.1);
  double mean = 0.0;
  for (double w : layer.filters.values()) mean += w;
  mean /= layer.filters.size();
  double var = 0.0;
  for (double w : layer.filters.values()) var += (w - mean) * (w - mean);
  var /= layer.filters.size();
  CHECK(std::abs(var - 0.01) < 0.002);
  for (double b : layer.hidden_bias) CHECK(b == 0.0);
}

TEST_CASE("cd_update leaves a zero model on zero data untouched") {
  CrbmLayer layer = CrbmLayer::create(1, 2, 2, 2);
  CdTrainState state;
  CdHyper hyper;
  hyper.sparsity_weight = 0.0;
  SeededRng rng(8);
  std::vector<Tensor> batch(3, Tensor({1, 5, 5}));
  CdStats stats = cd_update(layer, state, batch, hyper, rng);
  // data == reconstruction == 0, so the CD gradient vanishes and decay acts
  // on zero weights
  for (double w : layer.filters.values()) CHECK(w == 0.0);
  for (double b : layer.hidden_bias) CHECK(b == 0.0);
  CHECK(layer.visible_bias == 0.0);
  CHECK(stats.recon_mse == 0.0);
  CHECK_THROWS_AS(cd_update(layer, state, {}, hyper, rng), Error);
}

TEST_CASE("cd_update learns tiny stripe images") {
  SeededRng rng(9);
  // vertical/horizontal stripes on 6x6
  std::vector<Tensor> data;
  for (int n = 0; n < 60; ++n) {
    Tensor img({1, 6, 6});
    const bool vertical = rng.next_index(2) == 0;
    const std::size_t period = 2 + rng.next_index(2);
    const std::size_t phase = rng.next_index(period);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 6; ++j) {
        std::size_t coord = vertical ? j : i;
        img.at(0, i, j) = ((coord + phase) % period) * 2 < period ? 1.0 : -1.0;
      }
    data.push_back(img);
  }
  CrbmLayer layer = CrbmLayer::create(1, 4, 3, 2);
  layer.init_weights(rng, 0.1);
  CdTrainState state;
  CdHyper hyper;
  double first = 0.0, last = 0.0;
  for (int epoch = 0; epoch < 12; ++epoch) {
    double mse = 0.0;
    for (std::size_t start = 0; start < data.size(); start += 10) {
      std::vector<Tensor> batch(data.begin() + start, data.begin() + start + 10);
      mse += cd_update(layer, state, batch, hyper, rng).recon_mse;
    }
    mse /= 6.0;
    if (epoch == 0) first = mse;
    last = mse;
  }
  CHECK(last < first);
}

TEST_CASE("pretraining freezes lower layers") {
  SeededRng data_rng(10);
  std::vector<Tensor> data;
  for (int n = 0; n < 12; ++n) data.push_back(random_visible(1, 8, data_rng, 0.5));

  auto build = [](std::size_t layers) {
    CdbnStack stack;
    stack.layers.push_back(CrbmLayer::create(1, 2, 3, 2));  // 8->6->pool 3
    if (layers > 1) stack.layers.push_back(CrbmLayer::create(2, 3, 2, 2));  // 3->2->pool 1
    SeededRng init(77);
    for (CrbmLayer& l : stack.layers) l.init_weights(init, 0.1);
    stack.initialized = true;
    return stack;
  };

  PretrainOptions opts;
  opts.epochs = 3;
  opts.batch_size = 4;

  CdbnStack deep = build(2);
  SeededRng rng_a(123);
  pretrain_stack(deep, data, opts, rng_a);
  CHECK(deep.pretrained);

  CdbnStack shallow = build(1);
  SeededRng rng_b(123);
  pretrain_stack(shallow, data, opts, rng_b);

  CHECK(deep.layers[0].filters.values() == shallow.layers[0].filters.values());
  CHECK(deep.layers[0].hidden_bias == shallow.layers[0].hidden_bias);
  CHECK(deep.layers[0].visible_bias == shallow.layers[0].visible_bias);
}

TEST_CASE("extract_features is unit-norm, deterministic, and shaped by the geometry") {
  SeededRng rng(11);
  CdbnStack stack;
  stack.layers.push_back(CrbmLayer::create(1, 2, 3, 2));
  stack.layers.push_back(CrbmLayer::create(2, 3, 2, 2));
  for (CrbmLayer& l : stack.layers) l.init_weights(rng, 0.3);
  stack.initialized = true;

  Tensor input = random_visible(1, 8, rng);
  Tensor f1 = extract_features(stack, input, FeatureMode::third_layer);
  Tensor f2 = extract_features(stack, input, FeatureMode::third_layer);
  CHECK(f1.values() == f2.values());
  CHECK(std::abs(std::sqrt(dot(f1, f1)) - 1.0) < 1e-12);

  // 8 -> 6 -> pool 3; 3 -> 2 -> pool 1: last layer flattens to 3 values
  CHECK(f1.size() == 3);
  Tensor fc = extract_features(stack, input, FeatureMode::concat_all);
  CHECK(fc.size() == 2 * 3 * 3 + 3);

  CdbnStack empty;
  CHECK_THROWS_AS(extract_features(empty, input, FeatureMode::third_layer), Error);
}

TEST_CASE("paper layer geometry lands at 5760 third-layer features") {
  SeededRng rng(12);
  CdbnStack stack;
  stack.layers.push_back(CrbmLayer::create(1, 40, 12, 2));
  stack.layers.push_back(CrbmLayer::create(40, 100, 10, 2));
  stack.layers.push_back(CrbmLayer::create(100, 40, 6, 2));
  for (CrbmLayer& l : stack.layers) l.init_weights(rng, 0.1);
  stack.initialized = true;

  LayerGeometry g1 = layer_geometry(stack.layers[0], 150);
  CHECK(g1.detect == 139);
  CHECK(g1.detect_cropped == 138);
  CHECK(g1.pooled == 69);
  LayerGeometry g2 = layer_geometry(stack.layers[1], 69);
  CHECK(g2.detect == 60);
  CHECK(g2.pooled == 30);
  LayerGeometry g3 = layer_geometry(stack.layers[2], 30);
  CHECK(g3.detect == 25);
  CHECK(g3.detect_cropped == 24);
  CHECK(g3.pooled == 12);

  Tensor input = random_visible(1, 150, rng, 0.5);
  Tensor f = extract_features(stack, input, FeatureMode::third_layer);
  CHECK(f.size() == 40 * 12 * 12);
}

TEST_CASE("zero bridge weights reduce the augmented softmax to block_probs") {
  SeededRng rng(13);
  Tensor sig({2, 4, 4});
  for (double& s : sig.values()) s = rng.next_gaussian();
  Tensor zero_top({2, 2, 2});
  BlockActivation plain = block_probs(sig, 2);
  BlockActivation augmented = augmented_block_probs(sig, zero_top, 2);
  CHECK(plain.detect.values() == augmented.detect.values());
  CHECK(plain.pool.values() == augmented.pool.values());
}

TEST_CASE("gibbs chains are bitwise reproducible under a fixed seed") {
  SeededRng init(14);
  CdbnStack stack;
  stack.layers.push_back(CrbmLayer::create(1, 2, 2, 2));
  stack.layers.push_back(CrbmLayer::create(2, 2, 2, 1));
  for (CrbmLayer& l : stack.layers) l.init_weights(init, 0.4);
  stack.initialized = true;
  Tensor input = random_visible(1, 5, init, 0.5);

  SeededRng rng1(555), rng2(555);
  std::vector<Tensor> a = gibbs_sample_all(stack, input, 25, rng1);
  std::vector<Tensor> b = gibbs_sample_all(stack, input, 25, rng2);
  REQUIRE(a.size() == b.size());
  for (std::size_t l = 0; l < a.size(); ++l) CHECK(a[l].values() == b[l].values());
  CHECK_THROWS_AS(gibbs_sample_all(stack, input, 0, rng1), Error);
}

TEST_CASE("gibbs marginals match enumeration of the stack's joint") {
  SeededRng setup(15);
  // Layer 1: 3x3 visible, 2x2 filter -> 2x2 detection, one block, 1x1 pool.
  // Layer 2: 1x1 visible, 1x1 filter, pool 1.
  CdbnStack stack;
  stack.layers.push_back(CrbmLayer::create(1, 1, 2, 2));
  stack.layers.push_back(CrbmLayer::create(1, 1, 1, 1));
  stack.layers[0].init_weights(setup, 0.5);
  stack.layers[0].hidden_bias[0] = 0.2;
  stack.layers[0].visible_bias = 0.1;
  stack.layers[1].filters.at4(0, 0, 0, 0) = 0.8;
  stack.layers[1].hidden_bias[0] = -0.2;
  stack.initialized = true;

  const CrbmLayer& l1 = stack.layers[0];
  const CrbmLayer& l2 = stack.layers[1];
  const std::size_t nw = 2;

  // Enumerate (h1, h2): h1 in {off, 4 positions}, h2 in {0,1}; the visible
  // layer integrates out in closed form (Gaussian with unit variance).
  auto log_weight = [&](int s1, int h2) {
    double b_term = 0.0;
    double p1 = 0.0;
    Tensor h1({1, 2, 2});
    if (s1 < 4) {
      h1.at(0, s1 / 2, s1 % 2) = 1.0;
      b_term = l1.hidden_bias[0];
      p1 = 1.0;
    }
    double quad = 0.0;
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = 0; b < 3; ++b) {
        // top-down drive onto visible site (a,b), straight from the energy
        double t = 0.0;
        for (std::size_t i = 0; i < 2; ++i)
          for (std::size_t j = 0; j < 2; ++j) {
            if (h1.at(0, i, j) == 0.0) continue;
            if (a < i || b < j || a - i >= nw || b - j >= nw) continue;
            t += l1.filters.at4(0, 0, nw - 1 - (a - i), nw - 1 - (b - j));
          }
        const double m = l1.visible_bias + t;
        quad += 0.5 * m * m;
      }
    const double i2 = l2.hidden_bias[0] + l2.filters.at4(0, 0, 0, 0) * p1;
    return b_term + quad + h2 * i2;
  };

  double z = 0.0;
  double expect_h1[5] = {0, 0, 0, 0, 0};  // positions 0..3, then off
  double expect_h2 = 0.0;
  for (int s1 = 0; s1 < 5; ++s1)
    for (int h2 = 0; h2 < 2; ++h2) {
      const double w = std::exp(log_weight(s1, h2));
      z += w;
      expect_h1[s1] += w;
      if (h2 == 1) expect_h2 += w;
    }
  for (double& e : expect_h1) e /= z;
  expect_h2 /= z;

  Tensor input = random_visible(1, 3, setup, 0.5);
  SeededRng rng(999);
  GibbsChain chain(stack, input, rng);
  const int sweeps = 10000;
  double freq_h1[5] = {0, 0, 0, 0, 0};
  double freq_h2 = 0.0;
  for (int s = 0; s < sweeps; ++s) {
    chain.sweep();
    const Tensor& h1 = chain.hidden()[0];
    int state = 4;
    for (int pos = 0; pos < 4; ++pos)
      if (h1.at(0, pos / 2, pos % 2) == 1.0) state = pos;
    freq_h1[state] += 1.0;
    freq_h2 += chain.hidden()[1].at(0, 0, 0);
  }
  for (double& f : freq_h1) f /= sweeps;
  freq_h2 /= sweeps;

  for (int s1 = 0; s1 < 5; ++s1) CHECK(std::abs(freq_h1[s1] - expect_h1[s1]) < 0.02);
  CHECK(std::abs(freq_h2 - expect_h2) < 0.02);
}

TEST_CASE("pool_prob_backward matches finite differences of the pooling map") {
  SeededRng rng(16);
  Tensor sig({2, 4, 4});
  for (double& s : sig.values()) s = rng.next_gaussian();
  BlockActivation act = block_probs(sig, 2);
  Tensor dpool({2, 2, 2});
  for (double& d : dpool.values()) d = rng.next_gaussian();
  Tensor dsig = pool_prob_backward(act, dpool);

  const double eps = 1e-6;
  for (std::size_t idx = 0; idx < sig.size(); ++idx) {
    Tensor sp = sig, sm = sig;
    sp[idx] += eps;
    sm[idx] -= eps;
    BlockActivation ap = block_probs(sp, 2), am = block_probs(sm, 2);
    double fd = 0.0;
    for (std::size_t p = 0; p < dpool.size(); ++p)
      fd += dpool[p] * (ap.pool[p] - am.pool[p]) / (2 * eps);
    CHECK(dsig[idx] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("bottom_up_backward matches finite differences") {
  SeededRng rng(17);
  CrbmLayer layer = random_layer(2, 2, 3, 1, rng);
  Tensor v = random_visible(2, 5, rng);
  Tensor dsig({2, 3, 3});
  for (double& d : dsig.values()) d = rng.next_gaussian();

  Tensor dw(layer.filters.shape());
  std::vector<double> db(2, 0.0);
  Tensor dv(v.shape());
  bottom_up_backward(v, layer, dsig, &dw, &db, &dv);

  auto loss = [&](const CrbmLayer& l, const Tensor& vis) {
    Tensor sig = bottom_up(vis, l);
    return dot(sig, dsig);
  };
  const double eps = 1e-6;
  for (std::size_t i = 0; i < layer.filters.size(); ++i) {
    CrbmLayer lp = layer, lm = layer;
    lp.filters[i] += eps;
    lm.filters[i] -= eps;
    const double fd = (loss(lp, v) - loss(lm, v)) / (2 * eps);
    CHECK(dw[i] == doctest::Approx(fd).epsilon(1e-5));
  }
  for (std::size_t k = 0; k < 2; ++k) {
    CrbmLayer lp = layer, lm = layer;
    lp.hidden_bias[k] += eps;
    lm.hidden_bias[k] -= eps;
    const double fd = (loss(lp, v) - loss(lm, v)) / (2 * eps);
    CHECK(db[k] == doctest::Approx(fd).epsilon(1e-5));
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    Tensor vp = v, vm = v;
    vp[i] += eps;
    vm[i] -= eps;
    const double fd = (loss(layer, vp) - loss(layer, vm)) / (2 * eps);
    CHECK(dv[i] == doctest::Approx(fd).epsilon(1e-5));
  }
}
