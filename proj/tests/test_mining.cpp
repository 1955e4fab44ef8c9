#include <array>
#include <cmath>
#include <limits>

#include "doctest.h"
#include "error.hpp"
#include "mining.hpp"
#include "rng.hpp"
#include "tensor.hpp"

using namespace dafe;

namespace {

Tensor symmetric_scores(std::size_t n, SeededRng& rng) {
  Tensor s({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      s.at(i, j) = s.at(j, i) = rng.next_gaussian();
  return s;
}

// Exhaustive reimplementation of the three-step selection with the same
// lowest-flat-index tie break and fallback rule.
Quadruplet mine_reference(const Tensor& s, const BatchLabels& labels) {
  const std::size_t n = labels.size();
  Quadruplet q;
  double best = std::numeric_limits<double>::infinity();
  bool found = false;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || labels.labels[i] != labels.labels[j]) continue;
      if (!found || s.at(i, j) < best) {
        found = true;
        best = s.at(i, j);
        q.i = i;
        q.j = j;
      }
    }
  REQUIRE(found);
  q.s_ij = best;
  double bneg = -std::numeric_limits<double>::infinity();
  bool hneg = false;
  for (std::size_t k = 0; k < n; ++k) {
    if (labels.labels[k] == labels.labels[q.i]) continue;
    if (!hneg || s.at(q.i, k) > bneg) {
      hneg = true;
      bneg = s.at(q.i, k);
      q.k = k;
    }
  }
  REQUIRE(hneg);
  q.s_ik = bneg;
  double bl = std::numeric_limits<double>::infinity();
  bool hl = false;
  for (std::size_t l = 0; l < n; ++l) {
    if (l == q.i || labels.labels[l] != labels.labels[q.i]) continue;
    if (s.at(q.i, l) > q.s_ik && (!hl || s.at(q.i, l) < bl)) {
      hl = true;
      bl = s.at(q.i, l);
      q.l = l;
    }
  }
  if (!hl) {
    q.fallback = true;
    bool first = true;
    for (std::size_t l = 0; l < n; ++l) {
      if (l == q.i || labels.labels[l] != labels.labels[q.i]) continue;
      if (first || s.at(q.i, l) < bl) {
        first = false;
        bl = s.at(q.i, l);
        q.l = l;
      }
    }
  }
  q.s_il = bl;
  return q;
}

std::vector<Tensor> random_features(std::size_t n, std::size_t d, SeededRng& rng) {
  std::vector<Tensor> f;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor t({d});
    for (double& v : t.values()) v = rng.next_gaussian();
    f.push_back(t);
  }
  return f;
}

}  // namespace

TEST_CASE("mining walks the documented example") {
  BatchLabels labels{{0, 0, 1, 1}};
  Tensor s({4, 4});
  auto set = [&](std::size_t a, std::size_t b, double v) {
    s.at(a, b) = s.at(b, a) = v;
  };
  set(0, 1, 0.6);
  set(2, 3, 0.4);
  set(0, 2, 0.5);
  set(0, 3, 0.1);
  set(1, 2, 0.3);
  set(1, 3, 0.2);

  Quadruplet q = mine_quadruplet(s, labels);
  CHECK(q.i == 2);
  CHECK(q.j == 3);
  CHECK(q.k == 0);
  CHECK(q.l == 3);
  CHECK(q.fallback);
  CHECK(q.s_ij == doctest::Approx(0.4));
  CHECK(q.s_ik == doctest::Approx(0.5));
  CHECK(q.s_il == doctest::Approx(0.4));
}

TEST_CASE("single-candidate batches are forced") {
  BatchLabels labels{{0, 0, 1}};
  Tensor s({3, 3});
  s.at(0, 1) = s.at(1, 0) = 0.9;
  s.at(0, 2) = s.at(2, 0) = 0.1;
  s.at(1, 2) = s.at(2, 1) = 0.3;
  Quadruplet q = mine_quadruplet(s, labels);
  CHECK(q.i == 0);
  CHECK(q.j == 1);
  CHECK(q.k == 2);
  CHECK(q.l == 1);
}

TEST_CASE("mining errors") {
  BatchLabels no_pos{{0, 1, 2}};
  Tensor s({3, 3});
  CHECK_THROWS_AS(mine_quadruplet(s, no_pos), Error);
  BatchLabels no_neg{{0, 0, 0}};
  CHECK_THROWS_AS(mine_quadruplet(s, no_neg), Error);
}

TEST_CASE("mining equals the exhaustive oracle on random batches") {
  SeededRng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t ids = 2 + rng.next_index(6);
    const std::size_t per = 1 + rng.next_index(4);
    std::vector<int> labels;
    for (std::size_t id = 0; id < ids; ++id)
      for (std::size_t r = 0; r < per; ++r) labels.push_back(static_cast<int>(id));
    while (labels.size() > 32) labels.pop_back();
    BatchLabels bl{labels};
    // need at least one positive pair
    bool has_pos = false;
    for (std::size_t a = 0; a < labels.size() && !has_pos; ++a)
      for (std::size_t b = a + 1; b < labels.size(); ++b)
        if (labels[a] == labels[b]) {
          has_pos = true;
          break;
        }
    if (!has_pos) {
      bl.labels.push_back(bl.labels.back());
    }
    Tensor s = symmetric_scores(bl.size(), rng);
    Quadruplet got = mine_quadruplet(s, bl);
    Quadruplet want = mine_reference(s, bl);
    CHECK(got.i == want.i);
    CHECK(got.j == want.j);
    CHECK(got.k == want.k);
    CHECK(got.l == want.l);
    CHECK(got.fallback == want.fallback);

    // adding a constant to every score must not change the selection
    Tensor shifted = s;
    for (double& v : shifted.values()) v += 3.25;
    Quadruplet sh = mine_quadruplet(shifted, bl);
    CHECK(sh.i == got.i);
    CHECK(sh.j == got.j);
    CHECK(sh.k == got.k);
    CHECK(sh.l == got.l);
  }
}

TEST_CASE("quadruplet loss arithmetic and bounds") {
  Margins m;
  Quadruplet q;
  q.s_ij = 0.9;
  q.s_ik = 0.2;
  q.s_il = 0.8;
  CHECK(quadruplet_loss(q, m) == doctest::Approx(0.3));

  // both margins satisfied with slack
  q.s_ij = 2.0;
  q.s_il = 1.5;
  q.s_ik = 0.0;
  CHECK(quadruplet_loss(q, m) == 0.0);

  Margins bad;
  bad.alpha1 = 0.5;
  bad.alpha2 = 0.5;
  CHECK_THROWS_AS(quadruplet_loss(q, bad), Error);

  // loss is zero exactly on the satisfied region
  SeededRng rng(2);
  for (int t = 0; t < 200; ++t) {
    Quadruplet r;
    r.s_ij = rng.next_gaussian();
    r.s_ik = rng.next_gaussian();
    r.s_il = rng.next_gaussian();
    const double loss = quadruplet_loss(r, m);
    CHECK(loss >= 0.0);
    const bool satisfied =
        r.s_ij >= r.s_ik + m.alpha1 && r.s_il >= r.s_ik + m.alpha2;
    CHECK((loss == 0.0) == satisfied);

    // monotonicity: raising s_ij never increases the loss; raising s_ik
    // never decreases it
    Quadruplet up = r;
    up.s_ij += 0.3;
    CHECK(quadruplet_loss(up, m) <= loss);
    Quadruplet harder = r;
    harder.s_ik += 0.3;
    CHECK(quadruplet_loss(harder, m) >= loss);
  }
}

TEST_CASE("quadruplet loss gradients follow the active hinges") {
  Margins m;
  Quadruplet q;
  q.s_ij = 2.0;
  q.s_il = 1.5;
  q.s_ik = 0.0;
  QuadrupletScoreGrads g = quadruplet_loss_grad(q, m);
  CHECK(g.d_s_ij == 0.0);
  CHECK(g.d_s_ik == 0.0);
  CHECK(g.d_s_il == 0.0);

  q.s_ij = 0.5;  // first hinge active: 1 + 0 - 0.5 > 0
  q.s_il = 1.5;  // second inactive
  g = quadruplet_loss_grad(q, m);
  CHECK(g.d_s_ij == -1.0);
  CHECK(g.d_s_ik == 1.0);
  CHECK(g.d_s_il == 0.0);

  q.s_il = 0.1;  // both active
  g = quadruplet_loss_grad(q, m);
  CHECK(g.d_s_ij == -1.0);
  CHECK(g.d_s_ik == 2.0);
  CHECK(g.d_s_il == -1.0);
}

TEST_CASE("triplet loss basics and oracle") {
  SeededRng rng(3);
  std::vector<Tensor> f = random_features(6, 5, rng);
  f[1] = f[0];  // positive identical to anchor
  // negative far away
  for (double& v : f[2].values()) v += 10.0;
  CHECK(triplet_loss({{0, 1, 2}}, 1.0, f) == 0.0);

  // positive == negative collapses to the margin
  f[3] = f[4];
  CHECK(triplet_loss({{5, 3, 4}}, 0.7, f) == doctest::Approx(0.7));

  std::vector<std::array<std::size_t, 3>> trips = {{0, 3, 2}, {1, 4, 5}, {2, 0, 3}};
  double expect = 0.0;
  for (const auto& [i, j, k] : trips) {
    double pos = 0.0, neg = 0.0;
    for (std::size_t c = 0; c < 5; ++c) {
      pos += (f[i][c] - f[j][c]) * (f[i][c] - f[j][c]);
      neg += (f[i][c] - f[k][c]) * (f[i][c] - f[k][c]);
    }
    expect += std::max(0.0, pos - neg + 0.4);
  }
  expect /= 3.0;
  CHECK(triplet_loss(trips, 0.4, f) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("quadruplet-as-triplets consistency") {
  SeededRng rng(4);
  std::vector<Tensor> f = random_features(4, 6, rng);
  Quadruplet q;
  q.i = 0;
  q.j = 1;
  q.l = 2;
  q.k = 3;

  // all features equal -> 2 alpha
  std::vector<Tensor> same(4, f[0]);
  CHECK(quadruplet_as_triplets(q, 0.6, same) == doctest::Approx(1.2));

  // identical j and l: the combined expression is twice one triplet term
  std::vector<Tensor> jl = f;
  jl[2] = jl[1];
  double dik = 0.0, dij = 0.0;
  for (std::size_t c = 0; c < 6; ++c) {
    dik += (jl[0][c] - jl[3][c]) * (jl[0][c] - jl[3][c]);
    dij += (jl[0][c] - jl[1][c]) * (jl[0][c] - jl[1][c]);
  }
  CHECK(quadruplet_as_triplets(q, 0.5, jl) ==
        doctest::Approx(std::max(0.0, 2.0 * (dij - dik + 0.5))));

  // combined form equals the sum of the two triplet terms before hinging
  for (int t = 0; t < 50; ++t) {
    std::vector<Tensor> r = random_features(4, 6, rng);
    double dik2 = 0.0, dil2 = 0.0, dij2 = 0.0;
    for (std::size_t c = 0; c < 6; ++c) {
      dik2 += (r[0][c] - r[3][c]) * (r[0][c] - r[3][c]);
      dil2 += (r[0][c] - r[2][c]) * (r[0][c] - r[2][c]);
      dij2 += (r[0][c] - r[1][c]) * (r[0][c] - r[1][c]);
    }
    const double alpha = 0.3;
    const double term1 = dil2 - dik2 + alpha;
    const double term2 = dij2 - dik2 + alpha;
    const double combined = dil2 + dij2 - 2.0 * dik2 + 2.0 * alpha;
    CHECK(std::abs((term1 + term2) - combined) < 1e-12);
    CHECK(quadruplet_as_triplets(q, alpha, r) ==
          doctest::Approx(std::max(0.0, combined)).epsilon(1e-12));
  }
}

TEST_CASE("nca loss limits and oracle") {
  // perfectly separated classes drive the loss to zero
  std::vector<Tensor> sep;
  BatchLabels two{{0, 0, 1, 1}};
  sep.push_back(Tensor::vector({0.0, 0.0}));
  sep.push_back(Tensor::vector({0.1, 0.0}));
  sep.push_back(Tensor::vector({30.0, 0.0}));
  sep.push_back(Tensor::vector({30.1, 0.0}));
  CHECK(nca_loss(sep, two).loss < 1e-8);

  // identical features, balanced classes of size k
  const std::size_t k = 3;
  std::vector<Tensor> same(2 * k, Tensor::vector({1.0, 2.0}));
  BatchLabels balanced{{0, 0, 0, 1, 1, 1}};
  const double expect = -std::log(double(k - 1) / double(2 * k - 1));
  CHECK(nca_loss(same, balanced).loss == doctest::Approx(expect).epsilon(1e-12));

  // random batch against a direct double loop
  SeededRng rng(5);
  std::vector<Tensor> f = random_features(7, 4, rng);
  BatchLabels labels{{0, 1, 0, 1, 2, 2, 0}};
  NcaResult got = nca_loss(f, labels);
  double want = 0.0;
  for (std::size_t a = 0; a < 7; ++a) {
    double num = 0.0, den = 0.0;
    for (std::size_t b = 0; b < 7; ++b) {
      if (a == b) continue;
      double d2 = 0.0;
      for (std::size_t c = 0; c < 4; ++c)
        d2 += (f[a][c] - f[b][c]) * (f[a][c] - f[b][c]);
      const double w = std::exp(-d2);
      den += w;
      if (labels.labels[a] == labels.labels[b]) num += w;
    }
    want += -std::log(num / den);
  }
  want /= 7.0;
  CHECK(got.loss == doctest::Approx(want).epsilon(1e-12));
  CHECK(got.skipped == 0);

  // lone member of a class is skipped and counted
  BatchLabels lonely{{0, 0, 1, 1, 2, 0, 0}};
  NcaResult with_skip = nca_loss(f, lonely);
  CHECK(with_skip.skipped == 1);

  std::vector<Tensor> one_class(3, f[0]);
  CHECK_THROWS_AS(nca_loss(one_class, BatchLabels{{1, 1, 1}}), Error);
}
