#include <cmath>
#include <numeric>

#include "doctest.h"
#include "error.hpp"
#include "rng.hpp"
#include "simhead.hpp"
#include "tensor.hpp"

using namespace dafe;

namespace {

Tensor random_unit(std::size_t d, SeededRng& rng) {
  Tensor f({d});
  for (double& v : f.values()) v = rng.next_gaussian();
  return l2_normalize(f);
}

// Flattened view over all head parameters for finite differencing.
std::vector<double*> parameter_slots(SimilarityHead& head) {
  std::vector<double*> slots;
  for (Tensor* t : {&head.w_e, &head.b_e, &head.w_u, &head.b_u, &head.w_c,
                    &head.b_c, &head.w_s})
    for (double& v : t->values()) slots.push_back(&v);
  slots.push_back(&head.b_s);
  return slots;
}

std::vector<double> gradient_slots(const SimilarityHead& head, const HeadGradients& g) {
  std::vector<double> flat;
  for (const Tensor* t : {&g.w_e, &g.b_e, &g.w_u, &g.b_u, &g.w_c, &g.b_c, &g.w_s})
    flat.insert(flat.end(), t->values().begin(), t->values().end());
  flat.push_back(g.b_s);
  (void)head;
  return flat;
}

}  // namespace

TEST_CASE("pair features: identical, antipodal, swapped") {
  SeededRng rng(1);
  Tensor f = random_unit(6, rng);
  Tensor e, u;
  pair_features(f, f, e, u);
  for (double v : e.values()) CHECK(v == 0.0);
  CHECK(u.values() == f.values());

  Tensor neg({6});
  for (std::size_t i = 0; i < 6; ++i) neg[i] = -f[i];
  pair_features(f, neg, e, u);
  for (double v : u.values()) CHECK(v == 0.0);

  Tensor g = random_unit(6, rng);
  Tensor e1, u1, e2, u2;
  pair_features(f, g, e1, u1);
  pair_features(g, f, e2, u2);
  CHECK(e1.values() == e2.values());
  CHECK(u1.values() == u2.values());
}

TEST_CASE("constant head scores a constant") {
  SimilarityHead head = SimilarityHead::create(4);
  head.b_s = 0.7;
  SeededRng rng(2);
  for (int t = 0; t < 5; ++t) {
    Tensor fi = random_unit(4, rng), fj = random_unit(4, rng);
    CHECK(similarity(head, fi, fj) == doctest::Approx(0.7));
  }
}

TEST_CASE("score is symmetric bit for bit") {
  SeededRng rng(3);
  for (int t = 0; t < 20; ++t) {
    SimilarityHead head = SimilarityHead::create(8);
    head.init_weights(rng, 0.5);
    Tensor fi = random_unit(8, rng), fj = random_unit(8, rng);
    CHECK(similarity(head, fi, fj) == similarity(head, fj, fi));
  }
}

TEST_CASE("hand-evaluated 2-d instance") {
  SimilarityHead head = SimilarityHead::create(2);
  head.w_e.at(0, 0) = 1.0;
  head.w_e.at(1, 1) = 1.0;
  head.w_u.at(0, 0) = 1.0;
  head.w_u.at(1, 1) = 1.0;
  // rows of w_c sum each half of the concatenation
  head.w_c.at(0, 0) = 1.0;
  head.w_c.at(0, 1) = 1.0;
  head.w_c.at(1, 2) = 1.0;
  head.w_c.at(1, 3) = 1.0;
  head.w_s[0] = 1.0;
  head.w_s[1] = 1.0;

  Tensor fi = Tensor::vector({1.0, 0.0});
  Tensor fj = Tensor::vector({0.0, 1.0});
  PairFeatures fwd = similarity_forward(head, fi, fj);
  const double r = std::sqrt(2.0) / 2.0;
  CHECK(fwd.e.values() == std::vector<double>{1.0, 1.0});
  CHECK(fwd.u.values() == std::vector<double>{0.5, 0.5});
  CHECK(fwd.ebar[0] == doctest::Approx(r));
  CHECK(fwd.ebar[1] == doctest::Approx(r));
  CHECK(fwd.ubar[0] == doctest::Approx(r));
  CHECK(fwd.ubar[1] == doctest::Approx(r));
  // c = (ebar0 + ebar1, ubar0 + ubar1) = (sqrt 2, sqrt 2); S = 2 sqrt 2
  CHECK(fwd.score == doctest::Approx(2.0 * std::sqrt(2.0)));
}

TEST_CASE("degenerate gradients and trivial partials") {
  SeededRng rng(4);
  SimilarityHead head = SimilarityHead::create(5);
  head.init_weights(rng, 0.5);
  head.w_s.fill(0.0);  // constant-output head
  Tensor fi = random_unit(5, rng), fj = random_unit(5, rng);
  HeadGradients g = similarity_grad(head, fi, fj);
  for (double v : g.f_i.values()) CHECK(v == 0.0);
  for (double v : g.f_j.values()) CHECK(v == 0.0);
  CHECK(g.b_s == 1.0);

  head.init_weights(rng, 0.5);
  HeadGradients g2 = similarity_grad(head, fi, fj);
  CHECK(g2.b_s == 1.0);
}

namespace {

// The Eq. 2-3 pipeline written out long-hand, without the unit-norm
// precondition, so features can be perturbed for finite differencing.
double raw_score(const SimilarityHead& h, const Tensor& fa, const Tensor& fb) {
  const std::size_t d = h.dim;
  Tensor e, u;
  pair_features(fa, fb, e, u);
  Tensor ze({d}), zu({d});
  for (std::size_t r = 0; r < d; ++r) {
    double se = h.b_e[r], su = h.b_u[r];
    for (std::size_t c = 0; c < d; ++c) {
      se += h.w_e.at(r, c) * e[c];
      su += h.w_u.at(r, c) * u[c];
    }
    ze[r] = se;
    zu[r] = su;
  }
  Tensor eb = l2_normalize(relu(ze));
  Tensor ub = l2_normalize(relu(zu));
  double s = h.b_s;
  for (std::size_t r = 0; r < d; ++r) {
    double zc = h.b_c[r];
    for (std::size_t c = 0; c < d; ++c)
      zc += h.w_c.at(r, c) * eb[c] + h.w_c.at(r, d + c) * ub[c];
    s += h.w_s[r] * std::max(0.0, zc);
  }
  return s;
}

}  // namespace

TEST_CASE("analytic gradients match central finite differences") {
  const std::size_t d = 16;
  const double fd_step = 1e-5;
  int checked_seeds = 0;
  for (std::uint64_t seed = 0; checked_seeds < 3 && seed < 20; ++seed) {
    SeededRng local(100 + seed);
    SimilarityHead head = SimilarityHead::create(d);
    head.init_weights(local, 0.3);
    for (double& v : head.b_c.values()) v = 0.05 * local.next_gaussian();
    Tensor fi = random_unit(d, local), fj = random_unit(d, local);

    // keep finite differences well-posed: redraw near ReLU kinks
    PairFeatures fwd = similarity_forward(head, fi, fj);
    bool near_kink = false;
    for (const Tensor* z : {&fwd.ze, &fwd.zu, &fwd.zc})
      for (double v : z->values())
        if (std::abs(v) < 1e-7) near_kink = true;
    if (near_kink) continue;
    ++checked_seeds;

    CHECK(raw_score(head, fi, fj) == doctest::Approx(fwd.score).epsilon(1e-12));

    HeadGradients g = similarity_backward(head, fi, fj, fwd, 1.0);
    std::vector<double> analytic = gradient_slots(head, g);
    std::vector<double*> slots = parameter_slots(head);
    REQUIRE(analytic.size() == slots.size());
    double max_rel = 0.0;
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const double keep = *slots[i];
      *slots[i] = keep + fd_step;
      const double up = similarity(head, fi, fj);
      *slots[i] = keep - fd_step;
      const double down = similarity(head, fi, fj);
      *slots[i] = keep;
      const double fd = (up - down) / (2 * fd_step);
      const double scale = std::max({std::abs(fd), std::abs(analytic[i]), 1e-6});
      max_rel = std::max(max_rel, std::abs(fd - analytic[i]) / scale);
    }
    CHECK(max_rel < 1e-4);

    // feature gradients against the raw pipeline (perturbed features fall
    // off the unit sphere, which the contract check would reject)
    for (int which = 0; which < 2; ++which) {
      const Tensor& gf = which == 0 ? g.f_i : g.f_j;
      for (std::size_t i = 0; i < d; ++i) {
        Tensor fip = fi, fjp = fj;
        Tensor& target = which == 0 ? fip : fjp;
        const double keep = target[i];
        target[i] = keep + fd_step;
        const double up = raw_score(head, fip, fjp);
        target[i] = keep - fd_step;
        const double down = raw_score(head, fip, fjp);
        const double fd = (up - down) / (2 * fd_step);
        const double scale = std::max({std::abs(fd), std::abs(gf[i]), 1e-6});
        CHECK(std::abs(fd - gf[i]) / scale < 1e-4);
      }
    }
  }
  CHECK(checked_seeds >= 3);
}

TEST_CASE("score is invariant under coordinate permutation of the whole head") {
  SeededRng rng(6);
  const std::size_t d = 6;
  SimilarityHead head = SimilarityHead::create(d);
  head.init_weights(rng, 0.5);
  for (double& v : head.b_e.values()) v = 0.1 * rng.next_gaussian();
  for (double& v : head.b_u.values()) v = 0.1 * rng.next_gaussian();
  for (double& v : head.b_c.values()) v = 0.1 * rng.next_gaussian();
  Tensor fi = random_unit(d, rng), fj = random_unit(d, rng);
  const double base = similarity(head, fi, fj);

  std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  SimilarityHead p = SimilarityHead::create(d);
  Tensor pfi({d}), pfj({d});
  for (std::size_t i = 0; i < d; ++i) {
    pfi[perm[i]] = fi[i];
    pfj[perm[i]] = fj[i];
    p.b_e[perm[i]] = head.b_e[i];
    p.b_u[perm[i]] = head.b_u[i];
    p.b_c[perm[i]] = head.b_c[i];
    p.w_s[perm[i]] = head.w_s[i];
    for (std::size_t j = 0; j < d; ++j) {
      p.w_e.at(perm[i], perm[j]) = head.w_e.at(i, j);
      p.w_u.at(perm[i], perm[j]) = head.w_u.at(i, j);
      p.w_c.at(perm[i], perm[j]) = head.w_c.at(i, j);
      p.w_c.at(perm[i], d + perm[j]) = head.w_c.at(i, d + j);
    }
  }
  p.b_s = head.b_s;
  CHECK(similarity(p, pfi, pfj) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("non-unit features violate the contract") {
  SimilarityHead head = SimilarityHead::create(3);
  Tensor bad = Tensor::vector({1.0, 1.0, 0.0});
  Tensor good = Tensor::vector({1.0, 0.0, 0.0});
  CHECK_THROWS_AS(similarity(head, bad, good), Error);
  CHECK_THROWS_AS(similarity(head, good, bad), Error);
}
