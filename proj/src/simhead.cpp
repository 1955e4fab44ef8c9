#include "simhead.hpp"

#include <cmath>

#include "error.hpp"

namespace dafe {

namespace {

void require_unit(const Tensor& f, std::size_t dim, const char* name) {
  if (f.rank() != 1 || f.size() != dim)
    raise(ErrorCode::dimension, std::string(name) + ": expected a vector of the head dimension");
  double n2 = 0.0;
  for (double v : f.values()) n2 += v * v;
  if (std::abs(std::sqrt(n2) - 1.0) > 1e-6)
    raise(ErrorCode::contract, std::string(name) + ": feature must be unit-norm");
}

// y = W x + b with W stored row-major [rows, cols]
Tensor affine(const Tensor& w, const Tensor& b, const Tensor& x) {
  const std::size_t rows = w.dim(0), cols = w.dim(1);
  Tensor y({rows});
  for (std::size_t i = 0; i < rows; ++i) {
    double s = b[i];
    const double* row = w.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) s += row[j] * x[j];
    y[i] = s;
  }
  return y;
}

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

SimilarityHead SimilarityHead::create(std::size_t dim) {
  if (dim == 0) raise(ErrorCode::parameter, "SimilarityHead: dim must be positive");
  SimilarityHead h;
  h.dim = dim;
  h.w_e = Tensor({dim, dim});
  h.w_u = Tensor({dim, dim});
  h.b_e = Tensor({dim});
  h.b_u = Tensor({dim});
  h.w_c = Tensor({dim, 2 * dim});
  h.b_c = Tensor({dim});
  h.w_s = Tensor({dim});
  h.b_s = 0.0;
  return h;
}

void SimilarityHead::init_weights(SeededRng& rng, double stddev) {
  for (Tensor* w : {&w_e, &w_u, &w_c, &w_s})
    for (double& v : w->values()) v = stddev * rng.next_gaussian();
  b_e.fill(0.0);
  b_u.fill(0.0);
  b_c.fill(0.0);
  b_s = 0.0;
}

std::size_t SimilarityHead::parameter_count() const {
  return w_e.size() + w_u.size() + b_e.size() + b_u.size() + w_c.size() +
         b_c.size() + w_s.size() + 1;
}

void pair_features(const Tensor& f_i, const Tensor& f_j, Tensor& e, Tensor& u) {
  if (f_i.size() != f_j.size())
    raise(ErrorCode::dimension, "pair_features: feature dimensions differ");
  const std::size_t d = f_i.size();
  e = Tensor({d});
  u = Tensor({d});
  for (std::size_t i = 0; i < d; ++i) {
    e[i] = std::abs(f_i[i] - f_j[i]);
    u[i] = (f_i[i] + f_j[i]) / 2.0;
  }
}

PairFeatures similarity_forward(const SimilarityHead& head, const Tensor& f_i,
                                const Tensor& f_j) {
  require_unit(f_i, head.dim, "similarity f_i");
  require_unit(f_j, head.dim, "similarity f_j");
  PairFeatures out;
  pair_features(f_i, f_j, out.e, out.u);
  out.ze = affine(head.w_e, head.b_e, out.e);
  out.zu = affine(head.w_u, head.b_u, out.u);
  out.ae = relu(out.ze);
  out.au = relu(out.zu);
  out.ebar = l2_normalize(out.ae, &out.e_degenerate);
  out.ubar = l2_normalize(out.au, &out.u_degenerate);
  Tensor cat({2 * head.dim});
  for (std::size_t i = 0; i < head.dim; ++i) {
    cat[i] = out.ebar[i];
    cat[head.dim + i] = out.ubar[i];
  }
  out.zc = affine(head.w_c, head.b_c, cat);
  out.c = relu(out.zc);
  out.score = head.b_s + dot(head.w_s, out.c);
  return out;
}

double similarity(const SimilarityHead& head, const Tensor& f_i, const Tensor& f_j) {
  return similarity_forward(head, f_i, f_j).score;
}

HeadGradients HeadGradients::zeros(const SimilarityHead& head) {
  HeadGradients g;
  g.w_e = Tensor(head.w_e.shape());
  g.w_u = Tensor(head.w_u.shape());
  g.b_e = Tensor(head.b_e.shape());
  g.b_u = Tensor(head.b_u.shape());
  g.w_c = Tensor(head.w_c.shape());
  g.b_c = Tensor(head.b_c.shape());
  g.w_s = Tensor(head.w_s.shape());
  g.b_s = 0.0;
  g.f_i = Tensor({head.dim});
  g.f_j = Tensor({head.dim});
  return g;
}

void HeadGradients::accumulate_scaled(const HeadGradients& other, double scale) {
  axpy(scale, other.w_e, w_e);
  axpy(scale, other.w_u, w_u);
  axpy(scale, other.b_e, b_e);
  axpy(scale, other.b_u, b_u);
  axpy(scale, other.w_c, w_c);
  axpy(scale, other.b_c, b_c);
  axpy(scale, other.w_s, w_s);
  b_s += scale * other.b_s;
  axpy(scale, other.f_i, f_i);
  axpy(scale, other.f_j, f_j);
}

namespace {

// d(normalized)/d(pre-norm) applied to a cotangent: (g - (g.x̂) x̂) / ||x||.
Tensor normalize_backward(const Tensor& pre, const Tensor& post, bool degenerate,
                          const Tensor& grad_post) {
  const std::size_t d = pre.size();
  Tensor out({d});
  if (degenerate) return out;
  double norm = 0.0;
  for (double v : pre.values()) norm += v * v;
  norm = std::sqrt(norm);
  double proj = 0.0;
  for (std::size_t i = 0; i < d; ++i) proj += grad_post[i] * post[i];
  for (std::size_t i = 0; i < d; ++i) out[i] = (grad_post[i] - proj * post[i]) / norm;
  return out;
}

}  // namespace

HeadGradients similarity_backward(const SimilarityHead& head, const Tensor& f_i,
                                  const Tensor& f_j, const PairFeatures& fwd,
                                  double upstream) {
  const std::size_t d = head.dim;
  HeadGradients g = HeadGradients::zeros(head);

  g.b_s = upstream;
  Tensor dc({d});
  for (std::size_t i = 0; i < d; ++i) {
    g.w_s[i] = upstream * fwd.c[i];
    dc[i] = upstream * head.w_s[i];
  }

  Tensor dzc({d});
  for (std::size_t i = 0; i < d; ++i) dzc[i] = fwd.zc[i] > 0.0 ? dc[i] : 0.0;

  Tensor cat({2 * d});
  for (std::size_t i = 0; i < d; ++i) {
    cat[i] = fwd.ebar[i];
    cat[d + i] = fwd.ubar[i];
  }
  Tensor dcat({2 * d});
  for (std::size_t i = 0; i < d; ++i) {
    const double dz = dzc[i];
    g.b_c[i] = dz;
    if (dz == 0.0) continue;
    double* wrow = g.w_c.data() + i * 2 * d;
    const double* hrow = head.w_c.data() + i * 2 * d;
    for (std::size_t j = 0; j < 2 * d; ++j) {
      wrow[j] += dz * cat[j];
      dcat[j] += dz * hrow[j];
    }
  }

  Tensor debar({d}), dubar({d});
  for (std::size_t i = 0; i < d; ++i) {
    debar[i] = dcat[i];
    dubar[i] = dcat[d + i];
  }

  Tensor dae = normalize_backward(fwd.ae, fwd.ebar, fwd.e_degenerate, debar);
  Tensor dau = normalize_backward(fwd.au, fwd.ubar, fwd.u_degenerate, dubar);

  Tensor de({d}), du({d});
  for (std::size_t i = 0; i < d; ++i) {
    const double dze = fwd.ze[i] > 0.0 ? dae[i] : 0.0;
    const double dzu = fwd.zu[i] > 0.0 ? dau[i] : 0.0;
    g.b_e[i] = dze;
    g.b_u[i] = dzu;
    double* we_row = g.w_e.data() + i * d;
    double* wu_row = g.w_u.data() + i * d;
    const double* he_row = head.w_e.data() + i * d;
    const double* hu_row = head.w_u.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      if (dze != 0.0) {
        we_row[j] += dze * fwd.e[j];
        de[j] += dze * he_row[j];
      }
      if (dzu != 0.0) {
        wu_row[j] += dzu * fwd.u[j];
        du[j] += dzu * hu_row[j];
      }
    }
  }

  for (std::size_t i = 0; i < d; ++i) {
    const double s = sign0(f_i[i] - f_j[i]);
    g.f_i[i] = s * de[i] + 0.5 * du[i];
    g.f_j[i] = -s * de[i] + 0.5 * du[i];
  }
  return g;
}

HeadGradients similarity_grad(const SimilarityHead& head, const Tensor& f_i,
                              const Tensor& f_j, double upstream) {
  PairFeatures fwd = similarity_forward(head, f_i, f_j);
  return similarity_backward(head, f_i, f_j, fwd, upstream);
}

}  // namespace dafe
