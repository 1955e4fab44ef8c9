#include "preproc.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "error.hpp"
#include "linalg.hpp"

namespace dafe {

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 2) raise(ErrorCode::dimension, "resize_bilinear: expected [H,W]");
  const std::size_t H = image.dim(0), W = image.dim(1);
  if (H < 2 || W < 2) raise(ErrorCode::dimension, "resize_bilinear: input must be at least 2x2");
  if (out_h < 2 || out_w < 2) raise(ErrorCode::parameter, "resize_bilinear: target must be at least 2x2");
  if (H == out_h && W == out_w) return image;
  Tensor out({out_h, out_w});
  const double sy = static_cast<double>(H - 1) / static_cast<double>(out_h - 1);
  const double sx = static_cast<double>(W - 1) / static_cast<double>(out_w - 1);
  for (std::size_t i = 0; i < out_h; ++i) {
    double y = i * sy;
    std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(y), H - 2);
    double fy = y - static_cast<double>(y0);
    for (std::size_t j = 0; j < out_w; ++j) {
      double x = j * sx;
      std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(x), W - 2);
      double fx = x - static_cast<double>(x0);
      double v00 = image.at(y0, x0), v01 = image.at(y0, x0 + 1);
      double v10 = image.at(y0 + 1, x0), v11 = image.at(y0 + 1, x0 + 1);
      out.at(i, j) = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                     fy * ((1 - fx) * v10 + fx * v11);
    }
  }
  return out;
}

Tensor whiten(const Tensor& channel, bool* degenerate) {
  const std::size_t n = channel.size();
  if (n < 2) raise(ErrorCode::dimension, "whiten: need at least 2 values");
  double mean = 0.0;
  for (double v : channel.values()) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : channel.values()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  Tensor out = channel;
  if (var == 0.0) {
    if (degenerate) *degenerate = true;
    out.fill(0.0);
    return out;
  }
  if (degenerate) *degenerate = false;
  const double inv_std = 1.0 / std::sqrt(var);
  for (double& v : out.values()) v = (v - mean) * inv_std;
  return out;
}

namespace {

int lbp_transitions(unsigned code) {
  int t = 0;
  for (int b = 0; b < 8; ++b) {
    unsigned cur = (code >> b) & 1u;
    unsigned nxt = (code >> ((b + 1) % 8)) & 1u;
    if (cur != nxt) ++t;
  }
  return t;
}

const std::array<std::size_t, 256>& lbp_bin_table() {
  static const std::array<std::size_t, 256> table = [] {
    std::array<std::size_t, 256> t{};
    std::size_t next = 0;
    for (unsigned code = 0; code < 256; ++code)
      t[code] = lbp_transitions(code) <= 2 ? next++ : kLbpBins - 1;
    return t;
  }();
  return table;
}

// Ring neighbors clockwise from the top-left corner; bit b pairs with
// offsets[b].
constexpr std::array<std::array<int, 2>, 8> kLbpOffsets = {{
    {-1, -1}, {-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}}};

}  // namespace

std::size_t lbp_uniform_bin(unsigned code) { return lbp_bin_table()[code & 0xffu]; }

Tensor lbp_map(const Tensor& image) {
  if (image.rank() != 2) raise(ErrorCode::dimension, "lbp_map: expected [H,W]");
  const std::size_t H = image.dim(0), W = image.dim(1);
  Tensor out({kLbpBins, H, W});
  auto clamp = [](std::ptrdiff_t v, std::ptrdiff_t hi) {
    return std::min(std::max(v, std::ptrdiff_t{0}), hi);
  };
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < W; ++j) {
      const double center = image.at(i, j);
      unsigned code = 0;
      for (int b = 0; b < 8; ++b) {
        std::size_t ni = static_cast<std::size_t>(
            clamp(static_cast<std::ptrdiff_t>(i) + kLbpOffsets[b][0],
                  static_cast<std::ptrdiff_t>(H) - 1));
        std::size_t nj = static_cast<std::size_t>(
            clamp(static_cast<std::ptrdiff_t>(j) + kLbpOffsets[b][1],
                  static_cast<std::ptrdiff_t>(W) - 1));
        if (image.at(ni, nj) >= center) code |= 1u << b;
      }
      out.at(lbp_uniform_bin(code), i, j) = 1.0;
    }
  }
  return out;
}

GaborBank GaborBank::make(const GaborBankParams& params) {
  if (params.kernel_size % 2 == 0 || params.kernel_size == 0)
    raise(ErrorCode::parameter, "gabor kernel size must be odd");
  if (params.orientations == 0 || params.wavelengths.empty())
    raise(ErrorCode::parameter, "gabor bank needs orientations and wavelengths");
  GaborBank bank;
  const int half = static_cast<int>(params.kernel_size / 2);
  for (double lambda : params.wavelengths) {
    if (lambda <= 0) raise(ErrorCode::parameter, "gabor wavelength must be positive");
    const double sigma = params.sigma_ratio * lambda;
    for (std::size_t t = 0; t < params.orientations; ++t) {
      const double theta = std::numbers::pi * static_cast<double>(t) /
                           static_cast<double>(params.orientations);
      Tensor k({params.kernel_size, params.kernel_size});
      for (int y = -half; y <= half; ++y) {
        for (int x = -half; x <= half; ++x) {
          double xr = x * std::cos(theta) + y * std::sin(theta);
          double yr = -x * std::sin(theta) + y * std::cos(theta);
          double envelope = std::exp(-(xr * xr + params.aspect * params.aspect * yr * yr) /
                                     (2.0 * sigma * sigma));
          double carrier =
              std::cos(2.0 * std::numbers::pi * xr / lambda + params.phase);
          k.at(static_cast<std::size_t>(y + half), static_cast<std::size_t>(x + half)) =
              envelope * carrier;
        }
      }
      bank.kernels.push_back(std::move(k));
    }
  }
  return bank;
}

Tensor gabor_bank_apply(const Tensor& image, const GaborBank& bank) {
  if (image.rank() != 2) raise(ErrorCode::dimension, "gabor_bank_apply: expected [H,W]");
  if (bank.kernels.empty()) raise(ErrorCode::parameter, "empty gabor bank");
  const std::size_t H = image.dim(0), W = image.dim(1);
  Tensor out({bank.kernels.size(), H, W});
  for (std::size_t g = 0; g < bank.kernels.size(); ++g) {
    const Tensor& k = bank.kernels[g];
    const std::size_t off_h = (k.dim(0) - 1) / 2, off_w = (k.dim(1) - 1) / 2;
    Tensor fullr = conv_full(image, k);
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        out.at(g, i, j) = fullr.at(i + off_h, j + off_w);
  }
  return out;
}

PcaModel pca_fit(const std::vector<Tensor>& features, std::size_t k) {
  if (features.size() < 2) raise(ErrorCode::data, "pca_fit: need at least 2 samples");
  if (k == 0) raise(ErrorCode::parameter, "pca_fit: k must be positive");
  const std::size_t N = features.size();
  const std::size_t D = features[0].size();
  for (const Tensor& f : features)
    if (f.size() != D) raise(ErrorCode::dimension, "pca_fit: inconsistent feature dims");

  Tensor mean({D});
  for (const Tensor& f : features) axpy(1.0, f, mean);
  scale(mean, 1.0 / static_cast<double>(N));

  // Centered data, row per sample.
  std::vector<double> X(N * D);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t d = 0; d < D; ++d) X[n * D + d] = features[n][d] - mean[d];

  const double eps = 1e-12;
  std::vector<double> basis_cols;  // column-major D x m
  std::vector<double> eigenvalues;

  if (D <= N) {
    std::vector<double> cov(D * D, 0.0);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < D; ++i) {
        const double xi = X[n * D + i];
        if (xi == 0.0) continue;
        for (std::size_t j = i; j < D; ++j) cov[i * D + j] += xi * X[n * D + j];
      }
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t j = 0; j < i; ++j) cov[i * D + j] = cov[j * D + i];
    for (double& v : cov) v /= static_cast<double>(N);
    SymmetricEigen eig = symmetric_eigen(cov, D);
    double total = 0.0;
    for (double v : eig.values) total += std::max(v, 0.0);
    for (std::size_t j = 0; j < D && basis_cols.size() / D < k; ++j) {
      if (eig.values[j] <= eps * std::max(total, 1.0)) break;
      for (std::size_t i = 0; i < D; ++i) basis_cols.push_back(eig.vectors[i * D + j]);
      eigenvalues.push_back(eig.values[j]);
    }
  } else {
    // Gram trick: eigenvectors of X X^T / N lift to covariance eigenvectors.
    std::vector<double> gram(N * N, 0.0);
    for (std::size_t a = 0; a < N; ++a)
      for (std::size_t b = a; b < N; ++b) {
        double s = 0.0;
        for (std::size_t d = 0; d < D; ++d) s += X[a * D + d] * X[b * D + d];
        gram[a * N + b] = gram[b * N + a] = s / static_cast<double>(N);
      }
    SymmetricEigen eig = symmetric_eigen(gram, N);
    double total = 0.0;
    for (double v : eig.values) total += std::max(v, 0.0);
    for (std::size_t j = 0; j < N && basis_cols.size() / D < k; ++j) {
      if (eig.values[j] <= eps * std::max(total, 1.0)) break;
      // u = X^T v / ||X^T v||
      std::vector<double> u(D, 0.0);
      for (std::size_t n = 0; n < N; ++n) {
        const double vn = eig.vectors[n * N + j];
        if (vn == 0.0) continue;
        for (std::size_t d = 0; d < D; ++d) u[d] += vn * X[n * D + d];
      }
      double norm = 0.0;
      for (double v : u) norm += v * v;
      norm = std::sqrt(norm);
      if (norm <= 0.0) break;
      for (std::size_t d = 0; d < D; ++d) basis_cols.push_back(u[d] / norm);
      eigenvalues.push_back(eig.values[j]);
    }
  }

  const std::size_t m = basis_cols.size() / D;
  if (m == 0) raise(ErrorCode::data, "pca_fit: data has zero variance");

  PcaModel model;
  model.mean = std::move(mean);
  model.basis = Tensor({D, m});
  for (std::size_t j = 0; j < m; ++j) {
    // Deterministic sign: largest-magnitude coordinate positive.
    std::size_t arg = 0;
    double best = 0.0;
    for (std::size_t i = 0; i < D; ++i) {
      double mag = std::abs(basis_cols[j * D + i]);
      if (mag > best) {
        best = mag;
        arg = i;
      }
    }
    const double sign = basis_cols[j * D + arg] < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < D; ++i)
      model.basis.at(i, j) = sign * basis_cols[j * D + i];
  }
  return model;
}

Tensor pca_project(const PcaModel& model, const Tensor& x) {
  const std::size_t D = model.mean.size();
  if (x.size() != D) raise(ErrorCode::dimension, "pca_project: dimension mismatch");
  const std::size_t m = model.components();
  Tensor out({m});
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < D; ++i)
      s += model.basis.at(i, j) * (x[i] - model.mean[i]);
    out[j] = s;
  }
  return out;
}

Tensor build_input_stack(const Tensor& image, const InputStackOptions& opts) {
  if (image.rank() != 2) raise(ErrorCode::dimension, "build_input_stack: expected [H,W]");
  Tensor resized = resize_bilinear(image, opts.height, opts.width);
  std::size_t channels = 1;
  if (opts.use_lbp) channels += kLbpBins;
  GaborBank bank;
  if (opts.use_gabor) {
    bank = GaborBank::make(opts.gabor);
    channels += bank.kernels.size();
  }
  Tensor stack({channels, opts.height, opts.width});
  const std::size_t plane = opts.height * opts.width;
  Tensor intensity = opts.whiten_intensity ? whiten(resized) : resized;
  std::copy(intensity.data(), intensity.data() + plane, stack.data());
  std::size_t offset = plane;
  if (opts.use_lbp) {
    Tensor lbp = lbp_map(resized);
    std::copy(lbp.data(), lbp.data() + lbp.size(), stack.data() + offset);
    offset += lbp.size();
  }
  if (opts.use_gabor) {
    Tensor gab = gabor_bank_apply(intensity, bank);
    std::copy(gab.data(), gab.data() + gab.size(), stack.data() + offset);
  }
  return stack;
}

}  // namespace dafe
