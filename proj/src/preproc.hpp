#pragma once

#include <cstddef>
#include <vector>

#include "tensor.hpp"

namespace dafe {

/// Corner-aligned bilinear resampling of a [H,W] image (H, W >= 2).
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);

/// Standardizes a channel to zero mean and unit variance. A constant channel
/// comes back as all zeros with *degenerate set.
Tensor whiten(const Tensor& channel, bool* degenerate = nullptr);

inline constexpr std::size_t kLbpBins = 59;

/// Uniform LBP(8,1), neighbor >= center convention, clamped borders.
/// Output [59,H,W] is one-hot per pixel: bins 0..57 for the uniform
/// patterns in ascending code order, bin 58 for everything else.
Tensor lbp_map(const Tensor& image);

/// Bin index for one 8-bit LBP code.
std::size_t lbp_uniform_bin(unsigned code);

struct GaborBankParams {
  std::vector<double> wavelengths = {4.0, 8.0};
  std::size_t orientations = 4;       // theta = t * pi / orientations
  std::size_t kernel_size = 11;       // odd
  double sigma_ratio = 0.56;          // sigma = ratio * wavelength
  double aspect = 0.5;                // gamma
  double phase = 0.0;                 // psi
};

struct GaborBank {
  std::vector<Tensor> kernels;
  static GaborBank make(const GaborBankParams& params);
};

/// Filter responses, one [H,W] slice per kernel, zero-padded at the borders
/// (conv_full cropped back to the input size).
Tensor gabor_bank_apply(const Tensor& image, const GaborBank& bank);

struct PcaModel {
  Tensor mean;   // [D]
  Tensor basis;  // [D,k], orthonormal columns
  std::size_t components() const { return basis.empty() ? 0 : basis.dim(1); }
};

/// Top-k principal components of the sample covariance. Keeps min(D, rank,
/// k) components; the sign convention makes each column's largest-magnitude
/// coordinate positive.
PcaModel pca_fit(const std::vector<Tensor>& features, std::size_t k);

Tensor pca_project(const PcaModel& model, const Tensor& x);

/// Channel layout of a visible-layer stack: whitened intensity, then the LBP
/// one-hot slices, then the Gabor responses.
struct InputStackOptions {
  std::size_t height = 150;
  std::size_t width = 150;
  bool whiten_intensity = true;
  bool use_lbp = true;
  bool use_gabor = true;
  GaborBankParams gabor;
};

Tensor build_input_stack(const Tensor& image, const InputStackOptions& opts);

}  // namespace dafe
