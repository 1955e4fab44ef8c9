#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace dafe {

/// Dense row-major tensor of 64-bit floats. The shape product always equals
/// the data length; dimensions are positive.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);
  explicit Tensor(std::vector<std::size_t> shape);  // zero-filled

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double value);
  static Tensor vector(std::vector<double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j) const;
  double& at(std::size_t c, std::size_t i, std::size_t j);
  double at(std::size_t c, std::size_t i, std::size_t j) const;
  double& at4(std::size_t a, std::size_t b, std::size_t i, std::size_t j);
  double at4(std::size_t a, std::size_t b, std::size_t i, std::size_t j) const;

  /// Channel c of a [C,H,W] tensor as a standalone [H,W] copy.
  Tensor channel(std::size_t c) const;

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  void fill(double value);

  std::string shape_string() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Sliding inner product; output dims (H-h+1, W-w+1). Kernel larger than the
/// input is a dimension error.
Tensor conv_valid(const Tensor& input, const Tensor& kernel);

/// Zero-padded counterpart of conv_valid; output dims (H+h-1, W+w-1).
/// Adjoint identity: <conv_valid(a, flip180(W)), b> == <a, conv_full(b, W)>.
Tensor conv_full(const Tensor& input, const Tensor& kernel);

/// out[r,s] = in[h-1-r, w-1-s].
Tensor flip180(const Tensor& kernel);

Tensor relu(const Tensor& x);

/// Scales to unit Euclidean norm. A zero vector comes back unchanged with
/// *degenerate set; downstream treats it as a zero contribution.
Tensor l2_normalize(const Tensor& x, bool* degenerate = nullptr);

double dot(const Tensor& a, const Tensor& b);
void axpy(double alpha, const Tensor& x, Tensor& y);  // y += alpha * x
void scale(Tensor& x, double alpha);

/// Drops trailing rows/columns of the last two axes so both become multiples
/// of `block`. Supports [H,W] and [C,H,W].
Tensor crop_to_multiple(const Tensor& t, std::size_t block);

/// Zero-pads the last two axes back to (rows, cols); inverse of the crop.
Tensor pad_trailing(const Tensor& t, std::size_t rows, std::size_t cols);

}  // namespace dafe
