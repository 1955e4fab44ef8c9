#include "tensor.hpp"

#include <cmath>
#include <sstream>

#include "error.hpp"

namespace dafe {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) raise(ErrorCode::dimension, "tensor dimension must be positive");
    n *= d;
  }
  return n;
}

void require_2d(const Tensor& t, const char* what) {
  if (t.rank() != 2)
    raise(ErrorCode::dimension, std::string(what) + ": expected a 2-D tensor, got " +
                                    t.shape_string());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size())
    raise(ErrorCode::dimension, "tensor shape does not match data length");
}

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
  data_.assign(shape_product(shape_), 0.0);
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

Tensor Tensor::vector(std::vector<double> values) {
  std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) raise(ErrorCode::dimension, "axis out of range");
  return shape_[axis];
}

double& Tensor::at(std::size_t i, std::size_t j) {
  return data_[i * shape_[1] + j];
}
double Tensor::at(std::size_t i, std::size_t j) const {
  return data_[i * shape_[1] + j];
}
double& Tensor::at(std::size_t c, std::size_t i, std::size_t j) {
  return data_[(c * shape_[1] + i) * shape_[2] + j];
}
double Tensor::at(std::size_t c, std::size_t i, std::size_t j) const {
  return data_[(c * shape_[1] + i) * shape_[2] + j];
}
double& Tensor::at4(std::size_t a, std::size_t b, std::size_t i, std::size_t j) {
  return data_[((a * shape_[1] + b) * shape_[2] + i) * shape_[3] + j];
}
double Tensor::at4(std::size_t a, std::size_t b, std::size_t i, std::size_t j) const {
  return data_[((a * shape_[1] + b) * shape_[2] + i) * shape_[3] + j];
}

Tensor Tensor::channel(std::size_t c) const {
  if (rank() != 3) raise(ErrorCode::dimension, "channel: expected [C,H,W]");
  std::size_t h = shape_[1], w = shape_[2];
  Tensor out({h, w});
  const double* src = data_.data() + c * h * w;
  std::copy(src, src + h * w, out.data());
  return out;
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::fill(double value) { data_.assign(data_.size(), value); }

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i)
    os << (i ? "x" : "") << shape_[i];
  os << "]";
  return os.str();
}

Tensor conv_valid(const Tensor& input, const Tensor& kernel) {
  require_2d(input, "conv_valid input");
  require_2d(kernel, "conv_valid kernel");
  const std::size_t H = input.dim(0), W = input.dim(1);
  const std::size_t h = kernel.dim(0), w = kernel.dim(1);
  if (h > H || w > W)
    raise(ErrorCode::dimension,
          "conv_valid: kernel " + kernel.shape_string() + " larger than input " +
              input.shape_string());
  Tensor out({H - h + 1, W - w + 1});
  const std::size_t oh = H - h + 1, ow = W - w + 1;
  const double* in = input.data();
  const double* k = kernel.data();
  double* o = out.data();
  for (std::size_t i = 0; i < oh; ++i) {
    for (std::size_t r = 0; r < h; ++r) {
      const double* row = in + (i + r) * W;
      const double* krow = k + r * w;
      double* orow = o + i * ow;
      for (std::size_t s = 0; s < w; ++s) {
        const double kv = krow[s];
        if (kv == 0.0) continue;
        const double* src = row + s;
        for (std::size_t j = 0; j < ow; ++j) orow[j] += kv * src[j];
      }
    }
  }
  return out;
}

Tensor conv_full(const Tensor& input, const Tensor& kernel) {
  require_2d(input, "conv_full input");
  require_2d(kernel, "conv_full kernel");
  const std::size_t H = input.dim(0), W = input.dim(1);
  const std::size_t h = kernel.dim(0), w = kernel.dim(1);
  Tensor out({H + h - 1, W + w - 1});
  const std::size_t ow = W + w - 1;
  const double* in = input.data();
  const double* k = kernel.data();
  double* o = out.data();
  // out[i,j] = sum_{r,s} k[r,s] * in[i+r-(h-1), j+s-(w-1)], zero outside.
  // Equivalently each input element scatters through the flipped kernel.
  for (std::size_t p = 0; p < H; ++p) {
    for (std::size_t q = 0; q < W; ++q) {
      const double v = in[p * W + q];
      if (v == 0.0) continue;
      for (std::size_t r = 0; r < h; ++r) {
        double* orow = o + (p + h - 1 - r) * ow + (q + w - 1);
        const double* krow = k + r * w;
        for (std::size_t s = 0; s < w; ++s) orow[-static_cast<std::ptrdiff_t>(s)] += v * krow[s];
      }
    }
  }
  return out;
}

Tensor flip180(const Tensor& kernel) {
  require_2d(kernel, "flip180");
  const std::size_t h = kernel.dim(0), w = kernel.dim(1);
  Tensor out({h, w});
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t s = 0; s < w; ++s)
      out.at(r, s) = kernel.at(h - 1 - r, w - 1 - s);
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.values())
    if (v < 0.0) v = 0.0;
  return out;
}

Tensor l2_normalize(const Tensor& x, bool* degenerate) {
  double norm2 = 0.0;
  for (double v : x.values()) norm2 += v * v;
  if (norm2 == 0.0) {
    if (degenerate) *degenerate = true;
    return x;
  }
  if (degenerate) *degenerate = false;
  Tensor out = x;
  scale(out, 1.0 / std::sqrt(norm2));
  return out;
}

double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) raise(ErrorCode::dimension, "dot: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(double alpha, const Tensor& x, Tensor& y) {
  if (x.size() != y.size()) raise(ErrorCode::dimension, "axpy: size mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void scale(Tensor& x, double alpha) {
  for (double& v : x.values()) v *= alpha;
}

Tensor crop_to_multiple(const Tensor& t, std::size_t block) {
  if (block == 0) raise(ErrorCode::parameter, "crop block must be positive");
  if (t.rank() != 2 && t.rank() != 3)
    raise(ErrorCode::dimension, "crop_to_multiple: expected [H,W] or [C,H,W]");
  const std::size_t axes = t.rank();
  const std::size_t C = axes == 3 ? t.dim(0) : 1;
  const std::size_t H = t.dim(axes - 2), W = t.dim(axes - 1);
  const std::size_t Hc = (H / block) * block, Wc = (W / block) * block;
  if (Hc == 0 || Wc == 0)
    raise(ErrorCode::dimension, "crop_to_multiple: tensor smaller than one block");
  if (Hc == H && Wc == W) return t;
  Tensor out(axes == 3 ? std::vector<std::size_t>{C, Hc, Wc}
                       : std::vector<std::size_t>{Hc, Wc});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < Hc; ++i)
      for (std::size_t j = 0; j < Wc; ++j)
        out[(c * Hc + i) * Wc + j] = t[(c * H + i) * W + j];
  return out;
}

Tensor pad_trailing(const Tensor& t, std::size_t rows, std::size_t cols) {
  if (t.rank() != 2 && t.rank() != 3)
    raise(ErrorCode::dimension, "pad_trailing: expected [H,W] or [C,H,W]");
  const std::size_t axes = t.rank();
  const std::size_t C = axes == 3 ? t.dim(0) : 1;
  const std::size_t H = t.dim(axes - 2), W = t.dim(axes - 1);
  if (rows < H || cols < W)
    raise(ErrorCode::dimension, "pad_trailing: target smaller than source");
  if (rows == H && cols == W) return t;
  Tensor out(axes == 3 ? std::vector<std::size_t>{C, rows, cols}
                       : std::vector<std::size_t>{rows, cols});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        out[(c * rows + i) * cols + j] = t[(c * H + i) * W + j];
  return out;
}

}  // namespace dafe
