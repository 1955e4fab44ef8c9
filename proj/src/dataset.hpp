#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evalproto.hpp"
#include "tensor.hpp"

namespace dafe {

/// On-disk layout: root/<identity>/<view>/<image files>, where images are
/// 8-bit P5 portable graymaps or DAFT tensors. Identities and views are
/// directory names, mapped to indices in sorted order.
struct Dataset {
  std::vector<Tensor> images;  // [H,W], grayscale in [0,1]
  std::vector<EvalItem> items;
  std::vector<std::string> identity_names;
  std::vector<std::string> view_names;

  std::size_t size() const { return images.size(); }
};

Dataset load_dataset(const std::string& root);

/// 8-bit binary PGM with values scaled onto [0,1].
Tensor read_pgm(const std::string& path);
void write_pgm(const std::string& path, const Tensor& image01);

struct SyntheticSpec {
  std::size_t identities = 40;
  std::size_t views = 2;
  std::size_t images_per_view = 4;
  std::size_t image_size = 48;
  double curvature = 1.0;  // strength of the per-view smooth warp
  double noise = 0.05;     // per-pixel Gaussian noise
  std::uint64_t seed = 1;
};

/// Each identity is a smooth blob composition; each view applies one fixed
/// smooth warp plus a brightness change to every identity; each image adds
/// pixel noise. Deterministic under the seed.
void generate_synthetic(const SyntheticSpec& spec, const std::string& out_root);

/// In-memory variant used by tests and the training pipeline.
Dataset synthesize_dataset(const SyntheticSpec& spec);

}  // namespace dafe
