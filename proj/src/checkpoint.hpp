#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "embedding.hpp"
#include "rng.hpp"
#include "simhead.hpp"

namespace dafe {

/// Fine-tuning optimizer state that must survive a resume: momentum
/// velocities over the flat trainable-parameter vector, plus the gradient
/// memory table when a variance-reduced variant is active.
struct TrainOptimizerState {
  std::uint64_t iteration = 0;
  std::vector<double> velocity;
  std::vector<std::vector<double>> vr_memory;
  std::vector<double> vr_memory_mean;
  std::vector<std::vector<std::size_t>> vr_neighborhoods;
};

/// Checkpoint payload: magic "DAFE", version, then named sections for the
/// config snapshot, CDBN stacks, PCA models, similarity head, optimizer
/// state, and RNG state. Round trips are bitwise lossless.
struct Checkpoint {
  std::string config_snapshot;
  EmbeddingModel model;
  SimilarityHead head;
  bool head_ready = false;
  TrainOptimizerState optimizer;
  SeededRng::State rng{0, 0, 0, 0.0, false};
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dafe
