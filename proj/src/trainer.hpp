#pragma once

#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "evalproto.hpp"

namespace dafe {

/// Deterministic CSV text (doubles printed with %.17g).
std::string csv_double(double v);

EmbeddingSettings embedding_settings_from(const Config& config);
SyntheticSpec synthetic_spec_from(const Config& config);

/// Layer-wise CD pretraining of every stack, PCA fitting when enabled, and a
/// freshly initialized similarity head sized to the resulting feature
/// dimension. Emits "epoch,layer,mse" rows (per-representation stacks offset
/// the layer index by 100 per stack).
Checkpoint run_pretrain(const Config& config, const Dataset& dataset,
                        std::vector<std::string>* recon_csv);

struct TrainOutputs {
  Checkpoint checkpoint;
  std::vector<std::string> csv_rows;  // iteration,loss,s_ij,s_ik,s_il,fallback
  double final_loss = 0.0;
};

/// Fine-tunes the similarity head plus the top `train.finetune_layers` CRBM
/// layers with the configured loss and optimizer. `resume` continues a saved
/// run bitwise; otherwise training starts from `warm_start` (a pretrain
/// checkpoint).
TrainOutputs run_train(const Config& config, const Dataset& dataset,
                       const Checkpoint& warm_start, const Checkpoint* resume,
                       const std::string& checkpoint_dir = "");

struct EvalOutputs {
  EvalReport report;
  std::vector<std::string> cmc_csv;     // trial,rank,rate
  std::vector<std::string> report_csv;  // metric,value
};

EvalOutputs run_eval(const Config& config, const Checkpoint& checkpoint,
                     const Dataset& dataset, std::size_t trials, bool multi_query);

/// Features for every dataset item under the checkpointed model.
std::vector<Tensor> extract_all_features(const Checkpoint& checkpoint,
                                         const Dataset& dataset);

}  // namespace dafe
