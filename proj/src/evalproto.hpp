#pragma once

#include <cstddef>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace dafe {

struct EvalItem {
  std::size_t index = 0;  // position in the dataset's image list
  int identity = 0;
  int view = 0;
};

/// Single-shot probe/gallery assignment for one trial: exactly one gallery
/// image per identity from the gallery view; every other-view image probes.
struct EvalSplit {
  std::vector<std::size_t> probe;    // item indices
  std::vector<std::size_t> gallery;  // item indices, one per identity
};

struct SplitStats {
  std::size_t excluded_identities = 0;  // identities missing a view
};

std::vector<EvalSplit> make_splits(const std::vector<EvalItem>& items,
                                   std::size_t trials, int gallery_view,
                                   SeededRng& rng, SplitStats* stats = nullptr);

/// Rank-r recognition rates, cumulative over ranks (1-based: cmc[0] is
/// rank 1). Ties rank pessimistically: gallery entries tied with the true
/// match count as ranked above it. Probes whose identity is absent from the
/// gallery are excluded and counted.
std::vector<double> cmc(const Tensor& scores, const std::vector<int>& probe_ids,
                        const std::vector<int>& gallery_ids,
                        std::size_t* excluded_probes = nullptr);

/// Mean average precision with a single relevant gallery item per probe
/// (single-shot), i.e. the mean of 1/rank.
double map_score(const Tensor& scores, const std::vector<int>& probe_ids,
                 const std::vector<int>& gallery_ids,
                 std::size_t* excluded_probes = nullptr);

struct EvalReport {
  std::vector<double> cmc;              // averaged over trials
  double map = 0.0;                     // averaged over trials
  std::size_t trials = 0;
  std::vector<std::vector<double>> per_trial_cmc;
  std::vector<double> per_trial_rank1;
  std::vector<double> per_trial_map;
  std::size_t excluded_identities = 0;
  std::size_t excluded_probes = 0;
};

/// Averages per-trial CMC/mAP given a scorer for (probe item, gallery item).
/// In multi-query mode all probes of one identity fuse by max score.
struct ScoreMatrixFn {
  virtual ~ScoreMatrixFn() = default;
  virtual Tensor operator()(const std::vector<std::size_t>& probe,
                            const std::vector<std::size_t>& gallery) const = 0;
};

EvalReport evaluate_splits(const std::vector<EvalItem>& items,
                           const std::vector<EvalSplit>& splits,
                           const ScoreMatrixFn& scorer, bool multi_query);

}  // namespace dafe
