#include "evalproto.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "error.hpp"

namespace dafe {

std::vector<EvalSplit> make_splits(const std::vector<EvalItem>& items,
                                   std::size_t trials, int gallery_view,
                                   SeededRng& rng, SplitStats* stats) {
  if (trials == 0) raise(ErrorCode::parameter, "make_splits: trials must be positive");
  std::map<int, std::vector<std::size_t>> gallery_pool;  // identity -> gallery-view items
  std::map<int, std::vector<std::size_t>> probe_pool;    // identity -> other-view items
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].view == gallery_view)
      gallery_pool[items[i].identity].push_back(i);
    else
      probe_pool[items[i].identity].push_back(i);
  }
  std::vector<int> usable;
  std::size_t excluded = 0;
  std::set<int> all_ids;
  for (const EvalItem& it : items) all_ids.insert(it.identity);
  for (int id : all_ids) {
    if (gallery_pool.count(id) && probe_pool.count(id))
      usable.push_back(id);
    else
      ++excluded;
  }
  if (stats) stats->excluded_identities = excluded;
  if (usable.empty())
    raise(ErrorCode::data, "make_splits: no identity has images in both views");

  std::vector<EvalSplit> splits(trials);
  for (std::size_t t = 0; t < trials; ++t) {
    EvalSplit& split = splits[t];
    for (int id : usable) {
      const std::vector<std::size_t>& pool = gallery_pool[id];
      split.gallery.push_back(pool[rng.next_index(pool.size())]);
      for (std::size_t p : probe_pool[id]) split.probe.push_back(p);
    }
  }
  return splits;
}

namespace {

// Pessimistic rank of the true match: 1 + (strictly higher) + (ties).
std::size_t true_match_rank(const Tensor& scores, std::size_t probe_row,
                            std::size_t true_col, std::size_t gallery_size) {
  const double s_true = scores.at(probe_row, true_col);
  std::size_t rank = 1;
  for (std::size_t g = 0; g < gallery_size; ++g) {
    if (g == true_col) continue;
    if (scores.at(probe_row, g) >= s_true) ++rank;
  }
  return rank;
}

}  // namespace

std::vector<double> cmc(const Tensor& scores, const std::vector<int>& probe_ids,
                        const std::vector<int>& gallery_ids,
                        std::size_t* excluded_probes) {
  const std::size_t P = probe_ids.size(), G = gallery_ids.size();
  if (scores.rank() != 2 || scores.dim(0) != P || scores.dim(1) != G)
    raise(ErrorCode::dimension, "cmc: score matrix must be [probes, gallery]");
  std::vector<std::size_t> hits(G, 0);
  std::size_t counted = 0, excluded = 0;
  for (std::size_t p = 0; p < P; ++p) {
    std::size_t true_col = G;
    for (std::size_t g = 0; g < G; ++g)
      if (gallery_ids[g] == probe_ids[p]) {
        true_col = g;
        break;
      }
    if (true_col == G) {
      ++excluded;
      continue;
    }
    ++counted;
    const std::size_t rank = true_match_rank(scores, p, true_col, G);
    if (rank <= G) ++hits[rank - 1];
  }
  if (excluded_probes) *excluded_probes = excluded;
  if (counted == 0) raise(ErrorCode::data, "cmc: no probe identity present in gallery");
  std::vector<double> rates(G, 0.0);
  std::size_t cum = 0;
  for (std::size_t r = 0; r < G; ++r) {
    cum += hits[r];
    rates[r] = static_cast<double>(cum) / static_cast<double>(counted);
  }
  return rates;
}

double map_score(const Tensor& scores, const std::vector<int>& probe_ids,
                 const std::vector<int>& gallery_ids,
                 std::size_t* excluded_probes) {
  const std::size_t P = probe_ids.size(), G = gallery_ids.size();
  if (scores.rank() != 2 || scores.dim(0) != P || scores.dim(1) != G)
    raise(ErrorCode::dimension, "map_score: score matrix must be [probes, gallery]");
  double total = 0.0;
  std::size_t counted = 0, excluded = 0;
  for (std::size_t p = 0; p < P; ++p) {
    std::size_t true_col = G;
    for (std::size_t g = 0; g < G; ++g)
      if (gallery_ids[g] == probe_ids[p]) {
        true_col = g;
        break;
      }
    if (true_col == G) {
      ++excluded;
      continue;
    }
    ++counted;
    total += 1.0 / static_cast<double>(true_match_rank(scores, p, true_col, G));
  }
  if (excluded_probes) *excluded_probes = excluded;
  if (counted == 0) raise(ErrorCode::data, "map_score: no probe identity present in gallery");
  return total / static_cast<double>(counted);
}

EvalReport evaluate_splits(const std::vector<EvalItem>& items,
                           const std::vector<EvalSplit>& splits,
                           const ScoreMatrixFn& scorer, bool multi_query) {
  if (splits.empty()) raise(ErrorCode::parameter, "evaluate_splits: no trials");
  EvalReport report;
  report.trials = splits.size();
  for (const EvalSplit& split : splits) {
    std::vector<int> gallery_ids;
    for (std::size_t g : split.gallery) gallery_ids.push_back(items[g].identity);

    Tensor scores = scorer(split.probe, split.gallery);
    std::vector<int> probe_ids;
    for (std::size_t p : split.probe) probe_ids.push_back(items[p].identity);

    if (multi_query) {
      // Fuse each probe identity's queries by max score.
      std::map<int, std::vector<std::size_t>> rows_by_id;
      for (std::size_t r = 0; r < probe_ids.size(); ++r)
        rows_by_id[probe_ids[r]].push_back(r);
      Tensor fused({rows_by_id.size(), split.gallery.size()});
      std::vector<int> fused_ids;
      std::size_t row = 0;
      for (const auto& [id, rows] : rows_by_id) {
        for (std::size_t g = 0; g < split.gallery.size(); ++g) {
          double best = scores.at(rows[0], g);
          for (std::size_t r : rows) best = std::max(best, scores.at(r, g));
          fused.at(row, g) = best;
        }
        fused_ids.push_back(id);
        ++row;
      }
      scores = std::move(fused);
      probe_ids = std::move(fused_ids);
    }

    std::size_t excluded = 0;
    std::vector<double> rates = cmc(scores, probe_ids, gallery_ids, &excluded);
    report.excluded_probes += excluded;
    const double trial_map = map_score(scores, probe_ids, gallery_ids);
    if (report.cmc.empty()) report.cmc.assign(rates.size(), 0.0);
    if (report.cmc.size() != rates.size())
      raise(ErrorCode::data, "evaluate_splits: gallery size varies across trials");
    for (std::size_t r = 0; r < rates.size(); ++r) report.cmc[r] += rates[r];
    report.map += trial_map;
    report.per_trial_rank1.push_back(rates[0]);
    report.per_trial_map.push_back(trial_map);
    report.per_trial_cmc.push_back(std::move(rates));
  }
  const double inv = 1.0 / static_cast<double>(report.trials);
  for (double& r : report.cmc) r *= inv;
  report.map *= inv;
  return report;
}

}  // namespace dafe
