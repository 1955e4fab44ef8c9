#include <cmath>

#include "doctest.h"
#include "error.hpp"
#include "evalproto.hpp"
#include "rng.hpp"

using namespace dafe;

namespace {

struct TableScorer : ScoreMatrixFn {
  Tensor table;  // item x item
  Tensor operator()(const std::vector<std::size_t>& probe,
                    const std::vector<std::size_t>& gallery) const override {
    Tensor out({probe.size(), gallery.size()});
    for (std::size_t p = 0; p < probe.size(); ++p)
      for (std::size_t g = 0; g < gallery.size(); ++g)
        out.at(p, g) = table.at(probe[p], gallery[g]);
    return out;
  }
};

}  // namespace

TEST_CASE("cmc and map on the 3x3 hand example") {
  // probes 0 and 1 match gallery items 0 and 1 at top score; probe 2 is a
  // second image of identity 0 whose true match sits at rank 2
  Tensor scores({3, 3}, {.9, .1, .2, .3, .8, .1, .5, .6, .4});
  std::vector<int> probe_ids = {0, 1, 0};
  std::vector<int> gallery_ids = {0, 1, 2};
  std::vector<double> rates = cmc(scores, probe_ids, gallery_ids);
  REQUIRE(rates.size() == 3);
  CHECK(rates[0] == doctest::Approx(2.0 / 3.0));
  CHECK(rates[1] == doctest::Approx(1.0));
  CHECK(rates[2] == doctest::Approx(1.0));
  CHECK(map_score(scores, probe_ids, gallery_ids) == doctest::Approx(5.0 / 6.0));
}

TEST_CASE("cmc extremes") {
  const std::size_t g = 5;
  Tensor identity({g, g});
  for (std::size_t i = 0; i < g; ++i) identity.at(i, i) = 1.0;
  std::vector<int> ids = {0, 1, 2, 3, 4};
  std::vector<double> best = cmc(identity, ids, ids);
  CHECK(best[0] == 1.0);
  CHECK(map_score(identity, ids, ids) == 1.0);

  Tensor adversarial({g, g});
  for (std::size_t i = 0; i < g; ++i)
    for (std::size_t j = 0; j < g; ++j) adversarial.at(i, j) = i == j ? -1.0 : 1.0;
  std::vector<double> worst = cmc(adversarial, ids, ids);
  for (std::size_t r = 0; r + 1 < g; ++r) CHECK(worst[r] == 0.0);
  CHECK(worst[g - 1] == 1.0);

  // true match always second
  Tensor second({3, 3});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      second.at(i, j) = (i == j) ? 0.5 : (j == (i + 1) % 3 ? 0.9 : 0.1);
  CHECK(map_score(second, ids = {0, 1, 2}, {0, 1, 2}) == doctest::Approx(0.5));
}

TEST_CASE("cmc monotonicity, terminal value, and rank invariance") {
  SeededRng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t g = 3 + rng.next_index(6);
    const std::size_t p = 3 + rng.next_index(8);
    Tensor scores({p, g});
    for (double& v : scores.values()) v = rng.next_gaussian();
    std::vector<int> gallery_ids(g), probe_ids(p);
    for (std::size_t i = 0; i < g; ++i) gallery_ids[i] = static_cast<int>(i);
    for (std::size_t i = 0; i < p; ++i)
      probe_ids[i] = static_cast<int>(rng.next_index(g));

    std::vector<double> rates = cmc(scores, probe_ids, gallery_ids);
    for (std::size_t r = 1; r < rates.size(); ++r) CHECK(rates[r] >= rates[r - 1]);
    CHECK(rates.back() == doctest::Approx(1.0));

    // applying a strictly increasing transform changes nothing
    Tensor warped = scores;
    for (double& v : warped.values()) v = std::exp(0.5 * v) + 2.0;
    CHECK(cmc(warped, probe_ids, gallery_ids) == rates);
    CHECK(map_score(warped, probe_ids, gallery_ids) ==
          doctest::Approx(map_score(scores, probe_ids, gallery_ids)).epsilon(1e-12));
  }
}

TEST_CASE("ties resolve pessimistically") {
  Tensor tied({1, 3}, {0.5, 0.5, 0.5});
  std::vector<int> probe = {0};
  std::vector<int> gallery = {0, 1, 2};
  std::vector<double> rates = cmc(tied, probe, gallery);
  CHECK(rates[0] == 0.0);
  CHECK(rates[1] == 0.0);
  CHECK(rates[2] == 1.0);

  // nudging the true match up can only improve the rates
  Tensor nudged = tied;
  nudged.at(0, 0) += 1e-12;
  std::vector<double> better = cmc(nudged, probe, gallery);
  for (std::size_t r = 0; r < 3; ++r) CHECK(better[r] >= rates[r]);
  CHECK(better[0] == 1.0);
}

TEST_CASE("probes without a gallery identity are excluded and counted") {
  Tensor scores({2, 2}, {0.9, 0.1, 0.2, 0.8});
  std::vector<int> probe = {0, 7};
  std::vector<int> gallery = {0, 1};
  std::size_t excluded = 0;
  std::vector<double> rates = cmc(scores, probe, gallery, &excluded);
  CHECK(excluded == 1);
  CHECK(rates[0] == 1.0);
}

TEST_CASE("make_splits obeys the single-shot contract") {
  std::vector<EvalItem> items;
  std::size_t idx = 0;
  for (int id = 0; id < 6; ++id)
    for (int view = 0; view < 2; ++view)
      for (int copy = 0; copy < (view == 1 ? 3 : 2); ++copy)
        items.push_back({idx++, id, view});
  // one identity missing the gallery view
  items.push_back({idx++, 99, 0});

  SeededRng rng(2);
  SplitStats stats;
  std::vector<EvalSplit> splits = make_splits(items, 10, 1, rng, &stats);
  CHECK(stats.excluded_identities == 1);
  REQUIRE(splits.size() == 10);
  for (const EvalSplit& s : splits) {
    CHECK(s.gallery.size() == 6);  // one per usable identity
    CHECK(s.probe.size() == 12);   // both view-0 images of each identity
    for (std::size_t g : s.gallery) CHECK(items[g].view == 1);
    for (std::size_t p : s.probe) CHECK(items[p].view == 0);
  }

  // reproducibility under the seed
  SeededRng rng2(2);
  std::vector<EvalSplit> again = make_splits(items, 10, 1, rng2);
  for (std::size_t t = 0; t < 10; ++t) {
    CHECK(splits[t].gallery == again[t].gallery);
    CHECK(splits[t].probe == again[t].probe);
  }
}

TEST_CASE("one image per identity per view collapses all trials") {
  std::vector<EvalItem> items;
  std::size_t idx = 0;
  for (int id = 0; id < 5; ++id)
    for (int view = 0; view < 2; ++view) items.push_back({idx++, id, view});
  SeededRng rng(3);
  std::vector<EvalSplit> splits = make_splits(items, 10, 1, rng);
  for (std::size_t t = 1; t < splits.size(); ++t) {
    CHECK(splits[t].gallery == splits[0].gallery);
    CHECK(splits[t].probe == splits[0].probe);
  }
}

TEST_CASE("evaluate_splits averages trials and respects permutations") {
  // 4 identities x 2 views, 2 images per view
  std::vector<EvalItem> items;
  std::size_t idx = 0;
  for (int id = 0; id < 4; ++id)
    for (int view = 0; view < 2; ++view)
      for (int copy = 0; copy < 2; ++copy) items.push_back({idx++, id, view});

  SeededRng rng(4);
  TableScorer scorer;
  scorer.table = Tensor({items.size(), items.size()});
  for (std::size_t a = 0; a < items.size(); ++a)
    for (std::size_t b = 0; b < items.size(); ++b)
      scorer.table.at(a, b) =
          (items[a].identity == items[b].identity ? 1.0 : 0.0) +
          0.01 * rng.next_gaussian();

  std::vector<EvalSplit> splits = make_splits(items, 10, 1, rng);
  EvalReport report = evaluate_splits(items, splits, scorer, false);
  CHECK(report.trials == 10);
  CHECK(report.cmc[0] > 0.9);
  double mean_rank1 = 0.0;
  for (double r : report.per_trial_rank1) mean_rank1 += r;
  mean_rank1 /= report.per_trial_rank1.size();
  CHECK(report.cmc[0] == doctest::Approx(mean_rank1).epsilon(1e-12));

  // permuting the gallery inside a trial leaves the metrics unchanged
  std::vector<EvalSplit> permuted = splits;
  for (EvalSplit& s : permuted)
    std::rotate(s.gallery.begin(), s.gallery.begin() + 1, s.gallery.end());
  EvalReport perm_report = evaluate_splits(items, permuted, scorer, false);
  CHECK(perm_report.cmc[0] == doctest::Approx(report.cmc[0]).epsilon(1e-12));
  CHECK(perm_report.map == doctest::Approx(report.map).epsilon(1e-12));

  // multi-query fuses probes per identity
  EvalReport mq = evaluate_splits(items, splits, scorer, true);
  CHECK(mq.cmc[0] >= report.cmc[0] - 1e-9);
}

TEST_CASE("random scores sit at chance level") {
  std::vector<EvalItem> items;
  std::size_t idx = 0;
  const int ids = 20;
  for (int id = 0; id < ids; ++id)
    for (int view = 0; view < 2; ++view)
      for (int copy = 0; copy < 2; ++copy) items.push_back({idx++, id, view});
  SeededRng rng(5);
  TableScorer scorer;
  scorer.table = Tensor({items.size(), items.size()});
  for (double& v : scorer.table.values()) v = rng.next_gaussian();
  std::vector<EvalSplit> splits = make_splits(items, 25, 1, rng);
  EvalReport report = evaluate_splits(items, splits, scorer, false);
  // 3-sigma binomial band around 1/ids over 25 trials x 40 probes
  const double p = 1.0 / ids;
  const double sigma = std::sqrt(p * (1 - p) / (25.0 * 40.0));
  CHECK(report.cmc[0] < p + 3 * sigma + 1e-9);
}
