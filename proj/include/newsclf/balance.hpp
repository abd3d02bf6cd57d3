#pragma once

// Stratified splitting, oversampling without replacement and
// class-weight computation.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "newsclf/corpus.hpp"

namespace newsclf {

enum class SplitStrategy { fractions, k_fold };

struct SplitSpec {
  SplitStrategy strategy = SplitStrategy::k_fold;
  int k = 0;                                   // k_fold
  double train = 0, val = 0, test = 0;         // fractions, must sum to 1

  static SplitSpec folds(int k);
  static SplitSpec three_way(double train, double val, double test);
  int fold_count() const;
};

struct SplitPlan {
  std::map<std::string, int> fold_of;          // item key → fold index
  SplitSpec spec;
  std::vector<std::string> strata_keys;        // subset of {"label", "language"}

  void save(const std::string& path) const;    // TSV item_id<TAB>fold
  static SplitPlan load(const std::string& path, const SplitSpec& spec);
};

// Deterministic stratified split. Strata are the observed combinations of
// the requested keys; each stratum is shuffled with a seed derived from
// (seed, stratum) and dealt round-robin starting at fold
// (hash(stratum) mod k), so undersized strata still spread out. The
// fractions strategy apportions each stratum by largest remainder.
SplitPlan stratified_split(const LabeledSet& set, const std::vector<std::string>& strata_keys,
                           const SplitSpec& strategy, std::uint64_t seed);

// Items of `set` assigned to `fold` by the plan, in original order.
LabeledSet take_fold(const LabeledSet& set, const SplitPlan& plan, int fold);

// Oversamples target_class within one language until its count reaches
// the majority class count for that language. Duplicates are drawn by
// repeated full shuffled passes over the pool plus one final partial
// pass, so per-item multiplicities differ by at most one. With
// auxiliary_pool_only the pool is restricted to items flagged auxiliary.
LabeledSet oversample(const LabeledSet& set, const std::string& language, Genre target_class,
                      std::uint64_t seed, bool auxiliary_pool_only = false);

// Brings every (language, class) with a non-empty pool up to its
// language's majority count. When use_auxiliary_pools is set, a class
// whose pool contains auxiliary items draws duplicates from those only.
LabeledSet balance_all(const LabeledSet& set, std::uint64_t seed, bool use_auxiliary_pools = false);

struct ClassWeights {
  std::vector<double> weights;
  std::string scheme;
  double clamp_min = 0.1;
  double clamp_max = 10.0;
};

// inverse_freq: w_c = N / (C * n_c), clamped; n_c = 0 gives clamp_max.
ClassWeights class_weights(const std::vector<std::vector<std::uint8_t>>& label_matrix,
                           const std::string& scheme = "inverse_freq", double clamp_min = 0.1,
                           double clamp_max = 10.0);

// N x C binary matrix for a labeled set; genre items become one-hot rows.
std::vector<std::vector<std::uint8_t>> label_matrix(const LabeledSet& set, int n_classes);

}  // namespace newsclf
