#include "newsclf/balance.hpp"

#include <algorithm>
#include <cmath>

namespace newsclf {
namespace {

// Stratum identity: stable text so hashing and seeding are reproducible.
std::string stratum_key(const TrainItem& item, Subtask subtask,
                        const std::vector<std::string>& strata_keys) {
  std::string key;
  for (const std::string& k : strata_keys) {
    if (k == "language") {
      key += "lang=" + item.language() + ";";
    } else if (k == "label") {
      key += "label=";
      switch (subtask) {
        case Subtask::genre:
          key += genre_name(item.genre);
          break;
        case Subtask::framing:
          for (int f : item.frames) key += std::to_string(f) + ",";
          break;
        case Subtask::persuasion:
          for (std::size_t i = 0; i < item.techniques.size(); ++i)
            if (item.techniques[i]) key += std::to_string(i) + ",";
          break;
      }
      key += ";";
    } else {
      fail_validation("unknown stratification key '" + k + "'");
    }
  }
  return key;
}

// Largest-remainder apportionment of n into parts proportional to fracs.
std::vector<int> apportion(int n, const std::vector<double>& fracs) {
  std::vector<int> base(fracs.size());
  std::vector<std::pair<double, std::size_t>> rem;
  int assigned = 0;
  for (std::size_t i = 0; i < fracs.size(); ++i) {
    double q = fracs[i] * n;
    base[i] = static_cast<int>(std::floor(q));
    assigned += base[i];
    rem.emplace_back(q - std::floor(q), i);
  }
  std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;  // ties favor the earlier fold
  });
  for (int extra = n - assigned, i = 0; i < extra; ++i) base[rem[static_cast<std::size_t>(i)].second]++;
  return base;
}

}  // namespace

SplitSpec SplitSpec::folds(int k) {
  require(k >= 2, "k-fold split needs k >= 2");
  SplitSpec s;
  s.strategy = SplitStrategy::k_fold;
  s.k = k;
  return s;
}

SplitSpec SplitSpec::three_way(double train, double val, double test) {
  require(train >= 0 && val >= 0 && test >= 0, "split fractions must be non-negative");
  require(std::abs(train + val + test - 1.0) < 1e-9, "split fractions must sum to 1");
  SplitSpec s;
  s.strategy = SplitStrategy::fractions;
  s.train = train;
  s.val = val;
  s.test = test;
  return s;
}

int SplitSpec::fold_count() const { return strategy == SplitStrategy::k_fold ? k : 3; }

void SplitPlan::save(const std::string& path) const {
  std::vector<std::string> keys;
  for (const auto& [key, _] : fold_of) keys.push_back(key);
  std::sort(keys.begin(), keys.end(), id_less);
  std::string out;
  for (const auto& key : keys) out += key + "\t" + std::to_string(fold_of.at(key)) + "\n";
  write_text_file(path, out);
}

SplitPlan SplitPlan::load(const std::string& path, const SplitSpec& spec) {
  SplitPlan plan;
  plan.spec = spec;
  auto lines = split_lines(read_text_file(path));
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    if (trim(lines[ln]).empty()) continue;
    auto cols = split_on(lines[ln], '\t');
    if (cols.size() != 2)
      fail_validation("format error: expected item_id<TAB>fold at " + path + ":" +
                      std::to_string(ln + 1));
    int fold = 0;
    try {
      fold = std::stoi(cols[1]);
    } catch (...) {
      fail_validation("format error: bad fold index '" + cols[1] + "' in " + path);
    }
    require(fold >= 0 && fold < spec.fold_count(), "fold index out of range in " + path);
    require(plan.fold_of.emplace(cols[0], fold).second,
            "duplicate item '" + cols[0] + "' in " + path);
  }
  return plan;
}

SplitPlan stratified_split(const LabeledSet& set, const std::vector<std::string>& strata_keys,
                           const SplitSpec& strategy, std::uint64_t seed) {
  require(!set.items.empty(), "cannot split an empty set");
  const int n_folds = strategy.fold_count();

  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < set.items.size(); ++i)
    strata[stratum_key(set.items[i], set.subtask, strata_keys)].push_back(i);

  SplitPlan plan;
  plan.spec = strategy;
  plan.strata_keys = strata_keys;
  for (auto& [key, indices] : strata) {
    Rng rng(mix_seed(seed, fnv1a(key)));
    rng.shuffle(indices);
    if (strategy.strategy == SplitStrategy::k_fold) {
      int start = static_cast<int>(fnv1a(key) % static_cast<std::uint64_t>(n_folds));
      for (std::size_t j = 0; j < indices.size(); ++j) {
        int fold = (start + static_cast<int>(j)) % n_folds;
        plan.fold_of[set.items[indices[j]].key()] = fold;
      }
    } else {
      std::vector<int> counts =
          apportion(static_cast<int>(indices.size()), {strategy.train, strategy.val, strategy.test});
      std::size_t pos = 0;
      for (int fold = 0; fold < 3; ++fold)
        for (int c = 0; c < counts[static_cast<std::size_t>(fold)]; ++c, ++pos)
          plan.fold_of[set.items[indices[pos]].key()] = fold;
    }
  }
  return plan;
}

LabeledSet take_fold(const LabeledSet& set, const SplitPlan& plan, int fold) {
  LabeledSet out;
  out.subtask = set.subtask;
  for (const TrainItem& item : set.items) {
    auto it = plan.fold_of.find(item.key());
    require(it != plan.fold_of.end(), "split plan does not cover item '" + item.key() + "'");
    if (it->second == fold) out.items.push_back(item);
  }
  return out;
}

LabeledSet oversample(const LabeledSet& set, const std::string& language, Genre target_class,
                      std::uint64_t seed, bool auxiliary_pool_only) {
  require(set.subtask == Subtask::genre, "oversampling applies to the genre subtask");

  std::map<Genre, std::size_t> counts;
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < set.items.size(); ++i) {
    const TrainItem& item = set.items[i];
    if (item.language() != language) continue;
    ++counts[item.genre];
    if (item.genre == target_class && (!auxiliary_pool_only || item.auxiliary))
      pool.push_back(i);
  }
  if (pool.empty())
    fail_validation("oversampling pool is empty for language '" + language + "', class '" +
                    genre_name(target_class) + "'");

  std::size_t majority = 0;
  for (const auto& [_, c] : counts) majority = std::max(majority, c);
  std::size_t have = counts[target_class];

  LabeledSet out = set;
  Rng rng(mix_seed(seed, fnv1a(language + "/" + genre_name(target_class))));
  while (have < majority) {
    std::vector<std::size_t> pass = pool;
    rng.shuffle(pass);
    for (std::size_t idx : pass) {
      if (have >= majority) break;
      out.items.push_back(set.items[idx]);
      ++have;
    }
  }
  return out;
}

LabeledSet balance_all(const LabeledSet& set, std::uint64_t seed, bool use_auxiliary_pools) {
  require(set.subtask == Subtask::genre, "oversampling applies to the genre subtask");

  std::map<std::string, std::map<Genre, bool>> aux_present;
  std::map<std::string, std::vector<Genre>> classes;
  for (const TrainItem& item : set.items) {
    auto& seen = classes[item.language()];
    if (std::find(seen.begin(), seen.end(), item.genre) == seen.end()) seen.push_back(item.genre);
    if (item.auxiliary) aux_present[item.language()][item.genre] = true;
  }

  LabeledSet out = set;
  for (auto& [language, genres] : classes) {
    std::sort(genres.begin(), genres.end());
    for (Genre g : genres) {
      bool aux_only = use_auxiliary_pools && aux_present[language][g];
      out = oversample(out, language, g, seed, aux_only);
    }
  }
  return out;
}

ClassWeights class_weights(const std::vector<std::vector<std::uint8_t>>& label_matrix,
                           const std::string& scheme, double clamp_min, double clamp_max) {
  require(scheme == "inverse_freq", "unknown class-weight scheme '" + scheme + "'");
  require(!label_matrix.empty(), "class weights need at least one sample");
  require(clamp_min > 0 && clamp_min <= clamp_max, "bad clamp bounds");

  const std::size_t n = label_matrix.size();
  const std::size_t c = label_matrix[0].size();
  std::vector<std::size_t> pos(c, 0);
  std::size_t total = 0;
  for (const auto& row : label_matrix) {
    require(row.size() == c, "ragged label matrix");
    for (std::size_t j = 0; j < c; ++j) {
      pos[j] += row[j] ? 1u : 0u;
      total += row[j] ? 1u : 0u;
    }
  }
  require(total > 0, "class weights need at least one positive example");

  ClassWeights w;
  w.scheme = scheme;
  w.clamp_min = clamp_min;
  w.clamp_max = clamp_max;
  w.weights.resize(c);
  for (std::size_t j = 0; j < c; ++j) {
    double v = pos[j] == 0 ? clamp_max
                           : static_cast<double>(n) / (static_cast<double>(c) *
                                                       static_cast<double>(pos[j]));
    w.weights[j] = std::clamp(v, clamp_min, clamp_max);
  }
  return w;
}

std::vector<std::vector<std::uint8_t>> label_matrix(const LabeledSet& set, int n_classes) {
  std::vector<std::vector<std::uint8_t>> rows;
  rows.reserve(set.items.size());
  for (const TrainItem& item : set.items) {
    std::vector<std::uint8_t> row(static_cast<std::size_t>(n_classes), 0);
    switch (set.subtask) {
      case Subtask::genre:
        row.at(static_cast<std::size_t>(item.genre)) = 1;
        break;
      case Subtask::framing:
        for (int f : item.frames) row.at(static_cast<std::size_t>(f)) = 1;
        break;
      case Subtask::persuasion:
        require(item.techniques.size() == static_cast<std::size_t>(n_classes),
                "technique vector length mismatch for item '" + item.key() + "'");
        row = item.techniques;
        break;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace newsclf
