#pragma once

// Precision / recall / F1 scoring with micro and macro aggregation,
// per-language grouping over a pooled item set, CSV report writers, and
// epoch-curve rendering (CSV + SVG) from training metrics.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "newsclf/corpus.hpp"

namespace newsclf {

struct ClassScore {
  std::string name;
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t support = 0;  // tp + fn
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

// 0/0 ratios score 0 by convention, so absent classes drag the macro mean
// down instead of being skipped.
struct MetricsReport {
  std::vector<ClassScore> per_class;
  double micro_precision = 0;
  double micro_recall = 0;
  double micro_f1 = 0;
  double macro_precision = 0;
  double macro_recall = 0;
  double macro_f1 = 0;
  std::int64_t total_support = 0;
};

// Single-label: one class index per item, scored one-vs-rest.
MetricsReport f1_scores(const std::vector<int>& pred, const std::vector<int>& gold,
                        const Registry& classes);

// Multilabel: one binary vector per item, counted over (item, class) pairs.
MetricsReport f1_scores(const std::vector<std::vector<std::uint8_t>>& pred,
                        const std::vector<std::vector<std::uint8_t>>& gold,
                        const Registry& classes);

struct LanguageBreakdown {
  std::map<std::string, MetricsReport> by_language;
  MetricsReport overall;  // scored on the pooled items, not averaged per language
  std::vector<std::string> warnings;
};

LanguageBreakdown per_language_report(const std::vector<int>& pred, const std::vector<int>& gold,
                                      const std::vector<std::string>& item_language,
                                      const LanguageRegistry& languages,
                                      const Registry& classes);

LanguageBreakdown per_language_report(const std::vector<std::vector<std::uint8_t>>& pred,
                                      const std::vector<std::vector<std::uint8_t>>& gold,
                                      const std::vector<std::string>& item_language,
                                      const LanguageRegistry& languages,
                                      const Registry& classes);

// `class,precision,recall,f1,support` rows plus micro/macro aggregate rows.
std::string report_csv(const MetricsReport& report);

// Validation-F1 series per language, parsed from the training metrics TSV
// (epoch <TAB> language <TAB> f1_macro <TAB> train_loss). Rows whose F1
// field is "-" (no-validation training) carry no curve point.
struct EpochCurvePoint {
  int epoch = 0;
  double f1 = 0;
};

struct EpochCurves {
  std::map<std::string, std::vector<EpochCurvePoint>> series;  // sorted by epoch
  std::map<std::string, int> best_epoch;                       // earliest argmax
};

EpochCurves parse_metrics_tsv(const std::string& text);

std::string epoch_curves_csv(const EpochCurves& curves);
std::string epoch_curves_svg(const EpochCurves& curves);

// Reads the TSV and writes both renderings.
void epoch_curve_report(const std::string& tsv_path, const std::string& csv_path,
                        const std::string& svg_path);

}  // namespace newsclf
