#include "newsclf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "newsclf/common.hpp"

namespace newsclf {

namespace {

ClassScore score_from_counts(const std::string& name, std::int64_t tp, std::int64_t fp,
                             std::int64_t fn) {
  ClassScore s;
  s.name = name;
  s.tp = tp;
  s.fp = fp;
  s.fn = fn;
  s.support = tp + fn;
  s.precision = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  s.recall = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  s.f1 = (s.precision + s.recall) > 0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
                                      : 0.0;
  return s;
}

MetricsReport from_class_counts(const std::vector<std::int64_t>& tp,
                                const std::vector<std::int64_t>& fp,
                                const std::vector<std::int64_t>& fn, const Registry& classes) {
  MetricsReport r;
  std::int64_t sum_tp = 0, sum_fp = 0, sum_fn = 0;
  for (std::size_t c = 0; c < classes.names.size(); ++c) {
    r.per_class.push_back(score_from_counts(classes.names[c], tp[c], fp[c], fn[c]));
    sum_tp += tp[c];
    sum_fp += fp[c];
    sum_fn += fn[c];
    r.total_support += tp[c] + fn[c];
    r.macro_precision += r.per_class.back().precision;
    r.macro_recall += r.per_class.back().recall;
    r.macro_f1 += r.per_class.back().f1;
  }
  const double n_classes = static_cast<double>(classes.names.size());
  if (n_classes > 0) {
    r.macro_precision /= n_classes;
    r.macro_recall /= n_classes;
    r.macro_f1 /= n_classes;
  }
  r.micro_precision =
      (sum_tp + sum_fp) > 0 ? static_cast<double>(sum_tp) / static_cast<double>(sum_tp + sum_fp)
                            : 0.0;
  r.micro_recall =
      (sum_tp + sum_fn) > 0 ? static_cast<double>(sum_tp) / static_cast<double>(sum_tp + sum_fn)
                            : 0.0;
  r.micro_f1 = (r.micro_precision + r.micro_recall) > 0
                   ? 2.0 * r.micro_precision * r.micro_recall /
                         (r.micro_precision + r.micro_recall)
                   : 0.0;
  return r;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Both per_language_report overloads share the grouping logic; only the
// label container differs.
template <typename Labels>
LanguageBreakdown grouped_report(const Labels& pred, const Labels& gold,
                                 const std::vector<std::string>& item_language,
                                 const LanguageRegistry& languages, const Registry& classes) {
  require(pred.size() == gold.size(), "per-language report: prediction/gold size mismatch");
  require(item_language.size() == gold.size(),
          "per-language report: language column size mismatch");
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < item_language.size(); ++i) {
    if (!languages.contains(item_language[i]))
      fail_validation("per-language report: unknown language code '" + item_language[i] + "'");
    groups[item_language[i]].push_back(i);
  }
  LanguageBreakdown out;
  for (const std::string& code : languages.codes) {
    auto it = groups.find(code);
    if (it == groups.end()) {
      out.warnings.push_back("language '" + code + "': no evaluation items");
      continue;
    }
    Labels p, g;
    p.reserve(it->second.size());
    g.reserve(it->second.size());
    for (std::size_t i : it->second) {
      p.push_back(pred[i]);
      g.push_back(gold[i]);
    }
    out.by_language.emplace(code, f1_scores(p, g, classes));
  }
  out.overall = f1_scores(pred, gold, classes);
  return out;
}

int parse_int_field(const std::string& s, std::size_t line_no, const char* what) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    used = std::string::npos;
  }
  if (used != s.size() || s.empty())
    fail_validation("metrics tsv: line " + std::to_string(line_no) + ": bad " + what + " '" + s +
                    "'");
  return v;
}

double parse_double_field(const std::string& s, std::size_t line_no, const char* what) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = std::string::npos;
  }
  if (used != s.size() || s.empty())
    fail_validation("metrics tsv: line " + std::to_string(line_no) + ": bad " + what + " '" + s +
                    "'");
  return v;
}

}  // namespace

MetricsReport f1_scores(const std::vector<int>& pred, const std::vector<int>& gold,
                        const Registry& classes) {
  require(pred.size() == gold.size(), "f1_scores: prediction/gold size mismatch");
  const int n = static_cast<int>(classes.names.size());
  std::vector<std::int64_t> tp(classes.names.size(), 0), fp(classes.names.size(), 0),
      fn(classes.names.size(), 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    require(pred[i] >= 0 && pred[i] < n, "f1_scores: prediction class id out of range");
    require(gold[i] >= 0 && gold[i] < n, "f1_scores: gold class id out of range");
    if (pred[i] == gold[i]) {
      ++tp[static_cast<std::size_t>(gold[i])];
    } else {
      ++fp[static_cast<std::size_t>(pred[i])];
      ++fn[static_cast<std::size_t>(gold[i])];
    }
  }
  return from_class_counts(tp, fp, fn, classes);
}

MetricsReport f1_scores(const std::vector<std::vector<std::uint8_t>>& pred,
                        const std::vector<std::vector<std::uint8_t>>& gold,
                        const Registry& classes) {
  require(pred.size() == gold.size(), "f1_scores: prediction/gold size mismatch");
  const std::size_t n = classes.names.size();
  std::vector<std::int64_t> tp(n, 0), fp(n, 0), fn(n, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    require(pred[i].size() == n && gold[i].size() == n,
            "f1_scores: label vector width must equal the class count");
    for (std::size_t c = 0; c < n; ++c) {
      require(pred[i][c] <= 1 && gold[i][c] <= 1, "f1_scores: label vectors must be 0/1");
      if (pred[i][c] && gold[i][c]) ++tp[c];
      else if (pred[i][c]) ++fp[c];
      else if (gold[i][c]) ++fn[c];
    }
  }
  return from_class_counts(tp, fp, fn, classes);
}

LanguageBreakdown per_language_report(const std::vector<int>& pred, const std::vector<int>& gold,
                                      const std::vector<std::string>& item_language,
                                      const LanguageRegistry& languages,
                                      const Registry& classes) {
  return grouped_report(pred, gold, item_language, languages, classes);
}

LanguageBreakdown per_language_report(const std::vector<std::vector<std::uint8_t>>& pred,
                                      const std::vector<std::vector<std::uint8_t>>& gold,
                                      const std::vector<std::string>& item_language,
                                      const LanguageRegistry& languages,
                                      const Registry& classes) {
  return grouped_report(pred, gold, item_language, languages, classes);
}

std::string report_csv(const MetricsReport& report) {
  std::string out = "class,precision,recall,f1,support\n";
  for (const ClassScore& s : report.per_class) {
    out += csv_field(s.name) + "," + fmt6(s.precision) + "," + fmt6(s.recall) + "," + fmt6(s.f1) +
           "," + std::to_string(s.support) + "\n";
  }
  out += "micro avg," + fmt6(report.micro_precision) + "," + fmt6(report.micro_recall) + "," +
         fmt6(report.micro_f1) + "," + std::to_string(report.total_support) + "\n";
  out += "macro avg," + fmt6(report.macro_precision) + "," + fmt6(report.macro_recall) + "," +
         fmt6(report.macro_f1) + "," + std::to_string(report.total_support) + "\n";
  return out;
}

EpochCurves parse_metrics_tsv(const std::string& text) {
  const std::vector<std::string> lines = split_lines(text);
  if (lines.empty() || lines[0] != "epoch\tlanguage\tf1_macro\ttrain_loss")
    fail_validation("metrics tsv: missing 'epoch\tlanguage\tf1_macro\ttrain_loss' header");
  EpochCurves curves;
  std::set<std::pair<std::string, int>> seen;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    const std::vector<std::string> f = split_on(lines[li], '\t');
    if (f.size() != 4)
      fail_validation("metrics tsv: line " + std::to_string(li + 1) + ": expected 4 fields, got " +
                      std::to_string(f.size()));
    const int epoch = parse_int_field(f[0], li + 1, "epoch");
    if (epoch < 1)
      fail_validation("metrics tsv: line " + std::to_string(li + 1) + ": epoch must be >= 1");
    if (f[1].empty())
      fail_validation("metrics tsv: line " + std::to_string(li + 1) + ": empty language");
    parse_double_field(f[3], li + 1, "train_loss");
    if (f[2] == "-") continue;  // trained without validation; nothing to plot
    const double f1 = parse_double_field(f[2], li + 1, "f1_macro");
    if (!seen.insert({f[1], epoch}).second)
      fail_validation("metrics tsv: line " + std::to_string(li + 1) + ": duplicate entry for '" +
                      f[1] + "' epoch " + std::to_string(epoch));
    curves.series[f[1]].push_back({epoch, f1});
  }
  for (auto& [lang, pts] : curves.series) {
    std::stable_sort(pts.begin(), pts.end(),
                     [](const EpochCurvePoint& a, const EpochCurvePoint& b) {
                       return a.epoch < b.epoch;
                     });
    int best = pts.front().epoch;
    double best_f1 = pts.front().f1;
    for (const EpochCurvePoint& p : pts) {
      if (p.f1 > best_f1) {  // strict: ties keep the earliest epoch
        best_f1 = p.f1;
        best = p.epoch;
      }
    }
    curves.best_epoch[lang] = best;
  }
  return curves;
}

std::string epoch_curves_csv(const EpochCurves& curves) {
  std::string out = "language,epoch,f1_macro,is_best\n";
  for (const auto& [lang, pts] : curves.series) {
    const int best = curves.best_epoch.at(lang);
    for (const EpochCurvePoint& p : pts) {
      out += csv_field(lang) + "," + std::to_string(p.epoch) + "," + fmt6(p.f1) + "," +
             (p.epoch == best ? "1" : "0") + "\n";
    }
  }
  return out;
}

std::string epoch_curves_svg(const EpochCurves& curves) {
  constexpr double kWidth = 760, kHeight = 440;
  constexpr double kLeft = 60, kRight = 600, kTop = 30, kBottom = 400;
  static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                                   "#8c564b", "#17becf", "#e377c2", "#7f7f7f", "#bcbd22"};
  constexpr std::size_t kPaletteSize = sizeof kPalette / sizeof kPalette[0];

  int min_epoch = 0, max_epoch = 0;
  for (const auto& [lang, pts] : curves.series) {
    for (const EpochCurvePoint& p : pts) {
      if (min_epoch == 0 || p.epoch < min_epoch) min_epoch = p.epoch;
      if (p.epoch > max_epoch) max_epoch = p.epoch;
    }
  }
  const bool empty = curves.series.empty();
  if (min_epoch == max_epoch) {
    // degenerate x domain; pad so the single column sits mid-plot
    min_epoch -= 1;
    max_epoch += 1;
  }
  const auto x_of = [&](double epoch) {
    return kLeft + (epoch - min_epoch) / static_cast<double>(max_epoch - min_epoch) *
                       (kRight - kLeft);
  };
  const auto y_of = [&](double f1) { return kBottom - f1 * (kBottom - kTop); };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " + fmt6(kWidth) + " " +
         fmt6(kHeight) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + fmt6((kLeft + kRight) / 2) +
         "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">validation macro-F1 by epoch"
         "</text>\n";

  // axes
  svg += "<line x1=\"" + fmt6(kLeft) + "\" y1=\"" + fmt6(kBottom) + "\" x2=\"" + fmt6(kRight) +
         "\" y2=\"" + fmt6(kBottom) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + fmt6(kLeft) + "\" y1=\"" + fmt6(kTop) + "\" x2=\"" + fmt6(kLeft) +
         "\" y2=\"" + fmt6(kBottom) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double f1 = 0.25 * i;
    svg += "<line x1=\"" + fmt6(kLeft - 4) + "\" y1=\"" + fmt6(y_of(f1)) + "\" x2=\"" +
           fmt6(kRight) + "\" y2=\"" + fmt6(y_of(f1)) +
           "\" stroke=\"#dddddd\" stroke-width=\"0.5\"/>\n";
    char label[16];
    std::snprintf(label, sizeof label, "%.2f", f1);
    svg += "<text x=\"" + fmt6(kLeft - 8) + "\" y=\"" + fmt6(y_of(f1) + 4) +
           "\" text-anchor=\"end\">" + label + "</text>\n";
  }
  if (!empty) {
    const int span = max_epoch - min_epoch;
    const int tick_step = span <= 12 ? 1 : (span + 9) / 10;
    for (int e = min_epoch; e <= max_epoch; e += tick_step) {
      svg += "<text x=\"" + fmt6(x_of(e)) + "\" y=\"" + fmt6(kBottom + 16) +
             "\" text-anchor=\"middle\">" + std::to_string(e) + "</text>\n";
    }
  }
  svg += "<text x=\"" + fmt6((kLeft + kRight) / 2) + "\" y=\"" + fmt6(kBottom + 34) +
         "\" text-anchor=\"middle\">epoch</text>\n";

  std::size_t color_idx = 0;
  double legend_y = kTop + 10;
  for (const auto& [lang, pts] : curves.series) {
    const char* color = kPalette[color_idx % kPaletteSize];
    ++color_idx;
    const int best = curves.best_epoch.at(lang);
    std::string points;
    for (const EpochCurvePoint& p : pts) {
      if (!points.empty()) points += " ";
      points += fmt6(x_of(p.epoch)) + "," + fmt6(y_of(p.f1));
    }
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"1.5\" points=\"" + points + "\"/>\n";
    double best_f1 = 0;
    for (const EpochCurvePoint& p : pts) {
      svg += "<circle cx=\"" + fmt6(x_of(p.epoch)) + "\" cy=\"" + fmt6(y_of(p.f1)) +
             "\" r=\"2.5\" fill=\"" + color + "\"/>\n";
      if (p.epoch == best) best_f1 = p.f1;
    }
    // the selected epoch gets a dashed drop line and an open ring
    svg += "<line x1=\"" + fmt6(x_of(best)) + "\" y1=\"" + fmt6(y_of(best_f1)) + "\" x2=\"" +
           fmt6(x_of(best)) + "\" y2=\"" + fmt6(kBottom) + "\" stroke=\"" + color +
           "\" stroke-dasharray=\"3,3\" stroke-width=\"0.8\"/>\n";
    svg += "<circle cx=\"" + fmt6(x_of(best)) + "\" cy=\"" + fmt6(y_of(best_f1)) +
           "\" r=\"5\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\"/>\n";
    svg += "<line x1=\"" + fmt6(kRight + 16) + "\" y1=\"" + fmt6(legend_y - 4) + "\" x2=\"" +
           fmt6(kRight + 40) + "\" y2=\"" + fmt6(legend_y - 4) + "\" stroke=\"" + color +
           "\" stroke-width=\"1.5\"/>\n";
    svg += "<text x=\"" + fmt6(kRight + 46) + "\" y=\"" + fmt6(legend_y) + "\">" +
           xml_escape(lang) + " (best epoch " + std::to_string(best) + ")</text>\n";
    legend_y += 18;
  }
  if (empty) {
    svg += "<text x=\"" + fmt6((kLeft + kRight) / 2) + "\" y=\"" +
           fmt6((kTop + kBottom) / 2) + "\" text-anchor=\"middle\">no validation data</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

void epoch_curve_report(const std::string& tsv_path, const std::string& csv_path,
                        const std::string& svg_path) {
  const EpochCurves curves = parse_metrics_tsv(read_text_file(tsv_path));
  write_text_file(csv_path, epoch_curves_csv(curves));
  write_text_file(svg_path, epoch_curves_svg(curves));
}

}  // namespace newsclf
