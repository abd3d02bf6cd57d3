#pragma once

#include <limits>
#include <map>
#include <string>
#include <vector>

#include "newsclf/corpus.hpp"
#include "newsclf/model.hpp"
#include "newsclf/train.hpp"
#include "newsclf/translate.hpp"

// Prediction, thresholding, majority-vote ensembling with a
// best-validation tie-break, and per-language routing that can send a
// language through translation before running a target-language model.

namespace newsclf {

struct Prediction {
  std::string article_id;
  int paragraph = 0;  // 1-based for persuasion, 0 = whole article
  Genre genre = Genre::opinion;      // genre subtask only
  std::vector<std::uint8_t> labels;  // framing / persuasion, width n_classes
  std::vector<double> scores;        // per-class, in [0, 1]
  std::string route;                 // filled by route_and_predict
};

struct PredictionSet {
  Subtask subtask = Subtask::genre;
  int n_classes = 0;
  std::vector<Prediction> items;
};

// First index of the maximum, so exact ties resolve deterministically.
int argmax_label(const std::vector<double>& scores);

// Bit c set iff probs[c] >= threshold; an all-zero row is legal output.
std::vector<std::uint8_t> threshold_labels(const std::vector<double>& probs, double threshold);

// Eval-mode forward pass over an encoded set. Genre rows carry softmax
// probabilities and the argmax label; multilabel rows carry sigmoid
// probabilities and the thresholded bits. The set must have been encoded
// with the vocabulary the model is bound to.
PredictionSet predict(Model& model, const EncodedSet& set, double threshold);

// Converts predictions to the label-file representation (one entry per
// item key; duplicate keys are an error).
LabelSet predictions_to_labels(const PredictionSet& preds);

struct EnsembleMember {
  std::string checkpoint;  // reference only; never dereferenced here
  double validation = std::numeric_limits<double>::quiet_NaN();
};

struct EnsembleSpec {
  std::vector<EnsembleMember> members;  // vote order

  void validate() const;  // at least two members
};

// Majority vote over hard labels. Genre: plurality; on a tie the members
// are ranked by validation score (descending, earlier member first on
// equal scores) and the first one whose label is among the tied leaders
// decides. Multilabel: a class is on iff strictly more than half the
// members predict it; at exactly half (even counts) the best-validation
// member's bit decides. Output scores are vote fractions, not averaged
// probabilities.
PredictionSet ensemble_vote(const std::vector<PredictionSet>& members, const EnsembleSpec& spec,
                            Subtask subtask);

enum class RouteKind { direct, translate_test };

struct RoutePlan {
  RouteKind kind = RouteKind::direct;
  std::string model;   // ensemble id to run
  std::string target;  // translate_test only: language to translate into

  bool operator==(const RoutePlan&) const = default;
};

struct RoutingTable {
  std::map<std::string, RoutePlan> plans;  // language -> plan
};

// JSON form: {"de": {"plan":"direct","model":"multi"},
//             "es": {"plan":"translate_test","target":"en","model":"mono"}}
RoutingTable parse_routing_table(const std::string& json_text);
RoutingTable load_routing_table(const std::string& path);
std::string routing_table_json(const RoutingTable& table);

// A loaded ensemble: models parallel to spec.members, all bound to the
// same vocabulary. A single-model entry is allowed; voting then reduces
// to that model's predictions.
struct EnsembleRuntime {
  EnsembleSpec spec;
  std::vector<Model> models;
};

struct RouteOptions {
  std::int64_t max_len = 128;
  double threshold = 0.5;
  Abbreviations abbrev;  // sentence splitting for encoding and chunking
};

struct RouteResult {
  PredictionSet predictions;               // input item order, failed articles dropped
  std::vector<TranslateFailure> failures;  // translation failures, run continues
};

// Every language in the set must have a plan and every plan a known
// ensemble id; those are hard errors. Translation failures are per-item
// entries. Each prediction records the route that produced it, e.g.
// "direct(multi)" or "translate_test(en, mono)".
RouteResult route_and_predict(const LabeledSet& set, const RoutingTable& routing,
                              const TranslationBackend& backend,
                              std::map<std::string, EnsembleRuntime>& ensembles,
                              const Vocab& vocab, const RouteOptions& options);

}  // namespace newsclf
