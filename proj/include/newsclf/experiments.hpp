#pragma once

// Synthetic benchmark corpora with planted class keywords, plus the three
// standing experiments built on them: per-language vs pooled training,
// zero-shot transfer to a held-out language, and the translate-test sweep
// that routes every source language through every target checkpoint.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "newsclf/corpus.hpp"
#include "newsclf/eval.hpp"
#include "newsclf/model.hpp"
#include "newsclf/textprep.hpp"
#include "newsclf/train.hpp"
#include "newsclf/translate.hpp"

namespace newsclf {

// Recipe for a generated corpus. Every language gets its own disjoint token
// alphabet (class keywords plus fillers) unless listed in `clones`, which
// reuses another language's alphabet verbatim. Item texts are sampled
// deterministically from `seed`, independent of generation order.
struct SyntheticConfig {
  Subtask subtask = Subtask::genre;
  std::vector<std::string> languages = {"en", "fr"};
  std::map<std::string, std::string> clones;  // language -> alphabet donor

  // items per language per split; for genre they must divide by three so
  // the class balance is exact
  int train_items = 18;
  int val_items = 9;
  int test_items = 9;

  int keywords_per_class = 2;
  int filler_tokens = 6;
  double keyword_rate = 0.375;  // chance a sampled word is a class keyword
  int words_per_paragraph = 8;
  int paragraphs_per_article = 2;

  // persuasion only: label width and the chance a paragraph carries no row.
  // Unlabeled paragraphs are written from a separate background vocabulary
  // (boilerplate-style text that never appears in labeled rows), so models
  // trained without them have never seen that text.
  int techniques = 3;
  double unlabeled_rate = 0.35;
  int background_tokens = 4;

  std::uint64_t seed = 7;

  void validate() const;
};

// A generated corpus: raw articles and gold rows per split, the convenience
// LabeledSets built from them (unlabeled paragraphs kept), the vocabulary
// over all splits, and exact parallel lexicons for every ordered language
// pair. content_hash fingerprints everything the generator produced.
struct ExperimentCorpus {
  Subtask subtask = Subtask::genre;
  std::vector<Article> train_articles, val_articles, test_articles;
  LabelSet labels;
  LabeledSet train, validation, test;
  Registry classes;
  Vocab vocab;
  std::map<std::pair<std::string, std::string>, Lexicon> lexicons;
  std::uint64_t content_hash = 0;
};

ExperimentCorpus make_synthetic_corpus(const SyntheticConfig& config);

// Rows of `labels` that reference one of `articles`, e.g. to rebuild one
// split's LabeledSet with different unlabeled-paragraph handling.
LabelSet labels_for_articles(const LabelSet& labels, const std::vector<Article>& articles);

// One <src>_<tgt>.tsv per ordered pair, loadable by load_lexicon.
void write_lexicons(const ExperimentCorpus& corpus, const std::string& dir);

LabeledSet filter_language(const LabeledSet& set, const std::string& language);

// Sorted distinct item languages.
std::vector<std::string> corpus_languages(const LabeledSet& set);

// Runs fn(0), ..., fn(n - 1) on a bounded worker pool. Blocks until every
// job has finished; if any threw, the lowest-index exception is rethrown
// after the drain so failures are deterministic under any scheduling.
void run_jobs(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

// Scores a trained model on an encoded set: argmax for genre, thresholded
// sigmoids for the multilabel subtasks.
MetricsReport evaluate_model(Model& model, const EncodedSet& data, double threshold,
                             const Registry& classes);

// Shared experiment settings. model.vocab_size is overwritten from the
// corpus. Each runner writes report.csv and manifest.json under out_dir and
// keeps per-run checkpoints under out_dir/runs.
struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::int64_t max_len = 32;
  double threshold = 0.5;
  int workers = 2;
  std::string out_dir;

  void validate() const;
};

// Mean and population standard deviation over the seed runs.
struct CellStat {
  double mean = 0;
  double stddev = 0;
  int runs = 0;
};

// Per-language training against pooled training, scored on each language's
// validation split (macro-F1, aggregated over config.seeds).
struct MonoVsMultiReport {
  std::vector<std::string> languages;
  std::map<std::string, CellStat> mono, multi;
  std::string csv;
  std::string csv_path, manifest_path;
};

MonoVsMultiReport run_mono_vs_multi(const ExperimentCorpus& corpus, const ExperimentConfig& config);

// Trains on every language except held_out, then scores every language's
// test split. The held-out row measures zero-shot transfer.
struct HoldoutRow {
  std::string language;
  bool held_out = false;
  CellStat f1;
};

struct HoldoutReport {
  std::string held_out;
  std::vector<HoldoutRow> rows;  // language-sorted
  std::string csv;
  std::string csv_path, manifest_path;
};

HoldoutReport run_zero_shot_holdout(const ExperimentCorpus& corpus, const std::string& held_out,
                                    const ExperimentConfig& config);

// Route table for the sweep: backends.at({source, target}) translates source
// test items into the target language. Diagonal cells never translate.
using BackendTable = std::map<std::pair<std::string, std::string>, TranslationBackend>;

BackendTable identity_backends(const std::vector<std::string>& languages);

// Lexicon routes backed by the corpus's generated parallel lexicons.
BackendTable corpus_backends(const ExperimentCorpus& corpus);

struct SweepCell {
  std::string source, target;
  bool direct = false;  // source == target, no translation
  double f1 = 0;        // test macro-F1
};

// One multilingual model is trained on seeds.front(); the per-language best
// validation epoch picks each target's checkpoint, and every source's test
// split is scored against every target checkpoint, translated when needed.
struct SweepReport {
  std::vector<std::string> languages;
  std::vector<SweepCell> cells;  // row-major over sorted languages
  std::map<std::string, int> epoch_by_language;
  std::map<std::string, std::string> checkpoint_by_language;
  std::string csv;
  std::string csv_path, manifest_path;
};

SweepReport run_translate_test_sweep(const ExperimentCorpus& corpus, const BackendTable& backends,
                                     const ExperimentConfig& config);

}  // namespace newsclf
