#pragma once

// Losses, AdamW with warmup + linear decay, masked-token pretraining, the
// epoch training loop with per-epoch snapshots and metric streaming, and
// checkpoint selection strategies.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "newsclf/corpus.hpp"
#include "newsclf/model.hpp"
#include "newsclf/textprep.hpp"

namespace newsclf {

struct OptimConfig {
  double eps = 1e-8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
};

struct TrainConfig {
  int epochs = 20;
  int batch_size = 16;
  // rows per forward/backward slice; gradients accumulate across slices so
  // any value (0 = whole batch) yields bit-identical updates
  int micro_batch = 0;
  double peak_lr = 1e-4;
  double warmup_ratio = 0.0;
  OptimConfig optim;
  std::uint64_t seed = 0;
  double threshold = 0.5;                // multilabel decision threshold
  std::string class_weighting = "none";  // "none" | "inverse_freq"

  void validate() const;
};

struct TaptConfig {
  int epochs = 60;
  int effective_batch = 128;
  int micro_batch = 16;
  double peak_lr = 1e-4;
  double warmup_ratio = 0.06;
  OptimConfig optim{1e-6, 0.9, 0.98, 0.01};
  double mask_rate = 0.15;
  std::uint64_t seed = 0;

  void validate() const;
};

// Mean loss in closed form, matching what the training graph computes per
// step. Genre: class-weighted cross-entropy averaged over rows (targets
// holds class indices). Framing/persuasion: class-weighted binary
// cross-entropy averaged over rows and classes; all-zero target rows
// contribute pure negative-class loss.
double compute_loss(const Tensor& logits, const Tensor& targets, Subtask task,
                    const std::vector<double>* class_weights = nullptr);

// Piecewise-linear schedule: 0 -> peak over round(warmup_ratio * total)
// steps, then peak -> 0 at total_steps. The peak is attained exactly once.
double lr_at(double peak_lr, double warmup_ratio, std::int64_t step, std::int64_t total_steps);

struct AdamState {
  std::map<std::string, Tensor> m, v;
  std::int64_t t = 0;  // completed steps
};

// One decoupled-weight-decay Adam step over every trainable parameter.
// Decay touches matrices only (ndim >= 2); biases and layer-norm terms are
// never decayed.
void adamw_step(ParamStore<double>& params, AdamState& state, const OptimConfig& cfg, double lr);

struct MaskPolicy {
  double rate = 0.15;
};

struct MaskedTokens {
  std::vector<int> ids;        // sequence after masking
  std::vector<int> positions;  // masked positions, ascending
  std::vector<int> targets;    // original ids at those positions
};

// Selects round(rate * maskable) positions among non-special tokens, then
// replaces 80% with MASK, 10% with a random non-special token, and leaves
// 10% unchanged. Deterministic per seed.
MaskedTokens mask_tokens(const TokenSeq& seq, const MaskPolicy& policy, const Vocab& vocab,
                         std::uint64_t seed);

// Labeled set encoded for the model: sentence-split, head+tail truncated
// to max_len - 2 tokens, then [CLS]...[SEP] encoded.
struct EncodedSet {
  Subtask subtask = Subtask::genre;
  std::int64_t max_len = 0;
  int n_classes = 0;
  std::uint64_t vocab_hash = 0;
  std::vector<TokenSeq> seqs;
  std::vector<int> genre_ids;                     // genre task
  std::vector<std::vector<std::uint8_t>> labels;  // framing/persuasion, N x C
  std::vector<std::string> language;
  std::vector<std::string> article_ids;  // item keys, parallel to seqs
  std::vector<int> paragraphs;           // 1-based for persuasion, else 0

  std::size_t size() const { return seqs.size(); }
};

EncodedSet encode_set(const LabeledSet& set, const Vocab& vocab, const Abbreviations& abbrev,
                      std::int64_t max_len, int n_classes);

// Dense (count, max_len) id and 0/1 mask tensors for rows
// order[begin .. begin+count).
void batch_inputs(const EncodedSet& set, const std::vector<std::size_t>& order, std::size_t begin,
                  std::size_t count, Tensor& ids, Tensor& mask);

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double train_loss = 0;
  bool has_validation = false;
  double f1_overall = 0;                         // pooled validation macro-F1
  std::map<std::string, double> f1_by_language;  // validation macro-F1
};

struct CheckpointSeries {
  std::vector<EpochMetrics> epochs;
  std::vector<std::string> snapshot_paths;  // parallel to epochs
  std::string metrics_tsv;
};

// Epoch loop with seeded shuffling. Every epoch snapshots the model under
// out_dir and appends `epoch<TAB>language<TAB>f1_macro<TAB>train_loss`
// rows to out_dir/metrics.tsv (one row per validation language plus an
// "all" row; without a validation set the F1 field is "-"). A non-finite
// loss aborts with a diagnostic.
CheckpointSeries train_model(Model& model, const HeadConfig& head, const EncodedSet& train,
                             const TrainConfig& cfg, const EncodedSet* validation,
                             const std::string& out_dir);

// Masked-token pretraining of all parameters. Attaches the MLM head when
// absent. Steps group effective_batch sequences; micro slices accumulate
// to bit-identical full-batch updates. Returns the mean masked-token loss
// per epoch.
std::vector<double> tapt(Model& model, const std::vector<TokenSeq>& corpus, const Vocab& vocab,
                         const TaptConfig& cfg);

// Mean masked-token loss over a corpus under a deterministic masking, with
// dropout off. Infinite/NaN-free by the stable loss form.
double mlm_eval_loss(Model& model, const std::vector<TokenSeq>& corpus, const Vocab& vocab,
                     double mask_rate, std::uint64_t seed);

enum class SelectStrategy { per_language, overall_best, min_train_loss };

std::string select_strategy_name(SelectStrategy s);
SelectStrategy select_strategy_from_name(const std::string& name);

struct Selection {
  std::map<std::string, int> epoch_by_language;  // per_language strategy
  int epoch = 0;                                 // the other strategies
};

// per_language: best validation F1 per language; overall_best: best pooled
// validation F1; min_train_loss: lowest training loss. Ties pick the
// earliest epoch. Asking for validation metrics a series does not carry is
// a contract error.
Selection select_checkpoint(const CheckpointSeries& series, SelectStrategy strategy);

}  // namespace newsclf
