#pragma once

// Micro transformer encoder over the tensor graph: learned positional plus
// token embeddings, post-norm attention/feed-forward blocks, optional
// bottleneck adapters, a Tanh pooler classification head, and a tied-table
// masked-token head. Checkpoints pair a parameter snapshot with a JSON
// sidecar describing the architecture.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "newsclf/corpus.hpp"
#include "newsclf/tensor.hpp"

namespace newsclf {

struct ModelConfig {
  std::int64_t vocab_size = 2000;
  std::int64_t d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  std::int64_t d_ff = 256;
  std::int64_t max_len = 128;
  double dropout = 0.1;

  void validate() const;
};

enum class AdapterPlacement { none, houlsby, pfeiffer };
enum class AdapterNonlinearity { gelu, relu };

std::string adapter_placement_name(AdapterPlacement p);
AdapterPlacement adapter_placement_from_name(const std::string& name);
std::string adapter_nonlinearity_name(AdapterNonlinearity n);
AdapterNonlinearity adapter_nonlinearity_from_name(const std::string& name);

struct AdapterConfig {
  AdapterPlacement placement = AdapterPlacement::none;
  int reduction_factor = 8;
  AdapterNonlinearity nonlinearity = AdapterNonlinearity::gelu;

  // d / reduction_factor; must divide evenly.
  std::int64_t bottleneck(std::int64_t d_model) const;
};

struct HeadConfig {
  Subtask task = Subtask::genre;
  int n_classes = 3;
};

// Default class widths: genre 3, framing 14, persuasion 23.
HeadConfig head_for(Subtask task);

// Parameters plus the configuration needed to rebuild the graphs around
// them. vocab_hash records the tokenizer the model was trained with (0 =
// not yet bound); step counts optimizer steps applied so far.
struct Model {
  ModelConfig config;
  AdapterConfig adapters;
  std::uint64_t seed = 0;
  std::uint64_t vocab_hash = 0;
  std::int64_t step = 0;
  ParamStore<double> params;
};

// Embeddings and encoder layers, initialized from the seed (per-tensor
// streams keyed by name, so creation order is irrelevant). Heads are
// attached separately.
Model build_encoder(const ModelConfig& config, std::uint64_t seed);

// Pooler head: CLS state -> linear(d,d) -> Tanh -> linear(d, n_classes).
void attach_head(Model& model, const HeadConfig& head);

// Masked-token head: linear(d,d) -> GELU -> layer-norm, scored against the
// token embedding table (tied weights) plus a per-token bias.
void attach_mlm_head(Model& model);

// Adds adapter parameters (down projection random, up projection zero, so
// insertion is an exact no-op) and freezes everything except adapters,
// heads, and layer-norm affine terms.
void insert_adapters(Model& model, const AdapterConfig& config);

std::vector<std::string> trainable_parameters(const Model& model);

// A classification graph bound to its named input/output nodes. Feed "ids"
// (batch, len) and "attn_mask" (batch, len); forward to `logits` for
// inference. For the loss, also feed "targets" (class indices for genre,
// 0/1 matrices otherwise), "class_weights" (n_classes), and "loss_scale"
// (a one-element tensor; the raw summed loss is multiplied by it, which is
// what keeps micro-batch accumulation bit-identical to full batches).
struct ClassifyGraph {
  Graph<double> g;
  int ids = -1;
  int mask = -1;
  int targets = -1;
  int weights = -1;
  int loss_scale = -1;
  int logits = -1;
  int loss = -1;
};

ClassifyGraph build_classify_graph(const Model& model, const HeadConfig& head);

// Masked-token graph. "mlm_pairs" is a (P, 2) list of (batch row, position)
// to score; logits come back flattened as (P, vocab). "mlm_targets" holds
// the original token ids of those positions.
struct MlmGraph {
  Graph<double> g;
  int ids = -1;
  int mask = -1;
  int pairs = -1;
  int targets = -1;
  int loss_scale = -1;
  int logits = -1;
  int loss = -1;
};

MlmGraph build_mlm_graph(const Model& model);

// One-shot conveniences; training and batch inference hold a graph and
// Runner instead of rebuilding per call. Dropout is off (eval mode).
Tensor forward_classify(Model& model, const HeadConfig& head, const Tensor& ids,
                        const Tensor& attn_mask);
Tensor forward_mlm(Model& model, const Tensor& ids, const Tensor& attn_mask,
                   const Tensor& pairs);

struct Checkpoint {
  Model model;
  std::optional<HeadConfig> head;
};

// Snapshot at <path> (+ .manifest) and architecture sidecar at <path>.json.
// Trainable flags are not persisted; load re-derives them from the adapter
// configuration.
void save_checkpoint(const Model& model, const std::optional<HeadConfig>& head,
                     const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace newsclf
