#include "newsclf/configio.hpp"

#include <initializer_list>

#include "newsclf/common.hpp"
#include "newsclf/corpus.hpp"

namespace newsclf {

namespace {

void check_keys(const nlohmann::json& j, const char* what,
                std::initializer_list<const char*> allowed) {
  require(j.is_object(), std::string("config error: ") + what + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* name : allowed) known = known || key == name;
    require(known, "config error: unknown key '" + key + "' in " + std::string(what) + " config");
  }
}

template <typename T>
void take(const nlohmann::json& j, const char* key, T& into) {
  if (auto it = j.find(key); it != j.end()) into = it->get<T>();
}

}  // namespace

void to_json(nlohmann::json& j, const OptimConfig& c) {
  j = {{"eps", c.eps},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"weight_decay", c.weight_decay}};
}

void from_json(const nlohmann::json& j, OptimConfig& c) {
  check_keys(j, "optimizer", {"eps", "beta1", "beta2", "weight_decay"});
  take(j, "eps", c.eps);
  take(j, "beta1", c.beta1);
  take(j, "beta2", c.beta2);
  take(j, "weight_decay", c.weight_decay);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"vocab_size", c.vocab_size}, {"d_model", c.d_model}, {"n_layers", c.n_layers},
       {"n_heads", c.n_heads},       {"d_ff", c.d_ff},       {"max_len", c.max_len},
       {"dropout", c.dropout}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  check_keys(j, "model",
             {"vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_len", "dropout"});
  take(j, "vocab_size", c.vocab_size);
  take(j, "d_model", c.d_model);
  take(j, "n_layers", c.n_layers);
  take(j, "n_heads", c.n_heads);
  take(j, "d_ff", c.d_ff);
  take(j, "max_len", c.max_len);
  take(j, "dropout", c.dropout);
}

void to_json(nlohmann::json& j, const AdapterConfig& c) {
  j = {{"placement", adapter_placement_name(c.placement)},
       {"reduction_factor", c.reduction_factor},
       {"nonlinearity", adapter_nonlinearity_name(c.nonlinearity)}};
}

void from_json(const nlohmann::json& j, AdapterConfig& c) {
  check_keys(j, "adapter", {"placement", "reduction_factor", "nonlinearity"});
  if (auto it = j.find("placement"); it != j.end())
    c.placement = adapter_placement_from_name(it->get<std::string>());
  take(j, "reduction_factor", c.reduction_factor);
  if (auto it = j.find("nonlinearity"); it != j.end())
    c.nonlinearity = adapter_nonlinearity_from_name(it->get<std::string>());
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"micro_batch", c.micro_batch},
       {"peak_lr", c.peak_lr},
       {"warmup_ratio", c.warmup_ratio},
       {"optim", c.optim},
       {"seed", c.seed},
       {"threshold", c.threshold},
       {"class_weighting", c.class_weighting}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  check_keys(j, "train",
             {"epochs", "batch_size", "micro_batch", "peak_lr", "warmup_ratio", "optim", "seed",
              "threshold", "class_weighting"});
  take(j, "epochs", c.epochs);
  take(j, "batch_size", c.batch_size);
  take(j, "micro_batch", c.micro_batch);
  take(j, "peak_lr", c.peak_lr);
  take(j, "warmup_ratio", c.warmup_ratio);
  take(j, "optim", c.optim);
  take(j, "seed", c.seed);
  take(j, "threshold", c.threshold);
  take(j, "class_weighting", c.class_weighting);
}

void to_json(nlohmann::json& j, const TaptConfig& c) {
  j = {{"epochs", c.epochs},
       {"effective_batch", c.effective_batch},
       {"micro_batch", c.micro_batch},
       {"peak_lr", c.peak_lr},
       {"warmup_ratio", c.warmup_ratio},
       {"optim", c.optim},
       {"mask_rate", c.mask_rate},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TaptConfig& c) {
  check_keys(j, "tapt",
             {"epochs", "effective_batch", "micro_batch", "peak_lr", "warmup_ratio", "optim",
              "mask_rate", "seed"});
  take(j, "epochs", c.epochs);
  take(j, "effective_batch", c.effective_batch);
  take(j, "micro_batch", c.micro_batch);
  take(j, "peak_lr", c.peak_lr);
  take(j, "warmup_ratio", c.warmup_ratio);
  take(j, "optim", c.optim);
  take(j, "mask_rate", c.mask_rate);
  take(j, "seed", c.seed);
}

void to_json(nlohmann::json& j, const SyntheticConfig& c) {
  j = {{"subtask", subtask_name(c.subtask)},
       {"languages", c.languages},
       {"clones", c.clones},
       {"train_items", c.train_items},
       {"val_items", c.val_items},
       {"test_items", c.test_items},
       {"keywords_per_class", c.keywords_per_class},
       {"filler_tokens", c.filler_tokens},
       {"keyword_rate", c.keyword_rate},
       {"words_per_paragraph", c.words_per_paragraph},
       {"paragraphs_per_article", c.paragraphs_per_article},
       {"techniques", c.techniques},
       {"unlabeled_rate", c.unlabeled_rate},
       {"background_tokens", c.background_tokens},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SyntheticConfig& c) {
  check_keys(j, "synthetic",
             {"subtask", "languages", "clones", "train_items", "val_items", "test_items",
              "keywords_per_class", "filler_tokens", "keyword_rate", "words_per_paragraph",
              "paragraphs_per_article", "techniques", "unlabeled_rate", "background_tokens",
              "seed"});
  if (auto it = j.find("subtask"); it != j.end())
    c.subtask = subtask_from_name(it->get<std::string>());
  take(j, "languages", c.languages);
  take(j, "clones", c.clones);
  take(j, "train_items", c.train_items);
  take(j, "val_items", c.val_items);
  take(j, "test_items", c.test_items);
  take(j, "keywords_per_class", c.keywords_per_class);
  take(j, "filler_tokens", c.filler_tokens);
  take(j, "keyword_rate", c.keyword_rate);
  take(j, "words_per_paragraph", c.words_per_paragraph);
  take(j, "paragraphs_per_article", c.paragraphs_per_article);
  take(j, "techniques", c.techniques);
  take(j, "unlabeled_rate", c.unlabeled_rate);
  take(j, "background_tokens", c.background_tokens);
  take(j, "seed", c.seed);
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"model", c.model},     {"train", c.train},     {"seeds", c.seeds},
       {"max_len", c.max_len}, {"threshold", c.threshold}, {"workers", c.workers},
       {"out_dir", c.out_dir}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  check_keys(j, "experiment",
             {"model", "train", "seeds", "max_len", "threshold", "workers", "out_dir"});
  take(j, "model", c.model);
  take(j, "train", c.train);
  take(j, "seeds", c.seeds);
  take(j, "max_len", c.max_len);
  take(j, "threshold", c.threshold);
  take(j, "workers", c.workers);
  take(j, "out_dir", c.out_dir);
}

nlohmann::json parse_json_text(const std::string& text, const std::string& what) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  require(!j.is_discarded(), "config error: " + what + " is not valid JSON");
  return j;
}

template <typename T>
T parse_config(const std::string& text, const std::string& what) {
  nlohmann::json j = parse_json_text(text, what);
  try {
    return j.get<T>();
  } catch (const Error&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    fail_validation("config error: " + what + ": " + e.what());
  }
}

template OptimConfig parse_config<OptimConfig>(const std::string&, const std::string&);
template ModelConfig parse_config<ModelConfig>(const std::string&, const std::string&);
template AdapterConfig parse_config<AdapterConfig>(const std::string&, const std::string&);
template TrainConfig parse_config<TrainConfig>(const std::string&, const std::string&);
template TaptConfig parse_config<TaptConfig>(const std::string&, const std::string&);
template SyntheticConfig parse_config<SyntheticConfig>(const std::string&, const std::string&);
template ExperimentConfig parse_config<ExperimentConfig>(const std::string&, const std::string&);

}  // namespace newsclf
