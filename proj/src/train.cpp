#include "newsclf/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "newsclf/balance.hpp"
#include "newsclf/eval.hpp"

namespace newsclf {

namespace {

void validate_optim(const OptimConfig& o) {
  require(o.eps > 0, "config error: optimizer eps must be positive");
  require(o.beta1 >= 0 && o.beta1 < 1, "config error: beta1 must lie in [0,1)");
  require(o.beta2 >= 0 && o.beta2 < 1, "config error: beta2 must lie in [0,1)");
  require(o.weight_decay >= 0, "config error: weight decay must be non-negative");
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  require(epochs >= 1, "config error: epochs must be >= 1");
  require(batch_size >= 1, "config error: batch size must be >= 1");
  require(micro_batch >= 0, "config error: micro batch must be >= 0");
  require(peak_lr > 0, "config error: peak_lr must be positive");
  require(warmup_ratio >= 0 && warmup_ratio < 1, "config error: warmup ratio must lie in [0,1)");
  require(threshold > 0 && threshold < 1, "config error: threshold must lie in (0,1)");
  require(class_weighting == "none" || class_weighting == "inverse_freq",
          "config error: unknown class weighting '" + class_weighting + "'");
  validate_optim(optim);
}

void TaptConfig::validate() const {
  require(epochs >= 1, "config error: epochs must be >= 1");
  require(effective_batch >= 1, "config error: effective batch must be >= 1");
  require(micro_batch >= 0, "config error: micro batch must be >= 0");
  require(peak_lr > 0, "config error: peak_lr must be positive");
  require(warmup_ratio >= 0 && warmup_ratio < 1, "config error: warmup ratio must lie in [0,1)");
  require(mask_rate >= 0 && mask_rate <= 1, "config error: mask rate must lie in [0,1]");
  validate_optim(optim);
}

double compute_loss(const Tensor& logits, const Tensor& targets, Subtask task,
                    const std::vector<double>* class_weights) {
  require(logits.ndim() == 2, "loss error: logits must be (batch, classes)");
  const std::int64_t b = logits.dim(0), c = logits.dim(1);
  if (class_weights)
    require(static_cast<std::int64_t>(class_weights->size()) == c,
            "loss error: class weight count must equal the class count");
  auto w = [&](std::int64_t k) { return class_weights ? (*class_weights)[static_cast<std::size_t>(k)] : 1.0; };

  if (task == Subtask::genre) {
    require(targets.ndim() == 1 && targets.dim(0) == b,
            "loss error: genre targets must hold one class id per row");
    double sum = 0;
    for (std::int64_t i = 0; i < b; ++i) {
      const std::int64_t y = std::llround(targets[i]);
      require(y >= 0 && y < c, "loss error: target class id out of range");
      double mx = logits[i * c];
      for (std::int64_t k = 1; k < c; ++k) mx = std::max(mx, logits[i * c + k]);
      double z = 0;
      for (std::int64_t k = 0; k < c; ++k) z += std::exp(logits[i * c + k] - mx);
      sum += w(y) * (std::log(z) + mx - logits[i * c + y]);
    }
    return sum / static_cast<double>(b);
  }

  require(targets.shape == logits.shape,
          "loss error: multilabel targets must match the logit shape");
  double sum = 0;
  for (std::int64_t i = 0; i < b; ++i)
    for (std::int64_t k = 0; k < c; ++k) {
      const double x = logits[i * c + k];
      const double t = targets[i * c + k];
      require(t >= 0 && t <= 1, "loss error: multilabel targets must lie in [0,1]");
      sum += w(k) * (std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x))));
    }
  return sum / static_cast<double>(b * c);
}

double lr_at(double peak_lr, double warmup_ratio, std::int64_t step, std::int64_t total_steps) {
  require(peak_lr > 0, "schedule error: peak_lr must be positive");
  require(warmup_ratio >= 0 && warmup_ratio < 1, "schedule error: warmup ratio must lie in [0,1)");
  require(total_steps > 0, "schedule error: total steps must be positive");
  require(step >= 0 && step <= total_steps, "schedule error: step out of range");
  const std::int64_t warmup =
      std::llround(warmup_ratio * static_cast<double>(total_steps));
  if (step <= warmup)
    return warmup == 0 ? peak_lr
                       : peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  return peak_lr * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup);
}

void adamw_step(ParamStore<double>& params, AdamState& state, const OptimConfig& cfg, double lr) {
  validate_optim(cfg);
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (const auto& [name, grad] : params.gradients()) {
    Tensor& value = params.value(name);
    Tensor& m = state.m[name];
    Tensor& v = state.v[name];
    if (m.size() == 0) m = Tensor::zeros(value.shape);
    if (v.size() == 0) v = Tensor::zeros(value.shape);
    const bool decay = value.ndim() >= 2;  // never biases or layer-norm terms
    for (std::int64_t i = 0; i < value.size(); ++i) {
      const double g = (*grad)[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps);
      if (decay) update += cfg.weight_decay * value[i];
      value[i] -= lr * update;
    }
  }
}

MaskedTokens mask_tokens(const TokenSeq& seq, const MaskPolicy& policy, const Vocab& vocab,
                         std::uint64_t seed) {
  require(policy.rate >= 0 && policy.rate <= 1, "mask error: rate must lie in [0,1]");
  require(vocab.size() > Vocab::kReserved, "mask error: vocabulary has no regular tokens");
  MaskedTokens out;
  out.ids = seq.ids;
  std::vector<int> maskable;
  for (std::size_t i = 0; i < seq.ids.size(); ++i)
    if (!vocab.is_special(seq.ids[i])) maskable.push_back(static_cast<int>(i));
  const int k = static_cast<int>(
      std::floor(policy.rate * static_cast<double>(maskable.size()) + 0.5));
  if (k == 0) return out;
  Rng rng(seed);
  rng.shuffle(maskable);
  maskable.resize(static_cast<std::size_t>(k));
  std::sort(maskable.begin(), maskable.end());
  const int regular = vocab.size() - Vocab::kReserved;
  for (int pos : maskable) {
    out.positions.push_back(pos);
    out.targets.push_back(seq.ids[static_cast<std::size_t>(pos)]);
    const double u = rng.next_double();
    if (u < 0.8)
      out.ids[static_cast<std::size_t>(pos)] = Vocab::kMask;
    else if (u < 0.9)
      out.ids[static_cast<std::size_t>(pos)] =
          Vocab::kReserved + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(regular)));
    // else: kept as is, but still predicted
  }
  return out;
}

EncodedSet encode_set(const LabeledSet& set, const Vocab& vocab, const Abbreviations& abbrev,
                      std::int64_t max_len, int n_classes) {
  require(max_len >= 3, "encode error: max_len must admit CLS, a token and SEP");
  require(n_classes >= 2, "encode error: need at least two classes");
  EncodedSet out;
  out.subtask = set.subtask;
  out.max_len = max_len;
  out.n_classes = n_classes;
  out.vocab_hash = vocab.hash();
  for (const TrainItem& item : set.items) {
    const std::vector<std::string> sentences = split_sentences(item.text(), abbrev);
    const std::string fitted = head_tail_truncate(sentences, static_cast<int>(max_len) - 2);
    out.seqs.push_back(encode(fitted, vocab, static_cast<int>(max_len)));
    out.language.push_back(item.language());
    out.article_ids.push_back(item.article->id);
    out.paragraphs.push_back(item.paragraph);
    switch (set.subtask) {
      case Subtask::genre:
        out.genre_ids.push_back(static_cast<int>(item.genre));
        break;
      case Subtask::framing: {
        std::vector<std::uint8_t> row(static_cast<std::size_t>(n_classes), 0);
        for (int f : item.frames) {
          require(f >= 0 && f < n_classes, "encode error: frame id out of range");
          row[static_cast<std::size_t>(f)] = 1;
        }
        out.labels.push_back(std::move(row));
        break;
      }
      case Subtask::persuasion:
        require(static_cast<int>(item.techniques.size()) == n_classes,
                "encode error: technique vector width must equal the class count");
        out.labels.push_back(item.techniques);
        break;
    }
  }
  return out;
}

// (count, max_len) token ids and 0/1 attention mask for the chosen rows.
void batch_inputs(const EncodedSet& set, const std::vector<std::size_t>& order, std::size_t begin,
                  std::size_t count, Tensor& ids, Tensor& mask) {
  const std::int64_t len = set.max_len;
  ids = Tensor::zeros({static_cast<std::int64_t>(count), len});
  mask = Tensor::zeros({static_cast<std::int64_t>(count), len});
  for (std::size_t r = 0; r < count; ++r) {
    const TokenSeq& seq = set.seqs[order[begin + r]];
    for (std::int64_t i = 0; i < len; ++i)
      ids[static_cast<std::int64_t>(r) * len + i] = seq.ids[static_cast<std::size_t>(i)];
    for (int i = 0; i < seq.attention_len; ++i)
      mask[static_cast<std::int64_t>(r) * len + i] = 1;
  }
}

namespace {

Tensor batch_targets(const EncodedSet& set, const std::vector<std::size_t>& order,
                     std::size_t begin, std::size_t count) {
  if (set.subtask == Subtask::genre) {
    Tensor t = Tensor::zeros({static_cast<std::int64_t>(count)});
    for (std::size_t r = 0; r < count; ++r)
      t[static_cast<std::int64_t>(r)] = set.genre_ids[order[begin + r]];
    return t;
  }
  Tensor t = Tensor::zeros({static_cast<std::int64_t>(count), set.n_classes});
  for (std::size_t r = 0; r < count; ++r)
    for (int c = 0; c < set.n_classes; ++c)
      t[static_cast<std::int64_t>(r) * set.n_classes + c] =
          set.labels[order[begin + r]][static_cast<std::size_t>(c)];
  return t;
}

std::vector<double> resolve_class_weights(const EncodedSet& set, const std::string& scheme) {
  if (scheme == "none") return std::vector<double>(static_cast<std::size_t>(set.n_classes), 1.0);
  std::vector<std::vector<std::uint8_t>> matrix;
  if (set.subtask == Subtask::genre) {
    for (int g : set.genre_ids) {
      std::vector<std::uint8_t> row(static_cast<std::size_t>(set.n_classes), 0);
      row[static_cast<std::size_t>(g)] = 1;
      matrix.push_back(std::move(row));
    }
  } else {
    matrix = set.labels;
  }
  return class_weights(matrix, scheme).weights;
}

void bind_vocab(Model& model, std::uint64_t vocab_hash) {
  require(vocab_hash != 0, "train error: the encoded set carries no vocabulary hash");
  if (model.vocab_hash == 0)
    model.vocab_hash = vocab_hash;
  else
    require(model.vocab_hash == vocab_hash,
            "train error: model is bound to a different vocabulary");
}

struct ValidationScore {
  double overall = 0;
  std::map<std::string, double> by_language;
};

ValidationScore score_validation(Runner<double>& runner, const ClassifyGraph& cg,
                                 const EncodedSet& val, double threshold, std::size_t chunk) {
  std::vector<std::size_t> order(val.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<int> pred1, gold1;
  std::vector<std::vector<std::uint8_t>> predm, goldm;
  const double cut = std::log(threshold / (1.0 - threshold));
  for (std::size_t begin = 0; begin < val.size(); begin += chunk) {
    const std::size_t count = std::min(chunk, val.size() - begin);
    Tensor ids, mask;
    batch_inputs(val, order, begin, count, ids, mask);
    const Tensor& logits =
        runner.forward({{"ids", ids}, {"attn_mask", mask}}, cg.logits);
    for (std::size_t r = 0; r < count; ++r) {
      if (val.subtask == Subtask::genre) {
        std::int64_t best = 0;
        for (int c = 1; c < val.n_classes; ++c)
          if (logits[static_cast<std::int64_t>(r) * val.n_classes + c] >
              logits[static_cast<std::int64_t>(r) * val.n_classes + best])
            best = c;
        pred1.push_back(static_cast<int>(best));
        gold1.push_back(val.genre_ids[begin + r]);
      } else {
        std::vector<std::uint8_t> row(static_cast<std::size_t>(val.n_classes), 0);
        for (int c = 0; c < val.n_classes; ++c)
          if (logits[static_cast<std::int64_t>(r) * val.n_classes + c] >= cut)
            row[static_cast<std::size_t>(c)] = 1;
        predm.push_back(std::move(row));
        goldm.push_back(val.labels[begin + r]);
      }
    }
  }
  std::vector<std::string> class_names;
  for (int c = 0; c < val.n_classes; ++c) class_names.push_back("c" + std::to_string(c));
  const Registry reg = make_registry(class_names);
  std::vector<std::string> codes(val.language.begin(), val.language.end());
  std::sort(codes.begin(), codes.end());
  codes.erase(std::unique(codes.begin(), codes.end()), codes.end());
  const LanguageRegistry langs{codes};
  const LanguageBreakdown br =
      val.subtask == Subtask::genre
          ? per_language_report(pred1, gold1, val.language, langs, reg)
          : per_language_report(predm, goldm, val.language, langs, reg);
  ValidationScore score;
  score.overall = br.overall.macro_f1;
  for (const auto& [code, rep] : br.by_language) score.by_language[code] = rep.macro_f1;
  return score;
}

}  // namespace

CheckpointSeries train_model(Model& model, const HeadConfig& head, const EncodedSet& train,
                             const TrainConfig& cfg, const EncodedSet* validation,
                             const std::string& out_dir) {
  cfg.validate();
  require(!train.seqs.empty(), "train error: training set is empty");
  require(train.subtask == head.task, "train error: training set subtask does not match the head");
  require(train.n_classes == head.n_classes,
          "train error: training set class count does not match the head");
  require(train.max_len <= model.config.max_len,
          "train error: encoded length exceeds the model's max_len");
  bind_vocab(model, train.vocab_hash);
  if (validation) {
    require(validation->subtask == train.subtask && validation->n_classes == train.n_classes,
            "train error: validation set does not match the training set");
    require(validation->vocab_hash == train.vocab_hash,
            "train error: validation set was encoded with a different vocabulary");
    require(!validation->seqs.empty(), "train error: validation set is empty");
  }
  if (!model.params.has("head.pool.w"))
    attach_head(model, head);
  else
    require(model.params.value("head.out.w").dim(1) == head.n_classes,
            "train error: model head width does not match the requested head");

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail_io("cannot create output directory: " + out_dir);
  const std::string tsv_path = out_dir + "/metrics.tsv";
  std::ofstream tsv(tsv_path, std::ios::binary);
  if (!tsv) fail_io("cannot open file for writing: " + tsv_path);
  tsv << "epoch\tlanguage\tf1_macro\ttrain_loss\n";

  const std::vector<double> weights = resolve_class_weights(train, cfg.class_weighting);
  const Tensor weights_t =
      Tensor::of({train.n_classes}, std::vector<double>(weights.begin(), weights.end()));

  ClassifyGraph cg = build_classify_graph(model, head);
  Runner<double> runner(cg.g, model.params);
  AdamState adam;

  const std::size_t n = train.size();
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::int64_t steps_per_epoch = static_cast<std::int64_t>((n + batch - 1) / batch);
  const std::int64_t total_steps = steps_per_epoch * cfg.epochs;

  CheckpointSeries series;
  series.metrics_tsv = tsv_path;

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0;  // per-item mean loss, weighted by rows
    for (std::int64_t step = 0; step < steps_per_epoch; ++step) {
      const std::size_t begin = static_cast<std::size_t>(step) * batch;
      const std::size_t rows = std::min(batch, n - begin);
      const double scale = train.subtask == Subtask::genre
                               ? 1.0 / static_cast<double>(rows)
                               : 1.0 / static_cast<double>(rows * static_cast<std::size_t>(
                                                                      train.n_classes));
      const std::uint64_t dropout_seed =
          mix_seed(cfg.seed, (static_cast<std::uint64_t>(epoch) << 20) |
                                 static_cast<std::uint64_t>(step));
      model.params.zero_grad();
      const std::size_t micro =
          cfg.micro_batch == 0 ? rows : static_cast<std::size_t>(cfg.micro_batch);
      double step_loss = 0;
      for (std::size_t start = 0; start < rows; start += micro) {
        const std::size_t count = std::min(micro, rows - start);
        Tensor ids, mask;
        batch_inputs(train, order, begin + start, count, ids, mask);
        const Tensor targets = batch_targets(train, order, begin + start, count);
        const Tensor& loss = runner.forward(
            {{"ids", ids},
             {"attn_mask", mask},
             {"targets", targets},
             {"class_weights", weights_t},
             {"loss_scale", Tensor::scalar(scale)}},
            cg.loss, dropout_seed, true, static_cast<std::int64_t>(start));
        if (!std::isfinite(loss[0]))
          fail_validation("training diverged: non-finite loss at epoch " +
                          std::to_string(epoch) + " step " + std::to_string(step));
        step_loss += loss[0];
        runner.backward(cg.loss);
      }
      const double lr = lr_at(cfg.peak_lr, cfg.warmup_ratio, adam.t, total_steps);
      adamw_step(model.params, adam, cfg.optim, lr);
      model.step += 1;
      loss_sum += step_loss * static_cast<double>(rows);
    }

    EpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.train_loss = loss_sum / static_cast<double>(n);
    if (validation) {
      const std::size_t chunk = cfg.micro_batch > 0 ? static_cast<std::size_t>(cfg.micro_batch)
                                                    : batch;
      const ValidationScore score =
          score_validation(runner, cg, *validation, cfg.threshold, chunk);
      metrics.has_validation = true;
      metrics.f1_overall = score.overall;
      metrics.f1_by_language = score.by_language;
      for (const auto& [code, f1] : metrics.f1_by_language)
        tsv << epoch << "\t" << code << "\t" << fmt6(f1) << "\t" << fmt6(metrics.train_loss)
            << "\n";
      tsv << epoch << "\tall\t" << fmt6(metrics.f1_overall) << "\t" << fmt6(metrics.train_loss)
          << "\n";
    } else {
      tsv << epoch << "\tall\t-\t" << fmt6(metrics.train_loss) << "\n";
    }
    tsv.flush();
    if (!tsv) fail_io("write failed: " + tsv_path);

    const std::string snapshot = out_dir + "/epoch_" + std::to_string(epoch) + ".ckpt";
    save_checkpoint(model, head, snapshot);
    series.epochs.push_back(std::move(metrics));
    series.snapshot_paths.push_back(snapshot);
  }
  return series;
}

namespace {

// Masked micro-batch: sequences become rows, gathered positions become
// (row, pos) pairs relative to the micro slice.
struct MlmBatch {
  Tensor ids, mask, pairs, targets;
  std::int64_t n_pairs = 0;
};

MlmBatch build_mlm_batch(const std::vector<TokenSeq>& corpus,
                         const std::vector<MaskedTokens>& masked,
                         const std::vector<std::size_t>& order, std::size_t begin,
                         std::size_t count) {
  MlmBatch batch;
  const std::int64_t len = static_cast<std::int64_t>(corpus[order[begin]].ids.size());
  batch.ids = Tensor::zeros({static_cast<std::int64_t>(count), len});
  batch.mask = Tensor::zeros({static_cast<std::int64_t>(count), len});
  std::vector<double> pair_values, target_values;
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t item = order[begin + r];
    const MaskedTokens& mt = masked[item];
    for (std::int64_t i = 0; i < len; ++i)
      batch.ids[static_cast<std::int64_t>(r) * len + i] = mt.ids[static_cast<std::size_t>(i)];
    for (int i = 0; i < corpus[item].attention_len; ++i)
      batch.mask[static_cast<std::int64_t>(r) * len + i] = 1;
    for (std::size_t p = 0; p < mt.positions.size(); ++p) {
      pair_values.push_back(static_cast<double>(r));
      pair_values.push_back(static_cast<double>(mt.positions[p]));
      target_values.push_back(static_cast<double>(mt.targets[p]));
    }
  }
  batch.n_pairs = static_cast<std::int64_t>(target_values.size());
  if (batch.n_pairs > 0) {
    batch.pairs = Tensor::of({batch.n_pairs, 2}, std::move(pair_values));
    batch.targets = Tensor::of({batch.n_pairs}, std::move(target_values));
  }
  return batch;
}

}  // namespace

std::vector<double> tapt(Model& model, const std::vector<TokenSeq>& corpus, const Vocab& vocab,
                         const TaptConfig& cfg) {
  cfg.validate();
  require(!corpus.empty(), "tapt error: corpus is empty");
  require(model.adapters.placement == AdapterPlacement::none,
          "tapt error: pretraining covers the full base model; insert adapters afterwards");
  for (const TokenSeq& seq : corpus)
    require(static_cast<std::int64_t>(seq.ids.size()) <= model.config.max_len,
            "tapt error: encoded length exceeds the model's max_len");
  bind_vocab(model, vocab.hash());
  if (!model.params.has("mlm.dense.w")) attach_mlm_head(model);

  MlmGraph mg = build_mlm_graph(model);
  Runner<double> runner(mg.g, model.params);
  AdamState adam;

  const std::size_t n = corpus.size();
  const std::size_t batch = static_cast<std::size_t>(cfg.effective_batch);
  const std::int64_t steps_per_epoch = static_cast<std::int64_t>((n + batch - 1) / batch);
  const std::int64_t total_steps = steps_per_epoch * cfg.epochs;

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::vector<MaskedTokens> masked(n);

  std::vector<double> epoch_losses;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    // masking is keyed by (epoch, item), so batch membership cannot move it
    const std::uint64_t epoch_key = mix_seed(cfg.seed, 3000 + static_cast<std::uint64_t>(epoch));
    for (std::size_t i = 0; i < n; ++i)
      masked[i] = mask_tokens(corpus[i], {cfg.mask_rate}, vocab,
                              mix_seed(epoch_key, static_cast<std::uint64_t>(i)));

    double raw_sum = 0;
    std::int64_t position_count = 0;
    for (std::int64_t step = 0; step < steps_per_epoch; ++step) {
      const std::size_t begin = static_cast<std::size_t>(step) * batch;
      const std::size_t rows = std::min(batch, n - begin);
      std::int64_t total_pairs = 0;
      for (std::size_t r = 0; r < rows; ++r)
        total_pairs += static_cast<std::int64_t>(masked[order[begin + r]].positions.size());
      if (total_pairs == 0) continue;  // nothing to predict; no update
      const double scale = 1.0 / static_cast<double>(total_pairs);
      const std::uint64_t dropout_seed =
          mix_seed(cfg.seed, (static_cast<std::uint64_t>(epoch) << 20) |
                                 static_cast<std::uint64_t>(step));
      model.params.zero_grad();
      const std::size_t micro =
          cfg.micro_batch == 0 ? rows : static_cast<std::size_t>(cfg.micro_batch);
      double step_loss = 0;
      for (std::size_t start = 0; start < rows; start += micro) {
        const std::size_t count = std::min(micro, rows - start);
        const MlmBatch mb = build_mlm_batch(corpus, masked, order, begin + start, count);
        if (mb.n_pairs == 0) continue;  // a sliceful of unmaskable rows
        const Tensor& loss = runner.forward({{"ids", mb.ids},
                                             {"attn_mask", mb.mask},
                                             {"mlm_pairs", mb.pairs},
                                             {"mlm_targets", mb.targets},
                                             {"loss_scale", Tensor::scalar(scale)}},
                                            mg.loss, dropout_seed, true,
                                            static_cast<std::int64_t>(start));
        if (!std::isfinite(loss[0]))
          fail_validation("tapt diverged: non-finite loss at epoch " + std::to_string(epoch) +
                          " step " + std::to_string(step));
        step_loss += loss[0];
        runner.backward(mg.loss);
      }
      const double lr = lr_at(cfg.peak_lr, cfg.warmup_ratio, adam.t, total_steps);
      adamw_step(model.params, adam, cfg.optim, lr);
      model.step += 1;
      raw_sum += step_loss * static_cast<double>(total_pairs);
      position_count += total_pairs;
    }
    epoch_losses.push_back(position_count > 0 ? raw_sum / static_cast<double>(position_count)
                                              : 0.0);
  }
  return epoch_losses;
}

double mlm_eval_loss(Model& model, const std::vector<TokenSeq>& corpus, const Vocab& vocab,
                     double mask_rate, std::uint64_t seed) {
  require(!corpus.empty(), "mlm eval error: corpus is empty");
  require(model.params.has("mlm.dense.w"), "mlm eval error: model has no masked-token head");
  MlmGraph mg = build_mlm_graph(model);
  Runner<double> runner(mg.g, model.params);

  const std::size_t n = corpus.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::vector<MaskedTokens> masked(n);
  const std::uint64_t key = mix_seed(seed, 7777);
  for (std::size_t i = 0; i < n; ++i)
    masked[i] = mask_tokens(corpus[i], {mask_rate}, vocab,
                            mix_seed(key, static_cast<std::uint64_t>(i)));

  double raw_sum = 0;
  std::int64_t position_count = 0;
  constexpr std::size_t kChunk = 16;
  for (std::size_t begin = 0; begin < n; begin += kChunk) {
    const std::size_t count = std::min(kChunk, n - begin);
    const MlmBatch mb = build_mlm_batch(corpus, masked, order, begin, count);
    if (mb.n_pairs == 0) continue;
    const Tensor& loss = runner.forward({{"ids", mb.ids},
                                         {"attn_mask", mb.mask},
                                         {"mlm_pairs", mb.pairs},
                                         {"mlm_targets", mb.targets},
                                         {"loss_scale", Tensor::scalar(1.0)}},
                                        mg.loss);
    raw_sum += loss[0];
    position_count += mb.n_pairs;
  }
  require(position_count > 0, "mlm eval error: corpus has no maskable tokens");
  return raw_sum / static_cast<double>(position_count);
}

std::string select_strategy_name(SelectStrategy s) {
  switch (s) {
    case SelectStrategy::per_language: return "per_language";
    case SelectStrategy::overall_best: return "overall_best";
    case SelectStrategy::min_train_loss: return "min_train_loss";
  }
  fail_validation("unreachable select strategy");
}

SelectStrategy select_strategy_from_name(const std::string& name) {
  if (name == "per_language") return SelectStrategy::per_language;
  if (name == "overall_best") return SelectStrategy::overall_best;
  if (name == "min_train_loss") return SelectStrategy::min_train_loss;
  fail_validation("config error: unknown selection strategy '" + name + "'");
}

Selection select_checkpoint(const CheckpointSeries& series, SelectStrategy strategy) {
  require(!series.epochs.empty(), "selection error: checkpoint series is empty");
  Selection sel;
  if (strategy == SelectStrategy::min_train_loss) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < series.epochs.size(); ++i)
      if (series.epochs[i].train_loss < series.epochs[best].train_loss) best = i;
    sel.epoch = series.epochs[best].epoch;
    return sel;
  }
  for (const EpochMetrics& m : series.epochs)
    require(m.has_validation,
            "selection error: strategy needs validation metrics for every epoch");
  if (strategy == SelectStrategy::overall_best) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < series.epochs.size(); ++i)
      if (series.epochs[i].f1_overall > series.epochs[best].f1_overall) best = i;
    sel.epoch = series.epochs[best].epoch;
    return sel;
  }
  // per_language: every epoch must cover the same language set
  const auto& first = series.epochs.front().f1_by_language;
  for (const EpochMetrics& m : series.epochs) {
    require(m.f1_by_language.size() == first.size(),
            "selection error: language coverage varies across epochs");
    for (const auto& [code, _] : first)
      require(m.f1_by_language.count(code) != 0,
              "selection error: language '" + code + "' is missing from epoch " +
                  std::to_string(m.epoch));
  }
  for (const auto& [code, _] : first) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < series.epochs.size(); ++i)
      if (series.epochs[i].f1_by_language.at(code) >
          series.epochs[best].f1_by_language.at(code))
        best = i;
    sel.epoch_by_language[code] = series.epochs[best].epoch;
  }
  return sel;
}

}  // namespace newsclf
