// Command-line front end over the pipeline library. Every command that
// writes results also writes <out>/manifest.json recording the command,
// the seed and the fully resolved config; feeding that manifest back in
// through --config reruns it bit for bit (a fresh --out aside).
//
// Exit codes: 0 success, 1 validation error, 2 I/O error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <initializer_list>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "newsclf/balance.hpp"
#include "newsclf/common.hpp"
#include "newsclf/configio.hpp"
#include "newsclf/corpus.hpp"
#include "newsclf/eval.hpp"
#include "newsclf/experiments.hpp"
#include "newsclf/inference.hpp"
#include "newsclf/model.hpp"
#include "newsclf/textprep.hpp"
#include "newsclf/train.hpp"
#include "newsclf/translate.hpp"

namespace {

using namespace newsclf;
using nlohmann::json;
namespace fs = std::filesystem;

struct CliArgs {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;

  std::string pred, gold, subtask;  // evaluate / report
  std::string metrics, strategy;    // select / report
  std::string members;              // ensemble, comma-separated file list
  std::string vote = "majority";    // ensemble
};

// Everything a handler needs: the resolved config (presets merged,
// manifests unwrapped, seed written back in) plus the output directory.
struct Ctx {
  std::string command;
  json cfg;
  std::string out;
  std::uint64_t seed = 0;
};

std::string resource(const std::string& name) {
  return std::string(NEWSCLF_RESOURCE_DIR) + "/" + name;
}

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void ensure_dir(const std::string& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) fail_io("cannot create output directory: " + path);
}

// ---------------------------------------------------------------------
// config resolution

// A --config value is a file path, or the bare name of a shipped preset.
std::string find_config_file(const std::string& arg) {
  if (fs::exists(arg)) return arg;
  if (arg.find('/') == std::string::npos) {
    const std::string base = resource("presets/" + arg);
    if (fs::exists(base)) return base;
    if (fs::exists(base + ".json")) return base + ".json";
  }
  fail_io("cannot open config: " + arg);
}

json load_config_document(const std::string& arg, const std::string& command) {
  if (arg.empty()) return json::object();
  json doc = parse_json_text(read_text_file(find_config_file(arg)), "config");
  require(doc.is_object(), "config error: config must be a JSON object");

  // A manifest from an earlier run replays under the same command.
  if (doc.contains("command")) {
    const std::string written_by = doc.at("command").get<std::string>();
    require(written_by == command, "config error: manifest was written by '" + written_by +
                                       "', not '" + command + "'");
    require(doc.contains("config"), "config error: manifest has no 'config' section");
    doc = doc.at("config");
    require(doc.is_object(), "config error: manifest 'config' must be a JSON object");
  }

  // "preset" pulls in a shipped hyperparameter set; explicit keys win.
  if (doc.contains("preset")) {
    const std::string name = doc.at("preset").get<std::string>();
    json base = parse_json_text(read_text_file(find_config_file(name)), "preset");
    require(base.is_object(), "config error: preset must be a JSON object");
    require(!base.contains("preset"), "config error: presets cannot nest");
    doc.erase("preset");
    base.merge_patch(doc);
    doc = std::move(base);
  }
  return doc;
}

void check_config_keys(const json& j, const std::string& what,
                       std::initializer_list<const char*> allowed) {
  require(j.is_object(), "config error: " + what + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* name : allowed) known = known || key == name;
    require(known, "config error: unknown key '" + key + "' in " + what + " config");
  }
}

void write_manifest(const Ctx& c, const json& outputs) {
  json m = {{"command", c.command}, {"seed", c.seed}, {"config", c.cfg}, {"outputs", outputs}};
  write_text_file(c.out + "/manifest.json", m.dump(2) + "\n");
}

// ---------------------------------------------------------------------
// shared input plumbing

LanguageRegistry languages_from(const json& cfg) {
  if (cfg.contains("languages"))
    return load_language_registry(cfg.at("languages").get<std::string>());
  return default_language_registry();
}

Registry frames_from(const json& cfg) {
  return load_registry(cfg.value("frames_registry", resource("frames.txt")));
}

Registry techniques_from(const json& cfg) {
  return load_registry(cfg.value("techniques_registry", resource("techniques.txt")));
}

Abbreviations abbrev_from(const json& cfg) {
  if (cfg.contains("abbreviations"))
    return load_abbreviations(cfg.at("abbreviations").get<std::string>());
  return {};
}

Registry genre_registry() {
  return make_registry({genre_name(Genre::opinion), genre_name(Genre::reporting),
                        genre_name(Genre::satire)});
}

Registry classes_for(Subtask t, const Registry& frames, const Registry& techniques) {
  switch (t) {
    case Subtask::genre:
      return genre_registry();
    case Subtask::framing:
      return frames;
    case Subtask::persuasion:
      return techniques;
  }
  fail_validation("unknown subtask");
}

// "articles": {"dir": ..., "language": ...} or an array of those; every
// directory is loaded in numeric-aware id order, loader warnings go to
// stderr and the run continues.
std::vector<Article> load_article_set(const json& spec_in, const LanguageRegistry& langs) {
  json spec = spec_in;
  if (spec.is_object()) spec = json::array({spec});
  require(spec.is_array() && !spec.empty(),
          "config error: 'articles' must be an object or a non-empty array");
  std::vector<Article> all;
  for (const json& e : spec) {
    check_config_keys(e, "articles", {"dir", "language"});
    require(e.contains("dir") && e.contains("language"),
            "config error: each articles entry needs 'dir' and 'language'");
    ArticleLoadResult r = load_articles(e.at("dir").get<std::string>(),
                                        e.at("language").get<std::string>(), langs);
    for (const std::string& w : r.warnings) std::cerr << "warning: " << w << "\n";
    for (Article& a : r.articles) all.push_back(std::move(a));
  }
  return all;
}

std::vector<Article> articles_from(const json& cfg, const LanguageRegistry& langs) {
  require(cfg.contains("articles"), "config error: missing key 'articles'");
  return load_article_set(cfg.at("articles"), langs);
}

// Items for unlabeled inference: one per article, or one per paragraph
// for persuasion (with the zero vector the encoder expects).
LabeledSet inference_set(std::vector<Article> articles, Subtask t, int n_classes) {
  LabeledSet s;
  s.subtask = t;
  for (Article& a : articles) {
    auto sp = std::make_shared<const Article>(std::move(a));
    if (t == Subtask::persuasion) {
      for (int p = 1; p <= static_cast<int>(sp->paragraphs.size()); ++p) {
        TrainItem item;
        item.article = sp;
        item.paragraph = p;
        item.techniques.assign(static_cast<std::size_t>(n_classes), 0);
        s.items.push_back(std::move(item));
      }
    } else {
      TrainItem item;
      item.article = sp;
      s.items.push_back(std::move(item));
    }
  }
  return s;
}

// "corpus" / "validation": {"articles": ..., "labels": path}
LabeledSet labeled_from(const json& block, const std::string& what, Subtask t,
                        bool include_unlabeled, const LanguageRegistry& langs,
                        const Registry& frames, const Registry& techniques) {
  check_config_keys(block, what, {"articles", "labels"});
  require(block.contains("articles") && block.contains("labels"),
          "config error: '" + what + "' needs 'articles' and 'labels'");
  std::vector<Article> arts = load_article_set(block.at("articles"), langs);
  LabelSet labels = load_labels(block.at("labels").get<std::string>(), t, frames, techniques);
  return build_training_set(arts, labels, t, include_unlabeled);
}

TranslationBackend backend_from(const json& cfg) {
  if (!cfg.contains("backend")) return identity_backend();
  const json& b = cfg.at("backend");
  check_config_keys(b, "backend",
                    {"kind", "lexicon", "endpoint", "char_limit", "retries", "retry_base_ms",
                     "parallelism", "abbreviations"});
  TranslationBackend t;
  switch (backend_kind_from_name(b.value("kind", "identity"))) {
    case BackendKind::identity:
      t = identity_backend();
      break;
    case BackendKind::lexicon:
      require(b.contains("lexicon"), "config error: lexicon backend needs a 'lexicon' file");
      t = lexicon_backend(b.at("lexicon").get<std::string>());
      break;
    case BackendKind::remote:
      require(b.contains("endpoint"), "config error: remote backend needs an 'endpoint'");
      t = remote_backend(b.at("endpoint").get<std::string>());
      break;
  }
  if (b.contains("char_limit")) t.char_limit = b.at("char_limit").get<int>();
  if (b.contains("retries")) t.retries = b.at("retries").get<int>();
  if (b.contains("retry_base_ms")) t.retry_base_ms = b.at("retry_base_ms").get<int>();
  if (b.contains("parallelism")) t.parallelism = b.at("parallelism").get<int>();
  if (b.contains("abbreviations"))
    t.abbrev = load_abbreviations(b.at("abbreviations").get<std::string>());
  return t;
}

// ---------------------------------------------------------------------
// gold/prediction alignment (evaluate, report)

struct Aligned {
  std::vector<int> pred_ids, gold_ids;                      // genre
  std::vector<std::vector<std::uint8_t>> pred_m, gold_m;    // framing / persuasion
  std::vector<std::string> article_ids;                     // aligned item order
};

Aligned align_labels(const LabelSet& pred, const LabelSet& gold, int n_classes) {
  Aligned a;
  std::size_t extra = 0;
  switch (gold.subtask) {
    case Subtask::genre:
      for (const auto& [id, g] : gold.genre) {
        auto it = pred.genre.find(id);
        if (it == pred.genre.end())
          fail_validation("evaluate error: missing prediction for article '" + id + "'");
        a.pred_ids.push_back(static_cast<int>(it->second));
        a.gold_ids.push_back(static_cast<int>(g));
        a.article_ids.push_back(id);
      }
      extra = pred.genre.size() - a.gold_ids.size();
      break;
    case Subtask::framing:
      for (const auto& [id, fr] : gold.frames) {
        auto it = pred.frames.find(id);
        if (it == pred.frames.end())
          fail_validation("evaluate error: missing prediction for article '" + id + "'");
        auto row = [&](const std::set<int>& s) {
          std::vector<std::uint8_t> r(static_cast<std::size_t>(n_classes), 0);
          for (int f : s) r[static_cast<std::size_t>(f)] = 1;
          return r;
        };
        a.pred_m.push_back(row(it->second));
        a.gold_m.push_back(row(fr));
        a.article_ids.push_back(id);
      }
      extra = pred.frames.size() - a.gold_m.size();
      break;
    case Subtask::persuasion:
      for (const auto& [key, vec] : gold.techniques) {
        auto it = pred.techniques.find(key);
        if (it == pred.techniques.end())
          fail_validation("evaluate error: missing prediction for article '" + key.first +
                          "' paragraph " + std::to_string(key.second));
        a.pred_m.push_back(it->second);
        a.gold_m.push_back(vec);
        a.article_ids.push_back(key.first);
      }
      extra = pred.techniques.size() - a.gold_m.size();
      break;
  }
  if (extra > 0)
    std::cerr << "note: " << extra << " prediction rows had no gold row and were ignored\n";
  return a;
}

MetricsReport score_aligned(const Aligned& a, Subtask t, const Registry& classes) {
  return t == Subtask::genre ? f1_scores(a.pred_ids, a.gold_ids, classes)
                             : f1_scores(a.pred_m, a.gold_m, classes);
}

// ---------------------------------------------------------------------
// training metrics TSV -> CheckpointSeries (for `select`)

CheckpointSeries parse_series(const std::string& metrics_path) {
  const std::vector<std::string> lines = split_lines(read_text_file(metrics_path));
  require(!lines.empty() && lines[0] == "epoch\tlanguage\tf1_macro\ttrain_loss",
          "select error: '" + metrics_path + "' is not a training metrics file");
  std::map<int, EpochMetrics> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::vector<std::string> f = split_on(lines[i], '\t');
    require(f.size() == 4, "select error: malformed metrics row: " + lines[i]);
    try {
      const int epoch = std::stoi(f[0]);
      EpochMetrics& m = rows[epoch];
      m.epoch = epoch;
      m.train_loss = std::stod(f[3]);
      if (f[1] == "all") {
        if (f[2] != "-") {
          m.has_validation = true;
          m.f1_overall = std::stod(f[2]);
        }
      } else {
        m.f1_by_language[f[1]] = std::stod(f[2]);
      }
    } catch (const std::exception&) {
      fail_validation("select error: malformed metrics row: " + lines[i]);
    }
  }
  CheckpointSeries s;
  s.metrics_tsv = metrics_path;
  const std::string dir = fs::path(metrics_path).parent_path().string();
  for (const auto& [epoch, m] : rows) {
    require(epoch == static_cast<int>(s.epochs.size()) + 1,
            "select error: metrics file skips epoch " +
                std::to_string(static_cast<int>(s.epochs.size()) + 1));
    s.epochs.push_back(m);
    s.snapshot_paths.push_back((dir.empty() ? std::string(".") : dir) + "/epoch_" +
                               std::to_string(epoch) + ".ckpt");
  }
  require(!s.epochs.empty(), "select error: metrics file has no rows");
  return s;
}

// ---------------------------------------------------------------------
// subcommand handlers

void cmd_preprocess(Ctx& c) {
  check_config_keys(c.cfg, "preprocess",
                    {"articles", "patterns", "abbreviations", "token_budget", "languages"});
  const LanguageRegistry langs = languages_from(c.cfg);
  const Abbreviations abbrev = abbrev_from(c.cfg);
  const int budget = c.cfg.value("token_budget", 0);
  require(budget >= 0, "config error: token_budget must be non-negative");

  PatternRegistry patterns;
  bool use_patterns = true;
  const std::string pat_path = c.cfg.value("patterns", resource("patterns_en.txt"));
  if (pat_path == "none")
    use_patterns = false;
  else
    patterns = load_patterns(pat_path);

  std::vector<Article> articles = articles_from(c.cfg, langs);
  std::map<std::string, int> per_language;
  for (const Article& a : articles) {
    Article cleaned = clean_article(a, abbrev, use_patterns ? &patterns : nullptr);
    if (budget > 0 && !cleaned.paragraphs.empty()) {
      const std::string body = join(cleaned.paragraphs, " ");
      const std::vector<std::string> sentences = split_sentences(body, abbrev);
      cleaned.paragraphs = {head_tail_truncate(sentences, budget)};
    }
    const std::string dir = c.out + "/articles/" + cleaned.language;
    ensure_dir(dir);
    write_text_file(dir + "/article" + cleaned.id + ".txt", article_to_file_text(cleaned));
    ++per_language[cleaned.language];
  }

  std::cout << "preprocess: " << articles.size() << " articles -> " << c.out << "/articles\n";
  for (const auto& [code, n] : per_language) std::cout << "  " << code << ": " << n << "\n";
  write_manifest(c, {{"articles", "articles"}, {"count", articles.size()}});
}

void cmd_split(Ctx& c) {
  check_config_keys(c.cfg, "split",
                    {"articles", "labels", "subtask", "include_unlabeled", "strata", "spec",
                     "seed", "frames_registry", "techniques_registry", "languages"});
  require(c.cfg.contains("subtask"), "config error: missing key 'subtask'");
  require(c.cfg.contains("labels"), "config error: missing key 'labels'");
  const Subtask t = subtask_from_name(c.cfg.at("subtask").get<std::string>());
  const LanguageRegistry langs = languages_from(c.cfg);
  const Registry frames = frames_from(c.cfg), techniques = techniques_from(c.cfg);

  json block = {{"articles", c.cfg.at("articles")}, {"labels", c.cfg.at("labels")}};
  const LabeledSet set = labeled_from(block, "split", t, c.cfg.value("include_unlabeled", true),
                                      langs, frames, techniques);

  std::vector<std::string> strata = {"label", "language"};
  if (c.cfg.contains("strata")) strata = c.cfg.at("strata").get<std::vector<std::string>>();

  require(c.cfg.contains("spec"), "config error: missing key 'spec'");
  const json& sp = c.cfg.at("spec");
  check_config_keys(sp, "spec", {"strategy", "k", "train", "val", "test"});
  SplitSpec spec;
  const std::string strategy = sp.value("strategy", "k_fold");
  if (strategy == "k_fold") {
    spec = SplitSpec::folds(sp.value("k", 5));
  } else if (strategy == "fractions") {
    spec = SplitSpec::three_way(sp.value("train", 0.7), sp.value("val", 0.15),
                                sp.value("test", 0.15));
  } else {
    fail_validation("config error: unknown split strategy '" + strategy + "'");
  }

  const SplitPlan plan = stratified_split(set, strata, spec, c.seed);
  plan.save(c.out + "/split.tsv");

  std::vector<int> counts(static_cast<std::size_t>(spec.fold_count()), 0);
  for (const auto& [key, fold] : plan.fold_of) ++counts[static_cast<std::size_t>(fold)];
  std::cout << "split: " << set.size() << " items over " << spec.fold_count() << " folds ->"
            << " " << c.out << "/split.tsv\n";
  for (std::size_t i = 0; i < counts.size(); ++i)
    std::cout << "  fold " << i << ": " << counts[i] << "\n";
  write_manifest(c, {{"plan", "split.tsv"}, {"items", set.size()}});
}

void cmd_vocab(Ctx& c) {
  check_config_keys(c.cfg, "vocab", {"articles", "max_size", "languages"});
  const LanguageRegistry langs = languages_from(c.cfg);
  const int max_size = c.cfg.value("max_size", 2000);
  std::vector<Article> articles = articles_from(c.cfg, langs);
  std::vector<std::string> texts;
  for (const Article& a : articles) {
    texts.push_back(a.title);
    for (const std::string& p : a.paragraphs) texts.push_back(p);
  }
  const Vocab v = build_vocab(texts, max_size);
  v.save(c.out + "/vocab.txt");
  std::cout << "vocab: " << v.size() << " tokens (cap " << max_size << ") -> " << c.out
            << "/vocab.txt\n";
  write_manifest(c, {{"vocab", "vocab.txt"}, {"tokens", v.size()}});
}

void cmd_oversample(Ctx& c) {
  check_config_keys(c.cfg, "oversample",
                    {"articles", "labels", "subtask", "include_unlabeled", "auxiliary",
                     "use_auxiliary_pools", "seed", "frames_registry", "techniques_registry",
                     "languages"});
  require(c.cfg.contains("subtask"), "config error: missing key 'subtask'");
  require(c.cfg.contains("labels"), "config error: missing key 'labels'");
  const Subtask t = subtask_from_name(c.cfg.at("subtask").get<std::string>());
  const LanguageRegistry langs = languages_from(c.cfg);
  const Registry frames = frames_from(c.cfg), techniques = techniques_from(c.cfg);

  json block = {{"articles", c.cfg.at("articles")}, {"labels", c.cfg.at("labels")}};
  LabeledSet set = labeled_from(block, "oversample", t, c.cfg.value("include_unlabeled", true),
                                langs, frames, techniques);

  // External one-class pools; duplicates can then come from the pool only.
  if (c.cfg.contains("auxiliary")) {
    for (const json& e : c.cfg.at("auxiliary")) {
      check_config_keys(e, "auxiliary", {"dir", "language", "genre"});
      require(e.contains("dir") && e.contains("language") && e.contains("genre"),
              "config error: each auxiliary entry needs 'dir', 'language' and 'genre'");
      const std::string language = e.at("language").get<std::string>();
      const Genre cls = genre_from_name(e.at("genre").get<std::string>());
      ArticleLoadResult r = load_articles(e.at("dir").get<std::string>(), language, langs);
      for (const std::string& w : r.warnings) std::cerr << "warning: " << w << "\n";
      LabeledSet aux;
      aux.subtask = Subtask::genre;
      for (Article& a : r.articles) {
        TrainItem item;
        item.article = std::make_shared<const Article>(std::move(a));
        item.genre = cls;
        aux.items.push_back(std::move(item));
      }
      set = merge_auxiliary(set, aux, language, cls);
    }
  }

  const LabeledSet balanced =
      balance_all(set, c.seed, c.cfg.value("use_auxiliary_pools", false));

  std::string out_tsv;
  for (const TrainItem& item : balanced.items) out_tsv += item.key() + "\n";
  write_text_file(c.out + "/resampled.tsv", out_tsv);

  std::map<std::string, std::map<std::string, int>> counts;
  for (const TrainItem& item : balanced.items)
    ++counts[item.language()][genre_name(item.genre)];
  std::cout << "oversample: " << set.size() << " -> " << balanced.size() << " items -> " << c.out
            << "/resampled.tsv\n";
  for (const auto& [code, per_class] : counts)
    for (const auto& [name, n] : per_class)
      std::cout << "  " << code << " " << name << ": " << n << "\n";
  write_manifest(c, {{"resampled", "resampled.tsv"},
                     {"items_in", set.size()},
                     {"items_out", balanced.size()}});
}

void cmd_tapt(Ctx& c) {
  check_config_keys(c.cfg, "tapt",
                    {"articles", "vocab", "model", "tapt", "init_checkpoint", "max_len",
                     "abbreviations", "languages",
                     // shared-config keys other commands consume
                     "subtask", "train", "adapters", "corpus", "validation",
                     "include_unlabeled", "oversample", "resample", "threshold",
                     "frames_registry", "techniques_registry"});
  require(c.cfg.contains("vocab"), "config error: missing key 'vocab'");
  const LanguageRegistry langs = languages_from(c.cfg);
  const Vocab vocab = Vocab::load(c.cfg.at("vocab").get<std::string>());
  const Abbreviations abbrev = abbrev_from(c.cfg);
  const std::int64_t max_len = c.cfg.value("max_len", 128);

  // The pretraining corpus may be given directly, or fall back to the
  // training corpus block when one config file drives both stages.
  std::vector<Article> articles;
  if (c.cfg.contains("articles")) {
    articles = load_article_set(c.cfg.at("articles"), langs);
  } else {
    require(c.cfg.contains("corpus") && c.cfg.at("corpus").contains("articles"),
            "config error: missing key 'articles'");
    articles = load_article_set(c.cfg.at("corpus").at("articles"), langs);
  }
  const LabeledSet set = inference_set(std::move(articles), Subtask::genre, kGenreClassCount);
  const EncodedSet enc = encode_set(set, vocab, abbrev, max_len, kGenreClassCount);

  TaptConfig tcfg;
  if (c.cfg.contains("tapt")) tcfg = c.cfg.at("tapt").get<TaptConfig>();
  tcfg.seed = c.seed;

  Model model;
  if (c.cfg.contains("init_checkpoint")) {
    model = load_checkpoint(c.cfg.at("init_checkpoint").get<std::string>()).model;
  } else {
    ModelConfig mc;
    if (c.cfg.contains("model")) mc = c.cfg.at("model").get<ModelConfig>();
    mc.vocab_size = vocab.size();
    model = build_encoder(mc, c.seed);
  }

  const std::vector<double> losses = tapt(model, enc.seqs, vocab, tcfg);
  save_checkpoint(model, std::nullopt, c.out + "/tapt.ckpt");
  std::string tsv = "epoch\tmlm_loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i)
    tsv += std::to_string(i + 1) + "\t" + fixed6(losses[i]) + "\n";
  write_text_file(c.out + "/losses.tsv", tsv);

  std::cout << "tapt: " << enc.seqs.size() << " sequences, " << losses.size()
            << " epochs, final mlm loss " << fixed6(losses.empty() ? 0.0 : losses.back())
            << " -> " << c.out << "/tapt.ckpt\n";
  write_manifest(c, {{"checkpoint", "tapt.ckpt"}, {"losses", "losses.tsv"}});
}

void cmd_train(Ctx& c) {
  check_config_keys(c.cfg, "train",
                    {"corpus", "validation", "subtask", "include_unlabeled", "vocab", "model",
                     "adapters", "init_checkpoint", "resample", "oversample", "train", "max_len",
                     "abbreviations", "frames_registry", "techniques_registry", "languages",
                     // carried by shared config files, consumed by `tapt`
                     "tapt", "articles"});
  require(c.cfg.contains("subtask"), "config error: missing key 'subtask'");
  require(c.cfg.contains("vocab"), "config error: missing key 'vocab'");
  require(c.cfg.contains("corpus"), "config error: missing key 'corpus'");
  const Subtask t = subtask_from_name(c.cfg.at("subtask").get<std::string>());
  const LanguageRegistry langs = languages_from(c.cfg);
  const Registry frames = frames_from(c.cfg), techniques = techniques_from(c.cfg);
  const Registry classes = classes_for(t, frames, techniques);
  const Vocab vocab = Vocab::load(c.cfg.at("vocab").get<std::string>());
  const Abbreviations abbrev = abbrev_from(c.cfg);
  const std::int64_t max_len = c.cfg.value("max_len", 128);
  const bool include_unlabeled = c.cfg.value("include_unlabeled", true);

  LabeledSet train_set = labeled_from(c.cfg.at("corpus"), "corpus", t, include_unlabeled, langs,
                                      frames, techniques);

  TrainConfig tcfg;
  if (c.cfg.contains("train")) tcfg = c.cfg.at("train").get<TrainConfig>();
  tcfg.seed = c.seed;

  require(!(c.cfg.contains("resample") && c.cfg.value("oversample", false)),
          "config error: 'resample' and 'oversample' are mutually exclusive");
  if (c.cfg.value("oversample", false)) {
    train_set = balance_all(train_set, c.seed);
  } else if (c.cfg.contains("resample")) {
    // Replays a resampled item list written by `oversample`.
    std::map<std::string, std::size_t> by_key;
    for (std::size_t i = 0; i < train_set.items.size(); ++i)
      by_key.emplace(train_set.items[i].key(), i);
    LabeledSet resampled;
    resampled.subtask = train_set.subtask;
    for (const std::string& line :
         split_lines(read_text_file(c.cfg.at("resample").get<std::string>()))) {
      if (line.empty()) continue;
      auto it = by_key.find(line);
      if (it == by_key.end())
        fail_validation("train error: resample references unknown item '" + line + "'");
      resampled.items.push_back(train_set.items[it->second]);
    }
    require(!resampled.items.empty(), "train error: resample list is empty");
    train_set = std::move(resampled);
  }

  const EncodedSet enc_train = encode_set(train_set, vocab, abbrev, max_len, classes.size());
  EncodedSet enc_val;
  bool has_val = false;
  if (c.cfg.contains("validation")) {
    const LabeledSet val_set = labeled_from(c.cfg.at("validation"), "validation", t,
                                            include_unlabeled, langs, frames, techniques);
    enc_val = encode_set(val_set, vocab, abbrev, max_len, classes.size());
    has_val = true;
  }

  Model model;
  if (c.cfg.contains("init_checkpoint")) {
    model = load_checkpoint(c.cfg.at("init_checkpoint").get<std::string>()).model;
  } else {
    ModelConfig mc;
    if (c.cfg.contains("model")) mc = c.cfg.at("model").get<ModelConfig>();
    mc.vocab_size = vocab.size();
    model = build_encoder(mc, c.seed);
  }
  if (c.cfg.contains("adapters")) {
    const AdapterConfig acfg = c.cfg.at("adapters").get<AdapterConfig>();
    if (acfg.placement != AdapterPlacement::none) insert_adapters(model, acfg);
  }

  const HeadConfig head{t, classes.size()};
  const CheckpointSeries series =
      train_model(model, head, enc_train, tcfg, has_val ? &enc_val : nullptr, c.out);

  const EpochMetrics& last = series.epochs.back();
  std::cout << "train: " << enc_train.size() << " items, " << series.epochs.size()
            << " epochs -> " << c.out << "\n";
  std::cout << "  final train loss " << fixed6(last.train_loss);
  if (last.has_validation) std::cout << ", validation macro-F1 " << fixed6(last.f1_overall);
  std::cout << "\n";
  write_manifest(c, {{"metrics", "metrics.tsv"},
                     {"epochs", series.epochs.size()},
                     {"items", enc_train.size()}});
}

void cmd_select(Ctx& c) {
  check_config_keys(c.cfg, "select", {"metrics", "strategy"});
  require(c.cfg.contains("metrics"), "config error: missing key 'metrics' (or --metrics)");
  const std::string path = c.cfg.at("metrics").get<std::string>();
  const SelectStrategy strategy =
      select_strategy_from_name(c.cfg.value("strategy", "per_language"));
  const CheckpointSeries series = parse_series(path);
  const Selection sel = select_checkpoint(series, strategy);

  json out = {{"strategy", select_strategy_name(strategy)}, {"metrics", path}};
  if (strategy == SelectStrategy::per_language) {
    json epochs = json::object(), ckpts = json::object();
    for (const auto& [code, epoch] : sel.epoch_by_language) {
      epochs[code] = epoch;
      ckpts[code] = series.snapshot_paths[static_cast<std::size_t>(epoch - 1)];
      std::cout << code << " epoch " << epoch << "\n";
    }
    out["epoch_by_language"] = epochs;
    out["checkpoints"] = ckpts;
  } else {
    out["epoch"] = sel.epoch;
    out["checkpoint"] = series.snapshot_paths[static_cast<std::size_t>(sel.epoch - 1)];
    std::cout << "epoch " << sel.epoch << "\n";
  }
  if (!c.out.empty()) {
    write_text_file(c.out + "/selection.json", out.dump(2) + "\n");
    write_manifest(c, {{"selection", "selection.json"}});
  }
}

void cmd_predict(Ctx& c) {
  check_config_keys(c.cfg, "predict",
                    {"checkpoint", "articles", "vocab", "subtask", "max_len", "threshold",
                     "abbreviations", "frames_registry", "techniques_registry", "languages"});
  require(c.cfg.contains("checkpoint"), "config error: missing key 'checkpoint'");
  require(c.cfg.contains("vocab"), "config error: missing key 'vocab'");
  const LanguageRegistry langs = languages_from(c.cfg);
  const Vocab vocab = Vocab::load(c.cfg.at("vocab").get<std::string>());
  const Abbreviations abbrev = abbrev_from(c.cfg);

  const std::string ckpt_path = c.cfg.at("checkpoint").get<std::string>();
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  require(ckpt.head.has_value(),
          "predict error: checkpoint '" + ckpt_path + "' has no classifier head");
  const Subtask t = ckpt.head->task;
  if (c.cfg.contains("subtask"))
    require(subtask_from_name(c.cfg.at("subtask").get<std::string>()) == t,
            "config error: subtask does not match the checkpoint head");
  const Registry frames = frames_from(c.cfg), techniques = techniques_from(c.cfg);
  const Registry classes = classes_for(t, frames, techniques);
  require(classes.size() == ckpt.head->n_classes,
          "predict error: registry width " + std::to_string(classes.size()) +
              " does not match the checkpoint head width " +
              std::to_string(ckpt.head->n_classes));

  const LabeledSet set =
      inference_set(articles_from(c.cfg, langs), t, ckpt.head->n_classes);
  const EncodedSet enc = encode_set(set, vocab, abbrev, c.cfg.value("max_len", 128),
                                    ckpt.head->n_classes);
  const PredictionSet preds = predict(ckpt.model, enc, c.cfg.value("threshold", 0.5));
  const LabelSet labels = predictions_to_labels(preds);
  write_predictions(labels, c.out + "/predictions.tsv", t, frames, techniques);

  std::cout << "predict: " << preds.items.size() << " items -> " << c.out
            << "/predictions.tsv\n";
  write_manifest(c, {{"predictions", "predictions.tsv"}, {"items", preds.items.size()}});
}

void cmd_translate(Ctx& c) {
  check_config_keys(c.cfg, "translate", {"articles", "target", "backend", "languages"});
  require(c.cfg.contains("target"), "config error: missing key 'target'");
  const LanguageRegistry langs = languages_from(c.cfg);
  const std::string target = c.cfg.at("target").get<std::string>();
  require(langs.contains(target), "config error: unknown target language '" + target + "'");
  const TranslationBackend backend = backend_from(c.cfg);

  const LabeledSet set =
      inference_set(articles_from(c.cfg, langs), Subtask::genre, kGenreClassCount);
  const TranslatedCorpus tc = translate_corpus(backend, set, target);

  const std::string dir = c.out + "/articles/" + target;
  ensure_dir(dir);
  std::size_t written = 0;
  for (const TrainItem& item : tc.set.items) {
    write_text_file(dir + "/article" + item.article->id + ".txt",
                    article_to_file_text(*item.article));
    ++written;
  }

  std::vector<std::string> ids;
  for (const auto& [id, src] : tc.source_language) ids.push_back(id);
  std::sort(ids.begin(), ids.end(), id_less);
  std::string prov;
  for (const std::string& id : ids) prov += id + "\t" + tc.source_language.at(id) + "\n";
  write_text_file(c.out + "/provenance.tsv", prov);

  if (!tc.failures.empty()) {
    std::string ftsv;
    for (const TranslateFailure& f : tc.failures) {
      std::cerr << "warning: translation failed for '" << f.article_id << "' (" << f.language
                << "): " << f.message << "\n";
      ftsv += f.article_id + "\t" + f.language + "\t" + f.message + "\n";
    }
    write_text_file(c.out + "/failures.tsv", ftsv);
  }

  std::cout << "translate: " << written << " articles -> " << dir << " (" << tc.failures.size()
            << " failures)\n";
  json outputs = {{"articles", "articles/" + target},
                  {"provenance", "provenance.tsv"},
                  {"translated", written},
                  {"failed", tc.failures.size()}};
  if (!tc.failures.empty()) outputs["failures"] = "failures.tsv";
  write_manifest(c, outputs);
}

EnsembleMember member_from(const json& e) {
  json m = e;
  if (m.is_string()) m = parse_json_text(read_text_file(m.get<std::string>()), "member");
  check_config_keys(m, "member", {"checkpoint", "validation"});
  require(m.contains("checkpoint"), "config error: ensemble member needs a 'checkpoint'");
  EnsembleMember out;
  out.checkpoint = m.at("checkpoint").get<std::string>();
  if (m.contains("validation")) out.validation = m.at("validation").get<double>();
  return out;
}

// Loads every member checkpoint; all heads must agree on task and width.
EnsembleRuntime load_runtime(const EnsembleSpec& spec, Subtask* task, int* n_classes) {
  EnsembleRuntime rt;
  rt.spec = spec;
  for (const EnsembleMember& m : spec.members) {
    Checkpoint ck = load_checkpoint(m.checkpoint);
    require(ck.head.has_value(),
            "ensemble error: checkpoint '" + m.checkpoint + "' has no classifier head");
    if (*n_classes < 0) {
      *task = ck.head->task;
      *n_classes = ck.head->n_classes;
    } else {
      require(ck.head->task == *task && ck.head->n_classes == *n_classes,
              "ensemble error: members disagree on subtask or class count");
    }
    rt.models.push_back(std::move(ck.model));
  }
  return rt;
}

void cmd_ensemble(Ctx& c) {
  check_config_keys(c.cfg, "ensemble",
                    {"members", "vote", "articles", "vocab", "subtask", "max_len", "threshold",
                     "ensembles", "routing", "backend", "abbreviations", "frames_registry",
                     "techniques_registry", "languages"});
  const std::string vote = c.cfg.value("vote", "majority");
  require(vote == "majority", "ensemble error: unknown vote rule '" + vote +
                                  "' (supported: majority)");
  require(c.cfg.contains("vocab"), "config error: missing key 'vocab'");
  const LanguageRegistry langs = languages_from(c.cfg);
  const Vocab vocab = Vocab::load(c.cfg.at("vocab").get<std::string>());
  const Abbreviations abbrev = abbrev_from(c.cfg);
  const std::int64_t max_len = c.cfg.value("max_len", 128);
  const double threshold = c.cfg.value("threshold", 0.5);

  Subtask task = Subtask::genre;
  int n_classes = -1;

  std::map<std::string, EnsembleRuntime> runtimes;
  if (c.cfg.contains("members")) {
    EnsembleSpec spec;
    for (const json& e : c.cfg.at("members")) spec.members.push_back(member_from(e));
    require(!spec.members.empty(), "ensemble error: --members lists no files");
    runtimes.emplace("default", load_runtime(spec, &task, &n_classes));
  }
  if (c.cfg.contains("ensembles")) {
    for (const auto& [name, spec_json] : c.cfg.at("ensembles").items()) {
      check_config_keys(spec_json, "ensemble '" + name + "'", {"members"});
      require(spec_json.contains("members"),
              "config error: ensemble '" + name + "' needs 'members'");
      require(runtimes.find(name) == runtimes.end(),
              "config error: ensemble '" + name + "' is defined twice");
      EnsembleSpec spec;
      for (const json& e : spec_json.at("members")) spec.members.push_back(member_from(e));
      require(!spec.members.empty(), "config error: ensemble '" + name + "' has no members");
      runtimes.emplace(name, load_runtime(spec, &task, &n_classes));
    }
  }
  require(!runtimes.empty(), "ensemble error: needs --members or an 'ensembles' table");
  if (c.cfg.contains("subtask"))
    require(subtask_from_name(c.cfg.at("subtask").get<std::string>()) == task,
            "config error: subtask does not match the member checkpoints");
  const Registry frames = frames_from(c.cfg), techniques = techniques_from(c.cfg);
  const Registry classes = classes_for(task, frames, techniques);
  require(classes.size() == n_classes,
          "ensemble error: registry width " + std::to_string(classes.size()) +
              " does not match the member head width " + std::to_string(n_classes));

  const LabeledSet set = inference_set(articles_from(c.cfg, langs), task, n_classes);

  PredictionSet voted;
  std::vector<TranslateFailure> failures;
  bool routed = c.cfg.contains("routing");
  if (routed) {
    RoutingTable routing;
    if (c.cfg.at("routing").is_string())
      routing = load_routing_table(c.cfg.at("routing").get<std::string>());
    else
      routing = parse_routing_table(c.cfg.at("routing").dump());
    const TranslationBackend backend = backend_from(c.cfg);
    RouteOptions options;
    options.max_len = max_len;
    options.threshold = threshold;
    options.abbrev = abbrev;
    RouteResult rr = route_and_predict(set, routing, backend, runtimes, vocab, options);
    voted = std::move(rr.predictions);
    failures = std::move(rr.failures);
  } else {
    require(runtimes.count("default") == 1,
            "ensemble error: direct voting uses --members (the 'default' ensemble)");
    EnsembleRuntime& rt = runtimes.at("default");
    const EncodedSet enc = encode_set(set, vocab, abbrev, max_len, n_classes);
    std::vector<PredictionSet> member_preds;
    for (Model& m : rt.models) member_preds.push_back(predict(m, enc, threshold));
    voted = member_preds.size() == 1 ? std::move(member_preds.front())
                                     : ensemble_vote(member_preds, rt.spec, task);
  }

  const LabelSet labels = predictions_to_labels(voted);
  write_predictions(labels, c.out + "/predictions.tsv", task, frames, techniques);

  if (routed) {
    std::string routes;
    for (const Prediction& p : voted.items)
      routes += p.article_id + "\t" + std::to_string(p.paragraph) + "\t" + p.route + "\n";
    write_text_file(c.out + "/routes.tsv", routes);
  }
  if (!failures.empty()) {
    std::string ftsv;
    for (const TranslateFailure& f : failures) {
      std::cerr << "warning: translation failed for '" << f.article_id << "' (" << f.language
                << "): " << f.message << "\n";
      ftsv += f.article_id + "\t" + f.language + "\t" + f.message + "\n";
    }
    write_text_file(c.out + "/failures.tsv", ftsv);
  }

  std::cout << "ensemble: " << runtimes.size() << " model set(s), " << voted.items.size()
            << " items -> " << c.out << "/predictions.tsv\n";
  json outputs = {{"predictions", "predictions.tsv"}, {"items", voted.items.size()}};
  if (routed) outputs["routes"] = "routes.tsv";
  if (!failures.empty()) outputs["failures"] = "failures.tsv";
  write_manifest(c, outputs);
}

void cmd_evaluate(Ctx& c) {
  check_config_keys(c.cfg, "evaluate",
                    {"pred", "gold", "subtask", "frames_registry", "techniques_registry"});
  require(c.cfg.contains("pred") && c.cfg.contains("gold") && c.cfg.contains("subtask"),
          "config error: evaluate needs --pred, --gold and --subtask");
  const Subtask t = subtask_from_name(c.cfg.at("subtask").get<std::string>());
  const Registry frames = frames_from(c.cfg), techniques = techniques_from(c.cfg);
  const Registry classes = classes_for(t, frames, techniques);

  const LabelSet pred =
      load_labels(c.cfg.at("pred").get<std::string>(), t, frames, techniques);
  const LabelSet gold =
      load_labels(c.cfg.at("gold").get<std::string>(), t, frames, techniques);
  const Aligned a = align_labels(pred, gold, classes.size());
  const MetricsReport rep = score_aligned(a, t, classes);

  std::cout << "micro_f1=" << fixed6(rep.micro_f1) << "\n";
  std::cout << "macro_f1=" << fixed6(rep.macro_f1) << "\n";
  if (c.out.empty()) {
    std::cout << report_csv(rep);
  } else {
    write_text_file(c.out + "/report.csv", report_csv(rep));
    write_manifest(c, {{"report", "report.csv"},
                       {"micro_f1", rep.micro_f1},
                       {"macro_f1", rep.macro_f1}});
  }
}

void cmd_report(Ctx& c) {
  check_config_keys(c.cfg, "report",
                    {"metrics", "pred", "gold", "subtask", "articles", "frames_registry",
                     "techniques_registry", "languages"});
  const bool curves_mode = c.cfg.contains("metrics");
  const bool eval_mode = c.cfg.contains("pred");
  require(curves_mode != eval_mode,
          "config error: report takes either 'metrics' or 'pred'/'gold'/'subtask'/'articles'");

  if (curves_mode) {
    require(!c.out.empty(), "config error: command 'report' requires --out");
    const std::string path = c.cfg.at("metrics").get<std::string>();
    epoch_curve_report(path, c.out + "/curves.csv", c.out + "/curves.svg");
    const EpochCurves curves = parse_metrics_tsv(read_text_file(path));
    for (const auto& [code, epoch] : curves.best_epoch)
      std::cout << code << " best epoch " << epoch << "\n";
    std::cout << "report: " << curves.series.size() << " series -> " << c.out
              << "/curves.csv, " << c.out << "/curves.svg\n";
    write_manifest(c, {{"csv", "curves.csv"}, {"svg", "curves.svg"}});
    return;
  }

  require(c.cfg.contains("gold") && c.cfg.contains("subtask") && c.cfg.contains("articles"),
          "config error: report needs 'pred', 'gold', 'subtask' and 'articles'");
  const Subtask t = subtask_from_name(c.cfg.at("subtask").get<std::string>());
  const LanguageRegistry langs = languages_from(c.cfg);
  const Registry frames = frames_from(c.cfg), techniques = techniques_from(c.cfg);
  const Registry classes = classes_for(t, frames, techniques);

  std::map<std::string, std::string> language_of;
  for (const Article& a : articles_from(c.cfg, langs)) language_of[a.id] = a.language;

  const LabelSet pred =
      load_labels(c.cfg.at("pred").get<std::string>(), t, frames, techniques);
  const LabelSet gold =
      load_labels(c.cfg.at("gold").get<std::string>(), t, frames, techniques);
  const Aligned a = align_labels(pred, gold, classes.size());

  std::vector<std::string> item_language;
  for (const std::string& id : a.article_ids) {
    auto it = language_of.find(id);
    if (it == language_of.end())
      fail_validation("report error: gold references article '" + id +
                      "' not present in 'articles'");
    item_language.push_back(it->second);
  }

  const LanguageBreakdown br =
      t == Subtask::genre
          ? per_language_report(a.pred_ids, a.gold_ids, item_language, langs, classes)
          : per_language_report(a.pred_m, a.gold_m, item_language, langs, classes);
  for (const std::string& w : br.warnings) std::cerr << "warning: " << w << "\n";

  std::string csv = "language,micro_f1,macro_f1,support\n";
  for (const auto& [code, rep] : br.by_language)
    csv += code + "," + fixed6(rep.micro_f1) + "," + fixed6(rep.macro_f1) + "," +
           std::to_string(rep.total_support) + "\n";
  csv += "all," + fixed6(br.overall.micro_f1) + "," + fixed6(br.overall.macro_f1) + "," +
         std::to_string(br.overall.total_support) + "\n";

  std::cout << csv;
  if (!c.out.empty()) {
    write_text_file(c.out + "/report.csv", csv);
    write_manifest(c, {{"report", "report.csv"}});
  }
}

void cmd_experiment(Ctx& c) {
  check_config_keys(c.cfg, "experiment",
                    {"kind", "synthetic", "settings", "held_out", "backends"});
  require(c.cfg.contains("kind"), "config error: missing key 'kind'");
  require(c.cfg.contains("synthetic"), "config error: missing key 'synthetic'");
  require(c.cfg.contains("settings"), "config error: missing key 'settings'");
  const std::string kind = c.cfg.at("kind").get<std::string>();

  const SyntheticConfig sc = c.cfg.at("synthetic").get<SyntheticConfig>();
  ExperimentConfig ec = c.cfg.at("settings").get<ExperimentConfig>();
  ec.out_dir = c.out + "/" + kind;

  const ExperimentCorpus corpus = make_synthetic_corpus(sc);

  std::string csv, csv_path, manifest_path;
  if (kind == "mono_vs_multi") {
    const MonoVsMultiReport rep = run_mono_vs_multi(corpus, ec);
    csv = rep.csv;
    csv_path = rep.csv_path;
    manifest_path = rep.manifest_path;
  } else if (kind == "zero_shot_holdout") {
    require(c.cfg.contains("held_out"), "config error: zero_shot_holdout needs 'held_out'");
    const HoldoutReport rep =
        run_zero_shot_holdout(corpus, c.cfg.at("held_out").get<std::string>(), ec);
    csv = rep.csv;
    csv_path = rep.csv_path;
    manifest_path = rep.manifest_path;
  } else if (kind == "translate_test_sweep") {
    const std::string backends = c.cfg.value("backends", "identity");
    BackendTable table;
    if (backends == "identity")
      table = identity_backends(corpus_languages(corpus.train));
    else if (backends == "lexicon")
      table = corpus_backends(corpus);
    else
      fail_validation("config error: unknown backends kind '" + backends +
                      "' (identity or lexicon)");
    const SweepReport rep = run_translate_test_sweep(corpus, table, ec);
    csv = rep.csv;
    csv_path = rep.csv_path;
    manifest_path = rep.manifest_path;
  } else {
    fail_validation("config error: unknown experiment kind '" + kind + "'");
  }

  std::cout << csv;
  write_manifest(c, {{"csv", csv_path}, {"experiment_manifest", manifest_path}});
}

// ---------------------------------------------------------------------
// dispatch

const std::map<std::string, const char*> kSeedHome = {{"split", "/seed"},
                                                      {"oversample", "/seed"},
                                                      {"tapt", "/tapt/seed"},
                                                      {"train", "/train/seed"},
                                                      {"experiment", "/synthetic/seed"}};

const std::set<std::string> kOutOptional = {"evaluate", "report", "select"};

void run_command(const std::string& name, const CliArgs& a) {
  Ctx c;
  c.command = name;
  c.cfg = load_config_document(a.config, name);
  c.out = a.out;

  // Flag values are folded into the config so the manifest records them.
  if (name == "evaluate" || name == "report") {
    if (!a.pred.empty()) c.cfg["pred"] = a.pred;
    if (!a.gold.empty()) c.cfg["gold"] = a.gold;
    if (!a.subtask.empty()) c.cfg["subtask"] = a.subtask;
  }
  if (name == "select" || name == "report") {
    if (!a.metrics.empty()) c.cfg["metrics"] = a.metrics;
  }
  if (name == "select" && !a.strategy.empty()) c.cfg["strategy"] = a.strategy;
  if (name == "ensemble") {
    if (!a.members.empty()) {
      json list = json::array();
      for (const std::string& part : split_on(a.members, ','))
        if (!part.empty()) list.push_back(part);
      c.cfg["members"] = list;
    }
    if (!c.cfg.contains("vote")) c.cfg["vote"] = a.vote;
  }

  if (kOutOptional.find(name) == kOutOptional.end())
    require(!c.out.empty(), "config error: command '" + name + "' requires --out");
  if (!c.out.empty()) ensure_dir(c.out);

  auto home = kSeedHome.find(name);
  if (home != kSeedHome.end()) {
    const json::json_pointer ptr(home->second);
    if (c.cfg.contains(ptr)) c.seed = c.cfg.at(ptr).get<std::uint64_t>();
    if (a.seed_set) c.seed = a.seed;
    c.cfg[ptr] = c.seed;
  } else {
    c.seed = a.seed_set ? a.seed : 0;
  }

  if (name == "preprocess") return cmd_preprocess(c);
  if (name == "split") return cmd_split(c);
  if (name == "vocab") return cmd_vocab(c);
  if (name == "oversample") return cmd_oversample(c);
  if (name == "tapt") return cmd_tapt(c);
  if (name == "train") return cmd_train(c);
  if (name == "select") return cmd_select(c);
  if (name == "predict") return cmd_predict(c);
  if (name == "ensemble") return cmd_ensemble(c);
  if (name == "translate") return cmd_translate(c);
  if (name == "evaluate") return cmd_evaluate(c);
  if (name == "report") return cmd_report(c);
  if (name == "experiment") return cmd_experiment(c);
  fail_validation("unknown command '" + name + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multilingual news classification pipeline: genre, framing and persuasion."};
  app.require_subcommand(0, 1);
  app.fallthrough();

  CliArgs a;
  app.add_option("--config", a.config, "Config JSON, shipped preset name, or a run manifest");
  auto* seed_opt = app.add_option("--seed", a.seed, "Seed override (u64)");
  app.add_option("--out", a.out, "Output directory");

  struct SubDef {
    const char* name;
    const char* help;
  };
  const std::vector<SubDef> subs = {
      {"preprocess", "Clean articles and optionally fit them to a token budget"},
      {"split", "Write a stratified fold assignment for a labeled corpus"},
      {"vocab", "Build a frequency vocabulary from article text"},
      {"oversample", "Duplicate minority-class items until classes balance per language"},
      {"tapt", "Masked-token pretraining on in-domain text"},
      {"train", "Train a classifier, snapshotting every epoch"},
      {"select", "Pick checkpoint epochs from a training metrics file"},
      {"predict", "Run a checkpoint over articles and write predictions"},
      {"ensemble", "Majority-vote several checkpoints, optionally routed per language"},
      {"translate", "Translate articles into a target language"},
      {"evaluate", "Score predictions against gold labels"},
      {"report", "Per-language score breakdown or training-curve rendering"},
      {"experiment", "Synthetic-corpus studies: mono vs multi, holdout, translation sweep"},
  };
  for (const SubDef& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->fallthrough();
    const std::string name = s.name;
    if (name == "evaluate" || name == "report") {
      sub->add_option("--pred", a.pred, "Predictions TSV");
      sub->add_option("--gold", a.gold, "Gold labels TSV");
      sub->add_option("--subtask", a.subtask, "genre | framing | persuasion");
    }
    if (name == "select" || name == "report")
      sub->add_option("--metrics", a.metrics, "Training metrics TSV");
    if (name == "select")
      sub->add_option("--strategy", a.strategy,
                      "per_language | overall_best | min_train_loss");
    if (name == "ensemble") {
      sub->add_option("--members", a.members,
                      "Comma-separated member files ({\"checkpoint\", \"validation\"})");
      sub->add_option("--vote", a.vote, "Vote rule (majority)");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);  // --help and friends
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 1;
  }
  a.seed_set = seed_opt->count() > 0;

  const std::vector<CLI::App*> chosen = app.get_subcommands();
  if (chosen.empty()) {
    std::cerr << app.help() << std::flush;
    return 1;
  }

  try {
    run_command(chosen.front()->get_name(), a);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::validation ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
