#include "newsclf/experiments.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <numeric>
#include <set>
#include <thread>

#include "newsclf/common.hpp"
#include "newsclf/configio.hpp"
#include "newsclf/inference.hpp"

namespace newsclf {

namespace {

int class_count(const SyntheticConfig& cfg) {
  return cfg.subtask == Subtask::genre ? kGenreClassCount : cfg.techniques;
}

// Token alphabet for one language: class keywords first (class-major), then
// fillers. Lexicons map index i of one alphabet to index i of another, so
// parallel texts stay class-aligned.
struct Alphabet {
  std::vector<std::string> tokens;
  int keywords_per_class = 0;
  int keyword_count = 0;
  int filler_count = 0;

  const std::string& keyword(int cls, int j) const {
    return tokens[static_cast<std::size_t>(cls) * keywords_per_class + j];
  }
  const std::string& filler(int j) const { return tokens[keyword_count + j]; }
  const std::string& background(int j) const { return tokens[keyword_count + filler_count + j]; }
};

Alphabet make_alphabet(const std::string& lang, const SyntheticConfig& cfg) {
  Alphabet a;
  a.keywords_per_class = cfg.keywords_per_class;
  a.keyword_count = class_count(cfg) * cfg.keywords_per_class;
  a.filler_count = cfg.filler_tokens;
  for (int c = 0; c < class_count(cfg); ++c)
    for (int j = 0; j < cfg.keywords_per_class; ++j)
      a.tokens.push_back(lang + "kw" + std::to_string(c) + "x" + std::to_string(j));
  for (int j = 0; j < cfg.filler_tokens; ++j) a.tokens.push_back(lang + "fill" + std::to_string(j));
  for (int j = 0; j < cfg.background_tokens; ++j)
    a.tokens.push_back(lang + "bg" + std::to_string(j));
  return a;
}

std::string sample_background(Rng& rng, const Alphabet& a, const SyntheticConfig& cfg,
                              int n_words) {
  std::string out;
  for (int w = 0; w < n_words; ++w) {
    std::string tok = a.background(static_cast<int>(rng.next_below(cfg.background_tokens)));
    if (w == 0) tok[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(tok[0])));
    out += w == 0 ? tok : " " + tok;
  }
  return out + ".";
}

// `classes` is the keyword pool for this span; empty means fillers only.
// The first word is always a keyword of classes.front() so no item is ever
// left without its class signal.
std::string sample_words(Rng& rng, const Alphabet& a, const SyntheticConfig& cfg, int n_words,
                         const std::vector<int>& classes) {
  std::string out;
  for (int w = 0; w < n_words; ++w) {
    std::string tok;
    bool want_keyword =
        !classes.empty() && (w == 0 || rng.next_double() < cfg.keyword_rate);
    if (want_keyword) {
      int cls = classes[w == 0 ? 0 : rng.next_below(classes.size())];
      tok = a.keyword(cls, static_cast<int>(rng.next_below(cfg.keywords_per_class)));
    } else {
      tok = a.filler(static_cast<int>(rng.next_below(cfg.filler_tokens)));
    }
    if (w == 0) tok[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(tok[0])));
    out += w == 0 ? tok : " " + tok;
  }
  return out + ".";
}

std::string pad3(int n) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%03d", n);
  return buf;
}

std::uint64_t item_stream(const SyntheticConfig& cfg, const std::string& lang,
                          const std::string& tag, int index) {
  return mix_seed(cfg.seed, fnv1a(lang + "|" + tag + "|" + std::to_string(index)));
}

void generate_split(const SyntheticConfig& cfg, const std::string& tag, int items,
                    const std::map<std::string, Alphabet>& alphabets, std::vector<Article>& out,
                    LabelSet& labels) {
  for (const auto& lang : cfg.languages) {
    const Alphabet& a = alphabets.at(lang);
    for (int i = 0; i < items; ++i) {
      Rng rng(item_stream(cfg, lang, tag, i));
      Article art;
      art.id = lang + "-" + tag + "-" + pad3(i);
      art.language = lang;
      if (cfg.subtask == Subtask::genre) {
        int cls = i % kGenreClassCount;  // items per split divide by three
        art.title = sample_words(rng, a, cfg, 3, {cls});
        for (int p = 0; p < cfg.paragraphs_per_article; ++p)
          art.paragraphs.push_back(sample_words(rng, a, cfg, cfg.words_per_paragraph, {cls}));
        labels.genre[art.id] = static_cast<Genre>(cls);
      } else {
        art.title = sample_words(rng, a, cfg, 3, {});
        for (int p = 1; p <= cfg.paragraphs_per_article; ++p) {
          if (rng.next_double() < cfg.unlabeled_rate) {
            art.paragraphs.push_back(sample_background(rng, a, cfg, cfg.words_per_paragraph));
            continue;  // no label row: the paragraph is unlabeled
          }
          std::vector<int> pool(cfg.techniques);
          std::iota(pool.begin(), pool.end(), 0);
          rng.shuffle(pool);
          int picked = 1 + static_cast<int>(rng.next_below(std::min(2, cfg.techniques)));
          std::vector<int> chosen(pool.begin(), pool.begin() + picked);
          std::sort(chosen.begin(), chosen.end());
          std::vector<std::uint8_t> row(cfg.techniques, 0);
          for (int t : chosen) row[t] = 1;
          labels.techniques[{art.id, p}] = row;
          art.paragraphs.push_back(sample_words(rng, a, cfg, cfg.words_per_paragraph, chosen));
        }
      }
      out.push_back(std::move(art));
    }
  }
}

std::uint64_t hash_articles(std::uint64_t h, const std::string& tag,
                            const std::vector<Article>& articles) {
  h = fnv1a(tag, h);
  for (const Article& a : articles) {
    h = fnv1a(a.id, h);
    h = fnv1a(a.language, h);
    h = fnv1a(a.title, h);
    for (const std::string& p : a.paragraphs) h = fnv1a(p, h);
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fixed6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

CellStat make_stat(const std::vector<double>& xs) {
  CellStat s;
  s.runs = static_cast<int>(xs.size());
  if (xs.empty()) return s;
  s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
  double var = 0;
  for (double x : xs) var += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(var / xs.size());
  return s;
}

EncodedSet encode_for(const ExperimentCorpus& corpus, const LabeledSet& set,
                      const ExperimentConfig& cfg) {
  return encode_set(set, corpus.vocab, Abbreviations{}, cfg.max_len, corpus.classes.size());
}

// Per-language training and validation views, checked both ways so a
// language never silently drops out of a comparison.
struct SplitViews {
  std::vector<std::string> languages;
  std::map<std::string, EncodedSet> train, validation;
  EncodedSet pooled_train;
};

SplitViews prepare_views(const ExperimentCorpus& corpus, const ExperimentConfig& cfg) {
  SplitViews v;
  v.languages = corpus_languages(corpus.train);
  require(!v.languages.empty(), "experiment error: the training corpus is empty");
  for (const auto& lang : corpus_languages(corpus.validation))
    require(std::count(v.languages.begin(), v.languages.end(), lang) != 0,
            "experiment error: language '" + lang + "' is missing from the training corpus");
  for (const auto& lang : v.languages) {
    LabeledSet val = filter_language(corpus.validation, lang);
    require(!val.items.empty(), "experiment error: language '" + lang + "' has no validation items");
    v.train[lang] = encode_for(corpus, filter_language(corpus.train, lang), cfg);
    v.validation[lang] = encode_for(corpus, val, cfg);
  }
  v.pooled_train = encode_for(corpus, corpus.train, cfg);
  return v;
}

ModelConfig bound_model(const ExperimentCorpus& corpus, const ExperimentConfig& cfg) {
  ModelConfig mc = cfg.model;
  mc.vocab_size = corpus.vocab.size();
  mc.validate();
  return mc;
}

void write_manifest(const std::string& path, const std::string& experiment,
                    const ExperimentCorpus& corpus, const ExperimentConfig& cfg,
                    const std::vector<std::string>& languages, nlohmann::json extra) {
  nlohmann::json m;
  m["experiment"] = experiment;
  m["subtask"] = subtask_name(corpus.subtask);
  m["corpus_hash"] = hex64(corpus.content_hash);
  m["languages"] = languages;
  m["config"] = cfg;
  m.update(extra);
  write_text_file(path, m.dump(2) + "\n");
}

}  // namespace

void SyntheticConfig::validate() const {
  require(subtask != Subtask::framing,
          "config error: synthetic corpora cover the genre and persuasion subtasks");
  require(!languages.empty(), "config error: synthetic corpus needs at least one language");
  std::set<std::string> seen;
  for (const auto& lang : languages) {
    require(!lang.empty(), "config error: empty language code");
    require(seen.insert(lang).second, "config error: duplicate language '" + lang + "'");
  }
  for (const auto& [lang, donor] : clones) {
    require(seen.count(lang) != 0, "config error: clone '" + lang + "' is not a corpus language");
    require(seen.count(donor) != 0,
            "config error: clone donor '" + donor + "' is not a corpus language");
    require(clones.count(donor) == 0, "config error: clone donor '" + donor + "' is itself a clone");
    require(lang != donor, "config error: language '" + lang + "' cannot clone itself");
  }
  for (int n : {train_items, val_items, test_items}) {
    require(n > 0, "config error: every split needs at least one item per language");
    if (subtask == Subtask::genre)
      require(n % kGenreClassCount == 0,
              "config error: genre item counts must divide by the class count");
  }
  require(keywords_per_class > 0 && filler_tokens > 0, "config error: alphabet must be non-empty");
  require(keyword_rate > 0.0 && keyword_rate <= 1.0, "config error: keyword_rate must be in (0, 1]");
  require(words_per_paragraph > 0 && paragraphs_per_article > 0,
          "config error: texts must be non-empty");
  if (subtask == Subtask::persuasion) {
    require(techniques > 0, "config error: persuasion needs at least one technique");
    require(unlabeled_rate >= 0.0 && unlabeled_rate < 1.0,
            "config error: unlabeled_rate must be in [0, 1)");
    require(background_tokens > 0, "config error: persuasion needs background tokens");
  }
}

ExperimentCorpus make_synthetic_corpus(const SyntheticConfig& config) {
  config.validate();

  std::map<std::string, Alphabet> alphabets;
  for (const auto& lang : config.languages) {
    auto donor = config.clones.find(lang);
    alphabets[lang] = make_alphabet(donor == config.clones.end() ? lang : donor->second, config);
  }

  ExperimentCorpus corpus;
  corpus.subtask = config.subtask;
  corpus.labels.subtask = config.subtask;
  generate_split(config, "train", config.train_items, alphabets, corpus.train_articles,
                 corpus.labels);
  generate_split(config, "val", config.val_items, alphabets, corpus.val_articles, corpus.labels);
  generate_split(config, "test", config.test_items, alphabets, corpus.test_articles, corpus.labels);

  if (config.subtask == Subtask::genre) {
    corpus.classes = make_registry({genre_name(Genre::opinion), genre_name(Genre::reporting),
                                    genre_name(Genre::satire)});
  } else {
    std::vector<std::string> names;
    for (int t = 0; t < config.techniques; ++t) names.push_back("tech" + std::to_string(t));
    corpus.classes = make_registry(names);
  }

  std::vector<std::string> texts;
  for (const auto* split : {&corpus.train_articles, &corpus.val_articles, &corpus.test_articles})
    for (const Article& a : *split) {
      texts.push_back(a.title);
      for (const std::string& p : a.paragraphs) texts.push_back(p);
    }
  int alphabet_total = 0;
  for (const auto& [lang, a] : alphabets) alphabet_total += static_cast<int>(a.tokens.size());
  corpus.vocab = build_vocab(texts, alphabet_total + 16);

  corpus.train = build_training_set(corpus.train_articles,
                                    labels_for_articles(corpus.labels, corpus.train_articles),
                                    config.subtask, true);
  corpus.validation = build_training_set(corpus.val_articles,
                                         labels_for_articles(corpus.labels, corpus.val_articles),
                                         config.subtask, true);
  corpus.test = build_training_set(corpus.test_articles,
                                   labels_for_articles(corpus.labels, corpus.test_articles),
                                   config.subtask, true);

  for (const auto& src : config.languages)
    for (const auto& tgt : config.languages) {
      if (src == tgt) continue;
      const Alphabet& a = alphabets.at(src);
      const Alphabet& b = alphabets.at(tgt);
      std::vector<std::pair<std::string, std::string>> pairs;
      for (std::size_t i = 0; i < a.tokens.size(); ++i)
        pairs.emplace_back(a.tokens[i], b.tokens[i]);
      corpus.lexicons[{src, tgt}] = make_lexicon(pairs);
    }

  std::uint64_t h = fnv1a(subtask_name(config.subtask));
  h = hash_articles(h, "train", corpus.train_articles);
  h = hash_articles(h, "val", corpus.val_articles);
  h = hash_articles(h, "test", corpus.test_articles);
  for (const auto& [id, g] : corpus.labels.genre)
    h = fnv1a(id + ":" + std::to_string(static_cast<int>(g)), h);
  for (const auto& [key, row] : corpus.labels.techniques) {
    std::string bits(row.begin(), row.end());
    for (char& c : bits) c = static_cast<char>('0' + c);
    h = fnv1a(key.first + "#" + std::to_string(key.second) + ":" + bits, h);
  }
  h = mix_seed(h, corpus.vocab.hash());
  corpus.content_hash = h;
  return corpus;
}

LabelSet labels_for_articles(const LabelSet& labels, const std::vector<Article>& articles) {
  std::set<std::string> ids;
  for (const Article& a : articles) ids.insert(a.id);
  LabelSet out;
  out.subtask = labels.subtask;
  for (const auto& [id, g] : labels.genre)
    if (ids.count(id)) out.genre[id] = g;
  for (const auto& [id, frames] : labels.frames)
    if (ids.count(id)) out.frames[id] = frames;
  for (const auto& [key, row] : labels.techniques)
    if (ids.count(key.first)) out.techniques[key] = row;
  return out;
}

void write_lexicons(const ExperimentCorpus& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [pair, lex] : corpus.lexicons) {
    std::string body;
    for (const LexiconEntry& e : lex.entries) body += e.source + "\t" + e.target + "\n";
    write_text_file(dir + "/" + pair.first + "_" + pair.second + ".tsv", body);
  }
}

LabeledSet filter_language(const LabeledSet& set, const std::string& language) {
  LabeledSet out;
  out.subtask = set.subtask;
  for (const TrainItem& item : set.items)
    if (item.language() == language) out.items.push_back(item);
  return out;
}

std::vector<std::string> corpus_languages(const LabeledSet& set) {
  std::set<std::string> seen;
  for (const TrainItem& item : set.items) seen.insert(item.language());
  return {seen.begin(), seen.end()};
}

void run_jobs(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  require(workers >= 1, "jobs error: workers must be at least 1");
  if (n == 0) return;
  std::size_t pool = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < pool; ++w)
    threads.emplace_back([&] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (std::thread& t : threads) t.join();
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
}

MetricsReport evaluate_model(Model& model, const EncodedSet& data, double threshold,
                             const Registry& classes) {
  PredictionSet preds = predict(model, data, threshold);
  if (data.subtask == Subtask::genre) {
    std::vector<int> pred;
    for (const Prediction& p : preds.items) pred.push_back(static_cast<int>(p.genre));
    return f1_scores(pred, data.genre_ids, classes);
  }
  std::vector<std::vector<std::uint8_t>> pred;
  for (const Prediction& p : preds.items) pred.push_back(p.labels);
  return f1_scores(pred, data.labels, classes);
}

void ExperimentConfig::validate() const {
  train.validate();
  require(!seeds.empty(), "config error: experiments need at least one seed");
  require(max_len >= 8, "config error: max_len must be at least 8");
  require(threshold >= 0.0 && threshold <= 1.0, "config error: threshold must be in [0, 1]");
  require(workers >= 1, "config error: workers must be at least 1");
  require(!out_dir.empty(), "config error: experiments need an output directory");
}

MonoVsMultiReport run_mono_vs_multi(const ExperimentCorpus& corpus, const ExperimentConfig& config) {
  config.validate();
  SplitViews views = prepare_views(corpus, config);
  ModelConfig mc = bound_model(corpus, config);
  HeadConfig head{corpus.subtask, corpus.classes.size()};
  std::filesystem::create_directories(config.out_dir + "/runs");

  const std::size_t n_lang = views.languages.size();
  const std::size_t n_seed = config.seeds.size();
  const std::size_t per_seed = n_lang + 1;  // one mono run per language plus the pooled run
  std::vector<std::vector<double>> mono_scores(n_lang);
  std::vector<std::vector<double>> multi_scores(n_lang);
  for (auto& v : mono_scores) v.resize(n_seed);
  for (auto& v : multi_scores) v.resize(n_seed);

  run_jobs(per_seed * n_seed, config.workers, [&](std::size_t job) {
    std::size_t si = job / per_seed;
    std::size_t k = job % per_seed;
    std::uint64_t seed = config.seeds[si];
    TrainConfig tc = config.train;
    tc.seed = seed;
    tc.threshold = config.threshold;
    if (k < n_lang) {
      const std::string& lang = views.languages[k];
      Model model = build_encoder(mc, mix_seed(seed, fnv1a("mono:" + lang)));
      std::string dir =
          config.out_dir + "/runs/mono_" + lang + "_seed" + std::to_string(seed);
      train_model(model, head, views.train.at(lang), tc, nullptr, dir);
      mono_scores[k][si] =
          evaluate_model(model, views.validation.at(lang), config.threshold, corpus.classes)
              .macro_f1;
    } else {
      Model model = build_encoder(mc, mix_seed(seed, fnv1a("multi")));
      std::string dir = config.out_dir + "/runs/multi_seed" + std::to_string(seed);
      train_model(model, head, views.pooled_train, tc, nullptr, dir);
      for (std::size_t li = 0; li < n_lang; ++li)
        multi_scores[li][si] = evaluate_model(model, views.validation.at(views.languages[li]),
                                              config.threshold, corpus.classes)
                                   .macro_f1;
    }
  });

  MonoVsMultiReport report;
  report.languages = views.languages;
  report.csv = "language,setting,f1_macro_mean,f1_macro_std,runs\n";
  for (std::size_t li = 0; li < n_lang; ++li) {
    const std::string& lang = views.languages[li];
    report.mono[lang] = make_stat(mono_scores[li]);
    report.multi[lang] = make_stat(multi_scores[li]);
    for (const char* setting : {"mono", "multi"}) {
      const CellStat& s = setting == std::string("mono") ? report.mono[lang] : report.multi[lang];
      report.csv += lang + "," + setting + "," + fixed6(s.mean) + "," + fixed6(s.stddev) + "," +
                    std::to_string(s.runs) + "\n";
    }
  }
  report.csv_path = config.out_dir + "/report.csv";
  report.manifest_path = config.out_dir + "/manifest.json";
  write_text_file(report.csv_path, report.csv);
  write_manifest(report.manifest_path, "mono_vs_multi", corpus, config, report.languages,
                 {{"report", "report.csv"}});
  return report;
}

HoldoutReport run_zero_shot_holdout(const ExperimentCorpus& corpus, const std::string& held_out,
                                    const ExperimentConfig& config) {
  config.validate();
  std::vector<std::string> languages = corpus_languages(corpus.train);
  require(languages.size() >= 2, "holdout error: needs at least two training languages");
  require(std::count(languages.begin(), languages.end(), held_out) != 0,
          "holdout error: language '" + held_out + "' has no training items");

  LabeledSet pool;
  pool.subtask = corpus.train.subtask;
  for (const TrainItem& item : corpus.train.items)
    if (item.language() != held_out) pool.items.push_back(item);

  std::map<std::string, EncodedSet> test_sets;
  for (const auto& lang : languages) {
    LabeledSet t = filter_language(corpus.test, lang);
    require(!t.items.empty(), "holdout error: language '" + lang + "' has no test items");
    test_sets[lang] = encode_for(corpus, t, config);
  }
  EncodedSet enc_pool = encode_for(corpus, pool, config);
  ModelConfig mc = bound_model(corpus, config);
  HeadConfig head{corpus.subtask, corpus.classes.size()};
  std::filesystem::create_directories(config.out_dir + "/runs");

  std::vector<std::map<std::string, double>> per_seed(config.seeds.size());
  run_jobs(config.seeds.size(), config.workers, [&](std::size_t si) {
    std::uint64_t seed = config.seeds[si];
    TrainConfig tc = config.train;
    tc.seed = seed;
    tc.threshold = config.threshold;
    Model model = build_encoder(mc, mix_seed(seed, fnv1a("holdout:" + held_out)));
    std::string dir = config.out_dir + "/runs/holdout_" + held_out + "_seed" + std::to_string(seed);
    train_model(model, head, enc_pool, tc, nullptr, dir);
    for (const auto& lang : languages)
      per_seed[si][lang] =
          evaluate_model(model, test_sets.at(lang), config.threshold, corpus.classes).macro_f1;
  });

  HoldoutReport report;
  report.held_out = held_out;
  report.csv = "language,held_out,f1_macro_mean,f1_macro_std,runs\n";
  for (const auto& lang : languages) {
    std::vector<double> xs;
    for (const auto& seed_scores : per_seed) xs.push_back(seed_scores.at(lang));
    HoldoutRow row{lang, lang == held_out, make_stat(xs)};
    report.csv += lang + "," + (row.held_out ? "yes" : "no") + "," + fixed6(row.f1.mean) + "," +
                  fixed6(row.f1.stddev) + "," + std::to_string(row.f1.runs) + "\n";
    report.rows.push_back(std::move(row));
  }
  report.csv_path = config.out_dir + "/report.csv";
  report.manifest_path = config.out_dir + "/manifest.json";
  write_text_file(report.csv_path, report.csv);
  write_manifest(report.manifest_path, "zero_shot_holdout", corpus, config, languages,
                 {{"held_out", held_out}, {"report", "report.csv"}});
  return report;
}

BackendTable identity_backends(const std::vector<std::string>& languages) {
  BackendTable table;
  for (const auto& src : languages)
    for (const auto& tgt : languages)
      if (src != tgt) table[{src, tgt}] = identity_backend();
  return table;
}

BackendTable corpus_backends(const ExperimentCorpus& corpus) {
  BackendTable table;
  for (const auto& [pair, lex] : corpus.lexicons) {
    TranslationBackend b;
    b.kind = BackendKind::lexicon;
    b.lexicon = lex;
    table[pair] = b;
  }
  return table;
}

SweepReport run_translate_test_sweep(const ExperimentCorpus& corpus, const BackendTable& backends,
                                     const ExperimentConfig& config) {
  config.validate();
  SplitViews views = prepare_views(corpus, config);
  const std::vector<std::string>& languages = views.languages;
  std::map<std::string, LabeledSet> test_sets;
  for (const auto& lang : languages) {
    LabeledSet t = filter_language(corpus.test, lang);
    require(!t.items.empty(), "sweep error: language '" + lang + "' has no test items");
    test_sets[lang] = std::move(t);
  }
  for (const auto& src : languages)
    for (const auto& tgt : languages)
      require(src == tgt || backends.count({src, tgt}) != 0,
              "sweep error: no backend for route '" + src + "->" + tgt + "'");

  ModelConfig mc = bound_model(corpus, config);
  HeadConfig head{corpus.subtask, corpus.classes.size()};
  std::filesystem::create_directories(config.out_dir + "/runs");
  EncodedSet enc_val = encode_for(corpus, corpus.validation, config);

  TrainConfig tc = config.train;
  tc.seed = config.seeds.front();
  tc.threshold = config.threshold;
  Model model = build_encoder(mc, mix_seed(tc.seed, fnv1a("sweep")));
  CheckpointSeries series =
      train_model(model, head, views.pooled_train, tc, &enc_val, config.out_dir + "/runs/sweep");
  Selection sel = select_checkpoint(series, SelectStrategy::per_language);

  SweepReport report;
  report.languages = languages;
  for (const auto& lang : languages) {
    int epoch = sel.epoch_by_language.at(lang);
    report.epoch_by_language[lang] = epoch;
    report.checkpoint_by_language[lang] = series.snapshot_paths[epoch - 1];
  }

  const std::size_t n = languages.size();
  report.cells.resize(n * n);
  run_jobs(n, config.workers, [&](std::size_t ti) {
    const std::string& tgt = languages[ti];
    Checkpoint ck = load_checkpoint(report.checkpoint_by_language.at(tgt));
    require(ck.head.has_value(), "sweep error: checkpoint is missing its classifier head");
    for (std::size_t si = 0; si < n; ++si) {
      const std::string& src = languages[si];
      SweepCell cell{src, tgt, src == tgt, 0.0};
      EncodedSet enc;
      if (src == tgt) {
        enc = encode_for(corpus, test_sets.at(src), config);
      } else {
        TranslatedCorpus tr = translate_corpus(backends.at({src, tgt}), test_sets.at(src), tgt);
        if (!tr.failures.empty())
          fail_io("sweep error: translation failed for article '" + tr.failures[0].article_id +
                  "': " + tr.failures[0].message);
        enc = encode_for(corpus, tr.set, config);
      }
      cell.f1 = evaluate_model(ck.model, enc, config.threshold, corpus.classes).macro_f1;
      report.cells[si * n + ti] = std::move(cell);
    }
  });

  report.csv = "source,target,route,f1_macro\n";
  for (const SweepCell& cell : report.cells)
    report.csv += cell.source + "," + cell.target + "," + (cell.direct ? "direct" : "translated") +
                  "," + fixed6(cell.f1) + "\n";
  report.csv_path = config.out_dir + "/report.csv";
  report.manifest_path = config.out_dir + "/manifest.json";
  write_text_file(report.csv_path, report.csv);
  nlohmann::json extra;
  extra["report"] = "report.csv";
  extra["selected_epochs"] = report.epoch_by_language;
  extra["checkpoints"] = report.checkpoint_by_language;
  write_manifest(report.manifest_path, "translate_test_sweep", corpus, config, languages, extra);
  return report;
}

}  // namespace newsclf
