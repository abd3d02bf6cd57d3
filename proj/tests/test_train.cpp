#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "newsclf/eval.hpp"
#include "newsclf/train.hpp"

using namespace newsclf;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("newsclf_train_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string sub(const std::string& name) const { return (path / name).string(); }
};

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape &&
         std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(double)) == 0;
}

ModelConfig tiny_config(std::int64_t vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_len = 12;
  c.dropout = 0.1;
  return c;
}

Vocab demo_vocab(int words) {
  std::string text;
  for (int i = 0; i < words; ++i) text += "w" + std::to_string(i) + " ";
  return build_vocab({text}, words + Vocab::kReserved);
}

// Genre fixture: each class has a keyword token that dominates its
// sequences; noise_p = 0 makes the classes exactly separable.
EncodedSet make_genre_set(const Vocab& vocab, int n_items, int n_classes, std::uint64_t seed,
                          const std::vector<std::string>& langs, double noise_p = 0.2) {
  EncodedSet set;
  set.subtask = Subtask::genre;
  set.max_len = 12;
  set.n_classes = n_classes;
  set.vocab_hash = vocab.hash();
  Rng rng(seed);
  for (int i = 0; i < n_items; ++i) {
    const int cls = i % n_classes;
    const int keyword = vocab.id_of("w" + std::to_string(cls));
    TokenSeq seq;
    seq.ids.assign(12, Vocab::kPad);
    seq.ids[0] = Vocab::kCls;
    for (int p = 1; p <= 8; ++p) {
      const bool noise = rng.next_double() < noise_p;
      seq.ids[static_cast<std::size_t>(p)] =
          noise ? vocab.id_of("w" + std::to_string(n_classes + rng.next_below(4))) : keyword;
    }
    seq.ids[9] = Vocab::kSep;
    seq.attention_len = 10;
    set.seqs.push_back(seq);
    set.genre_ids.push_back(cls);
    set.language.push_back(langs[static_cast<std::size_t>(i) % langs.size()]);
  }
  return set;
}

// Highly regular text for masked-token training: every sequence repeats a
// single word, so context fully determines the masked token.
std::vector<TokenSeq> make_mlm_corpus(const Vocab& vocab, int n_items, int offset) {
  std::vector<TokenSeq> corpus;
  for (int i = 0; i < n_items; ++i) {
    const int word = vocab.id_of("w" + std::to_string((i + offset) % 4));
    TokenSeq seq;
    seq.ids.assign(12, Vocab::kPad);
    seq.ids[0] = Vocab::kCls;
    for (int p = 1; p <= 9; ++p) seq.ids[static_cast<std::size_t>(p)] = word;
    seq.ids[10] = Vocab::kSep;
    seq.attention_len = 11;
    corpus.push_back(seq);
  }
  return corpus;
}

}  // namespace

TEST_CASE("config validation rejects out-of-range fields") {
  TrainConfig ok;
  ok.validate();
  TrainConfig bad = ok;
  bad.warmup_ratio = 1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = ok;
  bad.peak_lr = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = ok;
  bad.threshold = 1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = ok;
  bad.class_weighting = "sqrt";
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = ok;
  bad.optim.beta2 = 1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  TaptConfig tapt_ok;
  tapt_ok.validate();
  TaptConfig tapt_bad = tapt_ok;
  tapt_bad.mask_rate = 1.5;
  CHECK_THROWS_AS(tapt_bad.validate(), Error);
}

TEST_CASE("binary cross-entropy on zero logits against a one-hot target is ln 2") {
  const Tensor logits = Tensor::zeros({1, 2});
  Tensor targets = Tensor::zeros({1, 2});
  targets[0] = 1;
  CHECK(compute_loss(logits, targets, Subtask::framing) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // all-zero targets still pay the negative-class price on both logits
  CHECK(compute_loss(logits, Tensor::zeros({1, 2}), Subtask::persuasion) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("uniform class weights equal the unweighted loss") {
  Rng rng(5);
  Tensor logits = Tensor::zeros({4, 3});
  for (auto& v : logits.values) v = rng.next_normal();
  Tensor targets1 = Tensor::of({4}, {0, 2, 1, 1});
  const std::vector<double> uniform(3, 1.0);
  CHECK(compute_loss(logits, targets1, Subtask::genre, &uniform) ==
        compute_loss(logits, targets1, Subtask::genre));
  Tensor targetsm = Tensor::zeros({4, 3});
  for (auto& v : targetsm.values) v = rng.next_double() < 0.4 ? 1.0 : 0.0;
  CHECK(compute_loss(logits, targetsm, Subtask::framing, &uniform) ==
        compute_loss(logits, targetsm, Subtask::framing));
}

TEST_CASE("a zero class weight removes that class from the loss") {
  Rng rng(6);
  Tensor logits = Tensor::zeros({3, 3});
  for (auto& v : logits.values) v = rng.next_normal();
  Tensor targets = Tensor::zeros({3, 3});
  targets[0] = 1;
  targets[4] = 1;
  const std::vector<double> w = {1.0, 0.0, 1.0};

  // multilabel: perturbing the weight-0 class's logit leaves the loss
  // untouched, i.e. its gradient is exactly zero
  const double base = compute_loss(logits, targets, Subtask::framing, &w);
  Tensor bumped = logits;
  bumped[1] += 0.37;
  bumped[4] += -1.2;
  bumped[7] += 5.0;
  CHECK(compute_loss(bumped, targets, Subtask::framing, &w) == base);

  // genre: a weight-0 target class silences the whole row
  Tensor gt = Tensor::of({3}, {1, 1, 1});
  const double g = compute_loss(logits, gt, Subtask::genre, &w);
  CHECK(g == 0.0);
}

TEST_CASE("hand-computed genre loss and weight scaling") {
  Tensor logits = Tensor::of({1, 2}, {1.0, 0.0});
  Tensor target = Tensor::of({1}, {0.0});
  CHECK(compute_loss(logits, target, Subtask::genre) ==
        doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-12));
  const std::vector<double> w = {2.0, 1.0};
  CHECK(compute_loss(logits, target, Subtask::genre, &w) ==
        doctest::Approx(2.0 * std::log1p(std::exp(-1.0))).epsilon(1e-12));
}

TEST_CASE("closed-form loss matches the graph loss nodes") {
  Rng rng(7);
  Tensor logits = Tensor::zeros({5, 4});
  for (auto& v : logits.values) v = 2.0 * rng.next_normal();
  const std::vector<double> w = {0.5, 2.0, 1.0, 1.5};
  const Tensor weights = Tensor::of({4}, std::vector<double>(w));

  SUBCASE("cross-entropy") {
    Tensor targets = Tensor::of({5}, {0, 3, 2, 1, 3});
    Graph<double> g;
    ParamStore<double> store;
    const int loss =
        g.mul_scalar(g.cross_entropy_sum(g.input("logits"), g.input("targets"),
                                         g.input("class_weights")),
                     g.input("loss_scale"));
    Runner<double> runner(g, store);
    const double got = runner.forward({{"logits", logits},
                                       {"targets", targets},
                                       {"class_weights", weights},
                                       {"loss_scale", Tensor::scalar(1.0 / 5)}},
                                      loss)[0];
    CHECK(got == doctest::Approx(compute_loss(logits, targets, Subtask::genre, &w))
                     .epsilon(1e-12));
  }

  SUBCASE("binary cross-entropy") {
    Tensor targets = Tensor::zeros({5, 4});
    for (auto& v : targets.values) v = rng.next_double() < 0.3 ? 1.0 : 0.0;
    Graph<double> g;
    ParamStore<double> store;
    const int loss = g.mul_scalar(
        g.bce_sum(g.input("logits"), g.input("targets"), g.input("class_weights")),
        g.input("loss_scale"));
    Runner<double> runner(g, store);
    const double got = runner.forward({{"logits", logits},
                                       {"targets", targets},
                                       {"class_weights", weights},
                                       {"loss_scale", Tensor::scalar(1.0 / 20)}},
                                      loss)[0];
    CHECK(got == doctest::Approx(compute_loss(logits, targets, Subtask::framing, &w))
                     .epsilon(1e-12));
  }
}

TEST_CASE("learning rate schedule is linear up then linear down") {
  CHECK(lr_at(1e-3, 0.1, 10, 100) == 1e-3);
  CHECK(lr_at(1e-3, 0.1, 5, 100) == doctest::Approx(0.5e-3).epsilon(1e-12));
  CHECK(lr_at(1e-3, 0.1, 100, 100) == 0.0);
  CHECK(lr_at(1e-3, 0.1, 0, 100) == 0.0);
  CHECK(lr_at(1e-3, 0.1, 55, 100) == doctest::Approx(1e-3 * 45.0 / 90.0).epsilon(1e-12));
  // no warmup: starts at the peak
  CHECK(lr_at(2e-4, 0.0, 0, 50) == 2e-4);
  CHECK(lr_at(2e-4, 0.0, 25, 50) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK_THROWS_AS(lr_at(1e-3, 0.1, 101, 100), Error);
  CHECK_THROWS_AS(lr_at(1e-3, 0.1, 0, 0), Error);
}

TEST_CASE("learning rate peak is attained exactly once and segments are linear") {
  const std::int64_t total = 40;
  std::vector<double> lrs;
  for (std::int64_t s = 0; s <= total; ++s) lrs.push_back(lr_at(1.0, 0.25, s, total));
  int peaks = 0;
  for (double v : lrs)
    if (v == 1.0) ++peaks;
  CHECK(peaks == 1);
  for (std::size_t i = 2; i <= 10; ++i)  // warmup segment: constant slope
    CHECK(lrs[i] - lrs[i - 1] == doctest::Approx(lrs[1] - lrs[0]).epsilon(1e-12));
  for (std::size_t i = 12; i <= 40; ++i)  // decay segment
    CHECK(lrs[i] - lrs[i - 1] == doctest::Approx(lrs[12] - lrs[11]).epsilon(1e-12));
}

TEST_CASE("adamw leaves parameters alone when gradient and decay are zero") {
  ParamStore<double> store;
  store.add("w", Tensor::of({2, 2}, {1.0, -2.0, 3.0, 0.5}));
  AdamState state;
  OptimConfig cfg;
  adamw_step(store, state, cfg, 1e-3);
  CHECK(store.value("w").values == std::vector<double>{1.0, -2.0, 3.0, 0.5});
  CHECK(state.t == 1);
}

TEST_CASE("adamw matches a hand-stepped scalar reference") {
  ParamStore<double> store;
  store.add("p", Tensor::of({1}, {0.7}));
  AdamState state;
  OptimConfig cfg;  // eps 1e-8, betas 0.9/0.999, wd 0
  const double grads[2] = {0.3, -0.2};
  const double lrs[2] = {0.01, 0.02};

  double p = 0.7, m = 0, v = 0;
  for (int t = 1; t <= 2; ++t) {
    store.grad("p")[0] = grads[t - 1];
    adamw_step(store, state, cfg, lrs[t - 1]);

    const double g = grads[t - 1];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mhat = m / (1.0 - std::pow(0.9, t));
    const double vhat = v / (1.0 - std::pow(0.999, t));
    p -= lrs[t - 1] * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(store.value("p")[0] == doctest::Approx(p).epsilon(1e-12));
  }
  // one step from zero state moves by ~lr in the gradient's direction
  ParamStore<double> fresh;
  fresh.add("p", Tensor::of({1}, {0.7}));
  fresh.grad("p")[0] = 0.3;
  AdamState s2;
  adamw_step(fresh, s2, cfg, 0.01);
  CHECK(fresh.value("p")[0] == doctest::Approx(0.7 - 0.01).epsilon(1e-6));
}

TEST_CASE("weight decay touches matrices but never vectors") {
  ParamStore<double> store;
  store.add("w", Tensor::of({1, 1}, {2.0}));
  store.add("b", Tensor::of({1}, {2.0}));
  AdamState state;
  OptimConfig cfg;
  cfg.weight_decay = 0.01;
  adamw_step(store, state, cfg, 0.1);
  CHECK(store.value("w")[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-12));
  CHECK(store.value("b")[0] == 2.0);
}

TEST_CASE("token masking selects only regular tokens and replays deterministically") {
  Vocab vocab = demo_vocab(12);
  TokenSeq seq;
  seq.ids = {Vocab::kCls, 0, 0, 0, 0, 0, 0, 0, 0, 0, Vocab::kSep, Vocab::kPad};
  for (int p = 1; p <= 9; ++p)
    seq.ids[static_cast<std::size_t>(p)] = vocab.id_of("w" + std::to_string(p % 5));
  seq.attention_len = 11;

  SUBCASE("rate 0 selects nothing") {
    const MaskedTokens mt = mask_tokens(seq, {0.0}, vocab, 9);
    CHECK(mt.positions.empty());
    CHECK(mt.ids == seq.ids);
  }

  SUBCASE("rate 1 selects every regular token, replayed against the seeded draws") {
    const MaskedTokens mt = mask_tokens(seq, {1.0}, vocab, 9);
    REQUIRE(mt.positions.size() == 9);
    for (std::size_t i = 0; i < 9; ++i) {
      CHECK(mt.positions[i] == static_cast<int>(i) + 1);  // ascending, specials skipped
      CHECK(mt.targets[i] == seq.ids[static_cast<std::size_t>(mt.positions[i])]);
    }
    CHECK(mt.ids[0] == Vocab::kCls);
    CHECK(mt.ids[10] == Vocab::kSep);
    CHECK(mt.ids[11] == Vocab::kPad);

    // oracle: replay the generator the implementation specifies
    std::vector<int> positions = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    Rng rng(9);
    rng.shuffle(positions);
    std::sort(positions.begin(), positions.end());
    std::vector<int> expected = seq.ids;
    for (int pos : positions) {
      const double u = rng.next_double();
      if (u < 0.8)
        expected[static_cast<std::size_t>(pos)] = Vocab::kMask;
      else if (u < 0.9)
        expected[static_cast<std::size_t>(pos)] =
            Vocab::kReserved +
            static_cast<int>(rng.next_below(static_cast<std::uint64_t>(vocab.size()) -
                                            Vocab::kReserved));
    }
    CHECK(mt.ids == expected);
  }

  SUBCASE("specials survive any seed and rounding follows round-half-up") {
    for (std::uint64_t s = 0; s < 50; ++s) {
      const MaskedTokens mt = mask_tokens(seq, {0.5}, vocab, s);
      CHECK(mt.positions.size() == 5);  // floor(0.5 * 9 + 0.5)
      for (int pos : mt.positions) CHECK(seq.ids[static_cast<std::size_t>(pos)] >= Vocab::kReserved);
      CHECK(mt.ids[0] == Vocab::kCls);
      CHECK(mt.ids[10] == Vocab::kSep);
      CHECK(mt.ids[11] == Vocab::kPad);
    }
    CHECK(mask_tokens(seq, {0.15}, vocab, 3).positions.size() == 1);  // floor(1.35 + 0.5)
  }

  SUBCASE("same seed, same masking") {
    const MaskedTokens a = mask_tokens(seq, {0.5}, vocab, 123);
    const MaskedTokens b = mask_tokens(seq, {0.5}, vocab, 123);
    CHECK(a.ids == b.ids);
    CHECK(a.positions == b.positions);
  }
}

TEST_CASE("encode_set builds padded sequences and task labels") {
  Vocab vocab = demo_vocab(10);
  Abbreviations abbrev;
  auto art = std::make_shared<Article>(
      Article{"1", "en", "w0 w1", {"w2 w3 w4. w5 w6 w7 w8 w9 w0 w1 w2 w3 w4 w5."}});

  LabeledSet genre_set;
  genre_set.subtask = Subtask::genre;
  TrainItem item;
  item.article = art;
  item.genre = Genre::satire;
  genre_set.items.push_back(item);

  EncodedSet enc = encode_set(genre_set, vocab, abbrev, 12, 3);
  REQUIRE(enc.size() == 1);
  CHECK(enc.subtask == Subtask::genre);
  CHECK(enc.vocab_hash == vocab.hash());
  CHECK(enc.seqs[0].ids.size() == 12);
  CHECK(enc.seqs[0].ids[0] == Vocab::kCls);
  CHECK(enc.seqs[0].attention_len <= 12);
  CHECK(enc.genre_ids == std::vector<int>{2});
  CHECK(enc.language == std::vector<std::string>{"en"});

  LabeledSet framing_set;
  framing_set.subtask = Subtask::framing;
  TrainItem fitem;
  fitem.article = art;
  fitem.frames = {0, 3};
  framing_set.items.push_back(fitem);
  EncodedSet fenc = encode_set(framing_set, vocab, abbrev, 12, 5);
  CHECK(fenc.labels[0] == std::vector<std::uint8_t>{1, 0, 0, 1, 0});
  fitem.frames = {7};
  framing_set.items[0] = fitem;
  CHECK_THROWS_AS(encode_set(framing_set, vocab, abbrev, 12, 5), Error);
}

TEST_CASE("one epoch takes ceil(n/batch) optimizer steps and snapshots once") {
  TempDir dir("steps");
  Vocab vocab = demo_vocab(10);
  Model model = build_encoder(tiny_config(vocab.size()), 11);
  EncodedSet train = make_genre_set(vocab, 10, 3, 500, {"en"});
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.peak_lr = 1e-3;
  cfg.seed = 1;
  CheckpointSeries series = train_model(model, head_for(Subtask::genre), train, cfg, nullptr,
                                        dir.sub("run"));
  CHECK(model.step == 3);  // ceil(10/4)
  CHECK(series.epochs.size() == 1);
  CHECK(series.snapshot_paths.size() == 1);
  CHECK(fs::exists(series.snapshot_paths[0]));
  CHECK(series.epochs[0].epoch == 1);
  CHECK(series.epochs[0].has_validation == false);
  const std::string tsv = read_text_file(series.metrics_tsv);
  CHECK(tsv.find("epoch\tlanguage\tf1_macro\ttrain_loss\n") == 0);
  CHECK(tsv.find("1\tall\t-\t") != std::string::npos);
}

TEST_CASE("the same seed reproduces the series bit for bit") {
  Vocab vocab = demo_vocab(10);
  EncodedSet train = make_genre_set(vocab, 9, 3, 501, {"en", "fr"});
  EncodedSet val = make_genre_set(vocab, 6, 3, 502, {"en", "fr"});
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.peak_lr = 1e-3;
  cfg.warmup_ratio = 0.1;
  cfg.seed = 99;

  TempDir dir1("det1"), dir2("det2");
  Model m1 = build_encoder(tiny_config(vocab.size()), 11);
  Model m2 = build_encoder(tiny_config(vocab.size()), 11);
  CheckpointSeries s1 = train_model(m1, head_for(Subtask::genre), train, cfg, &val, dir1.sub("a"));
  CheckpointSeries s2 = train_model(m2, head_for(Subtask::genre), train, cfg, &val, dir2.sub("b"));

  REQUIRE(s1.epochs.size() == s2.epochs.size());
  for (std::size_t i = 0; i < s1.epochs.size(); ++i) {
    CHECK(s1.epochs[i].train_loss == s2.epochs[i].train_loss);
    CHECK(s1.epochs[i].f1_overall == s2.epochs[i].f1_overall);
    CHECK(s1.epochs[i].f1_by_language == s2.epochs[i].f1_by_language);
  }
  for (const std::string& name : m1.params.names())
    CHECK(same_bits(m1.params.value(name), m2.params.value(name)));
  // snapshots are byte-identical too
  CHECK(read_text_file(s1.snapshot_paths.back()) == read_text_file(s2.snapshot_paths.back()));
}

TEST_CASE("micro-batch accumulation trains bit-identically to full batches") {
  Vocab vocab = demo_vocab(10);
  EncodedSet train = make_genre_set(vocab, 6, 3, 503, {"en"});
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 6;
  cfg.peak_lr = 1e-3;
  cfg.seed = 7;

  std::vector<Model> models;
  for (int micro : {0, 2, 4}) {  // 4 leaves a ragged 2-row tail slice
    TempDir dir("micro" + std::to_string(micro));
    Model m = build_encoder(tiny_config(vocab.size()), 11);
    TrainConfig c = cfg;
    c.micro_batch = micro;
    train_model(m, head_for(Subtask::genre), train, c, nullptr, dir.sub("r"));
    models.push_back(std::move(m));
  }
  for (const std::string& name : models[0].params.names()) {
    CHECK(same_bits(models[0].params.value(name), models[1].params.value(name)));
    CHECK(same_bits(models[0].params.value(name), models[2].params.value(name)));
  }
}

TEST_CASE("adapter-mode steps leave the base encoder untouched") {
  TempDir dir("freeze");
  Vocab vocab = demo_vocab(10);
  EncodedSet train = make_genre_set(vocab, 4, 3, 504, {"en"});
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.peak_lr = 1e-3;

  Model adapted = build_encoder(tiny_config(vocab.size()), 11);
  insert_adapters(adapted, {AdapterPlacement::houlsby, 8, AdapterNonlinearity::gelu});
  const Tensor tok_before = adapted.params.value("embed.tok");
  const Tensor wq_before = adapted.params.value("layer0.attn.wq");
  train_model(adapted, head_for(Subtask::genre), train, cfg, nullptr, dir.sub("a"));
  CHECK(same_bits(adapted.params.value("embed.tok"), tok_before));
  CHECK(same_bits(adapted.params.value("layer0.attn.wq"), wq_before));
  // the adapter path itself moved: its zero up-projection is zero no longer
  double up_norm = 0;
  for (double v : adapted.params.value("layer0.adapter.attn.up.w").values) up_norm += v * v;
  CHECK(up_norm > 0);

  Model full = build_encoder(tiny_config(vocab.size()), 11);
  const Tensor full_tok_before = full.params.value("embed.tok");
  train_model(full, head_for(Subtask::genre), train, cfg, nullptr, dir.sub("b"));
  CHECK(!same_bits(full.params.value("embed.tok"), full_tok_before));
}

TEST_CASE("non-finite losses abort with a diagnostic") {
  TempDir dir("nan");
  Vocab vocab = demo_vocab(10);
  EncodedSet train = make_genre_set(vocab, 4, 3, 505, {"en"});
  Model model = build_encoder(tiny_config(vocab.size()), 11);
  model.params.value("embed.tok")[0] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.peak_lr = 1e-3;
  CHECK_THROWS_WITH_AS(
      train_model(model, head_for(Subtask::genre), train, cfg, nullptr, dir.sub("r")),
      doctest::Contains("non-finite"), Error);
}

TEST_CASE("a model refuses a set encoded with a different vocabulary") {
  TempDir dir("hash");
  Vocab vocab = demo_vocab(10);
  EncodedSet train = make_genre_set(vocab, 4, 3, 506, {"en"});
  Model model = build_encoder(tiny_config(vocab.size()), 11);
  model.vocab_hash = 1234567;  // bound elsewhere
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.peak_lr = 1e-3;
  CHECK_THROWS_WITH_AS(
      train_model(model, head_for(Subtask::genre), train, cfg, nullptr, dir.sub("r")),
      doctest::Contains("different vocabulary"), Error);
}

TEST_CASE("a separable three-class task trains to a low loss") {
  TempDir dir("sep");
  Vocab vocab = demo_vocab(10);
  EncodedSet train = make_genre_set(vocab, 24, 3, 507, {"en"}, 0.0);
  ModelConfig mc = tiny_config(vocab.size());
  mc.dropout = 0.0;  // the fixture probes optimisation, not regularisation
  Model model = build_encoder(mc, 11);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 8;
  cfg.peak_lr = 2e-2;
  cfg.warmup_ratio = 0.1;
  cfg.seed = 3;
  CheckpointSeries series =
      train_model(model, head_for(Subtask::genre), train, cfg, nullptr, dir.sub("r"));
  CHECK(series.epochs.back().train_loss < 0.1);
}

TEST_CASE("validation metrics flow into the series and the tsv") {
  TempDir dir("val");
  Vocab vocab = demo_vocab(10);
  EncodedSet train = make_genre_set(vocab, 12, 3, 508, {"en", "fr"});
  EncodedSet val = make_genre_set(vocab, 8, 3, 509, {"en", "fr"});
  Model model = build_encoder(tiny_config(vocab.size()), 11);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.peak_lr = 3e-3;
  cfg.seed = 4;
  CheckpointSeries series =
      train_model(model, head_for(Subtask::genre), train, cfg, &val, dir.sub("r"));
  REQUIRE(series.epochs.size() == 3);
  for (const EpochMetrics& m : series.epochs) {
    CHECK(m.has_validation);
    CHECK(m.f1_by_language.count("en") == 1);
    CHECK(m.f1_by_language.count("fr") == 1);
    CHECK(m.f1_overall >= 0);
    CHECK(m.f1_overall <= 1);
  }
  // the streamed TSV parses and mirrors the series
  EpochCurves curves = parse_metrics_tsv(read_text_file(series.metrics_tsv));
  REQUIRE(curves.series.count("all") == 1);
  CHECK(curves.series.at("all").size() == 3);
  CHECK(curves.series.at("en").size() == 3);
  CHECK(curves.series.at("all").back().f1 ==
        doctest::Approx(series.epochs.back().f1_overall).epsilon(1e-6));
  // selection integrates with the series
  const Selection sel = select_checkpoint(series, SelectStrategy::overall_best);
  CHECK(sel.epoch >= 1);
  CHECK(sel.epoch <= 3);
}

TEST_CASE("checkpoint selection strategies") {
  CheckpointSeries series;
  auto add_epoch = [&](int e, double loss, std::map<std::string, double> by_lang) {
    EpochMetrics m;
    m.epoch = e;
    m.train_loss = loss;
    if (!by_lang.empty()) {
      m.has_validation = true;
      double sum = 0;
      for (const auto& [_, f1] : by_lang) sum += f1;
      m.f1_overall = sum / static_cast<double>(by_lang.size());
      m.f1_by_language = std::move(by_lang);
    }
    series.epochs.push_back(std::move(m));
  };

  SUBCASE("per-language argmax with earliest ties") {
    // Polish peaks at epoch 4, Russian keeps climbing to the last epoch
    for (int e = 1; e <= 20; ++e) {
      const double pl = e <= 4 ? 0.1 * e : 0.4 - 0.005 * (e - 4);
      const double ru = 0.02 * e;
      add_epoch(e, 1.0 / e, {{"pl", pl}, {"ru", ru}});
    }
    const Selection sel = select_checkpoint(series, SelectStrategy::per_language);
    CHECK(sel.epoch_by_language.at("pl") == 4);
    CHECK(sel.epoch_by_language.at("ru") == 20);
  }

  SUBCASE("constant metrics pick the earliest epoch") {
    for (int e = 1; e <= 5; ++e) add_epoch(e, 0.5, {{"en", 0.7}});
    CHECK(select_checkpoint(series, SelectStrategy::per_language).epoch_by_language.at("en") ==
          1);
    CHECK(select_checkpoint(series, SelectStrategy::overall_best).epoch == 1);
    CHECK(select_checkpoint(series, SelectStrategy::min_train_loss).epoch == 1);
  }

  SUBCASE("min train loss on a decreasing curve picks the last epoch") {
    for (int e = 1; e <= 6; ++e) add_epoch(e, 1.0 - 0.1 * e, {});
    CHECK(select_checkpoint(series, SelectStrategy::min_train_loss).epoch == 6);
  }

  SUBCASE("validation strategies demand validation metrics") {
    for (int e = 1; e <= 3; ++e) add_epoch(e, 0.5, {});
    CHECK_THROWS_AS(select_checkpoint(series, SelectStrategy::overall_best), Error);
    CHECK_THROWS_AS(select_checkpoint(series, SelectStrategy::per_language), Error);
  }

  SUBCASE("empty series and uneven language coverage are contract errors") {
    CHECK_THROWS_AS(select_checkpoint(series, SelectStrategy::min_train_loss), Error);
    add_epoch(1, 0.5, {{"en", 0.5}});
    add_epoch(2, 0.4, {{"en", 0.5}, {"fr", 0.6}});
    CHECK_THROWS_AS(select_checkpoint(series, SelectStrategy::per_language), Error);
  }

  SUBCASE("strategy names round-trip") {
    for (SelectStrategy s : {SelectStrategy::per_language, SelectStrategy::overall_best,
                             SelectStrategy::min_train_loss})
      CHECK(select_strategy_from_name(select_strategy_name(s)) == s);
    CHECK_THROWS_AS(select_strategy_from_name("best"), Error);
  }
}

TEST_CASE("tapt micro slicing is bit-identical to the full effective batch") {
  Vocab vocab = demo_vocab(10);
  std::vector<TokenSeq> corpus = make_mlm_corpus(vocab, 8, 0);
  TaptConfig cfg;
  cfg.epochs = 2;
  cfg.effective_batch = 8;
  cfg.peak_lr = 1e-3;
  cfg.seed = 21;

  std::vector<Model> models;
  for (int micro : {0, 4, 3}) {  // 3 leaves a ragged tail slice
    Model m = build_encoder(tiny_config(vocab.size()), 13);
    TaptConfig c = cfg;
    c.micro_batch = micro;
    tapt(m, corpus, vocab, c);
    models.push_back(std::move(m));
  }
  for (const std::string& name : models[0].params.names()) {
    CHECK(same_bits(models[0].params.value(name), models[1].params.value(name)));
    CHECK(same_bits(models[0].params.value(name), models[2].params.value(name)));
  }
}

TEST_CASE("tapt lowers held-out masked-token loss substantially") {
  Vocab vocab = demo_vocab(10);
  std::vector<TokenSeq> train_corpus = make_mlm_corpus(vocab, 16, 0);
  std::vector<TokenSeq> heldout = make_mlm_corpus(vocab, 8, 2);

  Model model = build_encoder(tiny_config(vocab.size()), 17);
  attach_mlm_head(model);
  const double before = mlm_eval_loss(model, heldout, vocab, 0.15, 42);

  TaptConfig cfg;
  cfg.epochs = 30;
  cfg.effective_batch = 8;
  cfg.micro_batch = 8;
  cfg.peak_lr = 5e-3;
  cfg.seed = 22;
  const std::vector<double> losses = tapt(model, train_corpus, vocab, cfg);
  CHECK(losses.size() == 30);

  const double after = mlm_eval_loss(model, heldout, vocab, 0.15, 42);
  CHECK(after < 0.8 * before);
  CHECK(losses.back() < losses.front());
}

TEST_CASE("tapt refuses adapter models and zero-init adapters preserve its logits") {
  Vocab vocab = demo_vocab(10);
  std::vector<TokenSeq> corpus = make_mlm_corpus(vocab, 8, 0);

  Model adapted = build_encoder(tiny_config(vocab.size()), 19);
  insert_adapters(adapted, {AdapterPlacement::pfeiffer, 8, AdapterNonlinearity::gelu});
  TaptConfig cfg;
  cfg.epochs = 1;
  cfg.effective_batch = 8;
  cfg.peak_lr = 1e-3;
  CHECK_THROWS_WITH_AS(tapt(adapted, corpus, vocab, cfg), doctest::Contains("adapters"), Error);

  Model model = build_encoder(tiny_config(vocab.size()), 19);
  tapt(model, corpus, vocab, cfg);
  Tensor ids = Tensor::zeros({1, 12});
  Tensor mask = Tensor::zeros({1, 12});
  for (std::int64_t i = 0; i < 12; ++i) {
    ids[i] = corpus[0].ids[static_cast<std::size_t>(i)];
    if (i < corpus[0].attention_len) mask[i] = 1;
  }
  Tensor pairs = Tensor::of({2, 2}, {0, 3, 0, 5});
  const Tensor base_logits = forward_mlm(model, ids, mask, pairs);
  insert_adapters(model, {AdapterPlacement::houlsby, 8, AdapterNonlinearity::gelu});
  const Tensor adapted_logits = forward_mlm(model, ids, mask, pairs);
  CHECK(same_bits(base_logits, adapted_logits));
}

TEST_CASE("mlm eval loss is deterministic and demands the mlm head") {
  Vocab vocab = demo_vocab(10);
  std::vector<TokenSeq> corpus = make_mlm_corpus(vocab, 6, 1);
  Model bare = build_encoder(tiny_config(vocab.size()), 23);
  CHECK_THROWS_AS(mlm_eval_loss(bare, corpus, vocab, 0.15, 5), Error);
  attach_mlm_head(bare);
  const double a = mlm_eval_loss(bare, corpus, vocab, 0.15, 5);
  const double b = mlm_eval_loss(bare, corpus, vocab, 0.15, 5);
  CHECK(a == b);
  CHECK(a > 0);
}

TEST_CASE("inverse-frequency weighting changes the optimized loss") {
  TempDir dir("weights");
  Vocab vocab = demo_vocab(10);
  // skewed labels: class 0 dominates
  EncodedSet train = make_genre_set(vocab, 12, 3, 510, {"en"});
  for (std::size_t i = 0; i < train.genre_ids.size(); ++i)
    if (i % 4 != 3) train.genre_ids[i] = 0;
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 12;
  cfg.peak_lr = 1e-3;
  cfg.seed = 8;

  Model plain = build_encoder(tiny_config(vocab.size()), 29);
  CheckpointSeries s_plain =
      train_model(plain, head_for(Subtask::genre), train, cfg, nullptr, dir.sub("a"));
  TrainConfig wcfg = cfg;
  wcfg.class_weighting = "inverse_freq";
  Model weighted = build_encoder(tiny_config(vocab.size()), 29);
  CheckpointSeries s_weighted =
      train_model(weighted, head_for(Subtask::genre), train, wcfg, nullptr, dir.sub("b"));
  CHECK(s_plain.epochs[0].train_loss != s_weighted.epochs[0].train_loss);
}
