#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "newsclf/common.hpp"
#include "newsclf/inference.hpp"

using namespace newsclf;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("newsclf_inference_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string sub(const std::string& name) const { return (path / name).string(); }
};

Vocab demo_vocab(int words) {
  std::string text;
  for (int i = 0; i < words; ++i) text += "w" + std::to_string(i) + " ";
  return build_vocab({text}, words + 5);
}

ModelConfig tiny_config(std::int64_t vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_len = 12;
  c.dropout = 0.0;
  return c;
}

std::shared_ptr<const Article> art(const std::string& id, const std::string& lang,
                                   std::vector<std::string> paragraphs) {
  Article a;
  a.id = id;
  a.language = lang;
  a.paragraphs = std::move(paragraphs);
  return std::make_shared<const Article>(std::move(a));
}

TrainItem genre_item(std::shared_ptr<const Article> a, Genre g) {
  TrainItem item;
  item.article = std::move(a);
  item.genre = g;
  return item;
}

std::string keyword_text(int cls) {
  const std::string word = "w" + std::to_string(cls);
  std::string text = word;
  for (int r = 0; r < 5; ++r) text += " " + word;
  return text + ".";
}

// The keyword w<k> labels class (k + offset) % 3; the task is exactly
// separable, so a converged model maps clean keyword texts accordingly.
Model train_offset(const Vocab& vocab, int offset) {
  LabeledSet set;
  set.subtask = Subtask::genre;
  for (int i = 0; i < 24; ++i) {
    const int cls = i % 3;
    auto a = art("t" + std::to_string(offset) + "_" + std::to_string(i), "en",
                 {keyword_text(cls)});
    set.items.push_back(genre_item(a, static_cast<Genre>((cls + offset) % 3)));
  }
  EncodedSet enc = encode_set(set, vocab, {}, 12, 3);
  Model model = build_encoder(tiny_config(vocab.size()), 11);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 8;
  cfg.peak_lr = 2e-2;
  cfg.warmup_ratio = 0.1;
  cfg.seed = 3;
  TempDir dir("fixture" + std::to_string(offset));
  CheckpointSeries series =
      train_model(model, HeadConfig{Subtask::genre, 3}, enc, cfg, nullptr, dir.sub("ck"));
  REQUIRE(series.epochs.back().train_loss < 0.1);
  PredictionSet check = predict(model, enc, 0.5);
  for (std::size_t i = 0; i < enc.size(); ++i) {
    REQUIRE(static_cast<int>(check.items[i].genre) == enc.genre_ids[i]);
  }
  return model;
}

struct Fixture {
  Vocab vocab;
  Model straight;  // w<k> -> class k
  Model shifted;   // w<k> -> class (k + 1) % 3
};

Fixture& fixture() {
  static Fixture fx = [] {
    Fixture f{demo_vocab(10), Model{}, Model{}};
    f.straight = train_offset(f.vocab, 0);
    f.shifted = train_offset(f.vocab, 1);
    return f;
  }();
  return fx;
}

Model untrained_multilabel(const Vocab& vocab, int n_classes, std::uint64_t seed) {
  Model model = build_encoder(tiny_config(vocab.size()), seed);
  attach_head(model, HeadConfig{Subtask::persuasion, n_classes});
  model.vocab_hash = vocab.hash();
  return model;
}

EncodedSet encode_persuasion(const Vocab& vocab, int n_items, int n_classes,
                             std::uint64_t seed) {
  LabeledSet set;
  set.subtask = Subtask::persuasion;
  Rng rng(seed);
  for (int i = 0; i < n_items; ++i) {
    std::vector<std::string> words;
    for (int w = 0; w < 6; ++w) {
      words.push_back("w" + std::to_string(rng.next_below(10)));
    }
    auto a = art("p" + std::to_string(i), "en", {join(words, " ") + "."});
    TrainItem item;
    item.article = a;
    item.paragraph = 1;
    item.techniques.assign(static_cast<std::size_t>(n_classes), 0);
    set.items.push_back(std::move(item));
  }
  return encode_set(set, vocab, {}, 12, n_classes);
}

Prediction keyed(const std::string& id, int paragraph) {
  Prediction p;
  p.article_id = id;
  p.paragraph = paragraph;
  return p;
}

PredictionSet genre_members_row(const std::vector<Genre>& labels, std::size_t member) {
  PredictionSet set;
  set.subtask = Subtask::genre;
  set.n_classes = 3;
  Prediction p = keyed("a1", 0);
  p.genre = labels[member];
  p.scores = {0.0, 0.0, 0.0};
  set.items.push_back(std::move(p));
  return set;
}

std::vector<PredictionSet> genre_members(const std::vector<Genre>& labels) {
  std::vector<PredictionSet> members;
  for (std::size_t m = 0; m < labels.size(); ++m) {
    members.push_back(genre_members_row(labels, m));
  }
  return members;
}

std::vector<PredictionSet> multilabel_members(const std::vector<std::vector<std::uint8_t>>& rows) {
  std::vector<PredictionSet> members;
  for (const std::vector<std::uint8_t>& row : rows) {
    PredictionSet set;
    set.subtask = Subtask::persuasion;
    set.n_classes = static_cast<int>(row.size());
    Prediction p = keyed("a1", 1);
    p.labels = row;
    p.scores.assign(row.size(), 0.0);
    set.items.push_back(std::move(p));
    members.push_back(std::move(set));
  }
  return members;
}

EnsembleSpec spec_with(const std::vector<double>& validations) {
  EnsembleSpec spec;
  for (std::size_t i = 0; i < validations.size(); ++i) {
    spec.members.push_back({"m" + std::to_string(i), validations[i]});
  }
  return spec;
}

EnsembleSpec spec_without_scores(std::size_t n) {
  EnsembleSpec spec;
  for (std::size_t i = 0; i < n; ++i) spec.members.push_back({"m" + std::to_string(i)});
  return spec;
}

}  // namespace

TEST_CASE("thresholding and argmax follow the stated rules") {
  CHECK(threshold_labels({0.55, 0.35, 0.41}, 0.4) == std::vector<std::uint8_t>{1, 0, 1});
  CHECK(threshold_labels({0.39, 0.1, 0.2}, 0.4) == std::vector<std::uint8_t>{0, 0, 0});
  CHECK(threshold_labels({0.4}, 0.4) == std::vector<std::uint8_t>{1});  // inclusive
  CHECK(argmax_label({2.0, 1.0, -1.0}) == 0);
  CHECK(static_cast<Genre>(argmax_label({2.0, 1.0, -1.0})) == Genre::opinion);
  CHECK(argmax_label({1.0, 5.0, 5.0}) == 1);  // first maximum wins
  CHECK_THROWS_AS(argmax_label({}), Error);
}

TEST_CASE("predict labels a separable genre task and keeps item keys") {
  Fixture& fx = fixture();
  LabeledSet set;
  set.subtask = Subtask::genre;
  set.items = {genre_item(art("g2", "en", {keyword_text(2)}), Genre::opinion),
               genre_item(art("g0", "en", {keyword_text(0)}), Genre::opinion),
               genre_item(art("g1", "en", {keyword_text(1)}), Genre::opinion)};
  EncodedSet enc = encode_set(set, fx.vocab, {}, 12, 3);
  CHECK(enc.article_ids == std::vector<std::string>{"g2", "g0", "g1"});
  CHECK(enc.paragraphs == std::vector<int>{0, 0, 0});

  PredictionSet preds = predict(fx.straight, enc, 0.5);
  CHECK(preds.subtask == Subtask::genre);
  CHECK(preds.n_classes == 3);
  REQUIRE(preds.items.size() == 3);
  CHECK(preds.items[0].genre == Genre::satire);     // w2 -> class 2
  CHECK(preds.items[1].genre == Genre::opinion);    // w0 -> class 0
  CHECK(preds.items[2].genre == Genre::reporting);  // w1 -> class 1
  for (const Prediction& p : preds.items) {
    double sum = 0;
    for (double s : p.scores) {
      CHECK(s >= 0.0);
      CHECK(s <= 1.0);
      sum += s;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.labels.empty());
    CHECK(p.route.empty());
  }
  CHECK(preds.items[0].article_id == "g2");

  PredictionSet shifted = predict(fx.shifted, enc, 0.5);
  CHECK(shifted.items[1].genre == Genre::reporting);  // w0 -> class 1 under the shift
}

TEST_CASE("multilabel predictions are thresholded sigmoids over the logits") {
  Vocab vocab = demo_vocab(10);
  Model model = untrained_multilabel(vocab, 4, 77);
  EncodedSet enc = encode_persuasion(vocab, 9, 4, 5);

  PredictionSet preds = predict(model, enc, 0.5);
  REQUIRE(preds.items.size() == 9);
  for (const Prediction& p : preds.items) {
    REQUIRE(p.scores.size() == 4);
    REQUIRE(p.labels.size() == 4);
    for (double s : p.scores) {
      CHECK(s > 0.0);
      CHECK(s < 1.0);
    }
    CHECK(p.labels == threshold_labels(p.scores, 0.5));
    CHECK(p.paragraph == 1);
  }

  // An extreme threshold produces all-empty predictions, which is legal.
  PredictionSet none = predict(model, enc, 1.0);
  for (const Prediction& p : none.items) {
    CHECK(p.labels == std::vector<std::uint8_t>{0, 0, 0, 0});
  }
}

TEST_CASE("raising the threshold never adds a class") {
  Vocab vocab = demo_vocab(10);
  Model model = untrained_multilabel(vocab, 5, 123);
  EncodedSet enc = encode_persuasion(vocab, 20, 5, 9);

  const std::vector<double> thresholds = {0.0, 0.3, 0.45, 0.5, 0.55, 0.8, 1.0};
  std::vector<PredictionSet> runs;
  for (double t : thresholds) runs.push_back(predict(model, enc, t));
  for (std::size_t k = 1; k < runs.size(); ++k) {
    for (std::size_t i = 0; i < enc.size(); ++i) {
      for (std::size_t c = 0; c < 5; ++c) {
        CHECK(runs[k].items[i].labels[c] <= runs[k - 1].items[i].labels[c]);
        CHECK(runs[k].items[i].scores[c] == runs[0].items[i].scores[c]);
      }
    }
  }
}

TEST_CASE("predict rejects incompatible inputs") {
  Fixture& fx = fixture();
  Vocab other = demo_vocab(9);
  LabeledSet set;
  set.subtask = Subtask::genre;
  set.items = {genre_item(art("x", "en", {keyword_text(0)}), Genre::opinion)};

  EncodedSet wrong_vocab = encode_set(set, other, {}, 12, 3);
  try {
    predict(fx.straight, wrong_vocab, 0.5);
    FAIL("expected a compatibility error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("compatibility error") != std::string::npos);
  }

  EncodedSet ok = encode_set(set, fx.vocab, {}, 12, 3);
  CHECK_THROWS_AS(predict(fx.straight, ok, 1.5), Error);
  CHECK_THROWS_AS(predict(fx.straight, ok, -0.1), Error);

  Model headless = build_encoder(tiny_config(fx.vocab.size()), 4);
  headless.vocab_hash = fx.vocab.hash();
  CHECK_THROWS_AS(predict(headless, ok, 0.5), Error);

  EncodedSet keyless = ok;
  keyless.article_ids.clear();
  CHECK_THROWS_AS(predict(fx.straight, keyless, 0.5), Error);
}

TEST_CASE("ensemble_vote follows plurality and the best-validation tie rule") {
  using G = Genre;
  // Plurality without a tie ignores validation scores entirely.
  PredictionSet plurality = ensemble_vote(
      genre_members({G::opinion, G::opinion, G::satire, G::reporting}),
      spec_without_scores(4), Subtask::genre);
  CHECK(plurality.items[0].genre == G::opinion);
  CHECK(plurality.items[0].scores == std::vector<double>{0.5, 0.25, 0.25});

  // A 2-2 tie goes to the label of the best-validation member.
  PredictionSet tied = ensemble_vote(
      genre_members({G::opinion, G::opinion, G::satire, G::satire}),
      spec_with({0.3, 0.2, 0.9, 0.1}), Subtask::genre);
  CHECK(tied.items[0].genre == G::satire);

  PredictionSet flipped = ensemble_vote(
      genre_members({G::opinion, G::opinion, G::satire, G::satire}),
      spec_with({0.95, 0.2, 0.9, 0.1}), Subtask::genre);
  CHECK(flipped.items[0].genre == G::opinion);

  // Two members always tie when they disagree.
  PredictionSet pair = ensemble_vote(genre_members({G::opinion, G::satire}),
                                     spec_with({0.1, 0.9}), Subtask::genre);
  CHECK(pair.items[0].genre == G::satire);

  // The best member may not be among the leaders; the next one decides.
  PredictionSet outside = ensemble_vote(
      genre_members({G::opinion, G::opinion, G::satire, G::satire, G::reporting}),
      spec_with({0.1, 0.2, 0.3, 0.05, 0.99}), Subtask::genre);
  CHECK(outside.items[0].genre == G::satire);  // 0.99 voted reporting (not tied), 0.3 decides
}

TEST_CASE("multilabel votes need a strict majority and ties use the best member") {
  PredictionSet voted = ensemble_vote(
      multilabel_members({{1, 0, 1}, {1, 1, 0}, {0, 1, 1}}), spec_without_scores(3),
      Subtask::persuasion);
  CHECK(voted.items[0].labels == std::vector<std::uint8_t>{1, 1, 1});
  for (double s : voted.items[0].scores) CHECK(s == 2.0 / 3.0);

  // Four members, 2-2 on the only class: the best member's bit decides.
  PredictionSet on = ensemble_vote(multilabel_members({{1}, {1}, {0}, {0}}),
                                   spec_with({0.9, 0.1, 0.2, 0.3}), Subtask::persuasion);
  CHECK(on.items[0].labels == std::vector<std::uint8_t>{1});
  PredictionSet off = ensemble_vote(multilabel_members({{1}, {1}, {0}, {0}}),
                                    spec_with({0.1, 0.2, 0.9, 0.3}), Subtask::persuasion);
  CHECK(off.items[0].labels == std::vector<std::uint8_t>{0});

  // 1-of-4 is simply off; no tie policy involved.
  PredictionSet minority = ensemble_vote(multilabel_members({{1}, {0}, {0}, {0}}),
                                         spec_with({0.9, 0.1, 0.2, 0.3}), Subtask::persuasion);
  CHECK(minority.items[0].labels == std::vector<std::uint8_t>{0});
}

TEST_CASE("identical members reduce to any single member") {
  Rng rng(31);
  for (int round = 0; round < 20; ++round) {
    PredictionSet member;
    member.subtask = Subtask::persuasion;
    member.n_classes = 4;
    for (int i = 0; i < 3; ++i) {
      Prediction p = keyed("a" + std::to_string(i), 1);
      for (int c = 0; c < 4; ++c) {
        p.labels.push_back(static_cast<std::uint8_t>(rng.next_below(2)));
        p.scores.push_back(rng.next_double());
      }
      member.items.push_back(std::move(p));
    }
    PredictionSet voted = ensemble_vote({member, member, member}, spec_without_scores(3),
                                        Subtask::persuasion);
    for (std::size_t i = 0; i < member.items.size(); ++i) {
      CHECK(voted.items[i].labels == member.items[i].labels);
      for (std::size_t c = 0; c < 4; ++c) {
        CHECK(voted.items[i].scores[c] == (member.items[i].labels[c] != 0 ? 1.0 : 0.0));
      }
    }
  }
}

TEST_CASE("member order only matters through the validation ranking") {
  Rng rng(57);
  for (int round = 0; round < 40; ++round) {
    const std::size_t m = 2 + rng.next_below(4);
    std::vector<Genre> labels;
    std::vector<double> validations;
    for (std::size_t k = 0; k < m; ++k) {
      labels.push_back(static_cast<Genre>(rng.next_below(3)));
      validations.push_back(static_cast<double>(k + 1) / 10.0);  // distinct
    }
    PredictionSet base =
        ensemble_vote(genre_members(labels), spec_with(validations), Subtask::genre);

    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    std::vector<Genre> labels2;
    std::vector<double> validations2;
    for (std::size_t k : perm) {
      labels2.push_back(labels[k]);
      validations2.push_back(validations[k]);
    }
    PredictionSet shuffled =
        ensemble_vote(genre_members(labels2), spec_with(validations2), Subtask::genre);
    CHECK(shuffled.items[0].genre == base.items[0].genre);
    CHECK(shuffled.items[0].scores == base.items[0].scores);
  }
}

TEST_CASE("a tie without validation scores is an error") {
  CHECK_THROWS_WITH_AS(
      ensemble_vote(genre_members({Genre::opinion, Genre::satire}), spec_without_scores(2),
                    Subtask::genre),
      "ensemble error: tie-break requires validation scores for every member", Error);
  // Without a tie the scores are never consulted.
  PredictionSet agreed = ensemble_vote(genre_members({Genre::satire, Genre::satire}),
                                       spec_without_scores(2), Subtask::genre);
  CHECK(agreed.items[0].genre == Genre::satire);

  CHECK_THROWS_AS(ensemble_vote(multilabel_members({{1}, {0}}), spec_without_scores(2),
                                Subtask::persuasion),
                  Error);
  PredictionSet same = ensemble_vote(multilabel_members({{1}, {1}}), spec_without_scores(2),
                                     Subtask::persuasion);
  CHECK(same.items[0].labels == std::vector<std::uint8_t>{1});
}

TEST_CASE("coverage and arity mismatches are contract errors") {
  CHECK_THROWS_AS(ensemble_vote(genre_members({Genre::opinion}), spec_without_scores(1),
                                Subtask::genre),
                  Error);  // fewer than two members

  auto members = genre_members({Genre::opinion, Genre::opinion, Genre::opinion});
  CHECK_THROWS_AS(ensemble_vote(members, spec_without_scores(2), Subtask::genre), Error);

  auto mismatched = members;
  mismatched[2].items[0].article_id = "other";
  CHECK_THROWS_AS(ensemble_vote(mismatched, spec_without_scores(3), Subtask::genre), Error);

  auto shorter = members;
  shorter[1].items.clear();
  CHECK_THROWS_AS(ensemble_vote(shorter, spec_without_scores(3), Subtask::genre), Error);

  CHECK_THROWS_AS(ensemble_vote(members, spec_without_scores(3), Subtask::persuasion), Error);
}

TEST_CASE("five hundred random votes match a brute-force recount") {
  Rng rng(2026);
  for (int round = 0; round < 500; ++round) {
    const std::size_t m = 2 + rng.next_below(5);
    std::vector<double> validations(m);
    std::iota(validations.begin(), validations.end(), 1.0);
    rng.shuffle(validations);  // distinct, so the ranking is unambiguous
    EnsembleSpec spec = spec_with(validations);
    const std::size_t best =
        static_cast<std::size_t>(std::max_element(validations.begin(), validations.end()) -
                                 validations.begin());

    if (round % 2 == 0) {
      std::vector<Genre> labels;
      for (std::size_t k = 0; k < m; ++k) labels.push_back(static_cast<Genre>(rng.next_below(3)));
      PredictionSet voted = ensemble_vote(genre_members(labels), spec, Subtask::genre);

      int counts[3] = {0, 0, 0};
      for (Genre g : labels) counts[static_cast<int>(g)] += 1;
      const int top = std::max({counts[0], counts[1], counts[2]});
      std::vector<int> leaders;
      for (int c = 0; c < 3; ++c) {
        if (counts[c] == top) leaders.push_back(c);
      }
      int expected;
      if (leaders.size() == 1) {
        expected = leaders[0];
      } else {
        double best_val = -1;
        expected = -1;
        for (std::size_t k = 0; k < m; ++k) {
          const int label = static_cast<int>(labels[k]);
          if (std::find(leaders.begin(), leaders.end(), label) == leaders.end()) continue;
          if (validations[k] > best_val) {
            best_val = validations[k];
            expected = label;
          }
        }
      }
      CHECK(static_cast<int>(voted.items[0].genre) == expected);
      for (int c = 0; c < 3; ++c) {
        CHECK(voted.items[0].scores[static_cast<std::size_t>(c)] ==
              static_cast<double>(counts[c]) / static_cast<double>(m));
      }
    } else {
      const int width = 1 + static_cast<int>(rng.next_below(5));
      std::vector<std::vector<std::uint8_t>> rows(m);
      for (auto& row : rows) {
        for (int c = 0; c < width; ++c) {
          row.push_back(static_cast<std::uint8_t>(rng.next_below(2)));
        }
      }
      PredictionSet voted = ensemble_vote(multilabel_members(rows), spec, Subtask::persuasion);
      for (int c = 0; c < width; ++c) {
        std::size_t v = 0;
        for (const auto& row : rows) {
          if (row[static_cast<std::size_t>(c)] != 0) ++v;
        }
        std::uint8_t expected = 2 * v > m ? 1 : 0;
        if (2 * v == m) expected = rows[best][static_cast<std::size_t>(c)];
        CHECK(voted.items[0].labels[static_cast<std::size_t>(c)] == expected);
        CHECK(voted.items[0].scores[static_cast<std::size_t>(c)] ==
              static_cast<double>(v) / static_cast<double>(m));
      }
    }
  }
}

TEST_CASE("routing tables parse, validate and round-trip") {
  const std::string text = R"({"de": {"plan":"direct","model":"multi"},
                               "es": {"plan":"translate_test","target":"en","model":"mono"}})";
  RoutingTable table = parse_routing_table(text);
  REQUIRE(table.plans.size() == 2);
  CHECK(table.plans.at("de").kind == RouteKind::direct);
  CHECK(table.plans.at("de").model == "multi");
  CHECK(table.plans.at("de").target.empty());
  CHECK(table.plans.at("es").kind == RouteKind::translate_test);
  CHECK(table.plans.at("es").target == "en");
  CHECK(table.plans.at("es").model == "mono");

  RoutingTable reparsed = parse_routing_table(routing_table_json(table));
  CHECK(reparsed.plans == table.plans);

  CHECK_THROWS_AS(parse_routing_table("not json at all"), Error);
  CHECK_THROWS_AS(parse_routing_table(R"({"de": {"plan":"osmosis","model":"m"}})"), Error);
  CHECK_THROWS_AS(parse_routing_table(R"({"de": {"plan":"direct"}})"), Error);
  CHECK_THROWS_AS(parse_routing_table(R"({"de": {"plan":"translate_test","model":"m"}})"),
                  Error);
  CHECK_THROWS_AS(
      parse_routing_table(R"({"de": {"plan":"direct","model":"m","target":"en"}})"), Error);

  TempDir dir("routing");
  write_text_file(dir.sub("routes.json"), routing_table_json(table));
  CHECK(load_routing_table(dir.sub("routes.json")).plans == table.plans);
  CHECK_THROWS_AS(load_routing_table(dir.sub("absent.json")), Error);
}

TEST_CASE("routes run the named ensembles and record provenance") {
  Fixture& fx = fixture();
  std::map<std::string, EnsembleRuntime> ensembles;
  ensembles["mono"].spec.members.push_back({"a", 0.9});
  ensembles["mono"].models.push_back(fx.straight);
  ensembles["multi"].spec.members.push_back({"b", 0.8});
  ensembles["multi"].models.push_back(fx.shifted);

  RoutingTable routing = parse_routing_table(
      R"({"en": {"plan":"direct","model":"mono"},
          "de": {"plan":"direct","model":"multi"},
          "es": {"plan":"translate_test","target":"en","model":"mono"}})");

  LabeledSet set;
  set.subtask = Subtask::genre;
  set.items = {genre_item(art("n1", "en", {keyword_text(0)}), Genre::opinion),
               genre_item(art("n2", "de", {keyword_text(0)}), Genre::opinion),
               genre_item(art("n3", "es", {keyword_text(1)}), Genre::opinion),
               genre_item(art("n4", "en", {keyword_text(2)}), Genre::opinion)};

  RouteOptions options;
  options.max_len = 12;
  RouteResult result =
      route_and_predict(set, routing, identity_backend(), ensembles, fx.vocab, options);

  CHECK(result.failures.empty());
  REQUIRE(result.predictions.items.size() == 4);
  const auto& items = result.predictions.items;
  CHECK(items[0].article_id == "n1");
  CHECK(items[0].genre == Genre::opinion);  // straight: w0 -> 0
  CHECK(items[0].route == "direct(mono)");
  CHECK(items[1].article_id == "n2");
  CHECK(items[1].genre == Genre::reporting);  // shifted: w0 -> 1
  CHECK(items[1].route == "direct(multi)");
  CHECK(items[2].article_id == "n3");
  CHECK(items[2].genre == Genre::reporting);  // straight: w1 -> 1
  CHECK(items[2].route == "translate_test(en, mono)");
  CHECK(items[3].genre == Genre::satire);  // straight: w2 -> 2
}

TEST_CASE("identity translate_test equals the direct route bit-exactly") {
  Fixture& fx = fixture();
  std::map<std::string, EnsembleRuntime> ensembles;
  ensembles["mono"].spec.members.push_back({"a", 0.9});
  ensembles["mono"].models.push_back(fx.straight);

  LabeledSet set;
  set.subtask = Subtask::genre;
  set.items = {genre_item(art("s1", "es", {keyword_text(0)}), Genre::opinion),
               genre_item(art("s2", "es", {keyword_text(2)}), Genre::opinion)};

  RouteOptions options;
  options.max_len = 12;
  RouteResult direct = route_and_predict(
      set, parse_routing_table(R"({"es": {"plan":"direct","model":"mono"}})"),
      identity_backend(), ensembles, fx.vocab, options);
  RouteResult translated = route_and_predict(
      set,
      parse_routing_table(R"({"es": {"plan":"translate_test","target":"en","model":"mono"}})"),
      identity_backend(), ensembles, fx.vocab, options);

  REQUIRE(direct.predictions.items.size() == translated.predictions.items.size());
  for (std::size_t i = 0; i < direct.predictions.items.size(); ++i) {
    const Prediction& d = direct.predictions.items[i];
    const Prediction& t = translated.predictions.items[i];
    CHECK(d.genre == t.genre);
    REQUIRE(d.scores.size() == t.scores.size());
    for (std::size_t c = 0; c < d.scores.size(); ++c) CHECK(d.scores[c] == t.scores[c]);
    CHECK(d.route == "direct(mono)");
    CHECK(t.route == "translate_test(en, mono)");
  }
}

TEST_CASE("unrouted languages and unknown models fail loudly") {
  Fixture& fx = fixture();
  std::map<std::string, EnsembleRuntime> ensembles;
  ensembles["mono"].spec.members.push_back({"a", 0.9});
  ensembles["mono"].models.push_back(fx.straight);

  LabeledSet set;
  set.subtask = Subtask::genre;
  set.items = {genre_item(art("k1", "ka", {keyword_text(0)}), Genre::opinion)};

  RouteOptions options;
  options.max_len = 12;
  CHECK_THROWS_WITH_AS(
      route_and_predict(set, parse_routing_table(R"({"en": {"plan":"direct","model":"mono"}})"),
                        identity_backend(), ensembles, fx.vocab, options),
      "routing error: no plan for language 'ka'", Error);
  CHECK_THROWS_WITH_AS(
      route_and_predict(set, parse_routing_table(R"({"ka": {"plan":"direct","model":"giga"}})"),
                        identity_backend(), ensembles, fx.vocab, options),
      "routing error: unknown model 'giga' for language 'ka'", Error);
}

TEST_CASE("translation failures drop items while the run continues") {
  Fixture& fx = fixture();
  std::map<std::string, EnsembleRuntime> ensembles;
  ensembles["mono"].spec.members.push_back({"a", 0.9});
  ensembles["mono"].models.push_back(fx.straight);
  ensembles["multi"].spec.members.push_back({"b", 0.8});
  ensembles["multi"].models.push_back(fx.shifted);

  TranslationBackend dead = remote_backend("http://127.0.0.1:9");
  dead.retries = 0;
  dead.retry_base_ms = 1;

  RoutingTable routing = parse_routing_table(
      R"({"de": {"plan":"direct","model":"multi"},
          "es": {"plan":"translate_test","target":"en","model":"mono"}})");

  LabeledSet set;
  set.subtask = Subtask::genre;
  set.items = {genre_item(art("e1", "es", {keyword_text(0)}), Genre::opinion),
               genre_item(art("d1", "de", {keyword_text(1)}), Genre::opinion),
               genre_item(art("e2", "es", {keyword_text(2)}), Genre::opinion)};

  RouteOptions options;
  options.max_len = 12;
  RouteResult result = route_and_predict(set, routing, dead, ensembles, fx.vocab, options);

  REQUIRE(result.predictions.items.size() == 1);
  CHECK(result.predictions.items[0].article_id == "d1");
  CHECK(result.predictions.items[0].genre == Genre::satire);  // shifted: w1 -> 2
  REQUIRE(result.failures.size() == 2);
  CHECK(result.failures[0].article_id == "e1");
  CHECK(result.failures[0].language == "es");
  CHECK(result.failures[0].message.find("after 1 attempts") != std::string::npos);
  CHECK(result.failures[1].article_id == "e2");
}

TEST_CASE("multi-member ensembles vote inside routing") {
  Fixture& fx = fixture();
  std::map<std::string, EnsembleRuntime> ensembles;
  EnsembleRuntime& trio = ensembles["trio"];
  trio.spec.members = {{"a1", 0.5}, {"a2", 0.4}, {"b1", 0.3}};
  trio.models = {fx.straight, fx.straight, fx.shifted};
  EnsembleRuntime& duo = ensembles["duo"];
  duo.spec.members = {{"a", 0.1}, {"b", 0.9}};
  duo.models = {fx.straight, fx.shifted};

  LabeledSet set;
  set.subtask = Subtask::genre;
  set.items = {genre_item(art("t1", "en", {keyword_text(0)}), Genre::opinion),
               genre_item(art("t2", "fr", {keyword_text(0)}), Genre::opinion)};

  RouteOptions options;
  options.max_len = 12;
  RouteResult result = route_and_predict(
      set,
      parse_routing_table(R"({"en": {"plan":"direct","model":"trio"},
                              "fr": {"plan":"direct","model":"duo"}})"),
      identity_backend(), ensembles, fx.vocab, options);

  REQUIRE(result.predictions.items.size() == 2);
  // trio: straight+straight say 0, shifted says 1 -> majority 0.
  CHECK(result.predictions.items[0].genre == Genre::opinion);
  CHECK(result.predictions.items[0].scores == std::vector<double>{2.0 / 3.0, 1.0 / 3.0, 0.0});
  // duo: 1-1 tie, best validation is the shifted member -> 1.
  CHECK(result.predictions.items[1].genre == Genre::reporting);
}

TEST_CASE("predictions convert to the label-file representation") {
  PredictionSet genre;
  genre.subtask = Subtask::genre;
  genre.n_classes = 3;
  genre.items = {keyed("a1", 0), keyed("a2", 0)};
  genre.items[0].genre = Genre::satire;
  genre.items[1].genre = Genre::reporting;
  LabelSet gl = predictions_to_labels(genre);
  CHECK(gl.genre == std::map<std::string, Genre>{{"a1", Genre::satire},
                                                 {"a2", Genre::reporting}});

  PredictionSet framing;
  framing.subtask = Subtask::framing;
  framing.n_classes = 4;
  framing.items = {keyed("a1", 0)};
  framing.items[0].labels = {1, 0, 1, 0};
  LabelSet fl = predictions_to_labels(framing);
  CHECK(fl.frames.at("a1") == std::set<int>{0, 2});

  PredictionSet persuasion;
  persuasion.subtask = Subtask::persuasion;
  persuasion.n_classes = 2;
  persuasion.items = {keyed("a1", 1), keyed("a1", 2)};
  persuasion.items[0].labels = {1, 0};
  persuasion.items[1].labels = {0, 0};
  LabelSet pl = predictions_to_labels(persuasion);
  CHECK(pl.techniques.at({"a1", 1}) == std::vector<std::uint8_t>{1, 0});
  CHECK(pl.techniques.at({"a1", 2}) == std::vector<std::uint8_t>{0, 0});

  persuasion.items[1].paragraph = 1;  // now a duplicate key
  CHECK_THROWS_AS(predictions_to_labels(persuasion), Error);
}
