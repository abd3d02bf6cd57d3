#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "newsclf/corpus.hpp"

using namespace newsclf;
namespace fs = std::filesystem;

namespace {

// Fresh scratch directory per test case, removed on destruction.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("newsclf_corpus_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name, const std::string& content) const {
    auto p = (path / name).string();
    write_text_file(p, content);
    return p;
  }
};

Article make_article(std::string id, std::string language, std::string title,
                     std::vector<std::string> paragraphs) {
  return Article{std::move(id), std::move(language), std::move(title), std::move(paragraphs)};
}

}  // namespace

TEST_CASE("article text parses title and blank-line separated paragraphs") {
  std::vector<std::string> warnings;
  Article a = parse_article_text("7", "en", "Big Title\n\nPara one.\n\nPara two.\n", "mem", &warnings);
  CHECK(a.id == "7");
  CHECK(a.title == "Big Title");
  REQUIRE(a.paragraphs.size() == 2);
  CHECK(a.paragraphs[0] == "Para one.");
  CHECK(a.paragraphs[1] == "Para two.");
  CHECK(warnings.empty());
}

TEST_CASE("multi-line paragraph blocks are joined with single spaces") {
  Article a = parse_article_text("1", "en", "T\n\nline one\nline two\n\nnext\n", "mem", nullptr);
  REQUIRE(a.paragraphs.size() == 2);
  CHECK(a.paragraphs[0] == "line one line two");
  CHECK(a.paragraphs[1] == "next");
}

TEST_CASE("missing or blank title is a validation error") {
  CHECK_THROWS_AS(parse_article_text("1", "en", "", "mem", nullptr), Error);
  CHECK_THROWS_AS(parse_article_text("1", "en", "\n\nbody\n", "mem", nullptr), Error);
  CHECK_THROWS_AS(parse_article_text("1", "en", "   \nbody\n", "mem", nullptr), Error);
}

TEST_CASE("title-only article is kept with a warning") {
  std::vector<std::string> warnings;
  Article a = parse_article_text("9", "en", "Only a title\n", "mem", &warnings);
  CHECK(a.paragraphs.empty());
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("9") != std::string::npos);
}

TEST_CASE("article round trips through its file form") {
  Article a = make_article("3", "fr", "Titre", {"Un.", "Deux trois."});
  Article b = parse_article_text("3", "fr", article_to_file_text(a), "mem", nullptr);
  CHECK(b.title == a.title);
  CHECK(b.paragraphs == a.paragraphs);
}

TEST_CASE("load_articles reads a directory in numeric-aware order") {
  TempDir dir("load");
  dir.file("article12.txt", "Twelve\n\nBody.\n");
  dir.file("article3.txt", "Three\n\nBody.\n");
  dir.file("article7.txt", "Seven\n\nBody.\n");
  dir.file("notes.txt", "ignored\n");
  auto res = load_articles(dir.path.string(), "en", default_language_registry());
  REQUIRE(res.articles.size() == 3);
  CHECK(res.articles[0].id == "3");
  CHECK(res.articles[1].id == "7");
  CHECK(res.articles[2].id == "12");
  CHECK(res.articles[0].language == "en");
}

TEST_CASE("load_articles rejects unknown languages and missing directories") {
  TempDir dir("lang");
  CHECK_THROWS_AS(load_articles(dir.path.string(), "xx", default_language_registry()), Error);
  try {
    load_articles((dir.path / "nope").string(), "en", default_language_registry());
    FAIL("expected an I/O error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::io);
  }
}

TEST_CASE("id ordering is numeric for numeric ids and lexicographic otherwise") {
  CHECK(id_less("3", "12"));
  CHECK_FALSE(id_less("12", "3"));
  CHECK(id_less("12", "golf"));   // digits sort before letters
  CHECK(id_less("alpha", "beta"));
  CHECK_FALSE(id_less("7", "7"));
}

TEST_CASE("genre labels load from TSV") {
  TempDir dir("genre");
  auto path = dir.file("labels.tsv", "4\topinion\n2\treporting\n9\tsatire\n");
  Registry none = make_registry({"x"});
  LabelSet ls = load_labels(path, Subtask::genre, none, none);
  REQUIRE(ls.genre.size() == 3);
  CHECK(ls.genre.at("4") == Genre::opinion);
  CHECK(ls.genre.at("2") == Genre::reporting);
  CHECK(ls.genre.at("9") == Genre::satire);
}

TEST_CASE("a genre row with two labels is rejected") {
  TempDir dir("genre2");
  auto path = dir.file("labels.tsv", "4\topinion,satire\n");
  Registry none = make_registry({"x"});
  CHECK_THROWS_AS(load_labels(path, Subtask::genre, none, none), Error);
}

TEST_CASE("duplicate label rows are rejected") {
  TempDir dir("dup");
  auto path = dir.file("labels.tsv", "4\topinion\n4\tsatire\n");
  Registry none = make_registry({"x"});
  CHECK_THROWS_AS(load_labels(path, Subtask::genre, none, none), Error);
}

TEST_CASE("framing labels load as registry-id sets") {
  TempDir dir("framing");
  Registry frames = make_registry({"Economic", "Morality", "Political"});
  auto path = dir.file("labels.tsv", "1\tEconomic,Political\n2\tMorality\n");
  LabelSet ls = load_labels(path, Subtask::framing, frames, frames);
  CHECK(ls.frames.at("1") == std::set<int>{0, 2});
  CHECK(ls.frames.at("2") == std::set<int>{1});
}

TEST_CASE("unknown frame names are a validation error") {
  TempDir dir("framing2");
  Registry frames = make_registry({"Economic"});
  auto path = dir.file("labels.tsv", "1\tEconomic,Nonsense\n");
  CHECK_THROWS_AS(load_labels(path, Subtask::framing, frames, frames), Error);
}

TEST_CASE("persuasion labels load as binary vectors over the registry") {
  TempDir dir("pers");
  Registry tech = make_registry({"Doubt", "Slogans", "Repetition"});
  auto path = dir.file("labels.tsv", "1\t1\tDoubt,Repetition\n1\t2\t\n");
  LabelSet ls = load_labels(path, Subtask::persuasion, tech, tech);
  CHECK(ls.techniques.at({"1", 1}) == std::vector<std::uint8_t>{1, 0, 1});
  CHECK(ls.techniques.at({"1", 2}) == std::vector<std::uint8_t>{0, 0, 0});
}

TEST_CASE("persuasion paragraph index must be a positive integer") {
  TempDir dir("pers2");
  Registry tech = make_registry({"Doubt"});
  CHECK_THROWS_AS(load_labels(dir.file("a.tsv", "1\t0\tDoubt\n"), Subtask::persuasion, tech, tech),
                  Error);
  CHECK_THROWS_AS(load_labels(dir.file("b.tsv", "1\tx\tDoubt\n"), Subtask::persuasion, tech, tech),
                  Error);
}

TEST_CASE("training set construction matches labels to articles") {
  std::vector<Article> arts = {make_article("1", "en", "T1", {"P."}),
                               make_article("2", "en", "T2", {"P."})};
  LabelSet ls;
  ls.subtask = Subtask::genre;
  ls.genre = {{"1", Genre::opinion}, {"2", Genre::satire}};
  LabeledSet set = build_training_set(arts, ls, Subtask::genre, false);
  REQUIRE(set.size() == 2);
  CHECK(set.items[0].text() == "T1 P.");
  CHECK(set.items[0].paragraph == 0);
}

TEST_CASE("a label for an unknown article id is an integrity error") {
  std::vector<Article> arts = {make_article("1", "en", "T", {"P."})};
  LabelSet ls;
  ls.subtask = Subtask::genre;
  ls.genre = {{"1", Genre::opinion}, {"404", Genre::satire}};
  CHECK_THROWS_AS(build_training_set(arts, ls, Subtask::genre, false), Error);
}

TEST_CASE("empty gold framing label sets are rejected") {
  std::vector<Article> arts = {make_article("1", "en", "T", {"P."})};
  LabelSet ls;
  ls.subtask = Subtask::framing;
  ls.frames = {{"1", {}}};
  CHECK_THROWS_AS(build_training_set(arts, ls, Subtask::framing, false), Error);
}

TEST_CASE("persuasion items are paragraphs; include_unlabeled adds zero vectors") {
  std::vector<Article> arts = {make_article("1", "en", "T", {"P one.", "P two.", "P three."})};
  LabelSet ls;
  ls.subtask = Subtask::persuasion;
  ls.techniques = {{{"1", 1}, {1, 0}}, {{"1", 3}, {0, 1}}};

  LabeledSet strict = build_training_set(arts, ls, Subtask::persuasion, false);
  REQUIRE(strict.size() == 2);
  CHECK(strict.items[0].key() == "1:1");
  CHECK(strict.items[1].key() == "1:3");
  CHECK(strict.items[0].text() == "P one.");

  LabeledSet full = build_training_set(arts, ls, Subtask::persuasion, true);
  REQUIRE(full.size() == 3);
  CHECK(full.items[1].key() == "1:2");
  CHECK(full.items[1].techniques == std::vector<std::uint8_t>{0, 0});
}

TEST_CASE("a label referencing a missing paragraph is an integrity error") {
  std::vector<Article> arts = {make_article("1", "en", "T", {"Only one."})};
  LabelSet ls;
  ls.subtask = Subtask::persuasion;
  ls.techniques = {{{"1", 2}, {1}}};
  CHECK_THROWS_AS(build_training_set(arts, ls, Subtask::persuasion, false), Error);
}

TEST_CASE("merge_auxiliary tags external items and validates language and class") {
  auto base_article = std::make_shared<Article>(make_article("1", "en", "T", {"P."}));
  auto aux_article = std::make_shared<Article>(make_article("x1", "en", "Aux", {"Q."}));

  LabeledSet train;
  train.subtask = Subtask::genre;
  TrainItem t;
  t.article = base_article;
  t.genre = Genre::opinion;
  train.items.push_back(t);

  LabeledSet aux;
  aux.subtask = Subtask::genre;
  TrainItem a;
  a.article = aux_article;
  a.genre = Genre::satire;
  aux.items.push_back(a);

  LabeledSet merged = merge_auxiliary(train, aux, "en", Genre::satire);
  REQUIRE(merged.size() == 2);
  CHECK_FALSE(merged.items[0].auxiliary);
  CHECK(merged.items[1].auxiliary);

  CHECK_THROWS_AS(merge_auxiliary(train, aux, "fr", Genre::satire), Error);
  CHECK_THROWS_AS(merge_auxiliary(train, aux, "en", Genre::opinion), Error);
}

TEST_CASE("predictions write in stable id order and load back identically") {
  TempDir dir("preds");
  Registry frames = make_registry({"Economic", "Morality"});
  Registry tech = make_registry({"Doubt", "Slogans"});

  LabelSet genre;
  genre.subtask = Subtask::genre;
  genre.genre = {{"12", Genre::satire}, {"3", Genre::opinion}};
  auto gpath = (dir.path / "genre.tsv").string();
  write_predictions(genre, gpath, Subtask::genre, frames, tech);
  CHECK(read_text_file(gpath) == "3\topinion\n12\tsatire\n");
  CHECK(load_labels(gpath, Subtask::genre, frames, tech) == genre);

  LabelSet framing;
  framing.subtask = Subtask::framing;
  framing.frames = {{"1", {0, 1}}, {"2", {1}}};
  auto fpath = (dir.path / "framing.tsv").string();
  write_predictions(framing, fpath, Subtask::framing, frames, tech);
  CHECK(read_text_file(fpath) == "1\tEconomic,Morality\n2\tMorality\n");
  CHECK(load_labels(fpath, Subtask::framing, frames, tech) == framing);

  LabelSet pers;
  pers.subtask = Subtask::persuasion;
  pers.techniques = {{{"1", 2}, {0, 1}}, {{"1", 1}, {0, 0}}};
  auto ppath = (dir.path / "pers.tsv").string();
  write_predictions(pers, ppath, Subtask::persuasion, frames, tech);
  CHECK(read_text_file(ppath) == "1\t1\t\n1\t2\tSlogans\n");
  CHECK(load_labels(ppath, Subtask::persuasion, frames, tech) == pers);
}

TEST_CASE("class registries load, reject duplicates and resolve ids") {
  TempDir dir("reg");
  auto path = dir.file("reg.txt", "Economic\nMorality\tRoot\n");
  Registry r = load_registry(path);
  REQUIRE(r.size() == 2);
  CHECK(r.id_of("Economic") == 0);
  CHECK(r.parents[1] == "Root");
  CHECK_THROWS_AS(r.id_of("Absent"), Error);
  CHECK_THROWS_AS(load_registry(dir.file("dup.txt", "A\nA\n")), Error);
  CHECK_THROWS_AS(load_registry(dir.file("empty.txt", "\n")), Error);
}

TEST_CASE("bundled registries have the expected sizes") {
  std::string res = NEWSCLF_RESOURCE_DIR;
  CHECK(load_registry(res + "/frames.txt").size() == 14);
  CHECK(load_registry(res + "/techniques.txt").size() == 23);
  CHECK(load_language_registry(res + "/languages.txt").codes.size() == 9);
}
