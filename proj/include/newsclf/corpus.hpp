#pragma once

// Data model and file I/O for articles, labels, predictions and
// training-set construction.
//
// On-disk formats:
//   article<ID>.txt : line 1 = title, one blank line, then paragraphs
//                     separated by exactly one blank line (UTF-8).
//   genre labels    : TSV  id<TAB>genre          genre in {opinion,reporting,satire}
//   frame labels    : TSV  id<TAB>f1,f2,...      comma-joined, empty field = none
//   technique labels: TSV  id<TAB>paragraph<TAB>t1,t2,...   paragraph is 1-based,
//                     empty third field = all-zero vector
//   registries      : one class name per line, optional <TAB>parent column
//                     (accepted, stored, consumed by nothing)

#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "newsclf/common.hpp"

namespace newsclf {

enum class Subtask { genre, framing, persuasion };

std::string subtask_name(Subtask t);
Subtask subtask_from_name(const std::string& name);

enum class Genre { opinion = 0, reporting = 1, satire = 2 };

constexpr int kGenreClassCount = 3;
std::string genre_name(Genre g);
Genre genre_from_name(const std::string& name);

struct Article {
  std::string id;
  std::string language;
  std::string title;
  std::vector<std::string> paragraphs;
};

// Class-name registry for the framing / persuasion ontologies.
struct Registry {
  std::vector<std::string> names;
  std::vector<std::string> parents;  // parallel to names; empty string when absent
  std::map<std::string, int> index;

  int size() const { return static_cast<int>(names.size()); }
  bool contains(const std::string& name) const { return index.count(name) != 0; }
  int id_of(const std::string& name) const;
};

Registry load_registry(const std::string& path);
Registry make_registry(const std::vector<std::string>& names);

struct LanguageRegistry {
  std::vector<std::string> codes;
  bool contains(const std::string& code) const;
};

LanguageRegistry load_language_registry(const std::string& path);
LanguageRegistry default_language_registry();

// Parsed labels (or predictions; both use the same formats), keyed by
// article id, plus 1-based paragraph index for the persuasion subtask.
struct LabelSet {
  Subtask subtask = Subtask::genre;
  std::map<std::string, Genre> genre;
  std::map<std::string, std::set<int>> frames;                            // registry ids
  std::map<std::pair<std::string, int>, std::vector<std::uint8_t>> techniques;  // binary vectors

  bool operator==(const LabelSet& other) const = default;
  std::size_t size() const;
};

// One training item: whole article for genre/framing, single paragraph
// for persuasion (paragraph index is 1-based, 0 means whole article).
struct TrainItem {
  std::shared_ptr<const Article> article;
  int paragraph = 0;
  Genre genre = Genre::opinion;
  std::set<int> frames;
  std::vector<std::uint8_t> techniques;
  bool auxiliary = false;  // came from an external pool, see merge_auxiliary

  std::string key() const;
  const std::string& language() const { return article->language; }
  std::string text() const;  // title + body (or the single paragraph)
};

struct LabeledSet {
  Subtask subtask = Subtask::genre;
  std::vector<TrainItem> items;

  std::size_t size() const { return items.size(); }
};

struct ArticleLoadResult {
  std::vector<Article> articles;
  std::vector<std::string> warnings;
};

// Reads every article<ID>.txt under dir_path, assigning the given
// language. Files are visited in numeric-aware id order.
ArticleLoadResult load_articles(const std::string& dir_path, const std::string& language,
                                const LanguageRegistry& languages);

LabelSet load_labels(const std::string& path, Subtask subtask, const Registry& frames,
                     const Registry& techniques);

// Builds the training set. For persuasion, include_unlabeled controls
// whether paragraphs with no label row are kept with an all-zero vector
// or dropped; other subtasks ignore the flag.
LabeledSet build_training_set(const std::vector<Article>& articles, const LabelSet& labels,
                              Subtask subtask, bool include_unlabeled);

// Union of train and an external pool carrying one language and one genre
// class. Auxiliary items keep a provenance flag so oversampling can draw
// from the external pool only.
LabeledSet merge_auxiliary(const LabeledSet& train, const LabeledSet& aux,
                           const std::string& language, Genre cls);

void write_predictions(const LabelSet& preds, const std::string& path, Subtask subtask,
                       const Registry& frames, const Registry& techniques);

// Serialized article text, used by the preprocess path when writing
// cleaned articles back out.
std::string article_to_file_text(const Article& a);
Article parse_article_text(const std::string& id, const std::string& language,
                           const std::string& file_text, const std::string& origin,
                           std::vector<std::string>* warnings);

// Numeric-aware id ordering used by every writer so output is stable.
bool id_less(const std::string& a, const std::string& b);

}  // namespace newsclf
