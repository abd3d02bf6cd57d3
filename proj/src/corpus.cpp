#include "newsclf/corpus.hpp"

#include <algorithm>
#include <filesystem>

namespace fs = std::filesystem;

namespace newsclf {

std::string subtask_name(Subtask t) {
  switch (t) {
    case Subtask::genre: return "genre";
    case Subtask::framing: return "framing";
    case Subtask::persuasion: return "persuasion";
  }
  return "?";
}

Subtask subtask_from_name(const std::string& name) {
  if (name == "genre") return Subtask::genre;
  if (name == "framing") return Subtask::framing;
  if (name == "persuasion") return Subtask::persuasion;
  fail_validation("unknown subtask: " + name);
}

std::string genre_name(Genre g) {
  switch (g) {
    case Genre::opinion: return "opinion";
    case Genre::reporting: return "reporting";
    case Genre::satire: return "satire";
  }
  return "?";
}

Genre genre_from_name(const std::string& name) {
  if (name == "opinion") return Genre::opinion;
  if (name == "reporting") return Genre::reporting;
  if (name == "satire") return Genre::satire;
  fail_validation("registry error: unknown genre '" + name + "'");
}

int Registry::id_of(const std::string& name) const {
  auto it = index.find(name);
  if (it == index.end()) fail_validation("registry error: unknown class '" + name + "'");
  return it->second;
}

Registry make_registry(const std::vector<std::string>& names) {
  Registry r;
  for (const auto& n : names) {
    require(!n.empty(), "registry error: empty class name");
    require(r.index.emplace(n, static_cast<int>(r.names.size())).second,
            "registry error: duplicate class '" + n + "'");
    r.names.push_back(n);
    r.parents.emplace_back();
  }
  return r;
}

Registry load_registry(const std::string& path) {
  Registry r;
  for (const auto& raw : split_lines(read_text_file(path))) {
    std::string line = trim(raw);
    if (line.empty()) continue;
    auto cols = split_on(line, '\t');
    require(r.index.emplace(cols[0], static_cast<int>(r.names.size())).second,
            "registry error: duplicate class '" + cols[0] + "' in " + path);
    r.names.push_back(cols[0]);
    r.parents.push_back(cols.size() > 1 ? cols[1] : "");
  }
  require(!r.names.empty(), "registry error: empty registry file " + path);
  return r;
}

bool LanguageRegistry::contains(const std::string& code) const {
  return std::find(codes.begin(), codes.end(), code) != codes.end();
}

LanguageRegistry load_language_registry(const std::string& path) {
  LanguageRegistry reg;
  for (const auto& raw : split_lines(read_text_file(path))) {
    std::string line = trim(raw);
    if (!line.empty() && line[0] != '#') reg.codes.push_back(line);
  }
  return reg;
}

LanguageRegistry default_language_registry() {
  return LanguageRegistry{{"en", "fr", "de", "it", "pl", "ru", "es", "el", "ka"}};
}

std::size_t LabelSet::size() const {
  switch (subtask) {
    case Subtask::genre: return genre.size();
    case Subtask::framing: return frames.size();
    case Subtask::persuasion: return techniques.size();
  }
  return 0;
}

std::string TrainItem::key() const {
  if (paragraph > 0) return article->id + ":" + std::to_string(paragraph);
  return article->id;
}

std::string TrainItem::text() const {
  if (paragraph > 0) {
    require(paragraph <= static_cast<int>(article->paragraphs.size()),
            "paragraph index out of range for article " + article->id);
    return article->paragraphs[static_cast<std::size_t>(paragraph - 1)];
  }
  std::string out = article->title;
  for (const auto& p : article->paragraphs) {
    if (!out.empty()) out += " ";
    out += p;
  }
  return out;
}

bool id_less(const std::string& a, const std::string& b) {
  auto numeric = [](const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(),
                                     [](unsigned char c) { return std::isdigit(c); });
  };
  if (numeric(a) && numeric(b)) {
    if (a.size() != b.size()) return a.size() < b.size();
  }
  return a < b;
}

Article parse_article_text(const std::string& id, const std::string& language,
                           const std::string& file_text, const std::string& origin,
                           std::vector<std::string>* warnings) {
  auto lines = split_lines(file_text);
  if (lines.empty() || trim(lines[0]).empty())
    fail_validation("format error: missing title line in " + origin);
  Article a;
  a.id = id;
  a.language = language;
  a.title = trim(lines[0]);
  // paragraphs are blank-line separated blocks; a block spanning several
  // lines is joined with single spaces
  std::vector<std::string> block;
  auto flush = [&]() {
    if (!block.empty()) {
      a.paragraphs.push_back(join(block, " "));
      block.clear();
    }
  };
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::string line = trim(lines[i]);
    if (line.empty()) {
      flush();
    } else {
      block.push_back(line);
    }
  }
  flush();
  if (a.paragraphs.empty() && warnings)
    warnings->push_back("article " + id + " (" + origin + ") has a title but no paragraphs");
  return a;
}

std::string article_to_file_text(const Article& a) {
  std::string out = a.title + "\n";
  for (const auto& p : a.paragraphs) {
    out += "\n";
    out += p;
    out += "\n";
  }
  return out;
}

ArticleLoadResult load_articles(const std::string& dir_path, const std::string& language,
                                const LanguageRegistry& languages) {
  if (!languages.contains(language))
    fail_validation("language '" + language + "' is not in the language registry");
  if (!fs::is_directory(dir_path)) fail_io("not a directory: " + dir_path);

  std::vector<std::pair<std::string, std::string>> files;  // (id, path)
  for (const auto& entry : fs::directory_iterator(dir_path)) {
    if (!entry.is_regular_file()) continue;
    std::string name = entry.path().filename().string();
    if (!starts_with(name, "article") || !ends_with(name, ".txt")) continue;
    std::string id = name.substr(7, name.size() - 7 - 4);
    if (id.empty()) fail_validation("format error: empty article id in file name " + name);
    files.emplace_back(id, entry.path().string());
  }
  std::sort(files.begin(), files.end(),
            [](const auto& x, const auto& y) { return id_less(x.first, y.first); });

  ArticleLoadResult result;
  std::set<std::string> seen;
  for (const auto& [id, path] : files) {
    if (!seen.insert(id).second) fail_validation("duplicate article id '" + id + "' in " + dir_path);
    result.articles.push_back(
        parse_article_text(id, language, read_text_file(path), path, &result.warnings));
  }
  return result;
}

namespace {

std::vector<std::uint8_t> parse_technique_field(const std::string& field, const Registry& techniques) {
  std::vector<std::uint8_t> vec(static_cast<std::size_t>(techniques.size()), 0);
  if (trim(field).empty()) return vec;  // zero-label row
  for (const auto& tok : split_on(field, ',')) {
    vec[static_cast<std::size_t>(techniques.id_of(trim(tok)))] = 1;
  }
  return vec;
}

}  // namespace

LabelSet load_labels(const std::string& path, Subtask subtask, const Registry& frames,
                     const Registry& techniques) {
  LabelSet out;
  out.subtask = subtask;
  auto lines = split_lines(read_text_file(path));
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    if (trim(lines[ln]).empty()) continue;
    auto cols = split_on(lines[ln], '\t');
    auto where = path + ":" + std::to_string(ln + 1);
    switch (subtask) {
      case Subtask::genre: {
        if (cols.size() != 2) fail_validation("format error: expected id<TAB>genre at " + where);
        if (cols[1].find(',') != std::string::npos)
          fail_validation("format error: genre row with more than one label at " + where);
        require(out.genre.emplace(cols[0], genre_from_name(trim(cols[1]))).second,
                "duplicate label row for article '" + cols[0] + "' at " + where);
        break;
      }
      case Subtask::framing: {
        if (cols.size() != 2) fail_validation("format error: expected id<TAB>frames at " + where);
        std::set<int> ids;
        if (!trim(cols[1]).empty())
          for (const auto& tok : split_on(cols[1], ',')) ids.insert(frames.id_of(trim(tok)));
        require(out.frames.emplace(cols[0], std::move(ids)).second,
                "duplicate label row for article '" + cols[0] + "' at " + where);
        break;
      }
      case Subtask::persuasion: {
        if (cols.size() != 3)
          fail_validation("format error: expected id<TAB>paragraph<TAB>techniques at " + where);
        int para = 0;
        try {
          para = std::stoi(cols[1]);
        } catch (...) {
          fail_validation("format error: bad paragraph index '" + cols[1] + "' at " + where);
        }
        require(para >= 1, "format error: paragraph index must be 1-based at " + where);
        require(out.techniques
                    .emplace(std::make_pair(cols[0], para), parse_technique_field(cols[2], techniques))
                    .second,
                "duplicate label row for paragraph " + cols[0] + ":" + cols[1] + " at " + where);
        break;
      }
    }
  }
  return out;
}

LabeledSet build_training_set(const std::vector<Article>& articles, const LabelSet& labels,
                              Subtask subtask, bool include_unlabeled) {
  require(labels.subtask == subtask, "label set subtask does not match requested subtask");
  LabeledSet out;
  out.subtask = subtask;

  std::map<std::string, std::shared_ptr<const Article>> by_id;
  for (const auto& a : articles) by_id.emplace(a.id, std::make_shared<Article>(a));

  auto resolve = [&](const std::string& id) {
    auto it = by_id.find(id);
    if (it == by_id.end())
      fail_validation("integrity error: label references unknown article id '" + id + "'");
    return it->second;
  };

  switch (subtask) {
    case Subtask::genre:
      for (const auto& [id, g] : labels.genre) {
        TrainItem item;
        item.article = resolve(id);
        item.genre = g;
        out.items.push_back(std::move(item));
      }
      break;
    case Subtask::framing:
      for (const auto& [id, fr] : labels.frames) {
        require(!fr.empty(), "gold framing labels must not be empty (article '" + id + "')");
        TrainItem item;
        item.article = resolve(id);
        item.frames = fr;
        out.items.push_back(std::move(item));
      }
      break;
    case Subtask::persuasion: {
      // integrity sweep first so errors do not depend on the include flag
      std::size_t vec_len = 0;
      for (const auto& [key, vec] : labels.techniques) {
        auto art = resolve(key.first);
        require(key.second <= static_cast<int>(art->paragraphs.size()),
                "integrity error: label references paragraph " + std::to_string(key.second) +
                    " of article '" + key.first + "' which has only " +
                    std::to_string(art->paragraphs.size()));
        vec_len = vec.size();
      }
      for (const auto& a : articles) {
        auto art = by_id.at(a.id);
        for (int p = 1; p <= static_cast<int>(a.paragraphs.size()); ++p) {
          auto it = labels.techniques.find(std::make_pair(a.id, p));
          if (it == labels.techniques.end() && !include_unlabeled) continue;
          TrainItem item;
          item.article = art;
          item.paragraph = p;
          item.techniques = it != labels.techniques.end()
                                ? it->second
                                : std::vector<std::uint8_t>(vec_len, 0);
          out.items.push_back(std::move(item));
        }
      }
      break;
    }
  }
  return out;
}

LabeledSet merge_auxiliary(const LabeledSet& train, const LabeledSet& aux,
                           const std::string& language, Genre cls) {
  require(train.subtask == Subtask::genre && aux.subtask == Subtask::genre,
          "merge_auxiliary applies to the genre subtask");
  LabeledSet out = train;
  for (const auto& item : aux.items) {
    require(item.language() == language,
            "auxiliary item '" + item.key() + "' has language '" + item.language() +
                "', expected '" + language + "'");
    require(item.genre == cls, "auxiliary item '" + item.key() + "' has class '" +
                                   genre_name(item.genre) + "', expected '" + genre_name(cls) + "'");
    TrainItem copy = item;
    copy.auxiliary = true;
    out.items.push_back(std::move(copy));
  }
  return out;
}

void write_predictions(const LabelSet& preds, const std::string& path, Subtask subtask,
                       const Registry& frames, const Registry& techniques) {
  require(preds.subtask == subtask, "prediction set subtask does not match requested subtask");
  std::string out;
  switch (subtask) {
    case Subtask::genre: {
      std::vector<std::string> ids;
      for (const auto& [id, _] : preds.genre) ids.push_back(id);
      std::sort(ids.begin(), ids.end(), id_less);
      for (const auto& id : ids) out += id + "\t" + genre_name(preds.genre.at(id)) + "\n";
      break;
    }
    case Subtask::framing: {
      std::vector<std::string> ids;
      for (const auto& [id, _] : preds.frames) ids.push_back(id);
      std::sort(ids.begin(), ids.end(), id_less);
      for (const auto& id : ids) {
        std::vector<std::string> names;
        for (int f : preds.frames.at(id)) names.push_back(frames.names.at(static_cast<std::size_t>(f)));
        out += id + "\t" + join(names, ",") + "\n";
      }
      break;
    }
    case Subtask::persuasion: {
      std::vector<std::pair<std::string, int>> keys;
      for (const auto& [key, _] : preds.techniques) keys.push_back(key);
      std::sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return id_less(a.first, b.first);
        return a.second < b.second;
      });
      for (const auto& key : keys) {
        const auto& vec = preds.techniques.at(key);
        std::vector<std::string> names;
        for (std::size_t i = 0; i < vec.size(); ++i)
          if (vec[i]) names.push_back(techniques.names.at(i));
        out += key.first + "\t" + std::to_string(key.second) + "\t" + join(names, ",") + "\n";
      }
      break;
    }
  }
  write_text_file(path, out);
}

}  // namespace newsclf
