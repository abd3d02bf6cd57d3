#include "newsclf/textprep.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <utility>

#include "newsclf/common.hpp"

namespace newsclf {
namespace {

bool ascii_punct(char c) {
  auto u = static_cast<unsigned char>(c);
  return u < 0x80 && std::ispunct(u) != 0;
}

bool ascii_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool word_char(char c) {
  auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || std::isalnum(u) != 0 || c == '_';
}

std::string lower_ascii(std::string s) {
  for (char& c : s) {
    auto u = static_cast<unsigned char>(c);
    if (u < 0x80) c = static_cast<char>(std::tolower(u));
  }
  return s;
}

const std::regex& link_pattern() {
  static const std::regex re(
      R"((https?://[^\s]+)|(www\.[^\s]+)|([^\s]+\.(?:jpg|jpeg|png|gif|webp)(?:[^\s]*)))",
      std::regex::ECMAScript | std::regex::icase);
  return re;
}

std::string strip_handles(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '@' && i + 1 < s.size() && word_char(s[i + 1])) {
      bool at_start = i == 0 || !word_char(s[i - 1]);
      if (at_start) continue;  // "@jdoe" loses the '@', "a@b.com" keeps it
    }
    out.push_back(s[i]);
  }
  return out;
}

std::string collapse_ws(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  bool pending = false;
  for (char c : s) {
    if (ascii_space(c)) {
      pending = !out.empty();
    } else {
      if (pending) out.push_back(' ');
      pending = false;
      out.push_back(c);
    }
  }
  return out;
}

// '@' stripping, link removal, whitespace normalization. May return "".
std::string clean_fragment(const std::string& s) {
  std::string t = strip_handles(s);
  t = std::regex_replace(t, link_pattern(), " ");
  return collapse_ws(t);
}

bool ends_sentence(const std::string& s) {
  if (s.empty()) return false;
  char c = s.back();
  return c == '.' || c == '!' || c == '?';
}

}  // namespace

Abbreviations load_abbreviations(const std::string& path) {
  Abbreviations a;
  for (const std::string& raw : split_lines(read_text_file(path))) {
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    a.tokens.insert(line);
  }
  return a;
}

bool PatternRegistry::matches(const std::string& sentence) const {
  for (const std::regex& re : patterns) {
    if (std::regex_search(sentence, re)) return true;
  }
  return false;
}

PatternRegistry make_patterns(const std::vector<std::string>& lines) {
  PatternRegistry reg;
  for (const std::string& raw : lines) {
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    try {
      reg.patterns.emplace_back(line, std::regex::ECMAScript | std::regex::icase);
    } catch (const std::regex_error&) {
      fail_validation("pattern error: cannot compile regex: " + line);
    }
    reg.sources.push_back(line);
  }
  return reg;
}

PatternRegistry load_patterns(const std::string& path) {
  return make_patterns(split_lines(read_text_file(path)));
}

std::vector<std::string> split_sentences(const std::string& text, const Abbreviations& abbrev) {
  std::vector<std::string> out;
  const std::size_t n = text.size();
  auto emit = [&](std::size_t from, std::size_t to) {
    while (from < to && ascii_space(text[from])) ++from;
    while (to > from && ascii_space(text[to - 1])) --to;
    if (to > from) out.push_back(text.substr(from, to - from));
  };

  std::size_t start = 0;
  std::size_t i = 0;
  while (i < n) {
    char c = text[i];
    if (c != '.' && c != '!' && c != '?') {
      ++i;
      continue;
    }
    std::size_t end = i;
    while (end + 1 < n) {
      char d = text[end + 1];
      if (d != '.' && d != '!' && d != '?') break;
      ++end;
    }
    std::size_t after = end + 1;
    std::size_t next = after;
    while (next < n && ascii_space(text[next])) ++next;
    bool boundary = false;
    if (next < n && next > after) {
      auto u = static_cast<unsigned char>(text[next]);
      boundary = std::isupper(u) != 0 || std::isdigit(u) != 0 || u >= 0x80;
    }
    if (boundary) {
      std::size_t tok = i;
      while (tok > start && !ascii_space(text[tok - 1])) --tok;
      std::string token = text.substr(tok, end - tok + 1);
      if (abbrev.tokens.count(token) != 0) boundary = false;
    }
    if (boundary) {
      emit(start, after);
      start = next;
    }
    i = end + 1;
  }
  emit(start, n);
  return out;
}

Article clean_article(const Article& article, const Abbreviations& abbrev,
                      const PatternRegistry* english_patterns) {
  Article out;
  out.id = article.id;
  out.language = article.language;

  out.title = clean_fragment(article.title);
  if (!ends_sentence(out.title)) out.title.push_back('.');

  bool english = article.language == "en";
  for (const std::string& paragraph : article.paragraphs) {
    std::vector<std::string> sentences = split_sentences(paragraph, abbrev);
    std::vector<std::string> kept;
    for (std::string& s : sentences) {
      if (!kept.empty() && kept.back() == s) continue;  // consecutive duplicate
      kept.push_back(std::move(s));
    }
    std::vector<std::string> cleaned;
    for (const std::string& s : kept) {
      std::string t = clean_fragment(s);
      if (t.empty()) continue;
      if (english && english_patterns != nullptr && english_patterns->matches(t)) continue;
      cleaned.push_back(std::move(t));
    }
    if (!cleaned.empty()) out.paragraphs.push_back(join(cleaned, " "));
  }
  return out;
}

std::string head_tail_truncate(const std::vector<std::string>& sentences, int token_budget) {
  require(token_budget >= 0, "token budget must be non-negative");
  const int n = static_cast<int>(sentences.size());
  std::vector<int> cost(n);
  for (int i = 0; i < n; ++i) cost[i] = static_cast<int>(tokenize(sentences[i]).size());

  std::vector<bool> admit(n, false);
  int head = 0;
  int tail = n - 1;
  bool from_head = true;
  int used = 0;
  while (head <= tail) {
    int next = from_head ? head : tail;
    if (used + cost[next] > token_budget) break;  // first overflow ends admission
    admit[next] = true;
    used += cost[next];
    if (from_head) ++head; else --tail;
    from_head = !from_head;
  }

  std::vector<std::string> kept;
  for (int i = 0; i < n; ++i) {
    if (admit[i]) kept.push_back(sentences[i]);
  }
  return join(kept, " ");
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    while (i < n && ascii_space(text[i])) ++i;
    std::size_t j = i;
    while (j < n && !ascii_space(text[j])) ++j;
    if (i == j) break;
    std::string word = text.substr(i, j - i);
    i = j;

    std::size_t b = 0;
    std::size_t e = word.size();
    while (b < e && ascii_punct(word[b])) {
      out.emplace_back(1, word[b]);
      ++b;
    }
    std::size_t core_end = e;
    while (core_end > b && ascii_punct(word[core_end - 1])) --core_end;
    if (core_end > b) out.push_back(lower_ascii(word.substr(b, core_end - b)));
    for (std::size_t k = core_end; k < e; ++k) out.emplace_back(1, word[k]);
  }
  return out;
}

Vocab::Vocab() {
  push("[PAD]");
  push("[UNK]");
  push("[CLS]");
  push("[SEP]");
  push("[MASK]");
}

void Vocab::push(const std::string& token) {
  require(index_.count(token) == 0, "vocab error: duplicate token: " + token);
  index_[token] = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
}

int Vocab::id_of(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token_of(int id) const {
  require(id >= 0 && id < size(), "vocab error: id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocab::hash() const {
  std::uint64_t h = fnv1a("");
  for (const std::string& t : tokens_) {
    h = fnv1a(t, h);
    h = fnv1a("\n", h);
  }
  return h;
}

void Vocab::save(const std::string& path) const {
  std::string body;
  for (const std::string& t : tokens_) {
    body += t;
    body += '\n';
  }
  write_text_file(path, body);
}

Vocab Vocab::load(const std::string& path) {
  std::vector<std::string> lines = split_lines(read_text_file(path));
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  Vocab v;
  require(lines.size() >= static_cast<std::size_t>(kReserved),
          "vocab error: file must list the five reserved tokens first");
  for (int i = 0; i < kReserved; ++i) {
    require(lines[static_cast<std::size_t>(i)] == v.tokens_[static_cast<std::size_t>(i)],
            "vocab error: reserved token mismatch at line " + std::to_string(i + 1));
  }
  for (std::size_t i = kReserved; i < lines.size(); ++i) {
    require(!lines[i].empty(), "vocab error: blank token line");
    v.push(lines[i]);
  }
  return v;
}

Vocab build_vocab(const std::vector<std::string>& corpus, int max_size) {
  require(max_size >= Vocab::kReserved,
          "vocab error: max size must cover the reserved tokens");
  std::map<std::string, std::int64_t> counts;
  for (const std::string& text : corpus) {
    for (const std::string& tok : tokenize(text)) ++counts[tok];
  }
  std::vector<std::pair<std::string, std::int64_t>> items(counts.begin(), counts.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  const std::size_t slots = static_cast<std::size_t>(max_size - Vocab::kReserved);
  for (std::size_t i = 0; i < items.size() && i < slots; ++i) v.push(items[i].first);
  return v;
}

TokenSeq encode(const std::string& text, const Vocab& vocab, int max_len) {
  require(max_len >= 2, "encode error: max_len must fit [CLS] and [SEP]");
  std::vector<std::string> toks = tokenize(text);
  TokenSeq seq;
  seq.ids.reserve(static_cast<std::size_t>(max_len));
  seq.ids.push_back(Vocab::kCls);
  const std::size_t room = static_cast<std::size_t>(max_len - 2);
  for (std::size_t t = 0; t < toks.size() && t < room; ++t) {
    seq.ids.push_back(vocab.id_of(toks[t]));
  }
  seq.ids.push_back(Vocab::kSep);
  seq.attention_len = static_cast<int>(seq.ids.size());
  seq.ids.resize(static_cast<std::size_t>(max_len), Vocab::kPad);
  return seq;
}

}  // namespace newsclf
