#include "newsclf/translate.hpp"

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <filesystem>
#include <memory>
#include <thread>

#include <json.hpp>

#include "newsclf/common.hpp"

namespace newsclf {

namespace {

bool is_word_char(char c) {
  auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) != 0 || u >= 0x80;
}

bool iequal_at(const std::string& text, std::size_t pos, const std::string& lowered) {
  if (pos + lowered.size() > text.size()) return false;
  for (std::size_t k = 0; k < lowered.size(); ++k) {
    auto u = static_cast<unsigned char>(text[pos + k]);
    if (static_cast<char>(std::tolower(u)) != lowered[k]) return false;
  }
  return true;
}

void sort_entries(Lexicon& lex) {
  std::sort(lex.entries.begin(), lex.entries.end(),
            [](const LexiconEntry& a, const LexiconEntry& b) {
              if (a.source.size() != b.source.size()) return a.source.size() > b.source.size();
              return a.source < b.source;
            });
  for (std::size_t i = 1; i < lex.entries.size(); ++i) {
    if (lex.entries[i].source == lex.entries[i - 1].source) {
      fail_validation("lexicon: duplicate source token '" + lex.entries[i].source + "'");
    }
  }
}

struct RemoteTarget {
  std::string base;  // http://host[:port]
  std::string path;  // leading slash
};

RemoteTarget parse_endpoint(const std::string& endpoint) {
  if (!starts_with(endpoint, "http://")) {
    fail_validation("config error: remote endpoint must be an http:// URL: " + endpoint);
  }
  const std::string rest = endpoint.substr(7);
  const std::size_t slash = rest.find('/');
  RemoteTarget target;
  target.base = "http://" + (slash == std::string::npos ? rest : rest.substr(0, slash));
  target.path = slash == std::string::npos ? "/" : rest.substr(slash);
  if (target.base == "http://") {
    fail_validation("config error: remote endpoint has no host: " + endpoint);
  }
  return target;
}

// One client per translate_text call; chunks of the same text reuse it.
struct RemoteSession {
  RemoteTarget target;
  httplib::Client client;

  explicit RemoteSession(const std::string& endpoint)
      : target(parse_endpoint(endpoint)), client(target.base) {
    client.set_connection_timeout(5, 0);
    client.set_read_timeout(30, 0);
    client.set_write_timeout(30, 0);
  }
};

std::string remote_translate(const TranslationBackend& backend, RemoteSession& session,
                             const std::string& text, const std::string& src,
                             const std::string& tgt) {
  nlohmann::json body;
  body["q"] = text;
  body["source"] = src;
  body["target"] = tgt;
  const std::string payload = body.dump();

  const int attempts = 1 + std::max(0, backend.retries);
  std::string last;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    httplib::Result res = session.client.Post(session.target.path, payload, "application/json");
    if (res && res->status >= 200 && res->status < 300) {
      nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, false);
      if (reply.is_discarded() || !reply.contains("translatedText") ||
          !reply["translatedText"].is_string()) {
        fail_io("backend error: malformed response from " + backend.endpoint +
                " (expected {\"translatedText\": ...})");
      }
      return reply["translatedText"].get<std::string>();
    }
    last = res ? "status " + std::to_string(res->status) : httplib::to_string(res.error());
    if (attempt < attempts) {
      const auto delay = std::chrono::milliseconds(
          static_cast<long long>(backend.retry_base_ms) << (attempt - 1));
      std::this_thread::sleep_for(delay);
    }
  }
  fail_io("backend error: POST " + backend.endpoint + " failed after " +
          std::to_string(attempts) + " attempts (last: " + last + ")");
}

// Splits a single over-long sentence at spaces where possible so the
// lexicon still sees whole words; pieces are rejoined with single spaces.
std::vector<std::string> slice_long(const std::string& text, std::size_t limit) {
  std::vector<std::string> pieces;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (n - i > limit) {
    std::size_t cut = text.rfind(' ', i + limit);
    if (cut == std::string::npos || cut <= i) cut = i + limit;
    pieces.push_back(text.substr(i, cut - i));
    i = cut;
    while (i < n && text[i] == ' ') ++i;
  }
  if (i < n) pieces.push_back(text.substr(i));
  return pieces;
}

std::string translate_chunk(const TranslationBackend& backend, RemoteSession* session,
                            const std::string& chunk, const std::string& src,
                            const std::string& tgt) {
  switch (backend.kind) {
    case BackendKind::identity:
      return chunk;
    case BackendKind::lexicon:
      return lexicon_apply(backend.lexicon, chunk);
    case BackendKind::remote:
      return remote_translate(backend, *session, chunk, src, tgt);
  }
  fail_validation("config error: unknown backend kind");
}

}  // namespace

std::string backend_kind_name(BackendKind kind) {
  switch (kind) {
    case BackendKind::identity: return "identity";
    case BackendKind::lexicon: return "lexicon";
    case BackendKind::remote: return "remote";
  }
  fail_validation("config error: unknown backend kind");
}

BackendKind backend_kind_from_name(const std::string& name) {
  if (name == "identity") return BackendKind::identity;
  if (name == "lexicon") return BackendKind::lexicon;
  if (name == "remote") return BackendKind::remote;
  fail_validation("config error: unknown backend kind '" + name + "'");
}

Lexicon load_lexicon(const std::string& path) {
  if (!std::filesystem::exists(path)) {
    fail_validation("config error: lexicon file missing: " + path);
  }
  Lexicon lex;
  const std::vector<std::string> lines = split_lines(read_text_file(path));
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const std::vector<std::string> fields = split_on(lines[i], '\t');
    if (fields.size() != 2 || trim(fields[0]).empty() || trim(fields[1]).empty()) {
      fail_validation("lexicon: line " + std::to_string(i + 1) +
                      ": expected source<TAB>target");
    }
    lex.entries.push_back({to_lower(trim(fields[0])), trim(fields[1])});
  }
  sort_entries(lex);
  return lex;
}

Lexicon make_lexicon(const std::vector<std::pair<std::string, std::string>>& pairs) {
  Lexicon lex;
  for (const auto& [source, target] : pairs) {
    require(!source.empty() && !target.empty(), "lexicon: empty source or target token");
    lex.entries.push_back({to_lower(source), target});
  }
  sort_entries(lex);
  return lex;
}

std::string lexicon_apply(const Lexicon& lexicon, const std::string& text) {
  std::string out;
  out.reserve(text.size());
  const std::size_t n = text.size();
  std::size_t i = 0;
  while (i < n) {
    const bool at_boundary = i == 0 || !is_word_char(text[i - 1]);
    if (at_boundary && is_word_char(text[i])) {
      bool matched = false;
      for (const LexiconEntry& entry : lexicon.entries) {
        const std::size_t end = i + entry.source.size();
        if (!iequal_at(text, i, entry.source)) continue;
        if (end < n && is_word_char(text[end])) continue;
        out += entry.target;
        i = end;
        matched = true;
        break;
      }
      if (matched) continue;
    }
    out += text[i];
    ++i;
  }
  return out;
}

TranslationBackend identity_backend() { return TranslationBackend{}; }

TranslationBackend lexicon_backend(const std::string& path) {
  TranslationBackend backend;
  backend.kind = BackendKind::lexicon;
  backend.deterministic = true;
  backend.lexicon = load_lexicon(path);
  return backend;
}

TranslationBackend remote_backend(const std::string& endpoint, int char_limit) {
  require(char_limit > 0, "config error: char_limit must be positive");
  parse_endpoint(endpoint);  // reject bad URLs at construction
  TranslationBackend backend;
  backend.kind = BackendKind::remote;
  backend.deterministic = false;
  backend.endpoint = endpoint;
  backend.char_limit = char_limit;
  return backend;
}

std::string translate_text(const TranslationBackend& backend, const std::string& text,
                           const std::string& src, const std::string& tgt) {
  if (backend.kind == BackendKind::identity) return text;
  if (src == tgt) {
    fail_validation("translate error: source and target language are both '" + src + "'");
  }
  require(backend.char_limit > 0, "config error: char_limit must be positive");

  std::unique_ptr<RemoteSession> session;
  if (backend.kind == BackendKind::remote) {
    session = std::make_unique<RemoteSession>(backend.endpoint);
  }

  const auto limit = static_cast<std::size_t>(backend.char_limit);
  if (text.size() <= limit) return translate_chunk(backend, session.get(), text, src, tgt);

  std::vector<std::string> chunks;
  for (const std::string& sentence : split_sentences(text, backend.abbrev)) {
    if (sentence.size() <= limit) {
      chunks.push_back(sentence);
    } else {
      for (std::string& piece : slice_long(sentence, limit)) chunks.push_back(std::move(piece));
    }
  }
  std::vector<std::string> translated;
  translated.reserve(chunks.size());
  for (const std::string& chunk : chunks) {
    translated.push_back(translate_chunk(backend, session.get(), chunk, src, tgt));
  }
  return join(translated, " ");
}

Article translate_article(const TranslationBackend& backend, const Article& article,
                          const std::string& tgt) {
  Article out;
  out.id = article.id;
  out.language = tgt;
  if (article.language == tgt) {
    out.title = article.title;
    out.paragraphs = article.paragraphs;
    return out;
  }
  out.title = translate_text(backend, article.title, article.language, tgt);
  out.paragraphs.reserve(article.paragraphs.size());
  for (const std::string& paragraph : article.paragraphs) {
    out.paragraphs.push_back(translate_text(backend, paragraph, article.language, tgt));
  }
  return out;
}

TranslatedCorpus translate_corpus(const TranslationBackend& backend, const LabeledSet& set,
                                  const std::string& tgt) {
  require(!tgt.empty(), "translate error: target language is empty");

  // Unique articles in first-appearance order; items of one article share
  // a single translated copy.
  std::vector<std::shared_ptr<const Article>> originals;
  std::map<std::string, std::size_t> slot;
  for (const TrainItem& item : set.items) {
    require(item.article != nullptr, "translate error: item without an article");
    if (slot.emplace(item.article->id, originals.size()).second) {
      originals.push_back(item.article);
    }
  }

  const std::size_t n = originals.size();
  std::vector<std::shared_ptr<const Article>> translated(n);
  std::vector<std::string> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        translated[i] =
            std::make_shared<const Article>(translate_article(backend, *originals[i], tgt));
      } catch (const Error& e) {
        errors[i] = e.what();
      }
    }
  };
  const int workers = std::min<int>(std::max(1, backend.parallelism), static_cast<int>(n));
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
  }

  TranslatedCorpus out;
  out.set.subtask = set.subtask;
  for (std::size_t i = 0; i < n; ++i) {
    if (translated[i] != nullptr) {
      out.source_language[originals[i]->id] = originals[i]->language;
    } else {
      out.failures.push_back({originals[i]->id, originals[i]->language, errors[i]});
    }
  }
  for (const TrainItem& item : set.items) {
    const std::size_t i = slot.at(item.article->id);
    if (translated[i] == nullptr) continue;
    TrainItem copy = item;
    copy.article = translated[i];
    out.set.items.push_back(std::move(copy));
  }
  return out;
}

}  // namespace newsclf
