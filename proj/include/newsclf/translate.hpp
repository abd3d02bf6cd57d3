#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "newsclf/corpus.hpp"
#include "newsclf/textprep.hpp"

// Pluggable translation backends: an identity pass-through, an offline
// token lexicon, and a remote HTTP service. Texts above the backend's
// character limit are translated sentence by sentence and rejoined with
// single spaces, so every request stays under the limit.

namespace newsclf {

enum class BackendKind { identity, lexicon, remote };

std::string backend_kind_name(BackendKind kind);
BackendKind backend_kind_from_name(const std::string& name);

// Sources are stored lowercased; matching is case-insensitive (ASCII
// folding) at word boundaries, longest source first. Targets are kept
// verbatim.
struct LexiconEntry {
  std::string source;
  std::string target;
};

struct Lexicon {
  std::vector<LexiconEntry> entries;  // longer sources first, then lexicographic
};

// Lexicon TSV: source<TAB>target per line, no header, blank lines skipped.
Lexicon load_lexicon(const std::string& path);
Lexicon make_lexicon(const std::vector<std::pair<std::string, std::string>>& pairs);

// Word-boundary substitution pass; characters outside any match are
// copied through unchanged, so spacing and punctuation survive.
std::string lexicon_apply(const Lexicon& lexicon, const std::string& text);

struct TranslationBackend {
  BackendKind kind = BackendKind::identity;
  bool deterministic = true;  // identity and lexicon; remote services are not

  Lexicon lexicon;       // lexicon backend only
  std::string endpoint;  // remote backend only, http://host[:port][/path]
  int char_limit = 4500;
  int retries = 3;        // extra attempts after the first failure
  int retry_base_ms = 100;  // backoff: base * 2^k before retry k
  int parallelism = 1;      // concurrent articles in translate_corpus
  Abbreviations abbrev;     // sentence splitting for the chunker
};

TranslationBackend identity_backend();
TranslationBackend lexicon_backend(const std::string& path);
TranslationBackend remote_backend(const std::string& endpoint, int char_limit = 4500);

// Identity returns the input verbatim (src == tgt allowed); the other
// backends require src != tgt.
std::string translate_text(const TranslationBackend& backend, const std::string& text,
                           const std::string& src, const std::string& tgt);

// Title and each paragraph translated separately, so the paragraph count
// is preserved. An article already in the target language passes through
// unchanged.
Article translate_article(const TranslationBackend& backend, const Article& article,
                          const std::string& tgt);

struct TranslateFailure {
  std::string article_id;
  std::string language;  // original language of the failed article
  std::string message;
};

struct TranslatedCorpus {
  LabeledSet set;  // input item order, minus items of failed articles
  std::map<std::string, std::string> source_language;  // article id -> original code
  std::vector<TranslateFailure> failures;              // first-appearance order
};

// Labels are copied bit-identically; only the text and the language
// change. Backend errors are collected per article, never thrown.
TranslatedCorpus translate_corpus(const TranslationBackend& backend, const LabeledSet& set,
                                  const std::string& tgt);

}  // namespace newsclf
