#pragma once

// Article cleaning, sentence segmentation, head+tail truncation,
// word-level tokenizer and vocabulary.
//
// The sentence splitter is rule based: a boundary is a run of .!? followed
// by whitespace and an uppercase ASCII letter, a digit, or a non-ASCII
// character, unless the token ending the run is on the language's
// abbreviation list. Tokenization lowercases, splits on whitespace and
// detaches leading/trailing ASCII punctuation into single-char tokens.

#include <map>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "newsclf/corpus.hpp"

namespace newsclf {

struct Abbreviations {
  std::set<std::string> tokens;  // stored with their trailing dot, e.g. "Dr."
};

Abbreviations load_abbreviations(const std::string& path);

// Boilerplate sentence patterns (English cleaning list). One regex per
// line, '#' starts a comment. Matching is case-insensitive search.
struct PatternRegistry {
  std::vector<std::regex> patterns;
  std::vector<std::string> sources;

  bool matches(const std::string& sentence) const;
};

PatternRegistry load_patterns(const std::string& path);
PatternRegistry make_patterns(const std::vector<std::string>& lines);

std::vector<std::string> split_sentences(const std::string& text, const Abbreviations& abbrev);

// Cleaning, applied in order: title full stop; removal of consecutive
// duplicate sentences; '@' stripped from handles; hyperlink/image-link
// removal; for English, boilerplate sentences dropped via the pattern
// registry. Total and idempotent.
Article clean_article(const Article& article, const Abbreviations& abbrev,
                      const PatternRegistry* english_patterns);

// Fits long input into a token budget by alternately admitting the next
// unconsumed sentence from the head and from the tail, stopping at the
// first sentence that would overflow. Admitted sentences are emitted in
// original order.
std::string head_tail_truncate(const std::vector<std::string>& sentences, int token_budget);

std::vector<std::string> tokenize(const std::string& text);

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kReserved = 5;

  Vocab();

  int size() const { return static_cast<int>(tokens_.size()); }
  int id_of(const std::string& token) const;  // kUnk when absent
  const std::string& token_of(int id) const;
  bool is_special(int id) const { return id < kReserved; }
  std::uint64_t hash() const;

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

  friend Vocab build_vocab(const std::vector<std::string>& corpus, int max_size);

 private:
  void push(const std::string& token);
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

// Most frequent (max_size - 5) tokens, ties broken lexicographically.
Vocab build_vocab(const std::vector<std::string>& corpus, int max_size);

struct TokenSeq {
  std::vector<int> ids;    // length is exactly max_len
  int attention_len = 0;   // non-PAD prefix length
};

// [CLS] + token ids + [SEP], truncated to max_len and padded with PAD.
TokenSeq encode(const std::string& text, const Vocab& vocab, int max_len);

}  // namespace newsclf
