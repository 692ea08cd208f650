#include "vicar/text.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>

namespace vicar::text {
namespace {

bool is_space(char ch) { return std::isspace(static_cast<unsigned char>(ch)) != 0; }
bool is_digit(char ch) { return std::isdigit(static_cast<unsigned char>(ch)) != 0; }
bool is_ascii_punct(char ch) {
  auto c = static_cast<unsigned char>(ch);
  return c < 0x80 && std::ispunct(c) != 0;
}

constexpr std::string_view kStopWords[] = {
    "a",     "an",    "the",   "and",   "or",    "but",   "if",    "then",  "so",
    "of",    "to",    "in",    "on",    "at",    "by",    "for",   "with",  "from",
    "as",    "is",    "are",   "was",   "were",  "be",    "been",  "being", "it",
    "its",   "this",  "that",  "these", "those", "there", "here",  "what",  "which",
    "who",   "whom",  "how",   "why",   "when",  "where", "do",    "does",  "did",
    "can",   "could", "would", "should", "will", "shall", "may",   "might", "must",
    "i",     "you",   "he",    "she",   "we",    "they",  "me",    "him",   "her",
    "us",    "them",  "my",    "your",  "our",   "their", "not",   "no",    "yes",
    "about", "into",  "than",  "too",   "very",  "just",  "also",  "more",  "most",
    "some",  "any",   "all",   "each",  "let",   "let's", "okay",  "ok",    "right",
    "well",  "now",   "like",  "really", "think", "know",  "mean",  "get",   "got",
    "have",  "has",   "had",   "say",   "said",  "oh",
};

}  // namespace

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& ch : out) {
    auto c = static_cast<unsigned char>(ch);
    if (c < 0x80) ch = static_cast<char>(std::tolower(c));
  }
  return out;
}

bool is_valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Overlong forms, surrogates and out-of-range code points.
    if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) ||
        (extra == 3 && cp < 0x10000) || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      return false;
    }
    i += extra + 1;
  }
  return true;
}

std::vector<CharRange> find_all_ci(std::string_view haystack, std::string_view needle) {
  std::vector<CharRange> out;
  if (needle.empty() || needle.size() > haystack.size()) return out;
  const std::string h = to_lower_ascii(haystack);
  const std::string n = to_lower_ascii(needle);
  std::size_t pos = h.find(n);
  while (pos != std::string::npos) {
    out.push_back({pos, pos + n.size()});
    pos = h.find(n, pos + 1);
  }
  return out;
}

bool contains_ci(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return false;
  return to_lower_ascii(haystack).find(to_lower_ascii(needle)) != std::string::npos;
}

std::vector<Token> tokenize(std::string_view s) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const char ch = s[i];
    if (is_space(ch)) {
      ++i;
      continue;
    }
    // Numbers: digits with embedded '.', ',' or '/' followed by a digit.
    if (is_digit(ch) || (ch == '.' && i + 1 < s.size() && is_digit(s[i + 1]))) {
      std::size_t j = i;
      while (j < s.size()) {
        if (is_digit(s[j])) {
          ++j;
        } else if ((s[j] == '.' || s[j] == ',' || s[j] == '/') && j + 1 < s.size() &&
                   is_digit(s[j + 1])) {
          ++j;
        } else {
          break;
        }
      }
      out.push_back({std::string(s.substr(i, j - i)), i});
      i = j;
      continue;
    }
    if (is_ascii_punct(ch) && ch != '%') {
      ++i;
      continue;
    }
    if (ch == '%') {
      out.push_back({"%", i});
      ++i;
      continue;
    }
    // Words: run of non-space, non-punctuation bytes; keeps '/' inside
    // unit forms such as "m/s" and apostrophes inside contractions.
    std::size_t j = i;
    while (j < s.size() && !is_space(s[j])) {
      const char cj = s[j];
      if (is_ascii_punct(cj)) {
        const bool inner = j + 1 < s.size() && !is_space(s[j + 1]) && !is_ascii_punct(s[j + 1]);
        if ((cj == '/' || cj == '\'' || cj == '-') && inner) {
          ++j;
          continue;
        }
        break;
      }
      ++j;
    }
    if (j == i) {
      ++i;
      continue;
    }
    out.push_back({to_lower_ascii(s.substr(i, j - i)), i});
    i = j;
  }
  return out;
}

bool is_stop_word(std::string_view lower_word) {
  return std::find(std::begin(kStopWords), std::end(kStopWords), lower_word) != std::end(kStopWords);
}

std::vector<std::string> content_words(std::string_view s) {
  std::vector<std::string> out;
  for (auto& tok : tokenize(s)) {
    if (tok.text.size() < 2 || is_stop_word(tok.text)) continue;
    if (is_digit(tok.text.front())) continue;
    std::string w = std::move(tok.text);
    if (w.size() > 3 && w.back() == 's' && w[w.size() - 2] != 's') w.pop_back();
    out.push_back(std::move(w));
  }
  return out;
}

std::size_t word_count(std::string_view s) {
  std::size_t count = 0;
  bool in_word = false;
  for (char ch : s) {
    if (is_space(ch)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++count;
    }
  }
  return count;
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (char ch : data) {
    hash ^= static_cast<unsigned char>(ch);
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace vicar::text
