#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "vicar/model.hpp"

namespace vicar::text {

std::string_view trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);
bool is_valid_utf8(std::string_view s);

// Every case-insensitive (ASCII) occurrence of `needle` in `haystack`.
std::vector<CharRange> find_all_ci(std::string_view haystack, std::string_view needle);
bool contains_ci(std::string_view haystack, std::string_view needle);

struct Token {
  std::string text;  // lower-cased
  std::size_t offset = 0;
};

// Splits on whitespace and punctuation, keeping numeric literals such as
// "0.5", "1/2" and "1,000" and unit forms like "m/s" intact.
std::vector<Token> tokenize(std::string_view s);

bool is_stop_word(std::string_view lower_word);

// Lower-cased content words with stop words and one-letter tokens removed,
// naively de-pluralized.
std::vector<std::string> content_words(std::string_view s);

std::size_t word_count(std::string_view s);

std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t value);

}  // namespace vicar::text
