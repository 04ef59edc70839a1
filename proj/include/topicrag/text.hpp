#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace topicrag::text {

// Decoded code points, or nullopt for malformed UTF-8 (overlongs, surrogates
// and truncated sequences included).
std::optional<std::u32string> decode_utf8(std::string_view s);
bool is_valid_utf8(std::string_view s);
void append_utf8(std::string& out, char32_t cp);
std::string encode_utf8(std::u32string_view cps);

// Number of code points; malformed bytes count as one each.
std::size_t code_point_count(std::string_view s);

bool is_space(char32_t cp);
// Han ideographs, kana and hangul: tokenized one character at a time.
bool is_cjk(char32_t cp);
bool is_punct(char32_t cp);
// Pictographs, dingbats, emoticon blocks and the joiners that glue them.
bool is_emoji(char32_t cp);

// Collapses every whitespace run (including U+3000) into one ASCII space and
// trims both ends. Input must be valid UTF-8.
std::string normalize_whitespace(std::string_view s);

struct Token {
  std::string text;
  std::size_t begin = 0;  // byte offsets into the source string
  std::size_t end = 0;
};

// Metric tokenizer: CJK characters and punctuation are single tokens, other
// runs split on whitespace. Invalid UTF-8 bytes become single-byte tokens.
std::vector<Token> tokenize_with_offsets(std::string_view s);
std::vector<std::string> tokenize(std::string_view s);

// Sentence spans split after 。！？!?；; newlines, or '.' followed by space/end.
// Each span is trimmed of surrounding whitespace; empty spans are dropped.
std::vector<std::string> split_sentences(std::string_view s);

std::string trim(std::string_view s);

}  // namespace topicrag::text
