#pragma once

// Deterministic whitespace-plus-punctuation tokenizer.
//
// Rules (fixed contract, token counts depend on nothing else):
//   - ASCII whitespace separates tokens and is discarded.
//   - A word token is a maximal run of word bytes: ASCII alphanumerics plus
//     any byte >= 0x80 (multi-byte UTF-8 sequences stay in one token).
//   - Every other byte (punctuation, symbols, '_') is a single-byte token.

#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace nlm {

inline bool is_space_byte(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline bool is_word_byte(unsigned char c) {
    return std::isalnum(c) != 0 || c >= 0x80;
}

inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    size_t i = 0;
    const size_t n = text.size();
    while (i < n) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        if (is_space_byte(c)) {
            ++i;
            continue;
        }
        if (is_word_byte(c)) {
            size_t j = i + 1;
            while (j < n && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
            tokens.emplace_back(text.substr(i, j - i));
            i = j;
        } else {
            tokens.emplace_back(text.substr(i, 1));
            ++i;
        }
    }
    return tokens;
}

// Token count without materializing the tokens.
inline size_t count_tokens(std::string_view text) {
    size_t count = 0;
    size_t i = 0;
    const size_t n = text.size();
    while (i < n) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        if (is_space_byte(c)) {
            ++i;
        } else if (is_word_byte(c)) {
            ++count;
            ++i;
            while (i < n && is_word_byte(static_cast<unsigned char>(text[i]))) ++i;
        } else {
            ++count;
            ++i;
        }
    }
    return count;
}

}  // namespace nlm
