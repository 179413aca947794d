#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "finsent/vocab.hpp"

namespace finsent {

/// Fixed-length encoder input: ids, attention mask and segment ids, all of
/// length max_seq_len. input_ids[0] is [CLS]; the mask is a prefix of ones
/// covering exactly the non-[PAD] positions; segment ids are 0 for the first
/// segment (including [CLS] and its [SEP]) and 1 for the second.
struct InputFeatures {
    std::vector<int> input_ids;
    std::vector<int> attention_mask;
    std::vector<int> segment_ids;

    int length() const { return static_cast<int>(input_ids.size()); }
    int live_length() const;
};

/// Lowercases, strips accents and control characters, splits on whitespace
/// and makes every punctuation character its own token. The exact character
/// tables are listed in docs/tokenization.md. Empty text gives an empty list.
std::vector<std::string> basic_tokenize(const std::string& text);

/// Greedy longest-match-first subword split. Continuations carry the "##"
/// prefix. Words with an unmatchable position, and words longer than
/// max_chars codepoints, map to [UNK].
std::vector<std::string> wordpiece(const std::string& word, const Vocabulary& vocab,
                                   int max_chars = 100);

/// basic_tokenize followed by wordpiece on each token.
std::vector<std::string> tokenize(const std::string& text, const Vocabulary& vocab);

/// Lays out [CLS] A [SEP] (B [SEP]), truncating the longer segment first for
/// pairs and the tail for single texts, then pads. Throws ConfigError when
/// max_seq_len cannot hold the special tokens (3 single / 5 paired).
InputFeatures encode(const std::string& text_a, const std::optional<std::string>& text_b,
                     const Vocabulary& vocab, int max_seq_len);

/// Inverse of encode for display: reserved tokens are omitted and "##"
/// continuations are joined to their predecessor.
std::string decode(const std::vector<int>& ids, const Vocabulary& vocab);

// Character classes used by the basic tokenizer; exposed for tests and for
// vocabulary token validation.
bool is_whitespace_codepoint(uint32_t cp);
bool is_control_codepoint(uint32_t cp);
bool is_punctuation_codepoint(uint32_t cp);

// UTF-8 helpers shared by tokenizer and vocabulary induction. Invalid bytes
// are decoded as their Latin-1 codepoint so arbitrary input never fails.
std::vector<uint32_t> utf8_decode(const std::string& text);
std::string utf8_encode(const std::vector<uint32_t>& codepoints);
std::string utf8_encode_one(uint32_t cp);

}  // namespace finsent
