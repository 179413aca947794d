#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace finsent {

/// Token <-> id bijection. Ids are dense in [0, size) and equal the line
/// index of the vocabulary file. The five reserved tokens sit at fixed ids.
/// Immutable after construction and safe to share across threads.
class Vocabulary {
public:
    static constexpr int kPadId = 0;
    static constexpr int kUnkId = 1;
    static constexpr int kClsId = 2;
    static constexpr int kSepId = 3;
    static constexpr int kMaskId = 4;
    static constexpr int kNumSpecial = 5;

    static const std::vector<std::string>& special_tokens();

    /// Validates the reserved tokens, uniqueness, and that no token contains
    /// whitespace. Throws DataError on violation.
    explicit Vocabulary(std::vector<std::string> tokens);

    /// Vocabulary file: UTF-8, one token per line, LF endings, line = id.
    static Vocabulary load(const std::string& path);
    void save(const std::string& path) const;

    int size() const { return static_cast<int>(tokens_.size()); }
    std::optional<int> find(const std::string& token) const;
    int id_or_unk(const std::string& token) const;
    const std::string& token(int id) const;
    bool is_special(int id) const { return id >= 0 && id < kNumSpecial; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

/// Builds a vocabulary from a line-oriented corpus: reserved tokens first,
/// then whole words by descending frequency (ties broken lexicographically),
/// then "c" / "##c" pieces for every character seen so single characters can
/// always back off, truncated to target_size. Deterministic.
Vocabulary build_vocab(const std::vector<std::string>& corpus_lines, int target_size,
                       int min_freq);

}  // namespace finsent
