#include "finsent/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "finsent/errors.hpp"
#include "finsent/tokenizer.hpp"

namespace finsent {

const std::vector<std::string>& Vocabulary::special_tokens() {
    static const std::vector<std::string> specials = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                                      "[MASK]"};
    return specials;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    const auto& specials = special_tokens();
    if (tokens_.size() < specials.size()) {
        throw DataError("vocabulary must contain the five reserved tokens");
    }
    for (size_t i = 0; i < specials.size(); ++i) {
        if (tokens_[i] != specials[i]) {
            throw DataError("vocabulary token " + std::to_string(i) + " must be " + specials[i] +
                            ", got '" + tokens_[i] + "'");
        }
    }
    index_.reserve(tokens_.size());
    for (size_t i = 0; i < tokens_.size(); ++i) {
        const std::string& tok = tokens_[i];
        if (tok.empty()) {
            throw DataError("vocabulary line " + std::to_string(i) + " is empty");
        }
        for (uint32_t cp : utf8_decode(tok)) {
            if (is_whitespace_codepoint(cp)) {
                throw DataError("vocabulary token '" + tok + "' contains whitespace");
            }
        }
        if (!index_.emplace(tok, static_cast<int>(i)).second) {
            throw DataError("duplicate vocabulary token '" + tok + "'");
        }
    }
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open vocabulary file " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        tokens.push_back(line);
    }
    return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary file " + path);
    for (const auto& tok : tokens_) out << tok << '\n';
}

std::optional<int> Vocabulary::find(const std::string& token) const {
    const auto it = index_.find(token);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

int Vocabulary::id_or_unk(const std::string& token) const {
    const auto it = index_.find(token);
    return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) {
        throw ContractError("vocabulary id " + std::to_string(id) + " out of range [0, " +
                            std::to_string(size()) + ")");
    }
    return tokens_[static_cast<size_t>(id)];
}

Vocabulary build_vocab(const std::vector<std::string>& corpus_lines, int target_size,
                       int min_freq) {
    if (target_size <= Vocabulary::kNumSpecial) {
        throw ConfigError("build_vocab: target_size " + std::to_string(target_size) +
                          " leaves no room beyond the reserved tokens");
    }

    std::map<std::string, long> counts;
    std::set<uint32_t> chars;
    for (const auto& line : corpus_lines) {
        for (auto& tok : basic_tokenize(line)) {
            for (uint32_t cp : utf8_decode(tok)) chars.insert(cp);
            ++counts[tok];
        }
    }
    if (counts.empty()) throw DataError("build_vocab: corpus contains no tokens");

    std::vector<std::pair<long, std::string>> by_freq;
    by_freq.reserve(counts.size());
    for (const auto& [tok, cnt] : counts) {
        if (cnt >= min_freq) by_freq.emplace_back(cnt, tok);
    }
    std::sort(by_freq.begin(), by_freq.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });

    std::vector<std::string> tokens = Vocabulary::special_tokens();
    std::set<std::string> seen(tokens.begin(), tokens.end());
    for (const auto& [cnt, tok] : by_freq) {
        (void)cnt;
        if (seen.insert(tok).second) tokens.push_back(tok);
    }
    // Character fallback pieces; keeps every word splittable.
    for (uint32_t cp : chars) {
        const std::string one = utf8_encode_one(cp);
        if (seen.insert(one).second) tokens.push_back(one);
        const std::string cont = "##" + one;
        if (seen.insert(cont).second) tokens.push_back(cont);
    }
    if (static_cast<int>(tokens.size()) > target_size) {
        tokens.resize(static_cast<size_t>(target_size));
    }
    return Vocabulary(std::move(tokens));
}

}  // namespace finsent
