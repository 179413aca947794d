#include "finsent/tokenizer.hpp"

#include <algorithm>

#include "finsent/errors.hpp"

namespace finsent {

namespace {

// Lowercase mapping: ASCII, Latin-1 supplement, Latin Extended-A. Codepoints
// outside these ranges pass through unchanged. See docs/tokenization.md.
uint32_t to_lower(uint32_t cp) {
    if (cp >= 'A' && cp <= 'Z') return cp + 0x20;
    if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 0x20;
    if (cp == 0x130) return 'i';  // I with dot above
    if (cp == 0x178) return 0xFF;  // Y with diaeresis
    if (cp >= 0x100 && cp <= 0x177) {
        // Alternating upper/lower pairs; uppercase codepoints are even in
        // 0x100-0x137 and 0x14A-0x177, odd in 0x139-0x148.
        if (cp <= 0x137 || cp >= 0x14A) return (cp % 2 == 0) ? cp + 1 : cp;
        return (cp % 2 == 1) ? cp + 1 : cp;
    }
    if (cp >= 0x179 && cp <= 0x17D) return (cp % 2 == 1) ? cp + 1 : cp;
    return cp;
}

// Accent stripping for lowercase Latin-1 / Latin Extended-A letters, applied
// after lowercasing. Returns 0 when the codepoint is a combining mark to be
// dropped. Letters without a listed base form pass through.
uint32_t strip_accent(uint32_t cp) {
    if (cp >= 0x300 && cp <= 0x36F) return 0;  // combining diacritical marks
    switch (cp) {
        case 0xE0: case 0xE1: case 0xE2: case 0xE3: case 0xE4: case 0xE5:
            return 'a';
        case 0xE7: return 'c';
        case 0xE8: case 0xE9: case 0xEA: case 0xEB: return 'e';
        case 0xEC: case 0xED: case 0xEE: case 0xEF: return 'i';
        case 0xF1: return 'n';
        case 0xF2: case 0xF3: case 0xF4: case 0xF5: case 0xF6: case 0xF8:
            return 'o';
        case 0xF9: case 0xFA: case 0xFB: case 0xFC: return 'u';
        case 0xFD: case 0xFF: return 'y';
        default: break;
    }
    if (cp >= 0x100 && cp <= 0x17E) {
        switch (cp) {
            case 0x101: case 0x103: case 0x105: return 'a';
            case 0x107: case 0x109: case 0x10B: case 0x10D: return 'c';
            case 0x10F: case 0x111: return 'd';
            case 0x113: case 0x115: case 0x117: case 0x119: case 0x11B: return 'e';
            case 0x11D: case 0x11F: case 0x121: case 0x123: return 'g';
            case 0x125: case 0x127: return 'h';
            case 0x129: case 0x12B: case 0x12D: case 0x12F: case 0x131: return 'i';
            case 0x135: return 'j';
            case 0x137: return 'k';
            case 0x13A: case 0x13C: case 0x13E: case 0x140: case 0x142: return 'l';
            case 0x144: case 0x146: case 0x148: return 'n';
            case 0x14D: case 0x14F: case 0x151: return 'o';
            case 0x155: case 0x157: case 0x159: return 'r';
            case 0x15B: case 0x15D: case 0x15F: case 0x161: return 's';
            case 0x163: case 0x165: case 0x167: return 't';
            case 0x169: case 0x16B: case 0x16D: case 0x16F: case 0x171: case 0x173: return 'u';
            case 0x175: return 'w';
            case 0x177: return 'y';
            case 0x17A: case 0x17C: case 0x17E: return 'z';
            default: break;
        }
    }
    return cp;
}

}  // namespace

bool is_whitespace_codepoint(uint32_t cp) {
    switch (cp) {
        case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
        case 0xA0: case 0x1680: case 0x2028: case 0x2029: case 0x202F:
        case 0x205F: case 0x3000:
            return true;
        default:
            return cp >= 0x2000 && cp <= 0x200A;
    }
}

bool is_control_codepoint(uint32_t cp) {
    if (is_whitespace_codepoint(cp)) return false;
    if (cp < 0x20 || (cp >= 0x7F && cp <= 0x9F)) return true;
    // Format characters (soft hyphen, zero-width and directional marks, BOM).
    if (cp == 0xAD) return true;
    if (cp >= 0x200B && cp <= 0x200F) return true;
    if (cp >= 0x202A && cp <= 0x202E) return true;
    if (cp >= 0x2060 && cp <= 0x2064) return true;
    if (cp == 0xFEFF) return true;
    return false;
}

bool is_punctuation_codepoint(uint32_t cp) {
    // ASCII punctuation and symbols.
    if ((cp >= 0x21 && cp <= 0x2F) || (cp >= 0x3A && cp <= 0x40) ||
        (cp >= 0x5B && cp <= 0x60) || (cp >= 0x7B && cp <= 0x7E)) {
        return true;
    }
    // Latin-1 punctuation.
    switch (cp) {
        case 0xA1: case 0xA7: case 0xAB: case 0xB6: case 0xB7: case 0xBB: case 0xBF:
            return true;
        default: break;
    }
    // General punctuation (excluding the space-like codepoints handled above).
    if (cp >= 0x2010 && cp <= 0x2027) return true;
    if (cp >= 0x2030 && cp <= 0x205E) return !is_whitespace_codepoint(cp);
    // Supplemental punctuation.
    if (cp >= 0x2E00 && cp <= 0x2E2E) return true;
    // CJK punctuation.
    if ((cp >= 0x3001 && cp <= 0x3003) || (cp >= 0x3008 && cp <= 0x3011) ||
        (cp >= 0x3014 && cp <= 0x301F) || cp == 0x3030) {
        return true;
    }
    // Fullwidth forms.
    if ((cp >= 0xFF01 && cp <= 0xFF0F) || (cp >= 0xFF1A && cp <= 0xFF20) ||
        (cp >= 0xFF3B && cp <= 0xFF40) || (cp >= 0xFF5B && cp <= 0xFF65)) {
        return true;
    }
    return false;
}

std::vector<uint32_t> utf8_decode(const std::string& text) {
    std::vector<uint32_t> out;
    out.reserve(text.size());
    const auto* s = reinterpret_cast<const unsigned char*>(text.data());
    const size_t n = text.size();
    size_t i = 0;
    while (i < n) {
        const unsigned char b = s[i];
        uint32_t cp = 0;
        size_t len = 0;
        if (b < 0x80) {
            cp = b;
            len = 1;
        } else if ((b & 0xE0) == 0xC0) {
            cp = b & 0x1F;
            len = 2;
        } else if ((b & 0xF0) == 0xE0) {
            cp = b & 0x0F;
            len = 3;
        } else if ((b & 0xF8) == 0xF0) {
            cp = b & 0x07;
            len = 4;
        } else {
            out.push_back(b);  // stray continuation byte: Latin-1 fallback
            ++i;
            continue;
        }
        if (i + len > n) {
            out.push_back(b);
            ++i;
            continue;
        }
        bool ok = true;
        for (size_t k = 1; k < len; ++k) {
            if ((s[i + k] & 0xC0) != 0x80) {
                ok = false;
                break;
            }
            cp = (cp << 6) | (s[i + k] & 0x3F);
        }
        if (!ok) {
            out.push_back(b);
            ++i;
            continue;
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

std::string utf8_encode_one(uint32_t cp) {
    std::string out;
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
    return out;
}

std::string utf8_encode(const std::vector<uint32_t>& codepoints) {
    std::string out;
    for (uint32_t cp : codepoints) out += utf8_encode_one(cp);
    return out;
}

std::vector<std::string> basic_tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::vector<uint32_t> word;
    auto flush = [&] {
        if (!word.empty()) {
            tokens.push_back(utf8_encode(word));
            word.clear();
        }
    };
    for (uint32_t raw : utf8_decode(text)) {
        if (is_control_codepoint(raw)) continue;
        uint32_t cp = strip_accent(to_lower(raw));
        if (cp == 0) continue;  // combining mark
        if (is_whitespace_codepoint(cp)) {
            flush();
        } else if (is_punctuation_codepoint(cp)) {
            flush();
            tokens.push_back(utf8_encode_one(cp));
        } else {
            word.push_back(cp);
        }
    }
    flush();
    return tokens;
}

std::vector<std::string> wordpiece(const std::string& word, const Vocabulary& vocab,
                                   int max_chars) {
    const std::string unk = vocab.token(Vocabulary::kUnkId);
    const std::vector<uint32_t> cps = utf8_decode(word);
    if (cps.empty() || static_cast<int>(cps.size()) > max_chars) return {unk};

    std::vector<std::string> pieces;
    size_t start = 0;
    while (start < cps.size()) {
        size_t end = cps.size();
        std::string match;
        while (start < end) {
            std::string candidate = start > 0 ? "##" : "";
            for (size_t i = start; i < end; ++i) candidate += utf8_encode_one(cps[i]);
            if (vocab.find(candidate)) {
                match = std::move(candidate);
                break;
            }
            --end;
        }
        if (match.empty()) return {unk};
        pieces.push_back(std::move(match));
        start = end;
    }
    return pieces;
}

std::vector<std::string> tokenize(const std::string& text, const Vocabulary& vocab) {
    std::vector<std::string> out;
    for (const auto& word : basic_tokenize(text)) {
        for (auto& piece : wordpiece(word, vocab)) out.push_back(std::move(piece));
    }
    return out;
}

int InputFeatures::live_length() const {
    int n = 0;
    for (int m : attention_mask) n += (m != 0);
    return n;
}

InputFeatures encode(const std::string& text_a, const std::optional<std::string>& text_b,
                     const Vocabulary& vocab, int max_seq_len) {
    const int min_len = text_b ? 5 : 3;
    if (max_seq_len < min_len) {
        throw ConfigError("encode: max_seq_len " + std::to_string(max_seq_len) +
                          " cannot hold the special tokens (need >= " +
                          std::to_string(min_len) + ")");
    }

    std::vector<std::string> tokens_a = tokenize(text_a, vocab);
    std::vector<std::string> tokens_b = text_b ? tokenize(*text_b, vocab) : std::vector<std::string>{};

    if (text_b) {
        // Trim the longer segment first, one token at a time from its tail.
        const size_t budget = static_cast<size_t>(max_seq_len) - 3;
        while (tokens_a.size() + tokens_b.size() > budget) {
            if (tokens_a.size() > tokens_b.size()) {
                tokens_a.pop_back();
            } else {
                tokens_b.pop_back();
            }
        }
    } else if (tokens_a.size() > static_cast<size_t>(max_seq_len) - 2) {
        tokens_a.resize(static_cast<size_t>(max_seq_len) - 2);
    }

    InputFeatures f;
    f.input_ids.reserve(max_seq_len);
    f.segment_ids.reserve(max_seq_len);
    f.input_ids.push_back(Vocabulary::kClsId);
    f.segment_ids.push_back(0);
    for (const auto& tok : tokens_a) {
        f.input_ids.push_back(vocab.id_or_unk(tok));
        f.segment_ids.push_back(0);
    }
    f.input_ids.push_back(Vocabulary::kSepId);
    f.segment_ids.push_back(0);
    if (text_b) {
        for (const auto& tok : tokens_b) {
            f.input_ids.push_back(vocab.id_or_unk(tok));
            f.segment_ids.push_back(1);
        }
        f.input_ids.push_back(Vocabulary::kSepId);
        f.segment_ids.push_back(1);
    }
    f.attention_mask.assign(f.input_ids.size(), 1);
    while (f.length() < max_seq_len) {
        f.input_ids.push_back(Vocabulary::kPadId);
        f.attention_mask.push_back(0);
        f.segment_ids.push_back(0);
    }
    return f;
}

std::string decode(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::vector<std::string> words;
    for (int id : ids) {
        const std::string& tok = vocab.token(id);  // range-checks
        if (vocab.is_special(id)) continue;
        if (tok.rfind("##", 0) == 0 && !words.empty()) {
            words.back() += tok.substr(2);
        } else if (tok.rfind("##", 0) == 0) {
            words.push_back(tok.substr(2));
        } else {
            words.push_back(tok);
        }
    }
    std::string out;
    for (size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

}  // namespace finsent
