#include "finsent/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "finsent/errors.hpp"

namespace finsent {

std::string label_name(Label label) {
    switch (label) {
        case Label::Positive: return "positive";
        case Label::Negative: return "negative";
        case Label::Neutral: return "neutral";
    }
    throw ContractError("label_name: invalid label value");
}

std::optional<Label> label_from_name(const std::string& name) {
    if (name == "positive") return Label::Positive;
    if (name == "negative") return Label::Negative;
    if (name == "neutral") return Label::Neutral;
    return std::nullopt;
}

void MaskingConfig::validate() const {
    if (mask_percent < 0.0 || mask_percent > 100.0) {
        throw ConfigError("MaskingConfig: mask_percent must be in [0, 100]");
    }
    auto prob = [](double p, const char* name) {
        if (p < 0.0 || p > 1.0) {
            throw ConfigError(std::string("MaskingConfig: ") + name + " must be in [0, 1]");
        }
    };
    prob(replace_with_mask, "replace_with_mask");
    prob(replace_with_random, "replace_with_random");
    prob(keep_original, "keep_original");
    const double total = replace_with_mask + replace_with_random + keep_original;
    if (std::fabs(total - 1.0) > 1e-9) {
        throw ConfigError("MaskingConfig: action probabilities sum to " + std::to_string(total) +
                          ", expected 1");
    }
}

namespace {

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open data file " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

std::string guid_stem(const std::string& path) {
    return std::filesystem::path(path).stem().string();
}

}  // namespace

std::vector<Example> load_labeled(const std::string& path, LabeledFormat format) {
    const std::vector<std::string> lines = read_lines(path);
    const std::string stem = guid_stem(path);
    std::vector<Example> out;
    for (size_t i = 0; i < lines.size(); ++i) {
        const std::string& line = lines[i];
        if (line.empty()) continue;
        const size_t sep = format == LabeledFormat::Tsv ? line.find('\t') : line.rfind('@');
        if (sep == std::string::npos) {
            throw DataError(path + ":" + std::to_string(i + 1) + ": missing " +
                            (format == LabeledFormat::Tsv ? "tab" : "'@'") + " separator");
        }
        const std::string text = line.substr(0, sep);
        const std::string raw_label = line.substr(sep + 1);
        const auto label = label_from_name(raw_label);
        if (!label) {
            throw DataError(path + ":" + std::to_string(i + 1) + ": unknown label '" + raw_label +
                            "'");
        }
        Example ex;
        ex.guid = stem + "-" + std::to_string(i + 1);
        ex.text = text;
        ex.label = *label;
        out.push_back(std::move(ex));
    }
    if (out.empty()) throw DataError(path + ": no labeled examples");
    return out;
}

std::vector<Example> load_scored(const std::string& path) {
    const std::vector<std::string> lines = read_lines(path);
    const std::string stem = guid_stem(path);
    std::vector<Example> out;
    for (size_t i = 0; i < lines.size(); ++i) {
        const std::string& line = lines[i];
        if (line.empty()) continue;
        const size_t sep = line.find('\t');
        if (sep == std::string::npos) {
            throw DataError(path + ":" + std::to_string(i + 1) + ": missing tab separator");
        }
        const std::string text = line.substr(0, sep);
        const std::string raw = line.substr(sep + 1);
        float score = 0.0f;
        try {
            size_t used = 0;
            score = std::stof(raw, &used);
            if (used != raw.size()) throw std::invalid_argument(raw);
        } catch (const std::exception&) {
            throw DataError(path + ":" + std::to_string(i + 1) + ": score '" + raw +
                            "' is not a number");
        }
        if (score < -1.0f || score > 1.0f) {
            throw DataError(path + ":" + std::to_string(i + 1) + ": score " + raw +
                            " outside [-1, 1]");
        }
        Example ex;
        ex.guid = stem + "-" + std::to_string(i + 1);
        ex.text = text;
        ex.score = score;
        out.push_back(std::move(ex));
    }
    if (out.empty()) throw DataError(path + ": no scored examples");
    return out;
}

std::vector<std::vector<std::string>> load_corpus_documents(const std::string& path) {
    const std::vector<std::string> lines = read_lines(path);
    std::vector<std::vector<std::string>> docs;
    std::vector<std::string> current;
    for (const auto& line : lines) {
        const bool blank = line.find_first_not_of(" \t") == std::string::npos;
        if (blank) {
            if (!current.empty()) docs.push_back(std::move(current));
            current.clear();
        } else {
            current.push_back(line);
        }
    }
    if (!current.empty()) docs.push_back(std::move(current));
    if (docs.empty()) throw DataError(path + ": empty corpus");
    return docs;
}

std::vector<std::string> flatten_documents(const std::vector<std::vector<std::string>>& docs) {
    std::vector<std::string> out;
    for (const auto& doc : docs) out.insert(out.end(), doc.begin(), doc.end());
    return out;
}

std::pair<std::vector<int>, std::vector<int>> make_mlm_example(const std::vector<int>& ids,
                                                               const MaskingConfig& cfg,
                                                               const Vocabulary& vocab, Rng& rng) {
    cfg.validate();
    std::vector<int> corrupted = ids;
    std::vector<int> targets(ids.size(), kMlmIgnoreId);
    const double select_p = cfg.mask_percent / 100.0;
    const int non_special = vocab.size() - Vocabulary::kNumSpecial;
    for (size_t i = 0; i < ids.size(); ++i) {
        const int id = ids[i];
        if (id == Vocabulary::kClsId || id == Vocabulary::kSepId || id == Vocabulary::kPadId) {
            continue;
        }
        if (rng.next_double() >= select_p) continue;
        targets[i] = id;
        const double action = rng.next_double();
        if (action < cfg.replace_with_mask) {
            corrupted[i] = Vocabulary::kMaskId;
        } else if (action < cfg.replace_with_mask + cfg.replace_with_random && non_special > 0) {
            corrupted[i] =
                Vocabulary::kNumSpecial + static_cast<int>(rng.next_below(non_special));
        }
        // else: keep the original token
    }
    return {std::move(corrupted), std::move(targets)};
}

std::vector<SentencePair> make_nsp_pairs(const std::vector<std::vector<std::string>>& documents,
                                         Rng& rng) {
    if (documents.size() < 2) {
        throw DataError("make_nsp_pairs: need at least 2 documents to draw negatives");
    }
    struct Anchor {
        int doc;
        int sent;
    };
    std::vector<Anchor> anchors;
    for (size_t d = 0; d < documents.size(); ++d) {
        for (size_t s = 0; s + 1 < documents[d].size(); ++s) {
            anchors.push_back({static_cast<int>(d), static_cast<int>(s)});
        }
    }
    if (anchors.empty()) {
        throw DataError("make_nsp_pairs: no document has two consecutive sentences");
    }
    std::vector<SentencePair> pairs;
    pairs.reserve(anchors.size());
    for (size_t i = 0; i < anchors.size(); ++i) {
        const Anchor& a = anchors[i];
        SentencePair pair;
        pair.text_a = documents[a.doc][a.sent];
        if (i % 2 == 0) {
            pair.text_b = documents[a.doc][a.sent + 1];
            pair.is_next = 1;
        } else {
            // uniform over the other documents, then over their sentences
            int other = static_cast<int>(rng.next_below(documents.size() - 1));
            if (other >= a.doc) ++other;
            const auto& doc = documents[other];
            pair.text_b = doc[rng.next_below(doc.size())];
            pair.is_next = 0;
        }
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

std::vector<Batch> make_loader(const std::vector<Example>& examples, const Vocabulary& vocab,
                               int max_seq_len, int batch_size, bool shuffle, uint64_t seed) {
    if (batch_size < 1) throw ConfigError("make_loader: batch_size must be >= 1");
    std::vector<size_t> order(examples.size());
    std::iota(order.begin(), order.end(), size_t{0});
    if (shuffle) {
        Rng rng(seed);
        rng.shuffle(order);
    }
    std::vector<Batch> batches;
    for (size_t start = 0; start < order.size(); start += batch_size) {
        Batch batch;
        const size_t end = std::min(order.size(), start + batch_size);
        for (size_t i = start; i < end; ++i) {
            const Example& ex = examples[order[i]];
            batch.features.push_back(encode(ex.text, std::nullopt, vocab, max_seq_len));
            if (ex.label) batch.labels.push_back(static_cast<int>(*ex.label));
            if (ex.score) batch.scores.push_back(*ex.score);
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

namespace {

uint64_t fnv1a(const std::string& s) {
    uint64_t hash = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        hash ^= c;
        hash *= 0x100000001B3ull;
    }
    return hash;
}

}  // namespace

SplitExamples split_examples(const std::vector<Example>& examples, double train_frac,
                             double val_frac, double test_frac) {
    if (train_frac < 0 || val_frac < 0 || test_frac < 0 ||
        std::fabs(train_frac + val_frac + test_frac - 1.0) > 1e-9) {
        throw ConfigError("split_examples: fractions must be non-negative and sum to 1");
    }
    SplitExamples out;
    for (const Example& ex : examples) {
        // bucket in [0,1) from the guid hash; stable across runs and files
        const double u = static_cast<double>(fnv1a(ex.guid) >> 11) * 0x1.0p-53;
        if (u < train_frac) {
            out.train.push_back(ex);
        } else if (u < train_frac + val_frac) {
            out.validation.push_back(ex);
        } else {
            out.test.push_back(ex);
        }
    }
    return out;
}

}  // namespace finsent
