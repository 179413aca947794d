#pragma once

#include <optional>
#include <string>
#include <vector>

#include "finsent/rng.hpp"
#include "finsent/tokenizer.hpp"
#include "finsent/vocab.hpp"

namespace finsent {

/// Sentiment classes in the fixed logit order.
enum class Label { Positive = 0, Negative = 1, Neutral = 2 };

std::string label_name(Label label);
std::optional<Label> label_from_name(const std::string& name);

/// One ingested sentence. Supervised examples carry exactly one of label /
/// score; corpus lines carry neither.
struct Example {
    std::string guid;
    std::string text;
    std::optional<Label> label;
    std::optional<float> score;  // in [-1, 1]
};

/// Masked-LM corruption parameters: k percent of maskable positions are
/// selected; a selected position becomes [MASK] / a random non-special token
/// / stays unchanged with the three probabilities (which must sum to 1).
struct MaskingConfig {
    double mask_percent = 15.0;
    double replace_with_mask = 0.8;
    double replace_with_random = 0.1;
    double keep_original = 0.1;

    void validate() const;  // throws ConfigError
};

/// Target value marking unmasked positions in masked-LM target sequences.
constexpr int kMlmIgnoreId = -1;

/// Stacked features plus whichever supervision the batch carries.
struct Batch {
    std::vector<InputFeatures> features;
    std::vector<int> labels;                  // classification
    std::vector<float> scores;                // regression
    std::vector<std::vector<int>> mlm_targets;  // kMlmIgnoreId where unmasked
    std::vector<int> nsp_labels;

    int size() const { return static_cast<int>(features.size()); }
};

enum class LabeledFormat { Tsv, AtSeparated };

/// `sentence<TAB>label` per line (or `sentence@label`, last '@' separating).
/// Labels must be one of positive/negative/neutral; violations raise
/// DataError naming the line.
std::vector<Example> load_labeled(const std::string& path, LabeledFormat format);

/// `sentence<TAB>score` with scores in [-1, 1].
std::vector<Example> load_scored(const std::string& path);

/// One sentence per line; blank lines separate documents.
std::vector<std::vector<std::string>> load_corpus_documents(const std::string& path);

/// Flattens documents to plain sentences (masked-LM evaluation corpora).
std::vector<std::string> flatten_documents(const std::vector<std::vector<std::string>>& docs);

/// Corrupts token ids for masked-LM training. [CLS]/[SEP]/[PAD] positions are
/// never selected. Returns (corrupted ids, targets with kMlmIgnoreId at
/// unselected positions).
std::pair<std::vector<int>, std::vector<int>> make_mlm_example(const std::vector<int>& ids,
                                                               const MaskingConfig& cfg,
                                                               const Vocabulary& vocab, Rng& rng);

struct SentencePair {
    std::string text_a;
    std::string text_b;
    int is_next = 0;  // 1 = contiguous pair, 0 = text_b drawn from another document
};

/// Builds next-sentence pairs: one pair per consecutive sentence anchor,
/// alternating true/negative so the labels balance within one. Negatives
/// draw text_b from a uniformly chosen different document.
std::vector<SentencePair> make_nsp_pairs(const std::vector<std::vector<std::string>>& documents,
                                         Rng& rng);

/// Encodes supervised examples and batches them. The final short batch is
/// kept. Shuffling permutes examples deterministically per seed.
std::vector<Batch> make_loader(const std::vector<Example>& examples, const Vocabulary& vocab,
                               int max_seq_len, int batch_size, bool shuffle, uint64_t seed);

/// Deterministic guid-hash split (FNV-1a over the guid, bucketed by the
/// cumulative fractions). Fractions must be non-negative and sum to 1.
struct SplitExamples {
    std::vector<Example> train, validation, test;
};
SplitExamples split_examples(const std::vector<Example>& examples, double train_frac,
                             double val_frac, double test_frac);

}  // namespace finsent
