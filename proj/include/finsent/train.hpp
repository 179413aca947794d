#pragma once

#include <array>
#include <string>
#include <vector>

#include "finsent/data.hpp"
#include "finsent/model.hpp"
#include "finsent/optimizer.hpp"
#include "finsent/vocab.hpp"

namespace finsent {

// ---------------------------------------------------------------------------
// Pretraining (joint masked-LM + next-sentence objective)

struct PretrainEpoch {
    int epoch = 0;  // 1-based
    double mlm_loss = 0.0;
    double nsp_loss = 0.0;
    double mlm_accuracy = 0.0;
    long masked_positions = 0;
};

struct PretrainResult {
    std::vector<PretrainEpoch> epochs;
};

/// Trains on sentence pairs drawn from the documents. Masks are resampled
/// each epoch; the per-epoch numbers come from an eval-mode pass over that
/// epoch's corrupted batches after its updates. When checkpoint_dir is
/// non-empty a checkpoint is written per epoch. Deterministic per cfg.seed.
PretrainResult pretrain(EncoderModel& model, const std::vector<std::vector<std::string>>& corpus,
                        const Vocabulary& vocab, const MaskingConfig& masking,
                        const TrainConfig& cfg, const std::string& checkpoint_dir = "");

// ---------------------------------------------------------------------------
// Fine-tuning (classification or regression)

struct FinetuneEpoch {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_metric = 0.0;  // accuracy (classification) or mse (regression)
    bool has_val = false;
    double val_loss = 0.0;
    double val_metric = 0.0;
};

struct FinetuneResult {
    std::vector<FinetuneEpoch> epochs;
    /// snapshots[0] is the model before training, snapshots[e] after epoch e
    /// (only filled when keep_snapshots; written to snapshot_dir when set).
    std::vector<EncoderModel> snapshots;
};

/// Discriminative layer-wise learning rates and the warmup schedule are
/// applied; optimizer steps fire every grad_accumulation_steps micro-batches
/// with gradient averaging. The masked-LM and next-sentence heads stay
/// frozen. Per-epoch numbers come from eval-mode passes.
FinetuneResult finetune(EncoderModel& model, const std::vector<Example>& train_examples,
                        const std::vector<Example>& val_examples, const Vocabulary& vocab,
                        const TrainConfig& cfg, TaskKind task,
                        const std::string& snapshot_dir = "", bool keep_snapshots = true);

// ---------------------------------------------------------------------------
// Masked-LM evaluation and the catastrophic-forgetting probe

struct MlmEvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
    long masked_positions = 0;
};

/// Evaluates masked-LM cross-entropy on the sentences with a mask realization
/// drawn deterministically from the seed (identical seeds, identical masks).
MlmEvalResult evaluate_mlm(const EncoderModel& model, const std::vector<std::string>& sentences,
                           const Vocabulary& vocab, const MaskingConfig& masking, int max_seq_len,
                           uint64_t seed);

struct ProbeRow {
    int snapshot = 0;
    double mlm_loss = 0.0;
    double mlm_accuracy = 0.0;
};

/// Runs evaluate_mlm over every snapshot with one shared mask realization,
/// giving the language-model loss trajectory across fine-tuning epochs.
std::vector<ProbeRow> forgetting_probe(const std::vector<EncoderModel>& snapshots,
                                       const std::vector<std::string>& eval_sentences,
                                       const Vocabulary& vocab, const MaskingConfig& masking,
                                       int max_seq_len, uint64_t seed);

// ---------------------------------------------------------------------------
// Depth sweep

struct DepthRow {
    int depth = 0;
    double loss = 0.0;
    double accuracy = 0.0;
};

/// Trains an independent classification model per depth (seed derived from
/// cfg.seed and the depth) and reports final loss and accuracy on the given
/// examples. Deterministic across runs.
std::vector<DepthRow> depth_sweep(const ModelConfig& base, const std::vector<int>& depths,
                                  const std::vector<Example>& examples, const Vocabulary& vocab,
                                  const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Evaluation / prediction plumbing shared with the CLI

struct ClassificationEval {
    std::vector<Label> truth;
    std::vector<Label> predicted;
    std::vector<double> losses;  // per-example cross entropy
};
ClassificationEval evaluate_classification(const EncoderModel& model,
                                           const std::vector<Example>& examples,
                                           const Vocabulary& vocab, int max_seq_len);

struct RegressionEvalData {
    std::vector<double> predictions;
    std::vector<double> targets;
};
RegressionEvalData evaluate_regression(const EncoderModel& model,
                                       const std::vector<Example>& examples,
                                       const Vocabulary& vocab, int max_seq_len);

struct Prediction {
    Label label = Label::Neutral;
    std::array<double, 3> probs = {0, 0, 0};  // [positive, negative, neutral]
};
Prediction predict_label(const EncoderModel& model, const Vocabulary& vocab,
                         const std::string& text, int max_seq_len);
double predict_score(const EncoderModel& model, const Vocabulary& vocab, const std::string& text,
                     int max_seq_len);

/// Appends one JSON-lines record {epoch, split, loss, metric_name,
/// metric_value} to the log at `path`.
void append_metrics_record(const std::string& path, int epoch, const std::string& split,
                           double loss, const std::string& metric_name, double metric_value);

/// Probe and sweep tables as TSV plus JSON.
void write_probe_tables(const std::vector<ProbeRow>& rows, const std::string& tsv_path,
                        const std::string& json_path);
void write_depth_tables(const std::vector<DepthRow>& rows, const std::string& tsv_path,
                        const std::string& json_path);

}  // namespace finsent
