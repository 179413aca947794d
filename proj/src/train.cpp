#include "finsent/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "finsent/checkpoint.hpp"
#include "finsent/errors.hpp"
#include "finsent/tape.hpp"

namespace finsent {

namespace {

// Salt constants for deriving independent RNG streams from one seed.
constexpr uint64_t kSaltPairs = 0x70616972;    // nsp pair construction
constexpr uint64_t kSaltShuffle = 0x73687566;  // per-epoch example order
constexpr uint64_t kSaltMask = 0x6d61736b;     // per-epoch mask draws
constexpr uint64_t kSaltDropout = 0x64726f70;  // per-epoch dropout draws
constexpr uint64_t kSaltEval = 0x6576616c;     // evaluation mask realization

uint64_t epoch_seed(uint64_t base, uint64_t salt, int epoch) {
    return Rng::derive(Rng::derive(base, salt), static_cast<uint64_t>(epoch));
}

std::vector<Param*> trainable_params(EncoderModel& model, bool include_pretrain_heads,
                                     bool include_task_head) {
    std::vector<Param*> out;
    for (Param* p : model.parameters()) {
        switch (p->group) {
            case ParamGroup::Embeddings:
            case ParamGroup::Layer:
            case ParamGroup::Pooler:
                out.push_back(p);
                break;
            case ParamGroup::MlmHead:
            case ParamGroup::NspHead:
                if (include_pretrain_heads) out.push_back(p);
                break;
            case ParamGroup::TaskHead:
                if (include_task_head) out.push_back(p);
                break;
        }
    }
    return out;
}

// Accumulates per-example gradient sums and fires averaged optimizer steps
// every grad_accumulation_steps micro-batches.
class StepDriver {
public:
    StepDriver(std::vector<Param*> params, std::vector<double> scales, const TrainConfig& cfg,
               long total_steps)
        : params_(std::move(params)),
          scales_(std::move(scales)),
          cfg_(cfg),
          total_steps_(total_steps) {
        for (Param* p : params_) p->grad.fill(0.0f);
    }

    void micro_batch_done(long examples) {
        pending_examples_ += examples;
        pending_micro_ += 1;
        if (pending_micro_ >= cfg_.grad_accumulation_steps) flush();
    }

    void finish_epoch() {
        if (pending_micro_ > 0) flush();
    }

    long steps_taken() const { return state_.step; }

private:
    void flush() {
        if (pending_examples_ > 0) {
            const float inv = 1.0f / static_cast<float>(pending_examples_);
            for (Param* p : params_) {
                for (float& g : p->grad.data) g *= inv;
            }
            const double lr =
                lr_schedule(state_.step, total_steps_, cfg_.warmup_proportion, cfg_.base_lr);
            adam_step(params_, state_, lr, scales_, cfg_);
        }
        for (Param* p : params_) p->grad.fill(0.0f);
        pending_examples_ = 0;
        pending_micro_ = 0;
    }

    std::vector<Param*> params_;
    std::vector<double> scales_;
    const TrainConfig& cfg_;
    long total_steps_;
    OptimizerState state_;
    long pending_examples_ = 0;
    int pending_micro_ = 0;
};

long optimizer_steps_per_epoch(long examples, const TrainConfig& cfg) {
    const long micro = (examples + cfg.batch_size - 1) / cfg.batch_size;
    return (micro + cfg.grad_accumulation_steps - 1) / cfg.grad_accumulation_steps;
}

struct PretrainItem {
    InputFeatures features;   // with corrupted ids
    std::vector<int> mlm_positions;
    std::vector<int> mlm_targets;
    int nsp_label = 0;
};

PretrainItem build_pretrain_item(const SentencePair& pair, const Vocabulary& vocab,
                                 const MaskingConfig& masking, int max_seq_len, Rng& mask_rng) {
    PretrainItem item;
    item.features = encode(pair.text_a, pair.text_b, vocab, max_seq_len);
    auto [corrupted, targets] =
        make_mlm_example(item.features.input_ids, masking, vocab, mask_rng);
    item.features.input_ids = std::move(corrupted);
    for (size_t i = 0; i < targets.size(); ++i) {
        if (targets[i] != kMlmIgnoreId) {
            item.mlm_positions.push_back(static_cast<int>(i));
            item.mlm_targets.push_back(targets[i]);
        }
    }
    item.nsp_label = pair.is_next;
    return item;
}

struct PretrainItemEval {
    double mlm_loss = 0.0;
    bool has_mlm = false;
    double nsp_loss = 0.0;
    long mlm_correct = 0;
    long mlm_total = 0;
};

PretrainItemEval eval_pretrain_item(const EncoderModel& model, const PretrainItem& item) {
    Tape tape;
    Rng rng(0);
    const EncoderOutput out = model.forward(tape, item.features, false, rng);
    PretrainItemEval r;
    if (!item.mlm_positions.empty()) {
        const Var logits = model.mlm_logits(tape, out.sequence_states, item.mlm_positions);
        r.mlm_loss = tape.value(tape.cross_entropy(logits, item.mlm_targets)).data[0];
        r.has_mlm = true;
        const Tensor& lv = tape.value(logits);
        for (int i = 0; i < lv.rows(); ++i) {
            int best = 0;
            for (int j = 1; j < lv.cols(); ++j) {
                if (lv.at(i, j) > lv.at(i, best)) best = j;
            }
            r.mlm_correct += (best == item.mlm_targets[i]);
            r.mlm_total += 1;
        }
    }
    const Var nsp = model.nsp_logits(tape, out.pooled);
    r.nsp_loss = tape.value(tape.cross_entropy(nsp, {item.nsp_label})).data[0];
    return r;
}

void ensure_dir(const std::string& dir) {
    if (!dir.empty()) std::filesystem::create_directories(dir);
}

}  // namespace

PretrainResult pretrain(EncoderModel& model, const std::vector<std::vector<std::string>>& corpus,
                        const Vocabulary& vocab, const MaskingConfig& masking,
                        const TrainConfig& cfg, const std::string& checkpoint_dir) {
    cfg.validate();
    masking.validate();
    if (corpus.empty()) throw DataError("pretrain: empty corpus");
    ensure_dir(checkpoint_dir);

    model.cfg.dropout_prob = static_cast<float>(cfg.dropout);
    model.cfg.attention_dropout_prob = static_cast<float>(cfg.dropout);

    Rng pair_rng(Rng::derive(cfg.seed, kSaltPairs));
    const std::vector<SentencePair> pairs = make_nsp_pairs(corpus, pair_rng);

    const long total_steps =
        std::max<long>(1, cfg.epochs * optimizer_steps_per_epoch(pairs.size(), cfg));
    StepDriver driver(trainable_params(model, true, false), {}, cfg, total_steps);

    PretrainResult result;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<size_t> order(pairs.size());
        std::iota(order.begin(), order.end(), size_t{0});
        Rng shuffle_rng(epoch_seed(cfg.seed, kSaltShuffle, epoch));
        shuffle_rng.shuffle(order);

        Rng mask_rng(epoch_seed(cfg.seed, kSaltMask, epoch));
        Rng dropout_rng(epoch_seed(cfg.seed, kSaltDropout, epoch));

        std::vector<PretrainItem> items;
        items.reserve(pairs.size());
        for (size_t idx : order) {
            items.push_back(
                build_pretrain_item(pairs[idx], vocab, masking, cfg.max_seq_len, mask_rng));
        }

        for (size_t start = 0; start < items.size(); start += cfg.batch_size) {
            const size_t end = std::min(items.size(), start + cfg.batch_size);
            for (size_t i = start; i < end; ++i) {
                const PretrainItem& item = items[i];
                Tape tape;
                const EncoderOutput out = model.forward(tape, item.features, true, dropout_rng);
                Var loss{-1};
                if (!item.mlm_positions.empty()) {
                    const Var logits =
                        model.mlm_logits(tape, out.sequence_states, item.mlm_positions);
                    loss = tape.cross_entropy(logits, item.mlm_targets);
                }
                const Var nsp_loss =
                    tape.cross_entropy(model.nsp_logits(tape, out.pooled), {item.nsp_label});
                loss = loss.valid() ? tape.add(loss, nsp_loss) : nsp_loss;
                tape.backward(loss);
            }
            driver.micro_batch_done(static_cast<long>(end - start));
        }
        driver.finish_epoch();

        PretrainEpoch record;
        record.epoch = epoch;
        double mlm_sum = 0.0, nsp_sum = 0.0;
        long mlm_examples = 0, correct = 0;
        for (const PretrainItem& item : items) {
            const PretrainItemEval ev = eval_pretrain_item(model, item);
            if (ev.has_mlm) {
                mlm_sum += ev.mlm_loss;
                mlm_examples += 1;
            }
            nsp_sum += ev.nsp_loss;
            correct += ev.mlm_correct;
            record.masked_positions += ev.mlm_total;
        }
        record.mlm_loss = mlm_examples > 0 ? mlm_sum / mlm_examples : 0.0;
        record.nsp_loss = items.empty() ? 0.0 : nsp_sum / static_cast<double>(items.size());
        record.mlm_accuracy = record.masked_positions > 0
                                  ? static_cast<double>(correct) / record.masked_positions
                                  : 0.0;
        result.epochs.push_back(record);

        if (!checkpoint_dir.empty()) {
            save_checkpoint(model, checkpoint_dir + "/pretrain-epoch-" + std::to_string(epoch) +
                                       ".fsb");
        }
    }
    return result;
}

namespace {

double classification_example_loss(const EncoderModel& model, const InputFeatures& features,
                                   int label, bool training, Rng& rng, bool* correct) {
    Tape tape;
    const EncoderOutput out = model.forward(tape, features, training, rng);
    const Var logits = model.classify(tape, out.pooled, training, rng);
    const Var loss = tape.cross_entropy(logits, {label});
    if (correct) {
        const Tensor& lv = tape.value(logits);
        int best = 0;
        for (int j = 1; j < 3; ++j) {
            if (lv.at(0, j) > lv.at(0, best)) best = j;
        }
        *correct = (best == label);
    }
    if (training) tape.backward(loss);
    return tape.value(loss).data[0];
}

double regression_example_loss(const EncoderModel& model, const InputFeatures& features,
                               float target, bool training, Rng& rng, double* prediction) {
    Tape tape;
    const EncoderOutput out = model.forward(tape, features, training, rng);
    const Var pred = model.regress(tape, out.pooled, training, rng);
    if (prediction) *prediction = tape.value(pred).data[0];
    const Var loss = tape.mse(pred, Tensor({1, 1}, {target}));
    if (training) tape.backward(loss);
    return tape.value(loss).data[0];
}

void check_examples_match_task(const std::vector<Example>& examples, TaskKind task,
                               const char* who) {
    for (const Example& ex : examples) {
        if (task == TaskKind::Classification && !ex.label) {
            throw DataError(std::string(who) + ": example '" + ex.guid +
                            "' has no class label for classification");
        }
        if (task == TaskKind::Regression && !ex.score) {
            throw DataError(std::string(who) + ": example '" + ex.guid +
                            "' has no score for regression");
        }
    }
}

std::pair<double, double> eval_supervised(const EncoderModel& model,
                                          const std::vector<Example>& examples,
                                          const Vocabulary& vocab, int max_seq_len,
                                          TaskKind task) {
    Rng rng(0);
    double loss_sum = 0.0;
    long correct = 0;
    for (const Example& ex : examples) {
        const InputFeatures features = encode(ex.text, std::nullopt, vocab, max_seq_len);
        if (task == TaskKind::Classification) {
            bool ok = false;
            loss_sum += classification_example_loss(model, features,
                                                    static_cast<int>(*ex.label), false, rng, &ok);
            correct += ok;
        } else {
            loss_sum += regression_example_loss(model, features, *ex.score, false, rng, nullptr);
        }
    }
    const double n = static_cast<double>(examples.size());
    const double mean_loss = examples.empty() ? 0.0 : loss_sum / n;
    const double metric =
        task == TaskKind::Classification ? (examples.empty() ? 0.0 : correct / n) : mean_loss;
    return {mean_loss, metric};
}

}  // namespace

FinetuneResult finetune(EncoderModel& model, const std::vector<Example>& train_examples,
                        const std::vector<Example>& val_examples, const Vocabulary& vocab,
                        const TrainConfig& cfg, TaskKind task, const std::string& snapshot_dir,
                        bool keep_snapshots) {
    cfg.validate();
    if (task != model.task) {
        throw ModeError(std::string("finetune: model task head is ") + task_kind_name(model.task) +
                        ", requested " + task_kind_name(task));
    }
    if (train_examples.empty()) throw DataError("finetune: no training examples");
    check_examples_match_task(train_examples, task, "finetune");
    check_examples_match_task(val_examples, task, "finetune");
    ensure_dir(snapshot_dir);

    model.cfg.dropout_prob = static_cast<float>(cfg.dropout);
    model.cfg.attention_dropout_prob = static_cast<float>(cfg.dropout);

    FinetuneResult result;
    auto snapshot = [&](int epoch) {
        if (keep_snapshots) result.snapshots.push_back(model);
        if (!snapshot_dir.empty()) {
            save_checkpoint(model,
                            snapshot_dir + "/snapshot-epoch-" + std::to_string(epoch) + ".fsb");
        }
    };
    snapshot(0);

    const DiscriminativeLrs lrs =
        layer_lrs(cfg.base_lr, cfg.discrimination_rate, model.cfg.num_layers);
    std::vector<Param*> params = trainable_params(model, false, true);
    std::vector<double> scales;
    scales.reserve(params.size());
    for (const Param* p : params) scales.push_back(lrs.scale_for(*p));

    const long total_steps =
        std::max<long>(1, cfg.epochs * optimizer_steps_per_epoch(train_examples.size(), cfg));
    StepDriver driver(std::move(params), std::move(scales), cfg, total_steps);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const std::vector<Batch> batches =
            make_loader(train_examples, vocab, cfg.max_seq_len, cfg.batch_size, true,
                        epoch_seed(cfg.seed, kSaltShuffle, epoch));
        Rng dropout_rng(epoch_seed(cfg.seed, kSaltDropout, epoch));
        for (const Batch& batch : batches) {
            for (int i = 0; i < batch.size(); ++i) {
                if (task == TaskKind::Classification) {
                    classification_example_loss(model, batch.features[i], batch.labels[i], true,
                                                dropout_rng, nullptr);
                } else {
                    regression_example_loss(model, batch.features[i], batch.scores[i], true,
                                            dropout_rng, nullptr);
                }
            }
            driver.micro_batch_done(batch.size());
        }
        driver.finish_epoch();

        FinetuneEpoch record;
        record.epoch = epoch;
        std::tie(record.train_loss, record.train_metric) =
            eval_supervised(model, train_examples, vocab, cfg.max_seq_len, task);
        if (!val_examples.empty()) {
            record.has_val = true;
            std::tie(record.val_loss, record.val_metric) =
                eval_supervised(model, val_examples, vocab, cfg.max_seq_len, task);
        }
        result.epochs.push_back(record);
        snapshot(epoch);
    }
    return result;
}

MlmEvalResult evaluate_mlm(const EncoderModel& model, const std::vector<std::string>& sentences,
                           const Vocabulary& vocab, const MaskingConfig& masking, int max_seq_len,
                           uint64_t seed) {
    masking.validate();
    Rng mask_rng(Rng::derive(seed, kSaltEval));
    MlmEvalResult result;
    double loss_sum = 0.0;
    long loss_examples = 0;
    long correct = 0;
    for (const std::string& sentence : sentences) {
        PretrainItem item;
        item.features = encode(sentence, std::nullopt, vocab, max_seq_len);
        auto [corrupted, targets] =
            make_mlm_example(item.features.input_ids, masking, vocab, mask_rng);
        item.features.input_ids = std::move(corrupted);
        for (size_t i = 0; i < targets.size(); ++i) {
            if (targets[i] != kMlmIgnoreId) {
                item.mlm_positions.push_back(static_cast<int>(i));
                item.mlm_targets.push_back(targets[i]);
            }
        }
        if (item.mlm_positions.empty()) continue;
        const PretrainItemEval ev = eval_pretrain_item(model, item);
        loss_sum += ev.mlm_loss;
        loss_examples += 1;
        correct += ev.mlm_correct;
        result.masked_positions += ev.mlm_total;
    }
    result.loss = loss_examples > 0 ? loss_sum / loss_examples : 0.0;
    result.accuracy = result.masked_positions > 0
                          ? static_cast<double>(correct) / result.masked_positions
                          : 0.0;
    return result;
}

std::vector<ProbeRow> forgetting_probe(const std::vector<EncoderModel>& snapshots,
                                       const std::vector<std::string>& eval_sentences,
                                       const Vocabulary& vocab, const MaskingConfig& masking,
                                       int max_seq_len, uint64_t seed) {
    std::vector<ProbeRow> rows;
    rows.reserve(snapshots.size());
    for (size_t i = 0; i < snapshots.size(); ++i) {
        const MlmEvalResult ev =
            evaluate_mlm(snapshots[i], eval_sentences, vocab, masking, max_seq_len, seed);
        rows.push_back(ProbeRow{static_cast<int>(i), ev.loss, ev.accuracy});
    }
    return rows;
}

std::vector<DepthRow> depth_sweep(const ModelConfig& base, const std::vector<int>& depths,
                                  const std::vector<Example>& examples, const Vocabulary& vocab,
                                  const TrainConfig& cfg) {
    if (depths.empty()) throw ConfigError("depth_sweep: no depths given");
    std::vector<DepthRow> rows;
    for (int depth : depths) {
        if (depth < 1) throw ConfigError("depth_sweep: depth must be >= 1");
        ModelConfig depth_cfg = base;
        depth_cfg.num_layers = depth;
        EncoderModel model(depth_cfg, TaskKind::Classification,
                           Rng::derive(cfg.seed, static_cast<uint64_t>(depth)));
        finetune(model, examples, {}, vocab, cfg, TaskKind::Classification, "", false);
        const auto [loss, accuracy] =
            eval_supervised(model, examples, vocab, cfg.max_seq_len, TaskKind::Classification);
        rows.push_back(DepthRow{depth, loss, accuracy});
    }
    return rows;
}

ClassificationEval evaluate_classification(const EncoderModel& model,
                                           const std::vector<Example>& examples,
                                           const Vocabulary& vocab, int max_seq_len) {
    check_examples_match_task(examples, TaskKind::Classification, "evaluate");
    ClassificationEval out;
    Rng rng(0);
    for (const Example& ex : examples) {
        const InputFeatures features = encode(ex.text, std::nullopt, vocab, max_seq_len);
        Tape tape;
        const EncoderOutput fwd = model.forward(tape, features, false, rng);
        const Var logits = model.classify(tape, fwd.pooled, false, rng);
        const int label = static_cast<int>(*ex.label);
        out.losses.push_back(tape.value(tape.cross_entropy(logits, {label})).data[0]);
        const Tensor& lv = tape.value(logits);
        int best = 0;
        for (int j = 1; j < 3; ++j) {
            if (lv.at(0, j) > lv.at(0, best)) best = j;
        }
        out.truth.push_back(*ex.label);
        out.predicted.push_back(static_cast<Label>(best));
    }
    return out;
}

RegressionEvalData evaluate_regression(const EncoderModel& model,
                                       const std::vector<Example>& examples,
                                       const Vocabulary& vocab, int max_seq_len) {
    check_examples_match_task(examples, TaskKind::Regression, "evaluate");
    RegressionEvalData out;
    Rng rng(0);
    for (const Example& ex : examples) {
        const InputFeatures features = encode(ex.text, std::nullopt, vocab, max_seq_len);
        double pred = 0.0;
        regression_example_loss(model, features, *ex.score, false, rng, &pred);
        out.predictions.push_back(pred);
        out.targets.push_back(*ex.score);
    }
    return out;
}

Prediction predict_label(const EncoderModel& model, const Vocabulary& vocab,
                         const std::string& text, int max_seq_len) {
    const InputFeatures features = encode(text, std::nullopt, vocab, max_seq_len);
    Tape tape;
    Rng rng(0);
    const EncoderOutput out = model.forward(tape, features, false, rng);
    const Var probs = tape.softmax(model.classify(tape, out.pooled, false, rng), 1);
    const Tensor& pv = tape.value(probs);
    Prediction result;
    int best = 0;
    for (int j = 0; j < 3; ++j) {
        result.probs[j] = pv.at(0, j);
        if (pv.at(0, j) > pv.at(0, best)) best = j;
    }
    result.label = static_cast<Label>(best);
    return result;
}

double predict_score(const EncoderModel& model, const Vocabulary& vocab, const std::string& text,
                     int max_seq_len) {
    const InputFeatures features = encode(text, std::nullopt, vocab, max_seq_len);
    Tape tape;
    Rng rng(0);
    const EncoderOutput out = model.forward(tape, features, false, rng);
    return tape.value(model.regress(tape, out.pooled, false, rng)).data[0];
}

void append_metrics_record(const std::string& path, int epoch, const std::string& split,
                           double loss, const std::string& metric_name, double metric_value) {
    std::ofstream out(path, std::ios::app | std::ios::binary);
    if (!out) throw DataError("cannot append metrics record to " + path);
    const nlohmann::json record = {{"epoch", epoch},
                                   {"split", split},
                                   {"loss", loss},
                                   {"metric_name", metric_name},
                                   {"metric_value", metric_value}};
    out << record.dump() << '\n';
}

namespace {

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out << content;
}

}  // namespace

void write_probe_tables(const std::vector<ProbeRow>& rows, const std::string& tsv_path,
                        const std::string& json_path) {
    std::string tsv = "snapshot\tmlm_loss\tmlm_accuracy\n";
    nlohmann::json arr = nlohmann::json::array();
    for (const ProbeRow& r : rows) {
        tsv += std::to_string(r.snapshot) + "\t" + std::to_string(r.mlm_loss) + "\t" +
               std::to_string(r.mlm_accuracy) + "\n";
        arr.push_back({{"snapshot", r.snapshot},
                       {"mlm_loss", r.mlm_loss},
                       {"mlm_accuracy", r.mlm_accuracy}});
    }
    if (!tsv_path.empty()) write_text(tsv_path, tsv);
    if (!json_path.empty()) write_text(json_path, arr.dump(2) + "\n");
}

void write_depth_tables(const std::vector<DepthRow>& rows, const std::string& tsv_path,
                        const std::string& json_path) {
    std::string tsv = "depth\tloss\taccuracy\n";
    nlohmann::json arr = nlohmann::json::array();
    for (const DepthRow& r : rows) {
        tsv += std::to_string(r.depth) + "\t" + std::to_string(r.loss) + "\t" +
               std::to_string(r.accuracy) + "\n";
        arr.push_back({{"depth", r.depth}, {"loss", r.loss}, {"accuracy", r.accuracy}});
    }
    if (!tsv_path.empty()) write_text(tsv_path, tsv);
    if (!json_path.empty()) write_text(json_path, arr.dump(2) + "\n");
}

}  // namespace finsent
