// finsent: financial-sentiment encoder pipeline driver.
//
// Subcommands wire the library end to end: vocabulary induction, masked-LM +
// next-sentence pretraining, discriminative fine-tuning, evaluation,
// prediction, attention export, the depth sweep and the forgetting probe.
//
// Configuration precedence: defaults < --config JSON < explicit flags. Every
// run writes the resolved configuration to <out-dir>/effective_config.json.
// Exit codes: 0 success, 1 usage/config, 2 data, 3 checkpoint.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "finsent/checkpoint.hpp"
#include "finsent/data.hpp"
#include "finsent/errors.hpp"
#include "finsent/metrics.hpp"
#include "finsent/model.hpp"
#include "finsent/optimizer.hpp"
#include "finsent/train.hpp"
#include "finsent/vocab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace finsent;

namespace {

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    MaskingConfig masking;

    std::string vocab_path;
    std::string data_path;
    std::string validation_data_path;
    std::string checkpoint_path;
    std::string corpus_path;
    std::string snapshots_dir;
    std::string out_dir = "finsent_out";

    std::string task = "classification";
    std::string data_format = "tsv";
    std::string text;
    int vocab_size = 8192;
    int min_freq = 1;
    std::vector<int> depths = {1, 2, 4};
    std::vector<double> split = {0.8, 0.1, 0.1};
};

void check_known_keys(const json& obj, const std::set<std::string>& allowed,
                      const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (!allowed.count(key)) {
            throw ConfigError("unknown config key '" + where + key + "'");
        }
    }
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    check_known_keys(doc, {"model", "train", "masking", "paths", "options"}, "");

    if (doc.contains("model")) {
        const json& m = doc["model"];
        check_known_keys(m,
                         {"num_layers", "num_heads", "hidden_size", "intermediate_size",
                          "vocab_size", "max_position", "type_vocab_size", "dropout_prob",
                          "attention_dropout_prob", "initializer_range", "layer_norm_eps",
                          "use_pooler"},
                         "model.");
        if (m.contains("num_layers")) cfg.model.num_layers = m["num_layers"].get<int>();
        if (m.contains("num_heads")) cfg.model.num_heads = m["num_heads"].get<int>();
        if (m.contains("hidden_size")) cfg.model.hidden_size = m["hidden_size"].get<int>();
        if (m.contains("intermediate_size")) {
            cfg.model.intermediate_size = m["intermediate_size"].get<int>();
        }
        if (m.contains("vocab_size")) cfg.model.vocab_size = m["vocab_size"].get<int>();
        if (m.contains("max_position")) cfg.model.max_position = m["max_position"].get<int>();
        if (m.contains("type_vocab_size")) {
            cfg.model.type_vocab_size = m["type_vocab_size"].get<int>();
        }
        if (m.contains("dropout_prob")) cfg.model.dropout_prob = m["dropout_prob"].get<float>();
        if (m.contains("attention_dropout_prob")) {
            cfg.model.attention_dropout_prob = m["attention_dropout_prob"].get<float>();
        }
        if (m.contains("initializer_range")) {
            cfg.model.initializer_range = m["initializer_range"].get<float>();
        }
        if (m.contains("layer_norm_eps")) {
            cfg.model.layer_norm_eps = m["layer_norm_eps"].get<float>();
        }
        if (m.contains("use_pooler")) cfg.model.use_pooler = m["use_pooler"].get<bool>();
    }
    if (doc.contains("train")) {
        const json& t = doc["train"];
        check_known_keys(t,
                         {"base_lr", "warmup_proportion", "dropout", "max_seq_len", "batch_size",
                          "epochs", "discrimination_rate", "grad_accumulation_steps",
                          "weight_decay", "adam_beta1", "adam_beta2", "adam_eps", "max_grad_norm",
                          "adam_bias_correction", "seed"},
                         "train.");
        if (t.contains("base_lr")) cfg.train.base_lr = t["base_lr"].get<double>();
        if (t.contains("warmup_proportion")) {
            cfg.train.warmup_proportion = t["warmup_proportion"].get<double>();
        }
        if (t.contains("dropout")) cfg.train.dropout = t["dropout"].get<double>();
        if (t.contains("max_seq_len")) cfg.train.max_seq_len = t["max_seq_len"].get<int>();
        if (t.contains("batch_size")) cfg.train.batch_size = t["batch_size"].get<int>();
        if (t.contains("epochs")) cfg.train.epochs = t["epochs"].get<int>();
        if (t.contains("discrimination_rate")) {
            cfg.train.discrimination_rate = t["discrimination_rate"].get<double>();
        }
        if (t.contains("grad_accumulation_steps")) {
            cfg.train.grad_accumulation_steps = t["grad_accumulation_steps"].get<int>();
        }
        if (t.contains("weight_decay")) cfg.train.weight_decay = t["weight_decay"].get<double>();
        if (t.contains("adam_beta1")) cfg.train.adam_beta1 = t["adam_beta1"].get<double>();
        if (t.contains("adam_beta2")) cfg.train.adam_beta2 = t["adam_beta2"].get<double>();
        if (t.contains("adam_eps")) cfg.train.adam_eps = t["adam_eps"].get<double>();
        if (t.contains("max_grad_norm")) {
            cfg.train.max_grad_norm = t["max_grad_norm"].get<double>();
        }
        if (t.contains("adam_bias_correction")) {
            cfg.train.adam_bias_correction = t["adam_bias_correction"].get<bool>();
        }
        if (t.contains("seed")) cfg.train.seed = t["seed"].get<uint64_t>();
    }
    if (doc.contains("masking")) {
        const json& m = doc["masking"];
        check_known_keys(
            m, {"mask_percent", "replace_with_mask", "replace_with_random", "keep_original"},
            "masking.");
        if (m.contains("mask_percent")) cfg.masking.mask_percent = m["mask_percent"].get<double>();
        if (m.contains("replace_with_mask")) {
            cfg.masking.replace_with_mask = m["replace_with_mask"].get<double>();
        }
        if (m.contains("replace_with_random")) {
            cfg.masking.replace_with_random = m["replace_with_random"].get<double>();
        }
        if (m.contains("keep_original")) {
            cfg.masking.keep_original = m["keep_original"].get<double>();
        }
    }
    if (doc.contains("paths")) {
        const json& p = doc["paths"];
        check_known_keys(p,
                         {"vocab", "data", "validation_data", "checkpoint", "corpus",
                          "snapshots_dir", "output_dir"},
                         "paths.");
        if (p.contains("vocab")) cfg.vocab_path = p["vocab"].get<std::string>();
        if (p.contains("data")) cfg.data_path = p["data"].get<std::string>();
        if (p.contains("validation_data")) {
            cfg.validation_data_path = p["validation_data"].get<std::string>();
        }
        if (p.contains("checkpoint")) cfg.checkpoint_path = p["checkpoint"].get<std::string>();
        if (p.contains("corpus")) cfg.corpus_path = p["corpus"].get<std::string>();
        if (p.contains("snapshots_dir")) cfg.snapshots_dir = p["snapshots_dir"].get<std::string>();
        if (p.contains("output_dir")) cfg.out_dir = p["output_dir"].get<std::string>();
    }
    if (doc.contains("options")) {
        const json& o = doc["options"];
        check_known_keys(
            o, {"task", "data_format", "text", "vocab_size", "min_freq", "depths", "split"},
            "options.");
        if (o.contains("task")) cfg.task = o["task"].get<std::string>();
        if (o.contains("data_format")) cfg.data_format = o["data_format"].get<std::string>();
        if (o.contains("text")) cfg.text = o["text"].get<std::string>();
        if (o.contains("vocab_size")) cfg.vocab_size = o["vocab_size"].get<int>();
        if (o.contains("min_freq")) cfg.min_freq = o["min_freq"].get<int>();
        if (o.contains("depths")) cfg.depths = o["depths"].get<std::vector<int>>();
        if (o.contains("split")) cfg.split = o["split"].get<std::vector<double>>();
    }
}

json effective_config_json(const RunConfig& cfg, const std::string& command) {
    return json{
        {"command", command},
        {"model",
         {{"num_layers", cfg.model.num_layers},
          {"num_heads", cfg.model.num_heads},
          {"hidden_size", cfg.model.hidden_size},
          {"intermediate_size", cfg.model.intermediate_size},
          {"vocab_size", cfg.model.vocab_size},
          {"max_position", cfg.model.max_position},
          {"type_vocab_size", cfg.model.type_vocab_size},
          {"dropout_prob", cfg.model.dropout_prob},
          {"attention_dropout_prob", cfg.model.attention_dropout_prob},
          {"initializer_range", cfg.model.initializer_range},
          {"layer_norm_eps", cfg.model.layer_norm_eps},
          {"use_pooler", cfg.model.use_pooler}}},
        {"train",
         {{"base_lr", cfg.train.base_lr},
          {"warmup_proportion", cfg.train.warmup_proportion},
          {"dropout", cfg.train.dropout},
          {"max_seq_len", cfg.train.max_seq_len},
          {"batch_size", cfg.train.batch_size},
          {"epochs", cfg.train.epochs},
          {"discrimination_rate", cfg.train.discrimination_rate},
          {"grad_accumulation_steps", cfg.train.grad_accumulation_steps},
          {"weight_decay", cfg.train.weight_decay},
          {"adam_beta1", cfg.train.adam_beta1},
          {"adam_beta2", cfg.train.adam_beta2},
          {"adam_eps", cfg.train.adam_eps},
          {"max_grad_norm", cfg.train.max_grad_norm},
          {"adam_bias_correction", cfg.train.adam_bias_correction},
          {"seed", cfg.train.seed}}},
        {"masking",
         {{"mask_percent", cfg.masking.mask_percent},
          {"replace_with_mask", cfg.masking.replace_with_mask},
          {"replace_with_random", cfg.masking.replace_with_random},
          {"keep_original", cfg.masking.keep_original}}},
        {"paths",
         {{"vocab", cfg.vocab_path},
          {"data", cfg.data_path},
          {"validation_data", cfg.validation_data_path},
          {"checkpoint", cfg.checkpoint_path},
          {"corpus", cfg.corpus_path},
          {"snapshots_dir", cfg.snapshots_dir},
          {"output_dir", cfg.out_dir}}},
        {"options",
         {{"task", cfg.task},
          {"data_format", cfg.data_format},
          {"text", cfg.text},
          {"vocab_size", cfg.vocab_size},
          {"min_freq", cfg.min_freq},
          {"depths", cfg.depths},
          {"split", cfg.split}}}};
}

void write_effective_config(const RunConfig& cfg, const std::string& command) {
    fs::create_directories(cfg.out_dir);
    std::ofstream out(fs::path(cfg.out_dir) / "effective_config.json",
                      std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write effective config under " + cfg.out_dir);
    out << effective_config_json(cfg, command).dump(2) << '\n';
}

std::vector<std::string> read_raw_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

LabeledFormat parse_format(const std::string& name) {
    if (name == "tsv") return LabeledFormat::Tsv;
    if (name == "at_separated") return LabeledFormat::AtSeparated;
    throw ConfigError("unknown data format '" + name + "' (use tsv or at_separated)");
}

std::vector<Example> load_task_data(const RunConfig& cfg, TaskKind task,
                                    const std::string& path) {
    if (task == TaskKind::Classification) return load_labeled(path, parse_format(cfg.data_format));
    return load_scored(path);
}

Vocabulary require_vocab(const RunConfig& cfg) {
    if (cfg.vocab_path.empty()) throw ConfigError("--vocab is required");
    return Vocabulary::load(cfg.vocab_path);
}

EncoderModel require_checkpoint(const RunConfig& cfg) {
    if (cfg.checkpoint_path.empty()) throw ConfigError("--checkpoint is required");
    return load_checkpoint(cfg.checkpoint_path);
}

void check_vocab_matches(const Vocabulary& vocab, const EncoderModel& model) {
    if (vocab.size() != model.cfg.vocab_size) {
        throw ConfigError("vocabulary has " + std::to_string(vocab.size()) +
                          " tokens but the checkpoint expects " +
                          std::to_string(model.cfg.vocab_size));
    }
}

// ---------------------------------------------------------------------------

int cmd_build_vocab(RunConfig& cfg) {
    if (cfg.corpus_path.empty()) throw ConfigError("--corpus is required");
    write_effective_config(cfg, "build-vocab");
    const Vocabulary vocab = build_vocab(read_raw_lines(cfg.corpus_path), cfg.vocab_size,
                                         cfg.min_freq);
    const std::string out_path = (fs::path(cfg.out_dir) / "vocab.txt").string();
    vocab.save(out_path);
    std::cout << "wrote " << out_path << " (" << vocab.size() << " tokens)\n";
    return 0;
}

int cmd_pretrain(RunConfig& cfg) {
    if (cfg.corpus_path.empty()) throw ConfigError("--corpus is required");
    const Vocabulary vocab = require_vocab(cfg);
    cfg.model.vocab_size = vocab.size();
    write_effective_config(cfg, "pretrain");

    const auto docs = load_corpus_documents(cfg.corpus_path);
    EncoderModel model(cfg.model, task_kind_from_name(cfg.task), cfg.train.seed);

    const std::string log = (fs::path(cfg.out_dir) / "metrics.jsonl").string();
    fs::remove(log);
    const PretrainResult result =
        pretrain(model, docs, vocab, cfg.masking, cfg.train, cfg.out_dir);
    for (const PretrainEpoch& e : result.epochs) {
        append_metrics_record(log, e.epoch, "train", e.mlm_loss + e.nsp_loss, "mlm_accuracy",
                              e.mlm_accuracy);
        append_metrics_record(log, e.epoch, "train", e.mlm_loss, "mlm_loss", e.mlm_loss);
        append_metrics_record(log, e.epoch, "train", e.nsp_loss, "nsp_loss", e.nsp_loss);
        std::cout << "epoch " << e.epoch << " mlm_loss " << e.mlm_loss << " nsp_loss "
                  << e.nsp_loss << " mlm_accuracy " << e.mlm_accuracy << "\n";
    }
    const std::string final_path = (fs::path(cfg.out_dir) / "pretrained.fsb").string();
    save_checkpoint(model, final_path);
    std::cout << "wrote " << final_path << "\n";
    return 0;
}

int cmd_finetune(RunConfig& cfg) {
    if (cfg.data_path.empty()) throw ConfigError("--data is required");
    const Vocabulary vocab = require_vocab(cfg);
    EncoderModel model = require_checkpoint(cfg);
    check_vocab_matches(vocab, model);
    const TaskKind task = task_kind_from_name(cfg.task);
    write_effective_config(cfg, "finetune");

    std::vector<Example> train_set = load_task_data(cfg, task, cfg.data_path);
    std::vector<Example> val_set;
    if (!cfg.validation_data_path.empty()) {
        val_set = load_task_data(cfg, task, cfg.validation_data_path);
    } else {
        if (cfg.split.size() != 3) throw ConfigError("--split needs three fractions");
        const SplitExamples split =
            split_examples(train_set, cfg.split[0], cfg.split[1], cfg.split[2]);
        train_set = split.train;
        val_set = split.validation;
        if (train_set.empty()) throw DataError("train split is empty; adjust --split");
    }

    const std::string log = (fs::path(cfg.out_dir) / "metrics.jsonl").string();
    fs::remove(log);
    const FinetuneResult result =
        finetune(model, train_set, val_set, vocab, cfg.train, task, cfg.out_dir, false);
    const char* metric_name = task == TaskKind::Classification ? "accuracy" : "mse";
    for (const FinetuneEpoch& e : result.epochs) {
        append_metrics_record(log, e.epoch, "train", e.train_loss, metric_name, e.train_metric);
        std::cout << "epoch " << e.epoch << " train_loss " << e.train_loss << " " << metric_name
                  << " " << e.train_metric;
        if (e.has_val) {
            append_metrics_record(log, e.epoch, "validation", e.val_loss, metric_name,
                                  e.val_metric);
            std::cout << " val_loss " << e.val_loss << " val_" << metric_name << " "
                      << e.val_metric;
        }
        std::cout << "\n";
    }
    const std::string final_path = (fs::path(cfg.out_dir) / "finetuned.fsb").string();
    save_checkpoint(model, final_path);
    std::cout << "wrote " << final_path << "\n";
    return 0;
}

int cmd_evaluate(RunConfig& cfg) {
    if (cfg.data_path.empty()) throw ConfigError("--data is required");
    const Vocabulary vocab = require_vocab(cfg);
    const EncoderModel model = require_checkpoint(cfg);
    check_vocab_matches(vocab, model);
    write_effective_config(cfg, "evaluate");

    const std::vector<Example> examples = load_task_data(cfg, model.task, cfg.data_path);
    std::string report_text;
    if (model.task == TaskKind::Classification) {
        const ClassificationEval ev =
            evaluate_classification(model, examples, vocab, cfg.train.max_seq_len);
        MetricsReport report = summarize(confusion(ev.truth, ev.predicted), ev.losses);
        report_text = report.to_json();
    } else {
        const RegressionEvalData ev =
            evaluate_regression(model, examples, vocab, cfg.train.max_seq_len);
        const double mse = regression_eval(ev.predictions, ev.targets);
        report_text = json{{"mse", mse}, {"total", ev.targets.size()}}.dump(2);
    }
    std::cout << report_text << "\n";
    std::ofstream out(fs::path(cfg.out_dir) / "metrics_report.json",
                      std::ios::binary | std::ios::trunc);
    out << report_text << "\n";
    return 0;
}

int cmd_predict(RunConfig& cfg) {
    if (cfg.text.empty() && cfg.data_path.empty()) {
        throw ConfigError("predict needs --text or --data");
    }
    const Vocabulary vocab = require_vocab(cfg);
    const EncoderModel model = require_checkpoint(cfg);
    check_vocab_matches(vocab, model);
    write_effective_config(cfg, "predict");

    std::vector<std::string> sentences;
    if (!cfg.text.empty()) {
        sentences.push_back(cfg.text);
    } else {
        for (auto& line : read_raw_lines(cfg.data_path)) {
            if (!line.empty()) sentences.push_back(std::move(line));
        }
    }

    std::ofstream out(fs::path(cfg.out_dir) / "predictions.jsonl",
                      std::ios::binary | std::ios::trunc);
    for (const std::string& sentence : sentences) {
        json record;
        if (model.task == TaskKind::Classification) {
            const Prediction p = predict_label(model, vocab, sentence, cfg.train.max_seq_len);
            record = json{{"text", sentence},
                          {"label", label_name(p.label)},
                          {"probs", {p.probs[0], p.probs[1], p.probs[2]}}};
        } else {
            const double score = predict_score(model, vocab, sentence, cfg.train.max_seq_len);
            record = json{{"text", sentence}, {"score", score}};
        }
        const std::string line = record.dump();
        std::cout << line << "\n";
        out << line << "\n";
    }
    return 0;
}

int cmd_export_attention(RunConfig& cfg) {
    if (cfg.text.empty()) throw ConfigError("--text is required");
    const Vocabulary vocab = require_vocab(cfg);
    const EncoderModel model = require_checkpoint(cfg);
    check_vocab_matches(vocab, model);
    write_effective_config(cfg, "export-attention");

    const InputFeatures features =
        encode(cfg.text, std::nullopt, vocab, cfg.train.max_seq_len);
    const std::string path = (fs::path(cfg.out_dir) / "attention.json").string();
    export_attention(model, features, vocab, path);
    std::cout << "wrote " << path << "\n";
    return 0;
}

int cmd_depth_sweep(RunConfig& cfg) {
    if (cfg.data_path.empty()) throw ConfigError("--data is required");
    const Vocabulary vocab = require_vocab(cfg);
    cfg.model.vocab_size = vocab.size();
    write_effective_config(cfg, "depth-sweep");

    const std::vector<Example> examples =
        load_labeled(cfg.data_path, parse_format(cfg.data_format));
    const std::vector<DepthRow> rows =
        depth_sweep(cfg.model, cfg.depths, examples, vocab, cfg.train);
    write_depth_tables(rows, (fs::path(cfg.out_dir) / "depth_sweep.tsv").string(),
                       (fs::path(cfg.out_dir) / "depth_sweep.json").string());

    std::vector<double> losses, accuracies;
    for (const DepthRow& r : rows) {
        std::cout << "depth " << r.depth << " loss " << r.loss << " accuracy " << r.accuracy
                  << "\n";
        losses.push_back(r.loss);
        accuracies.push_back(r.accuracy);
    }
    json corr;
    try {
        corr = loss_accuracy_correlation(losses, accuracies);
    } catch (const ContractError&) {
        corr = nullptr;  // undefined for constant or single-row tables
    }
    std::ofstream out(fs::path(cfg.out_dir) / "loss_accuracy_correlation.json",
                      std::ios::binary | std::ios::trunc);
    out << json{{"pearson_r", corr}}.dump(2) << "\n";
    if (!corr.is_null()) std::cout << "loss/accuracy correlation " << corr << "\n";
    return 0;
}

int cmd_probe_forgetting(RunConfig& cfg) {
    if (cfg.corpus_path.empty()) throw ConfigError("--corpus is required");
    if (cfg.snapshots_dir.empty()) throw ConfigError("--snapshots-dir is required");
    const Vocabulary vocab = require_vocab(cfg);
    write_effective_config(cfg, "probe-forgetting");

    // snapshot-epoch-N.fsb files in epoch order
    std::vector<std::pair<int, std::string>> found;
    for (const auto& entry : fs::directory_iterator(cfg.snapshots_dir)) {
        const std::string name = entry.path().filename().string();
        const std::string prefix = "snapshot-epoch-";
        if (name.rfind(prefix, 0) == 0 && name.ends_with(".fsb")) {
            const std::string num = name.substr(prefix.size(),
                                                name.size() - prefix.size() - 4);
            try {
                found.emplace_back(std::stoi(num), entry.path().string());
            } catch (const std::exception&) {
                continue;
            }
        }
    }
    if (found.empty()) {
        throw DataError("no snapshot-epoch-*.fsb files under " + cfg.snapshots_dir);
    }
    std::sort(found.begin(), found.end());

    std::vector<EncoderModel> snapshots;
    snapshots.reserve(found.size());
    for (const auto& [epoch, path] : found) {
        (void)epoch;
        snapshots.push_back(load_checkpoint(path));
        check_vocab_matches(vocab, snapshots.back());
    }

    const auto sentences = flatten_documents(load_corpus_documents(cfg.corpus_path));
    const std::vector<ProbeRow> rows = forgetting_probe(
        snapshots, sentences, vocab, cfg.masking, cfg.train.max_seq_len, cfg.train.seed);
    write_probe_tables(rows, (fs::path(cfg.out_dir) / "forgetting.tsv").string(),
                       (fs::path(cfg.out_dir) / "forgetting.json").string());
    for (const ProbeRow& r : rows) {
        std::cout << "snapshot " << r.snapshot << " mlm_loss " << r.mlm_loss << " mlm_accuracy "
                  << r.mlm_accuracy << "\n";
    }
    return 0;
}

void add_shared_options(CLI::App* cmd, RunConfig& cfg) {
    cmd->add_option("--config", "JSON config file (applied before flags)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--out-dir", cfg.out_dir, "output directory");
    cmd->add_option("--seed", cfg.train.seed, "run seed");
    cmd->add_option("--max-seq-len", cfg.train.max_seq_len, "maximum sequence length");
    cmd->add_option("--num-layers", cfg.model.num_layers, "encoder layers");
    cmd->add_option("--num-heads", cfg.model.num_heads, "attention heads");
    cmd->add_option("--hidden-size", cfg.model.hidden_size, "hidden width");
    cmd->add_option("--intermediate-size", cfg.model.intermediate_size, "feed-forward width");
    cmd->add_option("--max-position", cfg.model.max_position, "maximum positions");
    cmd->add_option("--use-pooler", cfg.model.use_pooler,
                    "pool the [CLS] state through the tanh dense layer");
    cmd->add_option("--base-lr", cfg.train.base_lr, "base learning rate");
    cmd->add_option("--warmup-proportion", cfg.train.warmup_proportion, "warmup fraction");
    cmd->add_option("--dropout", cfg.train.dropout, "dropout probability during training");
    cmd->add_option("--batch-size", cfg.train.batch_size, "mini batch size");
    cmd->add_option("--epochs", cfg.train.epochs, "training epochs");
    cmd->add_option("--discrimination-rate", cfg.train.discrimination_rate,
                    "layer-wise learning-rate decay factor");
    cmd->add_option("--grad-accumulation-steps", cfg.train.grad_accumulation_steps,
                    "micro-batches per optimizer step");
    cmd->add_option("--weight-decay", cfg.train.weight_decay, "decoupled weight decay");
    cmd->add_option("--max-grad-norm", cfg.train.max_grad_norm, "global gradient clip");
    cmd->add_option("--adam-bias-correction", cfg.train.adam_bias_correction,
                    "enable Adam bias correction");
    cmd->add_option("--mask-percent", cfg.masking.mask_percent, "masked-LM percent k");
    cmd->add_option("--replace-with-mask", cfg.masking.replace_with_mask,
                    "share of selected positions becoming [MASK]");
    cmd->add_option("--replace-with-random", cfg.masking.replace_with_random,
                    "share of selected positions randomized");
    cmd->add_option("--keep-original", cfg.masking.keep_original,
                    "share of selected positions left unchanged");
    cmd->add_option("--vocab", cfg.vocab_path, "vocabulary file");
    cmd->add_option("--data", cfg.data_path, "data file");
    cmd->add_option("--validation-data", cfg.validation_data_path, "validation data file");
    cmd->add_option("--checkpoint", cfg.checkpoint_path, "checkpoint file");
    cmd->add_option("--corpus", cfg.corpus_path, "corpus file");
    cmd->add_option("--snapshots-dir", cfg.snapshots_dir, "fine-tune snapshot directory");
    cmd->add_option("--task", cfg.task, "classification or regression");
    cmd->add_option("--data-format", cfg.data_format, "tsv or at_separated");
    cmd->add_option("--text", cfg.text, "single input sentence");
    cmd->add_option("--vocab-size", cfg.vocab_size, "vocabulary target size");
    cmd->add_option("--min-freq", cfg.min_freq, "minimum word frequency");
    cmd->add_option("--depths", cfg.depths, "depths for the sweep")->delimiter(',');
    cmd->add_option("--split", cfg.split, "train/validation/test fractions")->delimiter(',');
}

std::string find_config_arg(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--config" && i + 1 < argc) return argv[i + 1];
        if (arg.rfind("--config=", 0) == 0) return arg.substr(9);
    }
    return "";
}

}  // namespace

int main(int argc, char** argv) {
    RunConfig cfg;
    CLI::App app{"financial sentiment encoder pipeline"};
    app.require_subcommand(1);

    CLI::App* build_vocab_cmd =
        app.add_subcommand("build-vocab", "induce a vocabulary from a corpus");
    CLI::App* pretrain_cmd =
        app.add_subcommand("pretrain", "masked-LM + next-sentence pretraining");
    CLI::App* finetune_cmd = app.add_subcommand("finetune", "fine-tune on labeled data");
    CLI::App* evaluate_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint");
    CLI::App* predict_cmd = app.add_subcommand("predict", "predict labels or scores");
    CLI::App* export_cmd =
        app.add_subcommand("export-attention", "export attention weights as JSON");
    CLI::App* sweep_cmd = app.add_subcommand("depth-sweep", "loss/accuracy across depths");
    CLI::App* probe_cmd =
        app.add_subcommand("probe-forgetting", "masked-LM loss across fine-tune snapshots");

    for (CLI::App* cmd : {build_vocab_cmd, pretrain_cmd, finetune_cmd, evaluate_cmd, predict_cmd,
                          export_cmd, sweep_cmd, probe_cmd}) {
        add_shared_options(cmd, cfg);
    }

    try {
        // The config file applies between the defaults and the flags.
        const std::string config_path = find_config_arg(argc, argv);
        if (!config_path.empty()) apply_config_file(cfg, config_path);

        app.parse(argc, argv);

        if (build_vocab_cmd->parsed()) return cmd_build_vocab(cfg);
        if (pretrain_cmd->parsed()) return cmd_pretrain(cfg);
        if (finetune_cmd->parsed()) return cmd_finetune(cfg);
        if (evaluate_cmd->parsed()) return cmd_evaluate(cfg);
        if (predict_cmd->parsed()) return cmd_predict(cfg);
        if (export_cmd->parsed()) return cmd_export_attention(cfg);
        if (sweep_cmd->parsed()) return cmd_depth_sweep(cfg);
        if (probe_cmd->parsed()) return cmd_probe_forgetting(cfg);
        return 1;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
