#include "finsent/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "finsent/errors.hpp"
#include "finsent/rng.hpp"

namespace finsent {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'F', 'S', 'B', 'C', 'K', 'P', 'T', '1'};
constexpr int kFormatVersion = 1;

void append_u64_le(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

uint64_t read_u64_le(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
}

void append_f32_le(std::string& out, float f) {
    const uint32_t bits = std::bit_cast<uint32_t>(f);
    for (int i = 0; i < 4; ++i) out += static_cast<char>((bits >> (8 * i)) & 0xFF);
}

float read_f32_le(const unsigned char* p) {
    uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<uint32_t>(p[i]) << (8 * i);
    return std::bit_cast<float>(bits);
}

json model_record(const EncoderModel& model) {
    const ModelConfig& c = model.cfg;
    return json{{"num_layers", c.num_layers},
                {"num_heads", c.num_heads},
                {"hidden_size", c.hidden_size},
                {"intermediate_size", c.intermediate_size},
                {"vocab_size", c.vocab_size},
                {"max_position", c.max_position},
                {"type_vocab_size", c.type_vocab_size},
                {"dropout_prob", c.dropout_prob},
                {"attention_dropout_prob", c.attention_dropout_prob},
                {"initializer_range", c.initializer_range},
                {"layer_norm_eps", c.layer_norm_eps},
                {"use_pooler", c.use_pooler},
                {"task", task_kind_name(model.task)},
                {"live_heads", model.live_heads}};
}

ModelConfig config_from_record(const json& m) {
    ModelConfig c;
    c.num_layers = m.at("num_layers").get<int>();
    c.num_heads = m.at("num_heads").get<int>();
    c.hidden_size = m.at("hidden_size").get<int>();
    c.intermediate_size = m.at("intermediate_size").get<int>();
    c.vocab_size = m.at("vocab_size").get<int>();
    c.max_position = m.at("max_position").get<int>();
    c.type_vocab_size = m.at("type_vocab_size").get<int>();
    c.dropout_prob = m.at("dropout_prob").get<float>();
    c.attention_dropout_prob = m.at("attention_dropout_prob").get<float>();
    c.initializer_range = m.at("initializer_range").get<float>();
    c.layer_norm_eps = m.at("layer_norm_eps").get<float>();
    c.use_pooler = m.at("use_pooler").get<bool>();
    return c;
}

}  // namespace

void save_checkpoint(const EncoderModel& model, const std::string& path) {
    json manifest = json::array();
    uint64_t offset = 0;
    const auto params = model.parameters();
    for (const Param* p : params) {
        const uint64_t bytes = p->value.numel() * 4;
        manifest.push_back(json{{"name", p->name},
                                {"shape", p->value.shape},
                                {"dtype", "f32"},
                                {"byte_offset", offset},
                                {"byte_length", bytes}});
        offset += bytes;
    }
    const json header = {{"format_version", kFormatVersion},
                         {"model", model_record(model)},
                         {"manifest", manifest}};
    const std::string header_text = header.dump();

    std::string blob;
    blob.reserve(16 + header_text.size() + offset);
    blob.append(kMagic, sizeof(kMagic));
    append_u64_le(blob, header_text.size());
    blob += header_text;
    for (const Param* p : params) {
        for (float f : p->value.data) append_f32_le(blob, f);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw CheckpointError("failed writing checkpoint: " + path);
}

EncoderModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (blob.size() < 16 || std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointError("bad checkpoint magic in " + path);
    }
    const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
    const uint64_t header_len = read_u64_le(bytes + 8);
    if (16 + header_len > blob.size()) {
        throw CheckpointError("checkpoint header extends past end of file: " + path);
    }

    json header;
    try {
        header = json::parse(blob.substr(16, header_len));
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }

    try {
        if (header.at("format_version").get<int>() != kFormatVersion) {
            throw CheckpointError("unsupported checkpoint format version " +
                                  header.at("format_version").dump());
        }
        const json& m = header.at("model");
        const ModelConfig cfg = config_from_record(m);
        const TaskKind task = task_kind_from_name(m.at("task").get<std::string>());
        auto live_heads = m.at("live_heads").get<std::vector<std::vector<int>>>();

        EncoderModel model(cfg, task, std::move(live_heads), EncoderModel::ZeroInit{});

        const size_t payload_start = 16 + header_len;
        const size_t payload_size = blob.size() - payload_start;
        const unsigned char* payload = bytes + payload_start;

        const json& manifest = header.at("manifest");
        const auto params = model.parameters();
        if (manifest.size() != params.size()) {
            throw CheckpointError("checkpoint manifest lists " + std::to_string(manifest.size()) +
                                  " tensors, model has " + std::to_string(params.size()));
        }
        uint64_t expected_total = 0;
        for (size_t i = 0; i < params.size(); ++i) {
            const json& entry = manifest[i];
            Param* p = params[i];
            if (entry.at("name").get<std::string>() != p->name) {
                throw CheckpointError("checkpoint tensor " + std::to_string(i) + " is '" +
                                      entry.at("name").get<std::string>() + "', expected '" +
                                      p->name + "'");
            }
            if (entry.at("dtype").get<std::string>() != "f32") {
                throw CheckpointError("tensor '" + p->name + "' has unsupported dtype");
            }
            const auto shape = entry.at("shape").get<std::vector<int>>();
            if (shape != p->value.shape) {
                throw CheckpointError("tensor '" + p->name + "' has shape " +
                                      shape_to_string(shape) + ", expected " +
                                      shape_to_string(p->value.shape));
            }
            const uint64_t off = entry.at("byte_offset").get<uint64_t>();
            const uint64_t len = entry.at("byte_length").get<uint64_t>();
            if (len != p->value.numel() * 4) {
                throw CheckpointError("tensor '" + p->name + "' byte length mismatch");
            }
            if (off + len > payload_size) {
                throw CheckpointError("checkpoint payload truncated at tensor '" + p->name + "'");
            }
            for (size_t j = 0; j < p->value.numel(); ++j) {
                p->value.data[j] = read_f32_le(payload + off + j * 4);
            }
            expected_total += len;
        }
        if (expected_total != payload_size) {
            throw CheckpointError("checkpoint payload size " + std::to_string(payload_size) +
                                  " does not match manifest total " +
                                  std::to_string(expected_total));
        }
        return model;
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
    }
}

void export_attention(const EncoderModel& model, const InputFeatures& features,
                      const Vocabulary& vocab, const std::string& path) {
    Tape tape;
    Rng rng(0);  // eval mode draws nothing
    const EncoderOutput out = model.forward(tape, features, false, rng);

    const int live = features.live_length();
    json tokens = json::array();
    for (int i = 0; i < live; ++i) tokens.push_back(vocab.token(features.input_ids[i]));

    json layers = json::array();
    for (size_t l = 0; l < out.attention.weights.size(); ++l) {
        json heads = json::array();
        for (size_t h = 0; h < out.attention.weights[l].size(); ++h) {
            const Tensor& w = out.attention.weights[l][h];
            json rows = json::array();
            for (int i = 0; i < live; ++i) {
                json row = json::array();
                for (int j = 0; j < live; ++j) row.push_back(w.at(i, j));
                rows.push_back(std::move(row));
            }
            heads.push_back(json{{"head", out.attention.heads[l][h]},
                                 {"weights", std::move(rows)}});
        }
        layers.push_back(json{{"layer", l}, {"heads", std::move(heads)}});
    }

    const json doc = {{"tokens", std::move(tokens)},
                      {"config",
                       {{"num_layers", model.cfg.num_layers},
                        {"num_heads", model.cfg.num_heads},
                        {"hidden_size", model.cfg.hidden_size},
                        {"live_heads", model.live_heads}}},
                      {"layers", std::move(layers)}};

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open attention export for writing: " + path);
    f << doc.dump(2) << '\n';
}

}  // namespace finsent
