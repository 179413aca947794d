#include "finsent/model.hpp"

#include <algorithm>
#include <cmath>

#include "finsent/errors.hpp"
#include "finsent/rng.hpp"
#include "finsent/vocab.hpp"

namespace finsent {

void ModelConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v <= 0) throw ConfigError(std::string("ModelConfig: ") + name + " must be positive");
    };
    positive(num_layers, "num_layers");
    positive(num_heads, "num_heads");
    positive(hidden_size, "hidden_size");
    positive(intermediate_size, "intermediate_size");
    positive(vocab_size, "vocab_size");
    positive(max_position, "max_position");
    positive(type_vocab_size, "type_vocab_size");
    if (hidden_size % num_heads != 0) {
        throw ConfigError("ModelConfig: hidden_size " + std::to_string(hidden_size) +
                          " not divisible by num_heads " + std::to_string(num_heads));
    }
    auto probability = [](float p, const char* name) {
        if (!(p >= 0.0f && p < 1.0f)) {
            throw ConfigError(std::string("ModelConfig: ") + name + " must be in [0,1)");
        }
    };
    probability(dropout_prob, "dropout_prob");
    probability(attention_dropout_prob, "attention_dropout_prob");
    if (!(initializer_range > 0.0f)) {
        throw ConfigError("ModelConfig: initializer_range must be positive");
    }
    if (!(layer_norm_eps > 0.0f)) {
        throw ConfigError("ModelConfig: layer_norm_eps must be positive");
    }
    if (vocab_size < Vocabulary::kNumSpecial) {
        throw ConfigError("ModelConfig: vocab_size must cover the reserved tokens");
    }
}

std::string task_kind_name(TaskKind task) {
    return task == TaskKind::Classification ? "classification" : "regression";
}

TaskKind task_kind_from_name(const std::string& name) {
    if (name == "classification") return TaskKind::Classification;
    if (name == "regression") return TaskKind::Regression;
    throw ConfigError("unknown task kind '" + name + "'");
}

namespace {

Param make_param(std::string name, ParamGroup group, int layer, bool decay,
                 std::vector<int> shape) {
    Param p;
    p.name = std::move(name);
    p.group = group;
    p.layer = layer;
    p.decay = decay;
    p.value = Tensor::zeros(shape);
    p.grad = Tensor::zeros(shape);
    return p;
}

void fill_normal(Tensor& t, Rng& rng, float stddev) {
    for (auto& v : t.data) v = rng.next_normal(0.0f, stddev);
}

}  // namespace

EncoderModel::EncoderModel(ModelConfig cfg_in, TaskKind task_in, uint64_t seed)
    : cfg(cfg_in), task(task_in) {
    cfg.validate();
    live_heads.resize(cfg.num_layers);
    for (auto& heads : live_heads) {
        heads.resize(cfg.num_heads);
        for (int h = 0; h < cfg.num_heads; ++h) heads[h] = h;
    }
    build_params(seed, true);
}

EncoderModel::EncoderModel(ModelConfig cfg_in, TaskKind task_in,
                           std::vector<std::vector<int>> live_heads_in, ZeroInit)
    : cfg(cfg_in), task(task_in), live_heads(std::move(live_heads_in)) {
    cfg.validate();
    if (static_cast<int>(live_heads.size()) != cfg.num_layers) {
        throw ConfigError("EncoderModel: live_heads must list every layer");
    }
    for (const auto& heads : live_heads) {
        if (heads.empty()) throw ConfigError("EncoderModel: a layer has no live heads");
        for (int h : heads) {
            if (h < 0 || h >= cfg.num_heads) {
                throw ConfigError("EncoderModel: head index " + std::to_string(h) +
                                  " out of range");
            }
        }
    }
    build_params(0, false);
}

void EncoderModel::build_params(uint64_t seed, bool random_init) {
    const int h = cfg.hidden_size;
    const int dh = cfg.head_dim();
    const int task_out = task == TaskKind::Classification ? 3 : 1;

    word_embeddings = make_param("embeddings.word", ParamGroup::Embeddings, -1, true,
                                 {cfg.vocab_size, h});
    position_embeddings = make_param("embeddings.position", ParamGroup::Embeddings, -1, true,
                                     {cfg.max_position, h});
    segment_embeddings = make_param("embeddings.segment", ParamGroup::Embeddings, -1, true,
                                    {cfg.type_vocab_size, h});
    emb_ln_gamma =
        make_param("embeddings.layer_norm.gamma", ParamGroup::Embeddings, -1, false, {h});
    emb_ln_beta = make_param("embeddings.layer_norm.beta", ParamGroup::Embeddings, -1, false, {h});

    layers.clear();
    layers.resize(cfg.num_layers);
    for (int l = 0; l < cfg.num_layers; ++l) {
        const int width = static_cast<int>(live_heads[l].size()) * dh;
        const std::string prefix = "encoder.layer." + std::to_string(l) + ".";
        LayerParams& lp = layers[l];
        lp.query_w = make_param(prefix + "attention.query.weight", ParamGroup::Layer, l, true,
                                {h, width});
        lp.query_b = make_param(prefix + "attention.query.bias", ParamGroup::Layer, l, false,
                                {width});
        lp.key_w = make_param(prefix + "attention.key.weight", ParamGroup::Layer, l, true,
                              {h, width});
        lp.key_b = make_param(prefix + "attention.key.bias", ParamGroup::Layer, l, false, {width});
        lp.value_w = make_param(prefix + "attention.value.weight", ParamGroup::Layer, l, true,
                                {h, width});
        lp.value_b = make_param(prefix + "attention.value.bias", ParamGroup::Layer, l, false,
                                {width});
        lp.output_w = make_param(prefix + "attention.output.weight", ParamGroup::Layer, l, true,
                                 {width, h});
        lp.output_b = make_param(prefix + "attention.output.bias", ParamGroup::Layer, l, false,
                                 {h});
        lp.attn_ln_gamma = make_param(prefix + "attention.layer_norm.gamma", ParamGroup::Layer, l,
                                      false, {h});
        lp.attn_ln_beta = make_param(prefix + "attention.layer_norm.beta", ParamGroup::Layer, l,
                                     false, {h});
        lp.ff_in_w = make_param(prefix + "ffn.intermediate.weight", ParamGroup::Layer, l, true,
                                {h, cfg.intermediate_size});
        lp.ff_in_b = make_param(prefix + "ffn.intermediate.bias", ParamGroup::Layer, l, false,
                                {cfg.intermediate_size});
        lp.ff_out_w = make_param(prefix + "ffn.output.weight", ParamGroup::Layer, l, true,
                                 {cfg.intermediate_size, h});
        lp.ff_out_b = make_param(prefix + "ffn.output.bias", ParamGroup::Layer, l, false, {h});
        lp.ff_ln_gamma = make_param(prefix + "ffn.layer_norm.gamma", ParamGroup::Layer, l, false,
                                    {h});
        lp.ff_ln_beta = make_param(prefix + "ffn.layer_norm.beta", ParamGroup::Layer, l, false,
                                   {h});
    }

    pooler_w = make_param("pooler.weight", ParamGroup::Pooler, -1, true, {h, h});
    pooler_b = make_param("pooler.bias", ParamGroup::Pooler, -1, false, {h});

    mlm_dense_w = make_param("mlm.transform.weight", ParamGroup::MlmHead, -1, true, {h, h});
    mlm_dense_b = make_param("mlm.transform.bias", ParamGroup::MlmHead, -1, false, {h});
    mlm_ln_gamma = make_param("mlm.layer_norm.gamma", ParamGroup::MlmHead, -1, false, {h});
    mlm_ln_beta = make_param("mlm.layer_norm.beta", ParamGroup::MlmHead, -1, false, {h});
    mlm_out_w = make_param("mlm.decoder.weight", ParamGroup::MlmHead, -1, true,
                           {h, cfg.vocab_size});
    mlm_out_b = make_param("mlm.decoder.bias", ParamGroup::MlmHead, -1, false, {cfg.vocab_size});

    nsp_w = make_param("nsp.weight", ParamGroup::NspHead, -1, true, {h, 2});
    nsp_b = make_param("nsp.bias", ParamGroup::NspHead, -1, false, {2});

    task_w = make_param("task.weight", ParamGroup::TaskHead, -1, true, {h, task_out});
    task_b = make_param("task.bias", ParamGroup::TaskHead, -1, false, {task_out});

    if (random_init) {
        Rng rng(seed);
        for (Param* p : parameters()) {
            if (p->name.find("layer_norm.gamma") != std::string::npos) {
                p->value.fill(1.0f);
            } else if (p->name.find("layer_norm.beta") != std::string::npos ||
                       p->name.ends_with("bias")) {
                p->value.fill(0.0f);
            } else {
                fill_normal(p->value, rng, cfg.initializer_range);
            }
        }
    }
}

std::vector<Param*> EncoderModel::parameters() {
    std::vector<Param*> out;
    out.reserve(16 * layers.size() + 17);
    out.push_back(&word_embeddings);
    out.push_back(&position_embeddings);
    out.push_back(&segment_embeddings);
    out.push_back(&emb_ln_gamma);
    out.push_back(&emb_ln_beta);
    for (auto& lp : layers) {
        out.push_back(&lp.query_w);
        out.push_back(&lp.query_b);
        out.push_back(&lp.key_w);
        out.push_back(&lp.key_b);
        out.push_back(&lp.value_w);
        out.push_back(&lp.value_b);
        out.push_back(&lp.output_w);
        out.push_back(&lp.output_b);
        out.push_back(&lp.attn_ln_gamma);
        out.push_back(&lp.attn_ln_beta);
        out.push_back(&lp.ff_in_w);
        out.push_back(&lp.ff_in_b);
        out.push_back(&lp.ff_out_w);
        out.push_back(&lp.ff_out_b);
        out.push_back(&lp.ff_ln_gamma);
        out.push_back(&lp.ff_ln_beta);
    }
    out.push_back(&pooler_w);
    out.push_back(&pooler_b);
    out.push_back(&mlm_dense_w);
    out.push_back(&mlm_dense_b);
    out.push_back(&mlm_ln_gamma);
    out.push_back(&mlm_ln_beta);
    out.push_back(&mlm_out_w);
    out.push_back(&mlm_out_b);
    out.push_back(&nsp_w);
    out.push_back(&nsp_b);
    out.push_back(&task_w);
    out.push_back(&task_b);
    return out;
}

std::vector<const Param*> EncoderModel::parameters() const {
    std::vector<const Param*> out;
    auto mut = const_cast<EncoderModel*>(this)->parameters();
    out.assign(mut.begin(), mut.end());
    return out;
}

void EncoderModel::zero_grads() const {
    for (const Param* p : parameters()) p->grad.fill(0.0f);
}

long EncoderModel::parameter_count() const {
    long total = 0;
    for (const Param* p : parameters()) total += static_cast<long>(p->value.numel());
    return total;
}

Var EncoderModel::leaf(Tape& tape, const Param& p) const {
    return tape.leaf(p.value, &p.grad);
}

EncoderOutput EncoderModel::forward(Tape& tape, const InputFeatures& f, bool training,
                                    Rng& rng) const {
    const int seq = f.length();
    if (seq == 0 || f.attention_mask.size() != f.input_ids.size() ||
        f.segment_ids.size() != f.input_ids.size()) {
        throw ContractError("forward: feature sequences must be non-empty and equal length");
    }
    if (seq > cfg.max_position) {
        throw ContractError("forward: sequence length " + std::to_string(seq) +
                            " exceeds max_position " + std::to_string(cfg.max_position));
    }
    for (int id : f.input_ids) {
        if (id < 0 || id >= cfg.vocab_size) {
            throw ContractError("forward: token id " + std::to_string(id) +
                                " out of range for vocab size " + std::to_string(cfg.vocab_size));
        }
    }
    for (int s : f.segment_ids) {
        if (s < 0 || s >= cfg.type_vocab_size) {
            throw ContractError("forward: segment id " + std::to_string(s) + " out of range");
        }
    }

    std::vector<int> positions(seq);
    for (int i = 0; i < seq; ++i) positions[i] = i;

    Var emb = tape.gather_rows(leaf(tape, word_embeddings), f.input_ids);
    Var pos = tape.gather_rows(leaf(tape, position_embeddings), positions);
    Var seg = tape.gather_rows(leaf(tape, segment_embeddings), f.segment_ids);
    Var x = tape.add(tape.add(emb, pos), seg);
    x = tape.layer_norm(x, leaf(tape, emb_ln_gamma), leaf(tape, emb_ln_beta), cfg.layer_norm_eps);
    x = tape.dropout(x, cfg.dropout_prob, training, rng);

    // Additive attention mask: pad keys get -1e9, which underflows to an
    // exact zero weight after the max-shifted softmax.
    Tensor mask2d = Tensor::zeros({seq, seq});
    for (int i = 0; i < seq; ++i) {
        for (int j = 0; j < seq; ++j) {
            mask2d.at(i, j) = f.attention_mask[j] ? 0.0f : -1e9f;
        }
    }
    const Var attn_mask = tape.input(std::move(mask2d));

    AttentionMaps maps;
    maps.heads = live_heads;
    maps.weights.resize(layers.size());

    const int dh = cfg.head_dim();
    const float inv_sqrt_dh = 1.0f / std::sqrt(static_cast<float>(dh));
    for (size_t l = 0; l < layers.size(); ++l) {
        const LayerParams& lp = layers[l];
        const int heads_live = static_cast<int>(live_heads[l].size());
        Var q = tape.add_bias(tape.matmul(x, leaf(tape, lp.query_w)), leaf(tape, lp.query_b));
        Var k = tape.add_bias(tape.matmul(x, leaf(tape, lp.key_w)), leaf(tape, lp.key_b));
        Var v = tape.add_bias(tape.matmul(x, leaf(tape, lp.value_w)), leaf(tape, lp.value_b));

        std::vector<Var> contexts;
        contexts.reserve(heads_live);
        for (int hi = 0; hi < heads_live; ++hi) {
            Var qh = tape.slice_cols(q, hi * dh, dh);
            Var kh = tape.slice_cols(k, hi * dh, dh);
            Var vh = tape.slice_cols(v, hi * dh, dh);
            Var scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt_dh);
            Var probs = tape.softmax(tape.add(scores, attn_mask), 1);
            maps.weights[l].push_back(tape.value(probs));
            Var dropped = tape.dropout(probs, cfg.attention_dropout_prob, training, rng);
            contexts.push_back(tape.matmul(dropped, vh));
        }
        Var ctx = contexts.size() == 1 ? contexts[0] : tape.concat_cols(contexts);
        Var attn_out =
            tape.add_bias(tape.matmul(ctx, leaf(tape, lp.output_w)), leaf(tape, lp.output_b));
        attn_out = tape.dropout(attn_out, cfg.dropout_prob, training, rng);
        x = tape.layer_norm(tape.add(x, attn_out), leaf(tape, lp.attn_ln_gamma),
                            leaf(tape, lp.attn_ln_beta), cfg.layer_norm_eps);

        Var ff = tape.gelu(
            tape.add_bias(tape.matmul(x, leaf(tape, lp.ff_in_w)), leaf(tape, lp.ff_in_b)));
        Var ff_out =
            tape.add_bias(tape.matmul(ff, leaf(tape, lp.ff_out_w)), leaf(tape, lp.ff_out_b));
        ff_out = tape.dropout(ff_out, cfg.dropout_prob, training, rng);
        x = tape.layer_norm(tape.add(x, ff_out), leaf(tape, lp.ff_ln_gamma),
                            leaf(tape, lp.ff_ln_beta), cfg.layer_norm_eps);
    }

    Var cls_row = tape.gather_rows(x, {0});
    Var pooled = cls_row;
    if (cfg.use_pooler) {
        pooled = tape.tanh(
            tape.add_bias(tape.matmul(cls_row, leaf(tape, pooler_w)), leaf(tape, pooler_b)));
    }
    return EncoderOutput{x, pooled, std::move(maps)};
}

Var EncoderModel::mlm_logits(Tape& tape, Var sequence_states,
                             const std::vector<int>& positions) const {
    Var x = tape.gather_rows(sequence_states, positions);
    x = tape.gelu(tape.add_bias(tape.matmul(x, leaf(tape, mlm_dense_w)), leaf(tape, mlm_dense_b)));
    x = tape.layer_norm(x, leaf(tape, mlm_ln_gamma), leaf(tape, mlm_ln_beta), cfg.layer_norm_eps);
    return tape.add_bias(tape.matmul(x, leaf(tape, mlm_out_w)), leaf(tape, mlm_out_b));
}

Var EncoderModel::nsp_logits(Tape& tape, Var pooled) const {
    return tape.add_bias(tape.matmul(pooled, leaf(tape, nsp_w)), leaf(tape, nsp_b));
}

Var EncoderModel::classify(Tape& tape, Var pooled, bool training, Rng& rng) const {
    if (task != TaskKind::Classification) {
        throw ModeError("classify: the task head is a regressor");
    }
    Var dropped = tape.dropout(pooled, cfg.dropout_prob, training, rng);
    return tape.add_bias(tape.matmul(dropped, leaf(tape, task_w)), leaf(tape, task_b));
}

Var EncoderModel::regress(Tape& tape, Var pooled, bool training, Rng& rng) const {
    if (task != TaskKind::Regression) {
        throw ModeError("regress: the task head is a classifier");
    }
    Var dropped = tape.dropout(pooled, cfg.dropout_prob, training, rng);
    return tape.add_bias(tape.matmul(dropped, leaf(tape, task_w)), leaf(tape, task_b));
}

EncoderModel resize_embeddings(const EncoderModel& model, int new_vocab_size, uint64_t seed) {
    if (new_vocab_size < Vocabulary::kNumSpecial) {
        throw ConfigError("resize_embeddings: new vocab size " + std::to_string(new_vocab_size) +
                          " smaller than the reserved token set");
    }
    EncoderModel out = model;
    const int old_size = model.cfg.vocab_size;
    const int h = model.cfg.hidden_size;
    const int keep = std::min(old_size, new_vocab_size);
    out.cfg.vocab_size = new_vocab_size;

    Rng rng(seed);
    // Word embedding rows [0, keep) preserved; new rows drawn in row order.
    Tensor word = Tensor::zeros({new_vocab_size, h});
    std::copy(model.word_embeddings.value.data.begin(),
              model.word_embeddings.value.data.begin() + static_cast<size_t>(keep) * h,
              word.data.begin());
    for (int r = keep; r < new_vocab_size; ++r) {
        for (int c = 0; c < h; ++c) {
            word.at(r, c) = rng.next_normal(0.0f, model.cfg.initializer_range);
        }
    }
    out.word_embeddings.value = std::move(word);
    out.word_embeddings.grad = Tensor::zeros({new_vocab_size, h});

    // Decoder weight is [h x vocab]: columns [0, keep) preserved, then new
    // columns drawn column by column.
    Tensor dec = Tensor::zeros({h, new_vocab_size});
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < keep; ++c) dec.at(r, c) = model.mlm_out_w.value.at(r, c);
    }
    for (int c = keep; c < new_vocab_size; ++c) {
        for (int r = 0; r < h; ++r) {
            dec.at(r, c) = rng.next_normal(0.0f, model.cfg.initializer_range);
        }
    }
    out.mlm_out_w.value = std::move(dec);
    out.mlm_out_w.grad = Tensor::zeros({h, new_vocab_size});

    Tensor dec_b = Tensor::zeros({new_vocab_size});
    std::copy(model.mlm_out_b.value.data.begin(), model.mlm_out_b.value.data.begin() + keep,
              dec_b.data.begin());
    out.mlm_out_b.value = std::move(dec_b);
    out.mlm_out_b.grad = Tensor::zeros({new_vocab_size});
    return out;
}

EncoderModel prune_heads(const EncoderModel& model, const std::map<int, std::vector<int>>& spec) {
    EncoderModel out = model;
    const int dh = model.cfg.head_dim();
    const int h = model.cfg.hidden_size;
    for (const auto& [layer, heads] : spec) {
        if (layer < 0 || layer >= model.cfg.num_layers) {
            throw ConfigError("prune_heads: layer " + std::to_string(layer) + " out of range");
        }
        const std::vector<int>& live = model.live_heads[layer];
        std::vector<int> keep_positions;  // positions within the current live list
        std::vector<int> new_live;
        for (size_t pos = 0; pos < live.size(); ++pos) {
            if (std::find(heads.begin(), heads.end(), live[pos]) == heads.end()) {
                keep_positions.push_back(static_cast<int>(pos));
                new_live.push_back(live[pos]);
            }
        }
        for (int head : heads) {
            if (std::find(live.begin(), live.end(), head) == live.end()) {
                throw ConfigError("prune_heads: head " + std::to_string(head) +
                                  " is not live in layer " + std::to_string(layer));
            }
        }
        if (new_live.empty()) {
            throw ConfigError("prune_heads: pruning every head of layer " +
                              std::to_string(layer));
        }
        if (new_live.size() == live.size()) continue;

        const int width = static_cast<int>(new_live.size()) * dh;
        LayerParams& lp = out.layers[layer];
        const LayerParams& src = model.layers[layer];
        auto shrink_cols = [&](Param& dst, const Param& from) {
            Tensor w = Tensor::zeros({h, width});
            for (int r = 0; r < h; ++r) {
                int col = 0;
                for (int pos : keep_positions) {
                    for (int c = 0; c < dh; ++c) {
                        w.at(r, col++) = from.value.at(r, pos * dh + c);
                    }
                }
            }
            dst.value = std::move(w);
            dst.grad = Tensor::zeros({h, width});
        };
        auto shrink_bias = [&](Param& dst, const Param& from) {
            Tensor b = Tensor::zeros({width});
            int col = 0;
            for (int pos : keep_positions) {
                for (int c = 0; c < dh; ++c) b.data[col++] = from.value.data[pos * dh + c];
            }
            dst.value = std::move(b);
            dst.grad = Tensor::zeros({width});
        };
        shrink_cols(lp.query_w, src.query_w);
        shrink_bias(lp.query_b, src.query_b);
        shrink_cols(lp.key_w, src.key_w);
        shrink_bias(lp.key_b, src.key_b);
        shrink_cols(lp.value_w, src.value_w);
        shrink_bias(lp.value_b, src.value_b);
        Tensor ow = Tensor::zeros({width, h});
        int row = 0;
        for (int pos : keep_positions) {
            for (int c = 0; c < dh; ++c) {
                for (int j = 0; j < h; ++j) {
                    ow.at(row, j) = src.output_w.value.at(pos * dh + c, j);
                }
                ++row;
            }
        }
        lp.output_w.value = std::move(ow);
        lp.output_w.grad = Tensor::zeros({width, h});
        out.live_heads[layer] = std::move(new_live);
    }
    return out;
}

}  // namespace finsent
