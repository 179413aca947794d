#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "finsent/tape.hpp"
#include "finsent/tensor.hpp"
#include "finsent/tokenizer.hpp"

namespace finsent {

/// Architecture hyperparameters. The reference-scale configuration
/// (12 layers, 12 heads, 768 hidden) is expressible; defaults are desk-scale.
struct ModelConfig {
    int num_layers = 4;
    int num_heads = 4;
    int hidden_size = 128;
    int intermediate_size = 512;
    int vocab_size = 8192;
    int max_position = 64;
    int type_vocab_size = 2;
    float dropout_prob = 0.12f;
    float attention_dropout_prob = 0.12f;
    float initializer_range = 0.02f;
    float layer_norm_eps = 1e-12f;
    // The task head reads a tanh-dense pooler over the [CLS] state by
    // default; switching this off feeds the raw [CLS] state instead.
    bool use_pooler = true;

    int head_dim() const { return hidden_size / num_heads; }
    void validate() const;  // throws ConfigError naming the violated invariant
};

enum class TaskKind { Classification, Regression };

std::string task_kind_name(TaskKind task);
TaskKind task_kind_from_name(const std::string& name);

/// Learning-rate / decay grouping of a parameter.
enum class ParamGroup { Embeddings, Layer, Pooler, MlmHead, NspHead, TaskHead };

struct Param {
    std::string name;
    ParamGroup group = ParamGroup::Embeddings;
    int layer = -1;     // only for ParamGroup::Layer
    bool decay = true;  // weight decay skipped for biases and layer-norm affines
    Tensor value;
    // Gradient sink. Not part of the logical model state: eval-mode forwards
    // never touch it, training steps require exclusive access.
    mutable Tensor grad;
};

struct LayerParams {
    Param query_w, query_b;
    Param key_w, key_b;
    Param value_w, value_b;
    Param output_w, output_b;
    Param attn_ln_gamma, attn_ln_beta;
    Param ff_in_w, ff_in_b;
    Param ff_out_w, ff_out_b;
    Param ff_ln_gamma, ff_ln_beta;
};

/// Per-layer, per-head attention weights captured during a forward pass
/// (before attention dropout). heads[l] lists the original head indices that
/// are still live in layer l.
struct AttentionMaps {
    std::vector<std::vector<Tensor>> weights;
    std::vector<std::vector<int>> heads;
};

struct EncoderOutput {
    Var sequence_states;  // [seq x hidden]
    Var pooled;           // [1 x hidden]
    AttentionMaps attention;
};

/// Bidirectional transformer encoder (post-layer-norm residual ordering)
/// with masked-LM, next-sentence, and task heads. The masked-LM decoder is
/// untied from the input embeddings. Immutable during inference; training
/// steps mutate parameter values and need exclusive access.
class EncoderModel {
public:
    struct ZeroInit {};

    /// Random initialization: weights ~ Normal(0, initializer_range),
    /// biases 0, layer-norm gamma 1 / beta 0. Deterministic per seed.
    EncoderModel(ModelConfig cfg, TaskKind task, uint64_t seed);

    /// Zero-filled parameters with the given head layout (checkpoint loading).
    EncoderModel(ModelConfig cfg, TaskKind task, std::vector<std::vector<int>> live_heads,
                 ZeroInit);

    ModelConfig cfg;
    TaskKind task;
    std::vector<std::vector<int>> live_heads;

    Param word_embeddings, position_embeddings, segment_embeddings;
    Param emb_ln_gamma, emb_ln_beta;
    std::vector<LayerParams> layers;
    Param pooler_w, pooler_b;
    Param mlm_dense_w, mlm_dense_b, mlm_ln_gamma, mlm_ln_beta, mlm_out_w, mlm_out_b;
    Param nsp_w, nsp_b;
    Param task_w, task_b;

    /// All parameters in a fixed, documented order (also the checkpoint
    /// manifest order).
    std::vector<Param*> parameters();
    std::vector<const Param*> parameters() const;
    void zero_grads() const;
    long parameter_count() const;

    /// Encoder pass over one feature triple. Padded key positions receive a
    /// -1e9 additive attention logit, so live outputs are independent of pad
    /// token ids. pooled is tanh(dense([CLS] state)) (or the raw [CLS] state
    /// when use_pooler is off).
    EncoderOutput forward(Tape& tape, const InputFeatures& features, bool training,
                          Rng& rng) const;

    /// Vocabulary logits at the selected sequence positions: [n x vocab].
    Var mlm_logits(Tape& tape, Var sequence_states, const std::vector<int>& positions) const;

    /// Binary is-next / not-next logits: [1 x 2].
    Var nsp_logits(Tape& tape, Var pooled) const;

    /// Three-class sentiment logits ordered [positive, negative, neutral].
    Var classify(Tape& tape, Var pooled, bool training, Rng& rng) const;

    /// Real-valued sentiment score: [1 x 1].
    Var regress(Tape& tape, Var pooled, bool training, Rng& rng) const;

private:
    void build_params(uint64_t seed, bool random_init);
    Var leaf(Tape& tape, const Param& p) const;
};

/// Rows [0, min(old, new)) of the word embeddings (and matching masked-LM
/// decoder entries) are preserved bit-exactly; new entries follow the init
/// scheme under the given seed.
EncoderModel resize_embeddings(const EncoderModel& model, int new_vocab_size, uint64_t seed);

/// Removes the listed heads (original indices) from the attention
/// projections. Forward outputs equal the original model with those heads'
/// context vectors zeroed. Each layer must keep at least one live head.
EncoderModel prune_heads(const EncoderModel& model, const std::map<int, std::vector<int>>& spec);

}  // namespace finsent
