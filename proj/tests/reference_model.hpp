#pragma once

// Test-only 64-bit reference forward pass for the encoder. Mirrors the
// documented model semantics (post-layer-norm residuals, -1e9 pad logits,
// tanh pooler, tanh-approximation gelu, untied decoder) with plain double
// loops and no Tape involvement, so central finite differences over it are
// free of f32 noise.

#include <map>
#include <string>
#include <vector>

#include "finsent/model.hpp"
#include "finsent/tokenizer.hpp"
#include "reference_ops.hpp"

namespace refmodel {

using refops::dvec;

struct LossSpec {
    finsent::InputFeatures features;
    std::vector<int> mlm_positions;
    std::vector<int> mlm_targets;
    int nsp_label = -1;  // -1 disables the term
    int cls_label = -1;  // -1 disables the term
    bool regression = false;
    double regression_target = 0.0;
};

inline dvec flatten_params(const finsent::EncoderModel& model) {
    dvec flat;
    for (const finsent::Param* p : model.parameters()) {
        for (float v : p->value.data) flat.push_back(v);
    }
    return flat;
}

// Computes the joint loss (masked-LM + next-sentence + task terms as enabled
// by the spec) from a flat parameter vector laid out in parameters() order.
inline double loss(const finsent::EncoderModel& shapes, const dvec& flat, const LossSpec& spec) {
    const finsent::ModelConfig& cfg = shapes.cfg;
    const int h = cfg.hidden_size;
    const int dh = cfg.head_dim();
    const double eps = cfg.layer_norm_eps;
    const finsent::InputFeatures& f = spec.features;
    const int seq = f.length();

    // Unpack tensors by name in declaration order.
    std::map<std::string, std::pair<const double*, std::vector<int>>> tensors;
    size_t off = 0;
    for (const finsent::Param* p : shapes.parameters()) {
        tensors[p->name] = {flat.data() + off, p->value.shape};
        off += p->value.numel();
    }
    auto view = [&](const std::string& name) { return tensors.at(name).first; };
    auto as_vec = [&](const std::string& name) {
        const auto& [ptr, shape] = tensors.at(name);
        return dvec(ptr, ptr + finsent::shape_numel(shape));
    };

    // Embedding sum + layer norm.
    dvec x(static_cast<size_t>(seq) * h);
    const double* word = view("embeddings.word");
    const double* pos = view("embeddings.position");
    const double* seg = view("embeddings.segment");
    for (int i = 0; i < seq; ++i) {
        for (int j = 0; j < h; ++j) {
            x[static_cast<size_t>(i) * h + j] =
                word[static_cast<size_t>(f.input_ids[i]) * h + j] +
                pos[static_cast<size_t>(i) * h + j] +
                seg[static_cast<size_t>(f.segment_ids[i]) * h + j];
        }
    }
    x = refops::layer_norm(x, as_vec("embeddings.layer_norm.gamma"),
                           as_vec("embeddings.layer_norm.beta"), seq, h, eps);

    for (int l = 0; l < cfg.num_layers; ++l) {
        const std::string p = "encoder.layer." + std::to_string(l) + ".";
        const int heads_live = static_cast<int>(shapes.live_heads[l].size());
        const int width = heads_live * dh;
        const dvec q = refops::add_bias(
            refops::matmul(x, as_vec(p + "attention.query.weight"), seq, h, width),
            as_vec(p + "attention.query.bias"), seq, width);
        const dvec k = refops::add_bias(
            refops::matmul(x, as_vec(p + "attention.key.weight"), seq, h, width),
            as_vec(p + "attention.key.bias"), seq, width);
        const dvec v = refops::add_bias(
            refops::matmul(x, as_vec(p + "attention.value.weight"), seq, h, width),
            as_vec(p + "attention.value.bias"), seq, width);

        dvec ctx(static_cast<size_t>(seq) * width);
        for (int head = 0; head < heads_live; ++head) {
            dvec scores(static_cast<size_t>(seq) * seq);
            const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
            for (int i = 0; i < seq; ++i) {
                for (int j = 0; j < seq; ++j) {
                    double dot = 0.0;
                    for (int c = 0; c < dh; ++c) {
                        dot += q[static_cast<size_t>(i) * width + head * dh + c] *
                               k[static_cast<size_t>(j) * width + head * dh + c];
                    }
                    scores[static_cast<size_t>(i) * seq + j] =
                        dot * inv_sqrt + (f.attention_mask[j] ? 0.0 : -1e9);
                }
            }
            const dvec probs = refops::softmax_rows(scores, seq, seq);
            for (int i = 0; i < seq; ++i) {
                for (int c = 0; c < dh; ++c) {
                    double acc = 0.0;
                    for (int j = 0; j < seq; ++j) {
                        acc += probs[static_cast<size_t>(i) * seq + j] *
                               v[static_cast<size_t>(j) * width + head * dh + c];
                    }
                    ctx[static_cast<size_t>(i) * width + head * dh + c] = acc;
                }
            }
        }

        const dvec attn_out = refops::add_bias(
            refops::matmul(ctx, as_vec(p + "attention.output.weight"), seq, width, h),
            as_vec(p + "attention.output.bias"), seq, h);
        x = refops::layer_norm(refops::add(x, attn_out), as_vec(p + "attention.layer_norm.gamma"),
                               as_vec(p + "attention.layer_norm.beta"), seq, h, eps);

        const int inter = cfg.intermediate_size;
        const dvec ff = refops::gelu(refops::add_bias(
            refops::matmul(x, as_vec(p + "ffn.intermediate.weight"), seq, h, inter),
            as_vec(p + "ffn.intermediate.bias"), seq, inter));
        const dvec ff_out = refops::add_bias(
            refops::matmul(ff, as_vec(p + "ffn.output.weight"), seq, inter, h),
            as_vec(p + "ffn.output.bias"), seq, h);
        x = refops::layer_norm(refops::add(x, ff_out), as_vec(p + "ffn.layer_norm.gamma"),
                               as_vec(p + "ffn.layer_norm.beta"), seq, h, eps);
    }

    dvec pooled(x.begin(), x.begin() + h);
    if (cfg.use_pooler) {
        pooled = refops::tanh_vec(refops::add_bias(
            refops::matmul(pooled, as_vec("pooler.weight"), 1, h, h), as_vec("pooler.bias"), 1,
            h));
    }

    double total = 0.0;
    if (!spec.mlm_positions.empty()) {
        const int n = static_cast<int>(spec.mlm_positions.size());
        dvec picked(static_cast<size_t>(n) * h);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < h; ++j) {
                picked[static_cast<size_t>(i) * h + j] =
                    x[static_cast<size_t>(spec.mlm_positions[i]) * h + j];
            }
        }
        dvec t = refops::gelu(refops::add_bias(
            refops::matmul(picked, as_vec("mlm.transform.weight"), n, h, h),
            as_vec("mlm.transform.bias"), n, h));
        t = refops::layer_norm(t, as_vec("mlm.layer_norm.gamma"), as_vec("mlm.layer_norm.beta"),
                               n, h, eps);
        const dvec logits = refops::add_bias(
            refops::matmul(t, as_vec("mlm.decoder.weight"), n, h, cfg.vocab_size),
            as_vec("mlm.decoder.bias"), n, cfg.vocab_size);
        total += refops::cross_entropy(logits, spec.mlm_targets, n, cfg.vocab_size);
    }
    if (spec.nsp_label >= 0) {
        const dvec logits = refops::add_bias(refops::matmul(pooled, as_vec("nsp.weight"), 1, h, 2),
                                             as_vec("nsp.bias"), 1, 2);
        total += refops::cross_entropy(logits, {spec.nsp_label}, 1, 2);
    }
    if (spec.cls_label >= 0) {
        const dvec logits = refops::add_bias(refops::matmul(pooled, as_vec("task.weight"), 1, h, 3),
                                             as_vec("task.bias"), 1, 3);
        total += refops::cross_entropy(logits, {spec.cls_label}, 1, 3);
    }
    if (spec.regression) {
        const dvec out = refops::add_bias(refops::matmul(pooled, as_vec("task.weight"), 1, h, 1),
                                          as_vec("task.bias"), 1, 1);
        total += refops::mse(out, {spec.regression_target});
    }
    return total;
}

}  // namespace refmodel
