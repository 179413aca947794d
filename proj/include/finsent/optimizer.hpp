#pragma once

#include <cstdint>
#include <vector>

#include "finsent/model.hpp"
#include "finsent/tensor.hpp"

namespace finsent {

/// Fine-tuning hyperparameters in one validated record.
struct TrainConfig {
    double base_lr = 2e-5;
    double warmup_proportion = 0.21;
    double dropout = 0.12;
    int max_seq_len = 64;
    int batch_size = 64;
    int epochs = 10;
    double discrimination_rate = 0.87;
    int grad_accumulation_steps = 1;
    double weight_decay = 0.01;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-6;
    double max_grad_norm = 1.0;  // global-norm clip; <= 0 disables
    // Off by default: the optimizer applies raw first/second moments without
    // the 1/(1-beta^t) correction. Enable to compare against standard Adam.
    bool adam_bias_correction = false;
    uint64_t seed = 42;

    void validate() const;  // throws ConfigError
};

/// Per-parameter Adam moments, allocated on first use.
struct OptimizerState {
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
    long step = 0;
};

/// Warmup-linear schedule: ramps 0 -> base_lr over round(warmup_proportion *
/// total_steps) steps, then decays linearly to 0 at total_steps.
double lr_schedule(long step, long total_steps, double warmup_proportion, double base_lr);

/// Discriminative learning rates: the task head and pooler run at base_lr,
/// encoder layer l (0 = bottom) at base_lr * rate^(num_layers - l), and the
/// embeddings at base_lr * rate^(num_layers + 1).
struct DiscriminativeLrs {
    double base_lr = 0.0;
    double rate = 1.0;
    int num_layers = 0;

    double head() const { return base_lr; }
    double layer(int l) const;
    double embeddings() const;
    double rate_for(const Param& p) const;
    /// Multiplier relative to base_lr (what the optimizer consumes).
    double scale_for(const Param& p) const { return rate_for(p) / base_lr; }
};

DiscriminativeLrs layer_lrs(double base_lr, double discrimination_rate, int num_layers);

/// One optimizer step over `params`, reading each param's accumulated (and
/// already averaged) gradient. Order of operations: global-norm clip, then
/// moment updates, then update = lr * scale * (m_hat / (sqrt(v_hat) + eps) +
/// weight_decay * value). No bias correction unless configured. Weight decay
/// skips biases and layer-norm affines (Param::decay). lr_now == 0 leaves
/// parameter values bit-identical.
void adam_step(const std::vector<Param*>& params, OptimizerState& state, double lr_now,
               const std::vector<double>& group_scales, const TrainConfig& cfg);

}  // namespace finsent
