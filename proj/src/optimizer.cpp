#include "finsent/optimizer.hpp"

#include <cmath>
#include <string>

#include "finsent/errors.hpp"

namespace finsent {

void TrainConfig::validate() const {
    if (!(base_lr > 0.0)) throw ConfigError("TrainConfig: base_lr must be positive");
    if (warmup_proportion < 0.0 || warmup_proportion > 1.0) {
        throw ConfigError("TrainConfig: warmup_proportion must be in [0, 1]");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
        throw ConfigError("TrainConfig: dropout must be in [0, 1)");
    }
    if (!(discrimination_rate > 0.0 && discrimination_rate <= 1.0)) {
        throw ConfigError("TrainConfig: discrimination_rate must be in (0, 1]");
    }
    auto at_least_one = [](int v, const char* name) {
        if (v < 1) throw ConfigError(std::string("TrainConfig: ") + name + " must be >= 1");
    };
    at_least_one(max_seq_len, "max_seq_len");
    at_least_one(batch_size, "batch_size");
    at_least_one(grad_accumulation_steps, "grad_accumulation_steps");
    if (epochs < 0) throw ConfigError("TrainConfig: epochs must be >= 0");
    if (weight_decay < 0.0) throw ConfigError("TrainConfig: weight_decay must be >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw ConfigError("TrainConfig: adam betas must be in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("TrainConfig: adam_eps must be positive");
}

double lr_schedule(long step, long total_steps, double warmup_proportion, double base_lr) {
    if (total_steps < 1) throw ContractError("lr_schedule: total_steps must be >= 1");
    if (step < 0 || step > total_steps) {
        throw ContractError("lr_schedule: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(total_steps) + "]");
    }
    if (warmup_proportion < 0.0 || warmup_proportion > 1.0) {
        throw ContractError("lr_schedule: warmup_proportion outside [0, 1]");
    }
    const long warmup = std::llround(warmup_proportion * static_cast<double>(total_steps));
    if (step < warmup) {
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
    }
    const long span = total_steps - warmup;
    if (span <= 0) return step >= total_steps ? 0.0 : base_lr;
    return base_lr * static_cast<double>(total_steps - step) / static_cast<double>(span);
}

double DiscriminativeLrs::layer(int l) const {
    return base_lr * std::pow(rate, static_cast<double>(num_layers - l));
}

double DiscriminativeLrs::embeddings() const {
    return base_lr * std::pow(rate, static_cast<double>(num_layers + 1));
}

double DiscriminativeLrs::rate_for(const Param& p) const {
    switch (p.group) {
        case ParamGroup::TaskHead:
        case ParamGroup::Pooler:
        case ParamGroup::MlmHead:
        case ParamGroup::NspHead:
            return head();
        case ParamGroup::Layer:
            return layer(p.layer);
        case ParamGroup::Embeddings:
            return embeddings();
    }
    throw ContractError("rate_for: unknown parameter group");
}

DiscriminativeLrs layer_lrs(double base_lr, double discrimination_rate, int num_layers) {
    if (num_layers < 1) throw ConfigError("layer_lrs: num_layers must be >= 1");
    if (!(discrimination_rate > 0.0 && discrimination_rate <= 1.0)) {
        throw ConfigError("layer_lrs: discrimination_rate must be in (0, 1]");
    }
    return DiscriminativeLrs{base_lr, discrimination_rate, num_layers};
}

void adam_step(const std::vector<Param*>& params, OptimizerState& state, double lr_now,
               const std::vector<double>& group_scales, const TrainConfig& cfg) {
    if (!group_scales.empty() && group_scales.size() != params.size()) {
        throw ContractError("adam_step: group_scales size does not match params");
    }
    if (state.first_moment.empty()) {
        state.first_moment.reserve(params.size());
        state.second_moment.reserve(params.size());
        for (const Param* p : params) {
            state.first_moment.push_back(Tensor::zeros(p->value.shape));
            state.second_moment.push_back(Tensor::zeros(p->value.shape));
        }
    }
    if (state.first_moment.size() != params.size()) {
        throw ContractError("adam_step: optimizer state tracks a different parameter set");
    }
    for (size_t i = 0; i < params.size(); ++i) {
        if (!state.first_moment[i].same_shape(params[i]->value)) {
            throw ContractError("adam_step: moment shape mismatch for " + params[i]->name);
        }
        if (!params[i]->grad.same_shape(params[i]->value)) {
            throw ContractError("adam_step: gradient shape mismatch for " + params[i]->name);
        }
    }

    state.step += 1;

    double norm_sq = 0.0;
    for (const Param* p : params) {
        for (float g : p->grad.data) norm_sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(norm_sq);
    const double clip =
        (cfg.max_grad_norm > 0.0 && norm > cfg.max_grad_norm) ? cfg.max_grad_norm / norm : 1.0;

    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double m_corr =
        cfg.adam_bias_correction ? 1.0 - std::pow(b1, static_cast<double>(state.step)) : 1.0;
    const double v_corr =
        cfg.adam_bias_correction ? 1.0 - std::pow(b2, static_cast<double>(state.step)) : 1.0;

    for (size_t i = 0; i < params.size(); ++i) {
        Param* p = params[i];
        const double lr = lr_now * (group_scales.empty() ? 1.0 : group_scales[i]);
        const double wd = p->decay ? cfg.weight_decay : 0.0;
        float* value = p->value.data.data();
        const float* grad = p->grad.data.data();
        float* m = state.first_moment[i].data.data();
        float* v = state.second_moment[i].data.data();
        for (size_t j = 0; j < p->value.numel(); ++j) {
            const double g = static_cast<double>(grad[j]) * clip;
            const double mj = b1 * m[j] + (1.0 - b1) * g;
            const double vj = b2 * v[j] + (1.0 - b2) * g * g;
            m[j] = static_cast<float>(mj);
            v[j] = static_cast<float>(vj);
            const double update =
                lr * ((mj / m_corr) / (std::sqrt(vj / v_corr) + cfg.adam_eps) + wd * value[j]);
            value[j] = static_cast<float>(static_cast<double>(value[j]) - update);
        }
    }
}

}  // namespace finsent
