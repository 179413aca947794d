#pragma once

// Shared helpers for the test binaries.

#include <string>
#include <vector>

#include "finsent/model.hpp"
#include "finsent/rng.hpp"
#include "finsent/tape.hpp"
#include "reference_model.hpp"

namespace testutil {

// Builds the same joint loss as refmodel::loss on a tape, in training-off
// mode (no dropout), so f32 backward can be compared with the 64-bit oracle.
inline finsent::Var model_loss_on_tape(const finsent::EncoderModel& model, finsent::Tape& tape,
                                       const refmodel::LossSpec& spec) {
    finsent::Rng rng(0);
    const finsent::EncoderOutput out = model.forward(tape, spec.features, false, rng);
    finsent::Var total{-1};
    auto accumulate = [&](finsent::Var term) {
        total = total.valid() ? tape.add(total, term) : term;
    };
    if (!spec.mlm_positions.empty()) {
        finsent::Var logits = model.mlm_logits(tape, out.sequence_states, spec.mlm_positions);
        accumulate(tape.cross_entropy(logits, spec.mlm_targets));
    }
    if (spec.nsp_label >= 0) {
        accumulate(tape.cross_entropy(model.nsp_logits(tape, out.pooled), {spec.nsp_label}));
    }
    if (spec.cls_label >= 0) {
        accumulate(tape.cross_entropy(model.classify(tape, out.pooled, false, rng),
                                      {spec.cls_label}));
    }
    if (spec.regression) {
        accumulate(tape.mse(model.regress(tape, out.pooled, false, rng),
                            finsent::Tensor({1, 1},
                                            {static_cast<float>(spec.regression_target)})));
    }
    return total;
}

// Fills grads of every model parameter for the given loss spec; returns the
// f32 loss value.
inline float model_backward(const finsent::EncoderModel& model, const refmodel::LossSpec& spec) {
    model.zero_grads();
    finsent::Tape tape;
    finsent::Var loss = model_loss_on_tape(model, tape, spec);
    tape.backward(loss);
    return tape.value(loss).data[0];
}

inline std::vector<float> flat_grads(const finsent::EncoderModel& model) {
    std::vector<float> out;
    for (const finsent::Param* p : model.parameters()) {
        out.insert(out.end(), p->grad.data.begin(), p->grad.data.end());
    }
    return out;
}

inline std::vector<float> flat_values(const finsent::EncoderModel& model) {
    std::vector<float> out;
    for (const finsent::Param* p : model.parameters()) {
        out.insert(out.end(), p->value.data.begin(), p->value.data.end());
    }
    return out;
}

}  // namespace testutil
