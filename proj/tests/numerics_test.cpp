#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "finsent/errors.hpp"
#include "finsent/rng.hpp"
#include "finsent/tape.hpp"
#include "finsent/tensor.hpp"
#include "reference_ops.hpp"

using namespace finsent;
using refops::dvec;

namespace {

Tensor random_tensor(const std::vector<int>& shape, Rng& rng, float scale = 1.0f) {
    Tensor t = Tensor::zeros(shape);
    for (auto& v : t.data) v = rng.next_normal(0.0f, scale);
    return t;
}

dvec widen(const Tensor& t) {
    dvec out(t.data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(t.data[i]);
    return out;
}

// Relative error with a floor so near-zero gradients are compared absolutely.
double rel_err(double got, double want, double floor_val) {
    const double denom = std::max({std::fabs(got), std::fabs(want), floor_val});
    return std::fabs(got - want) / denom;
}

// Checks tape gradients of a weighted-sum loss against central differences of
// the 64-bit reference, input by input. `build` wires the op under test given
// leaf handles; `reference` computes the same composite in double.
//
// Two metrics per input tensor:
//  - per-element relative error (floored denominator) < 1e-3, the plain
//    32-bit-level agreement;
//  - infinity-norm relative error < 1e-6, attainable because the oracle side
//    avoids f32 finite-difference noise entirely.
void gradcheck(const std::vector<Tensor>& inputs,
               const std::function<Var(Tape&, const std::vector<Var>&)>& build,
               const std::function<double(const std::vector<dvec>&)>& reference) {
    std::vector<Tensor> sinks;
    sinks.reserve(inputs.size());
    for (const auto& in : inputs) sinks.push_back(Tensor::zeros(in.shape));

    Tape tape;
    std::vector<Var> vars;
    for (size_t i = 0; i < inputs.size(); ++i) vars.push_back(tape.leaf(inputs[i], &sinks[i]));
    Var loss = build(tape, vars);
    tape.backward(loss);

    std::vector<dvec> wide;
    for (const auto& in : inputs) wide.push_back(widen(in));

    for (size_t i = 0; i < inputs.size(); ++i) {
        auto f = [&](const dvec& x) {
            std::vector<dvec> probe = wide;
            probe[i] = x;
            return reference(probe);
        };
        const dvec fd = refops::central_differences(f, wide[i], 1e-4);
        REQUIRE(fd.size() == sinks[i].data.size());
        double max_abs_diff = 0.0, max_fd = 0.0;
        for (size_t j = 0; j < fd.size(); ++j) {
            const double err = rel_err(sinks[i].data[j], fd[j], 1e-3);
            CAPTURE(i);
            CAPTURE(j);
            CHECK(err < 1e-3);
            max_abs_diff = std::max(max_abs_diff, std::fabs(sinks[i].data[j] - fd[j]));
            max_fd = std::max(max_fd, std::fabs(fd[j]));
        }
        CAPTURE(i);
        CHECK(max_abs_diff / std::max(max_fd, 1e-12) < 1e-6);
    }
}

// Shared weighted-sum loss so every output element carries a distinct
// gradient signal.
Tensor loss_weights(const std::vector<int>& shape, uint64_t seed) {
    Rng rng(seed);
    return random_tensor(shape, rng, 1.0f);
}

}  // namespace

TEST_CASE("matmul identity, hand oracle and zero cases") {
    Tape tape;
    Var eye = tape.input(Tensor({2, 2}, {1, 0, 0, 1}));
    Var b = tape.input(Tensor({2, 2}, {5, 6, 7, 8}));
    CHECK(tape.value(tape.matmul(eye, b)).data == std::vector<float>{5, 6, 7, 8});

    Var a = tape.input(Tensor({2, 2}, {1, 2, 3, 4}));
    CHECK(tape.value(tape.matmul(a, b)).data == std::vector<float>{19, 22, 43, 50});

    Var z = tape.input(Tensor::zeros({2, 3}));
    Rng rng(7);
    Var any = tape.input(random_tensor({3, 4}, rng));
    const Tensor& out = tape.value(tape.matmul(z, any));
    CHECK(out.shape == std::vector<int>{2, 4});
    for (float v : out.data) CHECK(v == 0.0f);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tape tape;
    Var a = tape.input(Tensor::zeros({2, 3}));
    Var b = tape.input(Tensor::zeros({4, 2}));
    CHECK_THROWS_WITH_AS(tape.matmul(a, b), doctest::Contains("[2x3]"), ContractError);
}

TEST_CASE("softmax symmetry, stability and 64-bit oracle") {
    Tape tape;
    Var even = tape.softmax(tape.input(Tensor({2}, {0, 0})), 0);
    CHECK(tape.value(even).data[0] == doctest::Approx(0.5).epsilon(1e-7));

    Var big = tape.softmax(tape.input(Tensor({2}, {1000, 0})), 0);
    CHECK(tape.value(big).data[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(tape.value(big).data[1] == doctest::Approx(0.0).epsilon(1e-6));

    Var v = tape.softmax(tape.input(Tensor({3}, {1, 2, 3})), 0);
    const dvec want = refops::softmax_rows({1, 2, 3}, 1, 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(std::fabs(tape.value(v).data[i] - want[i]) < 1e-6);
    }
}

TEST_CASE("softmax slices sum to one and stay in (0,1)") {
    Rng rng(11);
    Tape tape;
    Var x = tape.input(random_tensor({4, 7}, rng, 3.0f));
    const Tensor& y = tape.value(tape.softmax(x, 1));
    for (int r = 0; r < 4; ++r) {
        float total = 0.0f;
        for (int c = 0; c < 7; ++c) {
            const float p = y.at(r, c);
            CHECK(p > 0.0f);
            CHECK(p < 1.0f);
            total += p;
        }
        CHECK(std::fabs(total - 1.0f) < 1e-6f);
    }
}

TEST_CASE("softmax along a middle axis") {
    Tape tape;
    // shape [2,3,2], softmax over axis 1
    Tensor x({2, 3, 2}, {1, 0, 2, 0, 3, 0, 0, 1, 0, 2, 0, 3});
    const Tensor& y = tape.value(tape.softmax(tape.input(x), 1));
    for (int o = 0; o < 2; ++o) {
        for (int in = 0; in < 2; ++in) {
            float total = 0.0f;
            for (int i = 0; i < 3; ++i) total += y.data[o * 6 + i * 2 + in];
            CHECK(std::fabs(total - 1.0f) < 1e-6f);
        }
    }
}

TEST_CASE("layer_norm constant row maps to beta") {
    Tape tape;
    Var x = tape.input(Tensor({1, 4}, {5, 5, 5, 5}));
    Var gamma = tape.input(Tensor({4}, {1, 1, 1, 1}));
    Var beta = tape.input(Tensor({4}, {0, 0, 0, 0}));
    const Tensor& y = tape.value(tape.layer_norm(x, gamma, beta, 1e-12f));
    for (float v : y.data) CHECK(v == doctest::Approx(0.0).epsilon(1e-6));

    Var beta2 = tape.input(Tensor({4}, {1.5f, -2, 0.25f, 3}));
    Var gamma0 = tape.input(Tensor({4}, {0, 0, 0, 0}));
    Rng rng(3);
    Var x2 = tape.input(random_tensor({2, 4}, rng));
    const Tensor& y2 = tape.value(tape.layer_norm(x2, gamma0, beta2, 1e-12f));
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 4; ++c) CHECK(y2.at(r, c) == tape.value(beta2).data[c]);
}

TEST_CASE("layer_norm matches 64-bit oracle") {
    Tape tape;
    Var x = tape.input(Tensor({1, 4}, {1, 2, 3, 4}));
    Var gamma = tape.input(Tensor({4}, {1, 1, 1, 1}));
    Var beta = tape.input(Tensor({4}, {0, 0, 0, 0}));
    const Tensor& y = tape.value(tape.layer_norm(x, gamma, beta, 1e-12f));
    const dvec want = refops::layer_norm({1, 2, 3, 4}, {1, 1, 1, 1}, {0, 0, 0, 0}, 1, 4, 1e-12);
    for (int i = 0; i < 4; ++i) CHECK(std::fabs(y.data[i] - want[i]) < 1e-5);
}

TEST_CASE("layer_norm normalizes rows before affine") {
    Rng rng(19);
    Tape tape;
    const int h = 16;
    Var x = tape.input(random_tensor({8, h}, rng, 2.0f));
    Var gamma = tape.input(Tensor::full({h}, 1.0f));
    Var beta = tape.input(Tensor::zeros({h}));
    const Tensor& y = tape.value(tape.layer_norm(x, gamma, beta, 1e-12f));
    for (int r = 0; r < 8; ++r) {
        double mean = 0.0, var = 0.0;
        for (int c = 0; c < h; ++c) mean += y.at(r, c);
        mean /= h;
        for (int c = 0; c < h; ++c) var += (y.at(r, c) - mean) * (y.at(r, c) - mean);
        var /= h;
        CHECK(std::fabs(mean) < 1e-5);
        CHECK(std::fabs(var - 1.0) < 1e-3);
    }
}

TEST_CASE("gelu fixed points and oracle") {
    Tape tape;
    Var x = tape.input(Tensor({3}, {0.0f, 10.0f, 1.0f}));
    const Tensor& y = tape.value(tape.gelu(x));
    CHECK(y.data[0] == 0.0f);
    CHECK(std::fabs(y.data[1] - 10.0f) < 1e-4);
    CHECK(std::fabs(y.data[2] - refops::gelu_scalar(1.0)) < 1e-6);
}

TEST_CASE("cross_entropy uniform, one-hot and oracle") {
    Tape tape;
    Var uniform = tape.input(Tensor({1, 2}, {0, 0}));
    CHECK(tape.value(tape.cross_entropy(uniform, {0})).data[0] ==
          doctest::Approx(std::log(2.0)).epsilon(1e-6));

    Var hot = tape.input(Tensor({1, 3}, {1e4f, 0, 0}));
    CHECK(tape.value(tape.cross_entropy(hot, {0})).data[0] == doctest::Approx(0.0).epsilon(1e-6));

    Var lg = tape.input(Tensor({1, 3}, {1, 2, 3}));
    const double want = refops::cross_entropy({1, 2, 3}, {2}, 1, 3);
    CHECK(std::fabs(tape.value(tape.cross_entropy(lg, {2})).data[0] - want) < 1e-6);

    CHECK_THROWS_AS(tape.cross_entropy(lg, {3}), ContractError);
    CHECK_THROWS_AS(tape.cross_entropy(lg, {0, 1}), ContractError);
}

TEST_CASE("mse trivial and hand cases") {
    Tape tape;
    Var same = tape.input(Tensor({2}, {0.7f, -0.3f}));
    CHECK(tape.value(tape.mse(same, Tensor({2}, {0.7f, -0.3f}))).data[0] == 0.0f);

    Var p = tape.input(Tensor({2}, {0, 0}));
    CHECK(tape.value(tape.mse(p, Tensor({2}, {1, 1}))).data[0] == doctest::Approx(1.0));

    Var q = tape.input(Tensor({2}, {0.2f, -0.5f}));
    CHECK(tape.value(tape.mse(q, Tensor({2}, {0.1f, 0.4f}))).data[0] ==
          doctest::Approx(0.41).epsilon(1e-6));

    CHECK_THROWS_AS(tape.mse(q, Tensor({3}, {0, 0, 0})), ContractError);
}

TEST_CASE("dropout identities are bit exact") {
    Rng rng(5);
    Tensor x = random_tensor({32, 8}, rng);
    Tape tape;
    Var in = tape.input(x);
    Var eval_mode = tape.dropout(in, 0.5f, false, rng);
    CHECK(eval_mode.id == in.id);  // same handle, no node appended
    Var p0 = tape.dropout(in, 0.0f, true, rng);
    CHECK(p0.id == in.id);
    CHECK_THROWS_AS(tape.dropout(in, 1.0f, true, rng), ConfigError);
}

TEST_CASE("dropout mask fraction within 3 sigma and survivors scaled") {
    const float p = 0.12f;
    const int n = 100000;
    Rng rng(42);
    Tensor x = Tensor::full({n}, 1.0f);
    Tape tape;
    Var out = tape.dropout(tape.input(x), p, true, rng);
    const Tensor& y = tape.value(out);
    int zeros = 0;
    for (float v : y.data) {
        if (v == 0.0f) {
            ++zeros;
        } else {
            CHECK(v == doctest::Approx(1.0f / (1.0f - p)).epsilon(1e-6));
        }
    }
    const double sigma = std::sqrt(p * (1.0 - p) * n);
    CHECK(std::fabs(zeros - p * n) < 3.0 * sigma);
}

TEST_CASE("backward of sum gives ones; unrelated leaves get zeros") {
    Rng rng(9);
    Tensor w = random_tensor({3, 4}, rng);
    Tensor unrelated = random_tensor({2, 2}, rng);
    Tensor sink_w = Tensor::zeros({3, 4});
    Tensor sink_u = Tensor::zeros({2, 2});
    Tape tape;
    Var vw = tape.leaf(w, &sink_w);
    tape.leaf(unrelated, &sink_u);
    Var loss = tape.sum(vw);
    tape.backward(loss);
    for (float v : sink_w.data) CHECK(v == 1.0f);
    for (float v : sink_u.data) CHECK(v == 0.0f);
}

TEST_CASE("backward requires a scalar loss") {
    Tape tape;
    Var x = tape.input(Tensor({2}, {1, 2}));
    CHECK_THROWS_AS(tape.backward(x), ContractError);
}

TEST_CASE("non-finite op output raises instead of propagating") {
    Tape tape;
    Var x = tape.input(Tensor({2}, {1e30f, 1e30f}));
    CHECK_THROWS_AS(tape.mul(x, x), NumericsError);
}

TEST_CASE("gradcheck matmul") {
    Rng rng(100);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 5}, rng);
    Tensor w = loss_weights({3, 5}, 1);
    gradcheck(
        {a, b},
        [&](Tape& t, const std::vector<Var>& v) {
            return t.sum(t.mul(t.matmul(v[0], v[1]), t.input(w)));
        },
        [&](const std::vector<dvec>& in) {
            const dvec c = refops::matmul(in[0], in[1], 3, 4, 5);
            double loss = 0.0;
            for (size_t i = 0; i < c.size(); ++i) loss += c[i] * w.data[i];
            return loss;
        });
}

TEST_CASE("gradcheck softmax") {
    Rng rng(101);
    Tensor x = random_tensor({4, 6}, rng, 2.0f);
    Tensor w = loss_weights({4, 6}, 2);
    gradcheck(
        {x},
        [&](Tape& t, const std::vector<Var>& v) {
            return t.sum(t.mul(t.softmax(v[0], 1), t.input(w)));
        },
        [&](const std::vector<dvec>& in) {
            const dvec y = refops::softmax_rows(in[0], 4, 6);
            double loss = 0.0;
            for (size_t i = 0; i < y.size(); ++i) loss += y[i] * w.data[i];
            return loss;
        });
}

TEST_CASE("gradcheck layer_norm") {
    Rng rng(102);
    Tensor x = random_tensor({3, 8}, rng, 1.5f);
    Tensor gamma = random_tensor({8}, rng);
    Tensor beta = random_tensor({8}, rng);
    Tensor w = loss_weights({3, 8}, 3);
    gradcheck(
        {x, gamma, beta},
        [&](Tape& t, const std::vector<Var>& v) {
            return t.sum(t.mul(t.layer_norm(v[0], v[1], v[2], 1e-5f), t.input(w)));
        },
        [&](const std::vector<dvec>& in) {
            const dvec y = refops::layer_norm(in[0], in[1], in[2], 3, 8, 1e-5);
            double loss = 0.0;
            for (size_t i = 0; i < y.size(); ++i) loss += y[i] * w.data[i];
            return loss;
        });
}

TEST_CASE("gradcheck gelu and tanh") {
    Rng rng(103);
    Tensor x = random_tensor({5, 5}, rng, 1.2f);
    Tensor w = loss_weights({5, 5}, 4);
    gradcheck(
        {x},
        [&](Tape& t, const std::vector<Var>& v) { return t.sum(t.mul(t.gelu(v[0]), t.input(w))); },
        [&](const std::vector<dvec>& in) {
            const dvec y = refops::gelu(in[0]);
            double loss = 0.0;
            for (size_t i = 0; i < y.size(); ++i) loss += y[i] * w.data[i];
            return loss;
        });
    gradcheck(
        {x},
        [&](Tape& t, const std::vector<Var>& v) { return t.sum(t.mul(t.tanh(v[0]), t.input(w))); },
        [&](const std::vector<dvec>& in) {
            const dvec y = refops::tanh_vec(in[0]);
            double loss = 0.0;
            for (size_t i = 0; i < y.size(); ++i) loss += y[i] * w.data[i];
            return loss;
        });
}

TEST_CASE("gradcheck cross_entropy and mse") {
    Rng rng(104);
    Tensor logits = random_tensor({4, 5}, rng, 2.0f);
    const std::vector<int> targets = {1, 0, 4, 2};
    gradcheck(
        {logits},
        [&](Tape& t, const std::vector<Var>& v) { return t.cross_entropy(v[0], targets); },
        [&](const std::vector<dvec>& in) { return refops::cross_entropy(in[0], targets, 4, 5); });

    Tensor pred = random_tensor({6}, rng);
    Tensor target = random_tensor({6}, rng);
    gradcheck(
        {pred},
        [&](Tape& t, const std::vector<Var>& v) { return t.mse(v[0], target); },
        [&](const std::vector<dvec>& in) { return refops::mse(in[0], widen(target)); });
}

TEST_CASE("gradcheck slicing, concat, transpose, gather, bias") {
    Rng rng(105);
    Tensor x = random_tensor({4, 6}, rng);
    Tensor bias = random_tensor({3}, rng);
    Tensor w = loss_weights({3, 3}, 5);
    gradcheck(
        {x, bias},
        [&](Tape& t, const std::vector<Var>& v) {
            Var left = t.slice_cols(v[0], 0, 3);
            Var right = t.slice_cols(v[0], 3, 3);
            Var both = t.concat_cols({left, t.transpose(t.transpose(right))});
            Var picked = t.gather_rows(both, {0, 2, 2});
            Var biased = t.add_bias(t.slice_cols(picked, 0, 3), v[1]);
            return t.sum(t.mul(biased, t.input(w)));
        },
        [&](const std::vector<dvec>& in) {
            // rows 0,2,2 of x, first three columns, plus bias
            double loss = 0.0;
            const int rows[3] = {0, 2, 2};
            for (int i = 0; i < 3; ++i) {
                for (int j = 0; j < 3; ++j) {
                    const double v = in[0][static_cast<size_t>(rows[i]) * 6 + j] + in[1][j];
                    loss += v * w.at(i, j);
                }
            }
            return loss;
        });
}

TEST_CASE("gradcheck two-layer composite against 64-bit finite differences") {
    // A miniature encoder-shaped stack: affine -> gelu -> layer_norm ->
    // affine -> softmax row -> cross entropy.
    Rng rng(106);
    const int b = 3, in_dim = 5, hid = 4, classes = 3;
    Tensor x = random_tensor({b, in_dim}, rng);
    Tensor w1 = random_tensor({in_dim, hid}, rng, 0.5f);
    Tensor b1 = random_tensor({hid}, rng, 0.1f);
    Tensor gamma = Tensor::full({hid}, 1.0f);
    Tensor beta = Tensor::zeros({hid});
    Tensor w2 = random_tensor({hid, classes}, rng, 0.5f);
    Tensor b2 = random_tensor({classes}, rng, 0.1f);
    const std::vector<int> targets = {0, 2, 1};

    gradcheck(
        {x, w1, b1, gamma, beta, w2, b2},
        [&](Tape& t, const std::vector<Var>& v) {
            Var h = t.add_bias(t.matmul(v[0], v[1]), v[2]);
            h = t.gelu(h);
            h = t.layer_norm(h, v[3], v[4], 1e-5f);
            Var logits = t.add_bias(t.matmul(h, v[5]), v[6]);
            return t.cross_entropy(logits, targets);
        },
        [&](const std::vector<dvec>& in) {
            dvec h = refops::add_bias(refops::matmul(in[0], in[1], b, in_dim, hid), in[2], b, hid);
            h = refops::gelu(h);
            h = refops::layer_norm(h, in[3], in[4], b, hid, 1e-5);
            const dvec logits =
                refops::add_bias(refops::matmul(h, in[5], b, hid, classes), in[6], b, classes);
            return refops::cross_entropy(logits, targets, b, classes);
        });
}

TEST_CASE("ops are deterministic for identical inputs and seeds") {
    auto run = [] {
        Rng rng(77);
        Tensor x = random_tensor({8, 8}, rng);
        Tape tape;
        Var v = tape.dropout(tape.gelu(tape.input(x)), 0.3f, true, rng);
        return tape.value(v).data;
    };
    CHECK(run() == run());
}

TEST_CASE("rng determinism and stream derivation") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    CHECK(Rng::derive(1, 2) == Rng::derive(1, 2));
    CHECK(Rng::derive(1, 2) != Rng::derive(1, 3));
    CHECK(Rng::derive(1, 2) != Rng::derive(2, 2));
}
