#include "finsent/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "finsent/errors.hpp"

namespace finsent {

namespace {

constexpr float kGeluCoeff = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluCubic = 0.044715f;

void require_2d(const Tensor& t, const char* op) {
    if (t.shape.size() != 2) {
        throw ContractError(std::string(op) + ": expected 2-D tensor, got " + shape_to_string(t.shape));
    }
}

}  // namespace

void Tape::check_var(Var v, const char* op_name) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
        throw ContractError(std::string(op_name) + ": invalid tape handle");
    }
}

bool Tape::parent_needs_grad(const std::vector<Var>& parents) const {
    for (Var p : parents) {
        if (nodes_[p.id].needs_grad) return true;
    }
    return false;
}

Var Tape::emplace(Node n, const char* op_name) {
    const Tensor& v = n.external_value ? *n.external_value : n.value;
    if (!v.all_finite()) {
        throw NumericsError(std::string(op_name) + ": produced a non-finite value");
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::value(Var v) const {
    check_var(v, "value");
    const Node& n = nodes_[v.id];
    return n.external_value ? *n.external_value : n.value;
}

Tensor Tape::grad(Var v) const {
    check_var(v, "grad");
    const Node& n = nodes_[v.id];
    if (n.grad.numel() == (n.external_value ? n.external_value->numel() : n.value.numel()) &&
        !n.grad.shape.empty()) {
        return n.grad;
    }
    return Tensor::zeros(n.external_value ? n.external_value->shape : n.value.shape);
}

Var Tape::input(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = false;
    return emplace(std::move(n), "input");
}

Var Tape::leaf(const Tensor& value, Tensor* grad_sink) {
    if (grad_sink && !grad_sink->same_shape(value)) {
        throw ContractError("leaf: gradient sink shape " + shape_to_string(grad_sink->shape) +
                            " does not match value shape " + shape_to_string(value.shape));
    }
    Node n;
    n.external_value = &value;
    n.grad_sink = grad_sink;
    n.needs_grad = true;
    return emplace(std::move(n), "leaf");
}

Var Tape::matmul(Var a, Var b) {
    check_var(a, "matmul");
    check_var(b, "matmul");
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    require_2d(av, "matmul");
    require_2d(bv, "matmul");
    if (av.cols() != bv.rows()) {
        throw ContractError("matmul: inner extents differ, " + shape_to_string(av.shape) +
                            " vs " + shape_to_string(bv.shape));
    }
    const int m = av.rows(), k = av.cols(), nn = bv.cols();
    Tensor out = Tensor::zeros({m, nn});
    const float* A = av.data.data();
    const float* B = bv.data.data();
    float* C = out.data.data();
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const float aip = A[static_cast<size_t>(i) * k + p];
            const float* Bp = B + static_cast<size_t>(p) * nn;
            float* Ci = C + static_cast<size_t>(i) * nn;
            for (int j = 0; j < nn; ++j) Ci[j] += aip * Bp[j];
        }
    }
    Node n;
    n.value = std::move(out);
    n.parents = {a, b};
    n.needs_grad = parent_needs_grad(n.parents);
    if (n.needs_grad) {
        n.back = [m, k, nn](Tape& t, int self) {
            Node& s = t.nodes_[self];
            const float* dC = s.grad.data.data();
            const Tensor& av2 = t.value(s.parents[0]);
            const Tensor& bv2 = t.value(s.parents[1]);
            // Accumulation runs in double so reductions over rows do not
            // drown small gradients in f32 rounding.
            if (t.nodes_[s.parents[0].id].needs_grad) {
                float* dA = t.grad_ref(s.parents[0]).data.data();
                // dA = dC * B^T : rows of dC dotted with rows of B
                for (int i = 0; i < m; ++i) {
                    for (int p = 0; p < k; ++p) {
                        const float* dCi = dC + static_cast<size_t>(i) * nn;
                        const float* Bp = bv2.data.data() + static_cast<size_t>(p) * nn;
                        double acc = 0.0;
                        for (int j = 0; j < nn; ++j) {
                            acc += static_cast<double>(dCi[j]) * static_cast<double>(Bp[j]);
                        }
                        dA[static_cast<size_t>(i) * k + p] += static_cast<float>(acc);
                    }
                }
            }
            if (t.nodes_[s.parents[1].id].needs_grad) {
                // dB = A^T * dC
                std::vector<double> acc(static_cast<size_t>(k) * nn, 0.0);
                for (int i = 0; i < m; ++i) {
                    const float* Ai = av2.data.data() + static_cast<size_t>(i) * k;
                    const float* dCi = dC + static_cast<size_t>(i) * nn;
                    for (int p = 0; p < k; ++p) {
                        const double aip = Ai[p];
                        double* accp = acc.data() + static_cast<size_t>(p) * nn;
                        for (int j = 0; j < nn; ++j) accp[j] += aip * dCi[j];
                    }
                }
                float* dB = t.grad_ref(s.parents[1]).data.data();
                for (size_t i = 0; i < acc.size(); ++i) dB[i] += static_cast<float>(acc[i]);
            }
        };
    }
    return emplace(std::move(n), "matmul");
}

Var Tape::add(Var a, Var b) {
    check_var(a, "add");
    check_var(b, "add");
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv)) {
        throw ContractError("add: shape mismatch, " + shape_to_string(av.shape) + " vs " +
                            shape_to_string(bv.shape));
    }
    Tensor out = av;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
    Node n;
    n.value = std::move(out);
    n.parents = {a, b};
    n.needs_grad = parent_needs_grad(n.parents);
    if (n.needs_grad) {
        n.back = [](Tape& t, int self) {
            Node& s = t.nodes_[self];
            for (Var p : s.parents) {
                if (!t.nodes_[p.id].needs_grad) continue;
                Tensor& g = t.grad_ref(p);
                for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += s.grad.data[i];
            }
        };
    }
    return emplace(std::move(n), "add");
}

Var Tape::mul(Var a, Var b) {
    check_var(a, "mul");
    check_var(b, "mul");
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv)) {
        throw ContractError("mul: shape mismatch, " + shape_to_string(av.shape) + " vs " +
                            shape_to_string(bv.shape));
    }
    Tensor out = av;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
    Node n;
    n.value = std::move(out);
    n.parents = {a, b};
    n.needs_grad = parent_needs_grad(n.parents);
    if (n.needs_grad) {
        n.back = [](Tape& t, int self) {
            Node& s = t.nodes_[self];
            const Tensor& av2 = t.value(s.parents[0]);
            const Tensor& bv2 = t.value(s.parents[1]);
            if (t.nodes_[s.parents[0].id].needs_grad) {
                Tensor& g = t.grad_ref(s.parents[0]);
                for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += s.grad.data[i] * bv2.data[i];
            }
            if (t.nodes_[s.parents[1].id].needs_grad) {
                Tensor& g = t.grad_ref(s.parents[1]);
                for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += s.grad.data[i] * av2.data[i];
            }
        };
    }
    return emplace(std::move(n), "mul");
}

Var Tape::add_bias(Var x, Var bias) {
    check_var(x, "add_bias");
    check_var(bias, "add_bias");
    const Tensor& xv = value(x);
    const Tensor& bv = value(bias);
    require_2d(xv, "add_bias");
    if (bv.shape.size() != 1 || bv.shape[0] != xv.cols()) {
        throw ContractError("add_bias: bias shape " + shape_to_string(bv.shape) +
                            " does not match columns of " + shape_to_string(xv.shape));
    }
    const int m = xv.rows(), c = xv.cols();
    Tensor out = xv;
    for (int i = 0; i < m; ++i) {
        float* row = out.data.data() + static_cast<size_t>(i) * c;
        for (int j = 0; j < c; ++j) row[j] += bv.data[j];
    }
    Node n;
    n.value = std::move(out);
    n.parents = {x, bias};
    n.needs_grad = parent_needs_grad(n.parents);
    if (n.needs_grad) {
        n.back = [m, c](Tape& t, int self) {
            Node& s = t.nodes_[self];
            if (t.nodes_[s.parents[0].id].needs_grad) {
                Tensor& gx = t.grad_ref(s.parents[0]);
                for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += s.grad.data[i];
            }
            if (t.nodes_[s.parents[1].id].needs_grad) {
                Tensor& gb = t.grad_ref(s.parents[1]);
                for (int i = 0; i < m; ++i) {
                    const float* row = s.grad.data.data() + static_cast<size_t>(i) * c;
                    for (int j = 0; j < c; ++j) gb.data[j] += row[j];
                }
            }
        };
    }
    return emplace(std::move(n), "add_bias");
}

Var Tape::scale(Var x, float s) {
    check_var(x, "scale");
    Tensor out = value(x);
    for (auto& v : out.data) v *= s;
    Node n;
    n.value = std::move(out);
    n.parents = {x};
    n.needs_grad = parent_needs_grad(n.parents);
    if (n.needs_grad) {
        n.back = [s](Tape& t, int self) {
            Node& nd = t.nodes_[self];
            if (!t.nodes_[nd.parents[0].id].needs_grad) return;
            Tensor& g = t.grad_ref(nd.parents[0]);
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += nd.grad.data[i] * s;
        };
    }
    return emplace(std::move(n), "scale");
}

Var Tape::transpose(Var x) {
    check_var(x, "transpose");
    const Tensor& xv = value(x);
    require_2d(xv, "transpose");
    const int m = xv.rows(), c = xv.cols();
    Tensor out = Tensor::zeros({c, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < c; ++j) out.at(j, i) = xv.at(i, j);
    Node n;
    n.value = std::move(out);
    n.parents = {x};
    n.needs_grad = parent_needs_grad(n.parents);
    if (n.needs_grad) {
        n.back = [m, c](Tape& t, int self) {
            Node& nd = t.nodes_[self];
            if (!t.nodes_[nd.parents[0].id].needs_grad) return;
            Tensor& g = t.grad_ref(nd.parents[0]);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < c; ++j) g.at(i, j) += nd.grad.at(j, i);
        };
    }
    return emplace(std::move(n), "transpose");
}

Var Tape::slice_cols(Var x, int begin, int count) {
    check_var(x, "slice_cols");
    const Tensor& xv = value(x);
    require_2d(xv, "slice_cols");
    if (begin < 0 || count <= 0 || begin + count > xv.cols()) {
        throw ContractError("slice_cols: range [" + std::to_string(begin) + ", " +
                            std::to_string(begin + count) + ") out of " + shape_to_string(xv.shape));
    }
    const int m = xv.rows(), c = xv.cols();
    Tensor out = Tensor::zeros({m, count});
    for (int i = 0; i < m; ++i) {
        const float* src = xv.data.data() + static_cast<size_t>(i) * c + begin;
        float* dst = out.data.data() + static_cast<size_t>(i) * count;
        std::copy(src, src + count, dst);
    }
    Node n;
    n.value = std::move(out);
    n.parents = {x};
    n.needs_grad = parent_needs_grad(n.parents);
    if (n.needs_grad) {
        n.back = [m, c, begin, count](Tape& t, int self) {
            Node& nd = t.nodes_[self];
            if (!t.nodes_[nd.parents[0].id].needs_grad) return;
            Tensor& g = t.grad_ref(nd.parents[0]);
            for (int i = 0; i < m; ++i) {
                float* dst = g.data.data() + static_cast<size_t>(i) * c + begin;
                const float* src = nd.grad.data.data() + static_cast<size_t>(i) * count;
                for (int j = 0; j < count; ++j) dst[j] += src[j];
            }
        };
    }
    return emplace(std::move(n), "slice_cols");
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no parts");
    int m = -1, total = 0;
    for (Var p : parts) {
        check_var(p, "concat_cols");
        const Tensor& pv = value(p);
        require_2d(pv, "concat_cols");
        if (m < 0) m = pv.rows();
        if (pv.rows() != m) {
            throw ContractError("concat_cols: row mismatch, " + shape_to_string(pv.shape));
        }
        total += pv.cols();
    }
    Tensor out = Tensor::zeros({m, total});
    int off = 0;
    for (Var p : parts) {
        const Tensor& pv = value(p);
        const int c = pv.cols();
        for (int i = 0; i < m; ++i) {
            const float* src = pv.data.data() + static_cast<size_t>(i) * c;
            float* dst = out.data.data() + static_cast<size_t>(i) * total + off;
            std::copy(src, src + c, dst);
        }
        off += c;
    }
    Node n;
    n.value = std::move(out);
    n.parents = parts;
    n.needs_grad = parent_needs_grad(n.parents);
    if (n.needs_grad) {
        n.back = [m, total](Tape& t, int self) {
            Node& nd = t.nodes_[self];
            int off2 = 0;
            for (Var p : nd.parents) {
                const int c = t.value(p).cols();
                if (t.nodes_[p.id].needs_grad) {
                    Tensor& g = t.grad_ref(p);
                    for (int i = 0; i < m; ++i) {
                        const float* src = nd.grad.data.data() + static_cast<size_t>(i) * total + off2;
                        float* dst = g.data.data() + static_cast<size_t>(i) * c;
                        for (int j = 0; j < c; ++j) dst[j] += src[j];
                    }
                }
                off2 += c;
            }
        };
    }
    return emplace(std::move(n), "concat_cols");
}

Var Tape::gather_rows(Var x, std::vector<int> rows) {
    check_var(x, "gather_rows");
    const Tensor& xv = value(x);
    require_2d(xv, "gather_rows");
    const int m = xv.rows(), c = xv.cols();
    for (int r : rows) {
        if (r < 0 || r >= m) {
            throw ContractError("gather_rows: row index " + std::to_string(r) + " out of " +
                                shape_to_string(xv.shape));
        }
    }
    const int k = static_cast<int>(rows.size());
    Tensor out = Tensor::zeros({k, c});
    for (int i = 0; i < k; ++i) {
        const float* src = xv.data.data() + static_cast<size_t>(rows[i]) * c;
        std::copy(src, src + c, out.data.data() + static_cast<size_t>(i) * c);
    }
    Node n;
    n.value = std::move(out);
    n.parents = {x};
    n.needs_grad = parent_needs_grad(n.parents);
    if (n.needs_grad) {
        n.back = [rows = std::move(rows), c](Tape& t, int self) {
            Node& nd = t.nodes_[self];
            if (!t.nodes_[nd.parents[0].id].needs_grad) return;
            Tensor& g = t.grad_ref(nd.parents[0]);
            for (size_t i = 0; i < rows.size(); ++i) {
                const float* src = nd.grad.data.data() + i * c;
                float* dst = g.data.data() + static_cast<size_t>(rows[i]) * c;
                for (int j = 0; j < c; ++j) dst[j] += src[j];
            }
        };
    }
    return emplace(std::move(n), "gather_rows");
}

Var Tape::softmax(Var x, int axis) {
    check_var(x, "softmax");
    const Tensor& xv = value(x);
    const int rank = static_cast<int>(xv.shape.size());
    if (axis < 0 || axis >= rank) {
        throw ContractError("softmax: axis " + std::to_string(axis) + " invalid for " +
                            shape_to_string(xv.shape));
    }
    size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<size_t>(xv.shape[i]);
    for (int i = axis + 1; i < rank; ++i) inner *= static_cast<size_t>(xv.shape[i]);
    const size_t len = static_cast<size_t>(xv.shape[axis]);

    Tensor out = xv;
    for (size_t o = 0; o < outer; ++o) {
        for (size_t in = 0; in < inner; ++in) {
            float* base = out.data.data() + o * len * inner + in;
            float mx = base[0];
            for (size_t i = 1; i < len; ++i) mx = std::max(mx, base[i * inner]);
            float total = 0.0f;
            for (size_t i = 0; i < len; ++i) {
                const float e = std::exp(base[i * inner] - mx);
                base[i * inner] = e;
                total += e;
            }
            const float inv = 1.0f / total;
            for (size_t i = 0; i < len; ++i) base[i * inner] *= inv;
        }
    }
    Node n;
    n.value = std::move(out);
    n.parents = {x};
    n.needs_grad = parent_needs_grad(n.parents);
    if (n.needs_grad) {
        n.back = [outer, inner, len](Tape& t, int self) {
            Node& nd = t.nodes_[self];
            if (!t.nodes_[nd.parents[0].id].needs_grad) return;
            Tensor& g = t.grad_ref(nd.parents[0]);
            const Tensor& y = nd.value;
            for (size_t o = 0; o < outer; ++o) {
                for (size_t in = 0; in < inner; ++in) {
                    const size_t base = o * len * inner + in;
                    double dot = 0.0;
                    for (size_t i = 0; i < len; ++i) {
                        dot += static_cast<double>(nd.grad.data[base + i * inner]) *
                               static_cast<double>(y.data[base + i * inner]);
                    }
                    for (size_t i = 0; i < len; ++i) {
                        const size_t p = base + i * inner;
                        g.data[p] += static_cast<float>(static_cast<double>(y.data[p]) *
                                                        (nd.grad.data[p] - dot));
                    }
                }
            }
        };
    }
    return emplace(std::move(n), "softmax");
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, float eps) {
    check_var(x, "layer_norm");
    check_var(gamma, "layer_norm");
    check_var(beta, "layer_norm");
    const Tensor& xv = value(x);
    const Tensor& gv = value(gamma);
    const Tensor& bv = value(beta);
    if (xv.shape.empty()) throw ContractError("layer_norm: scalar input");
    const int h = xv.shape.back();
    if (gv.shape != std::vector<int>{h} || bv.shape != std::vector<int>{h}) {
        throw ContractError("layer_norm: affine shapes " + shape_to_string(gv.shape) + "/" +
                            shape_to_string(bv.shape) + " do not match last extent of " +
                            shape_to_string(xv.shape));
    }
    const size_t rows = xv.numel() / static_cast<size_t>(h);
    Tensor out = Tensor::zeros(xv.shape);
    for (size_t r = 0; r < rows; ++r) {
        const float* row = xv.data.data() + r * h;
        float mean = 0.0f;
        for (int j = 0; j < h; ++j) mean += row[j];
        mean /= static_cast<float>(h);
        float var = 0.0f;
        for (int j = 0; j < h; ++j) {
            const float d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<float>(h);
        const float inv = 1.0f / std::sqrt(var + eps);
        float* yrow = out.data.data() + r * h;
        for (int j = 0; j < h; ++j) {
            yrow[j] = (row[j] - mean) * inv * gv.data[j] + bv.data[j];
        }
    }
    Node n;
    n.value = std::move(out);
    n.parents = {x, gamma, beta};
    n.needs_grad = parent_needs_grad(n.parents);
    if (n.needs_grad) {
        // Backward recomputes the row statistics in double from the saved
        // f32 input; the three reductions per row are cancellation-prone.
        n.back = [h, rows, eps](Tape& t, int self) {
            Node& nd = t.nodes_[self];
            const Tensor& xv2 = t.value(nd.parents[0]);
            const Tensor& gv2 = t.value(nd.parents[1]);
            const bool want_x = t.nodes_[nd.parents[0].id].needs_grad;
            const bool want_g = t.nodes_[nd.parents[1].id].needs_grad;
            const bool want_b = t.nodes_[nd.parents[2].id].needs_grad;
            std::vector<double> xh(h);
            for (size_t r = 0; r < rows; ++r) {
                const float* row = xv2.data.data() + r * h;
                const float* dy = nd.grad.data.data() + r * h;
                double mean = 0.0;
                for (int j = 0; j < h; ++j) mean += row[j];
                mean /= h;
                double var = 0.0;
                for (int j = 0; j < h; ++j) var += (row[j] - mean) * (row[j] - mean);
                var /= h;
                const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
                for (int j = 0; j < h; ++j) xh[j] = (row[j] - mean) * inv;
                if (want_g) {
                    Tensor& gg = t.grad_ref(nd.parents[1]);
                    for (int j = 0; j < h; ++j) gg.data[j] += static_cast<float>(dy[j] * xh[j]);
                }
                if (want_b) {
                    Tensor& gb = t.grad_ref(nd.parents[2]);
                    for (int j = 0; j < h; ++j) gb.data[j] += dy[j];
                }
                if (want_x) {
                    Tensor& gx = t.grad_ref(nd.parents[0]);
                    double sum_dg = 0.0, sum_dgx = 0.0;
                    for (int j = 0; j < h; ++j) {
                        const double dg = static_cast<double>(dy[j]) * gv2.data[j];
                        sum_dg += dg;
                        sum_dgx += dg * xh[j];
                    }
                    float* out_row = gx.data.data() + r * h;
                    for (int j = 0; j < h; ++j) {
                        const double dg = static_cast<double>(dy[j]) * gv2.data[j];
                        out_row[j] += static_cast<float>(
                            inv * (dg - sum_dg / h - xh[j] * sum_dgx / h));
                    }
                }
            }
        };
    }
    return emplace(std::move(n), "layer_norm");
}

Var Tape::gelu(Var x) {
    check_var(x, "gelu");
    Tensor out = value(x);
    for (auto& v : out.data) {
        const float u = kGeluCoeff * (v + kGeluCubic * v * v * v);
        v = 0.5f * v * (1.0f + std::tanh(u));
    }
    Node n;
    n.value = std::move(out);
    n.parents = {x};
    n.needs_grad = parent_needs_grad(n.parents);
    if (n.needs_grad) {
        n.back = [](Tape& t, int self) {
            Node& nd = t.nodes_[self];
            if (!t.nodes_[nd.parents[0].id].needs_grad) return;
            Tensor& g = t.grad_ref(nd.parents[0]);
            const Tensor& xv = t.value(nd.parents[0]);
            for (size_t i = 0; i < g.data.size(); ++i) {
                const double v = xv.data[i];
                const double u = kGeluCoeff * (v + kGeluCubic * v * v * v);
                const double th = std::tanh(u);
                const double du = kGeluCoeff * (1.0 + 3.0 * kGeluCubic * v * v);
                const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
                g.data[i] += static_cast<float>(nd.grad.data[i] * d);
            }
        };
    }
    return emplace(std::move(n), "gelu");
}

Var Tape::tanh(Var x) {
    check_var(x, "tanh");
    Tensor out = value(x);
    for (auto& v : out.data) v = std::tanh(v);
    Node n;
    n.value = std::move(out);
    n.parents = {x};
    n.needs_grad = parent_needs_grad(n.parents);
    if (n.needs_grad) {
        n.back = [](Tape& t, int self) {
            Node& nd = t.nodes_[self];
            if (!t.nodes_[nd.parents[0].id].needs_grad) return;
            Tensor& g = t.grad_ref(nd.parents[0]);
            const Tensor& xv = t.value(nd.parents[0]);
            for (size_t i = 0; i < g.data.size(); ++i) {
                const double th = std::tanh(static_cast<double>(xv.data[i]));
                g.data[i] += static_cast<float>(nd.grad.data[i] * (1.0 - th * th));
            }
        };
    }
    return emplace(std::move(n), "tanh");
}

Var Tape::dropout(Var x, float p, bool training, Rng& rng) {
    check_var(x, "dropout");
    if (p < 0.0f || p >= 1.0f) {
        throw ConfigError("dropout: probability must be in [0,1), got " + std::to_string(p));
    }
    // Identity in eval mode and at p=0: same handle, no node, no RNG draw.
    if (!training || p == 0.0f) return x;

    const Tensor& xv = value(x);
    const float keep_scale = 1.0f / (1.0f - p);
    std::vector<float> mask(xv.numel());
    for (auto& m : mask) m = (rng.next_float() < p) ? 0.0f : keep_scale;
    Tensor out = xv;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask[i];
    Node n;
    n.value = std::move(out);
    n.parents = {x};
    n.needs_grad = parent_needs_grad(n.parents);
    if (n.needs_grad) {
        n.back = [mask = std::move(mask)](Tape& t, int self) {
            Node& nd = t.nodes_[self];
            if (!t.nodes_[nd.parents[0].id].needs_grad) return;
            Tensor& g = t.grad_ref(nd.parents[0]);
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += nd.grad.data[i] * mask[i];
        };
    }
    return emplace(std::move(n), "dropout");
}

Var Tape::cross_entropy(Var logits, const std::vector<int>& targets) {
    check_var(logits, "cross_entropy");
    const Tensor& lv = value(logits);
    require_2d(lv, "cross_entropy");
    const int b = lv.rows(), c = lv.cols();
    if (static_cast<int>(targets.size()) != b) {
        throw ContractError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                            std::to_string(b) + " rows");
    }
    if (b == 0) throw ContractError("cross_entropy: empty batch");
    for (int tgt : targets) {
        if (tgt < 0 || tgt >= c) {
            throw ContractError("cross_entropy: target " + std::to_string(tgt) +
                                " out of range for " + std::to_string(c) + " classes");
        }
    }
    double loss = 0.0;
    for (int i = 0; i < b; ++i) {
        const float* row = lv.data.data() + static_cast<size_t>(i) * c;
        double mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double total = 0.0;
        for (int j = 0; j < c; ++j) total += std::exp(row[j] - mx);
        loss += mx + std::log(total) - row[targets[i]];
    }
    loss /= b;
    Node n;
    n.value = Tensor({1}, {static_cast<float>(loss)});
    n.parents = {logits};
    n.needs_grad = parent_needs_grad(n.parents);
    if (n.needs_grad) {
        // Softmax recomputed in double from the saved logits.
        n.back = [targets, b, c](Tape& t, int self) {
            Node& nd = t.nodes_[self];
            if (!t.nodes_[nd.parents[0].id].needs_grad) return;
            Tensor& g = t.grad_ref(nd.parents[0]);
            const Tensor& lv2 = t.value(nd.parents[0]);
            const double dy = static_cast<double>(nd.grad.data[0]) / b;
            std::vector<double> prow(c);
            for (int i = 0; i < b; ++i) {
                const float* row = lv2.data.data() + static_cast<size_t>(i) * c;
                double mx = row[0];
                for (int j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
                double total = 0.0;
                for (int j = 0; j < c; ++j) {
                    prow[j] = std::exp(row[j] - mx);
                    total += prow[j];
                }
                float* grow = g.data.data() + static_cast<size_t>(i) * c;
                for (int j = 0; j < c; ++j) {
                    grow[j] += static_cast<float>(dy * (prow[j] / total -
                                                        (j == targets[i] ? 1.0 : 0.0)));
                }
            }
        };
    }
    return emplace(std::move(n), "cross_entropy");
}

Var Tape::mse(Var pred, const Tensor& target) {
    check_var(pred, "mse");
    const Tensor& pv = value(pred);
    if (!pv.same_shape(target)) {
        throw ContractError("mse: shape mismatch, " + shape_to_string(pv.shape) + " vs " +
                            shape_to_string(target.shape));
    }
    if (pv.numel() == 0) throw ContractError("mse: empty tensors");
    const size_t count = pv.numel();
    float loss = 0.0f;
    for (size_t i = 0; i < count; ++i) {
        const float d = pv.data[i] - target.data[i];
        loss += d * d;
    }
    loss /= static_cast<float>(count);
    Node n;
    n.value = Tensor({1}, {loss});
    n.parents = {pred};
    n.needs_grad = parent_needs_grad(n.parents);
    if (n.needs_grad) {
        n.back = [target, count](Tape& t, int self) {
            Node& nd = t.nodes_[self];
            if (!t.nodes_[nd.parents[0].id].needs_grad) return;
            Tensor& g = t.grad_ref(nd.parents[0]);
            const Tensor& pv2 = t.value(nd.parents[0]);
            const float dy = nd.grad.data[0] * 2.0f / static_cast<float>(count);
            for (size_t i = 0; i < count; ++i) {
                g.data[i] += dy * (pv2.data[i] - target.data[i]);
            }
        };
    }
    return emplace(std::move(n), "mse");
}

Var Tape::sum(Var x) {
    check_var(x, "sum");
    const Tensor& xv = value(x);
    float total = 0.0f;
    for (float v : xv.data) total += v;
    Node n;
    n.value = Tensor({1}, {total});
    n.parents = {x};
    n.needs_grad = parent_needs_grad(n.parents);
    if (n.needs_grad) {
        n.back = [](Tape& t, int self) {
            Node& nd = t.nodes_[self];
            if (!t.nodes_[nd.parents[0].id].needs_grad) return;
            Tensor& g = t.grad_ref(nd.parents[0]);
            const float dy = nd.grad.data[0];
            for (auto& v : g.data) v += dy;
        };
    }
    return emplace(std::move(n), "sum");
}

void Tape::backward(Var loss) {
    check_var(loss, "backward");
    if (backward_done_) throw ContractError("backward: tape already replayed");
    if (value(loss).numel() != 1) {
        throw ContractError("backward: loss must be a scalar, got " +
                            shape_to_string(value(loss).shape));
    }
    backward_done_ = true;

    // Mark the nodes the loss actually depends on.
    std::vector<char> reachable(nodes_.size(), 0);
    std::vector<int> stack = {loss.id};
    reachable[loss.id] = 1;
    while (!stack.empty()) {
        const int id = stack.back();
        stack.pop_back();
        for (Var p : nodes_[id].parents) {
            if (!reachable[p.id] && nodes_[p.id].needs_grad) {
                reachable[p.id] = 1;
                stack.push_back(p.id);
            }
        }
    }

    for (size_t i = 0; i < nodes_.size(); ++i) {
        if (reachable[i] && nodes_[i].needs_grad) {
            const Tensor& v = nodes_[i].external_value ? *nodes_[i].external_value : nodes_[i].value;
            nodes_[i].grad = Tensor::zeros(v.shape);
        }
    }
    grad_ref(loss).fill(1.0f);

    // Parents always precede children, so descending index order is the
    // exact reverse of execution order.
    for (int i = loss.id; i >= 0; --i) {
        if (reachable[i] && nodes_[i].back) nodes_[i].back(*this, i);
    }

    for (auto& n : nodes_) {
        if (n.grad_sink && n.grad.numel() > 0) {
            for (size_t i = 0; i < n.grad.data.size(); ++i) {
                n.grad_sink->data[i] += n.grad.data[i];
            }
        }
    }
}

}  // namespace finsent
