#include "rosepoint/autodiff.hpp"

#include "rosepoint/cloud.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace rosepoint {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::size_t shape_size(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor dimensions must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_string(const std::vector<int>& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

void guard_finite(const char* op, const Tensor& t) {
    for (double v : t.values()) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op) + " produced a non-finite value");
        }
    }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
}

Tensor make_output(std::vector<int> shape) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->value.resize(shape_size(node->shape));
    return Tensor(node);
}

bool tracing(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::current()) return false;
    for (const Tensor* t : inputs) {
        if (t->needs_grad()) return true;
    }
    return false;
}

void mark_and_record(Tensor& out, std::function<void()> backward_step) {
    out.node()->needs_grad = true;
    Tape::current()->record(std::move(backward_step));
}

// rows/cols of a 2D tensor
std::pair<int, int> dims2(const char* op, const Tensor& t) {
    if (t.ndim() != 2) {
        throw ShapeError(std::string(op) + ": expected a 2D tensor, got " + shape_string(t.shape()));
    }
    return {t.dim(0), t.dim(1)};
}

}  // namespace

Tensor::Tensor(std::vector<int> shape, double fill, bool requires_grad) {
    node_ = std::make_shared<TensorNode>();
    node_->shape = std::move(shape);
    node_->value.assign(shape_size(node_->shape), fill);
    node_->needs_grad = requires_grad;
}

Tensor Tensor::from_values(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode>();
    t.node_->shape = std::move(shape);
    if (values.size() != shape_size(t.node_->shape)) {
        throw ShapeError("from_values: " + std::to_string(values.size()) + " values for shape " +
                         shape_string(t.node_->shape));
    }
    t.node_->value = std::move(values);
    t.node_->needs_grad = requires_grad;
    return t;
}

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::current() { return g_active_tape; }

void Tape::record(std::function<void()> backward_step) { steps_.push_back(std::move(backward_step)); }

void Tape::backward(Tensor& scalar_output) {
    if (scalar_output.size() != 1) {
        throw std::invalid_argument("backward: output must be scalar, got shape " +
                                    shape_string(scalar_output.shape()));
    }
    scalar_output.grad()[0] = 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    steps_.clear();
}

// --- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    Tensor out = make_output(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = a[i] + b[i];
    guard_finite("add", out);
    if (tracing({&a, &b})) {
        auto an = a.node(), bn = b.node(), on = out.node();
        mark_and_record(out, [an, bn, on] {
            on->ensure_grad();
            if (an->needs_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
            }
            if (bn->needs_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    Tensor out = make_output(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = a[i] - b[i];
    guard_finite("sub", out);
    if (tracing({&a, &b})) {
        auto an = a.node(), bn = b.node(), on = out.node();
        mark_and_record(out, [an, bn, on] {
            on->ensure_grad();
            if (an->needs_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
            }
            if (bn->needs_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] -= on->grad[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    Tensor out = make_output(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = a[i] * b[i];
    guard_finite("mul", out);
    if (tracing({&a, &b})) {
        auto an = a.node(), bn = b.node(), on = out.node();
        mark_and_record(out, [an, bn, on] {
            on->ensure_grad();
            if (an->needs_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < on->grad.size(); ++i)
                    an->grad[i] += on->grad[i] * bn->value[i];
            }
            if (bn->needs_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < on->grad.size(); ++i)
                    bn->grad[i] += on->grad[i] * an->value[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = make_output(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = a[i] * s;
    guard_finite("scale", out);
    if (tracing({&a})) {
        auto an = a.node(), on = out.node();
        mark_and_record(out, [an, on, s] {
            on->ensure_grad();
            an->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * s;
        });
    }
    return out;
}

Tensor relu(const Tensor& a) {
    Tensor out = make_output(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = a[i] > 0.0 ? a[i] : 0.0;
    guard_finite("relu", out);
    if (tracing({&a})) {
        auto an = a.node(), on = out.node();
        mark_and_record(out, [an, on] {
            on->ensure_grad();
            an->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                if (an->value[i] > 0.0) an->grad[i] += on->grad[i];
            }
        });
    }
    return out;
}

// --- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto [n, k] = dims2("matmul", a);
    const auto [k2, m] = dims2("matmul", b);
    if (k != k2) {
        throw ShapeError("matmul: inner dimensions disagree, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
    }
    Tensor out = make_output({n, m});
    const double* av = a.values().data();
    const double* bv = b.values().data();
    double* ov = out.values().data();
    for (int i = 0; i < n; ++i) {
        double* orow = ov + static_cast<std::size_t>(i) * m;
        const double* arow = av + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double av_ip = arow[p];
            if (av_ip == 0.0) continue;
            const double* brow = bv + static_cast<std::size_t>(p) * m;
            for (int j = 0; j < m; ++j) orow[j] += av_ip * brow[j];
        }
    }
    guard_finite("matmul", out);
    if (tracing({&a, &b})) {
        auto an = a.node(), bn = b.node(), on = out.node();
        mark_and_record(out, [an, bn, on, n, k, m] {
            on->ensure_grad();
            const double* og = on->grad.data();
            if (an->needs_grad) {
                an->ensure_grad();
                // dA = dOut * B^T
                for (int i = 0; i < n; ++i) {
                    for (int p = 0; p < k; ++p) {
                        double acc = 0.0;
                        const double* orow = og + static_cast<std::size_t>(i) * m;
                        const double* brow = bn->value.data() + static_cast<std::size_t>(p) * m;
                        for (int j = 0; j < m; ++j) acc += orow[j] * brow[j];
                        an->grad[static_cast<std::size_t>(i) * k + p] += acc;
                    }
                }
            }
            if (bn->needs_grad) {
                bn->ensure_grad();
                // dB = A^T * dOut
                for (int i = 0; i < n; ++i) {
                    const double* arow = an->value.data() + static_cast<std::size_t>(i) * k;
                    const double* orow = og + static_cast<std::size_t>(i) * m;
                    for (int p = 0; p < k; ++p) {
                        const double av_ip = arow[p];
                        if (av_ip == 0.0) continue;
                        double* bg = bn->grad.data() + static_cast<std::size_t>(p) * m;
                        for (int j = 0; j < m; ++j) bg[j] += av_ip * orow[j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor softmax(const Tensor& a) {
    if (a.ndim() < 1) throw ShapeError("softmax: scalar input");
    const int cols = a.dim(a.ndim() - 1);
    const std::size_t rows = a.size() / static_cast<std::size_t>(cols);
    Tensor out = make_output(a.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = a.values().data() + r * cols;
        double* o = out.values().data() + r * cols;
        double mx = in[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
        double sum = 0.0;
        for (int c = 0; c < cols; ++c) {
            o[c] = std::exp(in[c] - mx);
            sum += o[c];
        }
        for (int c = 0; c < cols; ++c) o[c] /= sum;
    }
    guard_finite("softmax", out);
    if (tracing({&a})) {
        auto an = a.node(), on = out.node();
        mark_and_record(out, [an, on, rows, cols] {
            on->ensure_grad();
            an->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* y = on->value.data() + r * cols;
                const double* gy = on->grad.data() + r * cols;
                double* gx = an->grad.data() + r * cols;
                double dotv = 0.0;
                for (int c = 0; c < cols; ++c) dotv += y[c] * gy[c];
                for (int c = 0; c < cols; ++c) gx[c] += y[c] * (gy[c] - dotv);
            }
        });
    }
    return out;
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
    const auto [n, c] = dims2("add_bias", a);
    if (bias.size() != static_cast<std::size_t>(c)) {
        throw ShapeError("add_bias: bias length " + std::to_string(bias.size()) +
                         " does not match columns " + std::to_string(c));
    }
    Tensor out = make_output(a.shape());
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < c; ++j) {
            out.at(static_cast<std::size_t>(i) * c + j) =
                a[static_cast<std::size_t>(i) * c + j] + bias[static_cast<std::size_t>(j)];
        }
    }
    guard_finite("add_bias", out);
    if (tracing({&a, &bias})) {
        auto an = a.node(), bn = bias.node(), on = out.node();
        mark_and_record(out, [an, bn, on, n, c] {
            on->ensure_grad();
            if (an->needs_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
            }
            if (bn->needs_grad) {
                bn->ensure_grad();
                for (int i = 0; i < n; ++i) {
                    for (int j = 0; j < c; ++j) {
                        bn->grad[static_cast<std::size_t>(j)] +=
                            on->grad[static_cast<std::size_t>(i) * c + j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor broadcast_rows(const Tensor& row, int n_rows) {
    const auto [one, c] = dims2("broadcast_rows", row);
    if (one != 1) throw ShapeError("broadcast_rows: input must have one row");
    Tensor out = make_output({n_rows, c});
    for (int i = 0; i < n_rows; ++i) {
        for (int j = 0; j < c; ++j) out.at(static_cast<std::size_t>(i) * c + j) = row[static_cast<std::size_t>(j)];
    }
    if (tracing({&row})) {
        auto rn = row.node(), on = out.node();
        mark_and_record(out, [rn, on, n_rows, c] {
            on->ensure_grad();
            rn->ensure_grad();
            for (int i = 0; i < n_rows; ++i) {
                for (int j = 0; j < c; ++j) {
                    rn->grad[static_cast<std::size_t>(j)] += on->grad[static_cast<std::size_t>(i) * c + j];
                }
            }
        });
    }
    return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) { return concat_cols(std::vector<Tensor>{a, b}); }

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const int n = dims2("concat_cols", parts.front()).first;
    int total_cols = 0;
    for (const Tensor& p : parts) {
        const auto [pn, pc] = dims2("concat_cols", p);
        if (pn != n) throw ShapeError("concat_cols: row counts disagree");
        total_cols += pc;
    }
    Tensor out = make_output({n, total_cols});
    int col0 = 0;
    for (const Tensor& p : parts) {
        const int pc = p.dim(1);
        for (int i = 0; i < n; ++i) {
            std::memcpy(out.values().data() + static_cast<std::size_t>(i) * total_cols + col0,
                        p.values().data() + static_cast<std::size_t>(i) * pc,
                        sizeof(double) * static_cast<std::size_t>(pc));
        }
        col0 += pc;
    }
    bool any = false;
    for (const Tensor& p : parts) any = any || p.needs_grad();
    if (Tape::current() && any) {
        std::vector<NodePtr> nodes;
        for (const Tensor& p : parts) nodes.push_back(p.node());
        auto on = out.node();
        mark_and_record(out, [nodes, on, n, total_cols] {
            on->ensure_grad();
            int base = 0;
            for (const NodePtr& pn : nodes) {
                const int pc = pn->shape[1];
                if (pn->needs_grad) {
                    pn->ensure_grad();
                    for (int i = 0; i < n; ++i) {
                        for (int j = 0; j < pc; ++j) {
                            pn->grad[static_cast<std::size_t>(i) * pc + j] +=
                                on->grad[static_cast<std::size_t>(i) * total_cols + base + j];
                        }
                    }
                }
                base += pc;
            }
        });
    }
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const int c = dims2("concat_rows", parts.front()).second;
    int total_rows = 0;
    for (const Tensor& p : parts) {
        const auto [pn, pc] = dims2("concat_rows", p);
        if (pc != c) throw ShapeError("concat_rows: column counts disagree");
        total_rows += pn;
    }
    Tensor out = make_output({total_rows, c});
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
        std::memcpy(out.values().data() + offset, p.values().data(), sizeof(double) * p.size());
        offset += p.size();
    }
    bool any = false;
    for (const Tensor& p : parts) any = any || p.needs_grad();
    if (Tape::current() && any) {
        std::vector<NodePtr> nodes;
        for (const Tensor& p : parts) nodes.push_back(p.node());
        auto on = out.node();
        mark_and_record(out, [nodes, on] {
            on->ensure_grad();
            std::size_t base = 0;
            for (const NodePtr& pn : nodes) {
                if (pn->needs_grad) {
                    pn->ensure_grad();
                    for (std::size_t i = 0; i < pn->value.size(); ++i) {
                        pn->grad[i] += on->grad[base + i];
                    }
                }
                base += pn->value.size();
            }
        });
    }
    return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& indices) {
    const auto [n, c] = dims2("gather_rows", a);
    Tensor out = make_output({static_cast<int>(indices.size()), c});
    for (std::size_t q = 0; q < indices.size(); ++q) {
        const int idx = indices[q];
        if (idx < 0 || idx >= n) throw ShapeError("gather_rows: index out of range");
        std::memcpy(out.values().data() + q * c, a.values().data() + static_cast<std::size_t>(idx) * c,
                    sizeof(double) * static_cast<std::size_t>(c));
    }
    if (tracing({&a})) {
        auto an = a.node(), on = out.node();
        auto idx = indices;
        mark_and_record(out, [an, on, idx, c] {
            on->ensure_grad();
            an->ensure_grad();
            for (std::size_t q = 0; q < idx.size(); ++q) {
                for (int j = 0; j < c; ++j) {
                    an->grad[static_cast<std::size_t>(idx[q]) * c + j] += on->grad[q * c + j];
                }
            }
        });
    }
    return out;
}

Tensor reduce_max(const Tensor& a) {
    const auto [n, c] = dims2("reduce_max", a);
    return group_max(a, n);
}

Tensor group_max(const Tensor& a, int group_size) {
    const auto [n, c] = dims2("group_max", a);
    if (group_size < 1 || n % group_size != 0) {
        throw ShapeError("group_max: " + std::to_string(n) + " rows not divisible by group size " +
                         std::to_string(group_size));
    }
    const int groups = n / group_size;
    Tensor out = make_output({groups, c});
    std::vector<int> argmax(static_cast<std::size_t>(groups) * c);
    for (int g = 0; g < groups; ++g) {
        for (int j = 0; j < c; ++j) {
            int best_row = g * group_size;
            double best = a[static_cast<std::size_t>(best_row) * c + j];
            for (int r = 1; r < group_size; ++r) {
                const int row = g * group_size + r;
                const double v = a[static_cast<std::size_t>(row) * c + j];
                if (v > best) {  // strict: ties keep the first maximal element
                    best = v;
                    best_row = row;
                }
            }
            out.at(static_cast<std::size_t>(g) * c + j) = best;
            argmax[static_cast<std::size_t>(g) * c + j] = best_row;
        }
    }
    guard_finite("group_max", out);
    if (tracing({&a})) {
        auto an = a.node(), on = out.node();
        mark_and_record(out, [an, on, argmax, groups, c] {
            on->ensure_grad();
            an->ensure_grad();
            for (int g = 0; g < groups; ++g) {
                for (int j = 0; j < c; ++j) {
                    an->grad[static_cast<std::size_t>(argmax[static_cast<std::size_t>(g) * c + j]) * c + j] +=
                        on->grad[static_cast<std::size_t>(g) * c + j];
                }
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    if (shape_size(shape) != a.size()) {
        throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                         shape_string(shape));
    }
    Tensor out = make_output(std::move(shape));
    out.values() = a.values();
    if (tracing({&a})) {
        auto an = a.node(), on = out.node();
        mark_and_record(out, [an, on] {
            on->ensure_grad();
            an->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
        });
    }
    return out;
}

Tensor weighted_gather_rows(const Tensor& a, const std::vector<std::array<int, 3>>& indices,
                            const std::vector<std::array<double, 3>>& weights) {
    const auto [n, c] = dims2("weighted_gather_rows", a);
    if (indices.size() != weights.size()) {
        throw ShapeError("weighted_gather_rows: indices/weights size mismatch");
    }
    Tensor out = make_output({static_cast<int>(indices.size()), c});
    for (std::size_t q = 0; q < indices.size(); ++q) {
        for (int k = 0; k < 3; ++k) {
            const int idx = indices[q][k];
            if (idx < 0 || idx >= n) throw ShapeError("weighted_gather_rows: index out of range");
            const double w = weights[q][k];
            if (w == 0.0) continue;
            for (int j = 0; j < c; ++j) {
                out.at(q * c + j) += w * a[static_cast<std::size_t>(idx) * c + j];
            }
        }
    }
    guard_finite("weighted_gather_rows", out);
    if (tracing({&a})) {
        auto an = a.node(), on = out.node();
        auto idx = indices;
        auto w = weights;
        mark_and_record(out, [an, on, idx, w, c] {
            on->ensure_grad();
            an->ensure_grad();
            for (std::size_t q = 0; q < idx.size(); ++q) {
                for (int k = 0; k < 3; ++k) {
                    if (w[q][k] == 0.0) continue;
                    for (int j = 0; j < c; ++j) {
                        an->grad[static_cast<std::size_t>(idx[q][k]) * c + j] +=
                            w[q][k] * on->grad[q * c + j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training) {
    const auto [n, c] = dims2("batch_norm", x);
    if (gamma.size() != static_cast<std::size_t>(c) || beta.size() != static_cast<std::size_t>(c)) {
        throw ShapeError("batch_norm: gamma/beta length must equal the column count");
    }
    if (state.running_mean.empty()) {
        state.running_mean.assign(static_cast<std::size_t>(c), 0.0);
        state.running_var.assign(static_cast<std::size_t>(c), 1.0);
    }

    Tensor out = make_output(x.shape());
    std::vector<double> mean(static_cast<std::size_t>(c)), var(static_cast<std::size_t>(c));
    if (training) {
        for (int j = 0; j < c; ++j) {
            double m = 0.0;
            for (int i = 0; i < n; ++i) m += x[static_cast<std::size_t>(i) * c + j];
            m /= n;
            double v = 0.0;
            for (int i = 0; i < n; ++i) {
                const double d = x[static_cast<std::size_t>(i) * c + j] - m;
                v += d * d;
            }
            v /= n;
            mean[static_cast<std::size_t>(j)] = m;
            var[static_cast<std::size_t>(j)] = v;
            state.running_mean[static_cast<std::size_t>(j)] =
                state.momentum * state.running_mean[static_cast<std::size_t>(j)] + (1.0 - state.momentum) * m;
            state.running_var[static_cast<std::size_t>(j)] =
                state.momentum * state.running_var[static_cast<std::size_t>(j)] + (1.0 - state.momentum) * v;
        }
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }

    std::vector<double> inv_std(static_cast<std::size_t>(c));
    for (int j = 0; j < c; ++j) {
        inv_std[static_cast<std::size_t>(j)] = 1.0 / std::sqrt(var[static_cast<std::size_t>(j)] + state.eps);
    }
    std::vector<double> x_hat(x.size());
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < c; ++j) {
            const std::size_t k = static_cast<std::size_t>(i) * c + j;
            x_hat[k] = (x[k] - mean[static_cast<std::size_t>(j)]) * inv_std[static_cast<std::size_t>(j)];
            out.at(k) = gamma[static_cast<std::size_t>(j)] * x_hat[k] + beta[static_cast<std::size_t>(j)];
        }
    }
    guard_finite("batch_norm", out);

    if (tracing({&x, &gamma, &beta})) {
        auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
        mark_and_record(out, [xn, gn, bn, on, x_hat, inv_std, n, c, training] {
            on->ensure_grad();
            for (int j = 0; j < c; ++j) {
                double sum_gy = 0.0, sum_gy_xhat = 0.0;
                for (int i = 0; i < n; ++i) {
                    const std::size_t k = static_cast<std::size_t>(i) * c + j;
                    sum_gy += on->grad[k];
                    sum_gy_xhat += on->grad[k] * x_hat[k];
                }
                if (gn->needs_grad) {
                    gn->ensure_grad();
                    gn->grad[static_cast<std::size_t>(j)] += sum_gy_xhat;
                }
                if (bn->needs_grad) {
                    bn->ensure_grad();
                    bn->grad[static_cast<std::size_t>(j)] += sum_gy;
                }
                if (xn->needs_grad) {
                    xn->ensure_grad();
                    const double g = gn->value[static_cast<std::size_t>(j)];
                    const double istd = inv_std[static_cast<std::size_t>(j)];
                    for (int i = 0; i < n; ++i) {
                        const std::size_t k = static_cast<std::size_t>(i) * c + j;
                        if (training) {
                            xn->grad[k] += g * istd *
                                           (on->grad[k] - sum_gy / n - x_hat[k] * sum_gy_xhat / n);
                        } else {
                            xn->grad[k] += g * istd * on->grad[k];
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<PartLabel>& labels) {
    const auto [n, c] = dims2("softmax_cross_entropy", logits);
    if (c != kNumClasses || labels.size() != static_cast<std::size_t>(n)) {
        throw ShapeError("softmax_cross_entropy: logits " + shape_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    }
    std::vector<double> probs(logits.size());
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* in = logits.values().data() + static_cast<std::size_t>(i) * c;
        double* p = probs.data() + static_cast<std::size_t>(i) * c;
        double mx = in[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, in[j]);
        double sum = 0.0;
        for (int j = 0; j < c; ++j) {
            p[j] = std::exp(in[j] - mx);
            sum += p[j];
        }
        for (int j = 0; j < c; ++j) p[j] /= sum;
        loss -= std::log(std::max(p[static_cast<int>(labels[static_cast<std::size_t>(i)])], 1e-300));
    }
    loss /= n;
    Tensor out = Tensor::from_values({1}, {loss});
    guard_finite("softmax_cross_entropy", out);
    if (tracing({&logits})) {
        auto ln = logits.node(), on = out.node();
        auto lbl = labels;
        mark_and_record(out, [ln, on, probs, lbl, n, c] {
            on->ensure_grad();
            ln->ensure_grad();
            const double g = on->grad[0] / n;
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < c; ++j) {
                    const std::size_t k = static_cast<std::size_t>(i) * c + j;
                    const double onehot = static_cast<int>(lbl[static_cast<std::size_t>(i)]) == j ? 1.0 : 0.0;
                    ln->grad[k] += g * (probs[k] - onehot);
                }
            }
        });
    }
    return out;
}

// --- optimizer ------------------------------------------------------------

double OptimizerState::effective_rate() const {
    if (decay_step <= 0) return learning_rate;
    const auto k = static_cast<double>(samples_seen / decay_step);
    return learning_rate * std::pow(decay_rate, k);
}

void adam_step(std::vector<Tensor>& params, OptimizerState& state,
               const std::vector<bool>* update_mask) {
    if (state.first_moment.size() != params.size()) {
        state.first_moment.resize(params.size());
        state.second_moment.resize(params.size());
        for (std::size_t p = 0; p < params.size(); ++p) {
            state.first_moment[p].assign(params[p].size(), 0.0);
            state.second_moment[p].assign(params[p].size(), 0.0);
        }
    }
    ++state.step;
    const double lr = state.effective_rate();
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t p = 0; p < params.size(); ++p) {
        if (update_mask && !(*update_mask)[p]) continue;
        Tensor& param = params[p];
        auto& m = state.first_moment[p];
        auto& v = state.second_moment[p];
        auto& g = param.grad();
        for (std::size_t i = 0; i < param.size(); ++i) {
            double grad = g[i];
            if (state.weight_decay) grad += *state.weight_decay * param[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * grad;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * grad * grad;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            param.at(i) -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

// --- checkpoint container -------------------------------------------------

Tensor* NamedTensors::find(const std::string& name) {
    for (auto& [n, t] : items) {
        if (n == name) return &t;
    }
    return nullptr;
}

const Tensor* NamedTensors::find(const std::string& name) const {
    for (const auto& [n, t] : items) {
        if (n == name) return &t;
    }
    return nullptr;
}

namespace {

template <typename T>
void write_raw(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
void read_raw(std::istream& in, T& value) {
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
}

void write_string(std::ostream& out, const std::string& s) {
    write_raw(out, std::uint32_t(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
    std::uint32_t len = 0;
    read_raw(in, len);
    std::string s(len, '\0');
    in.read(s.data(), len);
    return s;
}

void write_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
    write_string(out, name);
    write_raw(out, std::uint32_t(t.ndim()));
    for (int d : t.shape()) write_raw(out, std::uint32_t(d));
    write_raw(out, std::uint8_t{8});  // dtype: float64
    out.write(reinterpret_cast<const char*>(t.values().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
}

std::pair<std::string, Tensor> read_tensor(std::istream& in) {
    const std::string name = read_string(in);
    std::uint32_t ndim = 0;
    read_raw(in, ndim);
    std::vector<int> shape(ndim);
    for (auto& d : shape) {
        std::uint32_t v = 0;
        read_raw(in, v);
        d = static_cast<int>(v);
    }
    std::uint8_t dtype = 0;
    read_raw(in, dtype);
    if (dtype != 8) throw ParseError("checkpoint: unsupported dtype");
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.values().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    return {name, t};
}

constexpr std::uint32_t kCheckpointMagic = 0x4B43'5052;  // "RPCK"

}  // namespace

void save_checkpoint(const CheckpointFile& file, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
    write_raw(out, kCheckpointMagic);
    write_raw(out, std::uint32_t{1});
    write_string(out, file.meta);
    write_raw(out, file.epoch);
    write_raw(out, file.optimizer.learning_rate);
    write_raw(out, std::int64_t(file.optimizer.batch_size));
    write_raw(out, std::int64_t(file.optimizer.decay_step));
    write_raw(out, file.optimizer.decay_rate);
    write_raw(out, std::uint8_t(file.optimizer.weight_decay ? 1 : 0));
    write_raw(out, file.optimizer.weight_decay.value_or(0.0));
    write_raw(out, file.optimizer.samples_seen);
    write_raw(out, file.optimizer.step);

    write_raw(out, std::uint32_t(file.tensors.items.size()));
    for (const auto& [name, t] : file.tensors.items) write_tensor(out, name, t);

    write_raw(out, std::uint32_t(file.optimizer.first_moment.size()));
    for (std::size_t p = 0; p < file.optimizer.first_moment.size(); ++p) {
        const auto& m = file.optimizer.first_moment[p];
        const auto& v = file.optimizer.second_moment[p];
        write_raw(out, std::uint64_t(m.size()));
        out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * 8));
        out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

CheckpointFile load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
    std::uint32_t magic = 0, version = 0;
    read_raw(in, magic);
    read_raw(in, version);
    if (magic != kCheckpointMagic || version != 1) {
        throw ParseError(path.string() + ": not a checkpoint file");
    }
    CheckpointFile file;
    file.meta = read_string(in);
    read_raw(in, file.epoch);
    read_raw(in, file.optimizer.learning_rate);
    std::int64_t batch = 0, decay_step = 0;
    read_raw(in, batch);
    read_raw(in, decay_step);
    file.optimizer.batch_size = static_cast<int>(batch);
    file.optimizer.decay_step = static_cast<int>(decay_step);
    read_raw(in, file.optimizer.decay_rate);
    std::uint8_t has_wd = 0;
    double wd = 0.0;
    read_raw(in, has_wd);
    read_raw(in, wd);
    if (has_wd) file.optimizer.weight_decay = wd;
    read_raw(in, file.optimizer.samples_seen);
    read_raw(in, file.optimizer.step);

    std::uint32_t n_tensors = 0;
    read_raw(in, n_tensors);
    for (std::uint32_t i = 0; i < n_tensors; ++i) file.tensors.items.push_back(read_tensor(in));

    std::uint32_t n_moments = 0;
    read_raw(in, n_moments);
    file.optimizer.first_moment.resize(n_moments);
    file.optimizer.second_moment.resize(n_moments);
    for (std::uint32_t p = 0; p < n_moments; ++p) {
        std::uint64_t len = 0;
        read_raw(in, len);
        file.optimizer.first_moment[p].resize(len);
        file.optimizer.second_moment[p].resize(len);
        in.read(reinterpret_cast<char*>(file.optimizer.first_moment[p].data()),
                static_cast<std::streamsize>(len * 8));
        in.read(reinterpret_cast<char*>(file.optimizer.second_moment[p].data()),
                static_cast<std::streamsize>(len * 8));
    }
    if (!in) throw ParseError(path.string() + ": truncated checkpoint");
    return file;
}

}  // namespace rosepoint
