#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rosepoint/labels.hpp"

namespace rosepoint {

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct TensorNode {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool needs_grad = false;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

using NodePtr = std::shared_ptr<TensorNode>;

// Dense 64-bit tensor participating in reverse-mode differentiation when a
// Tape is active and the tensor (or one of its ancestors) requires gradients.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}
    Tensor(std::vector<int> shape, double fill = 0.0, bool requires_grad = false);

    static Tensor from_values(std::vector<int> shape, std::vector<double> values,
                              bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }

    std::vector<double>& values() { return node_->value; }
    const std::vector<double>& values() const { return node_->value; }
    double operator[](std::size_t i) const { return node_->value[i]; }
    double& at(std::size_t i) { return node_->value[i]; }

    bool needs_grad() const { return node_->needs_grad; }
    std::vector<double>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        node_->grad.assign(node_->value.size(), 0.0);
    }

    const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

// Records backward rules of executed primitives in topological order. Tapes
// nest as an RAII stack; the innermost one is the active recorder. A tape is
// single-threaded; independent tapes may run on independent threads.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* current();

    void record(std::function<void()> backward_step);
    std::size_t size() const { return steps_.size(); }

    // Seeds the scalar output with gradient 1, runs every recorded step exactly
    // once in reverse order and clears the tape.
    void backward(Tensor& scalar_output);

private:
    std::vector<std::function<void()>> steps_;
    Tape* previous_ = nullptr;
};

// --- primitives -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b);  // 2D (n,k)x(k,m)
Tensor relu(const Tensor& a);
Tensor softmax(const Tensor& a);  // over the last dimension
// Broadcasts a 1D bias of length C over the rows of an (N,C) tensor.
Tensor add_bias(const Tensor& a, const Tensor& bias);
// Repeats a (1,C) row N times; backward sums over rows.
Tensor broadcast_rows(const Tensor& row, int n_rows);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& a, const std::vector<int>& indices);
// Max over all rows of an (N,C) tensor -> (1,C); gradient flows to the first
// maximal element per column.
Tensor reduce_max(const Tensor& a);
// Max over consecutive groups of group_size rows: (G*M,C) -> (G,C).
Tensor group_max(const Tensor& a, int group_size);
Tensor reshape(const Tensor& a, std::vector<int> shape);
// Per-row weighted sums: out[q] = sum_k w[q][k] * a[idx[q][k]].
Tensor weighted_gather_rows(const Tensor& a, const std::vector<std::array<int, 3>>& indices,
                            const std::vector<std::array<double, 3>>& weights);

struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.9;
    double eps = 1e-5;
};

// Column-wise batch normalization over the rows of an (N,C) tensor. In
// training mode batch statistics are used and running statistics updated; in
// evaluation mode the frozen running statistics are applied.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training);

// Mean negative log-likelihood of the softmax of the logits (n,3);
// gradient is (softmax - onehot)/n.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<PartLabel>& labels);

// --- optimizer ------------------------------------------------------------

struct OptimizerState {
    double learning_rate = 0.001;
    int batch_size = 1;
    int decay_step = 0;      // in samples; 0 disables decay
    double decay_rate = 1.0;
    std::optional<double> weight_decay;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    std::int64_t samples_seen = 0;
    std::int64_t step = 0;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;

    double effective_rate() const;
};

// Adam update with bias correction over a flat parameter list; entries with
// update_mask[i]==false are skipped entirely (frozen).
void adam_step(std::vector<Tensor>& params, OptimizerState& state,
               const std::vector<bool>* update_mask = nullptr);

// --- checkpoint container -------------------------------------------------

struct NamedTensors {
    std::vector<std::pair<std::string, Tensor>> items;

    Tensor* find(const std::string& name);
    const Tensor* find(const std::string& name) const;
};

struct CheckpointFile {
    NamedTensors tensors;
    std::int64_t epoch = 0;
    OptimizerState optimizer;
    std::string meta;  // free-form text (model spec, provenance)
};

void save_checkpoint(const CheckpointFile& file, const std::filesystem::path& path);
CheckpointFile load_checkpoint(const std::filesystem::path& path);

}  // namespace rosepoint
