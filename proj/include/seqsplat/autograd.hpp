// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense-tensor engine with reverse-mode differentiation. 64-bit
// scalars throughout; graphs are built dynamically and freed with the
// tensors that reference them.

#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "seqsplat/util.hpp"

namespace seqsplat::ag {

using Shape = std::vector<size_t>;

size_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // allocated lazily, same extent as values
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void()> backward_fn;  // adds into inputs' grads using this->grad
    const char* op = "leaf";

    void ensure_grad() {
        if (grad.size() != values.size())
            grad.assign(values.size(), 0.0);
    }
};

// When false, ops do not record backward closures (inference mode).
bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_enabled()) { set_grad_enabled(false); }
    ~NoGradGuard() { set_grad_enabled(prev); }
};

// NaN/Inf checking after every op; on by default in debug builds.
bool finite_checks();
void set_finite_checks(bool on);

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value);
    static Tensor from(Shape shape, std::vector<double> values);
    static Tensor scalar(double value);
    static Tensor randn(Shape shape, RngStream& rng, double stddev, double mean = 0.0);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    size_t rank() const { return node_->shape.size(); }
    size_t size() const { return node_->values.size(); }
    size_t dim(size_t i) const { return node_->shape[i]; }

    std::vector<double>& values() { return node_->values; }
    const std::vector<double>& values() const { return node_->values; }
    double* data() { return node_->values.data(); }
    const double* data() const { return node_->values.data(); }

    double item() const;
    double at(size_t i) const { return node_->values[i]; }
    double at(size_t i, size_t j) const { return node_->values[i * node_->shape[1] + j]; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        node_->requires_grad = on;
        return *this;
    }
    const std::vector<double>& grad() const;
    void zero_grad();

    std::shared_ptr<Node>& node() { return node_; }
    const std::shared_ptr<Node>& node() const { return node_; }

    static Tensor wrap(std::shared_ptr<Node> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<Node> node_;
};

// --- core ops ----------------------------------------------------------------
// Elementwise binary ops broadcast over leading axes: shapes must be equal,
// or one operand's shape must be a suffix of the other's (size-1 tensors
// broadcast everywhere).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mulc(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);  // (n,k) x (k,m) -> (n,m)
Tensor transpose(const Tensor& a);                // 2-D
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, size_t axis);
Tensor slice(const Tensor& a, size_t axis, size_t start, size_t len);
Tensor sum(const Tensor& a);   // full reduction -> shape {1}
Tensor mean(const Tensor& a);  // full reduction -> shape {1}
Tensor max(const Tensor& a, size_t axis);  // removes axis; grad to first argmax
Tensor softmax(const Tensor& a, size_t axis);
Tensor sigmoid(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor layer_norm(const Tensor& a, size_t axis, double eps = 1e-5);
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
Tensor dropout(const Tensor& a, double p, bool train, RngStream& rng);

// --- composite / domain ops ---------------------------------------------------

// softmax(Q K^T / sqrt(d_k) + mask) V. mask entries are 0 or a -inf surrogate.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const Tensor& mask = Tensor());

// Single query q (d) attending over K,V (N,d)/(N,dv) with 1/sqrt(d) scaling.
// Reductions over the row axis use value-sorted summation so the output is
// bitwise invariant under any permutation of the rows.
Tensor single_query_attention(const Tensor& q, const Tensor& k, const Tensor& v);

// sum_i w_i F_i / sum_i w_i over rows of F (N,d), w (N). Same value-sorted
// reduction as above. Errors when all weights are zero.
Tensor weighted_mean_rows(const Tensor& f, const Tensor& w);

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);
Tensor dice_loss(const Tensor& probs, const Tensor& targets);
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& target_ids,
                     int ignore_id);

// --- backward & optimizer -------------------------------------------------------

// Reverse topological accumulation into leaf grads. Repeated calls accumulate.
void backward(const Tensor& loss);

class ParameterStore {
public:
    Tensor register_parameter(const std::string& name, Tensor t);
    Tensor get(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) != 0; }
    const std::map<std::string, Tensor>& all() const { return params_; }
    void zero_grad();
    size_t size() const { return params_.size(); }

    // Checkpoint file: magic SSCK, u32 count, per parameter
    // (u32 name_len, name bytes, u32 rank, u32 extents..., f64 payload), LE.
    void save(const std::filesystem::path& path) const;
    // Loads values for parameters matching `prefix` (all when empty).
    // Missing parameters are an error when require_all is set.
    void load(const std::filesystem::path& path, const std::string& prefix = "",
              bool require_all = true);

private:
    std::map<std::string, Tensor> params_;
};

struct AdamState {
    struct Moments {
        std::vector<double> m, v;
    };
    std::map<std::string, Moments> moments;
    long step = 0;
};

// Decoupled weight decay: theta <- theta - lr*wd*theta before the moment
// update is applied.
void adam_step(ParameterStore& params, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
               double weight_decay = 0.0);

}  // namespace seqsplat::ag
