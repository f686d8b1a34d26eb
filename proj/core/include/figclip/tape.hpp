#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "figclip/tensor.hpp"

namespace figclip {

using NodeId = size_t;

// Reverse-mode tape over a small fixed op set. Ops append nodes in
// topological order; backward() walks the tape in reverse. One tape per
// training step; tapes are cheap to construct and throw away.
//
// All forward results are rounded to f32 precision when the tape runs in
// Precision::f32, which is what makes f32 checkpoints round-trip bit-exactly.
class Tape {
public:
    explicit Tape(Precision precision = Precision::f64, bool grad_enabled = true)
        : precision_(precision), grad_enabled_(grad_enabled) {
        nodes_.reserve(1024);
    }

    Precision precision() const { return precision_; }
    bool grad_enabled() const { return grad_enabled_; }
    size_t size() const { return nodes_.size(); }

    // ---- leaves ----
    NodeId constant(Tensor t);                     // never receives gradient
    NodeId leaf(const Tensor& t, bool requires_grad);

    // ---- elementwise / structural ----
    NodeId add(NodeId a, NodeId b);                // same shape
    NodeId sub(NodeId a, NodeId b);
    NodeId add_rowvec(NodeId x, NodeId v);         // [S,d] + broadcast [d]
    NodeId scale(NodeId a, double c);              // constant multiply
    NodeId mul_scalar(NodeId a, NodeId s);         // multiply by a [1] variable
    NodeId gelu(NodeId x);
    NodeId log(NodeId x);
    NodeId exp(NodeId x);

    // ---- linear algebra ----
    NodeId matmul(NodeId a, NodeId b);             // [m,k]x[k,n]
    NodeId transpose(NodeId a);                    // 2-d

    // ---- shape surgery ----
    NodeId concat(const std::vector<NodeId>& parts, int axis);  // rank 1 or 2
    NodeId stack_rows(const std::vector<NodeId>& vecs);         // k x [d] -> [k,d]
    NodeId slice(NodeId a, int axis, size_t start, size_t len);
    NodeId row(NodeId a, size_t i);                             // [d] view copy

    // ---- reductions / normalizations ----
    NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta);     // rows of 2-d or a 1-d vector; eps 1e-5
    NodeId softmax(NodeId x, int axis);                         // 1-d, or 2-d rows (axis 1 / -1)
    NodeId mean(NodeId x, int axis);                            // 2-d axis 0 -> [cols], axis 1 -> [rows]; 1-d -> [1]
    NodeId mean_all(NodeId x);                                  // -> [1]
    NodeId l2_normalize(NodeId x, int axis);                    // 1-d whole or 2-d rows
    NodeId logsumexp_rows(NodeId x);                            // [N,M] -> [N], max-shifted
    NodeId diag(NodeId x);                                      // [N,M], M >= N -> [N]

    // out[i,h] = dot(q[i], hn[i*H+h]); per-row hard-negative similarities.
    NodeId rowwise_block_dots(NodeId q, NodeId hn, size_t H);

    // ---- autodiff ----
    void backward(NodeId loss);  // loss must be a [1] tensor

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    const std::vector<double>& grad(NodeId id) const;
    bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;  // lazily sized
        bool requires_grad = false;
        std::function<void(Tape&, const Node&)> back;  // nullptr for leaves
    };

    NodeId push(Tensor value, bool requires_grad, std::function<void(Tape&, const Node&)> back);
    std::vector<double>& grad_buf(NodeId id);
    void accum(NodeId id, size_t flat_index, double v);

    std::vector<Node> nodes_;
    Precision precision_;
    bool grad_enabled_;
    static const std::vector<double> empty_grad_;

    friend class TapeSession;
};

// Ordered collection of named parameters; the single source of truth for
// model weights. Ordering is by name so serialization is deterministic.
class ParamStore {
public:
    Parameter& add(const std::string& name, Tensor t, bool frozen);
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) > 0; }

    std::vector<std::string> names() const;
    std::vector<std::string> trainable_names() const;

    std::map<std::string, Tensor> export_tensors() const;
    // Overwrites values of matching names; unknown names are returned, missing ones throw.
    std::vector<std::string> import_tensors(const std::map<std::string, Tensor>& tensors);

    size_t size() const { return params_.size(); }
    std::map<std::string, Parameter>& raw() { return params_; }
    const std::map<std::string, Parameter>& raw() const { return params_; }

private:
    std::map<std::string, Parameter> params_;
};

// Binds parameters to tape leaves for one forward/backward pass. Each
// parameter gets exactly one leaf per session, so shared weights accumulate
// gradient correctly; transposed weights are cached per session.
class TapeSession {
public:
    TapeSession(ParamStore& store, Precision precision, bool grad_enabled = true)
        : tape_(precision, grad_enabled), store_(store) {}

    Tape& tape() { return tape_; }
    ParamStore& store() { return store_; }

    NodeId param(const std::string& name);
    NodeId param_transposed(const std::string& name);

    void backward(NodeId loss) { tape_.backward(loss); }

    // Copies tape gradients into Parameter.tensor.grad for every bound
    // trainable parameter (accumulating if grad is already allocated).
    void harvest_grads();

private:
    Tape tape_;
    ParamStore& store_;
    std::unordered_map<std::string, NodeId> bound_;
    std::unordered_map<std::string, NodeId> transposed_;
};

}  // namespace figclip
