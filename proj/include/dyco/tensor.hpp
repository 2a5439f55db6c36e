#pragma once

// Reverse-mode autodiff on dense row-major double tensors. A Tape records
// one forward pass; backward() replays it in reverse. Tensors are immutable
// after creation, so untracked (inference) tensors can be shared freely.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dyco/errors.hpp"

namespace dyco::ad {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int64_t shape_size(const Shape& s);

class Tape;

struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<double>> data;
    Tape* tape = nullptr;
    int node = -1;

    Tensor() = default;

    int64_t size() const { return data ? static_cast<int64_t>(data->size()) : 0; }
    bool tracked() const { return tape != nullptr && node >= 0; }
    int rank() const { return static_cast<int>(shape.size()); }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    double& operator[](int64_t i) { return (*data)[i]; }
    double operator[](int64_t i) const { return (*data)[i]; }
    double scalar() const;

    const std::vector<double>& values() const { return *data; }

    static Tensor zeros(Shape s);
    static Tensor full(Shape s, double v);
    static Tensor from(Shape s, std::vector<double> v);
};

// One recorded forward pass. Node i's parents always have ids < i.
class Tape {
public:
    // Registers a leaf whose gradient will be materialized on demand.
    Tensor leaf(Shape s, std::shared_ptr<std::vector<double>> values);
    Tensor leaf(const Tensor& detached);

    // Two-phase node creation: reserve an id first so the backward closure
    // can capture it, then attach parents and the closure.
    int reserve(int64_t grad_size);
    void attach(int id, std::vector<int> parents, std::function<void(Tape&)> fn);

    // Gradient buffer of a node, allocated (zeroed) on first touch.
    std::vector<double>& grad(int id);
    bool grad_touched(int id) const { return grads_[id] != nullptr; }

    void backward(const Tensor& root);
    const std::vector<double>& grad_of(const Tensor& t);

    size_t num_nodes() const { return recs_.size(); }

private:
    struct Rec {
        std::vector<int> parents;
        std::function<void(Tape&)> fn;
        int64_t grad_size = 0;
    };
    std::vector<Rec> recs_;
    std::vector<std::unique_ptr<std::vector<double>>> grads_;
    std::vector<double> empty_;
};

// ---- op surface ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);      // [m,k]x[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);   // a * b^T, b is [n,k]
Tensor transpose(const Tensor& a);

// Binary elementwise; shapes must be equal, or one side a scalar, or the
// right side a row vector [n] matching the left's trailing dim.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);

// Reductions; axis -1 reduces everything to a scalar. For 2-D input,
// axis 0 yields [cols], axis 1 yields [rows].
Tensor reduce_sum(const Tensor& a, int axis = -1);
Tensor reduce_mean(const Tensor& a, int axis = -1);
Tensor reduce_max(const Tensor& a, int axis = -1);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor softmax_rows(const Tensor& logits);

// Mean cross-entropy over rows whose label is not -1; backward is
// (softmax - onehot) / num_valid on those rows.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Per-element binary cross-entropy with logits, numerically stable.
Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets);

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx);
// Per-segment mean of rows; every segment in [0,num_segments) must be hit.
Tensor segment_mean(const Tensor& a, const std::vector<int>& seg, int num_segments);

Tensor reshape(const Tensor& a, Shape s);
Tensor slice_flat(const Tensor& a, int64_t start, int64_t len);
Tensor slice_cols(const Tensor& a, int start, int len);

// Escape hatch for fused ops with hand-written backward passes.
Tensor make_op(Tape* tape, Shape shape, std::vector<double> values,
               std::vector<int> parents, std::function<void(Tape&, const std::vector<double>&)> fn);

// ---- parameters / optimizer ---------------------------------------------

struct Parameter {
    std::string name;
    Tensor value;
    std::vector<double> m, v;  // Adam moments
    long step = 0;

    Parameter() = default;
    Parameter(std::string n, Tensor t) : name(std::move(n)), value(std::move(t)) {}
};

struct AdamConfig {
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

void adam_step(Parameter& p, const std::vector<double>& grad, const AdamConfig& cfg);

// Glorot-uniform init in +-sqrt(6/(fan_in+fan_out)).
Tensor glorot(Shape s, int fan_in, int fan_out, std::mt19937_64& rng);

// Binds parameters to a tape for one forward/backward pass.
class Session {
public:
    explicit Session(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    Tensor use(Parameter& p);
    Tensor watch(const Tensor& t);  // track a non-parameter input
    Tensor constant(const Tensor& t) { return t; }

    bool grad_enabled() const { return grad_enabled_; }
    Tape* tape() { return grad_enabled_ ? &tape_ : nullptr; }

    void backward(const Tensor& loss);
    const std::vector<double>& grad_of(const Tensor& t) { return tape_.grad_of(t); }
    std::vector<double> grad_of(Parameter& p);

    // One optimizer step over every bound parameter, in binding order.
    // max_grad_norm > 0 rescales all gradients together when their global
    // L2 norm exceeds it.
    void apply_adam(const AdamConfig& cfg, double max_grad_norm = 0.0);

private:
    bool grad_enabled_;
    Tape tape_;
    std::vector<std::pair<Parameter*, Tensor>> bound_;
};

}  // namespace dyco::ad
