#include "dyco/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace dyco::ad {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

int64_t shape_size(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

double Tensor::scalar() const {
    if (size() != 1) throw ShapeError("scalar() on tensor of shape " + shape_str(shape));
    return (*data)[0];
}

Tensor Tensor::zeros(Shape s) { return full(std::move(s), 0.0); }

Tensor Tensor::full(Shape s, double v) {
    Tensor t;
    t.data = std::make_shared<std::vector<double>>(shape_size(s), v);
    t.shape = std::move(s);
    return t;
}

Tensor Tensor::from(Shape s, std::vector<double> v) {
    if (shape_size(s) != static_cast<int64_t>(v.size()))
        throw ShapeError("from: " + shape_str(s) + " vs " + std::to_string(v.size()) + " values");
    Tensor t;
    t.shape = std::move(s);
    t.data = std::make_shared<std::vector<double>>(std::move(v));
    return t;
}

// ---- Tape ----------------------------------------------------------------

Tensor Tape::leaf(Shape s, std::shared_ptr<std::vector<double>> values) {
    if (shape_size(s) != static_cast<int64_t>(values->size()))
        throw ShapeError("leaf: " + shape_str(s) + " vs " + std::to_string(values->size()) + " values");
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(values);
    t.tape = this;
    t.node = reserve(t.size());
    attach(t.node, {}, nullptr);
    return t;
}

Tensor Tape::leaf(const Tensor& detached) { return leaf(detached.shape, detached.data); }

int Tape::reserve(int64_t grad_size) {
    recs_.push_back(Rec{{}, nullptr, grad_size});
    grads_.push_back(nullptr);
    return static_cast<int>(recs_.size()) - 1;
}

void Tape::attach(int id, std::vector<int> parents, std::function<void(Tape&)> fn) {
    recs_[id].parents = std::move(parents);
    recs_[id].fn = std::move(fn);
}

std::vector<double>& Tape::grad(int id) {
    if (!grads_[id]) grads_[id] = std::make_unique<std::vector<double>>(recs_[id].grad_size, 0.0);
    return *grads_[id];
}

void Tape::backward(const Tensor& root) {
    if (!root.tracked() || root.tape != this) throw ShapeError("backward: root is not on this tape");
    if (root.size() != 1) throw ShapeError("backward: root must be scalar, got " + shape_str(root.shape));
    grad(root.node)[0] = 1.0;
    for (int i = root.node; i >= 0; --i) {
        if (!grads_[i] || !recs_[i].fn) continue;
        recs_[i].fn(*this);
    }
}

const std::vector<double>& Tape::grad_of(const Tensor& t) {
    if (!t.tracked() || t.tape != this) throw ShapeError("grad_of: tensor is not on this tape");
    return grad(t.node);
}

// ---- op helpers ----------------------------------------------------------

namespace {

Tape* common_tape(std::initializer_list<const Tensor*> ts) {
    Tape* tape = nullptr;
    for (const Tensor* t : ts) {
        if (!t->tracked()) continue;
        if (tape && t->tape != tape) throw ShapeError("operands recorded on different tapes");
        tape = t->tape;
    }
    return tape;
}

// Builds the result tensor and records the node when any input is tracked.
// `fn(tape, out_grad)` must accumulate into the parents' grad buffers.
Tensor record(Tape* tape, Shape shape, std::vector<double> values, std::vector<int> parents,
              std::function<void(Tape&, const std::vector<double>&)> fn) {
    Tensor out = Tensor::from(std::move(shape), std::move(values));
    if (!tape) return out;
    out.tape = tape;
    out.node = tape->reserve(out.size());
    int id = out.node;
    tape->attach(id, std::move(parents),
                 [id, fn = std::move(fn)](Tape& tp) { fn(tp, tp.grad(id)); });
    return out;
}

std::vector<int> parents_of(std::initializer_list<const Tensor*> ts) {
    std::vector<int> p;
    for (const Tensor* t : ts)
        if (t->tracked()) p.push_back(t->node);
    return p;
}

enum class Bcast { Same, ScalarL, ScalarR, RowR };

Bcast classify(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape == b.shape) return Bcast::Same;
    if (b.size() == 1) return Bcast::ScalarR;
    if (a.size() == 1) return Bcast::ScalarL;
    if (a.rank() == 2 && b.rank() == 1 && b.shape[0] == a.shape[1]) return Bcast::RowR;
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape) + " and " +
                     shape_str(b.shape));
}

void accum(std::vector<double>& dst, const std::vector<double>& src) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Reduce an out-sized gradient onto operand b under the given broadcast.
void reduce_onto_b(Bcast k, const Tensor& a, const std::vector<double>& g, std::vector<double>& gb,
                   const std::vector<double>* weight) {
    int64_t n = static_cast<int64_t>(g.size());
    switch (k) {
        case Bcast::Same:
            for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * (weight ? (*weight)[i] : 1.0);
            break;
        case Bcast::ScalarR: {
            double s = 0;
            for (int64_t i = 0; i < n; ++i) s += g[i] * (weight ? (*weight)[i] : 1.0);
            gb[0] += s;
            break;
        }
        case Bcast::ScalarL:
            throw ShapeError("internal: ScalarL routed to reduce_onto_b");
        case Bcast::RowR: {
            int cols = a.shape[1];
            for (int64_t i = 0; i < n; ++i) gb[i % cols] += g[i] * (weight ? (*weight)[i] : 1.0);
            break;
        }
    }
}

double bval(Bcast k, const Tensor& a, const Tensor& b, int64_t i) {
    switch (k) {
        case Bcast::Same: return (*b.data)[i];
        case Bcast::ScalarR: return (*b.data)[0];
        case Bcast::ScalarL: return (*b.data)[i];  // caller swapped
        case Bcast::RowR: return (*b.data)[i % b.shape[0]];
    }
    return 0;
}

}  // namespace

Tensor make_op(Tape* tape, Shape shape, std::vector<double> values, std::vector<int> parents,
               std::function<void(Tape&, const std::vector<double>&)> fn) {
    return record(tape, std::move(shape), std::move(values), std::move(parents), std::move(fn));
}

// ---- matmul --------------------------------------------------------------

namespace {

Tensor matmul_impl(const Tensor& a, const Tensor& b, bool trans_b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul: operands must be 2-D, got " + shape_str(a.shape) + " and " +
                         shape_str(b.shape));
    int m = a.shape[0], k = a.shape[1];
    int bk = trans_b ? b.shape[1] : b.shape[0];
    int n = trans_b ? b.shape[0] : b.shape[1];
    if (k != bk)
        throw ShapeError("matmul: inner dims disagree, " + shape_str(a.shape) + " x " +
                         shape_str(b.shape) + (trans_b ? "^T" : ""));

    std::vector<double> out(static_cast<size_t>(m) * n);
    {
        CMap A(a.data->data(), m, k);
        CMap B(b.data->data(), b.shape[0], b.shape[1]);
        MMap C(out.data(), m, n);
        if (trans_b)
            C.noalias() = A * B.transpose();
        else
            C.noalias() = A * B;
    }
    Tape* tape = common_tape({&a, &b});
    auto ad = a.data, bd = b.data;
    int an = a.node, bn = b.node;
    int brows = b.shape[0], bcols = b.shape[1];
    return record(tape, {m, n}, std::move(out), parents_of({&a, &b}),
                  [=](Tape& tp, const std::vector<double>& g) {
                      CMap G(g.data(), m, n);
                      CMap A(ad->data(), m, k);
                      CMap B(bd->data(), brows, bcols);
                      if (an >= 0) {
                          MMap GA(tp.grad(an).data(), m, k);
                          if (trans_b)
                              GA.noalias() += G * B;
                          else
                              GA.noalias() += G * B.transpose();
                      }
                      if (bn >= 0) {
                          MMap GB(tp.grad(bn).data(), brows, bcols);
                          if (trans_b)
                              GB.noalias() += G.transpose() * A;
                          else
                              GB.noalias() += A.transpose() * G;
                      }
                  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) { return matmul_impl(a, b, false); }
Tensor matmul_nt(const Tensor& a, const Tensor& b) { return matmul_impl(a, b, true); }

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose: need 2-D, got " + shape_str(a.shape));
    int m = a.shape[0], n = a.shape[1];
    std::vector<double> out(a.size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = (*a.data)[static_cast<size_t>(i) * n + j];
    int an = a.node;
    return record(a.tape, {n, m}, std::move(out), parents_of({&a}),
                  [=](Tape& tp, const std::vector<double>& g) {
                      auto& ga = tp.grad(an);
                      for (int i = 0; i < m; ++i)
                          for (int j = 0; j < n; ++j)
                              ga[static_cast<size_t>(i) * n + j] += g[static_cast<size_t>(j) * m + i];
                  });
}

// ---- binary elementwise --------------------------------------------------

namespace {

Tensor binary_op(const Tensor& a0, const Tensor& b0, const char* name,
                 double (*fwd)(double, double), int which /*0=add,1=sub,2=mul,3=div*/) {
    // Normalize ScalarL to ScalarR by swapping where the op allows it.
    const Tensor* pa = &a0;
    const Tensor* pb = &b0;
    bool swapped = false;
    Bcast k = classify(a0, b0, name);
    if (k == Bcast::ScalarL && (which == 0 || which == 2)) {
        std::swap(pa, pb);
        swapped = true;
        k = Bcast::ScalarR;
    }
    const Tensor& a = *pa;
    const Tensor& b = *pb;
    if (k == Bcast::ScalarL) {
        // sub/div with scalar on the left: materialize the broadcast.
        Tensor ab = Tensor::full(b.shape, a.values()[0]);
        ab.tape = a.tape;
        if (a.tracked()) {
            // route gradient back through a sum
            int an = a.node;
            int64_t n = b.size();
            ab = record(a.tape, b.shape, std::vector<double>(n, a.values()[0]), {an},
                        [an](Tape& tp, const std::vector<double>& g) {
                            double s = 0;
                            for (double v : g) s += v;
                            tp.grad(an)[0] += s;
                        });
        }
        return binary_op(ab, b, name, fwd, which);
    }

    int64_t n = a.size();
    std::vector<double> out(n);
    for (int64_t i = 0; i < n; ++i) {
        double bv = bval(k, a, b, i);
        out[i] = fwd((*a.data)[i], bv);
    }
    Tape* tape = common_tape({&a, &b});
    auto ad = a.data, bd = b.data;
    int an = a.node, bn = b.node;
    Tensor ac = a;  // cheap copies for shape info in closure
    Tensor bc = b;
    auto fn = [=](Tape& tp, const std::vector<double>& g) {
        if (an >= 0) {
            auto& ga = tp.grad(an);
            switch (which) {
                case 0:
                case 1: accum(ga, g); break;
                case 2:
                    for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * bval(k, ac, bc, i);
                    break;
                case 3:
                    for (int64_t i = 0; i < n; ++i) ga[i] += g[i] / bval(k, ac, bc, i);
                    break;
            }
        }
        if (bn >= 0) {
            auto& gb = tp.grad(bn);
            switch (which) {
                case 0: reduce_onto_b(k, ac, g, gb, nullptr); break;
                case 1: {
                    std::vector<double> negg(g.size());
                    for (size_t i = 0; i < g.size(); ++i) negg[i] = -g[i];
                    reduce_onto_b(k, ac, negg, gb, nullptr);
                    break;
                }
                case 2: reduce_onto_b(k, ac, g, gb, ad.get()); break;
                case 3: {
                    std::vector<double> w(g.size());
                    for (int64_t i = 0; i < n; ++i) {
                        double bv = bval(k, ac, bc, i);
                        w[i] = -(*ad)[i] / (bv * bv);
                    }
                    reduce_onto_b(k, ac, g, gb, &w);
                    break;
                }
            }
        }
    };
    Tensor out_t = record(tape, a.shape, std::move(out), parents_of({&a, &b}), std::move(fn));
    (void)swapped;
    (void)bd;
    return out_t;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, "add", [](double x, double y) { return x + y; }, 0);
}
Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, "sub", [](double x, double y) { return x - y; }, 1);
}
Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, "mul", [](double x, double y) { return x * y; }, 2);
}
Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, "div", [](double x, double y) { return x / y; }, 3);
}

// ---- unary ---------------------------------------------------------------

namespace {

Tensor unary_op(const Tensor& a, std::vector<double> out, std::function<double(double, double, double)> dfn) {
    // dfn(x, y, g) -> contribution to dx
    int64_t n = a.size();
    auto ad = a.data;
    auto yd = std::make_shared<std::vector<double>>(out);
    int an = a.node;
    return record(a.tape, a.shape, std::move(out), parents_of({&a}),
                  [=](Tape& tp, const std::vector<double>& g) {
                      auto& ga = tp.grad(an);
                      for (int64_t i = 0; i < n; ++i) ga[i] += dfn((*ad)[i], (*yd)[i], g[i]);
                  });
}

}  // namespace

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double c) {
    int64_t n = a.size();
    std::vector<double> out(n);
    for (int64_t i = 0; i < n; ++i) out[i] = (*a.data)[i] * c;
    return unary_op(a, std::move(out), [c](double, double, double g) { return g * c; });
}

Tensor add_const(const Tensor& a, double c) {
    int64_t n = a.size();
    std::vector<double> out(n);
    for (int64_t i = 0; i < n; ++i) out[i] = (*a.data)[i] + c;
    return unary_op(a, std::move(out), [](double, double, double g) { return g; });
}

Tensor relu(const Tensor& a) {
    int64_t n = a.size();
    std::vector<double> out(n);
    for (int64_t i = 0; i < n; ++i) out[i] = (*a.data)[i] > 0 ? (*a.data)[i] : 0.0;
    // subgradient at 0 is 0
    return unary_op(a, std::move(out), [](double x, double, double g) { return x > 0 ? g : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
    int64_t n = a.size();
    std::vector<double> out(n);
    for (int64_t i = 0; i < n; ++i) {
        double x = (*a.data)[i];
        out[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    return unary_op(a, std::move(out), [](double, double y, double g) { return g * y * (1.0 - y); });
}

Tensor exp(const Tensor& a) {
    int64_t n = a.size();
    std::vector<double> out(n);
    for (int64_t i = 0; i < n; ++i) {
        out[i] = std::exp((*a.data)[i]);
        if (!std::isfinite(out[i]))
            throw NumericError("exp: overflow at element " + std::to_string(i));
    }
    return unary_op(a, std::move(out), [](double, double y, double g) { return g * y; });
}

Tensor log(const Tensor& a) {
    int64_t n = a.size();
    std::vector<double> out(n);
    for (int64_t i = 0; i < n; ++i) {
        double x = (*a.data)[i];
        if (x <= 0) throw NumericError("log: non-positive input at element " + std::to_string(i));
        out[i] = std::log(x);
    }
    return unary_op(a, std::move(out), [](double x, double, double g) { return g / x; });
}

Tensor sqrt(const Tensor& a) {
    int64_t n = a.size();
    std::vector<double> out(n);
    for (int64_t i = 0; i < n; ++i) {
        double x = (*a.data)[i];
        if (x < 0) throw NumericError("sqrt: negative input at element " + std::to_string(i));
        out[i] = std::sqrt(x);
    }
    // subgradient 0 at x == 0
    return unary_op(a, std::move(out),
                    [](double, double y, double g) { return y > 0 ? g * 0.5 / y : 0.0; });
}

Tensor abs(const Tensor& a) {
    int64_t n = a.size();
    std::vector<double> out(n);
    for (int64_t i = 0; i < n; ++i) out[i] = std::fabs((*a.data)[i]);
    return unary_op(a, std::move(out),
                    [](double x, double, double g) { return x > 0 ? g : (x < 0 ? -g : 0.0); });
}

Tensor square(const Tensor& a) {
    int64_t n = a.size();
    std::vector<double> out(n);
    for (int64_t i = 0; i < n; ++i) out[i] = (*a.data)[i] * (*a.data)[i];
    return unary_op(a, std::move(out), [](double x, double, double g) { return 2.0 * x * g; });
}

// ---- reductions ----------------------------------------------------------

namespace {

void check_axis(const Tensor& a, int axis, const char* op) {
    if (axis == -1) return;
    if (a.rank() != 2 || (axis != 0 && axis != 1))
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
                         shape_str(a.shape));
}

}  // namespace

Tensor reduce_sum(const Tensor& a, int axis) {
    check_axis(a, axis, "sum");
    if (a.size() == 0) throw ShapeError("sum: empty input");
    int an = a.node;
    if (axis == -1) {
        double s = 0;
        for (double v : *a.data) s += v;
        int64_t n = a.size();
        return record(a.tape, {1}, {s}, parents_of({&a}),
                      [=](Tape& tp, const std::vector<double>& g) {
                          auto& ga = tp.grad(an);
                          for (int64_t i = 0; i < n; ++i) ga[i] += g[0];
                      });
    }
    int m = a.shape[0], n = a.shape[1];
    if (axis == 0) {
        std::vector<double> out(n, 0.0);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) out[j] += (*a.data)[static_cast<size_t>(i) * n + j];
        return record(a.tape, {n}, std::move(out), parents_of({&a}),
                      [=](Tape& tp, const std::vector<double>& g) {
                          auto& ga = tp.grad(an);
                          for (int i = 0; i < m; ++i)
                              for (int j = 0; j < n; ++j) ga[static_cast<size_t>(i) * n + j] += g[j];
                      });
    }
    std::vector<double> out(m, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[i] += (*a.data)[static_cast<size_t>(i) * n + j];
    return record(a.tape, {m}, std::move(out), parents_of({&a}),
                  [=](Tape& tp, const std::vector<double>& g) {
                      auto& ga = tp.grad(an);
                      for (int i = 0; i < m; ++i)
                          for (int j = 0; j < n; ++j) ga[static_cast<size_t>(i) * n + j] += g[i];
                  });
}

Tensor reduce_mean(const Tensor& a, int axis) {
    check_axis(a, axis, "mean");
    if (a.size() == 0) throw ShapeError("mean: empty input");
    double denom = axis == -1 ? static_cast<double>(a.size())
                              : static_cast<double>(axis == 0 ? a.shape[0] : a.shape[1]);
    return scale(reduce_sum(a, axis), 1.0 / denom);
}

Tensor reduce_max(const Tensor& a, int axis) {
    check_axis(a, axis, "max");
    if (a.size() == 0) throw ShapeError("max: empty input");
    int an = a.node;
    auto argmax_run = [&](int64_t base, int64_t stride, int64_t count, int64_t& arg) {
        double best = (*a.data)[base];
        arg = base;
        for (int64_t t = 1; t < count; ++t) {
            double v = (*a.data)[base + t * stride];
            if (v > best) {  // ties keep the first argmax
                best = v;
                arg = base + t * stride;
            }
        }
        return best;
    };
    std::vector<int64_t> args;
    std::vector<double> out;
    Shape oshape;
    if (axis == -1) {
        int64_t arg;
        out = {argmax_run(0, 1, a.size(), arg)};
        args = {arg};
        oshape = {1};
    } else {
        int m = a.shape[0], n = a.shape[1];
        if (axis == 0) {
            oshape = {n};
            out.resize(n);
            args.resize(n);
            for (int j = 0; j < n; ++j) out[j] = argmax_run(j, n, m, args[j]);
        } else {
            oshape = {m};
            out.resize(m);
            args.resize(m);
            for (int i = 0; i < m; ++i) out[i] = argmax_run(static_cast<int64_t>(i) * n, 1, n, args[i]);
        }
    }
    return record(a.tape, std::move(oshape), std::move(out), parents_of({&a}),
                  [an, args = std::move(args)](Tape& tp, const std::vector<double>& g) {
                      auto& ga = tp.grad(an);
                      for (size_t i = 0; i < args.size(); ++i) ga[args[i]] += g[i];
                  });
}

// ---- structural ----------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    for (const Tensor& p : parts)
        if (p.rank() != 2) throw ShapeError("concat: all inputs must be 2-D");
    if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");

    int other = axis == 0 ? parts[0].shape[1] : parts[0].shape[0];
    int total = 0;
    for (const Tensor& p : parts) {
        int po = axis == 0 ? p.shape[1] : p.shape[0];
        if (po != other)
            throw ShapeError("concat: non-target axis disagrees, " + shape_str(parts[0].shape) +
                             " vs " + shape_str(p.shape));
        total += p.shape[axis];
    }
    Shape os = axis == 0 ? Shape{total, other} : Shape{other, total};
    std::vector<double> out(shape_size(os));
    Tape* tape = nullptr;
    std::vector<int> par;
    for (const Tensor& p : parts) {
        if (p.tracked()) {
            if (tape && tape != p.tape) throw ShapeError("concat: mixed tapes");
            tape = p.tape;
            par.push_back(p.node);
        }
    }
    struct Piece {
        int node;
        int off, extent;
    };
    std::vector<Piece> pieces;
    int off = 0;
    int on = os[1];
    for (const Tensor& p : parts) {
        int m = p.shape[0], n = p.shape[1];
        if (axis == 0) {
            std::copy(p.data->begin(), p.data->end(), out.begin() + static_cast<int64_t>(off) * n);
        } else {
            for (int i = 0; i < m; ++i)
                std::copy(p.data->begin() + static_cast<int64_t>(i) * n,
                          p.data->begin() + static_cast<int64_t>(i + 1) * n,
                          out.begin() + static_cast<int64_t>(i) * on + off);
        }
        pieces.push_back({p.node, off, p.shape[axis]});
        off += p.shape[axis];
    }
    int om = os[0];
    return record(tape, os, std::move(out), std::move(par),
                  [=, pieces = std::move(pieces)](Tape& tp, const std::vector<double>& g) {
                      for (const Piece& pc : pieces) {
                          if (pc.node < 0) continue;
                          auto& gp = tp.grad(pc.node);
                          if (axis == 0) {
                              for (int64_t i = 0; i < static_cast<int64_t>(pc.extent) * on; ++i)
                                  gp[i] += g[static_cast<int64_t>(pc.off) * on + i];
                          } else {
                              for (int i = 0; i < om; ++i)
                                  for (int j = 0; j < pc.extent; ++j)
                                      gp[static_cast<int64_t>(i) * pc.extent + j] +=
                                          g[static_cast<int64_t>(i) * on + pc.off + j];
                          }
                      }
                  });
}

Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw ShapeError("softmax: need 2-D, got " + shape_str(logits.shape));
    int m = logits.shape[0], n = logits.shape[1];
    std::vector<double> out(logits.size());
    for (int i = 0; i < m; ++i) {
        const double* row = logits.data->data() + static_cast<int64_t>(i) * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double s = 0;
        for (int j = 0; j < n; ++j) {
            out[static_cast<int64_t>(i) * n + j] = std::exp(row[j] - mx);
            s += out[static_cast<int64_t>(i) * n + j];
        }
        for (int j = 0; j < n; ++j) out[static_cast<int64_t>(i) * n + j] /= s;
    }
    auto yd = std::make_shared<std::vector<double>>(out);
    int an = logits.node;
    return record(logits.tape, logits.shape, std::move(out), parents_of({&logits}),
                  [=](Tape& tp, const std::vector<double>& g) {
                      auto& ga = tp.grad(an);
                      for (int i = 0; i < m; ++i) {
                          const double* y = yd->data() + static_cast<int64_t>(i) * n;
                          const double* gr = g.data() + static_cast<int64_t>(i) * n;
                          double dot = 0;
                          for (int j = 0; j < n; ++j) dot += gr[j] * y[j];
                          for (int j = 0; j < n; ++j)
                              ga[static_cast<int64_t>(i) * n + j] += y[j] * (gr[j] - dot);
                      }
                  });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be 2-D");
    int m = logits.shape[0], n = logits.shape[1];
    if (static_cast<int>(labels.size()) != m)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(m) + " rows");
    int valid = 0;
    for (int i = 0; i < m; ++i) {
        if (labels[i] == -1) continue;
        if (labels[i] < 0 || labels[i] >= n)
            throw LabelError("cross_entropy: label " + std::to_string(labels[i]) +
                             " out of range at row " + std::to_string(i));
        ++valid;
    }
    if (valid == 0) return Tensor::zeros({1});

    // stabilized by per-row max subtraction
    double loss = 0;
    auto probs = std::make_shared<std::vector<double>>(logits.size());
    for (int i = 0; i < m; ++i) {
        if (labels[i] == -1) continue;
        const double* row = logits.data->data() + static_cast<int64_t>(i) * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double s = 0;
        for (int j = 0; j < n; ++j) s += std::exp(row[j] - mx);
        loss += std::log(s) - (row[labels[i]] - mx);
        for (int j = 0; j < n; ++j)
            (*probs)[static_cast<int64_t>(i) * n + j] = std::exp(row[j] - mx) / s;
    }
    loss /= valid;
    int an = logits.node;
    return record(logits.tape, {1}, {loss}, parents_of({&logits}),
                  [=](Tape& tp, const std::vector<double>& g) {
                      auto& ga = tp.grad(an);
                      for (int i = 0; i < m; ++i) {
                          if (labels[i] == -1) continue;
                          for (int j = 0; j < n; ++j) {
                              double p = (*probs)[static_cast<int64_t>(i) * n + j];
                              double onehot = j == labels[i] ? 1.0 : 0.0;
                              ga[static_cast<int64_t>(i) * n + j] += g[0] * (p - onehot) / valid;
                          }
                      }
                  });
}

Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets) {
    int64_t n = logits.size();
    if (static_cast<int64_t>(targets.size()) != n)
        throw ShapeError("bce: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(n) + " logits");
    std::vector<double> out(n);
    for (int64_t i = 0; i < n; ++i) {
        double l = (*logits.data)[i], t = targets[i];
        out[i] = std::max(l, 0.0) - l * t + std::log1p(std::exp(-std::fabs(l)));
    }
    auto ld = logits.data;
    int an = logits.node;
    return record(logits.tape, logits.shape, std::move(out), parents_of({&logits}),
                  [=, targets = targets](Tape& tp, const std::vector<double>& g) {
                      auto& ga = tp.grad(an);
                      for (int64_t i = 0; i < n; ++i) {
                          double l = (*ld)[i];
                          double s = l >= 0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l));
                          ga[i] += g[i] * (s - targets[i]);
                      }
                  });
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
    if (a.rank() != 2) throw ShapeError("gather_rows: need 2-D, got " + shape_str(a.shape));
    int m = a.shape[0], n = a.shape[1];
    std::vector<double> out(static_cast<size_t>(idx.size()) * n);
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= m)
            throw ShapeError("gather_rows: index " + std::to_string(idx[i]) + " out of range");
        std::copy(a.data->begin() + static_cast<int64_t>(idx[i]) * n,
                  a.data->begin() + static_cast<int64_t>(idx[i] + 1) * n,
                  out.begin() + static_cast<int64_t>(i) * n);
    }
    int an = a.node;
    return record(a.tape, {static_cast<int>(idx.size()), n}, std::move(out), parents_of({&a}),
                  [an, n, idx = idx](Tape& tp, const std::vector<double>& g) {
                      auto& ga = tp.grad(an);
                      for (size_t i = 0; i < idx.size(); ++i)
                          for (int j = 0; j < n; ++j)
                              ga[static_cast<int64_t>(idx[i]) * n + j] += g[static_cast<int64_t>(i) * n + j];
                  });
}

Tensor segment_mean(const Tensor& a, const std::vector<int>& seg, int num_segments) {
    if (a.rank() != 2) throw ShapeError("segment_mean: need 2-D");
    int m = a.shape[0], n = a.shape[1];
    if (static_cast<int>(seg.size()) != m) throw ShapeError("segment_mean: seg length mismatch");
    std::vector<double> out(static_cast<size_t>(num_segments) * n, 0.0);
    std::vector<int> count(num_segments, 0);
    for (int i = 0; i < m; ++i) {
        int s = seg[i];
        if (s < 0 || s >= num_segments)
            throw ShapeError("segment_mean: segment id " + std::to_string(s) + " out of range");
        ++count[s];
        for (int j = 0; j < n; ++j) out[static_cast<int64_t>(s) * n + j] += (*a.data)[static_cast<int64_t>(i) * n + j];
    }
    for (int s = 0; s < num_segments; ++s) {
        if (count[s] == 0)
            throw ShapeError("segment_mean: empty segment " + std::to_string(s));
        for (int j = 0; j < n; ++j) out[static_cast<int64_t>(s) * n + j] /= count[s];
    }
    int an = a.node;
    return record(a.tape, {num_segments, n}, std::move(out), parents_of({&a}),
                  [an, n, seg = seg, count = std::move(count)](Tape& tp, const std::vector<double>& g) {
                      auto& ga = tp.grad(an);
                      for (size_t i = 0; i < seg.size(); ++i)
                          for (int j = 0; j < n; ++j)
                              ga[static_cast<int64_t>(i) * n + j] +=
                                  g[static_cast<int64_t>(seg[i]) * n + j] / count[seg[i]];
                  });
}

Tensor reshape(const Tensor& a, Shape s) {
    if (shape_size(s) != a.size())
        throw ShapeError("reshape: " + shape_str(a.shape) + " to " + shape_str(s));
    int an = a.node;
    std::vector<double> out = *a.data;
    return record(a.tape, std::move(s), std::move(out), parents_of({&a}),
                  [an](Tape& tp, const std::vector<double>& g) { accum(tp.grad(an), g); });
}

Tensor slice_flat(const Tensor& a, int64_t start, int64_t len) {
    if (start < 0 || len < 0 || start + len > a.size())
        throw ShapeError("slice_flat: [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of " + std::to_string(a.size()));
    std::vector<double> out(a.data->begin() + start, a.data->begin() + start + len);
    int an = a.node;
    return record(a.tape, {static_cast<int>(len)}, std::move(out), parents_of({&a}),
                  [=](Tape& tp, const std::vector<double>& g) {
                      auto& ga = tp.grad(an);
                      for (int64_t i = 0; i < len; ++i) ga[start + i] += g[i];
                  });
}

Tensor slice_cols(const Tensor& a, int start, int len) {
    if (a.rank() != 2) throw ShapeError("slice_cols: need 2-D");
    int m = a.shape[0], n = a.shape[1];
    if (start < 0 || len < 0 || start + len > n) throw ShapeError("slice_cols: out of range");
    std::vector<double> out(static_cast<size_t>(m) * len);
    for (int i = 0; i < m; ++i)
        std::copy(a.data->begin() + static_cast<int64_t>(i) * n + start,
                  a.data->begin() + static_cast<int64_t>(i) * n + start + len,
                  out.begin() + static_cast<int64_t>(i) * len);
    int an = a.node;
    return record(a.tape, {m, len}, std::move(out), parents_of({&a}),
                  [=](Tape& tp, const std::vector<double>& g) {
                      auto& ga = tp.grad(an);
                      for (int i = 0; i < m; ++i)
                          for (int j = 0; j < len; ++j)
                              ga[static_cast<int64_t>(i) * n + start + j] += g[static_cast<int64_t>(i) * len + j];
                  });
}

// ---- optimizer -----------------------------------------------------------

void adam_step(Parameter& p, const std::vector<double>& grad, const AdamConfig& cfg) {
    int64_t n = p.value.size();
    if (static_cast<int64_t>(grad.size()) != n)
        throw ShapeError("adam: gradient size mismatch for " + p.name);
    if (p.m.empty()) p.m.assign(n, 0.0);
    if (p.v.empty()) p.v.assign(n, 0.0);
    for (double g : grad)
        if (!std::isfinite(g)) throw TrainError("non-finite gradient for parameter " + p.name);
    p.step += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.step));
    auto& th = *p.value.data;
    for (int64_t i = 0; i < n; ++i) {
        p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * grad[i];
        p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        double mh = p.m[i] / bc1;
        double vh = p.v[i] / bc2;
        th[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
}

Tensor glorot(Shape s, int fan_in, int fan_out, std::mt19937_64& rng) {
    double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t = Tensor::zeros(std::move(s));
    for (int64_t i = 0; i < t.size(); ++i) (*t.data)[i] = dist(rng);
    return t;
}

// ---- Session -------------------------------------------------------------

Tensor Session::use(Parameter& p) {
    if (!grad_enabled_) return p.value;
    for (auto& [bp, t] : bound_)
        if (bp == &p) return t;
    Tensor t = tape_.leaf(p.value);
    bound_.emplace_back(&p, t);
    return t;
}

Tensor Session::watch(const Tensor& t) {
    if (!grad_enabled_) return t;
    return tape_.leaf(t);
}

void Session::backward(const Tensor& loss) { tape_.backward(loss); }

std::vector<double> Session::grad_of(Parameter& p) {
    for (auto& [bp, t] : bound_)
        if (bp == &p) return tape_.grad_of(t);
    return std::vector<double>(p.value.size(), 0.0);
}

void Session::apply_adam(const AdamConfig& cfg, double max_grad_norm) {
    if (max_grad_norm > 0.0) {
        double sq = 0.0;
        for (auto& [p, t] : bound_)
            for (double g : tape_.grad_of(t)) sq += g * g;
        double norm = std::sqrt(sq);
        if (norm > max_grad_norm) {
            double s = max_grad_norm / norm;
            for (auto& [p, t] : bound_)
                for (double& g : tape_.grad(t.node)) g *= s;
        }
    }
    for (auto& [p, t] : bound_) adam_step(*p, tape_.grad_of(t), cfg);
}

}  // namespace dyco::ad
