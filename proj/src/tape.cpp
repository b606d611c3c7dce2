#include "hjbctl/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace hjbctl::ad {

Var Tape::variable(Tensor value) {
  if (!value.all_finite()) throw NumericError("Tape::variable: non-finite value");
  Node n;
  n.op = Op::kLeaf;
  n.requires_grad = true;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("Tape::constant: non-finite value");
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

void Tape::check_owner(Var v) const {
  if (!v.valid() || &v.tape() != this || v.id() >= nodes_.size()) {
    throw Error("Tape: variable belongs to a different tape");
  }
}

Var Tape::record(Op op, Tensor value, std::initializer_list<Var> parents,
                 Backward backward) {
  return record(op, std::move(value),
                std::span<const Var>(parents.begin(), parents.size()),
                std::move(backward));
}

Var Tape::record(Op op, Tensor value, std::span<const Var> parents,
                 Backward backward) {
  if (!value.all_finite()) {
    throw NumericError("Tape: op " + std::to_string(static_cast<int>(op)) +
                       " produced a non-finite value");
  }
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.parents.reserve(parents.size());
  for (Var p : parents) {
    check_owner(p);
    n.parents.push_back(p.id());
    n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Tensor* Tape::accumulator(std::uint32_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (n.grad.size() != n.value.size()) {
    n.grad = n.value;
    n.grad.fill(0.0);
  }
  return &n.grad;
}

void Tape::backward(Var root) {
  check_owner(root);
  if (backward_done_) {
    throw Error("Tape::backward: already run; reset() the tape first");
  }
  if (nodes_[root.id()].value.size() != 1) {
    throw DimensionError("Tape::backward: root must be a scalar");
  }
  backward_done_ = true;
  Tensor* g = accumulator(root.id());
  if (g == nullptr) return;
  (*g)[0] = 1.0;
  for (std::int64_t i = root.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
    n.backward(*this, static_cast<std::uint32_t>(i));
  }
}

Tensor Tape::grad(Var v) const {
  check_owner(v);
  const Node& n = nodes_[v.id()];
  if (n.grad.size() == n.value.size()) return n.grad;
  Tensor z = n.value;
  z.fill(0.0);
  return z;
}

void Tape::reset() {
  nodes_.clear();
  backward_done_ = false;
}

namespace {

void require_same_size(Var a, Var b, const char* op) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(op) + ": size mismatch " +
                         std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  }
}

template <class F, class D>
Var unary(Var a, F f, D df) {
  const Tensor& x = a.value();
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(x[i]);
  return a.tape().record(Op::kUnary, std::move(y), {a},
                         [df](Tape& t, std::uint32_t self) {
                           std::uint32_t p = t.parent(self, 0);
                           Tensor* gx = t.accumulator(p);
                           if (!gx) return;
                           const Tensor& x = t.value(p);
                           const Tensor& y = t.value(self);
                           const Tensor& gy = t.upstream(self);
                           for (std::size_t i = 0; i < x.size(); ++i) {
                             (*gx)[i] += gy[i] * df(x[i], y[i]);
                           }
                         });
}

}  // namespace

double softplus_sym(double x) {
  double ax = std::abs(x);
  return ax + std::log1p(std::exp(-2.0 * ax));
}

Var add(Var a, Var b) {
  require_same_size(a, b, "add");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return a.tape().record(Op::kAdd, std::move(y), {a, b},
                         [](Tape& t, std::uint32_t self) {
                           const Tensor& g = t.upstream(self);
                           for (int k = 0; k < 2; ++k) {
                             if (Tensor* gp = t.accumulator(t.parent(self, k))) {
                               for (std::size_t i = 0; i < g.size(); ++i) (*gp)[i] += g[i];
                             }
                           }
                         });
}

Var sub(Var a, Var b) {
  require_same_size(a, b, "sub");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return a.tape().record(Op::kSub, std::move(y), {a, b},
                         [](Tape& t, std::uint32_t self) {
                           const Tensor& g = t.upstream(self);
                           if (Tensor* ga = t.accumulator(t.parent(self, 0))) {
                             for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                           }
                           if (Tensor* gb = t.accumulator(t.parent(self, 1))) {
                             for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
                           }
                         });
}

Var mul(Var a, Var b) {
  require_same_size(a, b, "mul");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return a.tape().record(Op::kMul, std::move(y), {a, b},
                         [](Tape& t, std::uint32_t self) {
                           const Tensor& g = t.upstream(self);
                           std::uint32_t pa = t.parent(self, 0), pb = t.parent(self, 1);
                           const Tensor& av = t.value(pa);
                           const Tensor& bv = t.value(pb);
                           if (Tensor* ga = t.accumulator(pa)) {
                             for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
                           }
                           if (Tensor* gb = t.accumulator(pb)) {
                             for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
                           }
                         });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double s) {
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= s;
  return a.tape().record(Op::kScale, std::move(y), {a},
                         [s](Tape& t, std::uint32_t self) {
                           const Tensor& g = t.upstream(self);
                           if (Tensor* ga = t.accumulator(t.parent(self, 0))) {
                             for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
                           }
                         });
}

Var affine_const(Var a, const Tensor& s, const Tensor& shift) {
  if ((!s.empty() && s.size() != a.size()) ||
      (!shift.empty() && shift.size() != a.size())) {
    throw DimensionError("affine_const: size mismatch");
  }
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!s.empty()) y[i] *= s[i];
    if (!shift.empty()) y[i] += shift[i];
  }
  return a.tape().record(Op::kAffineConst, std::move(y), {a},
                         [s](Tape& t, std::uint32_t self) {
                           const Tensor& g = t.upstream(self);
                           if (Tensor* ga = t.accumulator(t.parent(self, 0))) {
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               (*ga)[i] += s.empty() ? g[i] : s[i] * g[i];
                             }
                           }
                         });
}

Var add_const(Var a, const Tensor& c) { return affine_const(a, Tensor(), c); }
Var mul_const(Var a, const Tensor& c) { return affine_const(a, c, Tensor()); }

Var scale_by(Var v, Var s) {
  if (s.size() != 1) throw DimensionError("scale_by: scale must be scalar");
  double sv = s.item();
  Tensor y = v.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= sv;
  return v.tape().record(Op::kScaleBy, std::move(y), {v, s},
                         [](Tape& t, std::uint32_t self) {
                           const Tensor& g = t.upstream(self);
                           std::uint32_t pv = t.parent(self, 0), ps = t.parent(self, 1);
                           const Tensor& vv = t.value(pv);
                           double sv = t.value(ps)[0];
                           if (Tensor* gv = t.accumulator(pv)) {
                             for (std::size_t i = 0; i < g.size(); ++i) (*gv)[i] += sv * g[i];
                           }
                           if (Tensor* gs = t.accumulator(ps)) {
                             double acc = 0.0;
                             for (std::size_t i = 0; i < g.size(); ++i) acc += vv[i] * g[i];
                             (*gs)[0] += acc;
                           }
                         });
}

Var minimum(Var a, Var b) {
  require_same_size(a, b, "minimum");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::min(y[i], bv[i]);
  return a.tape().record(Op::kMinimum, std::move(y), {a, b},
                         [](Tape& t, std::uint32_t self) {
                           const Tensor& g = t.upstream(self);
                           std::uint32_t pa = t.parent(self, 0), pb = t.parent(self, 1);
                           const Tensor& av = t.value(pa);
                           const Tensor& bv = t.value(pb);
                           Tensor* ga = t.accumulator(pa);
                           Tensor* gb = t.accumulator(pb);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             if (av[i] <= bv[i]) {
                               if (ga) (*ga)[i] += g[i];
                             } else if (gb) {
                               (*gb)[i] += g[i];
                             }
                           }
                         });
}

Var dot(Var a, Var b) {
  require_same_size(a, b, "dot");
  double s = hjbctl::dot(a.value().values(), b.value().values());
  return a.tape().record(Op::kDot, Tensor::scalar(s), {a, b},
                         [](Tape& t, std::uint32_t self) {
                           double g = t.upstream(self)[0];
                           std::uint32_t pa = t.parent(self, 0), pb = t.parent(self, 1);
                           const Tensor& av = t.value(pa);
                           const Tensor& bv = t.value(pb);
                           if (Tensor* ga = t.accumulator(pa)) {
                             for (std::size_t i = 0; i < av.size(); ++i) (*ga)[i] += g * bv[i];
                           }
                           if (Tensor* gb = t.accumulator(pb)) {
                             for (std::size_t i = 0; i < av.size(); ++i) (*gb)[i] += g * av[i];
                           }
                         });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape().record(Op::kSum, Tensor::scalar(s), {a},
                         [](Tape& t, std::uint32_t self) {
                           double g = t.upstream(self)[0];
                           if (Tensor* ga = t.accumulator(t.parent(self, 0))) {
                             for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g;
                           }
                         });
}

Var mean(Var a) {
  if (a.size() == 0) throw DimensionError("mean: empty operand");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Var log(Var a) {
  for (double v : a.value().values()) {
    if (!(v > 0.0)) throw NumericError("log: non-positive argument");
  }
  return unary(a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Var abs(Var a) {
  return unary(a, [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var clamp(Var a, double lo, double hi) {
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var softplus_sym(Var a) {
  return unary(a, [](double x) { return softplus_sym(x); },
               [](double x, double) { return std::tanh(x); });
}

Var slice(Var a, std::size_t offset, std::size_t length) {
  if (offset + length > a.size()) throw DimensionError("slice: out of range");
  const Tensor& x = a.value();
  Tensor y(length);
  std::copy_n(x.data() + offset, length, y.data());
  return a.tape().record(Op::kSlice, std::move(y), {a},
                         [offset](Tape& t, std::uint32_t self) {
                           const Tensor& g = t.upstream(self);
                           if (Tensor* ga = t.accumulator(t.parent(self, 0))) {
                             for (std::size_t i = 0; i < g.size(); ++i) (*ga)[offset + i] += g[i];
                           }
                         });
}

Var element(Var a, std::size_t i) { return slice(a, i, 1); }

Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat: no operands");
  std::size_t n = 0;
  for (Var p : parts) n += p.size();
  Tensor y(n);
  std::size_t off = 0;
  for (Var p : parts) {
    std::copy_n(p.value().data(), p.size(), y.data() + off);
    off += p.size();
  }
  return parts[0].tape().record(Op::kConcat, std::move(y), parts,
                                [count = parts.size()](Tape& t, std::uint32_t self) {
                                  const Tensor& g = t.upstream(self);
                                  std::size_t off = 0;
                                  for (std::size_t k = 0; k < count; ++k) {
                                    std::uint32_t p = t.parent(self, k);
                                    std::size_t len = t.value(p).size();
                                    if (Tensor* gp = t.accumulator(p)) {
                                      for (std::size_t i = 0; i < len; ++i) (*gp)[i] += g[off + i];
                                    }
                                    off += len;
                                  }
                                });
}

Var matvec(Var w, Var x) {
  const Tensor& W = w.value();
  if (W.rank() != 2 || W.cols() != x.size()) {
    throw DimensionError("matvec: expected rank-2 weight with cols == len(x)");
  }
  const std::size_t rows = W.rows(), cols = W.cols();
  const double* xv = x.value().data();
  Tensor y(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* wr = W.data() + r * cols;
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += wr[c] * xv[c];
    y[r] = s;
  }
  return w.tape().record(Op::kMatVec, std::move(y), {w, x},
                         [rows, cols](Tape& t, std::uint32_t self) {
                           const Tensor& g = t.upstream(self);
                           std::uint32_t pw = t.parent(self, 0), px = t.parent(self, 1);
                           const Tensor& W = t.value(pw);
                           const Tensor& xv = t.value(px);
                           if (Tensor* gw = t.accumulator(pw)) {
                             for (std::size_t r = 0; r < rows; ++r) {
                               double gr = g[r];
                               if (gr == 0.0) continue;
                               double* row = gw->data() + r * cols;
                               for (std::size_t c = 0; c < cols; ++c) row[c] += gr * xv[c];
                             }
                           }
                           if (Tensor* gx = t.accumulator(px)) {
                             for (std::size_t r = 0; r < rows; ++r) {
                               double gr = g[r];
                               const double* wr = W.data() + r * cols;
                               for (std::size_t c = 0; c < cols; ++c) (*gx)[c] += gr * wr[c];
                             }
                           }
                         });
}

Var matvec_t(Var w, Var x) {
  const Tensor& W = w.value();
  if (W.rank() != 2 || W.rows() != x.size()) {
    throw DimensionError("matvec_t: expected rank-2 weight with rows == len(x)");
  }
  const std::size_t rows = W.rows(), cols = W.cols();
  const double* xv = x.value().data();
  Tensor y(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* wr = W.data() + r * cols;
    double xr = xv[r];
    for (std::size_t c = 0; c < cols; ++c) y[c] += wr[c] * xr;
  }
  return w.tape().record(Op::kMatVecT, std::move(y), {w, x},
                         [rows, cols](Tape& t, std::uint32_t self) {
                           const Tensor& g = t.upstream(self);
                           std::uint32_t pw = t.parent(self, 0), px = t.parent(self, 1);
                           const Tensor& W = t.value(pw);
                           const Tensor& xv = t.value(px);
                           if (Tensor* gw = t.accumulator(pw)) {
                             for (std::size_t r = 0; r < rows; ++r) {
                               double xr = xv[r];
                               double* row = gw->data() + r * cols;
                               for (std::size_t c = 0; c < cols; ++c) row[c] += xr * g[c];
                             }
                           }
                           if (Tensor* gx = t.accumulator(px)) {
                             for (std::size_t r = 0; r < rows; ++r) {
                               const double* wr = W.data() + r * cols;
                               double s = 0.0;
                               for (std::size_t c = 0; c < cols; ++c) s += wr[c] * g[c];
                               (*gx)[r] += s;
                             }
                           }
                         });
}

Var affine(Var w, Var x, Var b) { return add(matvec(w, x), b); }

Var matvec(const SparseMatrix& a, Var x) {
  if (a.cols() != x.size()) throw DimensionError("matvec(sparse): A.cols != len(x)");
  Tensor y(a.rows());
  a.multiply(x.value().values(), y.values());
  return x.tape().record(Op::kSpMV, std::move(y), {x},
                         [&a](Tape& t, std::uint32_t self) {
                           if (Tensor* gx = t.accumulator(t.parent(self, 0))) {
                             std::vector<double> tmp(a.cols());
                             a.multiply_transpose(t.upstream(self).values(), tmp);
                             for (std::size_t i = 0; i < tmp.size(); ++i) (*gx)[i] += tmp[i];
                           }
                         });
}

Var matvec_t(const SparseMatrix& a, Var x) {
  if (a.rows() != x.size()) throw DimensionError("matvec_t(sparse): A.rows != len(x)");
  Tensor y(a.cols());
  a.multiply_transpose(x.value().values(), y.values());
  return x.tape().record(Op::kSpMV, std::move(y), {x},
                         [&a](Tape& t, std::uint32_t self) {
                           if (Tensor* gx = t.accumulator(t.parent(self, 0))) {
                             std::vector<double> tmp(a.rows());
                             a.multiply(t.upstream(self).values(), tmp);
                             for (std::size_t i = 0; i < tmp.size(); ++i) (*gx)[i] += tmp[i];
                           }
                         });
}

Var solve(const LinearSolver& f, Var b) {
  if (f.size() != b.size()) throw DimensionError("solve: size mismatch");
  Tensor x = Tensor::from(f.solve(b.value().values()));
  return b.tape().record(Op::kSolve, std::move(x), {b},
                         [&f](Tape& t, std::uint32_t self) {
                           if (Tensor* gb = t.accumulator(t.parent(self, 0))) {
                             std::vector<double> lam = f.solve_transpose(t.upstream(self).values());
                             for (std::size_t i = 0; i < lam.size(); ++i) (*gb)[i] += lam[i];
                           }
                         });
}

Var conv2d_3x3(Var weight, Var bias, Var x, std::size_t c_in, std::size_t h,
               std::size_t w) {
  const Tensor& W = weight.value();
  if (W.rank() != 2 || W.cols() != c_in * 9) {
    throw DimensionError("conv2d_3x3: weight must be (c_out, c_in*9)");
  }
  const std::size_t c_out = W.rows();
  if (bias.size() != c_out || x.size() != c_in * h * w) {
    throw DimensionError("conv2d_3x3: bias or input size mismatch");
  }
  const Tensor& X = x.value();
  const Tensor& B = bias.value();
  const std::size_t hw = h * w;
  Tensor y(c_out * hw);
  for (std::size_t co = 0; co < c_out; ++co) {
    double* out = y.data() + co * hw;
    std::fill(out, out + hw, B[co]);
    for (std::size_t ci = 0; ci < c_in; ++ci) {
      const double* in = X.data() + ci * hw;
      const double* k = W.data() + co * c_in * 9 + ci * 9;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          double kv = k[(dy + 1) * 3 + (dx + 1)];
          std::size_t r0 = dy < 0 ? 1 : 0, r1 = dy > 0 ? h - 1 : h;
          std::size_t c0 = dx < 0 ? 1 : 0, c1 = dx > 0 ? w - 1 : w;
          for (std::size_t r = r0; r < r1; ++r) {
            const double* src = in + (r + dy) * w + dx;
            double* dst = out + r * w;
            for (std::size_t c = c0; c < c1; ++c) dst[c] += kv * src[c];
          }
        }
      }
    }
  }
  return weight.tape().record(
      Op::kConv2d, std::move(y), {weight, bias, x},
      [c_in, c_out, h, w](Tape& t, std::uint32_t self) {
        const std::size_t hw = h * w;
        const Tensor& g = t.upstream(self);
        std::uint32_t pw = t.parent(self, 0), pb = t.parent(self, 1), px = t.parent(self, 2);
        const Tensor& W = t.value(pw);
        const Tensor& X = t.value(px);
        Tensor* gw = t.accumulator(pw);
        Tensor* gb = t.accumulator(pb);
        Tensor* gx = t.accumulator(px);
        for (std::size_t co = 0; co < c_out; ++co) {
          const double* go = g.data() + co * hw;
          if (gb) {
            double s = 0.0;
            for (std::size_t i = 0; i < hw; ++i) s += go[i];
            (*gb)[co] += s;
          }
          for (std::size_t ci = 0; ci < c_in; ++ci) {
            const double* in = X.data() + ci * hw;
            const double* k = W.data() + co * c_in * 9 + ci * 9;
            double* gk = gw ? gw->data() + co * c_in * 9 + ci * 9 : nullptr;
            double* gin = gx ? gx->data() + ci * hw : nullptr;
            for (int dy = -1; dy <= 1; ++dy) {
              for (int dx = -1; dx <= 1; ++dx) {
                int kk = (dy + 1) * 3 + (dx + 1);
                std::size_t r0 = dy < 0 ? 1 : 0, r1 = dy > 0 ? h - 1 : h;
                std::size_t c0 = dx < 0 ? 1 : 0, c1 = dx > 0 ? w - 1 : w;
                double acc = 0.0;
                double kv = k[kk];
                for (std::size_t r = r0; r < r1; ++r) {
                  const double* src = in + (r + dy) * w + dx;
                  const double* gr = go + r * w;
                  if (gin) {
                    double* gsrc = gin + (r + dy) * w + dx;
                    for (std::size_t c = c0; c < c1; ++c) {
                      acc += gr[c] * src[c];
                      gsrc[c] += kv * gr[c];
                    }
                  } else {
                    for (std::size_t c = c0; c < c1; ++c) acc += gr[c] * src[c];
                  }
                }
                if (gk) gk[kk] += acc;
              }
            }
          }
        }
      });
}

Var maxpool2x2(Var x, std::size_t c, std::size_t h, std::size_t w) {
  if (x.size() != c * h * w || h == 0 || w == 0) {
    throw DimensionError("maxpool2x2: input size mismatch");
  }
  // Ceil mode: a trailing odd row/column forms a clipped window.
  const std::size_t ho = (h + 1) / 2, wo = (w + 1) / 2;
  const Tensor& X = x.value();
  Tensor y(c * ho * wo);
  std::vector<std::uint32_t> arg(y.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t r = 0; r < ho; ++r) {
      for (std::size_t col = 0; col < wo; ++col) {
        std::size_t best = ch * h * w + (2 * r) * w + 2 * col;
        for (std::size_t dr = 0; dr < 2 && 2 * r + dr < h; ++dr) {
          for (std::size_t dc = 0; dc < 2 && 2 * col + dc < w; ++dc) {
            std::size_t idx = ch * h * w + (2 * r + dr) * w + 2 * col + dc;
            if (X[idx] > X[best]) best = idx;
          }
        }
        std::size_t o = ch * ho * wo + r * wo + col;
        y[o] = X[best];
        arg[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return x.tape().record(Op::kMaxPool, std::move(y), {x},
                         [arg = std::move(arg)](Tape& t, std::uint32_t self) {
                           const Tensor& g = t.upstream(self);
                           if (Tensor* gx = t.accumulator(t.parent(self, 0))) {
                             for (std::size_t i = 0; i < g.size(); ++i) (*gx)[arg[i]] += g[i];
                           }
                         });
}

}  // namespace hjbctl::ad
