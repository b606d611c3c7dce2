#ifndef HJBCTL_TAPE_HPP_
#define HJBCTL_TAPE_HPP_

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "hjbctl/sparse.hpp"
#include "hjbctl/tensor.hpp"

// Tape-based reverse-mode differentiation over Tensor-valued nodes.
//
// Every op records its primal value and a backward closure. Higher-order
// quantities (e.g. a loss that contains an input gradient of a network) are
// handled by writing the inner derivative out as ordinary primal ops, so only
// first-order reverse sweeps are ever executed.
//
// A Tape is single-writer. Independent tapes may be used from different
// threads. Constant operands captured by reference (SparseMatrix,
// LinearSolver) must outlive the tape.
namespace hjbctl::ad {

class Tape;

class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor& value() const;
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAffineConst,
  kDot,
  kSum,
  kUnary,
  kSlice,
  kConcat,
  kMatVec,
  kMatVecT,
  kSpMV,
  kSolve,
  kScaleBy,
  kConv2d,
  kMaxPool,
  kMinimum,
  kCustom,
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::uint32_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Trainable leaf: backward() produces its gradient.
  Var variable(Tensor value);
  // Constant leaf: no gradient flows into it.
  Var constant(Tensor value);

  // Appends a node. Throws NumericError if `value` has non-finite entries.
  // The backward closure is dropped when no parent requires a gradient.
  Var record(Op op, Tensor value, std::initializer_list<Var> parents,
             Backward backward);
  Var record(Op op, Tensor value, std::span<const Var> parents,
             Backward backward);

  void backward(Var root);
  // Gradient of the last backward root w.r.t. `v`; zeros if none reached it.
  Tensor grad(Var v) const;
  void reset();

  std::size_t size() const { return nodes_.size(); }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  // Accessors used by backward closures.
  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  const Tensor& upstream(std::uint32_t self) const { return nodes_[self].grad; }
  std::uint32_t parent(std::uint32_t self, std::size_t k) const {
    return nodes_[self].parents[k];
  }
  // Gradient buffer of node `id`, zero-initialized on first use; nullptr when
  // the node does not require a gradient.
  Tensor* accumulator(std::uint32_t id);

 private:
  struct Node {
    Op op = Op::kLeaf;
    bool requires_grad = false;
    std::vector<std::uint32_t> parents;
    Tensor value;
    Tensor grad;
    Backward backward;
  };
  void check_owner(Var v) const;

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

// Elementwise arithmetic; operands must have equal size.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double s);
// a * s + shift, with constant tensors s and shift (either may be empty).
Var affine_const(Var a, const Tensor& s, const Tensor& shift);
Var add_const(Var a, const Tensor& c);
Var mul_const(Var a, const Tensor& c);
// vector * scalar-node
Var scale_by(Var v, Var s);
Var minimum(Var a, Var b);

Var dot(Var a, Var b);
Var sum(Var a);
Var mean(Var a);

Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var abs(Var a);
Var square(Var a);
Var relu(Var a);
Var clamp(Var a, double lo, double hi);
// sigma(x) = log(exp(x) + exp(-x)), evaluated as |x| + log1p(exp(-2|x|)).
Var softplus_sym(Var a);

Var slice(Var a, std::size_t offset, std::size_t length);
Var element(Var a, std::size_t i);
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);

// W x with W a rank-2 node (rows x cols), x of length cols.
Var matvec(Var w, Var x);
// W^T x with x of length rows.
Var matvec_t(Var w, Var x);
Var affine(Var w, Var x, Var b);

Var matvec(const SparseMatrix& a, Var x);
Var matvec_t(const SparseMatrix& a, Var x);
// x solving A x = b for the factorized A; backward solves with A^T.
Var solve(const LinearSolver& f, Var b);

// Same-padded 3x3 convolution of a (c_in, h, w) image stored flat, with
// weights (c_out, c_in*9) and bias (c_out).
Var conv2d_3x3(Var weight, Var bias, Var x, std::size_t c_in, std::size_t h,
               std::size_t w);
// 2x2 max-pool with stride 2 of a flat (c, h, w) image. Odd extents keep
// a clipped final window, so the output is (c, ceil(h/2), ceil(w/2)).
Var maxpool2x2(Var x, std::size_t c, std::size_t h, std::size_t w);

double softplus_sym(double x);

}  // namespace hjbctl::ad

#endif  // HJBCTL_TAPE_HPP_
