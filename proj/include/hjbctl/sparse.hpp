#ifndef HJBCTL_SPARSE_HPP_
#define HJBCTL_SPARSE_HPP_

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "hjbctl/tensor.hpp"

namespace hjbctl {

struct Triplet {
  std::size_t row;
  std::size_t col;
  double value;
};

// Compressed sparse row matrix. Column indices are sorted within each row
// and duplicates from construction are summed.
class SparseMatrix {
 public:
  SparseMatrix() = default;
  SparseMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), row_ptr_(rows + 1, 0) {}

  static SparseMatrix from_triplets(std::size_t rows, std::size_t cols,
                                    std::vector<Triplet> triplets);
  static SparseMatrix identity(std::size_t n);
  static SparseMatrix diagonal(std::span<const double> d);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t nonzeros() const { return values_.size(); }

  const std::vector<std::size_t>& row_ptr() const { return row_ptr_; }
  const std::vector<std::size_t>& col_idx() const { return col_idx_; }
  const std::vector<double>& values() const { return values_; }

  // y = A x
  void multiply(std::span<const double> x, std::span<double> y) const;
  // y = A^T x
  void multiply_transpose(std::span<const double> x, std::span<double> y) const;
  std::vector<double> operator*(std::span<const double> x) const;

  // Entry lookup, zero when structurally absent.
  double coeff(std::size_t r, std::size_t c) const;
  std::vector<double> row_sums() const;

  // this + scale * other; both must have identical dimensions.
  SparseMatrix add(const SparseMatrix& other, double scale = 1.0) const;
  SparseMatrix scaled(double s) const;

  // Sets the symmetric flag only if |A - A^T| <= tol entrywise.
  bool check_symmetric(double tol = 1e-14);
  bool symmetric() const { return symmetric_; }

  friend bool operator==(const SparseMatrix& a, const SparseMatrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ &&
           a.row_ptr_ == b.row_ptr_ && a.col_idx_ == b.col_idx_ &&
           a.values_ == b.values_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::size_t> col_idx_;
  std::vector<double> values_;
  bool symmetric_ = false;
};

// Sparse direct factorization of a square nonsingular matrix, kept for
// both A and A^T so reverse-mode sweeps can solve with the transpose.
// Immutable after construction; solve() is safe to call concurrently.
class LinearSolver {
 public:
  explicit LinearSolver(const SparseMatrix& a);
  ~LinearSolver();
  LinearSolver(const LinearSolver&) = delete;
  LinearSolver& operator=(const LinearSolver&) = delete;

  std::size_t size() const { return n_; }

  // Solves A x = b. Throws NumericError when the relative residual
  // exceeds residual_tolerance().
  std::vector<double> solve(std::span<const double> b) const;
  std::vector<double> solve_transpose(std::span<const double> b) const;

  const SparseMatrix& matrix() const { return a_; }
  static constexpr double residual_tolerance() { return 1e-10; }

 private:
  struct Impl;
  std::size_t n_;
  SparseMatrix a_;
  SparseMatrix at_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace hjbctl

#endif  // HJBCTL_SPARSE_HPP_
