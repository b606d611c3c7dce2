#include "hjbctl/sparse.hpp"

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace hjbctl {

SparseMatrix SparseMatrix::from_triplets(std::size_t rows, std::size_t cols,
                                         std::vector<Triplet> triplets) {
  for (const auto& t : triplets) {
    if (t.row >= rows || t.col >= cols) {
      throw DimensionError("SparseMatrix::from_triplets: index out of bounds");
    }
  }
  std::sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  SparseMatrix m(rows, cols);
  for (std::size_t k = 0; k < triplets.size();) {
    std::size_t r = triplets[k].row, c = triplets[k].col;
    double v = 0.0;
    // Summation runs in sorted order so assembly is bit-reproducible.
    while (k < triplets.size() && triplets[k].row == r && triplets[k].col == c) {
      v += triplets[k].value;
      ++k;
    }
    m.col_idx_.push_back(c);
    m.values_.push_back(v);
    m.row_ptr_[r + 1]++;
  }
  std::partial_sum(m.row_ptr_.begin(), m.row_ptr_.end(), m.row_ptr_.begin());
  return m;
}

SparseMatrix SparseMatrix::identity(std::size_t n) {
  std::vector<double> ones(n, 1.0);
  return diagonal(ones);
}

SparseMatrix SparseMatrix::diagonal(std::span<const double> d) {
  std::vector<Triplet> t;
  t.reserve(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) t.push_back({i, i, d[i]});
  return from_triplets(d.size(), d.size(), std::move(t));
}

void SparseMatrix::multiply(std::span<const double> x, std::span<double> y) const {
  if (x.size() != cols_ || y.size() != rows_) {
    throw DimensionError("SparseMatrix::multiply: dimension mismatch");
  }
  for (std::size_t r = 0; r < rows_; ++r) {
    double s = 0.0;
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
      s += values_[k] * x[col_idx_[k]];
    }
    y[r] = s;
  }
}

void SparseMatrix::multiply_transpose(std::span<const double> x,
                                      std::span<double> y) const {
  if (x.size() != rows_ || y.size() != cols_) {
    throw DimensionError("SparseMatrix::multiply_transpose: dimension mismatch");
  }
  std::fill(y.begin(), y.end(), 0.0);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
      y[col_idx_[k]] += values_[k] * x[r];
    }
  }
}

std::vector<double> SparseMatrix::operator*(std::span<const double> x) const {
  std::vector<double> y(rows_);
  multiply(x, y);
  return y;
}

double SparseMatrix::coeff(std::size_t r, std::size_t c) const {
  auto first = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[r]);
  auto last = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[r + 1]);
  auto it = std::lower_bound(first, last, c);
  if (it == last || *it != c) return 0.0;
  return values_[static_cast<std::size_t>(it - col_idx_.begin())];
}

std::vector<double> SparseMatrix::row_sums() const {
  std::vector<double> s(rows_, 0.0);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) s[r] += values_[k];
  }
  return s;
}

SparseMatrix SparseMatrix::add(const SparseMatrix& other, double scale) const {
  if (rows_ != other.rows_ || cols_ != other.cols_) {
    throw DimensionError("SparseMatrix::add: dimension mismatch");
  }
  std::vector<Triplet> t;
  t.reserve(nonzeros() + other.nonzeros());
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
      t.push_back({r, col_idx_[k], values_[k]});
    }
    for (std::size_t k = other.row_ptr_[r]; k < other.row_ptr_[r + 1]; ++k) {
      t.push_back({r, other.col_idx_[k], scale * other.values_[k]});
    }
  }
  return from_triplets(rows_, cols_, std::move(t));
}

SparseMatrix SparseMatrix::scaled(double s) const {
  SparseMatrix m = *this;
  for (double& v : m.values_) v *= s;
  return m;
}

bool SparseMatrix::check_symmetric(double tol) {
  symmetric_ = false;
  if (rows_ != cols_) return false;
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
      if (std::abs(values_[k] - coeff(col_idx_[k], r)) > tol) return false;
    }
  }
  symmetric_ = true;
  return true;
}

namespace {

using EigenSparse = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

EigenSparse to_eigen(const SparseMatrix& a) {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(a.nonzeros());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t k = a.row_ptr()[r]; k < a.row_ptr()[r + 1]; ++k) {
      t.emplace_back(static_cast<int>(r), static_cast<int>(a.col_idx()[k]),
                     a.values()[k]);
    }
  }
  EigenSparse m(static_cast<int>(a.rows()), static_cast<int>(a.cols()));
  m.setFromTriplets(t.begin(), t.end());
  m.makeCompressed();
  return m;
}

SparseMatrix transpose(const SparseMatrix& a) {
  std::vector<Triplet> t;
  t.reserve(a.nonzeros());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t k = a.row_ptr()[r]; k < a.row_ptr()[r + 1]; ++k) {
      t.push_back({a.col_idx()[k], r, a.values()[k]});
    }
  }
  return SparseMatrix::from_triplets(a.cols(), a.rows(), std::move(t));
}

}  // namespace

struct LinearSolver::Impl {
  Eigen::SparseLU<EigenSparse, Eigen::COLAMDOrdering<int>> lu;
  Eigen::SparseLU<EigenSparse, Eigen::COLAMDOrdering<int>> lu_t;
};

LinearSolver::LinearSolver(const SparseMatrix& a)
    : n_(a.rows()), a_(a), at_(transpose(a)), impl_(std::make_unique<Impl>()) {
  if (a.rows() != a.cols()) throw DimensionError("LinearSolver: matrix not square");
  auto factor = [](auto& lu, const SparseMatrix& m) {
    EigenSparse e = to_eigen(m);
    lu.analyzePattern(e);
    lu.factorize(e);
    if (lu.info() != Eigen::Success) {
      throw NumericError("LinearSolver: factorization failed: " + lu.lastErrorMessage());
    }
  };
  factor(impl_->lu, a_);
  factor(impl_->lu_t, at_);
}

LinearSolver::~LinearSolver() = default;

namespace {

template <class Lu>
std::vector<double> solve_with(const Lu& lu, const SparseMatrix& a,
                               std::span<const double> b) {
  if (b.size() != a.rows()) throw DimensionError("LinearSolver::solve: size mismatch");
  Eigen::Map<const Eigen::VectorXd> rhs(b.data(), static_cast<Eigen::Index>(b.size()));
  Eigen::VectorXd x = lu.solve(rhs);
  std::vector<double> out(x.data(), x.data() + x.size());
  std::vector<double> ax = a * std::span<const double>(out);
  double rn = 0.0, bn = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    rn += (ax[i] - b[i]) * (ax[i] - b[i]);
    bn += b[i] * b[i];
  }
  rn = std::sqrt(rn);
  bn = std::sqrt(bn);
  if (!(rn <= LinearSolver::residual_tolerance() * std::max(bn, 1e-300)) && rn > 1e-300) {
    std::ostringstream msg;
    msg << "LinearSolver::solve: relative residual " << rn / bn << " above tolerance";
    throw NumericError(msg.str());
  }
  return out;
}

}  // namespace

std::vector<double> LinearSolver::solve(std::span<const double> b) const {
  return solve_with(impl_->lu, a_, b);
}

std::vector<double> LinearSolver::solve_transpose(std::span<const double> b) const {
  return solve_with(impl_->lu_t, at_, b);
}

}  // namespace hjbctl
