#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "fd.hpp"
#include "hjbctl/pde_env.hpp"
#include "hjbctl/sparse.hpp"
#include "hjbctl/tape.hpp"

using namespace hjbctl;
using testing::central_diff;
using testing::rel_err;

namespace {

std::vector<double> vec(const Tensor& t) { return {t.data(), t.data() + t.size()}; }

SparseMatrix dense_to_sparse(std::size_t n, const std::vector<double>& a) {
  std::vector<Triplet> t;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) t.push_back({r, c, a[r * n + c]});
  return SparseMatrix::from_triplets(n, n, t);
}

// Builds c . op(x) on a fresh tape for random weights c, and compares the
// tape gradient against central differences.
double op_grad_error(const std::function<ad::Var(ad::Var)>& op, std::vector<double> x,
                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> c;
  auto f = [&](const std::vector<double>& in) {
    ad::Tape tape;
    ad::Var out = op(tape.constant(Tensor::from(in)));
    if (c.empty()) c = testing::uniform(out.size(), rng, -1.0, 1.0);
    return ad::dot(out, tape.constant(Tensor::from(c))).item();
  };
  f(x);
  ad::Tape tape;
  ad::Var v = tape.variable(Tensor::from(x));
  ad::Var root = ad::dot(op(v), tape.constant(Tensor::from(c)));
  tape.backward(root);
  return rel_err(vec(tape.grad(v)), central_diff(f, x));
}

}  // namespace

TEST_CASE("sparse matvec on the tape") {
  ad::Tape tape;
  SparseMatrix eye = SparseMatrix::identity(3);
  ad::Var x = tape.variable(Tensor::from({1, 2, 3}));
  ad::Var y = ad::matvec(eye, x);
  CHECK(vec(y.value()) == std::vector<double>{1, 2, 3});
  tape.backward(ad::sum(y));
  CHECK(vec(tape.grad(x)) == std::vector<double>{1, 1, 1});

  ad::Tape t2;
  SparseMatrix perm = SparseMatrix::from_triplets(2, 2, {{0, 1, 1.0}, {1, 0, 1.0}});
  CHECK(vec(ad::matvec(perm, t2.constant(Tensor::from({2, 5}))).value()) == std::vector<double>{5, 2});

  std::mt19937_64 rng(3);
  const SparseMatrix a = dense_to_sparse(5, testing::uniform(25, rng));
  CHECK(op_grad_error([&](ad::Var v) { return ad::matvec(a, v); }, testing::uniform(5, rng), 4) < 1e-7);
  CHECK(op_grad_error([&](ad::Var v) { return ad::matvec_t(a, v); }, testing::uniform(5, rng), 5) < 1e-7);

  ad::Tape t3;
  CHECK_THROWS_AS(ad::matvec(a, t3.constant(Tensor::from({1, 2}))), DimensionError);
}

TEST_CASE("linear solve on the tape") {
  ad::Tape tape;
  LinearSolver two(SparseMatrix::diagonal(std::vector<double>{2, 2}));
  ad::Var x = ad::solve(two, tape.constant(Tensor::from({4, 6})));
  CHECK(vec(x.value()) == std::vector<double>{2, 3});

  ProblemConfig cfg = ProblemConfig::defaults(Setup::kSinusoidal);
  cfg.n = 4;
  auto sys = FemSystem::assemble(cfg, ProblemParams{0.15, 0.4, -0.2, Setup::kSinusoidal});
  const LinearSolver& op = sys->implicit_operator();
  std::mt19937_64 rng(11);
  const std::vector<double> b = testing::uniform(op.size(), rng);
  const std::vector<double> sol = op.solve(b);
  const std::vector<double> ax = op.matrix() * sol;
  std::vector<double> r(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) r[i] = ax[i] - b[i];
  CHECK(norm2(r) / norm2(b) < 1e-10);

  auto f = [&](const std::vector<double>& in) {
    ad::Tape t;
    return ad::sum(ad::solve(op, t.constant(Tensor::from(in)))).item();
  };
  ad::Tape t;
  ad::Var bv = t.variable(Tensor::from(b));
  t.backward(ad::sum(ad::solve(op, bv)));
  CHECK(rel_err(vec(t.grad(bv)), central_diff(f, b)) < 1e-6);
}

TEST_CASE("symmetric softplus") {
  CHECK(ad::softplus_sym(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(ad::softplus_sym(50.0) == 50.0);
  CHECK(ad::softplus_sym(-800.0) == 800.0);
  ad::Tape tape;
  ad::Var x = tape.variable(Tensor::scalar(1.0));
  tape.backward(ad::softplus_sym(x));
  const double fd = (ad::softplus_sym(1.0 + 1e-6) - ad::softplus_sym(1.0 - 1e-6)) / 2e-6;
  CHECK(tape.grad(x).item() == doctest::Approx(std::tanh(1.0)).epsilon(1e-14));
  CHECK(fd == doctest::Approx(0.761594155955765).epsilon(1e-8));
}

TEST_CASE("backward contract") {
  ad::Tape tape;
  ad::Var w = tape.variable(Tensor::from({0.5, -1.0, 2.0}));
  ad::Var x = tape.constant(Tensor::from({3.0, 4.0, 5.0}));
  tape.backward(ad::dot(w, x));
  CHECK(vec(tape.grad(w)) == std::vector<double>{3.0, 4.0, 5.0});
  CHECK(tape.grad(x).values()[0] == 0.0);
  CHECK_THROWS_AS(tape.backward(ad::dot(w, x)), Error);
  tape.reset();

  ad::Tape t2;
  ad::Var v = t2.variable(Tensor::from({1.0, 2.0}));
  CHECK_THROWS_AS(t2.backward(v), DimensionError);

  // sum(sigma(K x + b)) with K, x, b all trainable.
  std::mt19937_64 rng(21);
  const std::vector<double> theta = testing::uniform(3 * 4 + 4 + 3, rng);
  auto build = [](ad::Tape& t, const std::vector<double>& p, bool trainable) {
    std::vector<double> k(p.begin(), p.begin() + 12), x(p.begin() + 12, p.begin() + 16),
        b(p.begin() + 16, p.end());
    auto leaf = [&](Tensor v) { return trainable ? t.variable(std::move(v)) : t.constant(std::move(v)); };
    ad::Var K = leaf(Tensor::matrix(3, 4, k));
    ad::Var X = leaf(Tensor::from(x));
    ad::Var B = leaf(Tensor::from(b));
    return std::array<ad::Var, 4>{ad::sum(ad::softplus_sym(ad::affine(K, X, B))), K, X, B};
  };
  ad::Tape t3;
  auto nodes = build(t3, theta, true);
  t3.backward(nodes[0]);
  std::vector<double> g;
  for (int i = 1; i < 4; ++i) {
    auto gi = vec(t3.grad(nodes[i]));
    g.insert(g.end(), gi.begin(), gi.end());
  }
  auto f = [&](const std::vector<double>& p) {
    ad::Tape t;
    return build(t, p, false)[0].item();
  };
  CHECK(rel_err(g, central_diff(f, theta)) < 1e-6);
}

TEST_CASE("every differentiable op matches finite differences") {
  std::mt19937_64 rng(7);
  const std::size_t n = 6;
  auto x = [&] { return testing::uniform(n, rng); };
  const Tensor k = Tensor::matrix(4, n, testing::uniform(4 * n, rng));
  const Tensor ksq = Tensor::matrix(n, n, testing::uniform(n * n, rng));
  const Tensor shift = Tensor::from(testing::uniform(n, rng));
  const Tensor s = Tensor::from(testing::uniform(n, rng));

  struct Case {
    const char* name;
    std::function<ad::Var(ad::Var)> op;
    bool positive = false;
  };
  const std::vector<Case> cases = {
      {"add", [](ad::Var v) { return ad::add(v, ad::square(v)); }},
      {"sub", [](ad::Var v) { return ad::sub(ad::tanh(v), v); }},
      {"mul", [](ad::Var v) { return ad::mul(v, ad::exp(v)); }},
      {"neg", [](ad::Var v) { return ad::neg(ad::square(v)); }},
      {"scale", [](ad::Var v) { return ad::scale(ad::tanh(v), -1.7); }},
      {"affine_const", [&](ad::Var v) { return ad::affine_const(ad::square(v), s, shift); }},
      {"mul_const", [&](ad::Var v) { return ad::mul_const(ad::tanh(v), s); }},
      {"scale_by", [](ad::Var v) { return ad::scale_by(v, ad::sum(ad::tanh(v))); }},
      {"dot", [](ad::Var v) { return ad::dot(v, ad::tanh(v)); }},
      {"mean", [](ad::Var v) { return ad::mean(ad::square(v)); }},
      {"tanh", [](ad::Var v) { return ad::tanh(v); }},
      {"exp", [](ad::Var v) { return ad::exp(v); }},
      {"log", [](ad::Var v) { return ad::log(v); }, true},
      {"square", [](ad::Var v) { return ad::square(v); }},
      {"softplus_sym", [](ad::Var v) { return ad::softplus_sym(v); }},
      {"slice", [](ad::Var v) { return ad::slice(ad::square(v), 2, 3); }},
      {"concat", [](ad::Var v) { return ad::concat({ad::tanh(v), ad::element(v, 1), v}); }},
      {"matvec", [&](ad::Var v) { return ad::matvec(v.tape().constant(k), ad::tanh(v)); }},
      {"matvec_t", [&](ad::Var v) { return ad::matvec_t(v.tape().constant(ksq), ad::square(v)); }},
      {"minimum", [](ad::Var v) { return ad::minimum(ad::square(v), ad::tanh(v)); }},
      {"clamp", [](ad::Var v) { return ad::clamp(v, -1.5, 1.5); }},
      {"abs", [](ad::Var v) { return ad::abs(v); }},
      {"relu", [](ad::Var v) { return ad::relu(v); }},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    for (int trial = 0; trial < 3; ++trial) {
      std::vector<double> in = c.positive ? testing::uniform(n, rng, 0.2, 2.0) : x();
      // Keep kinked ops away from their kinks.
      for (double& v : in) {
        if (std::abs(v) < 1e-3 || std::abs(std::abs(v) - 1.5) < 1e-3) v += 0.01;
      }
      CHECK(op_grad_error(c.op, in, 100 + trial) < 1e-5);
    }
  }
}

TEST_CASE("convolution and pooling match finite differences") {
  std::mt19937_64 rng(9);
  const std::size_t cin = 2, cout = 3, h = 5, w = 5;
  const std::vector<double> weights = testing::uniform(cout * cin * 9 + cout, rng, -0.5, 0.5);
  const std::vector<double> image = testing::uniform(cin * h * w, rng);
  auto build = [&](ad::Tape& t, const std::vector<double>& p, bool trainable) {
    auto leaf = [&](Tensor v) { return trainable ? t.variable(std::move(v)) : t.constant(std::move(v)); };
    ad::Var W = leaf(Tensor::matrix(cout, cin * 9, {p.begin(), p.begin() + cout * cin * 9}));
    ad::Var b = leaf(Tensor::from({p.begin() + cout * cin * 9, p.begin() + cout * cin * 9 + cout}));
    ad::Var x = leaf(Tensor::from({p.begin() + cout * cin * 9 + cout, p.end()}));
    ad::Var y = ad::maxpool2x2(ad::tanh(ad::conv2d_3x3(W, b, x, cin, h, w)), cout, h, w);
    CHECK(y.size() == cout * 3 * 3);
    std::vector<double> coef(y.size());
    for (std::size_t i = 0; i < coef.size(); ++i) coef[i] = std::sin(1.0 + i);
    return std::array<ad::Var, 4>{ad::dot(y, t.constant(Tensor::from(coef))), W, b, x};
  };
  std::vector<double> p = weights;
  p.insert(p.end(), image.begin(), image.end());
  ad::Tape t;
  auto nodes = build(t, p, true);
  t.backward(nodes[0]);
  std::vector<double> g;
  for (int i = 1; i < 4; ++i) {
    auto gi = vec(t.grad(nodes[i]));
    g.insert(g.end(), gi.begin(), gi.end());
  }
  auto f = [&](const std::vector<double>& q) {
    ad::Tape tt;
    return build(tt, q, false)[0].item();
  };
  CHECK(rel_err(g, central_diff(f, p)) < 1e-5);
}

TEST_CASE("gradient of a sum is the sum of gradients") {
  std::mt19937_64 rng(13);
  const std::vector<double> x0 = testing::uniform(8, rng);
  auto grad_of = [&](const std::function<ad::Var(ad::Var)>& f) {
    ad::Tape t;
    ad::Var x = t.variable(Tensor::from(x0));
    t.backward(f(x));
    return vec(t.grad(x));
  };
  auto f1 = [](ad::Var v) { return ad::sum(ad::softplus_sym(v)); };
  auto f2 = [](ad::Var v) { return ad::dot(ad::tanh(v), ad::square(v)); };
  auto both = grad_of([&](ad::Var v) { return ad::add(f1(v), f2(v)); });
  auto g1 = grad_of(f1), g2 = grad_of(f2);
  for (std::size_t i = 0; i < both.size(); ++i) CHECK(both[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-14));
}

TEST_CASE("tensor and sparse invariants") {
  CHECK_THROWS_AS(Tensor::matrix(2, 2, {1, 2, 3}), DimensionError);
  ad::Tape t;
  CHECK_THROWS_AS(t.variable(Tensor::from({1.0, std::nan("")})), NumericError);
  CHECK_THROWS_AS(ad::log(t.constant(Tensor::from({-1.0}))), NumericError);

  SparseMatrix m = SparseMatrix::from_triplets(3, 3, {{0, 2, 1.0}, {0, 0, 2.0}, {0, 2, 0.5}, {2, 1, 4.0}});
  CHECK(m.coeff(0, 2) == 1.5);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t k = m.row_ptr()[r] + 1; k < m.row_ptr()[r + 1]; ++k) {
      CHECK(m.col_idx()[k - 1] < m.col_idx()[k]);
    }
  }
  CHECK_FALSE(m.symmetric());
  CHECK_FALSE(m.check_symmetric());
  SparseMatrix s = SparseMatrix::from_triplets(2, 2, {{0, 1, 3.0}, {1, 0, 3.0}, {0, 0, 1.0}});
  CHECK_FALSE(s.symmetric());
  CHECK(s.check_symmetric());
  CHECK(s.symmetric());
  CHECK_THROWS_AS(SparseMatrix::from_triplets(2, 2, {{2, 0, 1.0}}), DimensionError);
}
