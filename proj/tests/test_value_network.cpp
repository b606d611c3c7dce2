#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "fd.hpp"
#include "hjbctl/value_network.hpp"

using namespace hjbctl;
using testing::central_diff;
using testing::rel_err;

namespace {

ValueNetwork random_net(std::size_t width, std::size_t depth, std::size_t d, std::size_t q,
                        std::uint64_t seed, double scale = 0.5) {
  ValueNetwork net(width, depth, d, q);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (Tensor* p : net.parameters())
    for (double& v : p->values()) v = n(rng);
  return net;
}

NetInput unflat(const std::vector<double>& x, std::size_t d) {
  NetInput in;
  in.s = x[0];
  in.z.assign(x.begin() + 1, x.begin() + 1 + d);
  in.y.assign(x.begin() + 1 + d, x.end());
  return in;
}

double sigma(double x) { return std::abs(x) + std::log1p(std::exp(-2.0 * std::abs(x))); }

}  // namespace

TEST_CASE("zero network") {
  ValueNetwork net(5, 2, 3, 2);
  NetInput in{0.3, {1.0, -2.0, 0.5}, {0.1, 0.2}};
  CHECK(net.forward(in) == 0.0);
  InputGradient g = net.grad_input(in);
  CHECK(g.ds == 0.0);
  for (double v : g.dz) CHECK(v == 0.0);
  for (double v : g.dy) CHECK(v == 0.0);
}

TEST_CASE("hand evaluation at width one") {
  // Phi = w (h1 + sigma(k1 h1 + b1)),  h1 = sigma(k0 . x + b0)
  ValueNetwork net(1, 1, 1, 1);
  auto p = net.parameters();  // K0, K1, b0, b1, w
  const double k0[3] = {0.3, -0.7, 1.1}, k1 = -0.4, b0 = 0.2, b1 = 0.05, w = 1.3;
  for (int i = 0; i < 3; ++i) (*p[0])[i] = k0[i];
  (*p[1])[0] = k1;
  (*p[2])[0] = b0;
  (*p[3])[0] = b1;
  (*p[4])[0] = w;
  const NetInput in{0.25, {0.8}, {-0.6}};
  const double h1 = sigma(k0[0] * 0.25 + k0[1] * 0.8 + k0[2] * -0.6 + b0);
  const double expect = w * (h1 + sigma(k1 * h1 + b1));
  CHECK(net.forward(in) == doctest::Approx(expect).epsilon(1e-15));

  for (Tensor* t : p) t->fill(0.0);
  (*p[4])[0] = 1.0;
  CHECK(net.forward(in) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("input gradient") {
  ValueNetwork net = random_net(8, 3, 5, 2, 17);
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 5; ++trial) {
    const std::vector<double> x = testing::uniform(net.input_dim(), rng);
    const InputGradient g = net.grad_input(unflat(x, 5));
    std::vector<double> ga{g.ds};
    ga.insert(ga.end(), g.dz.begin(), g.dz.end());
    ga.insert(ga.end(), g.dy.begin(), g.dy.end());
    const auto fd = central_diff([&](const std::vector<double>& v) { return net.forward(unflat(v, 5)); }, x);
    for (std::size_t i = 0; i < ga.size(); ++i) CHECK(rel_err(ga[i], fd[i]) < 1e-6);
  }

  // Non-unit input scaling enters through the chain rule.
  for (std::size_t i = 0; i < net.input_dim(); ++i) net.input_scale()[i] = 0.5 + 0.1 * i;
  const std::vector<double> x = testing::uniform(net.input_dim(), rng);
  const InputGradient g = net.grad_input(unflat(x, 5));
  const auto fd = central_diff([&](const std::vector<double>& v) { return net.forward(unflat(v, 5)); }, x);
  CHECK(rel_err(g.ds, fd[0]) < 1e-6);
  for (std::size_t i = 0; i < 5; ++i) CHECK(rel_err(g.dz[i], fd[1 + i]) < 1e-6);
}

TEST_CASE("Taylor remainder is second order") {
  ValueNetwork net = random_net(6, 2, 4, 1, 5);
  std::mt19937_64 rng(6);
  const std::vector<double> x = testing::uniform(net.input_dim(), rng);
  const std::vector<double> d = testing::uniform(net.input_dim(), rng);
  const InputGradient g = net.grad_input(unflat(x, 4));
  std::vector<double> grad{g.ds};
  grad.insert(grad.end(), g.dz.begin(), g.dz.end());
  grad.insert(grad.end(), g.dy.begin(), g.dy.end());
  const double phi = net.forward(unflat(x, 4));
  auto remainder = [&](double t) {
    std::vector<double> xt = x;
    for (std::size_t i = 0; i < x.size(); ++i) xt[i] += t * d[i];
    double lin = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) lin += t * grad[i] * d[i];
    return std::abs(net.forward(unflat(xt, 4)) - phi - lin);
  };
  for (double t : {1e-1, 5e-2, 2.5e-2}) {
    const double ratio = remainder(t / 2) / remainder(t);
    CHECK(ratio == doctest::Approx(0.25).epsilon(0.2));
  }
}

TEST_CASE("tape evaluation matches the direct path") {
  ValueNetwork net = random_net(4, 2, 3, 2, 31);
  const NetInput in{0.4, {0.1, -0.3, 0.7}, {0.15, 0.5}};
  ad::Tape tape;
  auto w = net.bind(tape, false);
  ad::Var z = tape.constant(Tensor::from(in.z));
  auto vg = net.value_and_grad(w, net.assemble_input(tape, in.s, z, in.y));
  CHECK(vg.value.item() == doctest::Approx(net.forward(in)).epsilon(1e-14));
  const InputGradient g = net.grad_input(in);
  CHECK(vg.grad.value()[0] == doctest::Approx(g.ds).epsilon(1e-14));
  for (std::size_t i = 0; i < 3; ++i) CHECK(vg.grad.value()[1 + i] == doctest::Approx(g.dz[i]).epsilon(1e-14));
}

TEST_CASE("weight gradient through the input gradient") {
  // L = Phi + (grad_z Phi . v) on a width-4, depth-2 network.
  ValueNetwork net = random_net(4, 2, 3, 2, 41);
  const NetInput in{0.4, {0.1, -0.3, 0.7}, {0.15, 0.5}};
  const std::vector<double> v{0.7, -1.2, 0.4};
  auto loss = [&](const ValueNetwork& n, ad::Tape& tape, bool trainable, ValueNetwork::Bound* out) {
    auto w = n.bind(tape, trainable);
    auto vg = n.value_and_grad(w, n.assemble_input(tape, in.s, tape.constant(Tensor::from(in.z)), in.y));
    ad::Var gz = ad::slice(vg.grad, 1, 3);
    if (out) *out = w;
    return ad::add(vg.value, ad::dot(gz, tape.constant(Tensor::from(v))));
  };
  ad::Tape tape;
  ValueNetwork::Bound w;
  tape.backward(loss(net, tape, true, &w));
  std::vector<double> theta, g;
  for (std::size_t k = 0; k < w.params.size(); ++k) {
    const Tensor gk = tape.grad(w.params[k]);
    g.insert(g.end(), gk.data(), gk.data() + gk.size());
    const Tensor* pk = net.parameters()[k];
    theta.insert(theta.end(), pk->data(), pk->data() + pk->size());
  }
  auto f = [&](const std::vector<double>& th) {
    ValueNetwork n = net;
    std::size_t off = 0;
    for (Tensor* p : n.parameters())
      for (double& x : p->values()) x = th[off++];
    ad::Tape t;
    return loss(n, t, false, nullptr).item();
  };
  CHECK(rel_err(g, central_diff(f, theta)) < 1e-5);
}

TEST_CASE("initialization") {
  ValueNetworkInit init;
  CHECK(init.width == 64);
  CHECK(init.depth == 4);
  init.seed = 9;
  ValueNetwork a = ValueNetwork::initialize(257, 3, init);
  ValueNetwork b = ValueNetwork::initialize(257, 3, init);
  CHECK(a == b);
  CHECK(weight_hash(a) == weight_hash(b));
  CHECK(a.width() == 64);
  CHECK(a.depth() == 4);
  CHECK(a.input_dim() == 1 + 257 + 3);
  CHECK(a.parameters().front()->cols() == a.input_dim());
  init.seed = 10;
  CHECK_FALSE(ValueNetwork::initialize(257, 3, init) == a);

  NetInput zero{0.0, std::vector<double>(257, 0.0), std::vector<double>(3, 0.0)};
  const double phi = a.forward(zero);
  CHECK(std::isfinite(phi));
  CHECK(std::abs(phi) < 10.0);
  // The zero head makes the initial value function, and so the initial control, zero.
  CHECK(phi == 0.0);
}

TEST_CASE("checkpoint round trip") {
  ValueNetwork net = random_net(6, 3, 7, 2, 51);
  net.input_scale()[3] = 0.125;
  const auto path = std::filesystem::temp_directory_path() / "hjbctl_vn_roundtrip.bin";
  net.save(path.string());
  ValueNetwork back = ValueNetwork::load(path.string());
  CHECK(back == net);
  CHECK(weight_hash(back) == weight_hash(net));
  const NetInput in{0.1, {1, 2, 3, 4, 5, 6, 7}, {0.2, 0.3}};
  CHECK(back.forward(in) == net.forward(in));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(ValueNetwork::load(path.string()), Error);
}

TEST_CASE("dimension checks") {
  ValueNetwork net(4, 1, 3, 2);
  CHECK_THROWS_AS(net.forward(NetInput{0.0, {1.0, 2.0}, {0.0, 0.0}}), DimensionError);
  CHECK_THROWS_AS(net.grad_input(NetInput{0.0, {1.0, 2.0, 3.0}, {0.0}}), DimensionError);
}
