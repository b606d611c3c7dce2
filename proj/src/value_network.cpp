#include "hjbctl/value_network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace hjbctl {

namespace {

constexpr char kMagic[8] = {'H', 'J', 'B', 'V', 'N', 'E', 'T', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw Error("ValueNetwork::load: truncated file");
  return v;
}

void write_tensor(std::ostream& os, const Tensor& t) {
  write_u64(os, t.rank());
  write_u64(os, t.rows());
  write_u64(os, t.cols());
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor read_tensor(std::istream& is) {
  std::uint64_t rank = read_u64(is), rows = read_u64(is), cols = read_u64(is);
  if (rank < 1 || rank > 2 || rows * cols > (1ULL << 32)) {
    throw Error("ValueNetwork::load: corrupt tensor header");
  }
  Tensor t = rank == 1 ? Tensor(rows) : Tensor(rows, cols);
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!is) throw Error("ValueNetwork::load: truncated tensor data");
  return t;
}

}  // namespace

ValueNetwork::ValueNetwork(std::size_t width, std::size_t depth,
                           std::size_t state_dim, std::size_t param_dim)
    : width_(width),
      depth_(depth),
      state_dim_(state_dim),
      param_dim_(param_dim),
      head_(width),
      input_scale_(1 + state_dim + param_dim, 1.0) {
  if (width == 0 || depth == 0) throw ConfigError("ValueNetwork: width and depth must be >= 1");
  kernels_.emplace_back(width, input_dim());
  biases_.emplace_back(width);
  for (std::size_t k = 1; k <= depth; ++k) {
    kernels_.emplace_back(width, width);
    biases_.emplace_back(width);
  }
}

ValueNetwork ValueNetwork::initialize(std::size_t state_dim, std::size_t param_dim,
                                      const ValueNetworkInit& init) {
  ValueNetwork net(init.width, init.depth, state_dim, param_dim);
  net.seed_ = init.seed;
  std::mt19937_64 rng(init.seed);
  std::normal_distribution<double> normal(
      0.0, init.scale / std::sqrt(static_cast<double>(init.width)));
  for (Tensor& k : net.kernels_) {
    for (double& v : k.values()) v = normal(rng);
  }
  return net;
}

std::vector<Tensor*> ValueNetwork::parameters() {
  std::vector<Tensor*> p;
  for (Tensor& k : kernels_) p.push_back(&k);
  for (Tensor& b : biases_) p.push_back(&b);
  p.push_back(&head_);
  return p;
}

std::vector<const Tensor*> ValueNetwork::parameters() const {
  std::vector<const Tensor*> p;
  for (const Tensor& k : kernels_) p.push_back(&k);
  for (const Tensor& b : biases_) p.push_back(&b);
  p.push_back(&head_);
  return p;
}

std::size_t ValueNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : parameters()) n += t->size();
  return n;
}

void ValueNetwork::check_input(const NetInput& in) const {
  if (in.z.size() != state_dim_ || in.y.size() != param_dim_) {
    throw DimensionError("ValueNetwork: input dimensions (" +
                         std::to_string(in.z.size()) + ", " +
                         std::to_string(in.y.size()) + ") do not match network (" +
                         std::to_string(state_dim_) + ", " +
                         std::to_string(param_dim_) + ")");
  }
}

ValueNetwork::Bound ValueNetwork::bind(ad::Tape& tape, bool trainable) const {
  Bound b;
  for (const Tensor* p : parameters()) {
    b.params.push_back(trainable ? tape.variable(*p) : tape.constant(*p));
  }
  return b;
}

ad::Var ValueNetwork::assemble_input(ad::Tape& tape, double s, ad::Var z,
                                     const std::vector<double>& y) const {
  if (z.size() != state_dim_ || y.size() != param_dim_) {
    throw DimensionError("ValueNetwork::assemble_input: dimension mismatch");
  }
  return ad::concat({tape.constant(Tensor::scalar(s)), z, tape.constant(Tensor::from(y))});
}

ad::Var ValueNetwork::forward(const Bound& w, ad::Var input) const {
  return value_and_grad(w, input).value;
}

// The input gradient is written out as primal ops so that losses containing
// it can be differentiated with respect to the weights by a first-order sweep:
//   g = w;  g <- g + K_k^T (tanh(z_k) * g), k = depth..1;  dh0 = K0^T (tanh(z0) * g).
ValueNetwork::ValueAndGrad ValueNetwork::value_and_grad(const Bound& w,
                                                        ad::Var input) const {
  if (input.size() != input_dim()) {
    throw DimensionError("ValueNetwork: input length " + std::to_string(input.size()) +
                         " != " + std::to_string(input_dim()));
  }
  const std::size_t nk = depth_ + 1;
  const auto& p = w.params;
  auto K = [&](std::size_t k) { return p[k]; };
  auto b = [&](std::size_t k) { return p[nk + k]; };
  ad::Var head = p[2 * nk];

  ad::Var h0 = ad::mul_const(input, input_scale_);
  std::vector<ad::Var> pre;
  pre.reserve(nk);
  pre.push_back(ad::affine(K(0), h0, b(0)));
  ad::Var h = ad::softplus_sym(pre.back());
  for (std::size_t k = 1; k <= depth_; ++k) {
    pre.push_back(ad::affine(K(k), h, b(k)));
    h = ad::add(h, ad::softplus_sym(pre.back()));
  }
  ad::Var value = ad::dot(head, h);

  ad::Var g = head;
  for (std::size_t k = depth_; k >= 1; --k) {
    g = ad::add(g, ad::matvec_t(K(k), ad::mul(ad::tanh(pre[k]), g)));
  }
  ad::Var grad_h0 = ad::matvec_t(K(0), ad::mul(ad::tanh(pre[0]), g));
  ad::Var grad = ad::mul_const(grad_h0, input_scale_);
  return {value, grad};
}

double ValueNetwork::forward(const NetInput& in) const {
  check_input(in);
  ad::Tape tape;
  Bound w = bind(tape, false);
  ad::Var x = assemble_input(tape, in.s, tape.constant(Tensor::from(in.z)), in.y);
  return forward(w, x).item();
}

InputGradient ValueNetwork::grad_input(const NetInput& in) const {
  check_input(in);
  ad::Tape tape;
  Bound w = bind(tape, false);
  ad::Var x = assemble_input(tape, in.s, tape.constant(Tensor::from(in.z)), in.y);
  const Tensor& g = value_and_grad(w, x).grad.value();
  InputGradient out;
  out.ds = g[0];
  out.dz.assign(g.data() + 1, g.data() + 1 + state_dim_);
  out.dy.assign(g.data() + 1 + state_dim_, g.data() + g.size());
  return out;
}

void ValueNetwork::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("ValueNetwork::save: cannot open " + path);
  os.write(kMagic, sizeof kMagic);
  write_u64(os, width_);
  write_u64(os, depth_);
  write_u64(os, state_dim_);
  write_u64(os, param_dim_);
  write_u64(os, seed_);
  for (const Tensor* t : parameters()) write_tensor(os, *t);
  write_tensor(os, input_scale_);
  if (!os) throw Error("ValueNetwork::save: write failed for " + path);
}

ValueNetwork ValueNetwork::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("ValueNetwork::load: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw Error("ValueNetwork::load: " + path + " is not a value-network checkpoint");
  }
  std::size_t width = read_u64(is), depth = read_u64(is);
  std::size_t d = read_u64(is), q = read_u64(is);
  ValueNetwork net(width, depth, d, q);
  net.seed_ = read_u64(is);
  for (Tensor* t : net.parameters()) {
    Tensor loaded = read_tensor(is);
    if (!loaded.same_shape(*t)) throw Error("ValueNetwork::load: tensor shape mismatch");
    *t = std::move(loaded);
  }
  Tensor scale = read_tensor(is);
  if (!scale.same_shape(net.input_scale_)) throw Error("ValueNetwork::load: bad input scale");
  net.input_scale_ = std::move(scale);
  return net;
}

bool operator==(const ValueNetwork& a, const ValueNetwork& b) {
  return a.width_ == b.width_ && a.depth_ == b.depth_ && a.state_dim_ == b.state_dim_ &&
         a.param_dim_ == b.param_dim_ && a.seed_ == b.seed_ && a.kernels_ == b.kernels_ &&
         a.biases_ == b.biases_ && a.head_ == b.head_ && a.input_scale_ == b.input_scale_;
}

std::uint64_t weight_hash(const ValueNetwork& net) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const Tensor* t : net.parameters()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t->data());
    for (std::size_t i = 0; i < t->size() * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace hjbctl
