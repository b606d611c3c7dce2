#include "hjbctl/conv_net.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <random>

namespace hjbctl::rl {

namespace {

using ColVector = Eigen::VectorXd;
using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;

constexpr char kMagic[8] = {'H', 'J', 'B', 'C', 'N', 'E', 'T', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw Error("ConvNet::load: truncated stream");
  return v;
}

ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}
MutMap as_matrix(Tensor& t) {
  return MutMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}
Eigen::Map<const ColVector> as_vector(const Tensor& t) {
  return Eigen::Map<const ColVector>(t.data(), static_cast<Eigen::Index>(t.size()));
}
Eigen::Map<ColVector> as_vector(Tensor& t) {
  return Eigen::Map<ColVector>(t.data(), static_cast<Eigen::Index>(t.size()));
}

// in: channels x (side*side); out: (channels*9) x (side*side)
Matrix im2col(const Eigen::Ref<const Matrix>& in, std::size_t side) {
  const auto L = static_cast<Eigen::Index>(side);
  const Eigen::Index C = in.rows();
  Matrix col = Matrix::Zero(C * 9, L * L);
  for (Eigen::Index c = 0; c < C; ++c) {
    for (Eigen::Index ky = 0; ky < 3; ++ky) {
      for (Eigen::Index kx = 0; kx < 3; ++kx) {
        const Eigen::Index r = c * 9 + ky * 3 + kx;
        for (Eigen::Index y = 0; y < L; ++y) {
          const Eigen::Index sy = y + ky - 1;
          if (sy < 0 || sy >= L) continue;
          for (Eigen::Index x = 0; x < L; ++x) {
            const Eigen::Index sx = x + kx - 1;
            if (sx < 0 || sx >= L) continue;
            col(r, y * L + x) = in(c, sy * L + sx);
          }
        }
      }
    }
  }
  return col;
}

Matrix col2im(const Matrix& col, std::size_t channels, std::size_t side) {
  const auto L = static_cast<Eigen::Index>(side);
  const auto C = static_cast<Eigen::Index>(channels);
  Matrix in = Matrix::Zero(C, L * L);
  for (Eigen::Index c = 0; c < C; ++c) {
    for (Eigen::Index ky = 0; ky < 3; ++ky) {
      for (Eigen::Index kx = 0; kx < 3; ++kx) {
        const Eigen::Index r = c * 9 + ky * 3 + kx;
        for (Eigen::Index y = 0; y < L; ++y) {
          const Eigen::Index sy = y + ky - 1;
          if (sy < 0 || sy >= L) continue;
          for (Eigen::Index x = 0; x < L; ++x) {
            const Eigen::Index sx = x + kx - 1;
            if (sx < 0 || sx >= L) continue;
            in(c, sy * L + sx) += col(r, y * L + x);
          }
        }
      }
    }
  }
  return in;
}

Matrix orthogonal_matrix(std::size_t rows, std::size_t cols, double gain, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t big = std::max(rows, cols), small = std::min(rows, cols);
  Eigen::MatrixXd a(big, small);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), a.cols());
  const Eigen::MatrixXd& r = qr.matrixQR();
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  Matrix w = rows >= cols ? Matrix(q) : Matrix(q.transpose());
  return gain * w;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  write_u64(os, t.rank());
  write_u64(os, t.rows());
  write_u64(os, t.cols());
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor read_tensor(std::istream& is) {
  const std::uint64_t rank = read_u64(is), rows = read_u64(is), cols = read_u64(is);
  if (rank < 1 || rank > 2 || rows * cols > (1ULL << 32)) throw Error("read_tensor: corrupt header");
  Tensor t = rank == 1 ? Tensor(rows) : Tensor(rows, cols);
  is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!is) throw Error("read_tensor: truncated data");
  return t;
}

ConvNet::ConvNet(const ConvNetSpec& spec) : spec_(spec) {
  if (spec.channels == 0 || spec.grid == 0 || spec.outputs == 0) {
    throw ConfigError("ConvNet: channels, grid and outputs must be positive");
  }
  for (std::size_t c : spec.conv) {
    if (c == 0) throw ConfigError("ConvNet: convolution widths must be positive");
  }
  for (std::size_t d : spec.dense) {
    if (d == 0) throw ConfigError("ConvNet: dense widths must be positive");
  }
  std::size_t cin = spec.channels;
  for (std::size_t k = 0; k < 3; ++k) {
    params_.emplace_back(spec.conv[k], cin * 9);
    params_.emplace_back(spec.conv[k]);
    cin = spec.conv[k];
  }
  std::size_t in = flat_features() + spec.extra_inputs;
  for (std::size_t d = 0; d < 2; ++d) {
    params_.emplace_back(spec.dense[d], in);
    params_.emplace_back(spec.dense[d]);
    in = spec.dense[d];
  }
  params_.emplace_back(spec.outputs, in);
  params_.emplace_back(spec.outputs);
}

ConvNet ConvNet::orthogonal(const ConvNetSpec& spec, std::uint64_t seed, double head_gain) {
  ConvNet net(spec);
  std::mt19937_64 rng(seed);
  const double hidden_gain = std::sqrt(2.0);
  for (std::size_t p = 0; p + 1 < net.params_.size(); p += 2) {
    Tensor& w = net.params_[p];
    const double gain = p + 2 == net.params_.size() ? head_gain : hidden_gain;
    as_matrix(w) = orthogonal_matrix(w.rows(), w.cols(), gain, rng);
  }
  return net;
}

std::size_t ConvNet::layer_grid(std::size_t k) const {
  std::size_t side = spec_.grid;
  for (std::size_t i = 0; i < k; ++i) side = (side + 1) / 2;
  return side;
}

std::size_t ConvNet::flat_features() const {
  const std::size_t side = layer_grid(3);
  return spec_.conv[2] * side * side;
}

std::vector<Tensor*> ConvNet::parameters() {
  std::vector<Tensor*> p;
  for (Tensor& t : params_) p.push_back(&t);
  return p;
}

std::vector<const Tensor*> ConvNet::parameters() const {
  std::vector<const Tensor*> p;
  for (const Tensor& t : params_) p.push_back(&t);
  return p;
}

std::vector<Tensor> ConvNet::zero_grads() const {
  std::vector<Tensor> g;
  for (const Tensor& t : params_) g.push_back(t.rank() == 1 ? Tensor(t.rows()) : Tensor(t.rows(), t.cols()));
  return g;
}

Matrix ConvNet::forward(const Matrix& x, const Matrix* extra, Cache* cache) const {
  const auto B = x.rows();
  if (static_cast<std::size_t>(x.cols()) != spec_.input_size()) {
    throw DimensionError("ConvNet::forward: input width " + std::to_string(x.cols()) +
                         " != " + std::to_string(spec_.input_size()));
  }
  if (spec_.extra_inputs > 0) {
    if (extra == nullptr || extra->rows() != B ||
        static_cast<std::size_t>(extra->cols()) != spec_.extra_inputs) {
      throw DimensionError("ConvNet::forward: missing or mis-sized extra inputs");
    }
  }
  if (cache != nullptr) {
    cache->cols.assign(3, std::vector<Matrix>(static_cast<std::size_t>(B)));
    cache->act.assign(3, std::vector<Matrix>(static_cast<std::size_t>(B)));
    cache->argmax.assign(3, std::vector<std::vector<std::size_t>>(static_cast<std::size_t>(B)));
  }
  const std::size_t nflat = flat_features();
  Matrix flat(B, static_cast<Eigen::Index>(nflat + spec_.extra_inputs));

  for (Eigen::Index i = 0; i < B; ++i) {
    const auto si = static_cast<std::size_t>(i);
    Matrix in = ConstMap(x.row(i).data(), static_cast<Eigen::Index>(spec_.channels),
                         static_cast<Eigen::Index>(spec_.grid * spec_.grid));
    for (std::size_t k = 0; k < 3; ++k) {
      const std::size_t L = layer_grid(k), P = layer_grid(k + 1);
      Matrix col = im2col(in, L);
      Matrix act = as_matrix(params_[2 * k]) * col;
      act.colwise() += as_vector(params_[2 * k + 1]);
      act = act.array().tanh().matrix();
      const Eigen::Index C = act.rows();
      Matrix pooled(C, static_cast<Eigen::Index>(P * P));
      std::vector<std::size_t> arg(static_cast<std::size_t>(C) * P * P);
      for (Eigen::Index c = 0; c < C; ++c) {
        for (std::size_t py = 0; py < P; ++py) {
          for (std::size_t px = 0; px < P; ++px) {
            double best = -std::numeric_limits<double>::infinity();
            std::size_t best_j = 0;
            for (std::size_t dy = 0; dy < 2; ++dy) {
              for (std::size_t dx = 0; dx < 2; ++dx) {
                const std::size_t yy = 2 * py + dy, xx = 2 * px + dx;
                if (yy >= L || xx >= L) continue;
                const std::size_t j = yy * L + xx;
                const double v = act(c, static_cast<Eigen::Index>(j));
                if (v > best) {
                  best = v;
                  best_j = j;
                }
              }
            }
            pooled(c, static_cast<Eigen::Index>(py * P + px)) = best;
            arg[static_cast<std::size_t>(c) * P * P + py * P + px] = best_j;
          }
        }
      }
      if (cache != nullptr) {
        cache->cols[k][si] = std::move(col);
        cache->act[k][si] = std::move(act);
        cache->argmax[k][si] = std::move(arg);
      }
      in = std::move(pooled);
    }
    flat.row(i).head(static_cast<Eigen::Index>(nflat)) =
        Eigen::Map<const Eigen::RowVectorXd>(in.data(), static_cast<Eigen::Index>(nflat));
    if (spec_.extra_inputs > 0) {
      flat.row(i).tail(static_cast<Eigen::Index>(spec_.extra_inputs)) = extra->row(i);
    }
  }

  Matrix h = flat;
  std::array<Matrix, 2> hidden;
  for (std::size_t d = 0; d < 2; ++d) {
    const auto W = as_matrix(params_[6 + 2 * d]);
    const auto b = as_vector(params_[7 + 2 * d]);
    Matrix out(B, W.rows());
    for (Eigen::Index i = 0; i < B; ++i) {
      ColVector z = W * h.row(i).transpose() + b;
      out.row(i) = z.array().tanh().matrix().transpose();
    }
    hidden[d] = out;
    h = std::move(out);
  }
  const auto W = as_matrix(params_[10]);
  const auto b = as_vector(params_[11]);
  Matrix y(B, W.rows());
  for (Eigen::Index i = 0; i < B; ++i) {
    ColVector z = W * h.row(i).transpose() + b;
    y.row(i) = z.transpose();
  }
  if (!y.allFinite()) throw NumericError("ConvNet::forward: non-finite output");
  if (cache != nullptr) {
    cache->flat = std::move(flat);
    cache->hidden = std::move(hidden);
  }
  return y;
}

Matrix ConvNet::backward(const Cache& cache, const Matrix& d_out, std::vector<Tensor>& grads) const {
  const Eigen::Index B = cache.flat.rows();
  if (d_out.rows() != B || static_cast<std::size_t>(d_out.cols()) != spec_.outputs) {
    throw DimensionError("ConvNet::backward: output gradient shape mismatch");
  }
  if (grads.size() != params_.size()) grads = zero_grads();

  // Dense part, row by row.
  Matrix d_flat(B, cache.flat.cols());
  {
    const std::array<const Matrix*, 3> inputs{&cache.flat, &cache.hidden[0], &cache.hidden[1]};
    for (Eigen::Index i = 0; i < B; ++i) {
      ColVector g = d_out.row(i).transpose();
      for (int layer = 2; layer >= 0; --layer) {
        const std::size_t wi = 6 + 2 * static_cast<std::size_t>(layer);
        const ColVector in = inputs[static_cast<std::size_t>(layer)]->row(i).transpose();
        as_matrix(grads[wi]).noalias() += g * in.transpose();
        as_vector(grads[wi + 1]) += g;
        ColVector gin = as_matrix(params_[wi]).transpose() * g;
        if (layer > 0) {
          gin.array() *= 1.0 - in.array().square();
        }
        g = std::move(gin);
      }
      d_flat.row(i) = g.transpose();
    }
  }

  Matrix d_extra = d_flat.rightCols(static_cast<Eigen::Index>(spec_.extra_inputs));

  for (Eigen::Index i = 0; i < B; ++i) {
    const auto si = static_cast<std::size_t>(i);
    const std::size_t P3 = layer_grid(3);
    Matrix d_pooled = ConstMap(d_flat.row(i).data(), static_cast<Eigen::Index>(spec_.conv[2]),
                               static_cast<Eigen::Index>(P3 * P3));
    for (int k = 2; k >= 0; --k) {
      const auto sk = static_cast<std::size_t>(k);
      const std::size_t L = layer_grid(sk), P = layer_grid(sk + 1);
      const Matrix& act = cache.act[sk][si];
      const auto& arg = cache.argmax[sk][si];
      Matrix d_act = Matrix::Zero(act.rows(), act.cols());
      for (Eigen::Index c = 0; c < act.rows(); ++c) {
        for (std::size_t j = 0; j < P * P; ++j) {
          d_act(c, static_cast<Eigen::Index>(arg[static_cast<std::size_t>(c) * P * P + j])) +=
              d_pooled(c, static_cast<Eigen::Index>(j));
        }
      }
      d_act.array() *= 1.0 - act.array().square();
      as_matrix(grads[2 * sk]).noalias() += d_act * cache.cols[sk][si].transpose();
      as_vector(grads[2 * sk + 1]) += d_act.rowwise().sum();
      if (k > 0) {
        Matrix d_col = as_matrix(params_[2 * sk]).transpose() * d_act;
        d_pooled = col2im(d_col, spec_.conv[sk - 1], L);
      }
    }
  }
  return d_extra;
}

void ConvNet::soft_update(const ConvNet& src, double tau) {
  if (!(src.spec_ == spec_)) throw DimensionError("ConvNet::soft_update: architecture mismatch");
  for (std::size_t p = 0; p < params_.size(); ++p) {
    auto dst = params_[p].values();
    auto s = src.params_[p].values();
    if (tau == 1.0) {
      std::copy(s.begin(), s.end(), dst.begin());
      continue;
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = tau * s[i] + (1.0 - tau) * dst[i];
  }
}

void ConvNet::save(std::ostream& os) const {
  os.write(kMagic, sizeof kMagic);
  write_u64(os, spec_.channels);
  write_u64(os, spec_.grid);
  for (std::size_t c : spec_.conv) write_u64(os, c);
  for (std::size_t d : spec_.dense) write_u64(os, d);
  write_u64(os, spec_.extra_inputs);
  write_u64(os, spec_.outputs);
  for (const Tensor& t : params_) write_tensor(os, t);
}

ConvNet ConvNet::load(std::istream& is) {
  char magic[sizeof kMagic];
  is.read(magic, sizeof magic);
  if (!is || !std::equal(magic, magic + sizeof magic, kMagic)) {
    throw Error("ConvNet::load: not a network stream");
  }
  ConvNetSpec spec;
  spec.channels = read_u64(is);
  spec.grid = read_u64(is);
  for (std::size_t& c : spec.conv) c = read_u64(is);
  for (std::size_t& d : spec.dense) d = read_u64(is);
  spec.extra_inputs = read_u64(is);
  spec.outputs = read_u64(is);
  ConvNet net(spec);
  for (Tensor& t : net.params_) {
    Tensor r = read_tensor(is);
    if (!r.same_shape(t)) throw Error("ConvNet::load: parameter shape mismatch");
    t = std::move(r);
  }
  return net;
}

bool operator==(const ConvNet& a, const ConvNet& b) {
  return a.spec_ == b.spec_ && a.params_ == b.params_;
}

}  // namespace hjbctl::rl
