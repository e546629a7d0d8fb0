/*
 * c3dm - canonical 3D deformer maps on synthetic deformable categories.
 *
 * Copyright 2026 The c3dm Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "c3dm/mlp.hpp"

#include "c3dm/error.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

namespace c3dm::nn {

namespace {

Eigen::MatrixXd activate(Activation act, const Eigen::MatrixXd& a) {
  switch (act) {
    case Activation::Silu:
      return (a.array() / (1.0 + (-a.array()).exp())).matrix();
    case Activation::Relu:
      return a.cwiseMax(0.0);
    case Activation::Tanh:
      return a.array().tanh().matrix();
  }
  return a;
}

Eigen::MatrixXd activate_derivative(Activation act, const Eigen::MatrixXd& a) {
  switch (act) {
    case Activation::Silu: {
      const Eigen::ArrayXXd s = 1.0 / (1.0 + (-a.array()).exp());
      return (s * (1.0 + a.array() * (1.0 - s))).matrix();
    }
    case Activation::Relu:
      return (a.array() > 0.0).cast<double>().matrix();
    case Activation::Tanh:
      return (1.0 - a.array().tanh().square()).matrix();
  }
  return Eigen::MatrixXd::Ones(a.rows(), a.cols());
}

Eigen::RowVectorXd clamped_norms(const Eigen::MatrixXd& x) {
  return x.colwise().norm().cwiseMax(kNormEpsilon);
}

}  // namespace

const char* to_string(Activation a) noexcept {
  switch (a) {
    case Activation::Silu: return "silu";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
  }
  return "silu";
}

Activation activation_from_string(const std::string& name) {
  if (name == "silu") return Activation::Silu;
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  throw Error(ErrorCode::InvalidSpec, "unknown activation '" + name + "'");
}

void MlpConfig::validate() const {
  if (in_dim < 1) throw Error(ErrorCode::InvalidSpec, "mlp: in_dim must be >= 1");
  if (hidden_dim < 1) throw Error(ErrorCode::InvalidSpec, "mlp: hidden_dim must be >= 1");
  if (out_dim < 1) throw Error(ErrorCode::InvalidSpec, "mlp: out_dim must be >= 1");
  if (n_res_blocks < 0) throw Error(ErrorCode::InvalidSpec, "mlp: n_res_blocks must be >= 0");
}

MlpLayout MlpLayout::of(const MlpConfig& cfg) {
  MlpLayout l;
  const Eigen::Index h = cfg.hidden_dim;
  Eigen::Index off = 0;
  l.w_in = off;
  off += h * cfg.in_dim;
  l.b_in = off;
  off += h;
  for (int k = 0; k < cfg.n_res_blocks; ++k) {
    Block b{};
    b.w1 = off;
    off += h * h;
    b.b1 = off;
    off += h;
    b.w2 = off;
    off += h * h;
    b.b2 = off;
    off += h;
    l.blocks.push_back(b);
  }
  l.w_out = off;
  off += static_cast<Eigen::Index>(cfg.out_dim) * h;
  l.b_out = off;
  off += cfg.out_dim;
  l.total = off;
  return l;
}

Mlp::Mlp(const MlpConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  layout_ = MlpLayout::of(cfg_);
  params_ = Eigen::VectorXd::Zero(layout_.total);
}

Mlp Mlp::initialized(const MlpConfig& cfg, std::mt19937_64& rng, double output_scale) {
  Mlp net(cfg);
  auto fill = [&rng](auto&& m, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = u(rng);
  };
  const double h = cfg.hidden_dim;
  fill(net.w_in(), std::sqrt(3.0 / cfg.in_dim));
  for (int k = 0; k < cfg.n_res_blocks; ++k) {
    // Block inputs have unit norm, so the effective fan-in is one.
    fill(net.w1(k), std::sqrt(3.0));
    fill(net.w2(k), 0.5 * std::sqrt(3.0 / h));
  }
  if (output_scale != 0.0) fill(net.w_out(), output_scale * std::sqrt(3.0 / h));
  return net;
}

void Mlp::set_params(const Eigen::VectorXd& p) {
  if (p.size() != layout_.total) {
    throw Error(ErrorCode::DimMismatch, "mlp: parameter vector has the wrong length");
  }
  params_ = p;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, Cache* cache) const {
  if (x.rows() != cfg_.in_dim) {
    throw Error(ErrorCode::DimMismatch, "mlp: input has " + std::to_string(x.rows()) +
                                            " rows, expected " + std::to_string(cfg_.in_dim));
  }
  const int hd = cfg_.hidden_dim;
  Eigen::MatrixXd h = (cw(layout_.w_in, hd, cfg_.in_dim) * x).colwise() + cb(layout_.b_in, hd);
  if (cache) {
    cache->input = x;
    cache->h.assign(1, h);
    cache->z.clear();
    cache->norm.clear();
    cache->a.clear();
    cache->u.clear();
  }
  for (int k = 0; k < cfg_.n_res_blocks; ++k) {
    const auto& blk = layout_.blocks[k];
    const Eigen::RowVectorXd n = clamped_norms(h);
    const Eigen::MatrixXd z = h.array().rowwise() / n.array();
    const Eigen::MatrixXd a = (cw(blk.w1, hd, hd) * z).colwise() + cb(blk.b1, hd);
    const Eigen::MatrixXd u = activate(cfg_.activation, a);
    h += (cw(blk.w2, hd, hd) * u).colwise() + cb(blk.b2, hd);
    if (cache) {
      cache->norm.push_back(n);
      cache->z.push_back(z);
      cache->a.push_back(a);
      cache->u.push_back(u);
      cache->h.push_back(h);
    }
  }
  return (cw(layout_.w_out, cfg_.out_dim, hd) * h).colwise() + cb(layout_.b_out, cfg_.out_dim);
}

Eigen::MatrixXd Mlp::backward(const Cache& cache, const Eigen::MatrixXd& d_out,
                              Eigen::Ref<Eigen::VectorXd> grad) const {
  const int hd = cfg_.hidden_dim;
  auto gw = [&grad](Eigen::Index off, int rows, int cols) {
    return Eigen::Map<Eigen::MatrixXd>(grad.data() + off, rows, cols);
  };
  auto gb = [&grad](Eigen::Index off, int rows) { return Eigen::Map<Eigen::VectorXd>(grad.data() + off, rows); };

  const Eigen::MatrixXd& h_last = cache.h.back();
  gw(layout_.w_out, cfg_.out_dim, hd) += d_out * h_last.transpose();
  gb(layout_.b_out, cfg_.out_dim) += d_out.rowwise().sum();
  Eigen::MatrixXd dh = cw(layout_.w_out, cfg_.out_dim, hd).transpose() * d_out;

  for (int k = cfg_.n_res_blocks - 1; k >= 0; --k) {
    const auto& blk = layout_.blocks[k];
    gw(blk.w2, hd, hd) += dh * cache.u[k].transpose();
    gb(blk.b2, hd) += dh.rowwise().sum();
    const Eigen::MatrixXd du = cw(blk.w2, hd, hd).transpose() * dh;
    const Eigen::MatrixXd da = du.cwiseProduct(activate_derivative(cfg_.activation, cache.a[k]));
    gw(blk.w1, hd, hd) += da * cache.z[k].transpose();
    gb(blk.b1, hd) += da.rowwise().sum();
    const Eigen::MatrixXd dz = cw(blk.w1, hd, hd).transpose() * da;
    dh += normalize_columns_backward(cache.h[k], dz);
  }

  gw(layout_.w_in, hd, cfg_.in_dim) += dh * cache.input.transpose();
  gb(layout_.b_in, hd) += dh.rowwise().sum();
  return cw(layout_.w_in, hd, cfg_.in_dim).transpose() * dh;
}

Eigen::VectorXd mlp_forward(const Mlp& net, const Eigen::VectorXd& x) {
  return net.forward(x);
}

Eigen::MatrixXd normalize_columns(const Eigen::MatrixXd& x) {
  return x.array().rowwise() / clamped_norms(x).array();
}

Eigen::MatrixXd normalize_columns_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& d) {
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double n = x.col(j).norm();
    if (n > kNormEpsilon) {
      const Eigen::VectorXd z = x.col(j) / n;
      out.col(j) = (d.col(j) - z * z.dot(d.col(j))) / n;
    } else {
      out.col(j) = d.col(j) / kNormEpsilon;
    }
  }
  return out;
}

void write_doubles(std::ostream& os, const double* data, std::size_t n) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
  if (!os) throw Error(ErrorCode::IoError, "write failed");
}

void read_doubles(std::istream& is, double* data, std::size_t n) {
  is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw Error(ErrorCode::IoError, "truncated binary block");
}

void write_checkpoint(std::ostream& os, const Mlp& net) {
  const MlpConfig& c = net.config();
  os << "c3dm-mlp 1 " << c.in_dim << ' ' << c.hidden_dim << ' ' << c.out_dim << ' ' << c.n_res_blocks << ' '
     << to_string(c.activation) << ' ' << net.param_count() << '\n';
  write_doubles(os, net.params().data(), static_cast<std::size_t>(net.param_count()));
}

Mlp read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorCode::IoError, "mlp checkpoint: missing header");
  std::istringstream hs(line);
  std::string magic, act;
  int version = 0;
  MlpConfig c;
  Eigen::Index count = 0;
  hs >> magic >> version >> c.in_dim >> c.hidden_dim >> c.out_dim >> c.n_res_blocks >> act >> count;
  if (!hs || magic != "c3dm-mlp" || version != 1) {
    throw Error(ErrorCode::IoError, "mlp checkpoint: bad header '" + line + "'");
  }
  c.activation = activation_from_string(act);
  Mlp net(c);
  if (count != net.param_count()) throw Error(ErrorCode::IoError, "mlp checkpoint: parameter count mismatch");
  read_doubles(is, net.params().data(), static_cast<std::size_t>(count));
  return net;
}

}  // namespace c3dm::nn
