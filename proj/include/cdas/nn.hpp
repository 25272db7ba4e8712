// Copyright 2026 The CDAS Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Fully-connected networks with hand-written reverse mode.
//
// Batches are column-major: an input batch is an (input_dim x batch)
// matrix, one sample per column. Every network carries a fixed affine
// input standardization, x' = (x - shift) .* scale, applied before the
// first layer; it is part of the model and is differentiated through.

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cdas/rng.hpp"

namespace cdas::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation : std::uint8_t { Silu, Sigmoid, Identity };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::Silu: return "silu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Identity: return "identity";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "silu") return Activation::Silu;
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "identity") return Activation::Identity;
  throw std::invalid_argument("unknown activation: " + s);
}

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation act = Activation::Identity;
};

struct Network {
  Vector input_shift;
  Vector input_scale;
  std::vector<DenseLayer> layers;

  int input_dim() const { return static_cast<int>(input_shift.size()); }
  int output_dim() const {
    return layers.empty() ? input_dim() : static_cast<int>(layers.back().bias.size());
  }
  std::vector<int> dims() const {
    std::vector<int> d{input_dim()};
    for (const auto& l : layers) d.push_back(static_cast<int>(l.bias.size()));
    return d;
  }
  std::size_t num_params() const {
    std::size_t p = 0;
    for (const auto& l : layers) p += l.weight.size() + l.bias.size();
    return p;
  }
};

// Weights and biases uniform in +-1/sqrt(fan_in); identity standardization.
inline Network make_network(std::span<const int> dims,
                            std::span<const Activation> acts, Rng& rng) {
  if (dims.size() < 2 || acts.size() != dims.size() - 1)
    throw std::invalid_argument("need one activation per layer");
  Network net;
  net.input_shift = Vector::Zero(dims[0]);
  net.input_scale = Vector::Ones(dims[0]);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    if (dims[l] < 1 || dims[l + 1] < 1)
      throw std::invalid_argument("layer widths must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    std::uniform_real_distribution<double> u(-bound, bound);
    DenseLayer layer;
    layer.weight.resize(dims[l + 1], dims[l]);
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
        layer.weight(i, j) = u(rng);
    layer.bias.resize(dims[l + 1]);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = u(rng);
    layer.act = acts[l];
    net.layers.push_back(std::move(layer));
  }
  return net;
}

// Hidden layers use `hidden_act`, the output layer is linear.
inline Network make_mlp(int in, std::span<const int> hidden, int out, Rng& rng,
                        Activation hidden_act = Activation::Silu) {
  std::vector<int> dims{in};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  std::vector<Activation> acts(dims.size() - 1, hidden_act);
  acts.back() = Activation::Identity;
  return make_network(dims, acts, rng);
}

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline void activate(Activation a, const Matrix& z, Matrix& out) {
  switch (a) {
    case Activation::Silu:
      out = z.unaryExpr([](double x) { return x * sigmoid(x); });
      return;
    case Activation::Sigmoid:
      out = z.unaryExpr([](double x) { return sigmoid(x); });
      return;
    case Activation::Identity:
      out = z;
      return;
  }
}

// Multiplies `grad` in place by the activation derivative at `z`.
inline void activate_backward(Activation a, const Matrix& z, Matrix& grad) {
  switch (a) {
    case Activation::Silu:
      grad.array() *= z.unaryExpr([](double x) {
                         const double s = sigmoid(x);
                         return s * (1.0 + x * (1.0 - s));
                       }).array();
      return;
    case Activation::Sigmoid:
      grad.array() *= z.unaryExpr([](double x) {
                         const double s = sigmoid(x);
                         return s * (1.0 - s);
                       }).array();
      return;
    case Activation::Identity:
      return;
  }
}

}  // namespace detail

struct ForwardCache {
  std::vector<Matrix> inputs;  // input to each layer (standardized for l=0)
  std::vector<Matrix> pre;     // pre-activation of each layer
};

inline Matrix forward(const Network& net, const Matrix& x,
                      ForwardCache* cache = nullptr) {
  if (x.rows() != net.input_dim())
    throw std::invalid_argument("input dimension mismatch");
  Matrix a = (x.colwise() - net.input_shift).array().colwise() *
             net.input_scale.array();
  if (cache) {
    cache->inputs.resize(net.layers.size());
    cache->pre.resize(net.layers.size());
  }
  Matrix z, out;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    z.noalias() = layer.weight * a;
    z.colwise() += layer.bias;
    detail::activate(layer.act, z, out);
    if (cache) {
      cache->inputs[l] = std::move(a);
      cache->pre[l] = z;
    }
    a = std::move(out);
  }
  return a;
}

inline Vector forward(const Network& net, std::span<const double> x) {
  const Eigen::Map<const Vector> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  return forward(net, Matrix(xv)).col(0);
}

struct Gradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;

  static Gradients zeros_like(const Network& net) {
    Gradients g;
    for (const auto& l : net.layers) {
      g.weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      g.bias.push_back(Vector::Zero(l.bias.size()));
    }
    return g;
  }
};

// Reverse pass from d(loss)/d(output) for a whole batch. Parameter
// gradients are summed over the batch; `input_grad` (if given) receives
// d(loss)/d(raw input), one column per sample.
inline void backward(const Network& net, const ForwardCache& cache,
                     const Matrix& output_grad, Gradients* params,
                     Matrix* input_grad) {
  if (output_grad.rows() != net.output_dim())
    throw std::invalid_argument("output gradient dimension mismatch");
  if (params) *params = Gradients::zeros_like(net);
  Matrix g = output_grad;
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const auto& layer = net.layers[li];
    detail::activate_backward(layer.act, cache.pre[li], g);
    if (params) {
      params->weight[li].noalias() = g * cache.inputs[li].transpose();
      params->bias[li] = g.rowwise().sum();
    }
    if (li > 0 || input_grad) {
      Matrix next;
      next.noalias() = layer.weight.transpose() * g;
      g = std::move(next);
    }
  }
  if (input_grad) {
    if (net.layers.empty()) g = output_grad;
    *input_grad = g.array().colwise() * net.input_scale.array();
  }
}

inline Gradients param_gradients(const Network& net, std::span<const double> input,
                                 std::span<const double> loss_grad_at_output) {
  if (static_cast<int>(input.size()) != net.input_dim() ||
      static_cast<int>(loss_grad_at_output.size()) != net.output_dim())
    throw std::invalid_argument("dimension mismatch");
  ForwardCache cache;
  const Eigen::Map<const Vector> xv(input.data(), static_cast<Eigen::Index>(input.size()));
  forward(net, Matrix(xv), &cache);
  const Eigen::Map<const Vector> gv(loss_grad_at_output.data(),
                                    static_cast<Eigen::Index>(loss_grad_at_output.size()));
  Gradients g;
  backward(net, cache, Matrix(gv), &g, nullptr);
  return g;
}

// Gradient of a scalar-output network w.r.t. each input column.
inline Matrix input_gradients(const Network& net, const Matrix& x,
                              Vector* values = nullptr) {
  if (net.output_dim() != 1)
    throw std::invalid_argument("input_gradients needs a scalar output");
  ForwardCache cache;
  const Matrix y = forward(net, x, &cache);
  if (values) *values = y.row(0).transpose();
  Matrix dx;
  backward(net, cache, Matrix::Ones(1, x.cols()), nullptr, &dx);
  return dx;
}

inline Vector input_gradients(const Network& net, std::span<const double> input) {
  const Eigen::Map<const Vector> xv(input.data(), static_cast<Eigen::Index>(input.size()));
  return input_gradients(net, Matrix(xv)).col(0);
}

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  Gradients m;
  Gradients v;
};

inline AdamState make_adam(const Network& net, double lr) {
  AdamState s;
  s.lr = lr;
  s.m = Gradients::zeros_like(net);
  s.v = Gradients::zeros_like(net);
  return s;
}

inline void adam_step(Network& net, AdamState& st, const Gradients& g) {
  if (st.m.weight.size() != net.layers.size()) {
    st.m = Gradients::zeros_like(net);
    st.v = Gradients::zeros_like(net);
  }
  st.step += 1;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  const double step_size = st.lr * std::sqrt(c2) / c1;
  const double eps_hat = st.eps * std::sqrt(c2);
  auto update = [&](auto& p, auto& m, auto& v, const auto& grad) {
    m = st.beta1 * m + (1.0 - st.beta1) * grad;
    v = st.beta2 * v + (1.0 - st.beta2) * grad.cwiseProduct(grad);
    p.array() -= step_size * m.array() / (v.array().sqrt() + eps_hat);
  };
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    update(net.layers[l].weight, st.m.weight[l], st.v.weight[l], g.weight[l]);
    update(net.layers[l].bias, st.m.bias[l], st.v.bias[l], g.bias[l]);
  }
}

// ---------------------------------------------------------------------------
// Model file: a text header terminated by "end\n", then little-endian
// float64 arrays: input_shift, input_scale, and per layer the weight
// (row-major, out x in) followed by the bias.
//
//   cdas-mlp 1
//   dims 176 128 128 128
//   activations silu silu identity
//   params <count>
//   end

namespace detail {

inline void write_f64(std::ostream& os, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

inline double read_f64(std::istream& is) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), 8))
    throw std::runtime_error("truncated model parameters");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= std::uint64_t(buf[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

inline void write_network(std::ostream& os, const Network& net) {
  os << "cdas-mlp 1\ndims";
  for (int d : net.dims()) os << ' ' << d;
  os << "\nactivations";
  for (const auto& l : net.layers) os << ' ' << to_string(l.act);
  os << "\nparams " << net.num_params() << "\nend\n";
  for (Eigen::Index i = 0; i < net.input_shift.size(); ++i)
    detail::write_f64(os, net.input_shift(i));
  for (Eigen::Index i = 0; i < net.input_scale.size(); ++i)
    detail::write_f64(os, net.input_scale(i));
  for (const auto& l : net.layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
        detail::write_f64(os, l.weight(r, c));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) detail::write_f64(os, l.bias(r));
  }
}

inline Network read_network(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "cdas-mlp 1")
    throw std::runtime_error("not a cdas-mlp v1 model");
  std::vector<int> dims;
  std::vector<Activation> acts;
  std::size_t params = 0;
  while (std::getline(is, line) && line != "end") {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "dims") {
      for (int d; ls >> d;) dims.push_back(d);
    } else if (key == "activations") {
      for (std::string a; ls >> a;) acts.push_back(parse_activation(a));
    } else if (key == "params") {
      ls >> params;
    } else {
      throw std::runtime_error("unknown model header key: " + key);
    }
  }
  if (line != "end") throw std::runtime_error("model header not terminated");
  if (dims.size() < 1 || acts.size() + 1 != dims.size())
    throw std::runtime_error("inconsistent model header");
  Network net;
  net.input_shift.resize(dims[0]);
  net.input_scale.resize(dims[0]);
  for (int i = 0; i < dims[0]; ++i) net.input_shift(i) = detail::read_f64(is);
  for (int i = 0; i < dims[0]; ++i) net.input_scale(i) = detail::read_f64(is);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    DenseLayer layer;
    layer.act = acts[l];
    layer.weight.resize(dims[l + 1], dims[l]);
    for (int r = 0; r < dims[l + 1]; ++r)
      for (int c = 0; c < dims[l]; ++c) layer.weight(r, c) = detail::read_f64(is);
    layer.bias.resize(dims[l + 1]);
    for (int r = 0; r < dims[l + 1]; ++r) layer.bias(r) = detail::read_f64(is);
    net.layers.push_back(std::move(layer));
  }
  if (net.num_params() != params)
    throw std::runtime_error("parameter count does not match header");
  return net;
}

}  // namespace cdas::nn
