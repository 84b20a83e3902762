#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffspeech/rng.hpp"
#include "diffspeech/types.hpp"

namespace diffspeech {

// Small fully-connected network with tanh hidden activations and a linear
// output layer. Batches are stored column-wise: X is in_dim x B. Forward and
// backward passes are explicit so gradients stay finite-difference checkable.
template <typename Scalar>
struct DenseLayer {
  Mat<Scalar> W;  // out x in
  Vec<Scalar> b;  // out
};

template <typename Scalar>
struct MlpCache {
  std::vector<Mat<Scalar>> acts;  // acts[0] = input, acts[l] = output of layer l
};

template <typename Scalar>
struct MlpGrads {
  std::vector<DenseLayer<Scalar>> layers;
};

template <typename Scalar>
struct Mlp {
  std::vector<DenseLayer<Scalar>> layers;

  int in_dim() const { return static_cast<int>(layers.front().W.cols()); }
  int out_dim() const { return static_cast<int>(layers.back().W.rows()); }
  size_t n_params() const {
    size_t n = 0;
    for (const auto& l : layers) n += static_cast<size_t>(l.W.size() + l.b.size());
    return n;
  }

  // dims = {in, hidden..., out}; Glorot-uniform weights, zero biases.
  static Mlp init(const std::vector<int>& dims, Rng& rng) {
    Mlp net;
    for (size_t l = 1; l < dims.size(); ++l) {
      DenseLayer<Scalar> layer;
      const int fan_in = dims[l - 1];
      const int fan_out = dims[l];
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      layer.W.resize(fan_out, fan_in);
      for (int i = 0; i < fan_out; ++i)
        for (int j = 0; j < fan_in; ++j)
          layer.W(i, j) = static_cast<Scalar>(rng.uniform(-bound, bound));
      layer.b = Vec<Scalar>::Zero(fan_out);
      net.layers.push_back(std::move(layer));
    }
    return net;
  }

  static Mlp zeros(const std::vector<int>& dims) {
    Mlp net;
    for (size_t l = 1; l < dims.size(); ++l)
      net.layers.push_back({Mat<Scalar>::Zero(dims[l], dims[l - 1]), Vec<Scalar>::Zero(dims[l])});
    return net;
  }

  Mat<Scalar> forward(const Mat<Scalar>& X, MlpCache<Scalar>* cache = nullptr) const {
    if (X.rows() != in_dim())
      throw ShapeError("mlp forward: input has " + std::to_string(X.rows()) +
                       " rows, expected " + std::to_string(in_dim()));
    if (!X.allFinite()) throw NumericError("mlp forward: non-finite input");
    if (cache) {
      cache->acts.clear();
      cache->acts.push_back(X);
    }
    Mat<Scalar> a = X;
    for (size_t l = 0; l < layers.size(); ++l) {
      Mat<Scalar> z = (layers[l].W * a).colwise() + layers[l].b;
      a = (l + 1 < layers.size()) ? z.array().tanh().matrix() : std::move(z);
      if (cache) cache->acts.push_back(a);
    }
    return a;
  }

  // Backpropagates d_out = dL/d(output). Returns parameter gradients and, if
  // d_input is non-null, dL/d(input).
  MlpGrads<Scalar> backward(const MlpCache<Scalar>& cache, const Mat<Scalar>& d_out,
                            Mat<Scalar>* d_input = nullptr) const {
    MlpGrads<Scalar> grads;
    grads.layers.resize(layers.size());
    Mat<Scalar> delta = d_out;
    for (size_t l = layers.size(); l-- > 0;) {
      const Mat<Scalar>& a_prev = cache.acts[l];
      grads.layers[l].W = delta * a_prev.transpose();
      grads.layers[l].b = delta.rowwise().sum();
      if (l > 0) {
        // tanh'(z) = 1 - a^2 with a = tanh(z) = cache.acts[l]
        delta = (layers[l].W.transpose() * delta).cwiseProduct(
            (Scalar(1) - cache.acts[l].array().square()).matrix());
      } else if (d_input) {
        *d_input = layers[0].W.transpose() * delta;
      }
    }
    return grads;
  }

  bool all_finite() const {
    for (const auto& l : layers)
      if (!l.W.allFinite() || !l.b.allFinite()) return false;
    return true;
  }

  // Flat parameter views, used by finite-difference checks.
  Scalar get_param(size_t idx) const { return *param_ptr(idx); }
  void set_param(size_t idx, Scalar v) { *const_cast<Scalar*>(param_ptr(idx)) = v; }
  Scalar grad_at(const MlpGrads<Scalar>& g, size_t idx) const {
    size_t off = idx;
    for (size_t l = 0; l < layers.size(); ++l) {
      const size_t nw = static_cast<size_t>(layers[l].W.size());
      const size_t nb = static_cast<size_t>(layers[l].b.size());
      if (off < nw) return g.layers[l].W.data()[off];
      off -= nw;
      if (off < nb) return g.layers[l].b.data()[off];
      off -= nb;
    }
    throw DomainError("grad index out of range");
  }

 private:
  const Scalar* param_ptr(size_t idx) const {
    size_t off = idx;
    for (const auto& l : layers) {
      const size_t nw = static_cast<size_t>(l.W.size());
      const size_t nb = static_cast<size_t>(l.b.size());
      if (off < nw) return l.W.data() + off;
      off -= nw;
      if (off < nb) return l.b.data() + off;
      off -= nb;
    }
    throw DomainError("param index out of range");
  }
};

// Plain momentum SGD with a fixed step: v <- momentum * v - lr * g; w <- w + v.
template <typename Scalar>
struct MomentumSgd {
  Scalar lr;
  Scalar momentum;
  std::vector<DenseLayer<Scalar>> velocity;

  MomentumSgd(Scalar lr_, Scalar momentum_, const Mlp<Scalar>& net) : lr(lr_), momentum(momentum_) {
    for (const auto& l : net.layers)
      velocity.push_back({Mat<Scalar>::Zero(l.W.rows(), l.W.cols()), Vec<Scalar>::Zero(l.b.size())});
  }

  void step(Mlp<Scalar>& net, const MlpGrads<Scalar>& grads) {
    for (size_t l = 0; l < net.layers.size(); ++l) {
      velocity[l].W = momentum * velocity[l].W - lr * grads.layers[l].W;
      velocity[l].b = momentum * velocity[l].b - lr * grads.layers[l].b;
      net.layers[l].W += velocity[l].W;
      net.layers[l].b += velocity[l].b;
    }
  }
};

// Column-wise stable softmax / log-softmax.
template <typename Scalar>
Mat<Scalar> softmax_columns(const Mat<Scalar>& logits) {
  Mat<Scalar> p(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const Scalar m = logits.col(c).maxCoeff();
    Vec<Scalar> e = (logits.col(c).array() - m).exp();
    p.col(c) = e / e.sum();
  }
  return p;
}

template <typename Scalar>
Mat<Scalar> log_softmax_columns(const Mat<Scalar>& logits) {
  Mat<Scalar> lp(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const Scalar m = logits.col(c).maxCoeff();
    const Scalar lse = m + std::log((logits.col(c).array() - m).exp().sum());
    lp.col(c) = logits.col(c).array() - lse;
  }
  return lp;
}

// Checkpoint serialization shared by all network types. Weights are stored as
// row-major arrays per layer.
template <typename Scalar>
nlohmann::json mlp_to_json(const Mlp<Scalar>& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers) {
    nlohmann::json w = nlohmann::json::array();
    for (int i = 0; i < l.W.rows(); ++i)
      for (int j = 0; j < l.W.cols(); ++j) w.push_back(static_cast<double>(l.W(i, j)));
    nlohmann::json b = nlohmann::json::array();
    for (int i = 0; i < l.b.size(); ++i) b.push_back(static_cast<double>(l.b(i)));
    layers.push_back({{"rows", l.W.rows()}, {"cols", l.W.cols()}, {"w", w}, {"b", b}});
  }
  return layers;
}

template <typename Scalar>
Mlp<Scalar> mlp_from_json(const nlohmann::json& layers) {
  Mlp<Scalar> net;
  for (const auto& jl : layers) {
    DenseLayer<Scalar> l;
    const int rows = jl.at("rows").get<int>();
    const int cols = jl.at("cols").get<int>();
    const auto& w = jl.at("w");
    const auto& b = jl.at("b");
    if (static_cast<int>(w.size()) != rows * cols || static_cast<int>(b.size()) != rows)
      throw IoError("checkpoint: layer size fields disagree with weight array lengths");
    l.W.resize(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j)
        l.W(i, j) = static_cast<Scalar>(w[static_cast<size_t>(i * cols + j)].get<double>());
    l.b.resize(rows);
    for (int i = 0; i < rows; ++i) l.b(i) = static_cast<Scalar>(b[static_cast<size_t>(i)].get<double>());
    net.layers.push_back(std::move(l));
  }
  if (net.layers.empty()) throw IoError("checkpoint: no layers");
  if (!net.all_finite()) throw IoError("checkpoint: non-finite parameters");
  return net;
}

}  // namespace diffspeech
