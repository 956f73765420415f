//
// Copyright 2026 The blindadv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

// Minimal dense/convolutional layers with hand-written backward passes.
//
// Layers hold parameters only. A forward pass records every intermediate
// activation in a Trace, and backward() consumes that trace, so a fitted
// network is immutable and may be evaluated from several threads at once.
//
// Shapes: a convolutional activation is (channels x length); a dense
// activation is (features x batch). Flatten bridges the two for one sample.

#ifndef BLINDADV_NN_HPP_
#define BLINDADV_NN_HPP_

#include <cmath>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "blindadv/common.hpp"

namespace blindadv::nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

namespace detail {

template <typename S>
void uniform_fill(Mat<S>& m, S bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-static_cast<double>(bound),
                                           static_cast<double>(bound));
  for (Index j = 0; j < m.cols(); ++j) {
    for (Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<S>(u(rng));
  }
}

}  // namespace detail

// "Same"-padded stride-1 1-D convolution, evaluated as an im2col GEMM.
template <typename S>
struct Conv1d {
  static constexpr int kParamCount = 2;
  int in_channels = 0, out_channels = 0, kernel = 0;
  Mat<S> weight;  // out x (in * kernel); column c*kernel+j is tap j of channel c
  Mat<S> bias;    // out x 1

  Conv1d() = default;
  Conv1d(int in, int out, int k, Rng& rng)
      : in_channels(in), out_channels(out), kernel(k),
        weight(out, in * k), bias(out, 1) {
    const S bound = S(1) / std::sqrt(static_cast<S>(in * k));
    detail::uniform_fill(weight, bound, rng);
    detail::uniform_fill(bias, bound, rng);
  }

  int left_pad() const { return (kernel - 1) / 2; }

  Mat<S> im2col(const Mat<S>& x) const {
    const Index length = x.cols();
    Mat<S> cols = Mat<S>::Zero(static_cast<Index>(in_channels) * kernel, length);
    for (int c = 0; c < in_channels; ++c) {
      for (int j = 0; j < kernel; ++j) {
        const Index shift = j - left_pad();
        const Index t0 = std::max<Index>(0, -shift);
        const Index t1 = std::min<Index>(length, length - shift);
        if (t1 > t0) {
          cols.row(c * kernel + j).segment(t0, t1 - t0) =
              x.row(c).segment(t0 + shift, t1 - t0);
        }
      }
    }
    return cols;
  }

  Mat<S> forward(const Mat<S>& x) const {
    if (x.rows() != in_channels) throw ShapeError("conv1d: channel mismatch");
    Mat<S> y = weight * im2col(x);
    y.colwise() += bias.col(0);
    return y;
  }

  Mat<S> backward(const Mat<S>& x, const Mat<S>& /*y*/, const Mat<S>& dy,
                  std::span<Mat<S>> grads) const {
    if (!grads.empty()) {
      grads[0].noalias() += dy * im2col(x).transpose();
      grads[1] += dy.rowwise().sum();
    }
    const Mat<S> dcols = weight.transpose() * dy;
    const Index length = x.cols();
    Mat<S> dx = Mat<S>::Zero(x.rows(), length);
    for (int c = 0; c < in_channels; ++c) {
      for (int j = 0; j < kernel; ++j) {
        const Index shift = j - left_pad();
        const Index t0 = std::max<Index>(0, -shift);
        const Index t1 = std::min<Index>(length, length - shift);
        if (t1 > t0) {
          dx.row(c).segment(t0 + shift, t1 - t0) +=
              dcols.row(c * kernel + j).segment(t0, t1 - t0);
        }
      }
    }
    return dx;
  }

  std::vector<Mat<S>*> parameters() { return {&weight, &bias}; }
  std::vector<const Mat<S>*> parameters() const { return {&weight, &bias}; }
};

// y = W x + b applied to every column of x.
template <typename S>
struct Dense {
  static constexpr int kParamCount = 2;
  Mat<S> weight;  // out x in
  Mat<S> bias;    // out x 1

  Dense() = default;
  Dense(int in, int out, Rng& rng) : weight(out, in), bias(out, 1) {
    const S bound = S(1) / std::sqrt(static_cast<S>(in));
    detail::uniform_fill(weight, bound, rng);
    detail::uniform_fill(bias, bound, rng);
  }

  Mat<S> forward(const Mat<S>& x) const {
    if (x.rows() != weight.cols()) throw ShapeError("dense: input size mismatch");
    Mat<S> y = weight * x;
    y.colwise() += bias.col(0);
    return y;
  }

  Mat<S> backward(const Mat<S>& x, const Mat<S>& /*y*/, const Mat<S>& dy,
                  std::span<Mat<S>> grads) const {
    if (!grads.empty()) {
      grads[0].noalias() += dy * x.transpose();
      grads[1] += dy.rowwise().sum();
    }
    return weight.transpose() * dy;
  }

  std::vector<Mat<S>*> parameters() { return {&weight, &bias}; }
  std::vector<const Mat<S>*> parameters() const { return {&weight, &bias}; }
};

template <typename S>
struct Relu {
  static constexpr int kParamCount = 0;
  Mat<S> forward(const Mat<S>& x) const { return x.cwiseMax(S(0)); }
  Mat<S> backward(const Mat<S>& /*x*/, const Mat<S>& y, const Mat<S>& dy,
                  std::span<Mat<S>>) const {
    return (y.array() > S(0)).select(dy, S(0));
  }
  std::vector<Mat<S>*> parameters() { return {}; }
  std::vector<const Mat<S>*> parameters() const { return {}; }
};

// Non-overlapping max pooling along the length axis; a ragged tail is dropped.
template <typename S>
struct MaxPool1d {
  static constexpr int kParamCount = 0;
  int window = 2;

  Mat<S> forward(const Mat<S>& x) const {
    const Index out_len = x.cols() / window;
    Mat<S> y(x.rows(), out_len);
    for (Index t = 0; t < out_len; ++t) {
      y.col(t) = x.middleCols(t * window, window).rowwise().maxCoeff();
    }
    return y;
  }

  Mat<S> backward(const Mat<S>& x, const Mat<S>& y, const Mat<S>& dy,
                  std::span<Mat<S>>) const {
    Mat<S> dx = Mat<S>::Zero(x.rows(), x.cols());
    for (Index t = 0; t < y.cols(); ++t) {
      for (Index c = 0; c < x.rows(); ++c) {
        Index best = 0;
        x.row(c).segment(t * window, window).maxCoeff(&best);
        dx(c, t * window + best) += dy(c, t);
      }
    }
    return dx;
  }
  std::vector<Mat<S>*> parameters() { return {}; }
  std::vector<const Mat<S>*> parameters() const { return {}; }
};

// (channels x length) -> (channels*length x 1), column-major.
template <typename S>
struct Flatten {
  static constexpr int kParamCount = 0;
  Mat<S> forward(const Mat<S>& x) const {
    return Eigen::Map<const Mat<S>>(x.data(), x.size(), 1);
  }
  Mat<S> backward(const Mat<S>& x, const Mat<S>& /*y*/, const Mat<S>& dy,
                  std::span<Mat<S>>) const {
    return Eigen::Map<const Mat<S>>(dy.data(), x.rows(), x.cols());
  }
  std::vector<Mat<S>*> parameters() { return {}; }
  std::vector<const Mat<S>*> parameters() const { return {}; }
};

template <typename S>
using Layer = std::variant<Conv1d<S>, Dense<S>, Relu<S>, MaxPool1d<S>, Flatten<S>>;

// Parameter-shaped gradient buffers.
template <typename S>
using Gradients = std::vector<Mat<S>>;

template <typename S>
class Sequential {
 public:
  using Trace = std::vector<Mat<S>>;  // [input, out_0, out_1, ...]

  Sequential() = default;

  template <typename L>
  Sequential& add(L layer) {
    layers_.emplace_back(std::move(layer));
    return *this;
  }

  const std::vector<Layer<S>>& layers() const { return layers_; }
  std::vector<Layer<S>>& layers() { return layers_; }

  Mat<S> forward(const Mat<S>& x) const {
    Mat<S> a = x;
    for (const auto& layer : layers_) {
      a = std::visit([&](const auto& l) { return l.forward(a); }, layer);
    }
    return a;
  }

  Trace forward_trace(const Mat<S>& x) const {
    Trace trace;
    trace.reserve(layers_.size() + 1);
    trace.push_back(x);
    for (const auto& layer : layers_) {
      trace.push_back(
          std::visit([&](const auto& l) { return l.forward(trace.back()); }, layer));
    }
    return trace;
  }

  // Returns d(loss)/d(input). When `grads` is non-empty it must come from
  // zero_gradients() and parameter gradients are accumulated into it.
  Mat<S> backward(const Trace& trace, const Mat<S>& dy,
                  std::span<Mat<S>> grads = {}) const {
    Mat<S> g = dy;
    std::size_t offset = parameter_count();
    for (std::size_t i = layers_.size(); i-- > 0;) {
      g = std::visit(
          [&](const auto& l) {
            using L = std::decay_t<decltype(l)>;
            offset -= L::kParamCount;
            std::span<Mat<S>> mine =
                grads.empty() ? std::span<Mat<S>>{}
                              : grads.subspan(offset, L::kParamCount);
            return l.backward(trace[i], trace[i + 1], g, mine);
          },
          layers_[i]);
    }
    return g;
  }

  std::vector<Mat<S>*> parameters() {
    std::vector<Mat<S>*> out;
    for (auto& layer : layers_) {
      std::visit(
          [&](auto& l) {
            for (Mat<S>* p : l.parameters()) out.push_back(p);
          },
          layer);
    }
    return out;
  }

  std::vector<const Mat<S>*> parameters() const {
    std::vector<const Mat<S>*> out;
    for (const auto& layer : layers_) {
      std::visit(
          [&](const auto& l) {
            for (const Mat<S>* p : l.parameters()) out.push_back(p);
          },
          layer);
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers_) {
      n += std::visit(
          [](const auto& l) {
            return static_cast<std::size_t>(std::decay_t<decltype(l)>::kParamCount);
          },
          layer);
    }
    return n;
  }

  Gradients<S> zero_gradients() const {
    Gradients<S> g;
    for (const Mat<S>* p : parameters()) g.push_back(Mat<S>::Zero(p->rows(), p->cols()));
    return g;
  }

 private:
  std::vector<Layer<S>> layers_;
};

// Adaptive-moment optimizer over an externally owned parameter list.
template <typename S>
class Adam {
 public:
  explicit Adam(S learning_rate, S beta1 = S(0.9), S beta2 = S(0.999),
                S epsilon = S(1e-8))
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

  void step(const std::vector<Mat<S>*>& params, const Gradients<S>& grads) {
    if (params.size() != grads.size()) throw ShapeError("adam: gradient count");
    if (m_.empty()) {
      for (const Mat<S>* p : params) {
        m_.push_back(Mat<S>::Zero(p->rows(), p->cols()));
        v_.push_back(Mat<S>::Zero(p->rows(), p->cols()));
      }
    }
    ++t_;
    const S c1 = S(1) - std::pow(beta1_, static_cast<S>(t_));
    const S c2 = S(1) - std::pow(beta2_, static_cast<S>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (S(1) - beta1_) * grads[i];
      v_[i] = beta2_ * v_[i] + (S(1) - beta2_) * grads[i].cwiseProduct(grads[i]);
      params[i]->array() -=
          lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
  }

  S learning_rate() const { return lr_; }
  long steps() const { return t_; }

 private:
  S lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Mat<S>> m_, v_;
};

// Numerically stable log-softmax of a column vector.
template <typename S>
Mat<S> log_softmax(const Mat<S>& logits) {
  const S m = logits.maxCoeff();
  const S lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).matrix();
}

template <typename S>
Mat<S> softmax(const Mat<S>& logits) {
  return log_softmax(logits).array().exp().matrix();
}

// Cross-entropy of a single logit column against `target`; writes dL/dlogits.
template <typename S>
S cross_entropy(const Mat<S>& logits, int target, Mat<S>* dlogits) {
  const Mat<S> lp = log_softmax(logits);
  if (dlogits) {
    *dlogits = lp.array().exp().matrix();
    (*dlogits)(target, 0) -= S(1);
  }
  return -lp(target, 0);
}

// Binary cross-entropy on a scalar logit; writes dL/dlogit.
template <typename S>
S binary_cross_entropy(S logit, int target, S* dlogit) {
  // log(1 + exp(-|z|)) + max(z, 0) - z*y
  const S loss = std::log1p(std::exp(-std::abs(logit))) + std::max(logit, S(0)) -
                 logit * static_cast<S>(target);
  if (dlogit) *dlogit = S(1) / (S(1) + std::exp(-logit)) - static_cast<S>(target);
  return loss;
}

template <typename S>
S sigmoid(S z) {
  return S(1) / (S(1) + std::exp(-z));
}

}  // namespace blindadv::nn

#endif  // BLINDADV_NN_HPP_
