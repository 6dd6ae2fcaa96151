// Copyright 2026 The crbd Authors.
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

/// \file
/// Layers with explicit forward/backward passes, templated on the scalar type
/// so the same network can run in float (training) or double (gradient checks).

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

#include "crbd/core/error.hpp"
#include "crbd/core/rng.hpp"
#include "crbd/nn/tensor.hpp"

namespace crbd::nn {

template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> velocity;  // optimizer state

  Param() = default;
  Param(std::string n, Shape shape) : name(std::move(n)), value(1, shape), grad(1, shape), velocity(1, shape) {}
};

template <class T>
using NamedBuffer = std::pair<std::string, Tensor<T>*>;

template <class T>
class Layer {
 public:
  virtual ~Layer() = default;

  [[nodiscard]] virtual std::string type() const = 0;
  [[nodiscard]] virtual Shape output_shape(const Shape& in) const = 0;

  /// Computes `out` from `in`. May cache intermediate state for backward().
  virtual void forward(const Tensor<T>& in, Tensor<T>& out, bool training) = 0;

  /// Accumulates parameter gradients and, when `grad_in` is non-null, writes the
  /// input gradient. Must follow the forward() call for the same batch.
  virtual void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& grad_out,
                        Tensor<T>* grad_in) = 0;

  virtual std::vector<Param<T>*> params() { return {}; }
  /// Parameters with layer-relative qualified names (e.g. "conv1.weight").
  virtual std::vector<std::pair<std::string, Param<T>*>> named_params() {
    std::vector<std::pair<std::string, Param<T>*>> out;
    for (auto* p : params()) out.emplace_back(p->name, p);
    return out;
  }
  virtual std::vector<NamedBuffer<T>> buffers() { return {}; }
  virtual void init(Rng& /*rng*/) {}
  [[nodiscard]] virtual nlohmann::json config() const { return {{"type", type()}}; }
};

namespace detail {

template <class T>
void he_normal(Tensor<T>& w, int fan_in, Rng& rng) {
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : w.values()) v = static_cast<T>(rng.normal(0.0, sd));
}

template <class T>
void uniform_fan_in(Tensor<T>& w, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-bound, bound));
}

inline void expect_rank(const Shape& s, std::size_t rank, const char* who) {
  if (s.size() != rank)
    throw ConfigError(std::string(who) + " expects rank-" + std::to_string(rank) + " input, got " + shape_string(s));
}

}  // namespace detail

/// Per-channel (x - mean) / std. Part of the model so the training and
/// evaluation paths always share the same input statistics.
template <class T>
class Normalize final : public Layer<T> {
 public:
  Normalize(std::vector<double> mean, std::vector<double> stddev) : mean_(std::move(mean)), std_(std::move(stddev)) {
    if (mean_.size() != std_.size() || mean_.empty()) throw ConfigError("normalize: mean/std size mismatch");
    for (double s : std_)
      if (!(s > 0.0)) throw ConfigError("normalize: std must be positive");
  }
  std::string type() const override { return "normalize"; }
  Shape output_shape(const Shape& in) const override {
    detail::expect_rank(in, 3, "normalize");
    if (static_cast<std::size_t>(in[0]) != mean_.size()) throw ConfigError("normalize: channel count mismatch");
    return in;
  }
  void forward(const Tensor<T>& in, Tensor<T>& out, bool) override {
    out.resize(in.batch(), in.sample_shape());
    const int c = in.sample_shape()[0];
    const std::size_t plane = in.sample_size() / static_cast<std::size_t>(c);
    for (int n = 0; n < in.batch(); ++n)
      for (int ch = 0; ch < c; ++ch) {
        const T m = static_cast<T>(mean_[ch]);
        const T inv = static_cast<T>(1.0 / std_[ch]);
        const T* src = in.sample(n).data() + ch * plane;
        T* dst = out.sample(n).data() + ch * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = (src[i] - m) * inv;
      }
  }
  void backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& g, Tensor<T>* gin) override {
    if (!gin) return;
    gin->resize(in.batch(), in.sample_shape());
    const int c = in.sample_shape()[0];
    const std::size_t plane = in.sample_size() / static_cast<std::size_t>(c);
    for (int n = 0; n < in.batch(); ++n)
      for (int ch = 0; ch < c; ++ch) {
        const T inv = static_cast<T>(1.0 / std_[ch]);
        const T* src = g.sample(n).data() + ch * plane;
        T* dst = gin->sample(n).data() + ch * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * inv;
      }
  }
  nlohmann::json config() const override { return {{"type", type()}, {"mean", mean_}, {"std", std_}}; }

 private:
  std::vector<double> mean_;
  std::vector<double> std_;
};

/// 2-D convolution via im2col + GEMM.
template <class T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad, bool bias)
      : in_c_(in_channels), out_c_(out_channels), k_(kernel), stride_(stride), pad_(pad), has_bias_(bias),
        weight_("weight", Shape{out_channels, in_channels * kernel * kernel}),
        bias_("bias", Shape{out_channels}) {
    if (in_channels < 1 || out_channels < 1 || kernel < 1 || stride < 1 || pad < 0)
      throw ConfigError("conv: invalid geometry");
  }
  std::string type() const override { return "conv"; }
  Shape output_shape(const Shape& in) const override {
    detail::expect_rank(in, 3, "conv");
    if (in[0] != in_c_)
      throw ConfigError("conv expects " + std::to_string(in_c_) + " input channels, got " + std::to_string(in[0]));
    const int ho = (in[1] + 2 * pad_ - k_) / stride_ + 1;
    const int wo = (in[2] + 2 * pad_ - k_) / stride_ + 1;
    if (ho < 1 || wo < 1) throw ConfigError("conv: input " + shape_string(in) + " too small");
    return {out_c_, ho, wo};
  }
  void init(Rng& rng) override {
    detail::he_normal(weight_.value, in_c_ * k_ * k_, rng);
    bias_.value.fill(T(0));
  }
  std::vector<Param<T>*> params() override {
    if (has_bias_) return {&weight_, &bias_};
    return {&weight_};
  }
  nlohmann::json config() const override {
    return {{"type", type()}, {"in", in_c_},       {"out", out_c_},
            {"kernel", k_},   {"stride", stride_}, {"pad", pad_}, {"bias", has_bias_}};
  }

  void forward(const Tensor<T>& in, Tensor<T>& out, bool) override {
    const Shape os = output_shape(in.sample_shape());
    out.resize(in.batch(), os);
    const Eigen::Index kk = static_cast<Eigen::Index>(in_c_) * k_ * k_;
    const Eigen::Index p = static_cast<Eigen::Index>(os[1]) * os[2];
    CMapMat<T> w(weight_.value.data(), out_c_, kk);
    for (int n = 0; n < in.batch(); ++n) {
      MapMat<T> o(out.sample(n).data(), out_c_, p);
      o.noalias() = w * columns(in, n, os);
      if (has_bias_) {
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias_.value.data(), out_c_);
        o.colwise() += b;
      }
    }
  }

  void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& g, Tensor<T>* gin) override {
    const Shape& os = out.sample_shape();
    const Eigen::Index kk = static_cast<Eigen::Index>(in_c_) * k_ * k_;
    const Eigen::Index p = static_cast<Eigen::Index>(os[1]) * os[2];
    MapMat<T> gw(weight_.grad.data(), out_c_, kk);
    CMapMat<T> w(weight_.value.data(), out_c_, kk);
    if (gin) gin->resize(in.batch(), in.sample_shape());
    for (int n = 0; n < in.batch(); ++n) {
      CMapMat<T> go(g.sample(n).data(), out_c_, p);
      gw.noalias() += go * columns(in, n, os).transpose();
      if (has_bias_) {
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gb(bias_.grad.data(), out_c_);
        gb += go.rowwise().sum();
      }
      if (gin) {
        if (pointwise()) {
          MapMat<T>(gin->sample(n).data(), in_c_, p).noalias() = w.transpose() * go;
        } else {
          dcol_.resize(kk, p);
          dcol_.noalias() = w.transpose() * go;
          col2im(dcol_, gin->sample(n).data(), in.sample_shape(), os);
        }
      }
    }
  }

 private:
  [[nodiscard]] bool pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }

  /// im2col matrix [C*k*k, Ho*Wo] for sample n.
  CMapMat<T> columns(const Tensor<T>& in, int n, const Shape& os) {
    const Eigen::Index kk = static_cast<Eigen::Index>(in_c_) * k_ * k_;
    const Eigen::Index p = static_cast<Eigen::Index>(os[1]) * os[2];
    if (pointwise()) return CMapMat<T>(in.sample(n).data(), kk, p);
    col_.resize(kk, p);
    const int h = in.sample_shape()[1];
    const int wd = in.sample_shape()[2];
    const int ho = os[1];
    const int wo = os[2];
    const T* src = in.sample(n).data();
    T* dst = col_.data();
    for (int c = 0; c < in_c_; ++c)
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= h) {
              std::fill_n(dst, wo, T(0));
              dst += wo;
              continue;
            }
            const T* row = src + (static_cast<std::size_t>(c) * h + iy) * wd;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride_ - pad_ + kx;
              *dst++ = (ix >= 0 && ix < wd) ? row[ix] : T(0);
            }
          }
        }
    return CMapMat<T>(col_.data(), kk, p);
  }

  void col2im(const MatRM<T>& col, T* dst, const Shape& is, const Shape& os) const {
    const int h = is[1];
    const int wd = is[2];
    const int ho = os[1];
    const int wo = os[2];
    std::fill_n(dst, static_cast<std::size_t>(in_c_) * h * wd, T(0));
    const T* src = col.data();
    for (int c = 0; c < in_c_; ++c)
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx)
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= h) {
              src += wo;
              continue;
            }
            T* row = dst + (static_cast<std::size_t>(c) * h + iy) * wd;
            for (int ox = 0; ox < wo; ++ox, ++src) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix >= 0 && ix < wd) row[ix] += *src;
            }
          }
  }

  int in_c_, out_c_, k_, stride_, pad_;
  bool has_bias_;
  Param<T> weight_;
  Param<T> bias_;
  MatRM<T> col_;
  MatRM<T> dcol_;
};

template <class T>
class BatchNorm2d final : public Layer<T> {
 public:
  explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5)
      : c_(channels), momentum_(momentum), eps_(eps), gamma_("weight", Shape{channels}),
        beta_("bias", Shape{channels}), running_mean_(1, Shape{channels}, T(0)),
        running_var_(1, Shape{channels}, T(1)) {}
  std::string type() const override { return "bn"; }
  Shape output_shape(const Shape& in) const override {
    detail::expect_rank(in, 3, "bn");
    if (in[0] != c_) throw ConfigError("bn: channel count mismatch");
    return in;
  }
  void init(Rng&) override {
    gamma_.value.fill(T(1));
    beta_.value.fill(T(0));
    running_mean_.fill(T(0));
    running_var_.fill(T(1));
  }
  std::vector<Param<T>*> params() override { return {&gamma_, &beta_}; }
  std::vector<NamedBuffer<T>> buffers() override {
    return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
  }
  nlohmann::json config() const override { return {{"type", type()}, {"channels", c_}}; }

  void forward(const Tensor<T>& in, Tensor<T>& out, bool training) override {
    out.resize(in.batch(), in.sample_shape());
    xhat_.resize(in.batch(), in.sample_shape());
    inv_std_.assign(static_cast<std::size_t>(c_), T(0));
    trained_pass_ = training;
    const std::size_t plane = in.sample_size() / static_cast<std::size_t>(c_);
    const double count = static_cast<double>(in.batch()) * static_cast<double>(plane);
    for (int c = 0; c < c_; ++c) {
      double mean = 0.0;
      double var = 0.0;
      if (training) {
        for (int n = 0; n < in.batch(); ++n) {
          const T* x = in.sample(n).data() + c * plane;
          for (std::size_t i = 0; i < plane; ++i) mean += static_cast<double>(x[i]);
        }
        mean /= count;
        for (int n = 0; n < in.batch(); ++n) {
          const T* x = in.sample(n).data() + c * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            const double d = static_cast<double>(x[i]) - mean;
            var += d * d;
          }
        }
        var /= count;
        const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
        running_mean_[c] = static_cast<T>((1.0 - momentum_) * static_cast<double>(running_mean_[c]) + momentum_ * mean);
        running_var_[c] = static_cast<T>((1.0 - momentum_) * static_cast<double>(running_var_[c]) + momentum_ * unbiased);
      } else {
        mean = static_cast<double>(running_mean_[c]);
        var = static_cast<double>(running_var_[c]);
      }
      const T inv = static_cast<T>(1.0 / std::sqrt(var + eps_));
      inv_std_[c] = inv;
      const T m = static_cast<T>(mean);
      const T gm = gamma_.value[c];
      const T bt = beta_.value[c];
      for (int n = 0; n < in.batch(); ++n) {
        const T* x = in.sample(n).data() + c * plane;
        T* xh = xhat_.sample(n).data() + c * plane;
        T* y = out.sample(n).data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          xh[i] = (x[i] - m) * inv;
          y[i] = gm * xh[i] + bt;
        }
      }
    }
  }

  void backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& g, Tensor<T>* gin) override {
    const std::size_t plane = in.sample_size() / static_cast<std::size_t>(c_);
    const T count = static_cast<T>(static_cast<double>(in.batch()) * static_cast<double>(plane));
    if (gin) gin->resize(in.batch(), in.sample_shape());
    for (int c = 0; c < c_; ++c) {
      T sum_g = 0;
      T sum_gx = 0;
      for (int n = 0; n < in.batch(); ++n) {
        const T* gp = g.sample(n).data() + c * plane;
        const T* xh = xhat_.sample(n).data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_g += gp[i];
          sum_gx += gp[i] * xh[i];
        }
      }
      gamma_.grad[c] += sum_gx;
      beta_.grad[c] += sum_g;
      if (!gin) continue;
      const T scale = gamma_.value[c] * inv_std_[c];
      for (int n = 0; n < in.batch(); ++n) {
        const T* gp = g.sample(n).data() + c * plane;
        const T* xh = xhat_.sample(n).data() + c * plane;
        T* dst = gin->sample(n).data() + c * plane;
        if (trained_pass_) {
          for (std::size_t i = 0; i < plane; ++i)
            dst[i] = scale * (gp[i] - sum_g / count - xh[i] * sum_gx / count);
        } else {
          for (std::size_t i = 0; i < plane; ++i) dst[i] = scale * gp[i];
        }
      }
    }
  }

 private:
  int c_;
  double momentum_;
  double eps_;
  Param<T> gamma_;
  Param<T> beta_;
  Tensor<T> running_mean_;
  Tensor<T> running_var_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
  bool trained_pass_ = false;
};

template <class T>
class ReLU final : public Layer<T> {
 public:
  std::string type() const override { return "relu"; }
  Shape output_shape(const Shape& in) const override { return in; }
  void forward(const Tensor<T>& in, Tensor<T>& out, bool) override {
    out.resize(in.batch(), in.sample_shape());
    const auto src = in.values();
    auto dst = out.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > T(0) ? src[i] : T(0);
  }
  void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& g, Tensor<T>* gin) override {
    if (!gin) return;
    gin->resize(in.batch(), in.sample_shape());
    const auto o = out.values();
    const auto gv = g.values();
    auto dst = gin->values();
    for (std::size_t i = 0; i < o.size(); ++i) dst[i] = o[i] > T(0) ? gv[i] : T(0);
  }
};

template <class T>
class MaxPool2d final : public Layer<T> {
 public:
  MaxPool2d(int kernel, int stride) : k_(kernel), s_(stride) {
    if (kernel < 1 || stride < 1) throw ConfigError("maxpool: invalid geometry");
  }
  std::string type() const override { return "maxpool"; }
  Shape output_shape(const Shape& in) const override {
    detail::expect_rank(in, 3, "maxpool");
    const int ho = (in[1] - k_) / s_ + 1;
    const int wo = (in[2] - k_) / s_ + 1;
    if (ho < 1 || wo < 1) throw ConfigError("maxpool: input " + shape_string(in) + " too small");
    return {in[0], ho, wo};
  }
  nlohmann::json config() const override { return {{"type", type()}, {"kernel", k_}, {"stride", s_}}; }
  void forward(const Tensor<T>& in, Tensor<T>& out, bool) override {
    const Shape os = output_shape(in.sample_shape());
    out.resize(in.batch(), os);
    argmax_.resize(out.size());
    const int h = in.sample_shape()[1];
    const int w = in.sample_shape()[2];
    std::size_t o = 0;
    for (int n = 0; n < in.batch(); ++n) {
      const T* src = in.sample(n).data();
      for (int c = 0; c < os[0]; ++c)
        for (int oy = 0; oy < os[1]; ++oy)
          for (int ox = 0; ox < os[2]; ++ox, ++o) {
            int best = -1;
            T best_v = -std::numeric_limits<T>::infinity();
            for (int ky = 0; ky < k_; ++ky)
              for (int kx = 0; kx < k_; ++kx) {
                const int idx = (c * h + oy * s_ + ky) * w + ox * s_ + kx;
                if (best < 0 || src[idx] > best_v) {
                  best = idx;
                  best_v = src[idx];
                }
              }
            out[o] = best_v;
            argmax_[o] = best;
          }
    }
  }
  void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& g, Tensor<T>* gin) override {
    if (!gin) return;
    gin->resize(in.batch(), in.sample_shape());
    gin->fill(T(0));
    const std::size_t per = out.sample_size();
    for (int n = 0; n < in.batch(); ++n) {
      T* dst = gin->sample(n).data();
      for (std::size_t i = 0; i < per; ++i) dst[argmax_[n * per + i]] += g[n * per + i];
    }
  }

 private:
  int k_, s_;
  std::vector<std::int32_t> argmax_;
};

/// Averages each channel down to 1x1.
template <class T>
class GlobalAvgPool final : public Layer<T> {
 public:
  std::string type() const override { return "avgpool"; }
  Shape output_shape(const Shape& in) const override {
    detail::expect_rank(in, 3, "avgpool");
    return {in[0], 1, 1};
  }
  void forward(const Tensor<T>& in, Tensor<T>& out, bool) override {
    const int c = in.sample_shape()[0];
    out.resize(in.batch(), {c, 1, 1});
    const std::size_t plane = in.sample_size() / static_cast<std::size_t>(c);
    for (int n = 0; n < in.batch(); ++n)
      for (int ch = 0; ch < c; ++ch) {
        const T* src = in.sample(n).data() + ch * plane;
        T acc = 0;
        for (std::size_t i = 0; i < plane; ++i) acc += src[i];
        out.sample(n)[ch] = acc / static_cast<T>(plane);
      }
  }
  void backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& g, Tensor<T>* gin) override {
    if (!gin) return;
    gin->resize(in.batch(), in.sample_shape());
    const int c = in.sample_shape()[0];
    const std::size_t plane = in.sample_size() / static_cast<std::size_t>(c);
    for (int n = 0; n < in.batch(); ++n)
      for (int ch = 0; ch < c; ++ch) {
        const T v = g.sample(n)[ch] / static_cast<T>(plane);
        std::fill_n(gin->sample(n).data() + ch * plane, plane, v);
      }
  }
};

template <class T>
class Flatten final : public Layer<T> {
 public:
  std::string type() const override { return "flatten"; }
  Shape output_shape(const Shape& in) const override { return {static_cast<int>(shape_size(in))}; }
  void forward(const Tensor<T>& in, Tensor<T>& out, bool) override {
    out = in;
    out.reshape(output_shape(in.sample_shape()));
  }
  void backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& g, Tensor<T>* gin) override {
    if (!gin) return;
    *gin = g;
    gin->reshape(in.sample_shape());
  }
};

template <class T>
class Linear final : public Layer<T> {
 public:
  Linear(int in_features, int out_features)
      : in_(in_features), out_(out_features), weight_("weight", Shape{out_features, in_features}),
        bias_("bias", Shape{out_features}) {
    if (in_features < 1 || out_features < 1) throw ConfigError("linear: invalid size");
  }
  std::string type() const override { return "linear"; }
  Shape output_shape(const Shape& in) const override {
    if (shape_size(in) != static_cast<std::size_t>(in_))
      throw ConfigError("linear expects " + std::to_string(in_) + " inputs, got " + shape_string(in));
    return {out_};
  }
  void init(Rng& rng) override {
    detail::uniform_fan_in(weight_.value, in_, rng);
    detail::uniform_fan_in(bias_.value, in_, rng);
  }
  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }
  nlohmann::json config() const override { return {{"type", type()}, {"in", in_}, {"out", out_}}; }

  [[nodiscard]] Param<T>& weight() { return weight_; }
  [[nodiscard]] Param<T>& bias() { return bias_; }

  void forward(const Tensor<T>& in, Tensor<T>& out, bool) override {
    out.resize(in.batch(), {out_});
    CMapMat<T> w(weight_.value.data(), out_, in_);
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias_.value.data(), out_);
    CMapMat<T> x(in.data(), in.batch(), in_);
    auto y = out.matrix();
    y.noalias() = x * w.transpose();
    y.rowwise() += b;
  }
  void backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& g, Tensor<T>* gin) override {
    CMapMat<T> x(in.data(), in.batch(), in_);
    CMapMat<T> go(g.data(), in.batch(), out_);
    MapMat<T> gw(weight_.grad.data(), out_, in_);
    gw.noalias() += go.transpose() * x;
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(bias_.grad.data(), out_);
    gb += go.colwise().sum();
    if (gin) {
      gin->resize(in.batch(), in.sample_shape());
      CMapMat<T> w(weight_.value.data(), out_, in_);
      MapMat<T>(gin->data(), in.batch(), in_).noalias() = go * w;
    }
  }

 private:
  int in_, out_;
  Param<T> weight_;
  Param<T> bias_;
};

/// ResNet basic block: two 3x3 conv+BN with an identity or projection shortcut.
template <class T>
class BasicBlock final : public Layer<T> {
 public:
  BasicBlock(int in_channels, int out_channels, int stride)
      : in_c_(in_channels), out_c_(out_channels), stride_(stride),
        conv1_(in_channels, out_channels, 3, stride, 1, false), bn1_(out_channels),
        conv2_(out_channels, out_channels, 3, 1, 1, false), bn2_(out_channels) {
    if (stride != 1 || in_channels != out_channels) {
      proj_conv_ = std::make_unique<Conv2d<T>>(in_channels, out_channels, 1, stride, 0, false);
      proj_bn_ = std::make_unique<BatchNorm2d<T>>(out_channels);
    }
  }
  std::string type() const override { return "basicblock"; }
  Shape output_shape(const Shape& in) const override { return conv2_.output_shape(conv1_.output_shape(in)); }
  nlohmann::json config() const override {
    return {{"type", type()}, {"in", in_c_}, {"out", out_c_}, {"stride", stride_}};
  }
  void init(Rng& rng) override {
    conv1_.init(rng);
    bn1_.init(rng);
    conv2_.init(rng);
    bn2_.init(rng);
    if (proj_conv_) {
      proj_conv_->init(rng);
      proj_bn_->init(rng);
    }
  }
  std::vector<std::pair<std::string, Param<T>*>> named_params() override {
    std::vector<std::pair<std::string, Param<T>*>> out;
    auto add = [&](Layer<T>& l, const std::string& prefix) {
      for (auto* p : l.params()) out.emplace_back(prefix + "." + p->name, p);
    };
    add(conv1_, "conv1");
    add(bn1_, "bn1");
    add(conv2_, "conv2");
    add(bn2_, "bn2");
    if (proj_conv_) {
      add(*proj_conv_, "shortcut.conv");
      add(*proj_bn_, "shortcut.bn");
    }
    return out;
  }
  std::vector<Param<T>*> params() override {
    std::vector<Param<T>*> out;
    for (auto& [n, p] : named_params()) out.push_back(p);
    return out;
  }
  std::vector<NamedBuffer<T>> buffers() override {
    std::vector<NamedBuffer<T>> out;
    auto add = [&](Layer<T>& l, const std::string& prefix) {
      for (auto& [n, b] : l.buffers()) out.emplace_back(prefix + "." + n, b);
    };
    add(bn1_, "bn1");
    add(bn2_, "bn2");
    if (proj_bn_) add(*proj_bn_, "shortcut.bn");
    return out;
  }

  void forward(const Tensor<T>& in, Tensor<T>& out, bool training) override {
    conv1_.forward(in, t1_, training);
    bn1_.forward(t1_, t2_, training);
    relu_.forward(t2_, t3_, training);
    conv2_.forward(t3_, t4_, training);
    bn2_.forward(t4_, t5_, training);
    const Tensor<T>* shortcut = &in;
    if (proj_conv_) {
      proj_conv_->forward(in, s1_, training);
      proj_bn_->forward(s1_, s2_, training);
      shortcut = &s2_;
    }
    out.resize(in.batch(), t5_.sample_shape());
    const auto a = t5_.values();
    const auto b = shortcut->values();
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i) {
      const T v = a[i] + b[i];
      o[i] = v > T(0) ? v : T(0);
    }
  }

  void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& g, Tensor<T>* gin) override {
    Tensor<T> gsum(g.batch(), g.sample_shape());
    {
      const auto o = out.values();
      const auto gv = g.values();
      auto d = gsum.values();
      for (std::size_t i = 0; i < o.size(); ++i) d[i] = o[i] > T(0) ? gv[i] : T(0);
    }
    Tensor<T> g4, g3, g2, g1;
    bn2_.backward(t4_, t5_, gsum, &g4);
    conv2_.backward(t3_, t4_, g4, &g3);
    relu_.backward(t2_, t3_, g3, &g2);
    bn1_.backward(t1_, t2_, g2, &g1);
    conv1_.backward(in, t1_, g1, gin);
    if (proj_conv_) {
      Tensor<T> gs1, gx;
      proj_bn_->backward(s1_, s2_, gsum, &gs1);
      proj_conv_->backward(in, s1_, gs1, gin ? &gx : nullptr);
      if (gin) {
        auto d = gin->values();
        const auto s = gx.values();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
      }
    } else if (gin) {
      auto d = gin->values();
      const auto s = gsum.values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
    }
  }

 private:
  int in_c_, out_c_, stride_;
  Conv2d<T> conv1_;
  BatchNorm2d<T> bn1_;
  ReLU<T> relu_;
  Conv2d<T> conv2_;
  BatchNorm2d<T> bn2_;
  std::unique_ptr<Conv2d<T>> proj_conv_;
  std::unique_ptr<BatchNorm2d<T>> proj_bn_;
  Tensor<T> t1_, t2_, t3_, t4_, t5_, s1_, s2_;
};

}  // namespace crbd::nn
