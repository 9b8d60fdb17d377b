#include "layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "cvs/error.hpp"

namespace cvs {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

template <typename T>
struct Param {
  Tensor<T> value;
  Tensor<T> grad;

  explicit Param(std::vector<int> shape) : value(shape), grad(std::move(shape)) {}
};

// Unfolds kernel-sized patches of a C x H x W image into a (C*k*k) x (oh*ow) matrix.
template <typename T>
void im2col(const T* img, int channels, int height, int width, int k, int s, int p, int d, int oh, int ow, T* col) {
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  for (int c = 0; c < channels; ++c)
    for (int kh = 0; kh < k; ++kh)
      for (int kw = 0; kw < k; ++kw) {
        T* row = col + ((static_cast<std::size_t>(c) * k + kh) * k + kw) * plane;
        for (int y = 0; y < oh; ++y) {
          T* dst = row + static_cast<std::size_t>(y) * ow;
          const int iy = y * s - p + kh * d;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          const T* src = img + (static_cast<std::size_t>(c) * height + iy) * width;
          for (int x = 0; x < ow; ++x) {
            const int ix = x * s - p + kw * d;
            dst[x] = (ix >= 0 && ix < width) ? src[ix] : T(0);
          }
        }
      }
}

// Adjoint of im2col: scatters patch columns back into the image, accumulating.
template <typename T>
void col2im(const T* col, int channels, int height, int width, int k, int s, int p, int d, int oh, int ow, T* img) {
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  for (int c = 0; c < channels; ++c)
    for (int kh = 0; kh < k; ++kh)
      for (int kw = 0; kw < k; ++kw) {
        const T* row = col + ((static_cast<std::size_t>(c) * k + kh) * k + kw) * plane;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * s - p + kh * d;
          if (iy < 0 || iy >= height) continue;
          const T* src = row + static_cast<std::size_t>(y) * ow;
          T* dst = img + (static_cast<std::size_t>(c) * height + iy) * width;
          for (int x = 0; x < ow; ++x) {
            const int ix = x * s - p + kw * d;
            if (ix >= 0 && ix < width) dst[ix] += src[x];
          }
        }
      }
}

template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng, double stddev) {
  for (auto& v : t.values()) v = static_cast<T>(stddev * standard_normal(rng));
}

template <typename T>
const Tensor<T>& require_cache(const Tensor<T>& cached, const std::string& id) {
  if (cached.empty()) throw Error(id + ": backward called without a training-mode forward pass");
  return cached;
}

// ---------------------------------------------------------------------------

template <typename T>
class Sequential final : public Module<T> {
 public:
  Sequential(const std::vector<LayerSpec>& layers, const FeatureShape& in, const std::string& id)
      : Module<T>(id, in, in) {
    FeatureShape shape = in;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto m = make_module<T>(layers[i], shape, id + "." + std::to_string(i));
      shape = m->output_shape();
      children_.push_back(std::move(m));
    }
    this->out_ = shape;
  }

  Tensor<T> forward(const Tensor<T>& x, ForwardContext& ctx) override {
    if (children_.empty()) return x;
    Tensor<T> h = children_.front()->forward(x, ctx);
    for (std::size_t i = 1; i < children_.size(); ++i) h = children_[i]->forward(h, ctx);
    return h;
  }

  Tensor<T> backward(const Tensor<T>& grad) override {
    if (children_.empty()) return grad;
    Tensor<T> g = children_.back()->backward(grad);
    for (std::size_t i = children_.size() - 1; i-- > 0;) g = children_[i]->backward(g);
    return g;
  }

  void collect(std::vector<StateRef<T>>& params, std::vector<StateRef<T>>& buffers) override {
    for (auto& c : children_) c->collect(params, buffers);
  }

  void initialize(Rng& rng) override {
    for (auto& c : children_) c->initialize(rng);
  }

 private:
  std::vector<std::unique_ptr<Module<T>>> children_;
};

template <typename T>
class Conv2d final : public Module<T> {
 public:
  Conv2d(const LayerSpec& l, const FeatureShape& in, const FeatureShape& out, const std::string& id)
      : Module<T>(id, in, out),
        k_(l.kernel),
        s_(l.stride),
        p_(l.padding),
        d_(l.dilation),
        has_bias_(l.bias),
        weight_({out.channels, in.channels, l.kernel, l.kernel}),
        bias_({l.bias ? out.channels : 0}) {}

  Tensor<T> forward(const Tensor<T>& x, ForwardContext& ctx) override {
    this->check_input(x);
    const int n = x.dim(0);
    const auto [cin, h, w, flat_in] = this->in_;
    const auto [cout, oh, ow, flat_out] = this->out_;
    const int rows = cin * k_ * k_;
    const int hw = oh * ow;
    Tensor<T> y({n, cout, oh, ow});
    std::vector<T> col(pointwise() ? 0 : static_cast<std::size_t>(rows) * hw);
    CMapR<T> wm(weight_.value.data(), cout, rows);
    for (int i = 0; i < n; ++i) {
      const T* xi = x.data() + static_cast<std::size_t>(i) * cin * h * w;
      MapR<T> yi(y.data() + static_cast<std::size_t>(i) * cout * hw, cout, hw);
      if (pointwise()) {
        yi.noalias() = wm * CMapR<T>(xi, cin, hw);
      } else {
        im2col(xi, cin, h, w, k_, s_, p_, d_, oh, ow, col.data());
        yi.noalias() = wm * CMapR<T>(col.data(), rows, hw);
      }
      if (has_bias_)
        for (int c = 0; c < cout; ++c) yi.row(c).array() += bias_.value[c];
    }
    input_ = ctx.training ? x : Tensor<T>{};
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad) override {
    const Tensor<T>& x = require_cache(input_, this->id_);
    const int n = x.dim(0);
    const auto [cin, h, w, flat_in] = this->in_;
    const auto [cout, oh, ow, flat_out] = this->out_;
    const int rows = cin * k_ * k_;
    const int hw = oh * ow;
    Tensor<T> dx(x.shape());
    std::vector<T> col(pointwise() ? 0 : static_cast<std::size_t>(rows) * hw);
    MatR<T> dcol(rows, hw);
    CMapR<T> wm(weight_.value.data(), cout, rows);
    MapR<T> dw(weight_.grad.data(), cout, rows);
    for (int i = 0; i < n; ++i) {
      const T* xi = x.data() + static_cast<std::size_t>(i) * cin * h * w;
      CMapR<T> dy(grad.data() + static_cast<std::size_t>(i) * cout * hw, cout, hw);
      T* dxi = dx.data() + static_cast<std::size_t>(i) * cin * h * w;
      if (pointwise()) {
        dw.noalias() += dy * CMapR<T>(xi, cin, hw).transpose();
        MapR<T>(dxi, cin, hw).noalias() = wm.transpose() * dy;
      } else {
        im2col(xi, cin, h, w, k_, s_, p_, d_, oh, ow, col.data());
        dw.noalias() += dy * CMapR<T>(col.data(), rows, hw).transpose();
        dcol.noalias() = wm.transpose() * dy;
        col2im(dcol.data(), cin, h, w, k_, s_, p_, d_, oh, ow, dxi);
      }
      // plain loop: Eigen's vectorized sum peels by address, which makes the rounding depend on
      // where the buffer happens to be allocated
      if (has_bias_)
        for (int c = 0; c < cout; ++c) {
          const T* row = grad.data() + (static_cast<std::size_t>(i) * cout + c) * hw;
          T acc = 0;
          for (int j = 0; j < hw; ++j) acc += row[j];
          bias_.grad[c] += acc;
        }
    }
    return dx;
  }

  void collect(std::vector<StateRef<T>>& params, std::vector<StateRef<T>>&) override {
    params.push_back({this->id_ + ".weight", &weight_.value, &weight_.grad});
    if (has_bias_) params.push_back({this->id_ + ".bias", &bias_.value, &bias_.grad});
  }

  void initialize(Rng& rng) override {
    fill_normal(weight_.value, rng, std::sqrt(2.0 / (this->in_.channels * k_ * k_)));
    bias_.value.fill(T(0));
  }

 private:
  bool pointwise() const { return k_ == 1 && s_ == 1 && p_ == 0; }

  int k_, s_, p_, d_;
  bool has_bias_;
  Param<T> weight_;
  Param<T> bias_;
  Tensor<T> input_;
};

template <typename T>
class TransposedConv2d final : public Module<T> {
 public:
  TransposedConv2d(const LayerSpec& l, const FeatureShape& in, const FeatureShape& out, const std::string& id)
      : Module<T>(id, in, out),
        k_(l.kernel),
        s_(l.stride),
        p_(l.padding),
        has_bias_(l.bias),
        weight_({in.channels, out.channels, l.kernel, l.kernel}),
        bias_({l.bias ? out.channels : 0}) {}

  Tensor<T> forward(const Tensor<T>& x, ForwardContext& ctx) override {
    this->check_input(x);
    const int n = x.dim(0);
    const auto [cin, h, w, flat_in] = this->in_;
    const auto [cout, oh, ow, flat_out] = this->out_;
    const int rows = cout * k_ * k_;
    Tensor<T> y({n, cout, oh, ow});
    MatR<T> col(rows, h * w);
    CMapR<T> wm(weight_.value.data(), cin, rows);
    for (int i = 0; i < n; ++i) {
      CMapR<T> xi(x.data() + static_cast<std::size_t>(i) * cin * h * w, cin, h * w);
      col.noalias() = wm.transpose() * xi;
      T* yi = y.data() + static_cast<std::size_t>(i) * cout * oh * ow;
      col2im(col.data(), cout, oh, ow, k_, s_, p_, 1, h, w, yi);
      if (has_bias_)
        for (int c = 0; c < cout; ++c) {
          T* plane = yi + static_cast<std::size_t>(c) * oh * ow;
          for (int j = 0; j < oh * ow; ++j) plane[j] += bias_.value[c];
        }
    }
    input_ = ctx.training ? x : Tensor<T>{};
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad) override {
    const Tensor<T>& x = require_cache(input_, this->id_);
    const int n = x.dim(0);
    const auto [cin, h, w, flat_in] = this->in_;
    const auto [cout, oh, ow, flat_out] = this->out_;
    const int rows = cout * k_ * k_;
    Tensor<T> dx(x.shape());
    std::vector<T> dcol(static_cast<std::size_t>(rows) * h * w);
    CMapR<T> wm(weight_.value.data(), cin, rows);
    MapR<T> dw(weight_.grad.data(), cin, rows);
    for (int i = 0; i < n; ++i) {
      const T* gi = grad.data() + static_cast<std::size_t>(i) * cout * oh * ow;
      im2col(gi, cout, oh, ow, k_, s_, p_, 1, h, w, dcol.data());
      CMapR<T> dc(dcol.data(), rows, h * w);
      CMapR<T> xi(x.data() + static_cast<std::size_t>(i) * cin * h * w, cin, h * w);
      dw.noalias() += xi * dc.transpose();
      MapR<T>(dx.data() + static_cast<std::size_t>(i) * cin * h * w, cin, h * w).noalias() = wm * dc;
      if (has_bias_)
        for (int c = 0; c < cout; ++c) {
          const T* plane = gi + static_cast<std::size_t>(c) * oh * ow;
          T sum = 0;
          for (int j = 0; j < oh * ow; ++j) sum += plane[j];
          bias_.grad[c] += sum;
        }
    }
    return dx;
  }

  void collect(std::vector<StateRef<T>>& params, std::vector<StateRef<T>>&) override {
    params.push_back({this->id_ + ".weight", &weight_.value, &weight_.grad});
    if (has_bias_) params.push_back({this->id_ + ".bias", &bias_.value, &bias_.grad});
  }

  void initialize(Rng& rng) override {
    const double fan_in = std::max(1.0, double(this->in_.channels) * k_ * k_ / (double(s_) * s_));
    fill_normal(weight_.value, rng, std::sqrt(2.0 / fan_in));
    bias_.value.fill(T(0));
  }

 private:
  int k_, s_, p_;
  bool has_bias_;
  Param<T> weight_;
  Param<T> bias_;
  Tensor<T> input_;
};

template <typename T>
class BatchNorm final : public Module<T> {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm(const FeatureShape& in, const std::string& id)
      : Module<T>(id, in, in),
        gamma_({in.channels}),
        beta_({in.channels}),
        running_mean_({in.channels}),
        running_var_({in.channels}) {
    gamma_.value.fill(T(1));
    running_var_.value.fill(T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, ForwardContext& ctx) override {
    this->check_input(x);
    const int n = x.dim(0);
    const int c = this->in_.channels;
    const std::size_t plane = this->in_.flat ? 1 : static_cast<std::size_t>(this->in_.height) * this->in_.width;
    const std::size_t count = plane * n;
    Tensor<T> y(x.shape());
    xhat_ = Tensor<T>(x.shape());
    inv_std_.assign(c, T(0));
    trained_batch_ = ctx.training;
    for (int ch = 0; ch < c; ++ch) {
      double mean, var;
      if (ctx.training) {
        double sum = 0.0;
        for (int i = 0; i < n; ++i) {
          const T* p = x.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
          for (std::size_t j = 0; j < plane; ++j) sum += p[j];
        }
        mean = sum / double(count);
        double sq = 0.0;
        for (int i = 0; i < n; ++i) {
          const T* p = x.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
          for (std::size_t j = 0; j < plane; ++j) sq += (p[j] - mean) * (p[j] - mean);
        }
        var = sq / double(count);
        const double unbiased = count > 1 ? var * double(count) / double(count - 1) : var;
        running_mean_.value[ch] = static_cast<T>((1 - kMomentum) * running_mean_.value[ch] + kMomentum * mean);
        running_var_.value[ch] = static_cast<T>((1 - kMomentum) * running_var_.value[ch] + kMomentum * unbiased);
      } else {
        mean = running_mean_.value[ch];
        var = running_var_.value[ch];
      }
      const T inv = static_cast<T>(1.0 / std::sqrt(var + kEps));
      inv_std_[ch] = inv;
      const T g = gamma_.value[ch];
      const T b = beta_.value[ch];
      const T m = static_cast<T>(mean);
      for (int i = 0; i < n; ++i) {
        const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          const T xh = (x[off + j] - m) * inv;
          xhat_[off + j] = xh;
          y[off + j] = g * xh + b;
        }
      }
    }
    if (!ctx.training) xhat_ = Tensor<T>{};
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad) override {
    const Tensor<T>& xhat = xhat_;
    if (xhat.empty()) throw Error(this->id_ + ": backward called without a training-mode forward pass");
    const int n = grad.dim(0);
    const int c = this->in_.channels;
    const std::size_t plane = this->in_.flat ? 1 : static_cast<std::size_t>(this->in_.height) * this->in_.width;
    const double count = double(plane) * n;
    Tensor<T> dx(grad.shape());
    for (int ch = 0; ch < c; ++ch) {
      double dgamma = 0.0, dbeta = 0.0;
      for (int i = 0; i < n; ++i) {
        const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          dgamma += grad[off + j] * xhat[off + j];
          dbeta += grad[off + j];
        }
      }
      gamma_.grad[ch] += static_cast<T>(dgamma);
      beta_.grad[ch] += static_cast<T>(dbeta);
      const double scale = double(gamma_.value[ch]) * inv_std_[ch];
      for (int i = 0; i < n; ++i) {
        const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          if (trained_batch_)
            dx[off + j] = static_cast<T>(scale * (grad[off + j] - dbeta / count - xhat[off + j] * dgamma / count));
          else
            dx[off + j] = static_cast<T>(scale * grad[off + j]);
        }
      }
    }
    return dx;
  }

  void collect(std::vector<StateRef<T>>& params, std::vector<StateRef<T>>& buffers) override {
    params.push_back({this->id_ + ".weight", &gamma_.value, &gamma_.grad});
    params.push_back({this->id_ + ".bias", &beta_.value, &beta_.grad});
    buffers.push_back({this->id_ + ".running_mean", &running_mean_.value, nullptr});
    buffers.push_back({this->id_ + ".running_var", &running_var_.value, nullptr});
  }

  void initialize(Rng&) override {
    gamma_.value.fill(T(1));
    beta_.value.fill(T(0));
    running_mean_.value.fill(T(0));
    running_var_.value.fill(T(1));
  }

 private:
  Param<T> gamma_;
  Param<T> beta_;
  Param<T> running_mean_;
  Param<T> running_var_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
  bool trained_batch_ = false;
};

template <typename T>
class ReLU final : public Module<T> {
 public:
  ReLU(const FeatureShape& in, const std::string& id) : Module<T>(id, in, in) {}

  Tensor<T> forward(const Tensor<T>& x, ForwardContext& ctx) override {
    this->check_input(x);
    Tensor<T> y = x;
    for (auto& v : y.values()) v = v > T(0) ? v : T(0);
    output_ = ctx.training ? y : Tensor<T>{};
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad) override {
    const Tensor<T>& y = output_;
    if (y.empty()) throw Error(this->id_ + ": backward called without a training-mode forward pass");
    Tensor<T> dx = grad;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!(y[i] > T(0))) dx[i] = T(0);
    return dx;
  }

 private:
  Tensor<T> output_;
};

template <typename T>
class Dropout final : public Module<T> {
 public:
  Dropout(double rate, const FeatureShape& in, const std::string& id) : Module<T>(id, in, in), rate_(rate) {}

  Tensor<T> forward(const Tensor<T>& x, ForwardContext& ctx) override {
    this->check_input(x);
    active_ = ctx.training && rate_ > 0.0;
    if (!active_) return x;
    if (ctx.rng == nullptr) throw ConfigError(this->id_ + ": training-mode dropout needs a random generator");
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate_));
    mask_.assign(x.size(), T(0));
    Tensor<T> y = x;
    for (std::size_t i = 0; i < y.size(); ++i) {
      mask_[i] = uniform01(*ctx.rng) >= rate_ ? keep_scale : T(0);
      y[i] *= mask_[i];
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad) override {
    if (!active_) return grad;
    Tensor<T> dx = grad;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= mask_[i];
    return dx;
  }

 private:
  double rate_;
  bool active_ = false;
  std::vector<T> mask_;
};

template <typename T>
class GlobalAvgPool final : public Module<T> {
 public:
  GlobalAvgPool(const FeatureShape& in, const FeatureShape& out, const std::string& id) : Module<T>(id, in, out) {}

  Tensor<T> forward(const Tensor<T>& x, ForwardContext&) override {
    this->check_input(x);
    batch_ = x.dim(0);
    const int c = this->in_.channels;
    const std::size_t plane = static_cast<std::size_t>(this->in_.height) * this->in_.width;
    Tensor<T> y({batch_, c});
    for (int i = 0; i < batch_; ++i)
      for (int ch = 0; ch < c; ++ch) {
        const T* p = x.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
        double sum = 0.0;
        for (std::size_t j = 0; j < plane; ++j) sum += p[j];
        y[static_cast<std::size_t>(i) * c + ch] = static_cast<T>(sum / double(plane));
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad) override {
    const int c = this->in_.channels;
    const std::size_t plane = static_cast<std::size_t>(this->in_.height) * this->in_.width;
    Tensor<T> dx({batch_, c, this->in_.height, this->in_.width});
    for (int i = 0; i < batch_; ++i)
      for (int ch = 0; ch < c; ++ch) {
        const T g = grad[static_cast<std::size_t>(i) * c + ch] / static_cast<T>(plane);
        T* p = dx.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
        std::fill(p, p + plane, g);
      }
    return dx;
  }

 private:
  int batch_ = 0;
};

template <typename T>
class MaxPool final : public Module<T> {
 public:
  MaxPool(const LayerSpec& l, const FeatureShape& in, const FeatureShape& out, const std::string& id)
      : Module<T>(id, in, out), k_(l.kernel), s_(l.stride), p_(l.padding) {}

  Tensor<T> forward(const Tensor<T>& x, ForwardContext& ctx) override {
    this->check_input(x);
    const int n = x.dim(0);
    const auto [c, h, w, f1] = this->in_;
    const auto [oc, oh, ow, f2] = this->out_;
    Tensor<T> y({n, c, oh, ow});
    argmax_.assign(y.size(), 0);
    for (int plane = 0; plane < n * c; ++plane) {
      const T* src = x.data() + static_cast<std::size_t>(plane) * h * w;
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx) {
          T best = -std::numeric_limits<T>::infinity();
          int best_idx = 0;
          for (int kh = 0; kh < k_; ++kh) {
            const int iy = yy * s_ - p_ + kh;
            if (iy < 0 || iy >= h) continue;
            for (int kw = 0; kw < k_; ++kw) {
              const int ix = xx * s_ - p_ + kw;
              if (ix < 0 || ix >= w) continue;
              if (src[iy * w + ix] > best) {
                best = src[iy * w + ix];
                best_idx = iy * w + ix;
              }
            }
          }
          const std::size_t o = (static_cast<std::size_t>(plane) * oh + yy) * ow + xx;
          y[o] = best;
          argmax_[o] = best_idx;
        }
    }
    batch_ = ctx.training ? n : 0;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad) override {
    if (batch_ == 0) throw Error(this->id_ + ": backward called without a training-mode forward pass");
    const auto [c, h, w, f1] = this->in_;
    const auto [oc, oh, ow, f2] = this->out_;
    Tensor<T> dx({batch_, c, h, w});
    for (int plane = 0; plane < batch_ * c; ++plane)
      for (int j = 0; j < oh * ow; ++j) {
        const std::size_t o = static_cast<std::size_t>(plane) * oh * ow + j;
        dx[static_cast<std::size_t>(plane) * h * w + argmax_[o]] += grad[o];
      }
    return dx;
  }

 private:
  int k_, s_, p_;
  int batch_ = 0;
  std::vector<int> argmax_;
};

template <typename T>
class Linear final : public Module<T> {
 public:
  Linear(const FeatureShape& in, const FeatureShape& out, const std::string& id)
      : Module<T>(id, in, out), weight_({out.channels, in.channels}), bias_({out.channels}) {}

  Tensor<T> forward(const Tensor<T>& x, ForwardContext& ctx) override {
    this->check_input(x);
    const int n = x.dim(0);
    const int in = this->in_.channels;
    const int out = this->out_.channels;
    Tensor<T> y({n, out});
    MapR<T> ym(y.data(), n, out);
    ym.noalias() = CMapR<T>(x.data(), n, in) * CMapR<T>(weight_.value.data(), out, in).transpose();
    for (int i = 0; i < n; ++i)
      for (int o = 0; o < out; ++o) ym(i, o) += bias_.value[o];
    input_ = ctx.training ? x : Tensor<T>{};
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad) override {
    const Tensor<T>& x = require_cache(input_, this->id_);
    const int n = x.dim(0);
    const int in = this->in_.channels;
    const int out = this->out_.channels;
    CMapR<T> dy(grad.data(), n, out);
    MapR<T>(weight_.grad.data(), out, in).noalias() += dy.transpose() * CMapR<T>(x.data(), n, in);
    for (int i = 0; i < n; ++i)
      for (int o = 0; o < out; ++o) bias_.grad[o] += dy(i, o);
    Tensor<T> dx({n, in});
    MapR<T>(dx.data(), n, in).noalias() = dy * CMapR<T>(weight_.value.data(), out, in);
    return dx;
  }

  void collect(std::vector<StateRef<T>>& params, std::vector<StateRef<T>>&) override {
    params.push_back({this->id_ + ".weight", &weight_.value, &weight_.grad});
    params.push_back({this->id_ + ".bias", &bias_.value, &bias_.grad});
  }

  void initialize(Rng& rng) override {
    fill_normal(weight_.value, rng, std::sqrt(1.0 / this->in_.channels));
    bias_.value.fill(T(0));
  }

 private:
  Param<T> weight_;
  Param<T> bias_;
  Tensor<T> input_;
};

// Bilinear resampling with half-pixel centers (align_corners = false).
template <typename T>
class Upsample final : public Module<T> {
 public:
  Upsample(const FeatureShape& in, const FeatureShape& out, const std::string& id) : Module<T>(id, in, out) {
    axis(in.height, out.height, y0_, y1_, wy_);
    axis(in.width, out.width, x0_, x1_, wx_);
  }

  Tensor<T> forward(const Tensor<T>& x, ForwardContext&) override {
    this->check_input(x);
    batch_ = x.dim(0);
    const auto [c, h, w, f1] = this->in_;
    const auto [oc, oh, ow, f2] = this->out_;
    Tensor<T> y({batch_, c, oh, ow});
    for (int plane = 0; plane < batch_ * c; ++plane) {
      const T* src = x.data() + static_cast<std::size_t>(plane) * h * w;
      T* dst = y.data() + static_cast<std::size_t>(plane) * oh * ow;
      for (int yy = 0; yy < oh; ++yy) {
        const T wy = wy_[yy];
        const T* r0 = src + y0_[yy] * w;
        const T* r1 = src + y1_[yy] * w;
        for (int xx = 0; xx < ow; ++xx) {
          const T wx = wx_[xx];
          const T top = r0[x0_[xx]] * (1 - wx) + r0[x1_[xx]] * wx;
          const T bot = r1[x0_[xx]] * (1 - wx) + r1[x1_[xx]] * wx;
          dst[yy * ow + xx] = top * (1 - wy) + bot * wy;
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad) override {
    const auto [c, h, w, f1] = this->in_;
    const auto [oc, oh, ow, f2] = this->out_;
    Tensor<T> dx({batch_, c, h, w});
    for (int plane = 0; plane < batch_ * c; ++plane) {
      const T* g = grad.data() + static_cast<std::size_t>(plane) * oh * ow;
      T* d = dx.data() + static_cast<std::size_t>(plane) * h * w;
      for (int yy = 0; yy < oh; ++yy) {
        const T wy = wy_[yy];
        for (int xx = 0; xx < ow; ++xx) {
          const T wx = wx_[xx];
          const T v = g[yy * ow + xx];
          d[y0_[yy] * w + x0_[xx]] += v * (1 - wy) * (1 - wx);
          d[y0_[yy] * w + x1_[xx]] += v * (1 - wy) * wx;
          d[y1_[yy] * w + x0_[xx]] += v * wy * (1 - wx);
          d[y1_[yy] * w + x1_[xx]] += v * wy * wx;
        }
      }
    }
    return dx;
  }

 private:
  static void axis(int in, int out, std::vector<int>& i0, std::vector<int>& i1, std::vector<T>& frac) {
    i0.resize(out);
    i1.resize(out);
    frac.resize(out);
    const double scale = double(in) / double(out);
    for (int o = 0; o < out; ++o) {
      const double src = std::max(0.0, (o + 0.5) * scale - 0.5);
      const int lo = std::min(static_cast<int>(src), in - 1);
      i0[o] = lo;
      i1[o] = std::min(lo + 1, in - 1);
      frac[o] = static_cast<T>(src - lo);
    }
  }

  int batch_ = 0;
  std::vector<int> y0_, y1_, x0_, x1_;
  std::vector<T> wy_, wx_;
};

template <typename T>
class Residual final : public Module<T> {
 public:
  Residual(const LayerSpec& l, const FeatureShape& in, const FeatureShape& out, const std::string& id)
      : Module<T>(id, in, out),
        body_(make_sequential<T>(l.body, in, id + ".body")),
        shortcut_(make_sequential<T>(l.shortcut, in, id + ".shortcut")),
        relu_after_(l.relu_after) {}

  Tensor<T> forward(const Tensor<T>& x, ForwardContext& ctx) override {
    this->check_input(x);
    Tensor<T> y = body_->forward(x, ctx);
    const Tensor<T> s = shortcut_->forward(x, ctx);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += s[i];
    if (relu_after_) {
      for (auto& v : y.values()) v = v > T(0) ? v : T(0);
      output_ = ctx.training ? y : Tensor<T>{};
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad) override {
    Tensor<T> g = grad;
    if (relu_after_) {
      if (output_.empty()) throw Error(this->id_ + ": backward called without a training-mode forward pass");
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!(output_[i] > T(0))) g[i] = T(0);
    }
    Tensor<T> dx = body_->backward(g);
    const Tensor<T> ds = shortcut_->backward(g);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += ds[i];
    return dx;
  }

  void collect(std::vector<StateRef<T>>& params, std::vector<StateRef<T>>& buffers) override {
    body_->collect(params, buffers);
    shortcut_->collect(params, buffers);
  }

  void initialize(Rng& rng) override {
    body_->initialize(rng);
    shortcut_->initialize(rng);
  }

 private:
  std::unique_ptr<Module<T>> body_;
  std::unique_ptr<Module<T>> shortcut_;
  bool relu_after_;
  Tensor<T> output_;
};

// Parallel 1x1, dilated 3x3 and image-pooling branches, concatenated and projected.
template <typename T>
class AtrousPyramid final : public Module<T> {
 public:
  static constexpr double kProjectDropout = 0.5;

  AtrousPyramid(const LayerSpec& l, const FeatureShape& in, const FeatureShape& out, const std::string& id)
      : Module<T>(id, in, out), width_(l.channels) {
    branches_.push_back(make_sequential<T>(
        {LayerSpec::conv(width_, 1), LayerSpec::batch_norm(), LayerSpec::relu()}, in, id + ".branch1x1"));
    for (int r : l.rates)
      branches_.push_back(make_sequential<T>(
          {LayerSpec::conv(width_, 3, 1, r, r), LayerSpec::batch_norm(), LayerSpec::relu()}, in,
          id + ".rate" + std::to_string(r)));
    pool_ = make_sequential<T>({LayerSpec::conv(width_, 1), LayerSpec::batch_norm(), LayerSpec::relu()},
                               FeatureShape::spatial(in.channels, 1, 1), id + ".pool");
    const int total = width_ * static_cast<int>(branches_.size() + 1);
    project_ = make_sequential<T>({LayerSpec::conv(width_, 1), LayerSpec::batch_norm(), LayerSpec::relu(),
                                   LayerSpec::dropout(kProjectDropout)},
                                  FeatureShape::spatial(total, in.height, in.width), id + ".project");
  }

  Tensor<T> forward(const Tensor<T>& x, ForwardContext& ctx) override {
    this->check_input(x);
    const int n = x.dim(0);
    const auto [c, h, w, flat] = this->in_;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const int nb = static_cast<int>(branches_.size()) + 1;
    Tensor<T> cat({n, width_ * nb, h, w});
    auto place = [&](const Tensor<T>& part, int slot, bool broadcast) {
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < width_; ++ch) {
          T* dst = cat.data() + ((static_cast<std::size_t>(i) * width_ * nb) + slot * width_ + ch) * plane;
          if (broadcast) {
            std::fill(dst, dst + plane, part[static_cast<std::size_t>(i) * width_ + ch]);
          } else {
            const T* src = part.data() + (static_cast<std::size_t>(i) * width_ + ch) * plane;
            std::copy(src, src + plane, dst);
          }
        }
    };
    for (int b = 0; b < nb - 1; ++b) place(branches_[b]->forward(x, ctx), b, false);
    Tensor<T> pooled({n, c, 1, 1});
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch) {
        const T* p = x.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
        double sum = 0.0;
        for (std::size_t j = 0; j < plane; ++j) sum += p[j];
        pooled[static_cast<std::size_t>(i) * c + ch] = static_cast<T>(sum / double(plane));
      }
    place(pool_->forward(pooled, ctx), nb - 1, true);
    return project_->forward(cat, ctx);
  }

  Tensor<T> backward(const Tensor<T>& grad) override {
    const Tensor<T> gcat = project_->backward(grad);
    const int n = gcat.dim(0);
    const auto [c, h, w, flat] = this->in_;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const int nb = static_cast<int>(branches_.size()) + 1;
    Tensor<T> dx({n, c, h, w});
    for (int b = 0; b < nb; ++b) {
      const bool pooled = b == nb - 1;
      Tensor<T> part = pooled ? Tensor<T>({n, width_, 1, 1}) : Tensor<T>({n, width_, h, w});
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < width_; ++ch) {
          const T* src = gcat.data() + ((static_cast<std::size_t>(i) * width_ * nb) + b * width_ + ch) * plane;
          if (pooled) {
            T sum = 0;
            for (std::size_t j = 0; j < plane; ++j) sum += src[j];
            part[static_cast<std::size_t>(i) * width_ + ch] = sum;
          } else {
            std::copy(src, src + plane, part.data() + (static_cast<std::size_t>(i) * width_ + ch) * plane);
          }
        }
      if (!pooled) {
        const Tensor<T> g = branches_[b]->backward(part);
        for (std::size_t j = 0; j < dx.size(); ++j) dx[j] += g[j];
      } else {
        const Tensor<T> g = pool_->backward(part);
        for (int i = 0; i < n; ++i)
          for (int ch = 0; ch < c; ++ch) {
            const T v = g[static_cast<std::size_t>(i) * c + ch] / static_cast<T>(plane);
            T* d = dx.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
            for (std::size_t j = 0; j < plane; ++j) d[j] += v;
          }
      }
    }
    return dx;
  }

  void collect(std::vector<StateRef<T>>& params, std::vector<StateRef<T>>& buffers) override {
    for (auto& b : branches_) b->collect(params, buffers);
    pool_->collect(params, buffers);
    project_->collect(params, buffers);
  }

  void initialize(Rng& rng) override {
    for (auto& b : branches_) b->initialize(rng);
    pool_->initialize(rng);
    project_->initialize(rng);
  }

 private:
  int width_;
  std::vector<std::unique_ptr<Module<T>>> branches_;
  std::unique_ptr<Module<T>> pool_;
  std::unique_ptr<Module<T>> project_;
};

}  // namespace

template <typename T>
void Module<T>::check_input(const Tensor<T>& x) const {
  const bool ok = in_.flat ? (x.rank() == 2 && x.dim(1) == in_.channels)
                           : (x.rank() == 4 && x.dim(1) == in_.channels && x.dim(2) == in_.height &&
                              x.dim(3) == in_.width);
  if (!ok || x.dim(0) < 1)
    throw ShapeError(id_ + ": expected input " + in_.to_string() + " per sample, got tensor " + x.shape_string());
}

template <typename T>
std::unique_ptr<Module<T>> make_module(const LayerSpec& layer, const FeatureShape& in, const std::string& id) {
  const FeatureShape out = infer_shape(layer, in, id);
  switch (layer.kind) {
    case LayerKind::conv: return std::make_unique<Conv2d<T>>(layer, in, out, id);
    case LayerKind::transposed_conv: return std::make_unique<TransposedConv2d<T>>(layer, in, out, id);
    case LayerKind::batch_norm: return std::make_unique<BatchNorm<T>>(in, id);
    case LayerKind::relu: return std::make_unique<ReLU<T>>(in, id);
    case LayerKind::dropout: return std::make_unique<Dropout<T>>(layer.rate, in, id);
    case LayerKind::avg_pool: return std::make_unique<GlobalAvgPool<T>>(in, out, id);
    case LayerKind::max_pool: return std::make_unique<MaxPool<T>>(layer, in, out, id);
    case LayerKind::linear: return std::make_unique<Linear<T>>(in, out, id);
    case LayerKind::residual: return std::make_unique<Residual<T>>(layer, in, out, id);
    case LayerKind::upsample: return std::make_unique<Upsample<T>>(in, out, id);
    case LayerKind::atrous_pyramid: return std::make_unique<AtrousPyramid<T>>(layer, in, out, id);
  }
  throw ShapeError(id + ": unhandled layer kind");
}

template <typename T>
std::unique_ptr<Module<T>> make_sequential(const std::vector<LayerSpec>& layers, const FeatureShape& in,
                                           const std::string& id) {
  return std::make_unique<Sequential<T>>(layers, in, id);
}

template class Module<float>;
template class Module<double>;
template std::unique_ptr<Module<float>> make_module<float>(const LayerSpec&, const FeatureShape&, const std::string&);
template std::unique_ptr<Module<double>> make_module<double>(const LayerSpec&, const FeatureShape&,
                                                             const std::string&);
template std::unique_ptr<Module<float>> make_sequential<float>(const std::vector<LayerSpec>&, const FeatureShape&,
                                                               const std::string&);
template std::unique_ptr<Module<double>> make_sequential<double>(const std::vector<LayerSpec>&, const FeatureShape&,
                                                                 const std::string&);

}  // namespace cvs
