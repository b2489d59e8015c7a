#include "demorph/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace demorph {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
void fill_normal(Tensor<T>& t, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel,
                  int stride, bool bias)
    : in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(kernel / 2),
      has_bias_(bias),
      weight_(name + ".weight", Shape{out_channels, in_channels, kernel, kernel}) {
  if (bias) bias_ = Parameter<T>(name + ".bias", Shape{1, out_channels, 1, 1});
}

template <typename T>
Shape Conv2d<T>::output_shape(const Shape& in) const {
  if (in.c != in_) {
    throw DimensionError(weight_.name + ": expected " + std::to_string(in_) + " channels, got " +
                         std::to_string(in.c));
  }
  const int oh = (in.h + 2 * pad_ - kernel_) / stride_ + 1;
  const int ow = (in.w + 2 * pad_ - kernel_) / stride_ + 1;
  return Shape{in.n, out_, oh, ow};
}

template <typename T>
void Conv2d<T>::im2col(const T* x, int h, int w, int oh, int ow, T* col) const {
  const int plane = oh * ow;
  for (int kj = 0; kj < kernel_; ++kj) {
    // Output columns whose tap kj lands inside the input row.
    const int lo = std::max(0, (pad_ - kj + stride_ - 1) / stride_);
    const int last = w - 1 + pad_ - kj;
    const int hi = last < 0 ? 0 : std::min(ow, last / stride_ + 1);
    for (int c = 0; c < in_; ++c) {
      for (int ki = 0; ki < kernel_; ++ki) {
        T* row = col + ((c * kernel_ + ki) * kernel_ + kj) * plane;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * stride_ - pad_ + ki;
          T* dst = row + y * ow;
          if (iy < 0 || iy >= h || lo >= hi) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * h + iy) * w - pad_ + kj;
          std::fill(dst, dst + lo, T(0));
          if (stride_ == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (int xo = lo; xo < hi; ++xo) dst[xo] = src[xo * stride_];
          }
          std::fill(dst + hi, dst + ow, T(0));
        }
      }
    }
  }
}

template <typename T>
void Conv2d<T>::col2im(const T* col, int h, int w, int oh, int ow, T* dx) const {
  const int plane = oh * ow;
  for (int kj = 0; kj < kernel_; ++kj) {
    const int lo = std::max(0, (pad_ - kj + stride_ - 1) / stride_);
    const int last = w - 1 + pad_ - kj;
    const int hi = last < 0 ? 0 : std::min(ow, last / stride_ + 1);
    if (lo >= hi) continue;
    for (int c = 0; c < in_; ++c) {
      for (int ki = 0; ki < kernel_; ++ki) {
        const T* row = col + ((c * kernel_ + ki) * kernel_ + kj) * plane;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * stride_ - pad_ + ki;
          if (iy < 0 || iy >= h) continue;
          T* dst = dx + (static_cast<std::size_t>(c) * h + iy) * w - pad_ + kj;
          const T* src = row + y * ow;
          if (stride_ == 1) {
            for (int xo = lo; xo < hi; ++xo) dst[xo] += src[xo];
          } else {
            for (int xo = lo; xo < hi; ++xo) dst[xo * stride_] += src[xo];
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) const {
  const Shape os = output_shape(x.shape());
  Tensor<T> y(os);
  const int K = in_ * kernel_ * kernel_;
  const int P = os.h * os.w;
  const bool direct = kernel_ == 1 && stride_ == 1;
  AlignedVector<T> col(direct ? 0 : static_cast<std::size_t>(K) * P);
  ConstMatrixMap<T> W(weight_.value.data(), out_, K);
  for (int i = 0; i < x.n(); ++i) {
    const T* src = x.sample(i).data();
    if (!direct) {
      im2col(src, x.h(), x.w(), os.h, os.w, col.data());
      src = col.data();
    }
    MatrixMap<T> Y(y.sample(i).data(), out_, P);
    Y.noalias() = W * ConstMatrixMap<T>(src, K, P);
    if (has_bias_) {
      for (int o = 0; o < out_; ++o) Y.row(o).array() += bias_.value.data()[o];
    }
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& x, const Tensor<T>& dy, bool need_dx) {
  const Shape os = output_shape(x.shape());
  require_same_shape(os, dy.shape(), "Conv2d::backward");
  const int K = in_ * kernel_ * kernel_;
  const int P = os.h * os.w;
  const bool direct = kernel_ == 1 && stride_ == 1;
  AlignedVector<T> col(direct ? 0 : static_cast<std::size_t>(K) * P);
  AlignedVector<T> dcol(need_dx && !direct ? static_cast<std::size_t>(K) * P : 0);
  Tensor<T> dx = need_dx ? Tensor<T>(x.shape()) : Tensor<T>();
  MatrixMap<T> dW(weight_.grad.data(), out_, K);
  ConstMatrixMap<T> W(weight_.value.data(), out_, K);
  for (int i = 0; i < x.n(); ++i) {
    const T* src = x.sample(i).data();
    if (!direct) {
      im2col(src, x.h(), x.w(), os.h, os.w, col.data());
      src = col.data();
    }
    ConstMatrixMap<T> dY(dy.sample(i).data(), out_, P);
    dW.noalias() += dY * ConstMatrixMap<T>(src, K, P).transpose();
    if (has_bias_) {
      for (int o = 0; o < out_; ++o) bias_.grad.data()[o] += dY.row(o).sum();
    }
    if (need_dx) {
      if (direct) {
        MatrixMap<T>(dx.sample(i).data(), K, P).noalias() = W.transpose() * dY;
      } else {
        MatrixMap<T>(dcol.data(), K, P).noalias() = W.transpose() * dY;
        col2im(dcol.data(), x.h(), x.w(), os.h, os.w, dx.sample(i).data());
      }
    }
  }
  return dx;
}

template <typename T>
void Conv2d<T>::init(std::mt19937_64& rng, double gain) {
  fill_normal(weight_.value, rng, std::sqrt(gain / (in_ * kernel_ * kernel_)));
  if (has_bias_) bias_.value.fill(T(0));
}

template <typename T>
void Conv2d<T>::collect(ParameterList<T>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

// ---------------------------------------------------------------------------------------------
// ConvTranspose2x2

template <typename T>
ConvTranspose2x2<T>::ConvTranspose2x2(const std::string& name, int in_channels, int out_channels)
    : in_(in_channels),
      out_(out_channels),
      weight_(name + ".weight", Shape{in_channels, out_channels, 2, 2}) {}

template <typename T>
Tensor<T> ConvTranspose2x2<T>::forward(const Tensor<T>& x) const {
  if (x.c() != in_) throw DimensionError(weight_.name + ": channel mismatch");
  const int h = x.h(), w = x.w();
  const int P = h * w;
  Tensor<T> y(Shape{x.n(), out_, 2 * h, 2 * w});
  ConstMatrixMap<T> W(weight_.value.data(), in_, out_ * 4);
  RowMatrix<T> expanded(out_ * 4, P);
  for (int i = 0; i < x.n(); ++i) {
    expanded.noalias() = W.transpose() * ConstMatrixMap<T>(x.sample(i).data(), in_, P);
    T* dst = y.sample(i).data();
    for (int o = 0; o < out_; ++o) {
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
          const T* src = expanded.data() + (o * 4 + a * 2 + b) * P;
          for (int r = 0; r < h; ++r) {
            T* row = dst + (static_cast<std::size_t>(o) * 2 * h + 2 * r + a) * 2 * w + b;
            for (int c = 0; c < w; ++c) row[2 * c] = src[r * w + c];
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> ConvTranspose2x2<T>::backward(const Tensor<T>& x, const Tensor<T>& dy, bool need_dx) {
  const int h = x.h(), w = x.w();
  const int P = h * w;
  require_same_shape(Shape{x.n(), out_, 2 * h, 2 * w}, dy.shape(), "ConvTranspose2x2::backward");
  Tensor<T> dx = need_dx ? Tensor<T>(x.shape()) : Tensor<T>();
  MatrixMap<T> dW(weight_.grad.data(), in_, out_ * 4);
  ConstMatrixMap<T> W(weight_.value.data(), in_, out_ * 4);
  RowMatrix<T> gathered(out_ * 4, P);
  for (int i = 0; i < x.n(); ++i) {
    const T* src = dy.sample(i).data();
    for (int o = 0; o < out_; ++o) {
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
          T* dst = gathered.data() + (o * 4 + a * 2 + b) * P;
          for (int r = 0; r < h; ++r) {
            const T* row = src + (static_cast<std::size_t>(o) * 2 * h + 2 * r + a) * 2 * w + b;
            for (int c = 0; c < w; ++c) dst[r * w + c] = row[2 * c];
          }
        }
      }
    }
    ConstMatrixMap<T> X(x.sample(i).data(), in_, P);
    dW.noalias() += X * gathered.transpose();
    if (need_dx) MatrixMap<T>(dx.sample(i).data(), in_, P).noalias() = W * gathered;
  }
  return dx;
}

template <typename T>
void ConvTranspose2x2<T>::init(std::mt19937_64& rng, double gain) {
  // Each output pixel receives exactly in_ contributions.
  fill_normal(weight_.value, rng, std::sqrt(gain / in_));
}

template <typename T>
void ConvTranspose2x2<T>::collect(ParameterList<T>& out) {
  out.push_back(&weight_);
}

// ---------------------------------------------------------------------------------------------
// BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(const std::string& name, int channels)
    : channels_(channels),
      gamma_(name + ".gamma", Shape{1, channels, 1, 1}),
      beta_(name + ".beta", Shape{1, channels, 1, 1}),
      running_mean_(name + ".running_mean", Shape{1, channels, 1, 1}, false),
      running_var_(name + ".running_var", Shape{1, channels, 1, 1}, false) {
  gamma_.value.fill(T(1));
  running_var_.value.fill(T(1));
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, bool training, BatchNormCache<T>* cache) {
  if (x.c() != channels_) throw DimensionError(gamma_.name + ": channel mismatch");
  const std::size_t plane = x.shape().plane();
  const std::size_t count = plane * x.n();
  Tensor<T> y(x.shape());
  if (training && cache) {
    cache->xhat = Tensor<T>(x.shape());
    cache->inv_std.assign(channels_, T(0));
  }
  for (int c = 0; c < channels_; ++c) {
    double mean, var;
    if (training) {
      double sum = 0.0;
      for (int n = 0; n < x.n(); ++n) {
        const T* p = x.data() + (static_cast<std::size_t>(n) * channels_ + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) sum += p[j];
      }
      mean = sum / count;
      double sq = 0.0;
      for (int n = 0; n < x.n(); ++n) {
        const T* p = x.data() + (static_cast<std::size_t>(n) * channels_ + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          const double d = p[j] - mean;
          sq += d * d;
        }
      }
      var = sq / count;
      const double unbiased = count > 1 ? sq / (count - 1) : var;
      T& rm = running_mean_.value.data()[c];
      T& rv = running_var_.value.data()[c];
      rm = static_cast<T>((1.0 - kMomentum) * rm + kMomentum * mean);
      rv = static_cast<T>((1.0 - kMomentum) * rv + kMomentum * unbiased);
    } else {
      mean = running_mean_.value.data()[c];
      var = running_var_.value.data()[c];
    }
    const double inv_std = 1.0 / std::sqrt(var + kEps);
    const T g = gamma_.value.data()[c];
    const T b = beta_.value.data()[c];
    if (training && cache) cache->inv_std[c] = static_cast<T>(inv_std);
    for (int n = 0; n < x.n(); ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels_ + c) * plane;
      const T* p = x.data() + off;
      T* q = y.data() + off;
      T* h = (training && cache) ? cache->xhat.data() + off : nullptr;
      for (std::size_t j = 0; j < plane; ++j) {
        const T xh = static_cast<T>((p[j] - mean) * inv_std);
        if (h) h[j] = xh;
        q[j] = g * xh + b;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const BatchNormCache<T>& cache, const Tensor<T>& dy) {
  require_same_shape(cache.xhat.shape(), dy.shape(), "BatchNorm2d::backward");
  const std::size_t plane = dy.shape().plane();
  const double count = static_cast<double>(plane * dy.n());
  Tensor<T> dx(dy.shape());
  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int n = 0; n < dy.n(); ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels_ + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        sum_dy += dy.data()[off + j];
        sum_dy_xhat += static_cast<double>(dy.data()[off + j]) * cache.xhat.data()[off + j];
      }
    }
    beta_.grad.data()[c] += static_cast<T>(sum_dy);
    gamma_.grad.data()[c] += static_cast<T>(sum_dy_xhat);
    const double scale = gamma_.value.data()[c] * cache.inv_std[c] / count;
    for (int n = 0; n < dy.n(); ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels_ + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        dx.data()[off + j] = static_cast<T>(
            scale * (count * dy.data()[off + j] - sum_dy - cache.xhat.data()[off + j] * sum_dy_xhat));
      }
    }
  }
  return dx;
}

template <typename T>
void BatchNorm2d<T>::collect(ParameterList<T>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
  out.push_back(&running_mean_);
  out.push_back(&running_var_);
}

// ---------------------------------------------------------------------------------------------
// NormBlock

template <typename T, typename Op>
BlockTrace<T> NormBlock<T, Op>::forward(Tensor<T> x, bool training) {
  BlockTrace<T> trace;
  trace.input = std::move(x);
  Tensor<T> y = bn_.forward(op_.forward(trace.input), training, &trace.bn);
  for (auto& v : y.values()) v = v < T(0) ? T(0) : v;  // NaN passes through
  trace.output = std::move(y);
  return trace;
}

template <typename T, typename Op>
Tensor<T> NormBlock<T, Op>::backward(const BlockTrace<T>& trace, Tensor<T> dy, bool need_dx) {
  auto out = trace.output.values();
  auto g = dy.values();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (out[i] <= T(0)) g[i] = T(0);
  }
  return op_.backward(trace.input, bn_.backward(trace.bn, dy), need_dx);
}

// ---------------------------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw DimensionError("concat_channels: extent mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
  }
  Tensor<T> out(Shape{a.n(), a.c() + b.c(), a.h(), a.w()});
  for (int i = 0; i < a.n(); ++i) {
    auto sa = a.sample(i);
    auto sb = b.sample(i);
    T* dst = out.sample(i).data();
    std::copy(sa.begin(), sa.end(), dst);
    std::copy(sb.begin(), sb.end(), dst + sa.size());
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, int first_channels) {
  Tensor<T> a(Shape{x.n(), first_channels, x.h(), x.w()});
  Tensor<T> b(Shape{x.n(), x.c() - first_channels, x.h(), x.w()});
  const std::size_t na = a.shape().sample_size();
  for (int i = 0; i < x.n(); ++i) {
    auto src = x.sample(i);
    std::copy(src.begin(), src.begin() + na, a.sample(i).data());
    std::copy(src.begin() + na, src.end(), b.sample(i).data());
  }
  return {std::move(a), std::move(b)};
}

template class Conv2d<float>;
template class Conv2d<double>;
template class ConvTranspose2x2<float>;
template class ConvTranspose2x2<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class NormBlock<float, Conv2d<float>>;
template class NormBlock<double, Conv2d<double>>;
template class NormBlock<float, ConvTranspose2x2<float>>;
template class NormBlock<double, ConvTranspose2x2<double>>;
template Tensor<float> concat_channels(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> concat_channels(const Tensor<double>&, const Tensor<double>&);
template std::pair<Tensor<float>, Tensor<float>> split_channels(const Tensor<float>&, int);
template std::pair<Tensor<double>, Tensor<double>> split_channels(const Tensor<double>&, int);

}  // namespace demorph
