#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "lauerl/rng.hpp"
#include "lauerl/simulator.hpp"

namespace lauerl::nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;  // column-major
template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// ---------------------------------------------------------------------------
// Initialization

// Orthogonal rows/columns (whichever fits), scaled by gain; the flattened 2-D
// shape is orthogonalized, matching the usual convolution treatment.
template <typename S>
Mat<S> orthogonal_init(int rows, int cols, double gain, Rng& rng) {
  const bool tall = rows >= cols;
  const int r = tall ? rows : cols;
  const int c = tall ? cols : rows;
  Mat<S> g(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) g(i, j) = static_cast<S>(rng.normal());
  Eigen::HouseholderQR<Mat<S>> qr(g);
  Mat<S> q = qr.householderQ() * Mat<S>::Identity(r, c);
  const Mat<S> rmat = qr.matrixQR().template triangularView<Eigen::Upper>();
  for (int j = 0; j < c; ++j)
    if (rmat(j, j) < S(0)) q.col(j) = -q.col(j);
  q *= static_cast<S>(gain);
  return tall ? q : Mat<S>(q.transpose());
}

// ---------------------------------------------------------------------------
// Layers. Batches are matrices with one sample per column.

template <typename S>
struct Linear {
  Mat<S> W;  // out x in
  Vec<S> b;

  void init(int in, int out, double gain, Rng& rng) {
    W = orthogonal_init<S>(out, in, gain, rng);
    b = Vec<S>::Zero(out);
  }

  Mat<S> forward(const Mat<S>& x) const { return (W * x).colwise() + b; }

  // dx = W^T dy; accumulates dW, db.
  Mat<S> backward(const Mat<S>& x, const Mat<S>& dy, Mat<S>& dW, Vec<S>& db) const {
    dW.noalias() += dy * x.transpose();
    db.noalias() += dy.rowwise().sum();
    return W.transpose() * dy;
  }
};

template <typename S>
struct LayerNorm {
  static constexpr double kEps = 1e-5;
  Vec<S> gamma, beta;

  void init(int dim) {
    gamma = Vec<S>::Ones(dim);
    beta = Vec<S>::Zero(dim);
  }

  struct Cache {
    Mat<S> xhat;
    Vec<S> invstd;  // per column
  };

  Mat<S> forward(const Mat<S>& x, Cache& cache) const {
    const int d = static_cast<int>(x.rows());
    const int n = static_cast<int>(x.cols());
    cache.xhat.resize(d, n);
    cache.invstd.resize(n);
    Mat<S> y(d, n);
    for (int j = 0; j < n; ++j) {
      const S mean = x.col(j).mean();
      const S var = (x.col(j).array() - mean).square().sum() / d;
      const S invstd = S(1) / std::sqrt(var + static_cast<S>(kEps));
      cache.invstd(j) = invstd;
      cache.xhat.col(j) = (x.col(j).array() - mean).matrix() * invstd;
      y.col(j) = (cache.xhat.col(j).array() * gamma.array() + beta.array()).matrix();
    }
    return y;
  }

  Mat<S> backward(const Cache& cache, const Mat<S>& dy, Vec<S>& dgamma, Vec<S>& dbeta) const {
    const int d = static_cast<int>(dy.rows());
    const int n = static_cast<int>(dy.cols());
    Mat<S> dx(d, n);
    for (int j = 0; j < n; ++j) {
      const auto xhat = cache.xhat.col(j).array();
      const auto g = (dy.col(j).array() * gamma.array()).eval();
      const S g_mean = g.mean();
      const S gx_mean = (g * xhat).mean();
      dx.col(j) = ((g - g_mean - xhat * gx_mean) * cache.invstd(j)).matrix();
      dgamma.array() += dy.col(j).array() * xhat;
      dbeta.array() += dy.col(j).array();
    }
    return dx;
  }
};

template <typename S>
struct Conv2d {
  int in_ch = 0, out_ch = 0, ksize = 0, stride = 1, pad = 0;
  int in_h = 0, in_w = 0;  // fixed input raster
  Mat<S> W;                // out_ch x (k^2 in_ch), columns ordered (ky, kx, c)
  Vec<S> b;

  void init(int in_channels, int out_channels, int kernel, int stride_, int pad_, int h, int w,
            double gain, Rng& rng) {
    in_ch = in_channels;
    out_ch = out_channels;
    ksize = kernel;
    stride = stride_;
    pad = pad_;
    in_h = h;
    in_w = w;
    W = orthogonal_init<S>(out_ch, in_ch * kernel * kernel, gain, rng);
    b = Vec<S>::Zero(out_ch);
  }

  int out_h() const { return (in_h + 2 * pad - ksize) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - ksize) / stride + 1; }
  int in_size() const { return in_ch * in_h * in_w; }
  int out_size() const { return out_ch * out_h() * out_w(); }

  // Activations are channel-last, value(y, x, c) = buf[(y*W + x)*C + c], so
  // both im2col gathers and the GEMM output need no per-sample reshuffle.
  void im2col(const S* x, S* col) const {
    const int oh = out_h(), ow = out_w();
    const int rows = in_ch * ksize * ksize;
    for (int yo = 0; yo < oh; ++yo)
      for (int xo = 0; xo < ow; ++xo) {
        S* dst = col + static_cast<size_t>(yo * ow + xo) * rows;
        for (int ky = 0; ky < ksize; ++ky) {
          const int yi = yo * stride + ky - pad;
          for (int kx = 0; kx < ksize; ++kx) {
            const int xi = xo * stride + kx - pad;
            if (yi >= 0 && yi < in_h && xi >= 0 && xi < in_w) {
              const S* src = x + (static_cast<size_t>(yi) * in_w + xi) * in_ch;
              for (int c = 0; c < in_ch; ++c) dst[c] = src[c];
            } else {
              for (int c = 0; c < in_ch; ++c) dst[c] = S(0);
            }
            dst += in_ch;
          }
        }
      }
  }

  void col2im(const S* dcol, S* dx) const {
    const int oh = out_h(), ow = out_w();
    const int rows = in_ch * ksize * ksize;
    std::fill(dx, dx + in_size(), S(0));
    for (int yo = 0; yo < oh; ++yo)
      for (int xo = 0; xo < ow; ++xo) {
        const S* src = dcol + static_cast<size_t>(yo * ow + xo) * rows;
        for (int ky = 0; ky < ksize; ++ky) {
          const int yi = yo * stride + ky - pad;
          for (int kx = 0; kx < ksize; ++kx) {
            const int xi = xo * stride + kx - pad;
            if (yi >= 0 && yi < in_h && xi >= 0 && xi < in_w) {
              S* dst = dx + (static_cast<size_t>(yi) * in_w + xi) * in_ch;
              for (int c = 0; c < in_ch; ++c) dst[c] += src[c];
            }
            src += in_ch;
          }
        }
      }
  }

  // Batch of n samples as columns; one im2col per sample, one GEMM per batch.
  // col scratch is resized to (k^2 in_ch) x (Q n).
  void forward_batch(const Mat<S>& x, Mat<S>& y, Mat<S>& col) const {
    const int n = static_cast<int>(x.cols());
    const int q = out_h() * out_w();
    const int rows = in_ch * ksize * ksize;
    col.resize(rows, static_cast<long>(q) * n);
    for (int j = 0; j < n; ++j)
      im2col(x.col(j).data(), col.data() + static_cast<size_t>(j) * q * rows);
    y.resize(out_size(), n);
    Eigen::Map<Mat<S>> ymap(y.data(), out_ch, static_cast<long>(q) * n);
    ymap.noalias() = W * col;
    ymap.colwise() += b;
  }

  // Expects `col` to still hold the forward pass's im2col of x.
  void backward_batch(const Mat<S>& dy, const Mat<S>& col, Mat<S>* dx, Mat<S>& dW, Vec<S>& db,
                      Mat<S>& dcol) const {
    const int n = static_cast<int>(dy.cols());
    const int q = out_h() * out_w();
    Eigen::Map<const Mat<S>> dymap(dy.data(), out_ch, static_cast<long>(q) * n);
    dW.noalias() += dymap * col.transpose();
    db.noalias() += dymap.rowwise().sum();
    if (dx) {
      dcol.resize(col.rows(), col.cols());
      dcol.noalias() = W.transpose() * dymap;
      dx->resize(in_size(), n);
      for (int j = 0; j < n; ++j)
        col2im(dcol.data() + static_cast<size_t>(j) * q * col.rows(), dx->col(j).data());
    }
  }

  // Single-sample conveniences (tests, one-off forward passes).
  void forward_sample(const S* x, S* y, Mat<S>& scratch) const {
    Eigen::Map<const Mat<S>> xm(x, in_size(), 1);
    Mat<S> xin = xm, yout;
    forward_batch(xin, yout, scratch);
    Eigen::Map<Mat<S>>(y, out_size(), 1) = yout;
  }

  void backward_sample(const S* x, const S* dy, S* dx, Mat<S>& dW, Vec<S>& db,
                       Mat<S>& scratch) const {
    Eigen::Map<const Mat<S>> xm(x, in_size(), 1);
    Eigen::Map<const Mat<S>> dym(dy, out_size(), 1);
    Mat<S> xin = xm, dyin = dym, dxout, dcol;
    const int rows = in_ch * ksize * ksize;
    scratch.resize(rows, out_h() * out_w());
    im2col(xin.col(0).data(), scratch.data());
    backward_batch(dyin, scratch, dx ? &dxout : nullptr, dW, db, dcol);
    if (dx) Eigen::Map<Mat<S>>(dx, in_size(), 1) = dxout;
  }
};

template <typename S>
void relu_inplace(Mat<S>& x) {
  x = x.cwiseMax(S(0));
}

// dpre = dpost masked by post > 0 (post-activation values suffice).
template <typename S>
void relu_backward_inplace(const Mat<S>& post, Mat<S>& d) {
  d = (post.array() > S(0)).select(d, Mat<S>::Zero(d.rows(), d.cols()));
}

// ---------------------------------------------------------------------------
// Encoder: conv stack per Table-2 shapes, then linear -> layer norm -> tanh.

constexpr int kObsSize = 84;
constexpr int kFeatureDim = 50;
constexpr int kEncoderConvOut = 32 * 21 * 21;  // 14112

template <typename S>
struct EncoderNet {
  Conv2d<S> c1, c2, c3, c4;
  Linear<S> fc;
  LayerNorm<S> ln;

  void init(Rng& rng) {
    c1.init(1, 32, 3, 2, 1, kObsSize, kObsSize, std::sqrt(2.0), rng);
    c2.init(32, 32, 3, 2, 1, 42, 42, std::sqrt(2.0), rng);
    c3.init(32, 32, 3, 1, 1, 21, 21, std::sqrt(2.0), rng);
    c4.init(32, 32, 3, 1, 1, 21, 21, std::sqrt(2.0), rng);
    fc.init(kEncoderConvOut, kFeatureDim, 1.0, rng);
    ln.init(kFeatureDim);
  }

  struct Cache {
    Mat<S> a1, a2, a3, a4;            // post-relu conv outputs
    Mat<S> col1, col2, col3, col4;    // im2col buffers kept for backward
    Mat<S> fc_out;
    typename LayerNorm<S>::Cache ln;
    Mat<S> feat;  // post-tanh
    Mat<S> dcol;  // backward scratch
  };

  // obs: (84*84) x B.
  Mat<S> forward(const Mat<S>& obs, Cache& cache) const {
    if (obs.rows() != kObsSize * kObsSize)
      throw std::invalid_argument("encoder: input shape mismatch");
    c1.forward_batch(obs, cache.a1, cache.col1);
    relu_inplace(cache.a1);
    c2.forward_batch(cache.a1, cache.a2, cache.col2);
    relu_inplace(cache.a2);
    c3.forward_batch(cache.a2, cache.a3, cache.col3);
    relu_inplace(cache.a3);
    c4.forward_batch(cache.a3, cache.a4, cache.col4);
    relu_inplace(cache.a4);
    cache.fc_out = fc.forward(cache.a4);
    Mat<S> normed = ln.forward(cache.fc_out, cache.ln);
    cache.feat = normed.array().tanh().matrix();
    return cache.feat;
  }

  struct Grads {
    Mat<S> c1W, c2W, c3W, c4W, fcW;
    Vec<S> c1b, c2b, c3b, c4b, fcb, gamma, beta;

    void init_like(const EncoderNet& net) {
      c1W = Mat<S>::Zero(net.c1.W.rows(), net.c1.W.cols());
      c2W = Mat<S>::Zero(net.c2.W.rows(), net.c2.W.cols());
      c3W = Mat<S>::Zero(net.c3.W.rows(), net.c3.W.cols());
      c4W = Mat<S>::Zero(net.c4.W.rows(), net.c4.W.cols());
      fcW = Mat<S>::Zero(net.fc.W.rows(), net.fc.W.cols());
      c1b = Vec<S>::Zero(net.c1.b.size());
      c2b = Vec<S>::Zero(net.c2.b.size());
      c3b = Vec<S>::Zero(net.c3.b.size());
      c4b = Vec<S>::Zero(net.c4.b.size());
      fcb = Vec<S>::Zero(net.fc.b.size());
      gamma = Vec<S>::Zero(net.ln.gamma.size());
      beta = Vec<S>::Zero(net.ln.beta.size());
    }

    void set_zero() {
      for (Mat<S>* m : {&c1W, &c2W, &c3W, &c4W, &fcW}) m->setZero();
      for (Vec<S>* b : {&c1b, &c2b, &c3b, &c4b, &fcb, &gamma, &beta}) b->setZero();
    }
  };

  void backward(Cache& cache, const Mat<S>& dfeat, Grads& g) const {
    Mat<S> d = (dfeat.array() * (S(1) - cache.feat.array().square())).matrix();
    d = ln.backward(cache.ln, d, g.gamma, g.beta);
    Mat<S> d4 = fc.backward(cache.a4, d, g.fcW, g.fcb);
    relu_backward_inplace(cache.a4, d4);
    Mat<S> d3, d2, d1;
    c4.backward_batch(d4, cache.col4, &d3, g.c4W, g.c4b, cache.dcol);
    relu_backward_inplace(cache.a3, d3);
    c3.backward_batch(d3, cache.col3, &d2, g.c3W, g.c3b, cache.dcol);
    relu_backward_inplace(cache.a2, d2);
    c2.backward_batch(d2, cache.col2, &d1, g.c2W, g.c2b, cache.dcol);
    relu_backward_inplace(cache.a1, d1);
    c1.backward_batch(d1, cache.col1, nullptr, g.c1W, g.c1b, cache.dcol);
  }
};

// ---------------------------------------------------------------------------
// MLP: two hidden ReLU layers of width 1024 by default, optional tanh head.

template <typename S>
struct MlpNet {
  Linear<S> l1, l2, l3;
  bool tanh_head = false;

  void init(int in, int hidden, int out, bool tanh_out, Rng& rng) {
    tanh_head = tanh_out;
    l1.init(in, hidden, std::sqrt(2.0), rng);
    l2.init(hidden, hidden, std::sqrt(2.0), rng);
    l3.init(hidden, out, 1.0, rng);
  }

  struct Cache {
    Mat<S> x, h1, h2, out;
  };

  Mat<S> forward(const Mat<S>& x, Cache& cache) const {
    cache.x = x;
    cache.h1 = l1.forward(x);
    relu_inplace(cache.h1);
    cache.h2 = l2.forward(cache.h1);
    relu_inplace(cache.h2);
    cache.out = l3.forward(cache.h2);
    if (tanh_head) cache.out = cache.out.array().tanh().matrix();
    return cache.out;
  }

  struct Grads {
    Mat<S> W1, W2, W3;
    Vec<S> b1, b2, b3;

    void init_like(const MlpNet& net) {
      W1 = Mat<S>::Zero(net.l1.W.rows(), net.l1.W.cols());
      W2 = Mat<S>::Zero(net.l2.W.rows(), net.l2.W.cols());
      W3 = Mat<S>::Zero(net.l3.W.rows(), net.l3.W.cols());
      b1 = Vec<S>::Zero(net.l1.b.size());
      b2 = Vec<S>::Zero(net.l2.b.size());
      b3 = Vec<S>::Zero(net.l3.b.size());
    }

    void set_zero() {
      for (Mat<S>* m : {&W1, &W2, &W3}) m->setZero();
      for (Vec<S>* b : {&b1, &b2, &b3}) b->setZero();
    }
  };

  // Returns dInput.
  Mat<S> backward(const Cache& cache, const Mat<S>& dout, Grads& g) const {
    Mat<S> d = dout;
    if (tanh_head) d = (d.array() * (S(1) - cache.out.array().square())).matrix();
    Mat<S> dh2 = l3.backward(cache.h2, d, g.W3, g.b3);
    relu_backward_inplace(cache.h2, dh2);
    Mat<S> dh1 = l2.backward(cache.h1, dh2, g.W2, g.b2);
    relu_backward_inplace(cache.h1, dh1);
    return l1.backward(cache.x, dh1, g.W1, g.b1);
  }

  // dInput without touching weight gradients (for value-to-action paths).
  Mat<S> input_gradient(const Cache& cache, const Mat<S>& dout) const {
    Mat<S> d = dout;
    if (tanh_head) d = (d.array() * (S(1) - cache.out.array().square())).matrix();
    Mat<S> dh2 = l3.W.transpose() * d;
    relu_backward_inplace(cache.h2, dh2);
    Mat<S> dh1 = l2.W.transpose() * dh2;
    relu_backward_inplace(cache.h1, dh1);
    return l1.W.transpose() * dh1;
  }
};

// ---------------------------------------------------------------------------
// Named views over parameter / gradient storage; the registry order is the
// checkpoint and optimizer order.

template <typename S>
struct TensorView {
  std::string name;
  S* data = nullptr;
  long rows = 0, cols = 0;
  long size() const { return rows * cols; }
};

template <typename S>
std::vector<TensorView<S>> encoder_views(EncoderNet<S>& net, const std::string& prefix) {
  auto v = [](const std::string& n, auto& m) {
    return TensorView<S>{n, m.data(), m.rows(), m.cols()};
  };
  return {v(prefix + ".c1.W", net.c1.W), v(prefix + ".c1.b", net.c1.b),
          v(prefix + ".c2.W", net.c2.W), v(prefix + ".c2.b", net.c2.b),
          v(prefix + ".c3.W", net.c3.W), v(prefix + ".c3.b", net.c3.b),
          v(prefix + ".c4.W", net.c4.W), v(prefix + ".c4.b", net.c4.b),
          v(prefix + ".fc.W", net.fc.W), v(prefix + ".fc.b", net.fc.b),
          v(prefix + ".ln.gamma", net.ln.gamma), v(prefix + ".ln.beta", net.ln.beta)};
}

template <typename S>
std::vector<TensorView<S>> encoder_grad_views(typename EncoderNet<S>::Grads& g) {
  auto v = [](auto& m) { return TensorView<S>{"", m.data(), m.rows(), m.cols()}; };
  return {v(g.c1W), v(g.c1b), v(g.c2W), v(g.c2b), v(g.c3W), v(g.c3b),
          v(g.c4W), v(g.c4b), v(g.fcW), v(g.fcb), v(g.gamma), v(g.beta)};
}

template <typename S>
std::vector<TensorView<S>> mlp_views(MlpNet<S>& net, const std::string& prefix) {
  auto v = [](const std::string& n, auto& m) {
    return TensorView<S>{n, m.data(), m.rows(), m.cols()};
  };
  return {v(prefix + ".l1.W", net.l1.W), v(prefix + ".l1.b", net.l1.b),
          v(prefix + ".l2.W", net.l2.W), v(prefix + ".l2.b", net.l2.b),
          v(prefix + ".l3.W", net.l3.W), v(prefix + ".l3.b", net.l3.b)};
}

template <typename S>
std::vector<TensorView<S>> mlp_grad_views(typename MlpNet<S>::Grads& g) {
  auto v = [](auto& m) { return TensorView<S>{"", m.data(), m.rows(), m.cols()}; };
  return {v(g.W1), v(g.b1), v(g.W2), v(g.b2), v(g.W3), v(g.b3)};
}

// ---------------------------------------------------------------------------
// Adam with bias correction; epsilon added outside the square root.

template <typename S>
void adam_update(S* param, const S* grad, S* m, S* v, long n, long t, double lr,
                 double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  using MapV = Eigen::Map<Vec<S>>;
  using CMapV = Eigen::Map<const Vec<S>>;
  MapV pm(param, n), mm(m, n), vm(v, n);
  CMapV gm(grad, n);
  mm = static_cast<S>(beta1) * mm + static_cast<S>(1.0 - beta1) * gm;
  vm = (static_cast<S>(beta2) * vm.array() + static_cast<S>(1.0 - beta2) * gm.array().square())
           .matrix();
  const S bc1 = static_cast<S>(1.0 - std::pow(beta1, static_cast<double>(t)));
  const S bc2 = static_cast<S>(1.0 - std::pow(beta2, static_cast<double>(t)));
  pm.array() -= static_cast<S>(lr) * (mm.array() / bc1) /
                ((vm.array() / bc2).sqrt() + static_cast<S>(eps));
}

template <typename S>
struct Adam {
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long t = 0;
  std::vector<Vec<S>> m, v;

  void init(const std::vector<TensorView<S>>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.push_back(Vec<S>::Zero(p.size()));
      v.push_back(Vec<S>::Zero(p.size()));
    }
  }

  void step(const std::vector<TensorView<S>>& params, const std::vector<TensorView<S>>& grads) {
    if (params.size() != m.size() || grads.size() != m.size())
      throw std::invalid_argument("adam: parameter/gradient count mismatch");
    ++t;
    for (size_t i = 0; i < params.size(); ++i) {
      if (params[i].size() != grads[i].size() || params[i].size() != m[i].size())
        throw std::invalid_argument("adam: shape mismatch at " + params[i].name);
      adam_update(params[i].data, grads[i].data, m[i].data(), v[i].data(), params[i].size(), t,
                  lr, beta1, beta2, eps);
    }
  }
};

// ---------------------------------------------------------------------------
// Random shift augmentation: replicate-pad by `pad`, crop a random window.

inline void shifted_copy(const float* src, float* dst, int size, int ox, int oy, int pad) {
  for (int y = 0; y < size; ++y) {
    const int ys = std::clamp(y + oy - pad, 0, size - 1);
    for (int x = 0; x < size; ++x) {
      const int xs = std::clamp(x + ox - pad, 0, size - 1);
      dst[y * size + x] = src[ys * size + xs];
    }
  }
}

Observation random_shift(const Observation& obs, int pad, Rng& rng);

}  // namespace lauerl::nn
