#pragma once

#include <cmath>
#include <cstring>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "zsnas/errors.hpp"
#include "zsnas/gemm.hpp"
#include "zsnas/linalg.hpp"
#include "zsnas/tensor.hpp"

namespace zsnas {

// Reverse-mode graph over the closed operator set of the search space.
// Nodes own their output/gradient buffers and reuse them across calls, so a
// network instance is cheap to evaluate repeatedly but must not be shared
// between concurrent evaluations.

enum class OpKind {
  input,
  conv2d,
  batch_norm,
  relu,
  avg_pool3,
  global_avg_pool,
  linear,
  add,
  zeroize,
  softmax_ce_loss,
  sum_loss,
};

class Node {
 public:
  Node(OpKind k, std::string name) : kind(k), name(std::move(name)) {}
  virtual ~Node() = default;

  virtual void forward(bool bn_identity) = 0;
  virtual void backward(bool bn_identity) = 0;

  virtual std::vector<Tensor*> params() { return {}; }
  virtual std::vector<Tensor*> param_grads() { return {}; }

  OpKind kind;
  std::string name;
  std::vector<Node*> inputs;
  Tensor out;
  Tensor grad;

  // Static per-sample cost meta, filled in by the network builder.
  long long macs_per_sample = 0;
  long long flop_elems_per_sample = 0;

 protected:
  Node* in(int i) const { return inputs[static_cast<std::size_t>(i)]; }

  void require(bool cond, const std::string& msg) const {
    if (!cond) throw config_error(name + ": " + msg);
  }
};

class InputNode final : public Node {
 public:
  InputNode() : Node(OpKind::input, "input") {}

  void set(const Tensor& batch) {
    out = batch;
    grad.resize(out.shape);
  }

  void forward(bool) override { grad.resize(out.shape); }
  void backward(bool) override {}
};

// Convolution without bias, square kernel k in {1,3}, padding k/2. Forward
// and both backward products run through the blocked GEMM on per-sample
// im2col panels; the panel for one sample stays L2-resident at desk scale.
class Conv2dNode final : public Node {
 public:
  Conv2dNode(std::string name, Node* src, int cin, int cout, int k, int stride)
      : Node(OpKind::conv2d, std::move(name)),
        cin_(cin),
        cout_(cout),
        k_(k),
        stride_(stride),
        pad_(k / 2),
        weight({cout, cin, k, k}),
        wgrad({cout, cin, k, k}) {
    inputs = {src};
  }

  std::vector<Tensor*> params() override { return {&weight}; }
  std::vector<Tensor*> param_grads() override { return {&wgrad}; }

  void forward(bool) override {
    const Tensor& x = in(0)->out;
    require(x.shape.size() == 4 && x.dim(1) == cin_, "conv input channel mismatch");
    n_ = x.dim(0);
    h_ = x.dim(2);
    w_ = x.dim(3);
    ho_ = (h_ + 2 * pad_ - k_) / stride_ + 1;
    wo_ = (w_ + 2 * pad_ - k_) / stride_ + 1;
    out.resize({n_, cout_, ho_, wo_});
    grad.resize(out.shape);

    const int ckk = cin_ * k_ * k_;
    const int cols = ho_ * wo_;
    const bool direct = (k_ == 1 && stride_ == 1 && pad_ == 0);
    if (!direct) patch_.assign(static_cast<std::size_t>(ckk) * cols, 0.0);

    for (int n = 0; n < n_; ++n) {
      const double* xn = x.data() + static_cast<std::size_t>(n) * cin_ * h_ * w_;
      double* on = out.data() + static_cast<std::size_t>(n) * cout_ * cols;
      std::memset(on, 0, sizeof(double) * static_cast<std::size_t>(cout_) * cols);
      const double* panel = xn;
      if (!direct) {
        im2col(xn, patch_.data());
        panel = patch_.data();
      }
      gemm_add(weight.data(), panel, on, cout_, ckk, cols);
    }
  }

  void backward(bool) override {
    const Tensor& x = in(0)->out;
    Tensor& gx = in(0)->grad;
    const int ckk = cin_ * k_ * k_;
    const int cols = ho_ * wo_;
    const bool direct = (k_ == 1 && stride_ == 1 && pad_ == 0);

    // W^T panel for the input gradient.
    wt_.assign(static_cast<std::size_t>(ckk) * cout_, 0.0);
    for (int o = 0; o < cout_; ++o) {
      for (int r = 0; r < ckk; ++r) {
        wt_[static_cast<std::size_t>(r) * cout_ + o] =
            weight.v[static_cast<std::size_t>(o) * ckk + r];
      }
    }
    if (!direct) {
      dpatch_.assign(static_cast<std::size_t>(ckk) * cols, 0.0);
      patch_.assign(static_cast<std::size_t>(ckk) * cols, 0.0);
    }
    rowpanel_.assign(static_cast<std::size_t>(cols) * ckk, 0.0);

    for (int n = 0; n < n_; ++n) {
      const double* xn = x.data() + static_cast<std::size_t>(n) * cin_ * h_ * w_;
      const double* gon = grad.data() + static_cast<std::size_t>(n) * cout_ * cols;
      double* gxn = gx.data() + static_cast<std::size_t>(n) * cin_ * h_ * w_;

      if (direct) {
        // dX += W^T * dY, straight into the input gradient.
        gemm_add(wt_.data(), gon, gxn, ckk, cout_, cols);
        transpose(xn, rowpanel_.data(), cin_, cols);
      } else {
        std::memset(dpatch_.data(), 0,
                    sizeof(double) * static_cast<std::size_t>(ckk) * cols);
        gemm_add(wt_.data(), gon, dpatch_.data(), ckk, cout_, cols);
        col2im_add(dpatch_.data(), gxn);
        im2col(xn, patch_.data());
        transpose(patch_.data(), rowpanel_.data(), ckk, cols);
      }
      // dW += dY * panel^T
      gemm_add(gon, rowpanel_.data(), wgrad.data(), cout_, cols, ckk);
    }
  }

  Tensor weight;
  Tensor wgrad;

 private:
  // patch[(c*k+ky)*k+kx][yo*wo+xo] = x[c][yo*s+ky-p][xo*s+kx-p], zero padded.
  void im2col(const double* xn, double* patch) const {
    const int cols = ho_ * wo_;
    for (int c = 0; c < cin_; ++c) {
      const double* xc = xn + static_cast<std::size_t>(c) * h_ * w_;
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          double* row =
              patch + static_cast<std::size_t>((c * k_ + ky) * k_ + kx) * cols;
          for (int yo = 0; yo < ho_; ++yo) {
            const int y = yo * stride_ + ky - pad_;
            double* dst = row + static_cast<std::size_t>(yo) * wo_;
            if (y < 0 || y >= h_) {
              std::memset(dst, 0, sizeof(double) * static_cast<std::size_t>(wo_));
              continue;
            }
            const double* src = xc + static_cast<std::size_t>(y) * w_;
            for (int xo = 0; xo < wo_; ++xo) {
              const int xpos = xo * stride_ + kx - pad_;
              dst[xo] = (xpos >= 0 && xpos < w_) ? src[xpos] : 0.0;
            }
          }
        }
      }
    }
  }

  void col2im_add(const double* patch, double* gxn) const {
    const int cols = ho_ * wo_;
    for (int c = 0; c < cin_; ++c) {
      double* gc = gxn + static_cast<std::size_t>(c) * h_ * w_;
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          const double* row =
              patch + static_cast<std::size_t>((c * k_ + ky) * k_ + kx) * cols;
          for (int yo = 0; yo < ho_; ++yo) {
            const int y = yo * stride_ + ky - pad_;
            if (y < 0 || y >= h_) continue;
            double* dst = gc + static_cast<std::size_t>(y) * w_;
            const double* src = row + static_cast<std::size_t>(yo) * wo_;
            for (int xo = 0; xo < wo_; ++xo) {
              const int xpos = xo * stride_ + kx - pad_;
              if (xpos >= 0 && xpos < w_) dst[xpos] += src[xo];
            }
          }
        }
      }
    }
  }

  static void transpose(const double* src, double* dst, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        dst[static_cast<std::size_t>(c) * rows + r] =
            src[static_cast<std::size_t>(r) * cols + c];
      }
    }
  }

  int cin_, cout_, k_, stride_, pad_;
  int n_ = 0, h_ = 0, w_ = 0, ho_ = 0, wo_ = 0;
  std::vector<double> patch_, dpatch_, wt_, rowpanel_;
};

// Batch normalization over (N, H, W) per channel with current-batch
// statistics and biased variance; untrained-network convention throughout.
// bn_identity short-circuits the whole node for the SynFlow pass.
class BatchNormNode final : public Node {
 public:
  BatchNormNode(std::string name, Node* src, int channels, double eps = 1e-5)
      : Node(OpKind::batch_norm, std::move(name)),
        c_(channels),
        eps_(eps),
        gamma({channels}),
        beta({channels}),
        ggrad({channels}),
        bgrad({channels}) {
    inputs = {src};
    gamma.fill(1.0);
  }

  std::vector<Tensor*> params() override { return {&gamma, &beta}; }
  std::vector<Tensor*> param_grads() override { return {&ggrad, &bgrad}; }

  void forward(bool bn_identity) override {
    const Tensor& x = in(0)->out;
    require(x.shape.size() == 4 && x.dim(1) == c_, "batch-norm channel mismatch");
    out.resize(x.shape);
    grad.resize(x.shape);
    if (bn_identity) {
      out.v = x.v;
      return;
    }
    const int n = x.dim(0), hw = x.dim(2) * x.dim(3);
    const double m = static_cast<double>(n) * hw;
    mean_.assign(static_cast<std::size_t>(c_), 0.0);
    invstd_.assign(static_cast<std::size_t>(c_), 0.0);
    for (int c = 0; c < c_; ++c) {
      double sum = 0.0;
      for (int b = 0; b < n; ++b) {
        const double* xc = channel(x.data(), b, c, hw);
        for (int i = 0; i < hw; ++i) sum += xc[i];
      }
      const double mu = sum / m;
      double ss = 0.0;
      for (int b = 0; b < n; ++b) {
        const double* xc = channel(x.data(), b, c, hw);
        for (int i = 0; i < hw; ++i) {
          const double d = xc[i] - mu;
          ss += d * d;
        }
      }
      const double r = 1.0 / std::sqrt(ss / m + eps_);
      mean_[static_cast<std::size_t>(c)] = mu;
      invstd_[static_cast<std::size_t>(c)] = r;
      const double g = gamma.v[static_cast<std::size_t>(c)];
      const double bshift = beta.v[static_cast<std::size_t>(c)];
      for (int b = 0; b < n; ++b) {
        const double* xc = channel(x.data(), b, c, hw);
        double* yc = channel(out.data(), b, c, hw);
        for (int i = 0; i < hw; ++i) yc[i] = g * (xc[i] - mu) * r + bshift;
      }
    }
  }

  void backward(bool bn_identity) override {
    const Tensor& x = in(0)->out;
    Tensor& gx = in(0)->grad;
    const int n = x.dim(0), hw = x.dim(2) * x.dim(3);
    if (bn_identity) {
      for (std::size_t i = 0; i < grad.size(); ++i) gx.v[i] += grad.v[i];
      return;
    }
    const double m = static_cast<double>(n) * hw;
    for (int c = 0; c < c_; ++c) {
      const double mu = mean_[static_cast<std::size_t>(c)];
      const double r = invstd_[static_cast<std::size_t>(c)];
      const double g = gamma.v[static_cast<std::size_t>(c)];
      double s1 = 0.0, s2 = 0.0;
      for (int b = 0; b < n; ++b) {
        const double* xc = channel(x.data(), b, c, hw);
        const double* gy = channel(grad.data(), b, c, hw);
        for (int i = 0; i < hw; ++i) {
          s1 += gy[i];
          s2 += gy[i] * (xc[i] - mu) * r;
        }
      }
      ggrad.v[static_cast<std::size_t>(c)] += s2;
      bgrad.v[static_cast<std::size_t>(c)] += s1;
      const double k1 = s1 / m, k2 = s2 / m;
      for (int b = 0; b < n; ++b) {
        const double* xc = channel(x.data(), b, c, hw);
        const double* gy = channel(grad.data(), b, c, hw);
        double* gxc = channel(gx.data(), b, c, hw);
        for (int i = 0; i < hw; ++i) {
          const double xhat = (xc[i] - mu) * r;
          gxc[i] += g * r * (gy[i] - k1 - xhat * k2);
        }
      }
    }
  }

  Tensor gamma, beta, ggrad, bgrad;

 private:
  template <typename T>
  T* channel(T* base, int b, int c, int hw) const {
    return base + (static_cast<std::size_t>(b) * c_ + c) * hw;
  }

  int c_;
  double eps_;
  std::vector<double> mean_, invstd_;
};

class ReluNode final : public Node {
 public:
  ReluNode(std::string name, Node* src) : Node(OpKind::relu, std::move(name)) {
    inputs = {src};
  }

  void forward(bool) override {
    const Tensor& x = in(0)->out;
    out.resize(x.shape);
    grad.resize(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) out.v[i] = x.v[i] > 0.0 ? x.v[i] : 0.0;
  }

  void backward(bool) override {
    const Tensor& x = in(0)->out;
    Tensor& gx = in(0)->grad;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x.v[i] > 0.0) gx.v[i] += grad.v[i];
    }
  }
};

// 3x3 average pooling, stride 1, zero padding 1, fixed divisor 9 (padding
// counts toward the mean, matching the benchmark op).
class AvgPool3Node final : public Node {
 public:
  AvgPool3Node(std::string name, Node* src)
      : Node(OpKind::avg_pool3, std::move(name)) {
    inputs = {src};
  }

  void forward(bool) override {
    const Tensor& x = in(0)->out;
    require(x.shape.size() == 4, "avg-pool expects NCHW");
    out.resize(x.shape);
    grad.resize(x.shape);
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    for (int img = 0; img < n * c; ++img) {
      const double* src = x.data() + static_cast<std::size_t>(img) * h * w;
      double* dst = out.data() + static_cast<std::size_t>(img) * h * w;
      for (int y = 0; y < h; ++y) {
        for (int xo = 0; xo < w; ++xo) {
          double s = 0.0;
          for (int dy = -1; dy <= 1; ++dy) {
            const int yy = y + dy;
            if (yy < 0 || yy >= h) continue;
            for (int dx = -1; dx <= 1; ++dx) {
              const int xx = xo + dx;
              if (xx < 0 || xx >= w) continue;
              s += src[static_cast<std::size_t>(yy) * w + xx];
            }
          }
          dst[static_cast<std::size_t>(y) * w + xo] = s / 9.0;
        }
      }
    }
  }

  void backward(bool) override {
    const Tensor& x = in(0)->out;
    Tensor& gx = in(0)->grad;
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    for (int img = 0; img < n * c; ++img) {
      const double* gy = grad.data() + static_cast<std::size_t>(img) * h * w;
      double* gdst = gx.data() + static_cast<std::size_t>(img) * h * w;
      for (int y = 0; y < h; ++y) {
        for (int xo = 0; xo < w; ++xo) {
          const double v = gy[static_cast<std::size_t>(y) * w + xo] / 9.0;
          for (int dy = -1; dy <= 1; ++dy) {
            const int yy = y + dy;
            if (yy < 0 || yy >= h) continue;
            for (int dx = -1; dx <= 1; ++dx) {
              const int xx = xo + dx;
              if (xx < 0 || xx >= w) continue;
              gdst[static_cast<std::size_t>(yy) * w + xx] += v;
            }
          }
        }
      }
    }
  }
};

class GlobalAvgPoolNode final : public Node {
 public:
  GlobalAvgPoolNode(std::string name, Node* src)
      : Node(OpKind::global_avg_pool, std::move(name)) {
    inputs = {src};
  }

  void forward(bool) override {
    const Tensor& x = in(0)->out;
    require(x.shape.size() == 4, "global-avg-pool expects NCHW");
    const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    out.resize({n, c});
    grad.resize({n, c});
    for (int i = 0; i < n * c; ++i) {
      const double* src = x.data() + static_cast<std::size_t>(i) * hw;
      double s = 0.0;
      for (int j = 0; j < hw; ++j) s += src[j];
      out.v[static_cast<std::size_t>(i)] = s / hw;
    }
  }

  void backward(bool) override {
    const Tensor& x = in(0)->out;
    Tensor& gx = in(0)->grad;
    const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    for (int i = 0; i < n * c; ++i) {
      const double v = grad.v[static_cast<std::size_t>(i)] / hw;
      double* dst = gx.data() + static_cast<std::size_t>(i) * hw;
      for (int j = 0; j < hw; ++j) dst[j] += v;
    }
  }
};

class LinearNode final : public Node {
 public:
  LinearNode(std::string name, Node* src, int in_features, int out_features)
      : Node(OpKind::linear, std::move(name)),
        fin_(in_features),
        fout_(out_features),
        weight({out_features, in_features}),
        bias({out_features}),
        wgrad({out_features, in_features}),
        bgrad({out_features}) {
    inputs = {src};
  }

  std::vector<Tensor*> params() override { return {&weight, &bias}; }
  std::vector<Tensor*> param_grads() override { return {&wgrad, &bgrad}; }

  void forward(bool) override {
    const Tensor& x = in(0)->out;
    require(x.shape.size() == 2 && x.dim(1) == fin_, "linear feature mismatch");
    const int n = x.dim(0);
    out.resize({n, fout_});
    grad.resize({n, fout_});
    for (int b = 0; b < n; ++b) {
      const double* xb = x.data() + static_cast<std::size_t>(b) * fin_;
      double* yb = out.data() + static_cast<std::size_t>(b) * fout_;
      for (int o = 0; o < fout_; ++o) {
        const double* wr = weight.data() + static_cast<std::size_t>(o) * fin_;
        double s = bias.v[static_cast<std::size_t>(o)];
        for (int f = 0; f < fin_; ++f) s += xb[f] * wr[f];
        yb[o] = s;
      }
    }
  }

  void backward(bool) override {
    const Tensor& x = in(0)->out;
    Tensor& gx = in(0)->grad;
    const int n = x.dim(0);
    for (int b = 0; b < n; ++b) {
      const double* xb = x.data() + static_cast<std::size_t>(b) * fin_;
      const double* gy = grad.data() + static_cast<std::size_t>(b) * fout_;
      double* gxb = gx.data() + static_cast<std::size_t>(b) * fin_;
      for (int o = 0; o < fout_; ++o) {
        const double g = gy[o];
        if (g == 0.0) continue;
        const double* wr = weight.data() + static_cast<std::size_t>(o) * fin_;
        double* wg = wgrad.data() + static_cast<std::size_t>(o) * fin_;
        bgrad.v[static_cast<std::size_t>(o)] += g;
        for (int f = 0; f < fin_; ++f) {
          wg[f] += g * xb[f];
          gxb[f] += g * wr[f];
        }
      }
    }
  }

  Tensor weight, bias, wgrad, bgrad;

 private:
  int fin_, fout_;
};

class AddNode final : public Node {
 public:
  AddNode(std::string name, std::vector<Node*> srcs)
      : Node(OpKind::add, std::move(name)) {
    inputs = std::move(srcs);
  }

  void forward(bool) override {
    const Tensor& first = in(0)->out;
    out.resize(first.shape);
    grad.resize(first.shape);
    out.v = first.v;
    for (std::size_t s = 1; s < inputs.size(); ++s) {
      const Tensor& x = inputs[s]->out;
      require(x.shape == first.shape, "add operand shape mismatch");
      for (std::size_t i = 0; i < x.size(); ++i) out.v[i] += x.v[i];
    }
  }

  void backward(bool) override {
    for (Node* src : inputs) {
      for (std::size_t i = 0; i < grad.size(); ++i) src->grad.v[i] += grad.v[i];
    }
  }
};

// "skip-connect" passes through, "none" emits a zero tensor of the input
// shape so cell arity stays static.
class ZeroizeNode final : public Node {
 public:
  enum class Mode { identity, zero };

  ZeroizeNode(std::string name, Node* src, Mode mode)
      : Node(OpKind::zeroize, std::move(name)), mode_(mode) {
    inputs = {src};
  }

  Mode mode() const { return mode_; }

  void forward(bool) override {
    const Tensor& x = in(0)->out;
    out.resize(x.shape);
    grad.resize(x.shape);
    if (mode_ == Mode::identity) {
      out.v = x.v;
    } else {
      out.fill(0.0);
    }
  }

  void backward(bool) override {
    if (mode_ == Mode::identity) {
      Tensor& gx = in(0)->grad;
      for (std::size_t i = 0; i < grad.size(); ++i) gx.v[i] += grad.v[i];
    }
  }

 private:
  Mode mode_;
};

// Mean cross-entropy over the batch with a fused, max-shifted softmax.
class SoftmaxCrossEntropyNode final : public Node {
 public:
  SoftmaxCrossEntropyNode(std::string name, Node* logits)
      : Node(OpKind::softmax_ce_loss, std::move(name)) {
    inputs = {logits};
  }

  void set_labels(std::vector<int> labels) { labels_ = std::move(labels); }

  void forward(bool) override {
    const Tensor& x = in(0)->out;
    require(x.shape.size() == 2, "loss expects [N x classes] logits");
    const int n = x.dim(0), k = x.dim(1);
    require(static_cast<int>(labels_.size()) == n, "label count != batch size");
    probs_.resize({n, k});
    out.resize({1});
    grad.resize({1});
    double loss = 0.0;
    for (int b = 0; b < n; ++b) {
      const double* xb = x.data() + static_cast<std::size_t>(b) * k;
      double* pb = probs_.data() + static_cast<std::size_t>(b) * k;
      double mx = xb[0];
      for (int j = 1; j < k; ++j) mx = std::max(mx, xb[j]);
      double z = 0.0;
      for (int j = 0; j < k; ++j) {
        pb[j] = std::exp(xb[j] - mx);
        z += pb[j];
      }
      for (int j = 0; j < k; ++j) pb[j] /= z;
      const int y = labels_[static_cast<std::size_t>(b)];
      require(y >= 0 && y < k, "label out of range");
      loss -= std::log(std::max(pb[y], 1e-300));
    }
    out.v[0] = loss / n;
  }

  void backward(bool) override {
    const Tensor& x = in(0)->out;
    Tensor& gx = in(0)->grad;
    const int n = x.dim(0), k = x.dim(1);
    const double g = grad.v[0] / n;
    for (int b = 0; b < n; ++b) {
      const double* pb = probs_.data() + static_cast<std::size_t>(b) * k;
      double* gxb = gx.data() + static_cast<std::size_t>(b) * k;
      const int y = labels_[static_cast<std::size_t>(b)];
      for (int j = 0; j < k; ++j) gxb[j] += g * (pb[j] - (j == y ? 1.0 : 0.0));
    }
  }

 private:
  std::vector<int> labels_;
  Tensor probs_;
};

// Sum of every element of the input; the SynFlow and Jacobian losses.
class SumNode final : public Node {
 public:
  SumNode(std::string name, Node* src) : Node(OpKind::sum_loss, std::move(name)) {
    inputs = {src};
  }

  void forward(bool) override {
    const Tensor& x = in(0)->out;
    out.resize({1});
    grad.resize({1});
    double s = 0.0;
    for (double v : x.v) s += v;
    out.v[0] = s;
  }

  void backward(bool) override {
    Tensor& gx = in(0)->grad;
    const double g = grad.v[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx.v[i] += g;
  }
};

}  // namespace zsnas
