#include "facegan/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace facegan {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

template <typename T>
void require_finite(const Tensor<T>& t, const char* op) {
  for (T v : t.data())
    if (!std::isfinite(v)) throw NumericalError(std::string("non-finite value produced by ") + op);
}

template <typename T>
Graph<T>& same_graph(Var<T> a, Var<T> b) {
  if (a.graph == nullptr || a.graph != b.graph) throw Error("operands belong to different graphs");
  return *a.graph;
}

void require_rank(const Shape& s, int rank, const char* op, const char* what) {
  if (static_cast<int>(s.size()) != rank)
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + shape_str(s));
}

// col[(c*K + ky)*K + kx, y*W + x] = in[c, y + ky - p, x + kx - p] (0 outside)
template <typename T>
void im2col(const T* in, int channels, int h, int w, int k, T* col) {
  const int pad = k / 2;
  const int hw = h * w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + static_cast<std::ptrdiff_t>((c * k + ky) * k + kx) * hw;
        const int dy = ky - pad;
        const int dx = kx - pad;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          T* dst = row + y * w;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, T(0));
            continue;
          }
          const T* src = in + (static_cast<std::ptrdiff_t>(c) * h + sy) * w;
          for (int x = 0; x < w; ++x) {
            const int sx = x + dx;
            dst[x] = (sx >= 0 && sx < w) ? src[sx] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int channels, int h, int w, int k, T* out) {
  const int pad = k / 2;
  const int hw = h * w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + static_cast<std::ptrdiff_t>((c * k + ky) * k + kx) * hw;
        const int dy = ky - pad;
        const int dx = kx - pad;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const T* src = row + y * w;
          T* dst = out + (static_cast<std::ptrdiff_t>(c) * h + sy) * w;
          for (int x = 0; x < w; ++x) {
            const int sx = x + dx;
            if (sx >= 0 && sx < w) dst[sx] += src[x];
          }
        }
      }
    }
  }
}

}  // namespace

// ---- Graph ---------------------------------------------------------------

template <typename T>
Var<T> Graph<T>::leaf(Tensor<T> value, bool requires_grad) {
  require_finite(value, "leaf");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var<T> Graph<T>::record(const char* op, Tensor<T> value, std::vector<int> inputs, BackwardFn backward) {
  require_finite(value, op);
  Node n;
  n.value = std::move(value);
  n.op = op;
  for (int i : inputs) {
    if (i < 0 || i >= static_cast<int>(nodes_.size())) throw Error("operation input is not on the tape");
    n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(i)].requires_grad;
  }
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Tensor<T>& Graph<T>::accumulate(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> loss) {
  if (loss.graph != this) throw Error("loss is not on this graph");
  Node& root = nodes_[static_cast<std::size_t>(loss.id)];
  if (root.value.size() != 1)
    throw ShapeError("backward requires a scalar loss, got shape " + shape_str(root.value.shape()));
  for (Node& n : nodes_) n.grad = Tensor<T>();
  root.grad = Tensor<T>(root.value.shape(), T(1));
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.backward && !n.grad.empty()) n.backward(*this, id);
  }
  for (Node& n : nodes_) require_finite(n.grad, "backward");
}

template <typename T>
Tensor<T> Graph<T>::gradient(Var<T> v) const {
  const Node& n = node(v.id);
  if (n.grad.empty()) return Tensor<T>(n.value.shape());
  return n.grad;
}

// ---- operators -----------------------------------------------------------

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> weight, Var<T> bias) {
  Graph<T>& g = same_graph(input, weight);
  same_graph(input, bias);
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  require_rank(xs, 4, "conv2d", "input");
  require_rank(ws, 4, "conv2d", "weight");
  const int n = xs[0], c1 = xs[1], h = xs[2], w = xs[3];
  const int c2 = ws[0], k = ws[2];
  if (ws[1] != c1)
    throw ShapeError("conv2d: weight expects " + std::to_string(ws[1]) + " input channels, input has " +
                     std::to_string(c1));
  if (ws[2] != ws[3] || k % 2 == 0)
    throw ShapeError("conv2d: kernel must be square and odd, got " + shape_str(ws));
  if (bias.shape() != Shape{c2})
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(c2) + " output channels");

  const int hw = h * w;
  const int ckk = c1 * k * k;
  Tensor<T> out({n, c2, h, w});
  const CMapR<T> wm(weight.value().ptr(), c2, ckk);
  const T* bp = bias.value().ptr();
  AlignedVector<T> col(k == 1 ? 0 : static_cast<std::size_t>(ckk) * hw);
  for (int s = 0; s < n; ++s) {
    const T* xin = input.value().ptr() + static_cast<std::ptrdiff_t>(s) * c1 * hw;
    const T* colp = xin;
    if (k != 1) {
      im2col(xin, c1, h, w, k, col.data());
      colp = col.data();
    }
    MapR<T> om(out.ptr() + static_cast<std::ptrdiff_t>(s) * c2 * hw, c2, hw);
    om.noalias() = wm * CMapR<T>(colp, ckk, hw);
    for (int c = 0; c < c2; ++c) om.row(c).array() += bp[c];
  }

  const int xi = input.id, wi = weight.id, bi = bias.id;
  return g.record("conv2d", std::move(out), {xi, wi, bi}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& gout = gr.grad_of(self);
    const Tensor<T>& x = gr.value(xi);
    const CMapR<T> wmat(gr.value(wi).ptr(), c2, ckk);
    const bool need_x = gr.requires_grad(xi);
    const bool need_w = gr.requires_grad(wi);
    const bool need_b = gr.requires_grad(bi);
    AlignedVector<T> colb((k == 1 || !need_w) ? 0 : static_cast<std::size_t>(ckk) * hw);
    AlignedVector<T> dcol((k == 1 || !need_x) ? 0 : static_cast<std::size_t>(ckk) * hw);
    T* dx = need_x ? gr.accumulate(xi).ptr() : nullptr;
    T* dw = need_w ? gr.accumulate(wi).ptr() : nullptr;
    T* db = need_b ? gr.accumulate(bi).ptr() : nullptr;
    for (int s = 0; s < n; ++s) {
      const CMapR<T> go(gout.ptr() + static_cast<std::ptrdiff_t>(s) * c2 * hw, c2, hw);
      if (need_b) {
        for (int c = 0; c < c2; ++c) db[c] += go.row(c).sum();
      }
      const T* xin = x.ptr() + static_cast<std::ptrdiff_t>(s) * c1 * hw;
      if (need_w) {
        const T* colp = xin;
        if (k != 1) {
          im2col(xin, c1, h, w, k, colb.data());
          colp = colb.data();
        }
        MapR<T>(dw, c2, ckk).noalias() += go * CMapR<T>(colp, ckk, hw).transpose();
      }
      if (need_x) {
        T* dxs = dx + static_cast<std::ptrdiff_t>(s) * c1 * hw;
        if (k == 1) {
          MapR<T>(dxs, c1, hw).noalias() += wmat.transpose() * go;
        } else {
          MapR<T>(dcol.data(), ckk, hw).noalias() = wmat.transpose() * go;
          col2im_add(dcol.data(), c1, h, w, k, dxs);
        }
      }
    }
  });
}

template <typename T>
Var<T> avg_pool2(Var<T> input) {
  Graph<T>& g = *input.graph;
  const Shape& xs = input.shape();
  require_rank(xs, 4, "avg_pool2", "input");
  const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  if (h % 2 != 0 || w % 2 != 0)
    throw ShapeError("avg_pool2: spatial size must be even, got " + std::to_string(h) + "x" + std::to_string(w));
  const int ho = h / 2, wo = w / 2;
  Tensor<T> out({n, c, ho, wo});
  const T* x = input.value().ptr();
  for (int p = 0; p < n * c; ++p) {
    const T* src = x + static_cast<std::ptrdiff_t>(p) * h * w;
    T* dst = out.ptr() + static_cast<std::ptrdiff_t>(p) * ho * wo;
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx) {
        const T* a = src + (2 * y) * w + 2 * xx;
        dst[y * wo + xx] = ((a[0] + a[1]) + (a[w] + a[w + 1])) * T(0.25);
      }
  }
  const int xi = input.id;
  return g.record("avg_pool2", std::move(out), {xi}, [=](Graph<T>& gr, int self) {
    const T* go = gr.grad_of(self).ptr();
    T* dx = gr.accumulate(xi).ptr();
    for (int p = 0; p < n * c; ++p) {
      const T* src = go + static_cast<std::ptrdiff_t>(p) * ho * wo;
      T* dst = dx + static_cast<std::ptrdiff_t>(p) * h * w;
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx) {
          const T v = src[y * wo + xx] * T(0.25);
          T* a = dst + (2 * y) * w + 2 * xx;
          a[0] += v;
          a[1] += v;
          a[w] += v;
          a[w + 1] += v;
        }
    }
  });
}

template <typename T>
Var<T> upsample_nearest2(Var<T> input) {
  Graph<T>& g = *input.graph;
  const Shape& xs = input.shape();
  require_rank(xs, 4, "upsample_nearest2", "input");
  const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const int ho = 2 * h, wo = 2 * w;
  Tensor<T> out({n, c, ho, wo});
  const T* x = input.value().ptr();
  for (int p = 0; p < n * c; ++p) {
    const T* src = x + static_cast<std::ptrdiff_t>(p) * h * w;
    T* dst = out.ptr() + static_cast<std::ptrdiff_t>(p) * ho * wo;
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx) dst[y * wo + xx] = src[(y / 2) * w + xx / 2];
  }
  const int xi = input.id;
  return g.record("upsample_nearest2", std::move(out), {xi}, [=](Graph<T>& gr, int self) {
    const T* go = gr.grad_of(self).ptr();
    T* dx = gr.accumulate(xi).ptr();
    for (int p = 0; p < n * c; ++p) {
      const T* src = go + static_cast<std::ptrdiff_t>(p) * ho * wo;
      T* dst = dx + static_cast<std::ptrdiff_t>(p) * h * w;
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx) dst[(y / 2) * w + xx / 2] += src[y * wo + xx];
    }
  });
}

template <typename T>
Var<T> activation(Activation kind, Var<T> input) {
  Graph<T>& g = *input.graph;
  Tensor<T> out(input.shape());
  const T* x = input.value().ptr();
  const std::size_t sz = out.size();
  if (kind == Activation::kElu) {
    for (std::size_t i = 0; i < sz; ++i) out[i] = x[i] >= T(0) ? x[i] : std::expm1(x[i]);
  } else {
    for (std::size_t i = 0; i < sz; ++i) out[i] = std::tanh(x[i]);
  }
  const int xi = input.id;
  return g.record(kind == Activation::kElu ? "elu" : "tanh", std::move(out), {xi},
                  [=](Graph<T>& gr, int self) {
                    const T* go = gr.grad_of(self).ptr();
                    const T* y = gr.value(self).ptr();
                    const T* xv = gr.value(xi).ptr();
                    T* dx = gr.accumulate(xi).ptr();
                    if (kind == Activation::kElu) {
                      for (std::size_t i = 0; i < sz; ++i) dx[i] += xv[i] >= T(0) ? go[i] : go[i] * (y[i] + T(1));
                    } else {
                      for (std::size_t i = 0; i < sz; ++i) dx[i] += go[i] * (T(1) - y[i] * y[i]);
                    }
                  });
}

template <typename T>
Var<T> fully_connected(Var<T> input, Var<T> weight, Var<T> bias) {
  Graph<T>& g = same_graph(input, weight);
  same_graph(input, bias);
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  require_rank(xs, 2, "fully_connected", "input");
  require_rank(ws, 2, "fully_connected", "weight");
  const int n = xs[0], d1 = xs[1], d2 = ws[0];
  if (ws[1] != d1)
    throw ShapeError("fully_connected: weight " + shape_str(ws) + " incompatible with input " + shape_str(xs));
  if (bias.shape() != Shape{d2})
    throw ShapeError("fully_connected: bias shape " + shape_str(bias.shape()) + " expected [" +
                     std::to_string(d2) + "]");
  Tensor<T> out({n, d2});
  MapR<T> om(out.ptr(), n, d2);
  om.noalias() = CMapR<T>(input.value().ptr(), n, d1) * CMapR<T>(weight.value().ptr(), d2, d1).transpose();
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < d2; ++c) om(r, c) += bias.value()[static_cast<std::size_t>(c)];
  const int xi = input.id, wi = weight.id, bi = bias.id;
  return g.record("fully_connected", std::move(out), {xi, wi, bi}, [=](Graph<T>& gr, int self) {
    const CMapR<T> go(gr.grad_of(self).ptr(), n, d2);
    if (gr.requires_grad(xi))
      MapR<T>(gr.accumulate(xi).ptr(), n, d1).noalias() += go * CMapR<T>(gr.value(wi).ptr(), d2, d1);
    if (gr.requires_grad(wi))
      MapR<T>(gr.accumulate(wi).ptr(), d2, d1).noalias() += go.transpose() * CMapR<T>(gr.value(xi).ptr(), n, d1);
    if (gr.requires_grad(bi)) {
      T* db = gr.accumulate(bi).ptr();
      for (int c = 0; c < d2; ++c) db[c] += go.col(c).sum();
    }
  });
}

template <typename T>
Var<T> l1_mean(Var<T> a, Var<T> b) {
  Graph<T>& g = same_graph(a, b);
  if (a.shape() != b.shape())
    throw ShapeError("l1_mean: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t sz = a.value().size();
  if (sz == 0) throw ShapeError("l1_mean: empty operands");
  const T* av = a.value().ptr();
  const T* bv = b.value().ptr();
  double acc = 0.0;
  for (std::size_t i = 0; i < sz; ++i) acc += std::abs(static_cast<double>(av[i]) - static_cast<double>(bv[i]));
  Tensor<T> out({1}, static_cast<T>(acc / static_cast<double>(sz)));
  const int ai = a.id, bi = b.id;
  return g.record("l1_mean", std::move(out), {ai, bi}, [=](Graph<T>& gr, int self) {
    const T scale = gr.grad_of(self)[0] / static_cast<T>(sz);
    const T* x = gr.value(ai).ptr();
    const T* y = gr.value(bi).ptr();
    T* da = gr.requires_grad(ai) ? gr.accumulate(ai).ptr() : nullptr;
    T* db = gr.requires_grad(bi) ? gr.accumulate(bi).ptr() : nullptr;
    for (std::size_t i = 0; i < sz; ++i) {
      const T d = x[i] - y[i];
      const T s = d > T(0) ? scale : (d < T(0) ? -scale : T(0));
      if (da) da[i] += s;
      if (db) db[i] -= s;
    }
  });
}

template <typename T>
Var<T> axpy(Var<T> a, T scale, Var<T> b) {
  Graph<T>& g = same_graph(a, b);
  if (a.shape() != b.shape())
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = a.value();
  const T* bv = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += scale * bv[i];
  const int ai = a.id, bi = b.id;
  return g.record("axpy", std::move(out), {ai, bi}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad_of(self);
    if (gr.requires_grad(ai)) {
      T* da = gr.accumulate(ai).ptr();
      for (std::size_t i = 0; i < go.size(); ++i) da[i] += go[i];
    }
    if (gr.requires_grad(bi)) {
      T* db = gr.accumulate(bi).ptr();
      for (std::size_t i = 0; i < go.size(); ++i) db[i] += scale * go[i];
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return axpy(a, T(1), b);
}

template <typename T>
Var<T> sum(Var<T> x) {
  Graph<T>& g = *x.graph;
  double acc = 0.0;
  for (T v : x.value().data()) acc += v;
  const int xi = x.id;
  return g.record("sum", Tensor<T>({1}, static_cast<T>(acc)), {xi}, [=](Graph<T>& gr, int self) {
    const T go = gr.grad_of(self)[0];
    for (T& v : gr.accumulate(xi).data()) v += go;
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Graph<T>& g = *x.graph;
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const int xi = x.id;
  return g.record("reshape", std::move(out), {xi}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad_of(self);
    T* dx = gr.accumulate(xi).ptr();
    for (std::size_t i = 0; i < go.size(); ++i) dx[i] += go[i];
  });
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  Graph<T>& g = same_graph(a, b);
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  require_rank(as, 4, "concat_channels", "first operand");
  require_rank(bs, 4, "concat_channels", "second operand");
  if (as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3])
    throw ShapeError("concat_channels: incompatible shapes " + shape_str(as) + " and " + shape_str(bs));
  const int n = as[0], ca = as[1], cb = bs[1], hw = as[2] * as[3];
  Tensor<T> out({n, ca + cb, as[2], as[3]});
  for (int s = 0; s < n; ++s) {
    std::copy_n(a.value().ptr() + static_cast<std::ptrdiff_t>(s) * ca * hw, ca * hw,
                out.ptr() + static_cast<std::ptrdiff_t>(s) * (ca + cb) * hw);
    std::copy_n(b.value().ptr() + static_cast<std::ptrdiff_t>(s) * cb * hw, cb * hw,
                out.ptr() + (static_cast<std::ptrdiff_t>(s) * (ca + cb) + ca) * hw);
  }
  const int ai = a.id, bi = b.id;
  return g.record("concat_channels", std::move(out), {ai, bi}, [=](Graph<T>& gr, int self) {
    const T* go = gr.grad_of(self).ptr();
    for (int s = 0; s < n; ++s) {
      const T* src = go + static_cast<std::ptrdiff_t>(s) * (ca + cb) * hw;
      if (gr.requires_grad(ai)) {
        T* da = gr.accumulate(ai).ptr() + static_cast<std::ptrdiff_t>(s) * ca * hw;
        for (int i = 0; i < ca * hw; ++i) da[i] += src[i];
      }
      if (gr.requires_grad(bi)) {
        T* db = gr.accumulate(bi).ptr() + static_cast<std::ptrdiff_t>(s) * cb * hw;
        for (int i = 0; i < cb * hw; ++i) db[i] += src[ca * hw + i];
      }
    }
  });
}

// ---- Adam ----------------------------------------------------------------

template <typename T>
void Adam<T>::step(std::span<Parameter<T>> params, double lr) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.shape());
      v_.emplace_back(p.value.shape());
    }
  }
  if (m_.size() != params.size()) throw Error("Adam: parameter list changed since the first step");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (p.frozen) continue;
    if (p.grad.size() != p.value.size()) throw Error("Adam: missing gradient for parameter " + p.name);
    if (m_[i].shape() != p.value.shape()) throw ShapeError("Adam: moment buffer shape mismatch for " + p.name);
  }
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bc2 = std::sqrt(1.0 - std::pow(b2, static_cast<double>(t_)));
  const T step_size = static_cast<T>(lr / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps = static_cast<T>(options_.eps);
  const T tb1 = static_cast<T>(b1), tb2 = static_cast<T>(b2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (p.frozen) continue;
    T* m = m_[i].ptr();
    T* v = v_[i].ptr();
    T* w = p.value.ptr();
    const T* gr = p.grad.ptr();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      m[j] = tb1 * m[j] + (T(1) - tb1) * gr[j];
      v[j] = tb2 * v[j] + (T(1) - tb2) * gr[j] * gr[j];
      w[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_bc2 + eps);
    }
  }
}

// ---- gradient check ------------------------------------------------------

GradCheckResult check_gradients(const GradCheckFn& f, const std::vector<Tensor<double>>& inputs, double eps,
                                std::size_t max_entries_per_input, std::uint64_t seed) {
  auto evaluate = [&](const std::vector<Tensor<double>>& xs) {
    Graph<double> g;
    std::vector<Var<double>> vars;
    for (const auto& x : xs) vars.push_back(g.leaf(x, false));
    return f(g, vars).value()[0];
  };

  std::vector<Tensor<double>> analytic;
  {
    Graph<double> g;
    std::vector<Var<double>> vars;
    for (const auto& x : inputs) vars.push_back(g.leaf(x, true));
    Var<double> loss = f(g, vars);
    g.backward(loss);
    for (const auto& v : vars) analytic.push_back(g.gradient(v));
  }

  GradCheckResult result;
  std::mt19937_64 rng(seed);
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<std::size_t> idx(inputs[i].size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (max_entries_per_input > 0 && idx.size() > max_entries_per_input) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_entries_per_input);
    }
    double max_diff = 0.0, max_mag = 0.0;
    for (std::size_t j : idx) {
      const double orig = probe[i][j];
      probe[i][j] = orig + eps;
      const double fp = evaluate(probe);
      probe[i][j] = orig - eps;
      const double fm = evaluate(probe);
      probe[i][j] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      max_diff = std::max(max_diff, std::abs(numeric - analytic[i][j]));
      max_mag = std::max({max_mag, std::abs(numeric), std::abs(analytic[i][j])});
    }
    result.entries_checked += idx.size();
    // floor keeps exactly-zero gradients from reading as 100% error on roundoff
    const double rel = max_diff / std::max(max_mag, 1e-6);
    if (rel >= result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_input = "input " + std::to_string(i);
    }
  }
  return result;
}

// ---- instantiations ------------------------------------------------------

#define FACEGAN_INSTANTIATE(T)                                       \
  template class Graph<T>;                                           \
  template class Adam<T>;                                            \
  template Var<T> conv2d<T>(Var<T>, Var<T>, Var<T>);                 \
  template Var<T> avg_pool2<T>(Var<T>);                              \
  template Var<T> upsample_nearest2<T>(Var<T>);                      \
  template Var<T> activation<T>(Activation, Var<T>);                 \
  template Var<T> fully_connected<T>(Var<T>, Var<T>, Var<T>);        \
  template Var<T> l1_mean<T>(Var<T>, Var<T>);                        \
  template Var<T> add<T>(Var<T>, Var<T>);                            \
  template Var<T> axpy<T>(Var<T>, T, Var<T>);                        \
  template Var<T> sum<T>(Var<T>);                                    \
  template Var<T> reshape<T>(Var<T>, Shape);                         \
  template Var<T> concat_channels<T>(Var<T>, Var<T>);

FACEGAN_INSTANTIATE(float)
FACEGAN_INSTANTIATE(double)

#undef FACEGAN_INSTANTIATE

}  // namespace facegan
