#include "seas/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace seas {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape " + shape_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

namespace ad {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename Scalar>
void Var<Scalar>::backward() {
  if (!node_->requires_grad) return;
  // Iterative post-order DFS gives a topological order of the tape.
  std::vector<Node<Scalar>*> order;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack;
  std::unordered_set<Node<Scalar>*> marks;
  stack.emplace_back(node_.get(), 0);
  marks.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node<Scalar>* p = n->parents[idx++].get();
      if (p->requires_grad && !marks.count(p)) {
        marks.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad().setOnes();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* n = *it;
    if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
  }
}

namespace {

template <typename S>
using Arr = typename Tensor<S>::Array;
template <typename S>
using RMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapM = Eigen::Map<RMat<S>>;
template <typename S>
using CMapM = Eigen::Map<const RMat<S>>;

template <typename S>
Node<S>& parent(Node<S>& self, std::size_t i) {
  return *self.parents[i];
}

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  require(a == b, std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

void require_rank(const Shape& s, int rank, const char* op) {
  require(static_cast<int>(s.size()) == rank,
          std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(s));
}

template <typename S>
void im2col(const S* x, int channels, int height, int width, int k, int stride, int pad, int out_h,
            int out_w, S* col, Eigen::Index ld, Eigen::Index offset) {
  for (int c = 0; c < channels; ++c) {
    const S* xc = x + static_cast<Eigen::Index>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        S* row = col + static_cast<Eigen::Index>((c * k + ky) * k + kx) * ld + offset;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - pad;
          S* dst = row + static_cast<Eigen::Index>(oy) * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + out_w, S(0));
            continue;
          }
          const S* src = xc + static_cast<Eigen::Index>(iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kx - pad;
            dst[ox] = (ix >= 0 && ix < width) ? src[ix] : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im(const S* col, int channels, int height, int width, int k, int stride, int pad, int out_h,
            int out_w, S* x, Eigen::Index ld, Eigen::Index offset) {
  for (int c = 0; c < channels; ++c) {
    S* xc = x + static_cast<Eigen::Index>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const S* row = col + static_cast<Eigen::Index>((c * k + ky) * k + kx) * ld + offset;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= height) continue;
          const S* src = row + static_cast<Eigen::Index>(oy) * out_w;
          S* dst = xc + static_cast<Eigen::Index>(iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------- elementwise

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  require_same(a.shape(), b.shape(), "add");
  Tensor<S> out(a.shape(), a.value().array() + b.value().array());
  return make_result<S>(std::move(out), {a, b}, [](Node<S>& self) {
    for (std::size_t i = 0; i < 2; ++i) {
      auto& p = parent(self, i);
      if (p.requires_grad) p.ensure_grad() += self.grad;
    }
  });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  require_same(a.shape(), b.shape(), "sub");
  Tensor<S> out(a.shape(), a.value().array() - b.value().array());
  return make_result<S>(std::move(out), {a, b}, [](Node<S>& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    if (pa.requires_grad) pa.ensure_grad() += self.grad;
    if (pb.requires_grad) pb.ensure_grad() -= self.grad;
  });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  require_same(a.shape(), b.shape(), "mul");
  Tensor<S> out(a.shape(), a.value().array() * b.value().array());
  return make_result<S>(std::move(out), {a, b}, [](Node<S>& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    if (pa.requires_grad) pa.ensure_grad() += self.grad * pb.value.array();
    if (pb.requires_grad) pb.ensure_grad() += self.grad * pa.value.array();
  });
}

template <typename S>
Var<S> scale(const Var<S>& a, S factor) {
  Tensor<S> out(a.shape(), a.value().array() * factor);
  return make_result<S>(std::move(out), {a}, [factor](Node<S>& self) {
    parent(self, 0).ensure_grad() += self.grad * factor;
  });
}

template <typename S>
Var<S> add_scalar(const Var<S>& a, S value) {
  Tensor<S> out(a.shape(), a.value().array() + value);
  return make_result<S>(std::move(out), {a}, [](Node<S>& self) { parent(self, 0).ensure_grad() += self.grad; });
}

template <typename S>
Var<S> square(const Var<S>& a) {
  Tensor<S> out(a.shape(), a.value().array().square());
  return make_result<S>(std::move(out), {a}, [](Node<S>& self) {
    auto& p = parent(self, 0);
    p.ensure_grad() += S(2) * self.grad * p.value.array();
  });
}

template <typename S>
Var<S> silu(const Var<S>& a) {
  const Arr<S>& x = a.value().array();
  Arr<S> sig = (S(1) + (-x).exp()).inverse();
  Tensor<S> out(a.shape(), x * sig);
  return make_result<S>(std::move(out), {a}, [](Node<S>& self) {
    auto& p = parent(self, 0);
    const Arr<S>& xv = p.value.array();
    Arr<S> s = (S(1) + (-xv).exp()).inverse();
    p.ensure_grad() += self.grad * (s * (S(1) + xv * (S(1) - s)));
  });
}

template <typename S>
Var<S> exp(const Var<S>& a) {
  Tensor<S> out(a.shape(), a.value().array().exp());
  return make_result<S>(std::move(out), {a}, [](Node<S>& self) {
    parent(self, 0).ensure_grad() += self.grad * self.value.array();
  });
}

template <typename S>
Var<S> gelu(const Var<S>& a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  const Arr<S>& x = a.value().array();
  Arr<S> t = (S(kC) * (x + S(0.044715) * x.cube())).tanh();
  Tensor<S> out(a.shape(), S(0.5) * x * (S(1) + t));
  return make_result<S>(std::move(out), {a}, [](Node<S>& self) {
    auto& p = parent(self, 0);
    const Arr<S>& xv = p.value.array();
    Arr<S> tv = (S(kC) * (xv + S(0.044715) * xv.cube())).tanh();
    Arr<S> d = S(0.5) * (S(1) + tv) +
               S(0.5) * xv * (S(1) - tv.square()) * S(kC) * (S(1) + S(3 * 0.044715) * xv.square());
    p.ensure_grad() += self.grad * d;
  });
}

template <typename S>
Var<S> add_broadcast_batch(const Var<S>& x, const Var<S>& y) {
  const Shape& xs = x.shape();
  Shape inner(xs.begin() + 1, xs.end());
  require_same(inner, y.shape(), "add_broadcast_batch");
  const Eigen::Index n = y.value().size();
  Tensor<S> out = x.value();
  for (int b = 0; b < xs[0]; ++b) out.array().segment(b * n, n) += y.value().array();
  return make_result<S>(std::move(out), {x, y}, [n](Node<S>& self) {
    auto& px = parent(self, 0);
    auto& py = parent(self, 1);
    if (px.requires_grad) px.ensure_grad() += self.grad;
    if (py.requires_grad) {
      auto& g = py.ensure_grad();
      for (Eigen::Index b = 0; b < self.grad.size() / n; ++b) g += self.grad.segment(b * n, n);
    }
  });
}

// ---------------------------------------------------------------- reductions

template <typename S>
Var<S> sum(const Var<S>& a) {
  Tensor<S> out = Tensor<S>::full({1}, a.value().array().sum());
  return make_result<S>(std::move(out), {a}, [](Node<S>& self) { parent(self, 0).ensure_grad() += self.grad[0]; });
}

template <typename S>
Var<S> mean(const Var<S>& a) {
  const S inv = S(1) / static_cast<S>(a.value().size());
  Tensor<S> out = Tensor<S>::full({1}, a.value().array().sum() * inv);
  return make_result<S>(std::move(out), {a}, [inv](Node<S>& self) {
    parent(self, 0).ensure_grad() += self.grad[0] * inv;
  });
}

template <typename S>
Var<S> sum_squares(const Var<S>& a) {
  Tensor<S> out = Tensor<S>::full({1}, a.value().array().square().sum());
  return make_result<S>(std::move(out), {a}, [](Node<S>& self) {
    auto& p = parent(self, 0);
    p.ensure_grad() += S(2) * self.grad[0] * p.value.array();
  });
}

template <typename S>
Var<S> mse(const Var<S>& prediction, const Var<S>& target) {
  require_same(prediction.shape(), target.shape(), "mse");
  const S inv = S(1) / static_cast<S>(prediction.value().size());
  Arr<S> diff = prediction.value().array() - target.value().array();
  Tensor<S> out = Tensor<S>::full({1}, diff.square().sum() * inv);
  return make_result<S>(std::move(out), {prediction, target}, [inv](Node<S>& self) {
    auto& pp = parent(self, 0);
    auto& pt = parent(self, 1);
    Arr<S> d = (pp.value.array() - pt.value.array()) * (S(2) * inv * self.grad[0]);
    if (pp.requires_grad) pp.ensure_grad() += d;
    if (pt.requires_grad) pt.ensure_grad() -= d;
  });
}

template <typename S>
Var<S> reshape(const Var<S>& a, Shape shape) {
  require(numel(shape) == a.value().size(), "reshape: element count mismatch");
  Tensor<S> out(std::move(shape), a.value().array());
  return make_result<S>(std::move(out), {a}, [](Node<S>& self) { parent(self, 0).ensure_grad() += self.grad; });
}

// ---------------------------------------------------------------- feature maps

template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, int stride, int padding) {
  require_rank(x.shape(), 4, "conv2d input");
  require_rank(weight.shape(), 4, "conv2d weight");
  const int batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = weight.dim(0), k = weight.dim(2);
  require(weight.dim(1) == cin && weight.dim(3) == k,
          "conv2d: weight " + shape_string(weight.shape()) + " incompatible with input " + shape_string(x.shape()));
  const bool has_bias = bias.defined();
  if (has_bias) require(bias.value().size() == cout, "conv2d: bias size mismatch");
  const int oh = (h + 2 * padding - k) / stride + 1;
  const int ow = (w + 2 * padding - k) / stride + 1;
  require(oh > 0 && ow > 0, "conv2d: empty output");
  const Eigen::Index kk = static_cast<Eigen::Index>(cin) * k * k;
  const Eigen::Index plane = static_cast<Eigen::Index>(oh) * ow;
  const Eigen::Index cols = plane * batch;
  const Eigen::Index in_plane = static_cast<Eigen::Index>(cin) * h * w;

  RMat<S> col(kk, cols);
  for (int b = 0; b < batch; ++b)
    im2col(x.value().data() + b * in_plane, cin, h, w, k, stride, padding, oh, ow, col.data(), cols, b * plane);
  CMapM<S> wm(weight.value().data(), cout, kk);
  RMat<S> prod = wm * col;
  Tensor<S> out({batch, cout, oh, ow});
  for (int b = 0; b < batch; ++b) {
    MapM<S> ob(out.data() + static_cast<Eigen::Index>(b) * cout * plane, cout, plane);
    ob = prod.middleCols(b * plane, plane);
    if (has_bias) ob.colwise() += bias.value().array().matrix();
  }
  std::vector<Var<S>> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return make_result<S>(std::move(out), parents, [=](Node<S>& self) {
    auto& px = parent(self, 0);
    auto& pw = parent(self, 1);
    RMat<S> dout(cout, cols);
    for (int b = 0; b < batch; ++b)
      dout.middleCols(b * plane, plane) =
          CMapM<S>(self.grad.data() + static_cast<Eigen::Index>(b) * cout * plane, cout, plane);
    if (has_bias) {
      auto& pb = parent(self, 2);
      if (pb.requires_grad) pb.ensure_grad() += dout.rowwise().sum().array();
    }
    if (pw.requires_grad) {
      RMat<S> colr(kk, cols);
      for (int b = 0; b < batch; ++b)
        im2col(px.value.data() + b * in_plane, cin, h, w, k, stride, padding, oh, ow, colr.data(), cols, b * plane);
      MapM<S> gw(pw.ensure_grad().data(), cout, kk);
      gw.noalias() += dout * colr.transpose();
    }
    if (px.requires_grad) {
      CMapM<S> wmat(pw.value.data(), cout, kk);
      RMat<S> dcol = wmat.transpose() * dout;
      auto& gx = px.ensure_grad();
      for (int b = 0; b < batch; ++b)
        col2im(dcol.data(), cin, h, w, k, stride, padding, oh, ow, gx.data() + b * in_plane, cols, b * plane);
    }
  });
}

template <typename S>
Var<S> group_norm(const Var<S>& x, int groups, const Var<S>& gamma, const Var<S>& beta, S eps) {
  require_rank(x.shape(), 4, "group_norm");
  const int batch = x.dim(0), channels = x.dim(1);
  require(channels % groups == 0, "group_norm: channels not divisible by groups");
  require(gamma.value().size() == channels && beta.value().size() == channels, "group_norm: affine size");
  const Eigen::Index plane = static_cast<Eigen::Index>(x.dim(2)) * x.dim(3);
  const int cpg = channels / groups;
  const Eigen::Index group_size = plane * cpg;
  Arr<S> mean_v(batch * groups), inv_std(batch * groups);
  Tensor<S> out(x.shape());
  const S* xd = x.value().data();
  S* od = out.data();
  for (int b = 0; b < batch; ++b) {
    for (int g = 0; g < groups; ++g) {
      const Eigen::Index off = (static_cast<Eigen::Index>(b) * channels + g * cpg) * plane;
      Eigen::Map<const Arr<S>> seg(xd + off, group_size);
      const S mu = seg.mean();
      const S var = (seg - mu).square().mean();
      const S is = S(1) / std::sqrt(var + eps);
      mean_v[b * groups + g] = mu;
      inv_std[b * groups + g] = is;
      for (int c = 0; c < cpg; ++c) {
        const int ch = g * cpg + c;
        const S ga = gamma.value()[ch], be = beta.value()[ch];
        const Eigen::Index co = off + c * plane;
        Eigen::Map<Arr<S>>(od + co, plane) = (Eigen::Map<const Arr<S>>(xd + co, plane) - mu) * (is * ga) + be;
      }
    }
  }
  return make_result<S>(std::move(out), {x, gamma, beta}, [=](Node<S>& self) {
    auto& px = parent(self, 0);
    auto& pg = parent(self, 1);
    auto& pb = parent(self, 2);
    const S* xv = px.value.data();
    const S* gd = self.grad.data();
    S* gx = px.requires_grad ? px.ensure_grad().data() : nullptr;
    S* gg = pg.requires_grad ? pg.ensure_grad().data() : nullptr;
    S* gb = pb.requires_grad ? pb.ensure_grad().data() : nullptr;
    Arr<S> xhat(plane), dxhat(plane);
    for (int b = 0; b < batch; ++b) {
      for (int g = 0; g < groups; ++g) {
        const S mu = mean_v[b * groups + g], is = inv_std[b * groups + g];
        const Eigen::Index off = (static_cast<Eigen::Index>(b) * channels + g * cpg) * plane;
        S sum_d = 0, sum_dx = 0;
        for (int c = 0; c < cpg; ++c) {
          const int ch = g * cpg + c;
          const Eigen::Index co = off + c * plane;
          xhat = (Eigen::Map<const Arr<S>>(xv + co, plane) - mu) * is;
          Eigen::Map<const Arr<S>> dy(gd + co, plane);
          if (gg) gg[ch] += (dy * xhat).sum();
          if (gb) gb[ch] += dy.sum();
          dxhat = dy * pg.value[ch];
          sum_d += dxhat.sum();
          sum_dx += (dxhat * xhat).sum();
        }
        if (!gx) continue;
        const S n = static_cast<S>(group_size);
        for (int c = 0; c < cpg; ++c) {
          const int ch = g * cpg + c;
          const Eigen::Index co = off + c * plane;
          xhat = (Eigen::Map<const Arr<S>>(xv + co, plane) - mu) * is;
          Eigen::Map<const Arr<S>> dy(gd + co, plane);
          dxhat = dy * pg.value[ch];
          Eigen::Map<Arr<S>>(gx + co, plane) += (is / n) * (n * dxhat - sum_d - xhat * sum_dx);
        }
      }
    }
  });
}

template <typename S>
Var<S> add_channel_bias(const Var<S>& x, const Var<S>& v) {
  require_rank(x.shape(), 4, "add_channel_bias");
  const int batch = x.dim(0), channels = x.dim(1);
  require(v.shape() == Shape({batch, channels}), "add_channel_bias: bias must be (B, C)");
  const Eigen::Index plane = static_cast<Eigen::Index>(x.dim(2)) * x.dim(3);
  Tensor<S> out = x.value();
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < channels; ++c)
      out.array().segment((static_cast<Eigen::Index>(b) * channels + c) * plane, plane) += v.value()[b * channels + c];
  return make_result<S>(std::move(out), {x, v}, [=](Node<S>& self) {
    auto& px = parent(self, 0);
    auto& pv = parent(self, 1);
    if (px.requires_grad) px.ensure_grad() += self.grad;
    if (pv.requires_grad) {
      auto& g = pv.ensure_grad();
      for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(batch) * channels; ++i)
        g[i] += self.grad.segment(i * plane, plane).sum();
    }
  });
}

template <typename S>
Var<S> upsample_nearest(const Var<S>& x, int factor) {
  require_rank(x.shape(), 4, "upsample_nearest");
  const int bc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = h * factor, ow = w * factor;
  Tensor<S> out({x.dim(0), x.dim(1), oh, ow});
  const S* xd = x.value().data();
  S* od = out.data();
  for (int i = 0; i < bc; ++i)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx)
        od[(static_cast<Eigen::Index>(i) * oh + y) * ow + xx] = xd[(static_cast<Eigen::Index>(i) * h + y / factor) * w + xx / factor];
  return make_result<S>(std::move(out), {x}, [=](Node<S>& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (int i = 0; i < bc; ++i)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx)
          g[(static_cast<Eigen::Index>(i) * h + y / factor) * w + xx / factor] +=
              self.grad[(static_cast<Eigen::Index>(i) * oh + y) * ow + xx];
  });
}

template <typename S>
Var<S> avg_pool(const Var<S>& x, int factor) {
  require_rank(x.shape(), 4, "avg_pool");
  const int bc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  require(h % factor == 0 && w % factor == 0, "avg_pool: size not divisible by factor");
  const int oh = h / factor, ow = w / factor;
  const S inv = S(1) / S(factor * factor);
  Tensor<S> out({x.dim(0), x.dim(1), oh, ow});
  const S* xd = x.value().data();
  S* od = out.data();
  for (int i = 0; i < bc; ++i)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        od[(static_cast<Eigen::Index>(i) * oh + y / factor) * ow + xx / factor] += inv * xd[(static_cast<Eigen::Index>(i) * h + y) * w + xx];
  return make_result<S>(std::move(out), {x}, [=](Node<S>& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (int i = 0; i < bc; ++i)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          g[(static_cast<Eigen::Index>(i) * h + y) * w + xx] +=
              inv * self.grad[(static_cast<Eigen::Index>(i) * oh + y / factor) * ow + xx / factor];
  });
}

template <typename S>
Var<S> concat_channels(const std::vector<Var<S>>& xs) {
  require(!xs.empty(), "concat_channels: no inputs");
  const int batch = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
  std::vector<int> chans;
  int total = 0;
  for (const auto& v : xs) {
    require_rank(v.shape(), 4, "concat_channels");
    require(v.dim(0) == batch && v.dim(2) == h && v.dim(3) == w,
            "concat_channels: mismatched " + shape_string(v.shape()));
    chans.push_back(v.dim(1));
    total += v.dim(1);
  }
  const Eigen::Index plane = static_cast<Eigen::Index>(h) * w;
  Tensor<S> out({batch, total, h, w});
  for (int b = 0; b < batch; ++b) {
    int offset = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const Eigen::Index n = chans[i] * plane;
      out.array().segment((static_cast<Eigen::Index>(b) * total + offset) * plane, n) =
          xs[i].value().array().segment(b * n, n);
      offset += chans[i];
    }
  }
  return make_result<S>(std::move(out), xs, [=](Node<S>& self) {
    for (int b = 0; b < batch; ++b) {
      int offset = 0;
      for (std::size_t i = 0; i < chans.size(); ++i) {
        auto& p = parent(self, i);
        const Eigen::Index n = chans[i] * plane;
        if (p.requires_grad)
          p.ensure_grad().segment(b * n, n) += self.grad.segment((static_cast<Eigen::Index>(b) * total + offset) * plane, n);
        offset += chans[i];
      }
    }
  });
}

template <typename S>
Var<S> slice_channels(const Var<S>& x, int begin, int count) {
  require_rank(x.shape(), 4, "slice_channels");
  const int batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(begin >= 0 && count > 0 && begin + count <= channels, "slice_channels: out of range");
  const Eigen::Index plane = static_cast<Eigen::Index>(h) * w;
  Tensor<S> out({batch, count, h, w});
  for (int b = 0; b < batch; ++b)
    out.array().segment(b * count * plane, count * plane) =
        x.value().array().segment((static_cast<Eigen::Index>(b) * channels + begin) * plane, count * plane);
  return make_result<S>(std::move(out), {x}, [=](Node<S>& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (int b = 0; b < batch; ++b)
      g.segment((static_cast<Eigen::Index>(b) * channels + begin) * plane, count * plane) +=
          self.grad.segment(b * count * plane, count * plane);
  });
}

template <typename S>
Var<S> softmax_channels(const Var<S>& x) {
  require_rank(x.shape(), 4, "softmax_channels");
  const int batch = x.dim(0), channels = x.dim(1);
  const Eigen::Index plane = static_cast<Eigen::Index>(x.dim(2)) * x.dim(3);
  Tensor<S> out(x.shape());
  for (int b = 0; b < batch; ++b) {
    CMapM<S> xb(x.value().data() + b * channels * plane, channels, plane);
    MapM<S> ob(out.data() + b * channels * plane, channels, plane);
    auto mx = xb.colwise().maxCoeff();
    ob = (xb.rowwise() - mx).array().exp().matrix();
    auto sums = ob.colwise().sum().eval();
    for (Eigen::Index p = 0; p < plane; ++p) ob.col(p) /= sums[p];
  }
  return make_result<S>(std::move(out), {x}, [=](Node<S>& self) {
    auto& p = parent(self, 0);
    auto& g = p.ensure_grad();
    // Output is not stored on the node; recompute from the input.
    for (int b = 0; b < batch; ++b) {
      CMapM<S> xb(p.value.data() + b * channels * plane, channels, plane);
      RMat<S> y = (xb.rowwise() - xb.colwise().maxCoeff()).array().exp().matrix();
      auto sums = y.colwise().sum().eval();
      for (Eigen::Index q = 0; q < plane; ++q) y.col(q) /= sums[q];
      CMapM<S> dy(self.grad.data() + b * channels * plane, channels, plane);
      auto dots = (dy.array() * y.array()).colwise().sum().eval();
      MapM<S> gb(g.data() + b * channels * plane, channels, plane);
      gb.array() += y.array() * (dy.array().rowwise() - dots);
    }
  });
}

template <typename S>
Var<S> to_tokens(const Var<S>& x) {
  require_rank(x.shape(), 4, "to_tokens");
  const int batch = x.dim(0), channels = x.dim(1);
  const int plane = x.dim(2) * x.dim(3);
  Tensor<S> out({batch, plane, channels});
  for (int b = 0; b < batch; ++b) {
    CMapM<S> xb(x.value().data() + static_cast<Eigen::Index>(b) * channels * plane, channels, plane);
    MapM<S>(out.data() + static_cast<Eigen::Index>(b) * channels * plane, plane, channels) = xb.transpose();
  }
  return make_result<S>(std::move(out), {x}, [=](Node<S>& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (int b = 0; b < batch; ++b) {
      CMapM<S> dy(self.grad.data() + static_cast<Eigen::Index>(b) * channels * plane, plane, channels);
      MapM<S>(g.data() + static_cast<Eigen::Index>(b) * channels * plane, channels, plane) += dy.transpose();
    }
  });
}

template <typename S>
Var<S> from_tokens(const Var<S>& x, int height, int width) {
  require_rank(x.shape(), 3, "from_tokens");
  const int batch = x.dim(0), plane = x.dim(1), channels = x.dim(2);
  require(plane == height * width, "from_tokens: token count does not match spatial size");
  Tensor<S> out({batch, channels, height, width});
  for (int b = 0; b < batch; ++b) {
    CMapM<S> xb(x.value().data() + static_cast<Eigen::Index>(b) * channels * plane, plane, channels);
    MapM<S>(out.data() + static_cast<Eigen::Index>(b) * channels * plane, channels, plane) = xb.transpose();
  }
  return make_result<S>(std::move(out), {x}, [=](Node<S>& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (int b = 0; b < batch; ++b) {
      CMapM<S> dy(self.grad.data() + static_cast<Eigen::Index>(b) * channels * plane, channels, plane);
      MapM<S>(g.data() + static_cast<Eigen::Index>(b) * channels * plane, plane, channels) += dy.transpose();
    }
  });
}

// ---------------------------------------------------------------- batch axis

template <typename S>
Var<S> slice_batch(const Var<S>& x, int begin, int count) {
  const int batch = x.dim(0);
  require(begin >= 0 && count > 0 && begin + count <= batch, "slice_batch: out of range");
  const Eigen::Index inner = x.value().size() / batch;
  Shape shape = x.shape();
  shape[0] = count;
  Tensor<S> out(shape, x.value().array().segment(begin * inner, count * inner));
  return make_result<S>(std::move(out), {x}, [=](Node<S>& self) {
    parent(self, 0).ensure_grad().segment(begin * inner, count * inner) += self.grad;
  });
}

template <typename S>
Var<S> concat_batch(const std::vector<Var<S>>& xs) {
  require(!xs.empty(), "concat_batch: no inputs");
  Shape inner(xs[0].shape().begin() + 1, xs[0].shape().end());
  int total = 0;
  std::vector<Eigen::Index> sizes;
  for (const auto& v : xs) {
    require(Shape(v.shape().begin() + 1, v.shape().end()) == inner, "concat_batch: mismatched inner shape");
    total += v.dim(0);
    sizes.push_back(v.value().size());
  }
  Shape shape = xs[0].shape();
  shape[0] = total;
  Tensor<S> out(shape);
  Eigen::Index off = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out.array().segment(off, sizes[i]) = xs[i].value().array();
    off += sizes[i];
  }
  return make_result<S>(std::move(out), xs, [sizes](Node<S>& self) {
    Eigen::Index o = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      auto& p = parent(self, i);
      if (p.requires_grad) p.ensure_grad() += self.grad.segment(o, sizes[i]);
      o += sizes[i];
    }
  });
}

template <typename S>
Var<S> stack(const std::vector<Var<S>>& xs) {
  require(!xs.empty(), "stack: no inputs");
  std::vector<Var<S>> lifted;
  lifted.reserve(xs.size());
  for (const auto& v : xs) {
    require(v.shape() == xs[0].shape(), "stack: mismatched shapes");
    Shape s = v.shape();
    s.insert(s.begin(), 1);
    lifted.push_back(reshape(v, s));
  }
  return concat_batch(lifted);
}

// ---------------------------------------------------------------- tokens

template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias) {
  require_rank(weight.shape(), 2, "linear weight");
  const int din = weight.dim(0), dout = weight.dim(1);
  require(x.dim(-1) == din, "linear: input width " + std::to_string(x.dim(-1)) + " vs weight " +
                                shape_string(weight.shape()));
  const bool has_bias = bias.defined();
  const Eigen::Index rows = x.value().size() / din;
  Shape shape = x.shape();
  shape.back() = dout;
  Tensor<S> out(shape);
  MapM<S> om(out.data(), rows, dout);
  om.noalias() = CMapM<S>(x.value().data(), rows, din) * CMapM<S>(weight.value().data(), din, dout);
  if (has_bias) om.rowwise() += bias.value().array().matrix().transpose();
  std::vector<Var<S>> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return make_result<S>(std::move(out), parents, [=](Node<S>& self) {
    auto& px = parent(self, 0);
    auto& pw = parent(self, 1);
    CMapM<S> dy(self.grad.data(), rows, dout);
    if (px.requires_grad)
      MapM<S>(px.ensure_grad().data(), rows, din).noalias() += dy * CMapM<S>(pw.value.data(), din, dout).transpose();
    if (pw.requires_grad)
      MapM<S>(pw.ensure_grad().data(), din, dout).noalias() += CMapM<S>(px.value.data(), rows, din).transpose() * dy;
    if (has_bias) {
      auto& pb = parent(self, 2);
      if (pb.requires_grad) pb.ensure_grad() += dy.colwise().sum().transpose().array();
    }
  });
}

template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps) {
  const int d = x.dim(-1);
  require(gamma.value().size() == d && beta.value().size() == d, "layer_norm: affine size");
  const Eigen::Index rows = x.value().size() / d;
  Arr<S> inv_std(rows), mean_v(rows);
  Tensor<S> out(x.shape());
  for (Eigen::Index r = 0; r < rows; ++r) {
    auto seg = x.value().array().segment(r * d, d);
    const S mu = seg.mean();
    const S is = S(1) / std::sqrt((seg - mu).square().mean() + eps);
    mean_v[r] = mu;
    inv_std[r] = is;
    out.array().segment(r * d, d) = (seg - mu) * is * gamma.value().array() + beta.value().array();
  }
  return make_result<S>(std::move(out), {x, gamma, beta}, [=](Node<S>& self) {
    auto& px = parent(self, 0);
    auto& pg = parent(self, 1);
    auto& pb = parent(self, 2);
    Arr<S> xhat(d), dxhat(d);
    for (Eigen::Index r = 0; r < rows; ++r) {
      xhat = (px.value.array().segment(r * d, d) - mean_v[r]) * inv_std[r];
      auto dy = self.grad.segment(r * d, d);
      if (pg.requires_grad) pg.ensure_grad() += dy * xhat;
      if (pb.requires_grad) pb.ensure_grad() += dy;
      if (px.requires_grad) {
        dxhat = dy * pg.value.array();
        const S n = static_cast<S>(d);
        px.ensure_grad().segment(r * d, d) +=
            (inv_std[r] / n) * (n * dxhat - dxhat.sum() - xhat * (dxhat * xhat).sum());
      }
    }
  });
}

template <typename S>
Var<S> softmax_lastdim(const Var<S>& x) {
  const int z = x.dim(-1);
  const Eigen::Index rows = x.value().size() / z;
  Tensor<S> out(x.shape());
  CMapM<S> xm(x.value().data(), rows, z);
  MapM<S> om(out.data(), rows, z);
  om = (xm.colwise() - xm.rowwise().maxCoeff()).array().exp().matrix();
  om = (om.array().colwise() / om.rowwise().sum().array()).matrix();
  Tensor<S> saved = out;
  return make_result<S>(std::move(out), {x}, [saved, rows, z](Node<S>& self) {
    CMapM<S> y(saved.data(), rows, z);
    CMapM<S> dy(self.grad.data(), rows, z);
    auto dots = (dy.array() * y.array()).rowwise().sum().eval();
    MapM<S>(parent(self, 0).ensure_grad().data(), rows, z).array() += y.array() * (dy.array().colwise() - dots);
  });
}

template <typename S>
Var<S> bmm(const Var<S>& a, const Var<S>& b, bool transpose_b) {
  require_rank(a.shape(), 3, "bmm a");
  require_rank(b.shape(), 3, "bmm b");
  const int g = a.dim(0), m = a.dim(1), k = a.dim(2);
  require(b.dim(0) == g, "bmm: batch mismatch");
  const int n = transpose_b ? b.dim(1) : b.dim(2);
  require((transpose_b ? b.dim(2) : b.dim(1)) == k, "bmm: inner dimension mismatch " + shape_string(a.shape()) +
                                                        " x " + shape_string(b.shape()));
  Tensor<S> out({g, m, n});
  const Eigen::Index sa = static_cast<Eigen::Index>(m) * k, sb = static_cast<Eigen::Index>(k) * n,
                     so = static_cast<Eigen::Index>(m) * n;
  for (int i = 0; i < g; ++i) {
    CMapM<S> am(a.value().data() + i * sa, m, k);
    MapM<S> om(out.data() + i * so, m, n);
    if (transpose_b)
      om.noalias() = am * CMapM<S>(b.value().data() + i * sb, n, k).transpose();
    else
      om.noalias() = am * CMapM<S>(b.value().data() + i * sb, k, n);
  }
  return make_result<S>(std::move(out), {a, b}, [=](Node<S>& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    for (int i = 0; i < g; ++i) {
      CMapM<S> dy(self.grad.data() + i * so, m, n);
      CMapM<S> am(pa.value.data() + i * sa, m, k);
      if (transpose_b) {
        CMapM<S> bm(pb.value.data() + i * sb, n, k);
        if (pa.requires_grad) MapM<S>(pa.ensure_grad().data() + i * sa, m, k).noalias() += dy * bm;
        if (pb.requires_grad) MapM<S>(pb.ensure_grad().data() + i * sb, n, k).noalias() += dy.transpose() * am;
      } else {
        CMapM<S> bm(pb.value.data() + i * sb, k, n);
        if (pa.requires_grad) MapM<S>(pa.ensure_grad().data() + i * sa, m, k).noalias() += dy * bm.transpose();
        if (pb.requires_grad) MapM<S>(pb.ensure_grad().data() + i * sb, k, n).noalias() += am.transpose() * dy;
      }
    }
  });
}

template <typename S>
Var<S> split_heads(const Var<S>& x, int heads) {
  require_rank(x.shape(), 3, "split_heads");
  const int batch = x.dim(0), len = x.dim(1), width = x.dim(2);
  require(width % heads == 0, "split_heads: width not divisible by heads");
  const int d = width / heads;
  Tensor<S> out({batch * heads, len, d});
  auto index_pair = [=](int b, int h, int l, int j) {
    return std::pair<Eigen::Index, Eigen::Index>(
        ((static_cast<Eigen::Index>(b) * heads + h) * len + l) * d + j,
        (static_cast<Eigen::Index>(b) * len + l) * width + h * d + j);
  };
  for (int b = 0; b < batch; ++b)
    for (int h = 0; h < heads; ++h)
      for (int l = 0; l < len; ++l)
        for (int j = 0; j < d; ++j) {
          auto [o, i] = index_pair(b, h, l, j);
          out[o] = x.value()[i];
        }
  return make_result<S>(std::move(out), {x}, [=](Node<S>& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (int b = 0; b < batch; ++b)
      for (int h = 0; h < heads; ++h)
        for (int l = 0; l < len; ++l)
          for (int j = 0; j < d; ++j) {
            auto [o, i] = index_pair(b, h, l, j);
            g[i] += self.grad[o];
          }
  });
}

template <typename S>
Var<S> merge_heads(const Var<S>& x, int heads) {
  require_rank(x.shape(), 3, "merge_heads");
  require(x.dim(0) % heads == 0, "merge_heads: batch not divisible by heads");
  const int batch = x.dim(0) / heads, len = x.dim(1), d = x.dim(2);
  const int width = d * heads;
  Tensor<S> out({batch, len, width});
  auto index_pair = [=](int b, int h, int l, int j) {
    return std::pair<Eigen::Index, Eigen::Index>(
        ((static_cast<Eigen::Index>(b) * heads + h) * len + l) * d + j,
        (static_cast<Eigen::Index>(b) * len + l) * width + h * d + j);
  };
  for (int b = 0; b < batch; ++b)
    for (int h = 0; h < heads; ++h)
      for (int l = 0; l < len; ++l)
        for (int j = 0; j < d; ++j) {
          auto [i, o] = index_pair(b, h, l, j);
          out[o] = x.value()[i];
        }
  return make_result<S>(std::move(out), {x}, [=](Node<S>& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (int b = 0; b < batch; ++b)
      for (int h = 0; h < heads; ++h)
        for (int l = 0; l < len; ++l)
          for (int j = 0; j < d; ++j) {
            auto [i, o] = index_pair(b, h, l, j);
            g[i] += self.grad[o];
          }
  });
}

template <typename S>
Var<S> mean_head_groups(const Var<S>& x, int heads) {
  require_rank(x.shape(), 3, "mean_head_groups");
  require(x.dim(0) % heads == 0, "mean_head_groups: batch not divisible by heads");
  const int batch = x.dim(0) / heads;
  const Eigen::Index inner = static_cast<Eigen::Index>(x.dim(1)) * x.dim(2);
  const S inv = S(1) / S(heads);
  Tensor<S> out({batch, x.dim(1), x.dim(2)});
  for (int b = 0; b < batch; ++b)
    for (int h = 0; h < heads; ++h)
      out.array().segment(b * inner, inner) += inv * x.value().array().segment((b * heads + h) * inner, inner);
  return make_result<S>(std::move(out), {x}, [=](Node<S>& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (int b = 0; b < batch; ++b)
      for (int h = 0; h < heads; ++h) g.segment((b * heads + h) * inner, inner) += inv * self.grad.segment(b * inner, inner);
  });
}

template <typename S>
Var<S> gather_rows(const Var<S>& table, const std::vector<int>& ids) {
  require_rank(table.shape(), 2, "gather_rows");
  const int rows = table.dim(0), d = table.dim(1);
  Tensor<S> out({static_cast<int>(ids.size()), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= rows) throw LookupError("gather_rows: row " + std::to_string(ids[i]) + " not in table");
    out.array().segment(static_cast<Eigen::Index>(i) * d, d) = table.value().array().segment(static_cast<Eigen::Index>(ids[i]) * d, d);
  }
  return make_result<S>(std::move(out), {table}, [ids, d](Node<S>& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < ids.size(); ++i)
      g.segment(static_cast<Eigen::Index>(ids[i]) * d, d) += self.grad.segment(static_cast<Eigen::Index>(i) * d, d);
  });
}

template <typename S>
Var<S> token_columns(const Var<S>& attn, int b, const std::vector<int>& cols) {
  require_rank(attn.shape(), 3, "token_columns");
  const int len = attn.dim(1), z = attn.dim(2);
  require(b >= 0 && b < attn.dim(0), "token_columns: sample out of range");
  for (int c : cols) require(c >= 0 && c < z, "token_columns: column out of range");
  const int n = static_cast<int>(cols.size());
  Tensor<S> out({n, len});
  const Eigen::Index base = static_cast<Eigen::Index>(b) * len * z;
  for (int i = 0; i < n; ++i)
    for (int l = 0; l < len; ++l) out[static_cast<Eigen::Index>(i) * len + l] = attn.value()[base + static_cast<Eigen::Index>(l) * z + cols[i]];
  return make_result<S>(std::move(out), {attn}, [=](Node<S>& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int l = 0; l < len; ++l) g[base + static_cast<Eigen::Index>(l) * z + cols[i]] += self.grad[static_cast<Eigen::Index>(i) * len + l];
  });
}

template <typename S>
Var<S> mean_rows(const Var<S>& x) {
  require_rank(x.shape(), 2, "mean_rows");
  const int n = x.dim(0), len = x.dim(1);
  const S inv = S(1) / S(n);
  Tensor<S> out({len});
  for (int i = 0; i < n; ++i) out.array() += inv * x.value().array().segment(static_cast<Eigen::Index>(i) * len, len);
  return make_result<S>(std::move(out), {x}, [=](Node<S>& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (int i = 0; i < n; ++i) g.segment(static_cast<Eigen::Index>(i) * len, len) += inv * self.grad;
  });
}

template <typename S>
Var<S> focal_loss(const Var<S>& logits, const Tensor<S>& target, S gamma, S alpha) {
  require_rank(logits.shape(), 4, "focal_loss");
  require(logits.dim(1) == 2, "focal_loss: expected two-class logits");
  const int batch = logits.dim(0);
  const Eigen::Index plane = static_cast<Eigen::Index>(logits.dim(2)) * logits.dim(3);
  require(target.shape() == Shape({batch, logits.dim(2), logits.dim(3)}), "focal_loss: target shape " +
                                                                               shape_string(target.shape()));
  const S inv = S(1) / S(batch * plane);
  // Per pixel: p_t of the target class, its log, and the class weight.
  Arr<S> pt(batch * plane), logpt(batch * plane), weight(batch * plane);
  S total = 0;
  for (int b = 0; b < batch; ++b) {
    for (Eigen::Index q = 0; q < plane; ++q) {
      const S z0 = logits.value()[(b * 2) * plane + q];
      const S z1 = logits.value()[(b * 2 + 1) * plane + q];
      const S tv = target[b * plane + q];
      if (tv != S(0) && tv != S(1)) throw ValidationError("focal_loss: target must be binary");
      const S zt = tv == S(1) ? z1 : z0;
      const S mx = std::max(z0, z1);
      const S lse = mx + std::log(std::exp(z0 - mx) + std::exp(z1 - mx));
      const Eigen::Index i = b * plane + q;
      logpt[i] = zt - lse;
      pt[i] = std::exp(logpt[i]);
      weight[i] = tv == S(1) ? alpha : S(1) - alpha;
      const S mod = gamma == S(0) ? S(1) : std::pow(S(1) - pt[i], gamma);
      total += -weight[i] * mod * logpt[i];
    }
  }
  Tensor<S> out = Tensor<S>::full({1}, total * inv);
  Tensor<S> tgt = target;
  return make_result<S>(std::move(out), {logits}, [=](Node<S>& self) {
    auto& g = parent(self, 0).ensure_grad();
    const S up = self.grad[0] * inv;
    for (int b = 0; b < batch; ++b) {
      for (Eigen::Index q = 0; q < plane; ++q) {
        const Eigen::Index i = b * plane + q;
        const S p = pt[i];
        const S one_minus = S(1) - p;
        // d/dp_t of -w (1-p)^g log p, then chain through the softmax.
        S dldp = -weight[i] * ((gamma == S(0) ? S(1) : std::pow(one_minus, gamma)) / p);
        if (gamma != S(0)) dldp += weight[i] * gamma * std::pow(one_minus, gamma - S(1)) * logpt[i];
        const int t = tgt[i] == S(1) ? 1 : 0;
        for (int k = 0; k < 2; ++k) {
          const S pk = k == t ? p : one_minus;
          const S dp = p * ((k == t ? S(1) : S(0)) - pk);
          g[(b * 2 + k) * plane + q] += up * dldp * dp;
        }
      }
    }
  });
}

#define SEAS_INSTANTIATE_OPS(S)                                                                         \
  template class Var<S>;                                                                                \
  template Var<S> add(const Var<S>&, const Var<S>&);                                                    \
  template Var<S> sub(const Var<S>&, const Var<S>&);                                                    \
  template Var<S> mul(const Var<S>&, const Var<S>&);                                                    \
  template Var<S> scale(const Var<S>&, S);                                                              \
  template Var<S> add_scalar(const Var<S>&, S);                                                         \
  template Var<S> square(const Var<S>&);                                                                \
  template Var<S> silu(const Var<S>&);                                                                  \
  template Var<S> exp(const Var<S>&);                                                                   \
  template Var<S> gelu(const Var<S>&);                                                                  \
  template Var<S> add_broadcast_batch(const Var<S>&, const Var<S>&);                                    \
  template Var<S> sum(const Var<S>&);                                                                   \
  template Var<S> mean(const Var<S>&);                                                                  \
  template Var<S> sum_squares(const Var<S>&);                                                           \
  template Var<S> mse(const Var<S>&, const Var<S>&);                                                    \
  template Var<S> reshape(const Var<S>&, Shape);                                                        \
  template Var<S> conv2d(const Var<S>&, const Var<S>&, const Var<S>&, int, int);                        \
  template Var<S> group_norm(const Var<S>&, int, const Var<S>&, const Var<S>&, S);                      \
  template Var<S> add_channel_bias(const Var<S>&, const Var<S>&);                                       \
  template Var<S> upsample_nearest(const Var<S>&, int);                                                 \
  template Var<S> avg_pool(const Var<S>&, int);                                                         \
  template Var<S> concat_channels(const std::vector<Var<S>>&);                                          \
  template Var<S> slice_channels(const Var<S>&, int, int);                                              \
  template Var<S> softmax_channels(const Var<S>&);                                                      \
  template Var<S> to_tokens(const Var<S>&);                                                             \
  template Var<S> from_tokens(const Var<S>&, int, int);                                                 \
  template Var<S> slice_batch(const Var<S>&, int, int);                                                 \
  template Var<S> concat_batch(const std::vector<Var<S>>&);                                             \
  template Var<S> stack(const std::vector<Var<S>>&);                                                    \
  template Var<S> linear(const Var<S>&, const Var<S>&, const Var<S>&);                                  \
  template Var<S> layer_norm(const Var<S>&, const Var<S>&, const Var<S>&, S);                           \
  template Var<S> softmax_lastdim(const Var<S>&);                                                       \
  template Var<S> bmm(const Var<S>&, const Var<S>&, bool);                                              \
  template Var<S> split_heads(const Var<S>&, int);                                                      \
  template Var<S> merge_heads(const Var<S>&, int);                                                      \
  template Var<S> mean_head_groups(const Var<S>&, int);                                                 \
  template Var<S> gather_rows(const Var<S>&, const std::vector<int>&);                                  \
  template Var<S> token_columns(const Var<S>&, int, const std::vector<int>&);                           \
  template Var<S> mean_rows(const Var<S>&);                                                             \
  template Var<S> focal_loss(const Var<S>&, const Tensor<S>&, S, S);

SEAS_INSTANTIATE_OPS(float)
SEAS_INSTANTIATE_OPS(double)

#undef SEAS_INSTANTIATE_OPS

}  // namespace ad
}  // namespace seas
