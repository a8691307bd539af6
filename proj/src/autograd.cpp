#include "bcsnet/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <unordered_set>
#include <utility>

#include "bcsnet/errors.hpp"

namespace bcsnet::ag {

namespace {

bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw ValidationError(std::string(op) + ": shape mismatch " + a.value().shape_str() + " vs " +
                          b.value().shape_str());
  }
}

/// Builds an op node. `bw` only runs when some parent needs gradients.
Var make_op(Tensor value, std::initializer_list<Var> parents, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (g_grad_enabled) {
    bool req = false;
    for (const Var& p : parents) req = req || p.requires_grad();
    if (req) {
      n->requires_grad = true;
      for (const Var& p : parents) n->parents.push_back(p.node());
      n->backward_fn = std::move(bw);
    }
  }
  return Var(std::move(n));
}

}  // namespace

Tensor& Node::ensure_grad() {
  if (!has_grad) {
    grad = Tensor(value.shape());
    has_grad = true;
  }
  return grad;
}

void Node::accumulate(const Tensor& g) {
  Tensor& dst = ensure_grad();
  const double* src = g.data();
  double* d = dst.data();
  const std::int64_t n = dst.numel();
  for (std::int64_t i = 0; i < n; ++i) d[i] += src[i];
}

Var Var::leaf(Tensor value, bool requires_grad, std::string name) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->name = std::move(name);
  return Var(std::move(n));
}

Var Var::constant(Tensor value) { return leaf(std::move(value), false); }

Var Var::constant_scalar(double v) { return leaf(Tensor::scalar(v), false); }

void Var::zero_grad() {
  n_->grad = Tensor();
  n_->has_grad = false;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(const Var& root) {
  Node* r = root.node().get();
  if (!r || !r->requires_grad) throw ValidationError("backward: root does not require gradients");
  if (r->value.numel() != 1) throw ValidationError("backward: root must be a scalar");

  // Iterative post-order DFS over the grad-requiring subgraph.
  struct Frame {
    Node* node;
    std::size_t next_parent;
  };
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<Frame> stack;
  stack.push_back({r, 0});
  visited.insert(r);
  while (!stack.empty()) {
    Frame& f = stack.back();
    bool descended = false;
    while (f.next_parent < f.node->parents.size()) {
      Node* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
        descended = true;
        break;
      }
    }
    if (descended) continue;
    order.push_back(stack.back().node);
    stack.pop_back();
  }

  r->ensure_grad()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->has_grad) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.value().shape());
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] + b.value()[i];
  auto pa = a.node(), pb = b.node();
  return make_op(std::move(out), {a, b}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) pb->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.value().shape());
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] - b.value()[i];
  auto pa = a.node(), pb = b.node();
  return make_op(std::move(out), {a, b}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) {
      Tensor g(self.grad.shape());
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] = -self.grad[i];
      pb->accumulate(g);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a.value().shape());
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] * b.value()[i];
  auto pa = a.node(), pb = b.node();
  return make_op(std::move(out), {a, b}, [pa, pb](Node& self) {
    const std::int64_t n = self.grad.numel();
    if (pa->requires_grad) {
      Tensor g(self.grad.shape());
      for (std::int64_t i = 0; i < n; ++i) g[i] = self.grad[i] * pb->value[i];
      pa->accumulate(g);
    }
    if (pb->requires_grad) {
      Tensor g(self.grad.shape());
      for (std::int64_t i = 0; i < n; ++i) g[i] = self.grad[i] * pa->value[i];
      pb->accumulate(g);
    }
  });
}

Var div(const Var& a, const Var& b) {
  check_same_shape(a, b, "div");
  Tensor out(a.value().shape());
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] / b.value()[i];
  auto pa = a.node(), pb = b.node();
  return make_op(std::move(out), {a, b}, [pa, pb](Node& self) {
    const std::int64_t n = self.grad.numel();
    if (pa->requires_grad) {
      Tensor g(self.grad.shape());
      for (std::int64_t i = 0; i < n; ++i) g[i] = self.grad[i] / pb->value[i];
      pa->accumulate(g);
    }
    if (pb->requires_grad) {
      Tensor g(self.grad.shape());
      for (std::int64_t i = 0; i < n; ++i) {
        const double bv = pb->value[i];
        g[i] = -self.grad[i] * pa->value[i] / (bv * bv);
      }
      pb->accumulate(g);
    }
  });
}

Var affine(const Var& a, double scale, double shift) {
  Tensor out(a.value().shape());
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] = scale * a.value()[i] + shift;
  auto pa = a.node();
  return make_op(std::move(out), {a}, [pa, scale](Node& self) {
    if (!pa->requires_grad) return;
    Tensor g(self.grad.shape());
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] = scale * self.grad[i];
    pa->accumulate(g);
  });
}

Var relu(const Var& a) {
  Tensor out(a.value().shape());
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] > 0.0 ? a.value()[i] : 0.0;
  auto pa = a.node();
  return make_op(std::move(out), {a}, [pa](Node& self) {
    if (!pa->requires_grad) return;
    Tensor g(self.grad.shape());
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] = pa->value[i] > 0.0 ? self.grad[i] : 0.0;
    pa->accumulate(g);
  });
}

Var sigmoid(const Var& a) {
  Tensor out(a.value().shape());
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const double x = a.value()[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  auto pa = a.node();
  return make_op(std::move(out), {a}, [pa](Node& self) {
    if (!pa->requires_grad) return;
    Tensor g(self.grad.shape());
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      const double y = self.value[i];
      g[i] = self.grad[i] * y * (1.0 - y);
    }
    pa->accumulate(g);
  });
}

Var log(const Var& a) {
  Tensor out(a.value().shape());
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] = std::log(a.value()[i]);
  auto pa = a.node();
  return make_op(std::move(out), {a}, [pa](Node& self) {
    if (!pa->requires_grad) return;
    Tensor g(self.grad.shape());
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] / pa->value[i];
    pa->accumulate(g);
  });
}

Var clamp(const Var& a, double lo, double hi) {
  Tensor out(a.value().shape());
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] = std::min(std::max(a.value()[i], lo), hi);
  auto pa = a.node();
  return make_op(std::move(out), {a}, [pa, lo, hi](Node& self) {
    if (!pa->requires_grad) return;
    Tensor g(self.grad.shape());
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      const double x = pa->value[i];
      g[i] = (x >= lo && x <= hi) ? self.grad[i] : 0.0;
    }
    pa->accumulate(g);
  });
}

// ---------------------------------------------------------------------------
// reductions / shape
// ---------------------------------------------------------------------------

Var sum(const Var& a) {
  Tensor out = Tensor::scalar(a.value().sum());
  auto pa = a.node();
  return make_op(std::move(out), {a}, [pa](Node& self) {
    if (!pa->requires_grad) return;
    pa->accumulate(Tensor(pa->value.shape(), self.grad[0]));
  });
}

Var mean(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a.value().numel());
  Tensor out = Tensor::scalar(a.value().sum() * inv);
  auto pa = a.node();
  return make_op(std::move(out), {a}, [pa, inv](Node& self) {
    if (!pa->requires_grad) return;
    pa->accumulate(Tensor(pa->value.shape(), self.grad[0] * inv));
  });
}

Var reshape(const Var& a, std::vector<std::int64_t> shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  auto pa = a.node();
  return make_op(std::move(out), {a}, [pa](Node& self) {
    if (!pa->requires_grad) return;
    pa->accumulate(self.grad.reshaped(pa->value.shape()));
  });
}

Var slice_batch(const Var& a, std::int64_t index) {
  const Tensor& x = a.value();
  if (x.ndim() != 4) throw ValidationError("slice_batch: expected NCHW input, got " + x.shape_str());
  const std::int64_t n = x.dim(0), per = x.numel() / n;
  if (index < 0 || index >= n) throw ValidationError("slice_batch: index out of range");
  Tensor out({1, x.dim(1), x.dim(2), x.dim(3)});
  std::copy(x.data() + index * per, x.data() + (index + 1) * per, out.data());
  auto pa = a.node();
  return make_op(std::move(out), {a}, [pa, index, per](Node& self) {
    if (!pa->requires_grad) return;
    Tensor& g = pa->ensure_grad();
    double* dst = g.data() + index * per;
    const double* src = self.grad.data();
    for (std::int64_t i = 0; i < per; ++i) dst[i] += src[i];
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.ndim() != 4 || y.ndim() != 4 || x.dim(0) != y.dim(0) || x.dim(2) != y.dim(2) ||
      x.dim(3) != y.dim(3)) {
    throw ValidationError("concat_channels: incompatible shapes " + x.shape_str() + " vs " +
                          y.shape_str());
  }
  const std::int64_t n = x.dim(0), ca = x.dim(1), cb = y.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out({n, ca + cb, x.dim(2), x.dim(3)});
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy(x.data() + i * ca * hw, x.data() + (i + 1) * ca * hw, out.data() + i * (ca + cb) * hw);
    std::copy(y.data() + i * cb * hw, y.data() + (i + 1) * cb * hw,
              out.data() + i * (ca + cb) * hw + ca * hw);
  }
  auto pa = a.node(), pb = b.node();
  return make_op(std::move(out), {a, b}, [pa, pb, n, ca, cb, hw](Node& self) {
    if (pa->requires_grad) {
      Tensor& g = pa->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) {
        const double* src = self.grad.data() + i * (ca + cb) * hw;
        double* dst = g.data() + i * ca * hw;
        for (std::int64_t k = 0; k < ca * hw; ++k) dst[k] += src[k];
      }
    }
    if (pb->requires_grad) {
      Tensor& g = pb->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) {
        const double* src = self.grad.data() + i * (ca + cb) * hw + ca * hw;
        double* dst = g.data() + i * cb * hw;
        for (std::int64_t k = 0; k < cb * hw; ++k) dst[k] += src[k];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// broadcast helpers
// ---------------------------------------------------------------------------

Var mul_bcast_c(const Var& x, const Var& m) {
  const Tensor& xv = x.value();
  const Tensor& mv = m.value();
  if (xv.ndim() != 4 || mv.ndim() != 4 || mv.dim(1) != 1 || xv.dim(0) != mv.dim(0) ||
      xv.dim(2) != mv.dim(2) || xv.dim(3) != mv.dim(3)) {
    throw ValidationError("mul_bcast_c: incompatible shapes " + xv.shape_str() + " vs " +
                          mv.shape_str());
  }
  const std::int64_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor out(xv.shape());
  for (std::int64_t i = 0; i < n; ++i) {
    const double* mp = mv.data() + i * hw;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double* xp = xv.data() + (i * c + ch) * hw;
      double* op = out.data() + (i * c + ch) * hw;
      for (std::int64_t p = 0; p < hw; ++p) op[p] = xp[p] * mp[p];
    }
  }
  auto px = x.node(), pm = m.node();
  return make_op(std::move(out), {x, m}, [px, pm, n, c, hw](Node& self) {
    if (px->requires_grad) {
      Tensor g(px->value.shape());
      for (std::int64_t i = 0; i < n; ++i) {
        const double* mp = pm->value.data() + i * hw;
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const double* gp = self.grad.data() + (i * c + ch) * hw;
          double* op = g.data() + (i * c + ch) * hw;
          for (std::int64_t p = 0; p < hw; ++p) op[p] = gp[p] * mp[p];
        }
      }
      px->accumulate(g);
    }
    if (pm->requires_grad) {
      Tensor g(pm->value.shape());
      for (std::int64_t i = 0; i < n; ++i) {
        double* op = g.data() + i * hw;
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const double* gp = self.grad.data() + (i * c + ch) * hw;
          const double* xp = px->value.data() + (i * c + ch) * hw;
          for (std::int64_t p = 0; p < hw; ++p) op[p] += gp[p] * xp[p];
        }
      }
      pm->accumulate(g);
    }
  });
}

Var scale(const Var& x, const Var& s) {
  if (s.value().numel() != 1) throw ValidationError("scale: gain must be a scalar");
  const double sv = s.value()[0];
  Tensor out(x.value().shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = sv * x.value()[i];
  auto px = x.node(), ps = s.node();
  return make_op(std::move(out), {x, s}, [px, ps, sv](Node& self) {
    if (px->requires_grad) {
      Tensor g(px->value.shape());
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] = sv * self.grad[i];
      px->accumulate(g);
    }
    if (ps->requires_grad) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) acc += self.grad[i] * px->value[i];
      ps->accumulate(Tensor::scalar(acc));
    }
  });
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

namespace {

/// Unfolds one NCHW sample into a (Cin*K*K) x (H*W) patch matrix for a
/// stride-1 same-padding convolution.
void im2col(const double* x, std::int64_t cin, std::int64_t h, std::int64_t w, std::int64_t k,
            RowMat& col) {
  const std::int64_t pad = k / 2;
  for (std::int64_t c = 0; c < cin; ++c) {
    const double* plane = x + c * h * w;
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        double* row = col.data() + ((c * k + ki) * k + kj) * (h * w);
        const std::int64_t o0 = std::max<std::int64_t>(0, pad - kj);
        const std::int64_t o1 = std::min<std::int64_t>(w, w + pad - kj);
        for (std::int64_t oy = 0; oy < h; ++oy) {
          double* dst = row + oy * w;
          const std::int64_t sy = oy + ki - pad;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, 0.0);
            continue;
          }
          const double* src = plane + sy * w + (o0 + kj - pad);
          if (o0 > 0) std::fill(dst, dst + o0, 0.0);
          std::copy(src, src + (o1 - o0), dst + o0);
          if (o1 < w) std::fill(dst + o1, dst + w, 0.0);
        }
      }
    }
  }
}

/// Scatter-adds a patch-matrix gradient back onto the input plane.
void col2im_add(const RowMat& col, std::int64_t cin, std::int64_t h, std::int64_t w, std::int64_t k,
                double* dx) {
  const std::int64_t pad = k / 2;
  for (std::int64_t c = 0; c < cin; ++c) {
    double* plane = dx + c * h * w;
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        const double* row = col.data() + ((c * k + ki) * k + kj) * (h * w);
        const std::int64_t o0 = std::max<std::int64_t>(0, pad - kj);
        const std::int64_t o1 = std::min<std::int64_t>(w, w + pad - kj);
        for (std::int64_t oy = 0; oy < h; ++oy) {
          const std::int64_t sy = oy + ki - pad;
          if (sy < 0 || sy >= h) continue;
          const double* src = row + oy * w + o0;
          double* dst = plane + sy * w + (o0 + kj - pad);
          for (std::int64_t i = 0; i < o1 - o0; ++i) dst[i] += src[i];
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.ndim() != 4 || wv.ndim() != 4) {
    throw ValidationError("conv2d: expected NCHW input and OIKK weight");
  }
  const std::int64_t n = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), ww = xv.dim(3);
  const std::int64_t cout = wv.dim(0), k = wv.dim(2);
  if (wv.dim(1) != cin) {
    throw ValidationError("conv2d: weight expects " + std::to_string(wv.dim(1)) +
                          " input channels, got " + std::to_string(cin));
  }
  if (wv.dim(3) != k || k % 2 == 0) throw ValidationError("conv2d: kernel must be square and odd");
  if (bv.numel() != cout) throw ValidationError("conv2d: bias size mismatch");

  const std::int64_t hw = h * ww, ckk = cin * k * k;
  Tensor out({n, cout, h, ww});
  {
    RowMat col(ckk, hw);
    CMapRM wm(wv.data(), cout, ckk);
    for (std::int64_t i = 0; i < n; ++i) {
      im2col(xv.data() + i * cin * hw, cin, h, ww, k, col);
      MapRM ym(out.data() + i * cout * hw, cout, hw);
      ym.noalias() = wm * col;
      for (std::int64_t c = 0; c < cout; ++c) ym.row(c).array() += bv[c];
    }
  }

  auto px = x.node(), pw = w.node(), pb = b.node();
  return make_op(std::move(out), {x, w, b}, [px, pw, pb, n, cin, h, ww, cout, k](Node& self) {
    const std::int64_t hw = h * ww, ckk = cin * k * k;
    RowMat col(ckk, hw);
    CMapRM wm(pw->value.data(), cout, ckk);
    RowMat dw = RowMat::Zero(cout, ckk);
    Eigen::VectorXd db = Eigen::VectorXd::Zero(cout);
    const bool need_dx = px->requires_grad;
    const bool need_dw = pw->requires_grad;
    const bool need_db = pb->requires_grad;
    Tensor dx;
    if (need_dx) dx = Tensor(px->value.shape());
    for (std::int64_t i = 0; i < n; ++i) {
      CMapRM gy(self.grad.data() + i * cout * hw, cout, hw);
      if (need_dw || need_dx) im2col(px->value.data() + i * cin * hw, cin, h, ww, k, col);
      if (need_dw) dw.noalias() += gy * col.transpose();
      if (need_db) db.noalias() += gy.rowwise().sum();
      if (need_dx) {
        RowMat dcol = wm.transpose() * gy;
        col2im_add(dcol, cin, h, ww, k, dx.data() + i * cin * hw);
      }
    }
    if (need_dx) px->accumulate(dx);
    if (need_dw) {
      Tensor g(pw->value.shape());
      std::copy(dw.data(), dw.data() + dw.size(), g.data());
      pw->accumulate(g);
    }
    if (need_db) {
      Tensor g(pb->value.shape());
      std::copy(db.data(), db.data() + db.size(), g.data());
      pb->accumulate(g);
    }
  });
}

// ---------------------------------------------------------------------------
// pooling and resampling
// ---------------------------------------------------------------------------

Var maxpool2(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.ndim() != 4 || xv.dim(2) % 2 || xv.dim(3) % 2) {
    throw ValidationError("maxpool2: expects NCHW with even H and W, got " + xv.shape_str());
  }
  const std::int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::int64_t oh = h / 2, ow = w / 2;
  Tensor out({n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out.numel()));
  std::int64_t oi = 0;
  for (std::int64_t nc = 0; nc < n * c; ++nc) {
    const double* plane = xv.data() + nc * h * w;
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t xo = 0; xo < ow; ++xo, ++oi) {
        const std::int64_t base = 2 * y * w + 2 * xo;
        std::int64_t best = base;
        double bv = plane[base];
        for (std::int64_t dy = 0; dy < 2; ++dy) {
          for (std::int64_t dx = 0; dx < 2; ++dx) {
            const std::int64_t idx = base + dy * w + dx;
            if (plane[idx] > bv) {
              bv = plane[idx];
              best = idx;
            }
          }
        }
        out[oi] = bv;
        (*argmax)[static_cast<std::size_t>(oi)] = nc * h * w + best;
      }
    }
  }
  auto px = x.node();
  return make_op(std::move(out), {x}, [px, argmax](Node& self) {
    if (!px->requires_grad) return;
    Tensor& g = px->ensure_grad();
    for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
      g[(*argmax)[static_cast<std::size_t>(i)]] += self.grad[i];
    }
  });
}

Var avgpool2(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.ndim() != 4 || xv.dim(2) % 2 || xv.dim(3) % 2) {
    throw ValidationError("avgpool2: expects NCHW with even H and W, got " + xv.shape_str());
  }
  const std::int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::int64_t oh = h / 2, ow = w / 2;
  Tensor out({n, c, oh, ow});
  std::int64_t oi = 0;
  for (std::int64_t nc = 0; nc < n * c; ++nc) {
    const double* plane = xv.data() + nc * h * w;
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t xo = 0; xo < ow; ++xo, ++oi) {
        const std::int64_t base = 2 * y * w + 2 * xo;
        out[oi] = 0.25 * (plane[base] + plane[base + 1] + plane[base + w] + plane[base + w + 1]);
      }
    }
  }
  auto px = x.node();
  return make_op(std::move(out), {x}, [px, n, c, h, w](Node& self) {
    if (!px->requires_grad) return;
    Tensor& g = px->ensure_grad();
    const std::int64_t oh = h / 2, ow = w / 2;
    std::int64_t oi = 0;
    for (std::int64_t nc = 0; nc < n * c; ++nc) {
      double* plane = g.data() + nc * h * w;
      for (std::int64_t y = 0; y < oh; ++y) {
        for (std::int64_t xo = 0; xo < ow; ++xo, ++oi) {
          const double gv = 0.25 * self.grad[oi];
          const std::int64_t base = 2 * y * w + 2 * xo;
          plane[base] += gv;
          plane[base + 1] += gv;
          plane[base + w] += gv;
          plane[base + w + 1] += gv;
        }
      }
    }
  });
}

namespace {

struct LinTap {
  std::int64_t i0, i1;
  double t;  // weight of i1
};

std::vector<LinTap> bilinear_taps(std::int64_t in_n, std::int64_t out_n) {
  std::vector<LinTap> taps(static_cast<std::size_t>(out_n));
  const double scale = static_cast<double>(in_n) / static_cast<double>(out_n);
  for (std::int64_t o = 0; o < out_n; ++o) {
    const double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    double f = std::floor(src);
    double t = src - f;
    std::int64_t i0 = static_cast<std::int64_t>(f);
    std::int64_t i1 = i0 + 1;
    if (i0 < 0) i0 = 0;
    if (i1 < 0) i1 = 0;
    if (i0 > in_n - 1) i0 = in_n - 1;
    if (i1 > in_n - 1) i1 = in_n - 1;
    taps[static_cast<std::size_t>(o)] = {i0, i1, t};
  }
  return taps;
}

}  // namespace

Var bilinear_resize(const Var& x, std::int64_t out_h, std::int64_t out_w) {
  const Tensor& xv = x.value();
  if (xv.ndim() != 4) throw ValidationError("bilinear_resize: expected NCHW, got " + xv.shape_str());
  const std::int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (out_h <= 0 || out_w <= 0) throw ValidationError("bilinear_resize: target size must be positive");
  if (out_h == h && out_w == w) {
    // Identity resize is exact.
    Tensor out = xv;
    auto px = x.node();
    return make_op(std::move(out), {x}, [px](Node& self) {
      if (px->requires_grad) px->accumulate(self.grad);
    });
  }
  const auto ty = bilinear_taps(h, out_h);
  const auto tx = bilinear_taps(w, out_w);
  Tensor out({n, c, out_h, out_w});
  for (std::int64_t nc = 0; nc < n * c; ++nc) {
    const double* src = xv.data() + nc * h * w;
    double* dst = out.data() + nc * out_h * out_w;
    for (std::int64_t y = 0; y < out_h; ++y) {
      const LinTap& a = ty[static_cast<std::size_t>(y)];
      const double* r0 = src + a.i0 * w;
      const double* r1 = src + a.i1 * w;
      for (std::int64_t xo = 0; xo < out_w; ++xo) {
        const LinTap& bt = tx[static_cast<std::size_t>(xo)];
        const double top = r0[bt.i0] * (1.0 - bt.t) + r0[bt.i1] * bt.t;
        const double bot = r1[bt.i0] * (1.0 - bt.t) + r1[bt.i1] * bt.t;
        dst[y * out_w + xo] = top * (1.0 - a.t) + bot * a.t;
      }
    }
  }
  auto px = x.node();
  return make_op(std::move(out), {x}, [px, ty, tx, n, c, h, w, out_h, out_w](Node& self) {
    if (!px->requires_grad) return;
    Tensor& g = px->ensure_grad();
    for (std::int64_t nc = 0; nc < n * c; ++nc) {
      double* dst = g.data() + nc * h * w;
      const double* gp = self.grad.data() + nc * out_h * out_w;
      for (std::int64_t y = 0; y < out_h; ++y) {
        const LinTap& a = ty[static_cast<std::size_t>(y)];
        for (std::int64_t xo = 0; xo < out_w; ++xo) {
          const LinTap& bt = tx[static_cast<std::size_t>(xo)];
          const double gv = gp[y * out_w + xo];
          dst[a.i0 * w + bt.i0] += gv * (1.0 - a.t) * (1.0 - bt.t);
          dst[a.i0 * w + bt.i1] += gv * (1.0 - a.t) * bt.t;
          dst[a.i1 * w + bt.i0] += gv * a.t * (1.0 - bt.t);
          dst[a.i1 * w + bt.i1] += gv * a.t * bt.t;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// channel statistics
// ---------------------------------------------------------------------------

Var channel_mean(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.ndim() != 4) throw ValidationError("channel_mean: expected NCHW");
  const std::int64_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor out({n, 1, xv.dim(2), xv.dim(3)});
  const double inv = 1.0 / static_cast<double>(c);
  for (std::int64_t i = 0; i < n; ++i) {
    double* op = out.data() + i * hw;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double* xp = xv.data() + (i * c + ch) * hw;
      for (std::int64_t p = 0; p < hw; ++p) op[p] += xp[p];
    }
    for (std::int64_t p = 0; p < hw; ++p) op[p] *= inv;
  }
  auto px = x.node();
  return make_op(std::move(out), {x}, [px, n, c, hw, inv](Node& self) {
    if (!px->requires_grad) return;
    Tensor g(px->value.shape());
    for (std::int64_t i = 0; i < n; ++i) {
      const double* gp = self.grad.data() + i * hw;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        double* op = g.data() + (i * c + ch) * hw;
        for (std::int64_t p = 0; p < hw; ++p) op[p] = gp[p] * inv;
      }
    }
    px->accumulate(g);
  });
}

Var channel_max(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.ndim() != 4) throw ValidationError("channel_max: expected NCHW");
  const std::int64_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor out({n, 1, xv.dim(2), xv.dim(3)});
  auto arg = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n * hw));
  for (std::int64_t i = 0; i < n; ++i) {
    double* op = out.data() + i * hw;
    for (std::int64_t p = 0; p < hw; ++p) {
      double best = xv[(i * c) * hw + p];
      std::int64_t bc = 0;
      for (std::int64_t ch = 1; ch < c; ++ch) {
        const double v = xv[(i * c + ch) * hw + p];
        if (v > best) {
          best = v;
          bc = ch;
        }
      }
      op[p] = best;
      (*arg)[static_cast<std::size_t>(i * hw + p)] = (i * c + bc) * hw + p;
    }
  }
  auto px = x.node();
  return make_op(std::move(out), {x}, [px, arg](Node& self) {
    if (!px->requires_grad) return;
    Tensor& g = px->ensure_grad();
    for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
      g[(*arg)[static_cast<std::size_t>(i)]] += self.grad[i];
    }
  });
}

Var l2_normalize_channels(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.ndim() != 4) throw ValidationError("l2_normalize_channels: expected NCHW");
  const std::int64_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  constexpr double kZeroTol = 1e-12;
  Tensor out(xv.shape());
  auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n * hw));
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t p = 0; p < hw; ++p) {
      double s = 0.0;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const double v = xv[(i * c + ch) * hw + p];
        s += v * v;
      }
      const double r = std::sqrt(s);
      (*norms)[static_cast<std::size_t>(i * hw + p)] = r;
      if (r < kZeroTol) continue;  // zero vectors stay zero
      const double inv = 1.0 / r;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        out[(i * c + ch) * hw + p] = xv[(i * c + ch) * hw + p] * inv;
      }
    }
  }
  auto px = x.node();
  return make_op(std::move(out), {x}, [px, norms, n, c, hw](Node& self) {
    if (!px->requires_grad) return;
    Tensor g(px->value.shape());
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t p = 0; p < hw; ++p) {
        const double r = (*norms)[static_cast<std::size_t>(i * hw + p)];
        if (r < 1e-12) continue;
        double dot = 0.0;
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const std::int64_t idx = (i * c + ch) * hw + p;
          dot += self.value[idx] * self.grad[idx];
        }
        const double inv = 1.0 / r;
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const std::int64_t idx = (i * c + ch) * hw + p;
          g[idx] = (self.grad[idx] - self.value[idx] * dot) * inv;
        }
      }
    }
    px->accumulate(g);
  });
}

// ---------------------------------------------------------------------------
// dense spatial self-attention
// ---------------------------------------------------------------------------

namespace {

void softmax_rows_inplace(MapRM m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
}

}  // namespace

Var attention_context(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.ndim() != 4) throw ValidationError("attention_context: expected NCHW");
  const std::int64_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor out(xv.shape());

  const bool tape = g_grad_enabled && x.requires_grad();
  auto saved = std::make_shared<std::vector<RowMat>>();
  if (tape) saved->reserve(static_cast<std::size_t>(n));

  for (std::int64_t i = 0; i < n; ++i) {
    CMapRM a(xv.data() + i * c * hw, c, hw);
    MapRM gmap(out.data() + i * c * hw, c, hw);
    if (tape) {
      RowMat omega = a.transpose() * a;
      softmax_rows_inplace(MapRM(omega.data(), omega.rows(), omega.cols()));
      gmap.noalias() = a * omega;
      saved->push_back(std::move(omega));
    } else {
      // Stream the attention matrix in row blocks to bound memory.
      const std::int64_t block = std::min<std::int64_t>(hw, 512);
      gmap.setZero();
      RowMat lb;
      for (std::int64_t r0 = 0; r0 < hw; r0 += block) {
        const std::int64_t rn = std::min(block, hw - r0);
        lb.noalias() = a.middleCols(r0, rn).transpose() * a;
        softmax_rows_inplace(MapRM(lb.data(), lb.rows(), lb.cols()));
        gmap.noalias() += a.middleCols(r0, rn) * lb;
      }
    }
  }

  auto px = x.node();
  return make_op(std::move(out), {x}, [px, saved, n, c, hw](Node& self) {
    if (!px->requires_grad) return;
    Tensor dx(px->value.shape());
    for (std::int64_t i = 0; i < n; ++i) {
      CMapRM a(px->value.data() + i * c * hw, c, hw);
      CMapRM dg(self.grad.data() + i * c * hw, c, hw);
      MapRM da(dx.data() + i * c * hw, c, hw);
      const RowMat& omega = (*saved)[static_cast<std::size_t>(i)];
      RowMat domega = a.transpose() * dg;
      da.noalias() = dg * omega.transpose();
      // Softmax backward per row, into the logits matrix.
      RowMat dl(hw, hw);
      for (std::int64_t r = 0; r < hw; ++r) {
        const double dot = domega.row(r).cwiseProduct(omega.row(r)).sum();
        dl.row(r) = omega.row(r).array() * (domega.row(r).array() - dot);
      }
      da.noalias() += a * (dl + dl.transpose());
    }
    px->accumulate(dx);
  });
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
                Tensor& running_var, BnMode mode, double momentum, double eps) {
  const Tensor& xv = x.value();
  if (xv.ndim() != 4) throw ValidationError("batchnorm2d: expected NCHW");
  const std::int64_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  if (gamma.value().numel() != c || beta.value().numel() != c || running_mean.numel() != c ||
      running_var.numel() != c) {
    throw ValidationError("batchnorm2d: parameter size mismatch for " + std::to_string(c) +
                          " channels");
  }

  const std::int64_t m = n * hw;
  std::vector<double> mu(static_cast<std::size_t>(c)), var(static_cast<std::size_t>(c));
  if (mode == BnMode::kEval) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      mu[static_cast<std::size_t>(ch)] = running_mean[ch];
      var[static_cast<std::size_t>(ch)] = running_var[ch];
    }
  } else {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const double* p = xv.data() + (i * c + ch) * hw;
        for (std::int64_t q = 0; q < hw; ++q) s += p[q];
      }
      const double mean_c = s / static_cast<double>(m);
      double v = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const double* p = xv.data() + (i * c + ch) * hw;
        for (std::int64_t q = 0; q < hw; ++q) {
          const double d = p[q] - mean_c;
          v += d * d;
        }
      }
      mu[static_cast<std::size_t>(ch)] = mean_c;
      var[static_cast<std::size_t>(ch)] = v / static_cast<double>(m);
    }
    if (mode == BnMode::kTrain) {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const double unbiased =
            m > 1 ? var[static_cast<std::size_t>(ch)] * static_cast<double>(m) / static_cast<double>(m - 1)
                  : var[static_cast<std::size_t>(ch)];
        running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * mu[static_cast<std::size_t>(ch)];
        running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * unbiased;
      }
    }
  }

  std::vector<double> inv(static_cast<std::size_t>(c));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    inv[static_cast<std::size_t>(ch)] = 1.0 / std::sqrt(var[static_cast<std::size_t>(ch)] + eps);
  }

  Tensor out(xv.shape());
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double* p = xv.data() + (i * c + ch) * hw;
      double* o = out.data() + (i * c + ch) * hw;
      const double g = gamma.value()[ch], bshift = beta.value()[ch];
      const double mc = mu[static_cast<std::size_t>(ch)], ic = inv[static_cast<std::size_t>(ch)];
      for (std::int64_t q = 0; q < hw; ++q) o[q] = g * (p[q] - mc) * ic + bshift;
    }
  }

  const bool batch_stats = mode != BnMode::kEval;
  auto px = x.node(), pg = gamma.node(), pb = beta.node();
  return make_op(std::move(out), {x, gamma, beta},
                 [px, pg, pb, mu, inv, n, c, hw, batch_stats](Node& self) {
    const std::int64_t m = n * hw;
    Tensor dx;
    const bool need_dx = px->requires_grad;
    if (need_dx) dx = Tensor(px->value.shape());
    Tensor dgamma(pg->value.shape());
    Tensor dbeta(pb->value.shape());
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double mc = mu[static_cast<std::size_t>(ch)], ic = inv[static_cast<std::size_t>(ch)];
      const double g = pg->value[ch];
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const double* xp = px->value.data() + (i * c + ch) * hw;
        const double* gp = self.grad.data() + (i * c + ch) * hw;
        for (std::int64_t q = 0; q < hw; ++q) {
          sum_dy += gp[q];
          sum_dy_xhat += gp[q] * (xp[q] - mc) * ic;
        }
      }
      dgamma[ch] = sum_dy_xhat;
      dbeta[ch] = sum_dy;
      if (need_dx) {
        const double mean_dy = sum_dy / static_cast<double>(m);
        const double mean_dy_xhat = sum_dy_xhat / static_cast<double>(m);
        for (std::int64_t i = 0; i < n; ++i) {
          const double* xp = px->value.data() + (i * c + ch) * hw;
          const double* gp = self.grad.data() + (i * c + ch) * hw;
          double* dp = dx.data() + (i * c + ch) * hw;
          for (std::int64_t q = 0; q < hw; ++q) {
            const double xhat = (xp[q] - mc) * ic;
            if (batch_stats) {
              dp[q] = g * ic * (gp[q] - mean_dy - xhat * mean_dy_xhat);
            } else {
              dp[q] = g * ic * gp[q];
            }
          }
        }
      }
    }
    if (need_dx) px->accumulate(dx);
    if (pg->requires_grad) pg->accumulate(dgamma);
    if (pb->requires_grad) pb->accumulate(dbeta);
  });
}

}  // namespace bcsnet::ag
