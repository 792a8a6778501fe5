#include "persemon/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace persemon::ad {

namespace {

NodePtr make_node(Tensor value, std::vector<NodePtr> parents, const char* op) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->op = op;
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->grad = Tensor(n->value.shape());
  return n;
}

// Gradient buffer of a parent, or nullptr when it does not require one.
Tensor* grad_of(const NodePtr& p) { return p->requires_grad ? &p->grad : nullptr; }

int ceil_div(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }
int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

struct ConvDims {
  int n, c, h, w;     // input
  int f, k;           // filters, kernel
  int s;              // stride
  int ho, wo;         // output spatial
  int pad_top, pad_left;
};

ConvDims conv_dims(const Tensor& x, const Tensor& wt, int stride) {
  check_shape(x.rank() == 4, "conv2d input must be 4-d, got " + shape_str(x.shape()));
  check_shape(wt.rank() == 4, "conv2d weight must be 4-d, got " + shape_str(wt.shape()));
  ConvDims d{};
  d.n = x.dim(0); d.c = x.dim(1); d.h = x.dim(2); d.w = x.dim(3);
  d.f = wt.dim(0); d.k = wt.dim(2); d.s = stride;
  check_shape(wt.dim(1) == d.c, "conv2d channel mismatch: input " + shape_str(x.shape()) +
                                    " vs weight " + shape_str(wt.shape()));
  check_shape(wt.dim(3) == d.k, "conv2d kernel must be square, got " + shape_str(wt.shape()));
  if (stride < 1) throw ContractError("conv2d stride must be >= 1");
  if (d.k > d.h || d.k > d.w)
    throw ShapeError("conv2d kernel " + std::to_string(d.k) + " exceeds input " +
                     shape_str(x.shape()));
  d.ho = (d.h + d.s - 1) / d.s;
  d.wo = (d.w + d.s - 1) / d.s;
  int pad_h = std::max(0, (d.ho - 1) * d.s + d.k - d.h);
  int pad_w = std::max(0, (d.wo - 1) * d.s + d.k - d.w);
  d.pad_top = pad_h / 2;
  d.pad_left = pad_w / 2;
  return d;
}

// Valid output range [o0,o1] for one kernel offset: i = o*s - pad + koff in [0,extent).
void valid_range(int koff, int pad, int stride, int extent, int out_extent, int& o0, int& o1) {
  o0 = std::max(0, ceil_div(pad - koff, stride));
  o1 = std::min(out_extent - 1, floor_div(extent - 1 - koff + pad, stride));
}

}  // namespace

void zero_grad(const std::vector<ParamPtr>& params) {
  for (const auto& p : params) p->grad.fill(0.0);
}

Value constant(Tensor t) { return Value(make_node(std::move(t), {}, "const")); }

Value leaf(Tensor t) {
  auto n = make_node(std::move(t), {}, "leaf");
  n->requires_grad = true;
  n->grad = Tensor(n->value.shape());
  return Value(n);
}

Value param(const ParamPtr& p) {
  auto n = make_node(p->value, {}, "param");
  n->requires_grad = true;
  n->grad = Tensor(n->value.shape());
  n->bound = p.get();
  return Value(n);
}

Value detach(const Value& v) { return constant(v.tensor()); }

Value add(const Value& a, const Value& b) {
  check_shape(a.tensor().same_shape(b.tensor()),
              "add shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.tensor();
  out.add_inplace(b.tensor());
  auto n = make_node(std::move(out), {a.node(), b.node()}, "add");
  if (n->requires_grad)
    n->backprop = [](Node& self) {
      for (int side = 0; side < 2; ++side)
        if (Tensor* g = grad_of(self.parents[static_cast<size_t>(side)]))
          g->add_inplace(self.grad);
    };
  return Value(n);
}

Value sub(const Value& a, const Value& b) {
  check_shape(a.tensor().same_shape(b.tensor()),
              "sub shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.tensor();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b.tensor()[i];
  auto n = make_node(std::move(out), {a.node(), b.node()}, "sub");
  if (n->requires_grad)
    n->backprop = [](Node& self) {
      if (Tensor* g = grad_of(self.parents[0])) g->add_inplace(self.grad);
      if (Tensor* g = grad_of(self.parents[1]))
        for (int64_t i = 0; i < g->numel(); ++i) (*g)[i] -= self.grad[i];
    };
  return Value(n);
}

Value mul(const Value& a, const Value& b) {
  check_shape(a.tensor().same_shape(b.tensor()),
              "mul shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.tensor();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b.tensor()[i];
  auto n = make_node(std::move(out), {a.node(), b.node()}, "mul");
  if (n->requires_grad)
    n->backprop = [](Node& self) {
      const Tensor& av = self.parents[0]->value;
      const Tensor& bv = self.parents[1]->value;
      if (Tensor* g = grad_of(self.parents[0]))
        for (int64_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i] * bv[i];
      if (Tensor* g = grad_of(self.parents[1]))
        for (int64_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i] * av[i];
    };
  return Value(n);
}

Value scale(const Value& a, double c) {
  Tensor out = a.tensor();
  for (auto& v : out.vec()) v *= c;
  auto n = make_node(std::move(out), {a.node()}, "scale");
  if (n->requires_grad)
    n->backprop = [c](Node& self) {
      if (Tensor* g = grad_of(self.parents[0]))
        for (int64_t i = 0; i < g->numel(); ++i) (*g)[i] += c * self.grad[i];
    };
  return Value(n);
}

Value sum(const Value& a) {
  double s = 0.0;
  for (double v : a.tensor().vec()) s += v;
  auto n = make_node(Tensor::scalar(s), {a.node()}, "sum");
  if (n->requires_grad)
    n->backprop = [](Node& self) {
      if (Tensor* g = grad_of(self.parents[0])) {
        double gs = self.grad[0];
        for (int64_t i = 0; i < g->numel(); ++i) (*g)[i] += gs;
      }
    };
  return Value(n);
}

Value mean_all(const Value& a) {
  if (a.tensor().numel() == 0) throw ContractError("mean_all of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.tensor().numel()));
}

Value mean_axis0(const Value& a) {
  check_shape(a.tensor().rank() == 2, "mean_axis0 expects rank-2, got " + shape_str(a.shape()));
  int k = a.tensor().dim(0), m = a.tensor().dim(1);
  Tensor out({m});
  const double* src = a.tensor().data();
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < m; ++j) out[j] += src[i * m + j];
  for (int j = 0; j < m; ++j) out[j] /= k;
  auto n = make_node(std::move(out), {a.node()}, "mean_axis0");
  if (n->requires_grad)
    n->backprop = [k, m](Node& self) {
      if (Tensor* g = grad_of(self.parents[0]))
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < m; ++j) (*g)[i * m + j] += self.grad[j] / k;
    };
  return Value(n);
}

Value max_axis0(const Value& a) {
  check_shape(a.tensor().rank() == 2, "max_axis0 expects rank-2, got " + shape_str(a.shape()));
  int k = a.tensor().dim(0), m = a.tensor().dim(1);
  Tensor out({m});
  std::vector<int> arg(static_cast<size_t>(m), 0);
  const double* src = a.tensor().data();
  for (int j = 0; j < m; ++j) out[j] = src[j];
  for (int i = 1; i < k; ++i)
    for (int j = 0; j < m; ++j)
      if (src[i * m + j] > out[j]) {
        out[j] = src[i * m + j];
        arg[static_cast<size_t>(j)] = i;
      }
  auto n = make_node(std::move(out), {a.node()}, "max_axis0");
  if (n->requires_grad)
    n->backprop = [arg, m](Node& self) {
      if (Tensor* g = grad_of(self.parents[0]))
        for (int j = 0; j < m; ++j) (*g)[arg[static_cast<size_t>(j)] * m + j] += self.grad[j];
    };
  return Value(n);
}

Value relu(const Value& a) {
  Tensor out = a.tensor();
  for (auto& v : out.vec()) v = v > 0.0 ? v : 0.0;
  auto n = make_node(std::move(out), {a.node()}, "relu");
  if (n->requires_grad)
    n->backprop = [](Node& self) {
      if (Tensor* g = grad_of(self.parents[0])) {
        const Tensor& x = self.parents[0]->value;
        for (int64_t i = 0; i < g->numel(); ++i)
          if (x[i] > 0.0) (*g)[i] += self.grad[i];
      }
    };
  return Value(n);
}

Value prelu(const Value& a, const Value& slope) {
  const Tensor& x = a.tensor();
  const Tensor& s = slope.tensor();
  check_shape(x.rank() >= 2, "prelu input must have a channel axis, got " + shape_str(x.shape()));
  check_shape(s.rank() == 1 && s.dim(0) == x.dim(1),
              "prelu slope shape " + shape_str(s.shape()) + " does not match channels of " +
                  shape_str(x.shape()));
  int batch = x.dim(0), channels = x.dim(1);
  int64_t plane = x.numel() / (static_cast<int64_t>(batch) * channels);
  Tensor out = x;
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < channels; ++c) {
      double sc = s[c];
      double* row = out.data() + (static_cast<int64_t>(b) * channels + c) * plane;
      for (int64_t i = 0; i < plane; ++i)
        if (row[i] < 0.0) row[i] *= sc;
    }
  auto n = make_node(std::move(out), {a.node(), slope.node()}, "prelu");
  if (n->requires_grad)
    n->backprop = [batch, channels, plane](Node& self) {
      const Tensor& x = self.parents[0]->value;
      const Tensor& s = self.parents[1]->value;
      Tensor* gx = grad_of(self.parents[0]);
      Tensor* gs = grad_of(self.parents[1]);
      for (int b = 0; b < batch; ++b)
        for (int c = 0; c < channels; ++c) {
          double sc = s[c];
          int64_t base = (static_cast<int64_t>(b) * channels + c) * plane;
          double acc = 0.0;
          for (int64_t i = 0; i < plane; ++i) {
            double xv = x[base + i];
            double gv = self.grad[base + i];
            if (xv >= 0.0) {
              if (gx) (*gx)[base + i] += gv;
            } else {
              if (gx) (*gx)[base + i] += sc * gv;
              acc += gv * xv;
            }
          }
          if (gs) (*gs)[c] += acc;
        }
    };
  return Value(n);
}

Value sigmoid(const Value& a) {
  Tensor out = a.tensor();
  for (auto& v : out.vec()) v = 1.0 / (1.0 + std::exp(-v));
  auto n = make_node(std::move(out), {a.node()}, "sigmoid");
  if (n->requires_grad)
    n->backprop = [](Node& self) {
      if (Tensor* g = grad_of(self.parents[0]))
        for (int64_t i = 0; i < g->numel(); ++i) {
          double y = self.value[i];
          (*g)[i] += self.grad[i] * y * (1.0 - y);
        }
    };
  return Value(n);
}

Value tanh_act(const Value& a) {
  Tensor out = a.tensor();
  for (auto& v : out.vec()) v = std::tanh(v);
  auto n = make_node(std::move(out), {a.node()}, "tanh");
  if (n->requires_grad)
    n->backprop = [](Node& self) {
      if (Tensor* g = grad_of(self.parents[0]))
        for (int64_t i = 0; i < g->numel(); ++i) {
          double y = self.value[i];
          (*g)[i] += self.grad[i] * (1.0 - y * y);
        }
    };
  return Value(n);
}

namespace {
// Shared row plumbing for softmax/log_softmax over the last axis.
struct RowView {
  int64_t rows;
  int cols;
};
RowView last_axis_rows(const Tensor& t) {
  check_shape(t.rank() >= 1, "softmax needs rank >= 1");
  int cols = t.dim(t.rank() - 1);
  return RowView{t.numel() / cols, cols};
}
}  // namespace

Value softmax(const Value& a) {
  RowView rv = last_axis_rows(a.tensor());
  Tensor out = a.tensor();
  for (int64_t r = 0; r < rv.rows; ++r) {
    double* row = out.data() + r * rv.cols;
    double mx = row[0];
    for (int j = 1; j < rv.cols; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < rv.cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      denom += row[j];
    }
    for (int j = 0; j < rv.cols; ++j) row[j] /= denom;
  }
  auto n = make_node(std::move(out), {a.node()}, "softmax");
  if (n->requires_grad)
    n->backprop = [rv](Node& self) {
      if (Tensor* g = grad_of(self.parents[0]))
        for (int64_t r = 0; r < rv.rows; ++r) {
          const double* y = self.value.data() + r * rv.cols;
          const double* gy = self.grad.data() + r * rv.cols;
          double dot = 0.0;
          for (int j = 0; j < rv.cols; ++j) dot += gy[j] * y[j];
          double* gx = g->data() + r * rv.cols;
          for (int j = 0; j < rv.cols; ++j) gx[j] += y[j] * (gy[j] - dot);
        }
    };
  return Value(n);
}

Value log_softmax(const Value& a) {
  RowView rv = last_axis_rows(a.tensor());
  Tensor out = a.tensor();
  for (int64_t r = 0; r < rv.rows; ++r) {
    double* row = out.data() + r * rv.cols;
    double mx = row[0];
    for (int j = 1; j < rv.cols; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < rv.cols; ++j) denom += std::exp(row[j] - mx);
    double lse = mx + std::log(denom);
    for (int j = 0; j < rv.cols; ++j) row[j] -= lse;
  }
  auto n = make_node(std::move(out), {a.node()}, "log_softmax");
  if (n->requires_grad)
    n->backprop = [rv](Node& self) {
      if (Tensor* g = grad_of(self.parents[0]))
        for (int64_t r = 0; r < rv.rows; ++r) {
          const double* y = self.value.data() + r * rv.cols;
          const double* gy = self.grad.data() + r * rv.cols;
          double gsum = 0.0;
          for (int j = 0; j < rv.cols; ++j) gsum += gy[j];
          double* gx = g->data() + r * rv.cols;
          for (int j = 0; j < rv.cols; ++j) gx[j] += gy[j] - std::exp(y[j]) * gsum;
        }
    };
  return Value(n);
}

Value fully_connected(const Value& x, const Value& w, const Value& b) {
  const Tensor& xt = x.tensor();
  const Tensor& wt = w.tensor();
  const Tensor& bt = b.tensor();
  check_shape(xt.rank() == 2, "fully_connected input must be 2-d, got " + shape_str(xt.shape()));
  check_shape(wt.rank() == 2, "fully_connected weight must be 2-d, got " + shape_str(wt.shape()));
  check_shape(xt.dim(1) == wt.dim(0), "fully_connected inner dims disagree: " +
                                          shape_str(xt.shape()) + " x " + shape_str(wt.shape()));
  check_shape(bt.rank() == 1 && bt.dim(0) == wt.dim(1),
              "fully_connected bias shape " + shape_str(bt.shape()) + " vs weight " +
                  shape_str(wt.shape()));
  int rows = xt.dim(0), inner = xt.dim(1), cols = wt.dim(1);
  Tensor out({rows, cols});
  for (int r = 0; r < rows; ++r) {
    double* orow = out.data() + static_cast<int64_t>(r) * cols;
    for (int j = 0; j < cols; ++j) orow[j] = bt[j];
    const double* xrow = xt.data() + static_cast<int64_t>(r) * inner;
    for (int d = 0; d < inner; ++d) {
      double xv = xrow[d];
      const double* wrow = wt.data() + static_cast<int64_t>(d) * cols;
      for (int j = 0; j < cols; ++j) orow[j] += xv * wrow[j];
    }
  }
  auto n = make_node(std::move(out), {x.node(), w.node(), b.node()}, "fully_connected");
  if (n->requires_grad)
    n->backprop = [rows, inner, cols](Node& self) {
      const Tensor& xv = self.parents[0]->value;
      const Tensor& wv = self.parents[1]->value;
      Tensor* gx = grad_of(self.parents[0]);
      Tensor* gw = grad_of(self.parents[1]);
      Tensor* gb = grad_of(self.parents[2]);
      for (int r = 0; r < rows; ++r) {
        const double* grow = self.grad.data() + static_cast<int64_t>(r) * cols;
        if (gx) {
          double* gxrow = gx->data() + static_cast<int64_t>(r) * inner;
          for (int d = 0; d < inner; ++d) {
            const double* wrow = wv.data() + static_cast<int64_t>(d) * cols;
            double acc = 0.0;
            for (int j = 0; j < cols; ++j) acc += wrow[j] * grow[j];
            gxrow[d] += acc;
          }
        }
        if (gw) {
          const double* xrow = xv.data() + static_cast<int64_t>(r) * inner;
          for (int d = 0; d < inner; ++d) {
            double xs = xrow[d];
            double* gwrow = gw->data() + static_cast<int64_t>(d) * cols;
            for (int j = 0; j < cols; ++j) gwrow[j] += xs * grow[j];
          }
        }
        if (gb)
          for (int j = 0; j < cols; ++j) (*gb)[j] += grow[j];
      }
    };
  return Value(n);
}

Value conv2d(const Value& x, const Value& w, int stride) {
  ConvDims d = conv_dims(x.tensor(), w.tensor(), stride);
  Tensor out({d.n, d.f, d.ho, d.wo});
  const double* xp = x.tensor().data();
  const double* wp = w.tensor().data();
  double* op = out.data();
  const int64_t in_plane = static_cast<int64_t>(d.h) * d.w;
  const int64_t out_plane = static_cast<int64_t>(d.ho) * d.wo;
  for (int b = 0; b < d.n; ++b)
    for (int f = 0; f < d.f; ++f) {
      double* outp = op + (static_cast<int64_t>(b) * d.f + f) * out_plane;
      for (int c = 0; c < d.c; ++c) {
        const double* inp = xp + (static_cast<int64_t>(b) * d.c + c) * in_plane;
        const double* wbase = wp + (static_cast<int64_t>(f) * d.c + c) * d.k * d.k;
        for (int ky = 0; ky < d.k; ++ky) {
          int oy0, oy1;
          valid_range(ky, d.pad_top, d.s, d.h, d.ho, oy0, oy1);
          for (int kx = 0; kx < d.k; ++kx) {
            double wv = wbase[ky * d.k + kx];
            int ox0, ox1;
            valid_range(kx, d.pad_left, d.s, d.w, d.wo, ox0, ox1);
            for (int oy = oy0; oy <= oy1; ++oy) {
              int iy = oy * d.s - d.pad_top + ky;
              const double* irow = inp + static_cast<int64_t>(iy) * d.w + (ox0 * d.s - d.pad_left + kx);
              double* orow = outp + static_cast<int64_t>(oy) * d.wo + ox0;
              int len = ox1 - ox0 + 1;
              if (d.s == 1)
                for (int j = 0; j < len; ++j) orow[j] += wv * irow[j];
              else
                for (int j = 0; j < len; ++j) orow[j] += wv * irow[static_cast<int64_t>(j) * d.s];
            }
          }
        }
      }
    }
  auto n = make_node(std::move(out), {x.node(), w.node()}, "conv2d");
  if (n->requires_grad)
    n->backprop = [d, in_plane, out_plane](Node& self) {
      const Tensor& xv = self.parents[0]->value;
      const Tensor& wv = self.parents[1]->value;
      Tensor* gx = grad_of(self.parents[0]);
      Tensor* gw = grad_of(self.parents[1]);
      const double* gp = self.grad.data();
      for (int b = 0; b < d.n; ++b)
        for (int f = 0; f < d.f; ++f) {
          const double* goutp = gp + (static_cast<int64_t>(b) * d.f + f) * out_plane;
          for (int c = 0; c < d.c; ++c) {
            const double* inp = xv.data() + (static_cast<int64_t>(b) * d.c + c) * in_plane;
            const double* wbase = wv.data() + (static_cast<int64_t>(f) * d.c + c) * d.k * d.k;
            double* gxp = gx ? gx->data() + (static_cast<int64_t>(b) * d.c + c) * in_plane : nullptr;
            double* gwbase =
                gw ? gw->data() + (static_cast<int64_t>(f) * d.c + c) * d.k * d.k : nullptr;
            for (int ky = 0; ky < d.k; ++ky) {
              int oy0, oy1;
              valid_range(ky, d.pad_top, d.s, d.h, d.ho, oy0, oy1);
              for (int kx = 0; kx < d.k; ++kx) {
                int ox0, ox1;
                valid_range(kx, d.pad_left, d.s, d.w, d.wo, ox0, ox1);
                int len = ox1 - ox0 + 1;
                if (len <= 0) continue;
                double wvs = wbase[ky * d.k + kx];
                double wacc = 0.0;
                for (int oy = oy0; oy <= oy1; ++oy) {
                  int iy = oy * d.s - d.pad_top + ky;
                  int64_t ibase = static_cast<int64_t>(iy) * d.w + (ox0 * d.s - d.pad_left + kx);
                  const double* grow = goutp + static_cast<int64_t>(oy) * d.wo + ox0;
                  if (gxp) {
                    double* gxrow = gxp + ibase;
                    if (d.s == 1)
                      for (int j = 0; j < len; ++j) gxrow[j] += wvs * grow[j];
                    else
                      for (int j = 0; j < len; ++j)
                        gxrow[static_cast<int64_t>(j) * d.s] += wvs * grow[j];
                  }
                  if (gwbase) {
                    const double* irow = inp + ibase;
                    if (d.s == 1)
                      for (int j = 0; j < len; ++j) wacc += irow[j] * grow[j];
                    else
                      for (int j = 0; j < len; ++j) wacc += irow[static_cast<int64_t>(j) * d.s] * grow[j];
                  }
                }
                if (gwbase) gwbase[ky * d.k + kx] += wacc;
              }
            }
          }
        }
    };
  return Value(n);
}

Value average_pool(const Value& x) {
  const Tensor& xt = x.tensor();
  check_shape(xt.rank() == 4, "average_pool input must be 4-d, got " + shape_str(xt.shape()));
  int n = xt.dim(0), c = xt.dim(1), h = xt.dim(2), w = xt.dim(3);
  int64_t plane = static_cast<int64_t>(h) * w;
  Tensor out({n, c});
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const double* src = xt.data() + (static_cast<int64_t>(b) * c + ch) * plane;
      double acc = 0.0;
      for (int64_t i = 0; i < plane; ++i) acc += src[i];
      out[static_cast<int64_t>(b) * c + ch] = acc / static_cast<double>(plane);
    }
  auto nd = make_node(std::move(out), {x.node()}, "average_pool");
  if (nd->requires_grad)
    nd->backprop = [n, c, plane](Node& self) {
      if (Tensor* g = grad_of(self.parents[0]))
        for (int b = 0; b < n; ++b)
          for (int ch = 0; ch < c; ++ch) {
            double gv = self.grad[static_cast<int64_t>(b) * c + ch] / static_cast<double>(plane);
            double* dst = g->data() + (static_cast<int64_t>(b) * c + ch) * plane;
            for (int64_t i = 0; i < plane; ++i) dst[i] += gv;
          }
    };
  return Value(nd);
}

namespace {
void check_residual_weights(const Tensor& x, const Tensor& w1, const Tensor& w2) {
  check_shape(x.rank() == 4, "residual_unit input must be 4-d");
  int c = x.dim(1);
  check_shape(w1.rank() == 4 && w1.dim(0) == c && w1.dim(1) == c,
              "residual_unit first conv must be channel preserving: input " +
                  shape_str(x.shape()) + " weight " + shape_str(w1.shape()));
  check_shape(w2.rank() == 4 && w2.dim(0) == c && w2.dim(1) == c,
              "residual_unit second conv must be channel preserving: input " +
                  shape_str(x.shape()) + " weight " + shape_str(w2.shape()));
}
}  // namespace

Value residual_unit(const Value& x, const Value& w1, const Value& w2) {
  check_residual_weights(x.tensor(), w1.tensor(), w2.tensor());
  return add(x, conv2d(relu(conv2d(relu(x), w1, 1)), w2, 1));
}

Value residual_unit(const Value& x, const Value& w1, const Value& slope1, const Value& w2,
                    const Value& slope2) {
  check_residual_weights(x.tensor(), w1.tensor(), w2.tensor());
  return add(x, conv2d(prelu(conv2d(prelu(x, slope1), w1, 1), slope2), w2, 1));
}

Value reshape(const Value& x, std::vector<int> new_shape) {
  check_shape(shape_numel(new_shape) == x.tensor().numel(),
              "reshape " + shape_str(x.shape()) + " -> " + shape_str(new_shape) +
                  " changes element count");
  Tensor out(std::move(new_shape), x.tensor().vec());
  auto n = make_node(std::move(out), {x.node()}, "reshape");
  if (n->requires_grad)
    n->backprop = [](Node& self) {
      if (Tensor* g = grad_of(self.parents[0]))
        for (int64_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
    };
  return Value(n);
}

Value flatten_rows(const Value& x) {
  check_shape(x.tensor().rank() >= 2, "flatten_rows needs rank >= 2");
  int rows = x.tensor().dim(0);
  int cols = static_cast<int>(x.tensor().numel() / rows);
  return reshape(x, {rows, cols});
}

Value slice_rows(const Value& x, int start, int count) {
  const Tensor& xt = x.tensor();
  check_shape(xt.rank() >= 1, "slice_rows needs rank >= 1");
  int rows = xt.dim(0);
  if (start < 0 || count < 1 || start + count > rows)
    throw ContractError("slice_rows [" + std::to_string(start) + "," +
                        std::to_string(start + count) + ") out of bounds for " +
                        shape_str(xt.shape()));
  int64_t row_sz = xt.numel() / rows;
  std::vector<int> oshape = xt.shape();
  oshape[0] = count;
  Tensor out(oshape);
  std::copy_n(xt.data() + start * row_sz, count * row_sz, out.data());
  auto n = make_node(std::move(out), {x.node()}, "slice_rows");
  if (n->requires_grad)
    n->backprop = [start, count, row_sz](Node& self) {
      if (Tensor* g = grad_of(self.parents[0])) {
        double* dst = g->data() + start * row_sz;
        for (int64_t i = 0; i < count * row_sz; ++i) dst[i] += self.grad[i];
      }
    };
  return Value(n);
}

Value smooth_l1_each(const Value& x, double margin, SmoothL1Variant variant) {
  if (margin <= 0.0) throw ContractError("smooth_l1 margin must be positive");
  Tensor out = x.tensor();
  for (auto& v : out.vec()) {
    double a = std::abs(v);
    if (variant == SmoothL1Variant::kContinuous)
      v = a < margin ? v * v / (2.0 * margin) : a - margin / 2.0;
    else
      v = a < margin ? 0.5 * v * v : a - 0.5;
  }
  auto n = make_node(std::move(out), {x.node()}, "smooth_l1");
  if (n->requires_grad)
    n->backprop = [margin, variant](Node& self) {
      if (Tensor* g = grad_of(self.parents[0])) {
        const Tensor& xv = self.parents[0]->value;
        for (int64_t i = 0; i < g->numel(); ++i) {
          double v = xv[i];
          double d;
          if (std::abs(v) < margin)
            d = variant == SmoothL1Variant::kContinuous ? v / margin : v;
          else
            d = v > 0.0 ? 1.0 : -1.0;
          (*g)[i] += self.grad[i] * d;
        }
      }
    };
  return Value(n);
}

Value apply_elementwise(const Value& x, const std::function<double(double)>& f,
                        const std::function<double(double)>& dfdx) {
  Tensor out = x.tensor();
  for (auto& v : out.vec()) v = f(v);
  auto n = make_node(std::move(out), {x.node()}, "elementwise");
  if (n->requires_grad)
    n->backprop = [dfdx](Node& self) {
      if (Tensor* g = grad_of(self.parents[0])) {
        const Tensor& xv = self.parents[0]->value;
        for (int64_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i] * dfdx(xv[i]);
      }
    };
  return Value(n);
}

namespace {
// Reverse topological order of the grad-requiring subgraph under root.
std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS; parents first in `order`, root last.
  struct Frame {
    Node* n;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  if (root->requires_grad) {
    stack.push_back({root, 0});
    seen.insert(root);
  }
  while (!stack.empty()) {
    Frame& fr = stack.back();
    if (fr.next_parent < fr.n->parents.size()) {
      Node* p = fr.n->parents[fr.next_parent++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(fr.n);
      stack.pop_back();
    }
  }
  return order;  // reverse-iterate for backprop
}
}  // namespace

void backward(const Value& loss) {
  if (!loss) throw ContractError("backward on empty value");
  if (loss.tensor().numel() != 1)
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_str(loss.shape()));
  Node* root = loss.node().get();
  if (!root->requires_grad) return;  // nothing trainable below
  std::vector<Node*> order = topo_order(root);
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) n->backprop(*n);
    if (n->bound) n->bound->grad.add_inplace(n->grad);
  }
}

std::vector<Param*> collect_bound_params(const Value& v) {
  std::vector<Param*> out;
  std::unordered_set<Node*> seen;
  std::unordered_set<Param*> have;
  std::vector<Node*> stack{v.node().get()};
  seen.insert(v.node().get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (n->bound && !have.count(n->bound)) {
      have.insert(n->bound);
      out.push_back(n->bound);
    }
    for (const auto& p : n->parents)
      if (!seen.count(p.get())) {
        seen.insert(p.get());
        stack.push_back(p.get());
      }
  }
  return out;
}

}  // namespace persemon::ad
