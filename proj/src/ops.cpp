#include "higo/ops.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

namespace higo {

namespace {

void check_finite(const Array& a, const char* op) {
  if (!a.data.allFinite()) throw ValueError(std::string(op) + ": non-finite result");
}

Tape* common_tape(std::initializer_list<const Array*> args) {
  Tape* t = nullptr;
  for (const Array* a : args) {
    if (!a->on_tape()) continue;
    if (t && a->tape != t) throw ValueError("operands live on different tapes");
    t = a->tape;
  }
  return t;
}

// Registers `out` on the tape (if any input is attached) with the given
// backward closure. The closure receives the tape and the output node id.
template <class Fn>
void attach(Array& out, Tape* t, Fn&& backward) {
  if (!t) return;
  int on = static_cast<int>(t->num_nodes());
  out.tape = t;
  out.node = t->alloc(out.size(), [on, fn = std::forward<Fn>(backward)](Tape& tp) { fn(tp, on); });
}

enum class Bcast { Same, Row, Col, Scalar };

Bcast classify(const Array& a, const Array& b) {
  if (b.size() == a.size()) return Bcast::Same;
  if (b.size() == 1) return Bcast::Scalar;
  int n = a.rows2d(), d = a.cols2d();
  if ((b.rank() == 1 && b.dim(0) == d) || (b.rank() == 2 && b.dim(0) == 1 && b.dim(1) == d))
    return Bcast::Row;
  if (b.rank() == 2 && b.dim(0) == n && b.dim(1) == 1) return Bcast::Col;
  throw ShapeError("cannot broadcast " + shape_str(b.shape) + " against " + shape_str(a.shape));
}

Vec expand(const Vec& b, Bcast k, int n, int d) {
  switch (k) {
    case Bcast::Same:
      return b;
    case Bcast::Scalar:
      return Vec::Constant(static_cast<Eigen::Index>(n) * d, b[0]);
    case Bcast::Row: {
      Vec out(static_cast<Eigen::Index>(n) * d);
      Eigen::Map<MatRM>(out.data(), n, d).rowwise() = b.transpose();
      return out;
    }
    case Bcast::Col: {
      Vec out(static_cast<Eigen::Index>(n) * d);
      Eigen::Map<MatRM>(out.data(), n, d).colwise() = b;
      return out;
    }
  }
  return b;
}

Vec reduce(const Vec& g, Bcast k, int n, int d) {
  switch (k) {
    case Bcast::Same:
      return g;
    case Bcast::Scalar:
      return Vec::Constant(1, g.sum());
    case Bcast::Row:
      return Eigen::Map<const MatRM>(g.data(), n, d).colwise().sum().transpose();
    case Bcast::Col:
      return Eigen::Map<const MatRM>(g.data(), n, d).rowwise().sum();
  }
  return g;
}

template <class Fwd, class BwdA, class BwdB>
Array binary_op(const char* name, const Array& a, const Array& b, Fwd fwd, BwdA bwd_a, BwdB bwd_b) {
  Bcast k = classify(a, b);
  int n = a.rows2d(), d = a.cols2d();
  Vec bb = expand(b.data, k, n, d);
  Array out = from_vec(a.shape, fwd(a.data, bb));
  Tape* t = common_tape({&a, &b});
  attach(out, t, [an = a.node, bn = b.node, k, n, d, av = a.data, bb, bwd_a, bwd_b](Tape& tp,
                                                                                   int on) {
    const Vec& g = tp.grad(on);
    if (an >= 0) tp.grad(an) += bwd_a(g, av, bb);
    if (bn >= 0) tp.grad(bn) += reduce(bwd_b(g, av, bb), k, n, d);
  });
  check_finite(out, name);
  return out;
}

}  // namespace

// add and sub need no saved values for their backward pass, so they skip
// the generic capture of both operands.
Array add(const Array& a, const Array& b) {
  Bcast k = classify(a, b);
  int n = a.rows2d(), d = a.cols2d();
  Array out = from_vec(a.shape, k == Bcast::Same ? Vec(a.data + b.data)
                                                 : Vec(a.data + expand(b.data, k, n, d)));
  attach(out, common_tape({&a, &b}), [an = a.node, bn = b.node, k, n, d](Tape& tp, int on) {
    const Vec& g = tp.grad(on);
    if (an >= 0) tp.grad(an) += g;
    if (bn >= 0) tp.grad(bn) += reduce(g, k, n, d);
  });
  check_finite(out, "add");
  return out;
}

Array sub(const Array& a, const Array& b) {
  Bcast k = classify(a, b);
  int n = a.rows2d(), d = a.cols2d();
  Array out = from_vec(a.shape, k == Bcast::Same ? Vec(a.data - b.data)
                                                 : Vec(a.data - expand(b.data, k, n, d)));
  attach(out, common_tape({&a, &b}), [an = a.node, bn = b.node, k, n, d](Tape& tp, int on) {
    const Vec& g = tp.grad(on);
    if (an >= 0) tp.grad(an) += g;
    if (bn >= 0) tp.grad(bn) -= reduce(g, k, n, d);
  });
  check_finite(out, "sub");
  return out;
}

Array axpy(const Array& a, const Array& b, double c) {
  if (a.size() != b.size()) throw ShapeError("axpy: size mismatch");
  Array out = from_vec(a.shape, a.data + c * b.data);
  attach(out, common_tape({&a, &b}), [an = a.node, bn = b.node, c](Tape& tp, int on) {
    const Vec& g = tp.grad(on);
    if (an >= 0) tp.grad(an) += g;
    if (bn >= 0) tp.grad(bn) += c * g;
  });
  check_finite(out, "axpy");
  return out;
}

Array rk4_combine(const Array& x, const Array& k1, const Array& k2, const Array& k3,
                  const Array& k4, double h) {
  if (k1.size() != x.size() || k2.size() != x.size() || k3.size() != x.size() ||
      k4.size() != x.size())
    throw ShapeError("rk4_combine: size mismatch");
  Array out = from_vec(x.shape,
                       x.data + (h / 6) * (k1.data + 2.0 * k2.data + 2.0 * k3.data + k4.data));
  attach(out, common_tape({&x, &k1, &k2, &k3, &k4}),
         [xn = x.node, n1 = k1.node, n2 = k2.node, n3 = k3.node, n4 = k4.node, h](Tape& tp,
                                                                                 int on) {
           const Vec& g = tp.grad(on);
           if (xn >= 0) tp.grad(xn) += g;
           if (n1 >= 0) tp.grad(n1) += (h / 6) * g;
           if (n2 >= 0) tp.grad(n2) += (h / 3) * g;
           if (n3 >= 0) tp.grad(n3) += (h / 3) * g;
           if (n4 >= 0) tp.grad(n4) += (h / 6) * g;
         });
  check_finite(out, "rk4_combine");
  return out;
}

Array mul(const Array& a, const Array& b) {
  return binary_op(
      "mul", a, b, [](const Vec& x, const Vec& y) -> Vec { return x.cwiseProduct(y); },
      [](const Vec& g, const Vec&, const Vec& y) -> Vec { return g.cwiseProduct(y); },
      [](const Vec& g, const Vec& x, const Vec&) -> Vec { return g.cwiseProduct(x); });
}

Array div(const Array& a, const Array& b) {
  return binary_op(
      "div", a, b, [](const Vec& x, const Vec& y) -> Vec { return x.cwiseQuotient(y); },
      [](const Vec& g, const Vec&, const Vec& y) -> Vec { return g.cwiseQuotient(y); },
      [](const Vec& g, const Vec& x, const Vec& y) -> Vec {
        return -g.cwiseProduct(x).cwiseQuotient(y.cwiseProduct(y));
      });
}

Array scale(const Array& a, double c) {
  Array out = from_vec(a.shape, a.data * c);
  attach(out, a.tape, [an = a.node, c](Tape& tp, int on) {
    if (an >= 0) tp.grad(an) += c * tp.grad(on);
  });
  check_finite(out, "scale");
  return out;
}

Array add_scalar(const Array& a, double c) {
  Array out = from_vec(a.shape, a.data.array() + c);
  attach(out, a.tape, [an = a.node](Tape& tp, int on) {
    if (an >= 0) tp.grad(an) += tp.grad(on);
  });
  check_finite(out, "add_scalar");
  return out;
}

Array neg(const Array& a) { return scale(a, -1.0); }

Array matmul(const Array& a, const Array& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape) + " and " +
                     shape_str(b.shape));
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Vec out_v(static_cast<Eigen::Index>(m) * n);
  Eigen::Map<MatRM>(out_v.data(), m, n).noalias() = a.mat() * b.mat();
  Array out = from_vec({m, n}, std::move(out_v));
  Tape* t = common_tape({&a, &b});
  attach(out, t, [an = a.node, bn = b.node, av = a.data, bv = b.data, m, k, n](Tape& tp, int on) {
    Eigen::Map<const MatRM> g(tp.grad(on).data(), m, n);
    Eigen::Map<const MatRM> A(av.data(), m, k);
    Eigen::Map<const MatRM> B(bv.data(), k, n);
    if (an >= 0) Eigen::Map<MatRM>(tp.grad(an).data(), m, k) += g * B.transpose();
    if (bn >= 0) Eigen::Map<MatRM>(tp.grad(bn).data(), k, n) += A.transpose() * g;
  });
  check_finite(out, "matmul");
  return out;
}

Array transpose(const Array& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank-2 array");
  int m = a.dim(0), n = a.dim(1);
  Vec out_v(static_cast<Eigen::Index>(m) * n);
  Eigen::Map<MatRM>(out_v.data(), n, m) = a.mat().transpose();
  Array out = from_vec({n, m}, std::move(out_v));
  attach(out, a.tape, [an = a.node, m, n](Tape& tp, int on) {
    if (an >= 0)
      Eigen::Map<MatRM>(tp.grad(an).data(), m, n) +=
          Eigen::Map<const MatRM>(tp.grad(on).data(), n, m).transpose();
  });
  return out;
}

Array reshape(const Array& a, std::vector<int> shape) {
  if (shape_size(shape) != a.size())
    throw ShapeError("reshape: size mismatch " + shape_str(a.shape) + " -> " + shape_str(shape));
  Array out = from_vec(std::move(shape), a.data);
  attach(out, a.tape, [an = a.node](Tape& tp, int on) {
    if (an >= 0) tp.grad(an) += tp.grad(on);
  });
  return out;
}

Array concat_cols(const std::vector<Array>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  int n = parts[0].rows2d();
  int total = 0;
  for (const Array& p : parts) {
    if (p.rows2d() != n) throw ShapeError("concat_cols: row count mismatch");
    total += p.cols2d();
  }
  Vec out_v(static_cast<Eigen::Index>(n) * total);
  Eigen::Map<MatRM> out_m(out_v.data(), n, total);
  std::vector<int> nodes, widths;
  Tape* t = nullptr;
  int c = 0;
  for (const Array& p : parts) {
    out_m.middleCols(c, p.cols2d()) = p.mat();
    nodes.push_back(p.node);
    widths.push_back(p.cols2d());
    c += p.cols2d();
    if (p.on_tape()) {
      if (t && t != p.tape) throw ValueError("concat_cols: mixed tapes");
      t = p.tape;
    }
  }
  Array out = from_vec({n, total}, std::move(out_v));
  attach(out, t, [nodes, widths, n, total](Tape& tp, int on) {
    Eigen::Map<const MatRM> g(tp.grad(on).data(), n, total);
    int c0 = 0;
    for (size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i] >= 0)
        Eigen::Map<MatRM>(tp.grad(nodes[i]).data(), n, widths[i]) += g.middleCols(c0, widths[i]);
      c0 += widths[i];
    }
  });
  return out;
}

Array slice_cols(const Array& a, int start, int len) {
  int n = a.rows2d(), d = a.cols2d();
  if (start < 0 || len <= 0 || start + len > d) throw ShapeError("slice_cols: range out of bounds");
  Vec out_v(static_cast<Eigen::Index>(n) * len);
  Eigen::Map<MatRM>(out_v.data(), n, len) = a.mat().middleCols(start, len);
  Array out = from_vec({n, len}, std::move(out_v));
  attach(out, a.tape, [an = a.node, n, d, start, len](Tape& tp, int on) {
    if (an >= 0)
      Eigen::Map<MatRM>(tp.grad(an).data(), n, d).middleCols(start, len) +=
          Eigen::Map<const MatRM>(tp.grad(on).data(), n, len);
  });
  return out;
}

Array gather_rows(const Array& a, const std::vector<int>& idx) {
  int n = a.rows2d(), d = a.cols2d();
  int m = static_cast<int>(idx.size());
  Vec out_v(static_cast<Eigen::Index>(m) * d);
  Eigen::Map<MatRM> out_m(out_v.data(), m, d);
  for (int i = 0; i < m; ++i) {
    if (idx[static_cast<size_t>(i)] < 0 || idx[static_cast<size_t>(i)] >= n)
      throw ShapeError("gather_rows: index out of range");
    out_m.row(i) = a.mat().row(idx[static_cast<size_t>(i)]);
  }
  Array out = from_vec({m, d}, std::move(out_v));
  attach(out, a.tape, [an = a.node, idx, n, d, m](Tape& tp, int on) {
    if (an < 0) return;
    Eigen::Map<const MatRM> g(tp.grad(on).data(), m, d);
    Eigen::Map<MatRM> ga(tp.grad(an).data(), n, d);
    for (int i = 0; i < m; ++i) ga.row(idx[static_cast<size_t>(i)]) += g.row(i);
  });
  return out;
}

Array pick_cols(const Array& a, const std::vector<int>& cols) {
  int n = a.rows2d(), d = a.cols2d();
  if (static_cast<int>(cols.size()) != n) throw ShapeError("pick_cols: one index per row required");
  Vec out_v(n);
  for (int i = 0; i < n; ++i) {
    int c = cols[static_cast<size_t>(i)];
    if (c < 0 || c >= d) throw ShapeError("pick_cols: column out of range");
    out_v[i] = a.mat()(i, c);
  }
  Array out = from_vec({n, 1}, std::move(out_v));
  attach(out, a.tape, [an = a.node, cols, n, d](Tape& tp, int on) {
    if (an < 0) return;
    const Vec& g = tp.grad(on);
    Eigen::Map<MatRM> ga(tp.grad(an).data(), n, d);
    for (int i = 0; i < n; ++i) ga(i, cols[static_cast<size_t>(i)]) += g[i];
  });
  return out;
}

Array sum(const Array& a) {
  Array out = from_vec({1}, Vec::Constant(1, a.data.sum()));
  attach(out, a.tape, [an = a.node, sz = a.size()](Tape& tp, int on) {
    if (an >= 0) tp.grad(an).array() += tp.grad(on)[0];
  });
  check_finite(out, "sum");
  return out;
}

Array row_sum(const Array& a) {
  int n = a.rows2d(), d = a.cols2d();
  Vec out_v = a.mat().rowwise().sum();
  Array out = from_vec({n, 1}, std::move(out_v));
  attach(out, a.tape, [an = a.node, n, d](Tape& tp, int on) {
    if (an >= 0)
      Eigen::Map<MatRM>(tp.grad(an).data(), n, d).colwise() += tp.grad(on);
  });
  return out;
}

Array col_sum(const Array& a) {
  int n = a.rows2d(), d = a.cols2d();
  Vec out_v = a.mat().colwise().sum().transpose();
  Array out = from_vec({1, d}, std::move(out_v));
  attach(out, a.tape, [an = a.node, n, d](Tape& tp, int on) {
    if (an >= 0)
      Eigen::Map<MatRM>(tp.grad(an).data(), n, d).rowwise() += tp.grad(on).transpose();
  });
  return out;
}

namespace {
constexpr double kGeluC = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);
}  // namespace

Array gelu(const Array& a) {
  Vec out_v(a.size());
  Vec th_v(a.size());  // saved for the backward pass; tanh dominates its cost
  for (int i = 0; i < a.size(); ++i) {
    double x = a.data[i];
    double u = kSqrt2OverPi * (x + kGeluC * x * x * x);
    th_v[i] = std::tanh(u);
    out_v[i] = 0.5 * x * (1.0 + th_v[i]);
  }
  Array out = from_vec(a.shape, std::move(out_v));
  attach(out, a.tape, [an = a.node, av = a.data, th_v = std::move(th_v)](Tape& tp, int on) {
    if (an < 0) return;
    const Vec& g = tp.grad(on);
    Vec& ga = tp.grad(an);
    for (int i = 0; i < av.size(); ++i) {
      double x = av[i];
      double th = th_v[i];
      double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluC * x * x);
      ga[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du);
    }
  });
  check_finite(out, "gelu");
  return out;
}

Array sigmoid(const Array& a) {
  Vec out_v = (1.0 / (1.0 + (-a.data.array()).exp())).matrix();
  Array out = from_vec(a.shape, out_v);
  attach(out, a.tape, [an = a.node, y = out_v](Tape& tp, int on) {
    if (an >= 0)
      tp.grad(an).array() += tp.grad(on).array() * y.array() * (1.0 - y.array());
  });
  check_finite(out, "sigmoid");
  return out;
}

Array log_clamped(const Array& a, double floor) {
  Vec out_v = a.data.array().max(floor).log().matrix();
  Array out = from_vec(a.shape, std::move(out_v));
  attach(out, a.tape, [an = a.node, av = a.data, floor](Tape& tp, int on) {
    if (an < 0) return;
    const Vec& g = tp.grad(on);
    Vec& ga = tp.grad(an);
    for (int i = 0; i < av.size(); ++i)
      if (av[i] >= floor) ga[i] += g[i] / av[i];
  });
  check_finite(out, "log_clamped");
  return out;
}

Array softmax(const Array& a, int axis) {
  if (axis < 0 || axis >= a.rank()) throw ShapeError("softmax: axis out of range");
  int n_ax = a.dim(axis);
  int outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  Vec out_v(a.size());
  for (int o = 0; o < outer; ++o) {
    for (int in = 0; in < inner; ++in) {
      Eigen::Index base = static_cast<Eigen::Index>(o) * n_ax * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < n_ax; ++k) mx = std::max(mx, a.data[base + static_cast<Eigen::Index>(k) * inner]);
      double s = 0;
      for (int k = 0; k < n_ax; ++k) {
        double e = std::exp(a.data[base + static_cast<Eigen::Index>(k) * inner] - mx);
        out_v[base + static_cast<Eigen::Index>(k) * inner] = e;
        s += e;
      }
      for (int k = 0; k < n_ax; ++k) out_v[base + static_cast<Eigen::Index>(k) * inner] /= s;
    }
  }
  Array out = from_vec(a.shape, out_v);
  attach(out, a.tape, [an = a.node, y = out_v, outer, inner, n_ax](Tape& tp, int on) {
    if (an < 0) return;
    const Vec& g = tp.grad(on);
    Vec& ga = tp.grad(an);
    for (int o = 0; o < outer; ++o) {
      for (int in = 0; in < inner; ++in) {
        Eigen::Index base = static_cast<Eigen::Index>(o) * n_ax * inner + in;
        double dot = 0;
        for (int k = 0; k < n_ax; ++k) {
          Eigen::Index ix = base + static_cast<Eigen::Index>(k) * inner;
          dot += g[ix] * y[ix];
        }
        for (int k = 0; k < n_ax; ++k) {
          Eigen::Index ix = base + static_cast<Eigen::Index>(k) * inner;
          ga[ix] += y[ix] * (g[ix] - dot);
        }
      }
    }
  });
  check_finite(out, "softmax");
  return out;
}

Array segment_softmax(const Array& scores, const std::vector<int>& seg, int n_seg) {
  int e = scores.size();
  if (static_cast<int>(seg.size()) != e) throw ShapeError("segment_softmax: id count mismatch");
  std::vector<double> mx(static_cast<size_t>(n_seg), -std::numeric_limits<double>::infinity());
  for (int i = 0; i < e; ++i) mx[static_cast<size_t>(seg[static_cast<size_t>(i)])] =
      std::max(mx[static_cast<size_t>(seg[static_cast<size_t>(i)])], scores.data[i]);
  Vec out_v(e);
  std::vector<double> denom(static_cast<size_t>(n_seg), 0.0);
  for (int i = 0; i < e; ++i) {
    double ev = std::exp(scores.data[i] - mx[static_cast<size_t>(seg[static_cast<size_t>(i)])]);
    out_v[i] = ev;
    denom[static_cast<size_t>(seg[static_cast<size_t>(i)])] += ev;
  }
  for (int i = 0; i < e; ++i) out_v[i] /= denom[static_cast<size_t>(seg[static_cast<size_t>(i)])];
  Array out = from_vec(scores.shape, out_v);
  attach(out, scores.tape, [an = scores.node, y = out_v, seg, n_seg, e](Tape& tp, int on) {
    if (an < 0) return;
    const Vec& g = tp.grad(on);
    Vec& ga = tp.grad(an);
    std::vector<double> dot(static_cast<size_t>(n_seg), 0.0);
    for (int i = 0; i < e; ++i) dot[static_cast<size_t>(seg[static_cast<size_t>(i)])] += g[i] * y[i];
    for (int i = 0; i < e; ++i)
      ga[i] += y[i] * (g[i] - dot[static_cast<size_t>(seg[static_cast<size_t>(i)])]);
  });
  check_finite(out, "segment_softmax");
  return out;
}

Array segment_sum(const Array& a, const std::vector<int>& seg, int n_seg) {
  int e = a.rows2d(), d = a.cols2d();
  if (static_cast<int>(seg.size()) != e) throw ShapeError("segment_sum: id count mismatch");
  Vec out_v = Vec::Zero(static_cast<Eigen::Index>(n_seg) * d);
  Eigen::Map<MatRM> out_m(out_v.data(), n_seg, d);
  for (int i = 0; i < e; ++i) out_m.row(seg[static_cast<size_t>(i)]) += a.mat().row(i);
  Array out = from_vec({n_seg, d}, std::move(out_v));
  attach(out, a.tape, [an = a.node, seg, n_seg, e, d](Tape& tp, int on) {
    if (an < 0) return;
    Eigen::Map<const MatRM> g(tp.grad(on).data(), n_seg, d);
    Eigen::Map<MatRM> ga(tp.grad(an).data(), e, d);
    for (int i = 0; i < e; ++i) ga.row(i) += g.row(seg[static_cast<size_t>(i)]);
  });
  return out;
}

Array layer_norm(const Array& a, const Array& gain, const Array& bias, double eps) {
  int n = a.rows2d(), d = a.cols2d();
  if (gain.size() != d || bias.size() != d)
    throw ShapeError("layer_norm: gain/bias must have channel length");
  Vec xhat(static_cast<Eigen::Index>(n) * d);
  Vec inv_std(n);
  Eigen::Map<MatRM> xh(xhat.data(), n, d);
  for (int i = 0; i < n; ++i) {
    auto row = a.mat().row(i);
    double mu = row.mean();
    double var = (row.array() - mu).square().mean();
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    xh.row(i) = (row.array() - mu) * inv_std[i];
  }
  Vec out_v(static_cast<Eigen::Index>(n) * d);
  Eigen::Map<MatRM> out_m(out_v.data(), n, d);
  out_m = (xh.array().rowwise() * gain.data.transpose().array()).rowwise() +
          bias.data.transpose().array();
  Array out = from_vec(a.shape, std::move(out_v));
  Tape* t = common_tape({&a, &gain, &bias});
  attach(out, t,
         [an = a.node, gn = gain.node, bn = bias.node, xhat, inv_std, gv = gain.data, n,
          d](Tape& tp, int on) {
           Eigen::Map<const MatRM> g(tp.grad(on).data(), n, d);
           Eigen::Map<const MatRM> xh(xhat.data(), n, d);
           if (bn >= 0) tp.grad(bn) += g.colwise().sum().transpose();
           if (gn >= 0) tp.grad(gn) += g.cwiseProduct(xh).colwise().sum().transpose();
           if (an >= 0) {
             Eigen::Map<MatRM> ga(tp.grad(an).data(), n, d);
             for (int i = 0; i < n; ++i) {
               Eigen::RowVectorXd gh = g.row(i).cwiseProduct(gv.transpose());
               double m1 = gh.mean();
               double m2 = gh.cwiseProduct(xh.row(i)).mean();
               ga.row(i) += (gh.array() - m1 - xh.row(i).array() * m2).matrix() * inv_std[i];
             }
           }
         });
  check_finite(out, "layer_norm");
  return out;
}

Array conv_1x1(const Array& a, const Array& w, const Array& b) {
  if (a.rank() != 3) throw ShapeError("conv_1x1: expected H x W x D input");
  int h = a.dim(0), wdt = a.dim(1), d = a.dim(2);
  if (w.rank() != 2 || w.dim(0) != d || w.dim(1) != d || b.size() != d)
    throw ShapeError("conv_1x1: channel mismatch");
  Array flat = reshape(a, {h * wdt, d});
  Array y = add(matmul(flat, w), b);
  return reshape(y, {h, wdt, d});
}

Array depthwise_conv3x3(const Array& a, const Array& w) {
  if (a.rank() != 3) throw ShapeError("depthwise_conv3x3: expected H x W x D input");
  int h = a.dim(0), wd = a.dim(1), d = a.dim(2);
  if (w.rank() != 3 || w.dim(0) != 3 || w.dim(1) != 3 || w.dim(2) != d)
    throw ShapeError("depthwise_conv3x3: kernel must be 3 x 3 x D");
  auto at = [&](const Vec& v, int i, int j, int c) -> double {
    return v[(static_cast<Eigen::Index>(i) * wd + j) * d + c];
  };
  Vec out_v = Vec::Zero(a.size());
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < wd; ++j)
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          int ii = i + di, jj = j + dj;
          if (ii < 0 || ii >= h || jj < 0 || jj >= wd) continue;
          for (int c = 0; c < d; ++c)
            out_v[(static_cast<Eigen::Index>(i) * wd + j) * d + c] +=
                w.data[(static_cast<Eigen::Index>(di + 1) * 3 + dj + 1) * d + c] *
                at(a.data, ii, jj, c);
        }
  Array out = from_vec(a.shape, std::move(out_v));
  Tape* t = common_tape({&a, &w});
  attach(out, t, [an = a.node, wn = w.node, av = a.data, wv = w.data, h, wd, d](Tape& tp, int on) {
    const Vec& g = tp.grad(on);
    auto ix = [&](int i, int j, int c) { return (static_cast<Eigen::Index>(i) * wd + j) * d + c; };
    if (an >= 0) {
      Vec& ga = tp.grad(an);
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < wd; ++j)
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj) {
              int ii = i + di, jj = j + dj;
              if (ii < 0 || ii >= h || jj < 0 || jj >= wd) continue;
              for (int c = 0; c < d; ++c)
                ga[ix(ii, jj, c)] += wv[(static_cast<Eigen::Index>(di + 1) * 3 + dj + 1) * d + c] *
                                     g[ix(i, j, c)];
            }
    }
    if (wn >= 0) {
      Vec& gw = tp.grad(wn);
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < wd; ++j)
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj) {
              int ii = i + di, jj = j + dj;
              if (ii < 0 || ii >= h || jj < 0 || jj >= wd) continue;
              for (int c = 0; c < d; ++c)
                gw[(static_cast<Eigen::Index>(di + 1) * 3 + dj + 1) * d + c] +=
                    av[ix(ii, jj, c)] * g[ix(i, j, c)];
            }
    }
  });
  check_finite(out, "depthwise_conv3x3");
  return out;
}

namespace {

using CMat = Eigen::MatrixXcd;

// DFT matrix cache keyed by size; F is symmetric, G = conj(F)/n.
const CMat& dft_matrix(int n) {
  static std::map<int, CMat> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  CMat f(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      double ang = -2.0 * std::numbers::pi * a * b / n;
      f(a, b) = std::complex<double>(std::cos(ang), std::sin(ang));
    }
  return cache.emplace(n, std::move(f)).first->second;
}

}  // namespace

Array spectral_conv2d(const Array& a, const Array& w) {
  if (a.rank() != 3) throw ShapeError("spectral_conv2d: expected H x W x D input");
  int h = a.dim(0), wd = a.dim(1), d = a.dim(2);
  if (w.rank() != 4 || w.dim(2) != d || w.dim(3) != 2 || w.dim(0) != w.dim(1))
    throw ShapeError("spectral_conv2d: weights must be M x M x D x 2");
  int m = w.dim(0);
  if (m > h || m > wd) throw ShapeError("spectral_conv2d: mode count exceeds grid dims");

  const CMat& fh = dft_matrix(h);
  const CMat& fw = dft_matrix(wd);
  const CMat gh = fh.conjugate() / h;
  const CMat gw = fw.conjugate() / wd;

  auto mult = [&](const Vec& wv, int p, int q, int c) {
    Eigen::Index base = ((static_cast<Eigen::Index>(p) * m + q) * d + c) * 2;
    return std::complex<double>(wv[base], wv[base + 1]);
  };

  Vec out_v(a.size());
  std::vector<CMat> xhat(static_cast<size_t>(d));
  for (int c = 0; c < d; ++c) {
    CMat x(h, wd);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < wd; ++j)
        x(i, j) = a.data[(static_cast<Eigen::Index>(i) * wd + j) * d + c];
    CMat xf = fh * x * fw;
    xhat[static_cast<size_t>(c)] = xf;
    CMat yf = CMat::Zero(h, wd);
    for (int p = 0; p < m; ++p)
      for (int q = 0; q < m; ++q) yf(p, q) = xf(p, q) * mult(w.data, p, q, c);
    CMat y = gh * yf * gw;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < wd; ++j)
        out_v[(static_cast<Eigen::Index>(i) * wd + j) * d + c] = y(i, j).real();
  }
  Array out = from_vec(a.shape, std::move(out_v));
  Tape* t = common_tape({&a, &w});
  attach(out, t,
         [an = a.node, wn = w.node, wv = w.data, xhat, h, wd, d, m](Tape& tp, int on) {
           const CMat& fh = dft_matrix(h);
           const CMat& fw = dft_matrix(wd);
           CMat gh = fh.conjugate() / h;
           CMat gw = fw.conjugate() / wd;
           const Vec& g = tp.grad(on);
           auto mult = [&](int p, int q, int c) {
             Eigen::Index base = ((static_cast<Eigen::Index>(p) * m + q) * d + c) * 2;
             return std::complex<double>(wv[base], wv[base + 1]);
           };
           for (int c = 0; c < d; ++c) {
             CMat gm(h, wd);
             for (int i = 0; i < h; ++i)
               for (int j = 0; j < wd; ++j)
                 gm(i, j) = g[(static_cast<Eigen::Index>(i) * wd + j) * d + c];
             CMat ghat = gh * gm * gw;  // adjoint through the inverse transform
             if (wn >= 0) {
               Vec& gww = tp.grad(wn);
               for (int p = 0; p < m; ++p)
                 for (int q = 0; q < m; ++q) {
                   std::complex<double> s =
                       xhat[static_cast<size_t>(c)](p, q) * ghat(p, q);
                   Eigen::Index base = ((static_cast<Eigen::Index>(p) * m + q) * d + c) * 2;
                   gww[base] += s.real();
                   gww[base + 1] -= s.imag();
                 }
             }
             if (an >= 0) {
               CMat masked = CMat::Zero(h, wd);
               for (int p = 0; p < m; ++p)
                 for (int q = 0; q < m; ++q) masked(p, q) = mult(p, q, c) * ghat(p, q);
               CMat gx = fh * masked * fw;
               Vec& ga = tp.grad(an);
               for (int i = 0; i < h; ++i)
                 for (int j = 0; j < wd; ++j)
                   ga[(static_cast<Eigen::Index>(i) * wd + j) * d + c] += gx(i, j).real();
             }
           }
         });
  check_finite(out, "spectral_conv2d");
  return out;
}

}  // namespace higo
