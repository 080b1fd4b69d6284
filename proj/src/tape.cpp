#include "csdp/tape.hpp"

#include <algorithm>
#include <cmath>

namespace csdp {

namespace {

void same_tape(Var a, Var b) {
  require(a.valid() && b.valid() && a.tape == b.tape,
          "operands must live on the same tape");
}

// Cardinal cubic B-spline and its derivative, support (-2, 2).
double bsp3(double u) {
  double a = std::abs(u);
  if (a < 1.0) return (3.0 * a * a * a - 6.0 * a * a + 4.0) / 6.0;
  if (a < 2.0) {
    double b = 2.0 - a;
    return b * b * b / 6.0;
  }
  return 0.0;
}

double bsp3_deriv(double u) {
  double a = std::abs(u);
  double s = u < 0.0 ? -1.0 : 1.0;
  if (a < 1.0) return s * (3.0 * a * a - 4.0 * a) / 2.0;
  if (a < 2.0) {
    double b = 2.0 - a;
    return -s * b * b / 2.0;
  }
  return 0.0;
}

}  // namespace

Var Tape::leaf(Tensor value, bool /*requires_grad*/) {
  Node n;
  n.grad = Tensor::zeros(value.shape());
  n.value = std::move(value);
  n.op = "leaf";
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::emplace(Tensor value, std::string op_name,
                  std::function<void(Tape&, int)> backprop) {
  if (finite_checks_ && !value.all_finite())
    fail("non-finite value produced by op '", op_name, "'");
  Node n;
  if (grad_enabled_) {
    n.grad = Tensor::zeros(value.shape());
    n.backprop = std::move(backprop);
  }
  n.value = std::move(value);
  n.op = std::move(op_name);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

const Tape::Node& Tape::node(Var v) const {
  require(v.tape == this, "var belongs to a different tape");
  require(v.id >= 0 && static_cast<size_t>(v.id) < nodes_.size(), "var id ", v.id,
          " out of range");
  return nodes_[static_cast<size_t>(v.id)];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

const Tensor& Tape::grad(Var v) const {
  const Node& n = node(v);
  require(n.grad.shape() == n.value.shape(),
          "gradient unavailable for node recorded with grad disabled");
  return n.grad;
}

Tensor& Tape::grad_mut(Var v) {
  return const_cast<Tensor&>(grad(v));
}

void Tape::backward(Var loss) {
  require(grad_enabled_, "backward() on a tape with gradients disabled");
  require(!consumed_, "backward() called twice on the same tape");
  const Node& ln = node(loss);
  require(ln.value.numel() == 1, "backward() needs a scalar loss, got shape ",
          shape_str(ln.value.shape()));
  consumed_ = true;
  nodes_[static_cast<size_t>(loss.id)].grad.array().setConstant(1.0);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.backprop) continue;
    if (finite_checks_ && !n.grad.all_finite())
      fail("non-finite gradient reaching op '", n.op, "'");
    n.backprop(*this, i);
    ++backprop_calls_;
  }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
  same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.same_shape(bv), "add: shape mismatch ", shape_str(av.shape()), " vs ",
          shape_str(bv.shape()));
  Tensor out(av.array() + bv.array(), av.shape());
  return t.emplace(std::move(out), "add", [a, b](Tape& t, int self) {
    const Array& g = t.grad(Var{&t, self}).array();
    t.grad_mut(a).array() += g;
    t.grad_mut(b).array() += g;
  });
}

Var sub(Var a, Var b) {
  same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.same_shape(bv), "sub: shape mismatch ", shape_str(av.shape()), " vs ",
          shape_str(bv.shape()));
  Tensor out(av.array() - bv.array(), av.shape());
  return t.emplace(std::move(out), "sub", [a, b](Tape& t, int self) {
    const Array& g = t.grad(Var{&t, self}).array();
    t.grad_mut(a).array() += g;
    t.grad_mut(b).array() -= g;
  });
}

Var mul(Var a, Var b) {
  same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.same_shape(bv), "mul: shape mismatch ", shape_str(av.shape()), " vs ",
          shape_str(bv.shape()));
  Tensor out(av.array() * bv.array(), av.shape());
  return t.emplace(std::move(out), "mul", [a, b](Tape& t, int self) {
    const Array& g = t.grad(Var{&t, self}).array();
    t.grad_mut(a).array() += g * t.value(b).array();
    t.grad_mut(b).array() += g * t.value(a).array();
  });
}

Var add_scalar(Var a, double s) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  Tensor out(av.array() + s, av.shape());
  return t.emplace(std::move(out), "add_scalar", [a](Tape& t, int self) {
    t.grad_mut(a).array() += t.grad(Var{&t, self}).array();
  });
}

Var mul_scalar(Var a, double s) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  Tensor out(av.array() * s, av.shape());
  return t.emplace(std::move(out), "mul_scalar", [a, s](Tape& t, int self) {
    t.grad_mut(a).array() += s * t.grad(Var{&t, self}).array();
  });
}

Var scale_by(Var s, Var x) {
  same_tape(s, x);
  Tape& t = *s.tape;
  const Tensor& sv = t.value(s);
  require(sv.numel() == 1, "scale_by: scale must be a scalar var");
  const Tensor& xv = t.value(x);
  Tensor out(xv.array() * sv[0], xv.shape());
  return t.emplace(std::move(out), "scale_by", [s, x](Tape& t, int self) {
    const Array& g = t.grad(Var{&t, self}).array();
    t.grad_mut(s).array()(0) += (g * t.value(x).array()).sum();
    t.grad_mut(x).array() += t.value(s)[0] * g;
  });
}

Var relu(Var x) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  Tensor out(xv.array().max(0.0), xv.shape());
  return t.emplace(std::move(out), "relu", [x](Tape& t, int self) {
    const Array& g = t.grad(Var{&t, self}).array();
    const Array& xa = t.value(x).array();
    t.grad_mut(x).array() += g * (xa > 0.0).cast<double>();
  });
}

Var silu(Var x) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  Array sig = 1.0 / (1.0 + (-xv.array()).exp());
  Tensor out(xv.array() * sig, xv.shape());
  return t.emplace(std::move(out), "silu", [x](Tape& t, int self) {
    const Array& g = t.grad(Var{&t, self}).array();
    const Array& xa = t.value(x).array();
    Array sig = 1.0 / (1.0 + (-xa).exp());
    t.grad_mut(x).array() += g * sig * (1.0 + xa * (1.0 - sig));
  });
}

Var tanh_op(Var x) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  Tensor out(xv.array().tanh(), xv.shape());
  return t.emplace(std::move(out), "tanh", [x](Tape& t, int self) {
    Var sv{&t, self};
    const Array& g = t.grad(sv).array();
    const Array& y = t.value(sv).array();
    t.grad_mut(x).array() += g * (1.0 - y * y);
  });
}

Var logistic(Var x) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  Tensor out(1.0 / (1.0 + (-xv.array()).exp()), xv.shape());
  return t.emplace(std::move(out), "logistic", [x](Tape& t, int self) {
    Var sv{&t, self};
    const Array& g = t.grad(sv).array();
    const Array& y = t.value(sv).array();
    t.grad_mut(x).array() += g * y * (1.0 - y);
  });
}

Var sqrt_op(Var x) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  Tensor out(xv.array().sqrt(), xv.shape());
  return t.emplace(std::move(out), "sqrt", [x](Tape& t, int self) {
    Var sv{&t, self};
    const Array& g = t.grad(sv).array();
    const Array& y = t.value(sv).array();
    t.grad_mut(x).array() += g * 0.5 / y.max(1e-12);
  });
}

Var square(Var x) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  Tensor out(xv.array().square(), xv.shape());
  return t.emplace(std::move(out), "square", [x](Tape& t, int self) {
    const Array& g = t.grad(Var{&t, self}).array();
    t.grad_mut(x).array() += 2.0 * g * t.value(x).array();
  });
}

// ---------------------------------------------------------------------------
// linear algebra / shape
// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
          "matmul: incompatible shapes ", shape_str(av.shape()), " x ",
          shape_str(bv.shape()));
  Tensor out = Tensor::zeros({av.dim(0), bv.dim(1)});
  out.mat() = av.mat() * bv.mat();
  return t.emplace(std::move(out), "matmul", [a, b](Tape& t, int self) {
    auto g = t.grad(Var{&t, self}).mat();
    t.grad_mut(a).mat() += g * t.value(b).mat().transpose();
    t.grad_mut(b).mat() += t.value(a).mat().transpose() * g;
  });
}

Var transpose_op(Var x) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  require(xv.rank() == 2, "transpose: expected rank-2, got ", shape_str(xv.shape()));
  Tensor out = Tensor::zeros({xv.dim(1), xv.dim(0)});
  out.mat() = xv.mat().transpose();
  return t.emplace(std::move(out), "transpose", [x](Tape& t, int self) {
    t.grad_mut(x).mat() += t.grad(Var{&t, self}).mat().transpose();
  });
}

Var reshape_op(Var x, Shape shape) {
  Tape& t = *x.tape;
  Tensor out = t.value(x).reshaped(std::move(shape));
  return t.emplace(std::move(out), "reshape", [x](Tape& t, int self) {
    t.grad_mut(x).array() += t.grad(Var{&t, self}).array();
  });
}

Var concat_rows(const std::vector<Var>& xs) {
  require(!xs.empty(), "concat_rows: empty input");
  Tape& t = *xs[0].tape;
  Index cols = t.value(xs[0]).dim(1);
  Index rows = 0;
  for (Var x : xs) {
    same_tape(xs[0], x);
    const Tensor& v = t.value(x);
    require(v.rank() == 2 && v.dim(1) == cols, "concat_rows: column mismatch");
    rows += v.dim(0);
  }
  Tensor out = Tensor::zeros({rows, cols});
  Index r = 0;
  for (Var x : xs) {
    const Tensor& v = t.value(x);
    out.mat().middleRows(r, v.dim(0)) = v.mat();
    r += v.dim(0);
  }
  auto parts = xs;
  return t.emplace(std::move(out), "concat_rows", [parts](Tape& t, int self) {
    auto g = t.grad(Var{&t, self}).mat();
    Index r = 0;
    for (Var x : parts) {
      Index nr = t.value(x).dim(0);
      t.grad_mut(x).mat() += g.middleRows(r, nr);
      r += nr;
    }
  });
}

Var concat_cols(const std::vector<Var>& xs) {
  require(!xs.empty(), "concat_cols: empty input");
  Tape& t = *xs[0].tape;
  Index rows = t.value(xs[0]).dim(0);
  Index cols = 0;
  for (Var x : xs) {
    same_tape(xs[0], x);
    const Tensor& v = t.value(x);
    require(v.rank() == 2 && v.dim(0) == rows, "concat_cols: row mismatch");
    cols += v.dim(1);
  }
  Tensor out = Tensor::zeros({rows, cols});
  Index c = 0;
  for (Var x : xs) {
    const Tensor& v = t.value(x);
    out.mat().middleCols(c, v.dim(1)) = v.mat();
    c += v.dim(1);
  }
  auto parts = xs;
  return t.emplace(std::move(out), "concat_cols", [parts](Tape& t, int self) {
    auto g = t.grad(Var{&t, self}).mat();
    Index c = 0;
    for (Var x : parts) {
      Index nc = t.value(x).dim(1);
      t.grad_mut(x).mat() += g.middleCols(c, nc);
      c += nc;
    }
  });
}

Var stack_rows(const std::vector<Var>& rows) {
  require(!rows.empty(), "stack_rows: empty input");
  Tape& t = *rows[0].tape;
  Index d = t.value(rows[0]).numel();
  for (Var x : rows) {
    same_tape(rows[0], x);
    require(t.value(x).rank() <= 1 && t.value(x).numel() == d,
            "stack_rows: inputs must be same-length vectors");
  }
  Tensor out = Tensor::zeros({static_cast<Index>(rows.size()), d});
  for (size_t i = 0; i < rows.size(); ++i)
    out.mat().row(static_cast<Index>(i)) = t.value(rows[i]).vec().transpose();
  auto parts = rows;
  return t.emplace(std::move(out), "stack_rows", [parts](Tape& t, int self) {
    auto g = t.grad(Var{&t, self}).mat();
    for (size_t i = 0; i < parts.size(); ++i)
      t.grad_mut(parts[i]).array() +=
          g.row(static_cast<Index>(i)).transpose().array();
  });
}

Var reverse_rows(Var x) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  require(xv.rank() == 2, "reverse_rows: expected rank-2");
  Tensor out = Tensor::zeros(xv.shape());
  out.mat() = xv.mat().colwise().reverse();
  return t.emplace(std::move(out), "reverse_rows", [x](Tape& t, int self) {
    t.grad_mut(x).mat() += t.grad(Var{&t, self}).mat().colwise().reverse();
  });
}

Var slice_rows(Var x, Index begin, Index count) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  require(xv.rank() == 2 && begin >= 0 && count >= 0 && begin + count <= xv.dim(0),
          "slice_rows: range [", begin, ",", begin + count, ") out of ", xv.dim(0));
  Tensor out = Tensor::zeros({count, xv.dim(1)});
  out.mat() = xv.mat().middleRows(begin, count);
  return t.emplace(std::move(out), "slice_rows", [x, begin, count](Tape& t, int self) {
    t.grad_mut(x).mat().middleRows(begin, count) += t.grad(Var{&t, self}).mat();
  });
}

Var add_rowvec(Var x, Var b) {
  same_tape(x, b);
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  const Tensor& bv = t.value(b);
  require(xv.rank() == 2 && bv.rank() == 1 && bv.dim(0) == xv.dim(1),
          "add_rowvec: shapes ", shape_str(xv.shape()), " + ", shape_str(bv.shape()));
  Tensor out = Tensor::zeros(xv.shape());
  out.mat() = xv.mat();
  out.mat().rowwise() += bv.vec().transpose();
  return t.emplace(std::move(out), "add_rowvec", [x, b](Tape& t, int self) {
    auto g = t.grad(Var{&t, self}).mat();
    t.grad_mut(x).array() += t.grad(Var{&t, self}).array();
    t.grad_mut(b).array() += g.colwise().sum().transpose().array();
  });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Var sum_all(Var x) {
  Tape& t = *x.tape;
  Tensor out = Tensor::scalar(t.value(x).array().sum());
  return t.emplace(std::move(out), "sum_all", [x](Tape& t, int self) {
    t.grad_mut(x).array() += t.grad(Var{&t, self})[0];
  });
}

Var mean_all(Var x) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  double n = static_cast<double>(xv.numel());
  Tensor out = Tensor::scalar(xv.array().sum() / n);
  return t.emplace(std::move(out), "mean_all", [x, n](Tape& t, int self) {
    t.grad_mut(x).array() += t.grad(Var{&t, self})[0] / n;
  });
}

Var mean_rows(Var x) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  require(xv.rank() == 2, "mean_rows: expected rank-2");
  double n = static_cast<double>(xv.dim(0));
  Tensor out = Tensor::zeros({xv.dim(1)});
  Eigen::Map<Vector>(out.array().data(), xv.dim(1)) =
      xv.mat().colwise().mean().transpose();
  return t.emplace(std::move(out), "mean_rows", [x, n](Tape& t, int self) {
    auto g = t.grad(Var{&t, self}).vec();
    t.grad_mut(x).mat().rowwise() += (g / n).transpose();
  });
}

Var mean_cols(Var x) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  require(xv.rank() == 2, "mean_cols: expected rank-2");
  double n = static_cast<double>(xv.dim(1));
  Tensor out = Tensor::zeros({xv.dim(0)});
  Eigen::Map<Vector>(out.array().data(), xv.dim(0)) = xv.mat().rowwise().mean();
  return t.emplace(std::move(out), "mean_cols", [x, n](Tape& t, int self) {
    auto g = t.grad(Var{&t, self}).vec();
    t.grad_mut(x).mat().colwise() += g / n;
  });
}

// ---------------------------------------------------------------------------
// neural ops
// ---------------------------------------------------------------------------

namespace {

// Unrolled windows: Xcol(c*k + kk, t) = x(c, t + kk), t in [0, T-k+1).
Matrix im2col(const Eigen::Map<const Matrix>& x, Index k) {
  Index cin = x.rows(), to = x.cols() - k + 1;
  Matrix xcol(cin * k, to);
  for (Index c = 0; c < cin; ++c)
    for (Index kk = 0; kk < k; ++kk) xcol.row(c * k + kk) = x.row(c).segment(kk, to);
  return xcol;
}

}  // namespace

Var conv1d(Var x, Var w, Var b) {
  same_tape(x, w);
  same_tape(x, b);
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  const Tensor& bv = t.value(b);
  require(xv.rank() == 2 && wv.rank() == 3 && bv.rank() == 1, "conv1d: bad ranks");
  Index cin = xv.dim(0), tlen = xv.dim(1);
  Index cout = wv.dim(0), k = wv.dim(2);
  require(wv.dim(1) == cin, "conv1d: weight expects ", wv.dim(1), " channels, input has ",
          cin);
  require(bv.dim(0) == cout, "conv1d: bias length mismatch");
  require(tlen >= k, "conv1d: input length ", tlen, " shorter than kernel ", k);
  Index to = tlen - k + 1;
  Matrix xcol = im2col(xv.mat(), k);
  Tensor out = Tensor::zeros({cout, to});
  out.mat() = wv.as_mat(cout, cin * k) * xcol;
  out.mat().colwise() += bv.vec();
  return t.emplace(std::move(out), "conv1d", [x, w, b, k](Tape& t, int self) {
    auto g = t.grad(Var{&t, self}).mat();
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    Index cin = xv.dim(0);
    Index cout = wv.dim(0);
    Index to = g.cols();
    Matrix xcol = im2col(xv.mat(), k);
    t.grad_mut(w).as_mat(cout, cin * k) += g * xcol.transpose();
    t.grad_mut(b).array() += g.rowwise().sum().array();
    Matrix dxcol = wv.as_mat(cout, cin * k).transpose() * g;
    auto dx = t.grad_mut(x).mat();
    for (Index c = 0; c < cin; ++c)
      for (Index kk = 0; kk < k; ++kk)
        dx.row(c).segment(kk, to) += dxcol.row(c * k + kk);
  });
}

Var maxpool1d(Var x, Index k, Index stride) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  require(xv.rank() == 2, "maxpool1d: expected rank-2");
  require(k >= 1 && stride >= 1, "maxpool1d: bad window");
  Index c = xv.dim(0), tlen = xv.dim(1);
  require(tlen >= k, "maxpool1d: input length ", tlen, " shorter than window ", k);
  Index to = (tlen - k) / stride + 1;
  auto xm = xv.mat();
  Tensor out = Tensor::zeros({c, to});
  std::vector<Index> argmax(static_cast<size_t>(c * to));
  for (Index ci = 0; ci < c; ++ci) {
    for (Index ti = 0; ti < to; ++ti) {
      Index base = ti * stride;
      Index best = base;
      double bv = xm(ci, base);
      for (Index kk = 1; kk < k; ++kk) {
        double v = xm(ci, base + kk);
        if (v > bv) {
          bv = v;
          best = base + kk;
        }
      }
      out.mat()(ci, ti) = bv;
      argmax[static_cast<size_t>(ci * to + ti)] = best;
    }
  }
  return t.emplace(std::move(out), "maxpool1d",
                   [x, argmax = std::move(argmax), to](Tape& t, int self) {
                     auto g = t.grad(Var{&t, self}).mat();
                     auto dx = t.grad_mut(x).mat();
                     for (Index ci = 0; ci < g.rows(); ++ci)
                       for (Index ti = 0; ti < to; ++ti)
                         dx(ci, argmax[static_cast<size_t>(ci * to + ti)]) += g(ci, ti);
                   });
}

Var mask_cols_from(Var x, Index valid) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  require(xv.rank() == 2, "mask_cols_from: expected rank-2");
  require(valid >= 0 && valid <= xv.dim(1), "mask_cols_from: valid=", valid,
          " out of range for ", xv.dim(1), " cols");
  Tensor out = Tensor::zeros(xv.shape());
  out.mat().leftCols(valid) = xv.mat().leftCols(valid);
  return t.emplace(std::move(out), "mask_cols_from", [x, valid](Tape& t, int self) {
    auto g = t.grad(Var{&t, self}).mat();
    t.grad_mut(x).mat().leftCols(valid) += g.leftCols(valid);
  });
}

// ---------------------------------------------------------------------------
// recurrences
// ---------------------------------------------------------------------------

Var scan_diag(Var a, Var x) {
  same_tape(a, x);
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& xv = t.value(x);
  require(av.rank() == 1 && xv.rank() == 2 && av.dim(0) == xv.dim(1),
          "scan_diag: a ", shape_str(av.shape()), " vs x ", shape_str(xv.shape()));
  Index tlen = xv.dim(0), s = xv.dim(1);
  Tensor out = Tensor::zeros(xv.shape());
  {
    auto xm = xv.mat();
    auto hm = out.mat();
    Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(s);
    Eigen::RowVectorXd ar = av.vec().transpose();
    for (Index ti = 0; ti < tlen; ++ti) {
      h = ar.cwiseProduct(h) + xm.row(ti);
      hm.row(ti) = h;
    }
  }
  return t.emplace(std::move(out), "scan_diag", [a, x, tlen, s](Tape& t, int self) {
    Var sv{&t, self};
    auto g = t.grad(sv).mat();
    auto h = t.value(sv).mat();
    Eigen::RowVectorXd ar = t.value(a).vec().transpose();
    auto dx = t.grad_mut(x).mat();
    Eigen::RowVectorXd da = Eigen::RowVectorXd::Zero(s);
    Eigen::RowVectorXd carry = Eigen::RowVectorXd::Zero(s);
    for (Index ti = tlen - 1; ti >= 0; --ti) {
      carry = g.row(ti) + ar.cwiseProduct(carry);  // dL/dh_t
      dx.row(ti) += carry;
      if (ti > 0) da += carry.cwiseProduct(h.row(ti - 1));
    }
    t.grad_mut(a).array() += da.transpose().array();
  });
}

Var scan_dense(Var a, Var x) {
  same_tape(a, x);
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& xv = t.value(x);
  require(av.rank() == 2 && av.dim(0) == av.dim(1) && xv.rank() == 2 &&
              av.dim(0) == xv.dim(1),
          "scan_dense: A ", shape_str(av.shape()), " vs x ", shape_str(xv.shape()));
  Index tlen = xv.dim(0), s = xv.dim(1);
  Tensor out = Tensor::zeros(xv.shape());
  {
    auto am = av.mat();
    auto xm = xv.mat();
    auto hm = out.mat();
    Vector h = Vector::Zero(s);
    for (Index ti = 0; ti < tlen; ++ti) {
      h = am * h + xm.row(ti).transpose();
      hm.row(ti) = h.transpose();
    }
  }
  return t.emplace(std::move(out), "scan_dense", [a, x, tlen, s](Tape& t, int self) {
    Var sv{&t, self};
    auto g = t.grad(sv).mat();
    auto h = t.value(sv).mat();
    auto am = t.value(a).mat();
    auto dx = t.grad_mut(x).mat();
    auto da = t.grad_mut(a).mat();
    Vector carry = Vector::Zero(s);
    for (Index ti = tlen - 1; ti >= 0; --ti) {
      carry = g.row(ti).transpose() + am.transpose() * carry;
      dx.row(ti) += carry.transpose();
      if (ti > 0) da += carry * h.row(ti - 1);
    }
  });
}

// ---------------------------------------------------------------------------
// basis expansion
// ---------------------------------------------------------------------------

Var bspline_basis(Var x, int grid, double range) {
  Tape& t = *x.tape;
  require(grid >= 2 && range > 0.0, "bspline_basis: bad grid parameters");
  const Tensor& xv = t.value(x);
  Index n = xv.numel();
  double h = 2.0 * range / grid;
  Tensor out = Tensor::zeros({n, static_cast<Index>(grid)});
  auto om = out.mat();
  for (Index i = 0; i < n; ++i) {
    double xc = std::clamp(xv[i], -range, range);
    for (int k = 0; k < grid; ++k) {
      double center = -range + (k + 0.5) * h;
      om(i, k) = bsp3((xc - center) / h);
    }
  }
  return t.emplace(std::move(out), "bspline_basis",
                   [x, grid, range, h](Tape& t, int self) {
                     auto g = t.grad(Var{&t, self}).mat();
                     const Tensor& xv = t.value(x);
                     Array& dx = t.grad_mut(x).array();
                     for (Index i = 0; i < xv.numel(); ++i) {
                       double raw = xv[i];
                       if (raw <= -range || raw >= range) continue;  // clamped: flat
                       double acc = 0.0;
                       for (int k = 0; k < grid; ++k) {
                         double center = -range + (k + 0.5) * h;
                         acc += g(i, k) * bsp3_deriv((raw - center) / h) / h;
                       }
                       dx(i) += acc;
                     }
                   });
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

Var log_softmax(Var x) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  require(xv.rank() == 2, "log_softmax: expected rank-2 logits");
  Tensor out = Tensor::zeros(xv.shape());
  auto xm = xv.mat();
  auto om = out.mat();
  for (Index i = 0; i < xm.rows(); ++i) {
    double m = xm.row(i).maxCoeff();
    Eigen::RowVectorXd shifted = xm.row(i).array() - m;
    double lse = std::log(shifted.array().exp().sum());
    om.row(i) = shifted.array() - lse;
  }
  return t.emplace(std::move(out), "log_softmax", [x](Tape& t, int self) {
    Var sv{&t, self};
    auto g = t.grad(sv).mat();
    auto ls = t.value(sv).mat();
    auto dx = t.grad_mut(x).mat();
    for (Index i = 0; i < g.rows(); ++i) {
      double gsum = g.row(i).sum();
      dx.row(i) += g.row(i) - gsum * ls.row(i).array().exp().matrix();
    }
  });
}

Var nll_gather(Var logp, const std::vector<Index>& rows,
               const std::vector<int>& labels) {
  Tape& t = *logp.tape;
  const Tensor& lv = t.value(logp);
  require(lv.rank() == 2, "nll_gather: expected rank-2 log-probs");
  require(!rows.empty() && rows.size() == labels.size(),
          "nll_gather: rows/labels size mismatch");
  auto lm = lv.mat();
  double acc = 0.0;
  for (size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < lm.rows(), "nll_gather: row ", rows[i],
            " out of range");
    require(labels[i] >= 0 && labels[i] < lm.cols(), "nll_gather: label ", labels[i],
            " out of range");
    acc -= lm(rows[i], labels[i]);
  }
  double n = static_cast<double>(rows.size());
  Tensor out = Tensor::scalar(acc / n);
  return t.emplace(std::move(out), "nll_gather",
                   [logp, rows, labels, n](Tape& t, int self) {
                     double g = t.grad(Var{&t, self})[0];
                     auto dl = t.grad_mut(logp).mat();
                     for (size_t i = 0; i < rows.size(); ++i)
                       dl(rows[i], labels[i]) -= g / n;
                   });
}

// ---------------------------------------------------------------------------
// graph
// ---------------------------------------------------------------------------

namespace {

// Deterministic summation order regardless of how nodes are numbered: sort by
// weight, break ties by the neighbor's feature row contents. Equivalent edges
// (same weight, identical rows) commute bitwise, so any residual order is fine.
std::vector<std::pair<double, Index>> canonical_edges(
    const std::vector<std::pair<double, Index>>& edges,
    const Eigen::Map<const Matrix>& h) {
  auto sorted = edges;
  std::sort(sorted.begin(), sorted.end(),
            [&](const std::pair<double, Index>& e1, const std::pair<double, Index>& e2) {
              if (e1.first != e2.first) return e1.first < e2.first;
              for (Index j = 0; j < h.cols(); ++j) {
                double a = h(e1.second, j), b = h(e2.second, j);
                if (a != b) return a < b;
              }
              return false;
            });
  return sorted;
}

}  // namespace

Var graph_aggregate(Var h, const std::vector<NeighborList>& adj, Var eps) {
  same_tape(h, eps);
  Tape& t = *h.tape;
  const Tensor& hv = t.value(h);
  require(hv.rank() == 2, "graph_aggregate: expected rank-2 features");
  require(static_cast<Index>(adj.size()) == hv.dim(0),
          "graph_aggregate: adjacency lists ", adj.size(), " vs ", hv.dim(0), " nodes");
  require(t.value(eps).numel() == 1, "graph_aggregate: eps must be scalar");
  Index n = hv.dim(0), d = hv.dim(1);
  auto hm = hv.mat();
  double e0 = t.value(eps)[0];
  Tensor out = Tensor::zeros({n, d});
  auto om = out.mat();
  for (Index v = 0; v < n; ++v) {
    for (const auto& [wgt, u] : adj[v].edges)
      require(u >= 0 && u < n, "graph_aggregate: neighbor ", u, " out of range");
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(d);
    for (const auto& [wgt, u] : canonical_edges(adj[v].edges, hm))
      acc += wgt * hm.row(u);
    om.row(v) = (1.0 + e0) * hm.row(v) + acc;
  }
  return t.emplace(std::move(out), "graph_aggregate", [h, adj, eps](Tape& t, int self) {
    auto g = t.grad(Var{&t, self}).mat();
    auto hm = t.value(h).mat();
    double e0 = t.value(eps)[0];
    auto dh = t.grad_mut(h).mat();
    double deps = 0.0;
    for (Index v = 0; v < g.rows(); ++v) {
      deps += g.row(v).dot(hm.row(v));
      dh.row(v) += (1.0 + e0) * g.row(v);
      for (const auto& [wgt, u] : adj[static_cast<size_t>(v)].edges)
        dh.row(u) += wgt * g.row(v);
    }
    t.grad_mut(eps).array()(0) += deps;
  });
}

}  // namespace csdp
