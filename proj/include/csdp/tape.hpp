#pragma once

#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "csdp/tensor.hpp"

namespace csdp {

class Tape;

/// Handle into a tape. Cheap to copy; valid while its tape is alive.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Reverse-mode tape. Each recorded node stores its value, a gradient slot of
/// the same shape, and a backprop closure that scatters the node's gradient
/// into its parents. backward() runs the closures newest-to-oldest, which
/// visits every node exactly once.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var constant(double v) { return leaf(Tensor::scalar(v), false); }

  /// Record an op result. `backprop(tape, self)` must add d(output)/d(parent)
  /// contributions into each parent's grad slot; pass an empty function for
  /// ops with no differentiable parents.
  Var emplace(Tensor value, std::string op_name,
              std::function<void(Tape&, int)> backprop);

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;
  Tensor& grad_mut(Var v);

  /// Backpropagate from a scalar loss. Seeds d(loss)/d(loss)=1 and sweeps the
  /// tape in reverse. Callable once per tape.
  void backward(Var loss);

  /// When disabled, emplace() drops backprop closures (forward-only mode,
  /// used by finite-difference evaluation).
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  /// When on, every op result is checked for NaN/inf at record time and
  /// backward() checks gradients as they are produced.
  void set_finite_checks(bool on) { finite_checks_ = on; }

  size_t size() const { return nodes_.size(); }
  long backprop_calls() const { return backprop_calls_; }
  long ops_recorded() const {
    long n = 0;
    for (const auto& nd : nodes_)
      if (nd.backprop) ++n;
    return n;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::string op;
    std::function<void(Tape&, int)> backprop;
  };
  // deque: recording new ops must not invalidate value()/grad() references
  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
  bool finite_checks_ = false;
  bool consumed_ = false;
  long backprop_calls_ = 0;

  const Node& node(Var v) const;
};

// ---- elementwise ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_scalar(Var a, double s);
Var mul_scalar(Var a, double s);
/// s (rank-0 var) * X, differentiable in both.
Var scale_by(Var s, Var x);
Var relu(Var x);
Var silu(Var x);
Var tanh_op(Var x);
Var logistic(Var x);
Var sqrt_op(Var x);
Var square(Var x);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// ---- linear algebra / shape ----
Var matmul(Var a, Var b);
Var transpose_op(Var x);
Var reshape_op(Var x, Shape shape);
Var concat_rows(const std::vector<Var>& xs);
Var concat_cols(const std::vector<Var>& xs);
Var stack_rows(const std::vector<Var>& rows);
Var reverse_rows(Var x);
Var slice_rows(Var x, Index begin, Index count);
/// X {N,C} + broadcast row b {C}.
Var add_rowvec(Var x, Var b);

// ---- reductions ----
Var sum_all(Var x);
Var mean_all(Var x);
/// Mean over rows of a rank-2 input -> rank-1 of length cols.
Var mean_rows(Var x);
/// Mean over cols of a rank-2 input -> rank-1 of length rows.
Var mean_cols(Var x);

// ---- neural ops ----
/// x {Cin,T}, w {Cout,Cin,k}, b {Cout} -> {Cout, T-k+1}. Valid convolution
/// (really cross-correlation, as is conventional).
Var conv1d(Var x, Var w, Var b);
/// x {C,T} -> {C, floor((T-k)/stride)+1}, max over windows, first-index ties.
Var maxpool1d(Var x, Index k, Index stride);
/// Zero out columns [valid, T) of a {C,T} input.
Var mask_cols_from(Var x, Index valid);

// ---- recurrences ----
/// Diagonal linear state recurrence. a {S}, x {T,S}; h_t = a*h_{t-1} + x_t
/// row-wise, h_0 = 0. Returns {T,S}.
Var scan_diag(Var a, Var x);
/// Dense variant: A {S,S}, x {T,S}; h_t = A h_{t-1} + x_t.
Var scan_dense(Var a, Var x);

// ---- basis expansion ----
/// Cubic B-spline basis on a fixed grid of G functions covering [-range, range].
/// x of any shape (numel n) -> {n, G}; inputs are clamped to the grid.
Var bspline_basis(Var x, int grid, double range);

// ---- losses ----
Var log_softmax(Var x);
/// Mean of -logp[rows[i], labels[i]]; rows may repeat.
Var nll_gather(Var logp, const std::vector<Index>& rows, const std::vector<int>& labels);

// ---- graph ----
///// GIN-style neighborhood sum: out_v = (1+eps) h_v + sum_u w_vu h_u.
/// Summation order is canonicalized (by weight, then by neighbor row bytes) so
/// the result is bit-identical under graph permutation.
struct NeighborList {
  std::vector<std::pair<double, Index>> edges;  // (weight, neighbor row)
};
Var graph_aggregate(Var h, const std::vector<NeighborList>& adj, Var eps);

}  // namespace csdp
