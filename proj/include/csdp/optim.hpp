#pragma once

#include <functional>
#include <string>
#include <vector>

#include "csdp/tape.hpp"

namespace csdp {

/// A named trainable tensor. Ownership stays with the model structs; the
/// optimizer and checkpoint code see flat ParamGroup views.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  explicit Param(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape())) {}

  void zero_grad() { grad.array().setZero(); }
};

using ParamGroup = std::vector<Param*>;

/// Register a param on a tape and remember the pairing so accumulated tape
/// gradients can be pulled back out after backward().
class TapeBinding {
 public:
  Var bind(Tape& t, Param& p) {
    Var v = t.leaf(p.value, true);
    bound_.push_back({&p, v});
    return v;
  }
  /// Copy tape gradients into the params' grad slots (overwrites).
  void collect(Tape& t) {
    for (auto& [p, v] : bound_) p->grad = t.grad(v);
  }

 private:
  std::vector<std::pair<Param*, Var>> bound_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Per-group optimizer state. `lr` is mutated by the plateau scheduler.
struct OptimState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;
  double lr = 1e-3;
  AdamConfig cfg;

  // plateau tracking
  double best_metric = 0.0;
  bool has_best = false;
  int since_improve = 0;
  double lr_floor = 1e-6;
};

OptimState make_optim_state(const ParamGroup& params, double lr);

/// One bias-corrected Adam update from the params' grad slots.
void adam_step(const ParamGroup& params, OptimState& st);

/// Reduce-on-plateau: if `metric` (lower is better) fails to improve on the
/// best seen by more than 1e-6 for `patience` consecutive calls, multiply lr
/// by `factor` (clamped to st.lr_floor) and reset the counter. Returns true
/// when a reduction happened.
bool plateau_update(OptimState& st, double metric, double factor = 0.5,
                    int patience = 50);

/// Max relative error between analytic gradients and central finite
/// differences of `build` over every element of every param.
/// `build` must construct the scalar loss from the bound vars in tape order.
double grad_check(
    const std::function<Var(Tape&, const std::vector<Var>&)>& build,
    const ParamGroup& params, double step = 1e-5);

/// Directional variant for large models: compares the analytic directional
/// derivative against a central difference along `probes` random unit
/// directions (2 evaluations each instead of 2 per element).
double grad_check_directional(
    const std::function<Var(Tape&, const std::vector<Var>&)>& build,
    const ParamGroup& params, double step = 1e-6, int probes = 4,
    std::uint64_t dir_seed = 0);

}  // namespace csdp
