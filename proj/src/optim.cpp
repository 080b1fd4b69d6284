#include "csdp/optim.hpp"

#include <cmath>
#include <random>

#include "csdp/rng.hpp"

namespace csdp {

OptimState make_optim_state(const ParamGroup& params, double lr) {
  OptimState st;
  st.lr = lr;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const Param* p : params) {
    st.m.push_back(Tensor::zeros(p->value.shape()));
    st.v.push_back(Tensor::zeros(p->value.shape()));
  }
  return st;
}

void adam_step(const ParamGroup& params, OptimState& st) {
  require(params.size() == st.m.size(), "adam_step: state built for ", st.m.size(),
          " params, got ", params.size());
  st.step += 1;
  double b1 = st.cfg.beta1, b2 = st.cfg.beta2;
  double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    require(p.grad.same_shape(p.value), "adam_step: '", p.name, "' grad shape mismatch");
    Array& m = st.m[i].array();
    Array& v = st.v[i].array();
    const Array& g = p.grad.array();
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.square();
    p.value.array() -= st.lr * (m / bc1) / ((v / bc2).sqrt() + st.cfg.eps);
  }
}

bool plateau_update(OptimState& st, double metric, double factor, int patience) {
  if (!st.has_best || metric < st.best_metric - 1e-6) {
    st.best_metric = metric;
    st.has_best = true;
    st.since_improve = 0;
    return false;
  }
  st.since_improve += 1;
  if (st.since_improve < patience) return false;
  st.lr = std::max(st.lr * factor, st.lr_floor);
  st.since_improve = 0;
  return true;
}

double grad_check(const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                  const ParamGroup& params, double step) {
  // Analytic pass.
  std::vector<Tensor> analytic;
  {
    Tape t;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (Param* p : params) vars.push_back(t.leaf(p->value, true));
    Var loss = build(t, vars);
    t.backward(loss);
    for (size_t i = 0; i < params.size(); ++i) analytic.push_back(t.grad(vars[i]));
  }

  auto eval = [&](const std::vector<Tensor>& values) {
    Tape t;
    t.set_grad_enabled(false);
    std::vector<Var> vars;
    vars.reserve(values.size());
    for (const Tensor& v : values) vars.push_back(t.leaf(v, false));
    return t.value(build(t, vars)).value();
  };

  std::vector<Tensor> vals;
  vals.reserve(params.size());
  for (Param* p : params) vals.push_back(p->value);

  double worst = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    for (Index j = 0; j < vals[i].numel(); ++j) {
      double orig = vals[i][j];
      vals[i][j] = orig + step;
      double hi = eval(vals);
      vals[i][j] = orig - step;
      double lo = eval(vals);
      vals[i][j] = orig;
      double fd = (hi - lo) / (2.0 * step);
      double rel = std::abs(analytic[i][j] - fd) / std::max(1.0, std::abs(fd));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

double grad_check_directional(
    const std::function<Var(Tape&, const std::vector<Var>&)>& build,
    const ParamGroup& params, double step, int probes, std::uint64_t dir_seed) {
  std::vector<Tensor> analytic;
  {
    Tape t;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (Param* p : params) vars.push_back(t.leaf(p->value, true));
    Var loss = build(t, vars);
    t.backward(loss);
    for (size_t i = 0; i < params.size(); ++i) analytic.push_back(t.grad(vars[i]));
  }

  auto eval = [&](const std::vector<Tensor>& values) {
    Tape t;
    t.set_grad_enabled(false);
    std::vector<Var> vars;
    vars.reserve(values.size());
    for (const Tensor& v : values) vars.push_back(t.leaf(v, false));
    return t.value(build(t, vars)).value();
  };

  double worst = 0.0;
  for (int probe = 0; probe < probes; ++probe) {
    auto rng = make_rng(derive_seed(dir_seed, 0xd1c, static_cast<std::uint64_t>(probe)));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<Tensor> dir;
    double norm2 = 0.0;
    for (Param* p : params) {
      Tensor d = Tensor::zeros(p->value.shape());
      for (Index j = 0; j < d.numel(); ++j) {
        d[j] = gauss(rng);
        norm2 += d[j] * d[j];
      }
      dir.push_back(std::move(d));
    }
    double inv = 1.0 / std::sqrt(norm2);
    double analytic_dd = 0.0;
    std::vector<Tensor> plus, minus;
    for (size_t i = 0; i < params.size(); ++i) {
      dir[i].array() *= inv;
      analytic_dd += (analytic[i].array() * dir[i].array()).sum();
      Tensor p = params[i]->value, m = params[i]->value;
      p.array() += step * dir[i].array();
      m.array() -= step * dir[i].array();
      plus.push_back(std::move(p));
      minus.push_back(std::move(m));
    }
    double fd = (eval(plus) - eval(minus)) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic_dd - fd) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

}  // namespace csdp
