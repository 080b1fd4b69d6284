#include "csdp/dpmamba.hpp"

#include <cmath>

#include "csdp/error.hpp"
#include "csdp/rng.hpp"

namespace csdp {

namespace {

// param layout: forward (a_raw, B, C), optional reverse triple, then
// alpha_mix, beta_mix, w_out, b_out
size_t mix_base(const SSMConfig& cfg) { return cfg.split_paths ? 6 : 3; }

Tensor uniform_tensor(Shape shape, double lo, double hi, std::mt19937_64& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t[i] = lo + (hi - lo) * draw_unit(rng);
  return t;
}

void append_path(std::vector<Param>& params, const SSMConfig& cfg,
                 const std::string& suffix, std::mt19937_64& rng) {
  const Index s = cfg.state_dim;
  const Index d = cfg.d_model;
  if (cfg.dense_a) {
    double ab = 1.0 / std::sqrt(static_cast<double>(s));
    params.emplace_back("dpmamba.a_raw" + suffix,
                        uniform_tensor({s, s}, -ab, ab, rng));
  } else {
    params.emplace_back("dpmamba.a_raw" + suffix,
                        uniform_tensor({s}, 0.5, 2.0, rng));
  }
  double bb = 1.0 / std::sqrt(static_cast<double>(d));
  double cb = 1.0 / std::sqrt(static_cast<double>(s));
  params.emplace_back("dpmamba.B" + suffix, uniform_tensor({s, d}, -bb, bb, rng));
  params.emplace_back("dpmamba.C" + suffix, uniform_tensor({d, s}, -cb, cb, rng));
}

// one direction of the scan given the (a_raw, B, C) vars at `base`
Var run_path(const SSMVars& v, Var x, size_t base) {
  Var a_raw = v.vars[base];
  Var b = v.vars[base + 1];
  Var c = v.vars[base + 2];
  Var u = matmul(x, transpose_op(b));  // (T', S)
  Var h = v.cfg.dense_a ? scan_dense(a_raw, u) : scan_diag(logistic(a_raw), u);
  return matmul(h, transpose_op(c));  // (T', d)
}

}  // namespace

ParamGroup SSMParams::group() {
  ParamGroup g;
  for (auto& p : params) g.push_back(&p);
  return g;
}

SSMParams make_ssm(const SSMConfig& cfg, std::uint64_t seed) {
  require(cfg.d_model >= 1, "d_model must be positive, got ", cfg.d_model);
  require(cfg.state_dim >= 1, "state_dim must be positive, got ", cfg.state_dim);
  auto rng = make_rng(derive_seed(seed, 0x55a1));
  SSMParams p;
  p.cfg = cfg;
  append_path(p.params, cfg, "", rng);
  if (cfg.split_paths) append_path(p.params, cfg, "_r", rng);
  p.params.emplace_back("dpmamba.alpha_mix", Tensor::scalar(0.5));
  p.params.emplace_back("dpmamba.beta_mix", Tensor::scalar(0.5));
  double wb = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  p.params.emplace_back("dpmamba.w_out",
                        uniform_tensor({cfg.d_model, cfg.d_model}, -wb, wb, rng));
  p.params.emplace_back("dpmamba.b_out", Tensor::zeros({cfg.d_model}));
  return p;
}

SSMVars bind_ssm(Tape& t, SSMParams& p, TapeBinding& binding) {
  SSMVars v;
  v.cfg = p.cfg;
  for (auto& param : p.params) v.vars.push_back(binding.bind(t, param));
  return v;
}

Var ssm_forward_on_tape(const SSMVars& v, Var x) {
  const Tensor& xv = x.tape->value(x);
  require(xv.rank() == 2 && xv.dim(1) == v.cfg.d_model, "ssm input must be T'x",
          v.cfg.d_model, ", got ", shape_str(xv.shape()));
  return run_path(v, x, 0);
}

Var ssm_reverse_on_tape(const SSMVars& v, Var x) {
  const Tensor& xv = x.tape->value(x);
  require(xv.rank() == 2 && xv.dim(1) == v.cfg.d_model, "ssm input must be T'x",
          v.cfg.d_model, ", got ", shape_str(xv.shape()));
  size_t base = v.cfg.split_paths ? 3 : 0;
  return reverse_rows(run_path(v, reverse_rows(x), base));
}

Var ssm_combine_on_tape(const SSMVars& v, Var y, Var yr) {
  require(y.tape->value(y).same_shape(yr.tape->value(yr)),
          "pathway outputs differ in shape");
  size_t base = mix_base(v.cfg);
  return add(scale_by(v.vars[base], y), scale_by(v.vars[base + 1], yr));
}

Var dpmamba_encode_on_tape(Tape& t, const SSMVars& v, const Matrix& rep) {
  require(rep.rows() == v.cfg.d_model, "representation has ", rep.rows(),
          " rows, model expects ", v.cfg.d_model);
  require(rep.cols() >= 1, "representation is empty");
  Var x = t.constant(Tensor::from_matrix(rep.transpose()));  // time-major
  Var y = ssm_combine_on_tape(v, ssm_forward_on_tape(v, x),
                              ssm_reverse_on_tape(v, x));
  Var pooled = mean_rows(y);  // (d_model)
  size_t base = mix_base(v.cfg);
  Var row = reshape_op(pooled, {1, v.cfg.d_model});
  Var projected = add_rowvec(matmul(row, transpose_op(v.vars[base + 2])),
                             v.vars[base + 3]);
  return reshape_op(silu(projected), {v.cfg.d_model});
}

namespace {

template <typename F>
auto forward_only(const SSMParams& p, F&& body) {
  Tape t;
  t.set_grad_enabled(false);
  SSMVars v;
  v.cfg = p.cfg;
  for (const auto& param : p.params) v.vars.push_back(t.leaf(param.value));
  return body(t, v);
}

}  // namespace

Matrix ssm_forward(const SSMParams& p, const Matrix& x) {
  return forward_only(p, [&](Tape& t, const SSMVars& v) -> Matrix {
    Var in = t.constant(Tensor::from_matrix(x));
    return t.value(ssm_forward_on_tape(v, in)).mat();
  });
}

Matrix ssm_reverse(const SSMParams& p, const Matrix& x) {
  return forward_only(p, [&](Tape& t, const SSMVars& v) -> Matrix {
    Var in = t.constant(Tensor::from_matrix(x));
    return t.value(ssm_reverse_on_tape(v, in)).mat();
  });
}

Vector dpmamba_encode(const SSMParams& p, const Matrix& rep) {
  return forward_only(p, [&](Tape& t, const SSMVars& v) -> Vector {
    return t.value(dpmamba_encode_on_tape(t, v, rep)).vec();
  });
}

Matrix encode_nodes(const SSMParams& p, const std::vector<Matrix>& reps) {
  require(!reps.empty(), "need at least one representation");
  Matrix h(static_cast<Index>(reps.size()), p.cfg.d_model);
  for (size_t i = 0; i < reps.size(); ++i)
    h.row(static_cast<Index>(i)) = dpmamba_encode(p, reps[i]).transpose();
  return h;
}

}  // namespace csdp
