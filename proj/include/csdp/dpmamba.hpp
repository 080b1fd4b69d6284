#pragma once

#include <vector>

#include "csdp/optim.hpp"
#include "csdp/tape.hpp"

namespace csdp {

/// Single-layer dual-pathway linear state-space encoder. The transition is
/// diagonal with entries logistic(a_raw) in (0,1) — stable by construction —
/// unless dense_a, which learns a raw dense transition (stability unchecked).
/// Forward and reverse pathways share A, B, C unless split_paths.
struct SSMConfig {
  Index d_model = 64;
  Index state_dim = 16;
  bool dense_a = false;
  bool split_paths = false;
};

struct SSMParams {
  SSMConfig cfg;
  std::vector<Param> params;
  ParamGroup group();
};

/// a_raw ~ U(0.5, 2) (so A sits in ~(0.62, 0.88)); B, C, W_out ~ U(+-1/sqrt(fan_in));
/// mix coefficients start at 0.5 each; output bias zero.
SSMParams make_ssm(const SSMConfig& cfg, std::uint64_t seed);

struct SSMVars {
  SSMConfig cfg;
  std::vector<Var> vars;  // same order as SSMParams::params
};
SSMVars bind_ssm(Tape& t, SSMParams& p, TapeBinding& binding);

/// h_t = A h_{t-1} + B x_t, y_t = C h_t over a time-major (T', d_model) input.
Var ssm_forward_on_tape(const SSMVars& v, Var x);
/// Same recurrence run from the future: reverse the input, scan, reverse back.
Var ssm_reverse_on_tape(const SSMVars& v, Var x);
/// alpha_mix * y + beta_mix * yR (both learnable scalars).
Var ssm_combine_on_tape(const SSMVars& v, Var y, Var yr);

/// Full node feature: combine both pathways over the representation
/// (d_model, T'), mean-pool over time, project by W_out, silu. Rank-1 output.
Var dpmamba_encode_on_tape(Tape& t, const SSMVars& v, const Matrix& rep);

// ---- forward-only conveniences ----
Matrix ssm_forward(const SSMParams& p, const Matrix& x);
Matrix ssm_reverse(const SSMParams& p, const Matrix& x);
Vector dpmamba_encode(const SSMParams& p, const Matrix& rep);
/// One row per representation.
Matrix encode_nodes(const SSMParams& p, const std::vector<Matrix>& reps);

}  // namespace csdp
