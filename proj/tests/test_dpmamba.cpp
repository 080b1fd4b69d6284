#include "csdp/dpmamba.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "csdp/checkpoint.hpp"
#include "csdp/error.hpp"
#include "csdp/rng.hpp"
#include "support.hpp"

using namespace csdp;
using namespace csdp::test;
using doctest::Approx;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// scalar S=d=1 model with A=0.5, B=C=W_out=1, alpha=1, beta=0, zero bias
SSMParams scalar_model() {
  SSMConfig cfg;
  cfg.d_model = 1;
  cfg.state_dim = 1;
  SSMParams p = make_ssm(cfg, 1);
  p.params[0].value[0] = 0.0;  // logistic(0) = 0.5
  p.params[1].value[0] = 1.0;  // B
  p.params[2].value[0] = 1.0;  // C
  p.params[3].value[0] = 1.0;  // alpha_mix
  p.params[4].value[0] = 0.0;  // beta_mix
  p.params[5].value[0] = 1.0;  // w_out
  p.params[6].value[0] = 0.0;  // b_out
  return p;
}

}  // namespace

TEST_CASE("make_ssm layout, ranges, determinism") {
  SSMConfig cfg;
  cfg.d_model = 6;
  cfg.state_dim = 4;
  SSMParams p = make_ssm(cfg, 3);
  REQUIRE(p.params.size() == 7);
  CHECK(p.params[0].name == "dpmamba.a_raw");
  CHECK(p.params[1].name == "dpmamba.B");
  CHECK(p.params[2].name == "dpmamba.C");
  CHECK(p.params[3].name == "dpmamba.alpha_mix");
  CHECK(p.params[4].name == "dpmamba.beta_mix");
  CHECK(p.params[5].name == "dpmamba.w_out");
  CHECK(p.params[6].name == "dpmamba.b_out");

  CHECK(p.params[0].value.shape() == Shape{4});
  CHECK(p.params[1].value.shape() == Shape{4, 6});
  CHECK(p.params[2].value.shape() == Shape{6, 4});
  CHECK(p.params[5].value.shape() == Shape{6, 6});

  CHECK(p.params[0].value.array().minCoeff() >= 0.5);
  CHECK(p.params[0].value.array().maxCoeff() <= 2.0);
  CHECK(p.params[1].value.array().abs().maxCoeff() <= 1.0 / std::sqrt(6.0));
  CHECK(p.params[2].value.array().abs().maxCoeff() <= 0.5);
  CHECK(p.params[3].value.value() == 0.5);
  CHECK(p.params[4].value.value() == 0.5);
  CHECK(p.params[6].value.array().abs().maxCoeff() == 0.0);

  SSMParams same = make_ssm(cfg, 3);
  SSMParams other = make_ssm(cfg, 4);
  for (size_t i = 0; i < p.params.size(); ++i)
    CHECK((same.params[i].value.array() == p.params[i].value.array()).all());
  CHECK(!(other.params[0].value.array() == p.params[0].value.array()).all());

  SUBCASE("split paths double the pathway params") {
    cfg.split_paths = true;
    SSMParams sp = make_ssm(cfg, 3);
    REQUIRE(sp.params.size() == 10);
    CHECK(sp.params[3].name == "dpmamba.a_raw_r");
    CHECK(sp.params[4].name == "dpmamba.B_r");
    CHECK(sp.params[5].name == "dpmamba.C_r");
  }

  SUBCASE("dense transition is SxS") {
    cfg.dense_a = true;
    SSMParams dp = make_ssm(cfg, 3);
    CHECK(dp.params[0].value.shape() == Shape{4, 4});
  }
}

TEST_CASE("scalar recurrence worked example") {
  SSMParams p = scalar_model();
  Matrix x(3, 1);
  x << 1, 0, 0;

  Matrix y = ssm_forward(p, x);
  REQUIRE(y.rows() == 3);
  CHECK(y(0, 0) == 1.0);
  CHECK(y(1, 0) == 0.5);
  CHECK(y(2, 0) == 0.25);

  // encode pools to mean(1, 0.5, 0.25) = 7/12, then identity projection + silu
  Matrix rep(1, 3);
  rep << 1, 0, 0;
  Vector f = dpmamba_encode(p, rep);
  REQUIRE(f.size() == 1);
  double pooled = 7.0 / 12.0;
  CHECK(f(0) == Approx(pooled * sigmoid(pooled)).epsilon(1e-12));
}

TEST_CASE("zero input stays zero through every path") {
  SSMConfig cfg;
  cfg.d_model = 5;
  cfg.state_dim = 3;
  SSMParams p = make_ssm(cfg, 9);
  Matrix x = Matrix::Zero(7, 5);
  CHECK(ssm_forward(p, x).array().abs().maxCoeff() == 0.0);
  CHECK(ssm_reverse(p, x).array().abs().maxCoeff() == 0.0);
  CHECK(dpmamba_encode(p, Matrix::Zero(5, 7)).array().abs().maxCoeff() == 0.0);
}

TEST_CASE("forward recurrence matches a direct evaluation and stays bounded") {
  SSMConfig cfg;
  cfg.d_model = 6;
  cfg.state_dim = 5;
  SSMParams p = make_ssm(cfg, 17);
  auto rng = make_rng(18);
  Matrix x = rand_matrix(50, 6, rng);

  Vector a = p.params[0].value.vec();
  Vector A = (1.0 / (1.0 + (-a.array()).exp())).matrix();
  Matrix B = p.params[1].value.mat();
  Matrix C = p.params[2].value.mat();

  Matrix y = ssm_forward(p, x);
  Vector h = Vector::Zero(5);
  double max_x = x.rowwise().norm().maxCoeff();
  double bound = B.norm() * max_x / (1.0 - A.maxCoeff());
  for (Index t = 0; t < 50; ++t) {
    h = (A.array() * h.array()).matrix() + B * x.row(t).transpose();
    CHECK(h.norm() <= bound + 1e-12);
    Vector yt = C * h;
    for (Index j = 0; j < 6; ++j) CHECK(y(t, j) == Approx(yt(j)).epsilon(1e-12));
  }
}

TEST_CASE("reverse pathway is the time-mirrored forward pathway") {
  SSMConfig cfg;
  cfg.d_model = 4;
  cfg.state_dim = 3;
  SSMParams p = make_ssm(cfg, 21);
  auto rng = make_rng(22);
  Matrix x = rand_matrix(9, 4, rng);

  Matrix yr = ssm_reverse(p, x);
  Matrix mirrored = ssm_forward(p, x.colwise().reverse()).colwise().reverse();
  CHECK((yr.array() == mirrored.array()).all());

  SUBCASE("palindromic input makes the outputs mirror images") {
    Matrix pal(8, 4);
    pal.topRows(4) = rand_matrix(4, 4, rng);
    pal.bottomRows(4) = pal.topRows(4).colwise().reverse();
    Matrix y = ssm_forward(p, pal);
    Matrix yrev = ssm_reverse(p, pal);
    for (Index t = 0; t < 8; ++t)
      CHECK((yrev.row(t).array() == y.row(7 - t).array()).all());
  }
}

TEST_CASE("the scan is linear in its input") {
  SSMConfig cfg;
  cfg.d_model = 5;
  cfg.state_dim = 4;
  SSMParams p = make_ssm(cfg, 25);
  auto rng = make_rng(26);
  Matrix x1 = rand_matrix(12, 5, rng), x2 = rand_matrix(12, 5, rng);
  Matrix lhs = ssm_forward(p, x1 + x2);
  Matrix rhs = ssm_forward(p, x1) + ssm_forward(p, x2);
  CHECK((lhs - rhs).array().abs().maxCoeff() < 1e-9);
}

TEST_CASE("zero dense transition is memoryless") {
  SSMConfig cfg;
  cfg.d_model = 4;
  cfg.state_dim = 3;
  cfg.dense_a = true;
  SSMParams p = make_ssm(cfg, 29);
  p.params[0].value.array().setZero();  // A = 0
  auto rng = make_rng(30);
  Matrix x = rand_matrix(6, 4, rng);
  Matrix B = p.params[1].value.mat();
  Matrix C = p.params[2].value.mat();
  Matrix y = ssm_forward(p, x);
  for (Index t = 0; t < 6; ++t) {
    Vector want = C * (B * x.row(t).transpose());
    for (Index j = 0; j < 4; ++j) CHECK(y(t, j) == Approx(want(j)).epsilon(1e-12));
  }
}

TEST_CASE("mix coefficients select the pathways exactly") {
  SSMConfig cfg;
  cfg.d_model = 3;
  cfg.state_dim = 2;
  SSMParams p = make_ssm(cfg, 33);
  auto rng = make_rng(34);
  Matrix x = rand_matrix(5, 3, rng);

  auto combined = [&](double alpha, double beta) {
    p.params[3].value[0] = alpha;
    p.params[4].value[0] = beta;
    Tape t;
    t.set_grad_enabled(false);
    SSMVars v;
    v.cfg = p.cfg;
    for (const auto& param : p.params) v.vars.push_back(t.leaf(param.value));
    Var in = t.constant(Tensor::from_matrix(x));
    Var c = ssm_combine_on_tape(v, ssm_forward_on_tape(v, in),
                                ssm_reverse_on_tape(v, in));
    return Matrix(t.value(c).mat());
  };

  Matrix fwd = ssm_forward(p, x);
  Matrix rev = ssm_reverse(p, x);
  CHECK((combined(1.0, 0.0).array() == fwd.array()).all());
  CHECK((combined(0.0, 1.0).array() == rev.array()).all());
  Matrix half = combined(0.5, 0.5);
  CHECK((half - (0.5 * fwd + 0.5 * rev)).array().abs().maxCoeff() < 1e-15);
}

TEST_CASE("split paths give the reverse direction its own parameters") {
  SSMConfig cfg;
  cfg.d_model = 4;
  cfg.state_dim = 3;
  cfg.split_paths = true;
  SSMParams p = make_ssm(cfg, 37);
  auto rng = make_rng(38);
  Matrix x = rand_matrix(6, 4, rng);

  CHECK(ssm_reverse(p, x).array().abs().maxCoeff() > 0.0);
  p.params[4].value.array().setZero();  // B_r
  CHECK(ssm_reverse(p, x).array().abs().maxCoeff() == 0.0);
  CHECK(ssm_forward(p, x).array().abs().maxCoeff() > 0.0);  // untouched
}

TEST_CASE("whole-model gradients match finite differences") {
  auto rng = make_rng(41);
  Matrix rep1 = rand_matrix(5, 7, rng);
  Matrix rep2 = rand_matrix(5, 9, rng);
  Matrix w1 = rand_matrix(1, 5, rng), w2 = rand_matrix(1, 5, rng);

  auto check_cfg = [&](bool dense, bool split) {
    SSMConfig cfg;
    cfg.d_model = 5;
    cfg.state_dim = 3;
    cfg.dense_a = dense;
    cfg.split_paths = split;
    SSMParams p = make_ssm(cfg, 43);
    ParamGroup group = p.group();
    double err = grad_check(
        [&](Tape& t, const std::vector<Var>& vars) {
          SSMVars v;
          v.cfg = cfg;
          v.vars = vars;
          Var f1 = dpmamba_encode_on_tape(t, v, rep1);
          Var f2 = dpmamba_encode_on_tape(t, v, rep2);
          Var s1 = sum_all(mul(reshape_op(f1, {1, 5}),
                               t.constant(Tensor::from_matrix(w1))));
          Var s2 = sum_all(mul(reshape_op(f2, {1, 5}),
                               t.constant(Tensor::from_matrix(w2))));
          return add(s1, s2);
        },
        group);
    CHECK(err < 1e-4);
  };

  check_cfg(false, false);
  check_cfg(true, false);
  check_cfg(false, true);
}

TEST_CASE("parameters survive a checkpoint round trip") {
  SSMConfig cfg;
  cfg.d_model = 4;
  cfg.state_dim = 2;
  SSMParams p = make_ssm(cfg, 47);
  auto dir = temp_dir("dpmamba_ckpt");
  save_checkpoint(dir / "ssm.ckpt", p.group(), 47);

  SSMParams q = make_ssm(cfg, 48);
  load_checkpoint(dir / "ssm.ckpt", q.group());
  for (size_t i = 0; i < p.params.size(); ++i)
    CHECK((q.params[i].value.array() == p.params[i].value.array()).all());
  std::filesystem::remove_all(dir);
}

TEST_CASE("encode_nodes stacks one row per series") {
  SSMConfig cfg;
  cfg.d_model = 4;
  cfg.state_dim = 3;
  SSMParams p = make_ssm(cfg, 51);
  auto rng = make_rng(52);
  std::vector<Matrix> reps{rand_matrix(4, 6, rng), rand_matrix(4, 11, rng),
                           rand_matrix(4, 9, rng)};
  Matrix h = encode_nodes(p, reps);
  REQUIRE(h.rows() == 3);
  REQUIRE(h.cols() == 4);
  for (Index i = 0; i < 3; ++i) {
    Vector f = dpmamba_encode(p, reps[static_cast<size_t>(i)]);
    CHECK((h.row(i).transpose().array() == f.array()).all());
  }
}

TEST_CASE("dimension mismatches are rejected") {
  SSMConfig cfg;
  cfg.d_model = 4;
  cfg.state_dim = 3;
  SSMParams p = make_ssm(cfg, 55);
  auto rng = make_rng(56);
  Matrix bad = rand_matrix(6, 5, rng);
  CHECK_THROWS_AS(ssm_forward(p, bad), Error);
  CHECK_THROWS_AS(ssm_reverse(p, bad), Error);
  CHECK_THROWS_AS(dpmamba_encode(p, rand_matrix(5, 6, rng)), Error);
  CHECK_THROWS_AS(make_ssm(SSMConfig{0, 3, false, false}, 1), Error);
  CHECK_THROWS_AS(make_ssm(SSMConfig{3, 0, false, false}, 1), Error);
}
