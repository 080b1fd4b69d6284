#pragma once

#include <vector>

#include "csdp/optim.hpp"
#include "csdp/simgraph.hpp"
#include "csdp/tape.hpp"

namespace csdp {

/// KAN-enhanced GIN stack plus classification head. Each layer aggregates
/// (1+eps)*h_v + sum_u w_vu*h_u and maps the result through a bank of
/// univariate functions phi_ij(x) = w_ij*silu(x) + sum_k c_ijk*B3_k(clamp x),
/// cubic B-splines on a fixed grid over [-range, range].
struct KanGinConfig {
  Index d_model = 64;
  int classes = 2;
  Index gin_layers = 2;  // 1..3
  int grid = 8;
  double range = 3.0;
  bool unweighted = false;  // neighbor sum ignores edge weights
};

struct KanGinParams {
  KanGinConfig cfg;
  std::vector<Param> params;
  ParamGroup group();
};

/// Per layer: eps(0), residual weights(1), spline coefficients ~N(0, 0.1/sqrt(G));
/// head ~U(+-1/sqrt(d)) with zero bias.
KanGinParams make_kangin(const KanGinConfig& cfg, std::uint64_t seed);

struct KanGinVars {
  KanGinConfig cfg;
  std::vector<Var> vars;  // same order as KanGinParams::params
};
KanGinVars bind_kangin(Tape& t, KanGinParams& p, TapeBinding& binding);

/// Aggregation edges for a similarity graph (row-normalized weights, or 1.0
/// per kept neighbor when unweighted).
std::vector<NeighborList> graph_neighbor_lists(const SimilarityGraph& g,
                                               bool unweighted);
/// Edge-free adjacency: every node isolated (graph-free ablation).
std::vector<NeighborList> empty_neighbor_lists(Index n);

/// One KAN bank over rows of h {N, d_model} -> {N, d_model}.
Var kan_apply_on_tape(const KanGinVars& v, int layer, Var h);

/// Full stack: gin_layers rounds of aggregate + KAN, then the linear head and
/// log-softmax. Returns {N, classes} log-probabilities.
Var kangin_forward_on_tape(const KanGinVars& v, Var h,
                           const std::vector<NeighborList>& adj);

/// Forward-only convenience over plain matrices.
Matrix kangin_logprobs(const KanGinParams& p, const Matrix& h,
                       const std::vector<NeighborList>& adj);

/// Row-wise argmax (ties to the lower class index).
std::vector<int> predict_classes(const Matrix& logprobs);

}  // namespace csdp
