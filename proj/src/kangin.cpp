#include "csdp/kangin.hpp"

#include <cmath>
#include <string>

#include "csdp/error.hpp"
#include "csdp/rng.hpp"

namespace csdp {

namespace {

// per layer: eps, w, coef; then head.w, head.b
size_t layer_base(int layer) { return static_cast<size_t>(3 * layer); }

Tensor gaussian_tensor(Shape shape, double sd, std::mt19937_64& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t[i] = sd * draw_gaussian(rng);
  return t;
}

Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t[i] = bound * (2.0 * draw_unit(rng) - 1.0);
  return t;
}

}  // namespace

ParamGroup KanGinParams::group() {
  ParamGroup g;
  for (auto& p : params) g.push_back(&p);
  return g;
}

KanGinParams make_kangin(const KanGinConfig& cfg, std::uint64_t seed) {
  require(cfg.d_model >= 1, "d_model must be positive, got ", cfg.d_model);
  require(cfg.classes >= 2, "need at least two classes, got ", cfg.classes);
  require(cfg.gin_layers >= 1 && cfg.gin_layers <= 3, "gin_layers must be in 1..3, got ",
          cfg.gin_layers);
  require(cfg.grid >= 4, "spline grid needs at least 4 functions, got ", cfg.grid);
  require(cfg.range > 0.0, "spline range must be positive, got ", cfg.range);

  auto rng = make_rng(derive_seed(seed, 0x6a1e));
  KanGinParams p;
  p.cfg = cfg;
  const Index d = cfg.d_model;
  double coef_sd = 0.1 / std::sqrt(static_cast<double>(cfg.grid));
  for (Index l = 0; l < cfg.gin_layers; ++l) {
    std::string tag = "kangin.l" + std::to_string(l) + ".";
    p.params.emplace_back(tag + "eps", Tensor::scalar(0.0));
    p.params.emplace_back(tag + "w", Tensor::full({d, d}, 1.0));
    p.params.emplace_back(tag + "coef",
                          gaussian_tensor({d * cfg.grid, d}, coef_sd, rng));
  }
  double hb = 1.0 / std::sqrt(static_cast<double>(d));
  p.params.emplace_back("kangin.head.w",
                        uniform_tensor({d, static_cast<Index>(cfg.classes)}, hb, rng));
  p.params.emplace_back("kangin.head.b",
                        Tensor::zeros({static_cast<Index>(cfg.classes)}));
  return p;
}

KanGinVars bind_kangin(Tape& t, KanGinParams& p, TapeBinding& binding) {
  KanGinVars v;
  v.cfg = p.cfg;
  for (auto& param : p.params) v.vars.push_back(binding.bind(t, param));
  return v;
}

std::vector<NeighborList> graph_neighbor_lists(const SimilarityGraph& g,
                                               bool unweighted) {
  std::vector<NeighborList> adj(g.neighbors.size());
  for (size_t v = 0; v < g.neighbors.size(); ++v)
    for (Index u : g.neighbors[v])
      adj[v].edges.emplace_back(
          unweighted ? 1.0 : g.weights(static_cast<Index>(v), u), u);
  return adj;
}

std::vector<NeighborList> empty_neighbor_lists(Index n) {
  return std::vector<NeighborList>(static_cast<size_t>(n));
}

Var kan_apply_on_tape(const KanGinVars& v, int layer, Var h) {
  require(layer >= 0 && layer < v.cfg.gin_layers, "layer ", layer,
          " outside 0..", v.cfg.gin_layers - 1);
  Tape& t = *h.tape;
  const Tensor& hv = t.value(h);
  require(hv.rank() == 2 && hv.dim(1) == v.cfg.d_model, "kan input must be Nx",
          v.cfg.d_model, ", got ", shape_str(hv.shape()));
  const Index n = hv.dim(0);
  size_t base = layer_base(layer);
  Var w = v.vars[base + 1];
  Var coef = v.vars[base + 2];

  Var resid = matmul(silu(h), w);  // {N, d}
  Var basis = bspline_basis(h, v.cfg.grid, v.cfg.range);  // {N*d, G}
  Var flat = reshape_op(basis, {n, v.cfg.d_model * v.cfg.grid});
  Var splined = matmul(flat, coef);  // {N, d}
  return add(resid, splined);
}

Var kangin_forward_on_tape(const KanGinVars& v, Var h,
                           const std::vector<NeighborList>& adj) {
  Tape& t = *h.tape;
  const Tensor& hv = t.value(h);
  require(hv.rank() == 2 && hv.dim(1) == v.cfg.d_model,
          "node features must be Nx", v.cfg.d_model, ", got ",
          shape_str(hv.shape()));
  require(static_cast<size_t>(hv.dim(0)) == adj.size(), "graph has ", adj.size(),
          " nodes but features have ", hv.dim(0), " rows");

  for (int l = 0; l < v.cfg.gin_layers; ++l) {
    Var eps = v.vars[layer_base(l)];
    h = kan_apply_on_tape(v, l, graph_aggregate(h, adj, eps));
  }
  size_t head = layer_base(v.cfg.gin_layers);
  Var logits = add_rowvec(matmul(h, v.vars[head]), v.vars[head + 1]);
  return log_softmax(logits);
}

Matrix kangin_logprobs(const KanGinParams& p, const Matrix& h,
                       const std::vector<NeighborList>& adj) {
  Tape t;
  t.set_grad_enabled(false);
  KanGinVars v;
  v.cfg = p.cfg;
  for (const auto& param : p.params) v.vars.push_back(t.leaf(param.value));
  Var in = t.constant(Tensor::from_matrix(h));
  return t.value(kangin_forward_on_tape(v, in, adj)).mat();
}

std::vector<int> predict_classes(const Matrix& logprobs) {
  std::vector<int> out(static_cast<size_t>(logprobs.rows()));
  for (Index i = 0; i < logprobs.rows(); ++i) {
    Index best = 0;
    logprobs.row(i).maxCoeff(&best);
    out[static_cast<size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace csdp
