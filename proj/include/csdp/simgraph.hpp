#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "csdp/types.hpp"

namespace csdp {

/// Cluster id per series, ids in [0, k).
struct ClusterAssignment {
  std::vector<int> cluster;
  int k = 0;
};

/// Lloyd's k-means over temporally mean-pooled representation vectors.
/// 10 seeded restarts, <= 100 iterations each, best within-cluster sum of
/// squares kept. Empty clusters are re-seeded from the farthest point.
ClusterAssignment cluster_representations(const std::vector<Matrix>& reps, int k,
                                          std::uint64_t seed);

/// Pairwise FastDTW over representations (each (d, T'), compared as time-major
/// sequences). Same-cluster pairs get the alignment cost, mirrored; pairs in
/// different clusters get the -1 sentinel; the diagonal is 0.
Matrix contrast_fastdtw_matrix(const std::vector<Matrix>& reps,
                               const ClusterAssignment& clusters, Index radius);

/// Sentinel handling when scaling distances into similarities: `masked` zeroes
/// dissimilar pairs before the exponential; `raw` feeds the sentinel value
/// through it unchanged (comparison mode).
enum class GraphOrder { masked, raw };
GraphOrder parse_graph_order(const std::string& name);

/// Distances are first divided by the median positive entry (so alpha is
/// dataset-independent), then mapped through exp(-alpha * d). The diagonal is
/// forced to 0: self-information enters downstream through the (1+eps) term.
Matrix scale_adjacency(const Matrix& d, double alpha,
                       GraphOrder order = GraphOrder::masked);

/// Keep the topk largest entries per row (ties prefer the lower column index),
/// zero the rest.
Matrix topk_sparsify(const Matrix& a, Index topk);

struct SimilarityGraph {
  Matrix kept;     // sparsified adjacency before normalization
  Matrix weights;  // row-normalized; zero rows stay zero
  std::vector<std::vector<Index>> neighbors;  // kept columns per row, ascending
  double alpha = 1.0;
  Index topk = 5;
  Index radius = 1;
};

/// Row-normalize a sparsified adjacency and record the hyperparameters that
/// produced it.
SimilarityGraph row_normalize(const Matrix& kept, double alpha, Index topk,
                              Index radius);

/// Restrict the pre-normalization adjacency to indices x indices (node order
/// follows `indices`) and re-normalize.
SimilarityGraph batch_subgraph(const SimilarityGraph& g,
                               const std::vector<Index>& indices);

// ---- persistence ----

struct MatrixMeta {
  std::string kind;  // "distance", "adjacency", "graph"
  Index n = 0;
  double alpha = 0.0;
  Index topk = 0;
  Index radius = 0;
};

/// Row-major little-endian float64 blob at `path` plus a JSON sidecar at
/// `path` + ".json".
void save_matrix(const std::filesystem::path& path, const Matrix& m,
                 const MatrixMeta& meta);
std::pair<Matrix, MatrixMeta> load_matrix(const std::filesystem::path& path);

void save_graph(const std::filesystem::path& path, const SimilarityGraph& g);
SimilarityGraph load_graph(const std::filesystem::path& path);

/// N x N CSV of raw distances; sentinels render as `NA`, diagonal as exact 0.
void export_heatmap(const Matrix& d, const std::filesystem::path& path);

}  // namespace csdp
