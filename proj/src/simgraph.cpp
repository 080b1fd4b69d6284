#include "csdp/simgraph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "csdp/dtw.hpp"
#include "csdp/error.hpp"
#include "csdp/rng.hpp"

namespace csdp {

namespace {

constexpr double kSentinel = -1.0;

Matrix pooled_rows(const std::vector<Matrix>& reps) {
  require(!reps.empty(), "need at least one representation");
  const Index d = reps.front().rows();
  Matrix pooled(static_cast<Index>(reps.size()), d);
  for (size_t i = 0; i < reps.size(); ++i) {
    require(reps[i].rows() == d, "representation ", i, " has ", reps[i].rows(),
            " rows, expected ", d);
    require(reps[i].cols() >= 1, "representation ", i, " is empty");
    pooled.row(static_cast<Index>(i)) = reps[i].rowwise().mean().transpose();
  }
  return pooled;
}

struct KmeansRun {
  std::vector<int> assign;
  double wcss = std::numeric_limits<double>::infinity();
};

KmeansRun lloyd(const Matrix& x, int k, std::uint64_t seed) {
  const Index n = x.rows();
  Matrix centroids(k, x.cols());
  std::vector<Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(seed);
  deterministic_shuffle(order, rng);
  for (int c = 0; c < k; ++c) centroids.row(c) = x.row(order[static_cast<size_t>(c)]);

  KmeansRun run;
  run.assign.assign(static_cast<size_t>(n), -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (x.row(i) - centroids.row(0)).squaredNorm();
      for (int c = 1; c < k; ++c) {
        double dd = (x.row(i) - centroids.row(c)).squaredNorm();
        if (dd < best_d) {
          best_d = dd;
          best = c;
        }
      }
      if (run.assign[static_cast<size_t>(i)] != best) {
        run.assign[static_cast<size_t>(i)] = best;
        changed = true;
      }
    }

    std::vector<Index> count(static_cast<size_t>(k), 0);
    Matrix sums = Matrix::Zero(k, x.cols());
    for (Index i = 0; i < n; ++i) {
      sums.row(run.assign[static_cast<size_t>(i)]) += x.row(i);
      ++count[static_cast<size_t>(run.assign[static_cast<size_t>(i)])];
    }
    for (int c = 0; c < k; ++c) {
      if (count[static_cast<size_t>(c)] > 0) {
        centroids.row(c) = sums.row(c) / static_cast<double>(count[static_cast<size_t>(c)]);
      } else {
        // revive from the point farthest from its current centroid
        Index far = 0;
        double far_d = -1.0;
        for (Index i = 0; i < n; ++i) {
          double dd = (x.row(i) - centroids.row(run.assign[static_cast<size_t>(i)])).squaredNorm();
          if (dd > far_d) {
            far_d = dd;
            far = i;
          }
        }
        centroids.row(c) = x.row(far);
        changed = true;
      }
    }
    if (!changed) break;
  }

  run.wcss = 0.0;
  for (Index i = 0; i < n; ++i)
    run.wcss += (x.row(i) - centroids.row(run.assign[static_cast<size_t>(i)])).squaredNorm();
  return run;
}

void write_doubles(std::ofstream& out, const Matrix& m) {
  // Matrix is row-major, so the raw buffer already has row-major order;
  // host is little-endian
  static_assert(Matrix::IsRowMajor);
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double)) * m.size());
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

}  // namespace

ClusterAssignment cluster_representations(const std::vector<Matrix>& reps, int k,
                                          std::uint64_t seed) {
  require(k >= 2, "clustering needs k >= 2, got ", k);
  Matrix pooled = pooled_rows(reps);
  require(pooled.rows() >= k, "cannot split ", pooled.rows(), " series into ", k,
          " clusters");

  KmeansRun best;
  for (int restart = 0; restart < 10; ++restart) {
    KmeansRun run = lloyd(pooled, k, derive_seed(seed, 0x6b6d, static_cast<std::uint64_t>(restart)));
    if (run.wcss < best.wcss) best = std::move(run);
  }
  ClusterAssignment out;
  out.cluster = std::move(best.assign);
  out.k = k;
  return out;
}

Matrix contrast_fastdtw_matrix(const std::vector<Matrix>& reps,
                               const ClusterAssignment& clusters, Index radius) {
  const Index n = static_cast<Index>(reps.size());
  require(clusters.cluster.size() == reps.size(), "cluster assignment covers ",
          clusters.cluster.size(), " series, expected ", reps.size());
  require(radius >= 0, "radius cannot be negative, got ", radius);
  for (int c : clusters.cluster)
    require(c >= 0 && c < clusters.k, "cluster id ", c, " outside [0, ",
            clusters.k, ")");

  std::vector<Matrix> seqs;  // time-major for alignment
  seqs.reserve(reps.size());
  for (const auto& r : reps) seqs.push_back(r.transpose());

  Matrix d = Matrix::Constant(n, n, kSentinel);
  d.diagonal().setZero();
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      if (clusters.cluster[static_cast<size_t>(i)] != clusters.cluster[static_cast<size_t>(j)])
        continue;
      double cost = fastdtw(seqs[static_cast<size_t>(i)], seqs[static_cast<size_t>(j)], radius).cost;
      d(i, j) = cost;
      d(j, i) = cost;
    }
  }
  return d;
}

GraphOrder parse_graph_order(const std::string& name) {
  if (name == "masked") return GraphOrder::masked;
  if (name == "raw") return GraphOrder::raw;
  fail("unknown graph order '", name, "' (expected 'masked' or 'raw')");
}

Matrix scale_adjacency(const Matrix& d, double alpha, GraphOrder order) {
  require(d.rows() == d.cols(), "distance matrix must be square, got ", d.rows(),
          "x", d.cols());
  require(alpha >= 0.0, "alpha cannot be negative, got ", alpha);

  std::vector<double> positives;
  for (Index i = 0; i < d.rows(); ++i)
    for (Index j = 0; j < d.cols(); ++j)
      if (i != j && d(i, j) > 0.0 && std::isfinite(d(i, j)))
        positives.push_back(d(i, j));
  double med = 0.0;
  if (!positives.empty()) {
    std::sort(positives.begin(), positives.end());
    size_t h = positives.size() / 2;
    med = positives.size() % 2 == 1 ? positives[h]
                                    : 0.5 * (positives[h - 1] + positives[h]);
  }
  const double scale = med > 0.0 ? 1.0 / med : 1.0;

  Matrix a(d.rows(), d.cols());
  for (Index i = 0; i < d.rows(); ++i) {
    for (Index j = 0; j < d.cols(); ++j) {
      if (i == j) {
        a(i, j) = 0.0;
      } else if (d(i, j) == kSentinel && order == GraphOrder::masked) {
        a(i, j) = 0.0;
      } else {
        a(i, j) = std::exp(-alpha * d(i, j) * scale);
      }
    }
  }
  return a;
}

Matrix topk_sparsify(const Matrix& a, Index topk) {
  require(topk >= 1, "topk must be positive, got ", topk);
  Matrix out = Matrix::Zero(a.rows(), a.cols());
  std::vector<Index> cols(static_cast<size_t>(a.cols()));
  for (Index i = 0; i < a.rows(); ++i) {
    std::iota(cols.begin(), cols.end(), 0);
    std::sort(cols.begin(), cols.end(), [&](Index l, Index r) {
      if (a(i, l) != a(i, r)) return a(i, l) > a(i, r);
      return l < r;
    });
    Index keep = std::min(topk, a.cols());
    for (Index t = 0; t < keep; ++t) {
      Index j = cols[static_cast<size_t>(t)];
      if (a(i, j) > 0.0) out(i, j) = a(i, j);
    }
  }
  return out;
}

SimilarityGraph row_normalize(const Matrix& kept, double alpha, Index topk,
                              Index radius) {
  require(kept.rows() == kept.cols(), "adjacency must be square, got ",
          kept.rows(), "x", kept.cols());
  require(kept.minCoeff() >= 0.0, "adjacency entries cannot be negative");

  SimilarityGraph g;
  g.kept = kept;
  g.weights = Matrix::Zero(kept.rows(), kept.cols());
  g.neighbors.resize(static_cast<size_t>(kept.rows()));
  g.alpha = alpha;
  g.topk = topk;
  g.radius = radius;
  for (Index i = 0; i < kept.rows(); ++i) {
    double sum = 0.0;
    for (Index j = 0; j < kept.cols(); ++j) {
      if (kept(i, j) > 0.0) {
        g.neighbors[static_cast<size_t>(i)].push_back(j);
        sum += kept(i, j);
      }
    }
    if (sum > 0.0) g.weights.row(i) = kept.row(i) / sum;
  }
  return g;
}

SimilarityGraph batch_subgraph(const SimilarityGraph& g,
                               const std::vector<Index>& indices) {
  const Index n = g.kept.rows();
  std::vector<bool> seen(static_cast<size_t>(n), false);
  for (Index idx : indices) {
    require(idx >= 0 && idx < n, "subgraph index ", idx, " outside [0, ", n, ")");
    require(!seen[static_cast<size_t>(idx)], "subgraph index ", idx, " repeats");
    seen[static_cast<size_t>(idx)] = true;
  }
  const Index m = static_cast<Index>(indices.size());
  Matrix sub(m, m);
  for (Index r = 0; r < m; ++r)
    for (Index c = 0; c < m; ++c)
      sub(r, c) = g.kept(indices[static_cast<size_t>(r)], indices[static_cast<size_t>(c)]);
  return row_normalize(sub, g.alpha, g.topk, g.radius);
}

void save_matrix(const std::filesystem::path& path, const Matrix& m,
                 const MatrixMeta& meta) {
  require(m.rows() == m.cols(), "matrix must be square, got ", m.rows(), "x",
          m.cols());
  require(meta.n == m.rows(), "sidecar n=", meta.n, " does not match matrix size ",
          m.rows());
  nlohmann::json side{{"magic", "CSDP-MAT1"}, {"n", meta.n},
                      {"alpha", meta.alpha}, {"topk", meta.topk},
                      {"radius", meta.radius}, {"kind", meta.kind}};
  std::ofstream js(sidecar_path(path));
  require(js.good(), "cannot write ", sidecar_path(path).string());
  js << side.dump(2) << "\n";
  js.close();
  require(js.good(), "failed writing ", sidecar_path(path).string());

  std::ofstream blob(path, std::ios::binary);
  require(blob.good(), "cannot write ", path.string());
  write_doubles(blob, m);
  blob.close();
  require(blob.good(), "failed writing ", path.string());
}

std::pair<Matrix, MatrixMeta> load_matrix(const std::filesystem::path& path) {
  std::ifstream js(sidecar_path(path));
  require(js.good(), "cannot read ", sidecar_path(path).string());
  nlohmann::json side;
  try {
    js >> side;
  } catch (const nlohmann::json::exception& e) {
    fail("invalid sidecar ", sidecar_path(path).string(), ": ", e.what());
  }
  require(side.value("magic", "") == "CSDP-MAT1", "bad magic in ",
          sidecar_path(path).string());
  MatrixMeta meta;
  meta.kind = side.value("kind", "");
  meta.n = side.value("n", Index{0});
  meta.alpha = side.value("alpha", 0.0);
  meta.topk = side.value("topk", Index{0});
  meta.radius = side.value("radius", Index{0});
  require(meta.n >= 1, "sidecar n must be positive, got ", meta.n);

  std::ifstream blob(path, std::ios::binary);
  require(blob.good(), "cannot read ", path.string());
  Matrix m(meta.n, meta.n);
  blob.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double)) * m.size());
  require(blob.gcount() == static_cast<std::streamsize>(sizeof(double)) * m.size(),
          path.string(), " is truncated: expected ", meta.n, "x", meta.n,
          " doubles");
  blob.get();
  require(blob.eof(), path.string(), " has trailing bytes beyond ", meta.n, "x",
          meta.n, " doubles");
  return {std::move(m), std::move(meta)};
}

void save_graph(const std::filesystem::path& path, const SimilarityGraph& g) {
  MatrixMeta meta;
  meta.kind = "graph";
  meta.n = g.kept.rows();
  meta.alpha = g.alpha;
  meta.topk = g.topk;
  meta.radius = g.radius;
  save_matrix(path, g.kept, meta);
}

SimilarityGraph load_graph(const std::filesystem::path& path) {
  auto [kept, meta] = load_matrix(path);
  require(meta.kind == "graph", path.string(), " holds a '", meta.kind,
          "' matrix, not a graph");
  return row_normalize(kept, meta.alpha, meta.topk, meta.radius);
}

void export_heatmap(const Matrix& d, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), "cannot write ", path.string());
  char buf[64];
  for (Index i = 0; i < d.rows(); ++i) {
    for (Index j = 0; j < d.cols(); ++j) {
      if (j > 0) out << ',';
      if (i == j) {
        out << '0';
      } else if (d(i, j) == kSentinel) {
        out << "NA";
      } else {
        std::snprintf(buf, sizeof(buf), "%.17g", d(i, j));
        out << buf;
      }
    }
    out << '\n';
  }
  out.close();
  require(out.good(), "failed writing ", path.string());
}

}  // namespace csdp
