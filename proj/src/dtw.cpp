#include "csdp/dtw.hpp"

#include <algorithm>
#include <limits>

#include "csdp/error.hpp"

namespace csdp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_pair(const Sequence& x, const Sequence& y) {
  require(x.rows() >= 1 && y.rows() >= 1, "dtw: sequences must be nonempty");
  require(x.cols() == y.cols(), "dtw: feature dimensions differ (", x.cols(), " vs ",
          y.cols(), ")");
  require(x.cols() >= 1, "dtw: sequences need at least one feature");
}

}  // namespace

double point_dist(const Eigen::Ref<const Eigen::RowVectorXd>& a,
                  const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  require(a.size() == b.size(), "point_dist: dimension mismatch (", a.size(), " vs ",
          b.size(), ")");
  return (a - b).norm();
}

double path_cost(const Sequence& x, const Sequence& y, const WarpPath& path) {
  double acc = 0.0;
  for (const auto& [i, j] : path) acc += point_dist(x.row(i), y.row(j));
  return acc;
}

WarpWindow full_window(Index n, Index m) {
  WarpWindow w;
  w.rows.assign(static_cast<size_t>(n), {0, m - 1});
  return w;
}

void validate_window(const WarpWindow& w, Index n, Index m) {
  require(static_cast<Index>(w.rows.size()) == n, "window has ", w.rows.size(),
          " rows for a length-", n, " sequence");
  for (size_t i = 0; i < w.rows.size(); ++i) {
    auto [lo, hi] = w.rows[i];
    require(lo >= 0 && hi < m && lo <= hi, "window row ", i, " interval [", lo, ",",
            hi, "] invalid for m=", m);
    if (i > 0) {
      require(lo >= w.rows[i - 1].first && hi >= w.rows[i - 1].second,
              "window intervals must be monotone (row ", i, ")");
    }
  }
  require(w.rows.front().first == 0, "window excludes the start cell");
  require(w.rows.back().second == m - 1, "window excludes the end cell");
}

DtwResult dtw_windowed(const Sequence& x, const Sequence& y, const WarpWindow& w) {
  check_pair(x, y);
  Index n = x.rows(), m = y.rows();
  validate_window(w, n, m);

  // Ragged accumulated-cost storage: only in-window cells exist.
  std::vector<std::vector<double>> acc(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) {
    auto [lo, hi] = w.rows[static_cast<size_t>(i)];
    acc[static_cast<size_t>(i)].assign(static_cast<size_t>(hi - lo + 1), kInf);
  }
  auto get = [&](Index i, Index j) -> double {
    if (i < 0 || j < 0) return kInf;
    auto [lo, hi] = w.rows[static_cast<size_t>(i)];
    if (j < lo || j > hi) return kInf;
    return acc[static_cast<size_t>(i)][static_cast<size_t>(j - lo)];
  };

  for (Index i = 0; i < n; ++i) {
    auto [lo, hi] = w.rows[static_cast<size_t>(i)];
    for (Index j = lo; j <= hi; ++j) {
      double local = point_dist(x.row(i), y.row(j));
      double best;
      if (i == 0 && j == 0) {
        best = 0.0;
      } else {
        best = std::min({get(i - 1, j - 1), get(i - 1, j), get(i, j - 1)});
      }
      acc[static_cast<size_t>(i)][static_cast<size_t>(j - lo)] = local + best;
    }
  }
  double cost = get(n - 1, m - 1);
  require(cost < kInf, "window disconnects the alignment grid");

  WarpPath path;
  Index i = n - 1, j = m - 1;
  path.push_back({i, j});
  while (i != 0 || j != 0) {
    double cd = get(i - 1, j - 1), cv = get(i - 1, j), ch = get(i, j - 1);
    if (cd <= cv && cd <= ch) {
      --i;
      --j;
    } else if (cv <= ch) {
      --i;
    } else {
      --j;
    }
    path.push_back({i, j});
  }
  std::reverse(path.begin(), path.end());
  return {cost, std::move(path)};
}

DtwResult dtw(const Sequence& x, const Sequence& y) {
  check_pair(x, y);
  return dtw_windowed(x, y, full_window(x.rows(), y.rows()));
}

Sequence reduce_by_half(const Sequence& x) {
  Index l = x.rows();
  require(l >= 2, "reduce_by_half needs length >= 2, got ", l);
  Index out_len = (l + 1) / 2;
  Sequence out(out_len, x.cols());
  for (Index k = 0; 2 * k + 1 < l; ++k)
    out.row(k) = 0.5 * (x.row(2 * k) + x.row(2 * k + 1));
  if (l % 2 == 1) out.row(out_len - 1) = x.row(l - 1);
  return out;
}

WarpWindow expand_window(const WarpPath& low_res_path, Index n, Index m, Index radius) {
  require(!low_res_path.empty(), "expand_window: empty path");
  require(radius >= 0, "expand_window: negative radius");
  std::vector<Index> lo(static_cast<size_t>(n), m);
  std::vector<Index> hi(static_cast<size_t>(n), -1);

  // Project each half-resolution cell to its 2x2 block.
  for (const auto& [pi, pj] : low_res_path) {
    Index cl = std::min(2 * pj, m - 1);
    Index ch = std::min(2 * pj + 1, m - 1);
    for (Index r : {2 * pi, 2 * pi + 1}) {
      if (r < 0 || r >= n) continue;
      lo[static_cast<size_t>(r)] = std::min(lo[static_cast<size_t>(r)], cl);
      hi[static_cast<size_t>(r)] = std::max(hi[static_cast<size_t>(r)], ch);
    }
  }

  // Dilate by `radius` cells in every direction (vertical reach from nearby
  // rows, then horizontal slack).
  std::vector<Index> dlo(static_cast<size_t>(n)), dhi(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) {
    Index best_lo = m, best_hi = -1;
    for (Index d = -radius; d <= radius; ++d) {
      Index r = i + d;
      if (r < 0 || r >= n) continue;
      if (hi[static_cast<size_t>(r)] < 0) continue;  // row untouched by projection
      best_lo = std::min(best_lo, lo[static_cast<size_t>(r)]);
      best_hi = std::max(best_hi, hi[static_cast<size_t>(r)]);
    }
    dlo[static_cast<size_t>(i)] = std::max<Index>(0, best_lo - radius);
    dhi[static_cast<size_t>(i)] = std::min<Index>(m - 1, best_hi + radius);
  }

  // Monotone closure: pull hi forward and lo backward so the invariants hold
  // and the band stays connected.
  for (Index i = 1; i < n; ++i)
    dhi[static_cast<size_t>(i)] =
        std::max(dhi[static_cast<size_t>(i)], dhi[static_cast<size_t>(i - 1)]);
  for (Index i = n - 2; i >= 0; --i)
    dlo[static_cast<size_t>(i)] =
        std::min(dlo[static_cast<size_t>(i)], dlo[static_cast<size_t>(i + 1)]);

  WarpWindow w;
  w.rows.resize(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i)
    w.rows[static_cast<size_t>(i)] = {dlo[static_cast<size_t>(i)],
                                      dhi[static_cast<size_t>(i)]};
  validate_window(w, n, m);
  return w;
}

DtwResult fastdtw(const Sequence& x, const Sequence& y, Index radius) {
  check_pair(x, y);
  require(radius >= 0, "fastdtw: negative radius");
  if (std::min(x.rows(), y.rows()) <= radius + 2) return dtw(x, y);
  Sequence xr = reduce_by_half(x);
  Sequence yr = reduce_by_half(y);
  DtwResult low = fastdtw(xr, yr, radius);
  WarpWindow w = expand_window(low.path, x.rows(), y.rows(), radius);
  return dtw_windowed(x, y, w);
}

double fastdtw_truncated_cost(const Sequence& x, const Sequence& y, Index radius) {
  check_pair(x, y);
  require(radius >= 0, "fastdtw: negative radius");
  if (std::min(x.rows(), y.rows()) <= radius + 2) return dtw(x, y).cost;
  return fastdtw_truncated_cost(reduce_by_half(x), reduce_by_half(y), radius);
}

}  // namespace csdp
