#pragma once

#include <utility>
#include <vector>

#include "csdp/types.hpp"

namespace csdp {

/// A sequence is (length L, features F); rows are time steps.
using Sequence = Matrix;

/// Monotone warp alignment, 0-based: starts (0,0), ends (n-1,m-1), each step
/// increments i, j, or both.
using WarpPath = std::vector<std::pair<Index, Index>>;

/// Per-row inclusive column band [lo, hi]. Valid windows have nonempty
/// intervals, nondecreasing lo and hi, and contain both path endpoints.
struct WarpWindow {
  std::vector<std::pair<Index, Index>> rows;
};

WarpWindow full_window(Index n, Index m);
void validate_window(const WarpWindow& w, Index n, Index m);

struct DtwResult {
  double cost = 0.0;
  WarpPath path;
};

/// Euclidean distance between feature vectors.
double point_dist(const Eigen::Ref<const Eigen::RowVectorXd>& a,
                  const Eigen::Ref<const Eigen::RowVectorXd>& b);

/// Sum of point distances along a path (the quantity DTW minimizes).
double path_cost(const Sequence& x, const Sequence& y, const WarpPath& path);

/// Exact DTW. Backtrack resolves ties diagonal > vertical > horizontal.
DtwResult dtw(const Sequence& x, const Sequence& y);

/// DTW restricted to a window; optimal among in-window paths, so always
/// >= the unconstrained cost. Only window cells are allocated and visited.
DtwResult dtw_windowed(const Sequence& x, const Sequence& y, const WarpWindow& w);

/// Halve resolution: point k = mean of points 2k and 2k+1; odd tail copied.
Sequence reduce_by_half(const Sequence& x);

/// Project a half-resolution path onto the full grid (each cell becomes a
/// 2x2 block), dilate by `radius` in every direction, clip, and close up the
/// intervals so the window invariants hold.
WarpWindow expand_window(const WarpPath& low_res_path, Index n, Index m, Index radius);

/// Multiresolution approximate DTW: exact when min(|x|,|y|) <= radius+2,
/// otherwise recurse on halved inputs and refine through the expanded window.
DtwResult fastdtw(const Sequence& x, const Sequence& y, Index radius);

/// Variant that skips the refinement pass entirely: recurse to the base case
/// and return that resolution's exact cost. No path is defined at full
/// resolution, hence cost-only.
double fastdtw_truncated_cost(const Sequence& x, const Sequence& y, Index radius);

}  // namespace csdp
