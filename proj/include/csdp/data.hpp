#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "csdp/types.hpp"

namespace csdp {

enum class Split { train, test };

/// One multivariate series: channels x length, plus its dataset index.
struct TimeSeries {
  Matrix values;  // (C, T)
  int series_id = 0;

  Index channels() const { return values.rows(); }
  Index length() const { return values.cols(); }
};

/// Canonical in-memory dataset. Lengths may differ across series; channel
/// count may not. labels[i] == -1 means unlabeled; label_mask says whether a
/// label is visible to training (test labels never are).
struct Dataset {
  std::vector<TimeSeries> series;
  std::vector<int> labels;
  int classes = 2;
  std::vector<Split> split;
  std::vector<std::uint8_t> label_mask;

  Index size() const { return static_cast<Index>(series.size()); }
  Index channels() const { return series.empty() ? 0 : series[0].channels(); }
  std::vector<Index> train_indices() const;
  std::vector<Index> test_indices() const;
};

/// Checks all Dataset invariants (size, consistent channels, label ranges,
/// finite values); throws on violation.
void validate(const Dataset& d);

struct SemiSplit {
  std::vector<Index> labeled_indices;
  std::vector<Index> unlabeled_indices;
  double fraction = 1.0;
};

/// Sectioned `.ts` loader (directives, `:`-separated channels, `,`-separated
/// values, trailing class token). The split tag is supplied by the caller
/// since the format stores train and test in separate files.
Dataset parse_ts(const std::filesystem::path& path, Split tag);

/// Long-form CSV with header series_id,channel,time_index,value,label,split.
/// Series appear in first-encounter order; dense (channel, time) grids are
/// required per series.
Dataset parse_long_csv(const std::filesystem::path& path);

/// Inverse of parse_long_csv; values printed with enough digits to round-trip
/// bit-exactly.
void serialize_long_csv(const Dataset& d, const std::filesystem::path& path);

/// Per series, per channel: subtract mean, divide by population std; channels
/// with std < 1e-8 become all zeros.
Dataset zscore_normalize(const Dataset& d);

/// Stratified semi-supervised split over the train portion: per class,
/// max(1, round(fraction * class_count)) labeled indices, deterministic in
/// the seed. Updates d.label_mask so only the sampled labels are visible.
SemiSplit split_semisupervised(Dataset& d, double fraction, std::uint64_t seed);

}  // namespace csdp
