#include "support.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "csdp/error.hpp"

namespace csdp::test {

Matrix rand_matrix(Index rows, Index cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = u(rng);
  return m;
}

namespace {

double cell_cost(const Matrix& a, const Matrix& b, Index i, Index j) {
  return (a.row(i) - b.row(j)).norm();
}

double search(const Matrix& a, const Matrix& b, Index i, Index j) {
  double here = cell_cost(a, b, i, j);
  if (i == a.rows() - 1 && j == b.rows() - 1) return here;
  double best = std::numeric_limits<double>::infinity();
  if (i + 1 < a.rows() && j + 1 < b.rows()) best = std::min(best, search(a, b, i + 1, j + 1));
  if (i + 1 < a.rows()) best = std::min(best, search(a, b, i + 1, j));
  if (j + 1 < b.rows()) best = std::min(best, search(a, b, i, j + 1));
  return here + best;
}

}  // namespace

double brute_dtw(const Matrix& a, const Matrix& b) {
  require(a.rows() >= 1 && b.rows() >= 1 && a.rows() <= 10 && b.rows() <= 10,
          "brute_dtw is for tiny sequences only");
  return search(a, b, 0, 0);
}

namespace {

double search_windowed(const Matrix& a, const Matrix& b, const csdp::WarpWindow& w,
                       Index i, Index j) {
  auto [lo, hi] = w.rows[static_cast<size_t>(i)];
  if (j < lo || j > hi) return std::numeric_limits<double>::infinity();
  double here = cell_cost(a, b, i, j);
  if (i == a.rows() - 1 && j == b.rows() - 1) return here;
  double best = std::numeric_limits<double>::infinity();
  if (i + 1 < a.rows() && j + 1 < b.rows())
    best = std::min(best, search_windowed(a, b, w, i + 1, j + 1));
  if (i + 1 < a.rows()) best = std::min(best, search_windowed(a, b, w, i + 1, j));
  if (j + 1 < b.rows()) best = std::min(best, search_windowed(a, b, w, i, j + 1));
  return here + best;
}

}  // namespace

double brute_windowed(const Matrix& a, const Matrix& b, const csdp::WarpWindow& w) {
  require(a.rows() <= 10 && b.rows() <= 10, "brute_windowed is for tiny sequences");
  return search_windowed(a, b, w, 0, 0);
}

std::filesystem::path temp_dir(const std::string& tag) {
  static int counter = 0;
  auto p = std::filesystem::temp_directory_path() /
           ("csdp_test_" + tag + "_" + std::to_string(counter++));
  std::filesystem::create_directories(p);
  return p;
}

Dataset random_dataset(Index n, Index channels, Index min_len, Index max_len,
                       int classes, std::uint64_t seed, bool allow_unlabeled) {
  auto rng = make_rng(seed);
  std::uniform_int_distribution<long> lend(min_len, max_len);
  Dataset d;
  d.classes = classes;
  for (Index i = 0; i < n; ++i) {
    TimeSeries s;
    s.series_id = static_cast<int>(i);
    s.values = rand_matrix(channels, lend(rng), rng);
    d.series.push_back(std::move(s));
    // labels cycle within blocks and whole blocks go to test, so the split
    // never starves a class
    bool test = ((i / classes) % 4 == 3);
    int label = static_cast<int>(i) % classes;
    if (allow_unlabeled && !test && i >= static_cast<Index>(classes) && i % 5 == 0)
      label = -1;
    d.labels.push_back(label);
    d.split.push_back(test ? Split::test : Split::train);
    d.label_mask.push_back(label >= 0 ? 1 : 0);
  }
  return d;
}

Dataset sinusoid_dataset(Index n, Index channels, Index len, int classes,
                         std::uint64_t seed, double noise) {
  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 6.28318530717958648);
  std::normal_distribution<double> jitter(0.0, noise);
  Dataset d;
  d.classes = classes;
  for (Index i = 0; i < n; ++i) {
    int label = static_cast<int>(i) % classes;
    TimeSeries s;
    s.series_id = static_cast<int>(i);
    s.values.resize(channels, len);
    for (Index c = 0; c < channels; ++c) {
      double ph = phase(rng);
      double freq = (label + 1) * (1.0 + 0.35 * static_cast<double>(c));
      for (Index t = 0; t < len; ++t)
        s.values(c, t) =
            std::sin(ph + freq * 6.28318530717958648 * static_cast<double>(t) /
                              static_cast<double>(len)) +
            jitter(rng);
    }
    d.series.push_back(std::move(s));
    d.labels.push_back(label);
    d.split.push_back(i % 2 == 0 ? Split::train : Split::test);
    d.label_mask.push_back(1);
  }
  return d;
}

void write_ts(const Dataset& d, const std::filesystem::path& path,
              const std::string& problem_name) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), "cannot write ", path.string());
  out << "@problemName " << problem_name << "\n";
  out << "@dimensions " << d.channels() << "\n";
  out << "@equalLength true\n";
  out << "@seriesLength " << d.series[0].length() << "\n";
  out << "@classLabel true";
  for (int k = 0; k < d.classes; ++k) out << ' ' << k;
  out << "\n@data\n";
  char buf[64];
  for (size_t i = 0; i < d.series.size(); ++i) {
    const Matrix& v = d.series[i].values;
    for (Index c = 0; c < v.rows(); ++c) {
      if (c) out << ':';
      for (Index t = 0; t < v.cols(); ++t) {
        if (t) out << ',';
        std::snprintf(buf, sizeof buf, "%.17g", v(c, t));
        out << buf;
      }
    }
    out << ':' << d.labels[i] << "\n";
  }
  out.flush();
  require(out.good(), "short write on ", path.string());
}

}  // namespace csdp::test
