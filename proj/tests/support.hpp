#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "csdp/data.hpp"
#include "csdp/dtw.hpp"
#include "csdp/rng.hpp"
#include "csdp/types.hpp"

namespace csdp::test {

/// Uniform(-1,1) matrix, deterministic in the rng.
Matrix rand_matrix(Index rows, Index cols, std::mt19937_64& rng);

/// Exhaustive minimum-cost warping alignment between two sequences (rows are
/// time steps), Euclidean local cost. Exponential search — lengths <= 10 only.
double brute_dtw(const Matrix& a, const Matrix& b);

/// Same search restricted to a window (infinite when no in-window path).
double brute_windowed(const Matrix& a, const Matrix& b, const csdp::WarpWindow& w);

/// Fresh temp directory under the system tmp root; caller owns cleanup (or
/// leaves it for the OS).
std::filesystem::path temp_dir(const std::string& tag);

/// Random dataset: `n` series, `channels` channels, lengths drawn from
/// [min_len, max_len], `classes` classes, ~1/4 of entries sent to the test
/// split, occasional unlabeled train entries when allow_unlabeled.
Dataset random_dataset(Index n, Index channels, Index min_len, Index max_len,
                       int classes, std::uint64_t seed, bool allow_unlabeled = false);

/// Class-separable sinusoid dataset: class k gets frequency (k+1) plus mild
/// noise; equal length, split round-robin train/test.
Dataset sinusoid_dataset(Index n, Index channels, Index len, int classes,
                         std::uint64_t seed, double noise = 0.05);

/// Writes a dataset in the sectioned .ts format (labels "0".."K-1").
void write_ts(const Dataset& d, const std::filesystem::path& path,
              const std::string& problem_name);

}  // namespace csdp::test
